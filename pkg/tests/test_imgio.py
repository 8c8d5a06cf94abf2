import numpy as np
import pytest

from domalign import imgio
from domalign.errors import EmptyDatasetError, FormatError, IoError


def test_load_ppm_single_red_pixel(tmp_path):
    path = tmp_path / "red.ppm"
    path.write_bytes(b"P6\n1 1\n255\n" + bytes([255, 0, 0]))
    img = imgio.load_image(path)
    assert img.shape == (1, 1, 3)
    np.testing.assert_allclose(img[0, 0], [1.0, 0.0, 0.0])


def test_load_ppm_all_zeros(tmp_path):
    path = tmp_path / "zeros.ppm"
    path.write_bytes(b"P6\n2 2\n255\n" + bytes(12))
    img = imgio.load_image(path)
    assert img.shape == (2, 2, 3)
    assert (img == 0.0).all()


def test_ppm_header_with_comment(tmp_path):
    path = tmp_path / "c.ppm"
    path.write_bytes(b"P6\n# a comment\n1 1\n255\n" + bytes([10, 20, 30]))
    img = imgio.load_image(path)
    np.testing.assert_allclose(img[0, 0], np.array([10, 20, 30]) / 255.0)


@pytest.mark.parametrize("ext", ["ppm", "png"])
def test_round_trip_bit_identical_on_8bit_sources(tmp_path, ext):
    rng = np.random.default_rng(3)
    raw = rng.integers(0, 256, size=(7, 5, 3), dtype=np.uint8)
    first = tmp_path / f"a.{ext}"
    second = tmp_path / f"b.{ext}"
    if ext == "ppm":
        first.write_bytes(b"P6\n5 7\n255\n" + raw.tobytes())
    else:
        imgio.save_image(raw / 255.0, first)
    img = imgio.load_image(first)
    imgio.save_image(img, second)
    np.testing.assert_array_equal(imgio.load_image(second), img)


def test_save_quantization_round_half_up(tmp_path):
    path = tmp_path / "q.ppm"
    imgio.save_image(np.full((1, 1, 3), 0.5), path)
    assert imgio.load_image(path)[0, 0, 0] == 128 / 255.0


def test_save_clamps_out_of_range(tmp_path):
    path = tmp_path / "c.ppm"
    imgio.save_image(np.array([[[1.0001, -0.5, 0.3]]]), path)
    saved = imgio.load_image(path)[0, 0]
    np.testing.assert_allclose(saved, [1.0, 0.0, np.floor(0.3 * 255 + 0.5) / 255.0])


def test_load_save_idempotent_on_quantized_images(tmp_path):
    rng = np.random.default_rng(11)
    for trial in range(5):
        img = rng.integers(0, 256, size=(4, 6, 3)) / 255.0
        p1 = tmp_path / f"x{trial}.png"
        p2 = tmp_path / f"y{trial}.png"
        imgio.save_image(img, p1)
        loaded = imgio.load_image(p1)
        imgio.save_image(loaded, p2)
        np.testing.assert_array_equal(imgio.load_image(p2), loaded)


def test_load_missing_file_raises():
    with pytest.raises(IoError):
        imgio.load_image("/nonexistent/file.png")


def test_load_unsupported_format(tmp_path):
    path = tmp_path / "img.bmp"
    path.write_bytes(b"BM")
    with pytest.raises(FormatError):
        imgio.load_image(path)


def test_corrupt_ppm_raises(tmp_path):
    path = tmp_path / "bad.ppm"
    path.write_bytes(b"P6\n4 4\n255\n" + bytes(5))
    with pytest.raises(FormatError):
        imgio.load_image(path)


def test_save_into_missing_directory(tmp_path):
    with pytest.raises(IoError):
        imgio.save_image(np.zeros((1, 1, 3)), tmp_path / "nope" / "x.png")


def test_label_map_round_trip(tmp_path):
    labels = np.array([[0, 1], [2, imgio.IGNORE_LABEL]], dtype=np.uint8)
    for ext in ("png", "pgm"):
        path = tmp_path / f"lab.{ext}"
        imgio.save_label_map(labels, path)
        np.testing.assert_array_equal(imgio.load_label_map(path), labels)


def _touch_images(directory, names):
    directory.mkdir(parents=True, exist_ok=True)
    for name in names:
        imgio.save_image(np.zeros((2, 2, 3)), directory / name)


def test_scan_dataset_basic(tmp_path):
    _touch_images(tmp_path / "src", ["a.png", "b.png"])
    _touch_images(tmp_path / "tgt", ["x.png"])
    manifest = imgio.scan_dataset(tmp_path / "src", tmp_path / "tgt", "_label.png")
    assert [p.name for p, _ in manifest.source_entries] == ["a.png", "b.png"]
    assert [p.name for p in manifest.target_entries] == ["x.png"]
    assert all(lab is None for _, lab in manifest.source_entries)


def test_scan_dataset_pairs_labels_and_excludes_them(tmp_path):
    _touch_images(tmp_path / "src", ["a.png", "a_label.png", "b.png"])
    _touch_images(tmp_path / "tgt", ["x.png"])
    manifest = imgio.scan_dataset(tmp_path / "src", tmp_path / "tgt", "_label.png")
    names = [(p.name, None if lab is None else lab.name) for p, lab in manifest.source_entries]
    assert names == [("a.png", "a_label.png"), ("b.png", None)]


def test_scan_dataset_empty_raises(tmp_path):
    _touch_images(tmp_path / "src", ["a.png"])
    (tmp_path / "tgt").mkdir()
    with pytest.raises(EmptyDatasetError):
        imgio.scan_dataset(tmp_path / "src", tmp_path / "tgt", "")


def test_scan_dataset_order_independent_of_creation_order(tmp_path):
    rng = np.random.default_rng(5)
    names = [f"img_{i:03d}.png" for i in range(100)]
    shuffled = list(names)
    rng.shuffle(shuffled)
    _touch_images(tmp_path / "src", shuffled)
    _touch_images(tmp_path / "tgt", ["t.png"])
    manifest = imgio.scan_dataset(tmp_path / "src", tmp_path / "tgt", "")
    assert [p.name for p, _ in manifest.source_entries] == sorted(names)
