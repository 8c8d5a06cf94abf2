"""Image and label raster I/O plus dataset directory scanning.

Images are H x W x 3 float64 arrays with channels in [0, 1]; label maps are
H x W uint8 arrays where IGNORE_LABEL marks pixels excluded from training.
Supported formats: 8-bit RGB PNG and binary PPM (P6) for images, 8-bit
single-channel PNG/PGM for labels.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import EmptyDatasetError, FormatError, IoError

IGNORE_LABEL = 255

IMAGE_EXTENSIONS = (".png", ".ppm")
LABEL_EXTENSIONS = (".png", ".pgm")


@dataclass
class DatasetManifest:
    """Directory scan result: source entries with optional labels, target entries."""

    source_entries: list[tuple[Path, Path | None]]
    target_entries: list[Path]
    class_count: int = 2


def _read_binary(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc


def _parse_pnm_header(data: bytes, magic: bytes):
    """Parse a P5/P6 header and return (width, height, maxval, pixel offset)."""
    if not data.startswith(magic):
        raise FormatError(f"expected {magic!r} header")
    # Header tokens may be separated by whitespace and '#' comments.
    pos = 2
    fields = []
    while len(fields) < 3:
        match = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\d+)").match(data, pos)
        if match is None:
            raise FormatError("truncated PNM header")
        fields.append(int(match.group(1)))
        pos = match.end()
    if data[pos : pos + 1] not in (b" ", b"\t", b"\n", b"\r"):
        raise FormatError("malformed PNM header")
    width, height, maxval = fields
    if maxval != 255:
        raise FormatError(f"only maxval 255 supported, got {maxval}")
    return width, height, pos + 1


def _load_ppm(path) -> np.ndarray:
    data = _read_binary(path)
    width, height, offset = _parse_pnm_header(data, b"P6")
    expected = width * height * 3
    pixels = np.frombuffer(data, dtype=np.uint8, count=-1, offset=offset)
    if pixels.size < expected:
        raise FormatError(f"PPM payload too short in {path}")
    return pixels[:expected].reshape(height, width, 3)


def _load_pgm(path) -> np.ndarray:
    data = _read_binary(path)
    width, height, offset = _parse_pnm_header(data, b"P5")
    expected = width * height
    pixels = np.frombuffer(data, dtype=np.uint8, count=-1, offset=offset)
    if pixels.size < expected:
        raise FormatError(f"PGM payload too short in {path}")
    return pixels[:expected].reshape(height, width)


def _load_png(path, mode: str) -> np.ndarray:
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert(mode))
    except UnidentifiedImageError as exc:
        raise FormatError(f"not a valid PNG: {path}") from exc
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc


def load_image(path) -> np.ndarray:
    """Load a PNG or binary PPM as an H x W x 3 float64 array in [0, 1]."""
    path = Path(path)
    if not path.exists():
        raise IoError(f"no such file: {path}")
    suffix = path.suffix.lower()
    if suffix == ".ppm":
        raw = _load_ppm(path)
    elif suffix == ".png":
        raw = _load_png(path, "RGB")
    else:
        raise FormatError(f"unsupported image format: {path}")
    return raw.astype(np.float64) / 255.0


def quantize(img: np.ndarray) -> np.ndarray:
    """Clamp to [0, 1] and quantize to uint8 with round-half-up."""
    scaled = np.clip(img, 0.0, 1.0) * 255.0
    return np.floor(scaled + 0.5).astype(np.uint8)


def save_image(img: np.ndarray, path) -> None:
    """Write an H x W x 3 float array as 8-bit PNG or binary PPM."""
    path = Path(path)
    if not path.parent.is_dir():
        raise IoError(f"parent directory does not exist: {path.parent}")
    data = quantize(img)
    suffix = path.suffix.lower()
    try:
        if suffix == ".ppm":
            header = f"P6\n{data.shape[1]} {data.shape[0]}\n255\n".encode("ascii")
            path.write_bytes(header + data.tobytes())
        elif suffix == ".png":
            Image.fromarray(data, mode="RGB").save(path, format="PNG")
        else:
            raise FormatError(f"unsupported image format: {path}")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def load_label_map(path) -> np.ndarray:
    """Load an 8-bit single-channel PNG/PGM label raster as H x W uint8."""
    path = Path(path)
    if not path.exists():
        raise IoError(f"no such file: {path}")
    suffix = path.suffix.lower()
    if suffix == ".pgm":
        return _load_pgm(path)
    if suffix == ".png":
        return _load_png(path, "L")
    raise FormatError(f"unsupported label format: {path}")


def save_label_map(labels: np.ndarray, path) -> None:
    """Write an H x W uint8 label raster as single-channel PNG or PGM."""
    path = Path(path)
    if not path.parent.is_dir():
        raise IoError(f"parent directory does not exist: {path.parent}")
    data = np.asarray(labels, dtype=np.uint8)
    try:
        if path.suffix.lower() == ".pgm":
            header = f"P5\n{data.shape[1]} {data.shape[0]}\n255\n".encode("ascii")
            path.write_bytes(header + data.tobytes())
        else:
            Image.fromarray(data, mode="L").save(path, format="PNG")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def save_confidence_map(confidence: np.ndarray, path) -> None:
    """Write a [0, 1] confidence raster as 16-bit grayscale PNG."""
    path = Path(path)
    data = np.floor(np.clip(confidence, 0.0, 1.0) * 65535.0 + 0.5).astype(np.uint16)
    try:
        Image.fromarray(data).save(path, format="PNG")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def _list_images(directory: Path, label_suffix: str) -> list[Path]:
    try:
        names = [p for p in directory.iterdir() if p.is_file()]
    except OSError as exc:
        raise IoError(f"cannot list {directory}: {exc}") from exc
    images = []
    for p in names:
        if p.suffix.lower() not in IMAGE_EXTENSIONS:
            continue
        if label_suffix and p.name.endswith(label_suffix):
            continue
        images.append(p)
    # Lexicographic by filename: scan output must not depend on listing order.
    return sorted(images, key=lambda p: p.name)


def scan_dataset(source_dir, target_dir, label_suffix: str, class_count: int = 2) -> DatasetManifest:
    """Scan source/target directories into a manifest.

    A source image ``stem.ext`` is paired with ``stem + label_suffix`` in the
    same directory when that file exists; pass an empty suffix to skip label
    pairing.
    """
    source_dir, target_dir = Path(source_dir), Path(target_dir)
    for d in (source_dir, target_dir):
        if not d.is_dir():
            raise IoError(f"no such directory: {d}")
    source_entries = []
    for img_path in _list_images(source_dir, label_suffix):
        label_path = source_dir / (img_path.stem + label_suffix) if label_suffix else None
        if label_path is not None and not label_path.exists():
            label_path = None
        source_entries.append((img_path, label_path))
    target_entries = _list_images(target_dir, label_suffix)
    if not source_entries:
        raise EmptyDatasetError(f"no images in {source_dir}")
    if not target_entries:
        raise EmptyDatasetError(f"no images in {target_dir}")
    return DatasetManifest(source_entries, target_entries, class_count)
