"""Command-line interface.

Subcommands: align (batch photometric alignment), texture-opt (bilateral
parameter search), build-artifacts (PCA/atoms/centers/thresholds from a saved
model), toy-adapt (the end-to-end toy pipeline), and stats (domain gap
diagnostics). All randomness derives per image from SeedSequence([seed, index])
so parallelism never perturbs outputs; every report writes machine-readable
JSON/JSONL/CSV plus rendered figures into --out. Wall-clock timings go to a
separate timings.json, the only file excluded from byte-reproducibility.

Exit codes: 0 success, 1 internal error, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import imgio, report
from .artifacts import save_artifact
from .consistency import PerturbConfig, ThresholdConfig, save_pseudo_labels
from .categories import TripletConfig
from .errors import ConfigError, DomainAlignError, EmptyDatasetError
from .colorspace import rgb_to_lab
from .photometric import GammaSolveConfig, align_photometric_with_info
from .pipeline import (
    LossWeights,
    PipelineConfig,
    ToySegmenter,
    build_stage_artifact,
    run_pipeline,
)
from .synthetic import AdaptationData, SyntheticDomainSpec, generate_synthetic_domains
from .texture import (
    BilateralParams,
    IDENTITY_PARAMS,
    default_param_grid,
    highfreq_histogram,
    kl_divergence,
    maybe_texture_align,
    optimize_filter_params,
)

_NESTED_CONFIGS = {
    "loss_weights": LossWeights,
    "gamma": GammaSolveConfig,
    "thresholds": ThresholdConfig,
    "triplet": TripletConfig,
    "tau1": PerturbConfig,
    "tau2": PerturbConfig,
}


def _image_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, index]))


def _build_dataclass(cls, data, context: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{context}: expected an object")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"{context}: unknown keys {unknown}")
    kwargs = {}
    for key, value in data.items():
        if key in _NESTED_CONFIGS and isinstance(value, dict):
            kwargs[key] = _build_dataclass(_NESTED_CONFIGS[key], value, f"{context}.{key}")
        elif isinstance(value, list):
            kwargs[key] = tuple(value)
        else:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{context}: {exc}") from exc


def _json_dump(data, path) -> None:
    Path(path).write_text(json.dumps(data, indent=1, sort_keys=True) + "\n")


def _load_manifest_images(entries):
    return [imgio.load_image(p) for p in entries]


def _require_dir(path, name: str) -> Path:
    p = Path(path)
    if not p.is_dir():
        raise ConfigError(f"{name} directory does not exist: {p}")
    return p


# ---------------------------------------------------------------------------
# align


def _align_one(args, seed, index, src_path, target_paths):
    rng = _image_rng(seed, index)
    ref_index = int(rng.integers(len(target_paths)))
    started = time.perf_counter()
    src = imgio.load_image(src_path)
    ref = imgio.load_image(target_paths[ref_index])
    cfg = GammaSolveConfig(beta=args.beta)
    out, info = align_photometric_with_info(src, ref, cfg)
    if args.texture:
        params = BilateralParams(args.texture_d, args.texture_sigma_c, args.texture_sigma_s)
        out = maybe_texture_align(out, params, args.texture_prob, rng)
    out_path = Path(args.out) / Path(src_path).name
    imgio.save_image(out, out_path)
    elapsed_ms = (time.perf_counter() - started) * 1000.0
    record = {
        "image": Path(src_path).name,
        "reference": Path(target_paths[ref_index]).name,
        "gamma": info.gamma,
        "objective": info.objective,
        "iterations": info.iterations,
    }
    return record, elapsed_ms


def cmd_align(args) -> int:
    _require_dir(args.src, "source")
    _require_dir(args.tgt, "target")
    manifest = imgio.scan_dataset(args.src, args.tgt, label_suffix="")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    sources = [p for p, _ in manifest.source_entries]
    targets = manifest.target_entries
    with ThreadPoolExecutor(max_workers=max(args.jobs, 1)) as pool:
        results = list(
            pool.map(lambda i: _align_one(args, args.seed, i, sources[i], targets), range(len(sources)))
        )
    records = [rec for rec, _ in results]
    timings = {rec["image"]: ms for (rec, ms) in zip(records, (ms for _, ms in results))}
    _json_dump(
        {"seed": args.seed, "beta": args.beta, "texture": bool(args.texture), "images": records},
        out_dir / "report.json",
    )
    _json_dump(timings, out_dir / "timings.json")
    report.save_gamma_histogram([rec["gamma"] for rec in records], out_dir / "gamma_hist.png")
    print(f"aligned {len(records)} images -> {out_dir}")
    return 0


# ---------------------------------------------------------------------------
# texture-opt


def _parse_floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v != ""]
    except ValueError as exc:
        raise ConfigError(f"bad numeric list: {text!r}") from exc


def _params_dict(p: BilateralParams) -> dict:
    return {"d": p.d, "sigma_c": p.sigma_c, "sigma_s": p.sigma_s}


def cmd_texture_opt(args) -> int:
    _require_dir(args.src, "source")
    _require_dir(args.tgt, "target")
    manifest = imgio.scan_dataset(args.src, args.tgt, label_suffix="")
    src_imgs = _load_manifest_images([p for p, _ in manifest.source_entries])
    ref_imgs = _load_manifest_images(manifest.target_entries)
    if args.d or args.sigma_c or args.sigma_s:
        ds = [int(v) for v in _parse_floats(args.d or "3,5,7")]
        sigcs = _parse_floats(args.sigma_c or "10,25,50,75,100")
        sigss = _parse_floats(args.sigma_s or "10,25,50")
        grid = [] if args.no_identity else [IDENTITY_PARAMS]
        grid += [BilateralParams(d, sc, ss) for d in ds for sc in sigcs for ss in sigss]
    elif args.no_identity:
        grid = default_param_grid()[1:]
    else:
        grid = default_param_grid()
    if not grid:
        raise ConfigError("parameter grid is empty")
    rng = _image_rng(args.seed, 0)
    result = optimize_filter_params(src_imgs, ref_imgs, grid, sample_cap=args.cap, rng=rng)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    _json_dump(
        {
            "params": _params_dict(result.params),
            "kl_before": result.kl_before,
            "kl_after": result.kl_after,
            "grid_evaluated": result.grid_evaluated,
            "grid": [{**_params_dict(p), "kl": kl} for p, kl in result.table],
        },
        out_dir / "texture_report.json",
    )
    report.save_kl_grid(result.table, result.params, result.kl_before, out_dir / "kl_grid.png")
    print(
        f"selected d={result.params.d} sigma_c={result.params.sigma_c} "
        f"sigma_s={result.params.sigma_s} (KL {result.kl_before:.4f} -> {result.kl_after:.4f})"
    )
    return 0


# ---------------------------------------------------------------------------
# build-artifacts


def cmd_build_artifacts(args) -> int:
    _require_dir(args.src, "source")
    _require_dir(args.tgt, "target")
    model_path = Path(args.model)
    if not model_path.is_file():
        raise ConfigError(f"model file does not exist: {model_path}")
    model = ToySegmenter.from_dict(json.loads(model_path.read_text()))
    manifest = imgio.scan_dataset(args.src, args.tgt, args.label_suffix, model.class_count)
    missing = [str(p) for p, lab in manifest.source_entries if lab is None]
    if missing:
        raise ConfigError(f"source images without labels: {missing}")
    src_imgs = _load_manifest_images([p for p, _ in manifest.source_entries])
    src_labels = [imgio.load_label_map(lab) for _, lab in manifest.source_entries]
    tgt_imgs = _load_manifest_images(manifest.target_entries)
    cfg = PipelineConfig(
        n_atoms=args.atoms,
        n_hidden=args.hidden,
        pca_energy=args.energy,
        pca_components=args.components,
        sample_cap_factor=args.cap_factor,
        thresholds=ThresholdConfig(p_high=args.p_high, percent=args.percent),
    )
    artifact, pseudo = build_stage_artifact(
        model, src_imgs, src_labels, tgt_imgs, cfg, _image_rng(args.seed, 0)
    )
    out_dir = Path(args.out)
    pseudo_dir = out_dir / "pseudo"
    pseudo_dir.mkdir(parents=True, exist_ok=True)
    save_artifact(artifact, out_dir / "artifact.json")
    for path, pl in zip(manifest.target_entries, pseudo):
        stem = Path(path).stem
        save_pseudo_labels(pl, pseudo_dir / f"{stem}_label.png", pseudo_dir / f"{stem}_conf.png")
    print(f"artifact written to {out_dir / 'artifact.json'} ({len(pseudo)} pseudo-label maps)")
    return 0


# ---------------------------------------------------------------------------
# toy-adapt


def _default_toy_config() -> dict:
    return {
        "seed": 0,
        "synthetic": dataclasses.asdict(SyntheticDomainSpec()),
        "pipeline": dataclasses.asdict(PipelineConfig()),
    }


def _load_toy_config(path: str | None, stages: int | None, seed: int | None) -> dict:
    config = _default_toy_config()
    if path is not None:
        config_path = Path(path)
        if not config_path.is_file():
            raise ConfigError(f"config file does not exist: {config_path}")
        try:
            user = json.loads(config_path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        unknown = sorted(set(user) - {"seed", "synthetic", "pipeline", "data"})
        if unknown:
            raise ConfigError(f"config: unknown keys {unknown}")
        if "data" in user and "synthetic" in user:
            raise ConfigError("config: 'data' and 'synthetic' are mutually exclusive")
        if "data" in user:
            config.pop("synthetic")
            config["data"] = user["data"]
        for key in ("seed", "synthetic", "pipeline"):
            if key in user:
                if isinstance(user[key], dict):
                    config[key] = {**config.get(key, {}), **user[key]}
                else:
                    config[key] = user[key]
    if stages is not None:
        config["pipeline"]["stages"] = stages
    if seed is not None:
        config["seed"] = seed
    config["synthetic" if "synthetic" in config else "data"].setdefault("seed", config["seed"])
    config["pipeline"]["seed"] = config["seed"]
    return config


def _load_directory_data(data_cfg: dict) -> AdaptationData:
    known = {"source_dir", "target_dir", "eval_dir", "label_suffix", "class_count", "seed"}
    unknown = sorted(set(data_cfg) - known)
    if unknown:
        raise ConfigError(f"config.data: unknown keys {unknown}")
    for key in ("source_dir", "target_dir", "class_count"):
        if key not in data_cfg:
            raise ConfigError(f"config.data: missing key {key!r}")
    suffix = data_cfg.get("label_suffix", "_label.png")
    manifest = imgio.scan_dataset(
        _require_dir(data_cfg["source_dir"], "source"),
        _require_dir(data_cfg["target_dir"], "target"),
        suffix,
        data_cfg["class_count"],
    )
    missing = [str(p) for p, lab in manifest.source_entries if lab is None]
    if missing:
        raise ConfigError(f"source images without labels: {missing}")
    data = AdaptationData(class_count=manifest.class_count)
    data.source_images = _load_manifest_images([p for p, _ in manifest.source_entries])
    data.source_labels = [imgio.load_label_map(lab) for _, lab in manifest.source_entries]
    data.target_images = _load_manifest_images(manifest.target_entries)
    if "eval_dir" in data_cfg:
        eval_manifest = imgio.scan_dataset(
            data_cfg["eval_dir"], data_cfg["target_dir"], suffix, manifest.class_count
        )
        missing = [str(p) for p, lab in eval_manifest.source_entries if lab is None]
        if missing:
            raise ConfigError(f"eval images without labels: {missing}")
        data.eval_images = _load_manifest_images([p for p, _ in eval_manifest.source_entries])
        data.eval_labels = [imgio.load_label_map(lab) for _, lab in eval_manifest.source_entries]
    return data


def cmd_toy_adapt(args) -> int:
    config = _load_toy_config(args.config, args.stages, args.seed)
    if args.print_config:
        print(json.dumps(config, indent=1, sort_keys=True))
        return 0
    pipeline_cfg = _build_dataclass(PipelineConfig, config["pipeline"], "config.pipeline")
    if "data" in config:
        data = _load_directory_data(config["data"])
    else:
        spec = _build_dataclass(SyntheticDomainSpec, config["synthetic"], "config.synthetic")
        data = generate_synthetic_domains(spec, np.random.default_rng(spec.seed))

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    result = run_pipeline(data, pipeline_cfg)

    _json_dump(config, out_dir / "config_effective.json")
    with open(out_dir / "metrics.jsonl", "w") as fh:
        for rec in result.step_records:
            fh.write(json.dumps({"type": "step", **rec}, sort_keys=True) + "\n")
        for metrics in result.stage_metrics:
            fh.write(json.dumps({"type": "stage", **metrics}, sort_keys=True) + "\n")
    with open(out_dir / "summary.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["stage", "target_accuracy", "target_miou", "source_accuracy", "source_miou"])
        for metrics in result.stage_metrics:
            writer.writerow(
                [
                    metrics["stage"],
                    f"{metrics['accuracy']:.6f}",
                    f"{metrics['miou']:.6f}",
                    f"{metrics['source']['accuracy']:.6f}",
                    f"{metrics['source']['miou']:.6f}",
                ]
            )
    for i, model in enumerate(result.models):
        _json_dump(model.to_dict(), out_dir / f"model_stage_{i}.json")
    for i, artifact in enumerate(result.artifacts, start=1):
        save_artifact(artifact, out_dir / f"artifact_stage_{i}.json")
    if result.texture_report is not None:
        _json_dump(
            {
                "params": _params_dict(result.texture_report.params),
                "kl_before": result.texture_report.kl_before,
                "kl_after": result.texture_report.kl_after,
                "grid_evaluated": result.texture_report.grid_evaluated,
            },
            out_dir / "texture_report.json",
        )
    report.save_loss_curves(result.step_records, out_dir / "loss_curves.png")
    report.save_stage_metrics(result.stage_metrics, out_dir / "stage_metrics.png")
    final = result.stage_metrics[-1]
    print(
        f"ran {pipeline_cfg.stages} stages: target accuracy "
        f"{result.stage_metrics[0]['accuracy']:.4f} -> {final['accuracy']:.4f}, "
        f"mIoU {final['miou']:.4f}"
    )
    return 0


# ---------------------------------------------------------------------------
# stats


def _domain_stats(images) -> dict:
    lab_sum = np.zeros(3)
    lab_sq = np.zeros(3)
    pixels = 0
    hf = np.zeros(256)
    for img in images:
        lab = rgb_to_lab(img)
        flat = lab.reshape(-1, 3)
        lab_sum += flat.sum(axis=0)
        lab_sq += (flat**2).sum(axis=0)
        pixels += flat.shape[0]
        hf += highfreq_histogram(img).counts
    mean = lab_sum / pixels
    std = np.sqrt(np.maximum(lab_sq / pixels - mean**2, 0.0))
    return {
        "count": len(images),
        "lab_mean": mean.tolist(),
        "lab_std": std.tolist(),
        "highfreq_counts": hf.tolist(),
    }


def cmd_stats(args) -> int:
    _require_dir(args.src, "source")
    _require_dir(args.tgt, "target")
    manifest = imgio.scan_dataset(args.src, args.tgt, label_suffix="")
    src_imgs = _load_manifest_images([p for p, _ in manifest.source_entries])
    tgt_imgs = _load_manifest_images(manifest.target_entries)
    src_stats = _domain_stats(src_imgs)
    tgt_stats = _domain_stats(tgt_imgs)
    from .colorspace import Histogram

    src_hf = Histogram(np.array(src_stats.pop("highfreq_counts")))
    tgt_hf = Histogram(np.array(tgt_stats.pop("highfreq_counts")))
    stats = {
        "source": src_stats,
        "target": tgt_stats,
        "highfreq_kl_source_to_target": kl_divergence(src_hf, tgt_hf),
        "highfreq_kl_target_to_source": kl_divergence(tgt_hf, src_hf),
    }
    text = json.dumps(stats, indent=1, sort_keys=True)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text + "\n")
    print(text)
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="domalign",
        description="Training-free image alignment and toy feature-level adaptation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("align", help="photometrically align source images to random target references")
    p.add_argument("--src", required=True, help="source image directory")
    p.add_argument("--tgt", required=True, help="target image directory")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--beta", type=float, default=0.01, help="gamma regularization weight")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1, help="parallel workers (outputs are identical)")
    p.add_argument("--texture", action="store_true", help="also apply stochastic bilateral filtering")
    p.add_argument("--texture-d", type=int, default=5)
    p.add_argument("--texture-sigma-c", type=float, default=75.0)
    p.add_argument("--texture-sigma-s", type=float, default=25.0)
    p.add_argument("--texture-prob", type=float, default=0.5)
    p.set_defaults(func=cmd_align)

    p = sub.add_parser("texture-opt", help="optimize bilateral filter parameters by KL grid search")
    p.add_argument("--src", required=True)
    p.add_argument("--tgt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--d", help="comma-separated diameters, e.g. 3,5,7")
    p.add_argument("--sigma-c", help="comma-separated range sigmas")
    p.add_argument("--sigma-s", help="comma-separated spatial sigmas")
    p.add_argument("--no-identity", action="store_true", help="omit the identity sentinel")
    p.add_argument("--cap", type=int, default=50, help="max images per side")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_texture_opt)

    p = sub.add_parser("build-artifacts", help="build PCA/atoms/centers/thresholds from a saved model")
    p.add_argument("--model", required=True, help="toy model JSON snapshot")
    p.add_argument("--src", required=True)
    p.add_argument("--tgt", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--label-suffix", default="_label.png")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--atoms", type=int, default=32)
    p.add_argument("--hidden", type=int, default=32)
    p.add_argument("--energy", type=float, default=0.9)
    p.add_argument("--components", type=int, default=None)
    p.add_argument("--cap-factor", type=int, default=100)
    p.add_argument("--p-high", type=float, default=0.9)
    p.add_argument("--percent", type=float, default=10.0)
    p.set_defaults(func=cmd_build_artifacts)

    p = sub.add_parser("toy-adapt", help="run the desk-scale adaptation pipeline")
    p.add_argument("--config", help="JSON config; defaults are used when omitted")
    p.add_argument("--out", help="output directory")
    p.add_argument("--stages", type=int, default=None, help="override stage count K")
    p.add_argument("--seed", type=int, default=None, help="override the global seed")
    p.add_argument("--print-config", action="store_true", help="dump the effective config and exit")
    p.set_defaults(func=cmd_toy_adapt)

    p = sub.add_parser("stats", help="domain gap statistics for two image directories")
    p.add_argument("--src", required=True)
    p.add_argument("--tgt", required=True)
    p.add_argument("--out", help="optional JSON output path")
    p.set_defaults(func=cmd_stats)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "toy-adapt" and not args.print_config and not args.out:
        parser.error("toy-adapt requires --out unless --print-config is given")
    try:
        return args.func(args)
    except (ConfigError, EmptyDatasetError) as exc:
        print(json.dumps({"error": str(exc), "kind": "config"}), file=sys.stderr)
        return 2
    except DomainAlignError as exc:
        print(json.dumps({"error": str(exc), "kind": type(exc).__name__}), file=sys.stderr)
        return 1
    except Exception as exc:  # pragma: no cover - safety net
        print(json.dumps({"error": str(exc), "kind": type(exc).__name__}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
