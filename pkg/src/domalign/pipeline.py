"""Desk-scale end-to-end adaptation pipeline.

A linear-softmax pixel classifier over handcrafted descriptors stands in for
the segmentation backbone. Stage 0 trains on photometrically aligned source
images with cross-entropy only; each later stage freezes the previous model's
pseudo-labels, manifold atoms, category centers, and thresholds, then
fine-tunes with the four-term objective (segmentation + manifold + triplet +
consistency). All gradients are derived by hand; no autodiff framework.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .artifacts import StageArtifact
from .categories import TripletConfig, compute_category_centers, triplet_loss, triplet_loss_grad
from .consistency import (
    CategoryThresholds,
    PerturbConfig,
    PseudoLabelMap,
    ThresholdConfig,
    category_thresholds,
    consistency_loss,
    consistency_loss_grad,
    perturb,
    perturb_with_warp,
    pseudo_labels,
    warp_pseudo_targets,
)
from .errors import DimensionMismatchError
from .imgio import IGNORE_LABEL
from .manifold import (
    fit_pca,
    init_manifold_projector,
    kmeans_atoms,
    manifold_loss,
    manifold_loss_grad,
    pca_reduce,
    sample_correct_features,
)
from .photometric import GammaSolveConfig, align_photometric_with_info
from .synthetic import AdaptationData
from .texture import (
    BilateralParams,
    TextureAlignReport,
    default_param_grid,
    maybe_texture_align,
    optimize_filter_params,
)

DESCRIPTOR_DIM = 9


@dataclass
class LossWeights:
    seg: float = 1.0
    mfd: float = 1.0
    triplet: float = 1.0
    cst: float = 1.0


@dataclass
class PipelineConfig:
    stages: int = 3                  # total stages, image adaptation included
    iters_per_stage: int = 500
    lr_initial: float = 0.5
    lr_power: float = 0.9
    lr_feature_factor: float = 0.5   # feature stages restart the schedule at half rate
    feature_dim: int = 16
    n_atoms: int = 32
    n_hidden: int = 32
    pca_energy: float = 0.9
    pca_components: int | None = None
    sample_cap_factor: int = 100     # feature sampling cap = factor * n_atoms
    mfd_batch: int = 64
    triplet_batch: int = 256
    texture_prob: float = 0.5
    texture_sample_cap: int = 50
    enable_gpa: bool = True
    enable_texture: bool = True
    loss_weights: LossWeights = field(default_factory=LossWeights)
    gamma: GammaSolveConfig = field(default_factory=GammaSolveConfig)
    thresholds: ThresholdConfig = field(default_factory=ThresholdConfig)
    triplet: TripletConfig = field(default_factory=TripletConfig)
    tau1: PerturbConfig = field(default_factory=PerturbConfig.color_jitter_only)
    tau2: PerturbConfig = field(default_factory=PerturbConfig)
    seed: int = 0


def pixel_descriptors(img: np.ndarray) -> np.ndarray:
    """Per-pixel descriptor: RGB plus 3x3 neighborhood mean and std per channel."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape[:2]
    padded = np.pad(img, ((1, 1), (1, 1), (0, 0)), mode="reflect")
    acc = np.zeros_like(img)
    acc_sq = np.zeros_like(img)
    for dy in range(3):
        for dx in range(3):
            window = padded[dy : dy + h, dx : dx + w]
            acc += window
            acc_sq += window * window
    mean = acc / 9.0
    std = np.sqrt(np.maximum(acc_sq / 9.0 - mean * mean, 0.0))
    return np.concatenate([img, mean, std], axis=-1)


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)


class ToySegmenter:
    """Linear feature layer plus linear-softmax head over pixel descriptors."""

    def __init__(self, feat_w, feat_b, head_w, head_b):
        self.feat_w = np.asarray(feat_w, dtype=np.float64)
        self.feat_b = np.asarray(feat_b, dtype=np.float64)
        self.head_w = np.asarray(head_w, dtype=np.float64)
        self.head_b = np.asarray(head_b, dtype=np.float64)

    @classmethod
    def create(cls, class_count: int, feature_dim: int, rng: np.random.Generator):
        scale = 1.0 / np.sqrt(DESCRIPTOR_DIM)
        feat_w = rng.uniform(-scale, scale, size=(feature_dim, DESCRIPTOR_DIM))
        feat_b = np.zeros(feature_dim)
        head_w = np.zeros((class_count, feature_dim))
        head_b = np.zeros(class_count)
        return cls(feat_w, feat_b, head_w, head_b)

    @property
    def class_count(self) -> int:
        return self.head_w.shape[0]

    def forward(self, img: np.ndarray):
        """Returns (descriptors, penultimate features, class probabilities)."""
        phi = pixel_descriptors(img)
        x = phi @ self.feat_w.T + self.feat_b
        probs = _softmax(x @ self.head_w.T + self.head_b)
        return phi, x, probs

    def predict(self, img: np.ndarray) -> np.ndarray:
        return self.forward(img)[2]

    def clone(self) -> "ToySegmenter":
        return ToySegmenter(
            self.feat_w.copy(), self.feat_b.copy(), self.head_w.copy(), self.head_b.copy()
        )

    def to_dict(self) -> dict:
        return {
            "feat_w": self.feat_w.tolist(),
            "feat_b": self.feat_b.tolist(),
            "head_w": self.head_w.tolist(),
            "head_b": self.head_b.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ToySegmenter":
        return cls(data["feat_w"], data["feat_b"], data["head_w"], data["head_b"])


def cross_entropy_loss(probs: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over non-IGNORE pixels and its gradient w.r.t. logits."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    if probs.shape[:-1] != labels.shape:
        raise DimensionMismatchError(
            f"probability map {probs.shape[:-1]} does not match labels {labels.shape}"
        )
    valid = labels != IGNORE_LABEL
    count = int(valid.sum())
    if count == 0:
        return 0.0, np.zeros_like(probs)
    safe_labels = np.where(valid, labels, 0)
    picked = np.take_along_axis(probs, safe_labels[..., None], axis=-1)[..., 0]
    loss = float(-np.log(np.maximum(picked, 1e-300))[valid].sum() / count)
    grad = probs.copy()
    np.subtract.at(grad, (*np.nonzero(valid), safe_labels[valid]), 1.0)
    grad[~valid] = 0.0
    return loss, grad / count


def evaluate(model: ToySegmenter, images, labels, class_count: int) -> dict:
    """Pixel accuracy and mIoU against private labels."""
    intersection = np.zeros(class_count)
    union = np.zeros(class_count)
    correct = 0
    total = 0
    for img, lab in zip(images, labels):
        pred = np.argmax(model.predict(img), axis=-1)
        valid = lab != IGNORE_LABEL
        correct += int((pred[valid] == lab[valid]).sum())
        total += int(valid.sum())
        for c in range(class_count):
            p = (pred == c) & valid
            g = lab == c
            intersection[c] += int((p & g).sum())
            union[c] += int((p | g).sum())
    ious = [intersection[c] / union[c] for c in range(class_count) if union[c] > 0]
    return {
        "accuracy": correct / max(total, 1),
        "miou": float(np.mean(ious)) if ious else 0.0,
    }


@dataclass
class StageInputs:
    stage_index: int
    source_images: list
    source_labels: list
    target_images: list
    artifact: StageArtifact | None = None
    pseudo: list[PseudoLabelMap] | None = None
    texture_params: BilateralParams | None = None


def _pseudo_digest(pseudo: list[PseudoLabelMap]) -> str:
    h = hashlib.sha256()
    for pl in pseudo:
        h.update(pl.labels.tobytes())
        h.update(pl.confidence.tobytes())
    return h.hexdigest()


def train_stage(
    model: ToySegmenter,
    inputs: StageInputs,
    cfg: PipelineConfig,
    rng: np.random.Generator,
) -> tuple[ToySegmenter, list[dict]]:
    """Run U gradient steps of the stage objective; returns the updated model.

    Stage 0 minimizes cross-entropy on aligned source images only; later
    stages add the manifold, triplet, and consistency terms against the frozen
    artifacts in ``inputs``. The consistency term is normalized by its valid
    pixel count; records carry both the raw sum and the normalized value.
    """
    model = model.clone()
    feature_stage = inputs.stage_index > 0
    weights = cfg.loss_weights
    lr0 = cfg.lr_initial * (cfg.lr_feature_factor if feature_stage else 1.0)
    records = []
    frozen_digest = _pseudo_digest(inputs.pseudo) if inputs.pseudo else None
    total_steps = cfg.iters_per_stage
    for step in range(total_steps):
        lr = lr0 * (1.0 - step / total_steps) ** cfg.lr_power
        record = {"stage": inputs.stage_index, "step": step, "lr": lr}

        src_idx = int(rng.integers(len(inputs.source_images)))
        src_img = inputs.source_images[src_idx]
        src_lab = inputs.source_labels[src_idx]
        if feature_stage and cfg.enable_texture and inputs.texture_params is not None:
            src_img = maybe_texture_align(src_img, inputs.texture_params, cfg.texture_prob, rng)
        src_img = perturb(src_img, cfg.tau1, rng)
        phi_s, x_s, probs_s = model.forward(src_img)
        h, w = src_lab.shape
        x_s_flat = x_s.reshape(-1, x_s.shape[-1])
        lab_flat = src_lab.reshape(-1)

        seg_loss, dlogits_s = cross_entropy_loss(probs_s, src_lab)
        dlogits_s = weights.seg * dlogits_s
        dx_s = np.zeros_like(x_s_flat)
        record["seg"] = seg_loss

        dlogits_t = None
        dx_t = None
        phi_t = None
        if feature_stage:
            artifact = inputs.artifact
            # Consistency on a perturbed target image vs frozen pseudo-labels.
            tgt_idx = int(rng.integers(len(inputs.target_images)))
            tgt_img, warp = perturb_with_warp(inputs.target_images[tgt_idx], cfg.tau2, rng)
            phi_t, x_t, probs_t = model.forward(tgt_img)
            x_t_flat = x_t.reshape(-1, x_t.shape[-1])
            pl = inputs.pseudo[tgt_idx]
            cst_sum = consistency_loss(pl, artifact.thresholds, probs_t, warp)
            _, mask_w = warp_pseudo_targets(pl, artifact.thresholds, warp)
            valid_n = max(int(mask_w.sum()), 1)
            grad_cst = consistency_loss_grad(pl, artifact.thresholds, probs_t, warp)
            dlogits_t = weights.cst * grad_cst / valid_n
            dx_t = np.zeros_like(x_t_flat)
            record["cst_sum"] = cst_sum
            record["cst"] = cst_sum / valid_n
            record["cst_valid"] = int(mask_w.sum())

            # Triplet on a sampled batch of labeled source pixels.
            labeled = np.flatnonzero(lab_flat != IGNORE_LABEL)
            take = min(cfg.triplet_batch, labeled.size)
            sel = rng.choice(labeled, size=take, replace=False)
            trip = triplet_loss(x_s_flat[sel], lab_flat[sel], artifact.centers, cfg.triplet)
            dx_s[sel] += weights.triplet * triplet_loss_grad(
                x_s_flat[sel], lab_flat[sel], artifact.centers, cfg.triplet
            )
            record["triplet"] = trip

            # Manifold projection on sampled pixels from both domains. Like the
            # consistency term, the trainer optimizes the per-vector mean for
            # scale stability and records both the raw sum and the mean.
            half = max(cfg.mfd_batch // 2, 1)
            sel_s = rng.choice(x_s_flat.shape[0], size=min(half, x_s_flat.shape[0]), replace=False)
            sel_t = rng.choice(x_t_flat.shape[0], size=min(half, x_t_flat.shape[0]), replace=False)
            batch = np.concatenate([x_s_flat[sel_s], x_t_flat[sel_t]])
            mfd_sum = manifold_loss(batch, artifact.projector)
            g_x, g_w1, g_w2 = manifold_loss_grad(batch, artifact.projector)
            mfd_scale = weights.mfd / len(batch)
            dx_s[sel_s] += mfd_scale * g_x[: len(sel_s)]
            dx_t[sel_t] += mfd_scale * g_x[len(sel_s) :]
            artifact.projector.W1 -= lr * mfd_scale * g_w1
            artifact.projector.W2 -= lr * mfd_scale * g_w2
            record["mfd_sum"] = mfd_sum
            record["mfd"] = mfd_sum / len(batch)

        # Shared backward through head and feature layer.
        dlog_s_flat = dlogits_s.reshape(-1, model.class_count)
        grad_head_w = dlog_s_flat.T @ x_s_flat
        grad_head_b = dlog_s_flat.sum(axis=0)
        dx_s += dlog_s_flat @ model.head_w
        phi_s_flat = phi_s.reshape(-1, DESCRIPTOR_DIM)
        grad_feat_w = dx_s.T @ phi_s_flat
        grad_feat_b = dx_s.sum(axis=0)
        if dlogits_t is not None:
            dlog_t_flat = dlogits_t.reshape(-1, model.class_count)
            grad_head_w += dlog_t_flat.T @ x_t_flat
            grad_head_b += dlog_t_flat.sum(axis=0)
            dx_t += dlog_t_flat @ model.head_w
            phi_t_flat = phi_t.reshape(-1, DESCRIPTOR_DIM)
            grad_feat_w += dx_t.T @ phi_t_flat
            grad_feat_b += dx_t.sum(axis=0)

        model.head_w -= lr * grad_head_w
        model.head_b -= lr * grad_head_b
        model.feat_w -= lr * grad_feat_w
        model.feat_b -= lr * grad_feat_b

        terms = [record.get(k, 0.0) for k in ("seg", "mfd", "triplet", "cst")]
        record["total"] = float(sum(terms))
        records.append(record)

    if frozen_digest is not None and _pseudo_digest(inputs.pseudo) != frozen_digest:
        raise AssertionError("frozen pseudo-labels were mutated during the stage")
    return model, records


def build_stage_artifact(
    model: ToySegmenter,
    source_images,
    source_labels,
    target_images,
    cfg: PipelineConfig,
    rng: np.random.Generator,
) -> tuple[StageArtifact, list[PseudoLabelMap]]:
    """Freeze atoms, centers, thresholds, and pseudo-labels from the previous model."""
    feats, probs, labels = [], [], []
    for img, lab in zip(source_images, source_labels):
        _, x, p = model.forward(img)
        feats.append(x.reshape(-1, x.shape[-1]))
        probs.append(p.reshape(-1, p.shape[-1]))
        labels.append(np.asarray(lab).reshape(-1))
    feats = np.concatenate(feats)
    probs = np.concatenate(probs)
    labels = np.concatenate(labels)

    cap = cfg.sample_cap_factor * cfg.n_atoms
    correct = int(((np.argmax(probs, axis=1) == labels) & (labels != IGNORE_LABEL)).sum())
    sample = sample_correct_features(feats, probs, labels, min(cap, correct), rng)
    pca = fit_pca(sample, cfg.pca_energy, cfg.pca_components)
    atoms = kmeans_atoms(pca_reduce(sample, pca), cfg.n_atoms, rng)
    projector = init_manifold_projector(pca, atoms, cfg.n_hidden, rng)
    centers = compute_category_centers(feats, labels, model.class_count)

    pseudo = [pseudo_labels(model.predict(img)) for img in target_images]
    pooled = PseudoLabelMap(
        labels=np.concatenate([pl.labels.ravel() for pl in pseudo])[None, :],
        confidence=np.concatenate([pl.confidence.ravel() for pl in pseudo])[None, :],
    )
    thresholds = category_thresholds(pooled, cfg.thresholds, model.class_count)
    return StageArtifact(projector, centers, thresholds), pseudo


@dataclass
class PipelineResult:
    stage_metrics: list[dict]
    step_records: list[dict]
    artifacts: list[StageArtifact]
    models: list[ToySegmenter]
    texture_report: TextureAlignReport | None
    gamma_values: list[float]


def _rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, *key]))


def run_pipeline(data: AdaptationData, cfg: PipelineConfig) -> PipelineResult:
    """Stage 0 image adaptation followed by K-1 feature adaptation stages.

    Between stages, pseudo-labels, atoms, centers, and thresholds are
    recomputed from the just-trained model and frozen for the next stage.
    Deterministic for a fixed config and seed.
    """
    model = ToySegmenter.create(data.class_count, cfg.feature_dim, _rng(cfg.seed, 0))

    aligned = []
    gamma_values = []
    for i, img in enumerate(data.source_images):
        if cfg.enable_gpa:
            pair_rng = _rng(cfg.seed, 1, i)
            ref = data.target_images[int(pair_rng.integers(len(data.target_images)))]
            out, info = align_photometric_with_info(img, ref, cfg.gamma)
            aligned.append(out)
            gamma_values.append(info.gamma)
        else:
            aligned.append(np.asarray(img, dtype=np.float64))

    stage_metrics = []
    step_records = []
    artifacts = []
    models = []

    model, records = train_stage(
        model,
        StageInputs(0, aligned, data.source_labels, data.target_images),
        cfg,
        _rng(cfg.seed, 2, 0),
    )
    step_records.extend(records)
    metrics = evaluate(model, data.eval_images, data.eval_labels, data.class_count)
    metrics.update(stage=0, source=evaluate(model, aligned, data.source_labels, data.class_count))
    stage_metrics.append(metrics)
    models.append(model.clone())

    texture_report = None
    texture_params = None
    for stage in range(1, cfg.stages):
        if texture_report is None and cfg.enable_texture:
            # Filter parameters are optimized once and reused by later stages.
            texture_report = optimize_filter_params(
                aligned,
                data.target_images,
                default_param_grid(),
                sample_cap=cfg.texture_sample_cap,
                rng=_rng(cfg.seed, 3),
            )
            texture_params = texture_report.params
        artifact, pseudo = build_stage_artifact(
            model, aligned, data.source_labels, data.target_images, cfg, _rng(cfg.seed, 4, stage)
        )
        model, records = train_stage(
            model,
            StageInputs(
                stage,
                aligned,
                data.source_labels,
                data.target_images,
                artifact=artifact,
                pseudo=pseudo,
                texture_params=texture_params,
            ),
            cfg,
            _rng(cfg.seed, 2, stage),
        )
        step_records.extend(records)
        metrics = evaluate(model, data.eval_images, data.eval_labels, data.class_count)
        metrics.update(
            stage=stage, source=evaluate(model, aligned, data.source_labels, data.class_count)
        )
        stage_metrics.append(metrics)
        artifacts.append(artifact)
        models.append(model.clone())

    return PipelineResult(
        stage_metrics=stage_metrics,
        step_records=step_records,
        artifacts=artifacts,
        models=models,
        texture_report=texture_report,
        gamma_values=gamma_values,
    )
