"""Versioned JSON serialization of the cross-stage adaptation artifacts.

A stage artifact bundles the frozen PCA model, K-means atoms, attention
projector weights, category centers, and per-class thresholds so a later
stage (or an external inspection tool) can reload exactly what training used.
Matrices are stored row-major as nested lists.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .categories import CategoryCenters
from .consistency import CategoryThresholds
from .errors import FormatError
from .manifold import AtomSet, ManifoldProjector, PcaModel

SCHEMA_VERSION = 1


@dataclass
class StageArtifact:
    projector: ManifoldProjector
    centers: CategoryCenters
    thresholds: CategoryThresholds


def _matrix(a: np.ndarray) -> list:
    return np.asarray(a, dtype=np.float64).tolist()


def artifact_to_dict(artifact: StageArtifact) -> dict:
    proj = artifact.projector
    return {
        "version": SCHEMA_VERSION,
        "pca": {
            "dims": list(proj.pca.components.shape),
            "mean": _matrix(proj.pca.mean),
            "components": _matrix(proj.pca.components),
            "explained_ratio": proj.pca.explained_ratio,
        },
        "atoms": {
            "dims": list(proj.atoms.atoms.shape),
            "values": _matrix(proj.atoms.atoms),
            "inertia": proj.atoms.inertia,
        },
        "projector": {
            "dims": list(proj.W1.shape),
            "W1": _matrix(proj.W1),
            "W2": _matrix(proj.W2),
        },
        "centers": {
            "dims": list(artifact.centers.centers.shape),
            "values": _matrix(artifact.centers.centers),
            "present": artifact.centers.present.tolist(),
        },
        "thresholds": {
            "t": _matrix(artifact.thresholds.t),
            "percentile": [
                None if not np.isfinite(v) else float(v) for v in artifact.thresholds.percentile
            ],
        },
    }


def artifact_from_dict(data: dict) -> StageArtifact:
    version = data.get("version")
    if version != SCHEMA_VERSION:
        raise FormatError(f"unsupported artifact schema version: {version!r}")
    pca = PcaModel(
        mean=np.array(data["pca"]["mean"], dtype=np.float64),
        components=np.array(data["pca"]["components"], dtype=np.float64),
        explained_ratio=float(data["pca"]["explained_ratio"]),
    )
    atoms = AtomSet(
        atoms=np.array(data["atoms"]["values"], dtype=np.float64),
        inertia=float(data["atoms"]["inertia"]),
    )
    projector = ManifoldProjector(
        W1=np.array(data["projector"]["W1"], dtype=np.float64),
        W2=np.array(data["projector"]["W2"], dtype=np.float64),
        atoms=atoms,
        pca=pca,
    )
    centers = CategoryCenters(
        centers=np.array(data["centers"]["values"], dtype=np.float64),
        present=np.array(data["centers"]["present"], dtype=bool),
    )
    thresholds = CategoryThresholds(
        t=np.array(data["thresholds"]["t"], dtype=np.float64),
        percentile=np.array(
            [np.nan if v is None else v for v in data["thresholds"]["percentile"]],
            dtype=np.float64,
        ),
    )
    return StageArtifact(projector=projector, centers=centers, thresholds=thresholds)


def save_artifact(artifact: StageArtifact, path) -> None:
    Path(path).write_text(json.dumps(artifact_to_dict(artifact), indent=1, sort_keys=True))


def load_artifact(path) -> StageArtifact:
    return artifact_from_dict(json.loads(Path(path).read_text()))
