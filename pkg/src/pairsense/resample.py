"""SMOTE oversampling of minority classes, for vectors and for whole records.

Vector SMOTE follows the classic recipe: each minority class is upsampled to
the majority count with synthetic points x + lambda * (nn - x), lambda uniform
on [0, 1] and nn one of the k nearest same-class neighbors (Euclidean, ties
broken toward the lowest original index). Record-level oversampling, used by
models that consume raw sequences, interpolates precomputed vectors and
equal-length frame sequences, duplicating fields whose lengths differ.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .datamodel import UtteranceRecord, _replace_features
from .errors import DataError


@dataclass(frozen=True)
class SmoteConfig:
    k_neighbors: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.k_neighbors < 1:
            raise DataError(f"k_neighbors must be >= 1, got {self.k_neighbors}")


def _class_neighbors(x: np.ndarray, k: int) -> np.ndarray:
    """Indices (within the class) of the k nearest neighbors per row."""
    d2 = ((x[:, None, :] - x[None, :, :]) ** 2).sum(axis=2)
    np.fill_diagonal(d2, np.inf)
    order = np.argsort(d2, axis=1, kind="stable")
    return order[:, :k]


def smote(features: np.ndarray, labels: np.ndarray, cfg: SmoteConfig) -> tuple[np.ndarray, np.ndarray]:
    """Upsample every minority class to the majority count.

    Originals appear verbatim (and first) in the output; deterministic under
    cfg.seed. A minority class with a single sample has no neighbor to
    interpolate toward and is an error.
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if x.ndim != 2 or y.shape != (x.shape[0],):
        raise DataError(f"smote shapes: features {x.shape}, labels {y.shape}")
    classes, counts = np.unique(y, return_counts=True)
    majority = int(counts.max())
    rng = np.random.default_rng(cfg.seed)

    new_rows: list[np.ndarray] = []
    new_labels: list[int] = []
    for cls, count in zip(classes, counts):
        need = majority - int(count)
        if need == 0:
            continue
        if count < 2:
            raise DataError(f"class {int(cls)} has {int(count)} sample(s); SMOTE needs at least 2")
        members = np.nonzero(y == cls)[0]
        xc = x[members]
        k = min(cfg.k_neighbors, int(count) - 1)
        nn = _class_neighbors(xc, k)
        for i in range(need):
            base = i % int(count)
            neighbor = nn[base][int(rng.integers(k))]
            lam = rng.random()
            new_rows.append(xc[base] + lam * (xc[neighbor] - xc[base]))
            new_labels.append(int(cls))

    if not new_rows:
        return x.copy(), y.copy()
    return np.vstack([x, np.array(new_rows)]), np.concatenate([y, np.array(new_labels, dtype=np.int64)])


def _summary_layout(records: Sequence[UtteranceRecord]) -> list[tuple[str, int]]:
    """Fixed (field, dim) layout so summaries align even with absent fields."""
    layout = []
    for f in ("sentence_vec", "sentiment_vec", "audio_vec", "audio_frames", "video_frames"):
        dim = 0
        for r in records:
            v = getattr(r, f)
            if v is None:
                continue
            dim = v.shape[-1]
            break
        if dim:
            layout.append((f, dim))
    return layout


def _record_summary(rec: UtteranceRecord, layout: Sequence[tuple[str, int]]) -> np.ndarray:
    parts = []
    for f, dim in layout:
        v = getattr(rec, f)
        if v is None or (v.ndim == 2 and v.shape[0] == 0):
            parts.append(np.zeros(dim))
        elif v.ndim == 2:
            parts.append(v.mean(axis=0))
        else:
            parts.append(v)
    return np.concatenate(parts) if parts else np.zeros(1)


def _interp_records(a: UtteranceRecord, b: UtteranceRecord, lam: float) -> UtteranceRecord:
    updates = {}
    for f in ("sentence_vec", "sentiment_vec", "audio_vec"):
        va, vb = getattr(a, f), getattr(b, f)
        if va is not None and vb is not None:
            updates[f] = va + lam * (vb - va)
    for f in ("audio_frames", "video_frames"):
        ma, mb = getattr(a, f), getattr(b, f)
        if ma is not None and mb is not None and ma.shape == mb.shape:
            updates[f] = ma + lam * (mb - ma)
        # unequal lengths: keep the base sequence (duplication fallback)
    return _replace_features(a, updates)


def oversample_records(
    records: Sequence[UtteranceRecord], cfg: SmoteConfig
) -> list[UtteranceRecord]:
    """Record-level SMOTE for sequence-consuming models.

    Neighbors are the k nearest same-class records measured on a fixed-length
    summary (precomputed vectors plus frame means); base and neighbor are
    interpolated field-wise. Originals come first, unchanged.
    """
    labels = []
    for i, r in enumerate(records):
        if r.label is None:
            raise DataError(f"record {i} has no label; cannot oversample")
        labels.append(int(r.label))
    y = np.asarray(labels, dtype=np.int64)
    classes, counts = np.unique(y, return_counts=True)
    majority = int(counts.max())
    rng = np.random.default_rng(cfg.seed)

    out = list(records)
    layout = _summary_layout(records)
    for cls, count in zip(classes, counts):
        need = majority - int(count)
        if need == 0:
            continue
        if count < 2:
            raise DataError(f"class {int(cls)} has {int(count)} sample(s); SMOTE needs at least 2")
        members = [i for i in range(len(records)) if y[i] == cls]
        summaries = np.stack([_record_summary(records[i], layout) for i in members])
        k = min(cfg.k_neighbors, int(count) - 1)
        nn = _class_neighbors(summaries, k)
        for i in range(need):
            base = i % int(count)
            neighbor = nn[base][int(rng.integers(k))]
            lam = rng.random()
            out.append(_interp_records(records[members[base]], records[members[neighbor]], lam))
    return out
