"""Training loop with Adam, L2, early stopping, and best-epoch restoration.

Two regimes: "unimodal" (lr 1e-3, up to 100 epochs, full batch, dropout 0.5,
no early stop — best epoch restored) and "fusion" (lr 1e-4, up to 50 epochs,
batch 16, dropout 0.2, L2 0.01, patience 15).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensorcore as tc
from .errors import DataError, NumericError

REGIMES = ("unimodal", "fusion")


@dataclass(frozen=True)
class TrainConfig:
    regime: str = "fusion"
    lr: float = 1e-4
    max_epochs: int = 50
    batch_size: int | None = 16
    dropout: float = 0.2
    l2: float = 0.01
    patience: int = 15
    seed: int = 0
    val_fraction: float = 0.1

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise DataError(f"unknown regime {self.regime!r}")
        if self.lr <= 0:
            raise DataError(f"lr must be > 0, got {self.lr}")
        if self.max_epochs < 1:
            raise DataError("max_epochs must be >= 1")
        if self.patience > self.max_epochs:
            raise DataError(f"patience {self.patience} exceeds max_epochs {self.max_epochs}")
        if not 0.0 <= self.val_fraction < 1.0:
            raise DataError("val_fraction must be in [0, 1)")

    @classmethod
    def unimodal_defaults(cls, **overrides) -> "TrainConfig":
        cfg = cls(regime="unimodal", lr=1e-3, max_epochs=100, batch_size=None,
                  dropout=0.5, l2=0.0, patience=100)
        return replace(cfg, **overrides)

    @classmethod
    def fusion_defaults(cls, **overrides) -> "TrainConfig":
        return replace(cls(), **overrides)

    def to_dict(self) -> dict:
        return {
            "regime": self.regime, "lr": self.lr, "max_epochs": self.max_epochs,
            "batch_size": self.batch_size, "dropout": self.dropout, "l2": self.l2,
            "patience": self.patience, "seed": self.seed, "val_fraction": self.val_fraction,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        base = cls.unimodal_defaults() if d.get("regime", "fusion") == "unimodal" else cls()
        known = {k: v for k, v in d.items() if k in base.to_dict()}
        return replace(base, **known)


# ---------------------------------------------------------------------------
# Datasets


class ArrayDataset:
    """Fixed-vector classification data."""

    def __init__(self, x: np.ndarray, y: np.ndarray):
        self.x = np.asarray(x, dtype=np.float64)
        self.y = np.asarray(y, dtype=np.int64)
        if self.x.ndim != 2 or self.y.shape != (self.x.shape[0],):
            raise DataError(f"dataset shapes: x {self.x.shape}, y {self.y.shape}")

    def __len__(self) -> int:
        return len(self.y)


class SeqDataset:
    """Per-modality variable-length sequences; batches group equal shapes.

    ``seqs`` maps modality -> list of (T, d) arrays, all lists parallel to y.
    For single-modality use, pass {None: sequences} or use modality=None in
    ``stack``.
    """

    def __init__(self, seqs, y: np.ndarray):
        if isinstance(seqs, list):
            seqs = {None: seqs}
        self.seqs = seqs
        self.y = np.asarray(y, dtype=np.int64)
        for m, lst in seqs.items():
            if len(lst) != len(self.y):
                raise DataError(f"sequence list for {m!r} has {len(lst)} items, labels {len(self.y)}")

    def __len__(self) -> int:
        return len(self.y)

    def _shape_key(self, i: int) -> tuple:
        return tuple(self.seqs[m][i].shape for m in self.seqs)

    def buckets(self, idx: Sequence[int]):
        """Split indices into equal-shape groups (stackable batches)."""
        groups: dict[tuple, list[int]] = {}
        for i in idx:
            groups.setdefault(self._shape_key(int(i)), []).append(int(i))
        for key in sorted(groups):
            yield np.asarray(groups[key], dtype=np.int64)

    def stack(self, modality, idx: np.ndarray) -> np.ndarray:
        lst = self.seqs[modality]
        return np.stack([lst[int(i)] for i in idx])


# ---------------------------------------------------------------------------
# Validation split and training loop


def make_validation_split(groups: Sequence[str], fraction: float = 0.1,
                          seed: int = 0) -> tuple[list[str], list[str]]:
    """Split pair ids into (fit, validation) groups; no pair straddles.

    fraction 0 returns an empty validation set (early stopping then runs on
    nothing and the trainer keeps final-epoch parameters).
    """
    groups = sorted(groups)
    if fraction == 0.0:
        return list(groups), []
    if len(groups) < 2:
        raise DataError(f"need >= 2 groups to carve a validation split, got {len(groups)}")
    n_val = min(math.ceil(fraction * len(groups)), len(groups) - 1)
    order = np.random.default_rng(seed).permutation(len(groups))
    val = {groups[i] for i in order[:n_val]}
    return [g for g in groups if g not in val], sorted(val)


@dataclass
class TrainHistory:
    epochs: list[int]
    train_loss: list[float]
    val_loss: list[float]
    best_epoch: int | None
    stopped_early: bool

    def to_rows(self) -> list[tuple[int, float, float]]:
        return list(zip(self.epochs, self.train_loss, self.val_loss))

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "train_loss", "val_loss"])
            for e, t, v in self.to_rows():
                w.writerow([e, f"{t:.10f}", "" if math.isnan(v) else f"{v:.10f}"])


def _batches(n: int, batch_size: int | None, rng: np.random.Generator):
    idx = rng.permutation(n)
    if batch_size is None or batch_size >= n:
        yield idx
        return
    for start in range(0, n, batch_size):
        yield idx[start:start + batch_size]


def train(model, train_data, val_data, cfg: TrainConfig) -> TrainHistory:
    """Minimize mean cross-entropy (+ L2 via the optimizer) with Adam.

    Restores the parameters of the best-validation-loss epoch; with an empty
    validation set, early stopping is disabled and final parameters are kept.
    Deterministic under cfg.seed.
    """
    if len(train_data) == 0:
        raise DataError("training partition is empty")
    rng = np.random.default_rng(cfg.seed)
    params = model.parameters()
    adam_state: dict[str, tc.AdamState] = {}
    has_val = val_data is not None and len(val_data) > 0
    best_val = np.inf
    best_state: dict[str, np.ndarray] | None = None
    best_epoch: int | None = None
    bad_epochs = 0
    stopped = False
    history = TrainHistory([], [], [], None, False)

    for epoch in range(cfg.max_epochs):
        losses, weights = [], []
        for batch_idx in _batches(len(train_data), cfg.batch_size, rng):
            model.zero_grad()
            loss = model.loss_batch(train_data, batch_idx, rng, True)
            value = loss.item()
            if not np.isfinite(value):
                raise NumericError(
                    f"non-finite training loss {value} at epoch {epoch} "
                    f"(lr={cfg.lr}, batch={len(batch_idx)})")
            tc.backward(loss)
            grads = {k: t.grad for k, t in params.items() if t.grad is not None}
            tc.adam_step({k: params[k].data for k in params}, grads, adam_state,
                         cfg.lr, weight_decay=cfg.l2)
            losses.append(value)
            weights.append(len(batch_idx))
        train_loss = float(np.average(losses, weights=weights))

        if has_val:
            val_loss = model.loss_batch(val_data, np.arange(len(val_data)), rng, False).item()
            if not np.isfinite(val_loss):
                raise NumericError(f"non-finite validation loss at epoch {epoch}")
        else:
            val_loss = float("nan")
        history.epochs.append(epoch)
        history.train_loss.append(train_loss)
        history.val_loss.append(val_loss)

        if has_val:
            if val_loss < best_val:
                best_val = val_loss
                best_state = {k: t.data.copy() for k, t in params.items()}
                best_epoch = epoch
                bad_epochs = 0
            else:
                bad_epochs += 1
                if bad_epochs >= max(1, cfg.patience):
                    stopped = True
                    break

    if best_state is not None:
        model.load_state(best_state)
    history.best_epoch = best_epoch
    history.stopped_early = stopped
    return history
