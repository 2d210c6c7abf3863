"""Subject-independent fold planning, metrics, error analysis, kappa, and WER.

All metric operations are pure; cross_validate may run folds in parallel,
collecting results in fold order so output is deterministic under the seed.
"""

from __future__ import annotations

import concurrent.futures
import csv
import io
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .datamodel import Corpus, Label, N_CLASSES
from .errors import DataError
from .fusionmodels import FusionSpec
from .pipeline import child_seed, fit_pipeline
from .textfeat import preprocess
from .trainer import TrainConfig

CLASS_NAMES = tuple(Label(i).display_name for i in range(N_CLASSES))


# ---------------------------------------------------------------------------
# Fold planning


@dataclass(frozen=True)
class FoldPlan:
    """k folds of (train pair ids, test pair ids); test sets partition the pairs."""

    folds: tuple[tuple[tuple[str, ...], tuple[str, ...]], ...]

    def __post_init__(self):
        all_pairs = sorted(p for _, test in self.folds for p in test)
        if len(all_pairs) != len(set(all_pairs)):
            raise DataError("fold test sets overlap")
        universe = set(all_pairs)
        for i, (train, test) in enumerate(self.folds):
            if set(train) & set(test):
                raise DataError(f"fold {i}: train and test share pairs")
            if set(train) | set(test) != universe:
                raise DataError(f"fold {i}: train+test do not cover all pairs")
        sizes = sorted(len(t) for _, t in self.folds)
        if sizes[-1] - sizes[0] > 1:
            raise DataError(f"fold sizes differ by more than one pair: {sizes}")

    @property
    def k(self) -> int:
        return len(self.folds)

    def test_sizes(self) -> tuple[int, ...]:
        return tuple(len(t) for _, t in self.folds)


def plan_folds(groups: Sequence[str], k: int = 5, seed: int = 0) -> FoldPlan:
    """Seeded shuffle + round-robin assignment of pairs to k test folds."""
    groups = sorted(set(groups))
    if k < 2:
        raise DataError(f"k must be >= 2 for a train/test separation, got {k}")
    if k > len(groups):
        raise DataError(f"k={k} exceeds the number of pairs ({len(groups)})")
    order = np.random.default_rng(seed).permutation(len(groups))
    shuffled = [groups[i] for i in order]
    folds = []
    for i in range(k):
        test = tuple(shuffled[i::k])
        train = tuple(g for g in shuffled if g not in set(test))
        folds.append((train, test))
    return FoldPlan(tuple(folds))


# ---------------------------------------------------------------------------
# Classification metrics


@dataclass(frozen=True, eq=False)
class EvalReport:
    """Per-class precision/recall/F1, macro-F1, accuracy, confusion matrix.

    Confusion rows are actual classes, columns predicted. 0/0 ratios are 0.
    """

    precision: tuple[float, ...]
    recall: tuple[float, ...]
    f1: tuple[float, ...]
    macro_f1: float
    accuracy: float
    confusion: np.ndarray

    def __eq__(self, other) -> bool:
        if not isinstance(other, EvalReport):
            return NotImplemented
        return (self.precision == other.precision and self.recall == other.recall
                and self.f1 == other.f1 and self.macro_f1 == other.macro_f1
                and self.accuracy == other.accuracy
                and np.array_equal(self.confusion, other.confusion))

    def to_dict(self) -> dict:
        return {
            "precision": list(self.precision),
            "recall": list(self.recall),
            "f1": list(self.f1),
            "macro_f1": self.macro_f1,
            "accuracy": self.accuracy,
            "confusion": [[int(v) for v in row] for row in self.confusion],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(tuple(d["precision"]), tuple(d["recall"]), tuple(d["f1"]),
                   d["macro_f1"], d["accuracy"], np.asarray(d["confusion"], dtype=np.int64))

    def to_text(self) -> str:
        lines = ["class        P       R       F"]
        for i, name in enumerate(CLASS_NAMES):
            lines.append(f"{name:<10} {self.precision[i]:.4f}  {self.recall[i]:.4f}  {self.f1[i]:.4f}")
        lines.append(f"accuracy   {self.accuracy:.4f}")
        lines.append(f"macro_f1   {self.macro_f1:.4f}")
        lines.append("confusion (rows = actual, cols = predicted):")
        for row in self.confusion:
            lines.append("  " + " ".join(f"{int(v):>7d}" for v in row))
        return "\n".join(lines) + "\n"

    def csv_row(self, name: str) -> list[str]:
        row = [name]
        for i in range(N_CLASSES):
            row += [f"{self.precision[i]:.4f}", f"{self.recall[i]:.4f}", f"{self.f1[i]:.4f}"]
        row += [f"{self.accuracy:.4f}", f"{self.macro_f1:.4f}"]
        return row


REPORT_CSV_HEADER = ["name"] + [
    f"{cls.lower()}_{m}" for cls in CLASS_NAMES for m in ("p", "r", "f")
] + ["accuracy", "macro_f1"]


def macro_f1(per_class_f1: Sequence[float]) -> float:
    """Unweighted mean of per-class F1 values."""
    return float(np.mean(per_class_f1))


def confusion_matrix(actual: Sequence[int], predicted: Sequence[int]) -> np.ndarray:
    a = np.asarray(actual, dtype=np.int64)
    p = np.asarray(predicted, dtype=np.int64)
    if a.shape != p.shape:
        raise DataError(f"label list lengths differ: {a.shape} vs {p.shape}")
    if a.size and (a.min() < 0 or a.max() >= N_CLASSES or p.min() < 0 or p.max() >= N_CLASSES):
        raise DataError(f"labels must lie in [0, {N_CLASSES})")
    cm = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
    np.add.at(cm, (a, p), 1)
    return cm


def metrics(actual: Sequence[int], predicted: Sequence[int]) -> EvalReport:
    cm = confusion_matrix(actual, predicted)
    return metrics_from_confusion(cm)


def metrics_from_confusion(cm: np.ndarray) -> EvalReport:
    cm = np.asarray(cm, dtype=np.int64)
    tp = np.diag(cm).astype(np.float64)
    fp = cm.sum(axis=0) - tp
    fn = cm.sum(axis=1) - tp
    with np.errstate(invalid="ignore", divide="ignore"):
        prec = np.where(tp + fp > 0, tp / (tp + fp), 0.0)
        rec = np.where(tp + fn > 0, tp / (tp + fn), 0.0)
        f1 = np.where(prec + rec > 0, 2 * prec * rec / (prec + rec), 0.0)
    total = cm.sum()
    acc = float(tp.sum() / total) if total else 0.0
    return EvalReport(tuple(prec), tuple(rec), tuple(f1), macro_f1(f1), acc, cm)


@dataclass(frozen=True)
class ErrorAnalysis:
    """Off-diagonal structure of a confusion matrix."""

    misclassified: int
    dominant_cell: tuple[int, int] | None
    dominant_count: int
    dominant_share: float
    accuracy: float
    total: int


def error_analysis(cm: np.ndarray) -> ErrorAnalysis:
    """Misclassified count, dominant error cell (row-major first on ties), share."""
    cm = np.asarray(cm, dtype=np.int64)
    if cm.shape != (N_CLASSES, N_CLASSES) or np.any(cm < 0):
        raise DataError(f"expected a nonnegative {N_CLASSES}x{N_CLASSES} matrix, got {cm.shape}")
    off = cm.copy()
    np.fill_diagonal(off, 0)
    mis = int(off.sum())
    total = int(cm.sum())
    acc = float(np.trace(cm) / total) if total else 0.0
    if mis == 0:
        return ErrorAnalysis(0, None, 0, 0.0, acc, total)
    flat = int(np.argmax(off))  # row-major first maximum
    cell = (flat // N_CLASSES, flat % N_CLASSES)
    count = int(off[cell])
    return ErrorAnalysis(mis, cell, count, count / mis, acc, total)


def cohens_kappa(labels_a: Sequence, labels_b: Sequence) -> float:
    """Chance-corrected agreement; perfect observed agreement gives 1.0."""
    a = list(labels_a)
    b = list(labels_b)
    if len(a) != len(b):
        raise DataError(f"label list lengths differ: {len(a)} vs {len(b)}")
    if not a:
        raise DataError("kappa needs at least one item")
    n = len(a)
    p_o = sum(x == y for x, y in zip(a, b)) / n
    if p_o == 1.0:
        return 1.0
    cats = sorted(set(a) | set(b), key=repr)
    pa = {c: 0 for c in cats}
    pb = {c: 0 for c in cats}
    for x in a:
        pa[x] += 1
    for y in b:
        pb[y] += 1
    p_e = sum((pa[c] / n) * (pb[c] / n) for c in cats)
    return (p_o - p_e) / (1.0 - p_e)


# ---------------------------------------------------------------------------
# Word error rate


@dataclass(frozen=True)
class AlignmentCounts:
    """Substitutions, deletions, insertions against an N-word reference."""

    s: int
    d: int
    i: int
    n: int

    def __post_init__(self):
        if min(self.s, self.d, self.i, self.n) < 0:
            raise DataError("alignment counts must be nonnegative")

    @property
    def edits(self) -> int:
        return self.s + self.d + self.i


def wer(reference: Sequence[str], hypothesis: Sequence[str]) -> tuple[AlignmentCounts, float]:
    """Minimum-edit-distance word alignment (unit costs) and (S+D+I)/N.

    On cost ties the backtrace prefers substitution/match, then deletion,
    then insertion; the tie only moves edits between categories, never the
    total. The rate may exceed 1.
    """
    ref = list(reference)
    hyp = list(hypothesis)
    n, m = len(ref), len(hyp)
    if n == 0:
        raise DataError("WER reference must be nonempty")
    dp = np.zeros((n + 1, m + 1), dtype=np.int64)
    dp[:, 0] = np.arange(n + 1)
    dp[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            sub = dp[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1])
            dp[i, j] = min(sub, dp[i - 1, j] + 1, dp[i, j - 1] + 1)
    s = d = ins = 0
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and dp[i, j] == dp[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1]):
            s += ref[i - 1] != hyp[j - 1]
            i, j = i - 1, j - 1
        elif i > 0 and dp[i, j] == dp[i - 1, j] + 1:
            d += 1
            i -= 1
        else:
            ins += 1
            j -= 1
    counts = AlignmentCounts(int(s), int(d), int(ins), n)
    return counts, counts.edits / n


def wer_of_texts(reference: str, hypothesis: str) -> tuple[AlignmentCounts, float]:
    """WER with both sides normalized by the shared text preprocessing."""
    return wer(preprocess(reference), preprocess(hypothesis))


# ---------------------------------------------------------------------------
# Cross-validation


@dataclass
class CrossValResult:
    pooled: EvalReport
    per_fold: list[EvalReport]
    fold_accuracies: list[float]
    accuracy_mean: float
    accuracy_sd: float
    plan: FoldPlan

    def to_dict(self) -> dict:
        return {
            "pooled": self.pooled.to_dict(),
            "per_fold": [r.to_dict() for r in self.per_fold],
            "fold_accuracies": self.fold_accuracies,
            "accuracy_mean": self.accuracy_mean,
            "accuracy_sd": self.accuracy_sd,
            "fold_test_pairs": [list(test) for _, test in self.plan.folds],
        }


def _run_fold(args) -> tuple[list[int], list[int]]:
    corpus, spec, cfg, train_pairs, test_pairs, fold_seed = args
    train_c = corpus.subset(train_pairs)
    test_c = corpus.subset(test_pairs)
    pipe = fit_pipeline(train_c, spec, cfg, seed=fold_seed)
    y_true = [int(r.label) for r in test_c]
    y_pred = [int(v) for v in pipe.predict_labels(test_c)]
    return y_true, y_pred


def cross_validate(corpus: Corpus, spec: FusionSpec, cfg: TrainConfig,
                   plan: FoldPlan | None = None, jobs: int = 1) -> CrossValResult:
    """Per fold: fit the pipeline on train pairs, evaluate on test pairs;
    pool test predictions across folds (micro) and also report per-fold
    accuracy mean and population SD."""
    if plan is None:
        plan = plan_folds(corpus.pair_ids(), 5, cfg.seed)
    missing = set(corpus.pair_ids()) - {p for _, test in plan.folds for p in test}
    if missing:
        raise DataError(f"fold plan does not cover pairs: {sorted(missing)[:3]}")

    tasks = [
        (corpus, spec, cfg, train_pairs, test_pairs, child_seed(cfg.seed, f"fold{i}"))
        for i, (train_pairs, test_pairs) in enumerate(plan.folds)
    ]
    if jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_run_fold, tasks))
    else:
        results = [_run_fold(t) for t in tasks]

    per_fold = [metrics(y_true, y_pred) for y_true, y_pred in results]
    pooled_true = [y for y_true, _ in results for y in y_true]
    pooled_pred = [y for _, y_pred in results for y in y_pred]
    pooled = metrics(pooled_true, pooled_pred)
    accs = [r.accuracy for r in per_fold]
    return CrossValResult(pooled, per_fold, accs, float(np.mean(accs)),
                          float(np.std(accs)), plan)


# ---------------------------------------------------------------------------
# Report rendering


def reports_to_csv(named_reports: Sequence[tuple[str, EvalReport]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_CSV_HEADER)
    for name, rep in named_reports:
        w.writerow(rep.csv_row(name))
    return buf.getvalue()


def confusion_to_csv(cm: np.ndarray) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["actual\\predicted"] + list(CLASS_NAMES))
    for i, name in enumerate(CLASS_NAMES):
        w.writerow([name] + [int(v) for v in cm[i]])
    return buf.getvalue()
