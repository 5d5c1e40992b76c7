"""Cluster evaluation: optimal matching, accuracies, bias diagnostics.

Predicted clusters are matched one-to-one against true classes by
solving the assignment problem on negated contingency counts; the single
global matching then scores overall/old/new accuracy and the four
inter-class error cases. When more clusters than classes exist, the
surplus clusters match zero-padded dummy columns and count as "novel"
predictions: every member is an error.
"""

import time
from dataclasses import dataclass
from statistics import median

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import (
    ContractViolation,
    DegenerateInputError,
    DimensionError,
    ParameterError,
)
from .fastcluster import estimate_k


def hungarian(cost):
    """Minimum-cost row-to-column assignment of a rectangular matrix.

    The matrix is zero-padded to square, so every row of the padded
    problem gets a distinct column; entries beyond the original shape
    mean "assigned to a dummy". Returns an int64 array ``col_of_row`` of
    the padded size.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.size == 0:
        raise DegenerateInputError("cost matrix must be 2-D and non-empty")
    if not np.all(np.isfinite(cost)):
        raise ParameterError("cost matrix contains non-finite entries")
    size = max(cost.shape)
    padded = np.zeros((size, size))
    padded[: cost.shape[0], : cost.shape[1]] = cost
    rows, cols = linear_sum_assignment(padded)
    out = np.empty(size, dtype=np.int64)
    out[rows] = cols
    return out


def assignment_cost(cost, col_of_row):
    """Total original-matrix cost of a padded assignment."""
    cost = np.asarray(cost, dtype=np.float64)
    total = 0.0
    for i in range(min(cost.shape[0], len(col_of_row))):
        j = int(col_of_row[i])
        if j < cost.shape[1]:
            total += cost[i, j]
    return total


@dataclass(frozen=True)
class EvalReport:
    """Accuracy under the optimal cluster-to-class matching."""

    acc_all: float
    acc_old: float
    acc_new: float
    k_e: int
    matching: dict
    contingency: np.ndarray
    pred_clusters: tuple
    true_classes: tuple
    num_instances: int

    def as_dict(self):
        def clean(x):
            return None if isinstance(x, float) and np.isnan(x) else x

        return {
            "acc_all": clean(self.acc_all),
            "acc_old": clean(self.acc_old),
            "acc_new": clean(self.acc_new),
            "k_e": self.k_e,
            "num_instances": self.num_instances,
            "matching": {str(k): v for k, v in self.matching.items()},
        }


def clustering_accuracy(y_true, y_pred, old_classes=()):
    """Match clusters to classes, then score All/Old/New accuracy.

    ``old_classes`` marks which true classes were labelled during
    training; both accuracies use the one global matching. Clusters
    matched to dummy columns appear in ``matching`` with value None.
    """
    y_true = np.asarray(y_true).ravel()
    y_pred = np.asarray(y_pred).ravel()
    if y_true.shape != y_pred.shape:
        raise DimensionError(
            f"length mismatch: {y_true.shape[0]} true vs {y_pred.shape[0]} predicted"
        )
    if y_true.size == 0:
        raise DegenerateInputError("cannot evaluate zero instances")
    true_vals, t_inv = np.unique(y_true, return_inverse=True)
    pred_vals, p_inv = np.unique(y_pred, return_inverse=True)
    contingency = np.zeros((len(pred_vals), len(true_vals)), dtype=np.int64)
    np.add.at(contingency, (p_inv, t_inv), 1)

    col_of_row = hungarian(-contingency.astype(np.float64))
    matching = {}
    for i, cluster in enumerate(pred_vals):
        j = int(col_of_row[i])
        matching[int(cluster)] = int(true_vals[j]) if j < len(true_vals) else None

    matched = np.array(
        [matching[int(c)] is not None and matching[int(c)] == t
         for c, t in zip(y_pred, y_true)]
    )
    old_set = set(int(c) for c in old_classes)
    old_mask = np.array([int(t) in old_set for t in y_true])

    def rate(mask):
        return float(matched[mask].mean()) if mask.any() else float("nan")

    return EvalReport(
        acc_all=float(matched.mean()),
        acc_old=rate(old_mask),
        acc_new=rate(~old_mask),
        k_e=len(pred_vals),
        matching=matching,
        contingency=contingency,
        pred_clusters=tuple(int(v) for v in pred_vals),
        true_classes=tuple(int(v) for v in true_vals),
        num_instances=int(y_true.size),
    )


@dataclass(frozen=True)
class BiasReport:
    """How misclassifications split across the old/new boundary.

    false_old: new-class instance predicted into an old class;
    false_new: old-class instance predicted novel;
    true_old / true_new: wrong but on the correct side of the boundary.
    """

    false_old: int
    false_new: int
    true_old: int
    true_new: int
    per_class_correct: dict
    per_class_actual: dict
    intra_class_bias: float

    def as_dict(self):
        return {
            "false_old": self.false_old,
            "false_new": self.false_new,
            "true_old": self.true_old,
            "true_new": self.true_new,
            "intra_class_bias": self.intra_class_bias,
            "per_class_correct": {
                str(k): v for k, v in self.per_class_correct.items()
            },
            "per_class_actual": {
                str(k): v for k, v in self.per_class_actual.items()
            },
        }


def bias_report(y_true, y_pred, matching, old_classes):
    """Partition the errors of a matched clustering into FO/FN/TO/TN.

    A prediction is "old" when its cluster matched a labelled class,
    "new" when it matched an unlabelled class or a dummy column (None).
    Also tallies per-class correct counts and the mean absolute gap
    between correct and actual counts per class.
    """
    y_true = np.asarray(y_true).ravel()
    y_pred = np.asarray(y_pred).ravel()
    if y_true.shape != y_pred.shape:
        raise DimensionError("length mismatch between truth and predictions")
    old_set = set(int(c) for c in old_classes)
    fo = fn = to = tn = 0
    true_vals = np.unique(y_true)
    correct = {int(c): 0 for c in true_vals}
    actual = {int(c): int((y_true == c).sum()) for c in true_vals}
    for t, c in zip(y_true, y_pred):
        c = int(c)
        if c not in matching:
            raise ContractViolation(
                f"matching lacks an entry for predicted cluster {c}"
            )
        pred_class = matching[c]
        t = int(t)
        if pred_class == t and pred_class is not None:
            correct[t] += 1
            continue
        truth_old = t in old_set
        pred_old = pred_class is not None and pred_class in old_set
        if truth_old and pred_old:
            to += 1
        elif truth_old and not pred_old:
            fn += 1
        elif not truth_old and pred_old:
            fo += 1
        else:
            tn += 1
    gaps = [abs(correct[int(c)] - actual[int(c)]) for c in true_vals]
    return BiasReport(
        false_old=fo,
        false_new=fn,
        true_old=to,
        true_new=tn,
        per_class_correct=correct,
        per_class_actual=actual,
        intra_class_bias=float(np.mean(gaps)),
    )


@dataclass(frozen=True)
class BenchResult:
    """Median clustering wall-times for full vs unlabelled-only input."""

    full_ms: float
    unlabelled_ms: float
    repeats: int

    @property
    def speedup(self):
        return self.full_ms / self.unlabelled_ms if self.unlabelled_ms else float("inf")

    def as_dict(self):
        return {
            "full_ms": self.full_ms,
            "unlabelled_ms": self.unlabelled_ms,
            "speedup": self.speedup,
            "repeats": self.repeats,
        }


def bench_clustering(features_full, features_unlabelled, tau_f, k, seed=0,
                     repeats=5, num_restarts=8):
    """Time estimate_k on the full set vs the unlabelled subset.

    Monotonic-clock medians over ``repeats`` runs each; the unlabelled
    rows must be a subset of the full rows so the comparison reflects
    input size, not content.
    """
    full = np.asarray(features_full, dtype=np.float64)
    unlab = np.asarray(features_unlabelled, dtype=np.float64)
    if full.size == 0 or unlab.size == 0:
        raise DegenerateInputError("benchmark inputs must be non-empty")
    if repeats < 1:
        raise ParameterError(f"repeats must be >= 1, got {repeats}")
    full_rows = {row.tobytes() for row in full}
    for i, row in enumerate(unlab):
        if row.tobytes() not in full_rows:
            raise ContractViolation(
                f"unlabelled row {i} does not appear in the full feature set"
            )

    def run(features):
        times = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            estimate_k(features, tau_f, k, seed, num_restarts=num_restarts)
            times.append((time.perf_counter() - t0) * 1000.0)
        return float(median(times))

    return BenchResult(
        full_ms=run(full),
        unlabelled_ms=run(unlab),
        repeats=int(repeats),
    )
