"""Predictive and explanation-quality metrics plus explanation timing."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .explain import NodeScores
from .linalg import ContractViolation


class UndefinedMetricError(ContractViolation):
    """Metric is undefined for the given inputs (e.g. single-class mask)."""


def jaccard_at_k(scores: NodeScores, gt: np.ndarray, k: int | None = None) -> float:
    """Intersection-over-union of the top-k nodes against the rationale.

    k defaults to the rationale size, so the score is 1 exactly when the
    selected set coincides with the ground truth.
    """
    gt = np.asarray(gt, dtype=bool)
    gt_set = set(int(i) for i in np.flatnonzero(gt))
    if not gt_set:
        raise ContractViolation("ground-truth mask has no true entry")
    if k is None:
        k = len(gt_set)
    if not 1 <= k <= scores.s.shape[0]:
        raise ContractViolation(f"k={k} out of range [1, {scores.s.shape[0]}]")
    top = set(int(i) for i in scores.ranking[:k])
    return len(top & gt_set) / len(top | gt_set)


def node_auroc(scores: NodeScores, gt: np.ndarray) -> float:
    """Pairwise probability that rationale nodes outrank the rest; ties count 0.5."""
    gt = np.asarray(gt, dtype=bool)
    if gt.all() or not gt.any():
        raise UndefinedMetricError("node AUROC needs both rationale and background nodes")
    pos = scores.s[gt]
    neg = scores.s[~gt]
    diff = pos[:, None] - neg[None, :]
    return float((np.sign(diff) + 1.0).mean() / 2.0)


def classification_metrics(preds, labels, num_classes: int) -> tuple[float, float]:
    """(accuracy, macro F1).

    Classes never seen in the labels are skipped unless they were predicted,
    in which case they enter the mean with F1 = 0.
    """
    preds = np.asarray(preds, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if preds.shape != labels.shape or preds.size == 0:
        raise ContractViolation("preds and labels must be equal-length and non-empty")
    accuracy = float((preds == labels).mean())
    f1s = []
    for cls in range(num_classes):
        in_labels = bool((labels == cls).any())
        in_preds = bool((preds == cls).any())
        if not in_labels and not in_preds:
            continue
        tp = float(((preds == cls) & (labels == cls)).sum())
        fp = float(((preds == cls) & (labels != cls)).sum())
        fn = float(((preds != cls) & (labels == cls)).sum())
        denom = 2 * tp + fp + fn
        f1s.append(2 * tp / denom if denom > 0 else 0.0)
    return accuracy, float(np.mean(f1s)) if f1s else 0.0


@dataclass
class TimingResult:
    mean_ms: float
    std_ms: float
    per_repeat_ms: list[float]


def time_explainer(explainer, graphs, repeats: int = 3) -> TimingResult:
    """Wall-clock milliseconds per explanation, averaged over graphs x repeats.

    One warm-up pass over the first graph is excluded from the measurement.
    """
    if not graphs:
        raise ContractViolation("cannot time an explainer on an empty graph list")
    if repeats < 1:
        raise ContractViolation("repeats must be >= 1")
    explainer(graphs[0])
    per_repeat = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        for g in graphs:
            explainer(g)
        per_repeat.append((time.perf_counter() - t0) / len(graphs) * 1000.0)
    return TimingResult(
        mean_ms=float(np.mean(per_repeat)),
        std_ms=float(np.std(per_repeat)),
        per_repeat_ms=per_repeat,
    )


@dataclass
class EvalReport:
    """Aggregated metrics of one experiment (omits wall-clock by design)."""

    accuracy: float
    macro_f1: float
    jaccard_at_k: float | None = None
    node_auroc: float | None = None
    per_seed: list[dict] = field(default_factory=list)

    def to_json(self) -> dict:
        doc: dict = {"accuracy": self.accuracy, "macro_f1": self.macro_f1}
        if self.jaccard_at_k is not None:
            doc["jaccard_at_k"] = self.jaccard_at_k
        if self.node_auroc is not None:
            doc["node_auroc"] = self.node_auroc
        doc["per_seed"] = self.per_seed
        return doc
