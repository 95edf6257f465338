"""ROC/PR areas, fragmentation statistics, F1 and sensitivity at fixed specificity."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np
from scipy.stats import rankdata

from .errors import EmptyInputError, MetricUndefinedError, MissingGroundTruthError


def _split(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels).astype(bool)
    if s.shape != y.shape or s.ndim != 1:
        raise ValueError(f"scores {s.shape} and labels {y.shape} must be equal-length 1-D")
    return s, y


def roc_auc(scores, labels) -> float:
    """P(random positive outscores random negative), ties counted as 1/2."""
    s, y = _split(scores, labels)
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    if n_pos == 0 or n_neg == 0:
        raise MetricUndefinedError("ROC AUC needs at least one positive and one negative")
    ranks = rankdata(s)  # average ranks resolve ties
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2
    return float(u / (n_pos * n_neg))


def roc_curve(scores, labels) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(fpr, tpr, thresholds) at every distinct score, decision ``score >= t``."""
    s, y = _split(scores, labels)
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    if n_pos == 0 or n_neg == 0:
        raise MetricUndefinedError("ROC curve needs both classes")
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    last = np.r_[np.nonzero(np.diff(s))[0], len(s) - 1]
    tp = np.cumsum(y)[last]
    fp = np.cumsum(~y)[last]
    tpr = np.r_[0.0, tp / n_pos]
    fpr = np.r_[0.0, fp / n_neg]
    return fpr, tpr, np.r_[np.inf, s[last]]


def roc_auc_trapezoid(scores, labels) -> float:
    fpr, tpr, _ = roc_curve(scores, labels)
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2))


def pr_auc(scores, labels) -> float:
    """Average precision: sum over distinct thresholds of (R_i - R_{i-1}) * P_i."""
    s, y = _split(scores, labels)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise MetricUndefinedError("PR AUC needs at least one positive")
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    last = np.r_[np.nonzero(np.diff(s))[0], len(s) - 1]
    tp = np.cumsum(y)[last]
    precision = tp / (last + 1)
    recall = tp / n_pos
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


@dataclass
class FragmentationReport:
    fr: float
    fr_std: float
    fragmented_ratio: float
    per_entity: dict[str, int]
    impurity: int = 0
    impure_groups: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "fr": self.fr,
            "fr_std": self.fr_std,
            "fragmented_ratio": self.fragmented_ratio,
            "impurity": self.impurity,
            "per_entity": dict(self.per_entity),
        }


def _groups_of(partition) -> Mapping[str, Iterable[str]]:
    return partition.groups if hasattr(partition, "groups") else partition


def fragmentation_report(partition, ground_truth: Mapping[str, str]) -> FragmentationReport:
    """Fragment count per entity = number of groups holding any of its tracklets.

    ``impurity`` counts groups that mix two or more entities; it is reported
    next to, not folded into, the fragmentation numbers.
    """
    groups = _groups_of(partition)
    if not groups:
        raise EmptyInputError("partition has no groups")
    entity_groups: dict[str, set[str]] = {}
    impure = []
    for gid, members in groups.items():
        ents = set()
        for t in members:
            if t not in ground_truth or ground_truth[t] is None:
                raise MissingGroundTruthError(f"tracklet {t!r} has no ground-truth entity")
            ents.add(ground_truth[t])
        if len(ents) > 1:
            impure.append(gid)
        for e in ents:
            entity_groups.setdefault(e, set()).add(gid)
    per_entity = {e: len(g) for e, g in sorted(entity_groups.items())}
    counts = np.array(list(per_entity.values()), dtype=float)
    return FragmentationReport(
        fr=float(counts.mean()),
        fr_std=float(counts.std()),
        fragmented_ratio=float(np.mean(counts > 1)),
        per_entity=per_entity,
        impurity=len(impure),
        impure_groups=sorted(impure),
    )


def sensitivity_at_specificity(scores, labels, min_specificity: float = 0.9) -> tuple[float, float]:
    """Best sensitivity over thresholds ``t`` (positive iff ``score >= t``) with
    specificity >= ``min_specificity``. Returns ``(sensitivity, threshold)``."""
    s, y = _split(scores, labels)
    if y.all() or not y.any():
        raise MetricUndefinedError("sensitivity at specificity needs both classes")
    pos, neg = s[y], s[~y]
    # the candidate thresholds: every observed score, plus one above them all
    cands = np.r_[np.unique(s), np.nextafter(s.max(), np.inf)]
    best = (-1.0, np.inf)
    for t in cands:
        spec = np.mean(neg < t)
        if spec >= min_specificity:
            sens = float(np.mean(pos >= t))
            # prefer higher sensitivity, then the higher threshold
            if sens > best[0] or (sens == best[0] and t > best[1]):
                best = (sens, float(t))
    return best


def f1_scores(predictions, labels) -> tuple[float, float]:
    """(macro, micro) F1 over the two classes of a binary problem."""
    p = np.asarray(predictions).astype(bool)
    y = np.asarray(labels).astype(bool)
    if p.size == 0:
        raise EmptyInputError("no predictions")
    tp = int(np.sum(p & y))
    fp = int(np.sum(p & ~y))
    fn = int(np.sum(~p & y))
    tn = int(np.sum(~p & ~y))

    def f1(tp_, fp_, fn_):
        denom = 2 * tp_ + fp_ + fn_
        return 0.0 if denom == 0 else 2 * tp_ / denom

    macro = (f1(tp, fp, fn) + f1(tn, fn, fp)) / 2
    # pooled over both classes: TP = tp + tn, FP = FN = fp + fn
    micro = f1(tp + tn, fp + fn, fn + fp)
    return float(macro), float(micro)
