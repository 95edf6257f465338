"""Soft-voting classification over grouped tracklets.

Compares how the grouping of tracklets (tracker fragments, ReID groups,
ground-truth entities) changes tracklet-level classification quality when
per-frame scores are averaged within each group.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .data import TrackletRecord
from .errors import EmptyInputError, MissingGroundTruthError, PartitionMismatchError
from .metrics import f1_scores, fragmentation_report, roc_auc, sensitivity_at_specificity


def soft_vote(frame_scores) -> float:
    s = np.asarray(frame_scores, dtype=float)
    if s.size == 0:
        raise EmptyInputError("soft vote over no frames")
    return float(s.mean())


@dataclass
class GroupedSequence:
    group_id: str
    members: list[str]
    scores: np.ndarray
    label: int
    impure: bool

    @property
    def score(self) -> float:
        return soft_vote(self.scores)


def _check_partition(name: str, groups: Mapping[str, Sequence[str]], expected: set[str]) -> None:
    seen: list[str] = [t for m in groups.values() for t in m]
    dup = sorted(t for t, c in Counter(seen).items() if c > 1)
    missing = sorted(expected - set(seen))
    extra = sorted(set(seen) - expected)
    if dup or missing or extra:
        raise PartitionMismatchError(
            f"grouping {name!r} is not a partition of the tracklet set: "
            f"missing={missing[:10]} extra={extra[:10]} duplicated={dup[:10]}")


def build_sequences(tracklets: Sequence[TrackletRecord], frame_scores: Mapping[str, np.ndarray],
                    groups: Mapping[str, Sequence[str]], class_map: Mapping[str, int]
                    ) -> list[GroupedSequence]:
    """One sequence per group; impure groups take the label of the entity with most frames."""
    by_id = {t.tracklet_id: t for t in tracklets}
    out = []
    for gid in sorted(groups):
        members = list(groups[gid])
        frames_per_entity: Counter = Counter()
        for tid in members:
            t = by_id[tid]
            if t.entity_id is None or t.entity_id not in class_map:
                raise MissingGroundTruthError(f"tracklet {tid} has no labelled entity")
            frames_per_entity[t.entity_id] += len(t)
        top = max(sorted(frames_per_entity), key=lambda e: frames_per_entity[e])
        scores = np.concatenate([np.asarray(frame_scores[tid], dtype=float) for tid in members])
        out.append(GroupedSequence(gid, members, scores, int(class_map[top]), len(frames_per_entity) > 1))
    return out


def evaluate_groupings(tracklets: Sequence[TrackletRecord], frame_scores: Mapping[str, np.ndarray],
                       groupings: Mapping[str, object], class_map: Mapping[str, int],
                       decision_threshold: float = 0.5, min_specificity: float = 0.9) -> dict[str, dict]:
    """Per grouping: group counts and fragmentation per class, AUC, F1 and
    sensitivity at fixed specificity of the soft-voted group scores."""
    expected = {t.tracklet_id for t in tracklets}
    missing_scores = sorted(tid for tid in expected if tid not in frame_scores)
    if missing_scores:
        raise PartitionMismatchError(f"no frame scores for tracklets {missing_scores[:10]}")
    truth = {t.tracklet_id: t.entity_id for t in tracklets}
    reports = {}
    for name, part in groupings.items():
        groups = part.groups if hasattr(part, "groups") else part
        _check_partition(name, groups, expected)
        seqs = build_sequences(tracklets, frame_scores, groups, class_map)
        scores = np.array([s.score for s in seqs])
        labels = np.array([s.label for s in seqs])
        frag = fragmentation_report(groups, truth)
        per_class = {}
        for cls in (1, 0):
            ents = [e for e in frag.per_entity if class_map[e] == cls]
            counts = [frag.per_entity[e] for e in ents]
            per_class[str(cls)] = {
                "groups": int(np.sum(labels == cls)),
                "entities": len(ents),
                "fr": float(np.mean(counts)) if counts else float("nan"),
            }
        f1_macro, f1_micro = f1_scores(scores >= decision_threshold, labels)
        sens, thr = sensitivity_at_specificity(scores, labels, min_specificity)
        reports[name] = {
            "tracklets": len(seqs),
            "fr": frag.fr,
            "fr_std": frag.fr_std,
            "fragmented_ratio": frag.fragmented_ratio,
            "impure_groups": sum(s.impure for s in seqs),
            "per_class": per_class,
            "auc": roc_auc(scores, labels),
            "f1_macro": f1_macro,
            "f1_micro": f1_micro,
            "sens_at_spec": sens,
            "threshold": thr,
        }
    return reports
