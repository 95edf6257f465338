"""Tracklet similarity scoring, operating-point calibration and grouping."""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .data import TrackletRecord, by_procedure
from .diffcore import Params
from .encoders import (
    EncoderConfig,
    JointEncoder,
    average_embeddings,
    canonical_order,
    encode_frame,
    select_views,
)
from .errors import CalibrationError, ConfigurationError, EmptyInputError

SCORERS = ("late_min", "late_max", "late_mean", "mv_average", "mv_joint")


def pairwise_similarity_matrix(A, B) -> np.ndarray:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if A.size == 0 or B.size == 0:
        raise EmptyInputError("similarity matrix needs non-empty inputs")
    return A @ B.T


def late_fusion_score(M, agg: str) -> float:
    M = np.asarray(M, dtype=float)
    if M.size == 0:
        raise EmptyInputError("empty similarity matrix")
    if agg == "min":
        return float(M.min())
    if agg == "max":
        return float(M.max())
    if agg == "mean":
        return float(M.mean())
    raise ConfigurationError(f"unknown aggregation {agg!r}")


def joint_score(a, b) -> float:
    return float(np.dot(np.asarray(a, dtype=float), np.asarray(b, dtype=float)))


class TrackletEmbedder:
    """Caches the per-tracklet representations every scorer needs.

    Every scorer sees the same views: up to ``max_views`` frames spread
    uniformly along the tracklet (all frames when ``all_frames`` is set).
    """

    def __init__(self, params: Params, cfg: EncoderConfig, all_frames: bool = False):
        self.params, self.cfg, self.all_frames = params, cfg, all_frames
        self._joint = JointEncoder(cfg)
        self._frames: dict[str, np.ndarray] = {}
        self._joint_emb: dict[str, np.ndarray] = {}

    def views(self, t: TrackletRecord) -> np.ndarray:
        return t.features[select_views(len(t), self.cfg.max_views)]

    def frame_embeddings(self, t: TrackletRecord) -> np.ndarray:
        if t.tracklet_id not in self._frames:
            x = t.features if self.all_frames else self.views(t)
            self._frames[t.tracklet_id] = encode_frame(x, self.params, self.cfg)[0]
        return self._frames[t.tracklet_id]

    def average(self, t: TrackletRecord) -> np.ndarray:
        return average_embeddings(self.frame_embeddings(t))

    def joint(self, t: TrackletRecord) -> np.ndarray:
        if t.tracklet_id not in self._joint_emb:
            views = canonical_order(self.views(t))
            dtype = self.params["joint.cls"].dtype
            self._joint_emb[t.tracklet_id] = self._joint(self.params, views.astype(dtype))
        return self._joint_emb[t.tracklet_id]

    def embedding(self, t: TrackletRecord, scorer: str) -> np.ndarray:
        if scorer == "mv_joint":
            return self.joint(t)
        if scorer == "mv_average":
            return self.average(t)
        raise ConfigurationError(f"scorer {scorer!r} has no single tracklet embedding")

    def score(self, a: TrackletRecord, b: TrackletRecord, scorer: str) -> float:
        if scorer.startswith("late_"):
            M = pairwise_similarity_matrix(self.frame_embeddings(a), self.frame_embeddings(b))
            return late_fusion_score(M, scorer[5:])
        if scorer in ("mv_average", "mv_joint"):
            return joint_score(self.embedding(a, scorer), self.embedding(b, scorer))
        raise ConfigurationError(f"unknown scorer {scorer!r}; expected one of {SCORERS}")


@dataclass
class PairScore:
    tracklet_a: str
    tracklet_b: str
    label: str  # same | diff | unknown
    score: float


def within_procedure_pairs(tracklets: Sequence[TrackletRecord]):
    """Unordered pairs of distinct tracklets sharing a procedure."""
    for _, members in sorted(by_procedure(tracklets).items()):
        members = sorted(members, key=lambda t: t.tracklet_id)
        yield from itertools.combinations(members, 2)


def _pair_label(a: TrackletRecord, b: TrackletRecord) -> str:
    if a.entity_id is None or b.entity_id is None:
        return "unknown"
    return "same" if a.entity_id == b.entity_id else "diff"


def score_pairs(tracklets: Sequence[TrackletRecord], embedder: TrackletEmbedder,
                scorer: str) -> list[PairScore]:
    return [
        PairScore(a.tracklet_id, b.tracklet_id, _pair_label(a, b), embedder.score(a, b, scorer))
        for a, b in within_procedure_pairs(tracklets)
    ]


def calibrate_threshold(scores: Iterable[tuple[float, object]], target_fpr: float = 0.05) -> float:
    """Smallest candidate threshold whose false-positive rate is <= ``target_fpr``.

    ``scores`` holds ``(score, label)`` with label ``"same"``/``"diff"`` (or
    truthy/falsy). Candidates are the distinct negative scores plus one ulp
    above the largest; the decision rule is "same iff score >= t". If every
    negative may pass, the smallest negative is returned.
    """
    neg = np.array([s for s, lab in scores if not _is_same(lab)], dtype=float)
    if neg.size == 0:
        raise CalibrationError("calibration needs at least one negative pair")
    n = neg.size
    cands = np.r_[np.unique(neg), np.nextafter(neg.max(), np.inf)]
    # passing counts for each candidate: negatives >= t
    passing = n - np.searchsorted(np.sort(neg), cands, side="left")
    ok = passing / n <= target_fpr
    return float(cands[np.argmax(ok)])


def _is_same(label) -> bool:
    if isinstance(label, str):
        if label == "unknown":
            raise CalibrationError("calibration pairs must be labelled same/diff")
        return label == "same"
    return bool(label)


def empirical_fpr(scores: Iterable[tuple[float, object]], threshold: float) -> float:
    neg = np.array([s for s, lab in scores if not _is_same(lab)], dtype=float)
    if neg.size == 0:
        raise CalibrationError("no negative pairs")
    return float(np.mean(neg >= threshold))


@dataclass
class GroupingPartition:
    groups: dict[str, list[str]]
    threshold: float
    scorer: str

    def to_json(self) -> dict:
        return {"groups": self.groups, "threshold": self.threshold, "scorer": self.scorer}

    @classmethod
    def from_json(cls, d: dict) -> "GroupingPartition":
        return cls(groups={str(k): [str(t) for t in v] for k, v in d["groups"].items()},
                   threshold=float("nan") if d.get("threshold") is None else float(d["threshold"]),
                   scorer=str(d["scorer"]))

    def group_of(self) -> dict[str, str]:
        return {t: g for g, members in self.groups.items() for t in members}


class _UnionFind:
    def __init__(self, items):
        self.parent = {x: x for x in items}

    def find(self, x):
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            # smaller id becomes the root so results do not depend on edge order
            if rb < ra:
                ra, rb = rb, ra
            self.parent[rb] = ra


def _label_groups(members_by_root: Mapping[str, list[str]], prefix: str = "g") -> dict[str, list[str]]:
    ordered = sorted((sorted(m) for m in members_by_root.values()), key=lambda m: m[0])
    return {f"{prefix}{i:05d}": m for i, m in enumerate(ordered)}


def group_tracklets(tracklet_ids: Sequence[str], score: Callable[[str, str], float] | Mapping,
                    threshold: float, scorer: str = "mv_joint",
                    method: str = "components", order: Sequence[str] | None = None
                    ) -> GroupingPartition:
    """Partition the tracklets of one procedure.

    ``score`` is a callable ``(a, b) -> float`` or a mapping keyed by
    ``(a, b)`` (either order). ``components`` links every pair scoring
    ``>= threshold`` and returns connected components. ``sequential`` walks
    the tracklets in ``order`` (temporal) and attaches each one to the
    existing group with the highest mean score, if that reaches the threshold.
    """
    ids = list(dict.fromkeys(tracklet_ids))
    lookup = _score_lookup(score)
    if method == "components":
        uf = _UnionFind(ids)
        for a, b in itertools.combinations(ids, 2):
            if lookup(a, b) >= threshold:
                uf.union(a, b)
        roots: dict[str, list[str]] = {}
        for t in ids:
            roots.setdefault(uf.find(t), []).append(t)
        return GroupingPartition(_label_groups(roots), threshold, scorer)
    if method == "sequential":
        groups: list[list[str]] = []
        for t in (order if order is not None else ids):
            best, best_score = None, -np.inf
            for g in groups:
                s = float(np.mean([lookup(t, m) for m in g]))
                if s > best_score:
                    best, best_score = g, s
            if best is not None and best_score >= threshold:
                best.append(t)
            else:
                groups.append([t])
        return GroupingPartition(_label_groups({g[0]: g for g in groups}), threshold, scorer)
    raise ConfigurationError(f"unknown grouping method {method!r}")


def _score_lookup(score):
    if callable(score):
        return score

    def lookup(a, b):
        if (a, b) in score:
            return score[(a, b)]
        if (b, a) in score:
            return score[(b, a)]
        return -np.inf

    return lookup


def group_dataset(tracklets: Sequence[TrackletRecord], pair_scores: Sequence[PairScore],
                  threshold: float, scorer: str, method: str = "components") -> GroupingPartition:
    """Group every procedure independently and merge into one partition."""
    table = {(p.tracklet_a, p.tracklet_b): p.score for p in pair_scores}
    groups: dict[str, list[str]] = {}
    for proc, members in sorted(by_procedure(tracklets).items()):
        members = sorted(members, key=lambda t: (t.frame_index[0], t.tracklet_id))
        ids = [t.tracklet_id for t in members]
        part = group_tracklets(ids, table, threshold, scorer, method, order=ids)
        for gid, m in part.groups.items():
            groups[f"{proc}-{gid}"] = m
    return GroupingPartition(groups, threshold, scorer)


def singleton_partition(tracklets: Sequence[TrackletRecord]) -> GroupingPartition:
    return GroupingPartition({t.tracklet_id: [t.tracklet_id] for t in tracklets}, np.inf, "none")


def oracle_partition(tracklets: Sequence[TrackletRecord]) -> GroupingPartition:
    groups: dict[str, list[str]] = {}
    for t in tracklets:
        groups.setdefault(t.entity_id, []).append(t.tracklet_id)
    return GroupingPartition({k: sorted(v) for k, v in sorted(groups.items())}, np.nan, "oracle")
