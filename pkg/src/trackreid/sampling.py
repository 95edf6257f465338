"""Tracklet filtering, pseudo-positive splitting and contrastive batch assembly."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import TrackletRecord, by_procedure
from .errors import ConfigurationError, InsufficientDataError, SplitInfeasibleError

SINGLE_FRAME = "single-frame"
MULTI_VIEW = "multi-view"


def filter_tracklets(tracklets: Sequence[TrackletRecord], fps: float,
                     min_duration_s: float = 1.0, min_high_conf: int = 15,
                     conf_threshold: float = 0.5) -> list[TrackletRecord]:
    """Drop short or low-confidence tracklets, then keep the longest per procedure.

    Duration is ``frame count / fps``. Ties on length go to the lowest
    tracklet id. Output is ordered by procedure id.
    """
    if not fps > 0:
        raise ConfigurationError(f"fps must be positive, got {fps}")
    kept = [
        t for t in tracklets
        if len(t) / fps >= min_duration_s
        and int(np.sum(t.confidence >= conf_threshold)) >= min_high_conf
    ]
    best: dict[str, TrackletRecord] = {}
    for t in kept:
        cur = best.get(t.procedure_id)
        if cur is None or len(t) > len(cur) or (len(t) == len(cur) and t.tracklet_id < cur.tracklet_id):
            best[t.procedure_id] = t
    return [best[p] for p in sorted(best)]


def pseudo_positive_split(tracklet, fractions: tuple[float, float] = (1 / 3, 1 / 3)
                          ) -> tuple[range, range]:
    """First and last segments of a tracklet (or a frame count); the middle is discarded."""
    n_frames = int(tracklet) if isinstance(tracklet, (int, np.integer)) else len(tracklet)
    a, b = fractions
    if not (0 < a and 0 < b and a + b <= 1):
        raise ConfigurationError(f"split fractions {fractions} must be positive and sum to <= 1")
    # small epsilon so exact thirds of 9 floor to 3, not 2.999...
    len_a = int(np.floor(a * n_frames + 1e-9))
    len_b = int(np.floor(b * n_frames + 1e-9))
    if len_a < 1 or len_b < 1:
        raise SplitInfeasibleError(f"a tracklet of {n_frames} frames is too short to split")
    return range(0, len_a), range(n_frames - len_b, n_frames)


def _pick(rng: np.random.Generator, segment: range, k: int) -> np.ndarray:
    replace = len(segment) < k
    return np.asarray(segment)[rng.choice(len(segment), size=k, replace=replace)]


@dataclass
class ContrastiveBatch:
    """Views ordered so that rows ``k`` and ``k + N`` are positives.

    ``views`` is ``(2N, F)`` in single-frame mode and ``(2N, V, F)`` in
    multi-view mode. ``provenance`` holds ``(procedure_id, tracklet_id,
    frame positions)`` per row.
    """

    views: np.ndarray
    N: int
    provenance: list[tuple[str, str, tuple[int, ...]]]
    mode: str


def eligible(t: TrackletRecord, mode: str, fractions=(1 / 3, 1 / 3)) -> bool:
    if mode == SINGLE_FRAME:
        return len(t) >= 2
    try:
        pseudo_positive_split(len(t), fractions)
    except SplitInfeasibleError:
        return False
    return True


def build_batch(dataset: Sequence[TrackletRecord], N: int, mode: str, rng: np.random.Generator,
                views_per_sample: int = 8, fractions=(1 / 3, 1 / 3)) -> ContrastiveBatch:
    """Sample one tracklet from each of ``N`` distinct procedures and two views of it."""
    if mode not in (SINGLE_FRAME, MULTI_VIEW):
        raise ConfigurationError(f"unknown batch mode {mode!r}")
    pool = {
        p: [t for t in ts if eligible(t, mode, fractions)]
        for p, ts in by_procedure(dataset).items()
    }
    procs = sorted(p for p, ts in pool.items() if ts)
    if len(procs) < N:
        raise InsufficientDataError(
            f"need {N} procedures with usable tracklets, only {len(procs)} available")
    chosen = rng.choice(len(procs), size=N, replace=False)
    first, second, prov_a, prov_b = [], [], [], []
    for ci in chosen:
        candidates = pool[procs[ci]]
        t = candidates[rng.integers(len(candidates))]
        if mode == SINGLE_FRAME:
            i, j = rng.choice(len(t), size=2, replace=False)
            first.append(t.features[i])
            second.append(t.features[j])
            prov_a.append((t.procedure_id, t.tracklet_id, (int(i),)))
            prov_b.append((t.procedure_id, t.tracklet_id, (int(j),)))
        else:
            seg_a, seg_b = pseudo_positive_split(len(t), fractions)
            ia, ib = _pick(rng, seg_a, views_per_sample), _pick(rng, seg_b, views_per_sample)
            first.append(t.features[ia])
            second.append(t.features[ib])
            prov_a.append((t.procedure_id, t.tracklet_id, tuple(int(v) for v in ia)))
            prov_b.append((t.procedure_id, t.tracklet_id, tuple(int(v) for v in ib)))
    views = np.stack(first + second)
    return ContrastiveBatch(views=views, N=N, provenance=prov_a + prov_b, mode=mode)
