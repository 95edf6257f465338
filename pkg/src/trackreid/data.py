"""Tracklet records and the JSON Lines dataset manifest."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import DimensionError, FormatError


@dataclass
class TrackletRecord:
    tracklet_id: str
    procedure_id: str
    frame_index: np.ndarray  # (n,) int, strictly increasing
    timestamp: np.ndarray  # (n,) seconds
    confidence: np.ndarray  # (n,) in [0, 1]
    features: np.ndarray  # (n, F)
    entity_id: str | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.frame_index = np.asarray(self.frame_index, dtype=np.int64)
        self.timestamp = np.asarray(self.timestamp, dtype=np.float64)
        self.confidence = np.asarray(self.confidence, dtype=np.float64)
        self.features = np.asarray(self.features, dtype=np.float64)
        n = len(self.frame_index)
        if self.features.ndim != 2 or self.features.shape[0] != n:
            raise DimensionError(f"tracklet {self.tracklet_id}: features shape {self.features.shape} "
                                 f"does not match {n} frames")
        if len(self.timestamp) != n or len(self.confidence) != n:
            raise DimensionError(f"tracklet {self.tracklet_id}: per-frame arrays disagree in length")
        if n > 1 and np.any(np.diff(self.frame_index) <= 0):
            raise FormatError(f"tracklet {self.tracklet_id}: frame_index must be strictly increasing")

    def __len__(self) -> int:
        return len(self.frame_index)

    @property
    def duration(self) -> float:
        if len(self) == 0:
            return 0.0
        return float(self.timestamp[-1] - self.timestamp[0])

    def to_json(self, labels: bool = True) -> dict:
        d = {
            "tracklet_id": self.tracklet_id,
            "procedure_id": self.procedure_id,
            "entity_id": self.entity_id if labels else None,
            "frames": [
                {
                    "frame_index": int(fi),
                    "timestamp": float(ts),
                    "confidence": float(c),
                    "features": [float(v) for v in feat],
                }
                for fi, ts, c, feat in zip(self.frame_index, self.timestamp,
                                           self.confidence, self.features)
            ],
        }
        return d

    @classmethod
    def from_json(cls, d: dict) -> "TrackletRecord":
        try:
            frames = d["frames"]
            feats = [f["features"] for f in frames]
            width = len(feats[0]) if feats else 0
            return cls(
                tracklet_id=str(d["tracklet_id"]),
                procedure_id=str(d["procedure_id"]),
                entity_id=None if d.get("entity_id") is None else str(d["entity_id"]),
                frame_index=[f["frame_index"] for f in frames],
                timestamp=[f["timestamp"] for f in frames],
                confidence=[f["confidence"] for f in frames],
                features=np.asarray(feats, dtype=np.float64).reshape(len(frames), width),
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, (DimensionError, FormatError)):
                raise
            raise FormatError(f"malformed tracklet record: {exc}") from exc


def _dumps(obj) -> str:
    # repr of a Python float is the shortest string that round-trips
    return json.dumps(obj, separators=(",", ":"))


def write_manifest(path, tracklets: Iterable[TrackletRecord], labels: bool = True) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for t in tracklets:
            fh.write(_dumps(t.to_json(labels)))
            fh.write("\n")


def read_manifest(path) -> list[TrackletRecord]:
    out = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            d = json.loads(line)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}:{lineno}: {exc}") from exc
        out.append(TrackletRecord.from_json(d))
    return out


def by_procedure(tracklets: Iterable[TrackletRecord]) -> dict[str, list[TrackletRecord]]:
    groups: dict[str, list[TrackletRecord]] = {}
    for t in tracklets:
        groups.setdefault(t.procedure_id, []).append(t)
    return groups


def ground_truth(tracklets: Iterable[TrackletRecord]) -> dict[str, str]:
    return {t.tracklet_id: t.entity_id for t in tracklets if t.entity_id is not None}
