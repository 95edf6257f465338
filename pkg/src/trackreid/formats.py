"""Binary weight/embedding files and the CSV/JSON exchange formats.

Binary layouts (all integers u32 little-endian, floats f32 little-endian)::

    weights     "TRW1" version { name_len name rows cols data[rows*cols] }* crc32
    embeddings  "EMB1" version count dim data[count*dim] { id_len id }*count crc32

The CRC32 trailer covers every byte before it, magic included.
"""
from __future__ import annotations

import csv
import json
import math
import struct
import zlib
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .errors import FormatError
from .reid import PairScore

WEIGHTS_MAGIC = b"TRW1"
EMBED_MAGIC = b"EMB1"
VERSION = 1
_U32 = struct.Struct("<I")


def _seal(body: bytes) -> bytes:
    return body + _U32.pack(zlib.crc32(body) & 0xFFFFFFFF)


def _open(blob: bytes, magic: bytes, what: str) -> memoryview:
    if len(blob) < 12 or blob[:4] != magic:
        raise FormatError(f"not a {what} file (bad magic)")
    body, trailer = blob[:-4], blob[-4:]
    if _U32.unpack(trailer)[0] != zlib.crc32(body) & 0xFFFFFFFF:
        raise FormatError(f"{what} file checksum mismatch")
    version = _U32.unpack_from(body, 4)[0]
    if version != VERSION:
        raise FormatError(f"unsupported {what} version {version}")
    return memoryview(body)[8:]


class _Reader:
    def __init__(self, buf: memoryview, what: str):
        self.buf, self.pos, self.what = buf, 0, what

    def take(self, n: int) -> memoryview:
        if self.pos + n > len(self.buf):
            raise FormatError(f"truncated {self.what} file")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return _U32.unpack(self.take(4))[0]

    def string(self) -> str:
        return bytes(self.take(self.u32())).decode("utf-8")

    def floats(self, count: int) -> np.ndarray:
        return np.frombuffer(bytes(self.take(4 * count)), dtype="<f4").copy()

    @property
    def done(self) -> bool:
        return self.pos == len(self.buf)


def _name(s: str) -> bytes:
    b = s.encode("utf-8")
    return _U32.pack(len(b)) + b


def dump_weights(params: Mapping[str, np.ndarray]) -> bytes:
    parts = [WEIGHTS_MAGIC, _U32.pack(VERSION)]
    for name in sorted(params):
        arr = np.asarray(params[name])
        if arr.ndim != 2:
            raise FormatError(f"tensor {name!r} is not 2-D: {arr.shape}")
        parts += [_name(name), _U32.pack(arr.shape[0]), _U32.pack(arr.shape[1]),
                  arr.astype("<f4").tobytes()]
    return _seal(b"".join(parts))


def load_weights(blob: bytes, dtype=np.float64) -> dict[str, np.ndarray]:
    r = _Reader(_open(blob, WEIGHTS_MAGIC, "weights"), "weights")
    params = {}
    while not r.done:
        name = r.string()
        rows, cols = r.u32(), r.u32()
        params[name] = r.floats(rows * cols).reshape(rows, cols).astype(dtype)
    return params


def write_weights(path, params) -> None:
    Path(path).write_bytes(dump_weights(params))


def read_weights(path, dtype=np.float64) -> dict[str, np.ndarray]:
    return load_weights(Path(path).read_bytes(), dtype)


def dump_embeddings(ids: list[str], emb: np.ndarray) -> bytes:
    emb = np.atleast_2d(np.asarray(emb))
    if emb.shape[0] != len(ids):
        raise FormatError(f"{len(ids)} ids for {emb.shape[0]} embeddings")
    parts = [EMBED_MAGIC, _U32.pack(VERSION), _U32.pack(emb.shape[0]), _U32.pack(emb.shape[1]),
             emb.astype("<f4").tobytes()]
    parts += [_name(i) for i in ids]
    return _seal(b"".join(parts))


def load_embeddings(blob: bytes) -> tuple[list[str], np.ndarray]:
    r = _Reader(_open(blob, EMBED_MAGIC, "embeddings"), "embeddings")
    count, dim = r.u32(), r.u32()
    emb = r.floats(count * dim).reshape(count, dim).astype(np.float64)
    ids = [r.string() for _ in range(count)]
    if not r.done:
        raise FormatError("trailing bytes in embeddings file")
    return ids, emb


def write_embeddings(path, ids, emb) -> None:
    Path(path).write_bytes(dump_embeddings(list(ids), emb))


def read_embeddings(path) -> tuple[list[str], np.ndarray]:
    return load_embeddings(Path(path).read_bytes())


# -- text formats --------------------------------------------------------------

PAIR_HEADER = ["tracklet_a", "tracklet_b", "label", "score"]
FRAME_SCORE_HEADER = ["tracklet_id", "frame_index", "score"]


def _fmt(x: float) -> str:
    return repr(float(x))


def write_pairs(path, pairs: Iterable[PairScore]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PAIR_HEADER)
        for p in pairs:
            w.writerow([p.tracklet_a, p.tracklet_b, p.label, _fmt(p.score)])


def read_pairs(path) -> list[PairScore]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != PAIR_HEADER:
            raise FormatError(f"{path}: expected header {','.join(PAIR_HEADER)}")
        out = []
        for row in reader:
            if row["label"] not in ("same", "diff", "unknown"):
                raise FormatError(f"{path}: bad label {row['label']!r}")
            try:
                score = float(row["score"])
            except ValueError as exc:
                raise FormatError(f"{path}: bad score {row['score']!r}") from exc
            out.append(PairScore(row["tracklet_a"], row["tracklet_b"], row["label"], score))
    return out


def write_frame_scores(path, scores: Mapping[str, np.ndarray], frame_index: Mapping[str, np.ndarray]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FRAME_SCORE_HEADER)
        for tid in sorted(scores):
            for fi, s in zip(frame_index[tid], scores[tid]):
                w.writerow([tid, int(fi), _fmt(s)])


def read_frame_scores(path) -> dict[str, dict[int, float]]:
    out: dict[str, dict[int, float]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != FRAME_SCORE_HEADER:
            raise FormatError(f"{path}: expected header {','.join(FRAME_SCORE_HEADER)}")
        for row in reader:
            try:
                out.setdefault(row["tracklet_id"], {})[int(row["frame_index"])] = float(row["score"])
            except ValueError as exc:
                raise FormatError(f"{path}: bad row {row}") from exc
    return out


def _json_safe(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, np.generic):
        return _json_safe(obj.item())
    return obj


def write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_json_safe(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: {exc}") from exc
