"""Sequence records and their on-disk container.

A :class:`SequenceRecord` holds one video's per-frame features: a frame-level
track [T x d_in], per-object tracks [T x N x d_in], an object validity mask
[T x N] (True = detection present), a binary label, and for positives the
1-based accident frame ``t_ao``.

Container layout (magic ``MSFD``, version 1, all integers little-endian):

    b"MSFD" u32(version)
    per record:
        u32(meta_len) meta_json
        frame_features   t * d_in float32
        object_features  t * n * d_in float32
        object_mask      t * n uint8
    u32(index_len) index_json   u64(footer_len)   b"MSFD"

``meta_json`` makes each record blob self-describing; ``index_json`` maps
record ids to byte offsets for O(1) random access.  ``footer_len`` counts the
bytes of ``u32(index_len) + index_json`` so readers can locate the index from
the file end.  Writes are deterministic: identical records yield identical
bytes.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from typing import BinaryIO, Iterable, Iterator

import numpy as np

from .errors import (
    AccidentFrameRangeError,
    BadMagicError,
    ContractError,
    DataError,
    FormatVersionError,
    RawImportError,
    ShapeInconsistencyError,
)

MAGIC = b"MSFD"
VERSION = 1

# Raw float dumps: sequences of [frames x channels x width] float32, channel 0
# being the frame-level feature and the rest per-object slots.
RAW_LAYOUTS: dict[str, tuple[int, int, int]] = {
    "dad_100x20x4096": (100, 20, 4096),
    "dada_150x16x4096": (150, 16, 4096),
}


@dataclass
class SequenceRecord:
    """One video worth of features and its label."""

    record_id: str
    frame_features: np.ndarray  # [T x d_in] float32
    object_features: np.ndarray  # [T x N x d_in] float32
    object_mask: np.ndarray  # [T x N] bool
    label: int
    t_ao: int | None  # 1-based accident frame, positives only
    fps: int

    @property
    def t_len(self) -> int:
        return self.frame_features.shape[0]

    @property
    def n_objects(self) -> int:
        return self.object_features.shape[1]

    @property
    def d_in(self) -> int:
        return self.frame_features.shape[1]


def validate_record(rec: SequenceRecord) -> None:
    """Reject structurally inconsistent records, naming the offender."""
    rid = rec.record_id
    ff, of, om = rec.frame_features, rec.object_features, rec.object_mask
    if ff.ndim != 2:
        raise ShapeInconsistencyError(f"record {rid}: frame features must be [T x d_in], got {ff.shape}")
    if of.ndim != 3:
        raise ShapeInconsistencyError(f"record {rid}: object features must be [T x N x d_in], got {of.shape}")
    if om.shape != of.shape[:2]:
        raise ShapeInconsistencyError(
            f"record {rid}: object mask {om.shape} does not cover objects {of.shape[:2]}"
        )
    if of.shape[0] != ff.shape[0] or of.shape[2] != ff.shape[1]:
        raise ShapeInconsistencyError(
            f"record {rid}: object features {of.shape} disagree with frames {ff.shape}"
        )
    if ff.shape[0] < 1:
        raise ShapeInconsistencyError(f"record {rid}: needs at least one frame")
    if not (np.isfinite(ff).all() and np.isfinite(of).all()):
        raise ContractError(f"record {rid}: features contain non-finite values")
    if rec.label not in (0, 1):
        raise DataError(f"record {rid}: label must be 0 or 1, got {rec.label!r}")
    if rec.fps < 1:
        raise DataError(f"record {rid}: fps must be >= 1, got {rec.fps}")
    if rec.label == 1:
        if rec.t_ao is None or not (1 <= rec.t_ao <= rec.t_len):
            raise AccidentFrameRangeError(
                f"record {rid}: accident frame {rec.t_ao} outside 1..{rec.t_len}"
            )
    elif rec.t_ao is not None:
        raise AccidentFrameRangeError(
            f"record {rid}: negative sequence must not carry an accident frame"
        )


def _meta_bytes(rec: SequenceRecord) -> bytes:
    meta = {
        "d_in": rec.d_in,
        "fps": rec.fps,
        "label": rec.label,
        "n": rec.n_objects,
        "record_id": rec.record_id,
        "t": rec.t_len,
        "t_ao": rec.t_ao,
    }
    return json.dumps(meta, sort_keys=True, separators=(",", ":")).encode()


def write_dataset(records: Iterable[SequenceRecord], path) -> dict:
    """Write records to ``path`` in one pass; returns a manifest summary dict.

    Records stream straight to disk, so memory stays bounded by the largest
    single record plus the id index regardless of dataset size.  The index
    footer is written last; a write that fails midway leaves a file without a
    valid footer, which every reader rejects as truncated.
    """
    index: dict[str, int] = {}
    positives = 0
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        for rec in records:
            validate_record(rec)
            if rec.record_id in index:
                raise DataError(f"duplicate record id {rec.record_id!r}")
            index[rec.record_id] = fh.tell()
            positives += rec.label
            meta = _meta_bytes(rec)
            fh.write(struct.pack("<I", len(meta)))
            fh.write(meta)
            fh.write(np.ascontiguousarray(rec.frame_features, dtype="<f4").tobytes())
            fh.write(np.ascontiguousarray(rec.object_features, dtype="<f4").tobytes())
            fh.write(np.ascontiguousarray(rec.object_mask, dtype=np.uint8).tobytes())
        index_json = json.dumps(index, sort_keys=True, separators=(",", ":")).encode()
        footer = struct.pack("<I", len(index_json)) + index_json
        fh.write(footer)
        fh.write(struct.pack("<Q", len(footer)))
        fh.write(MAGIC)
    return {
        "path": str(path),
        "records": len(index),
        "positives": positives,
        "ids": sorted(index),
    }


def _check_header(fh: BinaryIO, path) -> None:
    head = fh.read(8)
    if len(head) < 8 or head[:4] != MAGIC:
        raise BadMagicError(f"{path}: not a sequence dataset (bad magic)")
    (version,) = struct.unpack("<I", head[4:8])
    if version != VERSION:
        raise FormatVersionError(f"{path}: format version {version}, supported {VERSION}")


def read_index(path) -> dict[str, int]:
    """Record id -> byte offset, via the footer."""
    with open(path, "rb") as fh:
        _check_header(fh, path)
        fh.seek(0, 2)
        end = fh.tell()
        if end < 8 + 12 + 4:
            raise BadMagicError(f"{path}: truncated container")
        fh.seek(end - 12)
        tail = fh.read(12)
        (footer_len,) = struct.unpack("<Q", tail[:8])
        if tail[8:] != MAGIC:
            raise BadMagicError(f"{path}: trailing magic missing, file truncated?")
        fh.seek(end - 12 - footer_len)
        blob = fh.read(footer_len)
        (index_len,) = struct.unpack("<I", blob[:4])
        if index_len + 4 != footer_len:
            raise BadMagicError(f"{path}: footer length disagrees with index")
        return json.loads(blob[4:])


def _read_record_at(fh: BinaryIO, offset: int, path) -> SequenceRecord:
    fh.seek(offset)
    raw = fh.read(4)
    if len(raw) < 4:
        raise ShapeInconsistencyError(f"{path}: record at offset {offset} truncated")
    (meta_len,) = struct.unpack("<I", raw)
    try:
        meta = json.loads(fh.read(meta_len))
    except ValueError as err:
        raise ShapeInconsistencyError(f"{path}: unreadable record meta at {offset}") from err
    rid = meta.get("record_id", f"<offset {offset}>")
    t, n, d_in = meta["t"], meta["n"], meta["d_in"]
    counts = (t * d_in * 4, t * n * d_in * 4, t * n)
    blobs = []
    for want in counts:
        chunk = fh.read(want)
        if len(chunk) != want:
            raise ShapeInconsistencyError(
                f"record {rid}: expected {want} payload bytes, file ends early"
            )
        blobs.append(chunk)
    rec = SequenceRecord(
        record_id=rid,
        frame_features=np.frombuffer(blobs[0], dtype="<f4").reshape(t, d_in).copy(),
        object_features=np.frombuffer(blobs[1], dtype="<f4").reshape(t, n, d_in).copy(),
        object_mask=np.frombuffer(blobs[2], dtype=np.uint8).reshape(t, n).astype(bool),
        label=meta["label"],
        t_ao=meta["t_ao"],
        fps=meta["fps"],
    )
    validate_record(rec)
    return rec


def read_dataset(path) -> Iterator[SequenceRecord]:
    """Yield records one at a time; memory stays O(largest record)."""
    index = read_index(path)
    with open(path, "rb") as fh:
        for rid in sorted(index, key=index.get):
            yield _read_record_at(fh, index[rid], path)


def load_dataset(path) -> list[SequenceRecord]:
    return list(read_dataset(path))


def read_record(path, record_id: str) -> SequenceRecord:
    """Random access to a single record through the footer index."""
    index = read_index(path)
    if record_id not in index:
        raise DataError(f"{path}: no record {record_id!r}")
    with open(path, "rb") as fh:
        _check_header(fh, path)
        return _read_record_at(fh, index[record_id], path)


# ---------------------------------------------------------------------------
# raw float dump import


def _parse_sidecar(sidecar_path) -> list[dict]:
    entries = []
    with open(sidecar_path) as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                entry = json.loads(line)
            except ValueError as err:
                raise RawImportError(f"{sidecar_path}:{line_no}: not valid JSON") from err
            for key in ("id", "label", "t_ao", "fps"):
                if key not in entry:
                    raise RawImportError(f"{sidecar_path}:{line_no}: missing key {key!r}")
            entries.append(entry)
    return entries


def import_raw_tensor(path, layout, sidecar_path) -> list[SequenceRecord]:
    """Interpret a raw float32 dump as sequence records.

    ``layout`` is a named preset from :data:`RAW_LAYOUTS` or an explicit
    ``(frames, channels, width)`` triple; channel 0 carries the frame feature
    and channels 1..C-1 the object slots.  All-zero object rows are marked
    absent.  ``sidecar_path`` is JSON-lines with one ``{"id", "label",
    "t_ao", "fps"}`` object per sequence, in file order.
    """
    if isinstance(layout, str):
        if layout not in RAW_LAYOUTS:
            raise RawImportError(
                f"unknown layout {layout!r}; presets: {sorted(RAW_LAYOUTS)}"
            )
        t, channels, d_in = RAW_LAYOUTS[layout]
    else:
        t, channels, d_in = layout
    if channels < 2:
        raise RawImportError("layout needs a frame channel plus at least one object slot")

    flat = np.fromfile(path, dtype="<f4")
    per_seq = t * channels * d_in
    if flat.size == 0 or flat.size % per_seq != 0:
        raise RawImportError(
            f"{path}: {flat.size} floats is not a multiple of {per_seq} per sequence"
        )
    n_seq = flat.size // per_seq
    entries = _parse_sidecar(sidecar_path)
    if len(entries) != n_seq:
        raise RawImportError(
            f"{sidecar_path}: {len(entries)} label rows for {n_seq} sequences in {path}"
        )

    cube = flat.reshape(n_seq, t, channels, d_in)
    records = []
    for entry, seq in zip(entries, cube):
        objects = np.ascontiguousarray(seq[:, 1:, :])
        mask = objects.any(axis=2)
        rec = SequenceRecord(
            record_id=str(entry["id"]),
            frame_features=np.ascontiguousarray(seq[:, 0, :]),
            object_features=objects,
            object_mask=mask,
            label=int(entry["label"]),
            t_ao=None if entry["t_ao"] is None else int(entry["t_ao"]),
            fps=int(entry["fps"]),
        )
        validate_record(rec)
        records.append(rec)
    return records
