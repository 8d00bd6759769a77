"""Manifests, feature files (CSV and binary HMXC) and label files."""

from __future__ import annotations

import csv
import io
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, TruncatedFileError, UsageError

HMXC_MAGIC = b"HMXC"
HMXC_VERSION = 1
_HMXC_HEADER = struct.Struct("<4sIII")


@dataclass(frozen=True)
class ManifestEntry:
    path: Path
    label: int | None = None


def read_manifest(path) -> list[ManifestEntry]:
    """One image path per line, optionally followed by an integer label.

    Relative paths resolve against the manifest's directory; blank lines
    and ``#`` comments are ignored.
    """
    path = Path(path)
    base = path.parent
    entries = []
    for lineno, raw in enumerate(path.read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.rsplit(None, 1)
        label = None
        if len(parts) == 2:
            try:
                label = int(parts[1])
                line = parts[0]
            except ValueError:
                pass
        p = Path(line)
        entries.append(ManifestEntry(p if p.is_absolute() else base / p, label))
    if not entries:
        raise UsageError(f"{path}: manifest lists no images")
    return entries


def write_manifest(entries, path) -> None:
    with open(path, "w") as fh:
        for e in entries:
            fh.write(f"{os.fspath(e.path)}" + (f" {e.label}" if e.label is not None else "") + "\n")


def read_labels(path) -> np.ndarray:
    """Integer labels, taking the last token of each non-blank line.

    Accepts a bare label list or a labelled manifest.
    """
    out = []
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if line:
            try:
                out.append(int(line.split()[-1]))
            except ValueError as exc:
                raise FormatError(f"{path}: cannot parse label from {raw!r}") from exc
    return np.array(out, dtype=np.int64)


def feature_header(n_features: int) -> list[str]:
    return ["image_id"] + [f"f{i:04d}" for i in range(n_features)]


def format_value(v: float) -> str:
    return format(float(v), ".9g")


class FeatureCsvWriter:
    """Streams scaled C2 rows; optional trailing columns carry classifier output."""

    def __init__(self, fh, n_features: int, extra_columns=()):
        self.fh = fh
        self.extra = tuple(extra_columns)
        self.n_features = n_features
        fh.write(",".join(feature_header(n_features) + list(self.extra)) + "\n")

    def write(self, image_id: int, scaled, extra=()) -> None:
        scaled = np.asarray(scaled)
        if scaled.shape[0] != self.n_features:
            raise FormatError(f"row has {scaled.shape[0]} features, header declares {self.n_features}")
        cells = [str(image_id)] + [format_value(v) for v in scaled] + [str(v) for v in extra]
        self.fh.write(",".join(cells) + "\n")
        self.fh.flush()


def read_feature_csv(path):
    """(image ids, feature matrix, extra columns as {name: list[str]})."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty feature file") from None
        if not header or header[0] != "image_id":
            raise FormatError(f"{path}: header must start with image_id")
        feat_cols = [i for i, h in enumerate(header) if len(h) == 5 and h[0] == "f" and h[1:].isdigit()]
        extra_cols = [i for i in range(1, len(header)) if i not in feat_cols]
        ids, rows = [], []
        extra = {header[i]: [] for i in extra_cols}
        for row in reader:
            if not row:
                continue
            if len(row) != len(header):
                raise FormatError(f"{path}: row {len(ids) + 1} has {len(row)} cells, expected {len(header)}")
            ids.append(int(row[0]))
            rows.append([float(row[i]) for i in feat_cols])
            for i in extra_cols:
                extra[header[i]].append(row[i])
    X = np.array(rows, dtype=np.float64).reshape(len(rows), len(feat_cols))
    return np.array(ids, dtype=np.int64), X, extra


class HmxcWriter:
    """Binary raw fixed-mode C2 values: header, then per image a u32 id and u64 features.

    The image count in the header is patched on :meth:`close`.
    """

    def __init__(self, fh, n_features: int):
        self.fh = fh
        self.n_features = n_features
        self.count = 0
        fh.write(_HMXC_HEADER.pack(HMXC_MAGIC, HMXC_VERSION, 0, n_features))

    def write(self, image_id: int, raw) -> None:
        raw = np.asarray(raw)
        if raw.dtype.kind not in "iu":
            raise FormatError("HMXC stores raw fixed-mode integers; extract with mode=fixed")
        self.fh.write(struct.pack("<I", image_id))
        self.fh.write(raw.astype("<u8").tobytes())
        self.count += 1

    def close(self) -> None:
        self.fh.seek(0)
        self.fh.write(_HMXC_HEADER.pack(HMXC_MAGIC, HMXC_VERSION, self.count, self.n_features))
        self.fh.seek(0, io.SEEK_END)


def read_hmxc(path):
    data = Path(path).read_bytes()
    if len(data) < _HMXC_HEADER.size:
        raise TruncatedFileError(f"{path}: header truncated")
    magic, version, n_images, n_features = _HMXC_HEADER.unpack_from(data)
    if magic != HMXC_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != HMXC_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    rec = np.dtype([("id", "<u4"), ("v", "<u8", (n_features,))])
    body = data[_HMXC_HEADER.size:]
    if len(body) != n_images * rec.itemsize:
        raise TruncatedFileError(f"{path}: expected {n_images} records")
    arr = np.frombuffer(body, dtype=rec, count=n_images)
    return arr["id"].astype(np.int64), arr["v"].astype(np.int64).reshape(n_images, n_features)


def read_features(path):
    """Feature matrix from either format; HMXC raw values are returned unscaled."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic == HMXC_MAGIC:
        ids, raw = read_hmxc(path)
        return ids, raw.astype(np.float64)
    ids, X, _ = read_feature_csv(path)
    return ids, X
