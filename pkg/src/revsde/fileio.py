"""Sample-batch files, mixture JSON, and sweep report emission.

Binary sample format (all integers little-endian):

    offset  size  field
    0       4     magic b"DSB1"
    4       4     format version, u32 (currently 1)
    8       8     sample count n, u64
    16      8     dimension d, u64
    24      4     scalar width in bytes, u32 (4 = f32, 8 = f64)
    28      8     metadata byte length, u64
    36      var   metadata, UTF-8 JSON object
    ...     n*d*w payload, row-major, little-endian floats

Readers reject wrong magic (BAD_MAGIC), unknown versions or scalar widths
(VERSION_MISMATCH), any structural shortfall or surplus of bytes and
undecodable metadata (TRUNCATED_PAYLOAD), and non-finite payload entries
(NON_FINITE_DATA). OS-level failures surface as SampleIOError.

CSV reports use '.' decimals, no thousands separators, and 17 significant
digits, so every f64 round-trips exactly.
"""

from __future__ import annotations

import csv
import json
import struct

import numpy as np

from .errors import (
    BadMagicError,
    NoSamplesError,
    NonFiniteDataError,
    SampleIOError,
    TruncatedPayloadError,
    UnsupportedDataError,
    VersionMismatchError,
)
from .samplers import SampleBatch
from .score import (
    Covariance,
    CovarianceKind,
    GaussianMixture,
    diagonal_covariance,
    full_covariance,
)

MAGIC = b"DSB1"
VERSION = 1
_HEADER = struct.Struct("<4sIQQIQ")
_WIDTHS = {4: np.dtype("<f4"), 8: np.dtype("<f8")}


def write_samples(path, batch: SampleBatch, dtype: str = "f8") -> None:
    """Write a sample batch; metadata JSON is carried verbatim."""
    data = np.asarray(batch.data)
    if data.ndim != 2 or data.shape[0] < 1:
        raise NoSamplesError("batch must contain at least one sample row")
    if not np.all(np.isfinite(data)):
        raise NonFiniteDataError("refusing to write non-finite sample data")
    np_dtype = np.dtype("<f4") if dtype == "f4" else np.dtype("<f8")
    meta_blob = json.dumps(batch.meta).encode("utf-8")
    n, d = data.shape
    header = _HEADER.pack(MAGIC, VERSION, n, d, np_dtype.itemsize, len(meta_blob))
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(meta_blob)
            fh.write(np.ascontiguousarray(data, dtype=np_dtype).tobytes())
    except OSError as e:
        raise SampleIOError(f"failed to write {path}: {e}") from e


def parse_header(blob: bytes):
    """Parse and validate the fixed header; returns (n, d, dtype, meta_len)."""
    if len(blob) < _HEADER.size:
        raise TruncatedPayloadError("file shorter than the fixed header")
    magic, version, n, d, width, meta_len = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise VersionMismatchError(f"unsupported format version {version}")
    if width not in _WIDTHS:
        raise VersionMismatchError(f"unsupported scalar width {width}")
    return n, d, _WIDTHS[width], meta_len


def read_samples(path) -> SampleBatch:
    """Read a sample batch written by write_samples."""
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as e:
        raise SampleIOError(f"failed to read {path}: {e}") from e
    n, d, np_dtype, meta_len = parse_header(blob)
    offset = _HEADER.size
    if len(blob) < offset + meta_len:
        raise TruncatedPayloadError("metadata extends past end of file")
    try:
        meta = json.loads(blob[offset : offset + meta_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise TruncatedPayloadError(f"metadata is not valid JSON: {e}") from e
    offset += meta_len
    if n < 1:
        raise NoSamplesError("stored batch declares zero samples")
    expected = n * d * np_dtype.itemsize
    payload = blob[offset:]
    if len(payload) < expected:
        raise TruncatedPayloadError(
            f"payload has {len(payload)} bytes, header declares {expected}"
        )
    if len(payload) > expected:
        raise TruncatedPayloadError("trailing bytes after declared payload")
    data = np.frombuffer(payload, dtype=np_dtype).reshape(n, d)
    if not np.all(np.isfinite(data)):
        raise NonFiniteDataError("stored payload contains non-finite entries")
    # storage width is a file detail; in memory everything is float64
    return SampleBatch(data=data.astype(np.float64), meta=meta)


def mixture_from_dict(obj: dict) -> GaussianMixture:
    """Build a validated mixture from the JSON schema.

    Schema: {"weights": [...], "means": [[...], ...],
             "covariances": [{"type": "diagonal"|"full", "data": ...}, ...]}
    """
    try:
        covs = []
        for centry in obj["covariances"]:
            kind = centry["type"]
            if kind == CovarianceKind.DIAGONAL.value:
                covs.append(diagonal_covariance(centry["data"]))
            elif kind == CovarianceKind.FULL.value:
                covs.append(full_covariance(centry["data"]))
            else:
                raise UnsupportedDataError(f"unknown covariance type {kind!r}")
        return GaussianMixture(
            weights=np.asarray(obj["weights"], dtype=np.float64),
            means=np.asarray(obj["means"], dtype=np.float64),
            covariances=tuple(covs),
        )
    except (KeyError, TypeError) as e:
        raise UnsupportedDataError(f"malformed mixture description: {e!r}") from e


def mixture_to_dict(mix: GaussianMixture) -> dict:
    covs = []
    for c in mix.covariances:
        covs.append({"type": c.kind.value, "data": c.data.tolist()})
    return {"weights": mix.weights.tolist(), "means": mix.means.tolist(), "covariances": covs}


def load_mixture(path) -> GaussianMixture:
    with open(path, "r", encoding="utf-8") as fh:
        return mixture_from_dict(json.load(fh))


def save_mixture(path, mix: GaussianMixture) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(mixture_to_dict(mix), fh, indent=2)


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


REPORT_COLUMNS = ("swept_value", "w2", "eps", "stable", "n", "seed")


def write_report_csv(path, rows) -> None:
    """Emit sweep rows deterministically; no timing columns."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(REPORT_COLUMNS)
        for r in rows:
            writer.writerow(
                [
                    _fmt(r["swept_value"]),
                    _fmt(r["w2"]),
                    _fmt(r["eps"]),
                    "true" if r["stable"] else "false",
                    str(int(r["n"])),
                    str(int(r["seed"])),
                ]
            )


def read_report_csv(path):
    """Read sweep rows back; floats parse exactly thanks to 17-digit output."""
    rows = []
    with open(path, "r", newline="", encoding="utf-8") as fh:
        for rec in csv.DictReader(fh):
            rows.append(
                {
                    "swept_value": float(rec["swept_value"]),
                    "w2": float(rec["w2"]),
                    "eps": float(rec["eps"]),
                    "stable": rec["stable"] == "true",
                    "n": int(rec["n"]),
                    "seed": int(rec["seed"]),
                }
            )
    return rows


def write_report_sidecar(path, payload: dict) -> None:
    """JSON sidecar: config echo, fit, floor, timings (non-deterministic)."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
