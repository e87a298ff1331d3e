"""Readers and writers for raw ECG recordings and the canonical record store.

Two raw sources are understood:

* whitespace-separated ASCII matrices with one row per sample and one column
  per lead (the synthetic corpus layout), and
* clinical waveform records made of a text header plus a binary signal file
  stored as interleaved 16-bit little-endian integers.

Everything downstream consumes the ``ECG8`` store: one binary file per record
holding a normalized ``8 x 5000`` float32 matrix, plus a ``metadata.csv``
sidecar in the same directory.
"""
from __future__ import annotations

import csv
import io
import math
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable, Iterator, Optional, Sequence, Union

import numpy as np

from .errors import (
    ColumnCountMismatch,
    CorruptStore,
    IoFailure,
    LengthMismatch,
    MalformedHeader,
    NonNumericToken,
    RowCountMismatch,
    ShapeMismatch,
    UnsupportedFormat,
    WrongLeadCount,
)

SAMPLING_RATE_HZ = 500
DURATION_S = 10
N_SAMPLES = SAMPLING_RATE_HZ * DURATION_S
N_LEADS = 8

LEAD_NAMES_12 = ("I", "II", "III", "aVR", "aVL", "aVF",
                 "V1", "V2", "V3", "V4", "V5", "V6")
LEAD_NAMES = ("I", "II", "V1", "V2", "V3", "V4", "V5", "V6")
LEAD_INDICES = (0, 1, 6, 7, 8, 9, 10, 11)

FORMAT_16 = 16
#: pseudo format code given to records parsed from ASCII text
FORMAT_ASC = 0
_WFDB_DEFAULT_GAIN = 200.0

STORE_MAGIC = b"ECG8"
STORE_VERSION = 1
_STORE_HEADER = struct.Struct("<4sBII")
STORE_SUFFIX = ".ecg8"
METADATA_FILE = "metadata.csv"
METADATA_COLUMNS = ("record_id", "class_label", "hr_bpm", "pr_ms", "qt_ms", "qrs_ms")

TextSource = Union[str, IO[str]]


@dataclass(frozen=True)
class RecordHeader:
    record_id: str
    lead_count: int
    samples_per_lead: int
    sampling_rate_hz: int
    gains: tuple
    baselines: tuple
    storage_format_code: int
    lead_names: tuple = ()
    signal_file: str = ""

    def __post_init__(self):
        if self.lead_count not in (8, 12):
            raise WrongLeadCount(f"lead_count must be 8 or 12, got {self.lead_count}")
        if self.samples_per_lead <= 0 or self.sampling_rate_hz <= 0:
            raise MalformedHeader("sample count and sampling rate must be positive")
        if len(self.gains) != self.lead_count or len(self.baselines) != self.lead_count:
            raise MalformedHeader("one gain and one baseline are required per lead")
        if any(not g > 0 for g in self.gains):
            raise MalformedHeader("every lead gain must be positive")
        if self.lead_names and len(self.lead_names) != self.lead_count:
            raise MalformedHeader("lead_names length differs from lead_count")

    @property
    def duration_s(self) -> float:
        return self.samples_per_lead / self.sampling_rate_hz


@dataclass(frozen=True)
class RawRecord:
    """Integer samples in ADC units, laid out ``[lead, sample]``."""

    header: RecordHeader
    samples: np.ndarray

    def __post_init__(self):
        expected = (self.header.lead_count, self.header.samples_per_lead)
        if self.samples.shape != expected:
            raise ShapeMismatch(f"samples shape {self.samples.shape} != header {expected}")


@dataclass(frozen=True)
class EcgMatrix:
    """Normalized ``8 x 5000`` float32 signal, every entry in [0, 1]."""

    values: np.ndarray
    lead_names: tuple = LEAD_NAMES

    def __post_init__(self):
        if self.values.shape != (N_LEADS, N_SAMPLES):
            raise ShapeMismatch(f"EcgMatrix must be {N_LEADS}x{N_SAMPLES}, got {self.values.shape}")
        if self.values.dtype != np.float32:
            raise ShapeMismatch(f"EcgMatrix must be float32, got {self.values.dtype}")
        if self.values.size and (self.values.min() < 0 or self.values.max() > 1):
            raise ValueError("EcgMatrix entries must lie in [0, 1]")


@dataclass(frozen=True)
class RecordMeta:
    """One row of the metadata sidecar. Absent targets are ``None``."""

    record_id: str
    class_label: Optional[str] = None
    hr_bpm: Optional[float] = None
    pr_ms: Optional[float] = None
    qt_ms: Optional[float] = None
    qrs_ms: Optional[float] = None


# ---------------------------------------------------------------------------
# ASCII matrices
# ---------------------------------------------------------------------------


def _lines(text: TextSource) -> Iterator[str]:
    if isinstance(text, str):
        return iter(text.splitlines())
    return iter(text)


def parse_asc(text: TextSource, record_id: str = "", n_rows: int = N_SAMPLES,
              n_cols: int = N_LEADS) -> RawRecord:
    """Parse an ASCII sample matrix (rows = samples, columns = leads).

    Column ``c`` of the file becomes lead ``c`` of the record, so the result
    is the transpose of the text layout. Blank lines are ignored.
    """
    rows = []
    for lineno, line in enumerate(_lines(text), start=1):
        tokens = line.split()
        if not tokens:
            continue
        if len(tokens) != n_cols:
            raise ColumnCountMismatch(
                f"line {lineno}: expected {n_cols} fields, found {len(tokens)}")
        try:
            rows.append([int(tok) for tok in tokens])
        except ValueError:
            bad = next(t for t in tokens if not _is_int(t))
            raise NonNumericToken(f"line {lineno}: cannot parse {bad!r}") from None
        if len(rows) > n_rows:
            raise RowCountMismatch(f"more than {n_rows} rows")
    if len(rows) != n_rows:
        raise RowCountMismatch(f"expected {n_rows} rows, found {len(rows)}")
    samples = np.asarray(rows, dtype=np.int64).T.copy()
    header = RecordHeader(
        record_id=record_id,
        lead_count=n_cols,
        samples_per_lead=n_rows,
        sampling_rate_hz=SAMPLING_RATE_HZ,
        gains=(1.0,) * n_cols,
        baselines=(0,) * n_cols,
        storage_format_code=FORMAT_ASC,
        lead_names=LEAD_NAMES if n_cols == N_LEADS else (),
    )
    return RawRecord(header, samples)


def _is_int(token: str) -> bool:
    try:
        int(token)
    except ValueError:
        return False
    return True


def read_asc(path: Union[str, os.PathLike]) -> RawRecord:
    path = Path(path)
    try:
        with open(path, "r") as fh:
            return parse_asc(fh, record_id=path.stem)
    except OSError as exc:
        raise IoFailure(str(exc)) from exc


# ---------------------------------------------------------------------------
# Clinical header + 16-bit signal files
# ---------------------------------------------------------------------------


def _positive_int(token: str, what: str) -> int:
    try:
        value = float(token)
    except ValueError:
        raise MalformedHeader(f"{what} is not numeric: {token!r}") from None
    if value <= 0 or value != int(value):
        raise MalformedHeader(f"{what} must be a positive integer: {token!r}")
    return int(value)


def _parse_gain(token: str, adc_zero: int) -> tuple:
    spec = token.split("/", 1)[0]
    baseline = adc_zero
    if "(" in spec:
        spec, _, rest = spec.partition("(")
        if not rest.endswith(")"):
            raise MalformedHeader(f"bad gain field {token!r}")
        try:
            baseline = int(rest[:-1])
        except ValueError:
            raise MalformedHeader(f"bad baseline in {token!r}") from None
    try:
        gain = float(spec)
    except ValueError:
        raise MalformedHeader(f"bad gain field {token!r}") from None
    if gain == 0:
        gain = _WFDB_DEFAULT_GAIN
    return gain, baseline


def parse_wfdb_header(text: TextSource) -> RecordHeader:
    """Parse a clinical record header.

    The first non-comment line is ``name n_leads fs n_samples``; each following
    line describes one lead as ``file format gain(baseline)/units adcres
    adczero initval checksum blocksize description``. Only format 16 is
    accepted; anything else raises :class:`UnsupportedFormat`.
    """
    lines = [ln.strip() for ln in _lines(text)]
    lines = [ln for ln in lines if ln and not ln.startswith("#")]
    if not lines:
        raise MalformedHeader("empty header")
    record = lines[0].split()
    if len(record) < 4:
        raise MalformedHeader("record line needs name, lead count, rate and sample count")
    record_id = record[0].split("/")[0]
    n_leads = _positive_int(record[1], "lead count")
    fs = _positive_int(record[2].split("/")[0].split("(")[0], "sampling rate")
    n_samples = _positive_int(record[3], "sample count")
    if len(lines) - 1 < n_leads:
        raise MalformedHeader(f"header declares {n_leads} leads but has {len(lines) - 1} signal lines")

    gains, baselines, names, files = [], [], [], []
    for line in lines[1:1 + n_leads]:
        fields = line.split()
        if len(fields) < 2:
            raise MalformedHeader(f"signal line too short: {line!r}")
        files.append(fields[0])
        fmt_token = fields[1]
        digits = ""
        for ch in fmt_token:
            if not ch.isdigit():
                break
            digits += ch
        if not digits:
            raise MalformedHeader(f"bad format field {fmt_token!r}")
        code = int(digits)
        if code != FORMAT_16 or digits != fmt_token:
            raise UnsupportedFormat(f"storage format {fmt_token!r} is not supported (only 16)")
        adc_zero = 0
        if len(fields) >= 5:
            try:
                adc_zero = int(fields[4])
            except ValueError:
                raise MalformedHeader(f"bad adc zero in {line!r}") from None
        if len(fields) >= 3:
            gain, baseline = _parse_gain(fields[2], adc_zero)
        else:
            gain, baseline = _WFDB_DEFAULT_GAIN, adc_zero
        gains.append(gain)
        baselines.append(baseline)
        names.append(" ".join(fields[8:]) if len(fields) > 8 else "")
    if len(set(files)) != 1:
        raise UnsupportedFormat("all leads must share one signal file")
    if n_leads not in (8, 12):
        raise WrongLeadCount(f"lead_count must be 8 or 12, got {n_leads}")
    return RecordHeader(
        record_id=record_id,
        lead_count=n_leads,
        samples_per_lead=n_samples,
        sampling_rate_hz=fs,
        gains=tuple(gains),
        baselines=tuple(baselines),
        storage_format_code=FORMAT_16,
        lead_names=tuple(names) if any(names) else (),
        signal_file=files[0],
    )


def format_wfdb_header(header: RecordHeader) -> str:
    """Serialize ``header`` in the form :func:`parse_wfdb_header` reads."""
    signal_file = header.signal_file or f"{header.record_id}.dat"
    out = [f"{header.record_id} {header.lead_count} {header.sampling_rate_hz} "
           f"{header.samples_per_lead}"]
    names = header.lead_names or ("",) * header.lead_count
    for gain, baseline, name in zip(header.gains, header.baselines, names):
        line = (f"{signal_file} {header.storage_format_code} {float(gain)!r}({baseline})/mV "
                f"16 0 0 0 0")
        if name:
            line += f" {name}"
        out.append(line)
    return "\n".join(out) + "\n"


def decode_signal(data: bytes, header: RecordHeader) -> RawRecord:
    """De-interleave a sample-major, lead-minor 16-bit little-endian stream."""
    if header.storage_format_code != FORMAT_16:
        raise UnsupportedFormat(f"cannot decode format {header.storage_format_code}")
    expected = 2 * header.lead_count * header.samples_per_lead
    if len(data) != expected:
        raise LengthMismatch(f"signal has {len(data)} bytes, expected {expected}")
    flat = np.frombuffer(data, dtype="<i2")
    samples = flat.reshape(header.samples_per_lead, header.lead_count).T.astype(np.int64)
    return RawRecord(header, samples)


def read_wfdb(path: Union[str, os.PathLike]) -> RawRecord:
    """Read ``<path>.hea`` and the signal file it names."""
    path = Path(path)
    hea = path if path.suffix == ".hea" else path.with_name(path.name + ".hea")
    try:
        header = parse_wfdb_header(hea.read_text())
        data = (hea.parent / header.signal_file).read_bytes()
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    return decode_signal(data, header)


def select_leads(record: RawRecord) -> RawRecord:
    """Keep leads I, II, V1..V6 of a 12-lead record, in that order."""
    h = record.header
    if h.lead_count != 12:
        raise WrongLeadCount(f"lead selection needs 12 leads, got {h.lead_count}")
    idx = list(LEAD_INDICES)
    header = RecordHeader(
        record_id=h.record_id,
        lead_count=N_LEADS,
        samples_per_lead=h.samples_per_lead,
        sampling_rate_hz=h.sampling_rate_hz,
        gains=tuple(h.gains[i] for i in idx),
        baselines=tuple(h.baselines[i] for i in idx),
        storage_format_code=h.storage_format_code,
        lead_names=LEAD_NAMES,
        signal_file=h.signal_file,
    )
    return RawRecord(header, record.samples[idx].copy())


def minmax_leads(values: np.ndarray) -> np.ndarray:
    """Min-max scale along the last axis; zero-range rows become zeros.

    Works on any array whose last axis is time, e.g. ``[lead, sample]`` or
    ``[record, lead, sample]``. Returns float32.
    """
    x = np.asarray(values, dtype=np.float64)
    lo = x.min(axis=-1, keepdims=True)
    span = x.max(axis=-1, keepdims=True) - lo
    flat = span == 0
    out = (x - lo) / np.where(flat, 1.0, span)
    out = np.where(flat, 0.0, out)
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def normalize(record: RawRecord) -> EcgMatrix:
    if record.samples.shape != (N_LEADS, N_SAMPLES):
        raise ShapeMismatch(
            f"normalize needs {N_LEADS}x{N_SAMPLES} samples, got {record.samples.shape}")
    return EcgMatrix(minmax_leads(record.samples))


# ---------------------------------------------------------------------------
# ECG8 store
# ---------------------------------------------------------------------------


def encode_matrix(values: np.ndarray) -> bytes:
    values = np.asarray(values)
    if values.ndim != 2:
        raise ShapeMismatch("store payload must be a 2-D matrix")
    rows, cols = values.shape
    payload = np.ascontiguousarray(values, dtype="<f4").tobytes()
    return _STORE_HEADER.pack(STORE_MAGIC, STORE_VERSION, rows, cols) + payload


def decode_matrix(blob: bytes) -> np.ndarray:
    if len(blob) < _STORE_HEADER.size:
        raise CorruptStore("store file shorter than its header")
    magic, version, rows, cols = _STORE_HEADER.unpack_from(blob)
    if magic != STORE_MAGIC:
        raise CorruptStore(f"bad magic {magic!r}")
    if version != STORE_VERSION:
        raise CorruptStore(f"unsupported store version {version}")
    expected = _STORE_HEADER.size + 4 * rows * cols
    if len(blob) != expected:
        raise CorruptStore(f"store file has {len(blob)} bytes, expected {expected}")
    values = np.frombuffer(blob, dtype="<f4", offset=_STORE_HEADER.size)
    return values.reshape(rows, cols).astype(np.float32)


def write_matrix(path: Union[str, os.PathLike], values: np.ndarray) -> Path:
    path = Path(path)
    try:
        path.write_bytes(encode_matrix(values))
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    return path


def read_matrix(path: Union[str, os.PathLike]) -> np.ndarray:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    return decode_matrix(blob)


def _fmt(value: Optional[float]) -> str:
    return "" if value is None else repr(float(value))


def _unfmt(cell: str) -> Optional[float]:
    cell = cell.strip()
    if not cell:
        return None
    value = float(cell)
    return None if math.isnan(value) else value


def write_metadata(path: Union[str, os.PathLike], rows: Iterable[RecordMeta]) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(METADATA_COLUMNS)
    for m in rows:
        writer.writerow([m.record_id, m.class_label or "", _fmt(m.hr_bpm), _fmt(m.pr_ms),
                         _fmt(m.qt_ms), _fmt(m.qrs_ms)])
    try:
        Path(path).write_text(buf.getvalue())
    except OSError as exc:
        raise IoFailure(str(exc)) from exc


def read_metadata(path: Union[str, os.PathLike]) -> list:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    reader = csv.DictReader(io.StringIO(text))
    if tuple(reader.fieldnames or ()) != METADATA_COLUMNS:
        raise CorruptStore(f"metadata columns {reader.fieldnames} != {METADATA_COLUMNS}")
    return [
        RecordMeta(
            record_id=row["record_id"],
            class_label=row["class_label"] or None,
            hr_bpm=_unfmt(row["hr_bpm"]),
            pr_ms=_unfmt(row["pr_ms"]),
            qt_ms=_unfmt(row["qt_ms"]),
            qrs_ms=_unfmt(row["qrs_ms"]),
        )
        for row in reader
    ]


def write_store(path: Union[str, os.PathLike], record: EcgMatrix, meta: RecordMeta) -> Path:
    """Write one record and upsert its row in the sibling ``metadata.csv``."""
    path = Path(path)
    write_matrix(path, record.values)
    sidecar = path.parent / METADATA_FILE
    rows = read_metadata(sidecar) if sidecar.exists() else []
    rows = [r for r in rows if r.record_id != meta.record_id] + [meta]
    write_metadata(sidecar, rows)
    return path


def read_store(path: Union[str, os.PathLike], record_id: Optional[str] = None):
    """Return ``(EcgMatrix, RecordMeta)`` for a store file."""
    path = Path(path)
    values = read_matrix(path)
    if values.shape != (N_LEADS, N_SAMPLES):
        raise CorruptStore(f"stored matrix has shape {values.shape}")
    try:
        matrix = EcgMatrix(values)
    except ValueError as exc:
        raise CorruptStore(str(exc)) from exc
    record_id = record_id or path.stem
    sidecar = path.parent / METADATA_FILE
    meta = RecordMeta(record_id)
    if sidecar.exists():
        meta = next((m for m in read_metadata(sidecar) if m.record_id == record_id), meta)
    return matrix, meta


class RecordStore:
    """A directory of ``.ecg8`` files with one shared metadata sidecar.

    Bulk writers should prefer this over :func:`write_store`, which rewrites
    the sidecar on every call.
    """

    def __init__(self, root: Union[str, os.PathLike]):
        self.root = Path(root)
        self._pending: list = []

    def path_for(self, record_id: str) -> Path:
        return self.root / f"{record_id}{STORE_SUFFIX}"

    def add(self, record: EcgMatrix, meta: RecordMeta) -> Path:
        self.root.mkdir(parents=True, exist_ok=True)
        path = write_matrix(self.path_for(meta.record_id), record.values)
        self._pending.append(meta)
        return path

    def flush(self) -> None:
        sidecar = self.root / METADATA_FILE
        rows = read_metadata(sidecar) if sidecar.exists() else []
        new_ids = {m.record_id for m in self._pending}
        rows = [r for r in rows if r.record_id not in new_ids] + self._pending
        write_metadata(sidecar, rows)
        self._pending = []

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        if exc[0] is None:
            self.flush()

    def metadata(self) -> list:
        sidecar = self.root / METADATA_FILE
        if not sidecar.exists():
            raise CorruptStore(f"{self.root} has no {METADATA_FILE}")
        return read_metadata(sidecar)

    def read(self, record_id: str) -> EcgMatrix:
        values = read_matrix(self.path_for(record_id))
        if values.shape != (N_LEADS, N_SAMPLES):
            raise CorruptStore(f"{record_id}: stored matrix has shape {values.shape}")
        return EcgMatrix(values)

    def load_arrays(self, record_ids: Sequence[str]) -> np.ndarray:
        """Stack the named records into one ``[n, 8, 5000]`` float32 array."""
        out = np.empty((len(record_ids), N_LEADS, N_SAMPLES), dtype=np.float32)
        for i, rid in enumerate(record_ids):
            out[i] = self.read(rid).values
        return out
