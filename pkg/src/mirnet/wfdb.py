"""Minimal WFDB reader and writer (header files and format-16 signals).

Only what the PTB diagnostic database needs is supported: single-segment
records whose signals are all stored in format 16 (interleaved 16-bit
little-endian two's-complement samples).
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SUPPORTED_FORMATS = {16}
DEFAULT_GAIN = 200.0
DEFAULT_FS = 250.0


class WfdbError(ValueError):
    pass


class HeaderParseError(WfdbError):
    def __init__(self, message, line_no=None):
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)
        self.line_no = line_no


class UnsupportedFormatError(HeaderParseError):
    pass


class SignalTruncatedError(WfdbError):
    pass


@dataclass
class SignalSpec:
    file_name: str
    fmt: int
    gain: float
    baseline: int
    units: str = "mV"
    adc_resolution: int = 0
    adc_zero: int = 0
    init_value: int = 0
    checksum: int = 0
    block_size: int = 0
    description: str = ""
    byte_offset: int = 0

    @property
    def name(self):
        return self.description.strip().lower()


@dataclass
class WfdbHeader:
    record_name: str
    num_signals: int
    sampling_frequency: float
    num_samples: int | None
    signals: list = field(default_factory=list)
    comments: list = field(default_factory=list)
    base_time: str | None = None
    base_date: str | None = None

    @property
    def signal_names(self):
        return [s.name for s in self.signals]

    def files(self):
        """Distinct signal file names in order of first use."""
        return list(dict.fromkeys(s.file_name for s in self.signals))


_RECORD_RE = re.compile(r"^(\S+?)(?:/(\d+))?$")
_FS_RE = re.compile(r"^([0-9.eE+-]+)(?:/([0-9.eE+-]+))?(?:\(([0-9.eE+-]+)\))?$")
_FMT_RE = re.compile(r"^(\d+)(?:x(\d+))?(?::(\d+))?(?:\+(\d+))?$")
_GAIN_RE = re.compile(r"^([-+]?[0-9.]+(?:[eE][-+]?\d+)?)(?:\(([-+]?\d+)\))?(?:/(\S+))?$")


def _int(token, what, line_no):
    try:
        return int(token)
    except ValueError:
        raise HeaderParseError(f"invalid {what} {token!r}", line_no) from None


def _parse_record_line(line, line_no):
    tokens = line.split()
    if len(tokens) < 2:
        raise HeaderParseError("record line needs at least a name and a signal count", line_no)
    m = _RECORD_RE.match(tokens[0])
    if not m:
        raise HeaderParseError(f"invalid record name {tokens[0]!r}", line_no)
    if m.group(2) is not None:
        raise HeaderParseError("multi-segment records are not supported", line_no)
    nsig = _int(tokens[1], "signal count", line_no)
    fs = DEFAULT_FS
    if len(tokens) > 2:
        fm = _FS_RE.match(tokens[2])
        if not fm:
            raise HeaderParseError(f"invalid sampling frequency {tokens[2]!r}", line_no)
        fs = float(fm.group(1))
    nsamp = _int(tokens[3], "sample count", line_no) if len(tokens) > 3 else None
    base_time = tokens[4] if len(tokens) > 4 else None
    base_date = tokens[5] if len(tokens) > 5 else None
    return WfdbHeader(m.group(1), nsig, fs, nsamp, base_time=base_time, base_date=base_date)


def _parse_signal_line(line, line_no):
    tokens = line.split(None, 8)
    if len(tokens) < 2:
        raise HeaderParseError("signal line needs a file name and a format", line_no)
    fm = _FMT_RE.match(tokens[1])
    if not fm:
        raise HeaderParseError(f"invalid format field {tokens[1]!r}", line_no)
    fmt = int(fm.group(1))
    if fmt not in SUPPORTED_FORMATS:
        raise UnsupportedFormatError(f"unsupported signal format {fmt} (only format 16)", line_no)
    if fm.group(2) not in (None, "1") or fm.group(3) not in (None, "0"):
        raise HeaderParseError("multi-frequency and skewed signals are not supported", line_no)
    spec = SignalSpec(tokens[0], fmt, DEFAULT_GAIN, 0, byte_offset=int(fm.group(4) or 0))
    baseline = None
    if len(tokens) > 2:
        gm = _GAIN_RE.match(tokens[2])
        if not gm:
            raise HeaderParseError(f"invalid gain field {tokens[2]!r}", line_no)
        gain = float(gm.group(1))
        spec.gain = gain if gain != 0 else DEFAULT_GAIN
        if gain < 0:
            raise HeaderParseError(f"gain must be positive, got {gain}", line_no)
        if gm.group(2) is not None:
            baseline = int(gm.group(2))
        if gm.group(3) is not None:
            spec.units = gm.group(3)
    ints = ["adc_resolution", "adc_zero", "init_value", "checksum", "block_size"]
    for attr, token in zip(ints, tokens[3:8]):
        setattr(spec, attr, _int(token, attr.replace("_", " "), line_no))
    if len(tokens) > 8:
        spec.description = tokens[8].strip()
    spec.baseline = spec.adc_zero if baseline is None else baseline
    return spec


def parse_header(content) -> WfdbHeader:
    """Parse the text of a ``.hea`` file.

    Comment lines (starting with ``#``) are kept verbatim in
    ``header.comments``; blank lines are ignored.
    """
    if isinstance(content, bytes):
        content = content.decode("ascii", errors="replace")
    header = None
    comments = []
    for line_no, raw in enumerate(content.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            comments.append(raw.rstrip())
            continue
        if header is None:
            header = _parse_record_line(line, line_no)
        else:
            if len(header.signals) >= header.num_signals:
                raise HeaderParseError("more signal lines than declared", line_no)
            header.signals.append(_parse_signal_line(line, line_no))
    if header is None:
        raise HeaderParseError("no record line found")
    if len(header.signals) != header.num_signals:
        raise HeaderParseError(
            f"header declares {header.num_signals} signals but describes {len(header.signals)}"
        )
    header.comments = comments
    return header


def format_header(header: WfdbHeader) -> str:
    """Inverse of :func:`parse_header` for the fields it keeps."""
    fields = [header.record_name, str(header.num_signals), f"{header.sampling_frequency:.17g}"]
    if header.num_samples is not None:
        fields.append(str(header.num_samples))
        fields += [t for t in (header.base_time, header.base_date) if t]
    lines = [" ".join(fields)]
    for s in header.signals:
        fmt = str(s.fmt) + (f"+{s.byte_offset}" if s.byte_offset else "")
        gain = f"{s.gain:.17g}"
        if s.baseline != s.adc_zero:
            gain += f"({s.baseline})"
        gain += f"/{s.units}"
        parts = [s.file_name, fmt, gain, str(s.adc_resolution), str(s.adc_zero),
                 str(s.init_value), str(s.checksum), str(s.block_size)]
        if s.description:
            parts.append(s.description)
        lines.append(" ".join(parts))
    lines += header.comments
    return "\n".join(lines) + "\n"


def _file_signals(header, file_name):
    if file_name is None:
        files = header.files()
        if len(files) != 1:
            raise WfdbError(f"record stores signals in {len(files)} files; name the one to decode")
        file_name = files[0]
    idx = [i for i, s in enumerate(header.signals) if s.file_name == file_name]
    if not idx:
        raise WfdbError(f"no signal of record {header.record_name} is stored in {file_name!r}")
    return idx


def parse_adc(data: bytes, header: WfdbHeader, file_name=None) -> np.ndarray:
    """Raw ADC samples (``N x k`` int16) of the signals stored in ``file_name``."""
    idx = _file_signals(header, file_name)
    offset = header.signals[idx[0]].byte_offset
    payload = memoryview(data)[offset:]
    frame = 2 * len(idx)
    if len(payload) % frame:
        raise SignalTruncatedError(
            f"{len(payload)} signal bytes is not a multiple of the {frame}-byte frame size"
        )
    return np.frombuffer(payload, dtype="<i2").reshape(-1, len(idx))


def parse_signal(data: bytes, header: WfdbHeader, file_name=None) -> np.ndarray:
    """Physical values ``(adc - baseline) / gain`` as float64, ``N x k``."""
    idx = _file_signals(header, file_name)
    adc = parse_adc(data, header, file_name).astype(np.float64)
    baseline = np.array([header.signals[i].baseline for i in idx], dtype=np.float64)
    gain = np.array([header.signals[i].gain for i in idx], dtype=np.float64)
    return (adc - baseline) / gain


def encode_adc(adc) -> bytes:
    adc = np.asarray(adc)
    if adc.min(initial=0) < -32768 or adc.max(initial=0) > 32767:
        raise WfdbError("ADC values do not fit in 16 bits")
    return np.ascontiguousarray(adc, dtype="<i2").tobytes()


def read_record(path):
    """Read ``<path>.hea`` and its signal files.

    Returns ``(header, signal)`` with ``signal`` in physical units,
    ``N x num_signals`` in header order.
    """
    path = Path(path)
    hea = path.with_name(path.name + ".hea") if path.suffix != ".hea" else path
    header = parse_header(hea.read_bytes())
    columns = [None] * header.num_signals
    for file_name in header.files():
        values = parse_signal((hea.parent / file_name).read_bytes(), header, file_name)
        for j, i in enumerate(_file_signals(header, file_name)):
            columns[i] = values[:, j]
    lengths = {len(c) for c in columns}
    if len(lengths) != 1:
        raise WfdbError(f"signal files of {header.record_name} have different lengths {sorted(lengths)}")
    return header, np.column_stack(columns)


def write_record(directory, header: WfdbHeader, adc):
    """Write ``header`` and ``adc`` (``N x num_signals`` ints) as a WFDB record."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    adc = np.asarray(adc)
    if adc.shape[1] != header.num_signals:
        raise WfdbError("ADC array width does not match the signal count")
    for file_name in header.files():
        idx = _file_signals(header, file_name)
        offset = header.signals[idx[0]].byte_offset
        (directory / file_name).write_bytes(b"\0" * offset + encode_adc(adc[:, idx]))
    (directory / f"{header.record_name}.hea").write_text(format_header(header))
    return directory / header.record_name
