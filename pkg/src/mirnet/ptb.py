"""Turning PTB diagnostic ECG records into labeled 5 s windows and subject splits."""
from __future__ import annotations

import math
import struct
import warnings
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import filtfilt

from . import wfdb
from .errors import EmptyDataError
from .model import CLASS_NAMES, ClassLabel
from .seeding import derive_rng

STANDARD_LEADS = ("i", "ii", "iii", "avr", "avl", "avf", "v1", "v2", "v3", "v4", "v5", "v6")
NATIVE_FS = 1000.0
TARGET_FS = 100.0
DECIMATION = 10
SEGMENT_LENGTH = 500

DATASET_MAGIC = b"MIDS"
DATASET_VERSION = 1


class MissingLeadsError(ValueError):
    pass


class DatasetFileError(ValueError):
    pass


@dataclass
class EcgRecord:
    subject_id: str
    record_id: str
    signal: np.ndarray  # N x 12, mV, 100 Hz
    label: ClassLabel


@dataclass
class LabeledSegment:
    window: np.ndarray  # 500 x 12, mV
    label: int
    subject_id: str


@dataclass(frozen=True)
class Rejected:
    reason: str
    detail: str = ""

    def __str__(self):
        return f"{self.reason}: {self.detail}" if self.detail else self.reason


@dataclass(frozen=True)
class SplitPlan:
    fold: int
    train: tuple
    val: tuple
    test: tuple


# ---------------------------------------------------------------------------
# Signals
# ---------------------------------------------------------------------------

def select_leads(header: wfdb.WfdbHeader, signal):
    """Columns of the 12 standard leads, in standard order. Frank leads are dropped."""
    names = header.signal_names
    missing = [lead for lead in STANDARD_LEADS if lead not in names]
    if missing:
        raise MissingLeadsError(f"record {header.record_name} lacks leads {missing}")
    return np.asarray(signal)[:, [names.index(lead) for lead in STANDARD_LEADS]]


def downsample_10x(signal):
    """1000 Hz -> 100 Hz along axis 0.

    A width-10 moving average run forward and backward (zero phase) is
    applied before keeping every 10th sample, so ``N`` samples become
    ``ceil(N / 10)``.
    """
    signal = np.asarray(signal, dtype=np.float64)
    n = signal.shape[0]
    if n == 0:
        return signal.copy()
    taps = np.full(DECIMATION, 1.0 / DECIMATION)
    if n > 1:
        smoothed = filtfilt(taps, [1.0], signal, axis=0, padlen=min(3 * DECIMATION, n - 1))
    else:
        smoothed = signal.copy()
    return smoothed[::DECIMATION]


def segment(record: EcgRecord, length=SEGMENT_LENGTH):
    """Consecutive non-overlapping windows from sample 0; the remainder is dropped."""
    n = len(record.signal) // length
    return [
        LabeledSegment(record.signal[i * length:(i + 1) * length].copy(), int(record.label), record.subject_id)
        for i in range(n)
    ]


# ---------------------------------------------------------------------------
# Labels
# ---------------------------------------------------------------------------

def _norm(text):
    return "".join(text.split()).casefold()


_LOCALIZATIONS = {_norm(name): ClassLabel(i) for i, name in enumerate(CLASS_NAMES) if i > 0}


def _comment_field(header, key):
    key = _norm(key)
    for line in header.comments:
        body = line.lstrip("#")
        if ":" not in body:
            continue
        k, _, v = body.partition(":")
        if _norm(k) == key:
            return v.strip()
    return None


def label_record(header: wfdb.WfdbHeader):
    """Class label from the PTB diagnosis comments, or :class:`Rejected`.

    Healthy controls are class 0. Myocardial infarctions map to classes
    1-6 by their acute-infarction localization; other localizations and
    other diagnoses are rejected with a reason.
    """
    reason = _comment_field(header, "Reason for admission")
    if reason is None or reason.lower() in ("", "n/a"):
        return Rejected("missing-metadata", "no reason for admission")
    reason_n = _norm(reason)
    if reason_n == _norm("Healthy control"):
        return ClassLabel.HEALTHY
    if reason_n != _norm("Myocardial infarction"):
        return Rejected("other-diagnosis", reason)
    loc = _comment_field(header, "Acute infarction (localization)")
    if loc is None or loc.lower() in ("", "n/a"):
        return Rejected("missing-metadata", "no infarction localization")
    label = _LOCALIZATIONS.get(_norm(loc))
    if label is None:
        return Rejected("out-of-taxonomy", loc)
    return label


# ---------------------------------------------------------------------------
# Subject-disjoint splits
# ---------------------------------------------------------------------------

def _round_half_up(x):
    return int(math.floor(x + 0.5))


def split_sizes(n, val_frac=0.1, test_frac=0.3):
    """``(train, val, test)`` counts; train takes whatever rounding leaves."""
    n_test = _round_half_up(test_frac * n)
    n_val = _round_half_up(val_frac * n)
    if n >= 3:
        n_test, n_val = max(1, n_test), max(1, n_val)
    n_val = min(n_val, n - n_test)
    return n - n_test - n_val, n_val, n_test


def make_splits(subject_labels, fold_count=5, seed=0, val_frac=0.1, test_frac=0.3):
    """Independent seeded 60/10/30 subject splits, one per fold.

    ``subject_labels`` maps subject id -> class. Each class is shuffled and
    divided separately so every class reaches every set when it has at
    least three subjects.
    """
    by_class = defaultdict(list)
    for subject, label in subject_labels.items():
        by_class[int(label)].append(subject)
    small = sorted(c for c, subs in by_class.items() if len(subs) < 3 * fold_count)
    if small:
        warnings.warn(
            f"classes {small} have fewer than {3 * fold_count} subjects; stratification is approximate",
            stacklevel=2,
        )
    plans = []
    for fold in range(fold_count):
        rng = derive_rng(seed, "folds", fold)
        train, val, test = [], [], []
        for c in sorted(by_class):
            subjects = sorted(by_class[c])
            order = rng.permutation(len(subjects))
            shuffled = [subjects[i] for i in order]
            _, n_val, n_test = split_sizes(len(shuffled), val_frac, test_frac)
            test += shuffled[:n_test]
            val += shuffled[n_test:n_test + n_val]
            train += shuffled[n_test + n_val:]
        plans.append(SplitPlan(fold, tuple(train), tuple(val), tuple(test)))
    return plans


def subject_classes(segments):
    """Class of each subject (its most frequent segment label, lowest on ties)."""
    counts = defaultdict(Counter)
    for s in segments:
        counts[s.subject_id][int(s.label)] += 1
    return {subj: min(c, key=lambda k: (-c[k], k)) for subj, c in counts.items()}


# ---------------------------------------------------------------------------
# Dataset file
# ---------------------------------------------------------------------------

def stack_segments(segments):
    """``(X, y, subjects)`` arrays from a list of segments."""
    if not segments:
        return np.zeros((0, SEGMENT_LENGTH, len(STANDARD_LEADS))), np.zeros(0, dtype=int), np.array([], dtype=object)
    X = np.stack([np.asarray(s.window, dtype=np.float64) for s in segments])
    y = np.array([int(s.label) for s in segments])
    subjects = np.array([s.subject_id for s in segments], dtype=object)
    return X, y, subjects


def dump_dataset(segments) -> bytes:
    chunks = [DATASET_MAGIC, bytes([DATASET_VERSION]), struct.pack("<I", len(segments))]
    for s in segments:
        sid = s.subject_id.encode("ascii")
        if len(sid) > 255:
            raise DatasetFileError(f"subject id {s.subject_id!r} is longer than 255 bytes")
        window = np.asarray(s.window)
        if window.shape != (SEGMENT_LENGTH, len(STANDARD_LEADS)):
            raise DatasetFileError(f"segment window has shape {window.shape}")
        chunks += [bytes([len(sid)]), sid, bytes([int(s.label)]), window.astype("<f4").tobytes()]
    return b"".join(chunks)


def parse_dataset(data: bytes):
    if data[:4] != DATASET_MAGIC:
        raise DatasetFileError("not a dataset file (bad magic)")
    if len(data) < 9:
        raise DatasetFileError("dataset file truncated in header")
    if data[4] != DATASET_VERSION:
        raise DatasetFileError(f"unsupported dataset version {data[4]}")
    (count,) = struct.unpack_from("<I", data, 5)
    pos = 9
    window_bytes = 4 * SEGMENT_LENGTH * len(STANDARD_LEADS)
    segments = []
    for k in range(count):
        if pos >= len(data):
            raise DatasetFileError(f"dataset file truncated at segment {k}")
        n = data[pos]
        end = pos + 1 + n + 1 + window_bytes
        if end > len(data):
            raise DatasetFileError(f"dataset file truncated at segment {k}")
        sid = data[pos + 1:pos + 1 + n].decode("ascii")
        label = data[pos + 1 + n]
        window = np.frombuffer(data, dtype="<f4", count=window_bytes // 4, offset=pos + 2 + n)
        segments.append(LabeledSegment(window.astype(np.float64).reshape(SEGMENT_LENGTH, -1), label, sid))
        pos = end
    if pos != len(data):
        raise DatasetFileError(f"{len(data) - pos} trailing bytes in dataset file")
    return segments


def write_dataset(path, segments):
    Path(path).write_bytes(dump_dataset(segments))


def read_dataset(path):
    return parse_dataset(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# Ingestion
# ---------------------------------------------------------------------------

@dataclass
class IngestResult:
    records: list = field(default_factory=list)
    segments: list = field(default_factory=list)
    rejected: dict = field(default_factory=dict)

    def subjects_per_class(self):
        per_class = defaultdict(set)
        for r in self.records:
            per_class[int(r.label)].add(r.subject_id)
        return {CLASS_NAMES[c]: len(per_class[c]) for c in range(len(CLASS_NAMES))}

    def rejection_counts(self):
        return dict(sorted(Counter(r.reason for r in self.rejected.values()).items()))


def load_record(path, subject_id=None):
    """Read one WFDB record and turn it into an :class:`EcgRecord` or :class:`Rejected`."""
    path = Path(path)
    header, signal = wfdb.read_record(path)
    label = label_record(header)
    if isinstance(label, Rejected):
        return label
    if header.sampling_frequency != NATIVE_FS:
        return Rejected("unsupported-rate", f"{header.sampling_frequency:g} Hz")
    try:
        leads = select_leads(header, signal)
    except MissingLeadsError as exc:
        return Rejected("missing-leads", str(exc))
    if subject_id is None:
        subject_id = path.parent.name or header.record_name
    return EcgRecord(subject_id, header.record_name, downsample_10x(leads), label)


def read_index(index_path):
    """Record paths listed one per line, relative to the index file's directory."""
    index_path = Path(index_path)
    root = index_path.parent
    paths = []
    for line in index_path.read_text().splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            paths.append(root / line)
    return paths


def ingest(index_path):
    """Labeled windows from every record listed in the index file."""
    result = IngestResult()
    for path in read_index(index_path):
        outcome = load_record(path)
        key = str(path)
        if isinstance(outcome, Rejected):
            result.rejected[key] = outcome
            continue
        result.records.append(outcome)
        result.segments.extend(segment(outcome))
    if not result.records:
        raise EmptyDataError(f"no record in {index_path} was accepted")
    return result
