import numpy as np
import pytest

from mirnet import model as M
from mirnet import wfdb

# small enough for exhaustive finite differences through the whole network
TINY_ARCH = M.Architecture(
    n_leads=3, segment_length=40, frontend_filters=4, frontend_kernel=10,
    frontend_stride=5, channels=3, n_classes=3,
)


def naive_conv1d(signal, weights, stride):
    n_filters, k = weights.shape
    frames = (len(signal) - k) // stride + 1
    out = np.zeros((frames, n_filters))
    for t in range(frames):
        for f in range(n_filters):
            for j in range(k):
                out[t, f] += weights[f, j] * signal[t * stride + j]
    return out


def naive_conv2d(x, weights, dilation):
    """Direct tap enumeration, one output pixel at a time."""
    h, w, c = x.shape
    n_filters, kh, kw, _ = weights.shape
    dr, dc = dilation
    out = np.zeros((h, w, n_filters))
    for i in range(h):
        for j in range(w):
            for f in range(n_filters):
                acc = 0.0
                for a in range(-(kh // 2), kh // 2 + 1):
                    for b in range(-(kw // 2), kw // 2 + 1):
                        r, s = i + a * dr, j + b * dc
                        if 0 <= r < h and 0 <= s < w:
                            acc += weights[f, a + kh // 2, b + kw // 2, :] @ x[r, s, :]
                out[i, j, f] = acc
    return out


def central_diff(f, x, h=1e-6):
    """Independent central-difference gradient of scalar ``f`` at array ``x``."""
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        xp = x.copy()
        xp[idx] += h
        xm = x.copy()
        xm[idx] -= h
        g[idx] = (f(xp) - f(xm)) / (2 * h)
    return g


def rel_err(a, b):
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    return 0.0 if scale == 0 else float(np.linalg.norm(a - b) / scale)


PTB_LEADS = ["i", "ii", "iii", "avr", "avl", "avf", "v1", "v2", "v3", "v4", "v5", "v6", "vx", "vy", "vz"]


def ptb_comments(reason, localization=None):
    lines = ["# age: 60", "# sex: male", "# ECG date: 01/01/1990", "# Diagnose:",
             f"# Reason for admission: {reason}"]
    if localization is not None:
        lines.append(f"# Acute infarction (localization): {localization}")
    lines.append("# Former infarction (localization): no")
    return lines


def ptb_header(record_name, n_samples, comments, gain=2000.0, baseline=0):
    """A PTB-style header: 12 leads in .dat and 3 Frank leads in .xyz."""
    signals = []
    for k, lead in enumerate(PTB_LEADS):
        ext = "xyz" if lead.startswith("v") and lead[1:] in "xyz" else "dat"
        signals.append(wfdb.SignalSpec(
            file_name=f"{record_name}.{ext}", fmt=16, gain=gain, baseline=baseline,
            units="mV", adc_resolution=16, adc_zero=0, init_value=0, checksum=0,
            block_size=0, description=lead,
        ))
    return wfdb.WfdbHeader(record_name, len(signals), 1000.0, n_samples, signals, list(comments))


def write_ptb_record(root, subject, record_name, n_samples, reason, localization=None, seed=0):
    rng = np.random.default_rng(seed)
    header = ptb_header(record_name, n_samples, ptb_comments(reason, localization))
    adc = rng.integers(-3000, 3000, size=(n_samples, len(PTB_LEADS)))
    wfdb.write_record(root / subject, header, adc)
    return f"{subject}/{record_name}"


@pytest.fixture
def ptb_corpus(tmp_path):
    """Three accepted records from three subjects plus two rejected ones."""
    paths = [
        write_ptb_record(tmp_path, "patient001", "s0001_re", 11520, "Myocardial infarction", "infero-latera l", 1),
        write_ptb_record(tmp_path, "patient002", "s0002_re", 10000, "Healthy control", None, 2),
        write_ptb_record(tmp_path, "patient003", "s0003_re", 5000, "Myocardial infarction", "anterior", 3),
        write_ptb_record(tmp_path, "patient004", "s0004_re", 5000, "Myocardial infarction", "posterior", 4),
        write_ptb_record(tmp_path, "patient005", "s0005_re", 5000, "Cardiomyopathy", None, 5),
    ]
    index = tmp_path / "RECORDS"
    index.write_text("\n".join(paths) + "\n")
    return index


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
