import numpy as np
from sklearn.utils.validation import check_array, column_or_1d

from .model import DEFAULT_ARCH
from .tensor_ops import ShapeError


def check_segments(X, arch=DEFAULT_ARCH):
    """Validate a batch of ``n x segment_length x n_leads`` ECG windows."""
    X = check_array(X, allow_nd=True, ensure_2d=False, dtype=np.float64)
    expected = (arch.segment_length, arch.n_leads)
    if X.ndim != 3 or X.shape[1:] != expected:
        raise ShapeError(f"expected segments of shape (n, {expected[0]}, {expected[1]}), got {X.shape}")
    return X


def check_labels(y, n_samples, n_classes):
    y = column_or_1d(y)
    if len(y) != n_samples:
        raise ValueError(f"got {len(y)} labels for {n_samples} segments")
    if not np.issubdtype(y.dtype, np.integer):
        if not np.all(np.equal(np.mod(y, 1), 0)):
            raise ValueError("labels must be integer class indices")
        y = y.astype(int)
    if len(y) and (y.min() < 0 or y.max() >= n_classes):
        raise ValueError(f"labels must lie in [0, {n_classes - 1}]")
    return y
