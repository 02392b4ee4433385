"""Layer primitives with hand-written forward and backward passes.

Tensors are plain ``numpy.ndarray`` objects in float64. Every forward
function returns its output together with a *cache* holding the values the
matching backward function needs; backward functions take ``(cache,
upstream)`` and return the gradients of the forward inputs in argument order.

:class:`GradTape` strings such calls together for reverse-mode
differentiation of a whole network, accumulating gradients for values used
more than once (tied weights, residual shortcuts).
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Any, Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

DTYPE = np.float64


class ShapeError(ValueError):
    """Raised when an input does not have the shape an operation expects."""


class InputTooShortError(ShapeError):
    """Raised when a 1D convolution input is shorter than its kernel."""


class ContractError(ValueError):
    """Raised when a backward call does not match the recorded forward."""


def as_tensor(x) -> np.ndarray:
    return np.asarray(x, dtype=DTYPE)


def _check_upstream(upstream, expected_shape, op):
    upstream = as_tensor(upstream)
    if upstream.shape != tuple(expected_shape):
        raise ContractError(
            f"{op}: upstream gradient has shape {upstream.shape}, "
            f"forward output had shape {tuple(expected_shape)}"
        )
    return upstream


# ---------------------------------------------------------------------------
# Tape
# ---------------------------------------------------------------------------

@dataclass
class TapeEntry:
    op: str
    inputs: tuple
    output: str
    backward: Callable
    cache: Any


@dataclass
class GradTape:
    """Record of forward operations over named values.

    Each entry maps input names to one output name. ``None`` in ``inputs``
    marks an argument that needs no gradient.
    """

    entries: list = field(default_factory=list)
    extras: dict = field(default_factory=dict)

    def record(self, op, inputs, output, backward, cache):
        self.entries.append(TapeEntry(op, tuple(inputs), output, backward, cache))

    def backward(self, seeds):
        """Propagate ``seeds`` (name -> gradient) back through the tape.

        Entries are visited once each, last to first. The returned dict
        holds the gradient of every named input that was reached, including
        leaves such as parameters.
        """
        grads = {k: as_tensor(v) for k, v in seeds.items()}
        for entry in reversed(self.entries):
            upstream = grads.pop(entry.output, None)
            if upstream is None:
                continue
            in_grads = entry.backward(entry.cache, upstream)
            for name, g in zip(entry.inputs, in_grads):
                if name is None:
                    continue
                if name in grads:
                    grads[name] = grads[name] + g
                else:
                    grads[name] = g
        return grads


# ---------------------------------------------------------------------------
# 1D convolution (valid padding, strided, no bias)
# ---------------------------------------------------------------------------

def conv1d_output_length(length, kernel_size, stride):
    if length < kernel_size:
        raise InputTooShortError(
            f"signal of length {length} is shorter than kernel size {kernel_size}"
        )
    return (length - kernel_size) // stride + 1


def conv1d_forward(signal, weights, stride=1):
    """Strided valid 1D convolution over the last axis of ``signal``.

    ``signal`` has shape ``(..., T)`` and ``weights`` shape ``(F, K)``. The
    output has shape ``(..., frames, F)`` with
    ``out[t, f] = sum_k weights[f, k] * signal[t * stride + k]``.
    """
    signal = as_tensor(signal)
    weights = as_tensor(weights)
    if weights.ndim != 2:
        raise ShapeError(f"conv1d weights must be (filters, kernel), got {weights.shape}")
    if stride < 1:
        raise ShapeError("stride must be >= 1")
    kernel = weights.shape[1]
    n_frames = conv1d_output_length(signal.shape[-1], kernel, stride)
    frames = sliding_window_view(signal, kernel, axis=-1)[..., ::stride, :]
    assert frames.shape[-2] == n_frames
    out = frames @ weights.T
    cache = (signal.shape, frames, weights, stride)
    return out, cache


def conv1d_backward(cache, upstream):
    signal_shape, frames, weights, stride = cache
    n_frames, kernel = frames.shape[-2:]
    upstream = _check_upstream(
        upstream, signal_shape[:-1] + (n_frames, weights.shape[0]), "conv1d"
    )
    n_filters = weights.shape[0]
    weight_grad = upstream.reshape(-1, n_filters).T @ frames.reshape(-1, kernel)
    frame_grad = upstream @ weights
    signal_grad = np.zeros(signal_shape, dtype=DTYPE)
    for t in range(n_frames):
        signal_grad[..., t * stride:t * stride + kernel] += frame_grad[..., t, :]
    return signal_grad, weight_grad


# ---------------------------------------------------------------------------
# Dilated 2D convolution ("same" zero padding, no bias)
# ---------------------------------------------------------------------------

def _check_conv2d(x, weights, dilation):
    if weights.ndim != 4:
        raise ShapeError(f"conv2d weights must be (F, kh, kw, C), got {weights.shape}")
    if x.ndim < 3:
        raise ShapeError(f"conv2d input must be (..., H, W, C), got {x.shape}")
    _, kh, kw, c = weights.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"'same' padding needs an odd kernel, got {kh}x{kw}")
    if x.shape[-1] != c:
        raise ShapeError(f"input has {x.shape[-1]} channels, weights expect {c}")
    dr, dc = dilation
    if dr < 1 or dc < 1:
        raise ShapeError(f"dilation must be >= 1, got {dilation}")


def conv2d_dilated_forward(x, weights, dilation=(1, 1)):
    """Dilated 2D convolution with zero "same" padding.

    ``x`` has shape ``(..., H, W, C)`` and ``weights`` shape ``(F, kh, kw, C)``.
    Taps that fall outside the input read zero, so the output keeps the
    input's spatial extents for any dilation, even one wider than the input.
    """
    x = as_tensor(x)
    weights = as_tensor(weights)
    dilation = tuple(int(d) for d in dilation)
    _check_conv2d(x, weights, dilation)
    n_filters, kh, kw, c = weights.shape
    dr, dc = dilation
    lead = x.shape[:-3]
    h, w = x.shape[-3:-1]
    xb = x.reshape((-1, h, w, c))
    pr, pc = dr * (kh // 2), dc * (kw // 2)
    xp = np.pad(xb, ((0, 0), (pr, pr), (pc, pc), (0, 0)))
    cols = np.empty((xb.shape[0], h, w, kh, kw, c), dtype=DTYPE)
    for a in range(kh):
        for b in range(kw):
            cols[:, :, :, a, b, :] = xp[:, a * dr:a * dr + h, b * dc:b * dc + w, :]
    cols = cols.reshape(-1, kh * kw * c)
    out = cols @ weights.reshape(n_filters, -1).T
    out = out.reshape(lead + (h, w, n_filters))
    return out, (x.shape, cols, weights, dilation)


def conv2d_dilated_backward(cache, upstream):
    x_shape, cols, weights, (dr, dc) = cache
    n_filters, kh, kw, c = weights.shape
    h, w = x_shape[-3:-1]
    upstream = _check_upstream(upstream, x_shape[:-1] + (n_filters,), "conv2d")
    g2d = upstream.reshape(-1, n_filters)
    weight_grad = (g2d.T @ cols).reshape(weights.shape)
    dcols = (g2d @ weights.reshape(n_filters, -1)).reshape(-1, h, w, kh, kw, c)
    pr, pc = dr * (kh // 2), dc * (kw // 2)
    dxp = np.zeros((dcols.shape[0], h + 2 * pr, w + 2 * pc, c), dtype=DTYPE)
    for a in range(kh):
        for b in range(kw):
            dxp[:, a * dr:a * dr + h, b * dc:b * dc + w, :] += dcols[:, :, :, a, b, :]
    input_grad = dxp[:, pr:pr + h, pc:pc + w, :].reshape(x_shape)
    return input_grad, weight_grad


# ---------------------------------------------------------------------------
# Elementwise and shape ops
# ---------------------------------------------------------------------------

def relu_forward(x):
    x = as_tensor(x)
    mask = x > 0
    return np.where(mask, x, 0.0), mask


def relu_backward(mask, upstream):
    upstream = _check_upstream(upstream, mask.shape, "relu")
    return (np.where(mask, upstream, 0.0),)


def relu(x):
    return relu_forward(x)[0]


def transpose_forward(x, axes):
    x = as_tensor(x)
    return np.ascontiguousarray(np.transpose(x, axes)), tuple(axes)


def transpose_backward(axes, upstream):
    return (np.ascontiguousarray(np.transpose(upstream, np.argsort(axes))),)


def add_backward(cache, upstream):
    return upstream, upstream


def global_avg_pool_forward(x):
    """Mean over the two spatial axes of ``(..., H, W, C)``."""
    x = as_tensor(x)
    if x.ndim < 3:
        raise ShapeError(f"pooling input must be (..., H, W, C), got {x.shape}")
    return x.mean(axis=(-3, -2)), x.shape


def global_avg_pool_backward(x_shape, upstream):
    h, w = x_shape[-3:-1]
    upstream = _check_upstream(upstream, x_shape[:-3] + x_shape[-1:], "global_avg_pool")
    g = upstream[..., None, None, :] / (h * w)
    return (np.broadcast_to(g, x_shape).copy(),)


# ---------------------------------------------------------------------------
# Batch normalization
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BatchNormState:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.9
    epsilon: float = 1e-3

    def __post_init__(self):
        n = len(self.gamma)
        for name in ("beta", "running_mean", "running_var"):
            if len(getattr(self, name)) != n:
                raise ShapeError(f"batchnorm {name} has length {len(getattr(self, name))}, expected {n}")
        if not 0 < self.momentum < 1:
            raise ValueError("momentum must lie in (0, 1)")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")

    @classmethod
    def initial(cls, channels, momentum=0.9, epsilon=1e-3):
        return cls(
            gamma=np.ones(channels),
            beta=np.zeros(channels),
            running_mean=np.zeros(channels),
            running_var=np.ones(channels),
            momentum=momentum,
            epsilon=epsilon,
        )

    @property
    def channels(self):
        return len(self.gamma)


def batchnorm_forward(x, state: BatchNormState, mode="train"):
    """Per-channel batch normalization over all axes but the last.

    Returns ``(y, cache, new_state)``. In ``"train"`` mode the batch moments
    normalize ``x`` and ``new_state`` carries the updated running moments; in
    ``"infer"`` mode the running moments are used and the state is returned
    unchanged.
    """
    x = as_tensor(x)
    if x.shape[-1] != state.channels:
        raise ShapeError(f"input has {x.shape[-1]} channels, batchnorm has {state.channels}")
    axes = tuple(range(x.ndim - 1))
    if mode == "train":
        mean = x.mean(axis=axes)
        var = ((x - mean) ** 2).mean(axis=axes)
        m = state.momentum
        new_state = replace(
            state,
            running_mean=m * state.running_mean + (1 - m) * mean,
            running_var=m * state.running_var + (1 - m) * var,
        )
    elif mode == "infer":
        mean, var = state.running_mean, state.running_var
        new_state = state
    else:
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    inv_std = 1.0 / np.sqrt(var + state.epsilon)
    xhat = (x - mean) * inv_std
    y = state.gamma * xhat + state.beta
    return y, (mode, xhat, inv_std, state.gamma), new_state


def batchnorm_backward(cache, upstream):
    """Gradients ``(x_grad, gamma_grad, beta_grad)``.

    In train mode the dependence of the batch mean and variance on ``x`` is
    differentiated through.
    """
    mode, xhat, inv_std, gamma = cache
    upstream = _check_upstream(upstream, xhat.shape, "batchnorm")
    axes = tuple(range(xhat.ndim - 1))
    beta_grad = upstream.sum(axis=axes)
    gamma_grad = (upstream * xhat).sum(axis=axes)
    dxhat = upstream * gamma
    if mode == "infer":
        return dxhat * inv_std, gamma_grad, beta_grad
    n = xhat.size // xhat.shape[-1]
    x_grad = inv_std / n * (
        n * dxhat - dxhat.sum(axis=axes) - xhat * (dxhat * xhat).sum(axis=axes)
    )
    return x_grad, gamma_grad, beta_grad


# ---------------------------------------------------------------------------
# Dense + softmax + cross-entropy
# ---------------------------------------------------------------------------

def softmax(logits):
    logits = as_tensor(logits)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def dense_softmax_xent(features, weights, bias, labels=None):
    """Fully connected layer followed by softmax and mean cross-entropy.

    ``features`` is ``(D,)`` or ``(N, D)``, ``weights`` is ``(D, K)``.
    Returns ``(probs, loss, cache)``; ``loss`` is ``None`` when no labels are
    given. The loss is averaged over the batch.
    """
    features = as_tensor(features)
    single = features.ndim == 1
    f2 = features[None, :] if single else features
    weights = as_tensor(weights)
    bias = as_tensor(bias)
    if f2.ndim != 2 or weights.shape != (f2.shape[1], bias.shape[0]):
        raise ShapeError(
            f"dense shapes do not agree: features {features.shape}, "
            f"weights {weights.shape}, bias {bias.shape}"
        )
    logits = f2 @ weights + bias
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_norm
    probs = np.exp(log_probs)
    loss = None
    onehot = None
    if labels is not None:
        labels = np.atleast_1d(np.asarray(labels, dtype=np.intp))
        if labels.shape != (f2.shape[0],):
            raise ShapeError(f"expected {f2.shape[0]} labels, got {labels.shape}")
        if labels.min() < 0 or labels.max() >= bias.shape[0]:
            raise ValueError("label out of range")
        onehot = np.zeros_like(probs)
        onehot[np.arange(len(labels)), labels] = 1.0
        loss = float(-log_probs[np.arange(len(labels)), labels].mean())
    cache = (single, f2, weights, probs, onehot)
    return (probs[0] if single else probs), loss, cache


def dense_softmax_xent_backward(cache, upstream=1.0):
    """Gradients ``(features_grad, weights_grad, bias_grad)`` of the loss."""
    single, f2, weights, probs, onehot = cache
    if onehot is None:
        raise ContractError("cross-entropy backward needs the forward call to have labels")
    upstream = float(np.asarray(upstream))
    dlogits = (probs - onehot) * (upstream / probs.shape[0])
    features_grad = dlogits @ weights.T
    if single:
        features_grad = features_grad[0]
    return features_grad, f2.T @ dlogits, dlogits.sum(axis=0)


# ---------------------------------------------------------------------------
# Finite-difference gradient checking
# ---------------------------------------------------------------------------

@dataclass
class GradCheckReport:
    errors: dict
    tol: float

    @property
    def max_rel_error(self):
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self):
        return self.max_rel_error <= self.tol

    def __str__(self):
        status = "ok" if self.passed else "FAILED"
        worst = max(self.errors, key=self.errors.get, default="-")
        return f"grad_check {status}: max rel err {self.max_rel_error:.3e} ({worst}), tol {self.tol:g}"


def relative_error(a, b, floor=0.0):
    """Normwise relative error ``|a - b| / max(|a|, |b|, floor)``.

    ``floor`` keeps exactly-zero gradients from turning finite-difference
    round-off into a relative error of 1; below it the check becomes an
    absolute one at ``tol * floor``.
    """
    a = np.ravel(a)
    b = np.ravel(b)
    scale = max(np.linalg.norm(a), np.linalg.norm(b), floor)
    if scale == 0:
        return 0.0
    return float(np.linalg.norm(a - b) / scale)


def numerical_gradient(fn, params, name, h=1e-6, coords=None):
    """Central differences of scalar ``fn(params)`` w.r.t. ``params[name]``."""
    base = params[name]
    flat_idx = range(base.size) if coords is None else coords
    out = np.zeros(len(flat_idx))
    for i, k in enumerate(flat_idx):
        idx = np.unravel_index(k, base.shape)
        plus = base.copy()
        plus[idx] += h
        minus = base.copy()
        minus[idx] -= h
        f_plus = fn({**params, name: plus})
        f_minus = fn({**params, name: minus})
        out[i] = (f_plus - f_minus) / (2 * h)
    return out


def grad_check(fn, params, h=1e-6, tol=1e-5, max_coords=None, rng=None, names: Sequence[str] | None = None,
               floor=1e-4, loss_fn=None):
    """Compare analytic gradients with central finite differences.

    ``fn(params)`` must return ``(loss, grads)`` where ``grads`` maps each
    parameter name to its analytic gradient. With ``max_coords`` set, each
    group is checked on a random subset of at most that many coordinates.
    The per-group error is :func:`relative_error` with ``floor``.
    ``loss_fn(params)``, if given, returns the loss alone and is used for
    the perturbed evaluations.
    """
    params = {k: as_tensor(v) for k, v in params.items()}
    _, grads = fn(params)

    def loss_only(p):
        return float(loss_fn(p) if loss_fn is not None else fn(p)[0])

    rng = np.random.default_rng(rng)
    errors = {}
    for name in names or list(params):
        size = params[name].size
        coords = None
        if max_coords is not None and size > max_coords:
            coords = np.sort(rng.choice(size, max_coords, replace=False))
        numeric = numerical_gradient(loss_only, params, name, h=h, coords=coords)
        analytic = np.ravel(grads[name])
        if coords is not None:
            analytic = analytic[coords]
        errors[name] = relative_error(analytic, numeric, floor)
    return GradCheckReport(errors, tol)
