"""Dilated residual network over a per-lead 1D convolutional front-end.

Layout of one forward pass (default sizes)::

    B x 500 x 12 raw ECG (mV, 100 Hz)
      -> shared conv1d (20 filters, kernel 100, stride 50) + ReLU per lead
      -> B x 9 x 20 x 12 pseudo time-frequency volume
      -> conv 3x3 (7 filters)
      -> 3 residual blocks, each [conv, ReLU, BN] x 2 + identity shortcut,
         dilations (1,1) (1,1) | (2,2) (2,2) | (4,4) (8,8)
      -> conv 3x3 dilation (16,16) -> BN -> global average pool
      -> dense 7x7 + softmax
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np

from . import tensor_ops as ops
from .tensor_ops import BatchNormState, GradTape, ShapeError


class ClassLabel(enum.IntEnum):
    HEALTHY = 0
    ANTERIOR = 1
    ANTERO_LATERAL = 2
    ANTERO_SEPTAL = 3
    INFERIOR = 4
    INFERO_LATERAL = 5
    INFERO_POSTERO_LATERAL = 6

    @property
    def display_name(self):
        return CLASS_NAMES[self.value]


CLASS_NAMES = (
    "healthy",
    "anterior",
    "antero-lateral",
    "antero-septal",
    "inferior",
    "infero-lateral",
    "infero-postero-lateral",
)
N_CLASSES = len(CLASS_NAMES)

# conv_in, block1 (x2), block2 (x2), block3 (x2), final conv
DILATION_SCHEDULE = ((1, 1), (1, 1), (1, 1), (2, 2), (2, 2), (4, 4), (8, 8), (16, 16))


@dataclass(frozen=True)
class Architecture:
    """Layer sizes. The defaults are the published configuration."""

    n_leads: int = 12
    segment_length: int = 500
    frontend_filters: int = 20
    frontend_kernel: int = 100
    frontend_stride: int = 50
    channels: int = 7
    kernel: tuple = (3, 3)
    n_classes: int = N_CLASSES
    dilations: tuple = DILATION_SCHEDULE
    bn_momentum: float = 0.9
    bn_epsilon: float = 1e-3

    @property
    def n_frames(self):
        return ops.conv1d_output_length(self.segment_length, self.frontend_kernel, self.frontend_stride)

    @property
    def n_res_convs(self):
        return len(self.dilations) - 2

    @property
    def n_bn(self):
        return self.n_res_convs + 1

    def __post_init__(self):
        if self.n_res_convs < 0 or self.n_res_convs % 2:
            raise ValueError("dilation schedule must be conv_in + pairs of residual convs + final conv")


DEFAULT_ARCH = Architecture()


@dataclass(frozen=True)
class ModelParams:
    """All arrays of the network.

    The front-end filter bank is stored once and shared by every lead.
    Convolutions have no bias terms at all.
    """

    frontend_w: np.ndarray
    conv_in_w: np.ndarray
    res_conv_w: tuple
    final_conv_w: np.ndarray
    bn: tuple
    dense_w: np.ndarray
    dense_b: np.ndarray
    arch: Architecture = field(default=DEFAULT_ARCH, compare=False)

    def trainables(self):
        """Trainable arrays keyed by canonical name, in canonical order."""
        out = {"frontend_w": self.frontend_w, "conv_in_w": self.conv_in_w}
        for i, w in enumerate(self.res_conv_w):
            out[f"res_conv_w.{i}"] = w
        out["final_conv_w"] = self.final_conv_w
        for i, s in enumerate(self.bn):
            out[f"bn.{i}.gamma"] = s.gamma
            out[f"bn.{i}.beta"] = s.beta
        out["dense_w"] = self.dense_w
        out["dense_b"] = self.dense_b
        return out

    def named_arrays(self):
        """Every array, trainable or not, in the canonical serialization order."""
        out = self.trainables()
        for i, s in enumerate(self.bn):
            out[f"bn.{i}.running_mean"] = s.running_mean
            out[f"bn.{i}.running_var"] = s.running_var
        return out

    def with_trainables(self, arrays):
        """Copy with the trainable arrays replaced; running moments are kept."""
        bn = tuple(
            replace(s, gamma=arrays[f"bn.{i}.gamma"], beta=arrays[f"bn.{i}.beta"])
            for i, s in enumerate(self.bn)
        )
        return replace(
            self,
            frontend_w=arrays["frontend_w"],
            conv_in_w=arrays["conv_in_w"],
            res_conv_w=tuple(arrays[f"res_conv_w.{i}"] for i in range(len(self.res_conv_w))),
            final_conv_w=arrays["final_conv_w"],
            bn=bn,
            dense_w=arrays["dense_w"],
            dense_b=arrays["dense_b"],
        )

    def with_bn(self, bn_states):
        return replace(self, bn=tuple(bn_states))

    @classmethod
    def from_named_arrays(cls, arrays, arch=DEFAULT_ARCH):
        bn = tuple(
            BatchNormState(
                gamma=arrays[f"bn.{i}.gamma"],
                beta=arrays[f"bn.{i}.beta"],
                running_mean=arrays[f"bn.{i}.running_mean"],
                running_var=arrays[f"bn.{i}.running_var"],
                momentum=arch.bn_momentum,
                epsilon=arch.bn_epsilon,
            )
            for i in range(arch.n_bn)
        )
        return cls(
            frontend_w=arrays["frontend_w"],
            conv_in_w=arrays["conv_in_w"],
            res_conv_w=tuple(arrays[f"res_conv_w.{i}"] for i in range(arch.n_res_convs)),
            final_conv_w=arrays["final_conv_w"],
            bn=bn,
            dense_w=arrays["dense_w"],
            dense_b=arrays["dense_b"],
            arch=arch,
        )


def expected_shapes(arch=DEFAULT_ARCH):
    """Shape of every named array for ``arch``, in canonical order."""
    kh, kw = arch.kernel
    c = arch.channels
    shapes = {
        "frontend_w": (arch.frontend_filters, arch.frontend_kernel),
        "conv_in_w": (c, kh, kw, arch.n_leads),
    }
    for i in range(arch.n_res_convs):
        shapes[f"res_conv_w.{i}"] = (c, kh, kw, c)
    shapes["final_conv_w"] = (c, kh, kw, c)
    for i in range(arch.n_bn):
        shapes[f"bn.{i}.gamma"] = (c,)
        shapes[f"bn.{i}.beta"] = (c,)
    shapes["dense_w"] = (c, arch.n_classes)
    shapes["dense_b"] = (arch.n_classes,)
    for i in range(arch.n_bn):
        shapes[f"bn.{i}.running_mean"] = (c,)
        shapes[f"bn.{i}.running_var"] = (c,)
    return shapes


def _glorot_uniform(rng, shape, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_model(seed=0, arch=DEFAULT_ARCH):
    """Randomly initialized parameters, deterministic in ``seed``.

    Weights are Glorot-uniform with fan-in/fan-out counted over the
    receptive field; batch norms start at gamma=1, beta=0, mean 0, var 1;
    the dense bias starts at zero.
    """
    rng = np.random.default_rng(seed)
    kh, kw = arch.kernel
    rf = kh * kw
    c = arch.channels
    frontend_w = _glorot_uniform(
        rng, (arch.frontend_filters, arch.frontend_kernel),
        arch.frontend_kernel, arch.frontend_kernel * arch.frontend_filters,
    )
    conv_in_w = _glorot_uniform(rng, (c, kh, kw, arch.n_leads), rf * arch.n_leads, rf * c)
    res = tuple(_glorot_uniform(rng, (c, kh, kw, c), rf * c, rf * c) for _ in range(arch.n_res_convs))
    final = _glorot_uniform(rng, (c, kh, kw, c), rf * c, rf * c)
    dense_w = _glorot_uniform(rng, (c, arch.n_classes), c, arch.n_classes)
    bn = tuple(
        BatchNormState.initial(c, arch.bn_momentum, arch.bn_epsilon) for _ in range(arch.n_bn)
    )
    return ModelParams(
        frontend_w=frontend_w,
        conv_in_w=conv_in_w,
        res_conv_w=res,
        final_conv_w=final,
        bn=bn,
        dense_w=dense_w,
        dense_b=np.zeros(arch.n_classes),
        arch=arch,
    )


def count_parameters(params: ModelParams, by_group=False):
    """Number of trainable scalars (running moments excluded)."""
    sizes = {k: int(v.size) for k, v in params.trainables().items()}
    if by_group:
        return sizes
    return sum(sizes.values())


# ---------------------------------------------------------------------------
# Forward pass
# ---------------------------------------------------------------------------

def _conv2d(tape, x_name, x, w_name, w, dilation, out_name):
    y, cache = ops.conv2d_dilated_forward(x, w, dilation)
    tape.record("conv2d", (x_name, w_name), out_name, ops.conv2d_dilated_backward, cache)
    return y


def _relu(tape, x_name, x, out_name):
    y, mask = ops.relu_forward(x)
    tape.record("relu", (x_name,), out_name, ops.relu_backward, mask)
    return y


def _batchnorm(tape, x_name, x, index, state, mode, out_name):
    y, cache, new_state = ops.batchnorm_forward(x, state, mode)
    tape.record(
        "batchnorm", (x_name, f"bn.{index}.gamma", f"bn.{index}.beta"), out_name,
        ops.batchnorm_backward, cache,
    )
    tape.extras.setdefault("bn_states", {})[index] = new_state
    return y


def _frontend(tape, x, params):
    arch = params.arch
    # leads become a batch axis so one filter bank serves all of them
    xt, axes = ops.transpose_forward(x, (0, 2, 1))
    tape.record("transpose", ("input",), "input_t", ops.transpose_backward, axes)
    z, cache = ops.conv1d_forward(xt, params.frontend_w, arch.frontend_stride)
    tape.record("conv1d", ("input_t", "frontend_w"), "fe_conv", ops.conv1d_backward, cache)
    z = _relu(tape, "fe_conv", z, "fe_relu")
    # B x L x frames x F -> B x frames x F x L
    v, axes = ops.transpose_forward(z, (0, 2, 3, 1))
    tape.record("transpose", ("fe_relu",), "frontend", ops.transpose_backward, axes)
    return v


def check_input(batch, arch=DEFAULT_ARCH):
    batch = ops.as_tensor(batch)
    if batch.ndim == 2:
        batch = batch[None]
    expected = (arch.segment_length, arch.n_leads)
    if batch.ndim != 3 or batch.shape[1:] != expected:
        raise ShapeError(f"expected a batch of {expected[0]}x{expected[1]} segments, got shape {batch.shape}")
    return batch


def frontend(batch, params):
    """Per-lead pseudo time-frequency volume, ``B x frames x filters x leads``."""
    batch = check_input(batch, params.arch)
    return _frontend(GradTape(), batch, params)


def _residual_block(tape, x_name, x, params, block, mode):
    i1, i2 = 2 * block, 2 * block + 1
    d1, d2 = params.arch.dilations[1 + i1], params.arch.dilations[1 + i2]
    p = f"block{block}"
    h = _conv2d(tape, x_name, x, f"res_conv_w.{i1}", params.res_conv_w[i1], d1, f"{p}.conv1")
    h = _relu(tape, f"{p}.conv1", h, f"{p}.relu1")
    h = _batchnorm(tape, f"{p}.relu1", h, i1, params.bn[i1], mode, f"{p}.bn1")
    h = _conv2d(tape, f"{p}.bn1", h, f"res_conv_w.{i2}", params.res_conv_w[i2], d2, f"{p}.conv2")
    h = _relu(tape, f"{p}.conv2", h, f"{p}.relu2")
    h = _batchnorm(tape, f"{p}.relu2", h, i2, params.bn[i2], mode, f"{p}.bn2")
    tape.record("add", (f"{p}.bn2", x_name), f"{p}.out", ops.add_backward, None)
    return h + x


def residual_block(x, params, block, mode="infer"):
    """Apply residual block ``block`` (0, 1 or 2) of ``params`` to ``x``.

    Returns ``(y, tape)``; the tape input is named ``"x"``.
    """
    tape = GradTape()
    y = _residual_block(tape, "x", ops.as_tensor(x), params, block, mode)
    return y, tape


def forward(batch, params: ModelParams, mode="infer", labels=None):
    """Run the network on ``batch`` (``B x 500 x 12``).

    Returns ``(probs, tape)``. ``tape.extras`` holds the intermediate
    ``shapes``, the updated batch-norm states (``bn_states``, train mode)
    and, when ``labels`` are given, the mean cross-entropy ``loss``.
    """
    x = check_input(batch, params.arch)
    tape = GradTape()
    v = _frontend(tape, x, params)
    return _body(tape, "frontend", v, params, mode, labels), tape


def _body(tape, name, v, params, mode, labels):
    """Everything after the front-end, recorded on ``tape``."""
    arch = params.arch
    shapes = tape.extras.setdefault("shapes", {})
    shapes["frontend"] = v.shape
    h = _conv2d(tape, name, v, "conv_in_w", params.conv_in_w, arch.dilations[0], "conv_in")
    shapes["conv_in"] = h.shape
    name = "conv_in"
    for block in range(arch.n_res_convs // 2):
        h = _residual_block(tape, name, h, params, block, mode)
        name = f"block{block}.out"
        shapes[name] = h.shape
    h = _conv2d(tape, name, h, "final_conv_w", params.final_conv_w, arch.dilations[-1], "final_conv")
    shapes["final_conv"] = h.shape
    last_bn = arch.n_bn - 1
    h = _batchnorm(tape, "final_conv", h, last_bn, params.bn[last_bn], mode, "final_bn")
    shapes["final_bn"] = h.shape
    pooled, cache = ops.global_avg_pool_forward(h)
    tape.record("global_avg_pool", ("final_bn",), "pooled", ops.global_avg_pool_backward, cache)
    probs, loss, cache = ops.dense_softmax_xent(pooled, params.dense_w, params.dense_b, labels)
    if labels is not None:
        tape.record(
            "dense_softmax_xent", ("pooled", "dense_w", "dense_b"), "loss",
            ops.dense_softmax_xent_backward, cache,
        )
        tape.extras["loss"] = loss
    shapes["probs"] = probs.shape
    return probs


def backward(tape, params: ModelParams):
    """Gradients of the recorded loss w.r.t. every trainable array."""
    if "loss" not in tape.extras:
        raise ops.ContractError("forward was run without labels; there is no loss to differentiate")
    grads = tape.backward({"loss": 1.0})
    return {name: grads.get(name, np.zeros_like(value)) for name, value in params.trainables().items()}


def updated_bn(params, tape):
    """``params`` with running moments taken from a train-mode forward."""
    states = tape.extras.get("bn_states", {})
    return params.with_bn(states.get(i, s) for i, s in enumerate(params.bn))


def loss_and_grads(params, batch, labels, mode="train"):
    """Mean cross-entropy with its gradients. Also returns params carrying updated BN moments."""
    _, tape = forward(batch, params, mode=mode, labels=labels)
    grads = backward(tape, params)
    return tape.extras["loss"], grads, updated_bn(params, tape)


def predict_proba(params, batch, batch_size=256):
    """Inference-mode class probabilities, computed in chunks."""
    batch = check_input(batch, params.arch)
    out = [forward(batch[i:i + batch_size], params, mode="infer")[0] for i in range(0, len(batch), batch_size)]
    return np.concatenate(out, axis=0) if out else np.zeros((0, params.arch.n_classes))


def predict(params, batch):
    # argmax picks the lowest index on ties
    return np.argmax(predict_proba(params, batch), axis=1)


from .weights import load_weights, save_weights  # noqa: E402,F401
