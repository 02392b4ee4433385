import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mirnet import tensor_ops as ops
from mirnet.tensor_ops import BatchNormState

from conftest import central_diff, naive_conv1d, naive_conv2d, rel_err


def _project(out, rng):
    """Random linear functional so every output coordinate matters."""
    return rng.normal(size=np.shape(out))


# ---------------------------------------------------------------------------
# conv1d
# ---------------------------------------------------------------------------

def test_conv1d_network_shape():
    out, _ = ops.conv1d_forward(np.zeros(500), np.ones((20, 100)), stride=50)
    assert out.shape == (9, 20)


def test_conv1d_zero_weights():
    out, _ = ops.conv1d_forward(np.random.default_rng(0).normal(size=120), np.zeros((3, 10)), 5)
    assert not out.any()


def test_conv1d_hand_example():
    out, _ = ops.conv1d_forward([1, 2, 3, 4, 5], [[1, 1]], stride=2)
    np.testing.assert_array_equal(out, [[3], [7]])


def test_conv1d_too_short():
    with pytest.raises(ops.InputTooShortError):
        ops.conv1d_forward(np.zeros(5), np.zeros((2, 6)), 1)


@settings(max_examples=60, deadline=None)
@given(k=st.integers(1, 12), stride=st.integers(1, 7), extra=st.integers(0, 40), seed=st.integers(0, 2**16))
def test_conv1d_matches_naive_and_frame_count(k, stride, extra, seed):
    rng = np.random.default_rng(seed)
    t = k + extra
    x, w = rng.normal(size=t), rng.normal(size=(3, k))
    out, _ = ops.conv1d_forward(x, w, stride)
    assert out.shape[0] == (t - k) // stride + 1
    np.testing.assert_allclose(out, naive_conv1d(x, w, stride), atol=1e-12)


def test_conv1d_backward_zero_upstream():
    out, cache = ops.conv1d_forward(np.arange(8.0), np.ones((2, 3)), 2)
    dx, dw = ops.conv1d_backward(cache, np.zeros_like(out))
    assert not dx.any() and not dw.any()


def test_conv1d_backward_finite_difference():
    rng = np.random.default_rng(7)
    x, w = rng.normal(size=8), rng.normal(size=(2, 3))
    out, cache = ops.conv1d_forward(x, w, 2)
    r = _project(out, rng)
    dx, dw = ops.conv1d_backward(cache, r)
    assert rel_err(dx, central_diff(lambda v: (ops.conv1d_forward(v, w, 2)[0] * r).sum(), x)) <= 1e-6
    assert rel_err(dw, central_diff(lambda v: (ops.conv1d_forward(x, v, 2)[0] * r).sum(), w)) <= 1e-6


def test_conv1d_single_frame_weight_grad():
    rng = np.random.default_rng(1)
    x, w = rng.normal(size=6), rng.normal(size=(4, 6))
    out, cache = ops.conv1d_forward(x, w, 3)
    up = rng.normal(size=out.shape)
    _, dw = ops.conv1d_backward(cache, up)
    np.testing.assert_allclose(dw, np.outer(up[0], x), atol=1e-14)


def test_conv1d_backward_shape_mismatch():
    _, cache = ops.conv1d_forward(np.zeros(10), np.zeros((2, 4)), 2)
    with pytest.raises(ops.ContractError):
        ops.conv1d_backward(cache, np.zeros((3, 3)))


# ---------------------------------------------------------------------------
# dilated conv2d
# ---------------------------------------------------------------------------

def test_conv2d_network_shape():
    out, _ = ops.conv2d_dilated_forward(np.zeros((9, 20, 12)), np.zeros((7, 3, 3, 12)), (1, 1))
    assert out.shape == (9, 20, 7)


@pytest.mark.parametrize("dilation", [(1, 1), (2, 2), (4, 4), (16, 16), (3, 7)])
def test_conv2d_identity_kernel(dilation):
    rng = np.random.default_rng(0)
    x = rng.normal(size=(9, 20, 4))
    w = np.zeros((1, 3, 3, 4))
    w[0, 1, 1, 0] = 1.0
    out, _ = ops.conv2d_dilated_forward(x, w, dilation)
    np.testing.assert_array_equal(out[..., 0], x[..., 0])


def test_conv2d_ones_dilation_two():
    out, _ = ops.conv2d_dilated_forward(np.ones((3, 3, 1)), np.ones((1, 3, 3, 1)), (2, 2))
    np.testing.assert_array_equal(out[..., 0], [[4, 2, 4], [2, 1, 2], [4, 2, 4]])


def test_conv2d_even_kernel_rejected():
    with pytest.raises(ops.ShapeError):
        ops.conv2d_dilated_forward(np.zeros((4, 4, 1)), np.zeros((1, 2, 2, 1)))


@settings(max_examples=60, deadline=None)
@given(
    h=st.integers(1, 6), w=st.integers(1, 6), c=st.integers(1, 3), f=st.integers(1, 3),
    dr=st.sampled_from([1, 2, 4]), dc=st.sampled_from([1, 2, 4]), seed=st.integers(0, 2**16),
)
def test_conv2d_matches_naive(h, w, c, f, dr, dc, seed):
    rng = np.random.default_rng(seed)
    x, k = rng.normal(size=(h, w, c)), rng.normal(size=(f, 3, 3, c))
    out, _ = ops.conv2d_dilated_forward(x, k, (dr, dc))
    assert out.shape == (h, w, f)
    np.testing.assert_allclose(out, naive_conv2d(x, k, (dr, dc)), rtol=0, atol=1e-12)


def test_conv2d_batched_equals_per_example():
    rng = np.random.default_rng(3)
    x, k = rng.normal(size=(4, 5, 6, 2)), rng.normal(size=(3, 3, 3, 2))
    out, _ = ops.conv2d_dilated_forward(x, k, (2, 1))
    for b in range(4):
        np.testing.assert_allclose(out[b], ops.conv2d_dilated_forward(x[b], k, (2, 1))[0], atol=1e-13)


def test_conv2d_backward_zero_upstream():
    out, cache = ops.conv2d_dilated_forward(np.ones((4, 4, 2)), np.ones((2, 3, 3, 2)), (2, 2))
    dx, dw = ops.conv2d_dilated_backward(cache, np.zeros_like(out))
    assert not dx.any() and not dw.any()


def test_conv2d_backward_finite_difference():
    rng = np.random.default_rng(11)
    x, k = rng.normal(size=(5, 6, 3)), rng.normal(size=(2, 3, 3, 3))
    out, cache = ops.conv2d_dilated_forward(x, k, (2, 2))
    r = _project(out, rng)
    dx, dk = ops.conv2d_dilated_backward(cache, r)
    fx = central_diff(lambda v: (ops.conv2d_dilated_forward(v, k, (2, 2))[0] * r).sum(), x)
    fk = central_diff(lambda v: (ops.conv2d_dilated_forward(x, v, (2, 2))[0] * r).sum(), k)
    assert rel_err(dx, fx) <= 1e-6
    assert rel_err(dk, fk) <= 1e-6


def test_conv2d_dilation_16_gradient_only_on_in_bounds_taps():
    rng = np.random.default_rng(5)
    h, w = 9, 20
    x = rng.normal(size=(h, w, 2))
    k = rng.normal(size=(1, 3, 3, 2))
    out, cache = ops.conv2d_dilated_forward(x, k, (16, 16))
    _, dk = ops.conv2d_dilated_backward(cache, np.ones_like(out))
    # brute force: which taps ever land inside the 9x20 input?
    mask = np.zeros((3, 3), dtype=bool)
    for i in range(h):
        for j in range(w):
            for a in (-1, 0, 1):
                for b in (-1, 0, 1):
                    if 0 <= i + 16 * a < h and 0 <= j + 16 * b < w:
                        mask[a + 1, b + 1] = True
    assert mask.tolist() == [[False, False, False], [True, True, True], [False, False, False]]
    assert np.all(dk[0][~mask] == 0)
    assert np.all(np.abs(dk[0][mask]).sum(axis=-1) > 0)


# ---------------------------------------------------------------------------
# relu
# ---------------------------------------------------------------------------

def test_relu_values():
    np.testing.assert_array_equal(ops.relu([-1.0, 0.0, 2.0]), [0, 0, 2])


def test_relu_all_negative():
    y, mask = ops.relu_forward(-np.ones(5))
    (g,) = ops.relu_backward(mask, np.ones(5))
    assert not y.any() and not g.any()


def test_relu_gradient():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(4, 5))
    x[np.abs(x) < 1e-3] = 0.5  # keep away from the kink
    up = rng.normal(size=x.shape)
    _, mask = ops.relu_forward(x)
    (g,) = ops.relu_backward(mask, up)
    np.testing.assert_array_equal(g, (x > 0) * up)
    assert rel_err(g, central_diff(lambda v: (ops.relu(v) * up).sum(), x)) <= 1e-8


# ---------------------------------------------------------------------------
# batchnorm
# ---------------------------------------------------------------------------

def test_batchnorm_constant_batch():
    y, _, _ = ops.batchnorm_forward(np.full((4, 3, 3, 2), 5.0), BatchNormState.initial(2), "train")
    np.testing.assert_array_equal(y, 0.0)


def test_batchnorm_two_values():
    y, _, _ = ops.batchnorm_forward(np.array([[0.0], [2.0]]), BatchNormState.initial(1, epsilon=1e-3), "train")
    np.testing.assert_allclose(y[:, 0], [-0.9995003746877732, 0.9995003746877732], rtol=1e-14)


def test_batchnorm_gamma_zero_gives_beta():
    rng = np.random.default_rng(0)
    s = BatchNormState(np.zeros(3), np.array([1.0, -2.0, 0.5]), np.zeros(3), np.ones(3))
    for mode in ("train", "infer"):
        y, _, _ = ops.batchnorm_forward(rng.normal(size=(5, 2, 3)), s, mode)
        np.testing.assert_array_equal(y, np.broadcast_to(s.beta, y.shape))


def test_batchnorm_running_update_and_purity():
    s = BatchNormState.initial(1, momentum=0.9)
    x = np.array([[1.0], [3.0]])
    _, _, new = ops.batchnorm_forward(x, s, "train")
    np.testing.assert_allclose(new.running_mean, [0.9 * 0 + 0.1 * 2.0])
    np.testing.assert_allclose(new.running_var, [0.9 * 1 + 0.1 * 1.0])
    np.testing.assert_array_equal(s.running_mean, [0.0])  # original untouched
    _, _, same = ops.batchnorm_forward(x, new, "infer")
    assert same is new


def test_batchnorm_infer_uses_initial_moments():
    x = np.random.default_rng(1).normal(size=(3, 2))
    y, _, _ = ops.batchnorm_forward(x, BatchNormState.initial(2, epsilon=1e-3), "infer")
    np.testing.assert_allclose(y, x / np.sqrt(1 + 1e-3))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**16), scale=st.floats(0.01, 100))
def test_batchnorm_train_statistics(seed, scale):
    rng = np.random.default_rng(seed)
    x = scale * rng.normal(size=(4, 3, 5, 2)) + rng.normal(size=2)
    eps = 1e-3
    y, _, _ = ops.batchnorm_forward(x, BatchNormState.initial(2, epsilon=eps), "train")
    var_b = x.reshape(-1, 2).var(axis=0)
    assert np.all(np.abs(y.reshape(-1, 2).mean(axis=0)) <= 1e-9)
    np.testing.assert_allclose(y.reshape(-1, 2).var(axis=0), 1 / (1 + eps / var_b), atol=1e-6)


def test_batchnorm_backward_zero_upstream():
    x = np.random.default_rng(0).normal(size=(4, 2))
    y, cache, _ = ops.batchnorm_forward(x, BatchNormState.initial(2), "train")
    grads = ops.batchnorm_backward(cache, np.zeros_like(y))
    assert all(not g.any() for g in grads)


@pytest.mark.parametrize("mode", ["train", "infer"])
def test_batchnorm_backward_finite_difference(mode):
    rng = np.random.default_rng(4)
    x = rng.normal(size=(4, 2))
    gamma, beta = rng.normal(size=2), rng.normal(size=2)
    base = BatchNormState(gamma, beta, rng.normal(size=2), rng.uniform(0.5, 2, size=2))
    r = rng.normal(size=x.shape)

    def f(xv, g=gamma, b=beta):
        s = BatchNormState(g, b, base.running_mean, base.running_var)
        return (ops.batchnorm_forward(xv, s, mode)[0] * r).sum()

    _, cache, _ = ops.batchnorm_forward(x, base, mode)
    dx, dg, db = ops.batchnorm_backward(cache, r)
    assert rel_err(dx, central_diff(f, x)) <= 1e-5
    assert rel_err(dg, central_diff(lambda g: f(x, g=g), gamma)) <= 1e-5
    assert rel_err(db, central_diff(lambda b: f(x, b=b), beta)) <= 1e-5
    np.testing.assert_allclose(db, r.sum(axis=0), atol=1e-14)


# ---------------------------------------------------------------------------
# pooling
# ---------------------------------------------------------------------------

def test_global_avg_pool():
    out, _ = ops.global_avg_pool_forward(np.zeros((9, 20, 7)))
    assert out.shape == (7,)
    x = np.broadcast_to(np.arange(7.0), (9, 20, 7))
    np.testing.assert_allclose(ops.global_avg_pool_forward(x)[0], np.arange(7.0))


def test_global_avg_pool_backward_uniform():
    _, shape = ops.global_avg_pool_forward(np.zeros((2, 9, 20, 7)))
    up = np.arange(14.0).reshape(2, 7)
    (g,) = ops.global_avg_pool_backward(shape, up)
    np.testing.assert_allclose(g, np.broadcast_to(up[:, None, None, :] / 180, (2, 9, 20, 7)))


# ---------------------------------------------------------------------------
# dense + softmax + cross-entropy
# ---------------------------------------------------------------------------

def test_softmax_zero_logits():
    probs, loss, _ = ops.dense_softmax_xent(np.zeros(7), np.zeros((7, 7)), np.zeros(7), 3)
    np.testing.assert_allclose(probs, 1 / 7)
    assert loss == pytest.approx(np.log(7), abs=1e-12)
    assert loss == pytest.approx(1.945910, abs=1e-6)


def test_softmax_peaked():
    logits = np.array([10.0, 0, 0, 0, 0, 0, 0])
    probs, _, _ = ops.dense_softmax_xent(np.ones(1), np.zeros((1, 7)), logits, 0)
    assert probs[0] == pytest.approx(0.9997276746027486, rel=1e-14)
    assert probs[0] == pytest.approx(0.999727, abs=1e-6)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**16), scale=st.floats(1e-3, 1e3))
def test_softmax_stable_sums_to_one(seed, scale):
    logits = scale * np.random.default_rng(seed).uniform(-1, 1, size=(5, 7))
    for probs in (ops.softmax(logits), ops.dense_softmax_xent(np.eye(5), np.zeros((5, 7)), logits[0])[0]):
        assert np.all(np.abs(probs.sum(axis=-1) - 1) <= 1e-12)
        assert np.all(np.isfinite(probs))


def test_xent_logit_gradient_is_probs_minus_onehot():
    rng = np.random.default_rng(6)
    logits = rng.normal(size=7)
    probs, _, cache = ops.dense_softmax_xent(np.ones(1), np.zeros((1, 7)), logits, 2)
    _, _, db = ops.dense_softmax_xent_backward(cache)
    expected = probs - np.eye(7)[2]
    np.testing.assert_allclose(db, expected, atol=1e-15)
    numeric = central_diff(lambda b: ops.dense_softmax_xent(np.ones(1), np.zeros((1, 7)), b, 2)[1], logits)
    assert rel_err(db, numeric) <= 1e-8


def test_dense_backward_finite_difference():
    rng = np.random.default_rng(8)
    f, w, b = rng.normal(size=(4, 7)), rng.normal(size=(7, 7)), rng.normal(size=7)
    y = np.array([0, 6, 3, 3])
    _, _, cache = ops.dense_softmax_xent(f, w, b, y)
    df, dw, db = ops.dense_softmax_xent_backward(cache)
    loss = lambda f_=f, w_=w, b_=b: ops.dense_softmax_xent(f_, w_, b_, y)[1]  # noqa: E731
    assert rel_err(df, central_diff(lambda v: loss(f_=v), f)) <= 1e-6
    assert rel_err(dw, central_diff(lambda v: loss(w_=v), w)) <= 1e-6
    assert rel_err(db, central_diff(lambda v: loss(b_=v), b)) <= 1e-6


def test_xent_backward_needs_labels():
    _, _, cache = ops.dense_softmax_xent(np.ones(2), np.ones((2, 3)), np.zeros(3))
    with pytest.raises(ops.ContractError):
        ops.dense_softmax_xent_backward(cache)


# ---------------------------------------------------------------------------
# tape and grad_check
# ---------------------------------------------------------------------------

def test_tape_visits_each_entry_once_in_reverse():
    visited = []
    tape = ops.GradTape()
    for i in range(4):
        def bw(cache, g, i=i):
            visited.append(i)
            return (g,)
        tape.record("id", (f"v{i}",), f"v{i + 1}", bw, None)
    grads = tape.backward({"v4": np.ones(2)})
    assert visited == [3, 2, 1, 0]
    np.testing.assert_array_equal(grads["v0"], np.ones(2))


def test_tape_accumulates_shared_inputs():
    tape = ops.GradTape()
    tape.record("add", ("a", "a"), "out", ops.add_backward, None)
    grads = tape.backward({"out": np.array([1.5])})
    np.testing.assert_array_equal(grads["a"], [3.0])


def test_grad_check_linear_exact():
    c = np.array([[1.0, -2.0], [0.5, 3.0]])

    def fn(p):
        return float((c * p["w"]).sum()), {"w": c}

    report = ops.grad_check(fn, {"w": np.zeros((2, 2))}, tol=1e-9)
    assert report.passed
    assert report.max_rel_error <= 1e-9


def test_grad_check_detects_corruption():
    def fn(p):
        x = p["x"]
        g = 2 * x
        g[0] += 0.1
        return float((x ** 2).sum()), {"x": g}

    report = ops.grad_check(fn, {"x": np.array([1.0, 2.0, 3.0])})
    assert not report.passed
    assert "FAILED" in str(report)
