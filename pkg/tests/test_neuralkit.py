import numpy as np
import pytest

from afburden.errors import NumericError, ShapeError
from afburden.neuralkit import (
    Adam,
    GruParams,
    OptimizerState,
    Tensor,
    TrainConfig,
    adam_step,
    as_tensor,
    class_weights_from_counts,
    concat,
    conv1d,
    dense,
    fit,
    flatten,
    grad_check,
    gru_sequence,
    gru_step,
    load_checkpoint,
    log_softmax,
    maxpool1d,
    parameter,
    relu,
    save_checkpoint,
    sigmoid,
    softmax,
    softmax_cross_entropy,
    tanh,
    weighted_cross_entropy,
)
from afburden.neuralkit.gradcheck import numeric_grad

TOL = 1e-4


def _sig(x):
    return 1.0 / (1.0 + np.exp(-x))


def reference_gru_step(x, h, p):
    """Straight-line evaluation of the GRU update on plain arrays."""
    W = {k: v.data for k, v in p.as_dict().items()}
    z = _sig(W["W_z"] @ x + W["U_z"] @ h + W["b_z"])
    r = _sig(W["W_r"] @ x + W["U_r"] @ h + W["b_r"])
    hc = np.tanh(W["W_h"] @ x + W["U_h"] @ (r * h) + W["b_h"])
    return (1 - z) * h + z * hc


# -- elementwise and reduction ops ---------------------------------------------

@pytest.mark.parametrize("op", [relu, sigmoid, tanh, log_softmax, softmax])
def test_unary_op_gradients(op, rng):
    x = parameter(rng.normal(size=(3, 5)))
    # keep relu inputs away from the kink
    x.data[np.abs(x.data) < 1e-2] += 0.1
    probe = rng.normal(size=(3, 5))
    assert grad_check(lambda: (op(x) * probe).sum(), [x]) < TOL


def test_arithmetic_gradients(rng):
    a = parameter(rng.normal(size=(4, 3)))
    b = parameter(rng.normal(size=(3,)))
    c = parameter(rng.normal(size=(3, 2)))

    def loss():
        y = ((a * b - b) + 2.0) @ c
        return (y.T.reshape(-1)[1:5] * 0.5).mean() + (1.0 - y).sum(axis=0).sum()
    assert grad_check(loss, [a, b, c]) < TOL


def test_dense_conv_pool_flatten_concat_gradients(rng):
    x = parameter(rng.normal(size=(2, 14, 3)))
    w = parameter(rng.normal(size=(4, 3, 5)))
    b = parameter(rng.normal(size=(4,)))
    wd = parameter(rng.normal(size=(2, 21)))
    bd = parameter(rng.normal(size=(2,)))
    extra = parameter(rng.normal(size=(2, 1)))

    def loss():
        h = maxpool1d(conv1d(x, w, b))
        return dense(concat([flatten(h)[:, :20], extra]), wd, bd).sum()
    assert grad_check(loss, [x, w, b, wd, bd, extra]) < TOL


def test_loss_gradients(rng):
    logits = parameter(rng.normal(size=(6, 2)))
    labels = np.array([0, 1, 1, 0, 1, 0])
    w = np.array([0.7, 3.0])
    assert grad_check(lambda: softmax_cross_entropy(logits, labels, w), [logits]) < TOL
    assert grad_check(lambda: weighted_cross_entropy(softmax(logits), labels, w), [logits]) < TOL


def test_quadratic_gradient_is_exact():
    a = np.array([1.0, -2.0, 0.5])
    x = parameter([3.0, 0.0, 0.5])
    d = x - a
    (d * d).sum().backward()
    assert np.array_equal(x.grad, 2 * (x.data - a))
    assert np.allclose(numeric_grad(lambda: ((x - a) * (x - a)).sum(), x), x.grad, atol=1e-8)


def test_nonfinite_gradient_raises():
    x = parameter([0.0, 1.0])
    from afburden.neuralkit.ops import log
    with np.errstate(divide="ignore"), pytest.raises(NumericError, match="log"):
        log(x).sum().backward()


# -- shapes --------------------------------------------------------------------

def test_conv_pool_shape_arithmetic(rng):
    x = as_tensor(rng.normal(size=(1, 60, 1)))
    shapes = []
    for c_in, c_out, pool in ((1, 4, False), (4, 8, True), (8, 16, False)):
        x = conv1d(x, as_tensor(np.zeros((c_out, c_in, 10))), as_tensor(np.zeros(c_out)))
        shapes.append(x.shape[1])
        if pool:
            x = maxpool1d(x)
            shapes.append(x.shape[1])
    assert shapes == [51, 42, 21, 12]


def test_identity_tap_kernel(rng):
    x = rng.normal(size=(2, 20, 1))
    k = np.zeros((1, 1, 10))
    k[0, 0, 0] = 1.0
    out = conv1d(as_tensor(x), as_tensor(k), as_tensor(np.zeros(1)))
    assert np.array_equal(out.data, x[:, :11, :])


def test_maxpool_example_and_floor():
    x = as_tensor(np.array([1.0, 3.0, 2.0, 0.0, 7.0]).reshape(1, 5, 1))
    assert maxpool1d(x).data.ravel().tolist() == [3.0, 2.0]


def test_shape_errors_name_both_shapes():
    with pytest.raises(ShapeError, match=r"\(1, 8, 2\).*\(3, 1, 4\)"):
        conv1d(as_tensor(np.zeros((1, 8, 2))), as_tensor(np.zeros((3, 1, 4))), as_tensor(np.zeros(3)))
    with pytest.raises(ShapeError):
        dense(as_tensor(np.zeros((2, 3))), as_tensor(np.zeros((4, 5))), as_tensor(np.zeros(4)))


def test_softmax_invariants(rng):
    x = rng.normal(scale=30, size=(50, 2))
    p = softmax(as_tensor(x)).data
    assert np.all(np.abs(p.sum(axis=1) - 1) <= 1e-12)
    moderate = softmax(as_tensor(rng.normal(size=(50, 2)))).data
    assert np.all((moderate > 0) & (moderate < 1))


# -- GRU -------------------------------------------------------------------------

def _zero_params(n_in, n_units):
    return GruParams(**{name: parameter(np.zeros({"W": (n_units, n_in), "U": (n_units, n_units),
                                                  "b": (n_units,)}[name[0]]))
                        for name in ("W_z", "W_r", "W_h", "U_z", "U_r", "U_h", "b_z", "b_r", "b_h")})


def test_gru_zero_weights_halves_state():
    p = _zero_params(3, 4)
    v = np.array([1.0, -2.0, 0.5, 4.0])
    assert np.array_equal(gru_step(np.ones(3), v, p).data, 0.5 * v)


def test_gru_bias_only(rng):
    p = _zero_params(3, 4)
    p.b_z.data = rng.normal(size=4)
    p.b_r.data = rng.normal(size=4)
    p.b_h.data = rng.normal(size=4)
    h = gru_step(np.zeros(3), np.zeros(4), p).data
    assert np.allclose(h, _sig(p.b_z.data) * np.tanh(p.b_h.data), rtol=0, atol=1e-15)


def test_gru_matches_straight_line_reference(rng):
    for _ in range(20):
        p = GruParams.init(5, 7, rng)
        x, h = rng.normal(size=5), rng.normal(size=7)
        assert np.max(np.abs(gru_step(x, h, p).data - reference_gru_step(x, h, p))) <= 1e-12


def test_gru_batched_matches_single(rng):
    p = GruParams.init(3, 4, rng)
    xs = rng.normal(size=(5, 6, 3))
    hb = gru_sequence(xs, p).data
    for i in range(5):
        h = np.zeros(4)
        for t in range(6):
            h = reference_gru_step(xs[i, t], h, p)
        assert np.allclose(hb[i], h, rtol=0, atol=1e-12)


def test_gru_closed_update_gate_keeps_state(rng):
    p = GruParams.init(3, 4, rng)
    p.b_z.data = np.full(4, -40.0)
    h = rng.normal(size=4)
    assert np.max(np.abs(gru_step(rng.normal(size=3), h, p).data - h)) < 1e-6


def test_gru_unrolled_gradcheck(rng):
    p = GruParams.init(3, 4, rng)
    xs = parameter(rng.normal(size=(2, 10, 3)))
    probe = rng.normal(size=(2, 4))
    params = dict(p.as_dict(), xs=xs)
    assert grad_check(lambda: (gru_sequence(xs, p) * probe).sum(), params) < TOL


def test_gru_param_shape_validation(rng):
    d = GruParams.init(3, 4, rng).as_dict()
    d["U_r"] = parameter(np.zeros((4, 3)))
    with pytest.raises(ShapeError, match="U_r"):
        GruParams(**d)


# -- losses ------------------------------------------------------------------------

def test_weighted_cross_entropy_examples(rng):
    p = np.array([[1 - np.exp(-1), np.exp(-1)]])
    assert weighted_cross_entropy(as_tensor(p), [1], [1.0, 10.0]).data == pytest.approx(10.0, abs=1e-12)
    onehot = np.array([[1.0, 0.0], [0.0, 1.0]])
    with np.errstate(divide="ignore"):
        assert weighted_cross_entropy(as_tensor(onehot), [0, 1], [2.0, 5.0]).data == 0.0
    probs = softmax(as_tensor(rng.normal(size=(8, 2)))).data
    y = rng.integers(0, 2, size=8)
    plain = -np.mean(np.log(probs[np.arange(8), y]))
    assert weighted_cross_entropy(as_tensor(probs), y, [1.0, 1.0]).data == pytest.approx(plain, rel=1e-14)
    assert weighted_cross_entropy(as_tensor(probs), y).data == pytest.approx(plain, rel=1e-14)


def test_class_weights_from_counts():
    w = class_weights_from_counts([0] * 90 + [1] * 10)
    assert np.allclose(w, [100 / 180, 100 / 20])
    assert np.allclose(class_weights_from_counts([0, 0, 0]), [0.5, 1.0])


# -- optimiser -----------------------------------------------------------------------

def test_adam_zero_gradient_leaves_params():
    p = {"w": parameter([1.0, 2.0])}
    adam_step(p, {"w": np.zeros(2)}, OptimizerState(lr=0.1))
    assert p["w"].data.tolist() == [1.0, 2.0]


def test_adam_first_step_is_lr():
    p = {"w": parameter([1.0, -1.0, 0.0])}
    adam_step(p, {"w": np.array([0.3, -7.0, 1e3])}, OptimizerState(lr=0.01))
    assert np.allclose(p["w"].data, [0.99, -0.99, -0.01], atol=1e-9)


def test_adam_deterministic(rng):
    init = rng.normal(size=(3, 3))
    grads = [rng.normal(size=(3, 3)) for _ in range(5)]
    out = []
    for _ in range(2):
        p = {"w": parameter(init)}
        st = OptimizerState()
        for g in grads:
            adam_step(p, {"w": g}, st)
        out.append(p["w"].data.tobytes())
    assert out[0] == out[1]


def test_fit_reduces_loss_and_restores_best(rng):
    X = rng.normal(size=(200, 2))
    y = (X[:, 0] + X[:, 1] > 0).astype(int)
    w = parameter(rng.normal(size=(2, 2)) * 0.01)
    b = parameter(np.zeros(2))
    params = {"w": w, "b": b}

    def batch_loss(idx):
        return softmax_cross_entropy(dense(as_tensor(X[idx]), w, b), y[idx])

    def val():
        return float(np.mean((X @ w.data.T + b.data).argmax(1) == y))
    hist = fit(params, batch_loss, 200, TrainConfig(lr=0.05, batch_size=32, epochs=10), val)
    assert hist.losses[-1] < hist.losses[0]
    assert val() == hist.best_score >= 0.95


def test_fit_raises_on_divergence():
    w = parameter([1.0])
    with pytest.raises(NumericError, match="epoch 0"):
        fit({"w": w}, lambda idx: (w * np.inf).sum(), 4, TrainConfig(batch_size=4))


# -- checkpoints ---------------------------------------------------------------------

def test_checkpoint_bit_exact(tmp_path, rng):
    arrays = {"a": rng.normal(size=(3, 4)), "b": np.array([np.pi, -0.0, 5e-324]),
              "c": rng.normal(size=(2, 1, 5))}
    save_checkpoint(tmp_path / "m.ckpt", arrays, {"n_filt": 4, "name": "x"})
    back, meta = load_checkpoint(tmp_path / "m.ckpt")
    assert meta == {"n_filt": 4, "name": "x"}
    assert list(back) == list(arrays)
    for k in arrays:
        assert back[k].shape == arrays[k].shape
        assert back[k].tobytes() == arrays[k].tobytes()


def test_checkpoint_rejects_garbage(tmp_path):
    from afburden.errors import ParseError
    (tmp_path / "bad").write_bytes(b"not a checkpoint at all")
    with pytest.raises(ParseError):
        load_checkpoint(tmp_path / "bad")


def test_tensor_backward_requires_scalar():
    x = parameter([1.0, 2.0])
    with pytest.raises(ShapeError):
        (x * 2.0).backward()
    assert isinstance(x * 1.0, Tensor)
