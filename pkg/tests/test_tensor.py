import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from stackgrasp.tensor import (
    Adam,
    CheckpointError,
    EmptyRoiError,
    NonScalarError,
    ParamStore,
    ShapeError,
    Tensor,
    backward,
    bce,
    concat,
    conv2d,
    decode_checkpoint,
    encode_checkpoint,
    grad_check,
    linear,
    no_grad,
    relu,
    roi_pool,
    sgd_step,
    smooth_l1,
    step_lr,
)
from stackgrasp.tensor import ops
from stackgrasp.tensor import losses as L
from stackgrasp.tensor.suite import cases, corrupt_backward, run_case, run_suite

CASES = cases()


# ---------------------------------------------------------------- gradient suite


@pytest.mark.parametrize("case", CASES, ids=[c.name for c in CASES])
def test_op_gradients_twenty_seeds(case):
    rep = run_case(case, seeds=20, tolerance=1e-3)
    assert rep.passed, rep.line()
    assert rep.checked > 0


@pytest.mark.parametrize("name", ["relu", "conv2d", "linear", "smooth_l1"])
def test_corrupted_backward_is_caught(name):
    with corrupt_backward(name):
        reps = run_suite(seeds=2, only=[name])
    assert reps and not any(r.passed for r in reps)
    # and the original rule is back afterwards
    assert all(r.passed for r in run_suite(seeds=2, only=[name]))


def test_corrupt_unknown_op():
    with pytest.raises(KeyError):
        with corrupt_backward("no_such_op"):
            pass


def test_gradcheck_examples():
    rng = np.random.default_rng(0)
    x, w, b = rng.normal(size=(3, 4)), rng.normal(size=(2, 4)), rng.normal(size=2)
    rep = grad_check(lambda a, c, d: ops.sum_all(ops.mul(linear(a, c, d), linear(a, c, d))), [x, w, b])
    assert rep.passed
    img, k = rng.normal(size=(1, 1, 6, 6)), rng.normal(size=(1, 1, 3, 3))
    pw = rng.normal(size=(1, 1, 4, 4))
    rep = grad_check(lambda a, c: ops.sum_all(ops.mul(conv2d(a, c), Tensor(pw))), [img, k])
    assert rep.passed


def test_gradcheck_relu_at_zero_is_excluded_not_failed():
    x = np.array([-1.0, 0.0, 2.0])
    rep = grad_check(lambda t: ops.sum_all(relu(t)), [x], exclude=[x == 0])
    assert rep.passed
    assert rep.excluded == 1
    assert rep.checked == 2


def test_gradcheck_skip_kinks_detects_relu_zero():
    x = np.array([-1.0, 0.0, 2.0])
    rep = grad_check(lambda t: ops.sum_all(relu(t)), [x], skip_kinks=True)
    assert rep.passed and rep.excluded == 1


def test_gradcheck_reports_wrong_gradient():
    def bad_square(t):
        return ops.sum_all(ops.mul(t, Tensor(t.data.copy())))  # detached factor halves the gradient

    rep = grad_check(bad_square, [np.array([1.0, 2.0, 3.0])])
    assert not rep.passed
    assert rep.failures
    assert rep.line().startswith("FAIL")


# ---------------------------------------------------------------- forward examples


def test_relu_example():
    assert relu(Tensor([-1.0, 0.0, 2.0])).data.tolist() == [0.0, 0.0, 2.0]


def test_identity_conv():
    x = np.random.default_rng(1).normal(size=(2, 3, 5, 4)).astype(np.float32)
    w = np.eye(3, dtype=np.float32).reshape(3, 3, 1, 1)
    out = conv2d(Tensor(x), Tensor(w), Tensor(np.zeros(3)))
    assert np.array_equal(out.data, x)


def test_conv_matches_direct_loop():
    rng = np.random.default_rng(2)
    x, w, b = rng.normal(size=(1, 2, 5, 5)), rng.normal(size=(3, 2, 3, 3)), rng.normal(size=3)
    with no_grad():
        out = conv2d(Tensor(x, dtype=np.float64), Tensor(w, dtype=np.float64), Tensor(b, dtype=np.float64), stride=2, pad=1).data
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    ref = np.zeros((1, 3, 3, 3))
    for o in range(3):
        for i in range(3):
            for j in range(3):
                ref[0, o, i, j] = np.sum(xp[0, :, 2 * i : 2 * i + 3, 2 * j : 2 * j + 3] * w[o]) + b[o]
    assert np.allclose(out, ref)


def test_roi_pool_whole_map_is_global_max():
    x = np.arange(16, dtype=float).reshape(1, 1, 4, 4)
    x[0, 0, 1, 2] = 99.0
    out = roi_pool(Tensor(x), np.array([[0, 0, 0, 4, 4]]), (1, 1))
    assert out.shape == (1, 1, 1, 1)
    assert out.data.item() == 99.0


def test_roi_pool_empty_box():
    x = Tensor(np.zeros((1, 1, 4, 4)))
    with pytest.raises(EmptyRoiError):
        roi_pool(x, np.array([[0, 5, 5, 8, 8]]), (2, 2))


def test_roi_pool_clips_to_map():
    x = np.arange(16, dtype=float).reshape(1, 1, 4, 4)
    out = roi_pool(Tensor(x), np.array([[0, -3, -3, 10, 10]]), (1, 1))
    assert out.data.item() == 15.0


def test_maxpool_and_upsample_examples():
    x = Tensor(np.arange(16, dtype=float).reshape(1, 1, 4, 4))
    assert ops.maxpool2d(x, 2).data.reshape(-1).tolist() == [5, 7, 13, 15]
    up = ops.upsample_nearest(Tensor(np.array([[[[1.0, 2.0]]]])), (2, 4))
    assert up.data.reshape(2, 4).tolist() == [[1, 1, 2, 2], [1, 1, 2, 2]]


def test_shape_errors():
    with pytest.raises(ShapeError):
        ops.add(Tensor(np.zeros(3)), Tensor(np.zeros(4)))
    with pytest.raises(ShapeError):
        linear(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 5))))
    with pytest.raises(ShapeError):
        conv2d(Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((1, 3, 3, 3))))
    with pytest.raises(ShapeError):
        concat([Tensor(np.zeros((2, 3))), Tensor(np.zeros((3, 3)))], axis=1)
    with pytest.raises(ShapeError):
        smooth_l1(np.zeros(3), Tensor(np.zeros(2)))


# ---------------------------------------------------------------- backward semantics


def test_backward_sum():
    x = Tensor(np.zeros(3), requires_grad=True)
    backward(ops.sum_all(x))
    assert x.grad.tolist() == [1.0, 1.0, 1.0]


def test_backward_fan_out_accumulates():
    x = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    backward(ops.sum_all(ops.add(x, x)))
    assert x.grad.tolist() == [2.0, 2.0]


def test_backward_non_scalar():
    x = Tensor(np.zeros(3), requires_grad=True)
    with pytest.raises(NonScalarError):
        backward(ops.relu(x))


def test_no_grad_records_nothing():
    x = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        y = ops.sum_all(ops.mul(x, x))
    assert not y.requires_grad
    backward(y)
    assert x.grad.tolist() == [0.0, 0.0, 0.0]


def _composite_grads():
    rng = np.random.default_rng(9)
    x = Tensor(rng.normal(size=(1, 2, 6, 6)), requires_grad=True)
    w = Tensor(rng.normal(size=(3, 2, 3, 3)), requires_grad=True)
    h = ops.relu(conv2d(x, w, pad=1))
    h = ops.maxpool2d(h, 2)
    loss = ops.mean_all(ops.mul(h, h))
    backward(loss)
    return x.grad.copy(), w.grad.copy()


def test_backward_deterministic():
    a, b = _composite_grads(), _composite_grads()
    assert all(np.array_equal(p, q) for p, q in zip(a, b))


@given(
    st.integers(1, 4),
    st.lists(st.integers(1, 3), min_size=1, max_size=4),
    st.integers(0, 1000),
)
def test_concat_split_round_trip(rows, sizes, seed):
    x = np.random.default_rng(seed).normal(size=(rows, sum(sizes)))
    parts = ops.split(Tensor(x), sizes, axis=1)
    assert [p.shape[1] for p in parts] == sizes
    assert np.array_equal(concat(parts, axis=1).data, Tensor(x).data)


# ---------------------------------------------------------------- losses


def test_smooth_l1_examples():
    assert smooth_l1(np.array([1.0, 2.0]), Tensor(np.array([1.0, 2.0]))).item() == 0.0
    assert smooth_l1(np.array([0.0]), Tensor(np.array([0.5]))).item() == pytest.approx(0.125)
    assert smooth_l1(np.array([0.0]), Tensor(np.array([3.0]))).item() == pytest.approx(2.5)


def test_smooth_l1_seam_is_c1():
    eps = 1e-6

    def value(d):
        with no_grad():
            return smooth_l1(np.array([0.0]), Tensor(np.array([d]), dtype=np.float64)).item()

    def slope(d):
        t = Tensor(np.array([d]), requires_grad=True, dtype=np.float64)
        backward(smooth_l1(np.array([0.0]), t))
        return t.grad[0]

    assert value(1 - eps) == pytest.approx(value(1 + eps), abs=1e-5)
    assert slope(1 - eps) == pytest.approx(slope(1 + eps), abs=1e-5)
    assert slope(-1 + eps) == pytest.approx(slope(-1 - eps), abs=1e-5)


def test_bce_half():
    assert bce(np.array([1.0]), Tensor(np.array([0.5]))).item() == pytest.approx(np.log(2), rel=1e-6)


def test_bce_clamps_extremes():
    v = bce(np.array([1.0]), Tensor(np.array([0.0]))).item()
    assert np.isfinite(v) and v == pytest.approx(-np.log(1e-7), rel=1e-3)


def test_cross_entropy_uniform_logits():
    v = L.cross_entropy(np.eye(4)[[1]], Tensor(np.zeros((1, 4)))).item()
    assert v == pytest.approx(np.log(4), rel=1e-6)


def test_nll_relation_is_negative_log_prob():
    probs = Tensor(np.array([[0.7, 0.2, 0.1], [0.1, 0.1, 0.8]]))
    v = L.nll_relation(probs, np.array([0, 2])).item()
    assert v == pytest.approx(-np.log(0.7) - np.log(0.8), rel=1e-6)
    assert v > 0


def test_reduction_mean_vs_sum():
    gt = np.eye(3)[[0, 1]]
    logits = Tensor(np.random.default_rng(0).normal(size=(2, 3)))
    s = L.cross_entropy(gt, logits, reduction="sum").item()
    m = L.cross_entropy(gt, logits, reduction="mean").item()
    assert s == pytest.approx(2 * m, rel=1e-6)


# ---------------------------------------------------------------- optimisers


def _store():
    ps = ParamStore()
    ps.add("a.w", np.array([1.0]))
    ps.add("b.w", np.array([1.0]), trainable=False)
    return ps


def test_sgd_step_example():
    ps = _store()
    ps["a.w"].grad[:] = 1.0
    ps["b.w"].grad = np.array([1.0], dtype=np.float32)
    sgd_step(ps, 0.1)
    assert ps["a.w"].data[0] == pytest.approx(0.9)
    assert ps["b.w"].data[0] == 1.0
    assert ps["a.w"].grad[0] == 0.0


def test_set_trainable_prefix():
    ps = _store()
    ps.set_trainable("a.", False)
    assert not ps.is_trainable("a.w")
    assert ps.count() == 0
    assert ps.count(trainable_only=False) == 2


def test_step_lr_schedule():
    assert step_lr(1e-3, 0, 10_000) == 1e-3
    assert step_lr(1e-3, 9_999, 10_000) == 1e-3
    assert step_lr(1e-3, 10_000, 10_000) == pytest.approx(1e-4)
    assert step_lr(1e-3, 20_000, 10_000) == pytest.approx(1e-5)


def test_two_decayed_sgd_steps():
    ps = ParamStore()
    ps.add("p", np.array([1.0]))
    for it in (0, 1):
        ps["p"].grad[:] = 1.0
        sgd_step(ps, step_lr(0.1, it, 1))
    assert ps["p"].data[0] == pytest.approx(1.0 - 0.1 - 0.01)


def test_adam_minimises_quadratic():
    ps = ParamStore()
    ps.add("x", np.array([3.0, -2.0]))
    opt = Adam(ps)
    for _ in range(400):
        backward(ops.sum_all(ops.mul(ps["x"], ps["x"])))
        opt.step(0.05)
    assert np.all(np.abs(ps["x"].data) < 0.05)


def test_adam_first_step_is_lr_sized():
    ps = ParamStore()
    ps.add("x", np.array([1.0]))
    ps["x"].grad[:] = 123.0
    Adam(ps).step(0.01)
    assert ps["x"].data[0] == pytest.approx(0.99, abs=1e-6)


# ---------------------------------------------------------------- checkpoints


def test_checkpoint_layout():
    blob = encode_checkpoint({"w": np.array([[1.0, 2.0]], dtype=np.float32)})
    assert blob[:8] == b"MSFA0001"
    count = struct.unpack("<I", blob[8:12])[0]
    assert count == 1
    assert blob.endswith(np.array([1.0, 2.0], dtype="<f4").tobytes())


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    ps = ParamStore()
    ps.add("conv.w", rng.normal(size=(2, 3, 3, 3)))
    ps.add("conv.b", rng.normal(size=2))
    ps.add("scalar", np.array(1.5))
    path = tmp_path / "m.ckpt"
    ps.save(path)
    other = ParamStore()
    other.add("conv.w", np.zeros((2, 3, 3, 3)))
    other.add("conv.b", np.zeros(2))
    other.add("scalar", np.array(0.0))
    other.load(path)
    for name in ps:
        assert np.array_equal(ps[name].data, other[name].data)
    other.save(tmp_path / "again.ckpt")
    assert path.read_bytes() == (tmp_path / "again.ckpt").read_bytes()


@pytest.mark.parametrize(
    "blob",
    [b"", b"NOTMAGIC\x00\x00\x00\x00", b"MSFA0001\x01\x00\x00\x00", b"MSFA0001\x00\x00\x00\x00extra"],
)
def test_checkpoint_rejects_bad_bytes(blob):
    with pytest.raises(CheckpointError):
        decode_checkpoint(blob)


def test_checkpoint_shape_mismatch(tmp_path):
    ps = ParamStore()
    ps.add("w", np.zeros(3))
    ps.save(tmp_path / "a.ckpt")
    other = ParamStore()
    other.add("w", np.zeros(4))
    with pytest.raises(CheckpointError):
        other.load(tmp_path / "a.ckpt")
