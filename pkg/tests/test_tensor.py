import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from texcamo import functional as F
from texcamo.checkpoint import CheckpointError, dumps, load_checkpoint, loads, save_checkpoint
from texcamo.gradcheck import finite_diff_check
from texcamo.tensor import ShapeError, Tensor, backward, elementwise, tape, no_grad


def t(a, grad=False):
    return Tensor(np.asarray(a, dtype=float), requires_grad=grad)


# ---------------------------------------------------------------- invariants
def test_tensor_shape_matches_data():
    x = t(np.arange(24).reshape(2, 3, 4))
    assert int(np.prod(x.shape)) == x.data.size
    assert x.data.dtype == np.float64


def test_grad_buffer_matches_data_length():
    x = t(np.ones((2, 3)), grad=True)
    (x * x).sum().backward()
    assert x.grad.shape == x.shape


def test_tape_is_topologically_ordered():
    x = t([1.0, 2.0], grad=True)
    y = (x * 3.0).relu()
    z = (y + x).sum()
    ids = [n.node_id for n in tape(z)]
    assert ids == sorted(ids)
    for node in tape(z):
        for p in node._parents:
            if p.requires_grad:
                assert p.node_id < node.node_id


# ------------------------------------------------------------------- conv2d
def test_conv_scaling_identity():
    out = F.conv2d(t(np.ones((1, 1, 3, 3))), t([[[[2.0]]]]), t([0.0]))
    np.testing.assert_array_equal(out.data, 2.0 * np.ones((1, 1, 3, 3)))


def test_conv_center_is_sum_of_window():
    x = np.arange(9.0).reshape(1, 1, 3, 3)
    out = F.conv2d(t(x), t(np.ones((1, 1, 3, 3))), t([0.0]), padding=1)
    assert out.data[0, 0, 1, 1] == 36.0
    # corner sees the 2x2 neighbourhood only
    assert out.data[0, 0, 0, 0] == 0 + 1 + 3 + 4


def test_conv_shape_arithmetic():
    out = F.conv2d(t(np.zeros((1, 8, 16, 16))), t(np.zeros((4, 8, 1, 1))), t(np.zeros(4)))
    assert out.shape == (1, 4, 16, 16)
    out = F.conv2d(t(np.zeros((2, 3, 9, 9))), t(np.zeros((5, 3, 3, 3))), None, stride=2, padding=1)
    assert out.shape == (2, 5, (9 + 2 - 3) // 2 + 1, 5)


def test_conv_channel_mismatch_rejected():
    with pytest.raises(ShapeError):
        F.conv2d(t(np.zeros((1, 3, 4, 4))), t(np.zeros((2, 4, 1, 1))), t(np.zeros(2)))


@pytest.mark.parametrize("k,stride,pad", [(1, 1, 0), (3, 1, 1), (3, 2, 1), (3, 1, 0), (1, 2, 0)])
def test_conv_im2col_bit_identical_to_naive_on_integer_inputs(k, stride, pad):
    rng = np.random.default_rng(k * 10 + stride + pad)
    x = rng.integers(-4, 5, size=(2, 3, 7, 6)).astype(float)
    w = rng.integers(-3, 4, size=(4, 3, k, k)).astype(float)
    b = rng.integers(-2, 3, size=4).astype(float)
    fast = F.conv2d(t(x), t(w), t(b), stride=stride, padding=pad).data
    slow = F.conv2d_naive(x, w, b, stride=stride, padding=pad)
    np.testing.assert_array_equal(fast, slow)


def test_conv_matches_naive_on_random_inputs():
    rng = np.random.default_rng(3)
    x, w, b = rng.normal(size=(2, 4, 6, 5)), rng.normal(size=(3, 4, 3, 3)), rng.normal(size=3)
    np.testing.assert_allclose(F.conv2d(t(x), t(w), t(b), padding=1).data, F.conv2d_naive(x, w, b, padding=1), rtol=1e-12, atol=1e-12)


@given(st.floats(-50, 50).filter(lambda a: abs(a) > 1e-3), st.integers(0, 2**31 - 1))
@settings(max_examples=30, deadline=None)
def test_conv_linearity(a, seed):
    rng = np.random.default_rng(seed)
    x, w = rng.normal(size=(1, 3, 5, 5)), rng.normal(size=(2, 3, 3, 3))
    lhs = F.conv2d(t(a * x), t(w), None, padding=1).data
    rhs = a * F.conv2d(t(x), t(w), None, padding=1).data
    np.testing.assert_allclose(lhs, rhs, rtol=1e-12, atol=1e-12 * abs(a))


# -------------------------------------------------------------------- pool
def test_pool_examples():
    x = t([[[[1.0, 3.0], [5.0, 7.0]]]])
    assert F.pool2d(x, "avg", 2, 2).data.item() == 4.0
    assert F.pool2d(x, "max", 2, 2).data.item() == 7.0
    c = F.pool2d(t(np.full((1, 2, 6, 4), 0.3)), "avg", 2, 2)
    assert c.shape == (1, 2, 3, 2)
    np.testing.assert_allclose(c.data, 0.3, rtol=0, atol=1e-15)


def test_maxpool_ties_route_to_lowest_flat_index():
    x = t(np.ones((1, 1, 2, 2)), grad=True)
    F.pool2d(x, "max", 2, 2).sum().backward()
    np.testing.assert_array_equal(x.grad[0, 0], [[1.0, 0.0], [0.0, 0.0]])


def test_avgpool_distributes_uniformly():
    x = t(np.arange(16.0).reshape(1, 1, 4, 4), grad=True)
    F.pool2d(x, "avg", 2, 2).sum().backward()
    np.testing.assert_array_equal(x.grad, np.full((1, 1, 4, 4), 0.25))


def test_pool_kernel_larger_than_input_rejected():
    with pytest.raises(ShapeError):
        F.pool2d(t(np.zeros((1, 1, 2, 2))), "avg", 3, 3)


# ---------------------------------------------------------------- upsample
def test_upsample_constant_map():
    out = F.upsample_bilinear(t(np.full((1, 1, 4, 4), 0.7)), 8, 8)
    np.testing.assert_allclose(out.data, 0.7, rtol=0, atol=1e-15)
    out = F.upsample_bilinear(t(np.full((1, 2, 1, 1), -1.5)), 5, 3)
    np.testing.assert_allclose(out.data, -1.5, rtol=0, atol=1e-15)


def test_upsample_hand_bilinear():
    # corner impulse, 2x2 -> 4x4, half-pixel centres: output (1,1) samples source (0.25, 0.25)
    out = F.upsample_bilinear(t([[[[1.0, 0.0], [0.0, 0.0]]]]), 4, 4).data[0, 0]
    assert out[0, 0] == pytest.approx(1.0)
    assert out[1, 1] == pytest.approx(0.75 * 0.75)
    assert out[1, 2] == pytest.approx(0.75 * 0.25)
    assert out[3, 3] == pytest.approx(0.0)


def test_upsample_zero_target_rejected():
    with pytest.raises(ShapeError):
        F.upsample_bilinear(t(np.zeros((1, 1, 2, 2))), 0, 4)


# -------------------------------------------------------------- elementwise
def test_elementwise_examples():
    np.testing.assert_array_equal(elementwise("relu", t([-1.0, 0.0, 2.0])).data, [0, 0, 2])
    assert elementwise("sigmoid", t(0.0)).data == 0.5
    np.testing.assert_array_equal(elementwise("add", t([1.0, 2.0]), t([3.0, 4.0])).data, [4, 6])
    np.testing.assert_array_equal(elementwise("abs", t([-2.0, 3.0])).data, [2, 3])


def test_elementwise_incompatible_shapes_rejected():
    with pytest.raises(ShapeError):
        elementwise("mul", t(np.ones((2, 3))), t(np.ones((4,))))


def test_per_channel_broadcast_gradient():
    x = t(np.ones((2, 3, 4, 4)), grad=True)
    s = t(np.arange(3.0).reshape(1, 3, 1, 1), grad=True)
    (x * s).sum().backward()
    np.testing.assert_array_equal(s.grad.reshape(-1), [32.0, 32.0, 32.0])


def test_sigmoid_extreme_logits_finite():
    out = elementwise("sigmoid", t([-800.0, 800.0]))
    np.testing.assert_array_equal(out.data, [0.0, 1.0])


# ------------------------------------------------------------ channel_stats
def test_channel_stats_examples():
    eps = 1e-5
    mu, sd = F.channel_stats(t(np.full((1, 1, 3, 3), 3.0)), eps)
    assert mu.data.item() == 3.0 and sd.data.item() == pytest.approx(np.sqrt(eps))
    mu, sd = F.channel_stats(t([[[[0.0, 2.0]]]]), eps)
    assert mu.data.item() == 1.0 and sd.data.item() == pytest.approx(np.sqrt(1.0 + eps))


def test_channel_stats_permutes_with_channels():
    x = np.random.default_rng(0).normal(size=(2, 3, 4, 5))
    perm = [2, 0, 1]
    mu, sd = F.channel_stats(t(x))
    mu_p, sd_p = F.channel_stats(t(x[:, perm]))
    np.testing.assert_array_equal(mu_p.data, mu.data[:, perm])
    np.testing.assert_array_equal(sd_p.data, sd.data[:, perm])


# ----------------------------------------------------------------- backward
def test_backward_linear_and_square():
    x = t([1.0, -2.0, 3.0])
    w = t([0.5, 0.5, 0.5], grad=True)
    (w * x).sum().backward()
    np.testing.assert_array_equal(w.grad, x.data)
    y = t([1.0, -2.0, 3.0], grad=True)
    (y * y).sum().backward()
    np.testing.assert_array_equal(y.grad, 2 * y.data)


def test_backward_accumulates():
    x = t([1.0, 2.0], grad=True)
    loss = (x * x).sum()
    backward(loss)
    backward(loss)
    np.testing.assert_array_equal(x.grad, 4 * x.data)
    x.zero_grad()
    assert x.grad is None


def test_backward_rejects_non_scalar():
    x = t([1.0, 2.0], grad=True)
    with pytest.raises(ShapeError):
        backward(x * 2.0)


def test_no_grad_records_nothing():
    x = t([1.0], grad=True)
    with no_grad():
        y = x * 2.0
    assert not y.requires_grad and y._parents == ()


# --------------------------------------------------------------- gradcheck
def test_finite_diff_on_sum_of_squares():
    x = t(np.random.default_rng(0).normal(size=(3, 4)), grad=True)
    assert finite_diff_check(lambda: (x * x).sum(), [x]) < 1e-8


def test_finite_diff_reports_non_finite_as_failure():
    x = t([0.0], grad=True)
    assert finite_diff_check(lambda: F.bce_with_logits(x, np.ones(1)) / t([0.0]), [x]) == np.inf


def _op_cases():
    def conv(r):
        x, w, b = (t(r.normal(size=s), grad=True) for s in [(2, 3, 5, 5), (2, 3, 3, 3), (2,)])
        return lambda: (F.conv2d(x, w, b, stride=2, padding=1).square()).sum(), [x, w, b]

    def conv1(r):
        x, w, b = (t(r.normal(size=s), grad=True) for s in [(1, 4, 3, 3), (2, 4, 1, 1), (2,)])
        return lambda: (F.conv2d(x, w, b).square()).sum(), [x, w, b]

    def maxpool(r):
        x = t(r.normal(size=(1, 2, 6, 6)), grad=True)
        return lambda: (F.pool2d(x, "max", 2, 2).square()).sum(), [x]

    def avgpool(r):
        x = t(r.normal(size=(1, 2, 6, 6)), grad=True)
        return lambda: (F.pool2d(x, "avg", 3, 3).square()).sum(), [x]

    def adaptive(r):
        x = t(r.normal(size=(1, 2, 7, 5)), grad=True)
        return lambda: (F.adaptive_avg_pool2d(x, 3).square()).sum(), [x]

    def upsample(r):
        x = t(r.normal(size=(1, 2, 3, 4)), grad=True)
        return lambda: (F.upsample_bilinear(x, 7, 9).square()).sum(), [x]

    def stats(r):
        x = t(r.normal(size=(2, 3, 4, 4)), grad=True)

        def f():
            mu, sd = F.channel_stats(x)
            return (mu * sd).sum() + sd.square().sum()

        return f, [x]

    def elementwise_chain(r):
        a = t(r.normal(size=(2, 3)), grad=True)
        b = t(r.uniform(0.5, 2.0, size=(2, 3)), grad=True)

        def f():
            return (elementwise("div", elementwise("sigmoid", a), b) + elementwise("sqrt", b) * elementwise("abs", a) - elementwise("relu", a)).sum()

        return f, [a, b]

    def bce(r):
        z = t(r.normal(size=(1, 1, 4, 4)) * 3, grad=True)
        y = (r.random((1, 1, 4, 4)) > 0.5).astype(float)
        return lambda: F.bce_with_logits(z, y), [z]

    return dict(conv=conv, conv1=conv1, maxpool=maxpool, avgpool=avgpool, adaptive=adaptive, upsample=upsample, stats=stats, elementwise=elementwise_chain, bce=bce)


@pytest.mark.parametrize("name", sorted(_op_cases()))
@pytest.mark.parametrize("seed", range(10))
def test_every_op_passes_gradcheck(name, seed):
    f, params = _op_cases()[name](np.random.default_rng(seed))
    assert finite_diff_check(f, params) <= 1e-4


def test_determinism_bit_identical():
    def run():
        r = np.random.default_rng(7)
        x = t(r.normal(size=(2, 3, 6, 6)), grad=True)
        w = t(r.normal(size=(4, 3, 3, 3)), grad=True)
        out = F.pool2d(F.conv2d(x, w, None, padding=1).relu(), "max", 2, 2)
        loss = (out * out).sum()
        loss.backward()
        return out.data.copy(), x.grad.copy(), w.grad.copy()

    a, b = run(), run()
    for u, v in zip(a, b):
        assert u.tobytes() == v.tobytes()


# -------------------------------------------------------------- checkpoint
def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    params = {"b.w": rng.normal(size=(2, 3, 1, 1)), "a.b": rng.normal(size=4), "s": np.array(3.0)}
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, params)
    back = load_checkpoint(path)
    assert sorted(back) == sorted(params)
    for k in params:
        assert back[k].tobytes() == np.asarray(params[k], dtype=float).tobytes()
        assert back[k].shape == np.shape(params[k])


def test_checkpoint_bytes_independent_of_insertion_order():
    a = {"x": np.ones(2), "y": np.zeros((1, 2))}
    b = {"y": np.zeros((1, 2)), "x": np.ones(2)}
    assert dumps(a) == dumps(b)


def test_checkpoint_layout_is_little_endian_float64():
    blob = dumps({"v": np.array([1.5])})
    assert blob[:8] == b"TXCKPT\x00\x00"
    assert blob[-8:] == np.array([1.5], dtype="<f8").tobytes()


def test_checkpoint_rejects_garbage():
    with pytest.raises(CheckpointError):
        loads(b"not a checkpoint at all")
