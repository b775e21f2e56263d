import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mtkd import tensor as T
from mtkd.gradcheck import check_gradients, readout
from mtkd.optim import Adam, AdamState, adam_step, step_lr
from mtkd.tensor import DimensionError, Tensor


# --- conv2d -----------------------------------------------------------------


def test_conv_identity_kernel():
    x = Tensor(np.ones((1, 4, 4, 1)))
    w = np.zeros((3, 3, 1, 1))
    w[1, 1] = 1
    y = T.conv2d(x, Tensor(w), Tensor(np.zeros(1)))
    np.testing.assert_array_equal(y.data, x.data)


def test_conv_all_ones_same_padding():
    y = T.conv2d(Tensor(np.ones((1, 3, 3, 1))), Tensor(np.ones((3, 3, 1, 1))), Tensor(np.zeros(1)))
    assert y.data[0, 1, 1, 0] == 9
    for i, j in [(0, 0), (0, 2), (2, 0), (2, 2)]:
        assert y.data[0, i, j, 0] == 4
    assert y.data[0, 0, 1, 0] == 6


def test_conv_matches_direct_loop(f64, rng):
    x = rng.standard_normal((2, 5, 4, 3))
    w = rng.standard_normal((3, 3, 3, 2))
    b = rng.standard_normal(2)
    y = T.conv2d(Tensor(x), Tensor(w), Tensor(b)).data
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    ref = np.zeros((2, 5, 4, 2))
    for n in range(2):
        for i in range(5):
            for j in range(4):
                for o in range(2):
                    ref[n, i, j, o] = (xp[n, i : i + 3, j : j + 3, :] * w[..., o]).sum() + b[o]
    np.testing.assert_allclose(y, ref, atol=1e-12)


def test_conv_channel_mismatch_names_axes():
    with pytest.raises(DimensionError, match="C=2.*Cin=3"):
        T.conv2d(Tensor(np.ones((1, 4, 4, 2))), Tensor(np.ones((3, 3, 3, 1))))


def test_conv_valid_padding_shape():
    y = T.conv2d(Tensor(np.ones((1, 5, 6, 1))), Tensor(np.ones((3, 3, 1, 2))), padding="valid")
    assert y.shape == (1, 3, 4, 2)


# --- pixel shuffle ------------------------------------------------------------


def test_pixel_unshuffle_order():
    x = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 2, 2, 1))
    np.testing.assert_array_equal(T.pixel_unshuffle(x, 2).data.reshape(-1), [1, 2, 3, 4])


def test_pixel_shuffle_order():
    x = Tensor(np.array([1.0, 2.0, 3.0, 4.0]).reshape(1, 1, 1, 4))
    np.testing.assert_array_equal(T.pixel_shuffle(x, 2).data[0, :, :, 0], [[1, 2], [3, 4]])


def test_shuffle_factor_one_is_identity(rng):
    x = Tensor(rng.standard_normal((2, 3, 5, 4)))
    np.testing.assert_array_equal(T.pixel_unshuffle(x, 1).data, x.data)
    np.testing.assert_array_equal(T.pixel_shuffle(x, 1).data, x.data)


@pytest.mark.parametrize("s", [1, 2, 3, 4])
def test_unshuffle_then_shuffle_bit_exact(rng, s):
    x = Tensor(rng.standard_normal((2, 4 * s, 2 * s, 3)))
    np.testing.assert_array_equal(T.pixel_shuffle(T.pixel_unshuffle(x, s), s).data, x.data)
    y = Tensor(rng.standard_normal((2, 4, 4, 8 * s * s)))
    np.testing.assert_array_equal(T.pixel_unshuffle(T.pixel_shuffle(y, s), s).data, y.data)


def test_shuffle_errors():
    with pytest.raises(DimensionError):
        T.pixel_unshuffle(Tensor(np.ones((1, 3, 4, 1))), 2)
    with pytest.raises(DimensionError):
        T.pixel_shuffle(Tensor(np.ones((1, 2, 2, 6))), 2)


# --- layer norm ---------------------------------------------------------------


def test_layer_norm_constant_input():
    y = T.layer_norm(Tensor(np.full((2, 4), 3.0)), Tensor(np.ones(4)), Tensor(np.zeros(4)))
    np.testing.assert_array_equal(y.data, 0)


def test_layer_norm_two_values(f64):
    y = T.layer_norm(Tensor([[1.0, 3.0]]), Tensor(np.ones(2)), Tensor(np.zeros(2)), eps=1e-12)
    np.testing.assert_allclose(y.data, [[-1.0, 1.0]], atol=1e-9)


def test_layer_norm_affine_only():
    y = T.layer_norm(Tensor(np.arange(6.0).reshape(2, 3)), Tensor(np.zeros(3)), Tensor(np.full(3, 5.0)))
    np.testing.assert_array_equal(y.data, 5)


def test_layer_norm_rejects_bad_eps():
    with pytest.raises(ValueError):
        T.layer_norm(Tensor(np.ones((1, 2))), Tensor(np.ones(2)), Tensor(np.zeros(2)), eps=0)


def test_layer_norm_moments(f64, rng):
    y = T.layer_norm(Tensor(rng.standard_normal((5, 7)) * 3 + 2), Tensor(np.ones(7)), Tensor(np.zeros(7)))
    np.testing.assert_allclose(y.data.mean(-1), 0, atol=1e-12)
    np.testing.assert_allclose(y.data.var(-1), 1, atol=1e-4)


# --- backward -----------------------------------------------------------------


def test_sum_grad_is_ones(rng):
    x = T.parameter(rng.standard_normal((2, 3, 4)))
    T.tsum(x).backward()
    np.testing.assert_array_equal(x.grad, 1)


def test_l1_subgradient(f64):
    x = T.parameter([1.0, -2.0, 0.5, 3.0])
    y = Tensor([0.0, 1.0, 0.5, 5.0])
    T.l1_loss(x, y).backward()
    np.testing.assert_array_equal(x.grad, [0.25, -0.25, 0.0, -0.25])


def test_l1_grad_matches_fd_off_kink(f64, rng):
    x = Tensor(rng.standard_normal((3, 4)))
    y = Tensor(x.data + rng.choice([-1, 1], size=(3, 4)) * rng.uniform(0.1, 1, (3, 4)))
    assert check_gradients(lambda: T.l1_loss(x, y), [x]) < 1e-4


def test_backward_needs_scalar():
    x = T.parameter(np.ones(3))
    with pytest.raises(DimensionError):
        (x * 2.0).backward()


def test_grads_accumulate_across_calls():
    x = T.parameter(np.ones(3))
    T.tsum(x).backward()
    T.tsum(x).backward()
    np.testing.assert_array_equal(x.grad, 2)


def test_no_grad_tensor_never_accumulates():
    x = T.parameter(np.ones(3))
    c = Tensor(np.ones(3))
    T.tsum(x * c).backward()
    assert c.grad is None


def test_reachable_intermediates_get_grad():
    x = T.parameter(np.ones(3))
    h = x * 3.0
    T.tsum(h).backward()
    np.testing.assert_array_equal(h.grad, 1)


def test_no_grad_context_records_nothing():
    x = T.parameter(np.ones(3))
    with T.no_grad():
        y = x * 2.0
    assert not y.requires_grad


def test_shared_subexpression(f64):
    x = T.parameter([2.0])
    y = x * x
    T.tsum(y * x + y).backward()
    np.testing.assert_allclose(x.grad, [3 * 4 + 2 * 2])


def test_softmax_rows_sum_to_one(rng):
    y = T.softmax(Tensor(rng.standard_normal((7, 5, 9)) * 10))
    np.testing.assert_allclose(y.data.sum(-1), 1, atol=1e-6)


def test_tape_replay_bit_identical(rng):
    def run():
        r = np.random.default_rng(7)
        x = T.parameter(r.standard_normal((2, 6, 6, 3)))
        w = T.parameter(r.standard_normal((3, 3, 3, 4)))
        y = T.gelu(T.conv2d(x, w))
        loss = T.l1_loss(y, Tensor(np.zeros(y.shape)))
        loss.backward()
        return loss.data.copy(), x.grad.copy(), w.grad.copy()

    a, b = run(), run()
    for u, v in zip(a, b):
        assert np.array_equal(u, v)


# --- finite-difference suite over every registered op ---------------------------

SEEDS = range(20)


def _op_cases():
    def conv(r):
        x = Tensor(r.standard_normal((1, 4, 3, 2)))
        w = Tensor(r.standard_normal((3, 3, 2, 2)))
        b = Tensor(r.standard_normal(2))
        return lambda: readout(T.conv2d(x, w, b)), [x, w, b]

    def linear(r):
        x = Tensor(r.standard_normal((2, 3, 4)))
        w = Tensor(r.standard_normal((4, 5)))
        b = Tensor(r.standard_normal(5))
        return lambda: readout(T.linear(x, w, b)), [x, w, b]

    def add_mul(r):
        a = Tensor(r.standard_normal((2, 3, 4)))
        b = Tensor(r.standard_normal((4,)))
        c = Tensor(r.standard_normal((2, 1, 4)))
        return lambda: readout(T.mul(T.add(a, b), c) - a), [a, b, c]

    def matmul(r):
        a = Tensor(r.standard_normal((2, 3, 4)))
        b = Tensor(r.standard_normal((4, 2)))
        return lambda: readout(T.matmul(a, b)), [a, b]

    def softmax(r):
        x = Tensor(r.standard_normal((3, 5)))
        return lambda: readout(T.softmax(x)), [x]

    def gelu(r):
        x = Tensor(r.standard_normal((3, 5)) * 2)
        return lambda: readout(T.gelu(x)), [x]

    def sigmoid(r):
        x = Tensor(r.standard_normal((3, 5)) * 2)
        return lambda: readout(T.sigmoid(x)), [x]

    def relu(r):
        x = Tensor(r.choice([-1, 1], (3, 5)) * r.uniform(0.1, 1, (3, 5)))
        return lambda: readout(T.relu(x)), [x]

    def concat(r):
        a = Tensor(r.standard_normal((1, 2, 2, 3)))
        b = Tensor(r.standard_normal((1, 2, 2, 2)))
        return lambda: readout(T.concat([a, b])), [a, b]

    def mean(r):
        x = Tensor(r.standard_normal((2, 3, 4, 2)))
        return lambda: readout(T.mean(x, axis=(1, 2))) + T.mean(x), [x]

    def shuffle(r):
        x = Tensor(r.standard_normal((1, 4, 4, 2)))
        return lambda: readout(T.pixel_shuffle(T.pixel_unshuffle(x, 2) * 1.5, 2)), [x]

    def layer_norm(r):
        x = Tensor(r.standard_normal((2, 3, 4)))
        g = Tensor(r.standard_normal(4))
        b = Tensor(r.standard_normal(4))
        return lambda: readout(T.layer_norm(x, g, b)), [x, g, b]

    def shape_ops(r):
        x = Tensor(r.standard_normal((1, 4, 4, 2)))
        idx = np.array([0, 2, 2, 1])
        return (lambda: readout(T.getitem(T.roll(T.permute(x, (0, 2, 1, 3)), (1, -1), (1, 2)), (slice(None), idx)))
                + readout(T.reflect_pad(x, 2, 3), 1)), [x]

    def l1(r):
        x = Tensor(r.standard_normal((2, 3)))
        y = Tensor(x.data + r.choice([-1, 1], (2, 3)) * r.uniform(0.1, 1, (2, 3)))
        return lambda: T.l1_loss(x, y), [x]

    return {f.__name__: f for f in (conv, linear, add_mul, matmul, softmax, gelu, sigmoid, relu, concat,
                                    mean, shuffle, layer_norm, shape_ops, l1)}


OPS = _op_cases()


@pytest.mark.parametrize("op", sorted(OPS))
def test_finite_difference_all_ops(f64, op):
    worst = 0.0
    for seed in SEEDS:
        f, inputs = OPS[op](np.random.default_rng(seed))
        worst = max(worst, check_gradients(f, inputs))
    assert worst < 1e-4, f"{op}: relative error {worst:.2e}"


def test_float32_by_default():
    assert Tensor([1.0]).dtype == np.float32
    with T.precision("f64"):
        assert Tensor([1.0]).dtype == np.float64
    assert Tensor([1.0]).dtype == np.float32


# --- adam -------------------------------------------------------------------


def test_adam_zero_gradient_keeps_param():
    p = T.parameter(np.array([0.5, -1.0]))
    opt = Adam({"p": p}, lr=0.1)
    p.grad = np.zeros(2, dtype=p.dtype)
    opt.step()
    np.testing.assert_array_equal(p.data, np.array([0.5, -1.0], dtype=p.dtype))


def test_adam_first_step_moves_by_lr(f64):
    p = T.parameter(np.array([0.0]))
    p.grad = np.array([1.0])
    state = AdamState(lr=0.1)
    adam_step({"p": p}, state)
    np.testing.assert_allclose(p.data, [-0.1], atol=1e-8)
    assert state.t == 1


def test_adam_missing_grad_errors():
    opt = Adam({"p": T.parameter(np.ones(2))})
    with pytest.raises(ValueError, match="no gradient"):
        opt.step()


def test_adam_state_zero_init_and_counter():
    p = T.parameter(np.ones((2, 3)))
    opt = Adam({"p": p})
    assert opt.state.m["p"].shape == (2, 3) and not opt.state.m["p"].any() and not opt.state.v["p"].any()
    for t in range(1, 4):
        p.grad = np.ones((2, 3), dtype=p.dtype)
        opt.step()
        assert opt.state.t == t


def test_adam_deterministic_100_steps():
    def run():
        r = np.random.default_rng(3)
        p = T.parameter(r.standard_normal(10))
        target = Tensor(r.standard_normal(10))
        opt = Adam({"p": p}, lr=0.01)
        for _ in range(100):
            opt.zero_grad()
            T.l1_loss(p, target).backward()
            opt.step()
        return p.data.copy()

    assert np.array_equal(run(), run())


def test_step_lr_schedule():
    assert step_lr(1e-4, 0, 100) == 1e-4
    assert step_lr(1e-4, 99, 100) == 1e-4
    assert step_lr(1e-4, 100, 100) == pytest.approx(1e-5)
    assert step_lr(1e-4, 250, 100) == pytest.approx(1e-6)
    assert step_lr(1e-4, 10_000, 0) == 1e-4


@settings(max_examples=25, deadline=None)
@given(n=st.integers(1, 3), h=st.integers(1, 4), w=st.integers(1, 4), c=st.integers(1, 3),
       s=st.integers(1, 4), seed=st.integers(0, 2**16))
def test_shuffle_roundtrip_property(n, h, w, c, s, seed):
    x = Tensor(np.random.default_rng(seed).standard_normal((n, h * s, w * s, c)))
    assert np.array_equal(T.pixel_shuffle(T.pixel_unshuffle(x, s), s).data, x.data)
