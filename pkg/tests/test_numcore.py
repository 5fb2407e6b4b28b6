import math

import numpy as np
import pytest

from skgfat.numcore import Tape, Tensor, kernels, layers, ops
from skgfat.numcore import kernels_numpy

from _oracles import finite_difference, max_rel_error, naive_conv2d, naive_maxpool2d


def test_identity_network_passes_input_through():
    net = layers.Sequential([])
    x = Tensor(np.array([[1.0, 2.0, 3.0]]))
    assert np.array_equal(net(x).data, [[1.0, 2.0, 3.0]])


def test_zero_linear_layer_gives_zero_logits(rng):
    net = layers.Sequential([layers.Linear(np.zeros((5, 3)), np.zeros(3))])
    out = net(Tensor(rng.normal(size=(4, 5))))
    assert np.array_equal(out.data, np.zeros((4, 3)))


def test_two_layer_forward_matches_hand_matrix_product(rng):
    w1, b1 = rng.normal(size=(6, 4)), rng.normal(size=4)
    w2, b2 = rng.normal(size=(4, 3)), rng.normal(size=3)
    net = layers.Sequential([layers.Linear(w1, b1), layers.ReLU(), layers.Linear(w2, b2)])
    x = rng.normal(size=(5, 6))
    # oracle: explicit matrix arithmetic, no library layers
    h = np.maximum(x @ w1 + b1, 0.0)
    want = h @ w2 + b2
    got = net(Tensor(x)).data
    assert np.abs(got - want).max() < 1e-12


def test_forward_shape_mismatch_rejected(rng):
    net = layers.Sequential([layers.Linear(rng.normal(size=(6, 4)), rng.normal(size=4))])
    with pytest.raises(ValueError, match="inner dims"):
        net(Tensor(rng.normal(size=(2, 5))))


def test_backward_of_sum_is_all_ones(rng):
    x = Tensor(rng.normal(size=(3, 4)))
    with Tape() as tape:
        loss = ops.tsum(x)
    tape.backward(loss)
    assert np.array_equal(x.grad, np.ones((3, 4)))


def test_backward_of_half_square_norm_is_identity():
    x = Tensor(np.array([[3.0, -4.0]]))
    with Tape() as tape:
        loss = ops.scale(ops.tsum(ops.mul(x, x)), 0.5)
    tape.backward(loss)
    assert np.allclose(x.grad, [[3.0, -4.0]])


def test_backward_without_forward_errors():
    tape = Tape()
    with pytest.raises(RuntimeError, match="no recorded forward"):
        tape.backward(Tensor(np.zeros(2)))


def test_backward_foreign_root_errors(rng):
    x = Tensor(rng.normal(size=(2, 2)))
    with Tape() as tape:
        ops.tsum(x)
    with pytest.raises(RuntimeError, match="not produced on this tape"):
        tape.backward(Tensor(np.zeros(1)))


def test_seed_gradient_shape_checked(rng):
    x = Tensor(rng.normal(size=(2, 3)))
    with Tape() as tape:
        y = ops.relu(x)
    with pytest.raises(ValueError, match="seed gradient shape"):
        tape.backward(y, seed=np.ones((2, 2)))


def _two_layer_net(rng):
    return layers.Sequential([
        layers.Linear(rng.normal(size=(5, 7)) * 0.7, rng.normal(size=7) * 0.2),
        layers.ReLU(),
        layers.Linear(rng.normal(size=(7, 3)) * 0.7, rng.normal(size=3) * 0.2),
    ])


def test_two_layer_gradients_match_finite_differences(rng):
    net = _two_layer_net(rng)
    x = rng.normal(size=(4, 5)) + 0.3
    targets = np.eye(3)[rng.integers(0, 3, size=4)]

    def loss_value():
        return ops.cross_entropy(net(Tensor(x)), targets).item()

    with Tape() as tape:
        loss = ops.cross_entropy(net(Tensor(x)), targets)
    tape.backward(loss)
    for name, p in net.parameters():
        want = finite_difference(loss_value, p.data)
        assert max_rel_error(p.grad, want) <= 1e-5, name


@pytest.mark.parametrize("layer_builder,x_shape", [
    (lambda rng: layers.Linear(rng.normal(size=(6, 4)), rng.normal(size=4)), (3, 6)),
    (lambda rng: layers.Conv2d(rng.normal(size=(3, 2, 3, 3)), rng.normal(size=3), padding=1), (2, 2, 6, 6)),
    (lambda rng: layers.Conv2d(rng.normal(size=(2, 2, 3, 3)), rng.normal(size=2), stride=2), (2, 2, 7, 7)),
    (lambda rng: layers.ReLU(), (3, 5)),
    (lambda rng: layers.Flatten(), (2, 3, 4, 2)),
])
def test_every_layer_type_gradchecks(layer_builder, x_shape, rng):
    layer = layer_builder(rng)
    x = rng.normal(size=x_shape)
    seed = rng.normal(size=layer(Tensor(x)).data.shape)

    def loss_value():
        return float((layer(Tensor(x)).data * seed).sum())

    xt = Tensor(x.copy())
    with Tape() as tape:
        out = layer(xt)
        with np.errstate(all="ignore"):
            loss = ops.tsum(ops.mul(out, Tensor(seed)))
    tape.backward(loss)
    want_x = finite_difference(loss_value, x)
    assert max_rel_error(xt.grad, want_x) <= 1e-5
    for name, p in layer.parameters():
        want = finite_difference(loss_value, p.data)
        assert max_rel_error(p.grad, want) <= 1e-5, name


def test_maxpool_gradchecks_off_ties(rng):
    # distinct pool entries keep the finite-difference comparison valid
    x = rng.permutation(64).reshape(1, 1, 8, 8).astype(np.float64)
    layer = layers.MaxPool2d()
    seed = rng.normal(size=(1, 1, 4, 4))

    def loss_value():
        return float((layer(Tensor(x)).data * seed).sum())

    xt = Tensor(x.copy())
    with Tape() as tape:
        loss = ops.tsum(ops.mul(layer(xt), Tensor(seed)))
    tape.backward(loss)
    want = finite_difference(loss_value, x, step=1e-4)
    assert max_rel_error(xt.grad, want) <= 1e-5


def test_cross_entropy_uniform_logits_is_log_m():
    logits = Tensor(np.zeros((2, 4)))
    targets = np.array([[0.25, 0.25, 0.25, 0.25], [1.0, 0.0, 0.0, 0.0]])
    loss = ops.cross_entropy(logits, targets)
    assert abs(loss.item() - math.log(4)) < 1e-12


def test_cross_entropy_vanishes_at_large_margin():
    logits = Tensor(np.array([[50.0, 0.0, 0.0, 0.0]]))
    targets = np.array([[1.0, 0.0, 0.0, 0.0]])
    assert ops.cross_entropy(logits, targets).item() < 1e-12


def test_cross_entropy_soft_target_matches_direct_formula(rng):
    logits_data = rng.normal(size=(1, 4))
    targets = np.array([[0.7, 0.1, 0.1, 0.1]])
    p = np.exp(logits_data) / np.exp(logits_data).sum()
    want = -(targets * np.log(p)).sum()
    got = ops.cross_entropy(Tensor(logits_data), targets).item()
    assert abs(got - want) < 1e-10


def test_cross_entropy_rejects_non_distribution():
    with pytest.raises(ValueError, match="sum to 1"):
        ops.cross_entropy(Tensor(np.zeros((1, 3))), np.array([[0.5, 0.2, 0.2]]))
    with pytest.raises(ValueError, match="non-negative"):
        ops.cross_entropy(Tensor(np.zeros((1, 3))), np.array([[1.5, -0.3, -0.2]]))


def test_cross_entropy_gradient_matches_finite_differences(rng):
    logits_data = rng.normal(size=(3, 5))
    targets = rng.uniform(0.1, 1.0, size=(3, 5))
    targets /= targets.sum(axis=1, keepdims=True)

    def loss_value():
        return ops.cross_entropy(Tensor(logits_data), targets).item()

    t = Tensor(logits_data.copy())
    with Tape() as tape:
        loss = ops.cross_entropy(t, targets)
    tape.backward(loss)
    want = finite_difference(loss_value, logits_data)
    assert max_rel_error(t.grad, want) <= 1e-6


def test_squared_row_gap_zero_on_equal(rng):
    p = rng.uniform(size=(3, 4))
    assert np.array_equal(ops.squared_row_gap(Tensor(p), Tensor(p.copy())).data, np.zeros(3))


def test_squared_row_gap_unit_vectors():
    p = Tensor(np.array([[1.0, 0.0]]))
    q = Tensor(np.array([[0.0, 1.0]]))
    assert ops.squared_row_gap(p, q).data[0] == 2.0


def test_squared_row_gap_matches_scalar_loop(rng):
    p, q = rng.uniform(size=(5, 7)), rng.uniform(size=(5, 7))
    got = ops.squared_row_gap(Tensor(p), Tensor(q)).data
    for u in range(5):
        want = sum((p[u, j] - q[u, j]) ** 2 for j in range(7))
        assert abs(got[u] - want) < 1e-12


def test_squared_row_gap_shape_mismatch():
    with pytest.raises(ValueError, match="shape mismatch"):
        ops.squared_row_gap(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 4))))


def test_softmax_rows_are_distributions(rng):
    p = ops.softmax(Tensor(rng.normal(size=(10, 6)) * 30)).data
    assert np.all(p >= 0) and np.all(p <= 1)
    assert np.abs(p.sum(axis=1) - 1).max() < 1e-6


def test_forward_is_deterministic(rng):
    net = _two_layer_net(rng)
    x = rng.normal(size=(8, 5))
    a = net(Tensor(x)).data
    b = net(Tensor(x.copy())).data
    assert np.array_equal(a, b)


# --- kernel backends --------------------------------------------------------

@pytest.mark.parametrize("stride,padding", [(1, 0), (1, 1), (2, 0), (2, 1)])
def test_numpy_conv_matches_naive_loop(stride, padding, rng):
    x = rng.normal(size=(2, 3, 7, 6))
    w = rng.normal(size=(4, 3, 3, 3))
    b = rng.normal(size=4)
    want = naive_conv2d(x, w, b, stride, padding)
    got = kernels_numpy.conv2d_forward(x, w, b, stride, padding)
    assert np.abs(got - want).max() < 1e-12


def test_numpy_maxpool_matches_naive_loop(rng):
    x = rng.normal(size=(2, 3, 8, 8))
    want = naive_maxpool2d(x, 2, 2)
    got, _ = kernels_numpy.maxpool2d_forward(x, 2, 2)
    assert np.array_equal(got, want)


@pytest.mark.skipif(not kernels.HAVE_COMPILED, reason="compiled kernels not built")
@pytest.mark.parametrize("stride,padding", [(1, 0), (1, 1), (2, 0), (2, 1)])
def test_compiled_conv_agrees_with_numpy(stride, padding, rng):
    from skgfat.numcore import _convpool
    x = rng.normal(size=(2, 3, 7, 6))
    w = rng.normal(size=(4, 3, 3, 3))
    b = rng.normal(size=4)
    yc = _convpool.conv2d_forward(x, w, b, stride, padding)
    yn = kernels_numpy.conv2d_forward(x, w, b, stride, padding)
    assert np.abs(yc - yn).max() < 1e-12
    gy = rng.normal(size=yc.shape)
    for got, want in zip(_convpool.conv2d_backward(x, w, np.ascontiguousarray(gy), stride, padding, True, True),
                         kernels_numpy.conv2d_backward(x, w, gy, stride, padding)):
        assert np.abs(got - want).max() < 1e-12


@pytest.mark.skipif(not kernels.HAVE_COMPILED, reason="compiled kernels not built")
def test_compiled_pool_agrees_with_numpy(rng):
    from skgfat.numcore import _convpool
    x = rng.normal(size=(3, 2, 9, 9))
    yc, argc = _convpool.maxpool2d_forward(x, 2, 2)
    yn, argn = kernels_numpy.maxpool2d_forward(x, 2, 2)
    assert np.array_equal(yc, yn)
    assert np.array_equal(argc, argn)
    gy = rng.normal(size=yc.shape)
    gc = _convpool.maxpool2d_backward(argc, np.ascontiguousarray(gy), 9, 9, 2, 2)
    gn = kernels_numpy.maxpool2d_backward(argn, gy, x.shape, 2, 2)
    assert np.array_equal(gc, gn)


@pytest.mark.skipif(not kernels.HAVE_COMPILED, reason="compiled kernels not built")
def test_compiled_kernels_support_float32(rng):
    from skgfat.numcore import _convpool
    x = rng.normal(size=(2, 2, 6, 6)).astype(np.float32)
    w = rng.normal(size=(3, 2, 3, 3)).astype(np.float32)
    b = rng.normal(size=3).astype(np.float32)
    y = _convpool.conv2d_forward(x, w, b, 1, 1)
    assert y.dtype == np.float32
    yn = kernels_numpy.conv2d_forward(x, w, b, 1, 1)
    assert np.abs(y - yn).max() < 1e-5
