import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from taig import autodiff, models
from taig.autodiff import ShapeError


def reference_forward(net, x):
    """Throwaway forward pass straight from the stored layer parameters."""
    h = np.asarray(x, dtype=np.float64).reshape(-1)
    for i, layer in enumerate(net.layers):
        h = h @ layer.weight + layer.bias
        if i < len(net.layers) - 1:
            h = np.maximum(h, 0.0)
    return h


def kink_free(net, x, margin=1e-4):
    return all(np.abs(z).min() > margin for z in autodiff.preactivations(net, x))


def test_identity_forward(identity_net):
    logits, _ = autodiff.forward(identity_net, [0.2, 0.8])
    np.testing.assert_array_equal(logits, [0.2, 0.8])


def test_dead_relu(single_relu_net):
    logits, _ = autodiff.forward(single_relu_net, [0.1, 0.1])
    assert logits[0] == 0.0
    np.testing.assert_array_equal(autodiff.grad_input(single_relu_net, [0.1, 0.1], 0), [0.0, 0.0])


def test_seeded_mlp_matches_reference():
    net = models.init("mlp-32-16", (10,), 4, seed=3)
    rng = np.random.default_rng(0)
    for _ in range(5):
        x = rng.uniform(size=10)
        np.testing.assert_allclose(autodiff.logits(net, x), reference_forward(net, x), rtol=0, atol=1e-12)


def test_shape_mismatch_rejected(mlp):
    with pytest.raises(ShapeError):
        autodiff.forward(mlp, np.zeros(5))
    with pytest.raises(ValueError):
        autodiff.forward(mlp, np.full(6, np.nan))


def test_invalid_class_index(mlp):
    with pytest.raises(IndexError):
        autodiff.grad_input(mlp, np.zeros(6), 3)
    with pytest.raises(IndexError):
        autodiff.grad_input(mlp, np.zeros(6), -1)


def test_linear_gradient_is_weight(linear_net):
    rng = np.random.default_rng(1)
    w = linear_net.layers[0].weight
    for _ in range(3):
        x = rng.uniform(size=4)
        for k in range(3):
            np.testing.assert_array_equal(autodiff.grad_input(linear_net, x, k), w[:, k])
            np.testing.assert_allclose(autodiff.finite_diff_grad(linear_net, x, k, h=1e-3), w[:, k], atol=1e-10)


def test_identity_finite_difference_is_basis(identity_net):
    fd = np.stack([autodiff.finite_diff_grad(identity_net, [0.3, 0.6], k, 1e-5) for k in range(2)])
    np.testing.assert_allclose(fd, np.eye(2), atol=1e-9)


def test_finite_diff_rejects_bad_step(mlp):
    with pytest.raises(ValueError):
        autodiff.finite_diff_grad(mlp, np.zeros(6), 0, h=0.0)


@pytest.mark.parametrize("arch, shape", [("mlp-16-8", (6,)), ("mlp-32", (12,)), ("cnn-c3k3-8", (1, 5, 5))])
def test_gradient_matches_finite_differences(arch, shape):
    net = models.init(arch, shape, 3, seed=11)
    rng = np.random.default_rng(5)
    checked = 0
    while checked < 10:
        x = rng.uniform(size=shape)
        if not kink_free(net, x):
            continue
        for k in range(3):
            np.testing.assert_allclose(autodiff.grad_input(net, x, k), autodiff.finite_diff_grad(net, x, k, 1e-5),
                                       rtol=0, atol=1e-6)
        checked += 1


def test_batch_gradient_matches_rows(mlp):
    rng = np.random.default_rng(2)
    xs = rng.uniform(size=(5, 6))
    ks = np.array([0, 2, 1, 1, 0])
    batch = autodiff.grad_input(mlp, xs, ks)
    for x, k, g in zip(xs, ks, batch):
        # batched matmul may round differently from the row-wise one
        np.testing.assert_allclose(g, autodiff.grad_input(mlp, x, k), rtol=0, atol=1e-13)


def test_forward_is_deterministic(mlp):
    x = np.linspace(0, 1, 6)
    a, _ = autodiff.forward(mlp, x)
    b, _ = autodiff.forward(mlp, x)
    assert a.tobytes() == b.tobytes()


def test_tape_replay_is_bit_exact(mlp):
    x = np.linspace(0, 1, 6)[None]
    logits, tape = autodiff.forward(mlp, x)
    assert tape.replay(x).tobytes() == logits.tobytes()


def test_tape_add_and_scale():
    tape = autodiff.Tape()
    x = tape.leaf(np.array([[1.0, -2.0]]))
    y = tape.scale(tape.add(x, tape.relu(x)), 3.0)  # 3 * (x + relu(x))
    np.testing.assert_array_equal(tape.values[y], [[6.0, -6.0]])
    np.testing.assert_array_equal(tape.backward(y, np.ones((1, 2))), [[6.0, 3.0]])
    np.testing.assert_array_equal(tape.replay(np.array([[0.5, 1.0]])), [[3.0, 6.0]])


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_gradient_of_logit_sum_is_sum_of_gradients(seed):
    net = models.init("mlp-12-6", (5,), 3, seed=seed % 1000)
    x = np.random.default_rng(seed).uniform(size=5)
    _, tape = autodiff.forward(net, x)
    node = len(tape.values) - 1
    total = tape.backward(node, np.ones((1, 3)))[0]
    parts = sum(autodiff.grad_input(net, x, k) for k in range(3))
    np.testing.assert_allclose(total, parts, rtol=0, atol=1e-12)
