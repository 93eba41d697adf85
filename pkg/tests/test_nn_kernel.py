import numpy as np
import pytest

from src.opad.nn_kernel import DenseNetKernel, MomentumSGD, softmax_cross_entropy


def numeric_gradient(f, param, eps=1e-6):
    grad = np.zeros_like(param)
    for idx in np.ndindex(param.shape):
        saved = param[idx]
        param[idx] = saved + eps
        up = f()
        param[idx] = saved - eps
        down = f()
        param[idx] = saved
        grad[idx] = (up - down) / (2 * eps)
    return grad


def test_backward_matches_finite_differences():
    rng = np.random.default_rng(0)
    kernel = DenseNetKernel([5, 7, 6, 3], rng)
    x = rng.normal(size=(4, 5))
    weights = rng.normal(size=(4, 3))

    def loss():
        return float((kernel.forward(x) * weights).sum())

    out, cache = kernel.forward_cached(x)
    grads, grad_x = kernel.backward(cache, weights)
    for param, grad in zip(kernel.parameters(), grads):
        assert np.allclose(grad, numeric_gradient(loss, param), atol=1e-5)

    x_grad = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        saved = x[idx]
        x[idx] = saved + 1e-6
        up = loss()
        x[idx] = saved - 1e-6
        down = loss()
        x[idx] = saved
        x_grad[idx] = (up - down) / 2e-6
    assert np.allclose(grad_x, x_grad, atol=1e-5)


def test_softmax_cross_entropy_gradient():
    rng = np.random.default_rng(1)
    logits = rng.normal(size=(6, 4))
    targets = np.array([0, 1, 2, 3, 1, 0])
    loss, probs, grad = softmax_cross_entropy(logits, targets)
    assert np.allclose(probs.sum(axis=1), 1.0)
    assert loss > 0
    numeric = numeric_gradient(lambda: softmax_cross_entropy(logits, targets)[0], logits)
    assert np.allclose(grad, numeric, atol=1e-6)


def test_input_shape_is_checked():
    kernel = DenseNetKernel([3, 2], np.random.default_rng(0))
    with pytest.raises(ValueError):
        kernel.forward(np.zeros((2, 4)))
    with pytest.raises(ValueError):
        DenseNetKernel([3], np.random.default_rng(0))


def test_zero_init_output_layer():
    kernel = DenseNetKernel([3, 4, 2], np.random.default_rng(0), zero_init_output=True)
    assert np.all(kernel.forward(np.ones((5, 3))) == 0.0)


def test_flat_round_trip():
    kernel = DenseNetKernel([3, 4, 2], np.random.default_rng(2))
    rebuilt = DenseNetKernel.from_manifest(kernel.shape_manifest(), kernel.get_flat())
    x = np.random.default_rng(3).normal(size=(5, 3))
    assert np.array_equal(kernel.forward(x), rebuilt.forward(x))
    with pytest.raises(ValueError):
        kernel.set_flat(np.zeros(3))


def test_copy_is_independent():
    kernel = DenseNetKernel([3, 2], np.random.default_rng(0))
    clone = kernel.copy()
    kernel.layers[0].weight += 1.0
    assert not np.array_equal(kernel.layers[0].weight, clone.layers[0].weight)


def test_momentum_sgd_updates():
    param = np.array([1.0])
    optimizer = MomentumSGD([param], lr=0.1, momentum=0.9, lr_decay=0.5)
    optimizer.step([np.array([1.0])])
    assert param[0] == pytest.approx(0.9)
    assert optimizer.lr == pytest.approx(0.05)
    optimizer.step([np.array([1.0])])
    # v = 0.9 * 0.1 + 0.05
    assert param[0] == pytest.approx(0.9 - 0.14)
    assert optimizer.steps == 2


def test_momentum_sgd_state_round_trip():
    param = np.array([1.0, 2.0])
    optimizer = MomentumSGD([param], lr=0.1, momentum=0.5)
    optimizer.step([np.array([1.0, -1.0])])
    other = MomentumSGD([param.copy()], lr=1.0, momentum=0.0)
    other.load_state_dict(optimizer.state_dict(), optimizer.velocity)
    assert other.state_dict() == optimizer.state_dict()
    assert np.array_equal(other.velocity[0], optimizer.velocity[0])
    with pytest.raises(ValueError):
        optimizer.step([])
