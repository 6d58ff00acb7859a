import numpy as np
import pytest

from bcosgnn.bcos import (
    BcosLayer,
    BcosMlp,
    bcos_backward,
    bcos_dynamic_weights,
    bcos_forward,
    init_layer,
    init_mlp,
    mlp_dynamic_weights,
    mlp_forward,
)
from bcosgnn.linalg import ContractViolation, Rng


def random_layer(q, p, b, seed):
    return init_layer(q, p, b, Rng(seed))


def finite_diff(f, x, h=1e-5):
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = grad.reshape(-1)
    xf = x.reshape(-1)
    for i in range(xf.size):
        old = xf[i]
        xf[i] = old + h
        hi = f(x)
        xf[i] = old - h
        lo = f(x)
        xf[i] = old
        flat[i] = (hi - lo) / (2 * h)
    return grad


def test_forward_hand_case():
    layer = BcosLayer(W=np.array([[5.0, 0.0]]), b=2.0)
    out = bcos_forward(layer, np.array([3.0, 4.0]))
    assert out[0] == pytest.approx(1.8)


def test_forward_zero_input():
    layer = random_layer(4, 3, 2.0, 0)
    assert np.array_equal(bcos_forward(layer, np.zeros(3)), np.zeros(4))


def test_forward_b1_is_normalized_linear():
    rng = np.random.default_rng(1)
    W = rng.normal(size=(5, 4))
    layer = BcosLayer(W=W, b=1.0)
    x = rng.normal(size=4)
    What = W / np.linalg.norm(W, axis=1, keepdims=True)
    assert np.allclose(bcos_forward(layer, x), What @ x, rtol=1e-12, atol=1e-12)


def test_forward_bounded_by_input_norm():
    rng = np.random.default_rng(2)
    for b in (1.0, 1.5, 2.0, 3.0):
        layer = random_layer(6, 5, b, 3)
        for _ in range(50):
            x = rng.normal(size=5) * rng.uniform(0.01, 50)
            out = bcos_forward(layer, x)
            assert np.all(np.abs(out) <= np.linalg.norm(x) + 1e-12)


def test_forward_positive_scale_covariant():
    rng = np.random.default_rng(4)
    layer = random_layer(4, 6, 2.5, 9)
    for _ in range(20):
        x = rng.normal(size=6)
        lam = rng.uniform(0.1, 10)
        assert np.allclose(bcos_forward(layer, lam * x), lam * bcos_forward(layer, x), rtol=1e-10)


def test_dynamic_weights_b1_returns_normalized_weights():
    rng = np.random.default_rng(5)
    W = rng.normal(size=(3, 4))
    layer = BcosLayer(W=W, b=1.0)
    What = W / np.linalg.norm(W, axis=1, keepdims=True)
    for _ in range(5):
        assert np.allclose(bcos_dynamic_weights(layer, rng.normal(size=4)), What)


def test_dynamic_weights_hand_case():
    layer = BcosLayer(W=np.array([[2.0, 0.0]]), b=2.0)
    Wt = bcos_dynamic_weights(layer, np.array([3.0, 4.0]))
    assert np.allclose(Wt, [[0.6, 0.0]])
    assert Wt @ np.array([3.0, 4.0]) == pytest.approx(1.8)


def test_dynamic_linearity_many_random_instances():
    rng = np.random.default_rng(6)
    for trial in range(1000):
        b = [1.0, 1.5, 2.0, 3.0][trial % 4]
        q = int(rng.integers(1, 7))
        p = int(rng.integers(1, 7))
        layer = random_layer(q, p, b, trial)
        x = rng.normal(size=p) * rng.uniform(0.01, 10)
        fwd = bcos_forward(layer, x)
        via = bcos_dynamic_weights(layer, x) @ x
        assert np.linalg.norm(fwd - via) <= 1e-9 * (1.0 + np.linalg.norm(fwd))


def test_backward_matches_finite_differences():
    rng = np.random.default_rng(7)
    layer = random_layer(4, 3, 2.0, 11)
    x = rng.normal(size=3)
    upstream = rng.normal(size=4)
    grad_x, grad_W = bcos_backward(layer, x, upstream)

    fd_x = finite_diff(lambda v: float(bcos_forward(layer, v) @ upstream), x.copy())
    assert np.allclose(grad_x, fd_x, rtol=1e-4, atol=1e-7)

    def loss_of_W(W):
        return float(bcos_forward(BcosLayer(W=W, b=layer.b), x) @ upstream)

    fd_W = finite_diff(loss_of_W, layer.W.copy())
    assert np.allclose(grad_W, fd_W, rtol=1e-4, atol=1e-7)


@pytest.mark.parametrize("b", [1.0, 1.5, 2.0, 3.0])
def test_backward_finite_differences_across_exponents(b):
    rng = np.random.default_rng(int(b * 10))
    layer = random_layer(5, 4, b, int(b * 7))
    x = rng.normal(size=4)
    upstream = rng.normal(size=5)
    grad_x, grad_W = bcos_backward(layer, x, upstream)
    fd_x = finite_diff(lambda v: float(bcos_forward(layer, v) @ upstream), x.copy())
    fd_W = finite_diff(
        lambda W: float(bcos_forward(BcosLayer(W=W, b=b), x) @ upstream), layer.W.copy()
    )
    assert np.allclose(grad_x, fd_x, rtol=1e-4, atol=1e-7)
    assert np.allclose(grad_W, fd_W, rtol=1e-4, atol=1e-7)


def test_backward_aligned_row_unit_directional_gradient():
    # For x exactly on a unit row and B=2, d out/d||x|| along x equals 1.
    x = np.array([3.0, 4.0])
    layer = BcosLayer(W=np.array([x / 5.0, [0.0, 1.0]]), b=2.0)
    grad_x, _ = bcos_backward(layer, x, np.array([1.0, 0.0]))
    assert float(grad_x @ (x / 5.0)) == pytest.approx(1.0, abs=1e-9)


def test_mlp_single_layer_equals_layer():
    layer = random_layer(3, 4, 2.0, 13)
    mlp = BcosMlp(layers=[layer])
    x = np.random.default_rng(8).normal(size=4)
    out, _ = mlp_forward(mlp, x)
    assert np.allclose(out, bcos_forward(layer, x))
    assert np.allclose(mlp_dynamic_weights(mlp, x), bcos_dynamic_weights(layer, x))


def test_mlp_b1_composition_is_constant_linear():
    mlp = init_mlp([4, 5, 3], b=1.0, rng=Rng(3))
    rng = np.random.default_rng(9)
    W1 = mlp_dynamic_weights(mlp, rng.normal(size=4))
    W2 = mlp_dynamic_weights(mlp, rng.normal(size=4))
    assert np.allclose(W1, W2, rtol=1e-12, atol=1e-12)
    x = rng.normal(size=4)
    out, _ = mlp_forward(mlp, x)
    assert np.allclose(out, W1 @ x, rtol=1e-10)


def test_mlp_dynamic_weights_reproduce_forward():
    rng = np.random.default_rng(10)
    for trial in range(100):
        dims = [int(rng.integers(2, 6)) for _ in range(4)]
        mlp = init_mlp(dims, b=[1.0, 1.5, 2.0, 3.0][trial % 4], rng=Rng(trial))
        x = rng.normal(size=dims[0]) * rng.uniform(0.1, 5)
        out, _ = mlp_forward(mlp, x)
        via = mlp_dynamic_weights(mlp, x) @ x
        assert np.linalg.norm(out - via) <= 1e-9 * (1.0 + np.linalg.norm(out))


def test_mlp_contribution_rows_sum_to_output():
    mlp = init_mlp([5, 6, 4], b=2.0, rng=Rng(17))
    rng = np.random.default_rng(11)
    x = rng.normal(size=5)
    out, _ = mlp_forward(mlp, x)
    contrib = mlp_dynamic_weights(mlp, x) * x
    assert np.allclose(contrib.sum(axis=1), out, rtol=1e-9, atol=1e-12)


def test_dimension_chain_violation():
    l1 = random_layer(3, 4, 2.0, 1)
    l2 = random_layer(2, 5, 2.0, 2)
    with pytest.raises(ContractViolation):
        BcosMlp(layers=[l1, l2])


def test_exponent_below_one_rejected():
    with pytest.raises(ContractViolation):
        BcosLayer(W=np.eye(2), b=0.5)
