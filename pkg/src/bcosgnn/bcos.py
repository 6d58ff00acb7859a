"""Alignment-scaled linear layers ("B-cos" transforms) and stacked MLPs.

A layer holds a raw weight matrix W (q x p) and an exponent B >= 1. Rows
are unit-normalized on the fly; the j-th activation for input x is

    out_j = ||x|| * |cos(x, w_hat_j)|^B * sign(cos(x, w_hat_j))
          = <w_hat_j, x> * |cos(x, w_hat_j)|^(B-1),

so every activation is bounded by ||x|| and the whole layer equals an
input-dependent matrix (the "dynamic weights") times x. At B = 1 the layer
is a plain bias-free linear map with unit-norm rows.

Gradients are computed analytically, differentiating through the on-the-fly
row normalization. Inside the backward pass only, |c| is smoothed to
sqrt(c^2 + eps^2) so the derivative stays Lipschitz near c = 0 for B < 2;
the forward and dynamic-weight paths always use the exact formula.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .linalg import ContractViolation, Rng, as_matrix, row_l2_normalize, row_norms

# Half-width of the cosine smoothing band used in gradients only.
GRAD_SMOOTH_EPS = 1e-6


@dataclass
class BcosLayer:
    """Raw trainable weights plus the fixed alignment exponent."""

    W: np.ndarray
    b: float

    def __post_init__(self):
        self.W = as_matrix(self.W)
        if self.b < 1.0:
            raise ContractViolation(f"alignment exponent must be >= 1, got {self.b}")
        check_row_norm_floor(self.W)

    @property
    def out_dim(self) -> int:
        return self.W.shape[0]

    @property
    def in_dim(self) -> int:
        return self.W.shape[1]


@dataclass
class BcosMlp:
    """Stack of B-cos layers with chained dimensions."""

    layers: list[BcosLayer] = field(default_factory=list)

    def __post_init__(self):
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.out_dim != nxt.in_dim:
                raise ContractViolation(
                    f"layer dims do not chain: {prev.out_dim} -> {nxt.in_dim}"
                )

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim


def check_row_norm_floor(W: np.ndarray) -> None:
    norms = row_norms(W)
    bad = np.flatnonzero(norms < 1e-12)
    if bad.size:
        raise ContractViolation(
            f"weight row {int(bad[0])} has norm {float(norms[bad[0]]):.3e} below the 1e-12 floor"
        )


def init_layer(out_dim: int, in_dim: int, b: float, rng: Rng) -> BcosLayer:
    """Uniform [-a, a] init with a = sqrt(6 / (in + out)); no pre-normalization."""
    a = np.sqrt(6.0 / (in_dim + out_dim))
    W = rng.generator.uniform(-a, a, size=(out_dim, in_dim))
    return BcosLayer(W=W, b=b)


def init_mlp(dims: list[int], b: float, rng: Rng) -> BcosMlp:
    layers = [init_layer(dims[i + 1], dims[i], b, rng) for i in range(len(dims) - 1)]
    return BcosMlp(layers=layers)


def _forward_rows(layer: BcosLayer, X: np.ndarray):
    """Forward for a batch of row vectors; returns output plus cached internals."""
    if X.shape[1] != layer.in_dim:
        raise ContractViolation(f"input dim {X.shape[1]} != layer in_dim {layer.in_dim}")
    What = row_l2_normalize(layer.W)
    xnorm = np.sqrt(np.einsum("ij,ij->i", X, X))
    U = X @ What.T
    safe = np.where(xnorm > 0.0, xnorm, 1.0)
    C = np.clip(U / safe[:, None], -1.0, 1.0)
    C[xnorm == 0.0] = 0.0
    D = np.abs(C) ** (layer.b - 1.0)
    out = U * D
    cache = {"X": X, "xnorm": xnorm, "U": U, "C": C, "D": D, "What": What}
    return out, cache


def _backward_rows(layer: BcosLayer, cache: dict, G: np.ndarray):
    """Gradients w.r.t. the batched input rows and the raw weights.

    Uses the smoothed |c| = sqrt(c^2 + eps^2) inside the cosine-power
    derivative; everything else is the exact chain rule through the
    activation and the w -> w/||w|| rescaling.
    """
    X, xnorm, C = cache["X"], cache["xnorm"], cache["C"]
    What = cache["What"]
    b = layer.b
    Ds = (C * C + GRAD_SMOOTH_EPS**2) ** ((b - 1.0) / 2.0)
    GDs = G * Ds
    safe = np.where(xnorm > 0.0, xnorm, 1.0)
    Xhat = X / safe[:, None]
    Xhat[xnorm == 0.0] = 0.0
    grad_X = b * (GDs @ What) + (1.0 - b) * np.einsum("ij,ij->i", GDs, C)[:, None] * Xhat
    grad_What = b * (GDs.T @ X)
    wnorm = row_norms(layer.W)
    proj = np.einsum("ij,ij->i", grad_What, What)
    grad_W = (grad_What - proj[:, None] * What) / wnorm[:, None]
    return grad_X, grad_W


def bcos_forward(layer: BcosLayer, x: np.ndarray) -> np.ndarray:
    out, _ = _forward_rows(layer, np.atleast_2d(np.asarray(x, dtype=np.float64)))
    return out[0]


def bcos_dynamic_weights(layer: BcosLayer, x: np.ndarray) -> np.ndarray:
    """Input-dependent matrix whose product with x reproduces the forward pass."""
    _, cache = _forward_rows(layer, np.atleast_2d(np.asarray(x, dtype=np.float64)))
    return cache["D"][0][:, None] * cache["What"]


def bcos_backward(layer: BcosLayer, x: np.ndarray, upstream_grad: np.ndarray):
    """(grad_x, grad_W) of the activation chain-ruled with ``upstream_grad``."""
    x2 = np.atleast_2d(np.asarray(x, dtype=np.float64))
    g2 = np.atleast_2d(np.asarray(upstream_grad, dtype=np.float64))
    if g2.shape[1] != layer.out_dim:
        raise ContractViolation(f"upstream grad dim {g2.shape[1]} != out_dim {layer.out_dim}")
    _, cache = _forward_rows(layer, x2)
    grad_X, grad_W = _backward_rows(layer, cache, g2)
    return grad_X[0], grad_W


def mlp_forward_rows(mlp: BcosMlp, X: np.ndarray):
    """Sequential forward over rows; caches per-layer internals for reuse."""
    caches = []
    h = X
    for layer in mlp.layers:
        h, cache = _forward_rows(layer, h)
        caches.append(cache)
    return h, caches


def mlp_backward_rows(mlp: BcosMlp, caches: list, G: np.ndarray):
    grads: list[np.ndarray] = [None] * len(mlp.layers)  # type: ignore[list-item]
    g = G
    for i in range(len(mlp.layers) - 1, -1, -1):
        g, grads[i] = _backward_rows(mlp.layers[i], caches[i], g)
    return g, grads


def mlp_pullback_rows(mlp: BcosMlp, caches: list, V: np.ndarray) -> np.ndarray:
    """Pull covector rows back through the frozen dynamic weights.

    V has shape (n, k, out_dim); each row of the result is V times the
    composed dynamic-weight matrix of that sample, i.e. the linearized map
    with all cosine scalings held fixed at their forward values.
    """
    out = V
    for layer, cache in zip(reversed(mlp.layers), reversed(caches)):
        out = (out * cache["D"][:, None, :]) @ cache["What"]
    return out


def mlp_forward(mlp: BcosMlp, x: np.ndarray):
    """Forward a single vector; returns (output, per-layer input list)."""
    out, caches = mlp_forward_rows(mlp, np.atleast_2d(np.asarray(x, dtype=np.float64)))
    inputs = [c["X"][0] for c in caches]
    return out[0], inputs


def mlp_dynamic_weights(mlp: BcosMlp, x: np.ndarray) -> np.ndarray:
    """Explicit product of per-layer dynamic weights at the cached inputs."""
    _, inputs = mlp_forward(mlp, x)
    W = bcos_dynamic_weights(mlp.layers[0], inputs[0])
    for layer, a in zip(mlp.layers[1:], inputs[1:]):
        W = bcos_dynamic_weights(layer, a) @ W
    return W
