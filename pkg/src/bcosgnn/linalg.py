"""Dense float64 linear algebra helpers and seeded randomness.

Matrices are plain 2-D, C-contiguous ``numpy.ndarray`` objects with dtype
float64. The helpers here enforce the contracts the rest of the package
relies on: finite entries, explicit dimension checks, a hard floor on row
norms before normalization, and cosines clamped to [-1, 1].
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Rows with L2 norm below this are rejected rather than rescaled.
ROW_NORM_FLOOR = 1e-12


class ContractViolation(ValueError):
    """A caller broke an operation precondition (shapes, ranges, ...)."""


class ZeroRowError(ContractViolation):
    """Row normalization hit a row with norm below ROW_NORM_FLOOR."""

    def __init__(self, row: int, norm: float):
        self.row = row
        self.norm = norm
        super().__init__(f"row {row} has norm {norm:.3e} below floor {ROW_NORM_FLOOR:.0e}")


def as_matrix(data, rows: int | None = None, cols: int | None = None) -> np.ndarray:
    """Coerce to a finite float64 2-D array, optionally checking its shape."""
    m = np.ascontiguousarray(data, dtype=np.float64)
    if m.ndim != 2:
        raise ContractViolation(f"expected a 2-D matrix, got ndim={m.ndim}")
    if rows is not None and m.shape[0] != rows:
        raise ContractViolation(f"expected {rows} rows, got {m.shape[0]}")
    if cols is not None and m.shape[1] != cols:
        raise ContractViolation(f"expected {cols} cols, got {m.shape[1]}")
    if not np.all(np.isfinite(m)):
        raise ContractViolation("matrix contains non-finite entries")
    return m


def as_vector(data, length: int | None = None) -> np.ndarray:
    m = np.ascontiguousarray(data, dtype=np.float64)
    if m.ndim != 1:
        raise ContractViolation(f"expected a 1-D vector, got ndim={m.ndim}")
    if length is not None and m.shape[0] != length:
        raise ContractViolation(f"expected length {length}, got {m.shape[0]}")
    if not np.all(np.isfinite(m)):
        raise ContractViolation("vector contains non-finite entries")
    return m


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with an explicit inner-dimension check."""
    if a.ndim != 2 or b.ndim != 2:
        raise ContractViolation("matmul expects 2-D operands")
    if a.shape[1] != b.shape[0]:
        raise ContractViolation(f"inner dimensions differ: {a.shape} x {b.shape}")
    out = a @ b
    if not np.all(np.isfinite(out)):
        raise ContractViolation("matmul produced non-finite entries")
    return out


def row_norms(m: np.ndarray) -> np.ndarray:
    return np.sqrt(np.einsum("ij,ij->i", m, m))


def row_l2_normalize(m: np.ndarray) -> np.ndarray:
    """Rescale every row to unit Euclidean norm; directions are preserved."""
    norms = row_norms(m)
    bad = np.flatnonzero(norms < ROW_NORM_FLOOR)
    if bad.size:
        i = int(bad[0])
        raise ZeroRowError(i, float(norms[i]))
    return m / norms[:, None]


def cosine_rows(x: np.ndarray, w_hat: np.ndarray) -> np.ndarray:
    """Cosine similarity of ``x`` against each (unit-norm) row of ``w_hat``.

    Returns all zeros for a zero input vector, and clamps the result to
    [-1, 1] so downstream powers of the cosine stay real under rounding.
    """
    if x.ndim != 1:
        raise ContractViolation("cosine_rows expects a 1-D input vector")
    if w_hat.ndim != 2 or w_hat.shape[1] != x.shape[0]:
        raise ContractViolation(f"shape mismatch: x has {x.shape[0]} entries, rows have {w_hat.shape}")
    xnorm = float(np.linalg.norm(x))
    if xnorm == 0.0:
        return np.zeros(w_hat.shape[0])
    return np.clip(w_hat @ x / xnorm, -1.0, 1.0)


@dataclass
class Rng:
    """Deterministic random stream (PCG64 behind ``numpy.random.Generator``).

    The same seed yields the same stream on every platform. ``derive``
    builds statistically independent substreams keyed by integers, which
    keeps per-graph / per-seed work reproducible regardless of evaluation
    order.
    """

    seed: int
    _gen: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        if self.seed < 0:
            raise ContractViolation("seed must be a non-negative integer")
        self._gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence(self.seed)))

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def derive(self, *keys: int) -> "Rng":
        child = Rng.__new__(Rng)
        child.seed = self.seed
        seq = np.random.SeedSequence(entropy=self.seed, spawn_key=tuple(int(k) for k in keys))
        child._gen = np.random.Generator(np.random.PCG64(seq))
        return child

    def integers(self, low: int, high: int) -> int:
        return int(self._gen.integers(low, high))

    def uniform(self, low: float, high: float, size=None):
        return self._gen.uniform(low, high, size=size)

    def shuffle(self, items: list) -> None:
        self._gen.shuffle(items)

    def choice(self, n: int) -> int:
        return int(self._gen.integers(0, n))
