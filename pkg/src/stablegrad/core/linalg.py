"""Dense float64 kernels, seeded randomness and the dominant-eigenvalue estimator.

Matrices and vectors are plain ``numpy.ndarray`` objects with ``dtype=float64``.
The helpers here add shape checking and the error types used across the package.
"""
from typing import Callable, Optional

import numpy as np

from stablegrad.utils.exceptions import ConvergenceError, DomainError, ShapeError

DTYPE = np.float64

SymmetricOperator = Callable[[np.ndarray], np.ndarray]


class SeededRng:
    """Deterministic random stream (PCG64) keyed by a 64-bit seed."""

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.generator = np.random.Generator(np.random.PCG64(self.seed))

    def spawn(self, key: int) -> 'SeededRng':
        """Independent child stream; identical (seed, key) gives identical streams."""
        seq = np.random.SeedSequence([self.seed, int(key)])
        return SeededRng(int(seq.generate_state(1, dtype=np.uint64)[0]))

    def uniform(self, low, high, size) -> np.ndarray:
        return self.generator.uniform(low, high, size=size).astype(DTYPE, copy=False)

    def normal(self, size, scale: float = 1.0) -> np.ndarray:
        return self.generator.normal(0.0, scale, size=size).astype(DTYPE, copy=False)

    def unit_vector(self, dim: int) -> np.ndarray:
        v = self.normal(dim)
        n = np.linalg.norm(v)
        if n == 0.0:
            v = np.zeros(dim, dtype=DTYPE)
            v[0] = 1.0
            return v
        return v / n


def as_vector(v) -> np.ndarray:
    arr = np.asarray(v, dtype=DTYPE)
    if arr.ndim != 1:
        raise ShapeError(f"expected a vector, got shape {arr.shape}")
    return arr


def as_matrix(m) -> np.ndarray:
    arr = np.asarray(m, dtype=DTYPE)
    if arr.ndim != 2:
        raise ShapeError(f"expected a matrix, got shape {arr.shape}")
    return arr


def _same_length(a: np.ndarray, b: np.ndarray, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def matvec(m, v) -> np.ndarray:
    """Matrix-vector product ``m @ v``."""
    m = as_matrix(m)
    v = as_vector(v)
    if m.shape[1] != v.shape[0]:
        raise ShapeError(f"matvec: matrix has {m.shape[1]} columns, vector has {v.shape[0]} entries")
    return m @ v


def dot(a, b) -> float:
    a = as_vector(a)
    b = as_vector(b)
    _same_length(a, b, "dot")
    return float(a @ b)


def axpy(alpha: float, x, y) -> np.ndarray:
    """Return ``alpha * x + y`` (inputs untouched)."""
    x = as_vector(x)
    y = as_vector(y)
    _same_length(x, y, "axpy")
    return alpha * x + y


def norm2(v) -> float:
    return float(np.linalg.norm(as_vector(v)))


def outer(a, b) -> np.ndarray:
    return np.outer(as_vector(a), as_vector(b))


def empirical_std(v) -> float:
    """Population standard deviation (divides by N).

    Any array shape is accepted and flattened; constant input gives exactly 0.
    """
    arr = np.asarray(v, dtype=DTYPE).ravel()
    if arr.size == 0:
        raise DomainError("empirical_std of an empty vector")
    centered = arr - arr.mean()
    return float(np.sqrt(np.mean(centered * centered)))


def power_iteration(
    apply: SymmetricOperator,
    dim: int,
    rng: SeededRng,
    tol: float = 1e-6,
    max_iter: int = 2000,
    start: Optional[np.ndarray] = None,
) -> float:
    """Largest eigenvalue of a symmetric positive semidefinite operator.

    Iterates ``v <- A v / |A v|`` and stops once the Rayleigh quotient changes by
    less than ``tol`` relative to its magnitude. Raises ConvergenceError (with
    the last estimate attached) after ``max_iter`` iterations.
    """
    if dim < 1:
        raise DomainError("power_iteration needs dim >= 1")
    v = rng.unit_vector(dim) if start is None else as_vector(start) / norm2(start)
    estimate = 0.0
    for iteration in range(1, max_iter + 1):
        w = np.asarray(apply(v), dtype=DTYPE)
        if w.shape != v.shape:
            raise ShapeError(f"operator returned shape {w.shape}, expected {v.shape}")
        rayleigh = float(v @ w)
        w_norm = float(np.linalg.norm(w))
        if w_norm == 0.0:
            # v in the null space; PSD with A v = 0 from a random start means A = 0
            # up to measure-zero starts.
            return 0.0
        if iteration > 1 and abs(rayleigh - estimate) <= tol * max(abs(rayleigh), np.finfo(DTYPE).tiny):
            return rayleigh
        estimate = rayleigh
        v = w / w_norm
    raise ConvergenceError(
        f"power iteration did not converge in {max_iter} iterations (last estimate {estimate:.6g})",
        estimate=estimate,
        iterations=max_iter,
    )
