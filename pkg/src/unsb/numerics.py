"""Dense linear algebra, seeded randomness and sample statistics.

Matrices are plain ``numpy.ndarray`` objects of dtype float64 in C (row-major)
order. Every stochastic routine takes an explicit :class:`Rng`; nothing in the
package touches numpy's global random state.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateVectorError,
    InsufficientSamplesError,
    NotPositiveDefiniteError,
    ShapeError,
)


class Rng:
    """Seeded PCG64 stream.

    Normal draws use numpy's ziggurat sampler, which is stable for a given
    seed and numpy major version. An instance is mutated by every draw and
    must not be shared between concurrent callers; use :meth:`spawn` to get
    independent child streams.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def normal(self, size) -> np.ndarray:
        return self._gen.standard_normal(size)

    def uniform(self, size=None):
        return self._gen.random(size)

    def integers(self, high: int, size=None):
        return self._gen.integers(0, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def choice(self, n: int, size: int, p: np.ndarray | None = None) -> np.ndarray:
        return self._gen.choice(n, size=size, p=p)

    def spawn(self, key: int) -> "Rng":
        """Child stream derived from this stream's seed and ``key`` only."""
        ss = np.random.SeedSequence([self.seed, int(key) & 0xFFFFFFFFFFFFFFFF])
        child = Rng.__new__(Rng)
        child.seed = int(ss.generate_state(1, dtype=np.uint64)[0])
        child._gen = np.random.Generator(np.random.PCG64(ss))
        return child

    def state_dict(self) -> dict:
        return self._gen.bit_generator.state

    def load_state_dict(self, state: dict) -> None:
        self._gen.bit_generator.state = state


@dataclass(frozen=True)
class MomentStats:
    mean: np.ndarray
    cov: np.ndarray
    n: int


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} has non-finite entries")
    return np.ascontiguousarray(arr)


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def cholesky(a) -> np.ndarray:
    """Lower-triangular factor ``L`` with ``L @ L.T == a``."""
    a = as_matrix(a, "a")
    if a.shape[0] != a.shape[1]:
        raise ShapeError(f"cholesky needs a square matrix, got {a.shape}")
    if not np.allclose(a, a.T, rtol=1e-12, atol=1e-12 * max(1.0, np.abs(a).max())):
        raise NotPositiveDefiniteError("matrix is not symmetric")
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError(str(exc)) from exc


def sample_standard_normal(rng: Rng, n: int, d: int) -> np.ndarray:
    if n < 1 or d < 1:
        raise ShapeError(f"n and d must be >= 1, got n={n}, d={d}")
    return rng.normal((n, d))


def moments(samples) -> MomentStats:
    """Unbiased sample mean and covariance (divisor n - 1)."""
    x = as_matrix(samples, "samples")
    n = x.shape[0]
    if n < 2:
        raise InsufficientSamplesError(f"need at least 2 samples, got {n}")
    mean = x.mean(axis=0)
    xc = x - mean
    cov = xc.T @ xc / (n - 1)
    cov = 0.5 * (cov + cov.T)
    return MomentStats(mean=mean, cov=cov, n=n)


def cosine_similarity(a, b) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ShapeError(f"length mismatch {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise DegenerateVectorError("cosine similarity of a zero vector")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def rowwise_cosine(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Cosine similarity of matching rows of two (n, d) arrays."""
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    if np.any(na == 0.0) or np.any(nb == 0.0):
        raise DegenerateVectorError("cosine similarity of a zero vector")
    return np.clip(np.einsum("ij,ij->i", a, b) / (na * nb), -1.0, 1.0)
