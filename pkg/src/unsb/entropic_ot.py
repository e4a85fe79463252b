"""Log-domain Sinkhorn-Knopp for entropic optimal transport between point clouds.

The solver minimises ``<gamma, C> - eps * H(gamma)`` over couplings with
uniform marginals. A bridge with reference variance ``tau`` corresponds to
``eps = 2 * tau``; always convert through :func:`eps_from_tau`.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .distributions import SampleSet
from .errors import ParameterError, ShapeError
from .numerics import Rng


def eps_from_tau(tau: float) -> float:
    return 2.0 * tau


def tau_from_eps(eps: float) -> float:
    return 0.5 * eps


@dataclass(frozen=True)
class CostMatrix:
    c: np.ndarray
    metric: str = "sqeuclidean"


@dataclass
class Coupling:
    gamma: np.ndarray
    eps: float
    marginal_err: float
    n_iters: int = 0
    converged: bool = True

    @property
    def shape(self) -> tuple[int, int]:
        return self.gamma.shape

    def transport_cost(self, cost: CostMatrix) -> float:
        return float(np.sum(self.gamma * cost.c))

    def objective(self, cost: CostMatrix) -> float:
        return self.transport_cost(cost) - self.eps * coupling_entropy(self)

    def to_csv(self, path, threshold: float = 1e-12) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["i", "j", "gamma_ij"])
            for i, j in zip(*np.nonzero(self.gamma > threshold)):
                w.writerow([int(i), int(j), repr(float(self.gamma[i, j]))])


def _points(x) -> np.ndarray:
    return x.points if isinstance(x, SampleSet) else np.atleast_2d(np.asarray(x, dtype=np.float64))


def cost_matrix(src, tgt) -> CostMatrix:
    a, b = _points(src), _points(tgt)
    if a.shape[1] != b.shape[1]:
        raise ShapeError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    c = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * a @ b.T
    np.maximum(c, 0.0, out=c)
    return CostMatrix(c)


def _log_kernel(neg_c, f, g, eps):
    return (neg_c + f[:, None] + g[None, :]) / eps


def _lse_update(neg_c, f, g, log_a, log_b, eps):
    f = eps * log_a - eps * logsumexp((neg_c + g[None, :]) / eps, axis=1)
    g = eps * log_b - eps * logsumexp((neg_c + f[:, None]) / eps, axis=0)
    return f, g


def _solve_stage(neg_c, f, g, a, b, eps, tol, budget, check_every, absorb_at=30.0):
    """Kernel-domain scaling iterations with periodic absorption into ``f, g``.

    Returns updated potentials, iterations used and the final L1 row error
    (columns are exact after each ``v`` update).
    """
    log_a, log_b = np.log(a), np.log(b)
    f, g = _lse_update(neg_c, f, g, log_a, log_b, eps)
    k = np.exp(_log_kernel(neg_c, f, g, eps))
    u = np.ones_like(a)
    v = np.ones_like(b)
    it = 1
    err = np.inf
    while it < budget:
        kv = k @ v
        u = a / kv
        ktu = k.T @ u
        v = b / ktu
        it += 1
        bad = not (np.all(np.isfinite(u)) and np.all(np.isfinite(v)))
        if bad or np.abs(np.log(u)).max() > absorb_at or np.abs(np.log(v)).max() > absorb_at:
            if not bad:
                f = f + eps * np.log(u)
                g = g + eps * np.log(v)
            # a row or column of the kernel underflowed: take one exact log-domain step
            f, g = _lse_update(neg_c, f, g, log_a, log_b, eps)
            k = np.exp(_log_kernel(neg_c, f, g, eps))
            u = np.ones_like(a)
            v = np.ones_like(b)
            it += 1
            continue
        if it % check_every == 0:
            err = np.abs(u * (k @ v) - a).sum()
            if err <= tol:
                break
    f = f + eps * np.log(u)
    g = g + eps * np.log(v)
    return f, g, it


def sinkhorn(
    cost: CostMatrix,
    eps: float,
    max_iters: int = 100_000,
    tol: float = 1e-6,
    check_every: int = 10,
    eps_scaling: bool = True,
) -> Coupling:
    """Entropic OT coupling with uniform marginals.

    Dual potentials ``f, g`` are kept in cost units so the kernel never has to
    be formed at the raw ``exp(-C / eps)`` scale; scaling vectors are absorbed
    into the potentials whenever they drift. With ``eps_scaling`` the
    regularisation is annealed geometrically from the cost range down to
    ``eps``; this only warm-starts the final stage and does not change the
    fixed point.
    """
    if not eps > 0:
        raise ParameterError(f"eps must be positive, got {eps}")
    c = np.asarray(cost.c, dtype=np.float64)
    n, m = c.shape
    a = np.full(n, 1.0 / n)
    b = np.full(m, 1.0 / m)
    if n == 1 or m == 1:
        gamma = np.full((n, m), 1.0 / (n * m))
        return Coupling(gamma, eps, 0.0, 0, True)

    neg_c = -c
    f = np.zeros(n)
    g = np.zeros(m)
    schedule = [eps]
    if eps_scaling:
        e = float(np.ptp(c))
        schedule = []
        while e > 4 * eps:
            schedule.append(e)
            e /= 4
        schedule.append(eps)

    total = 0
    for stage, e in enumerate(schedule):
        final = stage == len(schedule) - 1
        stage_tol = tol if final else max(tol, 1e-3)
        budget = max_iters - total if final else min(max_iters - total, 2000)
        if budget <= 0:
            break
        f, g, used = _solve_stage(neg_c, f, g, a, b, e, stage_tol, budget, check_every)
        total += used

    gamma = np.exp(_log_kernel(neg_c, f, g, eps))
    err = max(np.abs(gamma.sum(1) - a).sum(), np.abs(gamma.sum(0) - b).sum())
    return Coupling(gamma, eps, float(err), total, bool(err <= tol))


def coupling_entropy(coupling: Coupling | np.ndarray) -> float:
    gamma = coupling.gamma if isinstance(coupling, Coupling) else np.asarray(coupling)
    p = gamma[gamma > 0]
    return float(-(p * np.log(p)).sum())


def coupling_pairs(coupling: Coupling, src, tgt, rng: Rng, k: int):
    """Draw ``k`` index pairs with probability proportional to ``gamma``.

    Returns ``(x0, x1, (i, j))`` with ``x0``/``x1`` of shape (k, d).
    """
    a, b = _points(src), _points(tgt)
    gamma = coupling.gamma
    if gamma.shape != (a.shape[0], b.shape[0]):
        raise ShapeError(f"coupling shape {gamma.shape} does not match sets {a.shape[0]}x{b.shape[0]}")
    flat = gamma.ravel()
    cdf = np.cumsum(flat)
    u = rng.uniform(k) * cdf[-1]
    idx = np.minimum(np.searchsorted(cdf, u, side="right"), flat.size - 1)
    i, j = np.divmod(idx, gamma.shape[1])
    return a[i], b[j], (i, j)


def conditional_pairs(coupling: Coupling, src, tgt, rng: Rng):
    """For every source row ``i`` draw one target ``j ~ gamma[i, :]``."""
    a, b = _points(src), _points(tgt)
    gamma = coupling.gamma
    cdf = np.cumsum(gamma, axis=1)
    u = rng.uniform(gamma.shape[0]) * cdf[:, -1]
    j = np.array([min(np.searchsorted(cdf[r], u[r], side="right"), gamma.shape[1] - 1) for r in range(gamma.shape[0])])
    return a, b[j], j
