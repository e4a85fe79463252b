"""Toy source/target distributions: concentric sphere shells and isotropic Gaussians."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ParameterError, ShapeError
from .numerics import Rng, sample_standard_normal


@dataclass(frozen=True)
class SphereShell:
    """Uniform law on ``{x in R^dim : |x| = radius}``."""

    dim: int
    radius: float

    def __post_init__(self):
        if self.dim < 1:
            raise ParameterError("dim must be >= 1")
        if not self.radius > 0:
            raise ParameterError("radius must be positive")

    def describe(self) -> str:
        return f"shell(d={self.dim}, r={self.radius:g})"


@dataclass(frozen=True)
class IsotropicGaussian:
    """N(mean, scale^2 I). ``mean`` may be a scalar broadcast over coordinates."""

    dim: int
    mean: np.ndarray | float
    scale: float = 1.0

    def __post_init__(self):
        if self.dim < 1:
            raise ParameterError("dim must be >= 1")
        if not self.scale > 0:
            raise ParameterError("scale must be positive")
        mean = np.broadcast_to(np.asarray(self.mean, dtype=np.float64), (self.dim,)).copy()
        object.__setattr__(self, "mean", mean)

    @property
    def cov(self) -> np.ndarray:
        return self.scale**2 * np.eye(self.dim)

    def describe(self) -> str:
        m = self.mean
        mtxt = f"{m[0]:g}" if np.all(m == m[0]) else "vec"
        return f"gaussian(d={self.dim}, mean={mtxt}, scale={self.scale:g})"


@dataclass
class SampleSet:
    points: np.ndarray
    label: str = "source"
    origin: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.points = np.ascontiguousarray(self.points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[0] < 1:
            raise ShapeError(f"points must be (n>=1, d), got {self.points.shape}")
        if not np.all(np.isfinite(self.points)):
            raise ValueError("sample set has non-finite rows")
        if self.label not in ("source", "target"):
            raise ParameterError(f"label must be source|target, got {self.label!r}")

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self) -> int:
        return self.n

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"dim_{k}" for k in range(self.dim)])
            for row in self.points:
                w.writerow([repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path, label: str = "source") -> "SampleSet":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        if header != [f"dim_{k}" for k in range(len(header))]:
            raise ShapeError(f"unexpected header in {Path(path).name}")
        pts = np.array([[float(v) for v in r] for r in body], dtype=np.float64)
        return cls(pts.reshape(len(body), len(header)), label=label, origin=f"csv:{path}")


def sample_shell(shell: SphereShell, n: int, rng: Rng, label: str = "source") -> SampleSet:
    z = sample_standard_normal(rng, n, shell.dim)
    norms = np.linalg.norm(z, axis=1, keepdims=True)
    # a zero draw has probability zero; redraw rather than divide by it
    while np.any(norms == 0.0):
        bad = norms[:, 0] == 0.0
        z[bad] = rng.normal((int(bad.sum()), shell.dim))
        norms = np.linalg.norm(z, axis=1, keepdims=True)
    return SampleSet(shell.radius * z / norms, label=label, origin=shell.describe())


def sample_gaussian(g: IsotropicGaussian, n: int, rng: Rng, label: str = "source") -> SampleSet:
    z = sample_standard_normal(rng, n, g.dim)
    return SampleSet(g.mean + g.scale * z, label=label, origin=g.describe())
