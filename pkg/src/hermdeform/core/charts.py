"""Holomorphic chart models: where metrics live and how points wrap.

A chart fixes ``n`` complex coordinates ``z_k = x_k + i y_k`` with the
real coordinate ordering ``(x_1, ..., x_n, y_1, ..., y_n)``.  Three chart
kinds cover the package's needs:

``box``
    An open product of real intervals -- a plain coordinate patch with a
    hard boundary and no identifications.

``torus``
    ``C^n`` modulo a full-rank real lattice.  Points are wrapped into the
    fundamental cell centred at the origin.

``annulus``
    ``(C^n minus 0)`` modulo the cyclic group ``z ~ lam * z`` generated by
    a real scaling factor ``lam > 1`` (for ``n = 2`` this underlies the
    standard compact non-Kahler surface).  The fundamental domain is the
    shell ``1 <= |z| < lam``.

Sample grids are deterministic and, for the annulus, uniform with respect
to the shell's natural product geometry (log-radius times unit sphere)
rather than the raw coordinates, which would undersample the inner
boundary by a factor of ``lam``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product

import numpy as np

from ..errors import ChartDomainError

__all__ = [
    "ChartModel",
    "BoxChart",
    "TorusChart",
    "AnnulusChart",
    "to_complex",
    "to_real",
]

_WRAP_TOL = 1e-12


def to_complex(points: np.ndarray, n: int) -> np.ndarray:
    """Real chart coordinates ``(*batch, 2n)`` to complex ``(*batch, n)``."""
    points = np.asarray(points, dtype=np.float64)
    return points[..., :n] + 1j * points[..., n:]


def to_real(z: np.ndarray) -> np.ndarray:
    """Complex coordinates ``(*batch, n)`` to real ``(*batch, 2n)``."""
    z = np.asarray(z, dtype=np.complex128)
    return np.concatenate([z.real, z.imag], axis=-1)


@dataclass(frozen=True)
class ChartModel:
    """Shared interface; concrete charts subclass this."""

    n: int

    @property
    def real_dim(self) -> int:
        return 2 * self.n

    # Subclasses implement: kind, wrap, contains, sample_grid,
    # chart_separation, and (linear charts only) wrapped_deltas.

    def require_inside(self, points: np.ndarray) -> None:
        ok = self.contains(points)
        if not np.all(ok):
            bad = np.asarray(points)[~np.asarray(ok)]
            raise ChartDomainError(
                f"{int((~np.asarray(ok)).sum())} point(s) outside the "
                f"{self.kind} chart domain; first offender {bad.reshape(-1, self.real_dim)[0]}"
            )

    def random_points(self, rng: np.random.Generator, count: int) -> np.ndarray:
        """Uniform-in-chart-measure random sample (used by tests)."""
        raise NotImplementedError


@dataclass(frozen=True)
class BoxChart(ChartModel):
    """Open coordinate box ``prod (c_a - h_a, c_a + h_a)`` in ``R^{2n}``."""

    center: tuple = ()
    half_widths: tuple = ()
    kind: str = field(default="box", init=False)

    def __post_init__(self):
        c = np.asarray(self.center, dtype=np.float64)
        h = np.asarray(self.half_widths, dtype=np.float64)
        if c.shape != (self.real_dim,) or h.shape != (self.real_dim,):
            raise ChartDomainError(
                f"box chart in complex dimension {self.n} needs center and "
                f"half_widths of length {self.real_dim}"
            )
        if np.any(h <= 0):
            raise ChartDomainError("box half-widths must be positive")
        object.__setattr__(self, "center", tuple(float(x) for x in c))
        object.__setattr__(self, "half_widths", tuple(float(x) for x in h))

    def _c(self) -> np.ndarray:
        return np.asarray(self.center)

    def _h(self) -> np.ndarray:
        return np.asarray(self.half_widths)

    def wrap(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64)

    def contains(self, points: np.ndarray) -> np.ndarray:
        d = np.abs(np.asarray(points, dtype=np.float64) - self._c())
        return np.all(d <= self._h() + _WRAP_TOL, axis=-1)

    def wrapped_deltas(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Candidate displacement vectors from ``a`` to ``b`` (just one)."""
        return (np.asarray(b) - np.asarray(a))[..., None, :]

    def chart_separation(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return np.linalg.norm(np.asarray(b) - np.asarray(a), axis=-1)

    def boundary_clearance(self, points: np.ndarray) -> np.ndarray:
        """Smallest coordinate distance to the box boundary."""
        d = self._h() - np.abs(np.asarray(points) - self._c())
        return np.min(d, axis=-1)

    def sample_grid(self, res: int) -> np.ndarray:
        axes = [
            c - h + (2 * h) * (np.arange(res) + 0.5) / res
            for c, h in zip(self.center, self.half_widths)
        ]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def random_points(self, rng: np.random.Generator, count: int) -> np.ndarray:
        u = rng.uniform(-1.0, 1.0, size=(count, self.real_dim))
        return self._c() + u * self._h()


@dataclass(frozen=True)
class TorusChart(ChartModel):
    """``C^n`` modulo the lattice spanned by the columns of ``basis``."""

    basis: tuple = ()
    kind: str = field(default="torus", init=False)

    def __post_init__(self):
        b = np.asarray(self.basis, dtype=np.float64)
        if b.size == 0:
            b = np.eye(self.real_dim)
        if b.shape != (self.real_dim, self.real_dim):
            raise ChartDomainError(
                f"torus lattice basis must be {self.real_dim}x{self.real_dim}"
            )
        if abs(np.linalg.det(b)) < 1e-12:
            raise ChartDomainError("torus lattice basis is singular")
        object.__setattr__(self, "basis", tuple(map(tuple, b)))

    def _b(self) -> np.ndarray:
        return np.asarray(self.basis)

    def wrap(self, points: np.ndarray) -> np.ndarray:
        b = self._b()
        frac = np.linalg.solve(b, np.asarray(points, dtype=np.float64)[..., None])[..., 0]
        frac -= np.floor(frac + 0.5)
        return frac @ b.T

    def contains(self, points: np.ndarray) -> np.ndarray:
        b = self._b()
        frac = np.linalg.solve(b, np.asarray(points, dtype=np.float64)[..., None])[..., 0]
        return np.all(np.abs(frac) <= 0.5 + _WRAP_TOL, axis=-1)

    def _offsets(self) -> np.ndarray:
        rng = (-1, 0, 1)
        return np.array(list(product(rng, repeat=self.real_dim)), dtype=np.float64)

    def wrapped_deltas(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """All near-minimal displacement candidates ``b - a + lattice``.

        The base delta is reduced to the fundamental cell first, then the
        3^{2n} neighbouring lattice translates are appended; for any
        reduced basis the true minimiser is among these.
        """
        base = self.wrap(np.asarray(b) - np.asarray(a))
        lat = self._offsets() @ self._b().T
        return base[..., None, :] + lat

    def chart_separation(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return np.min(np.linalg.norm(self.wrapped_deltas(a, b), axis=-1), axis=-1)

    def shortest_lattice_vector(self) -> float:
        b = self._b()
        best = np.inf
        for k in product((-2, -1, 0, 1, 2), repeat=self.real_dim):
            if all(x == 0 for x in k):
                continue
            best = min(best, float(np.linalg.norm(b @ np.asarray(k, dtype=float))))
        return best

    def sample_grid(self, res: int) -> np.ndarray:
        axes = [(np.arange(res) + 0.5) / res - 0.5 for _ in range(self.real_dim)]
        mesh = np.meshgrid(*axes, indexing="ij")
        frac = np.stack([m.ravel() for m in mesh], axis=-1)
        return frac @ self._b().T

    def random_points(self, rng: np.random.Generator, count: int) -> np.ndarray:
        frac = rng.uniform(-0.5, 0.5, size=(count, self.real_dim))
        return frac @ self._b().T


@dataclass(frozen=True)
class AnnulusChart(ChartModel):
    """``(C^n minus 0)`` modulo ``z ~ lam z``; domain ``1 <= |z| < lam``."""

    lam: float = 2.0
    kind: str = field(default="annulus", init=False)

    def __post_init__(self):
        if not self.lam > 1.0:
            raise ChartDomainError("annulus scale factor must exceed 1")

    @property
    def log_lam(self) -> float:
        return float(np.log(self.lam))

    def _radii(self, points: np.ndarray) -> np.ndarray:
        return np.linalg.norm(np.asarray(points, dtype=np.float64), axis=-1)

    def wrap(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        r = self._radii(pts)
        if np.any(r < 1e-300):
            raise ChartDomainError("the origin is not in the annulus chart")
        k = np.floor(np.log(r) / self.log_lam)
        return pts * (self.lam ** (-k))[..., None]

    def contains(self, points: np.ndarray) -> np.ndarray:
        r = self._radii(points)
        return (r >= 1.0 - _WRAP_TOL) & (r < self.lam * (1 + _WRAP_TOL))

    def chart_separation(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        a = np.asarray(a, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64)
        cands = [
            np.linalg.norm(b * (self.lam**k) - a, axis=-1) for k in (-1, 0, 1)
        ]
        return np.min(np.stack(cands, axis=-1), axis=-1)

    def sample_grid(self, res: int) -> np.ndarray:
        """Deterministic grid, uniform in (log-radius, sphere) coordinates.

        For ``n = 1`` the sphere is a circle; for ``n = 2`` the unit
        3-sphere is parametrised by ``(eta, xi1, xi2)`` with
        ``z = (cos(eta) e^{i xi1}, sin(eta) e^{i xi2})`` and the
        stratification ``eta = arcsin(sqrt(v))`` that equidistributes the
        round measure.
        """
        u = self.log_lam * (np.arange(res) + 0.5) / res
        radii = np.exp(u)
        if self.n == 1:
            th = 2 * np.pi * (np.arange(res) + 0.5) / res
            rr, tt = np.meshgrid(radii, th, indexing="ij")
            z = (rr * np.exp(1j * tt)).ravel()[:, None]
            return to_real(z)
        if self.n == 2:
            v = (np.arange(res) + 0.5) / res
            eta = np.arcsin(np.sqrt(v))
            xi = 2 * np.pi * (np.arange(res) + 0.5) / res
            rr, ee, a1, a2 = np.meshgrid(radii, eta, xi, xi, indexing="ij")
            z1 = rr * np.cos(ee) * np.exp(1j * a1)
            z2 = rr * np.sin(ee) * np.exp(1j * a2)
            z = np.stack([z1.ravel(), z2.ravel()], axis=-1)
            return to_real(z)
        raise ChartDomainError(
            "annulus sample grids are implemented for n in {1, 2}"
        )

    def random_points(self, rng: np.random.Generator, count: int) -> np.ndarray:
        u = rng.uniform(0.0, self.log_lam, size=count)
        w = rng.standard_normal(size=(count, self.real_dim))
        w /= np.linalg.norm(w, axis=-1, keepdims=True)
        return np.exp(u)[:, None] * w
