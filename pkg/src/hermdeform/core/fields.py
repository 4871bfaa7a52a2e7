"""Scalar fields: real-valued functions of chart points, queried as jets.

Every scalar object in the package (conformal exponents, bump profiles
composed with squared-distance fields, expression-language functions)
implements one method::

    jet(points, order) -> Jet        # trailing shape = batch

with real values (the imaginary parts of all coefficients must vanish to
roundoff; consumers assert this where it matters).  Fields are combined
by the small algebra below without ever materialising symbolic
expressions.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Protocol, Sequence, runtime_checkable

import numpy as np

from .jets import Jet, jet_constant, jet_table, jet_variables

__all__ = [
    "ScalarField",
    "JetFunctionField",
    "ConstantField",
    "SumField",
    "ScaledField",
    "field_imag_residual",
]


@runtime_checkable
class ScalarField(Protocol):
    """Anything that can produce jets of a real scalar function."""

    def jet(self, points: np.ndarray, order: int) -> Jet: ...


@dataclass(frozen=True)
class JetFunctionField:
    """Field defined by a closure acting on the coordinate jets.

    Parameters
    ----------
    fn : callable
        ``fn(coord_jets) -> Jet`` where ``coord_jets`` is the list of
        ``2n`` real coordinate jets in the order ``x_1..x_n, y_1..y_n``.
    label : str
        Human-readable description used in reports.
    """

    fn: Callable[[Sequence[Jet]], Jet]
    label: str = "custom"

    def jet(self, points: np.ndarray, order: int) -> Jet:
        return self.fn(jet_variables(np.asarray(points, dtype=np.float64), order))

    def __repr__(self) -> str:  # keep reports tidy
        return f"JetFunctionField({self.label!r})"


@dataclass(frozen=True)
class ConstantField:
    value: float
    label: str = "constant"

    def jet(self, points: np.ndarray, order: int) -> Jet:
        pts = np.asarray(points, dtype=np.float64)
        table = jet_table(pts.shape[-1], order)
        return jet_constant(table, np.full(pts.shape[:-1], float(self.value)))


@dataclass(frozen=True)
class SumField:
    parts: tuple

    def jet(self, points: np.ndarray, order: int) -> Jet:
        jets = [p.jet(points, order) for p in self.parts]
        total = jets[0]
        for j in jets[1:]:
            total = total + j
        return total

    @staticmethod
    def of(*parts) -> "SumField":
        flat = []
        for p in parts:
            if isinstance(p, SumField):
                flat.extend(p.parts)
            else:
                flat.append(p)
        return SumField(tuple(flat))


@dataclass(frozen=True)
class ScaledField:
    base: object
    factor: float

    def jet(self, points: np.ndarray, order: int) -> Jet:
        return self.base.jet(points, order) * float(self.factor)


def field_imag_residual(jet: Jet) -> float:
    """Largest imaginary coefficient magnitude (a real field sanity gate)."""
    return float(np.max(np.abs(jet.coeffs.imag))) if jet.coeffs.size else 0.0
