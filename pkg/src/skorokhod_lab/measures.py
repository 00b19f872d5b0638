"""Source and target measures on interior lattice nodes, and the order check."""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Mapping, Sequence

import numpy as np

from .lattice import Grid, GridError, green_solve

MASS_TOL = 1e-12
ORDER_TOL = 1e-10


class MeasureError(ValueError):
    pass


@dataclass(frozen=True)
class DiscreteMeasure:
    """Nonnegative weights on interior nodes.

    ``exact`` optionally holds the same weights as :class:`~fractions.Fraction`
    values; the exact LP oracle uses them when present.
    """

    weights: np.ndarray
    exact: tuple[Fraction, ...] | None = field(default=None, compare=False)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 1:
            raise MeasureError("weights must be a vector")
        if not np.all(np.isfinite(w)):
            raise MeasureError("weights must be finite")
        if np.any(w < 0):
            raise MeasureError("weights must be nonnegative")
        w = w.copy()
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        if self.exact is not None and len(self.exact) != w.size:
            raise MeasureError("exact weights do not match the float weights")

    @property
    def mass(self) -> float:
        return float(self.weights.sum())

    @property
    def size(self) -> int:
        return self.weights.size

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.weights > 0)

    @classmethod
    def from_fractions(cls, values: Sequence[Fraction | int]) -> "DiscreteMeasure":
        fr = tuple(Fraction(v) for v in values)
        return cls(np.array([float(v) for v in fr]), exact=fr)

    def exact_weights(self) -> tuple[Fraction, ...]:
        """Rational weights; floats are converted exactly when no exact data exist."""
        if self.exact is not None:
            return self.exact
        return tuple(Fraction(float(w)) for w in self.weights)


@dataclass(frozen=True)
class MeasureSpec:
    """Declarative description of a measure.

    kinds: ``uniform_range`` (lattice indices ``lo..hi``, 1-based interior),
    ``uniform_interval`` (coordinates ``lo <= x <= hi``), ``sine_profile``
    (weights proportional to ``|sin(pi x / period)|``, optionally cut to ``lo <= x <= hi``), ``point`` and ``table``.
    """

    kind: str
    params: Mapping[str, Any] = field(default_factory=dict)
    normalize: bool = True

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "MeasureSpec":
        d = dict(d)
        try:
            kind = d.pop("kind")
        except KeyError:
            raise MeasureError("measure spec needs a 'kind'") from None
        normalize = bool(d.pop("normalize", True))
        return cls(kind=kind, params=d, normalize=normalize)

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind, **dict(self.params), "normalize": self.normalize}


def _param(spec: MeasureSpec, name: str):
    try:
        return spec.params[name]
    except KeyError:
        raise MeasureError(f"measure kind {spec.kind!r} needs parameter {name!r}") from None


def build_measure(spec: MeasureSpec, grid: Grid) -> DiscreteMeasure:
    n = grid.n_interior
    w = np.zeros(n)
    try:
        if spec.kind == "uniform_range":
            lo = grid.node_index(int(_param(spec, "lo")))
            hi = grid.node_index(int(_param(spec, "hi")))
            if hi < lo:
                raise MeasureError("uniform_range needs lo <= hi")
            w[lo:hi + 1] = 1.0
        elif spec.kind == "uniform_interval":
            lo, hi = float(_param(spec, "lo")), float(_param(spec, "hi"))
            tol = 1e-9 * grid.dx
            w[(grid.x >= lo - tol) & (grid.x <= hi + tol)] = 1.0
        elif spec.kind == "sine_profile":
            period = float(_param(spec, "period"))
            w = np.abs(np.sin(np.pi * grid.x / period))
            w[w < 1e-12] = 0.0
            # optional support window, so refined grids see the same profile
            tol = 1e-9 * grid.dx
            w[grid.x < float(spec.params.get("lo", -np.inf)) - tol] = 0.0
            w[grid.x > float(spec.params.get("hi", np.inf)) + tol] = 0.0
        elif spec.kind == "point":
            w[grid.node_index(int(_param(spec, "index")))] = 1.0
        elif spec.kind == "table":
            vals = np.asarray(_param(spec, "values"), dtype=float)
            if vals.shape != (n,):
                raise MeasureError(f"table needs {n} values, got shape {vals.shape}")
            if np.any(vals < 0):
                raise MeasureError("table values must be nonnegative")
            w = vals.copy()
        else:
            raise MeasureError(f"unknown measure kind {spec.kind!r}")
    except GridError as exc:
        raise MeasureError(str(exc)) from None

    total = w.sum()
    if not total > 0:
        raise MeasureError(f"{spec.kind} profile is identically zero on this grid")
    if spec.normalize:
        w = w / total
    return DiscreteMeasure(w)


def require_probability(m: DiscreteMeasure, name: str = "measure") -> None:
    if abs(m.mass - 1.0) > MASS_TOL:
        raise MeasureError(f"{name} has mass {m.mass!r}, expected 1")


@dataclass(frozen=True)
class OrderCheck:
    holds: bool
    max_violation: float
    witness_index: int          # array position of the worst node
    potential_mu: np.ndarray
    potential_nu: np.ndarray

    @property
    def witness_node(self) -> int:
        return self.witness_index

    def witness(self, grid: Grid) -> np.ndarray:
        """Superharmonic ``h = G(delta_w)`` with ``<h, nu> - <h, mu> = max_violation``."""
        e = np.zeros(grid.n_interior)
        e[self.witness_index] = 1.0
        return green_solve(grid, e)


def check_subharmonic_order(
    mu: DiscreteMeasure, nu: DiscreteMeasure, grid: Grid, tol: float = ORDER_TOL
) -> OrderCheck:
    """Discrete subharmonic order via Green potentials: ``G mu >= G nu``.

    Pairing with any ``h`` satisfying ``-1/2 Delta_h h <= 0`` (``h = 0`` on the
    boundary) is a nonnegative combination of ``-G delta_j``, so the order
    reduces to this pointwise comparison.
    """
    if mu.size != grid.n_interior or nu.size != grid.n_interior:
        raise MeasureError("measures do not live on this grid")
    Umu = green_solve(grid, mu.weights)
    Unu = green_solve(grid, nu.weights)
    diff = Unu - Umu
    j = int(np.argmax(diff))
    viol = max(0.0, float(diff[j]))
    return OrderCheck(
        holds=viol <= tol, max_violation=viol, witness_index=j,
        potential_mu=Umu, potential_nu=Unu,
    )
