"""Running costs ``L(t, x) >= 0`` evaluated on the lattice."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Mapping

import numpy as np

from .lattice import Grid

KINDS = ("increasing", "decreasing", "stationary", "oscillating", "table")

# monotonicity class used by the barrier machinery
REGIMES = {"increasing": "D1", "decreasing": "D2", "stationary": "D3"}


class LagrangianError(ValueError):
    pass


@dataclass(frozen=True)
class LagrangianSpec:
    """A tagged running cost.

    ``evaluator(t, x)`` is called with broadcastable arrays of lattice times and
    node coordinates.  ``table(grid)`` gives the ``(K+1, N)`` array of values;
    row ``k`` is charged per unit of unstopped mass over ``[t_k, t_{k+1})``.
    """

    kind: str
    evaluator: Callable[[np.ndarray, np.ndarray], np.ndarray] = field(compare=False)
    params: Mapping[str, Any] = field(default_factory=dict)

    @property
    def regime(self) -> str | None:
        return REGIMES.get(self.kind)

    def table(self, grid: Grid) -> np.ndarray:
        t = grid.times[:, None]
        x = grid.x[None, :]
        vals = np.broadcast_to(np.asarray(self.evaluator(t, x), dtype=float), grid.shape)
        return np.array(vals)

    def bound(self, grid: Grid) -> float:
        return float(self.table(grid).max())

    def validate(self, grid: Grid) -> np.ndarray:
        """Check nonnegativity, finiteness and the kind tag; return the table."""
        L = self.table(grid)
        if not np.all(np.isfinite(L)):
            raise LagrangianError("Lagrangian must be finite on the lattice")
        if np.any(L < 0):
            raise LagrangianError("Lagrangian must be nonnegative")
        if grid.horizon_steps >= 1:
            dL = np.diff(L, axis=0)
            if self.kind == "increasing" and not np.all(dL > 0):
                raise LagrangianError("'increasing' Lagrangian is not strictly increasing in t")
            if self.kind == "decreasing" and not np.all(dL < 0):
                raise LagrangianError("'decreasing' Lagrangian is not strictly decreasing in t")
            if self.kind == "stationary" and not np.all(dL == 0):
                raise LagrangianError("'stationary' Lagrangian depends on t")
        return L

    def to_dict(self) -> dict[str, Any]:
        out = {"kind": self.kind}
        for k, v in self.params.items():
            out[k] = v.tolist() if isinstance(v, np.ndarray) else v
        return out


def increasing(a: float = 1.0, b: float = 1.0) -> LagrangianSpec:
    """``L = a + b t`` (strictly increasing for ``b > 0``)."""
    return LagrangianSpec("increasing", lambda t, x: a + b * t + 0.0 * x, {"a": a, "b": b})


def decreasing(a: float = 1.0, b: float = 1.0) -> LagrangianSpec:
    """``L = a exp(-b t)``."""
    return LagrangianSpec(
        "decreasing", lambda t, x: a * np.exp(-b * t) + 0.0 * x, {"a": a, "b": b}
    )


def stationary(values: Any = 1.0) -> LagrangianSpec:
    """Time-independent ``L(x)``: a constant or one value per interior node."""
    vals = np.asarray(values, dtype=float)
    return LagrangianSpec(
        "stationary", lambda t, x: vals + 0.0 * t + 0.0 * x, {"values": values}
    )


def oscillating(a: float = 1.0, time_scale: float = 1.0) -> LagrangianSpec:
    """``L = a (1 - cos(20 pi t / time_scale))``."""
    return LagrangianSpec(
        "oscillating",
        lambda t, x: a * (1.0 - np.cos(20.0 * np.pi * t / time_scale)) + 0.0 * x,
        {"a": a, "time_scale": time_scale},
    )


def table(values: Any, kind: str = "table") -> LagrangianSpec:
    """An explicit ``(K+1, N)`` table; ``kind`` may tag its monotonicity."""
    vals = np.asarray(values, dtype=float)
    if kind not in KINDS:
        raise LagrangianError(f"unknown kind {kind!r}")

    def ev(t, x):
        if vals.shape != np.broadcast_shapes(np.shape(t), np.shape(x)):
            raise LagrangianError(
                f"table of shape {vals.shape} does not match the lattice"
            )
        return vals

    return LagrangianSpec(kind, ev, {"values": vals})


def from_dict(d: Mapping[str, Any]) -> LagrangianSpec:
    d = dict(d)
    kind = d.pop("kind", None)
    try:
        if kind == "increasing":
            return increasing(float(d.get("a", 1.0)), float(d.get("b", 1.0)))
        if kind == "decreasing":
            return decreasing(float(d.get("a", 1.0)), float(d.get("b", 1.0)))
        if kind == "stationary":
            return stationary(d.get("values", d.get("value", 1.0)))
        if kind == "oscillating":
            return oscillating(float(d.get("a", 1.0)), float(d.get("time_scale", 1.0)))
        if kind == "table":
            return table(d["values"], d.get("tag", "table"))
    except KeyError as exc:
        raise LagrangianError(f"lagrangian {kind!r} is missing {exc}") from None
    raise LagrangianError(f"unknown lagrangian kind {kind!r}")
