"""Space-time lattice for a killed random walk on an interval.

Interior nodes are ``x_i = x_min + (i + 1) * dx`` for ``i = 0 .. n_interior - 1``;
the two endpoints carry homogeneous Dirichlet data.  One time step applies

    P = I + (dt / 2) * Delta_h,

the explicit heat step, which for ``ratio = dt / dx**2 <= 1`` is the transition
kernel of a lazy nearest-neighbour walk killed on leaving the interval.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Mapping

import numpy as np
from scipy.linalg import solve_banded


class GridError(ValueError):
    """Raised for inconsistent lattice parameters or shape mismatches."""


@dataclass(frozen=True)
class Grid:
    x_min: float
    x_max: float
    n_interior: int
    ratio: float
    horizon_steps: int

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / (self.n_interior + 1)

    @property
    def dt(self) -> float:
        return self.ratio * self.dx**2

    @property
    def shape(self) -> tuple[int, int]:
        """Shape of a field indexed by ``(k, i)`` with ``k = 0 .. K``."""
        return (self.horizon_steps + 1, self.n_interior)

    @property
    def x(self) -> np.ndarray:
        return self.x_min + self.dx * np.arange(1, self.n_interior + 1)

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.horizon_steps + 1)

    def node_index(self, lattice_index: int) -> int:
        """Array position of lattice node ``j`` (``j = 1`` is the first interior node)."""
        if not 1 <= lattice_index <= self.n_interior:
            raise GridError(
                f"lattice index {lattice_index} outside interior 1..{self.n_interior}"
            )
        return lattice_index - 1

    def to_dict(self) -> dict[str, Any]:
        return {
            "x_min": self.x_min,
            "x_max": self.x_max,
            "n_interior": self.n_interior,
            "ratio": self.ratio,
            "horizon_steps": self.horizon_steps,
        }


def build_grid(
    config: Mapping[str, Any] | None = None,
    *,
    x_min: float | None = None,
    x_max: float | None = None,
    n_interior: int | None = None,
    ratio: float | None = None,
    horizon_steps: int | None = None,
) -> Grid:
    """Build a :class:`Grid` from a mapping or keyword arguments.

    Accepted keys: ``x_min``, ``x_max``, ``n_interior``, ``ratio`` (alias ``r``)
    and ``horizon_steps`` (alias ``K``).
    """
    cfg = dict(config or {})
    if "r" in cfg:
        cfg.setdefault("ratio", cfg.pop("r"))
    if "K" in cfg:
        cfg.setdefault("horizon_steps", cfg.pop("K"))
    overrides = dict(
        x_min=x_min, x_max=x_max, n_interior=n_interior, ratio=ratio,
        horizon_steps=horizon_steps,
    )
    cfg.update({k: v for k, v in overrides.items() if v is not None})
    cfg.setdefault("ratio", 1.0)
    missing = {"x_min", "x_max", "n_interior", "horizon_steps"} - cfg.keys()
    if missing:
        raise GridError(f"missing grid parameters: {sorted(missing)}")
    unknown = cfg.keys() - {"x_min", "x_max", "n_interior", "ratio", "horizon_steps"}
    if unknown:
        raise GridError(f"unknown grid parameters: {sorted(unknown)}")

    n = cfg["n_interior"]
    K = cfg["horizon_steps"]
    if int(n) != n or int(K) != K:
        raise GridError("n_interior and horizon_steps must be integers")
    n, K = int(n), int(K)
    x0, x1, r = float(cfg["x_min"]), float(cfg["x_max"]), float(cfg["ratio"])
    if n < 1:
        raise GridError("n_interior must be >= 1")
    if K < 1:
        raise GridError("horizon_steps must be >= 1")
    if not x1 > x0:
        raise GridError("x_max must exceed x_min")
    if not r > 0:
        raise GridError("ratio dt/dx^2 must be positive")
    if r > 1:
        raise GridError(
            f"ratio dt/dx^2 = {r} > 1: the explicit step is no longer monotone"
        )
    return Grid(x_min=x0, x_max=x1, n_interior=n, ratio=r, horizon_steps=K)


def _check_last_axis(grid: Grid, v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.ndim == 0 or v.shape[-1] != grid.n_interior:
        raise GridError(
            f"expected trailing dimension {grid.n_interior}, got shape {v.shape}"
        )
    return v


def heat_step(grid: Grid, v: np.ndarray) -> np.ndarray:
    """Apply ``P = I + (dt/2) Delta_h`` along the last axis of ``v``.

    Zero Dirichlet values are used outside the interior, so rows next to the
    boundary are sub-stochastic: that mass is killed.
    """
    v = _check_last_axis(grid, v)
    r = grid.ratio
    out = (1.0 - r) * v
    half = 0.5 * r
    out[..., 1:] += half * v[..., :-1]
    out[..., :-1] += half * v[..., 1:]
    return out


def heat_matrix(grid: Grid) -> np.ndarray:
    """Dense matrix of :func:`heat_step` (symmetric, entrywise nonnegative)."""
    n = grid.n_interior
    r = grid.ratio
    P = np.diag(np.full(n, 1.0 - r))
    idx = np.arange(n - 1)
    P[idx, idx + 1] = 0.5 * r
    P[idx + 1, idx] = 0.5 * r
    return P


def neg_half_laplacian(grid: Grid, u: np.ndarray) -> np.ndarray:
    """Return ``-1/2 Delta_h u`` with zero boundary values, along the last axis."""
    u = _check_last_axis(grid, u)
    c = 0.5 / grid.dx**2
    out = 2.0 * c * u
    out[..., 1:] -= c * u[..., :-1]
    out[..., :-1] -= c * u[..., 1:]
    return out


def green_solve(grid: Grid, f: np.ndarray) -> np.ndarray:
    """Solve ``-1/2 Delta_h U = f`` with ``U = 0`` on the boundary.

    ``f`` may carry extra leading axes; each trailing slice is solved.
    """
    f = _check_last_axis(grid, f)
    n = grid.n_interior
    c = 0.5 / grid.dx**2
    ab = np.empty((3, n))
    ab[0, :] = -c
    ab[1, :] = 2.0 * c
    ab[2, :] = -c
    rhs = np.moveaxis(f, -1, 0).reshape(n, -1)
    sol = solve_banded((1, 1), ab, rhs)
    return np.moveaxis(sol.reshape((n,) + f.shape[:-1]), 0, -1)


def heat_evolution(grid: Grid, v0: np.ndarray, steps: int | None = None) -> np.ndarray:
    """Unstopped Dirichlet evolution ``v_k = P^k v0`` for ``k = 0 .. steps``."""
    steps = grid.horizon_steps if steps is None else steps
    v0 = _check_last_axis(grid, v0)
    out = np.empty((steps + 1, grid.n_interior))
    out[0] = v0
    for k in range(steps):
        out[k + 1] = heat_step(grid, out[k])
    return out
