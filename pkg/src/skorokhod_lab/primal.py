"""Eulerian unknowns: occupation density ``eta`` and stopping measure ``rho``.

With ``m_0 = mu`` and ``m_{k+1} = P eta_k`` a pair is admissible when

    rho_k + eta_k = m_k   (k < K),      rho_K = m_K,      sum_k rho_k = nu,

and everything is nonnegative.  ``eta`` has ``K`` rows, ``rho`` has ``K + 1``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from .lagrangian import LagrangianSpec
from .lattice import Grid, GridError, heat_evolution, heat_step
from .measures import DiscreteMeasure

if TYPE_CHECKING:
    from .barrier import Barrier


class BarrierError(ValueError):
    pass


@dataclass(frozen=True)
class FlowPair:
    grid: Grid
    eta: np.ndarray       # (K, N)
    rho: np.ndarray       # (K + 1, N)
    killed_mass: float = 0.0

    def __post_init__(self):
        K, N = self.grid.horizon_steps, self.grid.n_interior
        if self.eta.shape != (K, N) or self.rho.shape != (K + 1, N):
            raise GridError(
                f"flow shapes {self.eta.shape}, {self.rho.shape} do not match grid {(K, N)}"
            )

    @property
    def stopped(self) -> np.ndarray:
        """Spatial law of the stopped mass, ``sum_k rho_k``."""
        return self.rho.sum(axis=0)

    @property
    def horizon_mass(self) -> float:
        """Mass still running at the horizon and stopped there by force."""
        return float(self.rho[-1].sum())

    def masses(self) -> np.ndarray:
        """``m_k = eta_k + rho_k`` for ``k < K`` and ``m_K = rho_K``."""
        m = self.rho.copy()
        m[:-1] += self.eta
        return m

    def combine(self, other: "FlowPair", weight: float) -> "FlowPair":
        """``(1 - weight) * self + weight * other``."""
        a = 1.0 - weight
        return FlowPair(
            self.grid,
            a * self.eta + weight * other.eta,
            a * self.rho + weight * other.rho,
            a * self.killed_mass + weight * other.killed_mass,
        )


def stop_everything(grid: Grid, mu: DiscreteMeasure) -> FlowPair:
    rho = np.zeros(grid.shape)
    rho[0] = mu.weights
    return FlowPair(grid, np.zeros((grid.horizon_steps, grid.n_interior)), rho, 0.0)


def never_stop(grid: Grid, mu: DiscreteMeasure) -> FlowPair:
    return flow_from_fractions(grid, mu.weights, np.zeros(grid.shape))


def flow_from_fractions(
    grid: Grid,
    mu: np.ndarray,
    fractions: np.ndarray,
    t0_mass: np.ndarray | None = None,
) -> FlowPair:
    """Push ``mu`` forward, stopping ``fractions[k, i]`` of the mass at ``(k, i)``.

    The last row is ignored (everything stops at the horizon).  Where
    ``t0_mass`` is finite it replaces the fraction at ``k = 0`` by the stopped
    amount ``min(m_0, t0_mass)``.
    """
    K, N = grid.horizon_steps, grid.n_interior
    eta = np.empty((K, N))
    rho = np.empty((K + 1, N))
    killed = 0.0
    half = 0.5 * grid.ratio
    m = np.array(mu, dtype=float)
    for k in range(K):
        stop = m * fractions[k]
        if k == 0 and t0_mass is not None:
            atom = np.isfinite(t0_mass)
            stop[atom] = np.minimum(m[atom], t0_mass[atom])
        rho[k] = stop
        eta[k] = m - stop
        killed += half * (eta[k, 0] + eta[k, -1])
        m = heat_step(grid, eta[k])
    rho[K] = m
    return FlowPair(grid, eta, rho, float(killed))


def batch_outcomes(
    grid: Grid,
    mu: np.ndarray,
    base: np.ndarray,
    L_table: np.ndarray,
    flips: tuple[np.ndarray, np.ndarray] | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Stopped laws and costs of ``base`` and of single-slot variants of it.

    ``base`` is a 0/1 stop table ``(K + 1, N)``.  Member 0 of the batch is the
    base rule; member ``j + 1`` flips slot ``(flips[0][j], flips[1][j])``.
    Returns ``(B, N)`` stopped laws and ``(B,)`` costs, using the same
    recursion as ``flow_from_fractions``.
    """
    K, N = grid.horizon_steps, grid.n_interior
    fk, fi = (np.zeros(0, int), np.zeros(0, int)) if flips is None else flips
    B = 1 + fk.size
    members = np.arange(1, B)
    m = np.broadcast_to(np.asarray(mu, dtype=float), (B, N)).copy()
    stopped = np.zeros_like(m)
    cost = np.zeros(B)
    for k in range(K):
        frac = np.broadcast_to(base[k].astype(float), (B, N))
        sel = fk == k
        if sel.any():
            frac = frac.copy()
            frac[members[sel], fi[sel]] = 1.0 - frac[members[sel], fi[sel]]
        stop = m * frac
        stopped += stop
        eta = m - stop
        cost += grid.dt * (eta @ L_table[k])
        m = heat_step(grid, eta)
    stopped += m
    return stopped, cost


def admissibility_residual(
    fp: FlowPair, mu: DiscreteMeasure, nu: DiscreteMeasure
) -> dict[str, float]:
    """Sup-norm residuals of the evolution, target and sign constraints."""
    grid = fp.grid
    if mu.size != grid.n_interior or nu.size != grid.n_interior:
        raise GridError("measures do not match the flow's grid")
    prev = np.vstack([mu.weights[None, :], heat_step(grid, fp.eta)])   # m_k
    ev = fp.rho.copy()
    ev[:-1] += fp.eta
    ev -= prev
    neg = max(0.0, -float(fp.eta.min(initial=0.0)), -float(fp.rho.min(initial=0.0)))
    return {
        "evolution_res": float(np.abs(ev).max()),
        "target_res": float(np.abs(fp.stopped - nu.weights).max()),
        "negativity_res": neg,
    }


def is_admissible(fp: FlowPair, mu, nu, tol: float = 1e-9) -> bool:
    return all(v <= tol for v in admissibility_residual(fp, mu, nu).values())


def primal_cost(fp: FlowPair, L: LagrangianSpec | np.ndarray) -> float:
    """``sum_k sum_x dt L(t_k, x) eta_k(x)``."""
    table = L.table(fp.grid) if isinstance(L, LagrangianSpec) else np.asarray(L)
    return float(fp.grid.dt * np.sum(table[:-1] * fp.eta))


def transport_from_barrier(b: "Barrier", mu: DiscreteMeasure, grid: Grid) -> FlowPair:
    """The flow that continues off the barrier and stops on it.

    Mass on a barrier node stops entirely, except at an optional edge slice
    (``b.edge_fraction``) and the Rost atom at ``t = 0`` (``b.t0_mass``).
    """
    if b.s.shape != (grid.n_interior,):
        raise BarrierError("barrier does not match the grid")
    t0 = None
    if b.t0_mass is not None:
        t0 = np.full(grid.n_interior, np.inf)
        sel = (b.s == 0)
        if np.any(b.t0_mass[sel] > mu.weights[sel] * (1 + 1e-12) + 1e-15):
            raise BarrierError("t0_mass exceeds mu")
        t0[sel] = b.t0_mass[sel]
    return flow_from_fractions(grid, mu.weights, b.stop_fractions(grid), t0)


def heat_comparison(
    fp: FlowPair, mu: DiscreteMeasure, grid: Grid | None = None, tol: float = 1e-12
) -> dict[str, float | bool]:
    """Check ``eta_k <= P^k mu`` pointwise."""
    grid = grid or fp.grid
    free = heat_evolution(grid, mu.weights, grid.horizon_steps - 1)
    excess = float((fp.eta - free).max())
    return {"holds": excess <= tol, "max_excess": max(0.0, excess)}
