"""Green potentials along an admissible flow.

``U_k = G(eta_k + sum_{j <= k} rho_j)`` with ``eta_K = 0``.  Since
``m_{k+1} = P eta_k``, one step gives ``U_{k+1} - U_k = G(P eta_k - eta_k)
= -dt eta_k`` exactly, so ``U`` decreases from ``U_0 = G(mu)`` to
``U_K = G(sum rho) = G(nu)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import numpy as np

from .lattice import Grid, green_solve, neg_half_laplacian
from .measures import DiscreteMeasure
from .primal import FlowPair


@dataclass(frozen=True)
class PotentialFlow:
    U: np.ndarray       # (K + 1, N)
    U_mu: np.ndarray
    U_nu: np.ndarray


def _occupied(fp: FlowPair) -> np.ndarray:
    """``eta_k + sum_{j <= k} rho_j`` for ``k = 0 .. K``."""
    f = np.cumsum(fp.rho, axis=0)
    f[:-1] += fp.eta
    return f


def potential_flow(
    fp: FlowPair, grid: Grid | None = None,
    mu: DiscreteMeasure | None = None, nu: DiscreteMeasure | None = None,
) -> PotentialFlow:
    """Potentials of ``fp``; ``U_mu`` / ``U_nu`` default to those of ``m_0`` and ``sum rho``."""
    grid = grid or fp.grid
    U = green_solve(grid, _occupied(fp))
    m0 = fp.masses()[0] if mu is None else mu.weights
    target = fp.stopped if nu is None else nu.weights
    return PotentialFlow(U, green_solve(grid, m0), green_solve(grid, target))


def potential_checks(pf: PotentialFlow, fp: FlowPair, tol: float = 1e-10) -> dict[str, Any]:
    """Monotonicity, endpoints, constancy where ``eta = 0`` and the defining relation."""
    grid = fp.grid
    U = pf.U
    dU = np.diff(U, axis=0)                       # U_{k+1} - U_k
    scale = max(1.0, float(np.abs(U).max()))
    worst = float(dU.max(initial=0.0))
    where = np.unravel_index(int(np.argmax(dU)), dU.shape) if dU.size else (0, 0)
    mono = max(0.0, worst)
    zero = fp.eta == 0
    const = float(np.abs(dU[zero]).max(initial=0.0))
    defining = float(np.abs(neg_half_laplacian(grid, U) - _occupied(fp)).max())
    start = float(np.abs(U[0] - pf.U_mu).max())
    end = float(np.abs(U[-1] - pf.U_nu).max())
    step = float(np.abs(dU + grid.dt * fp.eta).max(initial=0.0))
    t = tol * scale
    return {
        "monotone": mono <= t,
        "monotonicity_violation": mono,
        "violation_at": (int(where[0]), int(where[1])) if mono > t else None,
        "start_error": start,
        "end_error": end,
        "constancy_error": const,
        "step_identity_error": step,
        "defining_relation_error": defining,
        "passed": mono <= t and start <= t and end <= t and const <= t and defining <= t,
    }


def quasivariational_residual(pf: PotentialFlow, grid: Grid) -> dict[str, Any]:
    """Discrete ``min(d_t U - 1/2 Delta U, U - U_nu)`` in density units.

    Potentials are averaged over consecutive slices, ``V_k = (U_k + U_{k-1})/2``,
    so that the even/odd oscillation of the walk cancels; the time derivative is
    the backward difference of ``V``.  With the one-step forward difference the
    first branch would collapse onto the defining relation and only measure the
    stopping already done.
    """
    dx, dt = grid.dx, grid.dt
    V = 0.5 * (pf.U[1:] + pf.U[:-1])                 # V_k for k = 1 .. K
    if V.shape[0] < 2:
        return {"sup": 0.0, "l1": 0.0, "field": np.zeros((0, grid.n_interior))}
    dVdt = (V[1:] - V[:-1]) / dt
    lap = -neg_half_laplacian(grid, V[1:])           # +1/2 Delta_h V
    first = (dVdt - lap) / dx
    second = (V[1:] - pf.U_nu) / dx
    r = np.minimum(first, second)
    return {
        "sup": float(np.abs(r).max()),
        "l1": float(np.abs(r).sum() * dt * dx),
        "field": r,
    }
