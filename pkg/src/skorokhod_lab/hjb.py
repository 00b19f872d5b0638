"""Dual side: value functions, the discrete variational inequality, the ascent.

For a terminal reward ``psi`` (zero on the boundary) the value function is the
backward recursion

    J_K = psi,     J_k = max(psi, P J_{k+1} - dt L_k),

and the dual objective is ``<psi, nu> - <J_0, mu>``.  It is concave and
piecewise linear in ``psi``; its maximum equals the primal optimum.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy.optimize import linprog

from .lagrangian import LagrangianSpec
from .lattice import Grid, GridError, green_solve, heat_step, neg_half_laplacian
from .measures import DiscreteMeasure, OrderCheck, check_subharmonic_order
from .primal import (
    FlowPair,
    admissibility_residual,
    batch_outcomes,
    flow_from_fractions,
    primal_cost,
    stop_everything,
)

log = logging.getLogger(__name__)


class InfeasibleOrderError(ValueError):
    """``mu`` does not precede ``nu``; carries the order check with its witness."""

    def __init__(self, check: OrderCheck):
        super().__init__(
            f"mu does not precede nu in subharmonic order "
            f"(max Green-potential violation {check.max_violation:.3e} "
            f"at node {check.witness_index})"
        )
        self.check = check


@dataclass(frozen=True)
class ValuePair:
    grid: Grid
    psi: np.ndarray     # (N,)
    J: np.ndarray       # (K + 1, N)

    def __post_init__(self):
        if self.psi.shape != (self.grid.n_interior,) or self.J.shape != self.grid.shape:
            raise GridError("value pair does not match the grid")


def _table(L: LagrangianSpec | np.ndarray, grid: Grid) -> np.ndarray:
    return L.table(grid) if isinstance(L, LagrangianSpec) else np.asarray(L, dtype=float)


def backward_induction(
    psi: np.ndarray, L: LagrangianSpec | np.ndarray, grid: Grid
) -> np.ndarray:
    psi = np.asarray(psi, dtype=float)
    if psi.shape != (grid.n_interior,):
        raise GridError("psi does not match the grid")
    cost = grid.dt * _table(L, grid)
    J = np.empty(grid.shape)
    J[-1] = psi
    for k in range(grid.horizon_steps - 1, -1, -1):
        J[k] = np.maximum(psi, heat_step(grid, J[k + 1]) - cost[k])
    return J


def solve_value(psi: np.ndarray, L, grid: Grid) -> ValuePair:
    psi = np.array(psi, dtype=float)
    return ValuePair(grid, psi, backward_induction(psi, L, grid))


def _continuation(vp: ValuePair, L) -> np.ndarray:
    """``P J_{k+1} - dt L_k`` for ``k < K``."""
    return heat_step(vp.grid, vp.J[1:]) - vp.grid.dt * _table(L, vp.grid)[:-1]


def vi_residual(vp: ValuePair, L: LagrangianSpec | np.ndarray) -> dict[str, float]:
    a = vp.J - vp.psi
    b = vp.J[:-1] - _continuation(vp, L)
    sup = max(0.0, -float(a.min()), -float(b.min()))
    eq = max(float(np.abs(np.minimum(a[:-1], b)).max(initial=0.0)), float(np.abs(a[-1]).max()))
    return {"supersolution_res": sup, "equation_res": eq}


def dual_value(vp: ValuePair, mu: DiscreteMeasure, nu: DiscreteMeasure) -> float:
    return float(vp.psi @ nu.weights - vp.J[0] @ mu.weights)


def slackness_residual(fp: FlowPair, vp: ValuePair, L: LagrangianSpec | np.ndarray) -> float:
    """``sum rho (J - psi) + sum eta (J_k - P J_{k+1} + dt L_k)``.

    For an admissible ``fp`` this equals ``primal_cost - dual_value``.
    """
    a = vp.J - vp.psi
    b = vp.J[:-1] - _continuation(vp, L)
    return float(np.sum(fp.rho * a) + np.sum(fp.eta * b))


def default_eps(L: LagrangianSpec | np.ndarray, grid: Grid) -> float:
    D = float(_table(L, grid).max())
    return 1e-9 * max(1.0, D * grid.dt * grid.horizon_steps)


def induced_stopping(
    vp: ValuePair,
    mu: DiscreteMeasure,
    eps: float = 0.0,
    rost_atom: np.ndarray | None = None,
) -> FlowPair:
    """Push ``mu`` forward, stopping fully wherever ``J_k - psi <= eps``.

    ``rost_atom`` (typically ``nu`` for decreasing costs) replaces the full stop
    at ``k = 0`` by the amount ``min(mu, rost_atom)`` on coincidence nodes.
    """
    frac = (vp.J - vp.psi <= eps).astype(float)
    t0 = None
    if rost_atom is not None:
        t0 = np.full(vp.grid.n_interior, np.inf)
        sel = frac[0] > 0
        t0[sel] = np.asarray(rost_atom, dtype=float)[sel]
    return flow_from_fractions(vp.grid, mu.weights, frac, t0)


def stationary_potential(L_bar: np.ndarray, grid: Grid) -> np.ndarray:
    """``psi = -G L_bar``: ``-1/2 Delta_h psi = -L_bar``, ``psi = 0`` on the boundary."""
    L_bar = np.broadcast_to(np.asarray(L_bar, dtype=float), (grid.n_interior,))
    if np.any(L_bar < 0):
        raise ValueError("L_bar must be nonnegative")
    return -green_solve(grid, L_bar)


def monotonicity_check(J: np.ndarray, kind: str, tol: float = 1e-12) -> dict[str, Any]:
    """Time monotonicity of ``J`` for regimes D1 / D2 / D3.

    D2 skips the transition into the horizon slice, where ``J_K = psi`` is
    imposed by truncation; that step is reported as ``horizon_violation``.
    """
    J = np.asarray(J)
    d = np.diff(J, axis=0)           # J_{k+1} - J_k
    out: dict[str, Any] = {}
    if kind == "D1":
        viol = float(d.max(initial=0.0))
    elif kind == "D2":
        viol = float((-d[:-1]).max(initial=0.0))
        out["horizon_violation"] = max(0.0, float((-d[-1:]).max(initial=0.0)))
    elif kind == "D3":
        viol = float(np.abs(J - J[0]).max())
    else:
        raise ValueError(f"unknown regime {kind!r}")
    viol = max(0.0, viol)
    out.update(holds=viol <= tol, max_violation=viol)
    return out


# ---------------------------------------------------------------------------
# normalization


def psor_obstacle(
    grid: Grid,
    obstacle: np.ndarray,
    source: np.ndarray | float = 0.0,
    omega: float = 1.8,
    tol: float = 1e-13,
    max_sweeps: int = 200_000,
) -> np.ndarray:
    """Smallest ``u >= obstacle`` with ``-1/2 Delta_h u >= source`` (zero boundary).

    Projected SOR on the complementarity problem
    ``min(u - obstacle, -1/2 Delta_h u - source) = 0``; sweeps stop once that
    residual is below ``tol`` (relative to the data).
    """
    g = np.asarray(obstacle, dtype=float)
    f = np.broadcast_to(np.asarray(source, dtype=float), g.shape)
    n = g.size
    c = 0.5 / grid.dx**2
    u = np.maximum(g, 0.0) if np.all(f <= 0) else g.copy()
    scale = max(1.0, float(np.abs(g).max()), float(np.abs(f).max()) / c)
    for sweep in range(max_sweeps):
        for i in range(n):
            left = u[i - 1] if i > 0 else 0.0
            right = u[i + 1] if i < n - 1 else 0.0
            gs = (f[i] + c * (left + right)) / (2 * c)
            u[i] = max(g[i], (1 - omega) * u[i] + omega * gs)
        if sweep % 16 == 15:
            res = np.minimum(u - g, (neg_half_laplacian(grid, u) - f) / c)
            if float(np.abs(res).max()) <= tol * scale:
                break
    return u


def superharmonic_envelope(
    grid: Grid, obstacle: np.ndarray, source: float = 0.0
) -> np.ndarray:
    """Exact solution of the ``psor_obstacle`` problem for a constant source.

    With ``w = u - source * G1`` and ``-1/2 Delta_h G1 = 1`` the constraint is
    concavity of ``w`` on the nodes, so ``w`` is the upper concave hull of
    ``obstacle - source * G1`` with the two boundary zeros appended.
    """
    n = grid.n_interior
    g1 = green_solve(grid, np.ones(n))
    y = np.concatenate([[0.0], np.asarray(obstacle, dtype=float) - source * g1, [0.0]])
    x = np.arange(n + 2, dtype=float)
    hull: list[int] = []
    for j in range(n + 2):
        while len(hull) >= 2:
            a, b = hull[-2], hull[-1]
            # drop b when it lies on or below the chord a -> j
            if (y[b] - y[a]) * (x[j] - x[a]) <= (y[j] - y[a]) * (x[b] - x[a]):
                hull.pop()
            else:
                break
        hull.append(j)
    w = np.interp(x, x[hull], y[hull])[1:-1]
    return np.maximum(w + source * g1, obstacle)


def normalize(
    vp: ValuePair, L, mu: DiscreteMeasure, nu: DiscreteMeasure
) -> tuple[ValuePair, dict[str, Any]]:
    """Discrete three-step normalization of a dual pair.

    1. replace ``J`` by the minimal solution for ``psi``;
    2. subtract the superharmonic envelope ``phi`` of ``psi`` so that
       ``psi <= J <= 0``; since ``J - phi`` is a supersolution for
       ``psi - phi`` and ``<phi, mu - nu> >= 0``, the dual cannot drop;
    3. lift ``psi`` to the smallest function above it with ``-1/2 Delta_h psi >= -D``.

    Step 3 is exact only for an infinite horizon; it is kept only when the
    dual value does not drop.
    """
    grid = vp.grid
    D = float(_table(L, grid).max())
    v1 = solve_value(vp.psi, L, grid)
    vals = {"input": dual_value(vp, mu, nu), "step1": dual_value(v1, mu, nu)}

    phi = superharmonic_envelope(grid, v1.psi, 0.0)
    v2 = solve_value(v1.psi - phi, L, grid)
    vals["step2"] = dual_value(v2, mu, nu)

    psi3 = superharmonic_envelope(grid, v2.psi, -D)
    v3 = solve_value(psi3, L, grid)
    vals["step3"] = dual_value(v3, mu, nu)
    accept3 = vals["step3"] >= vals["step2"]
    out = v3 if accept3 else v2
    vals["step3_accepted"] = bool(accept3)
    return out, vals


# ---------------------------------------------------------------------------
# ascent


@dataclass
class AscentOptions:
    max_iter: int = 600            # column-generation rounds
    tol: float = 1e-10             # relative gap target
    eps: float | None = None       # coincidence tolerance for the induced rule
    method: str = "column_generation"   # or "supergradient"
    warm_start: int = 30           # supergradient steps before column generation
    alpha0: float | None = None
    normalize: bool = False
    box0: float | None = None        # initial half-width of the dual box
    smoothing: float = 0.8           # weight of the centre in the second pricing point
    local_columns: bool = False      # also price single-slot variants of each rule
    local_fraction: int = 4          # keep at most N / local_fraction columns per rule

    @classmethod
    def from_dict(cls, d: dict[str, Any] | None) -> "AscentOptions":
        d = dict(d or {})
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown solver options: {sorted(unknown)}")
        return cls(**d)


@dataclass
class SolveReport:
    primal_cost: float
    dual_value: float
    gap: float
    target_residual: float
    slackness_residual: float
    iterations: int
    killed_mass: float
    horizon_tail_mass: float
    converged: bool
    method: str
    gap_history: list[float] = field(default_factory=list)
    diagnostics: dict[str, Any] = field(default_factory=dict)
    timings: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return dict(self.__dict__)


@dataclass(frozen=True)
class SolveResult:
    vp: ValuePair
    fp: FlowPair
    report: SolveReport


def _finish(vp, fp, mu, nu, L, iters, converged, method, history, t0, diag) -> SolveResult:
    res = admissibility_residual(fp, mu, nu)
    pc = primal_cost(fp, L)
    dv = dual_value(vp, mu, nu)
    report = SolveReport(
        primal_cost=pc,
        dual_value=dv,
        gap=pc - dv,
        target_residual=res["target_res"],
        slackness_residual=slackness_residual(fp, vp, L),
        iterations=iters,
        killed_mass=fp.killed_mass,
        horizon_tail_mass=fp.horizon_mass,
        converged=converged,
        method=method,
        gap_history=history,
        diagnostics={**diag, "evolution_res": res["evolution_res"],
                     "negativity_res": res["negativity_res"]},
        timings={"solve": time.perf_counter() - t0},
    )
    return SolveResult(vp, fp, report)


class _Pricer:
    """Deterministic stopping rules that are greedy for a given ``psi``."""

    def __init__(self, grid: Grid, L, mu: DiscreteMeasure, nu: DiscreteMeasure):
        self.grid, self.mu, self.nu = grid, mu, nu
        self.Lt = _table(L, grid)
        self.cost = grid.dt * self.Lt
        self.scale = max(1.0, float(self.cost[:-1].sum(axis=0).max()))

    def value(self, psi):
        return ValuePair(self.grid, psi, backward_induction(psi, self.Lt, self.grid))

    def rules(self, vp: ValuePair) -> list[tuple[np.ndarray, FlowPair]]:
        """Stop-on-tie and continue-on-tie rules with their flows (deduplicated)."""
        return [(fr, flow_from_fractions(self.grid, self.mu.weights, fr))
                for fr in self.tables(vp)]

    def tables(self, vp: ValuePair) -> list[np.ndarray]:
        adv = vp.psi - _continuation(vp, self.Lt)       # > 0: stopping is strictly better
        tie = 1e-12 * self.scale
        K = self.grid.horizon_steps
        out = []
        for stop in (adv >= -tie, adv > tie):
            frac = np.zeros(self.grid.shape)
            frac[:K] = stop
            out.append(frac)
        if np.array_equal(out[0], out[1]):
            out = out[:1]
        return out

    def flips(self, vp: ValuePair, base: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Per node, the reached slot closest to switching in each direction."""
        K = self.grid.horizon_steps
        adv = (vp.psi - _continuation(vp, self.Lt))[:K]
        reached = flow_from_fractions(self.grid, self.mu.weights, base).masses()[:K] > 0
        stop = base[:K] > 0
        ks, is_ = [], []
        for want, sign in ((reached & ~stop, 1.0), (reached & stop, -1.0)):
            score = np.where(want, sign * adv, -np.inf)
            k = np.argmax(score, axis=0)
            ok = np.isfinite(score[k, np.arange(score.shape[1])])
            ks.append(k[ok])
            is_.append(np.flatnonzero(ok))
        return np.concatenate(ks), np.concatenate(is_)

    def dual(self, vp: ValuePair) -> float:
        return dual_value(vp, self.mu, self.nu)


def _supergradient(pricer: _Pricer, psi0, n_iter, alpha0, eps, rost):
    """Plain ascent ``psi += alpha_n (nu - sum rho)`` with averaging."""
    nu = pricer.nu.weights
    psi = np.array(psi0, dtype=float)
    avg = np.zeros_like(psi)
    best = (-np.inf, psi.copy())
    seen = []
    history = []
    for n in range(1, n_iter + 1):
        vp = pricer.value(psi)
        d = pricer.dual(vp)
        if d > best[0]:
            best = (d, psi.copy())
        fp = induced_stopping(vp, pricer.mu, eps, nu if rost else None)
        seen.append(psi.copy())
        g = nu - fp.stopped
        history.append(d)
        psi = psi + alpha0 / np.sqrt(n) * g
        avg += (psi - avg) / n
    vp = pricer.value(avg)
    d = pricer.dual(vp)
    if d > best[0]:
        best = (d, avg.copy())
    return best, seen, history


def prolong_psi(psi: np.ndarray, coarse: Grid, fine: Grid) -> np.ndarray:
    """Linear interpolation of a terminal reward onto a finer grid (zero at the walls)."""
    x = np.concatenate([[coarse.x_min], coarse.x, [coarse.x_max]])
    y = np.concatenate([[0.0], np.asarray(psi, dtype=float), [0.0]])
    return np.interp(fine.x, x, y)


def _master(costs, A, nu, centre, delta):
    """Restricted master with box-stabilized duals.  Returns (V, lam, s, psi, w)."""
    n_cols, N = A.shape
    c = np.concatenate([costs, centre + delta, -(centre - delta)])
    Aeq = np.zeros((N + 1, n_cols + 2 * N))
    Aeq[:N, :n_cols] = A.T
    Aeq[:N, n_cols:n_cols + N] = np.eye(N)
    Aeq[:N, n_cols + N:] = -np.eye(N)
    Aeq[N, :n_cols] = 1.0
    beq = np.concatenate([nu, [1.0]])
    scale = max(1.0, float(np.abs(c).max()))
    for options in ({"primal_feasibility_tolerance": 1e-10,
                     "dual_feasibility_tolerance": 1e-10}, {}):
        res = linprog(c / scale, A_eq=Aeq, b_eq=beq, bounds=(0, None),
                      method="highs-ds", options=options)
        if res.status == 0:
            break
    else:
        raise RuntimeError(f"master LP failed: {res.message}")
    x = res.x
    y = scale * res.eqlin.marginals
    return scale * float(res.fun), x[:n_cols], x[n_cols:], np.asarray(y[:N]), float(y[N])


def ascend(
    mu: DiscreteMeasure,
    nu: DiscreteMeasure,
    L: LagrangianSpec,
    grid: Grid,
    opts: AscentOptions | None = None,
    psi0: np.ndarray | None = None,
) -> SolveResult:
    """Maximize the dual; return the dual pair, an optimal flow and a report.

    ``psi0`` (e.g. a coarse solution through ``prolong_psi``) replaces the
    supergradient warm start; the dual box then starts at ``opts.box0`` or a
    small fraction of ``|psi0|``.

    The default method keeps the supergradient ascent as a warm start and then
    runs stabilized column generation.  The master problem mixes deterministic
    stopping rules (its columns are their stopped laws and costs); its duals
    are the next ``psi`` and pricing is one backward sweep.  Mixing is what
    lets the flow hit ``nu`` exactly where no single deterministic rule can.
    """
    opts = opts or AscentOptions()
    t0 = time.perf_counter()
    order = check_subharmonic_order(mu, nu, grid)
    if not order.holds:
        raise InfeasibleOrderError(order)
    Lt = L.validate(grid) if isinstance(L, LagrangianSpec) else np.asarray(L, dtype=float)
    eps = default_eps(Lt, grid) if opts.eps is None else opts.eps
    regime = L.regime if isinstance(L, LagrangianSpec) else None
    diag: dict[str, Any] = {"eps": eps, "regime": regime, "order_violation": order.max_violation}

    if np.array_equal(mu.weights, nu.weights):
        vp = ValuePair(grid, np.zeros(grid.n_interior), np.zeros(grid.shape))
        return _finish(vp, stop_everything(grid, mu), mu, nu, Lt, 0, True,
                       "identity", [0.0], t0, diag)

    pricer = _Pricer(grid, Lt, mu, nu)
    D = float(Lt.max())
    alpha0 = opts.alpha0 if opts.alpha0 is not None else max(D, 1e-12) * grid.dt * grid.horizon_steps / 4
    rost = regime == "D2"

    if psi0 is not None and opts.method == "column_generation":
        psi_sg = np.array(psi0, dtype=float)
        if psi_sg.shape != (grid.n_interior,):
            raise GridError("psi0 does not match the grid")
        d_sg = pricer.dual(pricer.value(psi_sg))
        seen, history = [], [d_sg]
    else:
        (d_sg, psi_sg), seen, history = _supergradient(
            pricer, np.zeros(grid.n_interior) if psi0 is None else np.asarray(psi0, float),
            opts.max_iter if opts.method == "supergradient" else opts.warm_start,
            alpha0, eps, rost,
        )

    if opts.method == "supergradient":
        vp = pricer.value(psi_sg)
        fp = induced_stopping(vp, mu, eps, nu.weights if rost else None)
        res = _finish(vp, fp, mu, nu, Lt, opts.max_iter, False, "supergradient",
                      history, t0, diag)
        gap_ok = res.report.gap <= opts.tol * max(1.0, res.report.primal_cost)
        res.report.converged = gap_ok and res.report.target_residual <= opts.tol
        return res
    if opts.method != "column_generation":
        raise ValueError(f"unknown method {opts.method!r}")

    # column pool: stopped laws, costs and (packed base table, flipped slot)
    cols_a, cols_c, cols_rule = [], [], []
    bases: list[np.ndarray] = []

    cap = max(4, grid.n_interior // opts.local_fraction) if opts.local_columns else 1

    def add(table, psi_ref=None, w_ref=0.0, flips=None):
        """Add the rule ``table`` and its single-slot variants; keep only
        columns that price out against ``(psi_ref, w_ref)`` when given."""
        st, co = batch_outcomes(grid, mu.weights, table, Lt, flips)
        fk, fi = flips if flips is not None else (np.zeros(0, int), np.zeros(0, int))
        keys = [(-1, -1)] + list(zip(fk.tolist(), fi.tolist()))
        if psi_ref is not None:
            rc = co - st @ psi_ref - w_ref
            keep = rc < -1e-13 * pricer.scale
            if keep.sum() > cap:
                keep[np.argsort(rc)[cap:]] = False
        else:
            keep = np.ones(len(keys), dtype=bool)
        if not keep.any():
            return 0
        bases.append(np.packbits(table.astype(bool)))
        for j in np.flatnonzero(keep):
            cols_a.append(st[j])
            cols_c.append(float(co[j]))
            cols_rule.append((len(bases) - 1,) + keys[j])
        return int(keep.sum())

    def table_of(j):
        bi, k, i = cols_rule[j]
        t = np.unpackbits(bases[bi], count=grid.shape[0] * grid.shape[1])
        t = t.reshape(grid.shape).astype(float)
        if k >= 0:
            t[k, i] = 1.0 - t[k, i]
        return t

    zero = np.zeros(grid.shape)
    zero[0] = 1.0
    add(zero)
    best_d, best_psi = d_sg, psi_sg
    for psi in seen + [psi_sg]:
        for t in pricer.tables(pricer.value(psi)):
            add(t)

    centre, d_centre = best_psi.copy(), best_d
    if opts.box0 is not None:
        delta = opts.box0
    elif psi0 is not None:
        delta = max(1e-3, 1e-3 * float(np.abs(centre).max()))
    else:
        delta = max(1.0, float(np.abs(centre).max()), alpha0)
    lam = s = None
    converged = False
    cg_hist = []
    it = 0
    for it in range(1, opts.max_iter + 1):
        V, lam, s, psi_m, w = _master(np.array(cols_c), np.array(cols_a), nu.weights,
                                      centre, delta)
        art = float(s.sum())
        gap = V - best_d
        cg_hist.append(gap)
        log.debug("cg %d: V=%.12g best=%.12g art=%.2e delta=%.3g cols=%d",
                  it, V, best_d, art, delta, len(cols_a))
        if art <= 1e-11 and gap <= opts.tol * max(1.0, abs(V)):
            converged = True
            break

        # price at the master duals and at a point pulled toward the centre
        points = [psi_m]
        if opts.smoothing > 0:
            points.append(opts.smoothing * centre + (1 - opts.smoothing) * psi_m)
        added = 0
        for p in points:
            vp = pricer.value(p)
            d = pricer.dual(vp)
            if d > best_d:
                best_d, best_psi = d, p.copy()
            for j, t in enumerate(pricer.tables(vp)):
                fl = pricer.flips(vp, t) if opts.local_columns and j == 0 else None
                added += add(t, psi_m, w, fl)

        if best_d > d_centre + 0.1 * (V - d_centre):
            centre, d_centre = best_psi.copy(), best_d
            if art > 1e-11:
                delta *= 2.0
        elif added == 0:
            delta *= 2.0

    # recombine the active columns into an (exactly admissible) flow
    active = np.flatnonzero(lam > 1e-14)
    A_act = np.array(cols_a)[active]
    M = np.vstack([A_act.T, np.ones(len(active))])
    rhs = np.concatenate([nu.weights, [1.0]])
    pol, *_ = np.linalg.lstsq(M, rhs, rcond=None)
    if np.all(pol >= 0) and np.abs(M @ pol - rhs).max() <= np.abs(M @ lam[active] - rhs).max():
        weights = pol
    else:
        weights = lam[active]
    fp = None
    for wj, j in zip(weights, active):
        f = flow_from_fractions(grid, mu.weights, table_of(j))
        if fp is None:
            fp = FlowPair(grid, wj * f.eta, wj * f.rho, wj * f.killed_mass)
        else:
            fp = FlowPair(grid, fp.eta + wj * f.eta, fp.rho + wj * f.rho,
                          fp.killed_mass + wj * f.killed_mass)

    vp = pricer.value(best_psi)
    if opts.normalize:
        vp, diag["normalization"] = normalize(vp, Lt, mu, nu)
    if regime == "D3":
        # every admissible flow has the same cost, so the stationary potential is optimal
        vp = solve_value(stationary_potential(Lt[0], grid), Lt, grid)
    diag.update(columns=len(cols_a), active_columns=int(active.size),
                warm_start_dual=d_sg, box=delta)
    res = _finish(vp, fp, mu, nu, Lt, it, converged, "column_generation",
                  history + cg_hist, t0, diag)
    return res

