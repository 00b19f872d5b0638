"""Exact ground truth: the full primal LP solved in rational arithmetic.

Only meant for tiny instances.  The tableau is kept sparse (rows are dicts),
pivoting follows Bland's rule, and the initial basis comes from a phase-1
problem with one artificial per row.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy import sparse

from .lagrangian import LagrangianSpec
from .lattice import Grid
from .measures import DiscreteMeasure, MeasureError
from .primal import FlowPair

SIZE_GUARD = 5000

ZERO = Fraction(0)
ONE = Fraction(1)


class OracleSizeError(RuntimeError):
    pass


@dataclass(frozen=True)
class AssembledLP:
    """``min c.x  s.t.  A x = b, x >= 0`` with the lattice bookkeeping.

    Variables: ``eta[k, i]`` at ``k * N + i`` (``k < K``), then ``rho[k, i]``
    at ``K * N + k * N + i``.  Rows: evolution ``(k, i)`` at ``k * N + i``
    (``k <= K``), then the target rows at ``(K + 1) * N + i``.
    """

    grid: Grid
    rows: list[dict[int, Fraction]]
    rhs: list[Fraction]
    cost: list[Fraction]

    @property
    def n_vars(self) -> int:
        return len(self.cost)

    @property
    def n_rows(self) -> int:
        return len(self.rows)

    def eta_var(self, k: int, i: int) -> int:
        return k * self.grid.n_interior + i

    def rho_var(self, k: int, i: int) -> int:
        g = self.grid
        return g.horizon_steps * g.n_interior + k * g.n_interior + i

    def matrix(self) -> sparse.csr_matrix:
        """Float copy of the constraint matrix."""
        data, ri, ci = [], [], []
        for r, row in enumerate(self.rows):
            for c, v in row.items():
                ri.append(r)
                ci.append(c)
                data.append(float(v))
        return sparse.csr_matrix((data, (ri, ci)), shape=(self.n_rows, self.n_vars))


def _exact(v: float) -> Fraction:
    return Fraction(float(v))


def assemble_lp(
    grid: Grid, mu: DiscreteMeasure, nu: DiscreteMeasure, L: LagrangianSpec
) -> AssembledLP:
    K, N = grid.horizon_steps, grid.n_interior
    if mu.size != N or nu.size != N:
        raise MeasureError("measures do not live on this grid")
    mu_q, nu_q = mu.exact_weights(), nu.exact_weights()
    if sum(mu_q) != 1 or sum(nu_q) != 1:
        raise MeasureError("the exact LP needs probability measures with mass exactly 1")

    r = _exact(grid.ratio)
    diag, off = 1 - r, r / 2
    dt = _exact(grid.dt)
    table = L.table(grid)

    lp = AssembledLP(grid, [], [], [ZERO] * (K * N + (K + 1) * N))
    for k in range(K):
        for i in range(N):
            lp.cost[lp.eta_var(k, i)] = dt * _exact(table[k, i])

    for k in range(K + 1):
        for i in range(N):
            row: dict[int, Fraction] = {lp.rho_var(k, i): ONE}
            if k < K:
                row[lp.eta_var(k, i)] = ONE
            if k > 0:
                # minus (P eta_{k-1})_i
                if diag:
                    row[lp.eta_var(k - 1, i)] = -diag
                for j in (i - 1, i + 1):
                    if 0 <= j < N and off:
                        row[lp.eta_var(k - 1, j)] = -off
            lp.rows.append(row)
            lp.rhs.append(mu_q[i] if k == 0 else ZERO)
    for i in range(N):
        lp.rows.append({lp.rho_var(k, i): ONE for k in range(K + 1)})
        lp.rhs.append(nu_q[i])
    return lp


# ---------------------------------------------------------------------------
# simplex


@dataclass
class _Tableau:
    rows: list[dict[int, Fraction]]
    rhs: list[Fraction]
    basis: list[int]
    d: dict[int, Fraction] = field(default_factory=dict)   # reduced costs (nonzero only)
    obj: Fraction = ZERO
    pivots: int = 0

    def pivot(self, r: int, q: int) -> None:
        prow = self.rows[r]
        a = prow[q]
        if a != 1:
            inv = 1 / a
            prow = {j: v * inv for j, v in prow.items()}
            self.rows[r] = prow
            self.rhs[r] *= inv
        br = self.rhs[r]
        for i, row in enumerate(self.rows):
            if i == r:
                continue
            f = row.get(q)
            if f is None:
                continue
            for j, v in prow.items():
                nv = row.get(j, ZERO) - f * v
                if nv:
                    row[j] = nv
                else:
                    row.pop(j, None)
            self.rhs[i] -= f * br
        f = self.d.get(q)
        if f is not None:
            for j, v in prow.items():
                nv = self.d.get(j, ZERO) - f * v
                if nv:
                    self.d[j] = nv
                else:
                    self.d.pop(j, None)
            self.obj += f * br
        self.basis[r] = q
        self.pivots += 1

    def price(self, cost: dict[int, Fraction], n_cols: int) -> None:
        """Reduced costs and objective for the current basis."""
        d = {j: v for j, v in cost.items() if v}
        obj = ZERO
        for i, row in enumerate(self.rows):
            cb = cost.get(self.basis[i], ZERO)
            if not cb:
                continue
            obj += cb * self.rhs[i]
            for j, v in row.items():
                nv = d.get(j, ZERO) - cb * v
                if nv:
                    d[j] = nv
                else:
                    d.pop(j, None)
        for j in self.basis:
            d.pop(j, None)
        self.d, self.obj = d, obj

    def run(self, eligible: int, max_pivots: int) -> str:
        """Bland iterations over columns ``< eligible``; returns a status."""
        while True:
            q = min((j for j, v in self.d.items() if v < 0 and j < eligible), default=None)
            if q is None:
                return "optimal"
            best, r = None, None
            for i, row in enumerate(self.rows):
                a = row.get(q)
                if a is not None and a > 0:
                    ratio = self.rhs[i] / a
                    if best is None or ratio < best or (ratio == best and self.basis[i] < self.basis[r]):
                        best, r = ratio, i
            if r is None:
                return "unbounded"
            if self.pivots >= max_pivots:
                return "iteration_limit"
            self.pivot(r, q)


@dataclass(frozen=True)
class SimplexResult:
    status: str                    # optimal | infeasible | unbounded | iteration_limit
    x: list[Fraction] | None
    y: list[Fraction]              # row multipliers (optimal duals, or a Farkas ray)
    objective: Fraction | None
    pivots: int


def simplex_exact(
    rows: list[dict[int, Fraction]], rhs: list[Fraction], cost: list[Fraction],
    max_pivots: int = 1_000_000,
) -> SimplexResult:
    """Two-phase simplex for ``min c.x, A x = b, x >= 0`` in exact arithmetic.

    On infeasibility ``y`` satisfies ``A^T y <= 0`` and ``b.y > 0``.
    """
    m, n = len(rows), len(cost)
    sign = [ONE if b >= 0 else -ONE for b in rhs]
    trows = []
    for i, row in enumerate(rows):
        tr = {j: sign[i] * v for j, v in row.items() if v}
        tr[n + i] = ONE
        trows.append(tr)
    tab = _Tableau(trows, [s * b for s, b in zip(sign, rhs)], [n + i for i in range(m)])

    tab.price({n + i: ONE for i in range(m)}, n + m)
    status = tab.run(n, max_pivots)
    if status == "iteration_limit":
        return SimplexResult(status, None, [], None, tab.pivots)

    def duals(art_cost: Fraction) -> list[Fraction]:
        return [sign[i] * (art_cost - tab.d.get(n + i, ZERO)) for i in range(m)]

    if tab.obj > 0:
        return SimplexResult("infeasible", None, duals(ONE), None, tab.pivots)

    # push zero-level artificials out of the basis where possible
    for i in range(m):
        if tab.basis[i] >= n:
            q = min((j for j in tab.rows[i] if j < n), default=None)
            if q is not None:
                tab.pivot(i, q)

    tab.price({j: c for j, c in enumerate(cost) if c}, n + m)
    status = tab.run(n, max_pivots)
    if status != "optimal":
        return SimplexResult(status, None, [], None, tab.pivots)
    x = [ZERO] * n
    for i, j in enumerate(tab.basis):
        if j < n:
            x[j] = tab.rhs[i]
    return SimplexResult("optimal", x, duals(ZERO), tab.obj, tab.pivots)


# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OracleResult:
    status: str                              # optimal | infeasible
    flow: FlowPair | None
    psi: np.ndarray
    J: np.ndarray                            # (K + 1, N)
    optimal_cost: Fraction | None
    eta_exact: list[list[Fraction]] | None = None
    rho_exact: list[list[Fraction]] | None = None
    psi_exact: list[Fraction] = field(default_factory=list)
    J_exact: list[list[Fraction]] = field(default_factory=list)
    pivots: int = 0

    @property
    def feasible(self) -> bool:
        return self.status == "optimal"


def solve_lp_exact(lp: AssembledLP, size_guard: int = SIZE_GUARD) -> OracleResult:
    """Solve ``lp`` exactly.

    Multipliers use the orientation of the dual solver: evolution rows carry
    ``-J_k`` and target rows carry ``psi``.  Then ``J >= psi``,
    ``J_k >= P J_{k+1} - dt L_k`` and the objective equals
    ``<psi, nu> - <J_0, mu>``.  An infeasible LP returns a ray ``(psi, J)`` of
    the same system with ``L = 0`` and ``<psi, nu> - <J_0, mu> > 0``.
    """
    if lp.n_vars > size_guard:
        raise OracleSizeError(
            f"{lp.n_vars} variables exceed the exact-oracle size guard of {size_guard}"
        )
    g = lp.grid
    K, N = g.horizon_steps, g.n_interior
    res = simplex_exact(lp.rows, lp.rhs, lp.cost)
    if res.status not in ("optimal", "infeasible"):
        raise RuntimeError(f"exact simplex ended with status {res.status}")

    J_q = [[-res.y[k * N + i] for i in range(N)] for k in range(K + 1)]
    psi_q = [res.y[(K + 1) * N + i] for i in range(N)]
    psi = np.array([float(v) for v in psi_q])
    J = np.array([[float(v) for v in row] for row in J_q])
    if res.status == "infeasible":
        return OracleResult("infeasible", None, psi, J, None,
                            psi_exact=psi_q, J_exact=J_q, pivots=res.pivots)

    x = res.x
    eta_q = [[x[lp.eta_var(k, i)] for i in range(N)] for k in range(K)]
    rho_q = [[x[lp.rho_var(k, i)] for i in range(N)] for k in range(K + 1)]
    eta = np.array([[float(v) for v in row] for row in eta_q]).reshape(K, N)
    rho = np.array([[float(v) for v in row] for row in rho_q])
    r = _exact(g.ratio)
    killed = sum(r / 2 * (eta_q[k][0] + eta_q[k][N - 1]) for k in range(K))
    flow = FlowPair(g, eta, rho, float(killed))
    return OracleResult(
        "optimal", flow, psi, J, res.objective, eta_q, rho_q, psi_q, J_q, res.pivots
    )


def exact_residuals(lp: AssembledLP, result: OracleResult) -> dict[str, Fraction]:
    """Exact primal feasibility, dual feasibility and slackness of an optimum."""
    g = lp.grid
    K, N = g.horizon_steps, g.n_interior
    x = [ZERO] * lp.n_vars
    for k in range(K):
        for i in range(N):
            x[lp.eta_var(k, i)] = result.eta_exact[k][i]
    for k in range(K + 1):
        for i in range(N):
            x[lp.rho_var(k, i)] = result.rho_exact[k][i]
    y = [-result.J_exact[k][i] for k in range(K + 1) for i in range(N)] + list(result.psi_exact)
    primal = max(abs(sum(v * x[j] for j, v in row.items()) - b) for row, b in zip(lp.rows, lp.rhs))
    reduced = list(lp.cost)
    for r, row in enumerate(lp.rows):
        for j, v in row.items():
            reduced[j] -= y[r] * v
    dual = max([ZERO] + [-c for c in reduced])
    slack = sum(c * v for c, v in zip(reduced, x))
    return {"primal": primal, "dual": dual, "slackness": slack,
            "gap": sum(c * v for c, v in zip(lp.cost, x)) - sum(b * v for b, v in zip(lp.rhs, y))}
