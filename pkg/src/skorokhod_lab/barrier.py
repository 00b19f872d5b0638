"""Free boundaries read off a dual solution, and checks that they embed ``nu``.

On a lattice an optimal rule generally has to randomize at one slice per node
(the masses are not in general reachable by full stops alone).  A barrier is
therefore a stopping index ``s(i)`` plus the fraction ``edge_fraction(i)`` of
the mass present at ``(s(i), i)`` that stops there.  Inside the barrier
everything stops; outside nothing does.

Backward barriers may also carry a terminal layer ``k >= tail_s(i)``: with a
forced stop at the horizon and a cost that keeps falling, the truncated
problem prefers to stop some late mass in the last slices rather than at the
horizon itself.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .hjb import ValuePair, monotonicity_check
from .lagrangian import LagrangianSpec
from .lattice import Grid
from .measures import DiscreteMeasure
from .primal import BarrierError, FlowPair

DIRECTIONS = ("forward", "backward", "trivial")
_KIND_DIRECTION = {"D1": "forward", "D2": "backward", "D3": "trivial"}
NONE = -1            # sentinel: never inside the barrier before the horizon
MASS_EPS = 1e-12


@dataclass(frozen=True)
class Barrier:
    direction: str
    s: np.ndarray                           # int, NONE where the node never stops early
    t0_mass: np.ndarray | None = None       # Rost atom at t = 0 (backward only)
    eps_used: float = 0.0
    edge_fraction: np.ndarray | None = None
    tail_s: np.ndarray | None = None        # backward only; NONE = no terminal layer
    tail_fraction: np.ndarray | None = None
    coincidence_s: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.direction not in DIRECTIONS:
            raise BarrierError(f"unknown barrier direction {self.direction!r}")
        s = np.asarray(self.s, dtype=int)
        object.__setattr__(self, "s", s)
        if self.edge_fraction is None:
            object.__setattr__(self, "edge_fraction", np.ones(s.size))
        if self.direction == "trivial" and np.any(s != 0):
            raise BarrierError("a trivial barrier has s = 0 everywhere")
        if self.tail_s is not None:
            if self.direction != "backward":
                raise BarrierError("only backward barriers carry a terminal layer")
            tail = np.asarray(self.tail_s, dtype=int)
            object.__setattr__(self, "tail_s", tail)
            if self.tail_fraction is None:
                object.__setattr__(self, "tail_fraction", np.ones(tail.size))
            if np.any((tail != NONE) & (tail <= s + 1)):
                raise BarrierError("terminal layer overlaps the barrier")

    @property
    def has_tail(self) -> bool:
        return self.tail_s is not None and bool(np.any(self.tail_s != NONE))

    def inside(self, grid: Grid) -> np.ndarray:
        """Boolean ``(K + 1, N)`` table of the barrier set (horizon row excluded)."""
        k = np.arange(grid.horizon_steps + 1)[:, None]
        s = self.s[None, :]
        finite = s != NONE
        if self.direction == "backward":
            out = finite & (k <= s)
            if self.tail_s is not None:
                u = self.tail_s[None, :]
                out |= (u != NONE) & (k >= u)
        else:
            out = finite & (k >= s)
        out[-1] = False
        return out

    def stop_fractions(self, grid: Grid) -> np.ndarray:
        """Fraction of present mass stopped at each ``(k, i)`` (1 on the horizon row)."""
        frac = self.inside(grid).astype(float)
        idx = np.flatnonzero((self.s != NONE) & (self.s < grid.horizon_steps))
        frac[self.s[idx], idx] = self.edge_fraction[idx]
        if self.tail_s is not None:
            idx = np.flatnonzero(self.tail_s != NONE)
            frac[self.tail_s[idx], idx] = self.tail_fraction[idx]
        frac[-1] = 1.0
        return frac

    def stop_probabilities(self, grid: Grid, mu: DiscreteMeasure) -> np.ndarray:
        """``stop_fractions`` with the t = 0 atom turned into a probability."""
        frac = self.stop_fractions(grid)
        if self.t0_mass is not None:
            sel = (self.s == 0) & (mu.weights > 0)
            frac[0, sel] = np.minimum(1.0, self.t0_mass[sel] / mu.weights[sel])
        return frac

    def times(self, grid: Grid) -> np.ndarray:
        t = grid.dt * self.s.astype(float)
        t[self.s == NONE] = np.inf
        return t


def _runs(coin: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per column: end of the initial run, start of the terminal run, and
    whether the column is exactly their union."""
    K, N = coin.shape
    head = np.full(N, NONE)
    tail = np.full(N, NONE)
    ok = np.ones(N, dtype=bool)
    for i in range(N):
        c = coin[:, i]
        if c.all():
            head[i] = K - 1
            continue
        if c[0]:
            head[i] = int(np.argmin(c)) - 1
        if c[-1]:
            tail[i] = K - int(np.argmin(c[::-1]))
        want = np.zeros(K, dtype=bool)
        want[: head[i] + 1] = True
        if tail[i] != NONE:
            want[tail[i]:] = True
        ok[i] = np.array_equal(c, want)
    return head, tail, ok


def extract_barrier(
    vp: ValuePair,
    kind: str,
    eps: float,
    flow: FlowPair | None = None,
    mu: DiscreteMeasure | None = None,
    nu: DiscreteMeasure | None = None,
    mono_tol: float | None = None,
) -> Barrier:
    """Barrier from the coincidence set ``{J_k - psi <= eps}`` (``k < K``).

    D1: ``s`` is the first coincident slice and the set must be its
    epigraph, which the monotonicity of ``J`` guarantees (checked with
    ``mono_tol``, default ``eps``).  D2: ``s`` closes the initial run of
    coincident slices and a terminal run, if any, becomes the terminal layer;
    the set must be exactly these two runs.  D3: ``s = 0``.

    When the optimal ``flow`` is given, ``s`` is moved to the slice where that
    flow actually starts (D1) or finishes (D2) stopping at the node and the
    edge fractions are read from it; ``transport_from_barrier`` then
    reproduces the flow.
    """
    if kind not in _KIND_DIRECTION:
        raise BarrierError(f"barriers exist for D1, D2, D3 only, got {kind!r}")
    grid = vp.grid
    K, N = grid.horizon_steps, grid.n_interior
    direction = _KIND_DIRECTION[kind]
    if direction == "trivial":
        return Barrier("trivial", np.zeros(N, dtype=int), None, eps,
                       coincidence_s=np.zeros(N, dtype=int))

    coin = (vp.J[:K] - vp.psi) <= eps
    tail = None
    if direction == "forward":
        tol = eps if mono_tol is None else mono_tol
        mono = monotonicity_check(vp.J, kind, tol)
        if not mono["holds"]:
            raise BarrierError(
                f"value function violates D1 monotonicity by {mono['max_violation']:.3e}"
            )
        s = np.full(N, NONE)
        has = coin.any(axis=0)
        s[has] = np.argmax(coin, axis=0)[has]
        if not np.array_equal(coin, Barrier("forward", s).inside(grid)[:K]):
            raise BarrierError("coincidence set is not an epigraph")
    else:
        s, tail, ok = _runs(coin)
        if not ok.all():
            bad = np.flatnonzero(~ok)
            raise BarrierError(
                f"coincidence set is not a backward barrier at nodes {bad.tolist()}"
            )
    s_dual = s.copy()
    theta = np.ones(N)
    tail_theta = np.ones(N)
    t0 = None

    if flow is not None:
        m = flow.masses()
        stops = flow.rho[:K] > MASS_EPS

        def frac(k, i):
            return min(1.0, flow.rho[k, i] / m[k, i]) if m[k, i] > MASS_EPS else 1.0

        for i in range(N):
            if s[i] != NONE:
                # the flow may run one partial slice past the dual edge
                if direction == "forward":
                    ks = np.flatnonzero(stops[:, i])
                    if ks.size:
                        s[i] = ks[0]
                else:
                    end = K if tail is None or tail[i] == NONE else tail[i] - 1
                    ks = np.flatnonzero(stops[:end, i])
                    if ks.size:
                        s[i] = ks[-1]
                theta[i] = frac(s[i], i)
            if tail is not None and tail[i] != NONE:
                ks = np.flatnonzero(stops[tail[i]:, i])
                if ks.size:
                    tail[i] = tail[i] + ks[0]
                    tail_theta[i] = frac(tail[i], i)
                else:
                    tail[i] = NONE
        if direction == "backward":
            t0 = np.where(s == 0, flow.rho[0], 0.0)
    elif direction == "backward":
        if mu is None or nu is None:
            raise BarrierError("a backward barrier needs mu and nu (or a flow) for its t0 atom")
        t0 = np.where(s == 0, np.minimum(mu.weights, nu.weights), 0.0)

    if tail is not None and not np.any(tail != NONE):
        tail = None
    return Barrier(direction, s, t0, eps, theta,
                   tail, tail_theta if tail is not None else None, s_dual)


def coincidence_mismatch(b: Barrier, vp: ValuePair, eps: float | None = None) -> int:
    """Slots where the dual coincidence set and the raw barrier set disagree."""
    eps = b.eps_used if eps is None else eps
    g = vp.grid
    K = g.horizon_steps
    coin = (vp.J[:K] - vp.psi) <= eps
    if b.direction == "backward":
        s, tail, _ = _runs(coin)
        raw = Barrier("backward", s, tail_s=tail)
    else:
        raw = Barrier(b.direction, b.coincidence_s if b.coincidence_s is not None else b.s)
    want = raw.inside(g)[:K]
    if b.direction == "backward" and b.coincidence_s is not None:
        want = Barrier("backward", b.coincidence_s, tail_s=raw.tail_s).inside(g)[:K]
    return int(np.sum(coin != want))


def structure_check(b: Barrier, flow: FlowPair, tol: float = 1e-10) -> dict[str, float]:
    """How far the flow's stopping fractions are from ``b.stop_fractions``."""
    g = flow.grid
    m = flow.masses()
    want = b.stop_fractions(g)
    present = m > MASS_EPS
    got = np.where(present, flow.rho / np.where(present, m, 1.0), 0.0)
    err = np.abs(got - want)[present]
    if b.direction == "backward" and b.t0_mass is not None:
        sel = (b.s == 0) & present[0]
        row = np.abs(flow.rho[0] - np.minimum(m[0], b.t0_mass))
        err = np.concatenate([err, row[sel]])
    worst = float(err.max(initial=0.0))
    return {"max_fraction_error": worst, "conforming": worst <= tol}


# ---------------------------------------------------------------------------
# Monte Carlo

CHUNK = 8192


@dataclass(frozen=True)
class MonteCarloResult:
    empirical_nu: DiscreteMeasure
    empirical_cost: float
    stderr: float
    n_paths: int
    killed: int
    horizon_stops: int
    martingale: dict[str, Any]

    def tv_to(self, nu: DiscreteMeasure) -> float:
        return 0.5 * float(np.abs(self.empirical_nu.weights - nu.weights).sum())


def _simulate_chunk(
    seed: int, index: int, n: int, grid: Grid, mu_cdf: np.ndarray,
    stop_p: np.ndarray, cost: np.ndarray, psi: np.ndarray,
):
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, index])))
    K, N = grid.horizon_steps, grid.n_interior
    half = 0.5 * grid.ratio
    x = np.minimum(np.searchsorted(mu_cdf, rng.random(n), side="right"), N - 1)
    alive = np.ones(n, dtype=bool)
    acc = np.zeros(n)
    end = np.full(n, -1)            # -1: killed
    at_horizon = 0
    for k in range(K + 1):
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            break
        u = rng.random((2, n))
        xi = x[idx]
        if k == K:
            stop = np.ones(idx.size, dtype=bool)
            at_horizon = idx.size
        else:
            stop = u[0, idx] < stop_p[k, xi]
        st = idx[stop]
        end[st] = x[st]
        alive[st] = False
        go = idx[~stop]
        if k == K or go.size == 0:
            continue
        acc[go] += cost[k, x[go]]
        v = u[1, go]
        step = np.where(v < half, -1, np.where(v >= 1.0 - half, 1, 0))
        x[go] += step
        out = (x[go] < 0) | (x[go] >= N)
        alive[go[out]] = False
    counts = np.bincount(end[end >= 0], minlength=N)
    g = np.where(end >= 0, psi[np.clip(end, 0, N - 1)], 0.0) - acc
    return counts, int(np.sum(end < 0)), acc.sum(), (acc**2).sum(), g.sum(), (g**2).sum(), at_horizon


def hitting_simulate(
    b: Barrier,
    mu: DiscreteMeasure,
    L: LagrangianSpec | np.ndarray,
    grid: Grid,
    n_paths: int,
    seed: int,
    vp: ValuePair | None = None,
    threads: int = 1,
) -> MonteCarloResult:
    """Walk ``n_paths`` lattice paths from ``mu`` until they enter the barrier.

    Paths are cut into fixed chunks of ``CHUNK``, each with its own Philox
    stream keyed by ``(seed, chunk)``; chunk results are merged in order, so
    the output does not depend on ``threads``.
    """
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    if b.s.shape != (grid.n_interior,):
        raise BarrierError("barrier does not match the grid")
    table = L.table(grid) if isinstance(L, LagrangianSpec) else np.asarray(L, dtype=float)
    cost = grid.dt * table
    stop_p = b.stop_probabilities(grid, mu)
    cdf = np.cumsum(mu.weights) / mu.mass
    cdf[-1] = 1.0
    psi = np.zeros(grid.n_interior) if vp is None else vp.psi
    sizes = [CHUNK] * (n_paths // CHUNK) + ([n_paths % CHUNK] if n_paths % CHUNK else [])

    def job(i):
        return _simulate_chunk(seed, i, sizes[i], grid, cdf, stop_p, cost, psi)

    with ThreadPoolExecutor(max_workers=max(1, int(threads))) as ex:
        parts = list(ex.map(job, range(len(sizes))))

    counts = np.zeros(grid.n_interior, dtype=np.int64)
    killed = horizon = 0
    s1 = s2 = g1 = g2 = 0.0
    for c, kl, a1, a2, b1, b2, hz in parts:        # fixed merge order
        counts += c
        killed += kl
        horizon += hz
        s1 += a1
        s2 += a2
        g1 += b1
        g2 += b2
    n = float(n_paths)
    mean = s1 / n
    var = max(0.0, s2 / n - mean**2)
    stderr = float(np.sqrt(var / n))
    gm = g1 / n
    gse = float(np.sqrt(max(0.0, g2 / n - gm**2) / n))
    mart: dict[str, Any] = {"mean_G": gm, "stderr_G": gse}
    if vp is not None:
        ref = float(vp.J[0] @ mu.weights)
        mart.update(reference=ref, deviation=gm - ref,
                    within_3sigma=abs(gm - ref) <= 3 * gse + 1e-12)
    return MonteCarloResult(
        DiscreteMeasure(counts / n), mean, stderr, n_paths, killed, horizon, mart
    )


# ---------------------------------------------------------------------------
# flux diagnostic


@dataclass(frozen=True)
class FluxResidual:
    residual: np.ndarray         # density units, NaN where undefined
    degenerate: bool
    l1: float
    mass_balance: float | None = None


def flux_residual(b: Barrier, fp: FlowPair, nu: DiscreteMeasure, grid: Grid) -> FluxResidual:
    """Discrete version of ``nu = +-1/2 s' eta'`` along the free boundary.

    ``eta`` is averaged over two consecutive slices, which removes the
    even/odd oscillation of the walk, and differenced one-sidedly toward the
    continuation region.  Sign: ``-`` for forward barriers, ``+`` for backward.
    """
    N, K = grid.n_interior, grid.horizon_steps
    dx = grid.dx
    finite = (b.s != NONE) & (b.s < K)
    supp = nu.weights > 0
    if b.direction == "trivial" or (finite & supp).sum() == 0:
        return FluxResidual(np.full(N, np.nan), True, float("nan"), None)
    if np.any(supp & ~finite):
        raise BarrierError("barrier is not finite on the support of nu")

    s_sup = b.s[supp]
    if np.all(s_sup == s_sup[0]):
        k = int(s_sup[0])
        m = fp.masses()
        bal = float(np.abs(fp.rho[k] - m[k]).max())
        return FluxResidual(np.full(N, np.nan), True, float("nan"), bal)

    ebar = np.zeros((K, N))
    ebar[:-1] = 0.5 * (fp.eta[:-1] + fp.eta[1:])
    ebar[-1] = fp.eta[-1]
    dens = ebar / dx
    t = b.times(grid)
    res = np.full(N, np.nan)
    sign = -1.0 if b.direction == "forward" else 1.0
    for i in range(1, N - 1):
        if not (finite[i - 1] and finite[i] and finite[i + 1]):
            continue
        ds = (t[i + 1] - t[i - 1]) / (2 * dx)
        k = b.s[i]
        # continuation side: later barrier time (forward) or earlier (backward)
        later = b.s[i + 1] > b.s[i - 1]
        right = later if b.direction == "forward" else not later
        if b.s[i + 1] == b.s[i - 1]:
            deta = 0.5 * (dens[k, i + 1] - dens[k, i - 1]) / dx
        elif right:
            deta = (dens[k, i + 1] - dens[k, i]) / dx
        else:
            deta = (dens[k, i] - dens[k, i - 1]) / dx
        res[i] = nu.weights[i] / dx + sign * 0.5 * ds * deta
    ok = ~np.isnan(res)
    return FluxResidual(res, False, float(np.sum(np.abs(res[ok])) * dx))
