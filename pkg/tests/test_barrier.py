import numpy as np
import pytest

from skorokhod_lab import lagrangian as lagr
from skorokhod_lab.barrier import (
    NONE,
    Barrier,
    BarrierError,
    coincidence_mismatch,
    extract_barrier,
    flux_residual,
    hitting_simulate,
    structure_check,
)
from skorokhod_lab.hjb import ascend, solve_value
from skorokhod_lab.lattice import build_grid
from skorokhod_lab.measures import DiscreteMeasure
from skorokhod_lab.primal import flow_from_fractions, primal_cost, transport_from_barrier


def _solve(grid, mu, nu, L, kind):
    r = ascend(mu, nu, L, grid)
    b = extract_barrier(r.vp, kind, r.report.diagnostics["eps"], flow=r.fp, mu=mu, nu=nu)
    return r, b


@pytest.fixture(scope="module")
def lobe():
    g = build_grid(x_min=0, x_max=12, n_interior=11, ratio=1, horizon_steps=40)
    mu = DiscreteMeasure(np.eye(11)[4] * 0.25 + np.eye(11)[5] * 0.5 + np.eye(11)[6] * 0.25)
    w = np.abs(np.sin(np.pi * g.x / 12))
    return g, mu, DiscreteMeasure(w / w.sum())


def test_barrier_validation():
    with pytest.raises(BarrierError):
        Barrier("sideways", np.zeros(3))
    with pytest.raises(BarrierError):
        Barrier("trivial", np.ones(3))
    with pytest.raises(BarrierError):
        Barrier("forward", np.zeros(3), tail_s=np.full(3, NONE))
    with pytest.raises(BarrierError):
        Barrier("backward", np.array([2, 0, 0]), tail_s=np.array([3, NONE, NONE]))


def test_inside_and_fractions():
    g = build_grid(x_min=0, x_max=4, n_interior=3, ratio=1, horizon_steps=4)
    fwd = Barrier("forward", np.array([1, NONE, 3]), edge_fraction=np.array([0.5, 1, 1]))
    np.testing.assert_array_equal(fwd.inside(g)[:, 0], [0, 1, 1, 1, 0])
    assert not fwd.inside(g)[:, 1].any()
    fr = fwd.stop_fractions(g)
    np.testing.assert_array_equal(fr[:, 0], [0, 0.5, 1, 1, 1])
    np.testing.assert_array_equal(fr[:, 2], [0, 0, 0, 1, 1])
    bwd = Barrier("backward", np.array([1, NONE, 0]), tail_s=np.array([3, NONE, NONE]))
    np.testing.assert_array_equal(bwd.inside(g)[:, 0], [1, 1, 0, 1, 0])
    np.testing.assert_array_equal(bwd.times(g), [1, np.inf, 0])


def test_tiny_forward_barrier(tiny3):
    grid, mu, nu, L = tiny3
    r, b = _solve(grid, mu, nu, L, "D1")
    assert b.direction == "forward"
    np.testing.assert_array_equal(b.s, [1, NONE, 1])
    assert coincidence_mismatch(b, r.vp) == 0
    assert structure_check(b, r.fp)["conforming"]
    np.testing.assert_array_equal(transport_from_barrier(b, mu, grid).stopped, nu.weights)
    fl = flux_residual(b, r.fp, nu, grid)
    assert fl.degenerate and fl.mass_balance == 0


def test_forward_barrier_on_a_lobe(lobe):
    g, mu, nu = lobe
    r, b = _solve(g, mu, nu, lagr.increasing(1.0, 1.0), "D1")
    tr = transport_from_barrier(b, mu, g)
    assert np.abs(tr.stopped - nu.weights).max() <= 1e-9
    assert primal_cost(tr, lagr.increasing(1.0, 1.0)) == pytest.approx(r.report.primal_cost, rel=1e-9)
    assert coincidence_mismatch(b, r.vp) == 0
    # the instance is mirror symmetric, so is the barrier
    np.testing.assert_array_equal(b.s, b.s[::-1])
    assert np.all(b.s != NONE)
    fl = flux_residual(b, r.fp, nu, g)
    assert not fl.degenerate and np.isfinite(fl.l1)


def test_backward_barrier_on_a_lobe(lobe):
    g, mu, nu = lobe
    r, b = _solve(g, mu, nu, lagr.decreasing(1.0, 0.5), "D2")
    assert b.direction == "backward"
    assert b.t0_mass is not None and np.all(b.t0_mass <= mu.weights + 1e-15)
    tr = transport_from_barrier(b, mu, g)
    assert np.abs(tr.stopped - nu.weights).max() <= 1e-9
    assert structure_check(b, r.fp)["conforming"]
    assert coincidence_mismatch(b, r.vp) == 0


def test_stationary_barrier_is_trivial(lobe):
    g, mu, nu = lobe
    r, b = _solve(g, mu, nu, lagr.stationary(1.0), "D3")
    assert b.direction == "trivial" and np.all(b.s == 0)
    assert flux_residual(b, r.fp, nu, g).degenerate


def test_extract_rejects_other_kinds(tiny3):
    grid, mu, nu, L = tiny3
    vp = solve_value(np.zeros(3), L, grid)
    with pytest.raises(BarrierError):
        extract_barrier(vp, "oscillating", 0.0)
    with pytest.raises(BarrierError):
        extract_barrier(vp, "D2", 0.0)           # needs mu and nu for the atom


def test_non_epigraph_is_rejected():
    g = build_grid(x_min=0, x_max=4, n_interior=3, ratio=1, horizon_steps=3)
    # strongly decreasing cost makes late stopping better: not a D1 set
    vp = solve_value(np.array([0.0, -1.0, 0.0]), lagr.decreasing(5.0, 2.0), g)
    with pytest.raises(BarrierError):
        extract_barrier(vp, "D1", 1e-12)


def test_flux_requires_finite_barrier_on_support(tiny3):
    grid, mu, nu, _ = tiny3
    b = Barrier("forward", np.array([1, 1, NONE]))
    fp = flow_from_fractions(grid, mu.weights, b.stop_fractions(grid))
    with pytest.raises(BarrierError):
        flux_residual(b, fp, nu, grid)


def test_monte_carlo_tiny(tiny3):
    grid, mu, nu, L = tiny3
    r, b = _solve(grid, mu, nu, L, "D1")
    n = 100_000
    mc = hitting_simulate(b, mu, L, grid, n, seed=7, vp=r.vp)
    assert mc.tv_to(nu) <= 3 * np.sqrt(grid.n_interior / n)
    # every path pays exactly one step of cost 1
    assert mc.empirical_cost == 1.0 and mc.stderr == 0.0
    assert mc.killed == 0 and mc.martingale["within_3sigma"]


def test_monte_carlo_is_thread_independent(lobe):
    g, mu, nu = lobe
    L = lagr.increasing(1.0, 1.0)
    r, b = _solve(g, mu, nu, L, "D1")
    runs = [hitting_simulate(b, mu, L, g, 20_000, seed=3, vp=r.vp, threads=t) for t in (1, 2, 8)]
    for other in runs[1:]:
        np.testing.assert_array_equal(other.empirical_nu.weights, runs[0].empirical_nu.weights)
        assert other.empirical_cost == runs[0].empirical_cost
    other_seed = hitting_simulate(b, mu, L, g, 20_000, seed=4, vp=r.vp)
    assert not np.array_equal(other_seed.empirical_nu.weights, runs[0].empirical_nu.weights)
    mc = runs[0]
    assert abs(mc.empirical_cost - r.report.primal_cost) <= 3 * mc.stderr
    assert mc.tv_to(nu) <= 0.02


def test_monte_carlo_rejects_empty(tiny3):
    grid, mu, nu, L = tiny3
    with pytest.raises(ValueError):
        hitting_simulate(Barrier("trivial", np.zeros(3)), mu, L, grid, 0, seed=1)
