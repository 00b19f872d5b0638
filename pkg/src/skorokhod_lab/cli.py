"""Command line entry point: presets, the solve pipeline, verification and artifacts.

Exit codes: 0 success, 1 configuration error, 2 infeasible order (witness
printed), 3 the run finished but a tolerance or check failed.
"""

from __future__ import annotations

import argparse
import copy
import json
import os
import sys
import time
from dataclasses import dataclass, field
from decimal import Decimal, localcontext
from fractions import Fraction
from pathlib import Path
from typing import Any

import numpy as np

from . import lagrangian as lagr
from .barrier import (
    NONE,
    Barrier,
    coincidence_mismatch,
    extract_barrier,
    flux_residual,
    hitting_simulate,
    structure_check,
)
from .hjb import (
    AscentOptions,
    InfeasibleOrderError,
    SolveResult,
    ascend,
    monotonicity_check,
    vi_residual,
)
from .lattice import Grid, GridError, build_grid
from .measures import (
    DiscreteMeasure,
    MeasureError,
    MeasureSpec,
    build_measure,
)
from .oracle import OracleSizeError, SIZE_GUARD, assemble_lp, solve_lp_exact
from .potential import potential_checks, potential_flow, quasivariational_residual
from .primal import BarrierError, admissibility_residual, heat_comparison, transport_from_barrier

OUT_ENV = "SKOROKHOD_OUT"
GOLDEN_DIR = Path(__file__).with_name("golden")
EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_FAILED = 0, 1, 2, 3


class ConfigError(ValueError):
    pass


_FIG1 = {
    "grid": {"x_min": 0, "x_max": 40, "n_interior": 39, "ratio": 1, "horizon_steps": 400},
    "mu": {"kind": "uniform_interval", "lo": 16, "hi": 23},
    "nu": {"kind": "sine_profile", "period": 13, "hi": 39},
    "solver": {"max_iter": 600, "tol": 1e-10},
    "simulation": {"n_paths": 100_000, "seed": 2024},
}

PRESETS: dict[str, dict[str, Any]] = {
    "figure1-increasing": {**_FIG1, "lagrangian": {"kind": "increasing", "a": 1, "b": 1}},
    # b = 1 would make late stopping free to double precision over t <= 400
    "figure1-decreasing": {**_FIG1, "lagrangian": {"kind": "decreasing", "a": 1, "b": 0.05}},
    # the oscillating dual stalls near 1e-8 relative gap, so this preset asks for 1e-7
    "figure2": {**_FIG1, "lagrangian": {"kind": "oscillating", "a": 1, "time_scale": 400},
                "solver": {"max_iter": 600, "tol": 1e-7}},
    "tiny3": {
        "grid": {"x_min": 0, "x_max": 4, "n_interior": 3, "ratio": 1, "horizon_steps": 2},
        "mu": {"kind": "point", "index": 2},
        "nu": {"kind": "table", "values": [0.5, 0.0, 0.5]},
        "lagrangian": {"kind": "increasing", "a": 1, "b": 1},
        "solver": {"tol": 1e-10},
        "simulation": {"n_paths": 100_000, "seed": 7},
        "golden": "tiny3",
    },
}


@dataclass
class RunConfig:
    name: str
    grid: dict[str, Any]
    mu: MeasureSpec
    nu: MeasureSpec
    lagrangian: dict[str, Any]
    solver: AscentOptions
    seed: int = 0
    n_paths: int = 100_000
    threads: int = 1
    output: str | None = None
    golden: str | None = None
    raw: dict[str, Any] = field(default_factory=dict, repr=False)

    @classmethod
    def from_dict(cls, d: dict[str, Any], name: str = "run") -> "RunConfig":
        d = copy.deepcopy(d)
        known = {"name", "grid", "mu", "nu", "lagrangian", "solver", "simulation",
                 "output", "golden"}
        if set(d) - known:
            raise ConfigError(f"unknown config keys {sorted(set(d) - known)}")
        for key in ("grid", "mu", "nu", "lagrangian"):
            if key not in d:
                raise ConfigError(f"config needs {key!r}")
        solver = dict(d.get("solver", {}))
        sim = dict(d.get("simulation", {}))
        # seed / n_paths are accepted in either block
        for k in ("seed", "n_paths", "threads"):
            if k in solver:
                sim.setdefault(k, solver.pop(k))
        try:
            opts = AscentOptions.from_dict(solver)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None
        return cls(
            name=str(d.get("name", name)),
            grid=dict(d["grid"]),
            mu=MeasureSpec.from_dict(d["mu"]),
            nu=MeasureSpec.from_dict(d["nu"]),
            lagrangian=dict(d["lagrangian"]),
            solver=opts,
            seed=int(sim.get("seed", 0)),
            n_paths=int(sim.get("n_paths", 100_000)),
            threads=int(sim.get("threads", 1)),
            output=d.get("output"),
            golden=d.get("golden"),
            raw=d,
        )

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        path = Path(path)
        try:
            d = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(d, name=path.stem)

    def build(self):
        """``(grid, mu, nu, L)``; raises ``ConfigError`` on invalid input."""
        try:
            grid = build_grid(self.grid)
            mu = build_measure(self.mu, grid)
            nu = build_measure(self.nu, grid)
            L = lagr.from_dict(self.lagrangian)
            L.validate(grid)
        except (GridError, MeasureError, lagr.LagrangianError, TypeError) as exc:
            raise ConfigError(str(exc)) from None
        return grid, mu, nu, L


def preset_config(name: str) -> RunConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return RunConfig.from_dict(PRESETS[name], name=name)


def refined(cfg: RunConfig, level: int = 1) -> RunConfig:
    """The same problem with ``dx / 2**level`` and ``dt / 4**level``."""
    d = copy.deepcopy(cfg.raw)
    g = d["grid"]
    for _ in range(level):
        g["n_interior"] = 2 * g["n_interior"] + 1
        g["horizon_steps"] = 4 * g.get("horizon_steps", g.get("K"))
        g.pop("K", None)
    d["name"] = f"{cfg.name}-refined{level}"
    return RunConfig.from_dict(d, name=d["name"])


# ---------------------------------------------------------------------------
# pipeline


@dataclass
class RunOutcome:
    cfg: RunConfig
    grid: Grid
    mu: DiscreteMeasure
    nu: DiscreteMeasure
    L: Any
    result: SolveResult
    barrier: Barrier | None
    transport: Any
    montecarlo: Any
    report: dict[str, Any]
    timings: dict[str, float]

    @property
    def converged(self) -> bool:
        return bool(self.report["solve"]["converged"])


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    if isinstance(v, (np.bool_, bool)):
        return bool(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if np.isfinite(v) else repr(v)
    return v


def solve_config(cfg: RunConfig, simulate: bool = True, psi0=None) -> RunOutcome:
    """Solve, extract the barrier, transport, simulate and collect diagnostics."""
    grid, mu, nu, L = cfg.build()
    timings: dict[str, float] = {}
    t = time.perf_counter()
    res = ascend(mu, nu, L, grid, cfg.solver, psi0=psi0)
    timings["solve"] = time.perf_counter() - t
    rep = res.report
    regime = L.regime
    eps = rep.diagnostics["eps"]
    tol = cfg.solver.tol

    report: dict[str, Any] = {
        "name": cfg.name,
        "config": cfg.raw,
        "grid": {"dx": grid.dx, "dt": grid.dt, "ratio": grid.ratio,
                 "n_interior": grid.n_interior, "horizon_steps": grid.horizon_steps},
        "solve": {k: v for k, v in rep.to_dict().items() if k != "timings"},
        "regime": regime,
        "vi": vi_residual(res.vp, L),
        "heat_comparison": heat_comparison(res.fp, mu, grid),
    }
    pf = potential_flow(res.fp, grid, mu, nu)
    pc = potential_checks(pf, res.fp)
    report["potential"] = pc

    barrier = transport = mc = None
    if regime is not None:
        report["monotonicity"] = monotonicity_check(res.vp.J, regime, 1e-12)
        try:
            barrier = extract_barrier(res.vp, regime, eps, flow=res.fp, mu=mu, nu=nu)
        except BarrierError as exc:
            report["barrier"] = {"error": str(exc)}
    else:
        K = grid.horizon_steps
        coin = (res.vp.J[:K] - res.vp.psi) <= eps
        report["coincidence"] = {
            "slots": int(coin.sum()),
            "note": "no barrier claim for a Lagrangian that is not monotone in time",
        }

    if barrier is not None and barrier.direction == "trivial":
        # every stopping rule is optimal: nothing to transport or simulate
        report["barrier"] = {
            "direction": "trivial",
            "coincidence_mismatch": coincidence_mismatch(barrier, res.vp),
            "note": "stationary cost: all admissible flows are optimal",
        }
    elif barrier is not None:
        transport = transport_from_barrier(barrier, mu, grid)
        adm = admissibility_residual(transport, mu, nu)
        report["barrier"] = {
            "direction": barrier.direction,
            "coincidence_mismatch": coincidence_mismatch(barrier, res.vp),
            "structure": structure_check(barrier, res.fp),
            "transport_target_residual": adm["target_res"],
            "transport_killed_mass": transport.killed_mass,
            "terminal_layer": barrier.has_tail,
        }
        try:
            fl = flux_residual(barrier, res.fp, nu, grid)
            report["flux"] = {"l1": fl.l1, "degenerate": fl.degenerate,
                              "mass_balance": fl.mass_balance}
        except BarrierError as exc:
            report["flux"] = {"error": str(exc)}
        if regime == "D1":
            qv = quasivariational_residual(pf, grid)
            report["quasivariational"] = {"l1": qv["l1"], "sup": qv["sup"]}
        if simulate and cfg.n_paths > 0:
            t = time.perf_counter()
            mc = hitting_simulate(barrier, mu, L, grid, cfg.n_paths, cfg.seed, res.vp,
                                  threads=cfg.threads)
            timings["simulate"] = time.perf_counter() - t
            z = (mc.empirical_cost - rep.primal_cost) / mc.stderr if mc.stderr > 0 else 0.0
            report["montecarlo"] = {
                "n_paths": mc.n_paths, "seed": cfg.seed,
                "tv_to_nu": mc.tv_to(nu),
                "empirical_cost": mc.empirical_cost, "stderr": mc.stderr,
                "cost_z": z, "killed": mc.killed, "horizon_stops": mc.horizon_stops,
                "martingale": mc.martingale,
            }
    report["passed"] = bool(rep.gap <= tol * max(1.0, rep.primal_cost)
                            and rep.target_residual <= max(tol, 1e-12))
    return RunOutcome(cfg, grid, mu, nu, L, res, barrier, transport, mc,
                      _jsonable(report), timings)


# ---------------------------------------------------------------------------
# artifacts


def _field_csv(path: Path, grid: Grid, values: np.ndarray, fmt=lambda v: f"{v:.17g}"):
    t = grid.times
    lines = ["k,t,i,x,value"]
    for k in range(values.shape[0]):
        for i in range(values.shape[1]):
            lines.append(f"{k},{t[k]:.17g},{i},{grid.x[i]:.17g},{fmt(values[k, i])}")
    path.write_text("\n".join(lines) + "\n")


def write_artifacts(out: RunOutcome, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    g = out.grid
    res = out.result
    _field_csv(out_dir / "eta.csv", g, res.fp.eta)
    _field_csv(out_dir / "rho.csv", g, res.fp.rho)
    _field_csv(out_dir / "J.csv", g, res.vp.J)
    _field_csv(out_dir / "U.csv", g, potential_flow(res.fp, g, out.mu, out.nu).U)
    _field_csv(out_dir / "psi.csv", g, res.vp.psi[None, :])
    if out.barrier is not None:
        b = out.barrier
        t0 = b.t0_mass if b.t0_mass is not None else np.zeros(g.n_interior)
        lines = ["node,x,s_index,t_s,t0_mass,edge_fraction,tail_index"]
        for i in range(g.n_interior):
            s = int(b.s[i])
            ts = "inf" if s == NONE else f"{g.dt * s:.17g}"
            tail = NONE if b.tail_s is None else int(b.tail_s[i])
            lines.append(f"{i},{g.x[i]:.17g},{s},{ts},{t0[i]:.17g},"
                         f"{b.edge_fraction[i]:.17g},{tail}")
        (out_dir / "barrier.csv").write_text("\n".join(lines) + "\n")
    if out.montecarlo is not None:
        mc = out.montecarlo
        lines = ["i,x,nu,empirical_nu"]
        for i in range(g.n_interior):
            lines.append(f"{i},{g.x[i]:.17g},{out.nu.weights[i]:.17g},"
                         f"{mc.empirical_nu.weights[i]:.17g}")
        (out_dir / "montecarlo.csv").write_text("\n".join(lines) + "\n")
    (out_dir / "report.json").write_text(json.dumps(out.report, indent=2, sort_keys=True) + "\n")
    # wall-clock numbers live apart so every other artifact is reproducible bit for bit
    (out_dir / "timings.json").write_text(json.dumps(out.timings, indent=2) + "\n")


def output_dir(cfg: RunConfig, override: str | None = None) -> Path:
    if override:
        return Path(override)
    if os.environ.get(OUT_ENV):
        return Path(os.environ[OUT_ENV]) / cfg.name
    return Path(cfg.output) if cfg.output else Path("out") / cfg.name


# ---------------------------------------------------------------------------
# exact rationals and golden files


def fixed_decimal(q: Fraction, places: int = 20) -> str:
    with localcontext() as ctx:
        ctx.prec = 60
        v = Decimal(q.numerator) / Decimal(q.denominator)
        return f"{v:.{places}f}"


def golden_tables(grid: Grid, oracle) -> dict[str, str]:
    """Render the oracle's exact solution as the text of the golden files."""
    def table(rows):
        lines = ["k,t,i,x,value"]
        for k, row in enumerate(rows):
            for i, q in enumerate(row):
                lines.append(f"{k},{fixed_decimal(Fraction(k) * Fraction(grid.dt))},{i},"
                             f"{fixed_decimal(Fraction(grid.x[i]))},{fixed_decimal(q)}")
        return "\n".join(lines) + "\n"

    return {
        "eta.csv": table(oracle.eta_exact),
        "rho.csv": table(oracle.rho_exact),
        "psi.csv": table([oracle.psi_exact]),
        "J.csv": table(oracle.J_exact),
        "cost.txt": fixed_decimal(oracle.optimal_cost) + "\n",
    }


def compare_golden(tables: dict[str, str], golden: Path) -> list[str]:
    """Names of golden files that are missing or differ."""
    bad = []
    for name, text in tables.items():
        p = golden / name
        if not p.exists() or p.read_text() != text:
            bad.append(name)
    return bad


# ---------------------------------------------------------------------------
# verify


def _lp_size(grid: Grid) -> int:
    return (2 * grid.horizon_steps + 1) * grid.n_interior


def _exact_probability(m: DiscreteMeasure) -> DiscreteMeasure:
    """``m`` with rational weights rescaled to total exactly 1 (a rounding-level change)."""
    q = m.exact_weights()
    total = sum(q)
    return m if total == 1 else DiscreteMeasure.from_fractions([v / total for v in q])


def verify_config(cfg: RunConfig, golden_root: Path | None = None) -> list[dict[str, Any]]:
    """Run the invariant suite; one row ``{check, passed, value, note}`` per check."""
    out = solve_config(cfg, simulate=True)
    rep = out.report
    s = rep["solve"]
    tol = cfg.solver.tol
    cost_scale = max(1.0, abs(s["primal_cost"]))
    rows: list[dict[str, Any]] = []

    def add(name, passed, value, note=""):
        rows.append({"check": name, "passed": bool(passed), "value": value, "note": note})

    adm = admissibility_residual(out.result.fp, out.mu, out.nu)
    add("admissibility", max(adm.values()) <= 1e-9, max(adm.values()))
    add("weak_duality", s["gap"] >= -tol * cost_scale, s["gap"])
    add("duality_gap", s["gap"] <= tol * cost_scale, s["gap"] / cost_scale, "relative")
    add("slackness", s["slackness_residual"] <= tol * cost_scale, s["slackness_residual"])
    add("vi_supersolution", rep["vi"]["supersolution_res"] <= 1e-9 * cost_scale,
        rep["vi"]["supersolution_res"])
    add("heat_comparison", rep["heat_comparison"]["holds"], rep["heat_comparison"]["max_excess"])
    add("potential", rep["potential"]["passed"], rep["potential"]["monotonicity_violation"])
    if "monotonicity" in rep:
        m = rep["monotonicity"]
        add("monotonicity", m["holds"], m["max_violation"], out.L.regime)
    if out.barrier is not None:
        b = rep["barrier"]
        add("barrier_coincidence", b["coincidence_mismatch"] == 0, b["coincidence_mismatch"])
    if out.transport is not None:
        add("barrier_embedding", b["transport_target_residual"] <= 10 * tol,
            b["transport_target_residual"])
        if "montecarlo" in rep:
            mc = rep["montecarlo"]
            add("montecarlo_tv", mc["tv_to_nu"] <= 0.02, mc["tv_to_nu"])
            add("montecarlo_cost", abs(mc["cost_z"]) <= 3.0, mc["cost_z"], "z-score")
            add("martingale", mc["martingale"].get("within_3sigma", False),
                mc["martingale"].get("deviation"))
    if out.barrier is None and "barrier" in rep:
        add("barrier_extraction", False, None, rep["barrier"].get("error", ""))

    n_vars = _lp_size(out.grid)
    if n_vars <= SIZE_GUARD:
        ex = solve_lp_exact(assemble_lp(out.grid, _exact_probability(out.mu),
                                        _exact_probability(out.nu), out.L))
        if ex.feasible:
            diff = abs(s["primal_cost"] - float(ex.optimal_cost))
            add("oracle_equivalence", diff <= 1e-8 * max(1.0, float(ex.optimal_cost)), diff)
        else:
            add("oracle_equivalence", False, None, "exact LP is infeasible for the rational data")
        if cfg.golden and ex.feasible:
            root = golden_root or GOLDEN_DIR
            bad = compare_golden(golden_tables(out.grid, ex), root / cfg.golden)
            add("golden", not bad, len(bad), ", ".join(bad))
    else:
        add("oracle_equivalence", True, None, f"skipped: {n_vars} variables > size guard")
    return rows


def _print_table(rows: list[dict[str, Any]]) -> None:
    w = max(len(r["check"]) for r in rows)
    for r in rows:
        v = r["value"]
        vs = f"{v:.3e}" if isinstance(v, float) else str(v)
        note = f"  ({r['note']})" if r["note"] else ""
        print(f"{r['check']:<{w}}  {'PASS' if r['passed'] else 'FAIL'}  {vs}{note}")


# ---------------------------------------------------------------------------
# entry point


def _infeasible(cfg: RunConfig, exc: InfeasibleOrderError) -> int:
    c = exc.check
    grid, mu, nu, L = cfg.build()
    print(f"infeasible: mu does not precede nu in subharmonic order "
          f"(violation {c.max_violation:.6g} at node {c.witness_index})", file=sys.stderr)
    print("order witness h = G(delta_w), superharmonic with <h, nu> > <h, mu>: "
          + " ".join(f"{v:.6g}" for v in c.witness(grid)), file=sys.stderr)
    try:
        if _lp_size(grid) <= SIZE_GUARD:
            lp = assemble_lp(grid, mu, nu, L)
            ex = solve_lp_exact(lp)
            if ex.status == "infeasible":
                print("LP Farkas certificate on target rows: "
                      + " ".join(str(q) for q in ex.psi_exact), file=sys.stderr)
    except (OracleSizeError, ValueError):
        pass
    return EXIT_INFEASIBLE


def _run(cfg: RunConfig, out_override: str | None, simulate: bool) -> int:
    try:
        out = solve_config(cfg, simulate=simulate)
    except InfeasibleOrderError as exc:
        return _infeasible(cfg, exc)
    d = output_dir(cfg, out_override)
    write_artifacts(out, d)
    s = out.report["solve"]
    print(f"{cfg.name}: cost {s['primal_cost']:.12g}  gap {s['gap']:.3e}  "
          f"target residual {s['target_residual']:.3e}  iterations {s['iterations']}")
    if "montecarlo" in out.report:
        mc = out.report["montecarlo"]
        print(f"monte carlo: TV {mc['tv_to_nu']:.4f}  cost {mc['empirical_cost']:.6g} "
              f"+- {mc['stderr']:.3g}")
    if "barrier" in out.report and "error" in out.report["barrier"]:
        print(f"barrier: {out.report['barrier']['error']}", file=sys.stderr)
    print(f"artifacts written to {d}")
    return EXIT_OK if out.report["passed"] else EXIT_FAILED


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="skorokhod-lab",
                                description="Cost-minimizing Skorokhod embedding on a lattice.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("config", help="JSON run configuration")
        sp.add_argument("--out", help=f"output directory (default: ${OUT_ENV}/<name> or out/<name>)")
        sp.add_argument("--threads", type=int, default=None, help="Monte Carlo worker threads")

    sp = sub.add_parser("solve", help="solve, extract the barrier and write artifacts")
    common(sp)
    sp.add_argument("--no-simulate", action="store_true")
    sp = sub.add_parser("verify", help="run the invariant suite and print a pass/fail table")
    sp.add_argument("config")
    sp.add_argument("--golden", help="root directory of golden files")
    sp.add_argument("--json", help="also write the table as JSON here")
    sp = sub.add_parser("simulate", help="solve, then simulate the hitting time")
    common(sp)
    sp.add_argument("--paths", type=int, default=None)
    sp.add_argument("--seed", type=int, default=None)
    sp = sub.add_parser("preset", help="run a bundled experiment")
    sp.add_argument("name", choices=sorted(PRESETS))
    sp.add_argument("--out")
    sp.add_argument("--threads", type=int, default=None)
    sp.add_argument("--write-config", metavar="PATH", help="only write the preset's config")
    sp.add_argument("--refine", type=int, default=0, help="halve dx this many times")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "preset":
            if args.write_config:
                Path(args.write_config).write_text(json.dumps(PRESETS[args.name], indent=2) + "\n")
                return EXIT_OK
            cfg = preset_config(args.name)
            if args.refine:
                cfg = refined(cfg, args.refine)
        else:
            cfg = RunConfig.load(args.config)
        if getattr(args, "threads", None):
            cfg.threads = args.threads
        if args.command == "verify":
            try:
                rows = verify_config(cfg, Path(args.golden) if args.golden else None)
            except InfeasibleOrderError as exc:
                return _infeasible(cfg, exc)
            _print_table(rows)
            if args.json:
                Path(args.json).write_text(json.dumps(_jsonable(rows), indent=2) + "\n")
            return EXIT_OK if all(r["passed"] for r in rows) else EXIT_FAILED
        if args.command == "simulate":
            if args.paths is not None:
                cfg.n_paths = args.paths
            if args.seed is not None:
                cfg.seed = args.seed
            return _run(cfg, args.out, simulate=True)
        if args.command == "solve":
            return _run(cfg, args.out, simulate=not args.no_simulate)
        return _run(cfg, args.out, simulate=True)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
