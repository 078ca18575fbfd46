"""Configuration-driven experiment runner.

    ppide <subcommand> --config cfg.json [--out dir] [--seed n]

Each run writes ``<subcommand>.json`` (pretty-printed, sorted keys, with the
config hash and seed) and, where a table makes sense, ``<subcommand>.csv``
with a header row. Nothing time- or host-dependent enters the outputs, so
re-running a config with the same seed reproduces them byte for byte.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import sys
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import catalog
from .bsde import (Basis, ControlPair, IbpSpec, gamma_expectation, ibp_check, nonlinear_expectation, solve_bsde,
                   solve_rbsde)
from .errors import InputError, PpideError
from .operators import Driver, ito_residual
from .paths import PathHistory, TimePoint
from .pathfrozen import (CylinderGrid, PsiConfig, ThetaConfig, build_psi, grid_error_estimate,
                         partial_comparison_check)
from .simulate import Characteristics, mean_se, simulate
from .skorohod import d_j1, d_m1, d_m2, d_p, d_u

SCHEMA = 1

Table = tuple[list[str], list[list[Any]]]


class Context:
    """Parsed config with defaults and the built-in objects it names."""

    def __init__(self, config: dict, seed: int | None):
        if int(config.get("schema", SCHEMA)) != SCHEMA:
            raise InputError(f"unsupported config schema {config.get('schema')!r}; expected {SCHEMA}")
        self.config = config
        self.seed = int(config.get("seed", 0) if seed is None else seed)
        self.T = float(config.get("horizon", 1.0))
        self.s = float(config.get("t", 0.0))
        self.N = int(config.get("N", 10_000))
        self.h = float(config.get("h", (self.T - self.s) / 256))
        self.workers = int(config.get("workers", 1))

    def char(self) -> Characteristics:
        return catalog.characteristics(self.config.get("characteristics", {}))

    def driver(self, char: Characteristics) -> Driver:
        return catalog.driver(self.config.get("driver"), char)

    def xi(self):
        return catalog.xi(self.config.get("xi", {"kind": "terminal-g"}))

    def path(self, key: str = "path", dim: int = 1):
        return catalog.path(self.config.get(key), self.T, dim)

    def basis(self) -> Basis:
        b = self.config.get("basis", {})
        return Basis(int(b.get("degree", 2)), tuple(b.get("features", ("value",))),
                     rank_policy=b.get("rank_policy", "raise"))

    def ensemble(self, char: Characteristics, noise: str = "gaussian"):
        return simulate(char, self.s, self.path(dim=char.dim), self.N, self.h, self.seed, noise=noise,
                        workers=self.workers)


EXECUTION_KEYS = ("workers",)


def config_hash(config: dict) -> str:
    """SHA-256 of the canonical JSON config; execution settings such as ``workers`` do not enter."""
    model = {k: v for k, v in config.items() if k not in EXECUTION_KEYS}
    return hashlib.sha256(json.dumps(model, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def _num(x) -> Any:
    if isinstance(x, (np.floating, float)):
        return float(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, np.ndarray):
        return [_num(v) for v in x.tolist()]
    if isinstance(x, dict):
        return {str(k): _num(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_num(v) for v in x]
    return x


def csv_text(table: Table) -> str:
    header, rows = table
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def _solution_table(sol) -> Table:
    rows = []
    M = len(sol.times) - 1
    for k, t in enumerate(sol.times):
        y, se = mean_se(sol.Y[:, k])
        z = float(sol.Z[:, k].mean()) if k < M else 0.0
        p = float(sol.p[:, k].mean()) if k < M else 0.0
        rows.append([float(t), y, se, z, p])
    return ["t", "mean_Y", "se_Y", "mean_Z", "mean_p"], rows


def _summary(diag: dict) -> dict:
    """Scalars as they are, per-step arrays by their maximum."""
    return {k: (float(np.max(v)) if np.ndim(v) else v) for k, v in diag.items() if np.size(v)}


# ---------------------------------------------------------------------------
# experiments


def run_simulate(ctx: Context) -> tuple[dict, Table | None]:
    char = ctx.char()
    ens = ctx.ensemble(char, ctx.config.get("noise", "gaussian"))
    XT = ens.X[:, -1, :]
    keep = min(ens.n_paths, int(ctx.config.get("csv_paths", 10)))
    rows = [[i, float(t)] + [float(v) for v in ens.X[i, k]] for i in range(keep) for k, t in enumerate(ens.times)]
    header = ["path", "t"] + [f"x_{j + 1}" for j in range(ens.dim)]
    report = {"mean_XT": XT.mean(axis=0), "var_XT": XT.var(axis=0, ddof=1), "n_jumps": int(ens.jump_path.size),
              "n_steps": ens.n_steps}
    return report, (header, rows)


def _fhat(driver: Driver, dim: int = 1) -> Callable | None:
    if driver.is_zero:
        return None
    dummy = PathHistory(np.array([0.0]), np.zeros((1, 1, dim)), np.inf)

    def fhat(t, y, z, p):
        return driver(t, dummy.select(np.zeros(len(y), dtype=int)), y, z, p)

    return fhat


def pide_oracle(char: Characteristics, driver: Driver, g: Callable, t0: float, T: float, x0: float, probes: list,
                radius: float = 4.0, n_inner: int = 40, n_t: int = 128) -> dict:
    """Markovian value ``u(t, x)`` from the frozen PIDE on a ball wide enough that exit is negligible."""
    lo, hi = char.jump_norm_range()
    outer = radius + (hi or 0.0) + radius / n_inner
    grid = CylinderGrid(x0, radius, outer, t0, T, n_inner, n_t)
    ts = np.array([p[0] for p in probes], dtype=float)
    xs = np.array([p[1] for p in probes], dtype=float)
    vals, err = grid_error_estimate(lambda t, x: g(np.asarray(x, dtype=float)), _fhat(driver), char, grid, ts, xs,
                                    eta=driver.eta)
    return {"values": vals, "grid_error": err, "dx": grid.dx, "dt": grid.dt}


def run_solve_bsde(ctx: Context) -> tuple[dict, Table | None]:
    char = ctx.char()
    sol = solve_bsde(ctx.ensemble(char), ctx.xi(), ctx.driver(char), ctx.basis())
    return {"value": sol.value, "se": sol.se, "diagnostics": _summary(sol.diagnostics)}, _solution_table(sol)


def run_u0(ctx: Context) -> tuple[dict, Table | None]:
    char = ctx.char()
    drv = ctx.driver(char)
    ens = ctx.ensemble(char)
    sol = solve_bsde(ens, ctx.xi(), drv, ctx.basis())
    report: dict = {"value": sol.value, "se": sol.se}
    spec = ctx.config.get("xi", {})
    if ctx.config.get("oracle") and spec.get("kind") == "terminal-g" and char.dim == 1:
        x0 = float(ctx.path().value(ctx.s)[0])
        radius = float(ctx.config.get("oracle_radius", 4.0))
        orc = pide_oracle(char, drv, catalog.terminal_g(spec), ctx.s, ctx.T, x0, [(ctx.s, x0)], radius,
                          int(ctx.config.get("oracle_n_inner", 40)), int(ctx.config.get("oracle_n_t", 128)))
        exited = float(np.mean(np.abs(ens.X[:, :, 0] - x0).max(axis=1) >= radius))
        diff = sol.value - float(orc["values"][0])
        tol = max(2 * float(orc["grid_error"][0]), 3 * sol.se)
        report["oracle"] = {"pide_value": orc["values"][0], "grid_error": orc["grid_error"][0],
                            "difference": diff, "tolerance": tol, "exit_fraction": exited,
                            "ok": bool(abs(diff) <= tol and exited == 0.0)}
    return report, _solution_table(sol)


def _controls(ctx: Context, L: float) -> list[ControlPair]:
    out = []
    for i, c in enumerate(ctx.config.get("controls", [])):
        out.append(ControlPair.constant(c.get("H", 0.0), c.get("W", 0.0), L, name=c.get("name", f"c{i}")))
    return out


def run_gexpect(ctx: Context) -> tuple[dict, Table | None]:
    char = ctx.char()
    L = float(ctx.config.get("L", 0.0))
    omega = ctx.path(dim=char.dim)
    tau = catalog.stopping_rule(ctx.config.get("tau"))
    xi = ctx.xi()
    ens = ctx.ensemble(char)
    up = nonlinear_expectation(char, L, ctx.s, omega, tau, xi, True, ensemble=ens, basis=ctx.basis())
    lo = nonlinear_expectation(char, L, ctx.s, omega, tau, xi, False, ensemble=ens, basis=ctx.basis())
    rows = []
    for pair in _controls(ctx, L):
        v, se = gamma_expectation(char, pair, ctx.s, omega, xi, ensemble=ens)
        rows.append([pair.name, v, se, bool(v <= up[0] + 3 * np.hypot(se, up[1]))])
    report = {"upper": up[0], "upper_se": up[1], "lower": lo[0], "lower_se": lo[1], "L": L,
              "controls_dominated": all(r[3] for r in rows)}
    return report, (["control", "value", "se", "dominated"], rows) if rows else None


def run_snell(ctx: Context) -> tuple[dict, Table | None]:
    char = ctx.char()
    ens = ctx.ensemble(char, ctx.config.get("noise", "gaussian"))
    sol = solve_rbsde(ens, catalog.barrier(ctx.config.get("barrier", {"g": "put", "strike": 0.0})),
                      float(ctx.config.get("L", 0.0)), catalog.stopping_rule(ctx.config.get("tau")), ctx.basis())
    rows = []
    for k, t in enumerate(sol.times):
        dk = float(sol.dK[:, k].mean()) if k < sol.dK.shape[1] else 0.0
        rows.append([float(t), float(sol.Y[:, k].mean()), float(sol.barrier[:, k].mean()), dk,
                     float(np.mean(sol.tau == k))])
    report = {"value": sol.value, "se": sol.se, "realized": sol.realized, "diagnostics": _summary(sol.diagnostics),
              "mean_tau": float(sol.times[sol.tau].mean())}
    return report, (["t", "mean_Y", "mean_R", "mean_dK", "stop_fraction"], rows)


def run_path_frozen(ctx: Context) -> tuple[dict, Table | None]:
    char = ctx.char()
    drv = ctx.driver(char)
    xi = ctx.xi()
    omega = ctx.path(dim=char.dim)
    th = ctx.config.get("theta", {})
    tcfg = ThetaConfig(int(th.get("N", 2000)), float(th.get("h", 1 / 64)), ctx.seed)
    ps = ctx.config.get("psi", {})
    cfg = PsiConfig(tcfg, tuple(ps.get("degrees", (2, 4))), int(ps.get("max_space_degree", 32)),
                    int(ps.get("audit", 2)), int(ps.get("n_inner", 10)), int(ps.get("n_t", 64)), ctx.workers)
    eps = float(ctx.config.get("eps", 0.2))
    pf, audit = build_psi(char, drv, xi, TimePoint(ctx.s, omega), eps, int(ctx.config.get("depth", 3)), cfg)
    if ctx.config.get("compare", True):
        def u0_at(t, w):
            sol = solve_bsde(simulate(char, t, w, ctx.N, ctx.h, ctx.seed, workers=ctx.workers), xi, drv, ctx.basis())
            return sol.value, sol.se

        rep = partial_comparison_check(u0_at, pf, [(ctx.s, omega)])
        audit["partial_comparison"] = rep
    return audit, None


def run_metric(ctx: Context) -> tuple[dict, Table | None]:
    a, b = ctx.path("a"), ctx.path("b")
    n = int(ctx.config.get("n_params", 64))
    out = {"d_u": d_u(a, b), "d_j1": d_j1(a, b), "d_m1": d_m1(a, b, n), "d_m2": d_m2(a, b), "d_p": d_p(a, b, n)}
    return out, (["metric", "value"], [[k, v] for k, v in out.items()])


def run_stability(ctx: Context) -> tuple[dict, Table | None]:
    """Sup over probe starts of ``|u0(perturbed) - u0(base)|`` with common random numbers."""
    char = ctx.char()
    drv = ctx.driver(char)
    xi = ctx.xi()
    sweep = [float(e) for e in ctx.config.get("sweep", [0.1, 0.05, 0.025])]
    probes = ctx.config.get("probes", [{"t": ctx.s, "x": 0.0}])
    basis = ctx.basis()

    def u0s(c):
        vals = []
        for pr in probes:
            w = catalog.path({"constant": pr["x"]}, ctx.T, c.dim)
            ens = simulate(c, float(pr["t"]), w, ctx.N, ctx.h, ctx.seed, workers=ctx.workers)
            vals.append(solve_bsde(ens, xi, drv, basis).value)
        return np.array(vals)

    base = u0s(char)
    rows = [[e, float(np.max(np.abs(u0s(char.perturbed(e)) - base)))] for e in sweep]
    diffs = [r[1] for r in rows]
    order = sorted(range(len(sweep)), key=lambda i: -sweep[i])
    mono = all(diffs[order[i]] > diffs[order[i + 1]] for i in range(len(order) - 1))
    return {"sweep": sweep, "sup_differences": diffs, "monotone": mono}, (["eps", "sup_difference"], rows)


def run_residual(ctx: Context) -> tuple[dict, Table | None]:
    char = ctx.char()
    jet = catalog.jet(ctx.config.get("jet", {"kind": "square"}), char.dim)
    stop = ctx.config.get("stop")
    v, se = ito_residual(jet, char, ctx.s, ctx.path(dim=char.dim), None if stop is None else float(stop), ctx.N,
                         ctx.h, ctx.seed)
    return {"residual": v, "se": se, "within_3se": bool(abs(v) <= 3 * se + ctx.h)}, None


def run_ibp(ctx: Context) -> tuple[dict, Table | None]:
    char = ctx.char()
    spec = IbpSpec(**{k: float(v) for k, v in ctx.config.get("integrands", {}).items()})
    out = ibp_check(char, spec, ctx.s, ctx.path(dim=char.dim), ctx.N, ctx.h, ctx.seed)
    out["within_3se"] = bool(abs(out["lhs"] - out["rhs"]) <= 3 * out["se"] + ctx.h)
    return out, None


EXPERIMENTS: dict[str, Callable[[Context], tuple[dict, Table | None]]] = {
    "simulate": run_simulate,
    "u0": run_u0,
    "gexpect": run_gexpect,
    "snell": run_snell,
    "path-frozen": run_path_frozen,
    "metric": run_metric,
    "stability": run_stability,
    "residual": run_residual,
    "ibp-check": run_ibp,
    "solve-bsde": run_solve_bsde,
}


def run(kind: str, config: dict, out: Path | None = None, seed: int | None = None) -> tuple[str, str | None]:
    """Run one experiment; return the JSON report text and CSV text, writing both under ``out`` if given."""
    if kind not in EXPERIMENTS:
        raise InputError(f"unknown experiment {kind!r}")
    ctx = Context(config, seed)
    report, table = EXPERIMENTS[kind](ctx)
    report = _num(dict(report, experiment=kind, schema=SCHEMA, seed=ctx.seed, config_hash=config_hash(config)))
    text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    body = csv_text(table) if table is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{kind}.json").write_text(text)
        if body is not None:
            (out / f"{kind}.csv").write_text(body)
    return text, body


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="ppide", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, type=Path, help="JSON experiment config")
        p.add_argument("--out", type=Path, help="directory for report files")
        p.add_argument("--seed", type=int, help="override the config seed")
    args = parser.parse_args(argv)
    try:
        config = json.loads(args.config.read_text())
        text, _ = run(args.command, config, args.out, args.seed)
    except (OSError, json.JSONDecodeError) as err:
        print(f"ppide {args.command}: cannot read config: {err}", file=sys.stderr)
        return 2
    except PpideError as err:
        print(f"ppide {args.command}: {type(err).__name__}: {err}", file=sys.stderr)
        return 1
    if args.command == "metric":
        for k, v in sorted(json.loads(text).items()):
            if k.startswith("d_"):
                print(f"{k} {v:.12g}")
    else:
        sys.stdout.write(text)
    return 0


if __name__ == "__main__":
    sys.exit(main())
