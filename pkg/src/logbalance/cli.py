"""
Command-line front end.

Subcommands: ``solve``, ``diagnose``, ``omega``, ``theory``, ``poisson`` and
``compare``.  Every table is a CSV with a ``#`` provenance line (tool version
and configuration hash) followed by a header row.  Exit codes: 0 success,
1 computation failure, 2 usage or validation error.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import __version__
from .asymptotics import DiagnosticRow, anchor, compare_models, omega_estimate
from .config import ConfigError, ExperimentConfig
from .numerics import NumericsError
from .poisson import decay_slope, is_decreasing, sum_vs_integral_all
from .solver import (
    E1_SAMPLES,
    BalancedModel,
    MaxIterExceeded,
    ModelFileError,
    load_model,
    save_model,
    solve,
)
from .theory import PAPER_WINDOWS, TheoryCurve, curve

log = logging.getLogger("logbalance")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

SCHEMA = {
    "solve.csv": {
        "beta": "balance parameter",
        "iterations": "T-step iterations to convergence",
        "final_sup_delta": "last sup-norm change of lambda",
        "max_balance_residual": "max |c_i M_i / target - 1| over trusted degrees",
        "max_e1_residual": "max residual of int f(sx)/f(x) dx = 1/(1-s) - beta over s = 0.1..0.9 (samples whose tail is cut by x_max skipped)",
        "log_balance_constant": "log C of the iterate before the final rescale",
        "damping": "damping factor in use at exit",
        "converged": "1 if the tolerance was met",
        "model_file": "model file name inside models/",
    },
    "diagnostics.csv": dict(
        [("beta", "balance parameter")]
        + [(c, "per-anchor quantity, see logbalance.asymptotics.DiagnosticRow") for c in DiagnosticRow.columns()]
        + [("flag", "ok, untrusted (a beyond 0.5 x_max) or failed")]
    ),
    "omega.csv": {
        "beta": "balance parameter",
        "omega_hat": "u(x) - x at the largest grid point",
        "error_bar": "spread of u(x) - x over the upper half of the grid",
        "c_beta_hat": "f(x) / (x^omega e^x) at the largest grid point",
    },
    "theory.csv": {c: "see logbalance.theory.TheoryCurve" for c in TheoryCurve.COLUMNS},
    "poisson.csv": {
        "beta": "balance parameter",
        "a": "anchor",
        "j": "moment order about n_{x_a}",
        "sum": "sum over i = 0..i_max",
        "integral": "integral over [0, i_max]; i_max is past the point where zeta drops below 10^-(dps+5)",
        "err": "relative gap for even j, absolute for odd j",
        "dps": "decimal digits used (raised above the configured floor when needed)",
    },
    "compare.csv": {
        "beta1": "first balance parameter",
        "beta2": "second balance parameter",
        "i": "coefficient index",
        "log_k": "log c(i, beta2) - log c(i, beta1)",
    },
}


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


def write_csv(path: Path, cfg: ExperimentConfig, command: str, columns, rows) -> Path:
    buf = io.StringIO()
    buf.write(f"# logbalance {__version__} command={command} config={cfg.digest()}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(buf.getvalue(), encoding="utf-8")
    write_schema(path.parent)
    return path


def write_schema(out: Path) -> None:
    lines = ["# CSV schema", ""]
    for name, cols in SCHEMA.items():
        lines.append(f"## {name}")
        lines.append("")
        for col, desc in cols.items():
            lines.append(f"- `{col}`: {desc}")
        lines.append("")
    (out / "SCHEMA.md").write_text("\n".join(lines), encoding="utf-8")


def model_path(cfg: ExperimentConfig, beta: float) -> Path:
    return Path(cfg.outputs) / "models" / f"beta_{beta:.4f}.json"


def _pool_map(fn, args, workers: int):
    if workers <= 1 or len(args) <= 1:
        return [fn(*a) for a in args]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, *zip(*args)))


# ---------------------------------------------------------------------------
# model acquisition
# ---------------------------------------------------------------------------


def _matches(model: BalancedModel, cfg: ExperimentConfig, beta: float) -> bool:
    return (model.beta == beta and model.n_trunc == cfg.n_trunc and model.x_max == cfg.x_max
            and model.report.converged)


def obtain_models(cfg: ExperimentConfig) -> dict:
    """Models for every beta in ascending order, reusing saved files that match."""
    models = {}
    prev = None
    for beta in sorted(set(cfg.betas)):
        path = model_path(cfg, beta)
        model = None
        if path.exists():
            try:
                model = load_model(path)
            except ModelFileError as exc:
                log.warning("ignoring %s: %s", path, exc)
            if model is not None and not _matches(model, cfg, beta):
                model = None
        if model is None:
            model = solve(beta, cfg.n_trunc, cfg.x_max, tol=cfg.tol, max_iter=cfg.max_iter, warm_start=prev)
            path.parent.mkdir(parents=True, exist_ok=True)
            save_model(model, path)
        models[beta] = model
        prev = model
    return models


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def _max_finite(values) -> float:
    vals = [abs(v) for v in values if math.isfinite(v)]
    return max(vals) if vals else math.nan


def cmd_solve(cfg: ExperimentConfig) -> int:
    rows = []
    status = EXIT_OK
    prev = None
    for beta in sorted(set(cfg.betas)):
        path = model_path(cfg, beta)
        path.parent.mkdir(parents=True, exist_ok=True)
        try:
            model = solve(beta, cfg.n_trunc, cfg.x_max, tol=cfg.tol, max_iter=cfg.max_iter, warm_start=prev)
        except MaxIterExceeded as exc:
            log.error("%s", exc)
            model = exc.model
            status = EXIT_FAIL
        except NumericsError as exc:
            log.error("beta=%g: %s", beta, exc)
            status = EXIT_FAIL
            break
        save_model(model, path)
        rep = model.report
        rows.append((beta, rep.iterations, rep.final_sup_delta, rep.max_balance_residual,
                     _max_finite(rep.e1_residuals[s] for s in E1_SAMPLES), rep.log_balance_constant,
                     rep.damping_used, rep.converged, path.name))
        print(f"beta={beta:g}: {rep.iterations} iterations, balance residual "
              f"{rep.max_balance_residual:.2e}, converged={rep.converged}")
        if rep.converged:
            prev = model
    write_csv(Path(cfg.outputs) / "solve.csv", cfg, "solve", list(SCHEMA["solve.csv"]), rows)
    return status


def _diag_row(model: BalancedModel, a: float):
    try:
        row = anchor(model, a)
    except NumericsError as exc:
        log.error("beta=%g a=%g: %s", model.beta, a, exc)
        return [model.beta] + [a] + [math.nan] * (len(DiagnosticRow.columns()) - 2) + [False, "failed"]
    flag = "ok" if row.trusted else "untrusted"
    return [model.beta] + [getattr(row, c) for c in DiagnosticRow.columns()] + [flag]


def cmd_diagnose(cfg: ExperimentConfig, model_files=None) -> int:
    if model_files:
        models = [load_model(p) for p in model_files]
    else:
        models = list(obtain_models(cfg).values())
    jobs = [(m, a) for m in models for a in cfg.a_grid]
    rows = _pool_map(_diag_row, jobs, cfg.workers)
    for r in rows:
        if r[-1] == "untrusted":
            log.warning("beta=%g a=%g lies beyond the trusted range (0.5 x_max); row flagged", r[0], r[1])
    write_csv(Path(cfg.outputs) / "diagnostics.csv", cfg, "diagnose", list(SCHEMA["diagnostics.csv"]), rows)
    return EXIT_FAIL if any(r[-1] == "failed" for r in rows) else EXIT_OK


def _omega_row(model: BalancedModel, x_grid):
    est = omega_estimate(model, x_grid)
    return (model.beta, est.omega_hat, est.error_bar, est.c_beta_hat)


def cmd_omega(cfg: ExperimentConfig) -> int:
    models = obtain_models(cfg)
    rows = _pool_map(_omega_row, [(m, cfg.x_grid) for m in models.values()], cfg.workers)
    write_csv(Path(cfg.outputs) / "omega.csv", cfg, "omega", list(SCHEMA["omega.csv"]), rows)
    for beta, om, err, c in rows:
        line = f"beta={beta:g}: omega_hat={om:.4f} +- {err:.1e}, C_beta_hat={c:.4f}"
        if beta == 0.5:
            line += f" (conjectured 0.5, deviation {om - 0.5:+.4f})"
        print(line)
    omegas = [r[1] for r in rows]
    inc = all(b > a for a, b in zip(omegas, omegas[1:]))
    bound = all(o <= 1.02 for o in omegas)
    print(f"omega increasing in beta: {'PASS' if inc else 'FAIL'}")
    print(f"omega <= 1 (with 0.02 slack): {'PASS' if bound else 'FAIL'}")
    return EXIT_OK


def cmd_theory(cfg: ExperimentConfig) -> int:
    cv = curve(cfg.m_grid)
    write_csv(Path(cfg.outputs) / "theory.csv", cfg, "theory", list(TheoryCurve.COLUMNS), cv.rows())
    m = cv.m_grid
    inner = (m >= 1.001 - 1e-12) & (m <= 1.009 + 1e-12)
    checks = {
        "p_slope": cv.fd_slopes["p"], "q_slope": cv.fd_slopes["q"], "F_slope": cv.fd_slopes["F"],
        "P_slope": cv.fd_slopes["P"], "p_tilde_slope": cv.fd_slopes["p_tilde"],
        "q_tilde_slope": cv.fd_slopes["q_tilde"], "ratio_tilde_slope": cv.fd_slopes["ratio_tilde"],
    }
    for name, vals in checks.items():
        lo, hi = PAPER_WINDOWS[name]
        v = vals[inner] if inner.any() else vals
        ok = bool(v.size) and bool(((v > lo - 1e-3) & (v < hi + 1e-3)).all())
        print(f"{name} in ({lo}, {hi}) +- 0.001: {'PASS' if ok else 'FAIL'} "
              f"[{v.min():.5f}, {v.max():.5f}]" if v.size else f"{name}: no interior points")
    return EXIT_OK


def _poisson_rows(model: BalancedModel, a: float, dps: int):
    return [(model.beta, a, r.j, r.sum, r.integral, r.err, r.dps)
            for r in sum_vs_integral_all(model, a, dps=dps)]


def cmd_poisson(cfg: ExperimentConfig) -> int:
    models = obtain_models(cfg)
    jobs = [(m, a, cfg.poisson_dps) for m in models.values() for a in cfg.poisson_a]
    rows = [r for block in _pool_map(_poisson_rows, jobs, cfg.workers) for r in block]
    write_csv(Path(cfg.outputs) / "poisson.csv", cfg, "poisson", list(SCHEMA["poisson.csv"]), rows)
    for beta in models:
        sel = sorted((r[1], r[5]) for r in rows if r[0] == beta and r[2] == 0)
        a_vals, errs = zip(*sel)
        slope = decay_slope(a_vals, errs)
        ok = slope <= -1.2 and is_decreasing(errs) if len(sel) > 1 else False
        print(f"beta={beta:g}: j=0 log-log slope {slope:.3f}, monotone={is_decreasing(errs)}: "
              f"{'PASS' if ok else 'FAIL'}")
    return EXIT_OK


def cmd_compare(cfg: ExperimentConfig) -> int:
    models = obtain_models(cfg)
    betas = sorted(models)
    if len(betas) < 2:
        raise ConfigError("betas: compare needs at least two values")
    rows = []
    for b1, b2 in zip(betas, betas[1:]):
        prof = compare_models(models[b1], models[b2], cfg.compare_i_max)
        rows.extend((b1, b2, int(i), float(lk)) for i, lk in zip(prof.i, prof.log_k))
        print(f"beta {b1:g} -> {b2:g}: min k = {prof.min_k:.6g} at i={prof.argmin}, "
              f"k > 1 on [1, {prof.i[-1]}]: {'PASS' if prof.min_k > 1 else 'FAIL'}, "
              f"eventually increasing: {prof.eventually_increasing}")
    write_csv(Path(cfg.outputs) / "compare.csv", cfg, "compare", list(SCHEMA["compare.csv"]), rows)
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _float_list(text: str) -> list:
    text = text.strip()
    if not text:
        return []
    try:
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON configuration file")
    common.add_argument("--out", help="output directory (overrides 'outputs')")
    common.add_argument("--workers", type=int, help="worker processes for sweeps")
    common.add_argument("--beta", type=_float_list, help="comma-separated betas")
    common.add_argument("--a-grid", type=_float_list, help="comma-separated anchors a")
    common.add_argument("--x-grid", type=_float_list, help="comma-separated x values for omega")
    common.add_argument("--m-grid", type=_float_list, help="comma-separated m values in [1, 1.01]")
    common.add_argument("--n-trunc", type=int, help="series truncation degree N")
    common.add_argument("--x-max", type=float, help="integration cut-off")
    common.add_argument("--tol", type=float, help="solver tolerance")
    common.add_argument("--max-iter", type=int, help="solver iteration cap")
    common.add_argument("--dps", type=int, help="decimal digits for the sum/integral comparison")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="logbalance", description=__doc__.split("\n\n")[0].strip())
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("solve", parents=[common], help="solve one model per beta")
    d = sub.add_parser("diagnose", parents=[common], help="per-anchor diagnostics")
    d.add_argument("--model", action="append", help="model file (repeatable); default: solve/load per beta")
    sub.add_parser("omega", parents=[common], help="omega and C_beta over beta")
    sub.add_parser("theory", parents=[common], help="p, q, F, P curves over m")
    sub.add_parser("poisson", parents=[common], help="sum versus integral of the coefficient profile")
    sub.add_parser("compare", parents=[common], help="coefficient ratios between consecutive betas")
    return p


def config_from_args(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    grid = args.a_grid
    over = dict(
        outputs=args.out, workers=args.workers, betas=args.beta, x_grid=args.x_grid,
        m_grid=args.m_grid, n_trunc=args.n_trunc, x_max=args.x_max, tol=args.tol,
        max_iter=args.max_iter, poisson_dps=args.dps,
    )
    if args.command == "poisson":
        over["poisson_a"] = grid
    else:
        over["a_grid"] = grid
    return cfg.override(**over)


COMMANDS = {
    "solve": cmd_solve,
    "omega": cmd_omega,
    "theory": cmd_theory,
    "poisson": cmd_poisson,
    "compare": cmd_compare,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(args)
        if args.command == "diagnose":
            return cmd_diagnose(cfg, args.model)
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"logbalance: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ModelFileError as exc:
        print(f"logbalance: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericsError, ValueError) as exc:
        print(f"logbalance: computation failed: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
