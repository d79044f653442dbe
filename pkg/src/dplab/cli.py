"""Command-line front end: validate configs, run solves, sweeps, reports.

Every command writes delimited output (CSV with a ``# schema=1`` header
line, JSON summaries) plus matplotlib figures rendered straight to PNG
files in the output directory.  Outputs are deterministic: identical
config and seed give byte-identical CSV/JSON.

Exit codes: 0 success, 1 assumption violation or inadmissible r,
2 config/parse error, 3 Newton divergence, 4 stalled continuation,
5 incomplete checkpoint set.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .errors import (
    ConfigError,
    ContinuationStalled,
    DplabError,
    ExpressionError,
    InadmissibleR,
    IncompleteCheckpoints,
    NewtonDiverged,
)
from .harness import (
    builtin_mms_cases,
    default_s_values,
    mms_convergence,
    mollification_stability,
    regularity_report,
)
from .grid import center_gradient
from .problem import grid_from_config, read_config, spec_from_config, validate
from .solver import NewtonConfig, epsilon_continuation, solve_evolution
from .storage import load_solution, save_solution

EXIT_OK = 0
EXIT_VIOLATION = 1
EXIT_PARSE = 2
EXIT_NEWTON = 3
EXIT_STALLED = 4
EXIT_CHECKPOINTS = 5


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(path, columns, rows) -> None:
    lines = ["# schema=1", ",".join(columns)]
    for row in rows:
        lines.append(",".join(_fmt(row[c]) for c in columns))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def write_json(path, payload) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _save_figure(fig, path) -> None:
    fig.savefig(path, dpi=130)
    plt.close(fig)


def _newton_config(values: dict) -> NewtonConfig:
    kwargs = {}
    mapping = {
        "newton.abs_tol": ("abs_tol", float),
        "newton.rel_tol": ("rel_tol", float),
        "newton.max_iter": ("max_iter", int),
        "newton.damping": ("damping", float),
        "newton.max_backtracks": ("max_backtracks", int),
        "newton.linear_solver": ("linear_solver", str),
        "newton.cg_tol": ("cg_tol", float),
        "newton.cg_max_iter": ("cg_max_iter", int),
    }
    for key, (attr, cast) in mapping.items():
        if key in values:
            try:
                kwargs[attr] = cast(values[key])
            except ValueError as exc:
                raise ConfigError(f"bad value for {key}: {exc}") from exc
    try:
        return NewtonConfig(**kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _s_values(values: dict, dim: int):
    if "s.list" in values:
        try:
            out = tuple(float(tok) for tok in values["s.list"].split(","))
        except ValueError as exc:
            raise ConfigError(f"bad s.list: {exc}") from exc
        return out
    return default_s_values(dim)


def _float_arg(value, flag):
    if value is None:
        return None
    try:
        return float(value)
    except ValueError as exc:
        raise ConfigError(f"{flag} expects a number: {exc}") from exc


def _load(args):
    values = read_config(args.config)
    if args.mesh is not None:
        try:
            m = int(args.mesh)
        except ValueError as exc:
            raise ConfigError(f"--mesh expects an integer: {exc}") from exc
        values = dict(values)
        values["nx"] = str(m)
        if values.get("dim") == "2":
            values["ny"] = str(m)
    grid = grid_from_config(values)
    spec = spec_from_config(values, grid)
    return values, grid, spec


def _diag_rows(result):
    return [
        {"step": d.step, "time": d.time, "eps": d.eps,
         "newton_iters": d.newton_iters, "residual": d.residual,
         "energy_residual": d.energy_residual}
        for d in result.diagnostics
    ]


def _plot_solution(grid, u_final, out_dir):
    fig, ax = plt.subplots(figsize=(5.0, 3.4))
    if grid.dim == 1:
        ax.plot(grid.centers(0), u_final, lw=1.2)
        ax.set_xlabel("x")
        ax.set_ylabel("u")
    else:
        im = ax.imshow(u_final.T, origin="lower", aspect="auto",
                       extent=(0, grid.lengths[0], 0, grid.lengths[1]))
        fig.colorbar(im, ax=ax, label="u")
        ax.set_xlabel("x")
        ax.set_ylabel("y")
    ax.set_title("final-time solution")
    fig.tight_layout()
    _save_figure(fig, os.path.join(out_dir, "solution.png"))


def _plot_diagnostics(rows, out_dir):
    fig, axes = plt.subplots(1, 2, figsize=(8.0, 3.2))
    steps = [r["step"] for r in rows]
    axes[0].semilogy(steps, [max(r["residual"], 1e-300) for r in rows], lw=1.0)
    axes[0].set_xlabel("step")
    axes[0].set_ylabel("final Newton residual")
    axes[1].semilogy(steps, [max(r["energy_residual"], 1e-300) for r in rows], lw=1.0)
    axes[1].set_xlabel("step")
    axes[1].set_ylabel("energy-identity residual")
    fig.tight_layout()
    _save_figure(fig, os.path.join(out_dir, "diagnostics.png"))


def cmd_validate(args) -> int:
    values, grid, spec = _load(args)
    report = validate(spec)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "validation.json"), "w", encoding="utf-8") as fh:
        fh.write(report.to_json())
        fh.write("\n")
    for entry in report.entries:
        status = "pass" if entry.passed else "FAIL"
        print(f"{status:4s}  {entry.assumption:32s} margin={entry.margin:.6g} "
              f"at {entry.location}")
    return EXIT_OK if report.ok else EXIT_VIOLATION


def cmd_solve(args) -> int:
    values, grid, spec = _load(args)
    report = validate(spec)
    if not report.ok:
        failing = [e.assumption for e in report.entries if not e.passed]
        print(f"config violates assumptions: {', '.join(failing)}", file=sys.stderr)
        return EXIT_VIOLATION
    eps = _float_arg(args.eps, "--eps")
    if eps is None:
        eps = spec.epsilon_schedule[0]
    config = _newton_config(values)
    result = solve_evolution(spec, grid, eps, config)
    os.makedirs(args.out, exist_ok=True)
    save_solution(os.path.join(args.out, "checkpoints"), grid, result.u, eps)
    rows = _diag_rows(result)
    write_csv(os.path.join(args.out, "diagnostics.csv"),
              ["step", "time", "eps", "newton_iters", "residual",
               "energy_residual"], rows)
    s_values = _s_values(values, grid.dim)
    reg = regularity_report(result.u, spec, eps, spec.r, s_values)
    write_json(os.path.join(args.out, "report.json"), reg.to_json_dict())
    write_csv(os.path.join(args.out, "report.csv"),
              ["experiment", "mesh", "quantity", "value"],
              reg.to_rows("solve", "x".join(str(c) for c in grid.cells)))
    _plot_solution(grid, result.u[-1], args.out)
    _plot_diagnostics(rows, args.out)
    return EXIT_OK


def cmd_sweep_eps(args) -> int:
    values, grid, spec = _load(args)
    report = validate(spec)
    if not report.ok:
        failing = [e.assumption for e in report.entries if not e.passed]
        print(f"config violates assumptions: {', '.join(failing)}", file=sys.stderr)
        return EXIT_VIOLATION
    config = _newton_config(values)
    rel_threshold = float(values.get("sweep.rel_threshold", "1e-3"))
    os.makedirs(args.out, exist_ok=True)
    columns = ["level", "eps", "newton_iters", "flux_gap", "energy_modular",
               "min_exponent_modular"]

    def trace_rows(trace):
        rows = []
        for lvl in trace.levels:
            rows.append({
                "level": lvl.index, "eps": lvl.eps,
                "newton_iters": lvl.newton_total,
                "flux_gap": "" if lvl.flux_gap is None else lvl.flux_gap,
                "energy_modular": (
                    "" if lvl.energy_modular is None else lvl.energy_modular),
                "min_exponent_modular": (
                    "" if lvl.min_exponent_modular is None
                    else lvl.min_exponent_modular),
            })
        return rows

    try:
        trace = epsilon_continuation(spec, grid, config,
                                     rel_threshold=rel_threshold,
                                     keep_solutions=False)
    except ContinuationStalled as exc:
        if exc.trace is not None:
            write_csv(os.path.join(args.out, "trace.csv"), columns,
                      trace_rows(exc.trace))
        print("continuation stalled", file=sys.stderr)
        return EXIT_STALLED
    rows = trace_rows(trace)
    write_csv(os.path.join(args.out, "trace.csv"), columns, rows)
    fig, ax = plt.subplots(figsize=(5.0, 3.4))
    eps_vals = [lvl.eps for lvl in trace.levels[1:]]
    for key, label in (("flux_gap", "flux gap"),
                       ("energy_modular", "energy modular"),
                       ("min_exponent_modular", "min-exponent modular")):
        series = [getattr(lvl, key) for lvl in trace.levels[1:]]
        if all(v is not None for v in series):
            positive = [max(v, 1e-300) for v in series]
            ax.loglog(eps_vals, positive, marker="o", ms=3, lw=1.0, label=label)
    ax.invert_xaxis()
    ax.set_xlabel("eps")
    ax.set_ylabel("distance to previous level")
    ax.legend(fontsize=8)
    fig.tight_layout()
    _save_figure(fig, os.path.join(args.out, "sweep_eps.png"))
    print(f"continuation converged: {trace.converged}")
    return EXIT_OK


def cmd_mms(args) -> int:
    cases = builtin_mms_cases()
    if args.case not in cases:
        print(f"unknown case {args.case!r}; pick from {sorted(cases)}",
              file=sys.stderr)
        return EXIT_PARSE
    case = cases[args.case]
    try:
        meshes = [int(tok) for tok in args.mesh.split(",")]
    except ValueError:
        print("--mesh expects a comma-separated integer list", file=sys.stderr)
        return EXIT_PARSE
    config = NewtonConfig()
    if args.config is not None:
        values = read_config(args.config)
        config = _newton_config(values)
    rows = mms_convergence(case, meshes, config)
    os.makedirs(args.out, exist_ok=True)
    write_csv(os.path.join(args.out, "mms.csv"),
              ["cells", "h", "tau", "l2_error", "grad_error", "order",
               "grad_order"],
              [{"cells": r.cells, "h": r.h, "tau": r.tau,
                "l2_error": r.l2_error, "grad_error": r.grad_error,
                "order": r.order, "grad_order": r.grad_order} for r in rows])
    fig, ax = plt.subplots(figsize=(5.0, 3.4))
    hs = [r.h for r in rows]
    errs = [max(r.l2_error, 1e-300) for r in rows]
    ax.loglog(hs, errs, marker="o", ms=4, lw=1.0, label="final-time L2 error")
    guide = [errs[0] * (h / hs[0]) ** 2 for h in hs]
    ax.loglog(hs, guide, ls="--", lw=0.8, label="slope 2")
    ax.set_xlabel("h")
    ax.set_ylabel("error")
    ax.legend(fontsize=8)
    fig.tight_layout()
    _save_figure(fig, os.path.join(args.out, "mms.png"))
    for row in rows:
        line = f"cells={row.cells:5d} h={row.h:.5f} l2={row.l2_error:.3e}"
        if not np.isnan(row.order):
            line += f" order={row.order:.3f}"
        print(line)
    return EXIT_OK


def cmd_stability(args) -> int:
    values, grid, spec = _load(args)
    report = validate(spec)
    if not report.ok:
        failing = [e.assumption for e in report.entries if not e.passed]
        print(f"config violates assumptions: {', '.join(failing)}", file=sys.stderr)
        return EXIT_VIOLATION
    try:
        widths = [float(tok) for tok in args.widths.split(",")]
    except ValueError:
        print("--widths expects a comma-separated float list", file=sys.stderr)
        return EXIT_PARSE
    eps = _float_arg(args.eps, "--eps")
    if eps is None:
        eps = spec.epsilon_schedule[0]
    config = _newton_config(values)
    rows = mollification_stability(spec, widths, grid, eps, config)
    os.makedirs(args.out, exist_ok=True)
    write_csv(os.path.join(args.out, "stability.csv"),
              ["width", "flux_gap", "energy_modular", "min_exponent_modular"],
              [{"width": r.width, "flux_gap": r.flux_gap,
                "energy_modular": r.energy_modular,
                "min_exponent_modular": r.min_exponent_modular} for r in rows])
    fig, ax = plt.subplots(figsize=(5.0, 3.4))
    ax.loglog([r.width for r in rows],
              [max(r.min_exponent_modular, 1e-300) for r in rows],
              marker="o", ms=4, lw=1.0)
    ax.set_xlabel("mollifier width")
    ax.set_ylabel("min-exponent modular of difference")
    fig.tight_layout()
    _save_figure(fig, os.path.join(args.out, "stability.png"))
    return EXIT_OK


def cmd_report(args) -> int:
    values, grid_cfg, spec = _load(args)
    grid, u, eps = load_solution(args.checkpoints)
    if grid.cells != grid_cfg.cells or grid.nt != grid_cfg.nt:
        raise ConfigError("checkpoints were produced on a different grid")
    r = _float_arg(args.r, "--r")
    if r is None:
        r = spec.r
    s_values = _s_values(values, grid.dim)
    reg = regularity_report(u, spec, eps, r, s_values)
    os.makedirs(args.out, exist_ok=True)
    write_json(os.path.join(args.out, "report.json"), reg.to_json_dict())
    write_csv(os.path.join(args.out, "report.csv"),
              ["experiment", "mesh", "quantity", "value"],
              reg.to_rows("report", "x".join(str(c) for c in grid.cells)))
    # time series of the gradient r-integral for the figure
    series = []
    for n in range(grid.nt + 1):
        g = center_gradient(u[n], grid)
        mag = np.sqrt(np.sum(g * g, axis=-1))
        series.append(float(np.sum(mag**r) * grid.cell_volume))
    fig, ax = plt.subplots(figsize=(5.0, 3.4))
    ax.plot(grid.times(), series, lw=1.0)
    ax.set_xlabel("t")
    ax.set_ylabel(f"integral of |grad u|^{r:g}")
    fig.tight_layout()
    _save_figure(fig, os.path.join(args.out, "report.png"))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dplab",
        description="double-phase parabolic solver and verification harness")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, config_required=True):
        p.add_argument("--config", required=config_required,
                       help="path to the problem config")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None,
                       help="accepted for experiment bundles; all commands "
                            "are deterministic given the config")

    p = sub.add_parser("validate", help="check every structural assumption")
    add_common(p)
    p.add_argument("--mesh", default=None)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("solve", help="run one evolution solve")
    add_common(p)
    p.add_argument("--mesh", default=None, help="override cells per axis")
    p.add_argument("--eps", default=None, help="regularization parameter")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("sweep-eps", help="continuation over the eps schedule")
    add_common(p)
    p.add_argument("--mesh", default=None)
    p.set_defaults(func=cmd_sweep_eps)

    p = sub.add_parser("mms", help="manufactured-solution convergence study")
    p.add_argument("--case", required=True, help="heat or double-phase")
    p.add_argument("--mesh", required=True,
                   help="comma-separated cells per axis, e.g. 32,64,128")
    p.add_argument("--config", default=None,
                   help="optional config supplying newton.* settings")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_mms)

    p = sub.add_parser("stability", help="data-mollification stability sweep")
    add_common(p)
    p.add_argument("--mesh", default=None)
    p.add_argument("--widths", required=True,
                   help="comma-separated decreasing mollifier widths")
    p.add_argument("--eps", default=None)
    p.set_defaults(func=cmd_stability)

    p = sub.add_parser("report", help="recompute the report from checkpoints")
    add_common(p)
    p.add_argument("--mesh", default=None)
    p.add_argument("--checkpoints", required=True)
    p.add_argument("--r", default=None)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ExpressionError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except InadmissibleR as exc:
        print(f"inadmissible r: {exc}", file=sys.stderr)
        return EXIT_VIOLATION
    except NewtonDiverged as exc:
        payload = {"error": "newton_diverged", "step": exc.step, "time": exc.time}
        print(json.dumps(payload, sort_keys=True), file=sys.stderr)
        return EXIT_NEWTON
    except ContinuationStalled:
        print("continuation stalled", file=sys.stderr)
        return EXIT_STALLED
    except IncompleteCheckpoints as exc:
        print(f"incomplete checkpoints: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINTS
    except DplabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE


def entry_point() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry_point()
