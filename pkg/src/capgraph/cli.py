"""Command dispatch and result export.

Subcommands: solve, verify, mms, convergence, oracle1d, export.  Exit codes:
0 success, 1 solver failure, 2 configuration error.  All runs are
reproducible from (config, seed); output files carry no timestamps.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .config import ConfigError, load_config
from .expressions import parse_expression, symbolic_s_derivative  # noqa: F401 (public surface)
from .geometry import vertex_slope_factors
from .meshing import ScalarField, boundary_distance_field, write_mesh, write_vtk
from .problem import validate_conditions, height_bound
from .solver import SolverError, continuation_solve
from . import verify as vf

__all__ = ["run_command", "main", "write_solution_csv", "read_solution_csv",
           "write_report", "read_report"]

log = logging.getLogger("capgraph.cli")

THREADS_ENV = "CAPGRAPH_THREADS"


# ---------------------------------------------------------------------------
# Solution / report files


def write_solution_csv(path, mesh, u, w, d_gamma):
    """CSV schema: vertex_id,x1[,x2],u,W,d_gamma_boundary (shortest round-trip reprs)."""
    cols = ["vertex_id", "x1"] + (["x2"] if mesh.dim == 2 else [])
    cols += ["u", "W", "d_gamma_boundary"]
    lines = [",".join(cols)]
    for i in range(mesh.num_vertices):
        row = [str(i)] + [repr(float(c)) for c in mesh.vertices[i]]
        row += [repr(float(u[i])), repr(float(w[i])), repr(float(d_gamma[i]))]
        lines.append(",".join(row))
    Path(path).write_text("\n".join(lines) + "\n")


def read_solution_csv(path):
    """Read a solution CSV back into a dict of arrays (bit-identical values)."""
    lines = Path(path).read_text().strip().splitlines()
    header = lines[0].split(",")
    data = {name: [] for name in header}
    for line in lines[1:]:
        for name, tok in zip(header, line.split(",")):
            data[name].append(float(tok))
    return {name: np.array(vals) for name, vals in data.items()}


def write_report(path, certificates):
    """One JSON object per certificate, sorted keys, one per line."""
    lines = [json.dumps(c.to_dict(), sort_keys=True) for c in certificates]
    Path(path).write_text("\n".join(lines) + "\n")


def read_report(path):
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line]


# ---------------------------------------------------------------------------
# Shared run plumbing


def _thread_count(args, cfg):
    if getattr(args, "threads", None):
        return max(1, args.threads)
    if cfg.threads:
        return cfg.threads
    env = os.environ.get(THREADS_ENV)
    if env and env.isdigit() and int(env) > 0:
        return int(env)
    return os.cpu_count() or 1


def _load(args):
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "output_dir", None):
        cfg.output["dir"] = args.output_dir
    return cfg


def _interior_ball(mesh):
    """Default (center, radius) for the interior gradient certificate, if one fits."""
    shape = mesh.shape or (None,)
    if shape[0] == "disk":
        return np.zeros(2), 0.45 * shape[1]
    if shape[0] == "interval":
        a, b = shape[1], shape[2]
        return np.array([0.5 * (a + b)]), 0.35 * (b - a)
    return None


def _solution_certificates(u, problem, metric, mesh, tau, threads=1):
    """All single-solution certificates (provisional traces), optionally threaded."""
    jobs = {
        "height": lambda: vf.check_height(u, problem, metric, mesh),
        "boundary": lambda: vf.boundary_gradient_certificate(u, metric, mesh),
        "angle": lambda: vf.contact_angle_residual(u, tau, problem, metric, mesh),
        "strong": lambda: vf.strong_form_residual(u, tau, problem, metric, mesh),
    }
    ball = _interior_ball(mesh)
    if ball is not None:
        jobs["interior"] = lambda: vf.interior_gradient_certificate(
            u, metric, mesh, vf.nearest_vertex(mesh, ball[0]), ball[1])

    def separation_rate():
        zeta = vf.make_interior_bump(mesh, metric)
        taus = [1e-2, 5e-3, 2.5e-3]
        return vf.separation_rate_check(u, metric, mesh, zeta, taus)

    jobs["separation-rate"] = separation_rate
    certs = []
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = {name: pool.submit(fn) for name, fn in jobs.items()}
            for name, fut in futures.items():
                try:
                    certs.append(fut.result())
                except (ValueError, vf.FoldDetected) as exc:
                    log.warning("certificate %s skipped: %s", name, exc)
    else:
        for name, fn in jobs.items():
            try:
                certs.append(fn())
            except (ValueError, vf.FoldDetected) as exc:
                log.warning("certificate %s skipped: %s", name, exc)
    return certs


def _write_outputs(cfg, mesh, metric, u, certs):
    outdir = cfg.output_dir
    outdir.mkdir(parents=True, exist_ok=True)
    w = vertex_slope_factors(metric, u)
    d_gamma = boundary_distance_field(mesh, metric).values
    formats = cfg.formats
    if "csv" in formats:
        write_solution_csv(outdir / "solution.csv", mesh, u.values, w, d_gamma)
    if "report" in formats and certs is not None:
        write_report(outdir / "report.jsonl", certs)
    if "mesh" in formats:
        write_mesh(mesh, outdir / "mesh.txt")
    if "vtk" in formats:
        write_vtk(mesh, outdir / "solution.vtk",
                  point_data={"u": u.values, "W": w, "d_gamma_boundary": d_gamma})


# ---------------------------------------------------------------------------
# Subcommands


def _cmd_solve(args):
    cfg = _load(args)
    mesh = cfg.build_domain().build()
    metric = cfg.build_metric(mesh.dim)
    problem = cfg.build_problem(mesh.dim)
    metric.validate(mesh.vertices)
    state = continuation_solve(problem, metric, mesh, cfg.build_solver_cfg(),
                               unsafe=cfg.unsafe)
    tau = state.tau
    certs = _solution_certificates(state.u, problem, metric, mesh, tau,
                                   threads=_thread_count(args, cfg))
    _write_outputs(cfg, mesh, metric, state.u, certs)
    print(f"status={state.status} tau={state.tau:.6f} "
          f"steps={len(state.history)} max|u|={np.max(np.abs(state.u.values)):.6e}")
    for c in certs:
        print(f"certificate {c.name}: observed={c.observed:.6e} "
              f"passed={c.passed} provisional={c.provisional}")
    return 0 if state.status == "converged" else 1


def _cmd_verify(args):
    cfg = _load(args)
    mesh = cfg.build_domain().build()
    metric = cfg.build_metric(mesh.dim)
    problem = cfg.build_problem(mesh.dim)
    solution_path = args.solution or (cfg.output_dir / "solution.csv")
    data = read_solution_csv(solution_path)
    if len(data["u"]) != mesh.num_vertices:
        raise ConfigError("stored solution does not match the configured mesh")
    u = ScalarField(mesh, data["u"])
    report = validate_conditions(problem, mesh, metric,
                                 s_range=_default_s_range(problem, metric, mesh))
    print(report.summary())
    certs = _solution_certificates(u, problem, metric, mesh, 1.0,
                                   threads=_thread_count(args, cfg))
    outdir = cfg.output_dir
    outdir.mkdir(parents=True, exist_ok=True)
    write_report(outdir / "report.jsonl", certs)
    for c in certs:
        print(f"certificate {c.name}: observed={c.observed:.6e} "
              f"passed={c.passed} provisional={c.provisional}")
    return 0


def _default_s_range(problem, metric, mesh):
    try:
        b = height_bound(problem, metric, mesh)
    except ValueError:
        b = 1.0
    return (-2.0 * max(1.0, b), 2.0 * max(1.0, b))


def _cmd_mms(args):
    cfg = _load(args)
    if "u_exact" not in cfg.mms:
        raise ConfigError("[mms] u_exact is required for the mms command")
    domain = cfg.build_domain()
    metric = cfg.build_metric()
    rows, orders = vf.mms_convergence_study(
        metric, domain, cfg.mms["u_exact"], levels=cfg.mms.get("levels", (0, 1, 2)),
        kappa0=cfg.mms.get("kappa0", 1.0), cfg=cfg.build_solver_cfg(),
        unsafe=cfg.unsafe)
    print(f"{'h':>10} {'Linf_error':>14} {'angle_residual':>16} {'strong_residual':>16}")
    for r in rows:
        print(f"{r['h']:>10.4g} {r['error']:>14.6e} {r['angle_residual']:>16.6e} "
              f"{r['strong_residual']:>16.6e}")
    print(f"observed orders: error={orders['error']:.3f} "
          f"angle={orders['angle_residual']:.3f} strong={orders['strong_residual']:.3f}")
    outdir = cfg.output_dir
    outdir.mkdir(parents=True, exist_ok=True)
    table = [",".join(["h", "error", "angle_residual", "strong_residual"])]
    table += [f"{r['h']!r},{r['error']!r},{r['angle_residual']!r},{r['strong_residual']!r}"
              for r in rows]
    (outdir / "mms_table.csv").write_text("\n".join(table) + "\n")
    return 0


def _cmd_convergence(args):
    cfg = _load(args)
    domain = cfg.build_domain()
    metric = cfg.build_metric()
    levels = cfg.mms.get("levels", (0, 1, 2))
    if "u_exact" in cfg.mms:
        return _cmd_mms(args)
    problem = cfg.build_problem()
    mesh0 = domain.build(0)
    ball = _interior_ball(mesh0)
    certs, state = vf.run_refinement_suite(problem, metric, domain, levels=levels,
                                           cfg=cfg.build_solver_cfg(),
                                           interior_ball=ball)
    for c in certs:
        order = c.details.get("observed_order")
        extra = f" order={order:.3f}" if isinstance(order, float) else ""
        print(f"certificate {c.name}: observed={c.observed:.6e} "
              f"passed={c.passed}{extra}")
    outdir = cfg.output_dir
    outdir.mkdir(parents=True, exist_ok=True)
    write_report(outdir / "report.jsonl", certs)
    return 0


def _cmd_oracle1d(args):
    cfg = _load(args)
    if cfg.domain["shape"] != "interval":
        raise ConfigError("oracle1d requires an interval domain")
    mesh = cfg.build_domain().build()
    metric = cfg.build_metric(1)
    problem = cfg.build_problem(1)
    state = continuation_solve(problem, metric, mesh, cfg.build_solver_cfg(),
                               unsafe=cfg.unsafe)
    if state.status != "converged":
        print(f"solver stalled at tau={state.tau:.4f}", file=sys.stderr)
        return 1
    m_dense = cfg.oracle.get("m_dense", 4096)
    a, b = cfg.domain["a"], cfg.domain["b"]
    x_d, u_d = vf.oracle_1d_solve(problem, metric, a, b, m_dense)
    u_at_vertices = np.interp(mesh.vertices[:, 0], x_d, u_d)
    diff = float(np.max(np.abs(state.u.values - u_at_vertices)))
    h = (b - a) / cfg.domain["m"]
    tol = 5.0 * (h**2 + 1.0 / m_dense**2)
    print(f"sup|u_fem - u_oracle| = {diff:.6e} (tolerance {tol:.6e})")
    return 0 if diff <= tol else 1


def _cmd_export(args):
    cfg = _load(args)
    mesh = cfg.build_domain().build()
    metric = cfg.build_metric(mesh.dim)
    solution_path = args.solution or (cfg.output_dir / "solution.csv")
    data = read_solution_csv(solution_path)
    if len(data["u"]) != mesh.num_vertices:
        raise ConfigError("stored solution does not match the configured mesh")
    u = ScalarField(mesh, data["u"])
    outdir = cfg.output_dir
    outdir.mkdir(parents=True, exist_ok=True)
    w = vertex_slope_factors(metric, u)
    d_gamma = boundary_distance_field(mesh, metric).values
    fmt = args.format
    if fmt == "vtk":
        write_vtk(mesh, outdir / "solution.vtk",
                  point_data={"u": u.values, "W": w, "d_gamma_boundary": d_gamma})
    elif fmt == "csv":
        write_solution_csv(outdir / "solution.csv", mesh, u.values, w, d_gamma)
    else:
        write_mesh(mesh, outdir / "mesh.txt")
    return 0


# ---------------------------------------------------------------------------
# Entry points


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="capgraph",
        description="capillary Killing-graph solver and certificate suite")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in (("solve", _cmd_solve), ("verify", _cmd_verify),
                     ("mms", _cmd_mms), ("convergence", _cmd_convergence),
                     ("oracle1d", _cmd_oracle1d), ("export", _cmd_export)):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--threads", type=int, default=None)
        p.add_argument("--output-dir", default=None)
        if name in ("verify", "export"):
            p.add_argument("--solution", default=None)
        if name == "export":
            p.add_argument("--format", choices=("vtk", "csv", "mesh"), default="vtk")
        p.set_defaults(fn=fn)
    return parser


def run_command(argv):
    """Dispatch one CLI invocation; returns the process exit code."""
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (SolverError, vf.OracleFailed, vf.ManufactureError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main():
    logging.basicConfig(stream=sys.stderr, level=logging.INFO,
                        format="%(name)s %(message)s")
    sys.exit(run_command(sys.argv[1:]))


if __name__ == "__main__":
    main()
