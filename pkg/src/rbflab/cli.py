"""Command-line interface composing the modules into runnable experiments.

Subcommands: nodes, solve, spectrum, converge, quadrature, jumps1d, maxcfl,
and rerun (re-executes a previously written run manifest).  All tabular data
is CSV with 17-significant-digit decimals, configs/manifests are JSON, and
the one plot type (eigenvalue spectra) is a dependency-free SVG.

Exit codes: 0 success, 2 configuration error, 3 diverging time integration,
4 numerical failure.  The environment variable RBF_LOG (error|info|debug)
controls logging verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time

import numpy as np

from rbflab import __version__, advection as adv, analysis as ana
from rbflab.errors import ConfigurationError, DivergenceError, NumericalError, RbfLabError
from rbflab.geometry import (classify_boundary, generate_evaluation_set,
                             generate_nodes, perturb_nodes, star_domain)
from rbflab.voronoi import build_voronoi, jump_magnitude_1d

log = logging.getLogger("rbflab")

_FMT = "%.17g"


def _fmt(x):
    return _FMT % float(x)


# ---------------------------------------------------------------------------
# File writers
# ---------------------------------------------------------------------------

def write_csv(path, header, rows):
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) if isinstance(v, float) or
                              isinstance(v, np.floating) else str(v)
                              for v in row) + "\n")
    log.info("wrote %s", path)


def write_nodes_csv(path, ps):
    rows = [(float(x), float(y), int(b))
            for (x, y), b in zip(ps.points, ps.boundary)]
    write_csv(path, "x,y,boundary", rows)


def write_matrix_coordinate(path, A):
    """Coordinate-format text export: header `M N nnz`, then `row col value`."""
    import scipy.sparse as sp

    coo = sp.coo_matrix(A)
    coo.sum_duplicates()
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(f"{coo.shape[0]} {coo.shape[1]} {coo.nnz}\n")
        for i, j, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{i} {j} {_fmt(v)}\n")
    log.info("wrote %s", path)


def write_edges_csv(path, diagram):
    rows = [(e.left, e.right, float(e.midpoint[0]), float(e.midpoint[1]),
             float(e.length)) for e in diagram.edges]
    write_csv(path, "i,j,mx,my,len", rows)


def write_manifest(path, subcommand, config, outputs, started):
    doc = {
        "subcommand": subcommand,
        "config": config,
        "version": __version__,
        "seed": config.get("seed", 0),
        "wall_clock_s": time.time() - started,
        "outputs": outputs,
    }
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    log.info("wrote %s", path)


def write_spectrum_svg(path, report):
    """Scatter of dt-scaled eigenvalues with the RK4 region boundary."""
    z = report.eigenvalues * report.dt
    boundary = rk4 = ana.rk4_region_boundary()
    xs = np.concatenate([z.real, rk4.real])
    ys = np.concatenate([z.imag, rk4.imag])
    x0, x1 = float(xs.min()) - 0.3, float(xs.max()) + 0.3
    y0, y1 = float(ys.min()) - 0.3, float(ys.max()) + 0.3
    w, hgt = 640.0, 640.0

    def sx(x):
        return (x - x0) / (x1 - x0) * w

    def sy(y):
        return hgt - (y - y0) / (y1 - y0) * hgt

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0f}" '
             f'height="{hgt:.0f}" viewBox="0 0 {w:.0f} {hgt:.0f}">',
             f'<rect width="{w:.0f}" height="{hgt:.0f}" fill="white"/>']
    pts = " ".join(f"{sx(p.real):.2f},{sy(p.imag):.2f}" for p in boundary)
    parts.append(f'<polyline points="{pts}" fill="none" stroke="green" '
                 'stroke-width="1.5"/>')
    for zi, ok in zip(z, report.stable):
        color = "black" if ok else "red"
        parts.append(f'<circle cx="{sx(zi.real):.2f}" cy="{sy(zi.imag):.2f}" '
                     f'r="2" fill="{color}"/>')
    parts.append("</svg>")
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(parts) + "\n")
    log.info("wrote %s", path)


# ---------------------------------------------------------------------------
# Subcommand implementations (each takes the resolved config dict)
# ---------------------------------------------------------------------------

def _domain(config):
    if config.get("domain", "star") != "star":
        raise ConfigurationError(f"unknown domain {config.get('domain')!r}")
    return star_domain()


def _outpath(config, name):
    outdir = config.get("outdir", ".")
    os.makedirs(outdir, exist_ok=True)
    return os.path.join(outdir, name)


def cmd_nodes(config):
    started = time.time()
    domain = _domain(config)
    ps = generate_nodes(domain, config["h"], seed=config.get("seed", 0))
    if config.get("perturb", 0.0) > 0.0:
        ps = perturb_nodes(ps, config["perturb"], seed=config.get("seed", 0))
    out = config.get("out") or _outpath(config, "X.csv")
    write_nodes_csv(out, ps)
    outputs = [out]
    if config.get("out_eval"):
        ev = generate_evaluation_set(domain, config["h"], config.get("q", 1),
                                     seed=config.get("seed", 0) + 1, nodes=ps)
        write_nodes_csv(config["out_eval"], ev)
        outputs.append(config["out_eval"])
    if config.get("out_edges"):
        write_edges_csv(config["out_edges"], build_voronoi(ps, domain))
        outputs.append(config["out_edges"])
    write_manifest(out + ".manifest.json", "nodes", config, outputs, started)
    print(f"N={ps.n} boundary={len(ps.boundary_indices())} -> {out}")
    return 0


def _build_from_config(config):
    domain = _domain(config)
    return adv.build_semidiscrete(
        config["method"], domain, config["h"], config.get("q", 1),
        config["p"], n=config.get("n"), penalty=config.get("penalty", False),
        seed=config.get("seed", 0), perturb=config.get("perturb", 0.0))


def cmd_solve(config):
    started = time.time()
    for key in ("method", "h", "p", "cfl", "t_final"):
        if key not in config:
            raise ConfigurationError(f"solve config is missing {key!r}")
    system = _build_from_config(config)
    u0 = adv.initial_condition(system.nodes.points)
    cfg = adv.SolveConfig(cfl=config["cfl"], t_final=config["t_final"])
    u, trace = adv.rk4_advance(system, u0, cfg)

    energy_path = _outpath(config, "energy.csv")
    stride = max(1, int(np.ceil(len(trace.times) / 2000)))
    idx = np.arange(0, len(trace.times), stride)
    if idx[-1] != len(trace.times) - 1:
        idx = np.append(idx, len(trace.times) - 1)
    write_csv(energy_path, "t,ratio",
              [(float(trace.times[i]), float(trace.ratios[i])) for i in idx])

    solution_path = _outpath(config, "solution.csv")
    u_y = system.evaluate_solution(u)
    write_csv(solution_path, "x,y,u",
              [(float(x), float(y), float(v))
               for (x, y), v in zip(system.eval_points.points, u_y)])
    manifest = _outpath(config, "manifest.json")
    write_manifest(manifest, "solve", config, [energy_path, solution_path],
                   started)
    print(f"t_final={config['t_final']} energy_ratio={trace.final_ratio:.6g} "
          f"-> {solution_path}")
    return 0


def cmd_spectrum(config):
    started = time.time()
    for key in ("method", "h", "p", "q", "cfl"):
        if key not in config:
            raise ConfigurationError(f"spectrum run is missing {key!r}")
    system = _build_from_config(config)
    t_star = config.get("t_star", 0.0)
    A, _ = ana.ode_matrix(system, t_star=t_star)
    dt = adv.timestep(config["cfl"], config["h"], system.velocity, t_star)
    report = ana.spectrum(A, dt)

    csv_path = _outpath(config, "spectrum.csv")
    write_csv(csv_path, "re,im,stable",
              [(float(l.real), float(l.imag), int(s))
               for l, s in zip(report.eigenvalues, report.stable)])
    svg_path = _outpath(config, "spectrum.svg")
    write_spectrum_svg(svg_path, report)
    write_manifest(_outpath(config, "spectrum.manifest.json"), "spectrum",
                   config, [csv_path, svg_path], started)
    print(f"eigenvalues={report.n_total} unstable={report.n_unstable}")
    return 0


def cmd_converge(config):
    started = time.time()
    for key in ("method", "p_values", "h_values", "q", "cfl", "t_final"):
        if key not in config:
            raise ConfigurationError(f"convergence run is missing {key!r}")
    tables = ana.convergence_study(
        config["method"], _domain(config), config["p_values"],
        config["h_values"], config["q"], config["cfl"], config["t_final"],
        penalty=config.get("penalty", False), n=config.get("n"),
        seed=config.get("seed", 0))
    csv_path = _outpath(config, "convergence.csv")
    rows = []
    for p, tab in tables.items():
        for i, h in enumerate(tab.h_values):
            rows.append((p, float(h), int(tab.n_values[i]),
                         float(tab.errors[i, 0]), float(tab.errors[i, 1]),
                         float(tab.errors[i, 2])))
    write_csv(csv_path, "p,h,N,err1,err2,errinf", rows)
    write_manifest(_outpath(config, "convergence.manifest.json"), "converge",
                   config, [csv_path], started)
    for p, tab in tables.items():
        print(f"p={p} slope2={tab.slopes[2]:.3f} r2={tab.r2[2]:.3f}")
    return 0


def cmd_quadrature(config):
    started = time.time()
    report = ana.quadrature_study(
        _domain(config), integrands=config.get("integrands"),
        kinds=config.get("kinds"), h_y_values=config.get("h_y_values"),
        seed=config.get("seed", 0))
    csv_path = _outpath(config, "quadrature.csv")
    rows = []
    for (name, kind), entry in report.entries.items():
        for h_y, err in zip(entry["h_y"], entry["errors"]):
            rows.append((name, kind, float(h_y), float(err)))
    write_csv(csv_path, "integrand,kind,h_y,error", rows)
    write_manifest(_outpath(config, "quadrature.manifest.json"), "quadrature",
                   config, [csv_path], started)
    for (name, kind), entry in report.entries.items():
        print(f"{name} {kind} slope={entry['slope']:.3f} r2={entry['r2']:.3f}")
    return 0


def cmd_jumps1d(config):
    started = time.time()
    for key in ("p", "N", "n"):
        if key not in config:
            raise ConfigurationError(f"jumps1d run is missing {key!r}")
    jump = jump_magnitude_1d(config["N"], config["n"], config["p"])
    csv_path = _outpath(config, "jumps1d.csv")
    write_csv(csv_path, "N,n,p,max_jump",
              [(config["N"], config["n"], config["p"], float(jump))])
    write_manifest(_outpath(config, "jumps1d.manifest.json"), "jumps1d",
                   config, [csv_path], started)
    print(f"N={config['N']} n={config['n']} p={config['p']} "
          f"max_jump={jump:.6e}")
    return 0


def cmd_maxcfl(config):
    started = time.time()
    for key in ("method", "h", "p"):
        if key not in config:
            raise ConfigurationError(f"maxcfl run is missing {key!r}")
    domain = _domain(config)
    q_values = config.get("q_values") or [config.get("q", 1)]
    nodes = generate_nodes(domain, config["h"], seed=config.get("seed", 0))
    if config.get("perturb", 0.0) > 0.0:
        nodes = perturb_nodes(nodes, config["perturb"],
                              seed=config.get("seed", 0))
    rows = []
    for q in q_values:
        res = ana.max_cfl_search(
            config["method"], domain, config["h"], config["p"], q,
            n=config.get("n"), penalty=config.get("penalty", False),
            seed=config.get("seed", 0), nodes=nodes)
        rows.append((int(q), float(res.cfl), int(res.stable)))
        print(f"q={q} max_cfl={res.cfl:.6g}")
    csv_path = _outpath(config, "maxcfl.csv")
    write_csv(csv_path, "q,max_cfl,stable", rows)
    write_manifest(_outpath(config, "maxcfl.manifest.json"), "maxcfl",
                   config, [csv_path], started)
    return 0


def cmd_rerun(config):
    with open(config["manifest"], "r", encoding="ascii") as fh:
        doc = json.load(fh)
    sub = doc.get("subcommand")
    if sub not in _DISPATCH or sub == "rerun":
        raise ConfigurationError(f"manifest has unknown subcommand {sub!r}")
    return _DISPATCH[sub](doc["config"])


_DISPATCH = {
    "nodes": cmd_nodes,
    "solve": cmd_solve,
    "spectrum": cmd_spectrum,
    "converge": cmd_converge,
    "quadrature": cmd_quadrature,
    "jumps1d": cmd_jumps1d,
    "maxcfl": cmd_maxcfl,
    "rerun": cmd_rerun,
}


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def _float_list(text):
    return [float(v) for v in text.split(",") if v]


def _int_list(text):
    return [int(v) for v in text.split(",") if v]


def _str_list(text):
    return [v for v in text.split(",") if v]


def build_parser():
    parser = argparse.ArgumentParser(
        prog="rbflab",
        description="Meshfree RBF discretizations of 2D linear advection")
    parser.add_argument("--version", action="version", version=__version__)
    subs = parser.add_subparsers(dest="subcommand", required=True)

    def common(sp):
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--outdir", default=".")

    sp = subs.add_parser("nodes", help="generate node/evaluation point sets")
    sp.add_argument("--domain", default="star")
    sp.add_argument("--h", type=float, required=True)
    sp.add_argument("--q", type=int, default=1)
    sp.add_argument("--perturb", type=float, default=0.0)
    sp.add_argument("--out", default=None)
    sp.add_argument("--out-eval", dest="out_eval", default=None)
    sp.add_argument("--out-edges", dest="out_edges", default=None)
    common(sp)

    sp = subs.add_parser("solve", help="run a simulation from a JSON config")
    sp.add_argument("--config", required=True)
    common(sp)

    sp = subs.add_parser("spectrum", help="eigenvalue spectrum of one system")
    sp.add_argument("--method", required=True, choices=("kansa", "pum", "fd"))
    sp.add_argument("--h", type=float, required=True)
    sp.add_argument("--p", type=int, required=True)
    sp.add_argument("--n", type=int, default=None)
    sp.add_argument("--q", type=int, required=True)
    sp.add_argument("--cfl", type=float, required=True)
    sp.add_argument("--penalty", action="store_true")
    sp.add_argument("--perturb", type=float, default=0.0)
    sp.add_argument("--t-star", dest="t_star", type=float, default=0.0)
    common(sp)

    sp = subs.add_parser("converge", help="error convergence over an h sweep")
    sp.add_argument("--method", required=True, choices=("kansa", "pum", "fd"))
    sp.add_argument("--p", dest="p_values", type=_int_list, required=True)
    sp.add_argument("--h-list", dest="h_values", type=_float_list,
                    required=True)
    sp.add_argument("--q", type=int, required=True)
    sp.add_argument("--n", type=int, default=None)
    sp.add_argument("--cfl", type=float, required=True)
    sp.add_argument("--t-final", dest="t_final", type=float, required=True)
    sp.add_argument("--penalty", action="store_true")
    common(sp)

    sp = subs.add_parser("quadrature", help="integration error study")
    sp.add_argument("--kind", dest="kinds", type=_str_list, default=None)
    sp.add_argument("--f", dest="integrands", type=_str_list, default=None)
    sp.add_argument("--h-list", dest="h_y_values", type=_float_list,
                    default=None)
    common(sp)

    sp = subs.add_parser("jumps1d", help="1D cardinal-function jump study")
    sp.add_argument("--p", type=int, required=True)
    sp.add_argument("--N", type=int, required=True)
    sp.add_argument("--n", type=int, required=True)
    common(sp)

    sp = subs.add_parser("maxcfl", help="largest stable CFL search")
    sp.add_argument("--method", required=True, choices=("kansa", "pum", "fd"))
    sp.add_argument("--h", type=float, required=True)
    sp.add_argument("--p", type=int, required=True)
    sp.add_argument("--n", type=int, default=None)
    sp.add_argument("--q", type=int, default=1)
    sp.add_argument("--q-list", dest="q_values", type=_int_list, default=None)
    sp.add_argument("--penalty", action="store_true")
    sp.add_argument("--perturb", type=float, default=0.0)
    common(sp)

    sp = subs.add_parser("rerun", help="re-execute a run manifest")
    sp.add_argument("manifest")

    return parser


def _setup_logging():
    level = os.environ.get("RBF_LOG", "error").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO,
              "debug": logging.DEBUG}
    if level not in levels:
        raise ConfigurationError(
            f"RBF_LOG must be one of error/info/debug, got {level!r}")
    logging.basicConfig(level=levels[level],
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv=None):
    try:
        _setup_logging()
        args = build_parser().parse_args(argv)
        config = {k: v for k, v in vars(args).items()
                  if k != "subcommand" and v is not None}
        if args.subcommand == "solve":
            with open(args.config, "r", encoding="ascii") as fh:
                loaded = json.load(fh)
            loaded.setdefault("outdir", args.outdir)
            loaded.setdefault("seed", loaded.get("seed", args.seed))
            config = loaded
        return _DISPATCH[args.subcommand](config)
    except (ConfigurationError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (NumericalError, RbfLabError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
