"""Command-line front end.

Subcommands: ``approx``, ``simulate``, ``learn``, ``sos``, ``estimate``,
``export-sdp`` and ``plot``. Exit status is 0 on success, 1 on a domain error
and 2 on a usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from . import gp, roa, sim, sos
from .cheb import approximate_system
from .config import ConfigError, RunConfig, load_config
from .errors import BcroaError
from .exprlang import is_zero_expr, load_system
from .poly import Polynomial
from .sdp import write_sdpa

log = logging.getLogger("bcroa")


def _floats(text: str) -> list[float]:
    try:
        return [float(t) for t in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected numbers, got {text!r}") from None


def _dump(obj, path) -> None:
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(roa.jsonable(obj), fh, sort_keys=True, indent=2)
        fh.write("\n")


def _run_config(args, **extra) -> RunConfig:
    """Resolve config file, then explicit flags, into one RunConfig."""
    over = {k: v for k, v in extra.items() if v is not None}
    cfg = load_config(getattr(args, "config", None), **over)
    return cfg.validate()


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bcroa", description="Barrier-certified region-of-attraction estimation")
    p.add_argument("-v", "--verbose", action="store_true")
    p.add_argument("--jobs", type=int, default=1, help="worker count (accepted for compatibility; runs serially)")
    sub = p.add_subparsers(dest="cmd", metavar="subcommand")
    sub.required = True

    def common(sp, system_required=True):
        sp.add_argument("--system", required=system_required, help="system definition file")
        sp.add_argument("--config", help="key = value configuration file")
        sp.add_argument("--out", default=None, help="output path or directory")

    a = sub.add_parser("approx", help="Chebyshev preprocessing of the non-polynomial terms")
    common(a)
    a.add_argument("--degree", type=int, default=None)

    s = sub.add_parser("simulate", help="integrate the true system and write a trajectory CSV")
    common(s)
    s.add_argument("--x0", nargs="+", required=True, help="initial state, e.g. --x0 -0.05 -0.05")
    s.add_argument("--T", type=float, default=None)
    s.add_argument("--dt", type=float, default=None)
    s.add_argument("--measure", action="store_true", help="also write the measurement dataset CSV")
    s.add_argument("--seed", type=int, default=None)

    l = sub.add_parser("learn", help="fit the GP residual model to a dataset CSV")
    common(l)
    l.add_argument("--data", required=True)
    l.add_argument("--mean-degree", type=int, default=None)
    l.add_argument("--signal-variance", type=float, default=None)
    l.add_argument("--length-scale", type=float, default=None)

    o = sub.add_parser("sos", help="steps 1-3 on a polynomial-only system")
    common(o)
    o.add_argument("--V", default=None)
    o.add_argument("--barrier-degree", type=int, default=None)
    o.add_argument("--mult-degree", type=int, default=None)
    o.add_argument("--c-max", type=float, default=None)
    o.add_argument("--eps", type=float, default=None)
    o.add_argument("--max-rounds", type=int, default=None)

    e = sub.add_parser("estimate", help="run the episode loop")
    common(e, system_required=False)
    e.add_argument("--episodes", type=int, default=None)
    e.add_argument("--seed", type=int, default=None)
    e.add_argument("--V", default=None)

    x = sub.add_parser("export-sdp", help="write the step-1 SDP at a fixed level c in SDPA format")
    common(x)
    x.add_argument("--V", default=None)
    x.add_argument("--c", type=float, required=True)
    x.add_argument("--mult-degree", type=int, default=None)

    pl = sub.add_parser("plot", help="regenerate plot data (contour CSVs) from a report")
    pl.add_argument("--report", required=True, help="report.json written by estimate")
    pl.add_argument("--out", default=None)
    pl.add_argument("--resolution", type=int, default=None)
    return p


class _Usage(Exception):
    pass


def cmd_approx(args) -> int:
    cfg = _run_config(args, system=args.system, cheb_degree=args.degree)
    s = load_system(cfg.system)
    ap = approximate_system(s, cfg.cheb_degree)
    out = args.out or os.path.join(cfg.output_dir, "approx.json")
    _dump({"config": cfg.to_dict(), "approximation": ap.to_json()}, out)
    for name, p in zip(s.names, ap.polynomial_field()):
        print(f"d{name}/dt = {p.to_text(s.names)}")
    return 0


def cmd_simulate(args) -> int:
    cfg = _run_config(args, system=args.system, horizon=args.T, dt=args.dt, seed=args.seed)
    s = load_system(cfg.system)
    args.x0 = _floats(" ".join(args.x0))
    if len(args.x0) != s.state_dim:
        raise BcroaError(f"--x0 needs {s.state_dim} values")
    traj = sim.integrate(s.true_rhs, args.x0, cfg.horizon, cfg.dt, s.domain)
    out = args.out or os.path.join(cfg.output_dir, "trajectory.csv")
    os.makedirs(os.path.dirname(os.path.abspath(out)), exist_ok=True)
    traj.to_csv(out, s.names)
    if args.measure:
        ap = approximate_system(s, cfg.cheb_degree)
        sigma = cfg.noise_sigma_n if cfg.noise_sigma_n is not None else s.noise_sigma_n
        mb = sim.measure(s, ap, traj, cfg.stride, cfg.seed, sigma)
        gp.save_dataset_csv(gp.Dataset(mb.inputs, mb.targets),
                            os.path.splitext(out)[0] + "_dataset.csv")
    print(f"converged={traj.converged} escaped={traj.escaped} final={traj.states[-1].tolist()}")
    return 0


def cmd_learn(args) -> int:
    cfg = _run_config(args, system=args.system, mean_degree=args.mean_degree,
                      signal_variance=args.signal_variance, length_scale=args.length_scale)
    s = load_system(cfg.system)
    data = gp.load_dataset_csv(args.data, s.state_dim)
    sigma = cfg.noise_sigma_n if cfg.noise_sigma_n is not None else (s.noise_sigma_n or 0.01)
    B = cfg.rkhs_bound_B if cfg.rkhs_bound_B is not None else s.rkhs_bound_cg
    gcfg = gp.GpConfig(cfg.signal_variance, cfg.length_scale, sigma, cfg.prior_weight_variance,
                       cfg.mean_degree, B, include_constant=False, beta=cfg.beta)
    model = gp.fit(data, gcfg, box=s.domain)
    gamma = gp.info_gain(model)
    delta = gp.delta_for_beta(cfg.beta, data.count, gamma, B)
    out = args.out or os.path.join(cfg.output_dir, "gp_model.json")
    doc = model.to_json()
    doc.update({"run_config": cfg.to_dict(), "gamma": gamma, "delta": delta,
                "confidence": None if delta is None else gp.confidence(delta, data.count)})
    _dump(doc, out)
    for p in model.mean_polynomial():
        print(p.to_text(s.names))
    return 0


def _polynomial_xdot(s):
    if not all(is_zero_expr(g) for g in s.g):
        raise BcroaError("the sos subcommand needs a polynomial-only system (g must be empty)")
    return list(s.f)


def cmd_sos(args) -> int:
    cfg = _run_config(args, system=args.system, V=args.V, barrier_degree=args.barrier_degree,
                      mult_degree=args.mult_degree, c_max=args.c_max, eps=args.eps,
                      max_rounds=args.max_rounds)
    s = load_system(cfg.system)
    if not cfg.V:
        raise _Usage("--V is required")
    xdot = _polynomial_xdot(s)
    V = roa.parse_polynomial(cfg.V, s.names)
    s1 = sos.step1_max_sublevel(V, xdot, cfg.mult_degree, cfg.c_max, cfg.step1_tol)
    h0 = Polynomial.constant(s1.c_star, s.state_dim) - V
    alt = sos.alternate(V, xdot, h0, cfg.barrier_degree, cfg.mult_degree, cfg.eps, cfg.max_rounds,
                        cfg.origin_margin, cfg.trace_cap, s1.c_star if cfg.contain else None)
    val = roa.validate_certificate(alt.h, xdot, V, s.domain, cfg.validation_grid, s1.c_star)
    out = args.out or os.path.join(cfg.output_dir, "sos_certificate.json")
    _dump({"config": cfg.to_dict(), "c_star": s1.c_star, "multiplier_degree": s1.multiplier_degree,
           "step1_verified": s1.verified, "step1_certificate": s1.certificate.to_json(),
           "probes": s1.probes, "h": alt.h.to_text(s.names), "h_json": alt.h.to_json(),
           "rounds": alt.rounds, "trace_history": alt.trace_history, "stop_reason": alt.stop_reason,
           "audit": alt.certificates, "validation": val.to_json(),
           "L1": alt.L1.to_json() if alt.L1 else None, "L2": alt.L2.to_json() if alt.L2 else None}, out)
    print(f"c* = {s1.c_star:.6g}")
    print(f"h* = {alt.h.to_text(s.names)}")
    print(f"rounds={alt.rounds} stop={alt.stop_reason} violations={val.violations}")
    return 0


def cmd_estimate(args) -> int:
    cfg = _run_config(args, system=args.system, episodes=args.episodes, seed=args.seed,
                      V=args.V, jobs=args.jobs if args.jobs != 1 else None)
    if not cfg.system:
        raise _Usage("--system (or a config naming one) is required")
    if not cfg.V:
        raise _Usage("--V (or V in the config) is required")
    out = args.out or cfg.output_dir
    report = roa.run_from_config(cfg, out)
    print(f"episodes={len(report.estimates)} stop={report.stop_reason}")
    for e in report.estimates:
        print(f"  episode {e.episode}: c*={e.c_star:.4g} area={e.validation.area:.4g} "
              f"violations={e.validation.violations} n={e.n} delta={e.delta}")
    print(f"union_bound={report.union_bound} intersection_bound={report.intersection_bound}")
    print(f"report: {os.path.join(out, 'report.json')}")
    return 0 if report.estimates or cfg.episodes == 0 else 1


def cmd_export_sdp(args) -> int:
    cfg = _run_config(args, system=args.system, V=args.V, mult_degree=args.mult_degree)
    s = load_system(cfg.system)
    if not cfg.V:
        raise _Usage("--V is required")
    xdot = _polynomial_xdot(s)
    V = roa.parse_polynomial(cfg.V, s.names)
    deg = sos.multiplier_degree(cfg.mult_degree, V.degree, sos.lie(V, xdot).degree)
    prog = sos.step1_program(V, xdot, args.c, deg)
    out = args.out or os.path.join(cfg.output_dir, "step1.dat-s")
    os.makedirs(os.path.dirname(os.path.abspath(out)), exist_ok=True)
    p = prog.compile()
    write_sdpa(p, out)
    print(f"wrote {out}: m={p.m} blocks={list(p.block_sizes)}")
    return 0


def cmd_plot(args) -> int:
    with open(args.report, encoding="utf-8") as fh:
        rep = json.load(fh)
    cfg = RunConfig(**rep["config"])
    s = load_system(cfg.system)
    out = args.out or os.path.dirname(os.path.abspath(args.report))
    os.makedirs(out, exist_ok=True)
    res = args.resolution or cfg.validation_grid or roa.default_resolution(s.state_dim)
    V = roa.parse_polynomial(cfg.V, s.names)
    written = []
    for est in rep["R"]:
        h = Polynomial.from_json(est["h_json"])
        path = os.path.join(out, f"contour_h_{est['episode']:02d}.csv")
        roa._write_region_contours(path, h, s.domain, res, s.names)
        written.append(path)
    path = os.path.join(out, "contour_lcroa.csv")
    roa._write_region_contours(path, Polynomial.constant(cfg.c0, V.dim) - V, s.domain, res, s.names)
    written.append(path)
    for w in written:
        print(w)
    return 0


COMMANDS = {"approx": cmd_approx, "simulate": cmd_simulate, "learn": cmd_learn, "sos": cmd_sos,
            "estimate": cmd_estimate, "export-sdp": cmd_export_sdp, "plot": cmd_plot}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.cmd](args)
    except _Usage as exc:
        parser.print_usage(sys.stderr)
        print(f"bcroa {args.cmd}: error: {exc}", file=sys.stderr)
        return 2
    except ConfigError as exc:
        print(f"bcroa {args.cmd}: configuration error: {exc}", file=sys.stderr)
        return 2
    except (BcroaError, OSError) as exc:
        print(f"bcroa {args.cmd}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
