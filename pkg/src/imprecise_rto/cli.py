"""Command line interface: ``rto <subcommand> CONFIG [options]``.

Exit codes: 0 success, 1 other package error, 2 configuration or input
error, 3 numerical failure, 4 optimization did not converge, 5 structural
(singular) problem.
"""
from __future__ import annotations

import argparse
import contextlib
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .config import RunConfig, load_config
from .errors import ConfigError, InvalidInputError, NumericalError, RTOError, StructuralError
from .optimizer import CONVERGED, Problem, run_rto
from .outputs import (read_density_csv, write_bounds_report, write_density_outputs,
                      write_distribution_envelopes, write_history, write_manifest)
from .verification import superposition_vs_direct

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_NOT_CONVERGED = 4
EXIT_STRUCTURAL = 5

THREADS_ENV = "RTO_NUM_THREADS"

log = logging.getLogger("imprecise_rto")


def _thread_limit():
    n = os.environ.get(THREADS_ENV)
    if not n:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=int(n))


def _load(args) -> RunConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_changes(run={"seed": args.seed})
    if getattr(args, "max_iter", None) is not None:
        cfg = cfg.with_changes(optimizer={"max_iter": args.max_iter})
    return cfg


def _out_dir(args, cfg: RunConfig) -> Path:
    out = Path(args.out) if args.out else Path(cfg.output.directory)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _design(args, prob: Problem) -> np.ndarray:
    if getattr(args, "density", None):
        rho = read_density_csv(args.density)
        if rho.size != prob.mesh.n_elem:
            raise InvalidInputError(
                f"density file has {rho.size} values, mesh has {prob.mesh.n_elem}")
        return rho
    return np.full(prob.mesh.n_elem, prob.cfg.optimizer.volfrac)


def cmd_optimize(args) -> int:
    cfg = _load(args)
    out = _out_dir(args, cfg)
    seed = cfg.run.seed

    def progress(rec, state):
        log.info("iter %4d  J [%.6g, %.6g]  vol %.4f  change %.4f", rec.iter, rec.J_lo,
                 rec.J_hi, rec.volfrac, rec.max_change)

    state, bounds, arts = run_rto(cfg, callback=progress)
    files = [out / "config_resolved.cfg"]
    files[0].write_text(cfg.echo(), encoding="utf-8")
    files += list(write_density_outputs(state.rho_phys, arts.mesh.nx, arts.mesh.ny,
                                        out / "density", cfg.hash, seed))
    files.append(write_history(state.history, out / "history.csv"))
    files.append(write_bounds_report(bounds, out / "bounds.txt",
                                     {"status": state.status, "iterations": state.iter,
                                      "config_sha256": cfg.hash, "seed": seed}))
    if cfg.output.envelopes:
        o = cfg.objective
        write_distribution_envelopes(arts.ref, arts.pbox, o.beta, cfg.output.envelope_samples,
                                     seed, out / "envelopes.csv", cfg.output.envelope_grid,
                                     o.variance_mode)
        files.append(out / "envelopes.csv")
    write_manifest(out, cfg.hash, seed, files,
                   {"status": state.status, "iterations": state.iter})
    print(f"{state.status} after {state.iter} iterations; J in [{bounds.obj_lo:.6g}, "
          f"{bounds.obj_hi:.6g}]; outputs in {out}")
    return EXIT_OK if state.status == CONVERGED else EXIT_NOT_CONVERGED


def cmd_bounds(args) -> int:
    cfg = _load(args)
    if args.engine:
        cfg = cfg.with_changes(bounds={"engine": args.engine})
    prob = Problem(cfg)
    an = prob.analyze(_design(args, prob))
    out = _out_dir(args, cfg)
    write_bounds_report(an.bounds, out / "bounds.txt",
                        {"config_sha256": cfg.hash, "seed": cfg.run.seed})
    for q in ("mean", "std", "obj"):
        lo, hi = an.bounds.interval(q)
        print(f"{q:5s} [{lo:.10g}, {hi:.10g}]")
    return EXIT_OK


def cmd_field(args) -> int:
    cfg = _load(args)
    prob = Problem(cfg)
    if prob.basis is None:
        raise ConfigError("uncertainty.M: field realizations need M >= 1")
    rng = np.random.default_rng(cfg.run.seed)
    xs = np.linspace(-prob.basis.a, prob.basis.a, args.points)
    xi = rng.standard_normal((args.n, prob.basis.M))
    modes = np.sqrt(prob.basis.lambdas)[:, None] * prob.basis.eigenfunctions(xs)
    values = cfg.nominal_mean() + xi @ modes
    out = _out_dir(args, cfg)
    path = out / "field.csv"
    with path.open("w", encoding="ascii") as fh:
        fh.write(",".join(["x"] + [f"r{i}" for i in range(args.n)]) + "\n")
        for j, x in enumerate(xs):
            fh.write(",".join([repr(float(x))] + [repr(float(v)) for v in values[:, j]]) + "\n")
    write_manifest(out, cfg.hash, cfg.run.seed, [path])
    print(f"{args.n} realizations with M={prob.basis.M} written to {path}")
    return EXIT_OK


def cmd_monotonicity(args) -> int:
    from .bounds import monotonicity_report

    cfg = _load(args)
    prob = Problem(cfg)
    an = prob.analyze(_design(args, prob))
    o = cfg.objective
    rep = monotonicity_report(an.ref, prob.pbox, args.points, o.variance_mode, o.beta)
    out = _out_dir(args, cfg)
    lines = ["input,output,sign,min_slope,max_slope"]
    for (inp, outp), sign in rep.signs.items():
        s = rep.slopes[(inp, outp)]
        sign_txt = "mixed" if sign is None else sign
        lines.append(f"{inp},{outp},{sign_txt},{float(s.min())!r},{float(s.max())!r}")
    (out / "monotonicity.csv").write_text("\n".join(lines) + "\n", encoding="ascii")
    print("\n".join(lines))
    print("all monotone" if rep.all_monotone else "NOT monotone: corner enumeration unjustified")
    return EXIT_OK


def cmd_verify(args) -> int:
    cfg = _load(args)
    prob = Problem(cfg)
    rho = _design(args, prob)
    u = cfg.uncertainty
    M = prob.basis.M if prob.basis is not None else 0
    if M < 1:
        raise ConfigError("uncertainty.M: verification needs M >= 1")
    bnd = prob.analyze(rho).bounds
    out = _out_dir(args, cfg)
    rows = ["corner,mu,sigma,ks_distance,distribution_error,relative_error"]
    for name, (mu, sigma) in (("lower", bnd.argmin["obj"]), ("upper", bnd.argmax["obj"])):
        r = superposition_vs_direct(prob.mesh, prob.params, rho, mu, sigma,
                                    u.correlation_length, M, args.n, cfg.run.seed, args.m_direct)
        rows.append(f"{name},{mu!r},{sigma!r},{r.ks_distance!r},{r.distribution_error!r},"
                    f"{r.relative_error!r}")
    (out / "verify.csv").write_text("\n".join(rows) + "\n", encoding="ascii")
    print("\n".join(rows))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rto", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log every iteration")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("config", help="config file or bundled name (e.g. carrier_plate_desk)")
        sp.add_argument("--seed", type=int, default=None, help="override run.seed")
        sp.add_argument("--out", default=None, help="output directory")

    sp = sub.add_parser("optimize", help="run the full optimization")
    common(sp)
    sp.add_argument("--max-iter", type=int, default=None)
    sp.set_defaults(func=cmd_optimize)

    sp = sub.add_parser("bounds", help="moment bounds of a fixed design")
    common(sp)
    sp.add_argument("--density", help="density CSV written by optimize (default: uniform)")
    sp.add_argument("--engine", choices=("CA", "QMCS", "PSO"))
    sp.set_defaults(func=cmd_bounds)

    sp = sub.add_parser("field", help="write random field realizations")
    common(sp)
    sp.add_argument("--n", type=int, default=10)
    sp.add_argument("--points", type=int, default=201)
    sp.set_defaults(func=cmd_field)

    sp = sub.add_parser("monotonicity", help="slope-sign report over the p-box")
    common(sp)
    sp.add_argument("--density")
    sp.add_argument("--points", type=int, default=21)
    sp.set_defaults(func=cmd_monotonicity)

    sp = sub.add_parser("verify", help="superposition versus direct field realizations")
    common(sp)
    sp.add_argument("--density")
    sp.add_argument("--n", type=int, default=1000)
    sp.add_argument("--m-direct", type=int, default=1000)
    sp.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        with _thread_limit():
            return args.func(args)
    except (ConfigError, InvalidInputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except StructuralError as exc:
        print(f"structural error: {exc}", file=sys.stderr)
        return EXIT_STRUCTURAL
    except RTOError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
