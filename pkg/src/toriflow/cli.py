"""Command line driver.

Commands: seed, refine, continue, observe, export-surface, diagnose,
index.  Configuration comes from a key=value file (the TORIFLOW_CONFIG
environment variable supplies a default path) with command line flags
winning over file values.  Exit codes: 0 success, 2 configuration error,
3 numerical failure, 4 I/O or record failure.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import figures
from .config import ENV_CONFIG, RunConfig, load_config
from .continuation import run_family
from .errors import (ConfigError, NumericalError, PersistenceError,
                     ToriflowError)
from .flow import flow_grid, flow_with_jacobian
from .frame import build_frame
from .newton import (action_average_slope, bundle_error, refine, torus_error)
from .observables import globalize_surface, observe
from .persistence import (family_index, read_record, record_from_state,
                          record_path, state_from_record, write_index,
                          write_record)
from .seeds import (lyapunov_po_with_rotation, poincare_to_flowmap,
                    read_poincare_file, seed_from_po)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4


def _add_config_overrides(parser: argparse.ArgumentParser, keys) -> None:
    for key in keys:
        flag = "--" + key.replace("_", "-")
        parser.add_argument(flag, dest=key, default=None)


_COMMON_KEYS = ("mu", "m", "N", "workers", "chunk", "epsilon", "epsilon_w",
                "abs_tol", "rel_tol", "divisor_floor", "out_dir")
_CONT_KEYS = ("alpha0", "alpha_min", "epsilon1", "epsilon2", "n_des",
              "n_alpha", "N_min", "N_max", "max_tori", "calabi_floor",
              "calabi_arm", "nobilize_tol")


def _coerced_overrides(args, keys) -> dict:
    from .config import _convert
    out = {}
    for key in keys:
        raw = getattr(args, key, None)
        if raw is not None:
            out[key] = _convert(key, str(raw))
    return out


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="toriflow",
        description="Computation and continuation of partially hyperbolic "
                    "invariant tori of the spatial RTBP via flow maps.")
    ap.add_argument("-c", "--config", default=None,
                    help=f"key=value config file (default: ${ENV_CONFIG})")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("seed", help="seed and refine a first torus")
    p.add_argument("--family", choices=("vertical", "planar"), default=None)
    p.add_argument("--rho", type=float, default=None,
                   help="target rotation number of the generator")
    p.add_argument("--amp", dest="amplitude", type=float, default=None)
    p.add_argument("--from-poincare", default=None, metavar="FILE",
                   help="build the seed from Poincare-map torus data")
    p.add_argument("-o", "--out", default=None, help="family directory")
    p.add_argument("--dry-run", action="store_true",
                   help="validate the configuration and exit")
    _add_config_overrides(p, _COMMON_KEYS)

    p = sub.add_parser("refine", help="re-refine a stored record")
    p.add_argument("record")
    p.add_argument("-o", "--out", default=None, help="output record path")
    p.add_argument("--mode", choices=("isochronous", "isoenergetic"),
                   default="isoenergetic")
    _add_config_overrides(p, _COMMON_KEYS)

    p = sub.add_parser("continue", help="continue a family from its last record")
    p.add_argument("directory")
    p.add_argument("--tag", choices=("T", "h", "omega"), default="T")
    p.add_argument("--steps", type=int, default=None,
                   help="number of new tori (defaults to max_tori)")
    p.add_argument("--resume", action="store_true",
                   help="explicit resume (continuing is always resumable)")
    _add_config_overrides(p, _COMMON_KEYS + _CONT_KEYS)

    p = sub.add_parser("observe", help="report observables of one record")
    p.add_argument("record")
    p.add_argument("-o", "--out", default=None, help="output .tsv path")
    p.add_argument("--figures", dest="fig", action="store_true", default=None)
    p.add_argument("--no-figures", dest="fig", action="store_false")
    _add_config_overrides(p, _COMMON_KEYS)

    p = sub.add_parser("export-surface", help="sample and export the 2D torus")
    p.add_argument("record")
    p.add_argument("--n1", type=int, default=128)
    p.add_argument("--n2", type=int, default=128)
    p.add_argument("-o", "--out", default=None, help="output surface file")
    p.add_argument("--figures", dest="fig", action="store_true", default=None)
    p.add_argument("--no-figures", dest="fig", action="store_false")
    _add_config_overrides(p, _COMMON_KEYS)

    p = sub.add_parser("diagnose", help="numerical diagnostics of one record")
    p.add_argument("record")
    p.add_argument("--check", choices=("appendixB", "twist", "frame"),
                   required=True)
    _add_config_overrides(p, _COMMON_KEYS)

    p = sub.add_parser("index", help="regenerate a family index")
    p.add_argument("directory")
    p.add_argument("--figures", dest="fig", action="store_true", default=None)
    p.add_argument("--no-figures", dest="fig", action="store_false")
    _add_config_overrides(p, _COMMON_KEYS)
    return ap


def _config_for(args, extra_keys=()) -> RunConfig:
    overrides = _coerced_overrides(args, _COMMON_KEYS + tuple(extra_keys))
    for attr, key in (("family", "family"), ("amplitude", "amplitude")):
        val = getattr(args, attr, None)
        if val is not None:
            overrides[key] = val
    if getattr(args, "rho", None) is not None:
        overrides["rho"] = args.rho
    if getattr(args, "fig", None) is not None:
        overrides["figures"] = args.fig
    return load_config(args.config, overrides)


def _family_sink(cfg: RunConfig, model, directory):
    os.makedirs(directory, exist_ok=True)

    def sink(state, info):
        frame = build_frame(model, state, integrator=cfg.integrator(),
                            divisor_floor=cfg.divisor_floor,
                            workers=cfg.workers, chunk=cfg.chunk)
        obs = observe(model, state, frame, cfg.integrator(),
                      workers=cfg.workers)
        rec = record_from_state(state, err=info["err"], err_w=info["err_w"],
                                observables=obs, seq=info["seq"],
                                parent_seq=info["parent_seq"],
                                tag=info["tag"], family=f"rho={state.omega:.10g}",
                                alpha_used=info["alpha_used"],
                                alpha_next=info["alpha_next"],
                                n_it=info["n_it"])
        write_record(rec, record_path(directory, info["seq"]))
        write_index(directory)
    return sink


def cmd_seed(args) -> int:
    cfg = _config_for(args)
    if args.dry_run:
        print("configuration ok")
        return EXIT_OK
    model = cfg.model()
    out_dir = args.out or cfg.out_dir
    os.makedirs(out_dir, exist_ok=True)
    ncfg = cfg.newton(mode="isoenergetic")
    if args.from_poincare:
        K_P, T_P, omega = read_poincare_file(args.from_poincare)
        K, T, _tau = poincare_to_flowmap(model, K_P, T_P, omega,
                                         cfg.integrator(), cfg.workers)
        raise ConfigError(
            "seeding a full multiple-shooting state from Poincare data needs "
            "bundle information; use the library API for this workflow")
    po = lyapunov_po_with_rotation(model, cfg.family, cfg.rho,
                                   cfg.integrator())
    state = seed_from_po(model, po, cfg.amplitude, cfg.m, cfg.N,
                         cfg.integrator(), cfg.hyperbolic_delta)
    state, _reports = refine(model, state, ncfg)
    E, err, _ = torus_error(model, state, ncfg)
    frame = build_frame(model, state, integrator=cfg.integrator(),
                        divisor_floor=cfg.divisor_floor, workers=cfg.workers,
                        chunk=cfg.chunk)
    _, err_w = bundle_error(model, state, frame)
    obs = observe(model, state, frame, cfg.integrator(), workers=cfg.workers)
    rec = record_from_state(state, err=err, err_w=err_w, observables=obs,
                            seq=0, parent_seq=-1, tag="seed",
                            family=f"rho={state.omega:.10g}",
                            alpha_used=cfg.alpha0, alpha_next=cfg.alpha0)
    path = record_path(out_dir, 0)
    write_record(rec, path)
    write_index(out_dir)
    print(f"seed torus written to {path}  (err={err:.3e}, err_w={err_w:.3e}, "
          f"T={state.T:.8f}, h={state.h:.8f})")
    return EXIT_OK


def cmd_refine(args) -> int:
    cfg = _config_for(args)
    model = cfg.model()
    rec = read_record(args.record)
    state = state_from_record(rec)
    state, _ = refine(model, state, cfg.newton(mode=args.mode))
    E, err, _ = torus_error(model, state, cfg.newton())
    frame = build_frame(model, state, integrator=cfg.integrator(),
                        divisor_floor=cfg.divisor_floor, workers=cfg.workers,
                        chunk=cfg.chunk)
    _, err_w = bundle_error(model, state, frame)
    obs = observe(model, state, frame, cfg.integrator(), workers=cfg.workers)
    out = args.out or args.record
    new_rec = record_from_state(state, err=err, err_w=err_w, observables=obs,
                                seq=rec.seq, parent_seq=rec.parent_seq,
                                tag=rec.tag, family=rec.family,
                                alpha_used=rec.alpha_used,
                                alpha_next=rec.alpha_next, n_it=rec.n_it)
    write_record(new_rec, out)
    print(f"refined record written to {out}  (err={err:.3e}, err_w={err_w:.3e})")
    return EXIT_OK


def cmd_continue(args) -> int:
    cfg = _config_for(args, _CONT_KEYS)
    model = cfg.model()
    records = family_index(args.directory)
    if not records:
        raise PersistenceError(
            f"{args.directory}: no records to continue from (run seed first)")
    last = records[-1]
    state = state_from_record(last)
    ccfg = cfg.continuation()
    if args.steps is not None:
        from dataclasses import replace as _replace
        ccfg = _replace(ccfg, max_tori=args.steps)
    log = run_family(model, state, ccfg, args.tag,
                     _family_sink(cfg, model, args.directory),
                     alpha=last.alpha_next, start_seq=last.seq + 1,
                     parent_seq=last.seq)
    if cfg.figures:
        figures.family_figure(family_index(args.directory),
                              os.path.join(args.directory, "family.png"))
    print(f"family run stopped: {log.stop_reason} "
          f"({len(log.steps)} new tori)")
    return EXIT_OK


def cmd_observe(args) -> int:
    cfg = _config_for(args)
    model = cfg.model()
    rec = read_record(args.record)
    state = state_from_record(rec)
    frame = build_frame(model, state, integrator=cfg.integrator(),
                        divisor_floor=cfg.divisor_floor, workers=cfg.workers,
                        chunk=cfg.chunk)
    obs = observe(model, state, frame, cfg.integrator(), workers=cfg.workers)
    out = args.out or (os.path.splitext(args.record)[0] + ".obs.tsv")
    with open(out + ".tmp", "w", encoding="ascii") as fh:
        for key, val in sorted(obs.as_dict().items()):
            if isinstance(val, float):
                fh.write(f"{key}\t{val:.17g}\n")
            else:
                fh.write(f"{key}\t{val}\n")
    os.replace(out + ".tmp", out)
    for key, val in sorted(obs.as_dict().items()):
        print(f"{key:>22}: {val}")
    if cfg.figures:
        figures.generator_figure(rec, os.path.splitext(out)[0] + ".png")
    print(f"observables written to {out}")
    return EXIT_OK


def write_surface_file(surface, path) -> None:
    meta = surface.state_meta
    tmp = os.fspath(path) + ".tmp"
    with open(tmp, "w", encoding="ascii") as fh:
        fh.write("surface 1\n")
        fh.write("n1 %d\nn2 %d\nm %d\nN %d\n" % (meta["n1"], meta["n2"],
                                                 meta["m"], meta["N"]))
        fh.write("T %.17g\nomega %.17g\nh %.17g\n" % (meta["T"], meta["omega"],
                                                      meta["h"]))
        fh.write("section points\n")
        for i, t1 in enumerate(surface.theta1):
            for j, t2 in enumerate(surface.theta2):
                x = surface.points[i, j]
                fh.write("%.10g %.10g %.17g %.17g %.17g\n"
                         % (t1, t2, x[0], x[1], x[2]))
        fh.write("section generator1\n")
        for x in surface.generator1:
            fh.write("%.17g %.17g %.17g\n" % (x[0], x[1], x[2]))
        fh.write("section generator2\n")
        for x in surface.generator2:
            fh.write("%.17g %.17g %.17g\n" % (x[0], x[1], x[2]))
    os.replace(tmp, path)


def cmd_export_surface(args) -> int:
    cfg = _config_for(args)
    model = cfg.model()
    rec = read_record(args.record)
    state = state_from_record(rec)
    surface = globalize_surface(model, state, args.n1, args.n2,
                                cfg.integrator(), cfg.workers)
    out = args.out or (os.path.splitext(args.record)[0] + ".surf.txt")
    write_surface_file(surface, out)
    if cfg.figures:
        figures.surface_figure(surface, os.path.splitext(out)[0] + ".png")
    print(f"surface written to {out}")
    return EXIT_OK


def cmd_diagnose(args) -> int:
    cfg = _config_for(args)
    model = cfg.model()
    rec = read_record(args.record)
    state = state_from_record(rec)
    ncfg = cfg.newton()
    if args.check == "appendixB":
        slope, values = action_average_slope(model, state, cfg=ncfg)
        for d, v in zip((1e-3, 1e-4, 1e-5), values):
            print(f"delta = {d:.0e}: |<eta3>| = {v:.6e}")
        print(f"log-log slope: {slope:.3f} (quadratic cancellation ~ 2)")
        return EXIT_OK
    frame = build_frame(model, state, integrator=cfg.integrator(),
                        divisor_floor=cfg.divisor_floor, workers=cfg.workers,
                        chunk=cfg.chunk)
    if args.check == "twist":
        S1m = frame.S1_mean
        n = state.n
        e = np.zeros(n - 1)
        e[-1] = frame.x_scale
        bordered = np.zeros((n, n))
        bordered[: n - 1, : n - 1] = S1m
        bordered[: n - 1, n - 1] = e
        bordered[n - 1, : n - 1] = e
        print(f"det <S1>          : {np.linalg.det(S1m):.6e} "
              f"(cond {np.linalg.cond(S1m):.3e})")
        print(f"bordered det      : {np.linalg.det(bordered):.6e} "
              f"(cond {np.linalg.cond(bordered):.3e})")
        return EXIT_OK
    # frame quality, including the direct full-jacobian reduction oracle
    print(f"torsion asymmetry    : {frame.s1_asymmetry:.3e}")
    print(f"symplecticity defect : {frame.sympl_defect:.3e}")
    print(f"Lagrangian defect    : {frame.lagrangian_defect:.3e}")
    print(f"reduction residual   : {frame.reduction_residual:.3e} (assembled)")
    worst = 0.0
    for i in range(state.m):
        res = flow_grid(model, state.K[i].values.T.copy(), state.T / state.m,
                        cfg.integrator(),
                        columns=np.tile(np.eye(2 * state.n)[None], (state.N, 1, 1)),
                        workers=cfg.workers, chunk=cfg.chunk)
        Dphi = np.swapaxes(res.columns, 1, 2)
        R = np.einsum("nij,njk,nkl->nil", frame.Pinv_shift[i], Dphi, frame.P[i])
        worst = max(worst, float(np.max(np.abs(R - frame.reduced_block(i)))))
    print(f"reduction residual   : {worst:.3e} (direct integration oracle)")
    return EXIT_OK


def cmd_index(args) -> int:
    cfg = _config_for(args)
    records = family_index(args.directory)
    path = write_index(args.directory, records)
    if cfg.figures and records:
        figures.family_figure(records,
                              os.path.join(args.directory, "family.png"))
    print(f"index with {len(records)} records written to {path}")
    return EXIT_OK


_COMMANDS = {
    "seed": cmd_seed,
    "refine": cmd_refine,
    "continue": cmd_continue,
    "observe": cmd_observe,
    "export-surface": cmd_export_surface,
    "diagnose": cmd_diagnose,
    "index": cmd_index,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (PersistenceError, OSError) as exc:
        print(f"i/o failure: {exc}", file=sys.stderr)
        return EXIT_IO
    except ToriflowError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
