"""Batch command-line front end.

One command per invocation; outputs are written atomically together with
a run manifest (``<artifact>.manifest.json``) that records the resolved
parameters, seeds, input checksums and timing needed to reproduce them.

Exit codes: 0 success, 2 constraint failure, 3 solver failure,
4 I/O or schema error.
"""

import argparse
import json
import os
import sys as _sys
import time
import warnings

import numpy as np

from . import __version__, benchmarks, linalg, network, pipeline, plots, serialize
from .errors import (
    DimensionError,
    FixtureError,
    NetredError,
    NetredWarning,
    PoleError,
    SolverError,
    SpectraOverlapError,
    StructureError,
    UnstableMatrixError,
)
from .gradopt import OptimizerConfig

EXIT_OK = 0
EXIT_CONSTRAINT = 2
EXIT_SOLVER = 3
EXIT_IO = 4


def _fail(code, exc):
    doc = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    print(json.dumps(doc), file=_sys.stderr)
    return code


def _int_list(text):
    return [int(tok) for tok in text.split(",") if tok.strip() != ""]


def _float_list(text):
    return [float(tok) for tok in text.split(",") if tok.strip() != ""]


def _neighbor_sets(text):
    return [frozenset(int(v) for v in grp.split(",")) for grp in text.split("|")]


def _range_spec(text):
    if ":" in text:
        lo, hi = text.split(":")
        return list(range(int(lo), int(hi) + 1))
    return _int_list(text)


def _manifest(command, params, seed, inputs, started, status="ok", constraint=None, notes=()):
    return serialize.RunManifest(
        command=command,
        parameters=params,
        seed=seed,
        tool_version=__version__,
        input_checksums={p: serialize.sha256_file(p) for p in inputs},
        wall_seconds=time.perf_counter() - started,
        status=status,
        constraint_summary=constraint,
        notes=list(notes),
    )


# ---------------------------------------------------------------------------
# generate
# ---------------------------------------------------------------------------


def cmd_generate(args):
    started = time.perf_counter()
    if args.kind == "fixture":
        sys_, l = benchmarks.fixture_positive_network()
    elif args.kind == "power":
        if args.areas is None:
            raise DimensionError("--areas is required for the power generator")
        sys_ = benchmarks.generate_power_network(args.areas, seed=args.seed)
    else:
        if args.sizes is None:
            raise DimensionError("--sizes is required for the random-positive generator")
        sizes = _int_list(args.sizes)
        sys_ = benchmarks.generate_random_positive(
            sizes,
            args.m,
            args.p,
            seed=args.seed,
            interval=tuple(_float_list(args.interval)),
            state_neighbors=(_neighbor_sets(args.neighbors) if args.neighbors else None),
            input_neighbors=(
                _neighbor_sets(args.input_neighbors) if args.input_neighbors else None
            ),
        )
    serialize.dump_json(args.out, serialize.system_to_dict(sys_))
    params = {
        "kind": args.kind,
        "areas": args.areas,
        "sizes": args.sizes,
        "m": args.m,
        "p": args.p,
        "interval": args.interval,
        "neighbors": args.neighbors,
        "input_neighbors": args.input_neighbors,
        "out": args.out,
    }
    _manifest("generate", params, args.seed, [], started).write_alongside(args.out)
    print(f"wrote {args.out} ({sys_.n} states, {sys_.m} inputs, {sys_.p} outputs)")
    return EXIT_OK


# ---------------------------------------------------------------------------
# reduce
# ---------------------------------------------------------------------------


def _directions_from_args(args, m, nu):
    if args.L == "file":
        if not args.L_file:
            raise DimensionError("--L file requires --L-file PATH")
        with open(args.L_file, "r", encoding="utf-8") as fh:
            matrix = json.load(fh)
        return pipeline.make_directions("matrix", m, nu, matrix=matrix)
    return pipeline.make_directions(args.L, m, nu)


def cmd_reduce(args):
    started = time.perf_counter()
    sys_ = serialize.load_system(args.system)
    orders = network.ReducedOrders(tuple(_int_list(args.orders)))
    orders.validate_against(sys_.topology)
    l = _directions_from_args(args, sys_.m, orders.nu)
    s_grid = np.diag(_float_list(args.s_grid)) if args.s_grid else None
    if s_grid is not None and s_grid.shape[0] != orders.nu:
        raise DimensionError("--s-grid must list one point per reduced state")
    config = OptimizerConfig(
        epsilon=args.epsilon, max_iter=args.max_iter, stability_margin=args.margin
    )
    result = pipeline.reduce_network(
        sys_,
        l,
        orders,
        method=args.method,
        s_grid=s_grid,
        sdp_tol=args.sdp_tol,
        opt_config=config,
        refine_iters=args.refine_iters,
        refine_scales=tuple(_float_list(args.refine_scales)),
        refine_seed=args.refine_seed,
    )
    report = result.constraint_report
    doc = serialize.reduced_to_dict(
        result.model, h2_error=result.h2_error, constraint_report=report.to_dict()
    )
    serialize.dump_json(args.out, doc)
    params = {
        "system": args.system,
        "method": args.method,
        "orders": args.orders,
        "L": args.L,
        "L_file": args.L_file,
        "s_grid": args.s_grid,
        "sdp_tol": args.sdp_tol,
        "epsilon": args.epsilon,
        "max_iter": args.max_iter,
        "refine_iters": args.refine_iters,
        "refine_scales": args.refine_scales,
        "out": args.out,
    }
    manifest = _manifest(
        "reduce",
        params,
        args.refine_seed,
        [args.system],
        started,
        constraint=report.to_dict(),
        notes=[json.dumps(result.summary(), default=float)],
    )
    manifest.write_alongside(args.out)
    print(
        f"wrote {args.out}: method={args.method} h2_error={result.h2_error:.6g} "
        f"constraint_iv_passed={report.passed}"
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------


def cmd_evaluate(args):
    started = time.perf_counter()
    sys_ = serialize.load_system(args.system)
    red, _, _ = serialize.load_reduced(args.reduced, sys_.topology)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NetredWarning)
        constraints = network.check_problem_constraints(sys_, red)
        moment = network.verify_moment_matching(sys_, red, tol=args.tol)
    report = {
        "h2_error": constraints.h2_error,
        "moment_matching": moment.to_dict(),
        "constraints": constraints.to_dict(),
        "spectra": {
            "network": _complex_list(linalg.spectrum(sys_.a).eigenvalues),
            "reduced_state_map": _complex_list(linalg.spectrum(red.f).eigenvalues),
            "interpolation_matrix": _complex_list(linalg.spectrum(red.s).eigenvalues),
        },
        "hard_constraints_passed": bool(constraints.stable and constraints.structure_ok),
    }
    text = json.dumps(report, indent=1)
    if args.out:
        serialize.atomic_write(args.out, text + "\n")
        _manifest(
            "evaluate",
            {"system": args.system, "reduced": args.reduced, "tol": args.tol, "out": args.out},
            None,
            [args.system, args.reduced],
            started,
            constraint=constraints.to_dict(),
        ).write_alongside(args.out)
    else:
        print(text)
    if not report["hard_constraints_passed"]:
        print(
            json.dumps({"error": "ConstraintFailure", "message": "stability or structure violated",
                        "exit_code": EXIT_CONSTRAINT}),
            file=_sys.stderr,
        )
        return EXIT_CONSTRAINT
    return EXIT_OK


def _complex_list(values):
    return [[float(v.real), float(v.imag)] for v in np.asarray(values)]


# ---------------------------------------------------------------------------
# bode
# ---------------------------------------------------------------------------


def _bode_magnitude(a, b, c, omega):
    mags = []
    skipped = []
    for w in omega:
        try:
            val = network.transfer_eval(a, b, c, 1j * w)
        except PoleError:
            mags.append(None)
            skipped.append(float(w))
            continue
        mags.append(float(np.linalg.svd(np.atleast_2d(val), compute_uv=False)[0]))
    return mags, skipped


def cmd_bode(args):
    started = time.perf_counter()
    sys_ = serialize.load_system(args.system)
    red, _, _ = serialize.load_reduced(args.reduced, sys_.topology)
    if not linalg.is_hurwitz(sys_.a, 0.0) or not linalg.is_hurwitz(red.f, 0.0):
        raise UnstableMatrixError("both models must be stable for the frequency report")
    omega = np.logspace(np.log10(args.wmin), np.log10(args.wmax), args.points)
    mag_full, skip_full = _bode_magnitude(sys_.a, sys_.b, sys_.c, omega)
    mag_red, skip_red = _bode_magnitude(red.f, red.g, red.h, omega)
    rows = [
        (float(w), mf, mr)
        for w, mf, mr in zip(omega, mag_full, mag_red)
        if mf is not None and mr is not None
    ]
    serialize.write_csv(args.out, ["omega_rad_s", "mag_full", "mag_reduced"], rows)
    notes = []
    if skip_full or skip_red:
        notes.append(f"skipped points at poles: {sorted(set(skip_full + skip_red))}")
    figure_path = None
    if not args.no_plot:
        figure_path = os.path.splitext(args.out)[0] + ".png"
        plots.render_bode_figure(
            [r[0] for r in rows], [r[1] for r in rows], [r[2] for r in rows], figure_path
        )
        notes.append(f"figure: {figure_path}")
    _manifest(
        "bode",
        {
            "system": args.system,
            "reduced": args.reduced,
            "wmin": args.wmin,
            "wmax": args.wmax,
            "points": args.points,
            "out": args.out,
            "plot": not args.no_plot,
        },
        None,
        [args.system, args.reduced],
        started,
        notes=notes,
    ).write_alongside(args.out)
    print(f"wrote {args.out} ({len(rows)} rows)" + (f" and {figure_path}" if figure_path else ""))
    return EXIT_OK


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------


def cmd_sweep(args):
    started = time.perf_counter()
    n_values = _range_spec(args.areas)
    workers = max(1, int(os.environ.get("NETRED_THREADS", "1")))
    rows, failures = benchmarks.sweep_h2_vs_n(
        n_values,
        seed=args.seed,
        sdp_tol=args.sdp_tol,
        max_grad_iter=args.max_grad_iter,
        refine_iters=args.refine_iters,
        workers=workers,
    )
    csv_rows = [
        (r["N"], r["h2_error"], r["sdp_objective"], r["grad_iterations"], r["wall_seconds"])
        for r in rows
    ]
    serialize.write_csv(
        args.out,
        ["N", "h2_error", "sdp_objective", "grad_iterations", "wall_seconds"],
        csv_rows,
    )
    notes = [f"workers={workers}"]
    if failures:
        notes.append(f"failures: {failures}")
    figure_path = None
    if not args.no_plot and rows:
        figure_path = os.path.splitext(args.out)[0] + ".png"
        plots.render_sweep_figure(
            [r["N"] for r in rows], [r["h2_error"] for r in rows], figure_path
        )
        notes.append(f"figure: {figure_path}")
    _manifest(
        "sweep",
        {
            "areas": args.areas,
            "sdp_tol": args.sdp_tol,
            "max_grad_iter": args.max_grad_iter,
            "refine_iters": args.refine_iters,
            "out": args.out,
            "plot": not args.no_plot,
        },
        args.seed,
        [],
        started,
        status="ok" if not failures else "partial",
        notes=notes,
    ).write_alongside(args.out)
    print(
        f"wrote {args.out} ({len(rows)} rows, {len(failures)} failures)"
        + (f" and {figure_path}" if figure_path else "")
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(
        prog="netred",
        description="Topology-preserving H2 model reduction of linear network systems.",
    )
    parser.add_argument("--version", action="version", version=f"netred {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a network system model file")
    g.add_argument("kind", choices=["fixture", "power", "random-positive"])
    g.add_argument("--areas", type=int, default=None, help="area count for the power chain")
    g.add_argument("--sizes", default=None, help="comma list of subsystem sizes")
    g.add_argument("--m", type=int, default=1)
    g.add_argument("--p", type=int, default=1)
    g.add_argument("--neighbors", default=None, help="pipe-separated neighbor lists, e.g. '1,2|1,2'")
    g.add_argument("--input-neighbors", default=None)
    g.add_argument("--interval", default="-5,1", help="sampling interval for entries")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    r = sub.add_parser("reduce", help="compute a reduced network model")
    r.add_argument("system")
    r.add_argument("--method", choices=["sdp", "grad", "sdp+grad"], default="sdp+grad")
    r.add_argument("--orders", required=True, help="comma list of per-subsystem orders")
    r.add_argument("--L", choices=["identity", "canonical-last", "file"], default="identity")
    r.add_argument("--L-file", default=None)
    r.add_argument("--s-grid", default=None, help="comma list of interpolation points")
    r.add_argument("--sdp-tol", type=float, default=1e-6)
    r.add_argument("--epsilon", type=float, default=1e-6)
    r.add_argument("--max-iter", type=int, default=5000)
    r.add_argument("--margin", type=float, default=1e-9)
    r.add_argument("--refine-iters", type=int, default=2500)
    r.add_argument("--refine-scales", default="0,0.5,1,2")
    r.add_argument("--refine-seed", type=int, default=101)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_reduce)

    e = sub.add_parser("evaluate", help="feasibility and accuracy report for a reduced model")
    e.add_argument("system")
    e.add_argument("reduced")
    e.add_argument("--tol", type=float, default=1e-6)
    e.add_argument("--out", default=None)
    e.set_defaults(func=cmd_evaluate)

    b = sub.add_parser("bode", help="frequency-response comparison CSV (+ figure)")
    b.add_argument("system")
    b.add_argument("reduced")
    b.add_argument("--wmin", type=float, default=1e-6)
    b.add_argument("--wmax", type=float, default=1e2)
    b.add_argument("--points", type=int, default=400)
    b.add_argument("--no-plot", action="store_true")
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_bode)

    s = sub.add_parser("sweep", help="error-versus-size table for power networks (+ figure)")
    s.add_argument("--areas", default="4:30", help="range 'lo:hi' or comma list")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--sdp-tol", type=float, default=1e-5)
    s.add_argument("--max-grad-iter", type=int, default=400)
    s.add_argument("--refine-iters", type=int, default=300)
    s.add_argument("--no-plot", action="store_true")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (StructureError,) as exc:
        return _fail(EXIT_CONSTRAINT, exc)
    except (SolverError, UnstableMatrixError, SpectraOverlapError) as exc:
        return _fail(EXIT_SOLVER, exc)
    except (OSError, json.JSONDecodeError, DimensionError, FixtureError, ValueError) as exc:
        return _fail(EXIT_IO, exc)
    except NetredError as exc:
        return _fail(EXIT_SOLVER, exc)


if __name__ == "__main__":
    raise SystemExit(main())
