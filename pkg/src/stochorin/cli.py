"""Command line front end.

Subcommands:

* ``run-study``  -- Monte Carlo convergence study from a preset or TOML file,
  emitting CSV, JSON, and a gnuplot script into the output directory.
* ``single-run`` -- one trajectory at a fixed mesh/step, norms or full fields.
* ``validate``   -- the pre-flight invariant suite; nonzero exit on failure.
* ``plot-emit``  -- regenerate the gnuplot script from a JSON report.

Exit codes: 0 success, 1 configuration error, 2 numerical failure (solver
breakdown or too many failed realizations), 3 invariant-suite failure.
Errors are printed to stderr as ``ERROR[<category>]: message``.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib

from . import __version__
from .fem import (
    IncompatibleRhs,
    MaxIterationsExceeded,
    SolveConfig,
    assemble_operators,
    build_periodic_mesh,
    h1_seminorm,
    l2_norm,
)
from .noise import SqrtPlusOne, ZeroNoise, build_qwiener_spec, coarsen_increments, sample_brownian_path
from .presets import PRESETS, get_preset
from .schemes import SchemeConfig, run_trajectory
from .study import (
    StudyFailure,
    StudySpec,
    report_from_dict,
    run_convergence_study,
    spec_digest,
    write_csv,
    write_gnuplot,
    write_json,
)
from .validate import run_validation, validation_passed

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERICAL = 2
EXIT_VALIDATION = 3

_NUMERICAL_ERRORS = (StudyFailure, MaxIterationsExceeded, IncompatibleRhs, np.linalg.LinAlgError)

_SPEC_FIELDS = {f.name for f in dataclasses.fields(StudySpec)}


class ConfigError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad flags; that slot is reserved for
    # numerical failures here, so route parse errors through ConfigError
    def error(self, message):
        raise ConfigError(message)


def _parse_scalar(text: str):
    lowered = text.strip().lower()
    if lowered in ("true", "false"):
        return lowered == "true"
    if "/" in lowered:
        num, _, den = lowered.partition("/")
        try:
            return float(num) / float(den)
        except (ValueError, ZeroDivisionError):
            raise ConfigError(f"cannot parse fraction {text!r}") from None
    for cast in (int, float):
        try:
            return cast(lowered)
        except ValueError:
            pass
    return text.strip()


def _parse_value(text: str):
    if "," in text:
        parts = [p for p in text.split(",") if p.strip() != ""]
        return tuple(_parse_scalar(p) for p in parts)
    return _parse_scalar(text)


def _parse_overrides(pairs):
    out = {}
    for pair in pairs:
        key, sep, value = pair.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigError(f"override {pair!r} is not of the form key=value")
        if key not in _SPEC_FIELDS:
            known = ", ".join(sorted(_SPEC_FIELDS))
            raise ConfigError(f"unknown study key {key!r}; known keys: {known}")
        out[key] = _parse_value(value)
    return out


def _load_toml_spec(path: str) -> StudySpec:
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML in {path}: {exc}") from None
    if "study" not in data or not isinstance(data["study"], dict):
        raise ConfigError(f"{path} must contain a [study] table")
    kwargs = dict(data["study"])
    unknown = sorted(set(kwargs) - _SPEC_FIELDS)
    if unknown:
        raise ConfigError(f"unknown keys in [study]: {', '.join(unknown)}")
    for key, value in kwargs.items():
        if isinstance(value, list):
            kwargs[key] = tuple(value)
    try:
        return StudySpec(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid study configuration: {exc}") from None


def _resolve_threads(flag_value):
    if flag_value is None:
        flag_value = os.environ.get("STOCHORIN_THREADS")
    if flag_value is None:
        return None
    if isinstance(flag_value, str) and flag_value.strip().lower() == "auto":
        return os.cpu_count() or 1
    try:
        n = int(flag_value)
    except (TypeError, ValueError):
        raise ConfigError(f"--threads expects an integer or 'auto', got {flag_value!r}") from None
    if n < 1:
        raise ConfigError("--threads must be at least 1")
    return n


def _progress_printer(total):
    stride = max(1, total // 20)

    def report(done, _total):
        if done % stride == 0 or done == total:
            print(f"  realization {done}/{total}", flush=True)

    return report


def _cmd_run_study(args) -> int:
    if (args.preset is None) == (args.config is None):
        raise ConfigError("run-study needs exactly one of --preset or --config")
    if args.preset is not None:
        spec = get_preset(args.preset).scaled(args.scale)
        base = args.preset if args.scale == 1.0 else f"{args.preset}_s{args.scale:g}"
    else:
        if args.scale != 1.0:
            raise ConfigError("--scale applies only to presets")
        spec = _load_toml_spec(args.config)
        base = os.path.splitext(os.path.basename(args.config))[0]

    overrides = _parse_overrides(args.overrides)
    if args.seed is not None:
        overrides["master_seed"] = args.seed
    threads = _resolve_threads(args.threads)
    if threads is not None:
        overrides["n_workers"] = threads
    if overrides:
        try:
            spec = dataclasses.replace(spec, **overrides)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid override: {exc}") from None

    if not args.quiet:
        print(f"study {base}: {len(spec.points())} sweep points, "
              f"{spec.n_realizations} realizations, config {spec_digest(spec)[:12]}")

    results = run_validation(quick=True)
    if not validation_passed(results):
        for res in results:
            if not res.passed:
                print(f"ERROR[validation]: {res.summary()}", file=sys.stderr)
        return EXIT_VALIDATION

    progress = None if args.quiet else _progress_printer(spec.n_realizations)
    report = run_convergence_study(spec, progress=progress)

    os.makedirs(args.output_dir, exist_ok=True)
    paths = {
        ext: os.path.join(args.output_dir, f"{base}.{ext}") for ext in ("csv", "json", "gp")
    }
    write_csv(report, paths["csv"])
    write_json(report, paths["json"])
    write_gnuplot(report, paths["gp"])

    if not args.quiet:
        for row in report.rows:
            print(f"  N={row.n:3d} k=1/{round(1 / row.k):<5d} "
                  f"e_u_max={row.e_u_max:.4e} e_u_av={row.e_u_av:.4e} "
                  f"e_gradsum={row.e_gradsum:.4e} e_p_av={row.e_p_av:.4e}")
        for key, fit in report.rates.items():
            print(f"  rate {key}: slope {fit.slope:.3f} (rms residual {fit.rms_residual:.3f})")
        if report.n_failed:
            print(f"  {report.n_failed} realization(s) failed and were excluded")
        print(f"  wall time {report.total_wall_time_s:.1f}s")
    for path in paths.values():
        print(path)
    return EXIT_OK


def _noise_from_args(kind, coeff):
    if kind == "zero":
        return ZeroNoise()
    if kind == "sqrt_plus_one":
        return SqrtPlusOne(coeff)
    raise ConfigError(f"unknown noise kind {kind!r}")


def _cmd_single_run(args) -> int:
    k = _parse_value(args.k)
    if not isinstance(k, float | int) or k <= 0:
        raise ConfigError(f"--k expects a positive step like 0.0625 or 1/16, got {args.k!r}")
    k = float(k)
    n_steps = round(args.t_final / k)
    if abs(n_steps * k - args.t_final) > 1e-9 * args.t_final or n_steps < 1:
        raise ConfigError(f"step {k} does not divide the horizon {args.t_final}")
    forcing = _parse_value(args.forcing)
    if not (isinstance(forcing, tuple) and len(forcing) == 2):
        raise ConfigError(f"--forcing expects 'fx,fy', got {args.forcing!r}")

    try:
        ops = assemble_operators(build_periodic_mesh(args.N))
        qspec = build_qwiener_spec(args.j_max)
        cfg = SchemeConfig(
            variant=args.variant,
            k=k,
            n_steps=n_steps,
            noise=_noise_from_args(args.noise_kind, args.noise_coeff),
            qspec=qspec,
            forcing=tuple(float(c) for c in forcing),
            solve=SolveConfig(rel_tol=args.rel_tol),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None

    path = sample_brownian_path(
        qspec, n_steps, seed=args.seed, t_final=args.t_final, scaling=args.scaling
    )
    table = coarsen_increments(path, 1)
    store = "fields" if args.dump_fields else "norms"
    rec = run_trajectory(ops, cfg, table, store=store)
    if store == "fields":
        u_l2 = [l2_norm(ops, row) for row in rec.u]
        u_h1 = [h1_seminorm(ops, row) for row in rec.u]
        p_int_l2 = [l2_norm(ops, row) for row in rec.p_int]
    else:
        u_l2, u_h1, p_int_l2 = rec.u_l2.tolist(), rec.u_h1.tolist(), rec.p_int_l2.tolist()

    os.makedirs(args.output_dir, exist_ok=True)
    base = f"single_{args.variant}_n{args.N}_m{n_steps}_seed{args.seed}"
    summary = {
        "variant": args.variant,
        "N": args.N,
        "k": k,
        "n_steps": n_steps,
        "seed": args.seed,
        "noise_kind": args.noise_kind,
        "noise_coeff": args.noise_coeff,
        "j_max": args.j_max,
        "scaling": args.scaling,
        "forcing": list(cfg.forcing),
        "t_final": args.t_final,
        "times": rec.times.tolist(),
        "u_l2": u_l2,
        "u_h1": u_h1,
        "p_int_l2": p_int_l2,
        "wall_time_s": rec.wall_time_s,
    }
    json_path = os.path.join(args.output_dir, f"{base}.json")
    with open(json_path, "w") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
    print(json_path)
    if args.dump_fields:
        arrays = {"times": rec.times, "u": rec.u, "p_integral": rec.p_int}
        if rec.r_int is not None:
            arrays["r_integral"] = rec.r_int
        npz_path = os.path.join(args.output_dir, f"{base}.npz")
        np.savez_compressed(npz_path, **arrays)
        print(npz_path)
    return EXIT_OK


def _cmd_validate(args) -> int:
    results = run_validation(quick=args.quick)
    if args.json:
        print(json.dumps([dataclasses.asdict(r) for r in results], indent=2))
    else:
        for res in results:
            print(res.summary())
    if not validation_passed(results):
        for res in results:
            if not res.passed:
                print(f"ERROR[validation]: {res.name} failed", file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


def _cmd_plot_emit(args) -> int:
    try:
        with open(args.report) as fh:
            data = json.load(fh)
        report = report_from_dict(data)
    except OSError as exc:
        raise ConfigError(f"cannot read report {args.report}: {exc}") from None
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        raise ConfigError(f"malformed report {args.report}: {exc}") from None
    os.makedirs(args.output_dir, exist_ok=True)
    base = os.path.splitext(os.path.basename(args.report))[0]
    path = os.path.join(args.output_dir, f"{base}.gp")
    write_gnuplot(report, path)
    print(path)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="stochorin",
        description="Chorin-type solvers and convergence studies for the "
        "periodic stochastic Stokes equations.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run-study", help="run a Monte Carlo convergence study")
    run.add_argument("--preset", choices=sorted(PRESETS), help="named study layout")
    run.add_argument("--scale", type=float, default=1.0,
                     help="downscale knob for presets (1.0 = full size)")
    run.add_argument("--config", metavar="FILE", help="TOML file with a [study] table")
    run.add_argument("--seed", type=int, default=None, help="master seed override")
    run.add_argument("--set", dest="overrides", action="append", default=[],
                     metavar="KEY=VALUE", help="override a study key (repeatable)")
    run.add_argument("--output-dir", default=".", help="artifact directory")
    run.add_argument("--threads", default=None,
                     help="worker processes (integer or 'auto'; env STOCHORIN_THREADS)")
    run.add_argument("--quiet", action="store_true", help="suppress progress output")
    run.set_defaults(handler=_cmd_run_study)

    single = sub.add_parser("single-run", help="run one trajectory")
    single.add_argument("--variant", required=True, choices=("standard", "modified"))
    single.add_argument("--N", required=True, type=int, help="cells per side")
    single.add_argument("--k", required=True, help="time step, e.g. 0.0625 or 1/16")
    single.add_argument("--seed", type=int, default=0)
    single.add_argument("--noise-kind", default="sqrt_plus_one", choices=("sqrt_plus_one", "zero"))
    single.add_argument("--noise-coeff", type=float, default=1.0)
    single.add_argument("--j-max", type=int, default=2)
    single.add_argument("--scaling", default="sqrt_k", choices=("sqrt_k", "k"))
    single.add_argument("--forcing", default="1,1", metavar="FX,FY")
    single.add_argument("--t-final", type=float, default=1.0)
    single.add_argument("--rel-tol", type=float, default=1e-10)
    single.add_argument("--dump-fields", action="store_true",
                        help="also write field snapshots as .npz")
    single.add_argument("--output-dir", default=".")
    single.set_defaults(handler=_cmd_single_run)

    val = sub.add_parser("validate", help="run the invariant suite")
    val.add_argument("--quick", action="store_true", help="smaller meshes and shorter runs")
    val.add_argument("--json", action="store_true", help="machine-readable results")
    val.set_defaults(handler=_cmd_validate)

    plot = sub.add_parser("plot-emit", help="regenerate a gnuplot script from a JSON report")
    plot.add_argument("--report", required=True, help="path to a study JSON report")
    plot.add_argument("--output-dir", default=".")
    plot.set_defaults(handler=_cmd_plot_emit)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.handler(args)
    except ConfigError as exc:
        print(f"ERROR[config]: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except _NUMERICAL_ERRORS as exc:
        print(f"ERROR[numerical]: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
