"""Monte Carlo convergence studies against coupled fine-grid references.

A study sweeps (mesh size, time step) pairs for one scheme variant.  Every
realisation draws one Brownian path at the reference resolution; the coarse
runs consume exact partial sums of the same increments, so coarse and
reference trajectories are driven by the same noise and pathwise differences
measure pure discretisation error.

Per sweep point and realisation, squared errors are evaluated on the
reference mesh (coarse fields are prolonged exactly, nested P1 into P1):

* ``sq_u[m]``     velocity L2 error at coarse step m,
* ``av_sq``       k * sum_m sq_u[m]  (time-averaged squared error),
* ``sq_grad[m]``  H1 seminorm of the running time integral of the error,
* ``p_av_sq``     k * sum_m of squared L2 gaps between the pressure time
                  integrals of both runs at the coarse checkpoints.

Realisations are reduced with Welford accumulators in index order, so the
reported statistics do not depend on worker scheduling.  Reported errors are
square roots of Monte Carlo means of the squared quantities (max over
checkpoints first where applicable); standard errors come from the delta
method.
"""

from __future__ import annotations

import csv
import hashlib
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from functools import lru_cache
from typing import Optional

import numpy as np
import scipy.sparse as sp

from . import __version__
from .fem import (
    FemOperators,
    SolveConfig,
    assemble_operators,
    build_periodic_mesh,
    h1_seminorm,
    l2_norm,
    prolongation_matrix,
    zero_mean,
)
from .noise import (
    SqrtPlusOne,
    ZeroNoise,
    build_qwiener_spec,
    coarsen_increments,
    mix64,
    sample_brownian_path,
)
from .schemes import SchemeConfig, run_trajectory

_NOISE_KINDS = ("sqrt_plus_one", "zero")

ERROR_KEYS = ("e_u_max", "e_u_av", "e_gradsum", "e_p_av")


class StudyFailure(RuntimeError):
    """Raised when too many realisations fail to finish."""


class CheckpointMismatch(ValueError):
    """Coarse and reference records do not share comparable checkpoints."""


@dataclass(frozen=True)
class StudySpec:
    """Declarative description of one convergence sweep.

    ``mesh_sizes`` with a single entry reuses that mesh for every time step
    (temporal sweep at fixed h); otherwise it is paired elementwise with
    ``time_steps``.  Every time step must be an integer multiple of the
    reference step ``k0`` that divides ``t_final`` evenly, and every mesh
    size must divide ``reference_n`` so coarse spaces nest in the reference
    space.  Sweep points are processed in order of decreasing k.
    """

    variant: str
    mesh_sizes: tuple
    time_steps: tuple
    k0: float
    reference_n: int
    n_realizations: int
    master_seed: int = 0
    noise_kind: str = "sqrt_plus_one"
    noise_coeff: float = 1.0
    j_max: int = 2
    forcing: tuple = (1.0, 1.0)
    t_final: float = 1.0
    increment_scaling: str = "sqrt_k"
    rel_tol: float = 1e-8
    max_iter: int = 4000
    n_workers: int = 1
    max_failure_fraction: float = 0.05

    def __post_init__(self):
        object.__setattr__(self, "mesh_sizes", tuple(int(n) for n in self.mesh_sizes))
        object.__setattr__(self, "time_steps", tuple(float(k) for k in self.time_steps))
        object.__setattr__(self, "forcing", tuple(float(c) for c in self.forcing))
        if self.variant not in ("standard", "modified"):
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.noise_kind not in _NOISE_KINDS:
            raise ValueError(f"noise_kind must be one of {_NOISE_KINDS}")
        if len(self.mesh_sizes) not in (1, len(self.time_steps)):
            raise ValueError("mesh_sizes must have one entry or one per time step")
        if not self.time_steps:
            raise ValueError("need at least one time step")
        if self.n_realizations < 1:
            raise ValueError("need at least one realisation")
        for n in self.mesh_sizes:
            if n < 1 or self.reference_n % n:
                raise ValueError(
                    f"mesh size {n} does not divide reference mesh {self.reference_n}"
                )
        if self.n_steps_reference is None:
            raise ValueError(f"k0={self.k0} does not divide t_final={self.t_final}")
        m0 = self.n_steps_reference
        for k in self.time_steps:
            m = _int_ratio(self.t_final, k)
            if m is None or m0 % m:
                raise ValueError(
                    f"time step {k} is not a multiple of k0={self.k0} dividing t_final"
                )

    @property
    def n_steps_reference(self) -> Optional[int]:
        return _int_ratio(self.t_final, self.k0)

    def points(self):
        """(n, k) sweep pairs sorted by decreasing time step."""
        sizes = self.mesh_sizes
        if len(sizes) == 1:
            sizes = sizes * len(self.time_steps)
        return sorted(zip(sizes, self.time_steps), key=lambda nk: -nk[1])


def _int_ratio(total, part):
    m = int(round(total / part))
    if m >= 1 and abs(m * part - total) <= 1e-9 * abs(total):
        return m
    return None


def spec_to_dict(spec: StudySpec) -> dict:
    out = asdict(spec)
    for key in ("mesh_sizes", "forcing"):
        out[key] = list(out[key])
    out["time_steps"] = [float(k) for k in out["time_steps"]]
    return out


def spec_from_dict(data: dict) -> StudySpec:
    return StudySpec(**data)


def spec_digest(spec: StudySpec) -> str:
    blob = json.dumps(spec_to_dict(spec), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


# ------------------------------------------------------------------ welford


class Welford:
    """Streaming mean/variance over scalars or fixed-shape arrays."""

    def __init__(self, shape=()):
        self.count = 0
        self.mean = np.zeros(shape)
        self._m2 = np.zeros(shape)

    def add(self, value):
        value = np.asarray(value, dtype=float)
        self.count += 1
        delta = value - self.mean
        self.mean = self.mean + delta / self.count
        self._m2 = self._m2 + delta * (value - self.mean)

    def variance(self):
        if self.count < 2:
            return np.zeros_like(self.mean)
        return np.maximum(self._m2, 0.0) / (self.count - 1)

    def sem(self):
        if self.count < 1:
            return np.zeros_like(self.mean)
        return np.sqrt(self.variance() / max(self.count, 1))


def _sqrt_of_mean(mean: float, sem: float):
    """Error = sqrt(MC mean of squares); delta-method standard error."""
    if mean <= 0.0:
        return 0.0, 0.0
    root = float(np.sqrt(mean))
    return root, float(sem / (2.0 * root))


# ------------------------------------------------------------------ error norms


def _align_checkpoints(reference, coarse) -> np.ndarray:
    """Rows of the reference record matching the coarse checkpoints."""
    r = _int_ratio(coarse.k, reference.k)
    if r is None:
        raise CheckpointMismatch(
            f"coarse step {coarse.k} is not an integer multiple of {reference.k}"
        )
    want = np.asarray(coarse.step_indices, dtype=int) * r
    ref_marks = np.asarray(reference.step_indices, dtype=int)
    slots = np.searchsorted(ref_marks, want)
    if slots.max(initial=-1) >= ref_marks.size or not np.array_equal(ref_marks[slots], want):
        raise CheckpointMismatch("reference record lacks some coarse checkpoint times")
    return slots


def velocity_error_norms(reference, coarse, ops: FemOperators, prolongation=None):
    """Squared velocity error terms of one realisation pair.

    Returns ``(sq_u, av_sq, sq_grad)``: per-checkpoint squared L2 errors,
    their k-weighted sum, and per-checkpoint squared H1 seminorms of the
    running time integral of the error.  ``ops`` lives on the reference
    mesh; ``prolongation`` (vector layout) maps coarse fields there and may
    be None when both runs share the mesh.
    """
    if reference.u is None or coarse.u is None:
        raise CheckpointMismatch("both records must store velocity fields")
    slots = _align_checkpoints(reference, coarse)
    k = coarse.k
    m1 = len(slots)
    sq_u = np.empty(m1)
    sq_grad = np.empty(m1)
    integral = np.zeros(2 * ops.mesh.n_vertices)
    for m in range(m1):
        cu = coarse.u[m] if prolongation is None else prolongation @ coarse.u[m]
        diff = cu - reference.u[slots[m]]
        sq_u[m] = l2_norm(ops, diff) ** 2
        integral += k * diff
        sq_grad[m] = h1_seminorm(ops, integral) ** 2
    return sq_u, k * float(sq_u.sum()), sq_grad


def pressure_error_norm(reference, coarse, ops: FemOperators, prolongation=None) -> float:
    """Squared time-averaged pressure error term of one realisation pair.

    Compares the running pressure time integrals of both records at every
    coarse checkpoint: k * sum_m of the squared L2 gap at t_m.
    """
    if reference.p_int is None or coarse.p_int is None:
        raise CheckpointMismatch("both records must store pressure time integrals")
    slots = _align_checkpoints(reference, coarse)
    k = coarse.k
    total = 0.0
    for m in range(len(slots)):
        cp = coarse.p_int[m] if prolongation is None else prolongation @ coarse.p_int[m]
        diff = zero_mean(ops, cp - reference.p_int[slots[m]])
        total += l2_norm(ops, diff) ** 2
    return k * total


@dataclass(eq=False)
class RealizationErrors:
    sq_u: np.ndarray        # (n_checkpoints,) squared L2 velocity errors
    sq_grad: np.ndarray     # (n_checkpoints,) squared H1 of integrated error
    av_sq: float            # k * sum of sq_u
    p_av_sq: float          # k * sum of squared pressure-integral gaps
    wall_time_s: float


def compare_trajectories(ref_ops, point, coarse_rec, ref_rec) -> RealizationErrors:
    t0 = time.perf_counter()
    sq_u, av_sq, sq_grad = velocity_error_norms(ref_rec, coarse_rec, ref_ops, point.prol_v)
    p_av_sq = pressure_error_norm(ref_rec, coarse_rec, ref_ops, point.prol_s)
    return RealizationErrors(
        sq_u=sq_u,
        sq_grad=sq_grad,
        av_sq=av_sq,
        p_av_sq=p_av_sq,
        wall_time_s=time.perf_counter() - t0,
    )


# ------------------------------------------------------------------ per-point setup


@dataclass(eq=False)
class _PointSetup:
    n: int
    k: float
    n_steps: int
    refine: int                       # k / k0
    ops: FemOperators
    cfg: SchemeConfig
    prol_v: Optional[sp.spmatrix]     # None when the meshes coincide
    prol_s: Optional[sp.spmatrix]


@dataclass(eq=False)
class _StudySetup:
    spec: StudySpec
    ref_ops: FemOperators
    ref_cfg: SchemeConfig
    ref_marks: np.ndarray
    points: list


def _noise_model(spec: StudySpec):
    if spec.noise_kind == "zero":
        return ZeroNoise()
    return SqrtPlusOne(spec.noise_coeff)


@lru_cache(maxsize=4)
def _setup(spec: StudySpec) -> _StudySetup:
    qspec = build_qwiener_spec(spec.j_max)
    noise = _noise_model(spec)
    solve = SolveConfig(rel_tol=spec.rel_tol, max_iter=spec.max_iter)
    m0 = spec.n_steps_reference

    ref_ops = assemble_operators(build_periodic_mesh(spec.reference_n))
    ops_cache = {spec.reference_n: ref_ops}

    marks = {0, m0}
    raw_points = []
    for n, k in spec.points():
        m = _int_ratio(spec.t_final, k)
        r = m0 // m
        marks.update(range(0, m0 + 1, r))
        raw_points.append((n, k, m, r))
    ref_marks = np.array(sorted(marks), dtype=int)

    points = []
    for n, k, m, r in raw_points:
        if n not in ops_cache:
            ops_cache[n] = assemble_operators(build_periodic_mesh(n))
        ops = ops_cache[n]
        if n == spec.reference_n:
            prol_s = prol_v = None
        else:
            prol_s = prolongation_matrix(ops.mesh, ref_ops.mesh)
            prol_v = sp.kron(prol_s, sp.identity(2, format="csr"), format="csr")
        cfg = SchemeConfig(spec.variant, k, m, noise, qspec, spec.forcing, solve)
        points.append(_PointSetup(n, k, m, r, ops, cfg, prol_v, prol_s))

    ref_cfg = SchemeConfig(spec.variant, spec.k0, m0, noise, qspec, spec.forcing, solve)
    return _StudySetup(spec, ref_ops, ref_cfg, ref_marks, points)


def _one_realization(spec: StudySpec, index: int):
    """Run reference + all sweep points for one noise path.

    Returns a list of RealizationErrors, or a string describing the failure.
    """
    setup = _setup(spec)
    try:
        path = sample_brownian_path(
            setup.ref_cfg.qspec,
            spec.n_steps_reference,
            seed=mix64(spec.master_seed, index),
            t_final=spec.t_final,
            scaling=spec.increment_scaling,
        )
        ref_rec = run_trajectory(
            setup.ref_ops,
            setup.ref_cfg,
            coarsen_increments(path, 1),
            checkpoints=setup.ref_marks,
        )
        out = []
        for point in setup.points:
            rec = run_trajectory(point.ops, point.cfg, coarsen_increments(path, point.refine))
            errs = compare_trajectories(setup.ref_ops, point, rec, ref_rec)
            errs.wall_time_s += rec.wall_time_s
            out.append(errs)
        out[0].wall_time_s += ref_rec.wall_time_s  # book reference cost once
        return out
    except (RuntimeError, np.linalg.LinAlgError) as exc:
        return f"realisation {index}: {type(exc).__name__}: {exc}"


# ------------------------------------------------------------------ rate fitting


@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    rms_residual: float


def fit_rate(xs, errs) -> RateFit:
    """Least-squares slope of log(err) against log(x); zeros are rejected."""
    xs = np.asarray(xs, dtype=float)
    errs = np.asarray(errs, dtype=float)
    if xs.size != errs.size or xs.size < 2:
        raise ValueError("need at least two points to fit a rate")
    if (xs <= 0).any() or (errs <= 0).any():
        raise ValueError("rate fits need strictly positive values")
    lx, le = np.log(xs), np.log(errs)
    slope, intercept = np.polyfit(lx, le, 1)
    resid = le - (slope * lx + intercept)
    return RateFit(float(slope), float(intercept), float(np.sqrt(np.mean(resid**2))))


# ------------------------------------------------------------------ study driver


@dataclass(eq=False)
class SweepRow:
    variant: str
    n: int
    k: float
    h: float
    n_realizations: int
    e_u_max: float
    se_u_max: float
    e_u_av: float
    se_u_av: float
    e_gradsum: float
    se_gradsum: float
    e_p_av: float
    se_p_av: float
    wall_time_s: float

    def error(self, key: str) -> float:
        return getattr(self, key)


@dataclass(eq=False)
class StudyReport:
    spec: StudySpec
    rows: list                  # sorted by k descending
    rates: dict                 # error key -> RateFit, when >= 3 rows
    n_failed: int
    failures: list
    total_wall_time_s: float

    def rate(self, key: str) -> Optional[RateFit]:
        return self.rates.get(key)


class _PointAccumulator:
    def __init__(self, n_checkpoints):
        self.sq_u = Welford(n_checkpoints)
        self.sq_grad = Welford(n_checkpoints)
        self.av_sq = Welford()
        self.p_av_sq = Welford()
        self.wall = 0.0

    def add(self, errs: RealizationErrors):
        self.sq_u.add(errs.sq_u)
        self.sq_grad.add(errs.sq_grad)
        self.av_sq.add(errs.av_sq)
        self.p_av_sq.add(errs.p_av_sq)
        self.wall += errs.wall_time_s

    def row(self, spec: StudySpec, point: _PointSetup) -> SweepRow:
        i_max = int(np.argmax(self.sq_u.mean))
        e_u_max, se_u_max = _sqrt_of_mean(self.sq_u.mean[i_max], self.sq_u.sem()[i_max])
        i_grad = int(np.argmax(self.sq_grad.mean))
        e_grad, se_grad = _sqrt_of_mean(self.sq_grad.mean[i_grad], self.sq_grad.sem()[i_grad])
        e_u_av, se_u_av = _sqrt_of_mean(float(self.av_sq.mean), float(self.av_sq.sem()))
        e_p_av, se_p_av = _sqrt_of_mean(float(self.p_av_sq.mean), float(self.p_av_sq.sem()))
        return SweepRow(
            variant=spec.variant,
            n=point.n,
            k=point.k,
            h=point.ops.mesh.h,
            n_realizations=self.av_sq.count,
            e_u_max=e_u_max,
            se_u_max=se_u_max,
            e_u_av=e_u_av,
            se_u_av=se_u_av,
            e_gradsum=e_grad,
            se_gradsum=se_grad,
            e_p_av=e_p_av,
            se_p_av=se_p_av,
            wall_time_s=self.wall,
        )


def run_convergence_study(spec: StudySpec, progress=None) -> StudyReport:
    """Run the sweep and reduce realisation statistics in index order."""
    t_start = time.perf_counter()
    setup = _setup(spec)
    n_real = spec.n_realizations

    results: dict = {}
    if spec.n_workers > 1:
        with ProcessPoolExecutor(max_workers=spec.n_workers) as pool:
            futures = [
                (ell, pool.submit(_one_realization, spec, ell)) for ell in range(n_real)
            ]
            for done, (ell, fut) in enumerate(futures, start=1):
                results[ell] = fut.result()
                if progress is not None:
                    progress(done, n_real)
    else:
        for ell in range(n_real):
            results[ell] = _one_realization(spec, ell)
            if progress is not None:
                progress(ell + 1, n_real)

    accs = [_PointAccumulator(point.n_steps + 1) for point in setup.points]
    failures = []
    for ell in range(n_real):  # deterministic reduction order
        res = results[ell]
        if isinstance(res, str):
            failures.append(res)
            continue
        for acc, errs in zip(accs, res):
            acc.add(errs)

    if len(failures) > spec.max_failure_fraction * n_real:
        raise StudyFailure(
            f"{len(failures)} of {n_real} realisations failed; first: {failures[0]}"
        )

    rows = [acc.row(spec, point) for acc, point in zip(accs, setup.points)]

    rates = {}
    if len(rows) >= 3:
        ks = [row.k for row in rows]
        for key in ERROR_KEYS:
            errs = [row.error(key) for row in rows]
            if all(e > 0 for e in errs):
                rates[key] = fit_rate(ks, errs)

    return StudyReport(
        spec=spec,
        rows=rows,
        rates=rates,
        n_failed=len(failures),
        failures=failures,
        total_wall_time_s=time.perf_counter() - t_start,
    )


# ------------------------------------------------------------------ emission

_CSV_COLUMNS = (
    ("variant", "variant"),
    ("N", "n"),
    ("k", "k"),
    ("h", "h"),
    ("Np", "n_realizations"),
    ("e_u_max", "e_u_max"),
    ("e_u_av", "e_u_av"),
    ("e_gradsum", "e_gradsum"),
    ("e_p_av", "e_p_av"),
    ("se_u_max", "se_u_max"),
    ("se_u_av", "se_u_av"),
    ("se_gradsum", "se_gradsum"),
    ("se_p_av", "se_p_av"),
    ("wall_time_s", "wall_time_s"),
)


def _row_record(row: SweepRow) -> dict:
    return {name: getattr(row, attr) for name, attr in _CSV_COLUMNS}


def write_csv(report: StudyReport, path):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=[name for name, _ in _CSV_COLUMNS])
        writer.writeheader()
        for row in report.rows:
            writer.writerow(_row_record(row))


def report_to_dict(report: StudyReport) -> dict:
    return {
        "spec": spec_to_dict(report.spec),
        "provenance": {
            "config_sha256": spec_digest(report.spec),
            "package_version": __version__,
            "created_utc": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        },
        "rows": [_row_record(row) for row in report.rows],
        "rates": {
            key: {"slope": r.slope, "intercept": r.intercept, "rms_residual": r.rms_residual}
            for key, r in report.rates.items()
        },
        "n_failed": report.n_failed,
        "failures": report.failures,
        "total_wall_time_s": report.total_wall_time_s,
    }


def write_json(report: StudyReport, path):
    with open(path, "w") as fh:
        json.dump(report_to_dict(report), fh, indent=2)
        fh.write("\n")


def report_from_dict(data: dict) -> StudyReport:
    """Rebuild a report from its JSON form (inverse of report_to_dict)."""
    rows = []
    for rec in data["rows"]:
        kwargs = {attr: rec[name] for name, attr in _CSV_COLUMNS}
        kwargs["n"] = int(kwargs["n"])
        kwargs["n_realizations"] = int(kwargs["n_realizations"])
        rows.append(SweepRow(**kwargs))
    rates = {key: RateFit(**val) for key, val in data.get("rates", {}).items()}
    return StudyReport(
        spec=spec_from_dict(data["spec"]),
        rows=rows,
        rates=rates,
        n_failed=int(data.get("n_failed", 0)),
        failures=list(data.get("failures", [])),
        total_wall_time_s=float(data.get("total_wall_time_s", 0.0)),
    )


_GNUPLOT_HEADER = """\
# log-log convergence plot; render with: gnuplot <this file>
set terminal pngcairo size 900,600
set output '{stem}.png'
set logscale xy
set xlabel 'time step k'
set ylabel 'error'
set key bottom right
set grid
"""


def write_gnuplot(report: StudyReport, path):
    """Self-contained gnuplot script with the data inlined."""
    path = str(path)
    stem = path.rsplit(".", 1)[0]
    lines = [_GNUPLOT_HEADER.format(stem=stem)]
    lines.append("$data << EOD")
    lines.append("# k " + " ".join(ERROR_KEYS))
    for row in report.rows:
        vals = " ".join(f"{row.error(key):.10e}" for key in ERROR_KEYS)
        lines.append(f"{row.k:.10e} {vals}")
    lines.append("EOD")
    plots = []
    for col, key in enumerate(ERROR_KEYS, start=2):
        title = key
        fit = report.rates.get(key)
        if fit is not None:
            title = f"{key} (slope {fit.slope:.2f})"
        plots.append(f"$data using 1:{col} with linespoints title '{title}'")
    lines.append("plot " + ", \\\n     ".join(plots))
    lines.append("")
    with open(path, "w") as fh:
        fh.write("\n".join(lines))
