"""Monte Carlo study tests: error reduction oracles, rates, reproducibility."""

import json
from types import SimpleNamespace

import numpy as np
import pytest

from stochorin.fem import (
    SolveConfig,
    assemble_operators,
    build_periodic_mesh,
    h1_seminorm,
    interpolate_nodal,
    l2_norm,
    prolongation_matrix,
)
from stochorin.noise import SqrtPlusOne, build_qwiener_spec, coarsen_increments, mix64, sample_brownian_path
from stochorin.schemes import SchemeConfig, run_trajectory
from stochorin.study import (
    CheckpointMismatch,
    StudySpec,
    Welford,
    fit_rate,
    pressure_error_norm,
    run_convergence_study,
    spec_digest,
    spec_from_dict,
    spec_to_dict,
    velocity_error_norms,
    write_csv,
    write_gnuplot,
    write_json,
)

from _oracles import dense_mass, dense_stiff


def tiny_spec(**over):
    base = dict(
        variant="standard",
        mesh_sizes=(4,),
        time_steps=(0.25, 0.125),
        k0=1 / 16,
        reference_n=8,
        n_realizations=2,
        master_seed=11,
        noise_coeff=1.0,
        j_max=2,
        rel_tol=1e-12,
    )
    base.update(over)
    return StudySpec(**base)


# ---------------------------------------------------------------- spec validation


def test_spec_validation_rejects_bad_grids():
    with pytest.raises(ValueError):
        tiny_spec(time_steps=(0.3,))  # not a multiple of k0
    with pytest.raises(ValueError):
        tiny_spec(k0=0.3)  # does not divide t_final
    with pytest.raises(ValueError):
        tiny_spec(mesh_sizes=(3,))  # does not divide reference mesh
    with pytest.raises(ValueError):
        tiny_spec(mesh_sizes=(4, 8, 8))  # length mismatch with time_steps
    with pytest.raises(ValueError):
        tiny_spec(variant="chorin")
    with pytest.raises(ValueError):
        tiny_spec(noise_kind="white")


def test_spec_points_sorted_by_decreasing_k():
    assert tiny_spec().points() == [(4, 0.25), (4, 0.125)]
    paired = tiny_spec(mesh_sizes=(8, 4), time_steps=(0.125, 0.25))
    assert paired.points() == [(4, 0.25), (8, 0.125)]


def test_spec_dict_roundtrip_and_digest():
    spec = tiny_spec()
    data = spec_to_dict(spec)
    assert spec_from_dict(data) == spec
    assert spec_digest(spec) == spec_digest(spec_from_dict(data))
    assert spec_digest(spec) != spec_digest(tiny_spec(master_seed=12))


# ---------------------------------------------------------------- welford, rates


def test_welford_matches_numpy_statistics():
    rng = np.random.default_rng(0)
    vals = rng.normal(size=(40, 3))
    acc = Welford(3)
    for v in vals:
        acc.add(v)
    assert np.allclose(acc.mean, vals.mean(axis=0), rtol=1e-13)
    assert np.allclose(acc.variance(), vals.var(axis=0, ddof=1), rtol=1e-12)
    assert np.allclose(acc.sem(), vals.std(axis=0, ddof=1) / np.sqrt(40), rtol=1e-12)


def test_fit_rate_recovers_exact_power():
    ks = np.array([1 / 4, 1 / 8, 1 / 16, 1 / 32])
    fit = fit_rate(ks, 3.7 * ks**0.5)
    assert abs(fit.slope - 0.5) < 1e-12
    assert abs(np.exp(fit.intercept) - 3.7) < 1e-12
    assert fit.rms_residual < 1e-13
    fit = fit_rate(ks, 2.0 * ks**0.25)
    assert abs(fit.slope - 0.25) < 1e-12
    flat = fit_rate([0.5, 0.25], [1.0, 1.0])
    assert abs(flat.slope) < 1e-12


def test_fit_rate_rejects_degenerate_input():
    with pytest.raises(ValueError):
        fit_rate([0.5], [1.0])
    with pytest.raises(ValueError):
        fit_rate([0.5, 0.25], [1.0, 0.0])


# ---------------------------------------------------------------- error algebra


def make_record(k, u, p_int):
    m = len(u) - 1
    return SimpleNamespace(k=k, step_indices=np.arange(m + 1), u=u, p_int=p_int)


def test_constant_offset_error_algebra():
    # reference differs from the run by a fixed field c: the time-averaged
    # velocity error is sqrt(T + k) * |c| because every one of the M+1
    # checkpoints (step 0 included) contributes weight k
    ops = assemble_operators(build_periodic_mesh(4))
    nv = ops.mesh.n_vertices
    k, m = 0.25, 4
    c = interpolate_nodal(ops.mesh, lambda x, y: (np.sin(2 * np.pi * x), 0.0 * x))
    rng = np.random.default_rng(7)
    u = rng.normal(size=(m + 1, 2 * nv))
    q = rng.normal(size=nv)
    steps = np.arange(m + 1)
    coarse = make_record(k, u, steps[:, None] * q[None])
    ref = make_record(k, u + c, np.zeros((m + 1, nv)))

    sq_u, av_sq, sq_grad = velocity_error_norms(ref, coarse, ops)
    p_av_sq = pressure_error_norm(ref, coarse, ops)

    c_l2, c_h1 = l2_norm(ops, c), h1_seminorm(ops, c)
    assert np.allclose(sq_u, c_l2**2, rtol=1e-12)
    assert abs(av_sq - (1.0 + k) * c_l2**2) < 1e-12 * c_l2**2
    # integrated error after checkpoint m is (m+1) * k * c
    expect_grad = (((steps + 1) * k) * c_h1) ** 2
    assert np.allclose(sq_grad, expect_grad, rtol=1e-12)
    # accumulator gap at checkpoint m is m * q, compared mean-free
    q0 = q - q.mean()
    expect_p = k * float((steps**2).sum()) * l2_norm(ops, q0) ** 2
    assert abs(p_av_sq - expect_p) < 1e-12 * expect_p


def test_error_norms_checkpoint_validation():
    ops = assemble_operators(build_periodic_mesh(4))
    nv = ops.mesh.n_vertices
    ref = make_record(0.25, np.zeros((5, 2 * nv)), np.zeros((5, nv)))
    bad_step = make_record(0.3, np.zeros((5, 2 * nv)), np.zeros((5, nv)))
    with pytest.raises(CheckpointMismatch):
        velocity_error_norms(ref, bad_step, ops)
    # coarse checkpoints beyond the reference grid
    long = make_record(0.5, np.zeros((5, 2 * nv)), np.zeros((5, nv)))
    with pytest.raises(CheckpointMismatch):
        velocity_error_norms(ref, long, ops)
    # missing accumulators (norms-only record)
    bare = SimpleNamespace(k=0.25, step_indices=np.arange(5),
                           u=np.zeros((5, 2 * nv)), p_int=None)
    with pytest.raises(CheckpointMismatch):
        pressure_error_norm(ref, bare, ops)


def test_self_comparison_study_is_exactly_zero():
    spec = tiny_spec(mesh_sizes=(8,), time_steps=(1 / 16,), n_realizations=3)
    report = run_convergence_study(spec)
    row = report.rows[0]
    assert row.e_u_max == 0.0 and row.e_u_av == 0.0
    assert row.e_gradsum == 0.0 and row.e_p_av == 0.0
    assert row.se_u_av == 0.0
    assert report.rates == {}  # zero errors carry no rate


# ---------------------------------------------------------------- dense recomputation


def test_study_matches_dense_recomputation():
    spec = tiny_spec()
    report = run_convergence_study(spec)

    ref_mesh = build_periodic_mesh(spec.reference_n)
    ref_ops = assemble_operators(ref_mesh)
    mv = np.kron(dense_mass(spec.reference_n), np.eye(2))
    kv = np.kron(dense_stiff(spec.reference_n), np.eye(2))
    ms = dense_mass(spec.reference_n)
    qspec = build_qwiener_spec(spec.j_max)
    solve = SolveConfig(rel_tol=spec.rel_tol, max_iter=spec.max_iter)
    m0 = spec.n_steps_reference
    lump = ref_ops.lumped_mass

    for row_idx, (n, k) in enumerate(spec.points()):
        m = round(spec.t_final / k)
        r = m0 // m
        ops = assemble_operators(build_periodic_mesh(n))
        ps = prolongation_matrix(ops.mesh, ref_mesh).toarray()
        pv = np.kron(ps, np.eye(2))
        sq_u_all, av_all, grad_all, p_all = [], [], [], []
        for ell in range(spec.n_realizations):
            path = sample_brownian_path(qspec, m0, seed=mix64(spec.master_seed, ell))
            noise = SqrtPlusOne(spec.noise_coeff)
            ref_cfg = SchemeConfig(spec.variant, spec.k0, m0, noise, qspec, spec.forcing, solve)
            ref_rec = run_trajectory(ref_ops, ref_cfg, coarsen_increments(path, 1))
            cfg = SchemeConfig(spec.variant, k, m, noise, qspec, spec.forcing, solve)
            rec = run_trajectory(ops, cfg, coarsen_increments(path, r))
            sq_u = np.empty(m + 1)
            grad_sq = np.empty(m + 1)
            p_sum = 0.0
            acc = np.zeros(2 * ref_mesh.n_vertices)
            for j in range(m + 1):
                d = pv @ rec.u[j] - ref_rec.u[j * r]
                sq_u[j] = d @ mv @ d
                acc = acc + k * d
                grad_sq[j] = acc @ kv @ acc
                dp = ps @ rec.p_int[j] - ref_rec.p_int[j * r]
                dp = dp - (lump @ dp) / lump.sum()
                p_sum += dp @ ms @ dp
            sq_u_all.append(sq_u)
            av_all.append(k * sq_u.sum())
            grad_all.append(grad_sq)
            p_all.append(k * p_sum)

        row = report.rows[row_idx]
        np_ = spec.n_realizations
        e_u_max = np.sqrt(np.mean(sq_u_all, axis=0).max())
        e_u_av = np.sqrt(np.mean(av_all))
        e_grad = np.sqrt(np.mean(grad_all, axis=0).max())
        e_p_av = np.sqrt(np.mean(p_all))
        assert abs(row.e_u_max - e_u_max) < 1e-12 * e_u_max
        assert abs(row.e_u_av - e_u_av) < 1e-12 * e_u_av
        assert abs(row.e_gradsum - e_grad) < 1e-12 * e_grad
        assert abs(row.e_p_av - e_p_av) < 1e-12 * e_p_av
        # delta-method standard errors: sem of the squared-error mean / (2 e)
        se_u_av = np.std(av_all, ddof=1) / np.sqrt(np_) / (2 * e_u_av)
        assert abs(row.se_u_av - se_u_av) < 1e-12 * se_u_av
        j_max_err = np.mean(sq_u_all, axis=0).argmax()
        se_u_max = (np.std([s[j_max_err] for s in sq_u_all], ddof=1)
                    / np.sqrt(np_) / (2 * e_u_max))
        assert abs(row.se_u_max - se_u_max) < 1e-12 * se_u_max
        se_p_av = np.std(p_all, ddof=1) / np.sqrt(np_) / (2 * e_p_av)
        assert abs(row.se_p_av - se_p_av) < 1e-12 * se_p_av
        assert row.n == n and row.k == k and row.n_realizations == spec.n_realizations


# ---------------------------------------------------------------- statistics scaling


def test_independent_seeds_agree_within_standard_errors():
    a = run_convergence_study(tiny_spec(time_steps=(0.25,), n_realizations=16,
                                        master_seed=101, rel_tol=1e-8))
    b = run_convergence_study(tiny_spec(time_steps=(0.25,), n_realizations=16,
                                        master_seed=202, rel_tol=1e-8))
    ra, rb = a.rows[0], b.rows[0]
    assert 0 < ra.se_u_av < ra.e_u_av
    gap = abs(ra.e_u_av - rb.e_u_av)
    assert gap < 6 * (ra.se_u_av + rb.se_u_av)
    gap_p = abs(ra.e_p_av - rb.e_p_av)
    assert gap_p < 6 * (ra.se_p_av + rb.se_p_av)


def test_standard_errors_shrink_like_inverse_sqrt_np():
    # nested samples, 25 vs 100 realizations: ratio of the reported standard
    # errors should sit near 2 (deterministic under the fixed seed)
    small = run_convergence_study(tiny_spec(time_steps=(0.25,), n_realizations=25,
                                            master_seed=23, rel_tol=1e-8))
    big = run_convergence_study(tiny_spec(time_steps=(0.25,), n_realizations=100,
                                          master_seed=23, rel_tol=1e-8))
    ratio = small.rows[0].se_u_av / big.rows[0].se_u_av
    assert 1.6 <= ratio <= 2.5


def test_parallel_and_serial_reductions_are_identical():
    kwargs = dict(time_steps=(0.25,), n_realizations=4, rel_tol=1e-8)
    serial = run_convergence_study(tiny_spec(**kwargs))
    parallel = run_convergence_study(tiny_spec(n_workers=2, **kwargs))
    for name in ("e_u_max", "se_u_max", "e_u_av", "se_u_av",
                 "e_gradsum", "se_gradsum", "e_p_av", "se_p_av"):
        assert getattr(serial.rows[0], name) == getattr(parallel.rows[0], name)


def test_rows_sorted_by_decreasing_k():
    spec = tiny_spec(time_steps=(1 / 16, 1 / 4, 1 / 8), n_realizations=1, rel_tol=1e-8)
    report = run_convergence_study(spec)
    ks = [row.k for row in report.rows]
    assert ks == sorted(ks, reverse=True)
    assert set(report.rates) == {"e_u_max", "e_u_av", "e_gradsum", "e_p_av"}


# ---------------------------------------------------------------- emission


def test_report_emission_roundtrip(tmp_path):
    spec = tiny_spec(time_steps=(0.25, 0.125, 1 / 16), rel_tol=1e-8)
    report = run_convergence_study(spec)
    csv_path = tmp_path / "rows.csv"
    json_path = tmp_path / "report.json"
    gp_path = tmp_path / "plot.gp"
    write_csv(report, csv_path)
    write_json(report, json_path)
    write_gnuplot(report, gp_path)

    lines = csv_path.read_text().strip().splitlines()
    assert len(lines) == 1 + len(report.rows)
    assert lines[0] == ("variant,N,k,h,Np,e_u_max,e_u_av,e_gradsum,e_p_av,"
                        "se_u_max,se_u_av,se_gradsum,se_p_av,wall_time_s")

    data = json.loads(json_path.read_text())
    echoed = spec_from_dict(data["spec"])
    assert echoed == spec
    assert data["provenance"]["config_sha256"] == spec_digest(spec)
    assert set(data["rates"]) == {"e_u_max", "e_u_av", "e_gradsum", "e_p_av"}
    assert data["n_failed"] == 0

    script = gp_path.read_text()
    assert "plot " in script and "EOD" in script
    assert f"{report.rows[0].k:.10e}" in script
