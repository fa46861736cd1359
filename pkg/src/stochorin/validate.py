"""Pre-flight invariant suite.

A short battery of structural checks covering assembly identities, the
discrete Helmholtz projection, path coarsening exactness, the per-step
projection identity, and the deterministic degenerate cases.  Studies should
only be trusted when every check passes; the CLI runs a quick pass before
dispatching any study.

Every check reports a scalar ``measured`` residual held against a
``threshold``; ``passed`` is simply ``measured <= threshold`` so results print
and serialize uniformly.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .fem import (
    SolveConfig,
    assemble_operators,
    build_periodic_mesh,
    interpolate_nodal,
    l2_norm,
    quadrature_load,
    solve_spd,
)
from .noise import (
    SqrtPlusOne,
    ZeroNoise,
    build_qwiener_spec,
    coarsen_increments,
    gradient_residual,
    helmholtz_decompose,
    sample_brownian_path,
)
from .schemes import (
    SchemeConfig,
    initial_state,
    run_trajectory,
    standard_chorin_step,
)


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    measured: float
    threshold: float
    detail: str
    elapsed_s: float

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (
            f"[{status}] {self.name}: measured {self.measured:.3e}"
            f" vs threshold {self.threshold:.3e} ({self.detail})"
        )


def _result(name, measured, threshold, detail, started):
    measured = float(measured)
    return CheckResult(
        name=name,
        passed=bool(measured <= threshold),
        measured=measured,
        threshold=float(threshold),
        detail=detail,
        elapsed_s=time.perf_counter() - started,
    )


def _ops(n):
    return assemble_operators(build_periodic_mesh(n))


def check_stiffness_kernel(quick=False):
    """Constants lie in the stiffness kernel exactly."""
    started = time.perf_counter()
    worst = 0.0
    for n in (8,) if quick else (8, 12):
        ops = _ops(n)
        ones = np.ones(ops.mesh.n_vertices)
        worst = max(worst, np.abs(ops.stiff_s @ ones).max())
        worst = max(worst, np.abs(ops.stiff_v @ np.ones(2 * ops.mesh.n_vertices)).max())
    return _result(
        "stiffness-kernel", worst, 1e-14, "max |K @ const| over scalar and vector", started
    )


def check_mass_partition(quick=False):
    """Mass matrix rows sum to h^2 and the total mass equals the area."""
    started = time.perf_counter()
    worst = 0.0
    for n in (8,) if quick else (8, 12):
        ops = _ops(n)
        h2 = ops.mesh.h**2
        rows = np.asarray(ops.mass_s.sum(axis=1)).ravel()
        worst = max(worst, np.abs(rows - h2).max() / h2)
        worst = max(worst, abs(ops.mass_s.sum() - 1.0))
    return _result(
        "mass-partition", worst, 1e-14, "row sums vs h^2 and total mass vs area", started
    )


def _quadrature_l2_gap(mesh, coeffs, fn):
    # edge-midpoint rule, exact for quadratics, compared modulo constants
    xy = mesh.tri_corners
    vals = coeffs[mesh.triangles]
    diffs = []
    for e in range(3):
        a, b = e, (e + 1) % 3
        mid = 0.5 * (xy[:, a, :] + xy[:, b, :])
        uh = 0.5 * (vals[:, a] + vals[:, b])
        diffs.append(uh - fn(mid[:, 0], mid[:, 1]))
    d = np.concatenate(diffs)
    d -= d.mean()
    return float(np.sqrt(mesh.tri_area / 3.0 * (d**2).sum()))


def check_poisson_order(quick=False):
    """Manufactured periodic Poisson solve converges at second order."""
    started = time.perf_counter()
    meshes = (8, 16) if quick else (8, 16, 32)
    errs, hs = [], []
    for n in meshes:
        ops = _ops(n)
        rhs = quadrature_load(ops, lambda x, y: np.sin(2 * np.pi * x))
        rhs -= rhs.mean()
        u = solve_spd(ops.stiff_s, rhs, SolveConfig(rel_tol=1e-12, deflate_constants=True))
        errs.append(
            _quadrature_l2_gap(
                ops.mesh, u, lambda x, y: np.sin(2 * np.pi * x) / (4 * np.pi**2)
            )
        )
        hs.append(ops.mesh.h)
    slope = float(np.polyfit(np.log(hs), np.log(errs), 1)[0])
    return _result(
        "poisson-order",
        abs(slope - 2.0),
        0.2,
        f"|slope - 2| with fitted slope {slope:.3f}",
        started,
    )


def check_helmholtz_orthogonality(quick=False):
    """The gradient part is removed weakly and the potential is zero-mean."""
    started = time.perf_counter()
    worst = 0.0
    for n in (8,) if quick else (8, 16):
        ops = _ops(n)
        rng = np.random.default_rng(n)
        load = rng.standard_normal(2 * n * n)
        res = helmholtz_decompose(ops, load)
        scale = np.linalg.norm(ops.grad_coupling.T @ load)
        worst = max(worst, np.linalg.norm(gradient_residual(ops, res)) / scale)
        worst = max(worst, abs(ops.lumped_mass @ res.potential))
    return _result(
        "helmholtz-orthogonality", worst, 1e-9, "weak residual of the gradient part", started
    )


def check_coarsening_exact(quick=False):
    """Coarse increments equal strided sums of the fine table bitwise."""
    started = time.perf_counter()
    spec = build_qwiener_spec(2)
    path = sample_brownian_path(spec, 64, seed=17)
    fine = coarsen_increments(path, 1).increments
    worst = 0.0
    for factor in (2, 4, 8):
        coarse = coarsen_increments(path, factor).increments
        expected = np.zeros_like(coarse)
        for i in range(factor):
            expected += fine[i::factor]
        worst = max(worst, np.abs(coarse - expected).max())
    return _result(
        "coarsening-exact", worst, 0.0, "coarse table vs summed fine table, bitwise", started
    )


def check_divergence_identity(quick=False):
    """Each step couples end-of-step divergence and pressure exactly."""
    started = time.perf_counter()
    n_steps = 16 if quick else 64
    ops = _ops(8)
    cfg = SchemeConfig(
        variant="standard",
        k=1 / 64,
        n_steps=n_steps,
        noise=SqrtPlusOne(10.0),
        qspec=build_qwiener_spec(2),
        solve=SolveConfig(rel_tol=1e-10),
    )
    table = coarsen_increments(sample_brownian_path(cfg.qspec, 64, seed=5), 1).increments
    state = initial_state(ops, cfg)
    worst = 0.0
    for m in range(n_steps):
        state = standard_chorin_step(state, ops, cfg, table[m])
        resid = ops.grad_coupling.T @ state.u_tilde - cfg.k * (ops.stiff_s @ state.pressure)
        worst = max(worst, np.abs(resid).max() / max(l2_norm(ops, state.u_tilde), 1e-30))
    return _result(
        "divergence-identity", worst, 1e-9, "relative projection residual per step", started
    )


def check_zero_noise_degeneracy(quick=False):
    """With zero noise both variants coincide and the seed is irrelevant."""
    started = time.perf_counter()
    n_steps = 8 if quick else 16
    ops = _ops(8)
    zeros = np.zeros((n_steps, 4))

    def run(variant):
        cfg = SchemeConfig(
            variant=variant,
            k=1 / 32,
            n_steps=n_steps,
            noise=ZeroNoise(),
            qspec=build_qwiener_spec(2),
            solve=SolveConfig(rel_tol=1e-12),
        )
        return run_trajectory(ops, cfg, zeros, store="fields")

    first, second = run("standard"), run("standard")
    bit_gap = 0.0 if all(
        np.array_equal(a, b) for a, b in ((first.u, second.u), (first.p_int, second.p_int))
    ) else 1.0
    modified = run("modified")
    scale = max(np.abs(first.u[-1]).max(), 1e-30)
    variant_gap = np.abs(modified.u[-1] - first.u[-1]).max() / scale
    return _result(
        "zero-noise-degeneracy",
        max(bit_gap, variant_gap),
        1e-12,
        "repeat-run bit gap and modified-vs-standard relative gap",
        started,
    )


def check_energy_monotone(quick=False):
    """Unforced noiseless runs dissipate the velocity norm monotonically."""
    started = time.perf_counter()
    n_steps = 12 if quick else 24
    ops = _ops(8)
    u0 = interpolate_nodal(
        ops.mesh, lambda x, y: (np.sin(2 * np.pi * y), -np.sin(2 * np.pi * x))
    )
    cfg = SchemeConfig(
        variant="standard",
        k=1 / 16,
        n_steps=n_steps,
        noise=ZeroNoise(),
        qspec=build_qwiener_spec(2),
        forcing=(0.0, 0.0),
        solve=SolveConfig(rel_tol=1e-12),
    )
    rec = run_trajectory(ops, cfg, np.zeros((n_steps, 4)), initial_velocity=u0, store="norms")
    rises = np.diff(rec.u_l2)
    worst = max(float(rises.max(initial=-np.inf)) / rec.u_l2[0], 0.0)
    return _result(
        "energy-monotone", worst, 1e-12, "largest relative per-step norm rise", started
    )


ALL_CHECKS = (
    check_stiffness_kernel,
    check_mass_partition,
    check_poisson_order,
    check_helmholtz_orthogonality,
    check_coarsening_exact,
    check_divergence_identity,
    check_zero_noise_degeneracy,
    check_energy_monotone,
)


def run_validation(quick: bool = False) -> list:
    """Run every invariant check; returns the list of CheckResults."""
    return [check(quick=quick) for check in ALL_CHECKS]


def validation_passed(results) -> bool:
    return all(r.passed for r in results)
