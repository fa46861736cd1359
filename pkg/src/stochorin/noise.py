"""Q-Wiener increments on the periodic square and noise-load splitting.

The driving noise is expanded in the product-sine modes
``g_{j,l}(x, y) = sin(j pi x) sin(l pi y)`` for ``(j, l)`` in
``{1..J}^2``.  Each g has L2 norm 1/2, so the normalised eigenfunctions
are ``e_{j,l} = 2 g_{j,l}`` and the covariance eigenvalues are
``lambda_{j,l} = (1/2) / (j + l)^2``.

A sampled path stores its increments only at the finest resolution k0;
every coarser increment table is derived from that table by summing
groups of consecutive fine increments in ascending index order.  Because
all derived tables reference the finest one, coarsening by r then by s
is bit-identical to coarsening by r*s, and fine/coarse trajectory pairs
see exactly the same Brownian path.

Per-realization seeds should be derived with :func:`mix64` from a master
seed; normal variates come from numpy's PCG64 generator via
``standard_normal`` (ziggurat), which is deterministic for a fixed numpy
version.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import lru_cache
from typing import Callable

import numpy as np

from .fem import FemOperators, PeriodicMesh, SolveConfig, solve_spd

__all__ = [
    "NonDivisibleFactor",
    "QWienerSpec",
    "BrownianPath",
    "IncrementTable",
    "NoiseModel",
    "SqrtPlusOne",
    "ZeroNoise",
    "CustomNoise",
    "HelmholtzResult",
    "mix64",
    "build_qwiener_spec",
    "sample_brownian_path",
    "coarsen_increments",
    "nodal_mode_table",
    "increment_field",
    "evaluate_noise",
    "helmholtz_decompose",
    "gradient_residual",
    "projected_momentum_load",
]

_MASK64 = (1 << 64) - 1
_SCALINGS = ("sqrt_k", "k")


class NonDivisibleFactor(ValueError):
    """Coarsening factor does not divide the number of fine steps."""


def mix64(seed: int, index: int) -> int:
    """Avalanche-mix a master seed with a stream index into a 64-bit seed.

    splitmix64 finalizer applied to ``seed + (index + 1) * golden``; small
    changes in either argument flip about half the output bits, so
    consecutive realization indices give statistically unrelated streams.
    """
    z = (seed + (index + 1) * 0x9E3779B97F4A7C15) & _MASK64
    z ^= z >> 30
    z = (z * 0xBF58476D1CE4E5B9) & _MASK64
    z ^= z >> 27
    z = (z * 0x94D049BB133111EB) & _MASK64
    z ^= z >> 31
    return z


@dataclass(frozen=True, eq=False)
class QWienerSpec:
    """Covariance spectrum of the driving Q-Wiener process."""

    j_max: int
    frequencies: np.ndarray  # (n_modes, 2) int, row-major in (j, l)
    eigenvalues: np.ndarray  # (n_modes,)

    @property
    def n_modes(self) -> int:
        return len(self.eigenvalues)


def build_qwiener_spec(j_max: int) -> QWienerSpec:
    """Spectrum for the modes (j, l) in {1..j_max}^2, row-major order."""
    if j_max < 1:
        raise ValueError(f"need at least one mode per direction, got {j_max}")
    freqs = np.array([(j, l) for j in range(1, j_max + 1) for l in range(1, j_max + 1)])
    lams = 0.5 / (freqs.sum(axis=1).astype(float) ** 2)
    return QWienerSpec(j_max=j_max, frequencies=freqs, eigenvalues=lams)


@dataclass(frozen=True, eq=False)
class BrownianPath:
    """One realization of the mode increments at the finest step size k0.

    ``increments[m, q]`` is the scaled increment of mode q over
    ``[m k0, (m+1) k0]``: ``sqrt(k0 * lambda_q) * xi`` with xi standard
    normal under the default ``sqrt_k`` scaling, or ``k0 sqrt(lambda_q) * xi``
    under the alternative ``k`` scaling.
    """

    spec: QWienerSpec
    t_final: float
    m0: int
    k0: float
    seed: int
    scaling: str
    increments: np.ndarray  # (m0, n_modes)


@dataclass(frozen=True, eq=False)
class IncrementTable:
    """Increments at step size ``factor * k0``, derived from a fine path."""

    path: BrownianPath
    factor: int
    k: float
    increments: np.ndarray  # (m0 / factor, n_modes)

    @property
    def n_steps(self) -> int:
        return len(self.increments)


def sample_brownian_path(
    spec: QWienerSpec,
    m0: int,
    seed: int,
    t_final: float = 1.0,
    scaling: str = "sqrt_k",
) -> BrownianPath:
    """Draw the full fine-resolution increment table for one realization."""
    if m0 < 1:
        raise ValueError(f"need at least one time step, got {m0}")
    if t_final <= 0:
        raise ValueError(f"final time must be positive, got {t_final}")
    if scaling not in _SCALINGS:
        raise ValueError(f"scaling must be one of {_SCALINGS}, got {scaling!r}")
    k0 = t_final / m0
    rng = np.random.Generator(np.random.PCG64(seed))
    draws = rng.standard_normal((m0, spec.n_modes))
    if scaling == "sqrt_k":
        scale = np.sqrt(k0 * spec.eigenvalues)
    else:
        scale = k0 * np.sqrt(spec.eigenvalues)
    return BrownianPath(
        spec=spec,
        t_final=t_final,
        m0=m0,
        k0=k0,
        seed=seed,
        scaling=scaling,
        increments=draws * scale,
    )


def coarsen_increments(source, factor: int) -> IncrementTable:
    """Increment table at ``factor`` times the source's step size.

    Coarse increment m is the sum of the finest-level increments it spans,
    accumulated in ascending fine-index order; tables derived from tables
    always recompute from the finest level, so compositions of coarsenings
    are bit-exact.
    """
    if isinstance(source, BrownianPath):
        path, base = source, 1
    else:
        path, base = source.path, source.factor
    if factor < 1:
        raise NonDivisibleFactor(f"coarsening factor must be >= 1, got {factor}")
    total = base * int(factor)
    if path.m0 % total:
        raise NonDivisibleFactor(
            f"factor {total} does not divide {path.m0} fine steps"
        )
    if total == 1:
        table = path.increments.copy()
    else:
        table = np.zeros((path.m0 // total, path.spec.n_modes))
        for i in range(total):
            table += path.increments[i::total]
    return IncrementTable(path=path, factor=total, k=path.k0 * total, increments=table)


@lru_cache(maxsize=None)
def nodal_mode_table(spec: QWienerSpec, mesh: PeriodicMesh) -> np.ndarray:
    """Eigenfunction values at mesh vertices, shape (n_modes, n_vertices)."""
    x, y = mesh.vertices[:, 0], mesh.vertices[:, 1]
    j = spec.frequencies[:, 0][:, None]
    l = spec.frequencies[:, 1][:, None]
    return 2.0 * np.sin(j * np.pi * x[None, :]) * np.sin(l * np.pi * y[None, :])


def increment_field(spec: QWienerSpec, mesh: PeriodicMesh, row) -> np.ndarray:
    """Nodal values of one increment row, sum over modes of row[q] e_q(x)."""
    return nodal_mode_table(spec, mesh).T @ np.asarray(row, dtype=float)


# --------------------------------------------------------------------------
# multiplicative noise coefficients


class NoiseModel:
    """Componentwise diffusion coefficient applied to nodal velocity values."""

    def __call__(self, values: np.ndarray) -> np.ndarray:
        raise NotImplementedError


@dataclass(frozen=True)
class SqrtPlusOne(NoiseModel):
    """B(u) = coeff * sqrt(u^2 + 1) componentwise: Lipschitz, linear growth,
    and non-degenerate at u = 0."""

    coeff: float = 1.0

    def __call__(self, values: np.ndarray) -> np.ndarray:
        return self.coeff * np.sqrt(values * values + 1.0)


@dataclass(frozen=True)
class ZeroNoise(NoiseModel):
    """Switches the stochastic forcing off entirely."""

    def __call__(self, values: np.ndarray) -> np.ndarray:
        return np.zeros_like(values)


class CustomNoise(NoiseModel):
    """Wrap an arbitrary componentwise callable."""

    def __init__(self, fn: Callable[[np.ndarray], np.ndarray]):
        self.fn = fn

    def __call__(self, values: np.ndarray) -> np.ndarray:
        return np.asarray(self.fn(values), dtype=float)


def evaluate_noise(model: NoiseModel, values) -> np.ndarray:
    """Apply a noise model to nodal values (componentwise)."""
    return model(np.asarray(values, dtype=float))


# --------------------------------------------------------------------------
# discrete Helmholtz splitting of noise loads


@dataclass(frozen=True, eq=False)
class HelmholtzResult:
    """Splitting of a nodal vector load into gradient and solenoidal parts.

    ``potential`` is the zero-mean scalar field with
    (grad potential, grad phi) = (load, grad phi) for every P1 test
    function phi.  The solenoidal remainder is kept implicitly as the pair
    (load_nodal, potential): its pairing against vector test functions is
    assembled exactly by :func:`projected_momentum_load`.
    """

    potential: np.ndarray
    load_nodal: np.ndarray


def helmholtz_decompose(
    ops: FemOperators, load, cfg: SolveConfig | None = None
) -> HelmholtzResult:
    """Split a nodal load; one deflated Poisson solve.

    Loads that are already discretely solenoidal (constants, previously
    projected parts) leave only assembly roundoff in the potential
    equation; anything below that floor maps to an exactly zero potential.
    """
    load = np.asarray(load, dtype=float)
    if cfg is None:
        cfg = SolveConfig(deflate_constants=True)
    elif not cfg.deflate_constants:
        cfg = replace(cfg, deflate_constants=True)
    rhs = ops.grad_coupling.T @ load
    roundoff = 1e-13 * ops.mesh.h * np.abs(load).max(initial=0.0)
    if np.abs(rhs).max(initial=0.0) <= roundoff:
        potential = np.zeros(ops.mesh.n_vertices)
    else:
        potential = solve_spd(ops.stiff_s, rhs, cfg)
    return HelmholtzResult(potential=potential, load_nodal=load)


def gradient_residual(ops: FemOperators, result: HelmholtzResult) -> np.ndarray:
    """Residual of the solenoidal part tested against gradients (should be
    at solver tolerance): G^T load - K potential."""
    return ops.grad_coupling.T @ result.load_nodal - ops.stiff_s @ result.potential


def projected_momentum_load(ops: FemOperators, result: HelmholtzResult) -> np.ndarray:
    """Exact pairing of the solenoidal part with all vector test functions."""
    return ops.mass_v @ result.load_nodal - ops.grad_coupling @ result.potential
