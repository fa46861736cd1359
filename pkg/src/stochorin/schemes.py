"""Chorin time stepping for the periodic stochastic Stokes system.

Two variants share one driver.  Both advance an intermediate velocity with a
single vector mass+stiffness solve and recover pressure from a deflated
Poisson solve of the divergence; the end-of-step projected velocity is never
materialised because the discrete projection identity makes it redundant for
every quantity we record.

``standard``   momentum sees the previous pressure gradient and the raw
               noise load B(u^m) dW_{m+1}.
``modified``   the noise load is first split into a gradient part and a
               solenoidal remainder (one extra scalar Poisson solve); the
               gradient part is routed into the pressure update instead of
               the momentum equation.  The recorded pressure is then
               r^{m+1} + zeta^m / k with both running time integrals kept.

State fields are plain coefficient vectors in the interleaved layout of
:mod:`stochorin.fem`.  With ``ZeroNoise`` the two variants produce bitwise
identical velocities because the gradient potential is exactly zero and the
shared expressions are evaluated in the same order.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .fem import FemOperators, SolveConfig, h1_seminorm, l2_norm, solve_spd, zero_mean
from .noise import (
    IncrementTable,
    NoiseModel,
    QWienerSpec,
    evaluate_noise,
    helmholtz_decompose,
    nodal_mode_table,
)

Forcing = Union[Sequence[float], Callable[[float], object]]

_VARIANTS = ("standard", "modified")


@dataclass(frozen=True, eq=False)
class SchemeConfig:
    """Everything a single trajectory needs besides mesh and noise numbers."""

    variant: str
    k: float
    n_steps: int
    noise: NoiseModel
    qspec: QWienerSpec
    forcing: Forcing = (1.0, 1.0)
    solve: SolveConfig = field(default_factory=SolveConfig)

    def __post_init__(self):
        if self.variant not in _VARIANTS:
            raise ValueError(f"variant must be one of {_VARIANTS}, got {self.variant!r}")
        if self.k <= 0 or self.n_steps < 1:
            raise ValueError("need k > 0 and n_steps >= 1")


@dataclass(frozen=True, eq=False)
class ChorinState:
    u_tilde: np.ndarray
    pressure: np.ndarray          # standard: p^m, modified: r^m
    p_last: np.ndarray            # recorded pressure at the current step
    p_integral: np.ndarray        # k * sum of recorded pressures
    r_integral: Optional[np.ndarray]
    potential_last: Optional[np.ndarray]
    step_index: int


def initial_state(ops: FemOperators, cfg: SchemeConfig, initial_velocity=None) -> ChorinState:
    nv = ops.mesh.n_vertices
    if initial_velocity is None:
        u0 = np.zeros(2 * nv)
    else:
        u0 = np.asarray(initial_velocity, dtype=float)
        if u0.shape != (2 * nv,):
            raise ValueError(f"initial velocity must have shape ({2 * nv},)")
        u0 = u0.copy()
    zs = np.zeros(nv)
    r_int = zs.copy() if cfg.variant == "modified" else None
    pot = zs.copy() if cfg.variant == "modified" else None
    return ChorinState(u0, zs.copy(), zs.copy(), zs.copy(), r_int, pot, 0)


class _StepContext:
    """Per (operators, config) cache: momentum matrix, mode table, forcing."""

    def __init__(self, ops: FemOperators, cfg: SchemeConfig):
        self.momentum_op = (ops.mass_v + cfg.k * ops.stiff_v).tocsr()
        self.mode_table = nodal_mode_table(cfg.qspec, ops.mesh)
        self.plain = replace(cfg.solve, deflate_constants=False)
        self.deflated = replace(cfg.solve, deflate_constants=True)
        self._nv = ops.mesh.n_vertices
        if callable(cfg.forcing):
            self._forcing_fn = cfg.forcing
            self._static_load = None
        else:
            self._forcing_fn = None
            self._static_load = self._as_load(cfg.forcing)

    def _as_load(self, value) -> np.ndarray:
        arr = np.asarray(value, dtype=float)
        if arr.shape == (2,):
            out = np.empty(2 * self._nv)
            out[0::2], out[1::2] = arr[0], arr[1]
            return out
        if arr.shape == (2 * self._nv,):
            return arr
        raise ValueError("forcing must be a 2-vector of constants or a nodal field")

    def forcing_at(self, t: float) -> np.ndarray:
        if self._static_load is not None:
            return self._static_load
        return self._as_load(self._forcing_fn(t))


_CONTEXT_CACHE: dict = {}

# assembled divergence entries scale like h * |u|; below this the divergence
# is indistinguishable from roundoff and the pressure update is exactly zero
_DIV_FLOOR = 1e-13


def _context(ops: FemOperators, cfg: SchemeConfig) -> _StepContext:
    key = (id(ops), id(cfg))
    ctx = _CONTEXT_CACHE.get(key)
    if ctx is None:
        if len(_CONTEXT_CACHE) > 32:
            _CONTEXT_CACHE.clear()
        ctx = _CONTEXT_CACHE[key] = _StepContext(ops, cfg)
    return ctx


def _pressure_solve(ops, ctx, u_new, k, x0):
    div = ops.grad_coupling.T @ u_new
    floor = _DIV_FLOOR * ops.mesh.h * np.abs(u_new).max(initial=0.0)
    if np.abs(div).max(initial=0.0) <= floor:
        return np.zeros(ops.mesh.n_vertices)
    div -= div.mean()  # the divergence pairing integrates to zero; drop roundoff
    p = solve_spd(ops.stiff_s, div / k, ctx.deflated, x0=x0)
    return zero_mean(ops, p)


def _noise_load(state, ops, cfg, ctx, increment_row) -> np.ndarray:
    dw = ctx.mode_table.T @ np.asarray(increment_row, dtype=float)
    return evaluate_noise(cfg.noise, state.u_tilde) * np.repeat(dw, 2)


def standard_chorin_step(
    state: ChorinState, ops: FemOperators, cfg: SchemeConfig, increment_row
) -> ChorinState:
    ctx = _context(ops, cfg)
    k = cfg.k
    g = _noise_load(state, ops, cfg, ctx, increment_row)
    f = ctx.forcing_at((state.step_index + 1) * k)
    rhs = ops.mass_v @ (state.u_tilde + k * f + g) - ops.grad_coupling @ (k * state.pressure)
    u_new = solve_spd(ctx.momentum_op, rhs, ctx.plain, x0=state.u_tilde)
    p_new = _pressure_solve(ops, ctx, u_new, k, x0=state.pressure)
    return ChorinState(u_new, p_new, p_new, state.p_integral + k * p_new,
                       None, None, state.step_index + 1)


def modified_chorin_step(
    state: ChorinState, ops: FemOperators, cfg: SchemeConfig, increment_row
) -> ChorinState:
    ctx = _context(ops, cfg)
    k = cfg.k
    g = _noise_load(state, ops, cfg, ctx, increment_row)
    helm = helmholtz_decompose(ops, g, ctx.deflated)
    zeta = helm.potential
    f = ctx.forcing_at((state.step_index + 1) * k)
    rhs = (ops.mass_v @ (state.u_tilde + k * f + g)
           - ops.grad_coupling @ (k * state.pressure + zeta))
    u_new = solve_spd(ctx.momentum_op, rhs, ctx.plain, x0=state.u_tilde)
    r_new = _pressure_solve(ops, ctx, u_new, k, x0=state.pressure)
    p_new = zero_mean(ops, r_new + zeta / k)
    return ChorinState(u_new, r_new, p_new, state.p_integral + k * p_new,
                       state.r_integral + k * r_new, zeta, state.step_index + 1)


_STEPPERS = {"standard": standard_chorin_step, "modified": modified_chorin_step}


@dataclass(eq=False)
class TrajectoryRecord:
    variant: str
    k: float
    n_steps: int
    step_indices: np.ndarray      # checkpoint step numbers, ascending
    times: np.ndarray
    u: Optional[np.ndarray]       # (n_checkpoints, 2 nv) when store="fields"
    p_int: Optional[np.ndarray]   # (n_checkpoints, nv) running pressure integral
    r_int: Optional[np.ndarray]   # modified variant only
    u_l2: Optional[np.ndarray]    # norms when store="norms"
    u_h1: Optional[np.ndarray]
    p_int_l2: Optional[np.ndarray]
    wall_time_s: float


def run_trajectory(
    ops: FemOperators,
    cfg: SchemeConfig,
    increments,
    checkpoints=None,
    initial_velocity=None,
    store: str = "fields",
) -> TrajectoryRecord:
    """Advance one realisation and snapshot it at the requested step indices.

    ``increments`` is an :class:`IncrementTable` (its k must match cfg.k) or a
    bare (n_steps, n_modes) array.  ``checkpoints`` are integer step numbers
    in [0, n_steps]; None keeps every step.  ``store``: "fields" keeps the
    coefficient vectors, "norms" only their L2/H1 sizes.
    """
    if isinstance(increments, IncrementTable):
        if abs(increments.k - cfg.k) > 1e-12 * cfg.k:
            raise ValueError(f"increment table step {increments.k} != config step {cfg.k}")
        table = increments.increments
    else:
        table = np.asarray(increments, dtype=float)
    if table.shape != (cfg.n_steps, cfg.qspec.n_modes):
        raise ValueError(
            f"need increments of shape {(cfg.n_steps, cfg.qspec.n_modes)}, got {table.shape}"
        )

    if checkpoints is None:
        marks = np.arange(cfg.n_steps + 1)
    else:
        marks = np.unique(np.asarray(list(checkpoints), dtype=int))
        if marks.size == 0 or marks[0] < 0 or marks[-1] > cfg.n_steps:
            raise ValueError("checkpoints must be step indices in [0, n_steps]")
    if store not in ("fields", "norms"):
        raise ValueError("store must be 'fields' or 'norms'")

    nv = ops.mesh.n_vertices
    n_cp = marks.size
    modified = cfg.variant == "modified"
    if store == "fields":
        u = np.empty((n_cp, 2 * nv))
        p_int = np.empty((n_cp, nv))
        r_int = np.empty((n_cp, nv)) if modified else None
        u_l2 = u_h1 = p_int_l2 = None
    else:
        u = p_int = r_int = None
        u_l2 = np.empty(n_cp)
        u_h1 = np.empty(n_cp)
        p_int_l2 = np.empty(n_cp)

    def snapshot(slot, st):
        if store == "fields":
            u[slot] = st.u_tilde
            p_int[slot] = st.p_integral
            if modified:
                r_int[slot] = st.r_integral
        else:
            u_l2[slot] = l2_norm(ops, st.u_tilde)
            u_h1[slot] = h1_seminorm(ops, st.u_tilde)
            p_int_l2[slot] = l2_norm(ops, st.p_integral)

    t0 = time.perf_counter()
    step = _STEPPERS[cfg.variant]
    state = initial_state(ops, cfg, initial_velocity)
    slot = 0
    if marks[0] == 0:
        snapshot(0, state)
        slot = 1
    for m in range(cfg.n_steps):
        state = step(state, ops, cfg, table[m])
        if slot < n_cp and marks[slot] == m + 1:
            snapshot(slot, state)
            slot += 1

    return TrajectoryRecord(
        variant=cfg.variant,
        k=cfg.k,
        n_steps=cfg.n_steps,
        step_indices=marks,
        times=marks * cfg.k,
        u=u,
        p_int=p_int,
        r_int=r_int,
        u_l2=u_l2,
        u_h1=u_h1,
        p_int_l2=p_int_l2,
        wall_time_s=time.perf_counter() - t0,
    )
