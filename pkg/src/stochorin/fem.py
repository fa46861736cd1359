"""P1 finite elements on the periodic unit square.

The mesh is a uniform N x N grid of cells, each split along its
(i, j) -> (i+1, j+1) diagonal, with opposite edges of the square
identified.  That leaves N^2 distinct vertices; vertex (i, j) maps to
dof ``(i mod N) + N * (j mod N)``.

Field conventions used throughout the package:

* scalar fields are coefficient vectors of length N^2;
* vector fields are interleaved coefficient vectors of length 2 N^2,
  x-component at even positions, y-component at odd positions.

All element integrals of P1 products are closed-form polynomials in h,
so the assembled operators are exact up to float rounding: the stiffness
kernel contains the constants exactly and the mass matrix sums to the
domain area exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

__all__ = [
    "MeshError",
    "IncompatibleRhs",
    "MaxIterationsExceeded",
    "SolveConfig",
    "PeriodicMesh",
    "FemOperators",
    "build_periodic_mesh",
    "assemble_operators",
    "interpolate_nodal",
    "quadrature_load",
    "l2_project",
    "solve_spd",
    "l2_norm",
    "h1_seminorm",
    "zero_mean",
    "interleave",
    "prolongation_matrix",
]

# relative size below which the constant component of a deflated rhs is
# considered numerical noise rather than a genuine incompatibility
_COMPAT_TOL = 1e-12


class MeshError(ValueError):
    """Invalid mesh request."""


class IncompatibleRhs(RuntimeError):
    """Right-hand side has a non-negligible component in the solver kernel."""


class MaxIterationsExceeded(RuntimeError):
    """Conjugate gradients stopped before reaching the requested tolerance."""


@dataclass(frozen=True)
class SolveConfig:
    """Tolerances for the conjugate-gradient solves.

    ``deflate_constants`` projects the constant mode out of the right-hand
    side and all iterates, which makes the singular periodic Laplacian
    systems well posed without touching the matrix.
    """

    rel_tol: float = 1e-10
    max_iter: int = 2000
    deflate_constants: bool = False


@dataclass(frozen=True, eq=False)
class PeriodicMesh:
    """Uniform diagonally split triangulation of the periodic unit square."""

    n_cells: int
    h: float
    n_vertices: int
    vertices: np.ndarray  # (n_vertices, 2) positions in [0, 1)^2
    triangles: np.ndarray  # (2 n_cells^2, 3) wrapped vertex ids, ccw
    tri_corners: np.ndarray  # (2 n_cells^2, 3, 2) unwrapped corner coords
    tri_area: float

    def vertex_index(self, i, j):
        """Dof index of grid vertex (i, j), wrapping either index."""
        n = self.n_cells
        return (np.asarray(i) % n) + n * (np.asarray(j) % n)


def build_periodic_mesh(n_cells: int) -> PeriodicMesh:
    """Build the periodic triangulation with ``n_cells`` cells per side."""
    if n_cells < 1:
        raise MeshError(f"mesh needs at least one cell per side, got {n_cells}")
    n = int(n_cells)
    h = 1.0 / n
    ii, jj = np.meshgrid(np.arange(n), np.arange(n), indexing="xy")
    ci, cj = ii.ravel(), jj.ravel()  # cell indices, x fastest

    def vid(di, dj):
        return (ci + di) % n + n * ((cj + dj) % n)

    lower = np.stack([vid(0, 0), vid(1, 0), vid(1, 1)], axis=1)
    upper = np.stack([vid(0, 0), vid(1, 1), vid(0, 1)], axis=1)
    triangles = np.empty((2 * n * n, 3), dtype=np.int64)
    triangles[0::2] = lower
    triangles[1::2] = upper

    def corners(offsets):
        pts = [np.stack([(ci + a) * h, (cj + b) * h], axis=1) for a, b in offsets]
        return np.stack(pts, axis=1)

    tri_corners = np.empty((2 * n * n, 3, 2))
    tri_corners[0::2] = corners(((0, 0), (1, 0), (1, 1)))
    tri_corners[1::2] = corners(((0, 0), (1, 1), (0, 1)))

    verts = np.stack([(ii * h).ravel(), (jj * h).ravel()], axis=1)
    return PeriodicMesh(
        n_cells=n,
        h=h,
        n_vertices=n * n,
        vertices=verts,
        triangles=triangles,
        tri_corners=tri_corners,
        tri_area=0.5 * h * h,
    )


@dataclass(frozen=True, eq=False)
class FemOperators:
    """Assembled P1 operators on one periodic mesh.

    Attributes
    ----------
    mass_s, stiff_s : csr_matrix, (N^2, N^2)
        Scalar mass and stiffness.
    mass_v, stiff_v : csr_matrix, (2 N^2, 2 N^2)
        Componentwise vector versions, interleaved dof ordering.
    grad_coupling : csr_matrix, (2 N^2, N^2)
        G with v @ (G @ q) = (grad q_h, v_h); its transpose realises the
        discrete (v_h, grad .) pairing used by the pressure systems.
    lumped_mass : ndarray, (N^2,)
        Row sums of the mass matrix (uniformly h^2 here); used as the
        weight vector for discrete means.
    """

    mesh: PeriodicMesh
    mass_s: sp.csr_matrix
    stiff_s: sp.csr_matrix
    mass_v: sp.csr_matrix
    stiff_v: sp.csr_matrix
    grad_coupling: sp.csr_matrix
    lumped_mass: np.ndarray


def _p1_element_tables(mesh: PeriodicMesh):
    """Per-triangle basis gradients and areas from the corner coordinates."""
    xy = mesh.tri_corners
    x, y = xy[..., 0], xy[..., 1]
    b = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1)
    c = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1)
    area = 0.5 * (b[:, 0] * c[:, 1] - b[:, 1] * c[:, 0])  # positive: ccw corners
    grads = np.stack([b, c], axis=2) / (2.0 * area[:, None, None])
    return grads, area


def assemble_operators(mesh: PeriodicMesh) -> FemOperators:
    """Assemble mass, stiffness and gradient-coupling operators.

    Element matrices come from the exact closed-form P1 integrals
    (mass = area/12 * (1 + delta_ab), stiffness = area * grad_a . grad_b,
    coupling = area/3 * component of grad_b), scattered into sparse
    matrices with duplicate summation.
    """
    grads, area = _p1_element_tables(mesh)
    nt = len(area)
    nv = mesh.n_vertices
    tri = mesh.triangles

    rows = np.repeat(tri, 3, axis=1).ravel()
    cols = np.tile(tri, (1, 3)).ravel()

    me = (np.ones((3, 3)) + np.eye(3)) / 12.0
    mvals = (area[:, None, None] * me).ravel()
    kvals = (area[:, None, None] * np.einsum("tac,tbc->tab", grads, grads)).ravel()

    shape = (nv, nv)
    mass_s = sp.csr_matrix(sp.coo_matrix((mvals, (rows, cols)), shape=shape))
    stiff_s = sp.csr_matrix(sp.coo_matrix((kvals, (rows, cols)), shape=shape))
    stiff_s.eliminate_zeros()  # diagonal couplings cancel exactly on this split

    # coupling entries are independent of the row basis function
    gvals = np.broadcast_to(
        (area[:, None, None, None] / 3.0) * grads[:, None, :, :], (nt, 3, 3, 2)
    ).ravel()
    grows = (2 * np.repeat(tri, 3, axis=1)[..., None] + np.arange(2)).ravel()
    gcols = np.tile(tri, (1, 3))[..., None].repeat(2, axis=2).ravel()
    grad_coupling = sp.csr_matrix(
        sp.coo_matrix((gvals, (grows, gcols)), shape=(2 * nv, nv))
    )

    eye2 = sp.identity(2, format="csr")
    return FemOperators(
        mesh=mesh,
        mass_s=mass_s,
        stiff_s=stiff_s,
        mass_v=sp.kron(mass_s, eye2, format="csr"),
        stiff_v=sp.kron(stiff_s, eye2, format="csr"),
        grad_coupling=grad_coupling,
        lumped_mass=np.asarray(mass_s.sum(axis=1)).ravel(),
    )


# --------------------------------------------------------------------------
# nodal data, loads, projection


def interleave(fx, fy) -> np.ndarray:
    """Pack two component arrays into one interleaved vector field."""
    fx = np.asarray(fx, dtype=float)
    fy = np.asarray(fy, dtype=float)
    out = np.empty(2 * fx.size)
    out[0::2], out[1::2] = fx, fy
    return out


def _eval_on_points(fn, x, y):
    """Evaluate fn on coordinate arrays; returns (values, is_vector)."""
    val = fn(x, y)
    if isinstance(val, (tuple, list)):
        if len(val) != 2:
            raise ValueError("vector-valued functions must return two components")
        vx = np.broadcast_to(np.asarray(val[0], dtype=float), x.shape)
        vy = np.broadcast_to(np.asarray(val[1], dtype=float), x.shape)
        return (vx, vy), True
    return np.broadcast_to(np.asarray(val, dtype=float), x.shape), False


def quadrature_load(ops: FemOperators, fn) -> np.ndarray:
    """Load vector (fn, basis) by the symmetric degree-2 edge-midpoint rule.

    ``fn(x, y)`` must accept coordinate arrays; return a single array for
    scalar data or a pair of components for vector data (vector loads come
    back interleaved).
    """
    mesh = ops.mesh
    xy = mesh.tri_corners
    # edge midpoints and the P1 basis values there
    qpts = 0.5 * (xy + np.roll(xy, -1, axis=1))  # (nt, 3, 2)
    bary = np.array([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]])
    w = mesh.tri_area / 3.0
    val, is_vec = _eval_on_points(fn, qpts[..., 0], qpts[..., 1])
    tri = mesh.triangles

    def accumulate(v):
        contrib = w * np.einsum("tq,qa->ta", v, bary)
        out = np.zeros(mesh.n_vertices)
        np.add.at(out, tri, contrib)
        return out

    if is_vec:
        return interleave(accumulate(val[0]), accumulate(val[1]))
    return accumulate(val)


def interpolate_nodal(mesh: PeriodicMesh, fn) -> np.ndarray:
    """Nodal interpolant coefficients of a scalar or vector function."""
    x, y = mesh.vertices[:, 0], mesh.vertices[:, 1]
    val, is_vec = _eval_on_points(fn, x, y)
    if is_vec:
        return interleave(val[0], val[1])
    return val.copy()


def l2_project(ops: FemOperators, fn, cfg: SolveConfig | None = None) -> np.ndarray:
    """L2 projection of analytic data onto the P1 space (mass solve)."""
    cfg = cfg or SolveConfig()
    load = quadrature_load(ops, fn)
    if load.size == ops.mesh.n_vertices:
        return solve_spd(ops.mass_s, load, cfg)
    return interleave(
        solve_spd(ops.mass_s, load[0::2], cfg),
        solve_spd(ops.mass_s, load[1::2], cfg),
    )


# --------------------------------------------------------------------------
# solver


def solve_spd(op, rhs, cfg: SolveConfig = SolveConfig(), x0=None) -> np.ndarray:
    """Conjugate-gradient solve of a symmetric positive (semi)definite system.

    With ``cfg.deflate_constants`` the constant mode is removed from the
    right-hand side and every iterate, and the returned solution is
    normalised to zero mean; the rhs must then be discretely compatible
    (its constant component below 1e-12 relative), else IncompatibleRhs.

    Raises MaxIterationsExceeded if the relative residual has not reached
    ``cfg.rel_tol`` within ``cfg.max_iter`` iterations.
    """
    rhs = np.asarray(rhs, dtype=float)
    n = rhs.shape[0]
    if not np.any(rhs):
        return np.zeros(n)

    if cfg.deflate_constants:
        total = rhs.sum()
        scale = np.abs(rhs).sum()
        if abs(total) > _COMPAT_TOL * max(scale, np.finfo(float).tiny):
            raise IncompatibleRhs(
                f"constant rhs component {total:.3e} exceeds {_COMPAT_TOL:g} "
                f"of scale {scale:.3e}"
            )
        b = rhs - total / n

        def matvec(v):
            w = op @ v
            return w - w.sum() / n

        lin = spla.LinearOperator((n, n), matvec=matvec, dtype=float)
        start = None if x0 is None else x0 - x0.sum() / n
    else:
        b = rhs
        lin = op
        start = x0

    x, info = spla.cg(
        lin, b, x0=start, rtol=cfg.rel_tol, atol=0.0, maxiter=cfg.max_iter
    )
    if info != 0:
        res = np.linalg.norm(op @ x - b) / np.linalg.norm(b)
        raise MaxIterationsExceeded(
            f"cg stopped after {cfg.max_iter} iterations at relative "
            f"residual {res:.3e} (target {cfg.rel_tol:g})"
        )
    if cfg.deflate_constants:
        x = x - x.sum() / n  # uniform mesh: arithmetic mean == measure mean
    return x


# --------------------------------------------------------------------------
# norms and means


def _pick(ops: FemOperators, coeffs, scalar_op, vector_op):
    c = np.asarray(coeffs, dtype=float)
    if c.size == ops.mesh.n_vertices:
        return scalar_op, c
    if c.size == 2 * ops.mesh.n_vertices:
        return vector_op, c
    raise ValueError(f"coefficient vector of length {c.size} fits neither field kind")


def l2_norm(ops: FemOperators, coeffs) -> float:
    """L2 norm of a scalar or interleaved vector field."""
    op, c = _pick(ops, coeffs, ops.mass_s, ops.mass_v)
    return float(np.sqrt(max(c @ (op @ c), 0.0)))


def h1_seminorm(ops: FemOperators, coeffs) -> float:
    """H1 seminorm (L2 norm of the broken gradient) of a field."""
    op, c = _pick(ops, coeffs, ops.stiff_s, ops.stiff_v)
    return float(np.sqrt(max(c @ (op @ c), 0.0)))


def zero_mean(ops: FemOperators, coeffs) -> np.ndarray:
    """Shift a scalar field by a constant to zero measure-weighted mean."""
    c = np.asarray(coeffs, dtype=float)
    w = ops.lumped_mass
    return c - (w @ c) / w.sum()


# --------------------------------------------------------------------------
# inter-mesh transfer


def prolongation_matrix(coarse: PeriodicMesh, fine: PeriodicMesh) -> sp.csr_matrix:
    """P1 interpolation of coarse nodal fields onto a finer mesh's vertices.

    Cell location and barycentric weights are computed in integer
    arithmetic (vertex coordinates are i/N by construction), so nested
    refinements reproduce coarse fields exactly.
    """
    nc, nf = coarse.n_cells, fine.n_cells
    if nf < nc:
        raise MeshError(f"prolongation expects a finer target ({nc} -> {nf})")
    if nc == nf:
        return sp.identity(coarse.n_vertices, format="csr")

    i = np.arange(nf)
    if_, jf_ = np.meshgrid(i, i, indexing="xy")
    ifl, jfl = if_.ravel(), jf_.ravel()
    sx, sy = ifl * nc, jfl * nc
    ic, rx = sx // nf, sx % nf
    jc, ry = sy // nf, sy % nf

    lower = rx >= ry
    w0 = np.where(lower, nf - rx, nf - ry) / nf
    w1 = np.where(lower, rx - ry, rx) / nf
    w2 = np.where(lower, ry, ry - rx) / nf
    c0 = coarse.vertex_index(ic, jc)
    c1 = np.where(lower, coarse.vertex_index(ic + 1, jc), coarse.vertex_index(ic + 1, jc + 1))
    c2 = np.where(lower, coarse.vertex_index(ic + 1, jc + 1), coarse.vertex_index(ic, jc + 1))

    rows = np.repeat(np.arange(nf * nf), 3)
    cols = np.stack([c0, c1, c2], axis=1).ravel()
    vals = np.stack([w0, w1, w2], axis=1).ravel()
    mat = sp.coo_matrix((vals, (rows, cols)), shape=(nf * nf, nc * nc))
    mat.eliminate_zeros()
    return sp.csr_matrix(mat)
