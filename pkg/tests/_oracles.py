"""Independent dense oracles for the unit tests.

Everything here is deliberately brute force: dense matrices, plain Python
loops over triangles, and textbook quadrature.  Nothing is shared with the
package's assembly code, so agreement is evidence rather than tautology.
"""

from __future__ import annotations

import numpy as np

# Each unit cell (i, j) of the N x N periodic grid is split along the
# (i, j) -> (i+1, j+1) diagonal into a lower and an upper triangle.
_LOWER = ((0, 0), (1, 0), (1, 1))
_UPPER = ((0, 0), (1, 1), (0, 1))


def periodic_triangles(n):
    """Yield (global_ids, corner_coords) for every triangle of the grid."""
    h = 1.0 / n
    for j in range(n):
        for i in range(n):
            for corners in (_LOWER, _UPPER):
                ids = [((i + a) % n) + n * ((j + b) % n) for a, b in corners]
                xy = np.array([((i + a) * h, (j + b) * h) for a, b in corners])
                yield ids, xy


def _plane_gradients(xy):
    """Gradients of the three P1 basis functions on one triangle."""
    x, y = xy[:, 0], xy[:, 1]
    b = np.array([y[1] - y[2], y[2] - y[0], y[0] - y[1]])
    c = np.array([x[2] - x[1], x[0] - x[2], x[1] - x[0]])
    det = b[0] * c[1] - b[1] * c[0]
    area = 0.5 * abs(det)
    grads = np.stack([b, c], axis=1) / (2.0 * area)
    return grads, area


def dense_mass(n):
    """Scalar mass matrix by 3-point edge-midpoint quadrature (exact, degree 2)."""
    nv = n * n
    m = np.zeros((nv, nv))
    # basis values at the three edge midpoints of the reference triangle
    bary = np.array([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]])
    for ids, xy in periodic_triangles(n):
        _, area = _plane_gradients(xy)
        w = area / 3.0
        for q in range(3):
            phi = bary[q]
            for a in range(3):
                for b in range(3):
                    m[ids[a], ids[b]] += w * phi[a] * phi[b]
    return m


def dense_stiff(n):
    """Scalar stiffness matrix; gradients are constant so one point suffices."""
    nv = n * n
    k = np.zeros((nv, nv))
    for ids, xy in periodic_triangles(n):
        grads, area = _plane_gradients(xy)
        for a in range(3):
            for b in range(3):
                k[ids[a], ids[b]] += area * grads[a] @ grads[b]
    return k


def dense_grad_coupling(n):
    """g[2*u + c, j] = integral of (d_c chi_j) * chi_u over the square."""
    nv = n * n
    g = np.zeros((2 * nv, nv))
    for ids, xy in periodic_triangles(n):
        grads, area = _plane_gradients(xy)
        for u in range(3):
            for j in range(3):
                for c in range(2):
                    # chi_u integrates to area/3, d_c chi_j is constant
                    g[2 * ids[u] + c, ids[j]] += grads[j, c] * area / 3.0
    return g


def dense_l2_norm_sq(n, coeffs):
    """||field||^2 from nodal coefficients, via the dense mass matrix.

    Scalar fields have n*n entries, vector fields 2*n*n interleaved
    (x-component at even positions).
    """
    m = dense_mass(n)
    c = np.asarray(coeffs, dtype=float)
    if c.size == n * n:
        return float(c @ m @ c)
    cx, cy = c[0::2], c[1::2]
    return float(cx @ m @ cx + cy @ m @ cy)


def dense_h1_seminorm_sq(n, coeffs):
    """|field|_{H^1}^2 via per-triangle plane gradients (no stiffness matrix)."""
    c = np.asarray(coeffs, dtype=float)
    comps = [c] if c.size == n * n else [c[0::2], c[1::2]]
    total = 0.0
    for ids, xy in periodic_triangles(n):
        grads, area = _plane_gradients(xy)
        for comp in comps:
            gvec = sum(comp[ids[a]] * grads[a] for a in range(3))
            total += area * (gvec @ gvec)
    return float(total)


def dense_divergence_pairing(n, vec_coeffs, scal_coeffs):
    """-(div v_h, q_h), integrated exactly element by element.

    Periodic integration by parts makes this equal (grad q_h, v_h); the test
    checks that identity against the assembled coupling operator.
    """
    v = np.asarray(vec_coeffs, dtype=float)
    q = np.asarray(scal_coeffs, dtype=float)
    vx, vy = v[0::2], v[1::2]
    total = 0.0
    for ids, xy in periodic_triangles(n):
        grads, area = _plane_gradients(xy)
        div = sum(vx[ids[a]] * grads[a, 0] + vy[ids[a]] * grads[a, 1] for a in range(3))
        total += -div * (area / 3.0) * sum(q[ids[a]] for a in range(3))
    return float(total)


def dense_interpolant_energy(n, fn):
    """Dirichlet energy of the nodal interpolant of a scalar function."""
    h = 1.0 / n
    nodes = np.array([fn(i * h, j * h) for j in range(n) for i in range(n)])
    return dense_h1_seminorm_sq(n, nodes)


def dense_quadrature_load(n, fn):
    """Scalar load vector (fn, chi_i) by the degree-2 edge-midpoint rule."""
    nv = n * n
    load = np.zeros(nv)
    bary = np.array([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]])
    for ids, xy in periodic_triangles(n):
        _, area = _plane_gradients(xy)
        w = area / 3.0
        for q in range(3):
            xq = bary[q] @ xy
            val = fn(xq[0], xq[1])
            for a in range(3):
                load[ids[a]] += w * val * bary[q, a]
    return load


def dense_l2_error_vs_function(n, coeffs, fn):
    """Quadrature L2 distance, modulo constants, between a P1 field and fn.

    Edge-midpoint rule; the P1 field at an edge midpoint is the mean of the
    two endpoint values.  Comparing modulo constants matches the gauge
    freedom of periodic Poisson solutions.
    """
    c = np.asarray(coeffs, dtype=float)
    diffs, weights = [], []
    for ids, xy in periodic_triangles(n):
        _, area = _plane_gradients(xy)
        for e in range(3):
            a, b = e, (e + 1) % 3
            xm = 0.5 * (xy[a] + xy[b])
            uh = 0.5 * (c[ids[a]] + c[ids[b]])
            diffs.append(uh - fn(xm[0], xm[1]))
            weights.append(area / 3.0)
    d = np.asarray(diffs)
    w = np.asarray(weights)
    d = d - (w @ d) / w.sum()
    return float(np.sqrt(w @ (d * d)))


def dense_zero_mean_solve(a, rhs):
    """Minimum-norm solution of the singular system a x = rhs, then de-meaned.

    Uses a Lagrange-multiplier bordering so it shares nothing with the
    deflated iterative solver under test.
    """
    a = np.asarray(a, dtype=float)
    nv = a.shape[0]
    big = np.zeros((nv + 1, nv + 1))
    big[:nv, :nv] = a
    big[:nv, nv] = 1.0
    big[nv, :nv] = 1.0
    rhs_big = np.concatenate([np.asarray(rhs, dtype=float), [0.0]])
    sol = np.linalg.solve(big, rhs_big)
    x = sol[:nv]
    return x - x.mean()
