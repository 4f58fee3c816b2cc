"""Independent reference computations used to freeze expected values.

Nothing here imports the package's solvers: each oracle reaches the same
quantity by a different numerical route (graph shortest paths, finite
differences, generic root finding, quadrature).
"""

import numpy as np
from scipy import optimize, sparse
from scipy.integrate import quad
from scipy.sparse.csgraph import dijkstra


def _stencil(connectivity):
    """Primitive lattice steps of a 2**k-connected neighborhood (half-plane)."""
    reach = {8: 1, 16: 2, 32: 3}.get(connectivity)
    if reach is None:
        raise ValueError("connectivity must be 8, 16 or 32")
    steps = []
    for a in range(0, reach + 1):
        for b in range(-reach, reach + 1):
            if (a, b) == (0, 0) or (a == 0 and b < 0):
                continue
            if np.gcd(a, b) == 1:
                steps.append((a, b))
    return steps


def dijkstra_distance(W, p, q, wells, n=400, pad=1.5, connectivity=8, sub=4):
    """Shortest path in the metric sqrt(2 W)|dx| on an n x n grid.

    The grid covers the bounding box of the wells padded on each side by
    ``pad`` times the diameter of the well set. Edge weights integrate the
    metric along the edge with ``sub`` midpoint samples.
    """
    wells = np.asarray(wells, float)
    diam = max(np.linalg.norm(a - b) for a in wells for b in wells)
    lo = wells.min(axis=0) - pad * diam
    hi = wells.max(axis=0) + pad * diam
    xs = np.linspace(lo[0], hi[0], n)
    ys = np.linspace(lo[1], hi[1], n)
    hx, hy = xs[1] - xs[0], ys[1] - ys[0]
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    idx = np.arange(n * n).reshape(n, n)
    rows, cols, vals = [], [], []
    for di, dj in _stencil(connectivity):
        i0 = slice(max(0, -di), n - max(0, di))
        j0 = slice(max(0, -dj), n - max(0, dj))
        i1 = slice(max(0, di), n - max(0, -di))
        j1 = slice(max(0, dj), n - max(0, -dj))
        a = np.stack([X[i0, j0], Y[i0, j0]], -1)
        b = np.stack([X[i1, j1], Y[i1, j1]], -1)
        length = np.hypot(di * hx, dj * hy)
        w = 0.0
        for k in range(sub):
            s = (k + 0.5) / sub
            w = w + np.sqrt(2.0 * W(a + s * (b - a)))
        w = w / sub * length
        rows.append(idx[i0, j0].ravel())
        cols.append(idx[i1, j1].ravel())
        vals.append(w.ravel())
    r = np.concatenate(rows)
    c = np.concatenate(cols)
    v = np.concatenate(vals)
    G = sparse.coo_matrix((v, (r, c)), shape=(n * n, n * n)).tocsr()

    def node(pt):
        i = int(np.argmin(np.abs(xs - pt[0])))
        j = int(np.argmin(np.abs(ys - pt[1])))
        return idx[i, j]

    d = dijkstra(G, directed=False, indices=node(p))
    return float(d[node(q)])


def segment_quadrature(W, p, q):
    """sqrt(2) * int_0^1 sqrt(W(p + s (q - p))) |q - p| ds by adaptive quadrature."""
    p = np.asarray(p, float)
    q = np.asarray(q, float)
    L = np.linalg.norm(q - p)
    val, _ = quad(lambda s: np.sqrt(2.0 * W(p + s * (q - p))), 0.0, 1.0,
                  limit=200, epsabs=1e-12, epsrel=1e-12)
    return val * L


def sine_law_angles(c12, c13, c23, guess=(2.0, 2.0)):
    """Solve sin a1/c23 = sin a2/c13 = sin a3/c12 with a1 + a2 + a3 = 2 pi."""

    def F(x):
        a1, a2 = x
        a3 = 2.0 * np.pi - a1 - a2
        return [np.sin(a1) / c23 - np.sin(a2) / c13,
                np.sin(a2) / c13 - np.sin(a3) / c12]

    sol = optimize.fsolve(F, guess, xtol=1e-14, full_output=True)
    a1, a2 = sol[0]
    return np.array([a1, a2, 2.0 * np.pi - a1 - a2])


def fd_hessian(W, u, step=1e-4):
    u = np.asarray(u, float)
    H = np.zeros((2, 2))
    E = np.eye(2) * step
    for i in range(2):
        for j in range(2):
            H[i, j] = (W(u + E[i] + E[j]) - W(u + E[i] - E[j])
                       - W(u - E[i] + E[j]) + W(u - E[i] - E[j])) / (4 * step * step)
    return H


def symmetric_wetted_gap(t, delta):
    """Gap m0 - m0(delta) for the fixed-line wetting of a symmetric junction.

    The gray region is bounded by three circular arcs of radius r, each
    tangent to the two radii bounding its sector (opening 2 pi / 3). Its area
    and the saved cost are written from elementary geometry and the radius
    is found with a generic root finder.
    """
    alpha = 2.0 * np.pi / 3.0
    theta = np.pi - alpha

    def pieces(r):
        tangent = r / np.tan(alpha / 2.0)
        area = 3.0 * (r * tangent - 0.5 * r * r * theta)
        saved = 3.0 * (2.0 * t) * tangent
        added = 3.0 * t * r * theta
        return area, saved - added

    r = optimize.brentq(lambda r: pieces(r)[0] - delta, 1e-12, 10.0, xtol=1e-15)
    return pieces(r)[1], 1.0 / r


def weiszfeld(points, weights, iters=20000, tol=1e-15):
    """Weighted Fermat point by Weiszfeld's fixed-point iteration; returns (point, cost)."""
    P = np.asarray(points, float)
    w = np.asarray(weights, float)
    x = (w[:, None] * P).sum(0) / w.sum()
    for _ in range(iters):
        d = np.linalg.norm(P - x, axis=1)
        if np.any(d < 1e-14):
            break
        nxt = (w[:, None] * P / d[:, None]).sum(0) / (w / d).sum()
        if np.linalg.norm(nxt - x) < tol:
            x = nxt
            break
        x = nxt
    return x, float(np.sum(w * np.linalg.norm(P - x, axis=1)))


def bvp_slab(pot, i, j, T, x, guess):
    """Solution of u'' = grad W(u) on [-T, T] with u(-T) = p_i, u(T) = p_j.

    Solved with scipy's collocation BVP solver, independently of the package's
    Newton profile solver; ``guess`` maps times to an initial R^2 curve.
    """
    from scipy.integrate import solve_bvp

    wells = np.asarray(pot.wells, float)

    def rhs(t, y):
        return np.vstack([y[2:], pot.grad(y[:2].T).T])

    def bc(ya, yb):
        return np.r_[ya[:2] - wells[i], yb[:2] - wells[j]]

    ts = np.linspace(-T, T, 801)
    g = guess(ts)
    y0 = np.vstack([g.T, np.gradient(g, ts, axis=0).T])
    sol = solve_bvp(rhs, bc, ts, y0, tol=1e-10, max_nodes=200000)
    if sol.status != 0:
        raise RuntimeError(sol.message)
    return sol.sol(np.asarray(x, float))[:2].T
