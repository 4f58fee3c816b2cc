"""Degenerate-metric geodesics, heteroclinic profiles and the closed curve
through the three wells.

The metric is sqrt(2 W) |dx|. Its geodesic distance between two wells is
the cost c_ij, which equals the minimal value of the one-dimensional
energy  int W(f) + |f'|^2 / 2 dt  over connections from p_i to p_j.
"""

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, sparse
from scipy.interpolate import CubicSpline
from scipy.sparse.linalg import spsolve
from scipy.spatial.distance import directed_hausdorff

from .errors import (
    ConvergenceError,
    InsufficientTailError,
    OnCurveError,
    TruncationTooSmallError,
    ValidationError,
)
from .potential import triangle_status
from .rng import Lcg64

PAIRS = ((0, 1), (0, 2), (1, 2))


@dataclass
class PathSample:
    points: np.ndarray
    length: float
    sweeps: int = 0
    converged: bool = True


# --------------------------------------------------------------------------
# geodesic relaxation
# --------------------------------------------------------------------------
def _weight_and_grad(pot, m):
    W = pot.W(m)
    w = np.sqrt(2.0 * W)
    g = pot.grad(m)
    safe = np.where(w > 0, w, 1.0)
    gw = np.where((w > 0)[..., None], g / safe[..., None], 0.0)
    return w, gw


def path_length(pot, pts):
    """Weighted length with midpoint evaluation of the metric."""
    pts = np.asarray(pts, float)
    d = np.diff(pts, axis=0)
    m = 0.5 * (pts[1:] + pts[:-1])
    return float(np.sum(np.sqrt(2.0 * pot.W(m)) * np.linalg.norm(d, axis=1)))


def _length_and_grad(pot, pts):
    d = np.diff(pts, axis=0)
    m = 0.5 * (pts[1:] + pts[:-1])
    nd = np.linalg.norm(d, axis=1)
    w, gw = _weight_and_grad(pot, m)
    L = np.sum(w * nd)
    unit = d / np.where(nd > 0, nd, 1.0)[:, None]
    seg_a = 0.5 * gw * nd[:, None] - w[:, None] * unit  # d/d(start point)
    seg_b = 0.5 * gw * nd[:, None] + w[:, None] * unit  # d/d(end point)
    g = np.zeros_like(pts)
    g[:-1] += seg_a
    g[1:] += seg_b
    return L, g


def reparametrize(pts, n=None):
    """Redistribute points at equal Euclidean arclength (endpoints kept)."""
    pts = np.asarray(pts, float)
    n = len(pts) if n is None else n
    s = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(pts, axis=0), axis=1))])
    if s[-1] == 0:
        return np.repeat(pts[:1], n, axis=0)
    t = np.linspace(0.0, s[-1], n)
    out = np.stack([np.interp(t, s, pts[:, 0]), np.interp(t, s, pts[:, 1])], axis=1)
    out[0], out[-1] = pts[0], pts[-1]
    return out


def relax_path(pot, init, tol=1e-8, max_sweeps=400, inner=40):
    """String-method relaxation of a discrete path with fixed endpoints.

    Each sweep runs a short L-BFGS descent of the weighted length over the
    interior points and then restores equal arclength spacing. The loop
    stops when a sweep changes the length by less than ``tol`` (relative).
    """
    pts = reparametrize(init)
    n = len(pts)
    if n < 3:
        return PathSample(pts, path_length(pot, pts), 0, True)
    ends = pts[[0, -1]].copy()

    def fun(x):
        full = np.vstack([ends[0], x.reshape(-1, 2), ends[1]])
        L, g = _length_and_grad(pot, full)
        return L, g[1:-1].ravel()

    prev = path_length(pot, pts)
    for sweep in range(1, max_sweeps + 1):
        res = optimize.minimize(fun, pts[1:-1].ravel(), jac=True, method="L-BFGS-B",
                                options={"maxiter": inner, "gtol": 1e-14, "ftol": 1e-16})
        pts = reparametrize(np.vstack([ends[0], res.x.reshape(-1, 2), ends[1]]))
        L = path_length(pot, pts)
        if abs(prev - L) <= tol * max(L, 1e-300):
            return PathSample(pts, L, sweep, True)
        prev = L
    raise ConvergenceError(
        f"geodesic relaxation did not settle in {max_sweeps} sweeps",
        last=PathSample(pts, prev, max_sweeps, False),
    )


def metric_distance(pot, p, q, n=128, tol=1e-8, max_sweeps=400, init=None):
    """Discrete geodesic from ``p`` to ``q`` in the metric sqrt(2 W)|dx|.

    The path starts as the straight segment (or ``init``) and is relaxed by
    :func:`relax_path`. Its length is an upper bound on the distance.
    """
    if n < 8:
        raise ValidationError("path resolution n must be at least 8")
    p = np.asarray(p, float)
    q = np.asarray(q, float)
    if np.allclose(p, q, rtol=0, atol=1e-15):
        return PathSample(np.repeat(p[None], n, axis=0), 0.0, 0, True)
    if init is None:
        s = np.linspace(0.0, 1.0, n)[:, None]
        init = p + s * (q - p)
    else:
        init = np.asarray(init, float).copy()
        init[0], init[-1] = p, q
        init = reparametrize(init, n)
    return relax_path(pot, init, tol=tol, max_sweeps=max_sweeps)


def hausdorff(a, b):
    return max(directed_hausdorff(a, b)[0], directed_hausdorff(b, a)[0])


def check_uniqueness(pot, i, j, n=128, trials=16, amplitude=0.3, seed=0, tol=1e-3):
    """Relax ``trials`` randomly bent initial paths and compare the results.

    Returns ``(unique, spread, paths)`` where ``spread`` is the largest
    Hausdorff distance from the straight-start geodesic to any trial.
    """
    rng = Lcg64(seed)
    p, q = pot.wells[i], pot.wells[j]
    base = metric_distance(pot, p, q, n=n)
    s = np.linspace(0.0, 1.0, n)
    tangent = (q - p) / np.linalg.norm(q - p)
    normal = np.array([-tangent[1], tangent[0]])
    L = np.linalg.norm(q - p)
    paths = [base]
    spread = 0.0
    for _ in range(trials):
        coef = amplitude * L * rng.normal(3)
        bend = sum(c * np.sin((k + 1) * np.pi * s) for k, c in enumerate(coef))
        init = p + s[:, None] * (q - p) + bend[:, None] * normal
        path = metric_distance(pot, p, q, n=n, init=init)
        paths.append(path)
        spread = max(spread, hausdorff(base.points, path.points))
    return spread <= tol, spread, paths


@dataclass
class CostReport:
    costs: tuple
    paths: dict
    triangle: str
    through_well: tuple = ()

    def __iter__(self):
        return iter(self.costs)


def pairwise_costs(pot, n=128, margin=0.02):
    """Costs (c12, c13, c23) and the triangle-inequality status.

    When a path is drawn into the third well the string relaxation only
    creeps toward the broken path through that well and does not settle;
    its last iterate is kept and the cost is closed under the triangle
    inequality, c_ij = min(c_ij, c_ik + c_kj), which the true distance
    satisfies. Pairs that needed this are listed in ``through_well``.
    """
    paths, stalled = {}, []
    for i, j in PAIRS:
        try:
            paths[(i, j)] = metric_distance(pot, pot.wells[i], pot.wells[j], n=n)
        except ConvergenceError as exc:
            paths[(i, j)] = exc.last
            stalled.append((i, j))
    c = {pair: paths[pair].length for pair in PAIRS}
    through = []
    near = 0.05 * pot.min_well_distance()
    for i, j in PAIRS:
        k = 3 - i - j
        broken = c[tuple(sorted((i, k)))] + c[tuple(sorted((k, j)))]
        gap = np.min(np.linalg.norm(paths[(i, j)].points - pot.wells[k], axis=1))
        if broken < c[(i, j)] or ((i, j) in stalled and gap < near):
            through.append((i, j))
            c[(i, j)] = min(c[(i, j)], broken)
    unresolved = [pair for pair in stalled if pair not in through]
    if unresolved:
        raise ConvergenceError(f"geodesic relaxation failed for pairs {unresolved}")
    costs = tuple(c[pair] for pair in PAIRS)
    return CostReport(costs, paths, triangle_status(costs, margin), tuple(through))


# --------------------------------------------------------------------------
# heteroclinic profiles
# --------------------------------------------------------------------------
@dataclass
class HeteroclinicProfile:
    t: np.ndarray
    values: np.ndarray
    energy: float
    decay_rate: float
    pair: tuple
    wells: np.ndarray
    energy_history: list = field(default_factory=list)
    residual: float = np.nan
    _spline: object = field(default=None, repr=False)

    @property
    def samples(self):
        return list(zip(self.t, map(tuple, self.values)))

    @property
    def T(self):
        return float(self.t[-1])

    @property
    def dt(self):
        return float(self.t[1] - self.t[0])

    def evaluate(self, t):
        """Cubic interpolation in t; clamped to the wells outside [-T, T]."""
        if self._spline is None:
            self._spline = CubicSpline(self.t, self.values, axis=0)
        t = np.asarray(t, float)
        out = self._spline(np.clip(t, self.t[0], self.t[-1]))
        out = np.where((t < self.t[0])[..., None], self.values[0], out)
        return np.where((t > self.t[-1])[..., None], self.values[-1], out)

    def first_integral(self, pot):
        """Staggered values of |f'|^2 / 2 - W at the half-grid points."""
        v = np.diff(self.values, axis=0) / self.dt
        Wn = pot.W(self.values)
        return 0.5 * np.einsum("ij,ij->i", v, v) - 0.5 * (Wn[1:] + Wn[:-1])

    def half_speed_sq(self):
        v = np.gradient(self.values, self.dt, axis=0)
        return 0.5 * np.einsum("ij,ij->i", v, v)

    def metric_midpoint_time(self, pot):
        """Time at which the metric length from p_i equals half the total."""
        m = 0.5 * (self.values[1:] + self.values[:-1])
        seg = np.sqrt(2.0 * pot.W(m)) * np.linalg.norm(np.diff(self.values, axis=0), axis=1)
        cum = np.concatenate([[0.0], np.cumsum(seg)])
        return float(np.interp(0.5 * cum[-1], cum, self.t))

    def reversed(self):
        """Profile of the opposite pair, t -> -t."""
        return HeteroclinicProfile(
            -self.t[::-1], self.values[::-1].copy(), self.energy, np.nan,
            self.pair[::-1], self.wells, list(self.energy_history), self.residual,
        )

    def shifted(self, t0):
        """Same trajectory with the time origin moved to ``t0``."""
        t = self.t
        return HeteroclinicProfile(
            t.copy(), self.evaluate(t + t0), self.energy, self.decay_rate,
            self.pair, self.wells, list(self.energy_history), self.residual,
        )


def _profile_energy(pot, f, dt):
    d = np.diff(f, axis=0)
    kin = 0.5 * np.sum(d * d) / dt
    Wn = pot.W(f)
    pot_term = dt * (np.sum(Wn) - 0.5 * (Wn[0] + Wn[-1]))
    return float(kin + pot_term)


def _profile_gradient(pot, f, dt):
    g = np.zeros_like(f)
    g[1:-1] = (2.0 * f[1:-1] - f[:-2] - f[2:]) / dt + dt * pot.grad(f[1:-1])
    return g


def _profile_hessian(pot, f, dt):
    m = len(f) - 2  # interior nodes
    H = pot.hess(f[1:-1]) * dt
    H[:, 0, 0] += 2.0 / dt
    H[:, 1, 1] += 2.0 / dt
    blocks = sparse.block_diag(list(H), format="csr")
    off = sparse.kron(sparse.diags([np.ones(m - 1), np.ones(m - 1)], [-1, 1]),
                      sparse.identity(2)) * (-1.0 / dt)
    return (blocks + off).tocsc()


def _newton_profile(pot, f, dt, tol, max_iter, history):
    """Levenberg-damped Newton iteration on the discrete 1D energy.

    Steps are accepted only when the energy does not increase, so the
    recorded energy history is monotone.
    """
    E = _profile_energy(pot, f, dt)
    history.append(E)
    mu = 1e-6
    for _ in range(max_iter):
        g = _profile_gradient(pot, f, dt)[1:-1]
        res = np.max(np.abs(g)) / dt
        if res < tol:
            return f, res
        H = _profile_hessian(pot, f, dt)
        while True:
            shift = sparse.identity(H.shape[0], format="csc") * mu
            step = spsolve(H + shift, -g.ravel()).reshape(-1, 2)
            trial = f.copy()
            trial[1:-1] += step
            Et = _profile_energy(pot, trial, dt)
            if np.isfinite(Et) and Et <= E:
                f, E = trial, Et
                history.append(E)
                mu = max(mu * 0.3, 1e-10)
                break
            mu *= 10.0
            if mu > 1e12:
                res = np.max(np.abs(g)) / dt
                return f, res
    g = _profile_gradient(pot, f, dt)[1:-1]
    return f, np.max(np.abs(g)) / dt


def _path_time_guess(pot, path, t):
    """Traverse a geodesic at the equipartition speed |f'| = sqrt(2 W)."""
    pts = path.points
    m = 0.5 * (pts[1:] + pts[:-1])
    ds = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    w = np.sqrt(2.0 * pot.W(m))
    tau = np.concatenate([[0.0], np.cumsum(ds / np.maximum(w, 1e-300))])
    Wp = pot.W(pts)
    k = int(np.argmax(Wp))
    tau = tau - tau[k]
    f = np.stack([np.interp(t, tau, pts[:, 0]), np.interp(t, tau, pts[:, 1])], axis=1)
    return f, tau


def _argmax_time(pot, t, f):
    Wn = pot.W(f)
    k = int(np.argmax(Wn))
    if 0 < k < len(t) - 1:
        a, b, c = Wn[k - 1], Wn[k], Wn[k + 1]
        den = a - 2.0 * b + c
        off = 0.5 * (a - c) / den if den != 0 else 0.0
        return t[k] + off * (t[1] - t[0])
    return t[k]


def heteroclinic(pot, i, j, T=12.0, n=2048, path=None, tol=1e-9, max_iter=100):
    """Minimizer of the discretized 1D energy joining p_i (t = -T) to p_j (t = T).

    The energy is  sum |f_{k+1} - f_k|^2 / (2 dt) + dt * sum' W(f_k)  with the
    trapezoid weights; the ends are clamped at the wells. The initial guess
    runs along the geodesic at the equipartition speed, then a damped Newton
    iteration converges the Euler-Lagrange residual. The translate is pinned
    so that W is maximal at t = 0.
    """
    if n < 16:
        raise ValidationError("need at least 16 samples")
    wi, wj = pot.wells[i], pot.wells[j]
    if path is None:
        path = metric_distance(pot, wi, wj, n=256)
    t = np.linspace(-T, T, n)
    dt = t[1] - t[0]
    f, tau = _path_time_guess(pot, path, t)

    # boundary values must already sit in the convexity balls
    beta = pot.convexity_radius
    dist_i = np.linalg.norm(path.points - wi, axis=1)
    dist_j = np.linalg.norm(path.points - wj, axis=1)
    t_in_i = tau[np.flatnonzero(dist_i >= beta)[-1]] if np.any(dist_i >= beta) else -np.inf
    t_in_j = tau[np.flatnonzero(dist_j >= beta)[0]] if np.any(dist_j >= beta) else np.inf
    if -T >= t_in_i or T <= t_in_j:
        raise TruncationTooSmallError(
            f"half-width T={T} does not reach the convexity balls "
            f"(needs T > {max(-t_in_i, t_in_j):.3f})"
        )

    f[0], f[-1] = wi, wj
    history = []
    for _ in range(6):
        f, res = _newton_profile(pot, f, dt, tol, max_iter, history)
        t_star = _argmax_time(pot, t, f)
        if abs(t_star) <= 0.25 * dt:
            break
        shifted = CubicSpline(t, f, axis=0)(np.clip(t + t_star, -T, T))
        shifted[0], shifted[-1] = wi, wj
        f = shifted
    if not res < tol * 1e3:
        raise ConvergenceError(
            f"heteroclinic solve stalled at residual {res:.2e}", last=f, residual=res
        )
    prof = HeteroclinicProfile(t, f, _profile_energy(pot, f, dt), np.nan, (i, j),
                               pot.wells, history, res)
    try:
        prof.decay_rate = decay_rate(prof, pot)
    except InsufficientTailError:
        prof.decay_rate = np.nan
    return prof


def decay_rate(profile, pot=None, end="j", lo=1e-9, hi=None, min_points=8):
    """Exponential approach rate to the end well, by least squares.

    Fits log|f(t) - p| against t on tail samples whose distance to the
    well lies between ``lo`` and ``hi`` (default: half the convexity
    radius when ``pot`` is given, else 0.05).
    """
    if hi is None:
        hi = 0.5 * pot.convexity_radius if pot is not None else 0.05
    t, f = profile.t, profile.values
    if end == "j":
        p = f[-1]
        sel = t > 0
    else:
        p = f[0]
        sel = t < 0
    d = np.linalg.norm(f - p, axis=1)
    mask = sel & (d > lo) & (d < hi)
    if np.count_nonzero(mask) < min_points:
        raise InsufficientTailError("too few tail samples to fit a decay rate")
    slope = np.polyfit(t[mask], np.log(d[mask]), 1)[0]
    return float(abs(slope))


def write_profile_csv(profile, pot, path):
    Wn = pot.W(profile.values)
    hs = profile.half_speed_sq()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "u1", "u2", "W", "half_speed_sq"])
        for k in range(len(profile.t)):
            w.writerow([repr(float(profile.t[k])), repr(float(profile.values[k, 0])),
                        repr(float(profile.values[k, 1])), repr(float(Wn[k])),
                        repr(float(hs[k]))])


# --------------------------------------------------------------------------
# the closed curve through the wells
# --------------------------------------------------------------------------
@dataclass
class LambdaCurve:
    points: np.ndarray
    is_simple: bool
    profiles: dict = field(default_factory=dict, repr=False)


def _compress(points, m):
    """Equal-arclength resampling that drops the piled-up tail samples."""
    keep = np.concatenate([[True], np.linalg.norm(np.diff(points, axis=0), axis=1) > 1e-14])
    return reparametrize(points[keep], m)


def lambda_curve(pot, T=12.0, n=2048, per_edge=200, profiles=None):
    """Closed polyline p1 -> p2 -> p3 -> p1 through the profile images."""
    if profiles is None:
        profiles = {pair: heteroclinic(pot, *pair, T=T, n=n) for pair in PAIRS}
    legs = [
        profiles[(0, 1)].values,
        profiles[(1, 2)].values,
        profiles[(0, 2)].values[::-1],
    ]
    pieces = [_compress(leg, per_edge)[:-1] for leg in legs]
    pts = np.vstack(pieces)
    return LambdaCurve(pts, is_simple_polygon(pts), profiles)


def _segments_intersect(a, b, c, d, eps=1e-12):
    """Vectorized closed-segment intersection test for ab against cd."""

    def orient(p, q, r):
        return (q[..., 0] - p[..., 0]) * (r[..., 1] - p[..., 1]) - (
            q[..., 1] - p[..., 1]) * (r[..., 0] - p[..., 0])

    def on_seg(p, q, r):
        return (np.minimum(p[..., 0], q[..., 0]) - eps <= r[..., 0]) & (
            r[..., 0] <= np.maximum(p[..., 0], q[..., 0]) + eps) & (
            np.minimum(p[..., 1], q[..., 1]) - eps <= r[..., 1]) & (
            r[..., 1] <= np.maximum(p[..., 1], q[..., 1]) + eps)

    o1, o2 = orient(a, b, c), orient(a, b, d)
    o3, o4 = orient(c, d, a), orient(c, d, b)
    proper = (o1 * o2 < 0) & (o3 * o4 < 0)
    touch = ((np.abs(o1) <= eps) & on_seg(a, b, c)) | ((np.abs(o2) <= eps) & on_seg(a, b, d)) \
        | ((np.abs(o3) <= eps) & on_seg(c, d, a)) | ((np.abs(o4) <= eps) & on_seg(c, d, b))
    return proper | touch


def is_simple_polygon(points):
    """True when no two non-adjacent edges of the closed polyline meet."""
    P = np.asarray(points, float)
    N = len(P)
    A = P
    B = np.roll(P, -1, axis=0)
    for k in range(N):
        js = np.arange(k + 2, N)
        if k == 0:
            js = js[js != N - 1]
        if js.size == 0:
            continue
        hit = _segments_intersect(A[k], B[k], A[js], B[js])
        if np.any(hit):
            return False
    return True


def winding_number(curve, point, tol=1e-9):
    """Winding number of a closed polyline about ``point``."""
    P = np.asarray(getattr(curve, "points", curve), float)
    x = np.asarray(point, float)
    A = P - x
    B = np.roll(P, -1, axis=0) - x
    seg = B - A
    L2 = np.einsum("ij,ij->i", seg, seg)
    s = np.clip(-np.einsum("ij,ij->i", A, seg) / np.where(L2 > 0, L2, 1.0), 0.0, 1.0)
    dist = np.linalg.norm(A + s[:, None] * seg, axis=1)
    if np.min(dist) <= tol:
        raise OnCurveError("query point lies on the curve")
    ang = np.arctan2(A[:, 0] * B[:, 1] - A[:, 1] * B[:, 0], np.einsum("ij,ij->i", A, B))
    return int(np.rint(np.sum(ang) / (2.0 * np.pi)))
