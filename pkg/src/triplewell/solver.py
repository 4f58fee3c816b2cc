"""Grid fields, the scaled Allen-Cahn energy and its critical points.

The energy of u : Omega -> R^2 at scale R is

    E_R(u) = integral of  R W(u) + |grad u|^2 / (2R),

discretized on a uniform node grid. Each grid cell whose four corners are
active contributes h^2 R * (mean of W over its corners) plus
(1 / 2R) * (1/2) * (sum of the squared differences along its four edges).
The exact discrete gradient is therefore the 5-point Laplacian in the
interior, with natural (reflecting) boundary conditions wherever no
Dirichlet ring clamps the values.
"""

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage, sparse
from scipy.sparse import linalg as spla

from .errors import (
    ArcTooShortError,
    ConvergenceError,
    DomainError,
    FieldFormatError,
    FieldVersionError,
    InvalidScheduleError,
    OutOfFootprintError,
    UnsupportedTopologyError,
    ValidationError,
)
from .geodesics import heteroclinic
from .junction import JunctionMap
from .rng import Lcg64

MAGIC = "TWAC"
FORMAT_VERSION = 1
TWO_PI = 2.0 * np.pi

OUTSIDE, INTERIOR, BOUNDARY = 0, 1, 2

log = logging.getLogger(__name__)


# --------------------------------------------------------------------------
# grids and fields
# --------------------------------------------------------------------------
@dataclass(frozen=True)
class GridSpec:
    """Uniform node grid; x varies along the first array axis.

    For ``domain == "disc"`` the disc is centered on the grid and has radius
    ((min(nx, ny) - 1) / 2 - 1) * spacing, which leaves one node of room for
    the boundary ring.
    """

    nx: int
    ny: int
    spacing: float
    origin: tuple = (0.0, 0.0)
    domain: str = "disc"

    def __post_init__(self):
        if self.nx < 4 or self.ny < 4:
            raise DomainError("grid needs at least 4 nodes per side")
        if not self.spacing > 0:
            raise DomainError("grid spacing must be positive")
        if self.domain not in ("disc", "rect"):
            raise DomainError(f"unknown domain shape {self.domain!r}")
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))

    @property
    def shape(self):
        return (self.nx, self.ny)

    @property
    def center(self):
        return np.array([self.origin[0] + 0.5 * (self.nx - 1) * self.spacing,
                         self.origin[1] + 0.5 * (self.ny - 1) * self.spacing])

    @property
    def radius(self):
        return (0.5 * (min(self.nx, self.ny) - 1) - 1.0) * self.spacing

    def axes(self):
        return (self.origin[0] + self.spacing * np.arange(self.nx),
                self.origin[1] + self.spacing * np.arange(self.ny))

    def coords(self):
        xs, ys = self.axes()
        X, Y = np.meshgrid(xs, ys, indexing="ij")
        return np.stack([X, Y], axis=-1)

    def mask(self):
        m = np.zeros(self.shape, dtype=np.int8)
        if self.domain == "rect":
            m[:, :] = INTERIOR
            m[0, :] = m[-1, :] = m[:, 0] = m[:, -1] = BOUNDARY
            return m
        d = np.linalg.norm(self.coords() - self.center, axis=-1)
        inside = d < self.radius * (1.0 + 1e-12)
        ring = ndimage.binary_dilation(inside, structure=np.ones((3, 3), bool)) & ~inside
        m[inside] = INTERIOR
        m[ring] = BOUNDARY
        return m


def disc_spec(n, radius=1.0, center=(0.0, 0.0)):
    """n x n grid whose inscribed disc has the given radius."""
    if n < 8:
        raise DomainError("disc grids need n >= 8")
    h = radius / (0.5 * (n - 1) - 1.0)
    origin = (center[0] - 0.5 * (n - 1) * h, center[1] - 0.5 * (n - 1) * h)
    return GridSpec(n, n, h, origin, "disc")


def rect_spec(nx, ny, spacing, origin=(0.0, 0.0)):
    return GridSpec(nx, ny, spacing, origin, "rect")


@dataclass
class Field:
    """R^2-valued samples on a grid with a domain mask and boundary condition.

    ``mask`` flags nodes as OUTSIDE (0), INTERIOR (1) or BOUNDARY (2). Under
    ``bc == "dirichlet"`` the BOUNDARY nodes are clamped to ``trace`` (listed
    in C order of the boundary nodes); under ``"neumann"`` they are free.
    """

    values: np.ndarray
    grid: GridSpec
    bc: str = "neumann"
    trace: np.ndarray = None
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.array(self.values, dtype=float)
        if self.values.shape != (self.grid.nx, self.grid.ny, 2):
            raise DomainError(f"values shape {self.values.shape} does not match the grid")
        if not np.all(np.isfinite(self.values)):
            raise ValidationError("field values must be finite")
        if self.bc not in ("neumann", "dirichlet"):
            raise DomainError(f"unknown boundary condition {self.bc!r}")
        self.mask = self.grid.mask()
        if self.bc == "dirichlet":
            ring = self.mask == BOUNDARY
            if self.trace is None:
                self.trace = self.values[ring].copy()
            else:
                self.trace = np.array(self.trace, dtype=float)
                if self.trace.shape != (int(ring.sum()), 2):
                    raise DomainError("trace does not match the boundary ring")
                self.values[ring] = self.trace

    # grid passthroughs, named as in the file header
    @property
    def nx(self):
        return self.grid.nx

    @property
    def ny(self):
        return self.grid.ny

    @property
    def spacing(self):
        return self.grid.spacing

    @property
    def origin(self):
        return self.grid.origin

    @property
    def domain_mask(self):
        return self.mask

    @property
    def active(self):
        return self.mask != OUTSIDE

    @property
    def fixed(self):
        if self.bc == "dirichlet":
            return self.mask == BOUNDARY
        return np.zeros(self.grid.shape, bool)

    def coords(self):
        return self.grid.coords()

    def with_values(self, values, **info):
        out = Field(values, self.grid, self.bc, None if self.trace is None else self.trace.copy())
        out.info = dict(self.info, **info)
        return out


def field_labels(field, wells):
    """Index of the nearest well at every node; -1 outside the domain."""
    d = np.linalg.norm(field.values[..., None, :] - np.asarray(wells)[None, None], axis=-1)
    lab = np.argmin(d, axis=-1)
    return np.where(field.active, lab, -1)


# --------------------------------------------------------------------------
# map sampling
# --------------------------------------------------------------------------
def sample_map(label_map, grid, wells, bc="neumann"):
    """Piecewise-constant well-valued field from a label map.

    ``label_map`` may be a JunctionMap, an integer (constant map), an
    integer array of the grid shape, or a callable taking points (..., 2)
    and returning labels.
    """
    wells = np.asarray(wells, float)
    X = grid.coords()
    if isinstance(label_map, JunctionMap):
        lab = label_map.label_at(X)
    elif isinstance(label_map, (int, np.integer)):
        lab = np.full(grid.shape, int(label_map))
    elif callable(label_map):
        lab = np.asarray(label_map(X))
    else:
        lab = np.asarray(label_map)
        if lab.shape != grid.shape:
            raise DomainError("label array does not match the grid")
    return Field(wells[lab], grid, bc)


# --------------------------------------------------------------------------
# heteroclinic profiles, pinned at the metric midpoint
# --------------------------------------------------------------------------
_PROFILE_CACHE = {}


def _pot_key(pot):
    return (pot.family, pot.wells.tobytes(), tuple(sorted(pot.params.items())))


def midpoint_profile(pot, i, j, T=12.0, n=2048):
    """Heteroclinic from p_i to p_j whose metric midpoint sits at t = 0."""
    if i == j:
        raise ValidationError("a profile needs two distinct wells")
    key = (_pot_key(pot), min(i, j), max(i, j), T, n)
    prof = _PROFILE_CACHE.get(key)
    if prof is None:
        prof = heteroclinic(pot, min(i, j), max(i, j), T=T, n=n)
        prof = prof.shifted(prof.metric_midpoint_time(pot))
        _PROFILE_CACHE[key] = prof
    return prof if i < j else prof.reversed()


def _support(prof, rel=1e-6):
    """Times beyond which the profile is within ``rel`` (relative) of its end wells."""
    a, b = prof.values[0], prof.values[-1]
    tol = rel * np.linalg.norm(b - a)
    far_a = np.linalg.norm(prof.values - a, axis=1) > tol
    far_b = np.linalg.norm(prof.values - b, axis=1) > tol
    lo = prof.t[np.argmax(far_a)]
    hi = prof.t[len(prof.t) - 1 - np.argmax(far_b[::-1])]
    return float(lo), float(hi)


# --------------------------------------------------------------------------
# boundary traces
# --------------------------------------------------------------------------
@dataclass
class TraceData:
    """Trace on the circle of radius ``radius`` built from boundary labels at scale R.

    Across the discontinuity at angle theta_m the trace follows the
    heteroclinic zeta_ab(R s), s the signed arc length from the
    discontinuity; deviations from the local well are superposed so the
    trace is continuous and equals the well exactly far from every jump.
    """

    bdata: object
    R: float
    radius: float
    wells: np.ndarray
    profiles: list
    widths: np.ndarray

    def values_at(self, theta):
        theta = np.asarray(theta, float)
        lab = self.bdata.label_at(theta)
        out = self.wells[lab].astype(float)
        if self.bdata.k == 0:
            return out
        for m, (th, prof, (a, b)) in enumerate(zip(self.bdata.angles, self.profiles,
                                                   self._pairs())):
            s = self.radius * (np.mod(theta - th + np.pi, TWO_PI) - np.pi)
            side = np.where((s >= 0)[..., None], self.wells[b], self.wells[a])
            out = out + prof.evaluate(self.R * s) - side
        return out

    def _pairs(self):
        labs = self.bdata.labels
        return [(labs[m - 1], labs[m]) for m in range(len(labs))]

    def samples(self, m=4096):
        theta = np.linspace(0.0, TWO_PI, m, endpoint=False)
        return theta, self.values_at(theta)

    def ring_values(self, grid):
        """Trace values at the boundary ring of a disc grid, in C order."""
        X = grid.coords()[grid.mask() == BOUNDARY] - grid.center
        return self.values_at(np.arctan2(X[:, 1], X[:, 0]))

    def boundary_energy(self, pot, m=16384):
        """Integral over the circle of  R W(h) + |d h / ds|^2 / (2R)."""
        theta, v = self.samples(m)
        ds = self.radius * TWO_PI / m
        dv = (np.roll(v, -1, axis=0) - v) / ds
        Wm = 0.5 * (pot.W(v) + pot.W(np.roll(v, -1, axis=0)))
        return float(np.sum(self.R * Wm + 0.5 * np.einsum("ij,ij->i", dv, dv) / self.R) * ds)

    def tangential_bound(self, m=16384):
        """max |dh/ds| / R; stays bounded as R grows."""
        theta, v = self.samples(m)
        ds = self.radius * TWO_PI / m
        return float(np.max(np.linalg.norm(np.roll(v, -1, axis=0) - v, axis=1)) / ds / self.R)


def build_trace(bdata, pot, R, radius=1.0):
    """Dirichlet trace with heteroclinic transitions compressed by R."""
    if R < 1:
        raise ValidationError("R must be at least 1")
    profiles, widths = [], []
    labs = bdata.labels
    for m in range(bdata.k):
        a, b = labs[m - 1], labs[m]
        prof = midpoint_profile(pot, a, b)
        lo, hi = _support(prof)
        profiles.append(prof)
        widths.append((lo / R, hi / R))
    widths = np.array(widths).reshape(-1, 2)
    for m in range(bdata.k):
        a0, a1, _ = bdata.arcs[m]
        need = (widths[m, 1] - widths[(m + 1) % bdata.k, 0]) / radius
        if a1 - a0 < need:
            raise ArcTooShortError(
                f"arc {m} spans {a1 - a0:.4g} rad but the transitions need {need:.4g} rad at R={R}"
            )
    return TraceData(bdata, float(R), float(radius), np.asarray(pot.wells, float),
                     profiles, widths)


def transition_width(trace, m=0):
    """Arc length occupied by the m-th transition."""
    lo, hi = trace.widths[m]
    return float(hi - lo)


def dirichlet_field(trace, grid, init):
    """Field on a disc grid whose boundary ring carries the trace."""
    if grid.domain != "disc":
        raise DomainError("traces attach to disc grids")
    values = init.values if isinstance(init, Field) else np.asarray(init, float)
    return Field(values, grid, "dirichlet", trace.ring_values(grid))


# --------------------------------------------------------------------------
# discretization
# --------------------------------------------------------------------------
class _Discretization:
    """Cell weights, node weights and the stiffness matrix of a masked grid."""

    def __init__(self, active, free, h):
        self.h = h
        self.shape = active.shape
        cells = (active[:-1, :-1] & active[1:, :-1] & active[:-1, 1:] & active[1:, 1:]).astype(float)
        w = np.zeros(self.shape)
        w[:-1, :-1] += cells
        w[1:, :-1] += cells
        w[:-1, 1:] += cells
        w[1:, 1:] += cells
        self.w = 0.25 * w
        kx = np.zeros((self.shape[0] - 1, self.shape[1]))
        kx[:, :-1] += cells
        kx[:, 1:] += cells
        ky = np.zeros((self.shape[0], self.shape[1] - 1))
        ky[:-1, :] += cells
        ky[1:, :] += cells
        self.kx, self.ky = 0.5 * kx, 0.5 * ky
        self.free = free & (self.w > 0)
        self.index = -np.ones(self.shape, dtype=np.int64)
        self.nodes = np.flatnonzero(self.free)
        self.index.flat[self.nodes] = np.arange(self.nodes.size)
        self._A = None

    def energy(self, u, pot, R):
        Wn = pot.W(u)
        dx = u[1:] - u[:-1]
        dy = u[:, 1:] - u[:, :-1]
        grad = np.sum(self.kx * np.einsum("ijk,ijk->ij", dx, dx))
        grad += np.sum(self.ky * np.einsum("ijk,ijk->ij", dy, dy))
        return float(self.h ** 2 * R * np.sum(self.w * Wn) + 0.5 * grad / R)

    def laplace_sum(self, u):
        """sum over edges of kappa (u_q - u_p) at each node p."""
        out = np.zeros_like(u)
        fx = self.kx[..., None] * (u[1:] - u[:-1])
        fy = self.ky[..., None] * (u[:, 1:] - u[:, :-1])
        out[:-1] += fx
        out[1:] -= fx
        out[:, :-1] += fy
        out[:, 1:] -= fy
        return out

    def gradient(self, u, pot, R):
        """Energy gradient on the free nodes, shape (n_free, 2)."""
        g = self.h ** 2 * R * self.w[..., None] * pot.grad(u) - self.laplace_sum(u) / R
        return g.reshape(-1, 2)[self.nodes]

    def residual(self, u, pot, R):
        """max over free nodes of | Lap_h u / R^2 - grad W(u) | (node-weighted)."""
        if self.nodes.size == 0:
            return 0.0
        g = self.gradient(u, pot, R)
        wf = self.w.flat[self.nodes]
        return float(np.max(np.linalg.norm(g, axis=1) / (self.h ** 2 * R * wf)))

    @property
    def A(self):
        if self._A is None:
            rows, cols, vals = [], [], []
            diag = np.zeros(self.shape)
            for k, (a_sl, b_sl) in ((self.kx, (np.s_[:-1, :], np.s_[1:, :])),
                                    (self.ky, (np.s_[:, :-1], np.s_[:, 1:]))):
                diag[a_sl] += k
                diag[b_sl] += k
                ia = self.index[a_sl]
                ib = self.index[b_sl]
                both = (ia >= 0) & (ib >= 0) & (k > 0)
                rows += [ia[both], ib[both]]
                cols += [ib[both], ia[both]]
                vals += [-k[both], -k[both]]
            n = self.nodes.size
            rows.append(np.arange(n))
            cols.append(np.arange(n))
            vals.append(diag.flat[self.nodes])
            self._A = sparse.csc_matrix((np.concatenate(vals),
                                         (np.concatenate(rows), np.concatenate(cols))),
                                        shape=(n, n))
        return self._A


def _discretization(field, free=None):
    if free is None:
        free = field.active & ~field.fixed
    return _Discretization(field.active, free, field.spacing)


def energy(field, pot, R=1.0):
    """Discrete E_R over the cells whose four corners are active."""
    return _discretization(field).energy(field.values, pot, R)


def energy_density(field, pot, R=1.0):
    """Node densities (R W, |grad u|^2 / 2R) with centered differences."""
    u = field.values
    h = field.spacing
    gx = np.gradient(u, h, axis=0)
    gy = np.gradient(u, h, axis=1)
    kin = 0.5 * (np.einsum("ijk,ijk->ij", gx, gx) + np.einsum("ijk,ijk->ij", gy, gy)) / R
    return R * pot.W(u), kin


def residual(field, pot, R=1.0):
    return _discretization(field).residual(field.values, pot, R)


# --------------------------------------------------------------------------
# relaxation
# --------------------------------------------------------------------------
def _well_curvature(pot):
    return float(max(np.max(np.linalg.eigvalsh(pot.hess(p))) for p in pot.wells))


def relax(field, pot, R=1.0, tol=1e-8, max_iter=200, free=None, cg_iter=80):
    """Relax to a critical point of E_R with the boundary condition of ``field``.

    Each iteration takes a truncated Newton step: preconditioned conjugate
    gradients on the Hessian, preconditioned by a sparse factorization of
    (stiffness / R + sigma * mass), stopping at negative curvature. When the
    first CG direction already shows negative curvature the step falls back
    to the preconditioned gradient, which is exactly one semi-implicit
    gradient-flow step. An Armijo backtracking search on the energy makes
    every accepted step energy-decreasing.

    Parameters
    ----------
    free : bool array, optional
        Nodes allowed to move; defaults to all active, non-Dirichlet nodes.

    Returns
    -------
    Field
        Relaxed copy; ``info`` records iterations, residual and the energy
        history.

    Raises
    ------
    ConvergenceError
        When ``max_iter`` iterations do not bring the residual below ``tol``.
    """
    disc = _discretization(field, free)
    u = field.values.copy()
    E = disc.energy(u, pot, R)
    history = [E]
    res = disc.residual(u, pot, R)
    it = 0
    if disc.nodes.size and res > tol:
        sigma = _well_curvature(pot)
        h2w = disc.h ** 2 * disc.w.flat[disc.nodes]
        P = (disc.A / R + sparse.diags(sigma * R * h2w)).tocsc()
        lu = _preconditioner(P, sigma * R ** 2 * disc.h ** 2)
        A = disc.A
        while res > tol:
            if it >= max_iter:
                raise ConvergenceError(
                    f"relaxation stopped after {it} iterations at residual {res:.3e}",
                    last=field.with_values(u, energy_history=history), residual=res)
            it += 1
            g = disc.gradient(u, pot, R)
            uf = u.reshape(-1, 2)[disc.nodes]
            Hn = R * h2w[:, None, None] * pot.hess(uf)

            def hvp(p):
                return A @ p / R + np.einsum("nij,nj->ni", Hn, p)

            d = _truncated_pcg(hvp, g, lu, cg_iter, min(0.5, np.sqrt(res)) * 1e-1)
            slope = float(np.sum(g * d))
            if slope >= 0:
                d = -lu.solve(g)
                slope = float(np.sum(g * d))
            step = 1.0
            while True:
                trial = u.copy()
                tf = trial.reshape(-1, 2)
                tf[disc.nodes] += step * d
                Et = disc.energy(trial, pot, R)
                if Et <= E + 1e-4 * step * slope or step < 1e-10:
                    break
                step *= 0.5
            if Et > E + 1e-12 * max(abs(E), 1.0):
                raise ConvergenceError("line search failed to decrease the energy",
                                       last=field.with_values(u, energy_history=history),
                                       residual=res)
            u, E = trial, Et
            history.append(E)
            res = disc.residual(u, pot, R)
            log.debug("relax it=%d E=%.12g res=%.3e step=%.3g", it, E, res, step)
    return field.with_values(u, iterations=it, residual=res, energy_history=history,
                             R=R, tol=tol)


class _Jacobi:
    def __init__(self, P):
        self.inv = 1.0 / P.diagonal()

    def solve(self, r):
        return self.inv * r


# Factorizing the preconditioner pays off on small grids and when the mass
# shift is weak against the stiffness; otherwise its diagonal already has a
# condition number of order 8 / shift and costs nothing to apply.
LU_NODE_LIMIT = 250_000
JACOBI_MIN_SHIFT = 0.3


def _preconditioner(P, shift):
    if P.shape[0] <= LU_NODE_LIMIT or shift < JACOBI_MIN_SHIFT:
        return spla.splu(P)
    return _Jacobi(P)


def _truncated_pcg(hvp, g, lu, max_iter, rtol):
    """Approximate Newton direction; stops at negative curvature."""
    def prec(r):
        return np.stack([lu.solve(r[:, 0]), lu.solve(r[:, 1])], axis=1)

    x = np.zeros_like(g)
    r = -g
    z = prec(r)
    p = z.copy()
    rz = float(np.sum(r * z))
    g_norm = np.linalg.norm(g)
    for k in range(max_iter):
        Hp = hvp(p)
        curv = float(np.sum(p * Hp))
        if curv <= 0:
            log.debug("pcg negative curvature at iteration %d", k)
            return z if k == 0 else x
        alpha = rz / curv
        x = x + alpha * p
        r = r - alpha * Hp
        if np.linalg.norm(r) <= rtol * g_norm:
            log.debug("pcg converged in %d iterations", k + 1)
            break
        z = prec(r)
        rz_new = float(np.sum(r * z))
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x


# --------------------------------------------------------------------------
# network fields: initial guesses and the recovery construction
# --------------------------------------------------------------------------
class _NetworkGeometry:
    """Chambers of a Problem-1 network as half-plane intersections, scaled by ``a``."""

    def __init__(self, network, a=1.0):
        self.net = network
        self.a = a
        self.faces = []
        for lab, poly in network.regions:
            poly = np.asarray(poly, float)
            c = poly.mean(axis=0)
            planes = []
            for s_idx, seg in enumerate(network.segments):
                if _is_vertex(poly, seg.a) and _is_vertex(poly, seg.b):
                    t = seg.b - seg.a
                    n = np.array([-t[1], t[0]]) / np.linalg.norm(t)
                    off = float(n @ seg.a)
                    if n @ c < off:
                        n, off = -n, -off
                    planes.append((s_idx, n, off))
            self.faces.append((lab, planes))
        # which side of each segment carries which label
        self.sides = {}
        for lab, planes in self.faces:
            for s_idx, n, off in planes:
                self.sides.setdefault(s_idx, []).append((lab, n, off))

    def labels(self, x, bdata):
        out = np.full(x.shape[:-1], -1)
        for lab, planes in self.faces:
            ok = np.ones(x.shape[:-1], bool)
            for _, n, off in planes:
                ok &= x @ n >= self.a * off - 1e-14
            out = np.where((out < 0) & ok, lab, out)
        miss = out < 0
        if np.any(miss):
            out[miss] = bdata.label_at(np.arctan2(x[miss][:, 1], x[miss][:, 0]))
        return out


def _is_vertex(poly, p, tol=1e-9):
    return bool(np.min(np.linalg.norm(poly - p, axis=1)) < tol)


def _segment_frames(geom, pot):
    """Per segment: endpoints (scaled), tangent, normal toward label i, labels (j, i), profile."""
    frames = []
    for s_idx, seg in enumerate(geom.net.segments):
        sides = geom.sides.get(s_idx, [])
        if len(sides) != 2:
            continue
        (li, n, _), (lj, _, _) = sides
        a = geom.a * np.asarray(seg.a, float)
        b = geom.a * np.asarray(seg.b, float)
        L = np.linalg.norm(b - a)
        t = (b - a) / L
        prof = midpoint_profile(pot, lj, li)  # from p_j at s -> -inf to p_i at s -> +inf
        a_is_j = any(np.linalg.norm(seg.a - J) < 1e-9 for J in geom.net.junctions)
        b_is_j = any(np.linalg.norm(seg.b - J) < 1e-9 for J in geom.net.junctions)
        frames.append(dict(a=a, t=t, n=n, L=L, li=li, lj=lj, prof=prof,
                           a_junction=a_is_j, b_junction=b_is_j))
    return frames


def network_field(network, bdata, pot, R, grid, bc="dirichlet", trace=None):
    """Initial guess: chamber wells with full 1D profiles across each segment."""
    if network.boundary_junctions:
        raise UnsupportedTopologyError("networks with a junction on the circle are not supported")
    X = grid.coords()
    scale = grid.radius
    geom = _NetworkGeometry(network, scale)
    lab = geom.labels(X - grid.center, bdata)
    wells = np.asarray(pot.wells, float)
    u = wells[lab]
    for fr in _segment_frames(geom, pot):
        rel = X - grid.center - fr["a"]
        xi = rel @ fr["t"]
        sig = rel @ fr["n"]
        lo, hi = _support(fr["prof"])
        near = (sig * R > lo) & (sig * R < hi) & (xi > -0.0) & (xi < fr["L"])
        if not fr["a_junction"]:
            near |= (sig * R > lo) & (sig * R < hi) & (xi <= 0)
        if not fr["b_junction"]:
            near |= (sig * R > lo) & (sig * R < hi) & (xi >= fr["L"])
        u[near] = fr["prof"].evaluate(R * sig[near])
    if bc == "dirichlet":
        if trace is None:
            trace = build_trace(bdata, pot, R, radius=scale)
        return Field(u, grid, "dirichlet", trace.ring_values(grid))
    return Field(u, grid, bc)


def prolong(coarse, template):
    """Bilinear transfer of ``coarse`` onto the grid of ``template``.

    Nodes of the template that the coarse footprint does not cover, and all
    Dirichlet nodes, keep the template's values.
    """
    g = template.grid
    X = g.coords()
    h = coarse.spacing
    fi = (X[..., 0] - coarse.origin[0]) / h
    fj = (X[..., 1] - coarse.origin[1]) / h
    i0 = np.clip(np.floor(fi).astype(int), 0, coarse.nx - 2)
    j0 = np.clip(np.floor(fj).astype(int), 0, coarse.ny - 2)
    act = coarse.active
    inside = (fi >= 0) & (fj >= 0) & (fi <= coarse.nx - 1) & (fj <= coarse.ny - 1)
    covered = inside & act[i0, j0] & act[i0 + 1, j0] & act[i0, j0 + 1] & act[i0 + 1, j0 + 1]
    take = covered & template.active & ~template.fixed
    u = template.values.copy()
    for c in range(2):
        vals = ndimage.map_coordinates(coarse.values[..., c], [fi[take], fj[take]], order=1)
        u[..., c][take] = vals
    return template.with_values(u)


def relax_coarse_to_fine(make_field, sizes, pot, R=1.0, tol=1e-8, max_iter=200, **kw):
    """Relax on a sequence of grids, each started from the previous solution.

    ``make_field(n)`` returns the initial field (with its boundary data) on
    the n-node grid; ``sizes`` runs from coarse to fine. Coarse levels use
    the tolerance ``sqrt(tol)`` since they only supply a starting point.
    """
    f = None
    for k, n in enumerate(sizes):
        init = make_field(n)
        if f is not None:
            init = prolong(f, init)
        last = k == len(sizes) - 1
        f = relax(init, pot, R, tol=tol if last else max(tol, np.sqrt(tol)),
                  max_iter=max_iter, **kw)
    return f


def settle_junctions(network, bdata, pot, R, grid, tensions, bc="dirichlet", trace=None):
    """Network whose junctions minimize the energy of the unrelaxed network field.

    On a lattice the discrete interface tension depends weakly on the
    interface direction, so the discrete junction sits slightly off the
    sharp-interface minimizer. On large domains the relaxation reaches that
    position only through a long, shallow valley; moving the junctions first
    (Nelder-Mead on the sampled initial-guess energy, resolution h / 4)
    removes that phase of the iteration.
    """
    from scipy import optimize

    from .partitions import move_junctions

    if not network.junctions:
        return network
    scale = grid.radius
    if trace is None and bc == "dirichlet":
        trace = build_trace(bdata, pot, R, radius=scale)
    x0 = np.concatenate([np.asarray(J, float) for J in network.junctions])

    def moved(x):
        return move_junctions(network, bdata, tensions, x.reshape(-1, 2))

    def fun(x):
        net = moved(x)
        if net is None:
            return np.inf
        return energy(network_field(net, bdata, pot, R, grid, bc=bc, trace=trace), pot, R)

    step = 2.0 * grid.spacing / scale
    simplex = np.vstack([x0] + [x0 + step * e for e in np.eye(x0.size)])
    res = optimize.minimize(fun, x0, method="Nelder-Mead",
                            options={"initial_simplex": simplex,
                                     "xatol": 0.25 * grid.spacing / scale, "fatol": 0.0})
    best = moved(res.x) if np.isfinite(res.fun) else None
    return network if best is None else best


@dataclass(frozen=True)
class Schedule:
    """Recovery-construction parameters.

    eta: junction-ball radius; lam: minimal arc length; rho: annulus width;
    height: rectangle height; thickness: constant C in height < C eta lam^2.
    """

    eta: float
    lam: float
    rho: float
    height: float
    thickness: float = 2.0

    def check(self):
        if not 2.0 * self.height <= self.eta:
            raise InvalidScheduleError(
                f"rectangle height {self.height:.4g} violates 2h <= eta = {self.eta:.4g}")
        if not self.height < self.thickness * self.eta * self.lam ** 2:
            raise InvalidScheduleError(
                f"rectangle height {self.height:.4g} violates h < C eta lam^2 = "
                f"{self.thickness * self.eta * self.lam ** 2:.4g}")
        if not 0 < self.rho < 1:
            raise InvalidScheduleError("annulus width must lie in (0, 1)")


def default_schedule(R, height_constant=1.0, thickness=2.0, **overrides):
    """eta = R^-2/3, lam = R^-1/8, rho = R^-8/9, h = C R^-11/12."""
    base = dict(eta=R ** (-2.0 / 3.0), lam=R ** (-1.0 / 8.0), rho=R ** (-8.0 / 9.0),
                height=height_constant * R ** (-11.0 / 12.0), thickness=thickness)
    base.update(overrides)
    return Schedule(**base)


def recovery_field(network, trace, pot, R, schedule=None, grid=None, hR=0.125):
    """Competitor for E_R on the unit disc agreeing with ``trace`` on the circle.

    Inside B_{1-rho} the network (scaled by 1 - rho) is dressed as follows:
    chamber nodes take their well; in a rectangle of height h on each side of
    a segment (shortened by sqrt(eta^2 - h^2) at interior junctions) the
    profile zeta(R s) is used for s <= h/2 and a linear ramp to the well for
    h/2 <= s <= h; on balls of radius eta about interior junctions the field
    is constant in B_{eta/2} and linear in r out to the sphere. The annulus
    1 - rho <= r <= 1 interpolates linearly in r between the inner values
    and the trace. Segments ending on the circle keep their rectangles up to
    the annulus.
    """
    if network.boundary_junctions:
        raise UnsupportedTopologyError("networks with a junction on the circle are not supported")
    sch = schedule or default_schedule(R)
    sch.check()
    if grid is None:
        n = int(np.ceil(2.0 * R / hR)) + 3
        n += (n + 1) % 2
        grid = disc_spec(n, 1.0)
    a = 1.0 - sch.rho
    geom = _NetworkGeometry(network, a)
    frames = _segment_frames(geom, pot)
    wells = np.asarray(pot.wells, float)
    bdata = trace.bdata
    eta, hh = sch.eta, sch.height
    shrink = np.sqrt(eta ** 2 - hh ** 2)

    def inner(x):
        lab = geom.labels(x, bdata)
        v = wells[lab]
        for fr in frames:
            rel = x - fr["a"]
            xi = rel @ fr["t"]
            sig = rel @ fr["n"]
            lo = shrink if fr["a_junction"] else -np.inf
            hi = fr["L"] - shrink if fr["b_junction"] else np.inf
            inside = (np.abs(sig) <= hh) & (xi >= lo) & (xi <= hi)
            if not np.any(inside):
                continue
            s = sig[inside]
            core = fr["prof"].evaluate(R * np.clip(s, -hh / 2, hh / 2))
            lam = np.clip((np.abs(s) - hh / 2) / (hh / 2), 0.0, 1.0)[:, None]
            end = np.where((s > 0)[:, None], wells[fr["li"]], wells[fr["lj"]])
            v[inside] = (1 - lam) * core + lam * end
        return v

    def inner_with_balls(x):
        v = inner(x)
        for q, J in enumerate(network.junctions):
            Ja = a * np.asarray(J, float)
            rel = x - Ja
            r = np.linalg.norm(rel, axis=-1)
            ball = r < eta
            if not np.any(ball):
                continue
            rb = np.maximum(r[ball], 1e-300)
            on_sphere = Ja + eta * rel[ball] / rb[:, None]
            vs = inner(on_sphere)
            centre = wells[_ball_well(network, q)]
            lam = np.clip((rb - eta / 2) / (eta / 2), 0.0, 1.0)[:, None]
            v[ball] = lam * vs + (1 - lam) * centre
        return v

    X = grid.coords() - grid.center
    r = np.linalg.norm(X, axis=-1)
    active = grid.mask() != OUTSIDE
    u = np.tile(wells[0], grid.shape + (1,)).astype(float)
    core = active & (r < a)
    u[core] = inner_with_balls(X[core])
    ann = active & (r >= a)
    xa = X[ann]
    ra = r[ann]
    theta = np.arctan2(xa[:, 1], xa[:, 0])
    e = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    v_in = inner_with_balls(a * e)
    v_out = trace.values_at(theta)
    lam = np.clip((ra - a) / sch.rho, 0.0, 1.0)[:, None]
    u[ann] = (1 - lam) * v_in + lam * v_out
    out = Field(u, grid, "dirichlet", trace.ring_values(grid))
    out.info.update(schedule=sch, R=R)
    return out


def _ball_well(network, q):
    """Well of the widest chamber at junction q; the ball core takes its value."""
    J = network.junctions[q]
    dirs = []
    for seg in network.segments:
        for end, other in ((seg.a, seg.b), (seg.b, seg.a)):
            if np.linalg.norm(end - J) < 1e-9:
                d = other - J
                dirs.append((np.arctan2(d[1], d[0]), seg.labels))
    dirs.sort()
    best, lab = -1.0, 0
    for k in range(len(dirs)):
        a0, l0 = dirs[k]
        a1, l1 = dirs[(k + 1) % len(dirs)]
        opening = np.mod(a1 - a0, TWO_PI)
        common = set(l0) & set(l1)
        if common and opening > best:
            best, lab = opening, common.pop()
    return lab


# --------------------------------------------------------------------------
# blowdown
# --------------------------------------------------------------------------
def blowdown(field, R_factor, target, bc="neumann"):
    """Bilinear resample of x -> u(R_factor * x) onto the ``target`` grid."""
    if not R_factor > 0:
        raise ValidationError("R_factor must be positive")
    tmask = target.mask() != OUTSIDE
    X = target.coords()[tmask] * R_factor
    h = field.spacing
    fi = (X[:, 0] - field.origin[0]) / h
    fj = (X[:, 1] - field.origin[1]) / h
    snap = lambda f: np.where(np.abs(f - np.round(f)) < 1e-9, np.round(f), f)  # noqa: E731
    fi, fj = snap(fi), snap(fj)
    i0 = np.floor(fi).astype(int)
    j0 = np.floor(fj).astype(int)
    i1 = np.minimum(i0 + 1, field.nx - 1)
    j1 = np.minimum(j0 + 1, field.ny - 1)
    if (np.any(i0 < 0) or np.any(j0 < 0) or np.any(fi > field.nx - 1)
            or np.any(fj > field.ny - 1)):
        raise OutOfFootprintError("target grid exceeds the source footprint")
    act = field.active
    # a corner only matters when its bilinear weight is nonzero
    wx, wy = fi > i0, fj > j0
    ok = (act[i0, j0] & (~wx | act[i1, j0]) & (~wy | act[i0, j1])
          & (~(wx & wy) | act[i1, j1]))
    if not np.all(ok):
        raise OutOfFootprintError("target grid samples the source outside its domain")
    out = np.tile(np.asarray(field.values[act][0]), target.shape + (1,)).astype(float)
    vals = np.stack([ndimage.map_coordinates(field.values[..., c], [fi, fj], order=1,
                                             mode="nearest") for c in range(2)], axis=-1)
    out[tmask] = vals
    if bc == "dirichlet":
        return Field(out, target, "dirichlet")
    return Field(out, target, bc)


# --------------------------------------------------------------------------
# local minimality probe
# --------------------------------------------------------------------------
@dataclass
class ProbeReport:
    deltas: list
    min_delta: float
    area: float
    tol: float
    threshold: float
    consistent: bool
    box: tuple


def local_min_probe(field, pot, R=1.0, box=None, trials=8, amplitude=0.2, seed=0,
                    tol=1e-8, relax_field=True, max_iter=200):
    """Perturb inside the index box K, re-relax with K's boundary clamped, compare energies.

    ``box`` = (i0, i1, j0, j1) node indices, inclusive; default is the
    central half of the grid. Returns deltas E(relaxed perturbed) - E(field).
    With ``relax_field`` False the perturbed trials are compared against
    the field as given, so an unrelaxed field shows negative deltas.
    """
    nx, ny = field.grid.shape
    if box is None:
        box = (nx // 4, 3 * nx // 4, ny // 4, 3 * ny // 4)
    i0, i1, j0, j1 = box
    if not (0 <= i0 < i1 - 1 and i1 < nx and 0 <= j0 < j1 - 1 and j1 < ny):
        raise DomainError("probe box must contain interior nodes")
    K = np.zeros(field.grid.shape, bool)
    K[i0 + 1:i1, j0 + 1:j1] = True
    free = K & field.active & ~field.fixed
    inside = np.zeros(field.grid.shape, bool)
    inside[i0:i1 + 1, j0:j1 + 1] = True
    if not np.all(field.active[inside]):
        raise DomainError("probe box leaves the domain")
    area = float((i1 - i0) * (j1 - j0)) * field.spacing ** 2
    E0 = _discretization(field, free).energy(field.values, pot, R)
    rng = Lcg64(seed)
    deltas = []
    for k in range(trials):
        noise = rng.spawn(k).normal(size=(int(free.sum()), 2))
        u = field.values.copy()
        u[free] += amplitude * noise
        pert = field.with_values(u)
        if relax_field:
            pert = relax(pert, pot, R, tol=tol, max_iter=max_iter, free=free)
        E1 = _discretization(field, free).energy(pert.values, pot, R)
        deltas.append(E1 - E0)
    thr = -tol * area
    md = float(min(deltas)) if deltas else 0.0
    return ProbeReport(deltas, md, area, tol, thr, md >= thr, tuple(box))


# --------------------------------------------------------------------------
# file I/O
# --------------------------------------------------------------------------
def write_field(field, path):
    """TWAC1 text format; floats are written with repr so reading is lossless."""
    g = field.grid
    lines = [f"{MAGIC}{FORMAT_VERSION}",
             f"{g.nx} {g.ny} {g.spacing!r} {g.origin[0]!r} {g.origin[1]!r} {g.domain} {field.bc}"]
    flat = field.values.reshape(-1, 2)
    lines.extend(f"{float(a)!r} {float(b)!r}" for a, b in flat)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_field(path):
    with open(path, "rb") as fh:
        data = fh.read()
    return parse_field(data)


def parse_field(data):
    if isinstance(data, str):
        data = data.encode()
    offset = 0

    def next_line():
        nonlocal offset
        end = data.find(b"\n", offset)
        if end < 0:
            raise FieldFormatError("unexpected end of file", offset=offset)
        line = data[offset:end].decode("ascii", errors="replace")
        start = offset
        offset = end + 1
        return line, start

    line, pos = next_line()
    if not line.startswith(MAGIC):
        raise FieldFormatError(f"bad magic {line[:8]!r}", offset=pos)
    try:
        version = int(line[len(MAGIC):])
    except ValueError:
        raise FieldFormatError(f"bad version tag {line!r}", offset=pos) from None
    if version != FORMAT_VERSION:
        raise FieldVersionError(f"file version {version}, reader supports {FORMAT_VERSION}",
                                offset=pos)
    line, pos = next_line()
    parts = line.split()
    if len(parts) != 7:
        raise FieldFormatError("header needs: nx ny spacing origin_x origin_y domain bc",
                               offset=pos)
    try:
        nx, ny = int(parts[0]), int(parts[1])
        h, ox, oy = float(parts[2]), float(parts[3]), float(parts[4])
    except ValueError:
        raise FieldFormatError("malformed header numbers", offset=pos) from None
    domain, bc = parts[5], parts[6]
    vals = np.empty((nx * ny, 2))
    for k in range(nx * ny):
        line, pos = next_line()
        p = line.split()
        if len(p) != 2:
            raise FieldFormatError(f"node {k}: expected two values", offset=pos)
        try:
            vals[k] = float(p[0]), float(p[1])
        except ValueError:
            raise FieldFormatError(f"node {k}: malformed number", offset=pos) from None
    try:
        grid = GridSpec(nx, ny, h, (ox, oy), domain)
        return Field(vals.reshape(nx, ny, 2), grid, bc)
    except ValidationError as exc:
        raise FieldFormatError(str(exc), offset=0) from None


def write_pgm(labels, path):
    """Binary P5 image, one gray level per well index and white outside."""
    labels = np.asarray(labels)
    gray = np.full(labels.shape, 255, dtype=np.uint8)
    for k, level in enumerate((0, 96, 176)):
        gray[labels == k] = level
    img = gray.T[::-1]  # y up
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode())
        fh.write(np.ascontiguousarray(img).tobytes())


def read_pgm(path):
    with open(path, "rb") as fh:
        data = fh.read()
    parts = data.split(b"\n", 3)
    w, h = map(int, parts[1].split())
    img = np.frombuffer(parts[3], dtype=np.uint8).reshape(h, w)
    return img[::-1].T
