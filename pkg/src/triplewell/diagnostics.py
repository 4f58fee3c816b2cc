"""Quantitative checks on fields: stress tensor, Pohozaev identity, the
renormalized potential energy, equipartition, radial energy, blowdown
classification and circle traces.

Fields carry their own coordinates; a field relaxed at scale R on the unit
disc and the same solution on B_R at scale 1 give the same numbers once
the radii are rescaled. Integrals over discs and annuli use a polar
quadrature (Gauss-Legendre in r, periodic trapezoid in theta) of
bilinearly interpolated node densities, so they do not staircase.
"""

import csv
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy import ndimage

from .errors import DomainError, ValidationError
from .geodesics import winding_number
from .junction import junction_angles, make_junction_map
from .solver import midpoint_profile, write_pgm

TWO_PI = 2.0 * np.pi


# --------------------------------------------------------------------------
# sampling helpers
# --------------------------------------------------------------------------
def _center(field, center):
    return field.grid.center if center is None else np.asarray(center, float)


def _sample(field, arr, pts):
    """Bilinear interpolation of a node array (nx, ny[, k]) at points (..., 2).

    Written in difference form so that constant arrays are reproduced
    exactly; points beyond the grid take the nearest edge value.
    """
    h = field.spacing
    nx, ny = arr.shape[:2]
    fi = np.clip((pts[..., 0] - field.origin[0]) / h, 0.0, nx - 1.0)
    fj = np.clip((pts[..., 1] - field.origin[1]) / h, 0.0, ny - 1.0)
    i0 = np.minimum(np.floor(fi).astype(int), nx - 2)
    j0 = np.minimum(np.floor(fj).astype(int), ny - 2)
    wx, wy = fi - i0, fj - j0
    if arr.ndim > 2:
        wx, wy = wx[..., None], wy[..., None]
    a00, a10 = arr[i0, j0], arr[i0 + 1, j0]
    a01, a11 = arr[i0, j0 + 1], arr[i0 + 1, j0 + 1]
    return a00 + wx * (a10 - a00) + wy * (a01 - a00) + wx * wy * (a11 - a10 - a01 + a00)


def _check_inside(field, center, r):
    if field.grid.domain == "disc":
        room = field.grid.radius - np.linalg.norm(center - field.grid.center)
    else:
        lo = np.array(field.origin)
        hi = lo + field.spacing * (np.array(field.grid.shape) - 1)
        room = float(np.min(np.concatenate([center - lo, hi - center])))
    if r > room + 1e-12:
        raise DomainError(f"circle of radius {r:.4g} leaves the domain")


def _gradients(field):
    h = field.spacing
    return np.gradient(field.values, h, axis=0), np.gradient(field.values, h, axis=1)


def _polar_nodes(field, r0, r1, n_r=None, n_theta=None):
    h = field.spacing
    if n_r is None:
        n_r = int(max(16, np.ceil(2.0 * (r1 - r0) / h)))
    if n_theta is None:
        n_theta = int(max(256, np.ceil(2.0 * TWO_PI * r1 / h)))
    x, w = np.polynomial.legendre.leggauss(n_r)
    rr = r0 + 0.5 * (r1 - r0) * (x + 1.0)
    wr = 0.5 * (r1 - r0) * w
    th = np.linspace(0.0, TWO_PI, n_theta, endpoint=False)
    return rr, wr, th, TWO_PI / n_theta


def _polar_integral(field, density, r0, r1, center=None, weight=None):
    """Integral of a node density over the annulus r0 < |x - c| < r1."""
    c = _center(field, center)
    _check_inside(field, c, r1)
    rr, wr, th, dth = _polar_nodes(field, r0, r1)
    e = np.stack([np.cos(th), np.sin(th)], axis=-1)
    total = 0.0
    for r, w in zip(rr, wr):
        vals = _sample(field, density, c + r * e)
        jac = r if weight is None else weight(r)
        total += w * jac * np.sum(vals) * dth
    return float(total)


# --------------------------------------------------------------------------
# stress tensor and Pohozaev
# --------------------------------------------------------------------------
def stress_tensor(field, pot, R=1.0):
    """T_ij = u_i . u_j / R - delta_ij (|grad u|^2 / 2R + R W); returns (T, div T).

    Derivatives are centered differences; both arrays are zero outside the domain.
    """
    gx, gy = _gradients(field)
    g = (gx, gy)
    dens = 0.5 * (np.einsum("ijk,ijk->ij", gx, gx) + np.einsum("ijk,ijk->ij", gy, gy)) / R
    dens = dens + R * pot.W(field.values)
    T = np.empty(field.grid.shape + (2, 2))
    for a in range(2):
        for b in range(2):
            T[..., a, b] = np.einsum("ijk,ijk->ij", g[a], g[b]) / R - (a == b) * dens
    h = field.spacing
    div = np.stack([np.gradient(T[..., 0, b], h, axis=0) + np.gradient(T[..., 1, b], h, axis=1)
                    for b in range(2)], axis=-1)
    act = field.active[..., None]
    inner = ndimage.binary_erosion(field.active, np.ones((5, 5), bool))[..., None]
    return T * act[..., None], div * inner


def pohozaev_residual(field, pot, r, R=1.0, center=None, m=4096):
    """(1/2) circle integral of (|U_nu|^2/2 - |U_s|^2/2)/R - R W, plus (R/r) integral of W.

    Vanishes for exact critical points of E_R on B_r.
    """
    c = _center(field, center)
    if not r > 0:
        raise DomainError("radius must be positive")
    _check_inside(field, c, r)
    gx, gy = _gradients(field)
    th = np.linspace(0.0, TWO_PI, m, endpoint=False)
    e = np.stack([np.cos(th), np.sin(th)], axis=-1)
    pts = c + r * e
    ux = _sample(field, gx, pts)
    uy = _sample(field, gy, pts)
    u = _sample(field, field.values, pts)
    nu = ux * e[:, :1] + uy * e[:, 1:]
    s = -ux * e[:, 1:] + uy * e[:, :1]
    integrand = 0.5 * (0.5 * np.sum(nu * nu, 1) - 0.5 * np.sum(s * s, 1)) / R - 0.5 * R * pot.W(u)
    boundary = float(np.sum(integrand) * r * TWO_PI / m)
    bulk = _polar_integral(field, pot.W(field.values), 0.0, r, c)
    return boundary + R * bulk / r


# --------------------------------------------------------------------------
# renormalized energy, equipartition, radial energy
# --------------------------------------------------------------------------
@dataclass
class WtildeProfile:
    radii: np.ndarray
    values: np.ndarray
    monotonicity_defect: float
    C3: float
    alpha: float
    tail_variation: float


def wtilde_profile(field, pot, radii, R=1.0, center=None):
    """W~(r) = (R / r) * integral over B_r of W, with a monotonicity check.

    Drops W~(r1) - W~(r2) over pairs r1 < r2 <= 2 r1 are fitted to
    C3 r1^(-alpha/2) on the smaller half of the radii (least-squares slope,
    intercept raised to envelope those drops); the defect is the largest
    excess of a drop over that allowance on all pairs.
    """
    radii = np.asarray(sorted(radii), float)
    Wn = pot.W(field.values)
    vals = np.array([R * _polar_integral(field, Wn, 0.0, r, center) / r for r in radii])
    drops = []
    for a, r1 in enumerate(radii):
        for b in range(a + 1, len(radii)):
            if radii[b] <= 2.0 * r1 * (1 + 1e-12):
                drops.append((r1, vals[a] - vals[b]))
    drops = np.array(drops).reshape(-1, 2)
    C3, alpha = 0.0, 0.0
    pos = drops[drops[:, 1] > 0] if drops.size else drops
    if len(pos):
        half = pos[pos[:, 0] <= np.median(radii)]
        fit = half if len(half) else pos
        if len(np.unique(fit[:, 0])) >= 2:
            slope = np.polyfit(np.log(fit[:, 0]), np.log(fit[:, 1]), 1)[0]
            alpha = max(-2.0 * slope, 0.0)
        C3 = float(np.max(fit[:, 1] * fit[:, 0] ** (alpha / 2)))
    excess = [d - C3 * r1 ** (-alpha / 2) for r1, d in drops] if drops.size else [0.0]
    defect = float(max(0.0, max(excess)))
    tail = float(abs(vals[-1] - vals[-2]) / max(abs(vals[-1]), 1e-300)) if len(vals) > 1 else 0.0
    return WtildeProfile(radii, vals, defect, C3, alpha, tail)


@dataclass
class DefectFit:
    radii: np.ndarray
    values: np.ndarray
    exponent: float
    upper95: float


def equipartition_density(field, pot, R=1.0):
    gx, gy = _gradients(field)
    grad = np.sqrt(np.einsum("ijk,ijk->ij", gx, gx) + np.einsum("ijk,ijk->ij", gy, gy))
    return (np.sqrt(R * pot.W(field.values)) - grad / np.sqrt(2.0 * R)) ** 2


def equipartition_defect(field, pot, radii, R=1.0, center=None):
    """Integral over B_r of (sqrt(R W) - |grad U| / sqrt(2R))^2 and its growth exponent."""
    radii = np.asarray(sorted(radii), float)
    dens = equipartition_density(field, pot, R)
    vals = np.array([_polar_integral(field, dens, 0.0, r, center) for r in radii])
    exponent, upper = np.nan, np.nan
    if len(radii) >= 2 and np.all(vals > 0):
        x, y = np.log(radii), np.log(vals)
        A = np.vstack([x, np.ones_like(x)]).T
        coef, *_ = np.linalg.lstsq(A, y, rcond=None)
        exponent = float(coef[0])
        if len(radii) > 2:
            from scipy import stats

            resid = y - A @ coef
            s2 = float(resid @ resid) / (len(x) - 2)
            se = np.sqrt(s2 / np.sum((x - x.mean()) ** 2))
            upper = exponent + float(stats.t.ppf(0.975, len(x) - 2)) * se
        else:
            upper = exponent
    return DefectFit(radii, vals, exponent, upper)


def radial_energy(field, r1, r2, center=None):
    """Integral over r1 < |x| < r2 of |U_nu|^2 / |x|."""
    if not 0 <= r1 < r2:
        raise DomainError("need 0 <= r1 < r2")
    c = _center(field, center)
    gx, gy = _gradients(field)
    _check_inside(field, c, r2)
    rr, wr, th, dth = _polar_nodes(field, r1, r2)
    e = np.stack([np.cos(th), np.sin(th)], axis=-1)
    total = 0.0
    for r, w in zip(rr, wr):
        pts = c + r * e
        nu = _sample(field, gx, pts) * e[:, :1] + _sample(field, gy, pts) * e[:, 1:]
        total += w * np.sum(nu * nu) * dth  # |U_nu|^2 / r * r dr dtheta
    return float(total)


# --------------------------------------------------------------------------
# fits against constants, half-planes and junction maps
# --------------------------------------------------------------------------
def _square_samples(field, radius, center, n):
    """Points of the square inscribed in B_radius and the field there."""
    c = _center(field, center)
    _check_inside(field, c, radius)
    half = radius / np.sqrt(2.0)
    s = (np.arange(n) + 0.5) / n * 2.0 - 1.0
    X, Y = np.meshgrid(s, s, indexing="ij")
    unit = np.stack([X.ravel(), Y.ravel()], axis=-1) * half
    return unit, _sample(field, field.values, c + unit), (2 * half) ** 2


def fit_constant(u, wells):
    d = np.linalg.norm(u[:, None, :] - wells[None], axis=-1)
    per = d.mean(axis=0)
    k = int(np.argmin(per))
    return float(per[k]), k


def fit_half_plane(x, u, wells, n_angles=720, max_offset=0.5):
    """Best line angle, offset and ordered well pair by L1 distance per unit area.

    Offsets are limited to ``max_offset`` times the square's half side so
    that the line crosses the central region.
    """
    d = np.linalg.norm(u[:, None, :] - wells[None], axis=-1)
    N = len(u)
    half = np.max(np.abs(x))
    best = (np.inf, None)
    for k in range(n_angles):
        phi = TWO_PI * k / n_angles
        nrm = np.array([np.cos(phi), np.sin(phi)])
        proj = x @ nrm
        order = np.argsort(proj)
        ps = proj[order]
        lo = np.searchsorted(ps, -max_offset * half)
        hi = np.searchsorted(ps, max_offset * half)
        for a in range(3):
            for b in range(3):
                if a == b:
                    continue
                # points with proj < offset take well a, the rest well b
                ca = np.concatenate([[0.0], np.cumsum(d[order, a])])
                cb = np.concatenate([[0.0], np.cumsum(d[order, b])])
                cost = ca[lo:hi + 1] + (cb[-1] - cb[lo:hi + 1])
                m = int(np.argmin(cost))
                if cost[m] / N < best[0]:
                    cut = lo + m
                    off = ps[cut - 1] if cut > 0 else -half
                    best = (cost[m] / N, dict(angle=phi, offset=float(off), wells=(a, b)))
    return best


def distance_to_A(field, costs, radius=None, center=None, n=96, n_rot=720, wells=None, pot=None):
    """L1 distance per unit area on the inscribed square to the nearest junction cone.

    Cones have opening angles fixed by the sine law for ``costs``; rotation
    (``n_rot`` steps) and the sector-to-well assignment (6 orders) are scanned.
    """
    if wells is None:
        wells = pot.wells
    wells = np.asarray(wells, float)
    c = _center(field, center)
    if radius is None:
        radius = field.grid.radius * 0.98 if field.grid.domain == "disc" else None
    x, u, _ = _square_samples(field, radius, c, n)
    return _fit_junction(x, u, wells, costs, n_rot, c)


def _fit_junction(x, u, wells, costs, n_rot, center=(0.0, 0.0)):
    angles = junction_angles(*costs)
    d = np.linalg.norm(u[:, None, :] - wells[None], axis=-1)
    phi = np.arctan2(x[:, 1], x[:, 0])
    best = (np.inf, None)
    import itertools

    for assign in itertools.permutations(range(3)):
        ends = np.cumsum([angles[k] for k in assign])
        for k in range(n_rot):
            rot = TWO_PI * k / n_rot
            rel = np.mod(phi - rot, TWO_PI)
            sector = np.searchsorted(ends[:2], rel, side="right")
            lab = np.asarray(assign)[sector]
            cost = float(np.mean(d[np.arange(len(u)), lab]))
            if cost < best[0]:
                best = (cost, (rot, assign))
    rot, assign = best[1]
    return best[0], make_junction_map(angles, rot, assign, tuple(center))


@dataclass
class BlowdownReport:
    radii: np.ndarray
    wtilde: np.ndarray
    L0_estimate: float
    equipartition_defect: np.ndarray
    defect_exponent: float
    radial_term: np.ndarray
    classification: str
    best_fit: object
    distance: float
    fit_distances: dict
    thresholds: dict = dc_field(default_factory=dict)
    sine_residual: float = 0.0

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["radius", "wtilde", "equipartition_defect", "radial_term"])
            rt = list(self.radial_term) + [float("nan")] * (len(self.radii) - len(self.radial_term))
            for r, wt, dd, ra in zip(self.radii, self.wtilde, self.equipartition_defect, rt):
                w.writerow([repr(float(r)), repr(float(wt)), repr(float(dd)), repr(float(ra))])

    def summary(self):
        lines = ["[blowdown]",
                 f"classification = {self.classification}",
                 f"distance = {self.distance!r}",
                 f"L0_estimate = {self.L0_estimate!r}",
                 f"defect_exponent = {self.defect_exponent!r}",
                 f"sine_residual = {self.sine_residual!r}"]
        for k, v in self.fit_distances.items():
            lines.append(f"fit_{k} = {float(v)!r}")
        for k, v in self.thresholds.items():
            lines.append(f"threshold_{k} = {v!r}")
        if hasattr(self.best_fit, "to_text"):
            lines.append(self.best_fit.to_text().strip())
        elif isinstance(self.best_fit, dict):
            for k, v in self.best_fit.items():
                lines.append(f"fit_param_{k} = {v!r}")
        return "\n".join(lines) + "\n"

    def write_pgm(self, path, n=256, wells=None):
        s = (np.arange(n) + 0.5) / n * 2.0 - 1.0
        X, Y = np.meshgrid(s, s, indexing="ij")
        pts = np.stack([X, Y], axis=-1)
        if hasattr(self.best_fit, "label_at"):
            lab = self.best_fit.label_at(pts - np.asarray(self.best_fit.center))
        elif isinstance(self.best_fit, dict) and "angle" in self.best_fit:
            nrm = np.array([np.cos(self.best_fit["angle"]), np.sin(self.best_fit["angle"])])
            a, b = self.best_fit["wells"]
            lab = np.where(pts @ nrm < self.best_fit["offset_unit"], a, b)
        else:
            lab = np.full((n, n), self.best_fit.get("well", 0) if isinstance(self.best_fit, dict)
                          else 0)
        write_pgm(lab, path)


def classify_blowdown(field, pot, radii, costs, center=None, n=96, n_rot=720, margin=0.2,
                      R=1.0):
    """Wtilde, equipartition and radial diagnostics plus a cone fit at the largest radius.

    The field on the square inscribed in B_r (r = max radii), rescaled to
    unit size, is compared in L1 per unit area with the nearest constant,
    half-plane and junction map. The best fit wins when it beats the runner
    up by the relative ``margin``; otherwise the report is inconclusive.
    """
    radii = np.asarray(sorted(radii), float)
    c = _center(field, center)
    wt = wtilde_profile(field, pot, radii, R, c)
    ed = equipartition_defect(field, pot, radii, R, c)
    rad = np.array([radial_energy(field, r1, r2, c) for r1, r2 in zip(radii[:-1], radii[1:])])
    x, u, _ = _square_samples(field, radii[-1], c, n)
    x = x / (radii[-1] / np.sqrt(2.0))
    wells = np.asarray(pot.wells, float)
    d_const, k_const = fit_constant(u, wells)
    d_half, half = fit_half_plane(x, u, wells, n_rot)
    d_tj, jmap = _fit_junction(x, u, wells, costs, n_rot, (0.0, 0.0))
    fits = {"constant": d_const, "half-plane": d_half, "triple-junction": d_tj}
    order = sorted(fits, key=fits.get)
    best, second = order[0], order[1]
    if fits[best] <= (1.0 - margin) * fits[second] or fits[best] == 0.0 and fits[second] > 0:
        label = best
    else:
        label = "inconclusive"
    if best == "constant":
        fit = {"well": k_const}
    elif best == "half-plane":
        fit = dict(half, offset_unit=half["offset"])
    else:
        fit = jmap
    from .junction import sine_law_residual

    sres = sine_law_residual(np.asarray(jmap.angles), costs)
    if label == "triple-junction" and sres > 1e-9:
        label = "inconclusive"
    L0 = float(np.mean(wt.values[-2:]))
    return BlowdownReport(radii, wt.values, L0, ed.values, ed.exponent, rad, label, fit,
                          fits[best], fits, {"margin": margin, "rotation_steps": n_rot,
                                             "samples": n * n}, sres)


# --------------------------------------------------------------------------
# circle traces
# --------------------------------------------------------------------------
def transition_level(pot, d0=None, m=720):
    """W0 = min of W on the circles of radius d0 about the wells (d0 = min separation / 4)."""
    if d0 is None:
        d0 = 0.25 * pot.min_well_distance()
    th = np.linspace(0.0, TWO_PI, m, endpoint=False)
    e = np.stack([np.cos(th), np.sin(th)], axis=-1)
    return float(min(np.min(pot.W(p + d0 * e)) for p in pot.wells)), d0


@dataclass
class CircleProfile:
    theta: np.ndarray
    values: np.ndarray
    rho: float
    energy: float
    arc_energies: list
    crossings: np.ndarray
    W0: float
    transitions: list
    winding: float


def circle_profile(field, pot, rho, R=1.0, center=None, m=4096, arcs=None):
    """Restriction of the field to the circle of radius rho and its 1D energies.

    Returns the sampled profile, the full-circle energy of
    R W(U) + |dU/ds|^2 / (2R), energies of the sub-arcs ``arcs`` (default the
    upper and lower half circles), angles where W(U) crosses W0, the
    distance of each transition window to the matching heteroclinic and
    the winding number of the image curve about the well centroid.
    """
    c = _center(field, center)
    _check_inside(field, c, rho)
    th = np.linspace(0.0, TWO_PI, m, endpoint=False)
    pts = c + rho * np.stack([np.cos(th), np.sin(th)], axis=-1)
    u = _sample(field, field.values, pts)
    ds = rho * TWO_PI / m
    un = np.roll(u, -1, axis=0)
    dens = R * 0.5 * (pot.W(u) + pot.W(un)) + 0.5 * np.sum((un - u) ** 2, 1) / ds ** 2 / R
    total = float(np.sum(dens) * ds)
    if arcs is None:
        arcs = [(0.0, np.pi), (np.pi, TWO_PI)]
    arc_e = []
    for a0, a1 in arcs:
        sel = (th >= a0) & (th < a1)
        arc_e.append(float(np.sum(dens[sel]) * ds))
    W0, _ = transition_level(pot)
    Wu = pot.W(u)
    above = Wu > W0
    flips = np.flatnonzero(above != np.roll(above, -1))
    crossings = th[flips]
    transitions = _transition_windows(u, th, Wu, W0, pot, rho, R)
    closed = np.vstack([u, u[:1]])
    try:
        wind = winding_number(closed, pot.centroid)
    except Exception:  # noqa: BLE001 - curve through the centroid: report nan
        wind = float("nan")
    return CircleProfile(th, u, rho, total, arc_e, crossings, W0, transitions, wind)


def _transition_windows(u, th, Wu, W0, pot, rho, R):
    """Compare each W > W0 window with the heteroclinic joining its end wells."""
    wells = np.asarray(pot.wells, float)
    m = len(th)
    above = Wu > W0
    if above.all() or not above.any():
        return []
    start = np.flatnonzero(~above & np.roll(above, -1))  # last below before a window
    out = []
    ds = rho * TWO_PI / m
    for s0 in start:
        k = (s0 + 1) % m
        length = 0
        while above[(k + length) % m] and length < m:
            length += 1
        pad = length + 8
        idx = (np.arange(s0 - pad, s0 + 1 + length + pad)) % m
        seg = u[idx]
        a = int(np.argmin(np.linalg.norm(wells - seg[0], axis=1)))
        b = int(np.argmin(np.linalg.norm(wells - seg[-1], axis=1)))
        if a == b:
            out.append(dict(angle=float(th[k]), pair=(a, b), sup_distance=float("nan")))
            continue
        prof = midpoint_profile(pot, a, b)
        s = (np.arange(len(idx)) - len(idx) / 2) * ds * R
        best = np.inf
        for shift in np.linspace(-len(idx) * ds * R / 2, len(idx) * ds * R / 2, 201):
            best = min(best, float(np.max(np.linalg.norm(prof.evaluate(s - shift) - seg, axis=1))))
        out.append(dict(angle=float(th[k]), pair=(a, b), sup_distance=best))
    return out
