"""Triple-well potentials W: R^2 -> [0, inf) with analytic derivatives.

One formula covers both families::

    W(u) = scale * (1 + eps * q(u)) * prod_l F_l(u - p_l)
    F_l(v) = a_l |v|^2 + b |v|^4
    q(u) = exp(-|u - c|^2 / (2 sigma^2))

The ``product`` family is a = 1, b = 0, eps = 0, i.e. scale times the
product of squared distances to the wells. The ``perturbed`` family exposes
the per-factor quadratic coefficients a_l, the shared quartic coefficient b
and the smooth positive bump q, which together break every symmetry.

All evaluators accept points of shape (..., 2) and broadcast.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidWellsError, ValidationError

SYMMETRIC_WELLS = np.array(
    [[1.0, 0.0], [-0.5, np.sqrt(3.0) / 2.0], [-0.5, -np.sqrt(3.0) / 2.0]]
)

FAMILIES = ("product", "perturbed")

_DEFAULT_PARAMS = {
    "scale": 1.0,
    "eps": 0.0,
    "a1": 1.0,
    "a2": 1.0,
    "a3": 1.0,
    "quartic": 0.0,
    "bump_x": 0.0,
    "bump_y": 0.0,
    "bump_width": 1.0,
}


@dataclass(frozen=True)
class Potential:
    """Immutable triple-well potential.

    ``convexity_radius`` and ``hessian_floor`` are estimated once at
    construction (see :func:`estimate_convexity_radius`).
    """

    wells: np.ndarray
    family: str
    params: dict
    convexity_radius: float = field(default=np.nan)
    hessian_floor: float = field(default=np.nan)

    # evaluation ----------------------------------------------------------
    def _parts(self, u):
        u = np.asarray(u, dtype=float)
        p = self.params
        a = np.array([p["a1"], p["a2"], p["a3"]])
        b = p["quartic"]
        v = u[..., None, :] - self.wells  # (..., 3, 2)
        r2 = np.einsum("...i,...i->...", v, v)  # (..., 3)
        f = a * r2 + b * r2 * r2
        return u, v, r2, f, a, b

    def _bump(self, u):
        p = self.params
        if p["eps"] == 0.0:
            return None
        c = np.array([p["bump_x"], p["bump_y"]])
        s2 = p["bump_width"] ** 2
        d = u - c
        e = np.exp(-np.einsum("...i,...i->...", d, d) / (2.0 * s2))
        return d, s2, e

    def W(self, u):
        u, v, r2, f, a, b = self._parts(u)
        val = self.params["scale"] * np.prod(f, axis=-1)
        bump = self._bump(u)
        if bump is not None:
            val = val * (1.0 + self.params["eps"] * bump[2])
        return val

    def grad(self, u):
        u, v, r2, f, a, b = self._parts(u)
        df = (2.0 * a + 4.0 * b * r2)[..., None] * v  # (..., 3, 2)
        f0, f1, f2 = f[..., 0], f[..., 1], f[..., 2]
        P = f0 * f1 * f2
        gP = (
            (f1 * f2)[..., None] * df[..., 0, :]
            + (f0 * f2)[..., None] * df[..., 1, :]
            + (f0 * f1)[..., None] * df[..., 2, :]
        )
        s = self.params["scale"]
        bump = self._bump(u)
        if bump is None:
            return s * gP
        d, s2, e = bump
        eps = self.params["eps"]
        g = 1.0 + eps * e
        gg = (-eps * e / s2)[..., None] * d
        return s * (g[..., None] * gP + P[..., None] * gg)

    def hess(self, u):
        u, v, r2, f, a, b = self._parts(u)
        eye = np.eye(2)
        df = (2.0 * a + 4.0 * b * r2)[..., None] * v
        hf = (2.0 * a + 4.0 * b * r2)[..., None, None] * eye + 8.0 * b * (
            v[..., :, None] * v[..., None, :]
        )
        f0, f1, f2 = f[..., 0], f[..., 1], f[..., 2]
        P = f0 * f1 * f2
        others = np.stack([f1 * f2, f0 * f2, f0 * f1], axis=-1)
        gP = np.einsum("...l,...li->...i", others, df)
        HP = np.einsum("...l,...lij->...ij", others, hf)
        pairs = ((0, 1, 2), (0, 2, 1), (1, 2, 0))
        for i, j, k in pairs:
            outer = df[..., i, :, None] * df[..., j, None, :]
            HP = HP + f[..., k, None, None] * (outer + np.swapaxes(outer, -1, -2))
        s = self.params["scale"]
        bump = self._bump(u)
        if bump is None:
            return s * HP
        d, s2, e = bump
        eps = self.params["eps"]
        g = 1.0 + eps * e
        gg = (-eps * e / s2)[..., None] * d
        Hg = (eps * e / s2)[..., None, None] * (
            d[..., :, None] * d[..., None, :] / s2 - eye
        )
        cross = gg[..., :, None] * gP[..., None, :]
        return s * (
            g[..., None, None] * HP
            + cross
            + np.swapaxes(cross, -1, -2)
            + P[..., None, None] * Hg
        )

    # helpers ---------------------------------------------------------------
    @property
    def centroid(self):
        return self.wells.mean(axis=0)

    def min_well_distance(self):
        w = self.wells
        return min(
            np.linalg.norm(w[i] - w[j]) for i, j in ((0, 1), (0, 2), (1, 2))
        )

    def lipschitz(self, radius=None, n=64):
        """Sampled bound on the largest Hessian eigenvalue magnitude.

        Samples a square of half-width ``radius`` about the well centroid;
        the default radius covers the wells with a 25% margin.
        """
        c = self.centroid
        if radius is None:
            radius = 1.25 * np.max(np.linalg.norm(self.wells - c, axis=1))
        s = np.linspace(-radius, radius, n)
        X, Y = np.meshgrid(s, s)
        pts = np.stack([X + c[0], Y + c[1]], axis=-1)
        ev = np.linalg.eigvalsh(self.hess(pts))
        return float(np.max(np.abs(ev)))

    def with_params(self, **kw):
        params = dict(self.params)
        params.update(kw)
        return _build(self.wells, self.family, params)


# construction ----------------------------------------------------------------
def _check_wells(wells):
    wells = np.asarray(wells, dtype=float).reshape(3, 2)
    if not np.all(np.isfinite(wells)):
        raise InvalidWellsError("well coordinates must be finite")
    for i, j in ((0, 1), (0, 2), (1, 2)):
        if np.linalg.norm(wells[i] - wells[j]) < 1e-12:
            raise InvalidWellsError(f"wells p{i + 1} and p{j + 1} coincide")
    return wells


def _build(wells, family, params):
    if family not in FAMILIES:
        raise ValidationError(f"unknown potential family {family!r}")
    full = dict(_DEFAULT_PARAMS)
    full.update({k: float(v) for k, v in params.items()})
    for key in ("scale", "a1", "a2", "a3", "bump_width"):
        if not full[key] > 0:
            raise ValidationError(f"potential parameter {key} must be positive")
    if full["quartic"] < 0 or full["eps"] < 0:
        raise ValidationError("quartic and eps must be nonnegative")
    wells = _check_wells(wells)
    wells.setflags(write=False)
    pot = Potential(wells, family, full)
    beta = estimate_convexity_radius(pot)
    floor = float(min(np.linalg.eigvalsh(pot.hess(wells)).min(axis=-1)))
    return Potential(wells, family, full, beta, floor)


def make_product_well(p1, p2, p3, scale=1.0):
    """Product-of-squared-distances well ``scale * prod |u - p_l|^2``."""
    if not scale > 0:
        raise ValidationError("scale must be positive")
    return _build([p1, p2, p3], "product", {"scale": scale})


def make_perturbed_well(p1, p2, p3, scale=1.0, eps=0.0, coeffs=(1.0, 1.0, 1.0),
                        quartic=0.0, bump_center=(0.0, 0.0), bump_width=1.0):
    """Perturbed family with per-factor quadratic coefficients and a bump."""
    params = {
        "scale": scale,
        "eps": eps,
        "a1": coeffs[0],
        "a2": coeffs[1],
        "a3": coeffs[2],
        "quartic": quartic,
        "bump_x": bump_center[0],
        "bump_y": bump_center[1],
        "bump_width": bump_width,
    }
    return _build([p1, p2, p3], "perturbed", params)


def symmetric_well(scale=1.0):
    """Unit wells at the cube roots of unity."""
    return make_product_well(*SYMMETRIC_WELLS, scale=scale)


def eval_W(pot, u):
    return pot.W(u)


def grad_W(pot, u):
    return pot.grad(u)


def hess_W(pot, u):
    return pot.hess(u)


# validation ------------------------------------------------------------------
def estimate_convexity_radius(pot, n_rays=32, n_scan=200, r_max=None):
    """Radius of Hessian positive semidefiniteness about the wells.

    Along each of ``n_rays`` directions from each well, the first radius
    where the smallest Hessian eigenvalue turns negative is located by a
    coarse scan followed by bisection. The minimum over all rays is
    returned, so the estimate is conservative.
    """
    if r_max is None:
        r_max = 0.5 * pot.min_well_distance()
    ang = 2.0 * np.pi * np.arange(n_rays) / n_rays
    dirs = np.stack([np.cos(ang), np.sin(ang)], axis=-1)
    r = np.linspace(0.0, r_max, n_scan + 1)[1:]
    best = r_max

    def min_eig(pts):
        return np.linalg.eigvalsh(pot.hess(pts))[..., 0]

    for p in pot.wells:
        pts = p + r[:, None, None] * dirs[None, :, :]  # (scan, rays, 2)
        neg = min_eig(pts) < 0
        for k in range(n_rays):
            idx = np.flatnonzero(neg[:, k])
            if idx.size == 0:
                continue
            hi = r[idx[0]]
            lo = r[idx[0] - 1] if idx[0] > 0 else 0.0
            for _ in range(50):
                mid = 0.5 * (lo + hi)
                if min_eig(p + mid * dirs[k]) < 0:
                    hi = mid
                else:
                    lo = mid
            best = min(best, lo)
    return float(best)


@dataclass
class ValidationReport:
    hessian_floor: float
    hessian_ok: bool
    radial_M: float
    radial_ok: bool
    convexity_radius: float
    convexity_ok: bool
    positivity_ok: bool
    triangle: str = "unchecked"
    costs: tuple = None
    flags: list = field(default_factory=list)

    @property
    def ok(self):
        return not self.flags


def validate(pot, costs=None, check_triangle=False, hessian_threshold=1e-3,
             triangle_margin=0.02, n_samples=201):
    """Check the standing hypotheses on a potential; never raises.

    Parameters
    ----------
    costs : tuple of float, optional
        Precomputed (c12, c13, c23). When absent and ``check_triangle`` is
        set, they are computed with :func:`triplewell.geodesics.pairwise_costs`.
    triangle_margin : float
        Relative slack below which the triangle inequality is reported as
        ``marginal`` rather than ``strict``.
    """
    flags = []
    floor = pot.hessian_floor
    hess_ok = bool(floor >= hessian_threshold)
    if not hess_ok:
        flags.append(f"hessian floor {floor:.3e} below {hessian_threshold:g}")

    # radial monotonicity p . grad W(p) >= 0 beyond some M
    c = pot.centroid
    spread = np.max(np.linalg.norm(pot.wells, axis=1))
    radii = np.linspace(0.0, 6.0 * max(spread, 1.0), 241)[1:]
    ang = 2.0 * np.pi * np.arange(180) / 180
    dirs = np.stack([np.cos(ang), np.sin(ang)], axis=-1)
    pts = radii[:, None, None] * dirs[None]
    radial = np.einsum("...i,...i->...", pts, pot.grad(pts))
    bad = np.flatnonzero(np.any(radial < 0, axis=1))
    if bad.size == 0:
        M = float(radii[0])
    elif bad[-1] + 1 < radii.size:
        M = float(radii[bad[-1] + 1])
    else:
        M = np.inf
    radial_ok = bool(np.isfinite(M))
    if not radial_ok:
        flags.append("radial monotonicity fails on the whole sampled range")

    # convexity about the wells, sampled inside the estimated radius
    beta = pot.convexity_radius
    conv_ok = bool(beta > 0)
    if conv_ok:
        rr = np.linspace(0, beta, 9)[1:]
        for p in pot.wells:
            q = p + rr[:, None, None] * dirs[None, ::6]
            if np.linalg.eigvalsh(pot.hess(q))[..., 0].min() < -1e-10:
                conv_ok = False
    if not conv_ok:
        flags.append("no convexity ball around the wells")

    # positivity away from the wells on a sampled grid
    half = 2.0 * max(spread, 1.0)
    s = np.linspace(-half, half, n_samples)
    X, Y = np.meshgrid(s + c[0], s + c[1])
    grid = np.stack([X, Y], axis=-1)
    vals = pot.W(grid)
    dmin = np.min(
        np.linalg.norm(grid[..., None, :] - pot.wells, axis=-1), axis=-1
    )
    pos_ok = bool(np.all(vals[dmin > 1e-9] > 0) and np.all(vals >= 0))
    if not pos_ok:
        flags.append("W vanishes or is negative away from the wells")

    report = ValidationReport(floor, hess_ok, M, radial_ok, beta, conv_ok, pos_ok,
                              flags=flags)
    if costs is None and check_triangle:
        from .geodesics import pairwise_costs

        costs = pairwise_costs(pot).costs
    if costs is not None:
        report.costs = tuple(float(x) for x in costs)
        report.triangle = triangle_status(costs, triangle_margin)
        if report.triangle != "strict":
            flags.append(f"triangle inequality {report.triangle}")
    return report


def triangle_status(costs, margin=0.02):
    """Classify (c12, c13, c23) as ``strict``, ``marginal`` or ``violated``."""
    c12, c13, c23 = (float(x) for x in costs)
    slack = min(c12 + c13 - c23, c12 + c23 - c13, c13 + c23 - c12)
    rel = slack / max(c12, c13, c23)
    if rel > margin:
        return "strict"
    if rel >= -margin:
        return "marginal"
    return "violated"


# serialization -----------------------------------------------------------------
def to_config(pot):
    """Flat key/value mapping for the ``[potential]`` config section."""
    out = {"family": pot.family}
    for k, p in enumerate(pot.wells, start=1):
        out[f"p{k}"] = f"{float(p[0])!r}, {float(p[1])!r}"
    keys = ["scale"] if pot.family == "product" else list(_DEFAULT_PARAMS)
    for key in keys:
        out[key] = repr(float(pot.params[key]))
    return out


def from_config(section):
    """Inverse of :func:`to_config`; accepts any string mapping."""
    try:
        family = section.get("family", "product").strip()
        wells = []
        for k in (1, 2, 3):
            raw = section.get(f"p{k}")
            if raw is None:
                wells.append(SYMMETRIC_WELLS[k - 1])
                continue
            parts = [float(x) for x in raw.replace(";", ",").split(",")]
            if len(parts) != 2:
                raise ValidationError(f"well p{k} needs two coordinates")
            wells.append(parts)
        params = {}
        for key in _DEFAULT_PARAMS:
            if key in section:
                params[key] = float(section[key])
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ValidationError):
            raise
        raise ValidationError(f"bad potential section: {exc}") from exc
    if family == "product":
        extra = set(params) - {"scale"}
        if extra:
            raise ValidationError(
                f"product family takes only 'scale', got {sorted(extra)}"
            )
    return _build(wells, family, params)
