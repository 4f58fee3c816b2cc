"""Surface tensions, triple-junction angles, sector maps and the sharp-interface
energy of a labeled partition.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateTensionError, LabelingError, TriangleViolationError

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class SurfaceTensions:
    t1: float
    t2: float
    t3: float
    c12: float
    c13: float
    c23: float

    @property
    def t(self):
        return np.array([self.t1, self.t2, self.t3])

    @property
    def costs(self):
        return (self.c12, self.c13, self.c23)

    def pair_cost(self, i, j):
        """Interface cost between labels ``i`` and ``j`` (0-based)."""
        if i == j:
            return 0.0
        return self.t[i] + self.t[j]

    def cost_matrix(self):
        t = self.t
        C = t[:, None] + t[None, :]
        np.fill_diagonal(C, 0.0)
        return C


def surface_tensions(c12, c13, c23):
    """Solve t_i + t_j = c_ij for the three per-phase tensions."""
    c12, c13, c23 = float(c12), float(c13), float(c23)
    if min(c12, c13, c23) <= 0:
        raise DegenerateTensionError("interface costs must be positive")
    t1 = 0.5 * (c12 + c13 - c23)
    t2 = 0.5 * (c12 + c23 - c13)
    t3 = 0.5 * (c13 + c23 - c12)
    if min(t1, t2, t3) <= 0:
        raise DegenerateTensionError(
            f"nonpositive surface tension ({t1:g}, {t2:g}, {t3:g}); "
            "the strict triangle inequality fails"
        )
    return SurfaceTensions(t1, t2, t3, c12, c13, c23)


def tensions_from_t(t1, t2, t3):
    """SurfaceTensions from per-phase values, costs c_ij = t_i + t_j."""
    if min(t1, t2, t3) <= 0:
        raise DegenerateTensionError("surface tensions must be positive")
    return SurfaceTensions(float(t1), float(t2), float(t3),
                           float(t1 + t2), float(t1 + t3), float(t2 + t3))


def _sine_residual(a, c):
    c12, c13, c23 = c
    a1, a2 = a
    a3 = TWO_PI - a1 - a2
    return np.array([np.sin(a1) * c13 - np.sin(a2) * c23,
                     np.sin(a2) * c12 - np.sin(a3) * c13])


def junction_angles(c12, c13, c23, polish=True):
    """Opening angles (a1, a2, a3) of the minimal triple junction.

    a_l = pi - theta_l, where theta_l are the angles of the triangle with
    sides (c23, c13, c12) opposite (theta1, theta2, theta3). A few Newton
    steps on the sine system sin a1 / c23 = sin a2 / c13 = sin a3 / c12
    polish the closed form.
    """
    c = np.array([c12, c13, c23], float)
    if np.any(c <= 0):
        raise TriangleViolationError("interface costs must be positive")
    a, b, s = c23, c13, c12  # sides opposite theta1, theta2, theta3
    if not (a < b + s and b < a + s and s < a + b):
        raise TriangleViolationError("costs violate the strict triangle inequality")
    cos1 = np.clip((b * b + s * s - a * a) / (2 * b * s), -1, 1)
    cos2 = np.clip((a * a + s * s - b * b) / (2 * a * s), -1, 1)
    th1, th2 = np.arccos(cos1), np.arccos(cos2)
    th3 = np.pi - th1 - th2
    x = np.array([np.pi - th1, np.pi - th2])
    if polish:
        for _ in range(3):
            r = _sine_residual(x, c)
            if np.max(np.abs(r)) < 1e-15 * max(c):
                break
            a1, a2 = x
            a3 = TWO_PI - a1 - a2
            J = np.array([[np.cos(a1) * c13, -np.cos(a2) * c23],
                          [np.cos(a3) * c13, np.cos(a2) * c12 + np.cos(a3) * c13]])
            try:
                dx = np.linalg.solve(J, -r)
            except np.linalg.LinAlgError:
                break
            x = x + dx
    a1, a2 = x
    return np.array([a1, a2, TWO_PI - a1 - a2])


def sine_law_residual(angles, costs):
    """Spread of sin(a_l) / (opposite cost) over the three phases."""
    c12, c13, c23 = costs
    r = np.sin(angles) / np.array([c23, c13, c12])
    return float(np.max(r) - np.min(r))


# --------------------------------------------------------------------------
# sector maps
# --------------------------------------------------------------------------
@dataclass(frozen=True)
class JunctionMap:
    """Three sectors about ``center``.

    Sector k starts at ray angle ``ray_angles[k]`` and opens
    counterclockwise by ``angles[labels[k]]``; it carries well ``labels[k]``.
    """

    center: tuple
    ray_angles: tuple
    labels: tuple
    angles: tuple

    def label_at(self, x):
        x = np.asarray(x, float)
        phi = np.mod(np.arctan2(x[..., 1] - self.center[1], x[..., 0] - self.center[0])
                     - self.ray_angles[0], TWO_PI)
        # points within rounding of a ray belong to the sector starting there
        phi = np.where(phi > TWO_PI - 1e-12, 0.0, phi)
        ends = np.cumsum([self.angles[lab] for lab in self.labels])
        k = np.searchsorted(ends[:2], phi, side="right")
        return np.asarray(self.labels)[k]

    def evaluate(self, x, wells):
        return np.asarray(wells)[self.label_at(x)]

    def to_text(self):
        lines = ["[junction_map]",
                 f"center = {self.center[0]!r}, {self.center[1]!r}",
                 "ray_angles = " + ", ".join(repr(float(a)) for a in self.ray_angles),
                 "assignment = " + ", ".join(str(int(k) + 1) for k in self.labels),
                 "opening_angles = " + ", ".join(repr(float(a)) for a in self.angles)]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        vals = {}
        for line in text.splitlines():
            if "=" in line:
                k, v = line.split("=", 1)
                vals[k.strip()] = [float(x) for x in v.split(",")]
        center = tuple(vals["center"])
        labels = tuple(int(x) - 1 for x in vals["assignment"])
        return cls(center, tuple(vals["ray_angles"]), labels, tuple(vals["opening_angles"]))


def make_junction_map(angles, rotation=0.0, assignment=(0, 1, 2), center=(0.0, 0.0)):
    """Sector map with the given global rotation and sector-to-well assignment."""
    angles = tuple(float(a) for a in angles)
    assignment = tuple(int(k) for k in assignment)
    if sorted(assignment) != [0, 1, 2]:
        raise LabelingError("assignment must be a permutation of (0, 1, 2)")
    rays = [float(rotation)]
    for lab in assignment[:2]:
        rays.append(rays[-1] + angles[lab])
    return JunctionMap(tuple(float(c) for c in center), tuple(rays), assignment, angles)


# --------------------------------------------------------------------------
# sharp-interface energy
# --------------------------------------------------------------------------
def perimeter_energy(network, tensions):
    """Weighted perimeter  sum_l t_l * length(boundary of S_l inside the disc).

    Interface segments between labels i and j count twice (once per side),
    so each contributes (t_i + t_j) * length = c_ij * length. Arcs bounding a
    colored phase against an uncolored region contribute t_l * arc length.
    """
    t = tensions.t
    total = 0.0
    for seg in network.segments:
        i, j = seg.labels
        if i == j or not (0 <= i <= 2 and 0 <= j <= 2):
            raise LabelingError(f"segment labels {seg.labels} do not separate two phases")
        total += (t[i] + t[j]) * seg.length
    for arc in getattr(network, "arcs", ()):
        if not 0 <= arc.label <= 2:
            raise LabelingError(f"arc label {arc.label} is not a phase")
        total += t[arc.label] * arc.length
    return float(total)
