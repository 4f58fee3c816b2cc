"""Weighted-perimeter partitions of the unit disc with prescribed boundary labels.

Problem 1 asks for a partition of the disc into three phases whose
boundary trace is given, minimizing  sum_l t_l * H^1(boundary of S_l inside B).
Minimizers are networks of straight segments meeting at sine-law triple
junctions. Problem 2 leaves an uncovered (gray) region of area delta; near
each triple junction the optimal gray region is a curvilinear triangle
bounded by circular arcs with t_1 k_1 = t_2 k_2 = t_3 k_3.

Supported boundary data have at most four discontinuities. Candidate
topologies (one chord, two chords, a star with one junction, an H with two
junctions) are enumerated, junction positions optimized with Nelder-Mead,
and the cheapest admissible network is returned.
"""

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage, optimize

from .errors import (
    DeltaTooLargeError,
    LabelingError,
    UnsupportedTopologyError,
    ValidationError,
)
from .junction import junction_angles
from .rng import Lcg64

TWO_PI = 2.0 * np.pi
MAX_SOLVED_K = 4


# --------------------------------------------------------------------------
# boundary data
# --------------------------------------------------------------------------
@dataclass(frozen=True)
class BoundaryData:
    """Piecewise-constant labels on the unit circle.

    ``arcs`` holds (start, end, label) triples in counterclockwise order with
    ``end`` of one arc equal to ``start`` of the next modulo 2 pi.
    """

    arcs: tuple
    max_k: int = 8

    def __post_init__(self):
        arcs = [(float(a), float(b), int(lab)) for a, b, lab in self.arcs]
        if not arcs:
            raise ValidationError("boundary data needs at least one arc")
        total = sum(b - a for a, b, _ in arcs)
        if abs(total - TWO_PI) > 1e-9:
            raise ValidationError(f"arcs cover {total:.12g} radians, not 2 pi")
        for a, b, lab in arcs:
            if not b > a:
                raise ValidationError("each arc needs end > start")
            if lab not in (0, 1, 2):
                raise ValidationError(f"arc label {lab} is not a well index")
        for k in range(len(arcs)):
            nxt = arcs[(k + 1) % len(arcs)]
            gap = np.mod(nxt[0] - arcs[k][1] + np.pi, TWO_PI) - np.pi
            if abs(gap) > 1e-9:
                raise ValidationError("arcs must be contiguous")
            if len(arcs) > 1 and nxt[2] == arcs[k][2]:
                raise ValidationError("adjacent arcs must carry different labels")
        if self.k > self.max_k:
            raise UnsupportedTopologyError(
                f"{self.k} discontinuities exceed the configured maximum {self.max_k}"
            )
        object.__setattr__(self, "arcs", tuple(arcs))

    @property
    def k(self):
        return 0 if len(self.arcs) == 1 else len(self.arcs)

    @property
    def labels(self):
        return [lab for _, _, lab in self.arcs]

    @property
    def angles(self):
        """Discontinuity angles; angle m separates arc m-1 from arc m."""
        return np.array([a for a, _, _ in self.arcs]) if self.k else np.array([])

    def points(self, radius=1.0):
        a = self.angles
        return radius * np.stack([np.cos(a), np.sin(a)], axis=-1)

    def label_at(self, theta):
        theta = np.asarray(theta, float)
        if self.k == 0:
            return np.full(theta.shape, self.arcs[0][2])
        start = self.arcs[0][0]
        rel = np.mod(theta - start, TWO_PI)
        ends = np.cumsum([b - a for a, b, _ in self.arcs])
        idx = np.minimum(np.searchsorted(ends, rel, side="right"), len(self.arcs) - 1)
        return np.asarray(self.labels)[idx]

    def rotated(self, angle):
        return BoundaryData(tuple((a + angle, b + angle, lab) for a, b, lab in self.arcs),
                            self.max_k)

    def to_text(self):
        return "; ".join(f"{a!r} {b!r} {lab + 1}" for a, b, lab in self.arcs)

    @classmethod
    def from_text(cls, text, max_k=8):
        arcs = []
        for chunk in text.split(";"):
            if chunk.strip():
                a, b, lab = chunk.split()
                arcs.append((float(a), float(b), int(lab) - 1))
        return cls(tuple(arcs), max_k)


def boundary_from_angles(angles, labels, max_k=8):
    """Arcs [angles[m], angles[m+1]) carrying ``labels[m]``."""
    angles = np.asarray(angles, float)
    if len(angles) != len(labels):
        raise ValidationError("need one label per discontinuity angle")
    if len(angles) == 1:
        raise ValidationError("a single discontinuity is not admissible")
    if len(angles) == 0:
        raise ValidationError("use constant_boundary for single-label data")
    order = np.argsort(np.mod(angles, TWO_PI))
    a = np.mod(angles, TWO_PI)[order]
    labs = [labels[k] for k in order]
    arcs = [(a[m], a[m + 1] if m + 1 < len(a) else a[0] + TWO_PI, labs[m])
            for m in range(len(a))]
    return BoundaryData(tuple(arcs), max_k)


def constant_boundary(label):
    return BoundaryData(((0.0, TWO_PI, int(label)),))


def three_arcs(first=np.pi / 2, labels=(0, 1, 2)):
    """Three equal arcs with discontinuities at first, first + 120, first + 240 degrees."""
    return boundary_from_angles(first + TWO_PI * np.arange(3) / 3, list(labels))


# --------------------------------------------------------------------------
# networks
# --------------------------------------------------------------------------
@dataclass
class Segment:
    a: np.ndarray
    b: np.ndarray
    labels: tuple = (-1, -1)

    @property
    def length(self):
        return float(np.linalg.norm(np.asarray(self.b) - np.asarray(self.a)))


@dataclass
class Arc:
    """Circular arc from angle ``start`` sweeping ``sweep`` (signed) about ``center``."""

    center: np.ndarray
    radius: float
    start: float
    sweep: float
    label: int
    junction: int = -1

    @property
    def length(self):
        return abs(self.sweep) * self.radius

    @property
    def curvature(self):
        return 1.0 / self.radius

    def points(self, m=32):
        s = self.start + self.sweep * np.linspace(0.0, 1.0, m)
        return self.center + self.radius * np.stack([np.cos(s), np.sin(s)], axis=-1)


@dataclass
class PartitionNetwork:
    junctions: list
    segments: list
    boundary_points: np.ndarray
    regions: list = field(default_factory=list)
    cost: float = 0.0
    topology: str = ""
    angle_defect: float = 0.0
    boundary_junctions: list = field(default_factory=list)

    def is_convex(self, tol=1e-9):
        return all(_polygon_convex(poly, tol) for _, poly in self.regions)


@dataclass
class WettedNetwork(PartitionNetwork):
    arcs: list = field(default_factory=list)
    cusps: list = field(default_factory=list)
    kappa: np.ndarray = None
    gray_area: float = 0.0
    delta: float = 0.0
    m0: float = 0.0
    tangency_defect: float = 0.0
    gray_regions: list = field(default_factory=list)
    kappas: list = field(default_factory=list)

    def colored_regions(self, m=32):
        """Phase polygons with each junction corner replaced by its wetting arc."""
        out = []
        for lab, poly in self.regions:
            pts = []
            for v in poly:
                arc = None
                for q, J in enumerate(self.junctions):
                    if np.linalg.norm(v - J) < 1e-12:
                        arc = next((a for a in self.arcs if a.junction == q and a.label == lab),
                                   None)
                if arc is None:
                    pts.append(v)
                    continue
                ap = arc.points(m)
                if pts and np.linalg.norm(ap[-1] - pts[-1]) < np.linalg.norm(ap[0] - pts[-1]):
                    ap = ap[::-1]
                pts.extend(ap)
            out.append((lab, np.array(pts)))
        return out

    def is_convex(self, tol=1e-9):
        return all(_polygon_convex(poly, tol) for _, poly in self.colored_regions())


def _polygon_convex(poly, tol=1e-9):
    P = np.asarray(poly, float)
    if len(P) < 4:
        return True
    e = np.roll(P, -1, axis=0) - P
    keep = np.linalg.norm(e, axis=1) > 1e-12
    P = P[keep]
    e = np.roll(P, -1, axis=0) - P
    cross = e[:, 0] * np.roll(e, -1, axis=0)[:, 1] - e[:, 1] * np.roll(e, -1, axis=0)[:, 0]
    scale = np.max(np.linalg.norm(e, axis=1)) ** 2
    return bool(np.all(cross >= -tol * scale) or np.all(cross <= tol * scale))


class _Planar:
    """Planar graph of the disc boundary arcs and interior segments."""

    def __init__(self, bdata, coords, edges):
        self.bdata = bdata
        self.coords = coords  # key -> point
        self.edges = edges  # list of (key_a, key_b)
        self.k = bdata.k
        self.adj = {}
        for e, (u, v) in enumerate(edges):
            self.adj.setdefault(u, []).append((v, e))
            self.adj.setdefault(v, []).append((u, e))

    def _dir(self, u, v):
        d = np.asarray(self.coords[v]) - np.asarray(self.coords[u])
        return np.arctan2(d[1], d[0])

    def faces(self, arc_samples=24):
        """Trace faces starting from each boundary arc; face lies to the left."""
        ang = self.bdata.angles
        labels = self.bdata.labels
        seg_sides = {}
        faces = []
        used_arcs = set()
        for m0 in range(self.k):
            if m0 in used_arcs:
                continue
            poly = []
            face_labels = set()
            m = m0
            guard = 0
            while True:
                guard += 1
                if guard > 100:
                    raise LabelingError("face walk did not close")
                used_arcs.add(m)
                face_labels.add(labels[m])
                a0 = ang[m]
                a1 = ang[(m + 1) % self.k]
                if a1 <= a0:
                    a1 += TWO_PI
                s = np.linspace(a0, a1, arc_samples)
                poly.extend(np.stack([np.cos(s), np.sin(s)], axis=-1)[:-1])
                # leave the arc at boundary point m+1 along the network
                node = ("b", (m + 1) % self.k)
                back = np.arctan2(np.sin(a1), np.cos(a1)) - np.pi / 2.0
                prev = None
                while True:
                    out = [(v, e) for v, e in self.adj.get(node, []) if e != prev]
                    choice = self._turn(node, back, out)
                    if choice is None:
                        # continue along the arc starting at this boundary point
                        m = node[1]
                        break
                    v, e = choice
                    poly.append(np.asarray(self.coords[node], float))
                    seg_sides.setdefault(e, []).append(len(faces))
                    back = self._dir(v, node)
                    prev = e
                    node = v
                if m == m0:
                    break
            faces.append((face_labels, np.array(poly)))
        return faces, seg_sides

    def _turn(self, node, back, out):
        """First outgoing edge clockwise from direction ``back``."""
        cands = []
        for v, e in out:
            d = self._dir(node, v)
            cands.append((np.mod(back - d, TWO_PI), v, e))
        if node[0] == "b":
            theta = self.bdata.angles[node[1]]
            arc_dir = theta + np.pi / 2.0
            cands.append((np.mod(back - arc_dir, TWO_PI), None, None))
        cands = [c for c in cands if c[0] > 1e-12]
        if not cands:
            return None
        best = min(cands, key=lambda c: c[0])
        if best[1] is None:
            return None
        return best[1], best[2]


def _build_network(bdata, tensions, junctions, edges, topology):
    """Label faces and segments, price the network, reject inconsistent ones."""
    pts = bdata.points()
    coords = {("b", m): pts[m] for m in range(bdata.k)}
    for q, J in enumerate(junctions):
        coords[("j", q)] = np.asarray(J, float)
    graph = _Planar(bdata, coords, edges)
    faces, sides = graph.faces()
    regions = []
    seg_labels = {e: [] for e in range(len(edges))}
    for f, (labs, poly) in enumerate(faces):
        if len(labs) != 1:
            return None
        lab = next(iter(labs))
        regions.append((lab, poly))
    for e, hits in sides.items():
        for f in hits:
            seg_labels[e].append(regions[f][0])
    segments = []
    cost = 0.0
    C = tensions.cost_matrix()
    for e, (u, v) in enumerate(edges):
        labs = seg_labels[e]
        if len(labs) != 2 or labs[0] == labs[1]:
            return None
        seg = Segment(coords[u].copy(), coords[v].copy(), tuple(sorted(labs)))
        segments.append(seg)
        cost += C[labs[0], labs[1]] * seg.length
    net = PartitionNetwork([np.asarray(J, float) for J in junctions], segments,
                           pts, regions, float(cost), topology)
    return net


def move_junctions(net, bdata, tensions, junctions):
    """Same network graph with its junctions at new positions, relabeled and repriced.

    Returns None when the moved graph is no longer a consistent partition.
    """
    pts = bdata.points()
    keys = [(("b", m), pts[m]) for m in range(bdata.k)]
    keys += [(("j", q), np.asarray(J, float)) for q, J in enumerate(net.junctions)]

    def key_of(x):
        for key, y in keys:
            if np.linalg.norm(np.asarray(x) - y) < 1e-12:
                return key
        raise ValidationError("segment endpoint is neither a junction nor a boundary point")

    edges = [(key_of(seg.a), key_of(seg.b)) for seg in net.segments]
    return _build_network(bdata, tensions, list(junctions), edges, net.topology)


def _junction_defect(net, tensions):
    """Largest deviation of the sector angles at interior junctions from the sine law."""
    alpha = junction_angles(*tensions.costs)
    worst = 0.0
    for J in net.junctions:
        inc = []
        for seg in net.segments:
            for end, other in ((seg.a, seg.b), (seg.b, seg.a)):
                if np.linalg.norm(end - J) < 1e-9:
                    d = other - J
                    inc.append((np.arctan2(d[1], d[0]), seg.labels))
        if len(inc) != 3:
            continue
        inc.sort()
        for k in range(3):
            a0, l0 = inc[k]
            a1, l1 = inc[(k + 1) % 3]
            opening = np.mod(a1 - a0, TWO_PI)
            common = set(l0) & set(l1)
            if len(common) != 1:
                return np.inf
            lab = common.pop()
            worst = max(worst, abs(opening - alpha[lab]))
    return float(worst)


def _fermat_cost(points, weights):
    def f(x):
        return float(np.sum(weights * np.linalg.norm(points - x, axis=1)))
    return f


def _newton_polish(points, weights, x, steps=8):
    """Newton steps on sum_m w_m |x - p_m| from a point near the optimum."""
    for _ in range(steps):
        d = x - points
        r = np.linalg.norm(d, axis=1)
        if np.min(r) < 1e-10:
            return x
        u = d / r[:, None]
        g = (weights[:, None] * u).sum(axis=0)
        H = sum(w / rr * (np.eye(2) - np.outer(uu, uu)) for w, rr, uu in zip(weights, r, u))
        try:
            step = np.linalg.solve(H, -g)
        except np.linalg.LinAlgError:
            return x
        x = x + step
        if np.linalg.norm(step) < 1e-15:
            break
    return x


def _nelder_mead(fun, starts, xatol=1e-12, fatol=1e-15):
    best = None
    for x0 in starts:
        res = optimize.minimize(fun, x0, method="Nelder-Mead",
                                options={"xatol": xatol, "fatol": fatol,
                                         "maxiter": 20000, "maxfev": 40000})
        # restart once from the optimum to shake off a collapsed simplex
        res = optimize.minimize(fun, res.x, method="Nelder-Mead",
                                options={"xatol": xatol, "fatol": fatol,
                                         "maxiter": 20000, "maxfev": 40000})
        if best is None or res.fun < best.fun:
            best = res
    return best


def _star_candidates(bdata, tensions, rng, restarts):
    pts = bdata.points()
    labels = bdata.labels
    C = tensions.cost_matrix()
    w = np.array([C[labels[m - 1], labels[m]] for m in range(3)])
    fun = _fermat_cost(pts, w)
    starts = [pts.mean(axis=0)] + [0.5 * rng.uniform(-1, 1, 2) for _ in range(restarts)]
    res = _nelder_mead(fun, starts)
    J = res.x
    if np.min(np.linalg.norm(pts - J, axis=1)) > 1e-6:
        J = _newton_polish(pts, w, J)
    near = np.linalg.norm(pts - J, axis=1)
    m = int(np.argmin(near))
    if near[m] < 1e-7:
        edges = [(("b", m), ("b", (m + 1) % 3)), (("b", m), ("b", (m + 2) % 3))]
        net = _build_network(bdata, tensions, [], edges, "boundary-junction")
        if net is not None:
            net.boundary_junctions = [m]
        return [net]
    edges = [(("j", 0), ("b", q)) for q in range(3)]
    return [_build_network(bdata, tensions, [J], edges, "star")]


def _h_candidates(bdata, tensions, rng, restarts):
    pts = bdata.points()
    labels = bdata.labels
    C = tensions.cost_matrix()
    out = []
    for a in (0, 1):
        quad = [a, a + 1, (a + 2) % 4, (a + 3) % 4]
        ends = [("b", q) for q in quad]
        edges = [(("j", 0), ends[0]), (("j", 0), ends[1]), (("j", 0), ("j", 1)),
                 (("j", 1), ends[2]), (("j", 1), ends[3])]
        # face labels for pricing inside the optimizer: each segment's cost is
        # fixed by the topology, so read it off a trial network first
        trial = _build_network(bdata, tensions,
                               [0.5 * (pts[quad[0]] + pts[quad[1]]) * 0.5,
                                0.5 * (pts[quad[2]] + pts[quad[3]]) * 0.5], edges, "H")
        if trial is None:
            continue
        wts = np.array([C[s.labels[0], s.labels[1]] for s in trial.segments])

        def fun(x, quad=quad, wts=wts):
            J0, J1 = x[:2], x[2:]
            L = [np.linalg.norm(J0 - pts[quad[0]]), np.linalg.norm(J0 - pts[quad[1]]),
                 np.linalg.norm(J0 - J1), np.linalg.norm(J1 - pts[quad[2]]),
                 np.linalg.norm(J1 - pts[quad[3]])]
            return float(np.dot(wts, L))

        x0 = np.concatenate([trial.junctions[0], trial.junctions[1]])
        starts = [x0] + [np.concatenate([x0[:2] + 0.2 * rng.uniform(-1, 1, 2),
                                         x0[2:] + 0.2 * rng.uniform(-1, 1, 2)])
                         for _ in range(restarts)]
        res = _nelder_mead(fun, starts)
        J0, J1 = res.x[:2], res.x[2:]
        if np.linalg.norm(J0 - J1) < 1e-7:
            continue  # collapsed to a four-fold point: dominated by the chords
        for _ in range(200):
            # alternate exact weighted Fermat points with the other junction frozen
            J0n = _newton_polish(np.array([pts[quad[0]], pts[quad[1]], J1]), wts[:3], J0)
            J1n = _newton_polish(np.array([J0n, pts[quad[2]], pts[quad[3]]]), wts[2:], J1)
            moved = np.linalg.norm(J0n - J0) + np.linalg.norm(J1n - J1)
            J0, J1 = J0n, J1n
            if moved < 1e-15:
                break
        net = _build_network(bdata, tensions, [J0, J1], edges, "H")
        if net is not None:
            out.append(net)
    return out


def solve_problem1(bdata, tensions, seed=0, restarts=4):
    """Minimal weighted-perimeter partition of the unit disc for boundary data.

    Parameters
    ----------
    bdata : BoundaryData
        Labels on the circle with at most four discontinuities.
    tensions : SurfaceTensions
    seed : int
        Seeds the Nelder-Mead restart points.

    Returns
    -------
    PartitionNetwork
        Cheapest admissible network; ``angle_defect`` records the largest
        deviation of junction sector angles from the sine law.
    """
    k = bdata.k
    if k > MAX_SOLVED_K:
        raise UnsupportedTopologyError(f"k = {k} discontinuities; only k <= 4 is solved")
    rng = Lcg64(seed)
    if k == 0:
        lab = bdata.labels[0]
        s = np.linspace(0, TWO_PI, 97)[:-1]
        disc = np.stack([np.cos(s), np.sin(s)], axis=-1)
        return PartitionNetwork([], [], np.zeros((0, 2)), [(lab, disc)], 0.0, "constant")
    cands = []
    if k == 2:
        cands.append(_build_network(bdata, tensions, [], [(("b", 0), ("b", 1))], "chord"))
    elif k == 3:
        cands.extend(_star_candidates(bdata, tensions, rng, restarts))
    elif k == 4:
        for pairing in (((0, 1), (2, 3)), ((1, 2), (3, 0))):
            edges = [(("b", a), ("b", b)) for a, b in pairing]
            cands.append(_build_network(bdata, tensions, [], edges, "two-chords"))
        cands.extend(_h_candidates(bdata, tensions, rng, restarts))
    cands = [c for c in cands if c is not None]
    if not cands:
        raise LabelingError("no admissible network for these boundary labels")
    best = min(cands, key=lambda c: c.cost)
    best.angle_defect = _junction_defect(best, tensions)
    return best


# --------------------------------------------------------------------------
# pixel oracle
# --------------------------------------------------------------------------
def crofton_stencil(connectivity=16):
    """Edge offsets and Cauchy-Crofton angular weights for a square lattice.

    Returns a list of (offset, dphi) where dphi is the angular measure of
    line directions attributed to the offset; the length weight of one cut
    edge is h^2 * dphi / (2 |offset| h).
    """
    reach = {8: 1, 16: 2}[connectivity]
    offs = []
    for a in range(0, reach + 1):
        for b in range(-reach, reach + 1):
            if (a, b) == (0, 0) or (a == 0 and b < 0):
                continue
            if np.gcd(a, b) == 1:
                offs.append((a, b))
    phi = np.array([np.arctan2(b, a) for a, b in offs])
    phi = np.mod(phi, np.pi)
    order = np.argsort(phi)
    ps = phi[order]
    gaps = np.diff(np.concatenate([ps, [ps[0] + np.pi]]))
    dphi_sorted = 0.5 * (gaps + np.roll(gaps, 1))
    dphi = np.empty_like(dphi_sorted)
    dphi[order] = dphi_sorted
    return [(offs[k], float(dphi[k])) for k in range(len(offs))]


def _pixel_edges(n, connectivity):
    h = 2.0 / n
    out = []
    for (di, dj), dphi in crofton_stencil(connectivity):
        length = h * np.hypot(di, dj)
        w = h * h * dphi / (2.0 * length)
        out.append(((di, dj), w))
    return out


def _shifted(arr, di, dj, fill):
    """Value at (i + di, j + dj) for each (i, j), ``fill`` off the grid."""
    n0, n1 = arr.shape
    out = np.full_like(arr, fill)
    src_i = slice(max(0, di), n0 + min(0, di))
    src_j = slice(max(0, dj), n1 + min(0, dj))
    dst_i = slice(max(0, -di), n0 + min(0, -di))
    dst_j = slice(max(0, -dj), n1 + min(0, -dj))
    out[dst_i, dst_j] = arr[src_i, src_j]
    return out


def labeling_energy(labels, free, C, edges):
    """Cut cost of a pixel labeling; only edges touching a free pixel count."""
    total = 0.0
    for (di, dj), w in edges:
        nb = _shifted(labels, di, dj, -1)
        nb_free = _shifted(free, di, dj, False)
        valid = (nb >= 0) & (free | nb_free)
        a = labels[valid]
        b = nb[valid]
        total += w * np.sum(C[a, b])
    return float(total)


def _expansion_sweeps(labels, free, movable, C, edges, max_cycles):
    """Alpha-expansion restricted to ``movable`` pixels; returns (labels, energy)."""
    import maxflow

    n0, n1 = labels.shape
    idx = -np.ones(labels.shape, dtype=np.int64)
    nodes = np.flatnonzero(movable)
    idx.flat[nodes] = np.arange(nodes.size)
    E = labeling_energy(labels, free, C, edges)
    if nodes.size == 0:
        return labels, E
    for _ in range(max_cycles):
        improved = False
        for alpha in range(3):
            g = maxflow.Graph[float]()
            ids = g.add_nodes(nodes.size)
            unary = np.zeros(labels.shape)
            for (di, dj), w in edges:
                nb = _shifted(labels, di, dj, -1)
                nb_mov = _shifted(movable, di, dj, False)
                on = nb >= 0
                nbl = np.where(on, nb, 0)
                A = w * C[labels, nbl]
                B = w * C[labels, alpha]
                Cc = w * C[alpha, nbl]
                both = on & movable & nb_mov
                unary += np.where(both, Cc - A, 0.0)
                unary += _shifted(np.where(both, -Cc, 0.0), -di, -dj, 0.0)
                fx = on & movable & ~nb_mov
                unary += np.where(fx, Cc - A, 0.0)
                fx2 = on & ~movable & nb_mov
                unary += _shifted(np.where(fx2, B - A, 0.0), -di, -dj, 0.0)
                pi, pj = np.nonzero(both)
                if pi.size:
                    pair = (B + Cc - A)[pi, pj]
                    g.add_edges(idx[pi, pj], idx[pi + di, pj + dj], np.maximum(pair, 0.0),
                                np.zeros(pi.size))
            u = unary.flat[nodes]
            g.add_grid_tedges(ids, np.maximum(u, 0.0), np.maximum(-u, 0.0))
            g.maxflow()
            seg = g.get_grid_segments(ids)
            switch = np.zeros(labels.shape, bool)
            switch.flat[nodes] = seg
            if not np.any(switch & (labels != alpha)):
                continue
            trial = np.where(switch, alpha, labels)
            Et = labeling_energy(trial, free, C, edges)
            if Et < E - 1e-12 * max(E, 1.0):
                labels, E, improved = trial, Et, True
        if not improved:
            break
    return labels, E


def _interface_mask(labels):
    edge = np.zeros(labels.shape, bool)
    dx = labels[:-1, :] != labels[1:, :]
    dy = labels[:, :-1] != labels[:, 1:]
    edge[:-1, :] |= dx
    edge[1:, :] |= dx
    edge[:, :-1] |= dy
    edge[:, 1:] |= dy
    return edge


ORACLE_PAD = 3  # fixed pixels beyond the disc; must exceed the stencil reach


def _pixel_disc(bdata, n, pad=ORACLE_PAD):
    """Free mask and radial labels on an n x n pixel grid over [-1, 1]^2 plus padding."""
    h = 2.0 / n
    xs = -1.0 + (np.arange(-pad, n + pad) + 0.5) * h
    X, Y = np.meshgrid(xs, xs, indexing="ij")
    free = X * X + Y * Y < 1.0
    return free, bdata.label_at(np.arctan2(Y, X)).astype(np.int64)


def multiway_cut_oracle(bdata, tensions, n=512, connectivity=16, max_cycles=6,
                        coarse=128, band=8, max_rebands=12, return_labels=False):
    """Pixel estimate of the Problem-1 minimum by alpha-expansion graph cuts.

    Pixels whose centers lie outside the unit disc are fixed to the boundary
    label at their polar angle. Boundary length is measured with
    Cauchy-Crofton weights on a ``connectivity``-neighborhood and each
    alpha-expansion move is an exact binary graph cut (the interface costs
    form a metric, so every move is submodular).

    Grids finer than ``coarse`` are reached by doubling: the labeling is
    upsampled and expansion moves are restricted to pixels within ``band``
    pixels of an interface; the band is re-centered on the current
    interfaces until the energy stops decreasing. The returned cost is the exact discrete energy
    of the final labeling, hence an upper bound of the discrete minimum.
    """
    if n < 64:
        raise ValidationError("oracle grid must be at least 64 pixels wide")
    C = tensions.cost_matrix()
    levels = [n]
    while levels[-1] > coarse and levels[-1] % 2 == 0:
        levels.append(levels[-1] // 2)
    levels = levels[::-1]
    labels = None
    for m in levels:
        free, radial = _pixel_disc(bdata, m)
        edges = _pixel_edges(m, connectivity)
        if labels is None:
            labels, E = _expansion_sweeps(radial, free, free, C, edges, max_cycles)
            continue
        inner = labels[ORACLE_PAD:-ORACLE_PAD, ORACLE_PAD:-ORACLE_PAD]
        up = radial.copy()
        up[ORACLE_PAD:-ORACLE_PAD, ORACLE_PAD:-ORACLE_PAD] = np.kron(
            inner, np.ones((2, 2), dtype=np.int64))
        labels = np.where(free, up, radial)
        E = np.inf
        for _ in range(max_rebands):
            movable = ndimage.binary_dilation(_interface_mask(labels), iterations=band) & free
            labels, Enew = _expansion_sweeps(labels, free, movable, C, edges, max_cycles)
            done = Enew > E - 1e-9 * Enew
            E = min(E, Enew)
            if done:
                break
    if return_labels:
        return E, labels
    return E


# --------------------------------------------------------------------------
# Problem 2: wetted junctions
# --------------------------------------------------------------------------
def _junction_star(net, q):
    """Incident directions, neighbor points and sector labels at junction q."""
    J = net.junctions[q]
    inc = []
    for s_idx, seg in enumerate(net.segments):
        for end, other in ((seg.a, seg.b), (seg.b, seg.a)):
            if np.linalg.norm(end - J) < 1e-9:
                d = other - J
                inc.append((np.arctan2(d[1], d[0]), s_idx, other, seg.labels))
    inc.sort(key=lambda r: r[0])
    if len(inc) != 3:
        raise LabelingError("junction does not have three incident segments")
    sectors = []
    for k in range(3):
        a0, s0, _, l0 = inc[k]
        a1, s1, _, l1 = inc[(k + 1) % 3]
        lab = (set(l0) & set(l1)).pop()
        sectors.append((a0, np.mod(a1 - a0, TWO_PI), lab, s0, s1))
    return J, inc, sectors


def _wet_junction(net, q, t, mu):
    """Arcs, cusps, gray area and cost change for t_l k_l = mu at junction q."""
    J, inc, sectors = _junction_star(net, q)
    arcs = []
    tangents = {}
    area = 0.0
    added = 0.0
    for a0, opening, lab, s0, s1 in sectors:
        r = t[lab] / mu
        half = 0.5 * opening
        tau = r / np.tan(half)
        bis = a0 + half
        center = J + (r / np.sin(half)) * np.array([np.cos(bis), np.sin(bis)])
        p0 = J + tau * np.array([np.cos(a0), np.sin(a0)])
        p1 = J + tau * np.array([np.cos(a0 + opening), np.sin(a0 + opening)])
        start = np.arctan2(*(p0 - center)[::-1])
        end = np.arctan2(*(p1 - center)[::-1])
        sweep = np.mod(end - start + np.pi, TWO_PI) - np.pi  # short way round
        arcs.append(Arc(center, r, start, sweep, lab, q))
        tangents.setdefault(s0, []).append(p0)
        tangents.setdefault(s1, []).append(p1)
        area += r * tau - 0.5 * r * r * (np.pi - opening)
        added += t[lab] * r * (np.pi - opening)
    cusps = {}
    defect = 0.0
    for s_idx, pts in tangents.items():
        cusps[s_idx] = 0.5 * (pts[0] + pts[1])
        defect = max(defect, np.linalg.norm(pts[0] - pts[1]))
    return arcs, cusps, area, added, defect


def solve_problem2(bdata, tensions, delta, seed=0, network=None):
    """Problem-1 network with each interior junction wetted by area delta.

    For a junction the family of gray curvilinear triangles is indexed by the
    curvature k_1 of the phase-1 arc; the other curvatures follow from
    t_1 k_1 = t_2 k_2 = t_3 k_3, each arc is tangent to the two segments of
    its sector and the cusps sit at the tangency points. k_1 is found by
    bisection so that the exact area (kites minus circular sectors) equals
    the target. With several junctions the area is split so that the
    marginal cost reductions agree.
    """
    if delta < 0:
        raise ValidationError("delta must be nonnegative")
    base = network if network is not None else solve_problem1(bdata, tensions, seed=seed)
    t = tensions.t
    out = WettedNetwork(list(base.junctions), [Segment(s.a.copy(), s.b.copy(), s.labels)
                                               for s in base.segments],
                        base.boundary_points, list(base.regions), base.cost, base.topology,
                        base.angle_defect, list(base.boundary_junctions))
    out.delta = float(delta)
    out.m0 = base.cost
    out.kappa = np.zeros(3)
    nj = len(base.junctions)
    if delta == 0 or nj == 0:
        return out
    # unit-curvature geometry per junction: area ~ K / mu^2, gain ~ G / mu
    KG = []
    for q in range(nj):
        _, cusps, area, added, _ = _wet_junction(base, q, t, 1.0)
        saved = sum(tensions.pair_cost(*base.segments[s].labels)
                    * np.linalg.norm(c - base.junctions[q]) for s, c in cusps.items())
        KG.append((area, saved - added))
    share = np.array([G * G / K for K, G in KG])
    share = share / share.sum()
    cost = base.cost
    total_area = 0.0
    segs = out.segments
    for q in range(nj):
        target = delta * share[q]

        def area_of(kappa1, q=q):
            return _wet_junction(base, q, t, kappa1 * t[0])[2] - target

        lo, hi = 1e-6, 1.0
        while area_of(hi) > 0:
            hi *= 2.0
            if hi > 1e16:
                raise DeltaTooLargeError("could not bracket the curvature")
        while area_of(lo) < 0:
            lo *= 0.5
        kappa1 = optimize.bisect(area_of, lo, hi, xtol=1e-15 * hi, rtol=1e-15, maxiter=400)
        mu = kappa1 * t[0]
        arcs, cusps, area, added, defect = _wet_junction(base, q, t, mu)
        J = base.junctions[q]
        for s_idx, c in cusps.items():
            seg = segs[s_idx]
            if np.linalg.norm(seg.a - J) < 1e-9:
                seg.a = c
            else:
                seg.b = c
            if np.dot(seg.b - seg.a, base.segments[s_idx].b - base.segments[s_idx].a) <= 0:
                raise DeltaTooLargeError("cusps overrun an interface segment")
            cost -= tensions.pair_cost(*seg.labels) * np.linalg.norm(c - J)
        for arc in arcs:
            if np.max(np.linalg.norm(arc.points(64), axis=1)) > 1.0 + 1e-12:
                raise DeltaTooLargeError("gray region leaves the disc")
        cost += added
        total_area += area
        out.arcs.extend(arcs)
        out.cusps.extend(cusps.values())
        out.gray_regions.append(np.vstack([a.points(32) for a in arcs]))
        out.kappas.append(np.array([mu / t[0], mu / t[1], mu / t[2]]))
        out.kappa = out.kappas[0]
        out.tangency_defect = max(out.tangency_defect, defect)
    out.cost = float(cost)
    out.gray_area = float(total_area)
    return out


@dataclass
class ComparisonTable:
    rows: list
    exponent: float
    gamma: float
    all_below: bool
    curvature_defect: float

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["delta", "m0", "m0_delta", "gap", "gap_over_sqrt_delta",
                        "fitted_exponent", "gamma"])
            for r in self.rows:
                w.writerow([repr(float(x)) for x in r] + [repr(self.exponent),
                                                          repr(self.gamma)])


def compare_partitions(bdata, tensions, deltas, seed=0):
    """Gap m0 - m0(delta) over a sweep of areas and its fitted power law."""
    deltas = [float(d) for d in deltas]
    if any(d <= 0 for d in deltas) or deltas != sorted(deltas):
        raise ValidationError("deltas must be positive and sorted")
    base = solve_problem1(bdata, tensions, seed=seed)
    rows = []
    curv = 0.0
    for d in deltas:
        wet = solve_problem2(bdata, tensions, d, network=base)
        gap = base.cost - wet.cost
        rows.append((d, base.cost, wet.cost, gap, gap / np.sqrt(d)))
        if wet.kappa is not None and np.any(wet.kappa > 0):
            prod = tensions.t * wet.kappa
            curv = max(curv, float(np.max(prod) - np.min(prod)) / float(np.max(prod)))
    arr = np.array(rows)
    if np.all(arr[:, 3] > 0) and len(rows) > 1:
        exponent = float(np.polyfit(np.log(arr[:, 0]), np.log(arr[:, 3]), 1)[0])
    else:
        exponent = float("nan")
    gamma = float(np.max(arr[:, 4]))
    below = bool(np.all(arr[:, 2] <= arr[:, 1] + 1e-12))
    return ComparisonTable(rows, exponent, gamma, below, curv)


# --------------------------------------------------------------------------
# export
# --------------------------------------------------------------------------
def network_to_text(net):
    lines = ["[network]", f"topology = {net.topology}", f"cost = {net.cost!r}"]
    for q, J in enumerate(net.junctions):
        lines.append(f"junction{q} = {J[0]!r}, {J[1]!r}")
    for s, seg in enumerate(net.segments):
        lines.append(f"segment{s} = {seg.a[0]!r}, {seg.a[1]!r}, {seg.b[0]!r}, {seg.b[1]!r}, "
                     f"{seg.labels[0] + 1}, {seg.labels[1] + 1}")
    for a, arc in enumerate(getattr(net, "arcs", [])):
        lines.append(f"arc{a} = {arc.center[0]!r}, {arc.center[1]!r}, {arc.radius!r}, "
                     f"{arc.start!r}, {arc.sweep!r}, {arc.label + 1}")
    if isinstance(net, WettedNetwork):
        lines.append(f"delta = {net.delta!r}")
        lines.append(f"gray_area = {net.gray_area!r}")
    return "\n".join(lines) + "\n"


def network_to_paths(net):
    """SVG-style path strings, one per segment or arc."""
    paths = []
    for seg in net.segments:
        paths.append(f"M {seg.a[0]:.9f} {seg.a[1]:.9f} L {seg.b[0]:.9f} {seg.b[1]:.9f}")
    for arc in getattr(net, "arcs", []):
        p0, p1 = arc.points(2)
        sweep_flag = 1 if arc.sweep > 0 else 0
        paths.append(f"M {p0[0]:.9f} {p0[1]:.9f} A {arc.radius:.9f} {arc.radius:.9f} 0 0 "
                     f"{sweep_flag} {p1[0]:.9f} {p1[1]:.9f}")
    return paths
