"""Polygonal domains with labeled boundaries, P1 triangulations and the
geometric probes (corkscrew accessibility of the Dirichlet set, interior
volume density) used to certify test domains.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.spatial import Delaunay

DIRICHLET = "D"
NEUMANN = "N"

# node flags
INTERIOR, FLAG_D, FLAG_N, JUNCTION = 0, 1, 2, 3

MIN_TARGET_H = 1e-4


class DomainError(ValueError):
    """Raised for invalid polygons, labels or meshing requests."""


def _signed_area(ring: np.ndarray) -> float:
    x, y = ring[:, 0], ring[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def _segments_cross(p1, p2, q1, q2, tol=1e-14) -> bool:
    """Proper or touching intersection of two closed segments."""
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1, d2 = orient(q1, q2, p1), orient(q1, q2, p2)
    d3, d4 = orient(p1, p2, q1), orient(p1, p2, q2)
    if ((d1 > tol and d2 < -tol) or (d1 < -tol and d2 > tol)) and \
       ((d3 > tol and d4 < -tol) or (d3 < -tol and d4 > tol)):
        return True

    def on_seg(a, b, c):
        return (abs(orient(a, b, c)) <= tol
                and min(a[0], b[0]) - tol <= c[0] <= max(a[0], b[0]) + tol
                and min(a[1], b[1]) - tol <= c[1] <= max(a[1], b[1]) + tol)

    return on_seg(q1, q2, p1) or on_seg(q1, q2, p2) or on_seg(p1, p2, q1) or on_seg(p1, p2, q2)


def _ring_is_simple(ring: np.ndarray) -> bool:
    m = len(ring)
    for i in range(m):
        a, b = ring[i], ring[(i + 1) % m]
        for j in range(i + 1, m):
            if j == i or (j + 1) % m == i or (i + 1) % m == j:
                continue
            if _segments_cross(a, b, ring[j], ring[(j + 1) % m]):
                return False
    return True


def points_in_ring(points: np.ndarray, ring: np.ndarray) -> np.ndarray:
    """Even-odd point-in-polygon test, vectorized over points."""
    points = np.atleast_2d(points)
    x, y = points[:, 0], points[:, 1]
    inside = np.zeros(len(points), dtype=bool)
    xr, yr = ring[:, 0], ring[:, 1]
    xs, ys = np.roll(xr, -1), np.roll(yr, -1)
    for x0, y0, x1, y1 in zip(xr, yr, xs, ys):
        cond = (y0 > y) != (y1 > y)
        with np.errstate(divide="ignore", invalid="ignore"):
            xint = x0 + (y - y0) * (x1 - x0) / (y1 - y0)
        inside ^= cond & (x < xint)
    return inside


def point_segment_distance(points: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    points = np.atleast_2d(points)
    ab = b - a
    denom = float(ab @ ab)
    if denom == 0.0:
        return np.linalg.norm(points - a, axis=1)
    s = np.clip((points - a) @ ab / denom, 0.0, 1.0)
    return np.linalg.norm(points - (a + s[:, None] * ab), axis=1)


@dataclass(frozen=True)
class PolygonalDomain:
    """Polygon with optional polygonal holes and a D/N label per boundary edge.

    Edges are numbered along the outer ring first (edge ``i`` joins vertex
    ``i`` to ``i+1``), then along each hole in order.  ``labels[e]`` is
    ``"D"`` or ``"N"``.
    """

    outer_ring: np.ndarray
    holes: tuple = ()
    labels: tuple = ()

    def __post_init__(self):
        outer = np.asarray(self.outer_ring, dtype=float)
        holes = tuple(np.asarray(h, dtype=float) for h in self.holes)
        object.__setattr__(self, "outer_ring", outer)
        object.__setattr__(self, "holes", holes)
        labels = tuple(self.labels) if len(self.labels) else (DIRICHLET,) * self.n_edges
        object.__setattr__(self, "labels", labels)
        self._validate()

    @property
    def rings(self) -> list[np.ndarray]:
        return [self.outer_ring, *self.holes]

    @property
    def n_edges(self) -> int:
        return sum(len(r) for r in self.rings)

    def edges(self) -> list[tuple[np.ndarray, np.ndarray, str]]:
        out = []
        e = 0
        for ring in self.rings:
            m = len(ring)
            for i in range(m):
                out.append((ring[i], ring[(i + 1) % m], self.labels[e]))
                e += 1
        return out

    def _validate(self):
        for k, ring in enumerate(self.rings):
            if ring.ndim != 2 or ring.shape[1] != 2 or len(ring) < 3:
                raise DomainError(f"ring {k}: need at least 3 vertices of dimension 2")
            d = np.linalg.norm(ring - np.roll(ring, -1, axis=0), axis=1)
            if np.any(d <= 0.0):
                raise DomainError(f"ring {k}: repeated consecutive vertices")
            area = _signed_area(ring)
            if abs(area) <= 1e-14 * max(1.0, float(np.ptp(ring)) ** 2):
                raise DomainError(f"ring {k}: zero area")
            if k == 0 and area < 0:
                raise DomainError("outer ring must be positively (counter-clockwise) oriented")
            if k > 0 and area > 0:
                raise DomainError(f"hole {k - 1} must be negatively (clockwise) oriented")
            if not _ring_is_simple(ring):
                raise DomainError(f"ring {k} is self-intersecting")
        for k, hole in enumerate(self.holes):
            if not np.all(points_in_ring(hole, self.outer_ring)):
                raise DomainError(f"hole {k} is not inside the outer ring")
            for other in self.holes[k + 1:]:
                if np.any(points_in_ring(hole, other)) or np.any(points_in_ring(other, hole)):
                    raise DomainError("holes overlap")
        rings = self.rings
        for i in range(len(rings)):
            for j in range(i + 1, len(rings)):
                a_ring, b_ring = rings[i], rings[j]
                for p in range(len(a_ring)):
                    for q in range(len(b_ring)):
                        if _segments_cross(a_ring[p], a_ring[(p + 1) % len(a_ring)],
                                           b_ring[q], b_ring[(q + 1) % len(b_ring)]):
                            raise DomainError("rings intersect")
        if len(self.labels) != self.n_edges:
            raise DomainError(f"expected {self.n_edges} edge labels, got {len(self.labels)}")
        bad = [lab for lab in self.labels if lab not in (DIRICHLET, NEUMANN)]
        if bad:
            raise DomainError(f"unknown boundary labels {sorted(set(bad))}")

    @property
    def area(self) -> float:
        return sum(_signed_area(r) for r in self.rings)

    @property
    def diameter(self) -> float:
        v = self.outer_ring
        diff = v[:, None, :] - v[None, :, :]
        return float(np.sqrt((diff ** 2).sum(-1)).max())

    @property
    def has_dirichlet(self) -> bool:
        return DIRICHLET in self.labels

    @property
    def has_neumann(self) -> bool:
        return NEUMANN in self.labels

    def contains(self, points) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        inside = points_in_ring(points, self.outer_ring)
        for h in self.holes:
            inside &= ~points_in_ring(points, h)
        return inside

    def distance_to_boundary(self, points) -> np.ndarray:
        """Exact distance to the complement for interior points (0 outside)."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        d = np.full(len(points), np.inf)
        for a, b, _ in self.edges():
            d = np.minimum(d, point_segment_distance(points, a, b))
        return np.where(self.contains(points), d, 0.0)

    def is_rectangle(self) -> bool:
        v = self.outer_ring
        if self.holes or len(v) != 4:
            return False
        xs, ys = np.unique(v[:, 0]), np.unique(v[:, 1])
        return len(xs) == 2 and len(ys) == 2

    def to_dict(self) -> dict:
        return {
            "outer": self.outer_ring.tolist(),
            "holes": [h.tolist() for h in self.holes],
            "labels": list(self.labels),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PolygonalDomain":
        outer = data["outer"]
        holes = data.get("holes", [])
        n_edges = len(outer) + sum(len(h) for h in holes)
        if "labels" in data:
            labels = list(data["labels"])
        else:
            default = data.get("default_label", NEUMANN)
            labels = [default] * n_edges
            for seg in data.get("segments", []):
                labels[int(seg["edge"])] = seg["label"]
        return cls(np.asarray(outer, float), tuple(np.asarray(h, float) for h in holes), tuple(labels))

    @classmethod
    def from_json(cls, path) -> "PolygonalDomain":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def unit_square(labels: Sequence[str] = ("D", "D", "D", "D"), centered: bool = False) -> PolygonalDomain:
    """Unit square; edge order bottom, right, top, left."""
    v = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    if centered:
        v -= 0.5
    return PolygonalDomain(v, (), tuple(labels))


def l_shape(label: str = DIRICHLET) -> PolygonalDomain:
    v = np.array([[0, 0], [2, 0], [2, 1], [1, 1], [1, 2], [0, 2]], dtype=float)
    return PolygonalDomain(v, (), (label,) * 6)


@dataclass(frozen=True)
class Mesh:
    """Conforming triangulation with labeled boundary edges."""

    nodes: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    edge_labels: tuple
    node_flags: np.ndarray = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "nodes", np.ascontiguousarray(self.nodes, dtype=float))
        object.__setattr__(self, "triangles", np.ascontiguousarray(self.triangles, dtype=np.int64))
        object.__setattr__(self, "boundary_edges",
                           np.asarray(self.boundary_edges, dtype=np.int64).reshape(-1, 2))
        object.__setattr__(self, "edge_labels", tuple(self.edge_labels))
        if self.node_flags is None:
            object.__setattr__(self, "node_flags", _node_flags(len(self.nodes), self.boundary_edges,
                                                               self.edge_labels))
        if np.any(self.signed_areas() <= 0):
            raise DomainError("mesh has degenerate or negatively oriented triangles")

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def signed_areas(self) -> np.ndarray:
        p = self.nodes[self.triangles]
        e1, e2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    @property
    def areas(self) -> np.ndarray:
        return self.signed_areas()

    @property
    def total_area(self) -> float:
        return float(math.fsum(self.areas))

    def edges(self) -> np.ndarray:
        t = self.triangles
        e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        e.sort(axis=1)
        return np.unique(e, axis=0)

    @property
    def h_max(self) -> float:
        e = self.edges()
        return float(np.linalg.norm(self.nodes[e[:, 0]] - self.nodes[e[:, 1]], axis=1).max())

    @property
    def centroids(self) -> np.ndarray:
        return self.nodes[self.triangles].mean(axis=1)

    def gradients(self) -> np.ndarray:
        """Constant gradients of the three barycentric basis functions, shape (T, 3, 2)."""
        p = self.nodes[self.triangles]
        x, y = p[..., 0], p[..., 1]
        area2 = 2.0 * self.signed_areas()
        gx = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1) / area2[:, None]
        gy = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1) / area2[:, None]
        return np.stack([gx, gy], axis=-1)

    @property
    def dirichlet_nodes(self) -> np.ndarray:
        return np.flatnonzero((self.node_flags == FLAG_D) | (self.node_flags == JUNCTION))

    @property
    def has_dirichlet(self) -> bool:
        return DIRICHLET in self.edge_labels

    def lumped_masses(self) -> np.ndarray:
        m = np.zeros(self.n_nodes)
        np.add.at(m, self.triangles.ravel(), np.repeat(self.areas / 3.0, 3))
        return m

    def locator(self) -> "TriLocator":
        loc = self.__dict__.get("_locator")
        if loc is None:
            loc = TriLocator(self)
            object.__setattr__(self, "_locator", loc)
        return loc

    def interpolate(self, values: np.ndarray, points) -> np.ndarray:
        """P1 interpolation of nodal ``values`` (shape (N, ...)) at ``points``."""
        tri, bary = self.locator().locate(points)
        if np.any(tri < 0):
            raise DomainError("point outside mesh")
        vals = np.asarray(values)[self.triangles[tri]]
        return np.einsum("pk,pk...->p...", bary, vals)

    def write(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_text())

    def to_text(self) -> str:
        lines = [f"nodes {self.n_nodes}"]
        lines += [f"{x:.17g} {y:.17g}" for x, y in self.nodes]
        lines.append(f"tris {self.n_triangles}")
        lines += [f"{a} {b} {c}" for a, b, c in self.triangles]
        lines.append(f"bedges {len(self.boundary_edges)}")
        lines += [f"{i} {j} {lab}" for (i, j), lab in zip(self.boundary_edges, self.edge_labels)]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "Mesh":
        tokens = iter(text.split("\n"))

        def header(name):
            line = next(tokens).split()
            if line[0] != name:
                raise DomainError(f"expected section '{name}', got '{line[0]}'")
            return int(line[1])

        nn = header("nodes")
        nodes = [list(map(float, next(tokens).split())) for _ in range(nn)]
        nt = header("tris")
        tris = [list(map(int, next(tokens).split())) for _ in range(nt)]
        nb = header("bedges")
        bedges, labels = [], []
        for _ in range(nb):
            i, j, lab = next(tokens).split()
            bedges.append((int(i), int(j)))
            labels.append(lab)
        return cls(np.array(nodes), np.array(tris), np.array(bedges), tuple(labels))

    @classmethod
    def read(cls, path) -> "Mesh":
        with open(path) as fh:
            return cls.from_text(fh.read())


def _node_flags(n_nodes, boundary_edges, labels) -> np.ndarray:
    on_d = np.zeros(n_nodes, dtype=bool)
    on_n = np.zeros(n_nodes, dtype=bool)
    for (i, j), lab in zip(boundary_edges, labels):
        if lab == DIRICHLET:
            on_d[[i, j]] = True
        else:
            on_n[[i, j]] = True
    flags = np.full(n_nodes, INTERIOR, dtype=np.int8)
    flags[on_n] = FLAG_N
    flags[on_d] = FLAG_D
    flags[on_d & on_n] = JUNCTION
    return flags


class TriLocator:
    """Uniform bucket grid over triangle bounding boxes."""

    def __init__(self, mesh: Mesh, cells_per_side: int | None = None):
        self.mesh = mesh
        p = mesh.nodes[mesh.triangles]
        self.lo_corner = mesh.nodes.min(axis=0)
        span = mesh.nodes.max(axis=0) - self.lo_corner
        n = cells_per_side or max(1, int(math.sqrt(mesh.n_triangles / 2)))
        self.n = n
        self.cell = np.maximum(span / n, 1e-300)
        lo = np.floor((p.min(axis=1) - self.lo_corner) / self.cell).astype(int).clip(0, n - 1)
        hi = np.floor((p.max(axis=1) - self.lo_corner) / self.cell).astype(int).clip(0, n - 1)
        buckets: dict[int, list[int]] = {}
        for t in range(mesh.n_triangles):
            for i in range(lo[t, 0], hi[t, 0] + 1):
                for j in range(lo[t, 1], hi[t, 1] + 1):
                    buckets.setdefault(i * n + j, []).append(t)
        self.buckets = {k: np.array(v) for k, v in buckets.items()}
        g = mesh.nodes[mesh.triangles]
        self._p0 = g[:, 0]
        e1, e2 = g[:, 1] - g[:, 0], g[:, 2] - g[:, 0]
        det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
        self._inv = np.stack([np.stack([e2[:, 1], -e2[:, 0]], -1),
                              np.stack([-e1[:, 1], e1[:, 0]], -1)], 1) / det[:, None, None]

    def locate(self, points, tol: float = 1e-10) -> tuple[np.ndarray, np.ndarray]:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        tri = np.full(len(points), -1, dtype=np.int64)
        bary = np.zeros((len(points), 3))
        ij = np.floor((points - self.lo_corner) / self.cell).astype(int)
        for k, (pt, (i, j)) in enumerate(zip(points, ij)):
            if not (0 <= i <= self.n and 0 <= j <= self.n):
                continue
            cand = self.buckets.get(min(i, self.n - 1) * self.n + min(j, self.n - 1))
            if cand is None:
                continue
            lam = np.einsum("tij,tj->ti", self._inv[cand], pt - self._p0[cand])
            full = np.column_stack([1.0 - lam.sum(1), lam])
            worst = full.min(axis=1)
            best = int(np.argmax(worst))
            if worst[best] >= -tol:
                tri[k] = cand[best]
                bary[k] = full[best]
        return tri, bary


# --------------------------------------------------------------------------
# meshing

def triangulate(domain: PolygonalDomain, target_h: float, *, slack: float = 0.25,
                method: str = "auto") -> Mesh:
    """Conforming triangulation with ``h_max <= target_h * (1 + slack)``.

    Axis-aligned rectangles get a structured grid with uniform diagonals;
    everything else goes through a conforming Delaunay triangulation of a
    boundary sampling plus an interior triangular lattice.
    """
    if not target_h > 0:
        raise DomainError("target_h must be positive")
    if target_h < MIN_TARGET_H * domain.diameter:
        raise DomainError(f"target_h below floor {MIN_TARGET_H:g} * diam")
    if method == "auto":
        method = "structured" if domain.is_rectangle() else "delaunay"
    if method == "structured":
        if not domain.is_rectangle():
            raise DomainError("structured meshing needs an axis-aligned rectangle")
        return _structured_rectangle(domain, target_h)
    spacing = target_h / 1.05
    for _ in range(8):
        mesh = _conforming_delaunay(domain, spacing)
        if mesh.h_max <= target_h * (1.0 + slack):
            return mesh
        spacing *= 0.85
    raise DomainError("could not meet target_h")


def _structured_rectangle(domain: PolygonalDomain, target_h: float) -> Mesh:
    v = domain.outer_ring
    x0, y0 = v.min(axis=0)
    x1, y1 = v.max(axis=0)
    lx, ly = x1 - x0, y1 - y0
    # cell diagonal is the longest edge
    cell = target_h / math.sqrt(2.0)
    nx = max(1, math.ceil(lx / cell - 1e-12))
    ny = max(1, math.ceil(ly / cell - 1e-12))
    xs = x0 + lx * np.arange(nx + 1) / nx
    ys = y0 + ly * np.arange(ny + 1) / ny
    xs[-1], ys[-1] = x1, y1
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    nodes = np.column_stack([X.ravel(), Y.ravel()])

    def idx(i, j):
        return j * (nx + 1) + i

    i, j = np.meshgrid(np.arange(nx), np.arange(ny), indexing="xy")
    i, j = i.ravel(), j.ravel()
    a, b, c, d = idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1)
    tris = np.stack([np.column_stack([a, b, c]), np.column_stack([a, c, d])], axis=1).reshape(-1, 3)

    # map rectangle sides back to the domain's edge labels
    bedges, labels = [], []
    for a_pt, b_pt, lab in domain.edges():
        if a_pt[1] == b_pt[1]:
            jj = 0 if a_pt[1] == y0 else ny
            ia = np.arange(nx)
            pairs = [(idx(k, jj), idx(k + 1, jj)) for k in ia]
        else:
            ii = 0 if a_pt[0] == x0 else nx
            pairs = [(idx(ii, k), idx(ii, k + 1)) for k in range(ny)]
        bedges.extend(pairs)
        labels.extend([lab] * len(pairs))
    return Mesh(nodes, tris, np.array(bedges), tuple(labels))


def _conforming_delaunay(domain: PolygonalDomain, s: float) -> Mesh:
    # boundary sampling, per domain edge
    seg_points: list[list[np.ndarray]] = []
    edges = domain.edges()
    for a, b, _ in edges:
        m = max(1, math.ceil(np.linalg.norm(b - a) / s - 1e-12))
        seg_points.append([a + (b - a) * k / m for k in range(m)])

    lo = domain.outer_ring.min(axis=0)
    hi = domain.outer_ring.max(axis=0)
    dy = s * math.sqrt(3.0) / 2.0
    rows = []
    for r, yv in enumerate(np.arange(lo[1] + dy / 2, hi[1], dy)):
        off = 0.5 * s if r % 2 else 0.0
        xv = np.arange(lo[0] + off + s / 2, hi[0], s)
        rows.append(np.column_stack([xv, np.full_like(xv, yv)]))
    lattice = np.concatenate(rows) if rows else np.zeros((0, 2))
    if len(lattice):
        keep = domain.contains(lattice)
        lattice = lattice[keep]
        dist = np.full(len(lattice), np.inf)
        for a, b, _ in edges:
            dist = np.minimum(dist, point_segment_distance(lattice, a, b))
        lattice = lattice[dist >= 0.55 * s]

    for _ in range(30):
        bpts, bed, blab, offset = [], [], [], 0
        for (a, b, lab), pts in zip(edges, seg_points):
            bpts.extend(pts)
        # close rings: edge k's last point connects to next edge's first point
        nb = len(bpts)
        starts = np.cumsum([0] + [len(p) for p in seg_points])
        ring_edge_ranges = []
        e0 = 0
        for ring in domain.rings:
            ring_edge_ranges.append(range(e0, e0 + len(ring)))
            e0 += len(ring)
        for rng in ring_edge_ranges:
            ring_first = starts[rng.start]
            ring_end = starts[rng.stop]
            for e in rng:
                lab = edges[e][2]
                for k in range(starts[e], starts[e + 1]):
                    nxt = k + 1 if k + 1 < ring_end else ring_first
                    bed.append((k, nxt))
                    blab.append(lab)
        points = np.concatenate([np.array(bpts), lattice]) if len(lattice) else np.array(bpts)
        tri = Delaunay(points).simplices
        cent = points[tri].mean(axis=1)
        tri = tri[domain.contains(cent)]
        p = points[tri]
        e1, e2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
        neg = (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]) < 0
        tri[neg] = tri[neg][:, [0, 2, 1]]
        mesh_edges = {tuple(sorted(e)) for t in tri for e in ((t[0], t[1]), (t[1], t[2]), (t[2], t[0]))}
        missing = [k for k, e in enumerate(bed) if tuple(sorted(e)) not in mesh_edges]
        if not missing:
            used = np.unique(tri)
            remap = -np.ones(len(points), dtype=np.int64)
            remap[used] = np.arange(len(used))
            if len(used) != len(points):
                points = points[used]
                tri = remap[tri]
                bed = [(remap[i], remap[j]) for i, j in bed]
            mesh = Mesh(points, tri, np.array(bed), tuple(blab))
            if abs(mesh.total_area - domain.area) > 1e-12 * max(1.0, domain.area):
                raise DomainError("triangulation does not tile the polygon")
            return mesh
        # split the missing boundary sub-edges and retry
        split = set(missing)
        new_seg_points = []
        for e in range(len(edges)):
            pts = []
            for k in range(starts[e], starts[e + 1]):
                pts.append(np.array(bpts[k]))
                if k in split:
                    i, j = bed[k]
                    pts.append(0.5 * (np.array(bpts[i]) + np.array(bpts[j])))
            new_seg_points.append(pts)
        seg_points = new_seg_points
    raise DomainError("boundary recovery failed")


def refine(mesh: Mesh) -> Mesh:
    """Uniform quadrisection through edge midpoints."""
    edges = mesh.edges()
    n = mesh.n_nodes
    key = edges[:, 0] * n + edges[:, 1]
    mids = 0.5 * (mesh.nodes[edges[:, 0]] + mesh.nodes[edges[:, 1]])
    nodes = np.concatenate([mesh.nodes, mids])

    def mid(i, j):
        lo, hi = np.minimum(i, j), np.maximum(i, j)
        return n + np.searchsorted(key, lo * n + hi)

    t = mesh.triangles
    a, b, c = t[:, 0], t[:, 1], t[:, 2]
    ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
    tris = np.concatenate([
        np.column_stack([a, ab, ca]),
        np.column_stack([ab, b, bc]),
        np.column_stack([ca, bc, c]),
        np.column_stack([ab, bc, ca]),
    ])
    be = mesh.boundary_edges
    m = mid(be[:, 0], be[:, 1])
    bedges = np.empty((2 * len(be), 2), dtype=np.int64)
    bedges[0::2] = np.column_stack([be[:, 0], m])
    bedges[1::2] = np.column_stack([m, be[:, 1]])
    labels = tuple(lab for lab in mesh.edge_labels for _ in range(2))
    return Mesh(nodes, tris, bedges, labels)


# --------------------------------------------------------------------------
# geometric probes

@dataclass(frozen=True)
class GeometryFlags:
    corkscrew_D: bool
    corkscrew_worst_ratio: float
    interior_density_beta: float
    has_lipschitz_D_portion: bool
    note: str = ""


def _dirichlet_arcs(domain: PolygonalDomain):
    """Split edges into D pieces and N pieces plus the D/N interface points."""
    d_pieces, n_pieces, interface = [], [], []
    e0 = 0
    for ring in domain.rings:
        m = len(ring)
        labs = domain.labels[e0:e0 + m]
        for i in range(m):
            a, b = ring[i], ring[(i + 1) % m]
            (d_pieces if labs[i] == DIRICHLET else n_pieces).append((a, b))
            if labs[i] != labs[(i + 1) % m]:
                interface.append(b)
        e0 += m
    return d_pieces, n_pieces, interface


def corkscrew_ratio(d_pieces, n_pieces, probes, r0: float, probe_count: int,
                    levels: int = 6) -> float:
    """Worst ``r / dist(x_r, N)`` over probes and a dyadic radius ladder.

    For each probe ``x`` and radius ``r`` the best ``x_r`` is searched among
    ``probe_count`` points on every D piece within distance ``r`` of ``x``.
    Returns ``inf`` if some ``(x, r)`` admits no point at positive distance
    from the Neumann set.
    """
    if probe_count <= 0:
        raise DomainError("probe_count must be positive")
    worst = 0.0
    for x in probes:
        x = np.asarray(x, float)
        for lev in range(levels):
            r = r0 * 2.0 ** (-lev)
            best = 0.0
            for a, b in d_pieces:
                a, b = np.asarray(a, float), np.asarray(b, float)
                cand = _segment_ball_samples(a, b, x, r, probe_count)
                if len(cand) == 0:
                    continue
                dist = np.full(len(cand), np.inf)
                for p, q in n_pieces:
                    dist = np.minimum(dist, point_segment_distance(cand, np.asarray(p, float),
                                                                   np.asarray(q, float)))
                best = max(best, float(dist.max()))
            ratio = math.inf if best <= 0 else r / best
            worst = max(worst, ratio)
    return worst


def _segment_ball_samples(a, b, x, r, count):
    ab = b - a
    L2 = float(ab @ ab)
    if L2 == 0.0:
        return a[None, :] if np.linalg.norm(a - x) <= r else np.zeros((0, 2))
    # solve |a + s ab - x|^2 <= r^2
    ax = a - x
    qa, qb, qc = L2, 2 * float(ab @ ax), float(ax @ ax) - r * r
    disc = qb * qb - 4 * qa * qc
    if disc < 0:
        return np.zeros((0, 2))
    sq = math.sqrt(disc)
    s0, s1 = max(0.0, (-qb - sq) / (2 * qa)), min(1.0, (-qb + sq) / (2 * qa))
    if s0 > s1:
        return np.zeros((0, 2))
    s = np.linspace(s0, s1, max(count, 2))
    return a + s[:, None] * ab


def check_corkscrew(domain: PolygonalDomain, r0: float, M: float, probe_count: int,
                    *, levels: int = 6, density_probes: int = 8) -> GeometryFlags:
    """Probe-based corkscrew check of D within the boundary.

    Probes are the D/N interface points and the midpoints of D edges; the
    verdict is sampled, hence sound only up to probe density.
    """
    if probe_count <= 0:
        raise DomainError("probe_count must be positive")
    if not (0 < r0 <= domain.diameter):
        raise DomainError("r0 must lie in (0, diam]")
    if M < 1:
        raise DomainError("M must be >= 1")
    beta = interior_density(domain, probes_per_edge=density_probes)
    d_pieces, n_pieces, interface = _dirichlet_arcs(domain)
    lipschitz_d = len(d_pieces) > 0
    if not d_pieces:
        return GeometryFlags(True, 0.0, beta, False, "no Dirichlet set")
    if not n_pieces:
        return GeometryFlags(True, 0.0, beta, lipschitz_d, "D is the whole boundary")
    probes = list(interface) + [0.5 * (a + b) for a, b in d_pieces]
    ratio = corkscrew_ratio(d_pieces, n_pieces, probes, r0, probe_count, levels)
    return GeometryFlags(ratio <= M, ratio, beta, lipschitz_d)


def _disk_triangle_area(c: np.ndarray, r: float, p: np.ndarray, q: np.ndarray) -> float:
    """Signed area of disk(c, r) intersected with triangle (c, p, q)."""
    a, b = p - c, q - c

    def seg_area(u, v):
        # area of sector/triangle between rays u, v within radius r
        cross = u[0] * v[1] - u[1] * v[0]
        dot = u @ v
        return 0.5 * r * r * math.atan2(cross, dot)

    def tri_area(u, v):
        return 0.5 * (u[0] * v[1] - u[1] * v[0])

    da, db = math.hypot(*a), math.hypot(*b)
    if da <= r and db <= r:
        return tri_area(a, b)
    d = b - a
    A = d @ d
    if A == 0.0:
        return 0.0
    B = a @ d
    C = a @ a - r * r
    disc = B * B - A * C
    if disc <= 0:
        return seg_area(a, b)
    sq = math.sqrt(disc)
    s1, s2 = (-B - sq) / A, (-B + sq) / A
    if da <= r:
        pt = a + s2 * d
        return tri_area(a, pt) + seg_area(pt, b)
    if db <= r:
        pt = a + s1 * d
        return seg_area(a, pt) + tri_area(pt, b)
    if 0 < s1 < 1 and 0 < s2 < 1:
        p1, p2 = a + s1 * d, a + s2 * d
        return seg_area(a, p1) + tri_area(p1, p2) + seg_area(p2, b)
    return seg_area(a, b)


def disk_polygon_area(domain: PolygonalDomain, center, r: float) -> float:
    """Exact area of the domain intersected with the closed disk."""
    c = np.asarray(center, float)
    total = 0.0
    for ring in domain.rings:
        m = len(ring)
        for i in range(m):
            total += _disk_triangle_area(c, r, ring[i], ring[(i + 1) % m])
    return total


def interior_density(domain: PolygonalDomain, probes_per_edge: int = 8, *,
                     extra_probes: Iterable | None = None, levels: int = 8,
                     r_max: float | None = None) -> float:
    """Sampled ``inf |Omega ∩ B(x, r)| / r^2`` over boundary probes and a dyadic
    radius ladder capped at ``r_max`` (default ``diam / 2``)."""
    r_max = domain.diameter / 2 if r_max is None else r_max
    probes = []
    for a, b, _ in domain.edges():
        for k in range(probes_per_edge):
            probes.append(a + (b - a) * k / probes_per_edge)
    if extra_probes is not None:
        probes.extend(np.asarray(p, float) for p in extra_probes)
    beta = math.pi
    for x in probes:
        for lev in range(levels):
            r = r_max * 2.0 ** (-lev)
            beta = min(beta, disk_polygon_area(domain, x, r) / (r * r))
    return beta
