"""Cross-section geometry, triangulation and mesh file I/O.

A cross-section is a closed outer polygon (counterclockwise, y in m OD) with
one boundary tag per segment, cut into strata by interface polylines that
run across the full width.  Meshes are linear triangles; quadratic nodes are
added by :mod:`levee.fem` when needed.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import shapely
from shapely.geometry import LineString, MultiLineString, Polygon
from shapely.ops import unary_union

RIVER_FACE = "RiverFace"
LAND_FACE = "LandFace"
IMPERVIOUS = "Impervious"
TAGS = (RIVER_FACE, LAND_FACE, IMPERVIOUS)

MIN_AREA = 1e-10


class GeometryError(ValueError):
    pass


class ParseError(ValueError):
    pass


class ValidationError(ValueError):
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class OutsideDomain(ValueError):
    pass


def _polyline_y(line: np.ndarray, x):
    return np.interp(x, line[:, 0], line[:, 1])


@dataclass
class CrossSectionGeometry:
    outer: np.ndarray
    tags: list[str]
    interfaces: list[np.ndarray]
    strata: list[str]
    land_anchor_x: float | None = None
    land_heads: dict[str, float] = field(default_factory=dict)
    name: str = ""

    def __post_init__(self):
        self.outer = np.asarray(self.outer, dtype=float)
        self.interfaces = [np.asarray(line, dtype=float) for line in self.interfaces]
        if _signed_area(self.outer) < 0:
            raise GeometryError("outer boundary must be counterclockwise")
        self.validate()

    def validate(self):
        if len(self.tags) != len(self.outer):
            raise GeometryError(
                f"{len(self.outer)} outer segments but {len(self.tags)} tags")
        bad = [t for t in self.tags if t not in TAGS]
        if bad:
            raise GeometryError(f"unknown boundary tags {sorted(set(bad))}")
        if len(self.strata) != len(self.interfaces) + 1:
            raise GeometryError("need exactly one more stratum name than interfaces")
        if not self.polygon.is_valid:
            raise GeometryError("outer boundary self-intersects")
        xs = np.unique(np.concatenate([self.outer[:, 0]] + [l[:, 0] for l in self.interfaces]))
        for k, line in enumerate(self.interfaces):
            if np.any(np.diff(line[:, 0]) <= 0):
                raise GeometryError(f"interface {k} is not single-valued in x")
            if line[0, 0] > xs[0] or line[-1, 0] < xs[-1]:
                raise GeometryError(f"interface {k} does not span the section")
        for k in range(len(self.interfaces) - 1):
            upper = _polyline_y(self.interfaces[k], xs)
            lower = _polyline_y(self.interfaces[k + 1], xs)
            if np.any(upper < lower - 1e-12):
                raise GeometryError(f"interfaces {k} and {k + 1} are not ordered by depth")

    @property
    def polygon(self) -> Polygon:
        return Polygon(self.outer)

    @property
    def area(self) -> float:
        return abs(_signed_area(self.outer))

    def segments(self):
        """Outer segments as (start, end, tag)."""
        n = len(self.outer)
        for i in range(n):
            yield self.outer[i], self.outer[(i + 1) % n], self.tags[i]

    def stratum_at(self, x, y):
        """Stratum index (top = 0) for points, from the interface polylines."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        idx = np.zeros(np.broadcast(x, y).shape, dtype=int)
        for line in self.interfaces:
            idx += (y < _polyline_y(line, x)).astype(int)
        return idx

    def surface(self) -> np.ndarray:
        """Ground/bed surface: the upper chain of the outer polygon between its
        top-left and top-right corners, ordered by increasing x."""
        pts = self.outer
        x, y = pts[:, 0], pts[:, 1]
        left = np.flatnonzero(np.isclose(x, x.min()))
        right = np.flatnonzero(np.isclose(x, x.max()))
        i_left = left[np.argmax(y[left])]
        i_right = right[np.argmax(y[right])]
        n = len(pts)
        chain = [i_right]
        while chain[-1] != i_left:
            chain.append((chain[-1] + 1) % n)
        return pts[chain[::-1]].copy()

    def surface_y(self, x):
        s = self.surface()
        return np.interp(x, s[:, 0], s[:, 1])

    def bounds(self):
        return (self.outer[:, 0].min(), self.outer[:, 1].min(),
                self.outer[:, 0].max(), self.outer[:, 1].max())

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "outer": self.outer.tolist(),
            "tags": list(self.tags),
            "interfaces": [l.tolist() for l in self.interfaces],
            "strata": list(self.strata),
            "land_anchor_x": self.land_anchor_x,
            "land_heads": dict(self.land_heads),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CrossSectionGeometry":
        try:
            return cls(outer=d["outer"], tags=d["tags"], interfaces=d["interfaces"],
                       strata=d["strata"], land_anchor_x=d.get("land_anchor_x"),
                       land_heads=d.get("land_heads", {}), name=d.get("name", ""))
        except KeyError as exc:
            raise ParseError(f"geometry file missing field {exc}") from None

    def fingerprint(self) -> str:
        payload = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


def load_geometry(path) -> CrossSectionGeometry:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: line {exc.lineno}: {exc.msg}") from None
    return CrossSectionGeometry.from_dict(data)


def save_geometry(geom: CrossSectionGeometry, path) -> None:
    Path(path).write_text(json.dumps(geom.to_dict(), indent=2) + "\n")


def _signed_area(poly: np.ndarray) -> float:
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


# -- mesh ---------------------------------------------------------------------

@dataclass
class Mesh:
    nodes: np.ndarray
    triangles: np.ndarray
    stratum: np.ndarray
    boundary_edges: np.ndarray
    boundary_tags: list[str]
    strata: list[str]
    h: float

    def __post_init__(self):
        self.nodes = np.asarray(self.nodes, dtype=float).reshape(-1, 2)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        self.stratum = np.asarray(self.stratum, dtype=np.int64).reshape(-1)
        self.boundary_edges = np.asarray(self.boundary_edges, dtype=np.int64).reshape(-1, 2)
        self.boundary_tags = list(self.boundary_tags)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def areas(self) -> np.ndarray:
        p = self.nodes[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def centroids(self) -> np.ndarray:
        return self.nodes[self.triangles].mean(axis=1)

    def edges_with_tag(self, tag: str) -> np.ndarray:
        mask = np.array([t == tag for t in self.boundary_tags], dtype=bool)
        return self.boundary_edges[mask]

    def boundary_length(self, tag: str) -> float:
        e = self.edges_with_tag(tag)
        if len(e) == 0:
            return 0.0
        return float(np.linalg.norm(self.nodes[e[:, 1]] - self.nodes[e[:, 0]], axis=1).sum())

    def node_tags(self) -> dict[int, str]:
        """One tag per boundary node: the tag of the counterclockwise edge that
        starts at the node."""
        return {int(e[0]): tag for e, tag in zip(self.boundary_edges, self.boundary_tags)}

    def tagged_nodes(self, tag: str) -> np.ndarray:
        return np.array(sorted(n for n, t in self.node_tags().items() if t == tag),
                        dtype=np.int64)

    def validate(self, n_strata: int | None = None) -> None:
        problems = []
        areas = self.areas()
        for i in np.flatnonzero(~(areas > MIN_AREA)):
            problems.append(f"triangle {i} is degenerate or inverted (area {areas[i]:.3g})")
        n_strata = len(self.strata) if n_strata is None else n_strata
        for i in np.flatnonzero((self.stratum < 0) | (self.stratum >= n_strata)):
            problems.append(f"triangle {i} has unknown stratum id {self.stratum[i]}")
        if self.triangles.size and (self.triangles.min() < 0
                                    or self.triangles.max() >= self.n_nodes):
            problems.append("triangle references a missing node")
        bad_tags = sorted({t for t in self.boundary_tags if t not in TAGS})
        if bad_tags:
            problems.append(f"unknown boundary tags {bad_tags}")
        if len(self.boundary_tags) != len(self.boundary_edges):
            problems.append("boundary edge/tag count mismatch")
        counts = _edge_counts(self.triangles)
        for k, (a, b) in enumerate(self.boundary_edges):
            if counts.get((min(a, b), max(a, b)), 0) != 1:
                problems.append(f"boundary edge {k} ({a}, {b}) is not on exactly one triangle")
        if problems:
            raise ValidationError(problems)

    def __eq__(self, other):
        if not isinstance(other, Mesh):
            return NotImplemented
        return (np.array_equal(self.nodes, other.nodes)
                and np.array_equal(self.triangles, other.triangles)
                and np.array_equal(self.stratum, other.stratum)
                and np.array_equal(self.boundary_edges, other.boundary_edges)
                and self.boundary_tags == other.boundary_tags
                and self.strata == other.strata
                and self.h == other.h)

    def to_dict(self) -> dict:
        return {
            "h": self.h,
            "strata": list(self.strata),
            "nodes": self.nodes.tolist(),
            "triangles": [[int(a), int(b), int(c), int(s)]
                          for (a, b, c), s in zip(self.triangles, self.stratum)],
            "boundary_edges": [[int(a), int(b), t]
                               for (a, b), t in zip(self.boundary_edges, self.boundary_tags)],
        }


def _edge_counts(triangles: np.ndarray) -> dict:
    e = np.sort(triangles[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
    uniq, counts = np.unique(e, axis=0, return_counts=True)
    return {(int(a), int(b)): int(c) for (a, b), c in zip(uniq, counts)}


def save_mesh(mesh: Mesh, path) -> None:
    Path(path).write_text(json.dumps(mesh.to_dict()) + "\n")


def load_mesh(path, strata: list[str] | None = None) -> Mesh:
    """Load and validate a mesh file.

    ``strata`` (e.g. the material table's names) overrides the names stored in
    the file when checking stratum ids.
    """
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    for key in ("nodes", "triangles", "boundary_edges"):
        if key not in data:
            raise ParseError(f"{path}: missing field '{key}'")
    try:
        nodes = np.array(data["nodes"], dtype=float).reshape(-1, 2)
    except (ValueError, TypeError):
        raise ParseError(f"{path}: field 'nodes' must be a list of [x, y] pairs") from None
    tris, strat = [], []
    for k, row in enumerate(data["triangles"]):
        if len(row) != 4:
            raise ParseError(f"{path}: triangles[{k}] must be [n0, n1, n2, stratum]")
        tris.append(row[:3])
        strat.append(row[3])
    edges, tags = [], []
    for k, row in enumerate(data["boundary_edges"]):
        if len(row) != 3 or not isinstance(row[2], str):
            raise ParseError(f"{path}: boundary_edges[{k}] must be [n0, n1, \"tag\"]")
        edges.append(row[:2])
        tags.append(row[2])
    names = strata if strata is not None else data.get("strata", [])
    mesh = Mesh(nodes=nodes, triangles=np.array(tris, dtype=np.int64).reshape(-1, 3),
                stratum=np.array(strat, dtype=np.int64), boundary_edges=np.array(
                    edges, dtype=np.int64).reshape(-1, 2), boundary_tags=tags,
                strata=list(names), h=float(data.get("h", 0.0)))
    mesh.validate()
    return mesh


# -- generation ---------------------------------------------------------------

def _noded_segments(geom: CrossSectionGeometry):
    poly = geom.polygon
    lines = [LineString(np.vstack([geom.outer, geom.outer[:1]]))]
    for line in geom.interfaces:
        clipped = poly.intersection(LineString(line))
        if not clipped.is_empty:
            lines.append(clipped)
    noded = unary_union(lines)
    if isinstance(noded, LineString):
        noded = MultiLineString([noded])
    segs = []
    for part in shapely.get_parts(noded):
        if part.geom_type != "LineString":
            continue
        c = np.asarray(part.coords)
        for a, b in zip(c[:-1], c[1:]):
            if np.hypot(*(b - a)) > 1e-12:
                segs.append((a, b))
    return segs


def generate_cross_section(geom: CrossSectionGeometry, h: float, min_angle: float = 30.0) -> Mesh:
    """Constrained quality triangulation of ``geom`` with target edge length h.

    Boundary and interface segments are pre-split to length <= h and the
    triangle area is capped at the equilateral area for h, so no edge
    exceeds 2h.
    """
    import triangle

    if not h > 0:
        raise GeometryError(f"element size must be > 0, got {h}")
    key = {}
    verts = []

    def vid(p):
        k = (round(float(p[0]), 9), round(float(p[1]), 9))
        if k not in key:
            key[k] = len(verts)
            verts.append(k)
        return key[k]

    # Register the outer vertices first so numbering starts along the boundary.
    for p in geom.outer:
        vid(p)
    segments = []
    for a, b in _noded_segments(geom):
        n = max(1, math.ceil(np.hypot(*(b - a)) / h - 1e-9))
        pts = [a + (b - a) * (i / n) for i in range(n + 1)]
        ids = [vid(p) for p in pts]
        segments.extend(zip(ids[:-1], ids[1:]))
    area = math.sqrt(3.0) / 4.0 * h * h
    out = triangle.triangulate(
        {"vertices": np.array(verts, dtype=float), "segments": np.array(segments, dtype=np.int32)},
        f"pq{min_angle:g}a{area:.12g}Q")
    nodes = np.asarray(out["vertices"], dtype=float)
    tris = np.asarray(out["triangles"], dtype=np.int64)
    p = nodes[tris]
    signed = ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
              - (p[:, 1, 1] - p[:, 0, 1]) * (p[:, 2, 0] - p[:, 0, 0]))
    flip = signed < 0
    tris[flip] = tris[flip][:, [0, 2, 1]]
    tris = tris[np.abs(signed) > 2 * MIN_AREA]
    # triangle may drop near-duplicate input vertices; compact the numbering
    used = np.unique(tris)
    if len(used) != len(nodes):
        remap = np.full(len(nodes), -1, dtype=np.int64)
        remap[used] = np.arange(len(used))
        nodes, tris = nodes[used], remap[tris]
    cent = nodes[tris].mean(axis=1)
    stratum = geom.stratum_at(cent[:, 0], cent[:, 1])
    edges, tags = _tag_boundary(geom, nodes, tris)
    mesh = Mesh(nodes=nodes, triangles=tris, stratum=stratum, boundary_edges=edges,
                boundary_tags=tags, strata=list(geom.strata), h=float(h))
    mesh.validate()
    return mesh


def _tag_boundary(geom, nodes, tris):
    directed = tris[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2)
    undirected = np.sort(directed, axis=1)
    _, inv, counts = np.unique(undirected, axis=0, return_inverse=True, return_counts=True)
    bnd = directed[counts[inv.ravel()] == 1]
    order = np.lexsort((bnd[:, 1], bnd[:, 0]))
    bnd = bnd[order]
    mid = 0.5 * (nodes[bnd[:, 0]] + nodes[bnd[:, 1]])
    segs = list(geom.segments())
    tags = []
    for m in mid:
        best, best_d = None, np.inf
        for a, b, tag in segs:
            ab = b - a
            t = np.clip(np.dot(m - a, ab) / np.dot(ab, ab), 0.0, 1.0)
            d = np.hypot(*(a + t * ab - m))
            if d < best_d:
                best, best_d = tag, d
        if best_d > 1e-6:
            raise GeometryError(f"boundary edge at {m} is not on the outer boundary")
        tags.append(best)
    return bnd, tags


def locate_point(mesh: Mesh, x: float, y: float, tol: float = 1e-9):
    """Return (triangle id, barycentric coordinates) of the point (x, y).

    Raises
    ------
    OutsideDomain
        If no triangle contains the point within ``tol``.
    """
    p = mesh.nodes[mesh.triangles]
    x0, y0 = p[:, 0, 0], p[:, 0, 1]
    det = (p[:, 1, 0] - x0) * (p[:, 2, 1] - y0) - (p[:, 2, 0] - x0) * (p[:, 1, 1] - y0)
    l1 = ((x - x0) * (p[:, 2, 1] - y0) - (p[:, 2, 0] - x0) * (y - y0)) / det
    l2 = ((p[:, 1, 0] - x0) * (y - y0) - (x - x0) * (p[:, 1, 1] - y0)) / det
    lam = np.stack([1.0 - l1 - l2, l1, l2], axis=1)
    worst = lam.min(axis=1)
    k = int(np.argmax(worst))
    # scale the tolerance by the triangle size so it is a length
    scale = np.sqrt(np.abs(det[k]))
    if worst[k] * scale < -tol:
        raise OutsideDomain(f"point ({x}, {y}) is outside the mesh")
    bary = np.clip(lam[k], 0.0, 1.0)
    return k, bary / bary.sum()
