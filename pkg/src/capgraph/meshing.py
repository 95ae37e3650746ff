"""Simplicial meshes of the leaf domain: generation, conormals, distances, I/O.

Meshes are immutable after construction.  Supported cell types are segments
(dim 1) and triangles (dim 2); boundary facets carry a component tag and an
inward unit conormal.  The disk mesher uses a deterministic concentric-ring
construction so refinement studies are reproducible.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra

__all__ = [
    "Mesh",
    "ScalarField",
    "DomainSpec",
    "MeshError",
    "MeshBudgetError",
    "MeshFormatError",
    "UnreachableVertexError",
    "generate_disk_mesh",
    "generate_interval_mesh",
    "geodesic_distance_field",
    "boundary_distance_field",
    "read_mesh",
    "write_mesh",
    "write_vtk",
]

MAX_VERTICES = 200_000


class MeshError(ValueError):
    pass


class MeshBudgetError(MeshError):
    """Vertex budget exceeded (target edge length too small)."""


class MeshFormatError(MeshError):
    pass


class UnreachableVertexError(MeshError):
    pass


# Reference quadrature, exact for degree 2 (cells) and degree 3 (facets).
# Barycentric points with weights summing to one; physical weights are
# weight * euclidean cell measure.
_TRI_QP = np.array([[2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6], [1 / 6, 1 / 6, 2 / 3]])
_TRI_QW = np.array([1 / 3, 1 / 3, 1 / 3])
_G = 0.5 / math.sqrt(3.0)
_SEG_QP = np.array([[0.5 + _G, 0.5 - _G], [0.5 - _G, 0.5 + _G]])
_SEG_QW = np.array([0.5, 0.5])
_PT_QP = np.array([[1.0]])
_PT_QW = np.array([1.0])


class Mesh:
    """Conforming simplicial mesh with tagged boundary.

    Parameters
    ----------
    dim : 1 or 2
    vertices : (nv, dim) chart coordinates
    cells : (nc, dim+1) vertex indices; orientation is fixed on construction
    boundary_facets : (nb, dim) vertex indices (single vertex per facet in 1D)
    boundary_tags : sequence of nb component names
    shape : optional ("disk", r) / ("annulus", r_in, r_out) / ("interval", a, b)
    target_h : requested edge length, if generated
    """

    def __init__(self, dim, vertices, cells, boundary_facets, boundary_tags,
                 shape=None, target_h=None):
        if dim not in (1, 2):
            raise MeshError(f"dim must be 1 or 2, got {dim}")
        self.dim = dim
        self.vertices = np.ascontiguousarray(vertices, dtype=float).reshape(-1, dim)
        self.cells = np.ascontiguousarray(cells, dtype=np.int64).reshape(-1, dim + 1)
        self.boundary_facets = np.ascontiguousarray(
            boundary_facets, dtype=np.int64).reshape(-1, dim)
        self.boundary_tags = list(boundary_tags)
        self.shape = shape
        self.target_h = target_h
        if len(self.boundary_tags) != len(self.boundary_facets):
            raise MeshFormatError("one tag per boundary facet is required")
        if not np.all(np.isfinite(self.vertices)):
            raise MeshFormatError("non-finite vertex coordinates")
        self._fix_orientation()
        self._boundary_cells = self._check_conformity()
        self._build_geometry()
        self._cache = {}

    # -- construction helpers -------------------------------------------------

    def _fix_orientation(self):
        if self.dim == 1:
            x = self.vertices[:, 0]
            flip = x[self.cells[:, 0]] > x[self.cells[:, 1]]
            self.cells[flip] = self.cells[flip][:, ::-1]
        else:
            p = self.vertices[self.cells]
            e1, e2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
            det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
            self.cells[det < 0] = self.cells[det < 0][:, [0, 2, 1]]

    def _check_conformity(self):
        # every interior facet in exactly two cells, boundary facets in one,
        # and the declared boundary must be exactly the once-counted facets
        facet_owner = {}
        counts = Counter()
        for c, cell in enumerate(self.cells):
            subs = ([tuple(sorted((cell[0], cell[1]))), tuple(sorted((cell[1], cell[2]))),
                     tuple(sorted((cell[0], cell[2])))] if self.dim == 2
                    else [(cell[0],), (cell[1],)])
            for f in subs:
                counts[f] += 1
                facet_owner[f] = c
        bad = [f for f, n in counts.items() if n > 2]
        if bad:
            raise MeshFormatError(f"facet shared by more than two cells: {bad[0]}")
        boundary = {f for f, n in counts.items() if n == 1}
        declared = {tuple(sorted(f)) for f in map(tuple, self.boundary_facets)}
        if boundary != declared:
            missing = boundary - declared
            extra = declared - boundary
            raise MeshFormatError(
                f"declared boundary does not match mesh topology "
                f"(missing {len(missing)}, extraneous {len(extra)})")
        return np.array([facet_owner[tuple(sorted(f))]
                         for f in map(tuple, self.boundary_facets)], dtype=np.int64)

    def _build_geometry(self):
        verts, cells = self.vertices, self.cells
        p = verts[cells]                       # (nc, d+1, d)
        if self.dim == 1:
            length = (p[:, 1, 0] - p[:, 0, 0])
            if np.any(length <= 0):
                raise MeshFormatError("degenerate segment cell")
            self.cell_measure = length
            g = 1.0 / length
            self.grads_lambda = np.stack([-g, g], axis=1)[:, :, None]
        else:
            b = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)  # cols = edges
            det = b[:, 0, 0] * b[:, 1, 1] - b[:, 0, 1] * b[:, 1, 0]
            if np.any(np.abs(det) < 1e-300) or np.any(det <= 0):
                raise MeshFormatError("degenerate or inverted triangle cell")
            self.cell_measure = 0.5 * det
            inv = np.empty_like(b)
            inv[:, 0, 0] = b[:, 1, 1] / det
            inv[:, 0, 1] = -b[:, 0, 1] / det
            inv[:, 1, 0] = -b[:, 1, 0] / det
            inv[:, 1, 1] = b[:, 0, 0] / det
            gl = np.empty((len(cells), 3, 2))
            gl[:, 1] = inv[:, 0]               # rows of B^{-1} are grad lambda_1,2
            gl[:, 2] = inv[:, 1]
            gl[:, 0] = -gl[:, 1] - gl[:, 2]
            self.grads_lambda = gl

        # boundary facet geometry: euclidean measure and inward unit normal
        nb = len(self.boundary_facets)
        self.facet_measure = np.ones(nb)
        normals = np.zeros((nb, self.dim))
        for k, f in enumerate(self.boundary_facets):
            cell = self.cells[self._boundary_cells[k]]
            opp = verts[[v for v in cell if v not in f][0]]
            if self.dim == 1:
                x = verts[f[0]]
                n = np.sign(opp - x)
            else:
                a, b2 = verts[f[0]], verts[f[1]]
                e = b2 - a
                self.facet_measure[k] = np.hypot(*e)
                n = np.array([e[1], -e[0]]) / self.facet_measure[k]
                if n @ (opp - 0.5 * (a + b2)) < 0:
                    n = -n
            normals[k] = n
        self.inward_normals = normals

        # quadrature rules (reference barycentric points, weights sum to one)
        self.cell_quad = (_SEG_QP, _SEG_QW) if self.dim == 1 else (_TRI_QP, _TRI_QW)
        self.facet_quad = (_PT_QP, _PT_QW) if self.dim == 1 else (_SEG_QP, _SEG_QW)

        # edge list (unique, for graph distances) and max edge length
        if self.dim == 1:
            edges = cells.copy()
        else:
            e = np.concatenate([cells[:, [0, 1]], cells[:, [1, 2]], cells[:, [0, 2]]])
            edges = np.unique(np.sort(e, axis=1), axis=0)
        self.edges = edges
        self.h_max = float(np.max(np.linalg.norm(
            verts[edges[:, 1]] - verts[edges[:, 0]], axis=1)))

        mask = np.zeros(len(verts), dtype=bool)
        mask[self.boundary_facets.ravel()] = True
        self.is_boundary_vertex = mask

    # -- public surface --------------------------------------------------------

    @property
    def num_vertices(self):
        return len(self.vertices)

    @property
    def num_cells(self):
        return len(self.cells)

    @property
    def boundary_cells(self):
        """Owning cell index for each boundary facet."""
        return self._boundary_cells

    @property
    def conormals(self):
        """Inward unit conormals in the euclidean chart; see sigma_conormals."""
        return self.inward_normals

    @property
    def boundary_vertices(self):
        return np.unique(self.boundary_facets.ravel())

    def vertex_cells(self):
        """List of incident cell indices per vertex (cached)."""
        if "vertex_cells" not in self._cache:
            inc = [[] for _ in range(self.num_vertices)]
            for c, cell in enumerate(self.cells):
                for v in cell:
                    inc[v].append(c)
            self._cache["vertex_cells"] = inc
        return self._cache["vertex_cells"]

    def vertex_neighbors(self):
        """List of adjacent vertex indices per vertex (cached)."""
        if "vertex_neighbors" not in self._cache:
            nbr = [set() for _ in range(self.num_vertices)]
            for a, b in self.edges:
                nbr[a].add(b)
                nbr[b].add(a)
            self._cache["vertex_neighbors"] = [sorted(s) for s in nbr]
        return self._cache["vertex_neighbors"]

    def sigma_conormals(self, metric=None):
        """Inward unit conormals of the boundary facets in the sigma metric.

        The conormal annihilates the facet tangent (sigma-orthogonality) and
        has unit sigma length.  With ``metric=None`` the euclidean inward
        normals are returned.
        """
        if metric is None:
            return self.inward_normals.copy()
        mids = self.facet_midpoints()
        n_cov = self.inward_normals                      # euclidean normal covector
        inv_sigma = metric.sigma_inv(mids)               # (nb, d, d)
        v = np.einsum("kij,kj->ki", inv_sigma, n_cov)
        norm = np.sqrt(np.einsum("ki,kij,kj->k", v, metric.sigma(mids), v))
        return v / norm[:, None]

    def facet_midpoints(self):
        return self.vertices[self.boundary_facets].mean(axis=1)

    def sigma_edge_graph(self, metric=None):
        """Sparse symmetric graph of sigma edge lengths (cached per metric)."""
        key = ("graph", id(metric))
        if key not in self._cache:
            p, q = self.edges[:, 0], self.edges[:, 1]
            t = self.vertices[q] - self.vertices[p]
            if metric is None:
                w = np.linalg.norm(t, axis=1)
            else:
                mid = 0.5 * (self.vertices[p] + self.vertices[q])
                w = np.sqrt(np.einsum("ki,kij,kj->k", t, metric.sigma(mid), t))
            n = self.num_vertices
            g = coo_matrix((np.concatenate([w, w]),
                            (np.concatenate([p, q]), np.concatenate([q, p]))),
                           shape=(n, n)).tocsr()
            self._cache[key] = (g, metric)               # pin metric so id stays valid
        return self._cache[key][0]


@dataclass
class ScalarField:
    """Piecewise-linear nodal field over a mesh."""

    mesh: Mesh
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(-1)
        if len(self.values) != self.mesh.num_vertices:
            raise ValueError("one nodal value per vertex is required")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("nodal values must be finite")

    def with_values(self, values):
        return ScalarField(self.mesh, values)

    @classmethod
    def zeros(cls, mesh):
        return cls(mesh, np.zeros(mesh.num_vertices))


# ---------------------------------------------------------------------------
# Generators


def _merge_rings(ids_a, ids_b):
    """Triangulate the annular band between two concentric vertex rings.

    Both rings are ordered by increasing angle starting at angle zero; the
    band is tiled by walking both rings simultaneously, always advancing the
    ring whose next vertex comes first in angle.  Deterministic.
    """
    na, nb = len(ids_a), len(ids_b)
    tris = []
    i = j = 0
    while i < na or j < nb:
        a_next = (i + 1) / na if i < na else np.inf
        b_next = (j + 1) / nb if j < nb else np.inf
        if a_next <= b_next:
            tris.append((ids_a[i % na], ids_a[(i + 1) % na], ids_b[j % nb]))
            i += 1
        else:
            tris.append((ids_b[j % nb], ids_b[(j + 1) % nb], ids_a[i % na]))
            j += 1
    return tris


def _ring(radius, count):
    th = 2.0 * np.pi * np.arange(count) / count
    return np.column_stack([radius * np.cos(th), radius * np.sin(th)])


def generate_disk_mesh(radius, h, inner_radius=None):
    """Triangulated disk (or annulus) centred at the origin.

    Concentric rings at spacing ~h; ring k of the disk carries 6k vertices so
    triangles stay near-equilateral.  Boundary facets are tagged "outer" (and
    "inner" for an annulus).  Deterministic for fixed inputs.
    """
    if not (radius > 0 and 0 < h < radius):
        raise MeshError("need radius > 0 and 0 < h < radius")
    if inner_radius is None:
        k_rings = max(1, int(round(radius / h)))
        approx_nv = 1 + 3 * k_rings * (k_rings + 1)
        if approx_nv > MAX_VERTICES:
            raise MeshBudgetError(
                f"edge length {h} needs ~{approx_nv} vertices (budget {MAX_VERTICES})")
        verts = [np.zeros((1, 2))]
        ring_ids = [np.array([0])]
        nxt = 1
        for k in range(1, k_rings + 1):
            n = 6 * k
            verts.append(_ring(radius * k / k_rings, n))
            ring_ids.append(np.arange(nxt, nxt + n))
            nxt += n
        vertices = np.vstack(verts)
        cells = [(0, ring_ids[1][j], ring_ids[1][(j + 1) % 6]) for j in range(6)]
        for k in range(1, k_rings):
            cells.extend(_merge_rings(ring_ids[k], ring_ids[k + 1]))
        outer = ring_ids[-1]
        facets = [(outer[j], outer[(j + 1) % len(outer)]) for j in range(len(outer))]
        tags = ["outer"] * len(facets)
        shape = ("disk", radius)
    else:
        if not 0 < inner_radius < radius:
            raise MeshError("need 0 < inner_radius < radius")
        k_rings = max(1, int(round((radius - inner_radius) / h)))
        radii = inner_radius + (radius - inner_radius) * np.arange(k_rings + 1) / k_rings
        counts = [max(6, int(round(2 * np.pi * r / h))) for r in radii]
        if sum(counts) > MAX_VERTICES:
            raise MeshBudgetError("edge length too small for the vertex budget")
        verts, ring_ids, nxt = [], [], 0
        for r, n in zip(radii, counts):
            verts.append(_ring(r, n))
            ring_ids.append(np.arange(nxt, nxt + n))
            nxt += n
        vertices = np.vstack(verts)
        cells = []
        for k in range(k_rings):
            cells.extend(_merge_rings(ring_ids[k], ring_ids[k + 1]))
        inner, outer = ring_ids[0], ring_ids[-1]
        facets = [(outer[j], outer[(j + 1) % len(outer)]) for j in range(len(outer))]
        tags = ["outer"] * len(facets)
        facets += [(inner[j], inner[(j + 1) % len(inner)]) for j in range(len(inner))]
        tags += ["inner"] * len(inner)
        shape = ("annulus", inner_radius, radius)
    return Mesh(2, vertices, cells, facets, tags, shape=shape, target_h=h)


def generate_interval_mesh(a, b, m):
    """Uniform segment mesh of (a, b) with m cells; conormals +1 at a, -1 at b."""
    if not (a < b):
        raise MeshError("need a < b")
    if m < 2:
        raise MeshError("need at least 2 cells")
    if m + 1 > MAX_VERTICES:
        raise MeshBudgetError("cell count exceeds the vertex budget")
    vertices = np.linspace(a, b, m + 1)[:, None]
    cells = np.column_stack([np.arange(m), np.arange(1, m + 1)])
    facets = np.array([[0], [m]])
    return Mesh(1, vertices, cells, facets, ["left", "right"],
                shape=("interval", float(a), float(b)), target_h=(b - a) / m)


# ---------------------------------------------------------------------------
# Distance fields (first-order: shortest paths on the sigma-weighted edge graph)


def geodesic_distance_field(mesh, metric, x0):
    """Graph distance from vertex ``x0`` in sigma edge lengths."""
    if not 0 <= x0 < mesh.num_vertices:
        raise MeshError(f"vertex {x0} out of range")
    g = mesh.sigma_edge_graph(metric)
    d = dijkstra(g, directed=False, indices=x0)
    if not np.all(np.isfinite(d)):
        raise UnreachableVertexError("mesh edge graph is disconnected")
    return ScalarField(mesh, d)


def boundary_distance_field(mesh, metric):
    """Graph distance to the nearest boundary vertex; exactly zero on the boundary."""
    sources = mesh.boundary_vertices
    if len(sources) == 0:
        raise MeshError("mesh has no boundary")
    g = mesh.sigma_edge_graph(metric)
    d = dijkstra(g, directed=False, indices=sources, min_only=True)
    if not np.all(np.isfinite(d)):
        raise UnreachableVertexError("mesh edge graph is disconnected")
    return ScalarField(mesh, d)


# ---------------------------------------------------------------------------
# Domain descriptor (shared by the CLI and refinement studies)


@dataclass
class DomainSpec:
    """Buildable description of the computational domain.

    kind: "disk" | "annulus" | "interval" | "mesh-file".  ``build(level)``
    halves the target edge length (or doubles the cell count) per level.
    """

    kind: str
    params: dict = field(default_factory=dict)

    def build(self, level=0):
        scale = 2 ** level
        if self.kind == "disk":
            return generate_disk_mesh(self.params["radius"], self.params["h"] / scale)
        if self.kind == "annulus":
            return generate_disk_mesh(self.params["radius"], self.params["h"] / scale,
                                      inner_radius=self.params["inner_radius"])
        if self.kind == "interval":
            return generate_interval_mesh(self.params["a"], self.params["b"],
                                          int(self.params["m"] * scale))
        if self.kind == "mesh-file":
            if level != 0:
                raise MeshError("a mesh file cannot be refined")
            return read_mesh(self.params["path"])
        raise MeshError(f"unknown domain kind {self.kind!r}")

    def resolution(self, level=0):
        """Nominal edge length at a refinement level."""
        if self.kind in ("disk", "annulus"):
            return self.params["h"] / 2 ** level
        if self.kind == "interval":
            return (self.params["b"] - self.params["a"]) / (self.params["m"] * 2 ** level)
        return None


# ---------------------------------------------------------------------------
# Plain-text mesh format and legacy VTK export


def write_mesh(mesh, path):
    """Write the VERTICES / CELLS / BOUNDARY plain-text format (0-based ids)."""
    lines = [f"DIM {mesh.dim}", f"VERTICES {mesh.num_vertices}"]
    lines += [" ".join(repr(float(x)) for x in v) for v in mesh.vertices]
    lines.append(f"CELLS {mesh.num_cells}")
    lines += [" ".join(str(i) for i in c) for c in mesh.cells]
    lines.append(f"BOUNDARY {len(mesh.boundary_facets)}")
    lines += [" ".join(str(i) for i in f) + f" {t}"
              for f, t in zip(mesh.boundary_facets, mesh.boundary_tags)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_mesh(path):
    """Read the plain-text mesh format written by `write_mesh`."""
    tokens = []
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if line:
            tokens.append(line.split())
    it = iter(tokens)

    def expect(keyword):
        row = next(it, None)
        if row is None or row[0] != keyword:
            raise MeshFormatError(f"expected {keyword} section")
        return row

    dim = int(expect("DIM")[1])
    nv = int(expect("VERTICES")[1])
    vertices = np.array([[float(x) for x in next(it)] for _ in range(nv)])
    nc = int(expect("CELLS")[1])
    cells = np.array([[int(x) for x in next(it)] for _ in range(nc)])
    nb = int(expect("BOUNDARY")[1])
    facets, tags = [], []
    for _ in range(nb):
        row = next(it)
        facets.append([int(x) for x in row[:dim]])
        tags.append(row[dim] if len(row) > dim else "boundary")
    return Mesh(dim, vertices, cells, np.array(facets, dtype=np.int64), tags)


def write_vtk(mesh, path, point_data=None):
    """Legacy ASCII VTK unstructured grid with optional nodal scalar fields."""
    pts = np.zeros((mesh.num_vertices, 3))
    pts[:, :mesh.dim] = mesh.vertices
    nc, npc = mesh.num_cells, mesh.dim + 1
    out = ["# vtk DataFile Version 3.0", "capgraph export", "ASCII",
           "DATASET UNSTRUCTURED_GRID", f"POINTS {mesh.num_vertices} double"]
    out += [" ".join(repr(float(x)) for x in p) for p in pts]
    out.append(f"CELLS {nc} {nc * (npc + 1)}")
    out += [f"{npc} " + " ".join(str(i) for i in c) for c in mesh.cells]
    out.append(f"CELL_TYPES {nc}")
    out += [str(3 if mesh.dim == 1 else 5)] * nc
    if point_data:
        out.append(f"POINT_DATA {mesh.num_vertices}")
        for name, values in point_data.items():
            out.append(f"SCALARS {name} double 1")
            out.append("LOOKUP_TABLE default")
            out += [repr(float(v)) for v in np.asarray(values).ravel()]
    Path(path).write_text("\n".join(out) + "\n")
