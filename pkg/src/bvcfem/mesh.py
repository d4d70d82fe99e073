"""Structured meshes and boundary facet geometry.

Annulus triangulations, inside-the-curve staircase quad grids, boundary
facet extraction with outward discrete normals, and per-quadrature-point
signed distances / pullback points to the true boundary.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import geometry
from .geometry import ImplicitDomain, NoIntersection


class MeshError(Exception):
    pass


class InvalidResolution(MeshError):
    pass


class EmptyMesh(MeshError):
    pass


# Local edges in counterclockwise order, per cell kind.
TRI_EDGES = ((0, 1), (1, 2), (2, 0))
QUAD_EDGES = ((0, 1), (1, 2), (2, 3), (3, 0))


@dataclass
class BoundaryFacet:
    """One boundary edge of one cell, with its outward discrete normal.

    After precompute_boundary_geometry the facet also carries Gauss points
    (params s in [0,1] along the edge, physical points, weights including the
    facet length), the discrete signed distance rho at each point and the
    pullback point on the true boundary.
    """

    cell: int
    local_edge: int
    endpoints: tuple
    n_h: np.ndarray
    length: float
    s: np.ndarray | None = None
    points: np.ndarray | None = None
    weights: np.ndarray | None = None
    rho: np.ndarray | None = None
    pullback: np.ndarray | None = None


@dataclass
class Mesh:
    vertices: np.ndarray            # (nno, 2)
    cells: np.ndarray               # (nc, 3) or (nc, 4), CCW
    cell_kind: str                  # "triangle" | "quad"
    boundary_facets: list = field(default_factory=list)
    _edge_table: dict | None = field(default=None, repr=False)
    _affine: tuple | None = field(default=None, repr=False)

    @property
    def nno(self) -> int:
        return len(self.vertices)

    @property
    def h(self) -> float:
        return 1.0 / np.sqrt(self.nno)

    @property
    def num_cells(self) -> int:
        return len(self.cells)

    def local_edges(self):
        return TRI_EDGES if self.cell_kind == "triangle" else QUAD_EDGES

    def edge_table(self):
        """Map sorted vertex pair -> edge index, built once."""
        if self._edge_table is None:
            table = {}
            for cell in self.cells:
                for a, b in self.local_edges():
                    key = (min(cell[a], cell[b]), max(cell[a], cell[b]))
                    if key not in table:
                        table[key] = len(table)
            self._edge_table = table
        return self._edge_table

    @property
    def num_edges(self) -> int:
        return len(self.edge_table())

    def affine_maps(self):
        """Per-cell affine reference maps x = origin + J @ xi.

        Returns (origins (nc,2), J (nc,2,2), Jinv (nc,2,2), detJ (nc,)).
        Valid for straight triangles and axis-aligned (parallelogram) quads.
        """
        if self._affine is None:
            v = self.vertices[self.cells]
            origins = v[:, 0, :]
            if self.cell_kind == "triangle":
                J = np.stack([v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]], axis=-1)
            else:
                J = np.stack([v[:, 1] - v[:, 0], v[:, 3] - v[:, 0]], axis=-1)
            detJ = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
            Jinv = np.empty_like(J)
            Jinv[:, 0, 0] = J[:, 1, 1] / detJ
            Jinv[:, 0, 1] = -J[:, 0, 1] / detJ
            Jinv[:, 1, 0] = -J[:, 1, 0] / detJ
            Jinv[:, 1, 1] = J[:, 0, 0] / detJ
            self._affine = (origins, J, Jinv, detJ)
        return self._affine

    def cell_areas(self) -> np.ndarray:
        _, _, _, detJ = self.affine_maps()
        scale = 0.5 if self.cell_kind == "triangle" else 1.0
        return scale * detJ


def _extract_boundary_facets(vertices, cells, cell_kind):
    edges = TRI_EDGES if cell_kind == "triangle" else QUAD_EDGES
    seen = {}
    for c, cell in enumerate(cells):
        for e, (a, b) in enumerate(edges):
            key = (min(cell[a], cell[b]), max(cell[a], cell[b]))
            seen.setdefault(key, []).append((c, e))
    facets = []
    for c, cell in enumerate(cells):
        for e, (a, b) in enumerate(edges):
            key = (min(cell[a], cell[b]), max(cell[a], cell[b]))
            if len(seen[key]) != 1:
                continue
            p, q = int(cell[a]), int(cell[b])
            edge_vec = vertices[q] - vertices[p]
            length = float(np.hypot(edge_vec[0], edge_vec[1]))
            # CCW cells: outward normal is the edge direction rotated -90 deg.
            n_h = np.array([edge_vec[1], -edge_vec[0]]) / length
            facets.append(
                BoundaryFacet(cell=c, local_edge=e, endpoints=(p, q), n_h=n_h, length=length)
            )
    return facets


def mesh_from_arrays(vertices, cells, cell_kind: str) -> Mesh:
    """Build a Mesh from raw arrays, extracting boundary facets.

    Cells must be counterclockwise; raises MeshError otherwise.
    """
    vertices = np.asarray(vertices, dtype=float)
    cells = np.asarray(cells, dtype=np.int64)
    mesh = Mesh(vertices=vertices, cells=cells, cell_kind=cell_kind)
    areas = mesh.cell_areas()
    if np.any(areas <= 0):
        raise MeshError(f"{int(np.sum(areas <= 0))} cells are not counterclockwise")
    mesh.boundary_facets = _extract_boundary_facets(vertices, cells, cell_kind)
    return mesh


def build_annulus_mesh(n_theta: int, n_r: int, inner: float = 0.25, outer: float = 0.75) -> Mesh:
    """Structured triangulation of the ring inner <= r <= outer.

    Vertices sit on n_r+1 exact circles at n_theta equispaced angles; each
    polar quad is split into two triangles along the (i+j)-parity diagonal.
    """
    if n_theta < 8 or n_r < 2:
        raise InvalidResolution(f"need n_theta >= 8 and n_r >= 2, got ({n_theta}, {n_r})")
    radii = inner + (outer - inner) * np.arange(n_r + 1) / n_r
    theta = 2.0 * np.pi * np.arange(n_theta) / n_theta
    vertices = np.empty((n_theta * (n_r + 1), 2))
    for j, r in enumerate(radii):
        vertices[j * n_theta : (j + 1) * n_theta, 0] = r * np.cos(theta)
        vertices[j * n_theta : (j + 1) * n_theta, 1] = r * np.sin(theta)

    cells = np.empty((2 * n_theta * n_r, 3), dtype=np.int64)
    k = 0
    for j in range(n_r):
        for i in range(n_theta):
            i2 = (i + 1) % n_theta
            # CCW polar quad: inner at theta_i, outer at theta_i, outer at
            # theta_{i+1}, inner at theta_{i+1}.
            a = j * n_theta + i
            b = (j + 1) * n_theta + i
            c = (j + 1) * n_theta + i2
            d = j * n_theta + i2
            if (i + j) % 2 == 0:
                cells[k] = (a, b, c)
                cells[k + 1] = (a, c, d)
            else:
                cells[k] = (a, b, d)
                cells[k + 1] = (b, c, d)
            k += 2
    return mesh_from_arrays(vertices, cells, "triangle")


def build_staircase_mesh(n: int, domain: ImplicitDomain) -> Mesh:
    """Axis-aligned staircase mesh of square cells inside a curved domain.

    A uniform grid of side 4/n covers [-2,2] x [-1,1]; a cell is kept iff
    all four corners are strictly inside (level_set < 0).  Boundary facets
    of the kept union form the staircase with axis-aligned normals.
    """
    if n < 8:
        raise InvalidResolution(f"need n >= 8, got {n}")
    if n % 2 != 0:
        raise InvalidResolution(f"need even n (square cells on [-2,2]x[-1,1]), got {n}")
    ny = n // 2
    a = 4.0 / n
    xs = -2.0 + a * np.arange(n + 1)
    ys = -1.0 + a * np.arange(ny + 1)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    grid_pts = np.stack([gx, gy], axis=-1)
    inside = domain.level_set(grid_pts.reshape(-1, 2)).reshape(n + 1, ny + 1) < 0.0

    keep = inside[:-1, :-1] & inside[1:, :-1] & inside[1:, 1:] & inside[:-1, 1:]
    if not np.any(keep):
        raise EmptyMesh("no grid cell lies strictly inside the domain")

    vid = -np.ones((n + 1, ny + 1), dtype=np.int64)
    verts = []
    cells = []
    for j in range(ny):
        for i in range(n):
            if not keep[i, j]:
                continue
            corner_ids = []
            for ci, cj in ((i, j), (i + 1, j), (i + 1, j + 1), (i, j + 1)):
                if vid[ci, cj] < 0:
                    vid[ci, cj] = len(verts)
                    verts.append((xs[ci], ys[cj]))
                corner_ids.append(vid[ci, cj])
            cells.append(corner_ids)
    return mesh_from_arrays(np.array(verts), np.array(cells, dtype=np.int64), "quad")


def build_square_mesh(n: int, cell_kind: str = "triangle") -> Mesh:
    """Uniform mesh of the unit square (patch-test fixture)."""
    xs = np.linspace(0.0, 1.0, n + 1)
    gx, gy = np.meshgrid(xs, xs, indexing="ij")
    vertices = np.stack([gx.ravel(), gy.ravel()], axis=-1)

    def vidx(i, j):
        return i * (n + 1) + j

    cells = []
    for i in range(n):
        for j in range(n):
            a, b = vidx(i, j), vidx(i + 1, j)
            c, d = vidx(i + 1, j + 1), vidx(i, j + 1)
            if cell_kind == "quad":
                cells.append((a, b, c, d))
            elif (i + j) % 2 == 0:
                cells.extend([(a, b, c), (a, c, d)])
            else:
                cells.extend([(a, b, d), (b, c, d)])
    return mesh_from_arrays(vertices, np.array(cells, dtype=np.int64), cell_kind)


def gauss_01(n: int):
    """n-point Gauss-Legendre rule on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def precompute_boundary_geometry(mesh: Mesh, domain: ImplicitDomain, n_gauss: int) -> Mesh:
    """Attach Gauss points, rho_h and pullback points to every boundary facet.

    n_gauss is the number of Gauss points per facet (>= 2).  Ray distances
    are computed in one batch across all facets; a missing intersection is
    re-raised with the offending facet attached.
    """
    if n_gauss < 2:
        raise InvalidResolution(f"need at least 2 Gauss points per facet, got {n_gauss}")
    facets = mesh.boundary_facets
    if not facets:
        return mesh
    s, w = gauss_01(n_gauss)
    pts = np.empty((len(facets), n_gauss, 2))
    nrms = np.empty((len(facets), n_gauss, 2))
    for k, f in enumerate(facets):
        p = mesh.vertices[f.endpoints[0]]
        q = mesh.vertices[f.endpoints[1]]
        pts[k] = p[None, :] + s[:, None] * (q - p)[None, :]
        nrms[k] = f.n_h
    flat_pts = pts.reshape(-1, 2)
    flat_nrm = nrms.reshape(-1, 2)
    try:
        rho = geometry.ray_distance_batch(domain, flat_pts, flat_nrm)
    except NoIntersection as exc:
        raise NoIntersection(f"boundary geometry failed: {exc}") from exc
    pullback = flat_pts + rho[:, None] * flat_nrm
    rho = rho.reshape(len(facets), n_gauss)
    pullback = pullback.reshape(len(facets), n_gauss, 2)
    for k, f in enumerate(facets):
        f.s = s.copy()
        f.points = pts[k]
        f.weights = w * f.length
        f.rho = rho[k]
        f.pullback = pullback[k]
    return mesh


def mesh_sequence(kind: str, levels: int, domain: ImplicitDomain | None = None):
    """Refinement ladder: annulus (16,4) x 2^l or staircase n = 16 x 2^l."""
    if levels < 3:
        raise InvalidResolution(f"need at least 3 levels, got {levels}")
    meshes = []
    for lvl in range(levels):
        if kind == "annulus":
            meshes.append(build_annulus_mesh(16 * 2**lvl, 4 * 2**lvl))
        elif kind == "staircase":
            dom = domain if domain is not None else geometry.make_ellipse_domain()
            meshes.append(build_staircase_mesh(16 * 2**lvl, dom))
        else:
            raise MeshError(f"unknown mesh sequence kind {kind!r}")
    return meshes


def euler_characteristic(mesh: Mesh) -> int:
    return mesh.nno - mesh.num_edges + mesh.num_cells


def boundary_length(mesh: Mesh) -> float:
    return float(sum(f.length for f in mesh.boundary_facets))


def export_mesh(mesh: Mesh, path) -> None:
    """Plain-text dump: header then one line per vertex, cell and facet."""
    kind = "tri" if mesh.cell_kind == "triangle" else "quad"
    with open(path, "w") as fh:
        fh.write(
            f"vertices {mesh.nno} cells {mesh.num_cells} "
            f"facets {len(mesh.boundary_facets)} kind {kind}\n"
        )
        for v in mesh.vertices:
            fh.write(f"{v[0]:.17g} {v[1]:.17g}\n")
        for cell in mesh.cells:
            fh.write(" ".join(str(int(i)) for i in cell) + "\n")
        for f in mesh.boundary_facets:
            fh.write(f"{f.cell} {f.local_edge} {f.endpoints[0]} {f.endpoints[1]}\n")


def load_mesh(path) -> Mesh:
    """Read a mesh written by export_mesh."""
    with open(path) as fh:
        header = fh.readline().split()
        nv, nc, nf = int(header[1]), int(header[3]), int(header[5])
        kind = "triangle" if header[7] == "tri" else "quad"
        vertices = np.array([[float(t) for t in fh.readline().split()] for _ in range(nv)])
        cells = np.array(
            [[int(t) for t in fh.readline().split()] for _ in range(nc)], dtype=np.int64
        )
        mesh = mesh_from_arrays(vertices, cells, kind)
        for _ in range(nf):
            fh.readline()  # facets are re-derived from the cells
    return mesh
