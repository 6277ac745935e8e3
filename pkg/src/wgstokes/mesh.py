"""Simplicial meshes (triangles/tetrahedra) with the geometry the discretization needs.

A mesh is immutable after construction. Facet normals are stored once,
oriented outward with respect to the lower-indexed adjacent element (outward
from the domain on boundary facets); per-element outward normals are obtained
by a sign flip. Element geometry carries the centroid second moment

    m_K = integral_K |x - x_K|^2 dx

in closed form, together with the derived constant d*|K|/m_K that scales the
piecewise weak-gradient basis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "Mesh",
    "ElementGeometry",
    "FacetRecord",
    "MeshStats",
    "MeshError",
    "DuplicateElementError",
    "InvertedElementError",
    "DisconnectedMeshError",
    "UnsupportedCellError",
    "structured_simplex_mesh",
    "generate_structured_tri",
    "generate_structured_tet",
    "load_mesh",
    "write_mesh",
    "mesh_stats",
]


class MeshError(ValueError):
    """Base class for mesh construction/validation failures."""


class DuplicateElementError(MeshError):
    pass


class InvertedElementError(MeshError):
    pass


class DisconnectedMeshError(MeshError):
    pass


class UnsupportedCellError(MeshError):
    pass


@dataclass(frozen=True)
class ElementGeometry:
    """Per-element geometric data.

    normals[i] is the outward unit normal of the facet opposite local
    vertex i; facet_measures and facet_barycenters follow the same local
    numbering. grad_scale is d*volume/second_moment.
    """

    dim: int
    vertices: np.ndarray  # (d+1, d)
    centroid: np.ndarray  # vertex average
    volume: float
    diameter: float
    second_moment: float
    grad_scale: float
    normals: np.ndarray  # (d+1, d), outward
    facet_measures: np.ndarray  # (d+1,)
    facet_barycenters: np.ndarray  # (d+1, d)


@dataclass(frozen=True)
class FacetRecord:
    index: int
    vertices: np.ndarray
    measure: float
    normal: np.ndarray
    barycenter: np.ndarray
    elements: tuple[int, int]  # second is -1 on the boundary
    is_boundary: bool


@dataclass(frozen=True)
class MeshStats:
    h: float
    num_elements: int
    quasi_uniformity: float


def _signed_volumes(vertices: np.ndarray, elements: np.ndarray) -> np.ndarray:
    d = vertices.shape[1]
    v = vertices[elements]
    edges = v[:, 1:, :] - v[:, :1, :]
    return np.linalg.det(edges) / math.factorial(d)


class Mesh:
    """Conforming simplicial mesh of a connected domain in 2D or 3D.

    Stores struct-of-arrays connectivity; `element_geometry` and `facet`
    return per-entity views. Construction validates element orientation,
    conformity, connectedness and nondegeneracy.
    """

    def __init__(self, vertices: np.ndarray, elements: np.ndarray):
        vertices = np.ascontiguousarray(vertices, dtype=float)
        elements = np.ascontiguousarray(elements, dtype=np.int64)
        if vertices.ndim != 2 or vertices.shape[1] not in (2, 3):
            raise MeshError("vertices must be (nv, 2) or (nv, 3)")
        d = vertices.shape[1]
        if elements.ndim != 2 or elements.shape[1] != d + 1:
            raise MeshError(f"elements must be (ne, {d + 1}) for dim {d}")
        self.dim = d
        self.vertices = vertices
        self.elements = elements

        sorted_elems = np.sort(elements, axis=1)
        uniq = np.unique(sorted_elems, axis=0)
        if len(uniq) != len(elements):
            raise DuplicateElementError("mesh contains duplicate elements")

        vols = _signed_volumes(vertices, elements)
        if np.any(vols <= 0.0):
            bad = int(np.argmin(vols))
            raise InvertedElementError(
                f"element {bad} has nonpositive signed volume {vols[bad]:.3e}"
            )
        self.elem_volumes = vols

        ev = vertices[elements]  # (ne, d+1, d)
        self.elem_centroids = ev.mean(axis=1)
        diff = ev[:, :, None, :] - ev[:, None, :, :]
        self.elem_diameters = np.sqrt((diff**2).sum(-1)).max(axis=(1, 2))

        # reject slivers: grad_scale = d|K|/m_K blows up as the moment vanishes
        hmax = float(self.elem_diameters.max())
        if np.any(vols < 1e-14 * hmax**d):
            bad = int(np.argmin(vols))
            raise InvertedElementError(f"element {bad} is degenerate")

        self._build_facets()
        self._check_connected()
        self._geom_cache: dict[int, ElementGeometry] = {}

    # ---- connectivity ----------------------------------------------------

    def _build_facets(self) -> None:
        d, ne = self.dim, len(self.elements)
        # local facet i consists of the element vertices excluding position i
        keep = np.array([[j for j in range(d + 1) if j != i] for i in range(d + 1)])
        local = self.elements[:, keep]  # (ne, d+1, d)
        keys = np.sort(local.reshape(ne * (d + 1), d), axis=1)
        facets, inverse, counts = np.unique(
            keys, axis=0, return_inverse=True, return_counts=True
        )
        if np.any(counts > 2):
            raise MeshError("non-conforming mesh: facet shared by more than 2 elements")
        self.facets = facets
        self.elem_facets = inverse.reshape(ne, d + 1)
        nf = len(facets)

        facet_elems = np.full((nf, 2), -1, dtype=np.int64)
        elem_ids = np.repeat(np.arange(ne), d + 1)
        order = np.argsort(inverse, kind="stable")
        sorted_f = inverse[order]
        sorted_e = elem_ids[order]
        starts = np.searchsorted(sorted_f, np.arange(nf))
        facet_elems[:, 0] = sorted_e[starts]
        second = counts == 2
        facet_elems[second, 1] = sorted_e[starts[second] + 1]
        # normal convention keys off the lower-indexed adjacent element
        both = facet_elems[second]
        facet_elems[second] = np.sort(both, axis=1)
        self.facet_elems = facet_elems
        self.boundary_facets = np.flatnonzero(~second)
        self.interior_facets = np.flatnonzero(second)

        fv = self.vertices[facets]  # (nf, d, d)
        self.facet_barycenters = fv.mean(axis=1)
        if d == 2:
            t = fv[:, 1] - fv[:, 0]
            self.facet_measures = np.linalg.norm(t, axis=1)
            normals = np.column_stack([t[:, 1], -t[:, 0]])
        else:
            c = np.cross(fv[:, 1] - fv[:, 0], fv[:, 2] - fv[:, 0])
            self.facet_measures = 0.5 * np.linalg.norm(c, axis=1)
            normals = c
        normals /= np.linalg.norm(normals, axis=1)[:, None]
        # flip so each normal points away from its first adjacent element
        sign = np.sign(
            np.einsum(
                "fd,fd->f",
                normals,
                self.facet_barycenters - self.elem_centroids[facet_elems[:, 0]],
            )
        )
        self.facet_normals = normals * sign[:, None]

    def _check_connected(self) -> None:
        ne = len(self.elements)
        if ne == 1:
            return
        from scipy.sparse import coo_matrix
        from scipy.sparse.csgraph import connected_components

        pairs = self.facet_elems[self.interior_facets]
        if len(pairs) == 0:
            raise DisconnectedMeshError("mesh has no interior facets")
        g = coo_matrix(
            (np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(ne, ne)
        )
        ncomp, _ = connected_components(g, directed=False)
        if ncomp != 1:
            raise DisconnectedMeshError(
                f"element adjacency graph has {ncomp} components"
            )

    # ---- queries ---------------------------------------------------------

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_elements(self) -> int:
        return len(self.elements)

    @property
    def num_facets(self) -> int:
        return len(self.facets)

    def element_sign(self, k: int, local_facet: int) -> float:
        """+1 if the stored facet normal is outward for element k, else -1."""
        f = self.elem_facets[k, local_facet]
        return 1.0 if self.facet_elems[f, 0] == k else -1.0

    def facet(self, f: int) -> FacetRecord:
        return FacetRecord(
            index=f,
            vertices=self.facets[f],
            measure=float(self.facet_measures[f]),
            normal=self.facet_normals[f],
            barycenter=self.facet_barycenters[f],
            elements=(int(self.facet_elems[f, 0]), int(self.facet_elems[f, 1])),
            is_boundary=self.facet_elems[f, 1] < 0,
        )

    def element_geometry(self, k: int) -> ElementGeometry:
        geom = self._geom_cache.get(k)
        if geom is not None:
            return geom
        d = self.dim
        verts = self.vertices[self.elements[k]]
        centroid = self.elem_centroids[k]
        vol = float(self.elem_volumes[k])
        # integral_K |x - x_K|^2 dx over a simplex, in closed form:
        # with x_K the vertex average this equals |K|/((d+1)(d+2)) * sum_i |v_i - x_K|^2
        r2 = float(((verts - centroid) ** 2).sum())
        moment = vol * r2 / ((d + 1) * (d + 2))
        fidx = self.elem_facets[k]
        signs = np.array([self.element_sign(k, i) for i in range(d + 1)])
        geom = ElementGeometry(
            dim=d,
            vertices=verts,
            centroid=centroid,
            volume=vol,
            diameter=float(self.elem_diameters[k]),
            second_moment=moment,
            grad_scale=d * vol / moment,
            normals=self.facet_normals[fidx] * signs[:, None],
            facet_measures=self.facet_measures[fidx].copy(),
            facet_barycenters=self.facet_barycenters[fidx].copy(),
        )
        self._geom_cache[k] = geom
        return geom


# ---- generators ----------------------------------------------------------


def generate_structured_tri(n: int) -> Mesh:
    """Unit square, n x n cells, each split into 2 triangles along the x=y diagonal."""
    if n < 1:
        raise MeshError("n must be >= 1")
    xs = np.linspace(0.0, 1.0, n + 1)
    gx, gy = np.meshgrid(xs, xs, indexing="ij")
    vertices = np.column_stack([gx.ravel(), gy.ravel()])

    def vid(i, j):
        return i * (n + 1) + j

    elements = []
    for i in range(n):
        for j in range(n):
            a, b = vid(i, j), vid(i + 1, j)
            c, d = vid(i + 1, j + 1), vid(i, j + 1)
            elements.append([a, b, c])
            elements.append([a, c, d])
    return Mesh(vertices, np.array(elements))


def generate_structured_tet(n: int) -> Mesh:
    """Unit cube, n^3 cells, each split into 6 tetrahedra (path split).

    Tet p of a cell traverses the cube from (0,0,0) to (1,1,1) along the
    axis order given by permutation p; odd permutations are reordered so
    every tetrahedron has positive signed volume. The split is conforming
    across cells.
    """
    if n < 1:
        raise MeshError("n must be >= 1")
    import itertools

    xs = np.linspace(0.0, 1.0, n + 1)
    gx, gy, gz = np.meshgrid(xs, xs, xs, indexing="ij")
    vertices = np.column_stack([gx.ravel(), gy.ravel(), gz.ravel()])

    def vid(i, j, k):
        return (i * (n + 1) + j) * (n + 1) + k

    perms = list(itertools.permutations(range(3)))
    elements = []
    for i in range(n):
        for j in range(n):
            for k in range(n):
                base = np.array([i, j, k])
                for perm in perms:
                    corners = [base.copy()]
                    cur = base.copy()
                    for axis in perm:
                        cur = cur.copy()
                        cur[axis] += 1
                        corners.append(cur)
                    tet = [vid(*c) for c in corners]
                    # parity of the permutation decides the orientation
                    inv = sum(
                        1
                        for a in range(3)
                        for b in range(a + 1, 3)
                        if perm[a] > perm[b]
                    )
                    if inv % 2 == 1:
                        tet[1], tet[2] = tet[2], tet[1]
                    elements.append(tet)
    return Mesh(vertices, np.array(elements))


def structured_simplex_mesh(dim: int, n: int) -> Mesh:
    """Structured mesh of the unit square (dim=2) or unit cube (dim=3)."""
    if dim == 2:
        return generate_structured_tri(n)
    if dim == 3:
        return generate_structured_tet(n)
    raise MeshError(f"dim must be 2 or 3, got {dim}")


# ---- io ------------------------------------------------------------------


def write_mesh(mesh: Mesh, path: str | Path) -> None:
    """Native text format: `dim nv ne` header, nv coordinate lines, ne 1-based index lines."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        fh.write(f"{mesh.dim} {mesh.num_vertices} {mesh.num_elements}\n")
        for v in mesh.vertices:
            fh.write(" ".join(f"{c:.17g}" for c in v) + "\n")
        for e in mesh.elements:
            fh.write(" ".join(str(i + 1) for i in e) + "\n")


def _load_native(tokens: list[str]) -> Mesh:
    it = iter(tokens)
    try:
        dim = int(next(it))
        nv = int(next(it))
        ne = int(next(it))
        vertices = np.array(
            [[float(next(it)) for _ in range(dim)] for _ in range(nv)]
        )
        elements = (
            np.array(
                [[int(next(it)) for _ in range(dim + 1)] for _ in range(ne)]
            )
            - 1
        )
    except (StopIteration, ValueError) as exc:
        raise MeshError(f"malformed native mesh file: {exc}") from exc
    return Mesh(vertices, elements)


def _load_gmsh(text: str) -> Mesh:
    lines = [ln.strip() for ln in text.splitlines()]

    def section(name):
        try:
            a = lines.index(f"${name}")
            b = lines.index(f"$End{name}")
        except ValueError as exc:
            raise MeshError(f"gmsh file missing ${name} section") from exc
        return lines[a + 1 : b]

    fmt = section("MeshFormat")[0].split()
    if not fmt[0].startswith("2.2"):
        raise MeshError(f"unsupported gmsh format version {fmt[0]}")

    node_lines = section("Nodes")
    nn = int(node_lines[0])
    coords = np.empty((nn, 3))
    ids = {}
    for row, ln in enumerate(node_lines[1 : 1 + nn]):
        parts = ln.split()
        ids[int(parts[0])] = row
        coords[row] = [float(p) for p in parts[1:4]]

    elem_lines = section("Elements")
    ne = int(elem_lines[0])
    cells = []
    cell_type = None
    for ln in elem_lines[1 : 1 + ne]:
        parts = ln.split()
        etype, ntags = int(parts[1]), int(parts[2])
        if etype not in (2, 4):
            raise UnsupportedCellError(f"gmsh element type {etype} not supported")
        if cell_type is None:
            cell_type = etype
        elif cell_type != etype:
            raise UnsupportedCellError("mixed triangle/tetrahedron gmsh file")
        conn = [ids[int(p)] for p in parts[3 + ntags :]]
        cells.append(conn)
    if cell_type is None:
        raise MeshError("gmsh file contains no elements")
    dim = 2 if cell_type == 2 else 3
    if dim == 2 and np.max(np.abs(coords[:, 2])) > 1e-12:
        raise MeshError("triangle mesh with nonzero z coordinates")
    return Mesh(coords[:, :dim], np.array(cells))


def load_mesh(path: str | Path, format: str | None = None) -> Mesh:
    """Read a mesh from the native text format or a Gmsh MSH 2.2 ASCII file."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if format is None:
        format = "gmsh" if text.lstrip().startswith("$MeshFormat") else "native"
    if format == "native":
        return _load_native(text.split())
    if format == "gmsh":
        return _load_gmsh(text)
    raise MeshError(f"unknown mesh format {format!r}")


def mesh_stats(mesh: Mesh) -> MeshStats:
    dia = mesh.elem_diameters
    return MeshStats(
        h=float(dia.max()),
        num_elements=mesh.num_elements,
        quasi_uniformity=float(dia.max() / dia.min()),
    )
