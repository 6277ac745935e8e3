"""Single-element calculus of the lowest-order weak Galerkin method.

Unknowns are constants on element interiors and constants on facets. The
weak gradient of such a function lives in the lowest-order Raviart-Thomas
space RT0(K) = {a + b(x - x_K)} and has the closed-form basis

    grad_w of the interior basis function:  -c * (x - x_K)
    grad_w of facet basis function i:        c/(d+1) * (x - x_K) + (|e_i|/|K|) n_i

with c = d|K|/m_K and m_K the centroid second moment. The lifting operator
maps facet values to the unique RT0(K) field whose facet-mean normal traces
match; it feeds the load term and makes the velocity error independent of
the pressure.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import ElementGeometry, Mesh
from .quadrature import facet_rule, map_to_physical, simplex_rule

__all__ = [
    "RT0Function",
    "WGField",
    "PressureField",
    "weak_gradient_interior_basis",
    "weak_gradient_facet_basis",
    "weak_gradient_scalar",
    "weak_gradient_field",
    "field_weak_gradients",
    "weak_divergence",
    "lifting_apply",
    "facet_projection_rule",
    "project_boundary_datum",
    "project_interior",
    "interpolate_field",
]


@dataclass(frozen=True)
class RT0Function:
    """a + b*(x - centroid) on one element; a may be a scalar-field gradient (d,)
    or, for vector fields, still a (d,) array with scalar b."""

    a: np.ndarray
    b: float
    centroid: np.ndarray

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return self.a + self.b * (x - self.centroid)

    @property
    def divergence(self) -> float:
        return len(self.centroid) * self.b


@dataclass
class WGField:
    """Velocity-type field: d-vector values on interiors and facets.

    Facet unknowns live on interior facets; boundary facets carry known
    data and are stored separately. A field with boundary == 0 belongs to
    the homogeneous space.
    """

    dim: int
    interior: np.ndarray  # (ne, d)
    facet: np.ndarray  # (n interior facets, d)
    boundary: np.ndarray  # (n boundary facets, d)

    def __post_init__(self):
        assert self.interior.shape[1] == self.dim
        assert self.facet.ndim == 2 and self.boundary.ndim == 2


@dataclass
class PressureField:
    values: np.ndarray  # one constant per element


def weak_gradient_interior_basis(geom: ElementGeometry, x: np.ndarray) -> np.ndarray:
    """Weak gradient of the interior basis function at point(s) x."""
    x = np.asarray(x, dtype=float)
    return -geom.grad_scale * (x - geom.centroid)


def weak_gradient_facet_basis(
    geom: ElementGeometry, i: int, x: np.ndarray
) -> np.ndarray:
    """Weak gradient of the basis function of facet i (opposite local vertex i)."""
    x = np.asarray(x, dtype=float)
    d = geom.dim
    radial = geom.grad_scale / (d + 1) * (x - geom.centroid)
    shift = (geom.facet_measures[i] / geom.volume) * geom.normals[i]
    return radial + shift


def weak_gradient_scalar(
    geom: ElementGeometry, interior: float, facet_values: np.ndarray
) -> RT0Function:
    """Weak gradient of a scalar unknown with the given interior/facet values."""
    facet_values = np.asarray(facet_values, dtype=float)
    d = geom.dim
    a = (geom.facet_measures[:, None] * geom.normals * facet_values[:, None]).sum(
        axis=0
    ) / geom.volume
    b = geom.grad_scale * (facet_values.sum() / (d + 1) - interior)
    return RT0Function(a=a, b=float(b), centroid=geom.centroid)


def weak_gradient_field(
    geom: ElementGeometry, interior: np.ndarray, facet_values: np.ndarray
) -> list[RT0Function]:
    """Componentwise weak gradients of a vector unknown.

    interior: (m,) and facet_values: (d+1, m); returns one RT0Function per
    component (row r of the weak gradient).
    """
    interior = np.atleast_1d(np.asarray(interior, dtype=float))
    facet_values = np.asarray(facet_values, dtype=float)
    if facet_values.ndim == 1:
        facet_values = facet_values[:, None]
    return [
        weak_gradient_scalar(geom, float(interior[r]), facet_values[:, r])
        for r in range(len(interior))
    ]


def field_weak_gradients(mesh: Mesh, field: WGField) -> tuple[np.ndarray, np.ndarray]:
    """Weak-gradient coefficients of a velocity field on every element at once.

    Returns (a, b) with a[k, r] the constant part and b[k, r] the radial
    coefficient of component r on element k, so the weak gradient of
    component r is a[k, r] + b[k, r] * (x - x_K). Boundary facets use the
    known data stored on the field.
    """
    d = mesh.dim
    ne = mesh.num_elements
    islot = np.full(mesh.num_facets, -1, dtype=np.int64)
    islot[mesh.interior_facets] = np.arange(len(mesh.interior_facets))
    bslot = np.full(mesh.num_facets, -1, dtype=np.int64)
    bslot[mesh.boundary_facets] = np.arange(len(mesh.boundary_facets))

    fidx = mesh.elem_facets  # (ne, d+1)
    inner_vals = field.facet if len(field.facet) else np.zeros((1, d))
    bnd_vals = field.boundary if len(field.boundary) else np.zeros((1, d))
    vals = np.where(
        (islot[fidx] >= 0)[..., None],
        inner_vals[np.clip(islot[fidx], 0, None)],
        bnd_vals[np.clip(bslot[fidx], 0, None)],
    )  # (ne, d+1, d)

    sign = np.where(mesh.facet_elems[fidx, 0] == np.arange(ne)[:, None], 1.0, -1.0)
    normals = mesh.facet_normals[fidx] * sign[..., None]
    meas = mesh.facet_measures[fidx]

    vols = mesh.elem_volumes
    ev = mesh.vertices[mesh.elements]
    sq = ((ev - mesh.elem_centroids[:, None, :]) ** 2).sum(axis=(1, 2))
    second_moment = vols * sq / ((d + 1) * (d + 2))
    grad_scale = d * vols / second_moment

    a = np.einsum("ni,nir,nic->nrc", meas, vals, normals) / vols[:, None, None]
    b = grad_scale[:, None] * (vals.sum(axis=1) / (d + 1) - field.interior)
    return a, b


def weak_divergence(geom: ElementGeometry, facet_values: np.ndarray) -> float:
    """Constant value of the weak divergence from facet vectors ((d+1, d) array).

    Depends on facet values only; the interior value drops out.
    """
    facet_values = np.asarray(facet_values, dtype=float)
    flux = np.einsum("i,id,id->", geom.facet_measures, facet_values, geom.normals)
    return float(flux / geom.volume)


def _centroid_facet_distances(geom: ElementGeometry) -> np.ndarray:
    # (x - x_K).n_i is constant on facet i; equals d|K|/((d+1)|e_i|)
    d = geom.dim
    return d * geom.volume / ((d + 1) * geom.facet_measures)


def lifting_apply(geom: ElementGeometry, facet_values: np.ndarray) -> RT0Function:
    """RT0(K) field whose facet-mean normal traces equal those of the facet data.

    Solves the (d+1)x(d+1) system  a.n_i + b*delta_i = v_i.n_i  where
    delta_i is the constant value of (x - x_K).n_i on facet i. The output
    depends on facet values only.
    """
    facet_values = np.asarray(facet_values, dtype=float)
    d = geom.dim
    delta = _centroid_facet_distances(geom)
    m = np.column_stack([geom.normals, delta])
    rhs = np.einsum("id,id->i", facet_values, geom.normals)
    try:
        coef = np.linalg.solve(m, rhs)
    except np.linalg.LinAlgError as exc:  # unreachable for nondegenerate K
        raise RuntimeError(f"singular lifting system on element: {exc}") from exc
    return RT0Function(a=coef[:d], b=float(coef[d]), centroid=geom.centroid)


_FACET_METHODS = ("barycenter", "gauss2", "gauss3")


def facet_projection_rule(dim: int, method: str) -> tuple[np.ndarray, np.ndarray]:
    """Barycentric points/weights on the facet simplex for a projection method.

    barycenter: single midpoint evaluation (second-order facet means);
    gauss2/gauss3: short Gauss rules (2/3 points on edges, degree-2/4 rules
    on triangular facets).
    """
    if method == "barycenter":
        n = dim  # facet simplex has dim vertices
        return np.full((1, n), 1.0 / n), np.array([1.0])
    if method == "gauss2":
        return facet_rule(dim, 3 if dim == 2 else 2)
    if method == "gauss3":
        return facet_rule(dim, 5 if dim == 2 else 4)
    raise ValueError(f"unknown facet projection method {method!r}; use one of {_FACET_METHODS}")


def project_boundary_datum(g, facet_vertices: np.ndarray, method: str = "barycenter"):
    """Approximate facet mean of g on the facet spanned by facet_vertices ((dim, d))."""
    facet_vertices = np.asarray(facet_vertices, dtype=float)
    dim = facet_vertices.shape[1]
    bary, w = facet_projection_rule(dim, method)
    pts = map_to_physical(facet_vertices, bary)
    vals = np.array([np.asarray(g(p), dtype=float) for p in pts])
    return np.tensordot(w, vals, axes=1)


def project_interior(u, geom: ElementGeometry, degree: int = 2):
    """Element average of u by a volume rule exact to the given degree."""
    bary, w = simplex_rule(geom.dim, degree)
    pts = map_to_physical(geom.vertices, bary)
    vals = np.array([np.asarray(u(p), dtype=float) for p in pts])
    return np.tensordot(w, vals, axes=1)


def interpolate_field(
    mesh: Mesh,
    u,
    facet_method: str = "gauss3",
    interior_degree: int = 4,
) -> WGField:
    """Interpolate a vector function into the discrete space by local averaging."""
    d = mesh.dim
    interior = np.array(
        [
            project_interior(u, mesh.element_geometry(k), degree=interior_degree)
            for k in range(mesh.num_elements)
        ]
    )
    bary, w = facet_projection_rule(d, facet_method)

    def facet_mean(f):
        pts = map_to_physical(mesh.vertices[mesh.facets[f]], bary)
        vals = np.array([np.asarray(u(p), dtype=float) for p in pts])
        return w @ vals

    facet = np.array([facet_mean(f) for f in mesh.interior_facets])
    boundary = np.array([facet_mean(f) for f in mesh.boundary_facets])
    if len(mesh.interior_facets) == 0:
        facet = np.zeros((0, d))
    return WGField(dim=d, interior=interior, facet=facet, boundary=boundary)
