"""Global assembly of the velocity stiffness block, the divergence block and
the right-hand sides, plus consistency enforcement of the singular system.

The assembled saddle system is kept in the rescaled form

    [ A   -B^T ] [ mu*u ]   [ b1      ]
    [ -B    0  ] [  p   ] = [ mu*b2~  ]

whose blocks are independent of the viscosity; the solver unscales the
velocity on return. The pressure equations sum to the total boundary flux
of the projected datum (alpha), which is generally nonzero; subtracting
alpha/N from each entry (b2~) puts the right-hand side into the range of
the operator.

Unknown ordering: interior velocity values (element-major, component-minor),
then interior-facet values (facet-major, component-minor). Boundary facet
values are eliminated at assembly time and their stiffness coupling moves
into b1.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .mesh import ElementGeometry, Mesh
from .problems import StokesProblem, boundary_compatibility
from .wg_core import project_boundary_datum

__all__ = [
    "DofMap",
    "SaddleSystem",
    "build_dofmap",
    "local_gram_matrix",
    "lifting_matrix_inverse",
    "assemble_A",
    "assemble_B",
    "assemble_b1",
    "assemble_b2",
    "compute_alpha",
    "enforce_consistency",
    "assemble_mass_pressure",
    "project_boundary_values",
    "build_saddle_system",
    "export_system",
]


@dataclass(frozen=True)
class DofMap:
    """Bijection from (entity, component) pairs onto [0, n_u)."""

    dim: int
    num_elements: int
    facet_slot: np.ndarray  # global facet -> position among interior facets, -1 if boundary
    boundary_slot: np.ndarray  # global facet -> position among boundary facets, -1 if interior
    n_interior: int
    n_facet: int

    @property
    def n_u(self) -> int:
        return self.n_interior + self.n_facet

    def interior_dof(self, k: int, r: int) -> int:
        return k * self.dim + r

    def facet_dof(self, f: int, r: int) -> int:
        slot = self.facet_slot[f]
        assert slot >= 0, "boundary facet carries no unknown"
        return self.n_interior + slot * self.dim + r


def build_dofmap(mesh: Mesh) -> DofMap:
    d = mesh.dim
    facet_slot = np.full(mesh.num_facets, -1, dtype=np.int64)
    facet_slot[mesh.interior_facets] = np.arange(len(mesh.interior_facets))
    boundary_slot = np.full(mesh.num_facets, -1, dtype=np.int64)
    boundary_slot[mesh.boundary_facets] = np.arange(len(mesh.boundary_facets))
    return DofMap(
        dim=d,
        num_elements=mesh.num_elements,
        facet_slot=facet_slot,
        boundary_slot=boundary_slot,
        n_interior=mesh.num_elements * d,
        n_facet=len(mesh.interior_facets) * d,
    )


def local_gram_matrix(geom: ElementGeometry) -> np.ndarray:
    """Exact (d+2)x(d+2) Gram matrix of the weak-gradient basis of one scalar unknown.

    Index 0 is the interior basis function, 1..d+1 the facet ones. Each basis
    gradient is a + b*(x - x_K); cross moments vanish, so the integral is
    a_p.a_q |K| + b_p b_q m_K with no quadrature error.
    """
    d = geom.dim
    a = np.zeros((d + 2, d))
    b = np.empty(d + 2)
    b[0] = -geom.grad_scale
    a[1:] = geom.facet_measures[:, None] * geom.normals / geom.volume
    b[1:] = geom.grad_scale / (d + 1)
    return (a @ a.T) * geom.volume + np.outer(b, b) * geom.second_moment


def lifting_matrix_inverse(geom: ElementGeometry) -> np.ndarray:
    """Inverse of the local lifting system [n_i^T, delta_i]; column i gives the
    RT0 coefficients responding to a unit normal trace on facet i."""
    d = geom.dim
    delta = d * geom.volume / ((d + 1) * geom.facet_measures)
    return np.linalg.inv(np.column_stack([geom.normals, delta]))


def _local_dofs(mesh: Mesh, dof: DofMap, k: int) -> list[int | None]:
    """Global dof base index (component 0) for local basis 0..d+1; None where eliminated."""
    out: list[int | None] = [dof.interior_dof(k, 0)]
    for f in mesh.elem_facets[k]:
        slot = dof.facet_slot[f]
        out.append(None if slot < 0 else dof.facet_dof(f, 0))
    return out


def assemble_A(mesh: Mesh, dof: DofMap | None = None) -> sp.csr_matrix:
    """Velocity stiffness block: weak-gradient Gram summed over elements.

    Exactly symmetric by construction (symmetric local blocks, symmetric
    scatter); boundary facet columns are eliminated.
    """
    dof = dof or build_dofmap(mesh)
    d = mesh.dim
    rows, cols, vals = [], [], []
    for k in range(mesh.num_elements):
        g = mesh.element_geometry(k)
        gram = local_gram_matrix(g)
        base = _local_dofs(mesh, dof, k)
        for p, bp in enumerate(base):
            if bp is None:
                continue
            for q, bq in enumerate(base):
                if bq is None:
                    continue
                for r in range(d):
                    rows.append(bp + r)
                    cols.append(bq + r)
                    vals.append(gram[p, q])
    a = sp.coo_matrix((vals, (rows, cols)), shape=(dof.n_u, dof.n_u)).tocsr()
    a.sum_duplicates()
    return a


def assemble_B(mesh: Mesh, dof: DofMap | None = None) -> sp.csr_matrix:
    """Divergence block: row K holds |e|*n components of the interior facets of K."""
    dof = dof or build_dofmap(mesh)
    d = mesh.dim
    rows, cols, vals = [], [], []
    for k in range(mesh.num_elements):
        g = mesh.element_geometry(k)
        for i in range(d + 1):
            f = mesh.elem_facets[k, i]
            if dof.facet_slot[f] < 0:
                continue
            flux = g.facet_measures[i] * g.normals[i]
            for r in range(d):
                rows.append(k)
                cols.append(dof.facet_dof(f, r))
                vals.append(flux[r])
    b = sp.coo_matrix((vals, (rows, cols)), shape=(mesh.num_elements, dof.n_u)).tocsr()
    b.sum_duplicates()
    return b


def project_boundary_values(
    mesh: Mesh, problem: StokesProblem, qg_method: str = "barycenter"
) -> np.ndarray:
    """Projected boundary datum, one d-vector per boundary facet (mesh ordering)."""
    return np.array(
        [
            project_boundary_datum(
                problem.boundary, mesh.vertices[mesh.facets[f]], qg_method
            )
            for f in mesh.boundary_facets
        ]
    ).reshape(len(mesh.boundary_facets), mesh.dim)


def _forcing_moments(
    mesh: Mesh, problem: StokesProblem, quad_points: int = 6
) -> tuple[np.ndarray, np.ndarray]:
    """Per-element integral of f and of f.(x - x_K).

    These two moments determine (f, w)_K for every w = a + b*(x - x_K), which
    is all the load assembly needs. A collapsed tensor rule with quad_points
    per axis keeps the quadrature error far below the discretization error;
    a low-order rule here would leak a pressure-dependent perturbation into
    the velocity at small viscosities.
    """
    from .quadrature import duffy_rule

    d = mesh.dim
    bary, w = duffy_rule(d, quad_points)
    ne = mesh.num_elements
    # physical quadrature points for every element at once: (ne, nq, d)
    pts = np.einsum("qj,njd->nqd", bary, mesh.vertices[mesh.elements])
    fvals = None
    try:
        flat = problem.forcing(pts.reshape(-1, d))
        if flat.shape == (ne * len(w), d):
            fvals = np.asarray(flat, dtype=float).reshape(ne, len(w), d)
    except Exception:
        pass
    if fvals is None:
        # point-wise callable: evaluate one quadrature point at a time
        fvals = np.empty((ne, len(w), d))
        for k in range(ne):
            for q in range(len(w)):
                fvals[k, q] = problem.forcing(pts[k, q])
    rel = pts - mesh.elem_centroids[:, None, :]
    f0 = mesh.elem_volumes[:, None] * np.einsum("q,nqd->nd", w, fvals)
    f1 = mesh.elem_volumes * np.einsum("q,nqd,nqd->n", w, fvals, rel)
    return f0, f1


def assemble_b1(
    mesh: Mesh,
    problem: StokesProblem,
    qg_method: str = "barycenter",
    dof: DofMap | None = None,
    g_proj: np.ndarray | None = None,
) -> np.ndarray:
    """Momentum right-hand side: lifted load plus boundary elimination.

    The load pairs f with the lifting of each facet test function, so
    interior velocity dofs receive no load at all; the boundary term moves
    the eliminated facet columns of the stiffness block to the right-hand
    side, scaled by the viscosity.
    """
    dof = dof or build_dofmap(mesh)
    d = mesh.dim
    if g_proj is None:
        g_proj = project_boundary_values(mesh, problem, qg_method)
    f0, f1 = _forcing_moments(mesh, problem)
    b1 = np.zeros(dof.n_u)
    for k in range(mesh.num_elements):
        g = mesh.element_geometry(k)
        minv = lifting_matrix_inverse(g)
        # load responses: value of (f, lifting of unit trace on facet i)_K
        load = minv[:d].T @ f0[k] + minv[d] * f1[k]  # (d+1,)
        gram = None
        base = _local_dofs(mesh, dof, k)
        for i in range(d + 1):
            f = mesh.elem_facets[k, i]
            slot = dof.facet_slot[f]
            if slot >= 0:
                fd = dof.facet_dof(f, 0)
                for r in range(d):
                    b1[fd + r] += load[i] * g.normals[i, r]
            else:
                # eliminated boundary facet: -mu * ghat_r * gram[q, 1+i]
                if gram is None:
                    gram = local_gram_matrix(g)
                ghat = g_proj[dof.boundary_slot[f]]
                for q, bq in enumerate(base):
                    if bq is None:
                        continue
                    for r in range(d):
                        b1[bq + r] -= problem.mu * gram[q, 1 + i] * ghat[r]
    return b1


def assemble_b2(
    mesh: Mesh,
    problem: StokesProblem,
    qg_method: str = "barycenter",
    g_proj: np.ndarray | None = None,
) -> np.ndarray:
    """Per-element boundary flux of the projected datum."""
    if g_proj is None:
        g_proj = project_boundary_values(mesh, problem, qg_method)
    b2 = np.zeros(mesh.num_elements)
    boundary_slot = np.full(mesh.num_facets, -1, dtype=np.int64)
    boundary_slot[mesh.boundary_facets] = np.arange(len(mesh.boundary_facets))
    for k in range(mesh.num_elements):
        g = mesh.element_geometry(k)
        for i in range(mesh.dim + 1):
            f = mesh.elem_facets[k, i]
            slot = boundary_slot[f]
            if slot >= 0:
                b2[k] += g.facet_measures[i] * (g_proj[slot] @ g.normals[i])
    return b2


def compute_alpha(b2: np.ndarray) -> float:
    """Total boundary-flux defect; zero iff the pressure equations are consistent."""
    return float(np.sum(b2))


def enforce_consistency(b2: np.ndarray, alpha: float, n_elements: int) -> np.ndarray:
    """Redistribute the defect so the modified vector sums to zero."""
    return b2 - alpha / n_elements


def assemble_mass_pressure(mesh: Mesh) -> np.ndarray:
    """Diagonal entries (element measures) of the pressure mass matrix."""
    return mesh.elem_volumes.copy()


@dataclass
class SaddleSystem:
    """Rescaled singular saddle system and everything needed to solve/verify it."""

    mesh: Mesh
    dof: DofMap
    mu: float
    A: sp.csr_matrix
    B: sp.csr_matrix
    b1: np.ndarray
    b2: np.ndarray
    b2_tilde: np.ndarray
    Mp: np.ndarray  # diagonal entries
    alpha_h: float
    consistent: bool
    qg_method: str
    g_boundary: np.ndarray  # projected datum per boundary facet

    @property
    def n_u(self) -> int:
        return self.dof.n_u

    @property
    def n_p(self) -> int:
        return self.mesh.num_elements

    @property
    def size(self) -> int:
        return self.n_u + self.n_p

    def rhs(self) -> np.ndarray:
        second = self.b2_tilde if self.consistent else self.b2
        return np.concatenate([self.b1, self.mu * second])

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Operator product [A, -B^T; -B, 0] x."""
        xu, xp = x[: self.n_u], x[self.n_u :]
        return np.concatenate(
            [self.A @ xu - self.B.T @ xp, -(self.B @ xu)]
        )

    def dense_operator(self) -> np.ndarray:
        a = self.A.toarray()
        b = self.B.toarray()
        top = np.hstack([a, -b.T])
        bottom = np.hstack([-b, np.zeros((self.n_p, self.n_p))])
        return np.vstack([top, bottom])

    def split(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Unscaled (interior velocity, facet velocity, pressure) from a solution vector."""
        d = self.dof.dim
        u = x[: self.n_u] / self.mu
        interior = u[: self.dof.n_interior].reshape(self.dof.num_elements, d)
        facet = u[self.dof.n_interior :].reshape(-1, d)
        return interior, facet, x[self.n_u :].copy()


def build_saddle_system(
    mesh: Mesh,
    problem: StokesProblem,
    qg_method: str = "barycenter",
    consistent: bool = True,
) -> SaddleSystem:
    if problem.dim != mesh.dim:
        raise ValueError(f"problem is {problem.dim}D but mesh is {mesh.dim}D")
    compat = boundary_compatibility(problem, mesh)
    if abs(compat) > 1e-8:
        raise ValueError(
            f"boundary datum violates the compatibility condition: "
            f"integral of g.n = {compat:.3e}"
        )
    dof = build_dofmap(mesh)
    g_proj = project_boundary_values(mesh, problem, qg_method)
    a = assemble_A(mesh, dof)
    b = assemble_B(mesh, dof)
    b1 = assemble_b1(mesh, problem, qg_method, dof, g_proj)
    b2 = assemble_b2(mesh, problem, qg_method, g_proj)
    alpha = compute_alpha(b2)
    return SaddleSystem(
        mesh=mesh,
        dof=dof,
        mu=problem.mu,
        A=a,
        B=b,
        b1=b1,
        b2=b2,
        b2_tilde=enforce_consistency(b2, alpha, mesh.num_elements),
        Mp=assemble_mass_pressure(mesh),
        alpha_h=alpha,
        consistent=consistent,
        qg_method=qg_method,
        g_boundary=g_proj,
    )


def export_system(system: SaddleSystem, outdir: str | Path, stem: str = "system") -> list[Path]:
    """Write A, B and the right-hand side in Matrix Market coordinate format."""
    from scipy.io import mmwrite

    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = []
    for suffix, mat in (
        ("A", system.A.tocoo()),
        ("B", system.B.tocoo()),
        ("rhs", sp.coo_matrix(system.rhs().reshape(-1, 1))),
    ):
        p = outdir / f"{stem}_{suffix}.mtx"
        mmwrite(p, mat)
        paths.append(p)
    return paths
