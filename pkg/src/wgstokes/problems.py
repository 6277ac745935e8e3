"""Manufactured Stokes problems: -mu*Lap(u) + grad p = f, div u = 0, u = g on the boundary.

Two built-in solutions on the unit square/cube, plus custom problems given
as expression strings (velocity and pressure; the forcing is derived
symbolically when not supplied). All problems are checked against the
strong form by centered finite differences at random interior points.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

__all__ = [
    "StokesProblem",
    "BUILTIN_PROBLEMS",
    "builtin_problem",
    "problem_from_expressions",
    "strong_form_residual",
    "boundary_compatibility",
]

Vec = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class StokesProblem:
    name: str
    dim: int
    mu: float
    velocity: Vec
    pressure: Callable[[np.ndarray], float]
    forcing: Vec
    boundary: Vec  # trace of the velocity; kept separate for clarity at call sites
    rebuild: Callable[[float], "StokesProblem"] | None = field(
        default=None, repr=False, compare=False
    )

    def with_mu(self, mu: float) -> "StokesProblem":
        """Same exact solution rebuilt with a different viscosity."""
        if self.rebuild is not None:
            return self.rebuild(mu)
        base = _BUILTIN_FACTORIES.get(self.name)
        if base is not None:
            return base(mu)
        raise ValueError(f"cannot rebuild problem {self.name!r} with a new viscosity")


def _problem_2d(mu: float) -> StokesProblem:
    # vector fields accept a single point (2,) or a batch (n, 2); they
    # evaluate with numpy ufuncs so batches cost one call
    def u(p):
        p = np.asarray(p, dtype=float)
        x, y = p[..., 0], p[..., 1]
        return np.stack(
            [
                -np.exp(x) * (y * np.cos(y) + np.sin(y)),
                np.exp(x) * y * np.sin(y),
            ],
            axis=-1,
        )

    def pres(p):
        p = np.asarray(p, dtype=float)
        x, y = p[..., 0], p[..., 1]
        return 2.0 * np.exp(x) * np.sin(y)

    def f(p):
        p = np.asarray(p, dtype=float)
        x, y = p[..., 0], p[..., 1]
        c = 2.0 * (1.0 - mu) * np.exp(x)
        return np.stack([c * np.sin(y), c * np.cos(y)], axis=-1)

    return StokesProblem("stokes2d_exp", 2, mu, u, pres, f, u)


def _problem_3d(mu: float) -> StokesProblem:
    pi = math.pi

    def u(p):
        p = np.asarray(p, dtype=float)
        x, y, z = p[..., 0], p[..., 1], p[..., 2]
        return np.stack(
            [
                2.0 * np.sin(pi * x),
                -pi * y * np.cos(pi * x),
                -pi * z * np.cos(pi * x),
            ],
            axis=-1,
        )

    def pres(p):
        p = np.asarray(p, dtype=float)
        x, y, z = p[..., 0], p[..., 1], p[..., 2]
        return np.sin(pi * x) * np.cos(pi * y) * np.sin(pi * z)

    def f(p):
        p = np.asarray(p, dtype=float)
        x, y, z = p[..., 0], p[..., 1], p[..., 2]
        sx, cx = np.sin(pi * x), np.cos(pi * x)
        sy, cy = np.sin(pi * y), np.cos(pi * y)
        sz, cz = np.sin(pi * z), np.cos(pi * z)
        return np.stack(
            [
                2.0 * mu * pi**2 * sx + pi * cx * cy * sz,
                -mu * pi**3 * y * cx - pi * sx * sy * sz,
                -mu * pi**3 * z * cx + pi * sx * cy * cz,
            ],
            axis=-1,
        )

    return StokesProblem("stokes3d_trig", 3, mu, u, pres, f, u)


_BUILTIN_FACTORIES = {
    "stokes2d_exp": _problem_2d,
    "stokes3d_trig": _problem_3d,
}

BUILTIN_PROBLEMS = tuple(_BUILTIN_FACTORIES)


def builtin_problem(name: str, mu: float = 1.0) -> StokesProblem:
    try:
        factory = _BUILTIN_FACTORIES[name]
    except KeyError:
        raise ValueError(
            f"unknown problem {name!r}; built-ins: {', '.join(BUILTIN_PROBLEMS)}"
        ) from None
    if mu <= 0:
        raise ValueError("viscosity must be positive")
    return factory(mu)


_ALLOWED_FUNCS = {"exp", "sin", "cos"}


def problem_from_expressions(
    dim: int,
    velocity_exprs: list[str],
    pressure_expr: str,
    mu: float = 1.0,
    forcing_exprs: list[str] | None = None,
    name: str = "custom",
) -> StokesProblem:
    """Build a problem from expression strings in x, y(, z), pi, exp, sin, cos.

    When forcing_exprs is omitted, f = -mu*Lap(u) + grad p is derived
    symbolically, so the supplied pair (u, p) is the exact solution.
    """
    import sympy as sp

    if dim not in (2, 3):
        raise ValueError("dim must be 2 or 3")
    if len(velocity_exprs) != dim:
        raise ValueError(f"need {dim} velocity components, got {len(velocity_exprs)}")
    coords = sp.symbols("x y z")[:dim]
    local = {"x": coords[0], "y": coords[1], "pi": sp.pi}
    if dim == 3:
        local["z"] = coords[2]
    local.update({fn: getattr(sp, fn) for fn in _ALLOWED_FUNCS})

    def parse(text):
        expr = sp.sympify(text, locals=local)
        bad = expr.free_symbols - set(coords)
        if bad:
            raise ValueError(f"unknown symbols {sorted(map(str, bad))} in {text!r}")
        for fn in expr.atoms(sp.Function):
            if fn.func.__name__ not in _ALLOWED_FUNCS:
                raise ValueError(f"function {fn.func.__name__!r} not allowed in {text!r}")
        return expr

    u_sym = [parse(t) for t in velocity_exprs]
    p_sym = parse(pressure_expr)
    if forcing_exprs is None:
        f_sym = [
            -mu * sum(sp.diff(ui, c, 2) for c in coords) + sp.diff(p_sym, coords[r])
            for r, ui in enumerate(u_sym)
        ]
    else:
        if len(forcing_exprs) != dim:
            raise ValueError(f"need {dim} forcing components")
        f_sym = [parse(t) for t in forcing_exprs]

    u_fns = [sp.lambdify(coords, e, "numpy") for e in u_sym]
    f_fns = [sp.lambdify(coords, e, "numpy") for e in f_sym]
    p_fn = sp.lambdify(coords, p_sym, "numpy")

    def vec(fns):
        # constant expressions lambdify to scalar-returning functions, so
        # broadcast every component against the input points
        def call(pt):
            pt = np.asarray(pt, dtype=float)
            args = [pt[..., j] for j in range(dim)]
            comps = [np.broadcast_to(fn(*args), pt.shape[:-1]) for fn in fns]
            return np.stack(comps, axis=-1).astype(float)

        return call

    def pres(pt):
        pt = np.asarray(pt, dtype=float)
        args = [pt[..., j] for j in range(dim)]
        return np.asarray(
            np.broadcast_to(p_fn(*args), pt.shape[:-1]), dtype=float
        )[()]

    u = vec(u_fns)
    f = vec(f_fns)

    def again(new_mu):
        return problem_from_expressions(
            dim, velocity_exprs, pressure_expr, new_mu, forcing_exprs, name
        )

    return StokesProblem(name, dim, mu, u, pres, f, u, rebuild=again)


def strong_form_residual(
    problem: StokesProblem, npoints: int = 5, step: float = 1e-4, seed: int = 0
) -> float:
    """Max residual of -mu*Lap(u) + grad p - f and of div u at random interior points.

    Centered second differences; the check is O(step^2) accurate, so smooth
    consistent problems land near step^2 * |u|, not at machine precision.
    """
    d = problem.dim
    rng = np.random.default_rng(seed)
    pts = 0.2 + 0.6 * rng.random((npoints, d))
    worst = 0.0
    for x0 in pts:
        lap = np.zeros(d)
        grad_p = np.zeros(d)
        div = 0.0
        u0 = problem.velocity(x0)
        for j in range(d):
            e = np.zeros(d)
            e[j] = step
            up, um = problem.velocity(x0 + e), problem.velocity(x0 - e)
            lap += (up - 2.0 * u0 + um) / step**2
            grad_p[j] = (problem.pressure(x0 + e) - problem.pressure(x0 - e)) / (
                2.0 * step
            )
            div += (up[j] - um[j]) / (2.0 * step)
        resid = -problem.mu * lap + grad_p - problem.forcing(x0)
        worst = max(worst, float(np.max(np.abs(resid))), abs(div))
    return worst


def boundary_compatibility(problem: StokesProblem, mesh, degree: int = 8) -> float:
    """integral over the boundary of g.n (zero for a well-posed problem)."""
    from .quadrature import facet_rule, map_to_physical

    bary, w = facet_rule(mesh.dim, degree)
    total = 0.0
    for fidx in mesh.boundary_facets:
        verts = mesh.vertices[mesh.facets[fidx]]
        pts = map_to_physical(verts, bary)
        n = mesh.facet_normals[fidx]
        vals = np.array([problem.boundary(p) @ n for p in pts])
        total += mesh.facet_measures[fidx] * float(w @ vals)
    return total
