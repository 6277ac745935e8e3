"""Error measurement, convergence studies, spectral checks, and residual bounds.

Everything here treats the solver as a black box and measures properties the
discretization is supposed to have: first-order velocity convergence, a
second-order distance between the interior velocity and the cell averages of
the exact solution, boundedness of the Schur complement spectrum, and the
a priori residual bounds for the preconditioned Krylov methods.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg

from .assembly import SaddleSystem, build_saddle_system
from .krylov import SolveReport, StokesSolution, default_tolerance, solve_system
from .mesh import Mesh, mesh_stats, structured_simplex_mesh
from .problems import StokesProblem
from .quadrature import simplex_rule
from .sparse_linalg import DENSE_GUARD, InnerSolveConfig, InnerSolver
from .wg_core import field_weak_gradients

__all__ = [
    "ErrorReport",
    "ConvergenceTable",
    "SpectralReport",
    "BoundCheck",
    "InconsistencyDemo",
    "compute_errors",
    "convergence_study",
    "spectral_report",
    "residual_bound_check",
    "inconsistency_demo",
]


@dataclass
class ErrorReport:
    h: float
    num_elements: int
    mu: float
    alpha_h: float
    l2_velocity: float
    superconv: float  # distance between interior values and exact cell means
    grad_error: float  # broken norm against the elementwise weak gradient
    pressure_error: float  # both pressures normalized to zero weighted mean
    iterations: int = 0
    converged: bool = True

    def as_row(self) -> dict:
        return {
            "N": self.num_elements,
            "h": self.h,
            "mu": self.mu,
            "alpha_h": self.alpha_h,
            "l2_velocity": self.l2_velocity,
            "superconv": self.superconv,
            "grad_error": self.grad_error,
            "pressure_error": self.pressure_error,
            "iterations": self.iterations,
            "converged": self.converged,
        }


ERROR_FIELDS = ("l2_velocity", "superconv", "grad_error", "pressure_error")


def _exact_gradient(problem: StokesProblem, pts: np.ndarray) -> np.ndarray:
    """Jacobian of the exact velocity at each point, (n, d, d).

    Uses an analytic gradient when the problem provides one and falls back
    to centered differences otherwise; the differencing error (~1e-10) is
    negligible against the O(h) broken-norm error being measured.
    """
    grad = getattr(problem, "velocity_gradient", None)
    if callable(grad):
        return np.asarray(grad(pts), dtype=float)
    d = problem.dim
    step = 1e-6
    out = np.empty((len(pts), d, d))
    for c in range(d):
        e = np.zeros(d)
        e[c] = step
        up = np.array([problem.velocity(p + e) for p in pts], dtype=float)
        um = np.array([problem.velocity(p - e) for p in pts], dtype=float)
        out[:, :, c] = (up - um) / (2.0 * step)
    return out


def compute_errors(
    mesh: Mesh,
    problem: StokesProblem,
    solution: StokesSolution,
    degree: int = 4,
) -> ErrorReport:
    """Broken-norm errors of a solved field against the exact solution."""
    d = mesh.dim
    bary, w = simplex_rule(d, degree)
    pts = np.einsum("qj,njd->nqd", bary, mesh.vertices[mesh.elements])
    vols = mesh.elem_volumes
    flat = pts.reshape(-1, d)
    try:
        uex = np.asarray(problem.velocity(flat), dtype=float)
        if uex.shape != (len(flat), d):
            raise ValueError
        uex = uex.reshape(pts.shape)
    except Exception:
        uex = np.array([problem.velocity(p) for p in flat], dtype=float).reshape(
            pts.shape
        )
    try:
        pex = np.asarray(problem.pressure(flat), dtype=float)
        if pex.shape != (len(flat),):
            raise ValueError
        pex = pex.reshape(pts.shape[:2])
    except Exception:
        pex = np.array([problem.pressure(p) for p in flat], dtype=float).reshape(
            pts.shape[:2]
        )

    ui = solution.velocity.interior  # (ne, d)
    diff = uex - ui[:, None, :]
    l2_velocity = math.sqrt(float(np.einsum("q,nqd,nqd,n->", w, diff, diff, vols)))

    means = np.einsum("q,nqd->nd", w, uex)  # exact cell averages
    superconv = math.sqrt(float(vols @ np.einsum("nd,nd->n", means - ui, means - ui)))

    # weak gradient of the discrete field is a + b (x - x_K) per component
    a, b = field_weak_gradients(mesh, solution.velocity)  # (ne, d, d), (ne, d)
    rel = pts - mesh.elem_centroids[:, None, :]
    gw = a[:, None, :, :] + b[:, None, :, None] * rel[:, :, None, :]
    jac = _exact_gradient(problem, flat).reshape(pts.shape[0], pts.shape[1], d, d)
    gdiff = jac - gw
    grad_error = math.sqrt(float(np.einsum("q,nqrc,nqrc,n->", w, gdiff, gdiff, vols)))

    volume = float(vols.sum())
    p_mean = float(np.einsum("q,nq,n->", w, pex, vols)) / volume
    ph = solution.pressure.values
    ph = ph - float(ph @ vols) / volume
    pdiff = (pex - p_mean) - ph[:, None]
    pressure_error = math.sqrt(float(np.einsum("q,nq,nq,n->", w, pdiff, pdiff, vols)))

    stats = mesh_stats(mesh)
    return ErrorReport(
        h=stats.h,
        num_elements=mesh.num_elements,
        mu=problem.mu,
        alpha_h=getattr(solution, "alpha_h", 0.0),
        l2_velocity=l2_velocity,
        superconv=superconv,
        grad_error=grad_error,
        pressure_error=pressure_error,
        iterations=solution.report.iterations,
        converged=solution.report.converged,
    )


@dataclass
class ConvergenceTable:
    problem: str
    qg_method: str
    mu_values: tuple
    reports: dict  # (mu, level index) -> ErrorReport
    levels: list  # number of elements per level, ascending h^-1

    def rates(self, mu: float, field_name: str) -> list:
        """log-ratio rates between consecutive levels; first entry is None."""
        out = [None]
        for i in range(1, len(self.levels)):
            r0 = self.reports[(mu, i - 1)]
            r1 = self.reports[(mu, i)]
            e0, e1 = getattr(r0, field_name), getattr(r1, field_name)
            if e0 <= 0.0 or e1 <= 0.0:
                out.append(float("nan"))
            else:
                out.append(math.log(e0 / e1) / math.log(r0.h / r1.h))
        return out

    def write_csv(self, path: str | Path) -> None:
        path = Path(path)
        cols = ["N", "h", "mu"]
        for name in ERROR_FIELDS:
            cols += [name, f"{name}_rate"]
        cols += ["alpha_h", "iterations", "converged"]
        with path.open("w", encoding="utf-8") as fh:
            fh.write(",".join(cols) + "\n")
            for mu in self.mu_values:
                rate_cols = {f: self.rates(mu, f) for f in ERROR_FIELDS}
                for i in range(len(self.levels)):
                    r = self.reports[(mu, i)]
                    cells = [str(r.num_elements), f"{r.h:.6e}", f"{mu:g}"]
                    for f in ERROR_FIELDS:
                        rate = rate_cols[f][i]
                        cells.append(f"{getattr(r, f):.6e}")
                        cells.append("" if rate is None else f"{rate:.3f}")
                    cells += [
                        f"{r.alpha_h:.6e}",
                        str(r.iterations),
                        str(r.converged),
                    ]
                    fh.write(",".join(cells) + "\n")

    def to_markdown(self, field_name: str = "l2_velocity") -> str:
        """One table per error quantity, error and rate columns per viscosity."""
        header = ["N"]
        for mu in self.mu_values:
            header += [f"error (mu={mu:g})", "conv. rate"]
        lines = [
            "| " + " | ".join(header) + " |",
            "|" + "|".join("---" for _ in header) + "|",
        ]
        rate_cols = {mu: self.rates(mu, field_name) for mu in self.mu_values}
        for i in range(len(self.levels)):
            row = [str(self.levels[i])]
            for mu in self.mu_values:
                r = self.reports[(mu, i)]
                rate = rate_cols[mu][i]
                row.append(f"{getattr(r, field_name):.6e}")
                row.append("-" if rate is None else f"{rate:.3f}")
            lines.append("| " + " | ".join(row) + " |")
        return "\n".join(lines)


def convergence_study(
    problem: StokesProblem,
    meshes: list,
    mu_values: tuple = (1.0,),
    qg_method: str = "barycenter",
    method: str = "minres",
    tol: float | None = None,
    maxit: int = 1000,
    restart: int = 30,
    degree: int = 4,
    inner_config: InnerSolveConfig | None = None,
    solver_cache: dict | None = None,
) -> ConvergenceTable:
    """Solve on a mesh sequence for each viscosity and tabulate errors.

    meshes may hold Mesh objects or integers (structured subdivision levels,
    dimension taken from the problem). A shared cache can be passed in to
    reuse stiffness-block factorizations across studies on the same meshes.
    """
    if len(meshes) < 2:
        raise ValueError("need at least two meshes to observe a rate")
    resolved = [
        m if isinstance(m, Mesh) else structured_simplex_mesh(problem.dim, m)
        for m in meshes
    ]
    if solver_cache is None:
        solver_cache = {}
    reports = {}
    for i, mesh in enumerate(resolved):
        inner = None
        for mu in mu_values:
            prob = problem if problem.mu == mu else problem.with_mu(mu)
            system = build_saddle_system(mesh, prob, qg_method)
            key = ("inner", id(mesh), qg_method)
            inner = solver_cache.get(key)
            if inner is None:
                inner = InnerSolver(system.A, inner_config or InnerSolveConfig())
                solver_cache[key] = inner
            sol = solve_system(
                system, method, tol=tol, maxit=maxit, restart=restart,
                inner_solver=inner,
            )
            rep = compute_errors(mesh, prob, sol, degree)
            rep.alpha_h = system.alpha_h
            reports[(mu, i)] = rep
    return ConvergenceTable(
        problem=problem.name,
        qg_method=qg_method,
        mu_values=tuple(mu_values),
        reports=reports,
        levels=[m.num_elements for m in resolved],
    )


@dataclass
class SpectralReport:
    dim: int
    gammas: np.ndarray  # generalized Schur eigenvalues, ascending
    beta: float  # inf-sup estimate, sqrt of the smallest positive gamma
    lambdas: np.ndarray  # eigenvalues of the preconditioned operator
    margin: float
    zero_gamma_count: int
    gamma_upper_ok: bool  # all gammas <= d + margin
    zero_lambda_count: int
    lambda_interval_violations: np.ndarray  # eigenvalues outside the union
    quad_map_max_dist: float  # worst |lambda^2 - lambda - gamma| mismatch
    lambda_min_A: float
    lambda_max_Mp: float

    @property
    def lambda_intervals_ok(self) -> bool:
        return self.lambda_interval_violations.size == 0

    def intervals(self) -> tuple:
        d = float(self.dim)
        b2 = self.beta**2
        return (
            ((1.0 - math.sqrt(1.0 + 4.0 * d)) / 2.0, (1.0 - math.sqrt(1.0 + 4.0 * b2)) / 2.0),
            (0.0, 0.0),
            ((1.0 + math.sqrt(1.0 + 4.0 * b2)) / 2.0, (1.0 + math.sqrt(1.0 + 4.0 * d)) / 2.0),
        )

    def write_csv(self, path: str | Path) -> None:
        path = Path(path)
        with path.open("w", encoding="utf-8") as fh:
            fh.write("index,gamma,lambda\n")
            n = max(len(self.gammas), len(self.lambdas))
            for i in range(n):
                g = f"{self.gammas[i]:.10e}" if i < len(self.gammas) else ""
                l = f"{self.lambdas[i]:.10e}" if i < len(self.lambdas) else ""
                fh.write(f"{i},{g},{l}\n")

    def summary(self) -> str:
        lo, _, hi = self.intervals()
        lines = [
            f"elements d={self.dim}, beta = {self.beta:.6f}",
            f"gammas: {len(self.gammas)} total, {self.zero_gamma_count} zero, "
            f"max {self.gammas[-1]:.6f} (bound d = {self.dim}): "
            f"{'ok' if self.gamma_upper_ok else 'VIOLATED'}",
            f"lambda intervals [{lo[0]:.4f}, {lo[1]:.4f}] u {{0}} u "
            f"[{hi[0]:.4f}, {hi[1]:.4f}]: "
            + (
                "all inside"
                if self.lambda_intervals_ok
                else f"{self.lambda_interval_violations.size} outside "
                f"(e.g. {self.lambda_interval_violations[0]:.6f})"
            ),
            f"zero eigenvalue multiplicity {self.zero_lambda_count}",
            f"quadratic-map mismatch {self.quad_map_max_dist:.2e}",
        ]
        return "\n".join(lines)


def spectral_report(system: SaddleSystem, margin: float = 1e-8) -> SpectralReport:
    """Dense spectral verification on a small system.

    Forms the Schur complement S = B A^-1 B^T, solves S q = gamma Mp q, and
    compares the preconditioned-operator eigenvalues against the interval
    bounds and the quadratic map lambda^2 - lambda = gamma.
    """
    if system.size > DENSE_GUARD:
        raise ValueError(
            f"system size {system.size} exceeds the dense verification "
            f"guard {DENSE_GUARD}; use a coarser mesh"
        )
    d = system.dof.dim
    a = system.A.toarray()
    b = system.B.toarray()
    mp = np.diag(system.Mp)
    cho = scipy.linalg.cho_factor(a)
    s = b @ scipy.linalg.cho_solve(cho, b.T)
    s = 0.5 * (s + s.T)
    gammas = scipy.linalg.eigh(s, mp, eigvals_only=True)
    zero_gamma = int(np.sum(np.abs(gammas) < 1e-10))
    gamma_upper_ok = bool(gammas[-1] <= d + margin)
    beta = math.sqrt(max(float(gammas[1]), 0.0))

    op = system.dense_operator()
    pd = np.zeros_like(op)
    pd[: system.n_u, : system.n_u] = a
    pd[system.n_u :, system.n_u :] = mp
    lambdas = scipy.linalg.eigh(op, pd, eigvals_only=True)
    zero_lambda = int(np.sum(np.abs(lambdas) < 1e-10))

    lo_neg = (1.0 - math.sqrt(1.0 + 4.0 * d)) / 2.0
    hi_neg = (1.0 - math.sqrt(1.0 + 4.0 * beta**2)) / 2.0
    lo_pos = (1.0 + math.sqrt(1.0 + 4.0 * beta**2)) / 2.0
    hi_pos = (1.0 + math.sqrt(1.0 + 4.0 * d)) / 2.0
    inside = (
        ((lambdas >= lo_neg - margin) & (lambdas <= hi_neg + margin))
        | (np.abs(lambdas) <= margin)
        | ((lambdas >= lo_pos - margin) & (lambdas <= hi_pos + margin))
    )
    violations = lambdas[~inside]

    mapped = lambdas * lambdas - lambdas
    dist = np.abs(mapped[:, None] - gammas[None, :]).min(axis=1)
    quad_map_max_dist = float(dist.max())

    lambda_min_A = float(scipy.linalg.eigh(a, eigvals_only=True)[0])
    return SpectralReport(
        dim=d,
        gammas=gammas,
        beta=beta,
        lambdas=lambdas,
        margin=margin,
        zero_gamma_count=zero_gamma,
        gamma_upper_ok=gamma_upper_ok,
        zero_lambda_count=zero_lambda,
        lambda_interval_violations=violations,
        quad_map_max_dist=quad_map_max_dist,
        lambda_min_A=lambda_min_A,
        lambda_max_Mp=float(system.Mp.max()),
    )


@dataclass
class BoundCheck:
    method: str
    rho: float
    prefactor: float
    checked: list  # (iteration, measured, bound)
    worst_margin: float  # min over checked iterations of bound - measured

    @property
    def passed(self) -> bool:
        return self.worst_margin >= 0.0


def residual_bound_check(
    report: SolveReport, spectral: SpectralReport, which: str | None = None
) -> BoundCheck:
    """Compare a recorded residual history against its a priori bound.

    For the diagonally preconditioned method the bound governs the residual
    in the preconditioner norm at odd iterations, with convergence factor
    rho = (sqrt(d) - beta)/(sqrt(d) + beta) per pair of iterations. For the
    triangular preconditioner it governs iterations k >= 2 with a prefactor
    involving the extreme eigenvalues of the mass and stiffness blocks.
    """
    which = which or report.method
    d = float(spectral.dim)
    beta = spectral.beta
    rho = (math.sqrt(d) - beta) / (math.sqrt(d) + beta)
    checked = []
    if which == "minres":
        prefactor = 2.0
        history = report.precond_residuals
        for j in range(1, len(history), 2):
            bound = prefactor * rho ** ((j - 1) // 2)
            checked.append((j, history[j], bound))
    elif which == "gmres":
        prefactor = 2.0 * (
            1.0 + d + math.sqrt(d * spectral.lambda_max_Mp / spectral.lambda_min_A)
        )
        history = report.residuals
        for j in range(2, len(history)):
            bound = prefactor * rho ** (j - 2)
            checked.append((j, history[j], bound))
    else:
        raise ValueError(f"unknown method {which!r}")
    worst = min((b - m for _, m, b in checked), default=float("inf"))
    return BoundCheck(
        method=which, rho=rho, prefactor=prefactor, checked=checked,
        worst_margin=float(worst),
    )


@dataclass
class InconsistencyDemo:
    alpha_h: float
    report_raw: SolveReport
    report_fixed: SolveReport
    residual_floor: float | None  # dense least-squares floor, small systems only

    def summary(self) -> str:
        raw_min = min(self.report_raw.residuals)
        lines = [
            f"alpha_h = {self.alpha_h:.6e}",
            f"raw right-hand side: {self.report_raw.summary()}",
            f"  best relative residual {raw_min:.3e}"
            + (
                f" (floor {self.residual_floor:.3e})"
                if self.residual_floor is not None
                else ""
            ),
            f"corrected right-hand side: {self.report_fixed.summary()}",
        ]
        return "\n".join(lines)


def inconsistency_demo(
    mesh: Mesh,
    problem: StokesProblem,
    method: str = "minres",
    qg_method: str = "barycenter",
    tol: float | None = None,
    maxit: int = 1000,
    restart: int = 30,
) -> InconsistencyDemo:
    """Solve with the raw and the corrected pressure right-hand side."""
    raw = build_saddle_system(mesh, problem, qg_method, consistent=False)
    fixed = build_saddle_system(mesh, problem, qg_method, consistent=True)
    inner = InnerSolver(raw.A)
    sol_raw = solve_system(raw, method, tol=tol, maxit=maxit, restart=restart,
                           inner_solver=inner)
    sol_fixed = solve_system(fixed, method, tol=tol, maxit=maxit, restart=restart,
                             inner_solver=inner)
    floor = None
    if raw.size <= DENSE_GUARD:
        op = raw.dense_operator()
        b = raw.rhs()
        x, *_ = np.linalg.lstsq(op, b, rcond=None)
        floor = float(np.linalg.norm(b - op @ x) / np.linalg.norm(b))
    return InconsistencyDemo(
        alpha_h=raw.alpha_h,
        report_raw=sol_raw.report,
        report_fixed=sol_fixed.report,
        residual_floor=floor,
    )
