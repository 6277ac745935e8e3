"""Krylov solution of the rescaled singular saddle system.

MINRES runs in the inner product induced by the symmetric positive definite
block-diagonal preconditioner diag(A, Mp); restarted GMRES uses the
block lower-triangular preconditioner [A, 0; -B, -Mp] applied from the
right, so its recurrence residual is the true residual. Both stop on the
true relative residual of the rescaled system and work on the singular
system as-is; with a zero initial guess and a consistent right-hand side
the zero eigenvalue never enters the Krylov space.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .assembly import SaddleSystem, build_saddle_system
from .mesh import Mesh
from .problems import StokesProblem
from .sparse_linalg import InnerSolveConfig, InnerSolver
from .wg_core import PressureField, WGField

__all__ = [
    "PreconditionerSpec",
    "SaddlePreconditioner",
    "SolveReport",
    "StokesSolution",
    "apply_Pd_inverse",
    "apply_Pt_inverse",
    "minres",
    "gmres_restart",
    "solve_system",
    "solve_stokes",
    "default_tolerance",
]

STAGNATION_WINDOW = 50
STAGNATION_FACTOR = 100.0
STAGNATION_IMPROVEMENT = 0.999


@dataclass
class PreconditionerSpec:
    kind: str = "block_diag"  # block_diag | block_lower_tri | none
    inner: InnerSolveConfig = field(default_factory=InnerSolveConfig)

    def __post_init__(self):
        if self.kind not in ("block_diag", "block_lower_tri", "none"):
            raise ValueError(f"unknown preconditioner kind {self.kind!r}")


class SaddlePreconditioner:
    """Applies the inverse of the chosen block preconditioner.

    The A-block inverse comes from a shared InnerSolver so repeated solves
    against the same stiffness block reuse its factorization.
    """

    def __init__(
        self,
        system: SaddleSystem,
        spec: PreconditionerSpec | None = None,
        inner_solver: InnerSolver | None = None,
    ):
        self.spec = spec or PreconditionerSpec()
        self.system = system
        self.kind = self.spec.kind
        if self.kind == "none":
            self.inner = None
        else:
            self.inner = inner_solver or InnerSolver(system.A, self.spec.inner)

    @property
    def is_spd(self) -> bool:
        return self.kind in ("block_diag", "none")

    @property
    def inner_iterations(self) -> int:
        return 0 if self.inner is None else self.inner.total_iterations

    def apply(self, r: np.ndarray) -> np.ndarray:
        n_u = self.system.n_u
        if self.kind == "none":
            return r.copy()
        ru, rp = r[:n_u], r[n_u:]
        xu = self.inner.solve(ru)
        if self.kind == "block_diag":
            return np.concatenate([xu, rp / self.system.Mp])
        # lower-triangular forward substitution with second row [-B, -Mp]
        xp = -(rp + self.system.B @ xu) / self.system.Mp
        return np.concatenate([xu, xp])


def apply_Pd_inverse(
    system: SaddleSystem, r: np.ndarray, inner_solver: InnerSolver | None = None
) -> np.ndarray:
    return SaddlePreconditioner(
        system, PreconditionerSpec("block_diag"), inner_solver
    ).apply(r)


def apply_Pt_inverse(
    system: SaddleSystem, r: np.ndarray, inner_solver: InnerSolver | None = None
) -> np.ndarray:
    return SaddlePreconditioner(
        system, PreconditionerSpec("block_lower_tri"), inner_solver
    ).apply(r)


@dataclass
class SolveReport:
    method: str
    preconditioner: str
    iterations: int
    converged: bool
    stagnated: bool
    residuals: list[float]  # true relative residuals, entry 0 for the initial guess
    precond_residuals: list[float]  # recurrence estimate in the preconditioner norm
    tol: float
    maxit: int
    wall_time: float
    inner_iterations: int
    restart: int | None = None

    def summary(self) -> str:
        flag = "converged" if self.converged else "NOT converged"
        extra = " (stagnated)" if self.stagnated else ""
        return (
            f"{self.method}/{self.preconditioner}: {self.iterations} iterations, "
            f"relres {self.residuals[-1]:.3e}, {flag}{extra}, "
            f"{self.wall_time:.2f}s, inner iterations {self.inner_iterations}"
        )

    def write_csv(self, path: str | Path) -> None:
        path = Path(path)
        with path.open("w", encoding="utf-8") as fh:
            fh.write("iteration,relres\n")
            for k, r in enumerate(self.residuals):
                fh.write(f"{k},{r:.6e}\n")


def _detect_stagnation(residuals: list[float], tol: float) -> bool:
    w = STAGNATION_WINDOW
    for k in range(w, len(residuals)):
        if (
            residuals[k] > STAGNATION_FACTOR * tol
            and residuals[k] >= STAGNATION_IMPROVEMENT * residuals[k - w]
        ):
            return True
    return False


@dataclass
class StokesSolution:
    velocity: WGField
    pressure: PressureField
    report: SolveReport
    raw: np.ndarray  # rescaled unknowns (mu*u, p) as iterated


def minres(
    system: SaddleSystem,
    precond: SaddlePreconditioner,
    tol: float = 1e-9,
    maxit: int = 1000,
    stop_on_stagnation: bool = False,
) -> tuple[np.ndarray, SolveReport]:
    """Preconditioned MINRES with zero initial guess and true-residual stopping."""
    if not precond.is_spd:
        raise ValueError("minres needs a symmetric positive definite preconditioner")
    t0 = time.perf_counter()
    inner0 = precond.inner_iterations
    b = system.rhs()
    normb = float(np.linalg.norm(b))
    n = b.shape[0]
    x = np.zeros(n)
    if normb == 0.0:
        report = SolveReport(
            "minres", precond.kind, 0, True, False, [0.0], [0.0], tol, maxit,
            time.perf_counter() - t0, 0,
        )
        return x, report

    # Lanczos in the preconditioner inner product with Givens QR updates
    r2 = b.copy()
    y = precond.apply(r2)
    beta1 = math.sqrt(float(r2 @ y))
    residuals = [1.0]
    precond_res = [1.0]
    r1 = r2.copy()
    oldb = 0.0
    beta = beta1
    dbar = epsln = 0.0
    phibar = beta1
    cs, sn = -1.0, 0.0
    w = np.zeros(n)
    w2 = np.zeros(n)
    converged = False
    it = 0
    while it < maxit:
        it += 1
        v = y / beta
        y = system.apply(v)
        if it >= 2:
            y -= (beta / oldb) * r1
        alfa = float(v @ y)
        y -= (alfa / beta) * r2
        r1 = r2
        r2 = y
        y = precond.apply(r2)
        oldb = beta
        beta2 = float(r2 @ y)
        if beta2 < 0.0:
            raise RuntimeError(
                "preconditioner lost positive definiteness "
                f"(r'My = {beta2:.3e} at iteration {it})"
            )
        beta = math.sqrt(beta2)

        oldeps = epsln
        delta = cs * dbar + sn * alfa
        gbar = sn * dbar - cs * alfa
        epsln = sn * beta
        dbar = -cs * beta
        gamma = max(math.hypot(gbar, beta), np.finfo(float).eps)
        cs = gbar / gamma
        sn = beta / gamma
        phi = cs * phibar
        phibar = sn * phibar

        w1 = w2
        w2 = w
        w = (v - oldeps * w1 - delta * w2) / gamma
        x = x + phi * w

        precond_res.append(abs(phibar) / beta1)
        true_rel = float(np.linalg.norm(b - system.apply(x))) / normb
        residuals.append(true_rel)
        if true_rel <= tol:
            converged = True
            break
        if stop_on_stagnation and _detect_stagnation(residuals, tol):
            break

    report = SolveReport(
        "minres",
        precond.kind,
        it,
        converged,
        _detect_stagnation(residuals, tol),
        residuals,
        precond_res,
        tol,
        maxit,
        time.perf_counter() - t0,
        precond.inner_iterations - inner0,
    )
    return x, report


def gmres_restart(
    system: SaddleSystem,
    precond: SaddlePreconditioner,
    tol: float = 1e-9,
    maxit: int = 1000,
    restart: int = 30,
    stop_on_stagnation: bool = False,
) -> tuple[np.ndarray, SolveReport]:
    """Restarted GMRES, right preconditioning, zero initial guess.

    With right preconditioning the least-squares recurrence residual equals
    the true residual, so the per-iteration history needs no extra products;
    the true residual is still recomputed at every restart and on claimed
    convergence as a safeguard.
    """
    t0 = time.perf_counter()
    inner0 = precond.inner_iterations
    b = system.rhs()
    normb = float(np.linalg.norm(b))
    n = b.shape[0]
    x = np.zeros(n)
    if normb == 0.0:
        report = SolveReport(
            "gmres", precond.kind, 0, True, False, [0.0], [0.0], tol, maxit,
            time.perf_counter() - t0, 0, restart,
        )
        return x, report

    residuals = [1.0]
    it = 0
    converged = False
    stop = False
    while it < maxit and not stop:
        r = b - system.apply(x)
        beta = float(np.linalg.norm(r))
        if beta / normb <= tol:
            converged = True
            break
        m = min(restart, maxit - it)
        v = np.zeros((m + 1, n))
        v[0] = r / beta
        h = np.zeros((m + 1, m))
        cs = np.zeros(m)
        sn = np.zeros(m)
        g = np.zeros(m + 1)
        g[0] = beta
        j = -1
        for j in range(m):
            it += 1
            z = precond.apply(v[j])
            wv = system.apply(z)
            for i in range(j + 1):
                h[i, j] = float(v[i] @ wv)
                wv -= h[i, j] * v[i]
            h[j + 1, j] = float(np.linalg.norm(wv))
            breakdown = h[j + 1, j] == 0.0
            if not breakdown:
                v[j + 1] = wv / h[j + 1, j]
            for i in range(j):
                t = cs[i] * h[i, j] + sn[i] * h[i + 1, j]
                h[i + 1, j] = -sn[i] * h[i, j] + cs[i] * h[i + 1, j]
                h[i, j] = t
            denom = math.hypot(h[j, j], h[j + 1, j])
            cs[j] = h[j, j] / denom
            sn[j] = h[j + 1, j] / denom
            h[j, j] = denom
            h[j + 1, j] = 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]
            relres = abs(g[j + 1]) / normb
            residuals.append(relres)
            if relres <= tol or breakdown:
                break
            if stop_on_stagnation and _detect_stagnation(residuals, tol):
                stop = True
                break
        # solve the small triangular system and fold the correction back
        k = j + 1
        ysmall = np.linalg.solve(h[:k, :k], g[:k]) if k else np.zeros(0)
        if k:
            x = x + precond.apply(v[:k].T @ ysmall)
        true_rel = float(np.linalg.norm(b - system.apply(x))) / normb
        residuals[-1] = true_rel
        if true_rel <= tol:
            converged = True
            break

    report = SolveReport(
        "gmres",
        precond.kind,
        it,
        converged,
        _detect_stagnation(residuals, tol),
        residuals,
        list(residuals),
        tol,
        maxit,
        time.perf_counter() - t0,
        precond.inner_iterations - inner0,
        restart,
    )
    return x, report


def default_tolerance(dim: int) -> float:
    return 1e-9 if dim == 2 else 1e-8


def _to_solution(system: SaddleSystem, x: np.ndarray, report: SolveReport) -> StokesSolution:
    interior, facet, p = system.split(x)
    vol = system.Mp
    p = p - float(p @ vol) / float(vol.sum())
    velocity = WGField(
        dim=system.dof.dim,
        interior=interior,
        facet=facet,
        boundary=system.g_boundary.copy(),
    )
    return StokesSolution(velocity, PressureField(p), report, x)


def solve_system(
    system: SaddleSystem,
    method: str = "minres",
    precond: PreconditionerSpec | str | None = None,
    tol: float | None = None,
    maxit: int = 1000,
    restart: int = 30,
    inner_solver: InnerSolver | None = None,
    stop_on_stagnation: bool = False,
) -> StokesSolution:
    """Solve a prebuilt system; reuse inner_solver to share A factorizations."""
    if tol is None:
        tol = default_tolerance(system.dof.dim)
    if precond is None:
        precond = PreconditionerSpec(
            "block_diag" if method == "minres" else "block_lower_tri"
        )
    elif isinstance(precond, str):
        precond = PreconditionerSpec(precond)
    p = SaddlePreconditioner(system, precond, inner_solver)
    if method == "minres":
        x, report = minres(system, p, tol, maxit, stop_on_stagnation)
    elif method == "gmres":
        x, report = gmres_restart(system, p, tol, maxit, restart, stop_on_stagnation)
    else:
        raise ValueError(f"unknown method {method!r}; use minres or gmres")
    return _to_solution(system, x, report)


def solve_stokes(
    mesh: Mesh,
    problem: StokesProblem,
    method: str = "minres",
    precond: PreconditionerSpec | str | None = None,
    tol: float | None = None,
    maxit: int = 1000,
    restart: int = 30,
    qg_method: str = "barycenter",
    consistent: bool = True,
    stop_on_stagnation: bool = False,
) -> StokesSolution:
    """Assemble and solve; velocity is returned unscaled, pressure zero-mean."""
    system = build_saddle_system(mesh, problem, qg_method, consistent)
    return solve_system(
        system, method, precond, tol, maxit, restart,
        stop_on_stagnation=stop_on_stagnation,
    )
