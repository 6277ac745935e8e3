"""Command line front end: batch studies that emit CSV and markdown tables.

Subcommands
-----------
convergence    error tables with rates over a mesh sequence
solver-study   iteration-count grid over mesh levels and viscosities
spectral       dense eigenvalue verification on small systems
inconsistency  raw versus corrected right-hand side residual histories
export-system  write the assembled blocks in Matrix Market format

Every flag can also be supplied through a JSON config file (``--config``);
explicit flags win over file values, which win over the built-in defaults.
Exit codes: 0 success, 1 a solve failed to converge, 2 bad configuration.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

from .assembly import build_saddle_system, export_system
from .krylov import solve_system
from .mesh import Mesh, load_mesh, structured_simplex_mesh
from .problems import StokesProblem, builtin_problem, problem_from_expressions
from .sparse_linalg import InnerSolveConfig, InnerSolver
from .verification import ERROR_FIELDS, convergence_study, inconsistency_demo, spectral_report

EXIT_OK = 0
EXIT_SOLVER = 1
EXIT_CONFIG = 2

_BUILTIN_NAMES = ("stokes2d_exp", "stokes3d_trig")
_QG_METHODS = ("barycenter", "gauss2", "gauss3")
_METHODS = ("minres", "gmres")
_PRECONDS = ("block_diag", "block_lower_tri", "none")


class ConfigError(Exception):
    """Raised for invalid or contradictory experiment settings."""


@dataclass
class ExperimentConfig:
    """Settings for one CLI run; JSON config files use these field names."""

    problem: str = "stokes2d_exp"
    dim: int | None = None
    mu: list[float] = field(default_factory=lambda: [1.0])
    levels: list[int] = field(default_factory=list)
    mesh_files: list[str] = field(default_factory=list)
    qg: str = "barycenter"
    method: str = "minres"
    precond: str | None = None
    tol: float | None = None
    restart: int = 30
    maxit: int = 1000
    out: str = "."
    consistent: bool = True
    velocity: list[str] = field(default_factory=list)
    pressure: str | None = None
    forcing: list[str] | None = None


def _load_config_file(path: Path) -> dict:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config file must contain a JSON object")
    return data


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    cfg = ExperimentConfig()
    known = {f.name for f in fields(ExperimentConfig)}
    if args.config is not None:
        for key, value in _load_config_file(args.config).items():
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
            setattr(cfg, key, value)
    for name in (
        "problem", "dim", "qg", "method", "precond", "tol",
        "restart", "maxit", "out", "pressure",
    ):
        value = getattr(args, name)
        if value is not None:
            setattr(cfg, name, value)
    for name in ("mu", "mesh_files", "velocity", "forcing"):
        value = getattr(args, name)
        if value is not None:
            setattr(cfg, name, list(value))
    if args.levels is not None:
        cfg.levels = list(args.levels)
    if args.inconsistent:
        cfg.consistent = False
    _normalize(cfg)
    _validate(cfg)
    return cfg


def _normalize(cfg: ExperimentConfig) -> None:
    if isinstance(cfg.mu, (int, float)):
        cfg.mu = [float(cfg.mu)]
    cfg.mu = [float(m) for m in cfg.mu]
    if isinstance(cfg.levels, int):
        cfg.levels = [cfg.levels]
    if isinstance(cfg.mesh_files, str):
        cfg.mesh_files = [cfg.mesh_files]
    if isinstance(cfg.velocity, str):
        cfg.velocity = [cfg.velocity]
    if isinstance(cfg.forcing, str):
        cfg.forcing = [cfg.forcing]
    if cfg.problem == "custom" and cfg.dim is None and cfg.velocity:
        cfg.dim = len(cfg.velocity)


def _validate(cfg: ExperimentConfig) -> None:
    if cfg.problem not in _BUILTIN_NAMES + ("custom",):
        raise ConfigError(
            f"unknown problem {cfg.problem!r}; choose one of "
            f"{', '.join(_BUILTIN_NAMES)} or 'custom'"
        )
    if not cfg.mu:
        raise ConfigError("need at least one viscosity value")
    if any(m <= 0 for m in cfg.mu):
        raise ConfigError("viscosity values must be positive")
    if cfg.tol is not None and not 0.0 < cfg.tol < 1.0:
        raise ConfigError("tol must lie in (0, 1)")
    if cfg.restart < 1:
        raise ConfigError("restart must be a positive integer")
    if cfg.maxit < 1:
        raise ConfigError("maxit must be a positive integer")
    if cfg.qg not in _QG_METHODS:
        raise ConfigError(f"qg must be one of {', '.join(_QG_METHODS)}")
    if cfg.method not in _METHODS:
        raise ConfigError(f"method must be one of {', '.join(_METHODS)}")
    if cfg.precond is not None and cfg.precond not in _PRECONDS:
        raise ConfigError(f"precond must be one of {', '.join(_PRECONDS)}")
    if any(not isinstance(n, int) or n < 1 for n in cfg.levels):
        raise ConfigError("mesh levels must be positive integers")
    if not cfg.levels and not cfg.mesh_files:
        raise ConfigError("no meshes: give --levels or --mesh-file")
    if cfg.problem == "custom":
        if not cfg.velocity or cfg.pressure is None:
            raise ConfigError(
                "custom problems need --velocity (one per component) and --pressure"
            )
        if cfg.dim not in (2, 3):
            raise ConfigError("custom problems need --dim 2 or 3")
        if len(cfg.velocity) != cfg.dim:
            raise ConfigError(
                f"{cfg.dim}D problem needs {cfg.dim} velocity components, "
                f"got {len(cfg.velocity)}"
            )
        if cfg.forcing is not None and len(cfg.forcing) != cfg.dim:
            raise ConfigError(
                f"{cfg.dim}D problem needs {cfg.dim} forcing components, "
                f"got {len(cfg.forcing)}"
            )


def make_problem(cfg: ExperimentConfig) -> StokesProblem:
    if cfg.problem == "custom":
        return problem_from_expressions(
            cfg.dim, cfg.velocity, cfg.pressure, mu=cfg.mu[0],
            forcing_exprs=cfg.forcing,
        )
    prob = builtin_problem(cfg.problem, mu=cfg.mu[0])
    if cfg.dim is not None and cfg.dim != prob.dim:
        raise ConfigError(f"{cfg.problem} is {prob.dim}D, but --dim {cfg.dim} given")
    return prob


def resolve_meshes(cfg: ExperimentConfig, dim: int) -> list[Mesh]:
    meshes = [structured_simplex_mesh(dim, n) for n in cfg.levels]
    for path in cfg.mesh_files:
        mesh = load_mesh(path)
        if mesh.dim != dim:
            raise ConfigError(f"mesh {path} is {mesh.dim}D, problem is {dim}D")
        meshes.append(mesh)
    return meshes


def _outdir(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _fmt_mu(mu: float) -> str:
    return f"{mu:g}"


def run_convergence(cfg: ExperimentConfig) -> int:
    problem = make_problem(cfg)
    meshes = resolve_meshes(cfg, problem.dim)
    table = convergence_study(
        problem, meshes, mu_values=tuple(cfg.mu), qg_method=cfg.qg,
        method=cfg.method, tol=cfg.tol, maxit=cfg.maxit, restart=cfg.restart,
    )
    out = _outdir(cfg)
    table.write_csv(out / "convergence.csv")
    sections = [f"# Convergence: {problem.name} (qg={cfg.qg}, {cfg.method})", ""]
    for name in ERROR_FIELDS:
        sections += [f"## {name}", "", table.to_markdown(name), ""]
    (out / "convergence.md").write_text("\n".join(sections), encoding="utf-8")
    print(table.to_markdown("l2_velocity"))
    print(f"wrote {out / 'convergence.csv'} and {out / 'convergence.md'}")
    ok = all(rep.converged for rep in table.reports.values())
    if not ok:
        print("warning: at least one solve did not reach the tolerance", file=sys.stderr)
    return EXIT_OK if ok else EXIT_SOLVER


def run_solver_study(cfg: ExperimentConfig) -> int:
    problem = make_problem(cfg)
    meshes = resolve_meshes(cfg, problem.dim)
    precond = cfg.precond
    if precond is None:
        precond = "block_diag" if cfg.method == "minres" else "block_lower_tri"
    rows = []
    for mesh in meshes:
        inner = None
        for mu in cfg.mu:
            prob = problem if problem.mu == mu else problem.with_mu(mu)
            system = build_saddle_system(mesh, prob, cfg.qg, cfg.consistent)
            if inner is None and precond != "none":
                inner = InnerSolver(system.A, InnerSolveConfig())
            sol = solve_system(
                system, cfg.method, precond=precond, tol=cfg.tol,
                maxit=cfg.maxit, restart=cfg.restart, inner_solver=inner,
            )
            rows.append((mesh.num_elements, mu, sol.report))
    out = _outdir(cfg)
    csv_path = out / "solver_study.csv"
    with csv_path.open("w", encoding="utf-8") as fh:
        fh.write("N,mu,method,precond,iterations,converged,final_relres\n")
        for n, mu, rep in rows:
            fh.write(
                f"{n},{mu:.6e},{cfg.method},{precond},{rep.iterations},"
                f"{int(rep.converged)},{rep.residuals[-1]:.6e}\n"
            )
    header = "| N | " + " | ".join(f"its (mu={_fmt_mu(m)})" for m in cfg.mu) + " |"
    lines = [header, "|---|" + "---|" * len(cfg.mu)]
    for i, mesh in enumerate(meshes):
        cells = []
        for j in range(len(cfg.mu)):
            rep = rows[i * len(cfg.mu) + j][2]
            cells.append(f"{rep.iterations}{'' if rep.converged else '*'}")
        lines.append(f"| {mesh.num_elements} | " + " | ".join(cells) + " |")
    md = "\n".join(lines)
    (out / "solver_study.md").write_text(md + "\n", encoding="utf-8")
    print(f"{cfg.method} with {precond} preconditioning")
    print(md)
    if any(not rep.converged for _, _, rep in rows):
        print("* did not reach the tolerance within maxit", file=sys.stderr)
        return EXIT_SOLVER
    print(f"wrote {csv_path}")
    return EXIT_OK


def run_spectral(cfg: ExperimentConfig) -> int:
    problem = make_problem(cfg)
    meshes = resolve_meshes(cfg, problem.dim)
    out = _outdir(cfg)
    summary_rows = []
    for mesh in meshes:
        system = build_saddle_system(mesh, problem, cfg.qg, cfg.consistent)
        try:
            report = spectral_report(system)
        except ValueError as exc:
            raise ConfigError(
                f"mesh with {mesh.num_elements} elements: {exc}"
            ) from exc
        path = out / f"spectral_eigs_N{mesh.num_elements}.csv"
        report.write_csv(path)
        print(f"N = {mesh.num_elements}")
        print(report.summary())
        print(f"eigenvalues written to {path}")
        summary_rows.append((mesh.num_elements, report))
    with (out / "spectral_summary.csv").open("w", encoding="utf-8") as fh:
        fh.write(
            "N,beta,zero_gamma_count,gamma_max,gamma_upper_ok,"
            "zero_lambda_count,lambda_violations,quad_map_max_dist\n"
        )
        for n, rep in summary_rows:
            fh.write(
                f"{n},{rep.beta:.6e},{rep.zero_gamma_count},"
                f"{rep.gammas[-1]:.6e},{int(rep.gamma_upper_ok)},"
                f"{rep.zero_lambda_count},{len(rep.lambda_interval_violations)},"
                f"{rep.quad_map_max_dist:.6e}\n"
            )
    return EXIT_OK


def run_inconsistency(cfg: ExperimentConfig) -> int:
    problem = make_problem(cfg)
    meshes = resolve_meshes(cfg, problem.dim)
    mesh = meshes[0]
    demo = inconsistency_demo(
        mesh, problem, method=cfg.method, qg_method=cfg.qg, tol=cfg.tol,
        maxit=cfg.maxit, restart=cfg.restart,
    )
    out = _outdir(cfg)
    raw_path = out / "inconsistency_raw.csv"
    fixed_path = out / "inconsistency_fixed.csv"
    demo.report_raw.write_csv(raw_path)
    demo.report_fixed.write_csv(fixed_path)
    print(demo.summary())
    print(f"residual histories written to {raw_path} and {fixed_path}")
    return EXIT_OK if demo.report_fixed.converged else EXIT_SOLVER


def run_export(cfg: ExperimentConfig) -> int:
    problem = make_problem(cfg)
    mesh = resolve_meshes(cfg, problem.dim)[0]
    system = build_saddle_system(mesh, problem, cfg.qg, cfg.consistent)
    out = _outdir(cfg)
    paths = export_system(system, out)
    meta = {
        "dim": system.mesh.dim,
        "num_elements": mesh.num_elements,
        "n_u": system.n_u,
        "n_p": system.n_p,
        "mu": system.mu,
        "alpha_h": system.alpha_h,
        "consistent": system.consistent,
        "qg_method": system.qg_method,
        "problem": problem.name,
    }
    meta_path = out / "system_meta.json"
    meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", "utf-8")
    for p in paths + [meta_path]:
        print(f"wrote {p}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, metavar="PATH",
                        help="JSON config file; explicit flags override it")
    common.add_argument("--out", metavar="DIR",
                        help="output directory (default: current directory)")
    common.add_argument("--problem",
                        help="stokes2d_exp, stokes3d_trig, or custom")
    common.add_argument("--dim", type=int, choices=(2, 3),
                        help="space dimension (needed for custom problems)")
    common.add_argument("--mu", type=float, action="append", metavar="MU",
                        help="viscosity; repeat the flag for several values")
    common.add_argument("--levels", type=int, nargs="+", metavar="N",
                        help="structured mesh subdivisions, e.g. --levels 4 8 16")
    common.add_argument("--mesh-file", action="append", dest="mesh_files",
                        metavar="PATH", help="mesh file to load; repeatable")
    common.add_argument("--qg", choices=_QG_METHODS,
                        help="boundary-data projection rule")
    common.add_argument("--method", choices=_METHODS, help="Krylov method")
    common.add_argument("--precond", choices=_PRECONDS,
                        help="preconditioner (default depends on the method)")
    common.add_argument("--tol", type=float,
                        help="relative residual tolerance (default 1e-9 in 2D, 1e-8 in 3D)")
    common.add_argument("--restart", type=int, help="GMRES restart length")
    common.add_argument("--maxit", type=int, help="iteration cap")
    common.add_argument("--inconsistent", action="store_true", default=None,
                        help="keep the raw incompatible right-hand side")
    common.add_argument("--velocity", action="append", metavar="EXPR",
                        help="exact velocity component (custom problems; repeat per component)")
    common.add_argument("--pressure", metavar="EXPR",
                        help="exact pressure (custom problems)")
    common.add_argument("--forcing", action="append", metavar="EXPR",
                        help="forcing component; omitted means derive it symbolically")

    parser = argparse.ArgumentParser(
        prog="wgstokes",
        description="Weak Galerkin Stokes studies: convergence, solver behavior, spectra.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, func, help_text in (
        ("convergence", run_convergence, "error table with rates over a mesh sequence"),
        ("solver-study", run_solver_study, "iteration counts over levels and viscosities"),
        ("spectral", run_spectral, "dense eigenvalue verification on small meshes"),
        ("inconsistency", run_inconsistency,
         "compare raw and corrected right-hand sides"),
        ("export-system", run_export, "write the assembled system in Matrix Market form"),
    ):
        sp = sub.add_parser(name, parents=[common], help=help_text)
        sp.set_defaults(func=func)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = config_from_args(args)
        return args.func(cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
