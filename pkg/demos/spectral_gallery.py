"""Dense spectral verification of the preconditioner theory at small sizes.

Three quantities are computed exactly (dense eigensolves) on coarse meshes:

1. Generalized Schur eigenvalues  B A^-1 B^T q = gamma Mp q.
   Exactly one gamma is zero (the constant-pressure kernel); the rest lie
   in [beta^2, d] where d is the space dimension and beta is the discrete
   inf-sup constant. beta is never assumed: it is read off as the square
   root of the smallest positive gamma.

2. Eigenvalues of the block-diagonal preconditioned operator. The theory
   places them in two intervals bracketing 0, with endpoints given by the
   quadratic map lambda^2 - lambda = gamma. The map itself checks out to
   machine precision. The interval containment does not: every velocity
   field with zero weak divergence pairs with zero pressure to give an
   eigenvector with lambda = 1 exactly, and 1 lies strictly below the
   positive interval. The gallery prints that multiplicity (n_u - N + 1)
   so the structure is visible rather than mysterious.

3. Worst-case residual bound checks: the measured MINRES residuals are
   compared against the convergence bound built from beta at every odd
   iteration, and the GMRES residuals against the corresponding bound with
   the dense-computed extreme eigenvalues of Mp and A.

Usage::

    python demos/spectral_gallery.py
    python demos/spectral_gallery.py --levels 2 3 4 5
"""

from __future__ import annotations

import argparse

from wgstokes import (
    build_saddle_system,
    builtin_problem,
    residual_bound_check,
    solve_system,
    spectral_report,
    structured_simplex_mesh,
)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--levels", type=int, nargs="+", default=[2, 3, 4])
    args = ap.parse_args()
    problem = builtin_problem("stokes2d_exp")

    last_system = None
    for n in args.levels:
        system = build_saddle_system(structured_simplex_mesh(2, n), problem)
        report = spectral_report(system)
        print(f"1/h = {n} ({system.n_u} velocity + {system.n_p} pressure unknowns)")
        print("  " + report.summary().replace("\n", "\n  "))
        kernel = system.n_u - system.n_p + 1
        print(f"  divergence-free modes with lambda = 1: {kernel}\n")
        last_system = system

    print("residual bounds on the finest of the levels above:")
    spec = spectral_report(last_system)
    for method in ("minres", "gmres"):
        sol = solve_system(last_system, method)
        check = residual_bound_check(sol.report, spec, method)
        state = "holds" if check.passed else "violated"
        print(f"  {method}: bound {state} at {len(check.checked)} checkpoints, "
              f"decay factor {check.rho:.4f}, "
              f"smallest margin {check.worst_margin:.2e}")


if __name__ == "__main__":
    main()
