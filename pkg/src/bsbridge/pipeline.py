"""Solve an instance, then read off potentials, pressure and HJB residuals."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import hjb
from .kernels import GeneratorMatrix
from .scenario import Problem, Scenario, build_problem, parse_scenario
from .solver import BSPotentials, ReferenceChain, SolveReport, all_marginals, gauge_fix, solve_bs

# interior time window on which the continuum HJB residual is measured
RESIDUAL_WINDOW = (0.25, 0.75)
# spatial bulk |x| <= RESIDUAL_BULK for the sup-norm variant
RESIDUAL_BULK = 3.0


@dataclass
class HJBResult:
    psi: dict  # x0 -> PsiField
    pressure: hjb.PressureField
    residual: dict  # x0 -> (K-1, S) array
    tilted_marginals: dict  # x0 -> (K+1, S) array
    P0: np.ndarray
    summary: dict = field(default_factory=dict)


@dataclass
class PipelineResult:
    problem: Problem
    potentials: BSPotentials
    report: SolveReport
    marginals: np.ndarray
    hjb: HJBResult


def window_l2_residual(res: HJBResult, times, window=RESIDUAL_WINDOW) -> float:
    """Max over window slices of the residual's L2 norm under the solved path law.

    Slice ``k`` contributes ``sqrt(sum_x0 P0(x0) sum_z P^{x0}_k(z) r^{x0}_k(z)^2)``.
    """
    lo, hi = window
    worst = 0.0
    for k in range(1, len(times) - 1):
        if not lo - 1e-12 <= times[k] <= hi + 1e-12:
            continue
        acc = 0.0
        for x0, r in res.residual.items():
            w = res.tilted_marginals[x0][k]
            rk = r[k - 1]
            ok = w > 0
            acc += res.P0[x0] * float(np.sum(w[ok] * rk[ok] ** 2))
        worst = max(worst, math.sqrt(acc))
    return worst


def window_sup_residual(res: HJBResult, times, points, window=RESIDUAL_WINDOW, bulk=RESIDUAL_BULK) -> float:
    """Max ``|r^{x0}_k(z)|`` over window slices with ``|x0|, |z| <= bulk``.

    Keeps the sup norm away from the terminal layer and the truncated edges.
    """
    lo, hi = window
    inside = np.abs(points) <= bulk
    worst = 0.0
    for x0, r in res.residual.items():
        if not inside[x0]:
            continue
        for k in range(1, len(times) - 1):
            if lo - 1e-12 <= times[k] <= hi + 1e-12:
                vals = np.abs(r[k - 1][inside])
                if np.isfinite(vals).any():
                    worst = max(worst, float(np.nanmax(vals)))
    return worst


def analyse_hjb(chain: ReferenceChain, pot: BSPotentials, gen: GeneratorMatrix, marginals, spacing=1.0) -> HJBResult:
    """Potentials, pressure and residuals for every ``x0`` charged by ``P_0``.

    ``pot`` should already be gauge-fixed so that ``psi`` and the pressure
    share one gauge.
    """
    full = all_marginals(chain, pot)
    P0 = full[0]
    dt = chain.dt
    pressure = hjb.extract_pressure(pot, dt, marginals)
    psi, residual, tilted = {}, {}, {}
    discrete, ident, rmax = 0.0, 0.0, 0.0
    mixed = np.zeros_like(full)
    for x0 in np.flatnonzero(P0 > 0):
        x0 = int(x0)
        f = hjb.recover_psi(chain, pot, x0)
        psi[x0] = f
        r = hjb.hjb_residual(f, pressure, gen, dt)
        residual[x0] = r
        rmax = max(rmax, float(np.nanmax(np.abs(r))))
        discrete = max(discrete, float(np.nanmax(np.abs(hjb.discrete_hjb_residual(f, pressure, chain)))))
        ident = max(ident, hjb.backward_identity_gap(f, chain, pot))
        _, tc = hjb.girsanov_tilt(f, chain, spacing)
        law = tc.initial_law
        laws = [law]
        for T in tc.kernels:
            law = law @ T
            laws.append(law)
        tilted[x0] = np.array(laws)
        mixed += P0[x0] * tilted[x0]
    out = HJBResult(psi, pressure, residual, tilted, P0)
    out.summary = {
        "max_abs_residual": rmax,
        "window": list(RESIDUAL_WINDOW),
        "window_l2_residual": window_l2_residual(out, chain.times),
        "window_bulk_sup_residual": window_sup_residual(out, chain.times, gen.grid.points),
        "discrete_residual_max": discrete,
        "backward_identity_gap": ident,
        "htransform_gap": float(np.abs(mixed - full).max()),
    }
    return out


def run_problem(problem: Problem, eps=1e-10, max_iter=10_000) -> PipelineResult:
    chain, cons = problem.chain, problem.constraints
    pot, report = solve_bs(chain, cons, eps=eps, max_iter=max_iter)
    pot = gauge_fix(pot, cons.marginals)
    h = analyse_hjb(chain, pot, problem.generator, cons.marginals, problem.grid.spacing)
    return PipelineResult(problem, pot, report, all_marginals(chain, pot), h)


def run_scenario(sc: Scenario) -> PipelineResult:
    return run_problem(build_problem(sc), eps=float(sc.tolerances["eps"]), max_iter=int(sc.tolerances["max_iter"]))


def ou_problem(K: int, c: float = 0.9, n: int = 64, length: float = 12.0) -> Problem:
    return build_problem(parse_scenario({"preset": "ou-gaussian-c", "c": c, "K": K,
                                         "grid": {"n": n, "length": length}}))


def refinement_study(Ks=(8, 16, 32), c: float = 0.9, n: int = 64, length: float = 12.0) -> list[dict]:
    """HJB residual summaries of the OU instance at successive ``K``."""
    rows = []
    for K in Ks:
        res = run_problem(ou_problem(K, c, n, length))
        rows.append({"K": K, "iterations": res.report.iterations, "constraint_gap": res.report.constraint_gap,
                     "entropy": res.report.entropy, **res.hjb.summary})
    return rows
