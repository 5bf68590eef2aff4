"""Potential, pressure and the non-local HJB residual of a solved instance.

For a fixed starting state ``x0`` the potential is the log of the backward
message

    exp(psi_k(z)) = exp(a_k(z)) * sum_z' R_k(z, z') exp(psi_{k+1}(z')),
    psi_K(z) = eta(x0, z),

and the pressure is ``a_k / dt``. Plugging both into

    d_t psi + exp(-psi) A exp(psi) + p = 0

with ``R_k ~ I + dt A`` leaves an O(dt) residual; :func:`discrete_hjb_residual`
uses the kernel itself and vanishes up to rounding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernels import GeneratorMatrix
from .solver import BSPotentials, ReferenceChain, _check_shapes, _exp_shift, _xlogy_sum

MEAN_ZERO = "mean_zero_under_mu"
RAW = "raw"


@dataclass(frozen=True)
class PsiField:
    values: np.ndarray  # (K+1, S)
    x0: int

    @property
    def K(self) -> int:
        return self.values.shape[0] - 1


@dataclass(frozen=True)
class PressureField:
    values: np.ndarray  # (K-1, S), row k-1 is p_k
    gauge: str = RAW


@dataclass(frozen=True)
class GirsanovData:
    """Per-step tilts read off ``psi_{k+1}``.

    ``ell[k, z, z']`` is the jump-intensity factor for ``z -> z'`` and
    ``beta[k, z]`` the drift shift (central gradient).
    """

    ell: np.ndarray  # (K, S, S)
    beta: np.ndarray  # (K, S)


def _log_apply(R, psi_next):
    """``log(R @ exp(psi_next))`` without overflow."""
    w, c = _exp_shift(psi_next)
    with np.errstate(divide="ignore"):
        return np.log(R @ w) + c


def recover_psi(chain: ReferenceChain, pot: BSPotentials, x0: int) -> PsiField:
    _check_shapes(chain, pot)
    K = chain.K
    a = pot.full_a()
    psi = np.empty((K + 1, chain.S))
    psi[K] = pot.eta[x0]
    for k in range(K - 1, -1, -1):
        psi[k] = a[k] + _log_apply(chain.kernels[k], psi[k + 1])
    if not np.isfinite(psi[0, x0]):
        raise FloatingPointError(f"potential vanishes at the starting state x0={x0}")
    return PsiField(psi, int(x0))


def extract_pressure(pot: BSPotentials, dt: float, marginals=None) -> PressureField:
    """``p_k = a_k / dt``; with ``marginals`` each slice is centred under ``mu_k``.

    The discarded constants are pure gauge: :func:`bsbridge.solver.gauge_fix`
    moves them into ``eta`` without changing the path law.
    """
    p = pot.a / dt
    if marginals is None:
        return PressureField(p, RAW)
    p = p.copy()
    for k, m in enumerate(marginals):
        p[k] -= _xlogy_sum(np.asarray(m), p[k])
    return PressureField(p, MEAN_ZERO)


def hjb_residual(psi: PsiField, p: PressureField, gen: GeneratorMatrix, dt: float) -> np.ndarray:
    """``(psi_{k+1} - psi_k)/dt + exp(-psi_k) A exp(psi_k) + p_k`` for ``k = 1..K-1``.

    Entries where ``psi_k = -inf`` are NaN.
    """
    K = psi.K
    A = gen.entries
    out = np.empty((K - 1, psi.values.shape[1]))
    for k in range(1, K):
        w, _ = _exp_shift(psi.values[k])
        with np.errstate(divide="ignore", invalid="ignore"):
            gen_term = (A @ w) / w
            out[k - 1] = (psi.values[k + 1] - psi.values[k]) / dt + gen_term + p.values[k - 1]
    out[~np.isfinite(out)] = np.nan
    return out


def discrete_hjb_residual(psi: PsiField, p: PressureField, chain: ReferenceChain) -> np.ndarray:
    """Same residual with ``dt A`` replaced by the log action of the kernel.

    ``(psi_{k+1} - psi_k)/dt + (log(R_k e^{psi_{k+1}}) - psi_{k+1})/dt + p_k``,
    which is zero by the backward recursion whenever ``p`` was read off the
    same potentials that produced ``psi``.
    """
    dt = chain.dt
    K = psi.K
    out = np.empty((K - 1, psi.values.shape[1]))
    for k in range(1, K):
        nxt = psi.values[k + 1]
        with np.errstate(invalid="ignore"):
            lr = _log_apply(chain.kernels[k], nxt)
            out[k - 1] = (nxt - psi.values[k]) / dt + (lr - nxt) / dt + p.values[k - 1]
    out[~np.isfinite(out)] = np.nan
    return out


def backward_identity_gap(psi: PsiField, chain: ReferenceChain, pot: BSPotentials) -> float:
    """Relative sup gap of ``e^{psi_k} = e^{a_k} R_k e^{psi_{k+1}}`` over all slices.

    Each slice is compared in the exponential domain after dividing both
    sides by ``max e^{psi_k}``.
    """
    a = pot.full_a()
    worst = 0.0
    for k in range(psi.K):
        lhs_log = psi.values[k]
        c = np.max(lhs_log)
        lhs = np.exp(lhs_log - c)
        w, cn = _exp_shift(psi.values[k + 1])
        rhs = np.exp(a[k] + cn - c) * (chain.kernels[k] @ w)
        worst = max(worst, float(np.max(np.abs(lhs - rhs))))
    return worst


def _central_gradient(f, dx):
    g = np.empty_like(f)
    g[1:-1] = (f[2:] - f[:-2]) / (2 * dx)
    g[0] = (f[1] - f[0]) / dx
    g[-1] = (f[-1] - f[-2]) / dx
    return g


def girsanov_tilt(psi: PsiField, chain: ReferenceChain, spacing: float = 1.0):
    """Doob transform of the reference by ``exp(psi)`` started at ``psi.x0``.

    Returns ``(GirsanovData, tilted_chain)``. States with zero normalizer are
    never reached by the tilted chain and keep their reference row.
    """
    K, S = chain.K, chain.S
    vals = psi.values
    if not np.isfinite(vals[0, psi.x0]):
        raise ValueError(f"zero normalizer at the starting state {psi.x0}")
    kernels = []
    ell = np.empty((K, S, S))
    beta = np.empty((K, S))
    for k, R in enumerate(chain.kernels):
        nxt = vals[k + 1]
        w, _ = _exp_shift(nxt)
        T = R * w[None, :]
        norm = T.sum(axis=1)
        dead = norm <= 0
        T[~dead] /= norm[~dead, None]
        T[dead] = R[dead]
        kernels.append(T)
        with np.errstate(invalid="ignore"):
            ell[k] = np.exp(nxt[None, :] - nxt[:, None])
            beta[k] = _central_gradient(nxt, spacing)
    start = np.zeros(S)
    start[psi.x0] = 1.0
    return GirsanovData(ell, beta), ReferenceChain(start, tuple(kernels), chain.dt)


def tilt_all(chain: ReferenceChain, pot: BSPotentials, P0=None, spacing: float = 1.0) -> dict:
    """Tilted chain for every starting state charged by ``P_0``."""
    from .solver import all_marginals

    if P0 is None:
        P0 = all_marginals(chain, pot)[0]
    return {int(x0): girsanov_tilt(recover_psi(chain, pot, x0), chain, spacing)[1] for x0 in np.flatnonzero(P0 > 0)}


def htransform_consistency(tilted: dict, chain: ReferenceChain, pot: BSPotentials) -> float:
    """Sup gap between solver marginals and the ``P_0``-mixture of tilted chains."""
    from .solver import all_marginals

    target = all_marginals(chain, pot)
    P0 = target[0]
    mixed = np.zeros_like(target)
    for x0, tc in tilted.items():
        law = tc.initial_law
        mixed[0] += P0[x0] * law
        for k, T in enumerate(tc.kernels, start=1):
            law = law @ T
            mixed[k] += P0[x0] * law
    return float(np.abs(mixed - target).max())
