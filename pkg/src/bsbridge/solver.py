"""Discrete Brenier-Schrödinger problem on a finite-state Markov chain.

Minimize ``H(P | R)`` over laws of ``(X_0, ..., X_K)`` subject to
``P_k = mu_k`` for interior ``k`` and ``P_{0K} = pi``. Minimizers have the
product form

    P(x) ∝ R(x) exp(eta(x_0, x_K) + sum_k a_k(x_k)),

so we solve by iterative proportional fitting on ``(eta, a_1 .. a_{K-1})``.
Inference in this model is exact: conditioned on ``x_0`` the factor graph is
a chain, so forward/backward messages are carried for every ``x_0`` at once
as ``S x S`` matrices (rows indexed by ``x_0``).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .kernels import TransitionKernel

STOCH_TOL = 1e-10


class InfeasibleError(ValueError):
    """A constraint cannot be met on the support of the reference."""

    def __init__(self, constraint: str, msg: str):
        super().__init__(f"infeasible constraint {constraint}: {msg}")
        self.constraint = constraint


def _prob_vector(v, name) -> np.ndarray:
    v = np.array(v, dtype=float)
    if v.ndim != 1 or v.min() < 0 or abs(v.sum() - 1) > STOCH_TOL:
        raise ValueError(f"{name} must be a probability vector")
    return v


@dataclass(frozen=True)
class ReferenceChain:
    initial_law: np.ndarray
    kernels: tuple
    dt: float

    def __post_init__(self):
        object.__setattr__(self, "initial_law", _prob_vector(self.initial_law, "initial_law"))
        ks = tuple(np.array(k, dtype=float) for k in self.kernels)
        S = self.initial_law.size
        if len(ks) < 2:
            raise ValueError(f"need K >= 2 steps, got {len(ks)}")
        for k, R in enumerate(ks):
            if R.shape != (S, S):
                raise ValueError(f"kernel {k} has shape {R.shape}, expected {(S, S)}")
            if R.min() < 0 or np.abs(R.sum(axis=1) - 1).max() > STOCH_TOL:
                raise ValueError(f"kernel {k} is not row-stochastic")
        object.__setattr__(self, "kernels", ks)
        if not self.dt > 0:
            raise ValueError("dt must be positive")

    @property
    def S(self) -> int:
        return self.initial_law.size

    @property
    def K(self) -> int:
        return len(self.kernels)

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.K + 1)

    def reference_marginals(self) -> np.ndarray:
        """``(K+1, S)`` array of ``R_k``."""
        out = [self.initial_law]
        for R in self.kernels:
            out.append(out[-1] @ R)
        return np.array(out)

    def endpoint_law(self) -> np.ndarray:
        """Joint law ``R_{0K}`` of ``(X_0, X_K)``."""
        M = np.diag(self.initial_law)
        for R in self.kernels:
            M = M @ R
        return M


def build_reference(kernel: TransitionKernel, K: int, initial_law) -> ReferenceChain:
    """Time-homogeneous chain made of ``K`` copies of ``kernel``."""
    if K < 2:
        raise ValueError(f"K must be >= 2, got {K}")
    return ReferenceChain(initial_law, (kernel.entries,) * K, kernel.dt)


@dataclass(frozen=True)
class ConstraintSet:
    """Interior marginals ``mu_1 .. mu_{K-1}`` and endpoint coupling ``pi``.

    ``initial`` / ``final`` are optional required laws at ``t_0`` and
    ``t_K``; if given they must match the row / column marginals of ``pi``.
    """

    marginals: tuple
    endpoint_coupling: np.ndarray
    initial: np.ndarray | None = None
    final: np.ndarray | None = None

    def __post_init__(self):
        ms = tuple(_prob_vector(m, f"marginal[{k + 1}]") for k, m in enumerate(self.marginals))
        object.__setattr__(self, "marginals", ms)
        pi = np.array(self.endpoint_coupling, dtype=float)
        if pi.ndim != 2 or pi.shape[0] != pi.shape[1] or pi.min() < 0 or abs(pi.sum() - 1) > STOCH_TOL:
            raise ValueError("endpoint_coupling must be a square nonnegative matrix summing to 1")
        object.__setattr__(self, "endpoint_coupling", pi)
        S = pi.shape[0]
        if any(m.size != S for m in ms):
            raise ValueError("marginals and coupling disagree on the number of states")
        for name, req, got in (("initial", self.initial, pi.sum(axis=1)), ("final", self.final, pi.sum(axis=0))):
            if req is not None:
                req = _prob_vector(req, name)
                if np.abs(req - got).max() > 1e-10:
                    raise ValueError(f"{name} law differs from the corresponding marginal of the coupling")
                object.__setattr__(self, name, req)

    @property
    def K(self) -> int:
        return len(self.marginals) + 1

    def check_support(self, chain: ReferenceChain):
        """Raise :class:`InfeasibleError` unless each target is ``<<`` the reference."""
        if chain.K != self.K or chain.S != self.endpoint_coupling.shape[0]:
            raise ValueError("constraints do not match the chain's (K, S)")
        ref = chain.reference_marginals()
        for k, m in enumerate(self.marginals, start=1):
            bad = (m > 0) & (ref[k] == 0)
            if bad.any():
                raise InfeasibleError(f"marginal[{k}]", f"target charges states {np.flatnonzero(bad).tolist()} unreachable under R")
        bad = (self.endpoint_coupling > 0) & (chain.endpoint_law() == 0)
        if bad.any():
            i, j = np.argwhere(bad)[0]
            raise InfeasibleError("endpoint", f"pi charges ({i}, {j}) where R_0K vanishes")

    @classmethod
    def from_reference(cls, chain: ReferenceChain):
        """Constraints already satisfied by ``R`` itself."""
        ref = chain.reference_marginals()
        return cls(tuple(ref[1:-1]), chain.endpoint_law())


@dataclass(frozen=True)
class BSPotentials:
    """Log factors: ``eta`` is ``S x S``, ``a`` is ``(K-1, S)`` with ``a[k-1] = a_k``.

    ``-inf`` marks atoms excluded by a zero target.
    """

    eta: np.ndarray
    a: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "eta", np.array(self.eta, dtype=float))
        object.__setattr__(self, "a", np.atleast_2d(np.array(self.a, dtype=float)))
        if np.isnan(self.eta).any() or np.isnan(self.a).any():
            raise ValueError("potentials contain NaN")
        if np.isposinf(self.eta).any() or np.isposinf(self.a).any():
            raise ValueError("potentials contain +inf")

    @classmethod
    def zeros(cls, S: int, K: int):
        return cls(np.zeros((S, S)), np.zeros((K - 1, S)))

    @property
    def K(self) -> int:
        return self.a.shape[0] + 1

    def full_a(self) -> np.ndarray:
        """``(K+1, S)`` array with the ``a_0 = a_K = 0`` convention."""
        S = self.eta.shape[0]
        return np.vstack([np.zeros(S), self.a, np.zeros(S)])


@dataclass
class SolveReport:
    iterations: int
    constraint_gap: float
    entropy: float
    entropy_trace: list = field(default_factory=list)
    converged: bool = False

    def to_dict(self) -> dict:
        return {
            "iterations": int(self.iterations),
            "constraint_gap": float(self.constraint_gap),
            "entropy": float(self.entropy),
            "entropy_trace": [float(v) for v in self.entropy_trace],
            "converged": bool(self.converged),
        }


# --- message passing -------------------------------------------------------
#
# A message is a pair (V, s) with V >= 0, each row scaled to max 1, and s the
# per-row log scale, so the represented matrix is exp(s)[:, None] * V.


def _rescale(V, s):
    mx = V.max(axis=1)
    with np.errstate(divide="ignore"):
        s = s + np.log(mx)
    V = V / np.where(mx > 0, mx, 1.0)[:, None]
    return V, s


def _exp_shift(v):
    """``exp(v) = exp(c) * w`` with ``max w = 1``; handles ``-inf``."""
    c = np.max(v)
    if not np.isfinite(c):
        return np.zeros_like(v), 0.0
    return np.exp(v - c), c


def _forward_start(chain):
    S = chain.S
    with np.errstate(divide="ignore"):
        s = np.log(chain.initial_law)
    return np.eye(S), s


def _forward_step(F, R, a_k):
    V, s = F
    w, c = _exp_shift(a_k) if a_k is not None else (None, 0.0)
    V = V @ R
    if w is not None:
        V = V * w[None, :]
    return _rescale(V, s + c)


def _forward_all(chain, pot):
    """``F[k]`` for ``k = 0..K``; ``F[k]`` includes factors ``a_1..a_k`` (``a_K = 0``)."""
    K = chain.K
    F = [_forward_start(chain)]
    for k in range(1, K + 1):
        F.append(_forward_step(F[-1], chain.kernels[k - 1], pot.a[k - 1] if k < K else None))
    return F


def _backward_all(chain, pot):
    """``B[k]`` for ``k = 0..K``; ``B[k]`` includes ``eta`` and ``a_{k+1}..a_{K-1}``."""
    K = chain.K
    B = [None] * (K + 1)
    B[K] = _rescale(*_exp_rows(pot.eta))
    for k in range(K - 1, -1, -1):
        V, s = B[k + 1]
        if k + 1 < K:
            w, c = _exp_shift(pot.a[k])
            V = V * w[None, :]
            s = s + c
        B[k] = _rescale(V @ chain.kernels[k].T, s)
    return B


def _exp_rows(L):
    mx = L.max(axis=1)
    safe = np.where(np.isfinite(mx), mx, 0.0)
    return np.exp(L - safe[:, None]), np.where(np.isfinite(mx), mx, -np.inf)


def _combine(F, B):
    """Unnormalized ``(x_0, z)`` weights from a forward and backward message."""
    (Vf, sf), (Vb, sb) = F, B
    s = sf + sb
    top = np.max(s)
    if not np.isfinite(top):
        raise FloatingPointError("total mass underflow: potentials put no mass on any path")
    return (np.exp(s - top)[:, None] * Vf * Vb), top


def _normalized_marginal(F, B):
    W, _ = _combine(F, B)
    m = W.sum(axis=0)
    tot = m.sum()
    if tot <= 0:
        raise FloatingPointError("total mass underflow: potentials put no mass on any path")
    return m / tot


def _log_joint(chain, pot, F_K):
    """Normalized log of the law of ``(X_0, X_K)`` and the log partition."""
    V, s = F_K
    with np.errstate(divide="ignore"):
        L = s[:, None] + np.log(V) + pot.eta
    logZ = logsumexp(L)
    if not np.isfinite(logZ):
        raise FloatingPointError("total mass underflow: potentials put no mass on any path")
    return L - logZ, logZ


def _check_shapes(chain, pot):
    if pot.eta.shape != (chain.S, chain.S) or pot.a.shape != (chain.K - 1, chain.S):
        raise ValueError("potentials do not match the chain's (K, S)")


def marginal(chain: ReferenceChain, pot: BSPotentials, k: int) -> np.ndarray:
    """Law of ``X_k`` under the product-form measure."""
    _check_shapes(chain, pot)
    if not 0 <= k <= chain.K:
        raise ValueError(f"time index {k} outside 0..{chain.K}")
    if k == chain.K:
        return endpoint_marginal(chain, pot).sum(axis=0)
    F = _forward_all(chain, pot)
    B = _backward_all(chain, pot)
    return _normalized_marginal(F[k], B[k])


def all_marginals(chain: ReferenceChain, pot: BSPotentials) -> np.ndarray:
    """``(K+1, S)`` array of every time marginal."""
    _check_shapes(chain, pot)
    F = _forward_all(chain, pot)
    B = _backward_all(chain, pot)
    out = [_normalized_marginal(F[k], B[k]) for k in range(chain.K)]
    out.append(np.exp(_log_joint(chain, pot, F[-1])[0]).sum(axis=0))
    return np.array(out)


def endpoint_marginal(chain: ReferenceChain, pot: BSPotentials) -> np.ndarray:
    """Joint law of ``(X_0, X_K)``."""
    _check_shapes(chain, pot)
    F = _forward_all(chain, pot)
    return np.exp(_log_joint(chain, pot, F[-1])[0])


def log_partition(chain: ReferenceChain, pot: BSPotentials) -> float:
    _check_shapes(chain, pot)
    return float(_log_joint(chain, pot, _forward_all(chain, pot)[-1])[1])


def _log_ratio(target, current, name):
    """``log target - log current`` with ``-inf`` on zero targets."""
    bad = (target > 0) & (current <= 0)
    if bad.any():
        raise InfeasibleError(name, "target mass where the current iterate has none")
    out = np.full(target.shape, -np.inf)
    pos = target > 0
    out[pos] = np.log(target[pos]) - np.log(current[pos])
    return out


def _update(old, delta):
    new = old + np.where(np.isfinite(delta), delta, 0.0)
    new[~np.isfinite(delta)] = -np.inf
    return new


def ipf_step(chain: ReferenceChain, pot: BSPotentials, constraints: ConstraintSet, which) -> BSPotentials:
    """One exact I-projection onto a single constraint.

    ``which`` is ``"endpoint"`` or an interior time index ``1 <= k <= K-1``.
    """
    _check_shapes(chain, pot)
    if which == "endpoint":
        cur = endpoint_marginal(chain, pot)
        eta = _update(pot.eta, _log_ratio(constraints.endpoint_coupling, cur, "endpoint"))
        return BSPotentials(eta, pot.a)
    k = int(which)
    if not 1 <= k <= chain.K - 1:
        raise ValueError(f"interior constraint index must be in 1..{chain.K - 1}, got {which}")
    cur = marginal(chain, pot, k)
    a = pot.a.copy()
    a[k - 1] = _update(a[k - 1], _log_ratio(constraints.marginals[k - 1], cur, f"marginal[{k}]"))
    return BSPotentials(pot.eta, a)


def _tv(p, q):
    return 0.5 * float(np.abs(p - q).sum())


def _xlogy_sum(p, L):
    """``sum p * L`` with the convention ``0 * (-inf) = 0``."""
    pos = p > 0
    return float(np.sum(p[pos] * L[pos]))


def dual_value(chain, pot, constraints, logZ=None) -> float:
    """Concave dual objective; equals ``H(P | R)`` once constraints hold."""
    if logZ is None:
        logZ = log_partition(chain, pot)
    val = _xlogy_sum(constraints.endpoint_coupling, pot.eta)
    for m, a in zip(constraints.marginals, pot.a):
        val += _xlogy_sum(m, a)
    return val - logZ


def solve_bs(
    chain: ReferenceChain,
    constraints: ConstraintSet,
    eps: float = 1e-10,
    max_iter: int = 10_000,
    init: BSPotentials | None = None,
):
    """Round-robin IPF (endpoint first, then ``k = 1 .. K-1``).

    Returns ``(potentials, report)``. ``report.entropy_trace`` records the dual
    objective after each sweep, which is nondecreasing. Failure to reach
    ``eps`` within ``max_iter`` sweeps is flagged in the report and warned.
    """
    constraints.check_support(chain)
    K, S = chain.K, chain.S
    pot = init if init is not None else BSPotentials.zeros(S, K)
    _check_shapes(chain, pot)
    eta, a = pot.eta.copy(), pot.a.copy()
    pi = constraints.endpoint_coupling
    mus = constraints.marginals
    trace = []
    F = _forward_all(chain, BSPotentials(eta, a))
    gap = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        L, _ = _log_joint(chain, BSPotentials(eta, a), F[K])
        eta = _update(eta, _log_ratio(pi, np.exp(L), "endpoint"))
        B = _backward_all(chain, BSPotentials(eta, a))
        for k in range(1, K):
            F[k] = _forward_step(F[k - 1], chain.kernels[k - 1], a[k - 1])
            m = _normalized_marginal(F[k], B[k])
            delta = _log_ratio(mus[k - 1], m, f"marginal[{k}]")
            a[k - 1] = _update(a[k - 1], delta)
            w, c = _exp_shift(delta)
            V, s = F[k]
            F[k] = _rescale(V * w[None, :], s + c)
        F[K] = _forward_step(F[K - 1], chain.kernels[K - 1], None)
        cur = BSPotentials(eta, a)
        B = _backward_all(chain, cur)
        L, logZ = _log_joint(chain, cur, F[K])
        gap = _tv(np.exp(L), pi)
        for k in range(1, K):
            gap = max(gap, _tv(_normalized_marginal(F[k], B[k]), mus[k - 1]))
        trace.append(dual_value(chain, cur, constraints, logZ))
        if gap <= eps:
            break
    pot = BSPotentials(eta, a)
    converged = gap <= eps
    if not converged:
        warnings.warn(f"IPF did not reach eps={eps:g} in {max_iter} sweeps (gap {gap:.3e})", RuntimeWarning)
    report = SolveReport(it, float(gap), relative_entropy(chain, pot), trace, converged)
    return pot, report


def gauge_fix(pot: BSPotentials, marginals) -> BSPotentials:
    """Shift each ``a_k`` to mean zero under ``mu_k``; the shift moves into ``eta``.

    The path law is unchanged.
    """
    a = pot.a.copy()
    total = 0.0
    for k, m in enumerate(marginals):
        kappa = _xlogy_sum(np.asarray(m), a[k])
        a[k] = a[k] - kappa
        total += kappa
    return BSPotentials(pot.eta + total, a)


# --- entropy ----------------------------------------------------------------


def tilted_kernels(chain: ReferenceChain, pot: BSPotentials, x0: int) -> list:
    """Kernels of ``P(. | X_0 = x0)``: Doob transforms of ``R_k`` by ``exp(psi_{k+1})``."""
    from .hjb import recover_psi

    psi = recover_psi(chain, pot, x0).values
    out = []
    for k, R in enumerate(chain.kernels):
        w, _ = _exp_shift(psi[k + 1])
        T = R * w[None, :]
        norm = T.sum(axis=1)
        dead = norm <= 0
        T[~dead] /= norm[~dead, None]
        T[dead] = R[dead]
        out.append(T)
    return out


def entropy_two_ways(chain: ReferenceChain, pot: BSPotentials) -> tuple[float, float]:
    """``H(P | R)`` from the log-density and from the chain rule over steps."""
    _check_shapes(chain, pot)
    F = _forward_all(chain, pot)
    B = _backward_all(chain, pot)
    L, logZ = _log_joint(chain, pot, F[-1])
    joint = np.exp(L)
    direct = _xlogy_sum(joint, pot.eta) - logZ
    for k in range(1, chain.K):
        direct += _xlogy_sum(_normalized_marginal(F[k], B[k]), pot.a[k - 1])

    P0 = joint.sum(axis=1)
    R0 = chain.initial_law
    pos = P0 > 0
    if np.any(R0[pos] == 0):
        raise ValueError("P is not absolutely continuous w.r.t. R at time 0")
    chain_rule = float(np.sum(P0[pos] * np.log(P0[pos] / R0[pos])))
    for x0 in np.flatnonzero(pos):
        law = np.zeros(chain.S)
        law[x0] = 1.0
        acc = 0.0
        for T, R in zip(tilted_kernels(chain, pot, x0), chain.kernels):
            with np.errstate(divide="ignore", invalid="ignore"):
                terms = np.where(T > 0, T * np.log(T / R), 0.0)
            acc += float(law @ terms.sum(axis=1))
            law = law @ T
        chain_rule += P0[x0] * acc
    return float(direct), float(chain_rule)


def relative_entropy(chain: ReferenceChain, pot: BSPotentials, check: bool = True) -> float:
    """``H(P | R)``; with ``check`` the chain-rule value must agree to 1e-10."""
    direct, chain_rule = entropy_two_ways(chain, pot)
    if check and abs(direct - chain_rule) > 1e-10 * max(1.0, abs(direct)):
        raise ArithmeticError(f"entropy routes disagree: {direct!r} vs {chain_rule!r}")
    return direct


# --- exhaustive oracle ------------------------------------------------------

BRUTE_FORCE_CAP = 10**6


def path_table(chain: ReferenceChain, pot: BSPotentials | None = None) -> np.ndarray:
    """Full law of ``(X_0 .. X_K)`` as an array of shape ``(S,) * (K+1)``."""
    S, K = chain.S, chain.K
    if S ** (K + 1) > BRUTE_FORCE_CAP:
        raise ValueError("path table too large")
    logq = np.log(np.where(chain.initial_law > 0, chain.initial_law, 1.0))
    logq = np.where(chain.initial_law > 0, logq, -np.inf)
    for k, R in enumerate(chain.kernels):
        with np.errstate(divide="ignore"):
            logR = np.log(R)
        logq = logq[..., None] + logR.reshape((1,) * k + (S, S))
        if pot is not None and k + 1 < K:
            logq = logq + pot.a[k].reshape((1,) * (k + 1) + (S,))
    if pot is not None:
        shape = (S,) + (1,) * (K - 1) + (S,)
        logq = logq + pot.eta.reshape(shape)
    m = np.max(logq)
    q = np.exp(logq - m)
    return q / q.sum()


def _constraint_matrix(S, K, constraints):
    rows, rhs, names = [], [], []
    idx = np.indices((S,) * (K + 1)).reshape(K + 1, -1)
    for k in range(1, K):
        for z in range(S):
            rows.append(idx[k] == z)
            rhs.append(constraints.marginals[k - 1][z])
            names.append(f"marginal[{k}]")
    for x in range(S):
        for y in range(S):
            rows.append((idx[0] == x) & (idx[K] == y))
            rhs.append(constraints.endpoint_coupling[x, y])
            names.append("endpoint")
    return np.array(rows, dtype=float), np.array(rhs), names


def brute_force_solve(chain: ReferenceChain, constraints: ConstraintSet, tol: float = 1e-13, max_iter: int = 200) -> np.ndarray:
    """Entropy minimizer over the full path table, no product form assumed.

    Infeasible-start Newton on the KKT system of
    ``min sum q log(q / r)  s.t.  A q = b``; paths with zero reference mass
    or crossing a zero-target atom are fixed to 0 first.
    """
    S, K = chain.S, chain.K
    if S ** (K + 1) > BRUTE_FORCE_CAP:
        raise ValueError(f"S^(K+1) = {S ** (K + 1)} exceeds the cap {BRUTE_FORCE_CAP}")
    r = path_table(chain).ravel()
    A, b, names = _constraint_matrix(S, K, constraints)
    live = r > 0
    for row, target in zip(A, b):
        if target == 0:
            live &= row == 0
    A_l, r_l = A[:, live], r[live]
    for row, target, name in zip(A_l, b, names):
        if target > 0 and not row.any():
            raise InfeasibleError(name, "no admissible path carries the required mass")
    logr = np.log(r_l)
    q = r_l / r_l.sum()
    nu = np.zeros(len(b))

    def residual(q, nu):
        return np.concatenate([np.log(q) - logr + 1.0 + A_l.T @ nu, A_l @ q - b])

    res = residual(q, nu)
    for _ in range(max_iter):
        if np.abs(res).max() <= tol:
            break
        g = np.log(q) - logr + 1.0
        M = (A_l * q) @ A_l.T
        rhs = (A_l @ q - b) - (A_l * q) @ g
        w = np.linalg.lstsq(M, rhs, rcond=None)[0]
        dq = -q * (g + A_l.T @ w)
        dnu = w - nu
        t = 1.0
        neg = dq < 0
        if neg.any():
            t = min(1.0, 0.99 * np.min(-q[neg] / dq[neg]))
        norm0 = np.linalg.norm(res)
        while True:
            new_res = residual(q + t * dq, nu + t * dnu)
            if np.linalg.norm(new_res) <= (1 - 0.01 * t) * norm0 or t < 1e-12:
                break
            t *= 0.5
        q, nu, res = q + t * dq, nu + t * dnu, new_res
    else:
        if np.abs(res).max() > 1e-9:
            raise ArithmeticError(f"Newton oracle stalled (residual {np.abs(res).max():.2e})")
    out = np.zeros(r.size)
    out[live] = q
    return out.reshape((S,) * (K + 1))


def path_entropy(q, r) -> float:
    """``sum q log(q / r)`` over a path table."""
    q, r = np.ravel(q), np.ravel(r)
    pos = q > 0
    return float(np.sum(q[pos] * np.log(q[pos] / r[pos])))
