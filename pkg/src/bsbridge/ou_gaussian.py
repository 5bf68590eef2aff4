"""Closed-form Gaussian machinery for the Ornstein-Uhlenbeck existence argument.

Reference: ``dX = sqrt(2) dW - X dt`` started from N(0, 1), so that
``Cov(X_s, X_t) = exp(-|t - s|)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

R_THIRD = math.exp(-1.0 / 3.0)


@dataclass(frozen=True)
class OUBridgeParams:
    x: float
    y: float
    T: float

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError("bridge horizon T must be positive")


@dataclass(frozen=True)
class BivariateGaussianCoupling:
    c: float

    def __post_init__(self):
        if abs(self.c) > 1:
            raise ValueError("correlation must satisfy |c| <= 1")

    @property
    def cov(self) -> np.ndarray:
        return np.array([[1.0, self.c], [self.c, 1.0]])


@dataclass(frozen=True)
class ToeplitzCov:
    r: float
    s: float
    c: float

    @property
    def matrix(self) -> np.ndarray:
        r, s, c = self.r, self.s, self.c
        return np.array([[1, r, s, c], [r, 1, r, s], [s, r, 1, r], [c, s, r, 1]], dtype=float)


@dataclass(frozen=True)
class BridgeMixtureSpec:
    rho: float
    T: float

    def __post_init__(self):
        if not abs(self.rho) < 1:
            raise ValueError("mixing correlation must satisfy |rho| < 1")
        if not self.T > 0:
            raise ValueError("T must be positive")


def _check_time(t, T):
    if not 0 <= t <= T:
        raise ValueError(f"t={t} outside [0, {T}]")


def bridge_marginal(p: OUBridgeParams, t: float) -> tuple[float, float]:
    """Mean and variance of the OU bridge from ``x`` to ``y`` at time ``t``."""
    _check_time(t, p.T)
    sT = math.sinh(p.T)
    a, b = math.sinh(p.T - t), math.sinh(t)
    return a / sT * p.x + b / sT * p.y, 2.0 * a * b / sT


def sample_bridge(p: OUBridgeParams, times, seed: int) -> np.ndarray:
    """Exact sample of the bridge at sorted ``times`` in ``[0, T]``.

    Sequential conditioning: given the value ``u`` at ``s``, the rest of the
    path is an OU bridge from ``u`` to ``y`` on a horizon ``T - s``.
    """
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or np.any(np.diff(times) < 0):
        raise ValueError("times must be a sorted 1-D sequence")
    if times.size and (times[0] < 0 or times[-1] > p.T):
        raise ValueError("times must lie in [0, T]")
    rng = np.random.default_rng(seed)
    out = np.empty(times.size)
    s, u = 0.0, p.x
    for i, t in enumerate(times):
        if t == s:
            out[i] = u
            continue
        if t == p.T:
            out[i] = p.y
            s, u = t, p.y
            continue
        mean, var = bridge_marginal(OUBridgeParams(u, p.y, p.T - s), t - s)
        u = mean + math.sqrt(var) * rng.standard_normal()
        s = t
        out[i] = u
    return out


def mixture_variance(spec: BridgeMixtureSpec, t: float) -> float:
    """Variance at time ``t`` of OU bridges mixed over endpoints drawn from ``gamma_rho``."""
    _check_time(t, spec.T)
    T = spec.T
    sT = math.sinh(T)
    a, b = math.sinh(T - t), math.sinh(t)
    return (a * a + 2 * spec.rho * a * b + b * b) / sT**2 + 2 * a * b / sT


def verify_invariance(spec: BridgeMixtureSpec, tol: float) -> bool:
    """True iff the mixture variance stays within ``tol`` of 1 on a 101-point grid."""
    if not tol > 0:
        raise ValueError("tol must be positive")
    return max_invariance_deviation(spec, 101) <= tol


def max_invariance_deviation(spec: BridgeMixtureSpec, points: int = 1001) -> float:
    ts = np.linspace(0.0, spec.T, points)
    return max(abs(mixture_variance(spec, float(t)) - 1.0) for t in ts)


def toeplitz_eigenvalues(tc: ToeplitzCov) -> np.ndarray:
    """Closed-form spectrum of the symmetric Toeplitz matrix ``(1, r, s, c)``, ascending."""
    r, s, c = tc.r, tc.s, tc.c
    d_plus = c * c - 2 * c * r + 5 * r * r + 8 * r * s + 4 * s * s
    d_minus = c * c - 2 * c * r + 5 * r * r - 8 * r * s + 4 * s * s
    # (c - r)^2 + 4 (r ± s)^2
    assert d_plus >= -1e-15 and d_minus >= -1e-15
    sp, sm = math.sqrt(max(d_plus, 0.0)), math.sqrt(max(d_minus, 0.0))
    ev = [
        0.5 * (c + r + 2 + sp),
        0.5 * (c + r + 2 - sp),
        0.5 * (-c - r + 2 + sm),
        0.5 * (-c - r + 2 - sm),
    ]
    return np.sort(ev)


def s_window(r: float) -> tuple[float, float]:
    """Open range of ``s`` for which some ``c`` makes ``C(r, s, c)`` positive definite."""
    return 2 * r * r - 1, 1.0


def feasible_c_interval(r: float, s: float):
    """Open interval of ``c`` with ``C(r, s, c)`` positive definite, or None."""
    if not abs(r) < 1:
        raise ValueError("need |r| < 1")
    lo_s, hi_s = s_window(r)
    if not lo_s < s < hi_s:
        return None
    lo = (s * s + 2 * r * s + r * r - r - 1) / (r + 1)
    hi = (s * s - 2 * r * s + r * r + r - 1) / (r - 1)
    if not lo < hi:
        return None
    return lo, hi


def infimal_c(r: float) -> float:
    """``inf_s lo(s)`` over the admissible window, reached as ``s -> 2r^2 - 1``."""
    return r * (4 * r * r - 3)


def _feasible_s_range(r: float, c: float):
    """Exact set of ``s`` with ``lo(s) < c < hi(s)``: an open interval or None.

    ``lo(s) < c``  <=>  s^2 + 2rs + r^2 - r - 1 - c(r+1) < 0
    ``hi(s) > c``  <=>  s^2 - 2rs + r^2 + r - 1 - c(r-1) < 0   (r < 1)
    """
    out_lo, out_hi = s_window(r)
    for lin, const in ((2 * r, r * r - r - 1 - c * (r + 1)), (-2 * r, r * r + r - 1 - c * (r - 1))):
        disc = lin * lin - 4 * const
        if disc <= 0:
            return None
        root = math.sqrt(disc)
        out_lo = max(out_lo, (-lin - root) / 2)
        out_hi = min(out_hi, (-lin + root) / 2)
    if not out_lo < out_hi:
        return None
    return out_lo, out_hi


def gaussian_kl(cov1, cov2) -> float:
    """``KL(N(0, cov1) || N(0, cov2))``."""
    cov1 = np.atleast_2d(np.asarray(cov1, dtype=float))
    cov2 = np.atleast_2d(np.asarray(cov2, dtype=float))
    if cov1.shape != cov2.shape or cov1.shape[0] != cov1.shape[1]:
        raise ValueError("covariances must be square and of equal size")
    for m in (cov1, cov2):
        if not np.allclose(m, m.T, atol=1e-14):
            raise ValueError("covariance is not symmetric")
    try:
        L1 = np.linalg.cholesky(cov1)
        L2 = np.linalg.cholesky(cov2)
    except np.linalg.LinAlgError:
        raise ValueError("covariance is not positive definite") from None
    d = cov1.shape[0]
    X = np.linalg.solve(L2, L1)
    logdet1 = 2 * np.sum(np.log(np.diag(L1)))
    logdet2 = 2 * np.sum(np.log(np.diag(L2)))
    return float(0.5 * (np.sum(X * X) - d + logdet2 - logdet1))


def ou_path_cov(times) -> np.ndarray:
    """Stationary OU covariance ``exp(-|t_i - t_j|)``."""
    t = np.asarray(times, dtype=float)
    return np.exp(-np.abs(t[:, None] - t[None, :]))


def expected_conditional_kl(C_q, C_r, outer=(0, 3), inner=(1, 2)) -> float:
    """``E_pi KL(q(inner | outer) || r(inner | outer))`` for centred Gaussians.

    ``pi`` is the ``outer`` marginal of ``C_q``. Conditional covariances do
    not depend on the conditioning value and the mean gap is linear in it,
    so the expectation is closed form.
    """
    o, i = list(outer), list(inner)

    def cond(C):
        Coo = C[np.ix_(o, o)]
        Cio = C[np.ix_(i, o)]
        gain = Cio @ np.linalg.inv(Coo)
        return gain, C[np.ix_(i, i)] - gain @ Cio.T

    Gq, Sq = cond(C_q)
    Gr, Sr = cond(C_r)
    D = Gq - Gr
    Sr_inv = np.linalg.inv(Sr)
    mean_term = float(np.trace(D.T @ Sr_inv @ D @ C_q[np.ix_(o, o)]))
    return gaussian_kl(Sq, Sr) + 0.5 * mean_term


@dataclass
class ExistenceCertificate:
    c: float
    r: float
    s: float | None
    C: ToeplitzCov | None
    min_eigenvalue: float | None
    entropy_terms: dict = field(default_factory=dict)
    invariance: list = field(default_factory=list)
    feasible: bool = False

    def to_dict(self) -> dict:
        return {
            "c": self.c,
            "r": self.r,
            "s": self.s,
            "C": None if self.C is None else self.C.matrix.tolist(),
            "min_eigenvalue": self.min_eigenvalue,
            "entropy_terms": dict(self.entropy_terms),
            "invariance": list(self.invariance),
            "feasible": self.feasible,
        }


def existence_certificate(c: float, r: float = R_THIRD, s_step: float = 1e-3) -> ExistenceCertificate:
    """Build the concatenated-bridge candidate for ``pi = gamma_c`` if one exists.

    ``s`` is chosen on a ``s_step`` grid inside the exact feasible window,
    maximizing the smallest eigenvalue of ``C``; windows narrower than the
    grid fall back to their midpoint.
    """
    cert = ExistenceCertificate(float(c), float(r), None, None, None)
    if not abs(c) < 1:
        return cert
    window = _feasible_s_range(r, c)
    if window is None:
        return cert
    lo, hi = window
    ks = np.arange(math.ceil(lo / s_step), math.floor(hi / s_step) + 1)
    grid = np.round(ks * s_step, 12)
    grid = grid[(grid > lo) & (grid < hi)]
    if grid.size == 0:
        grid = np.array([(lo + hi) / 2])
    mins = [toeplitz_eigenvalues(ToeplitzCov(r, float(s), c))[0] for s in grid]
    s = float(grid[int(np.argmax(mins))])
    tc = ToeplitzCov(r, s, c)
    lam = float(toeplitz_eigenvalues(tc)[0])
    cert.s, cert.C, cert.min_eigenvalue = s, tc, lam
    if lam <= 0:
        return cert

    C_R = ou_path_cov([0, 1 / 3, 2 / 3, 1])
    endpoint = gaussian_kl(BivariateGaussianCoupling(c).cov, C_R[np.ix_([0, 3], [0, 3])])
    conditional = expected_conditional_kl(tc.matrix, C_R)
    total = gaussian_kl(tc.matrix, C_R)
    cert.entropy_terms = {"endpoint": endpoint, "conditional": conditional, "total": total}
    chain_rule_ok = abs(total - endpoint - conditional) <= 1e-10 * max(1.0, total)

    M = tc.matrix
    seg = BridgeMixtureSpec(rho=r, T=1 / 3)
    for h in range(3):
        adjacent = M[h, h + 1]
        cert.invariance.append(bool(abs(adjacent - r) < 1e-15 and verify_invariance(seg, 1e-10)))
    finite = all(math.isfinite(v) for v in cert.entropy_terms.values())
    cert.feasible = bool(finite and chain_rule_ok and all(cert.invariance))
    return cert


def mc_mixture_marginal_test(spec: BridgeMixtureSpec, t: float, n: int, seed: int) -> float:
    """z-score of the sampled second moment at ``t`` against :func:`mixture_variance`."""
    if n < 1000:
        raise ValueError("need at least 1000 samples")
    _check_time(t, spec.T)
    rng = np.random.default_rng(seed)
    cov = np.array([[1.0, spec.rho], [spec.rho, 1.0]])
    xy = rng.multivariate_normal(np.zeros(2), cov, size=n, method="cholesky")
    T = spec.T
    sT = math.sinh(T)
    a, b = math.sinh(T - t), math.sinh(t)
    pts = a / sT * xy[:, 0] + b / sT * xy[:, 1] + math.sqrt(2 * a * b / sT) * rng.standard_normal(n)
    v = mixture_variance(spec, t)
    # centred Gaussian: Var(X^2) = 2 v^2
    return float((np.mean(pts**2) - v) / (v * math.sqrt(2.0 / n)))


def mc_gaussian_kl(cov1, cov2, n: int, seed: int) -> tuple[float, float]:
    """Monte Carlo estimate of :func:`gaussian_kl` and its standard error."""
    cov1 = np.atleast_2d(np.asarray(cov1, dtype=float))
    cov2 = np.atleast_2d(np.asarray(cov2, dtype=float))
    rng = np.random.default_rng(seed)
    X = rng.multivariate_normal(np.zeros(cov1.shape[0]), cov1, size=n, method="cholesky")

    def logpdf(C):
        Ci = np.linalg.inv(C)
        _, ld = np.linalg.slogdet(C)
        return -0.5 * np.einsum("ij,jk,ik->i", X, Ci, X) - 0.5 * ld

    lr = logpdf(cov1) - logpdf(cov2)
    return float(lr.mean()), float(lr.std(ddof=1) / math.sqrt(n))
