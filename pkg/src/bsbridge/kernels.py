"""Discretized Feller generators on one-dimensional grids.

Every generator is assembled the same way: off-diagonal rates are collected
band by band, out-of-range targets on truncated grids are dropped, and the
diagonal is set to minus the off-diagonal row sum so the matrix is
conservative by construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import special, stats

PERIODIC = "periodic"
TRUNCATED = "truncated"
TOPOLOGIES = (PERIODIC, TRUNCATED)

ROW_SUM_TOL = 1e-10
NEG_FLOOR = -1e-12
TAIL_MASS = 1e-14


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Grid:
    n: int
    spacing: float
    origin: float
    topology: str

    def __post_init__(self):
        if self.n < 3:
            raise ValueError(f"grid needs at least 3 states, got n={self.n}")
        if not self.spacing > 0:
            raise ValueError(f"grid spacing must be positive, got {self.spacing}")
        if self.topology not in TOPOLOGIES:
            raise ValueError(f"unknown topology {self.topology!r}")

    @property
    def points(self) -> np.ndarray:
        return self.origin + self.spacing * np.arange(self.n)

    @property
    def periodic(self) -> bool:
        return self.topology == PERIODIC


@dataclass(frozen=True)
class LevyTriplet:
    """Local characteristics ``(b^h, c, N)`` of a Courrège generator.

    ``drift``, ``diffusion`` and ``jumps`` are functions of the grid index so
    that the same assembly handles Lévy (constant) and general Feller
    (state-dependent) triplets. ``jumps(i)`` returns ``(offset, rate)`` pairs
    with offsets counted in grid steps. Jumps with ``|offset * dx| <=
    truncation_radius`` are compensated by a first-difference drift.
    """

    drift: Callable[[int], float]
    diffusion: Callable[[int], float]
    jumps: Callable[[int], Sequence[tuple[int, float]]]
    truncation_radius: float = 1.0

    @classmethod
    def constant(cls, drift=0.0, diffusion=0.0, jumps=(), truncation_radius=1.0):
        jumps = tuple((int(o), float(r)) for o, r in jumps)
        return cls(lambda i: drift, lambda i: diffusion, lambda i: jumps, truncation_radius)


@dataclass(frozen=True)
class GeneratorMatrix:
    entries: np.ndarray
    grid: Grid

    def __post_init__(self):
        A = _frozen(self.entries)
        object.__setattr__(self, "entries", A)
        n = self.grid.n
        if A.shape != (n, n):
            raise ValueError(f"generator shape {A.shape} does not match grid size {n}")
        off = A - np.diag(np.diag(A))
        if off.min() < NEG_FLOOR:
            raise ValueError(f"negative off-diagonal rate {off.min():.3e}")
        rs = np.abs(A.sum(axis=1)).max()
        if rs > ROW_SUM_TOL * max(1.0, np.abs(A).max()):
            raise ValueError(f"generator rows do not sum to zero (max {rs:.3e})")

    @property
    def rate(self) -> float:
        """Uniformization rate, the largest exit rate."""
        return float(np.max(-np.diag(self.entries), initial=0.0))

    def __matmul__(self, u):
        return self.entries @ u


@dataclass(frozen=True)
class TransitionKernel:
    entries: np.ndarray
    dt: float
    grid: Grid | None = field(default=None, compare=False)

    def __post_init__(self):
        P = _frozen(self.entries)
        object.__setattr__(self, "entries", P)
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if P.min() < 0:
            raise ValueError("transition kernel has negative entries")
        if np.abs(P.sum(axis=1) - 1).max() > ROW_SUM_TOL:
            raise ValueError("transition kernel rows do not sum to one")


def build_grid(n: int, length: float, topology: str = TRUNCATED) -> Grid:
    """Grid of ``n`` points centred at 0.

    Periodic grids have spacing ``length / n`` (index ``n`` wraps to 0);
    truncated grids include both endpoints ``±length/2``.
    """
    if n < 3:
        raise ValueError(f"n must be >= 3, got {n}")
    if not length > 0:
        raise ValueError(f"length must be positive, got {length}")
    if topology == PERIODIC:
        dx = length / n
        return Grid(n, dx, -dx * (n // 2), PERIODIC)
    if topology == TRUNCATED:
        return Grid(n, length / (n - 1), -length / 2, TRUNCATED)
    raise ValueError(f"unknown topology {topology!r}")


class _Bands:
    """Accumulates off-diagonal rates, dropping out-of-range targets."""

    def __init__(self, grid: Grid):
        self.grid = grid
        self.M = np.zeros((grid.n, grid.n))
        self._rows = np.arange(grid.n)

    def add(self, offset: int, rates):
        n = self.grid.n
        rates = np.broadcast_to(np.asarray(rates, dtype=float), (n,))
        cols = self._rows + offset
        if self.grid.periodic:
            cols = cols % n
            keep = cols != self._rows
        else:
            keep = (cols >= 0) & (cols < n)
        np.add.at(self.M, (self._rows[keep], cols[keep]), rates[keep])

    def add_at(self, i: int, offset: int, rate: float):
        n = self.grid.n
        j = i + offset
        if self.grid.periodic:
            j %= n
            if j == i:
                return
        elif not 0 <= j < n:
            return
        self.M[i, j] += rate

    def generator(self) -> GeneratorMatrix:
        M = self.M
        np.fill_diagonal(M, 0.0)
        M[self._rows, self._rows] = -M.sum(axis=1)
        return GeneratorMatrix(M, self.grid)


def _upwind_drift(bands: _Bands, b: np.ndarray):
    dx = bands.grid.spacing
    bands.add(+1, np.maximum(b, 0.0) / dx)
    bands.add(-1, np.maximum(-b, 0.0) / dx)


def heat_generator(grid: Grid) -> GeneratorMatrix:
    """Central second difference for ``(1/2) u''``."""
    bands = _Bands(grid)
    w = 0.5 / grid.spacing**2
    bands.add(+1, w)
    bands.add(-1, w)
    return bands.generator()


def poisson_generator(grid: Grid, lam: float, z_steps: int = 1) -> GeneratorMatrix:
    """``A u(x) = lam (u(x + z_steps dx) - u(x))`` on a periodic grid."""
    if not grid.periodic:
        raise ValueError("poisson_generator requires a periodic grid")
    if not lam > 0:
        raise ValueError("lambda must be positive")
    if z_steps % grid.n == 0:
        raise ValueError("jump of a whole period is the identity")
    bands = _Bands(grid)
    bands.add(z_steps, lam)
    return bands.generator()


def fractional_laplacian_constant(alpha: float) -> float:
    """``k_alpha`` for which the stable generator has symbol ``-|xi|^alpha``."""
    _check_alpha(alpha)
    # int (1 - cos u) |u|^{-1-alpha} du = pi / (Gamma(1 + alpha) sin(pi alpha / 2))
    return math.gamma(1 + alpha) * math.sin(math.pi * alpha / 2) / math.pi


def _check_alpha(alpha):
    if not 0 < alpha < 2:
        raise ValueError(f"alpha must lie in (0, 2), got {alpha}")


def _stable_bands(grid: Grid, alpha: float, k_alpha: float) -> _Bands:
    _check_alpha(alpha)
    if not k_alpha > 0:
        raise ValueError("k_alpha must be positive")
    n, dx = grid.n, grid.spacing
    s = 1.0 + alpha
    bands = _Bands(grid)
    if grid.periodic:
        # sum of the jump density over all periodic images of each offset
        m = np.arange(1, n)
        rates = k_alpha * dx ** (1 - s) * n ** (-s) * (special.zeta(s, m / n) + special.zeta(s, 1 - m / n))
        for off, rate in zip(m, rates):
            bands.add(int(off), rate)
    else:
        for j in range(1, n):
            rate = k_alpha * dx / (j * dx) ** s
            bands.add(j, rate)
            bands.add(-j, rate)
    # jumps shorter than dx/2 act as a diffusion with coefficient
    # int_{|y|<dx/2} y^2 k |y|^{-1-alpha} dy
    c_small = 2.0 * k_alpha * (dx / 2) ** (2 - alpha) / (2 - alpha)
    bands.add(+1, 0.5 * c_small / dx**2)
    bands.add(-1, 0.5 * c_small / dx**2)
    return bands


def stable_generator(grid: Grid, alpha: float, k_alpha: float = 1.0) -> GeneratorMatrix:
    """Symmetric ``alpha``-stable generator with jump density ``k_alpha |y|^{-1-alpha}``.

    The compensator vanishes because the jump measure is even. On truncated
    grids jumps leaving the grid are dropped.
    """
    return _stable_bands(grid, alpha, k_alpha).generator()


def levy_generator(grid: Grid, triplet: LevyTriplet) -> GeneratorMatrix:
    """Assemble a Courrège generator (killing rate fixed to zero).

    Drift uses the central first difference; a ``ValueError`` is raised when
    that produces a negative off-diagonal (``dx`` too coarse for the drift).
    """
    n, dx, h = grid.n, grid.spacing, triplet.truncation_radius
    bands = _Bands(grid)
    for i in range(n):
        b = float(triplet.drift(i))
        c = float(triplet.diffusion(i))
        if c < 0:
            raise ValueError(f"negative diffusion coefficient at index {i}")
        for off, rate in triplet.jumps(i):
            if off == 0:
                raise ValueError("jump offset 0 is not a jump")
            if rate < 0 or not math.isfinite(rate):
                raise ValueError(f"jump rate must be finite and nonnegative, got {rate}")
            bands.add_at(i, off, rate)
            y = off * dx
            if abs(y) <= h:
                b -= rate * y
        bands.add_at(i, +1, 0.5 * c / dx**2 + 0.5 * b / dx)
        bands.add_at(i, -1, 0.5 * c / dx**2 - 0.5 * b / dx)
    off = bands.M - np.diag(np.diag(bands.M))
    if off.min() < NEG_FLOOR:
        i = int(np.argmin(off.min(axis=1)))
        raise ValueError(f"negative off-diagonal in row {i}: drift too large for spacing {dx}")
    return bands.generator()


def ou_generator(grid: Grid) -> GeneratorMatrix:
    """``A u = u'' - x u'`` with upwinded drift on a truncated grid."""
    if grid.periodic:
        raise ValueError("ou_generator requires a truncated grid")
    bands = _Bands(grid)
    bands.add(+1, 1.0 / grid.spacing**2)
    bands.add(-1, 1.0 / grid.spacing**2)
    _upwind_drift(bands, -grid.points)
    return bands.generator()


def ou_stable_generator(grid: Grid, alpha: float, k_alpha: float = 1.0) -> GeneratorMatrix:
    if grid.periodic:
        raise ValueError("ou_stable_generator requires a truncated grid")
    bands = _stable_bands(grid, alpha, k_alpha)
    _upwind_drift(bands, -grid.points)
    return bands.generator()


def _uniformized(A: np.ndarray, q: float, t: float) -> np.ndarray:
    """``exp(tA)`` as a Poisson(qt) mixture of powers of ``I + A/q``."""
    n = A.shape[0]
    P = np.eye(n) + A / q
    np.clip(P, 0.0, None, out=P)
    lam = q * t
    kmax = int(stats.poisson.isf(TAIL_MASS, lam)) + 1
    weights = stats.poisson.pmf(np.arange(kmax + 1), lam)
    out = weights[0] * np.eye(n)
    term = np.eye(n)
    for w in weights[1:]:
        term = term @ P
        out += w * term
    return out


def transition(gen: GeneratorMatrix, dt: float) -> TransitionKernel:
    """Transition kernel ``exp(dt A)`` by uniformization.

    When ``q dt`` exceeds 8 the exponent is halved until it does not and the
    result squared back; products of stochastic matrices stay stochastic.
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    A = gen.entries
    q = gen.rate
    n = A.shape[0]
    if q == 0.0:
        return TransitionKernel(np.eye(n), dt, gen.grid)
    squarings = max(0, math.ceil(math.log2(q * dt / 8.0))) if q * dt > 8.0 else 0
    P = _uniformized(A, q, dt / 2**squarings)
    for _ in range(squarings):
        P = P @ P
    P /= P.sum(axis=1, keepdims=True)
    return TransitionKernel(P, dt, gen.grid)


def invariant_residual(gen: GeneratorMatrix, mu) -> float:
    """``max |mu^T A|``: zero exactly when ``mu`` is invariant."""
    mu = np.asarray(mu, dtype=float)
    if mu.shape != (gen.grid.n,) or mu.min() < 0 or abs(mu.sum() - 1) > 1e-10:
        raise ValueError("mu must be a probability vector on the grid")
    return float(np.abs(mu @ gen.entries).max())


def gaussian_weights(grid: Grid, var: float = 1.0) -> np.ndarray:
    """Normalized N(0, var) density sampled on the grid points."""
    x = grid.points
    w = np.exp(-0.5 * x**2 / var)
    return w / w.sum()


def stable_ou_invariant_weights(grid: Grid, alpha: float) -> np.ndarray:
    """Grid weights of the law with characteristic function ``exp(-|xi|^alpha / alpha)``."""
    from scipy.integrate import quad

    _check_alpha(alpha)
    dens = np.empty(grid.n)
    def cf(xi):
        return np.exp(-(xi**alpha) / alpha)

    for i, x in enumerate(grid.points):
        if x == 0:
            val, _ = quad(cf, 0, np.inf)
        else:
            val, _ = quad(cf, 0, np.inf, weight="cos", wvar=abs(x))
        dens[i] = val / np.pi
    dens = np.clip(dens, 0, None)
    return dens / dens.sum()
