import numpy as np
import pytest

from bsbridge.solver import ConstraintSet, ReferenceChain


def random_stochastic(rng, S, zeros=0.0):
    """Row-stochastic S x S matrix; ``zeros`` is the chance of a zero off-diagonal entry."""
    M = rng.random((S, S)) + 0.05
    if zeros:
        mask = rng.random((S, S)) < zeros
        np.fill_diagonal(mask, False)
        M[mask] = 0.0
    return M / M.sum(axis=1, keepdims=True)


def random_chain(rng, S, K, zeros=0.0):
    p0 = rng.random(S) + 0.1
    return ReferenceChain(p0 / p0.sum(), tuple(random_stochastic(rng, S, zeros) for _ in range(K)), 1.0 / K)


def random_path_law(rng, chain):
    """A full-support path table absolutely continuous w.r.t. the reference."""
    from bsbridge.solver import path_table

    r = path_table(chain)
    q = r * np.exp(rng.normal(scale=1.0, size=r.shape))
    return q / q.sum()


def constraints_of(q):
    """Interior marginals and endpoint coupling of a path table ``q``."""
    K = q.ndim - 1
    margs = []
    for k in range(1, K):
        axes = tuple(i for i in range(K + 1) if i != k)
        margs.append(q.sum(axis=axes))
    pi = q.sum(axis=tuple(range(1, K)))
    return ConstraintSet(tuple(margs), pi)


def random_instance(seed, S, K, zeros=0.0):
    rng = np.random.default_rng(seed)
    chain = random_chain(rng, S, K, zeros)
    return chain, constraints_of(random_path_law(rng, chain))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
