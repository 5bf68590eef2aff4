"""JSON scenario files and their translation into solver inputs.

A scenario names a grid, a generator, the number of steps ``K`` and the
constraint laws. Laws are either explicit arrays or one of the presets
``"stationary-gaussian"``, ``"uniform"``, ``"reference"``, ``"point"``.
Couplings are ``"reference"``, ``"independent"``, ``"gaussian-coupling
c=<value>"`` or an explicit matrix.
"""

from __future__ import annotations

import copy
import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels as kn
from .solver import ConstraintSet, ReferenceChain, build_reference


class ScenarioError(ValueError):
    """Invalid scenario; ``field`` names the offending entry."""

    def __init__(self, field: str, msg: str):
        super().__init__(f"{field}: {msg}")
        self.field = field


PRESETS = {
    "trivial": {
        "name": "trivial",
        "grid": {"n": 32, "length": 10.0, "topology": "truncated"},
        "generator": {"name": "ou"},
        "K": 4,
        "constraints": {"initial_law": "stationary-gaussian", "marginals": "reference", "coupling": "reference"},
    },
    "ou-gaussian-c": {
        "name": "ou-gaussian-c",
        "grid": {"n": 64, "length": 12.0, "topology": "truncated"},
        "generator": {"name": "ou"},
        "K": 8,
        "constraints": {
            "initial_law": "stationary-gaussian",
            "marginals": "stationary-gaussian",
            "coupling": "gaussian-coupling c=0.9",
        },
    },
    "heat-uniform": {
        "name": "heat-uniform",
        "grid": {"n": 32, "length": 8.0, "topology": "periodic"},
        "generator": {"name": "heat"},
        "K": 4,
        "constraints": {"initial_law": "uniform", "marginals": "uniform", "coupling": "reference"},
    },
}


@dataclass
class Scenario:
    name: str
    generator: dict
    grid: dict
    K: int
    constraints: dict
    tolerances: dict = field(default_factory=lambda: {"eps": 1e-10, "max_iter": 10_000})
    seed: int = 0


@dataclass
class Problem:
    grid: kn.Grid
    generator: kn.GeneratorMatrix
    chain: ReferenceChain
    constraints: ConstraintSet


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def parse_scenario(obj: dict) -> Scenario:
    if not isinstance(obj, dict):
        raise ScenarioError("<root>", "scenario must be a JSON object")
    obj = dict(obj)
    preset = obj.pop("preset", None)
    if preset is not None:
        if preset not in PRESETS:
            raise ScenarioError("preset", f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        base = PRESETS[preset]
        if "c" in obj:
            c = obj.pop("c")
            obj.setdefault("constraints", {})["coupling"] = f"gaussian-coupling c={c}"
        obj = _merge(base, obj)
    for key in ("grid", "generator", "K", "constraints"):
        if key not in obj:
            raise ScenarioError(key, "missing required field")
    K = obj["K"]
    if not isinstance(K, int) or K < 2:
        raise ScenarioError("K", f"must be an integer >= 2, got {K!r}")
    tol = {"eps": 1e-10, "max_iter": 10_000}
    tol.update(obj.get("tolerances", {}))
    seed = obj.get("seed", 0)
    if not isinstance(seed, int):
        raise ScenarioError("seed", "must be an integer")
    return Scenario(
        name=str(obj.get("name", preset or "scenario")),
        generator=obj["generator"],
        grid=obj["grid"],
        K=K,
        constraints=obj["constraints"],
        tolerances=tol,
        seed=seed,
    )


def load_scenario(path) -> Scenario:
    text = Path(path).read_text()
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as e:
        raise ScenarioError(f"line {e.lineno}", e.msg) from None
    return parse_scenario(obj)


def _build_grid(spec) -> kn.Grid:
    try:
        return kn.build_grid(int(spec["n"]), float(spec["length"]), spec.get("topology", kn.TRUNCATED))
    except KeyError as e:
        raise ScenarioError(f"grid.{e.args[0]}", "missing") from None
    except (TypeError, ValueError) as e:
        raise ScenarioError("grid", str(e)) from None


def _build_generator(spec, grid) -> kn.GeneratorMatrix:
    name = spec.get("name")
    p = dict(spec.get("params", {}))
    try:
        if name == "heat":
            return kn.heat_generator(grid)
        if name == "poisson":
            return kn.poisson_generator(grid, float(p.get("lambda", 1.0)), int(p.get("z_steps", 1)))
        if name == "stable":
            return kn.stable_generator(grid, float(p["alpha"]), float(p.get("k_alpha", 1.0)))
        if name == "ou":
            return kn.ou_generator(grid)
        if name == "ou_stable":
            return kn.ou_stable_generator(grid, float(p["alpha"]), float(p.get("k_alpha", 1.0)))
        if name == "levy":
            trip = kn.LevyTriplet.constant(
                float(p.get("drift", 0.0)),
                float(p.get("diffusion", 0.0)),
                [tuple(j) for j in p.get("jumps", [])],
                float(p.get("truncation_radius", 1.0)),
            )
            return kn.levy_generator(grid, trip)
    except KeyError as e:
        raise ScenarioError(f"generator.params.{e.args[0]}", "missing") from None
    except (TypeError, ValueError) as e:
        raise ScenarioError("generator", str(e)) from None
    raise ScenarioError("generator.name", f"unknown generator {name!r}")


def _law(spec, grid, field_name, reference=None) -> np.ndarray:
    n = grid.n
    if spec == "stationary-gaussian":
        return kn.gaussian_weights(grid)
    if spec == "uniform":
        return np.full(n, 1.0 / n)
    if spec == "point":
        v = np.zeros(n)
        v[int(np.argmin(np.abs(grid.points)))] = 1.0
        return v
    if spec == "reference" and reference is not None:
        return np.asarray(reference, dtype=float)
    if isinstance(spec, list):
        v = np.asarray(spec, dtype=float)
        if v.shape != (n,) or v.min() < 0 or abs(v.sum() - 1) > 1e-10:
            raise ScenarioError(field_name, f"explicit law must be {n} nonnegative numbers summing to 1")
        return v
    raise ScenarioError(field_name, f"unrecognised law {spec!r}")


def scale_to_marginals(M, row, col, tol=1e-14, max_iter=100_000) -> np.ndarray:
    """Rescale a positive kernel to the prescribed row and column sums."""
    u = np.ones_like(row)
    v = np.ones_like(col)
    for _ in range(max_iter):
        u = np.divide(row, M @ v, out=np.zeros_like(row), where=row > 0)
        v = np.divide(col, M.T @ u, out=np.zeros_like(col), where=col > 0)
        P = u[:, None] * M * v[None, :]
        if np.abs(P.sum(axis=1) - row).max() < tol:
            return P / P.sum()
    raise ScenarioError("constraints.coupling", "could not scale the coupling to its marginals")


def gaussian_coupling_on_grid(grid, c, row, col) -> np.ndarray:
    """Grid version of ``gamma_c`` scaled to the given marginals."""
    if not abs(c) < 1:
        raise ScenarioError("constraints.coupling", "gaussian coupling needs |c| < 1")
    x = grid.points
    X, Y = np.meshgrid(x, x, indexing="ij")
    M = np.exp(-(X**2 - 2 * c * X * Y + Y**2) / (2 * (1 - c * c)))
    return scale_to_marginals(M / M.max(), row, col)


_GAUSS = re.compile(r"^gaussian-coupling\s+c\s*=\s*([-+0-9.eE]+)$")


def build_problem(sc: Scenario) -> Problem:
    grid = _build_grid(sc.grid)
    gen = _build_generator(sc.generator, grid)
    K = sc.K
    dt = 1.0 / K
    cons = sc.constraints
    init = _law(cons.get("initial_law", "stationary-gaussian"), grid, "constraints.initial_law")
    chain = build_reference(kn.transition(gen, dt), K, init)
    ref = chain.reference_marginals()

    mspec = cons.get("marginals", "reference")
    if isinstance(mspec, list) and mspec and isinstance(mspec[0], list):
        if len(mspec) != K - 1:
            raise ScenarioError("constraints.marginals", f"need {K - 1} interior laws, got {len(mspec)}")
        marg = [_law(m, grid, f"constraints.marginals[{k}]") for k, m in enumerate(mspec, start=1)]
    else:
        marg = [_law(mspec, grid, "constraints.marginals", ref[k]) for k in range(1, K)]

    cspec = cons.get("coupling", "reference")
    endpoint_law = _law(cons.get("endpoint_marginals", cons.get("initial_law", "stationary-gaussian")), grid,
                        "constraints.endpoint_marginals", ref[0])
    if cspec == "reference":
        pi = chain.endpoint_law()
    elif cspec == "independent":
        pi = np.outer(endpoint_law, endpoint_law)
    elif isinstance(cspec, str) and _GAUSS.match(cspec.strip()):
        c = float(_GAUSS.match(cspec.strip()).group(1))
        pi = gaussian_coupling_on_grid(grid, c, endpoint_law, endpoint_law)
    elif isinstance(cspec, list):
        pi = np.asarray(cspec, dtype=float)
        if pi.shape != (grid.n, grid.n):
            raise ScenarioError("constraints.coupling", f"explicit coupling must be {grid.n}x{grid.n}")
    else:
        raise ScenarioError("constraints.coupling", f"unrecognised coupling {cspec!r}")
    try:
        constraints = ConstraintSet(tuple(marg), pi)
    except ValueError as e:
        raise ScenarioError("constraints", str(e)) from None
    return Problem(grid, gen, chain, constraints)
