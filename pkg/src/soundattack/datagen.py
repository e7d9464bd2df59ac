"""Reproducible SAT pair and unit-square TSP generators."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument, ResourceExhausted
from .instances import Assignment, CnfFormula, TspDecisionInstance, TspInstance, Tour
from .sat_oracle import DpllSolver
from .tsp_oracle import HELD_KARP_MAX_N, solve_exact, solve_heuristic

MAX_RETRIES = 10


@dataclass(frozen=True)
class SatGenConfig:
    var_range: tuple[int, int] = (3, 10)
    p_bernoulli: float = 0.3
    p_geometric: float = 0.4
    seed: int = 0
    pairs: int = 100
    decision_limit: int | None = 100_000

    def __post_init__(self):
        lo, hi = self.var_range
        if not 1 <= lo <= hi:
            raise InvalidArgument(f"invalid var_range {self.var_range}")
        if self.pairs < 0:
            raise InvalidArgument("pairs must be nonnegative")


@dataclass(frozen=True)
class TspGenConfig:
    node_range: tuple[int, int] = (20, 40)
    d: float = 0.02
    seed: int = 0
    count: int = 100

    def __post_init__(self):
        lo, hi = self.node_range
        if lo < 4 or hi < lo:
            raise InvalidArgument(f"invalid node_range {self.node_range}")
        if not 0 < self.d < 1:
            raise InvalidArgument("d must lie in (0, 1)")


@dataclass(frozen=True)
class SatPair:
    unsat: CnfFormula
    sat: CnfFormula
    witness: Assignment


@dataclass(frozen=True)
class TspSample:
    instance: TspInstance
    tour: Tour
    cost: float
    exact: bool
    positive: TspDecisionInstance
    negative: TspDecisionInstance


def sample_clause(num_vars: int, config: SatGenConfig, rng: np.random.Generator) -> tuple[int, ...]:
    # numpy's geometric counts trials (>= 1); shift to failures before success
    k = 2 + int(rng.random() < config.p_bernoulli) + int(rng.geometric(config.p_geometric)) - 1
    k = min(k, num_vars)
    variables = rng.choice(num_vars, size=k, replace=False) + 1
    signs = np.where(rng.random(k) < 0.5, -1, 1)
    return tuple(int(v * s) for v, s in zip(variables, signs))


def _satisfied(clause, values) -> bool:
    return any(values[abs(l) - 1] == (l > 0) for l in clause)


def _attempt_pair(num_vars: int, config: SatGenConfig, rng: np.random.Generator) -> SatPair:
    solver = DpllSolver(config.decision_limit)
    clauses: list[tuple[int, ...]] = []
    witness = None
    while True:
        clause = sample_clause(num_vars, config, rng)
        clauses.append(clause)
        # the previous witness still works when it satisfies the new clause
        if witness is not None and _satisfied(clause, witness.values):
            continue
        result = solver.solve(CnfFormula(num_vars, clauses))
        if not result.satisfiable:
            break
        witness = result.witness
    if witness is None:
        # a single clause is always satisfiable, so this is unreachable
        raise AssertionError("first clause unsatisfiable")
    unsat = CnfFormula(num_vars, clauses)
    sat = CnfFormula(num_vars, clauses[:-1])
    return SatPair(unsat, sat, witness)


def generate_sat_pair(config: SatGenConfig, rng: np.random.Generator) -> SatPair:
    """Grow a random formula clause by clause until it turns UNSAT.

    Returns the UNSAT formula, the same formula without its last clause
    (SAT), and a witness for the latter.
    """
    lo, hi = config.var_range
    for _ in range(MAX_RETRIES):
        n = int(rng.integers(lo, hi + 1))
        try:
            return _attempt_pair(n, config, rng)
        except ResourceExhausted:
            continue
    raise ResourceExhausted(f"SAT pair generation failed {MAX_RETRIES} times")


def spawn_rngs(seed: int, count: int) -> list[np.random.Generator]:
    """Independent per-item generators split from one root seed."""
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(count)]


def generate_sat_dataset(config: SatGenConfig) -> list[SatPair]:
    return [generate_sat_pair(config, rng) for rng in spawn_rngs(config.seed, config.pairs)]


def decision_pair(instance: TspInstance, cost: float, d: float):
    pos = TspDecisionInstance(instance, cost * (1.0 + d), True)
    neg = TspDecisionInstance(instance, cost * (1.0 - d), False)
    return pos, neg


def generate_tsp(config: TspGenConfig, rng: np.random.Generator) -> TspSample:
    """Uniform unit-square instance, its (near-)optimal tour and both decision queries.

    Exact labels up to 18 nodes; above that the tour comes from the heuristic
    and ``exact`` is False.
    """
    lo, hi = config.node_range
    n = int(rng.integers(lo, hi + 1))
    coords = rng.random((n, 2))
    instance = TspInstance.from_coords(coords)
    result = solve_exact(instance) if n <= HELD_KARP_MAX_N else solve_heuristic(instance)
    pos, neg = decision_pair(instance, result.cost, config.d)
    return TspSample(instance, result.tour, result.cost, result.exact_flag, pos, neg)


def generate_tsp_dataset(config: TspGenConfig) -> list[TspSample]:
    return [generate_tsp(config, rng) for rng in spawn_rngs(config.seed, config.count)]
