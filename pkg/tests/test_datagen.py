import numpy as np
import pytest

from conftest import truth_table_sat
from soundattack.datagen import (
    SatGenConfig,
    TspGenConfig,
    decision_pair,
    generate_sat_dataset,
    generate_tsp_dataset,
    sample_clause,
)
from soundattack.errors import InvalidArgument
from soundattack.instances import TspInstance, evaluate_assignment, tour_cost
from soundattack.sat_oracle import solve
from soundattack.tsp_oracle import solve_exact


@pytest.fixture(scope="module")
def pairs():
    return generate_sat_dataset(SatGenConfig(pairs=1000, seed=11))


def test_pairs_have_verified_labels(pairs):
    for p in pairs:
        assert not solve(p.unsat).satisfiable
        assert solve(p.sat).satisfiable
        assert evaluate_assignment(p.sat, p.witness)
        assert 3 <= p.sat.num_vars <= 10


def test_pair_labels_match_truth_table(pairs):
    for p in pairs[:150]:
        assert truth_table_sat(p.sat) and not truth_table_sat(p.unsat)


def test_sat_formula_drops_exactly_the_last_clause(pairs):
    for p in pairs:
        assert p.sat.num_vars == p.unsat.num_vars
        assert p.sat.clauses == p.unsat.clauses[:-1]


def test_witness_fails_the_last_clause(pairs):
    # otherwise the generator would have kept going
    for p in pairs[:200]:
        last = p.unsat.clauses[-1]
        assert not any(p.witness.values[abs(l) - 1] == (l > 0) for l in last)


def test_generation_is_deterministic_and_prefix_stable():
    a = generate_sat_dataset(SatGenConfig(pairs=30, seed=5))
    b = generate_sat_dataset(SatGenConfig(pairs=30, seed=5))
    c = generate_sat_dataset(SatGenConfig(pairs=10, seed=5))
    assert a == b and a[:10] == c
    assert a != generate_sat_dataset(SatGenConfig(pairs=30, seed=6))


def test_clause_size_distribution():
    rng = np.random.default_rng(0)
    cfg = SatGenConfig()
    sizes = np.array([len(sample_clause(60, cfg, rng)) for _ in range(20000)])
    assert sizes.min() == 2
    # 2 + Bernoulli(0.3) + (Geometric(0.4) failures): mean 2 + 0.3 + 1.5
    assert abs(sizes.mean() - 3.8) < 0.05
    clause = sample_clause(3, cfg, rng)
    assert len(clause) <= 3 and len({abs(l) for l in clause}) == len(clause)


def test_sat_config_validation():
    with pytest.raises(InvalidArgument):
        SatGenConfig(var_range=(0, 3))
    with pytest.raises(InvalidArgument):
        SatGenConfig(var_range=(5, 4))


def test_decision_pair_arithmetic():
    inst = TspInstance.from_coords([[0, 0], [1, 0], [1, 1], [0, 1]])
    pos, neg = decision_pair(inst, 4.0, 0.02)
    assert pos.cost_query == pytest.approx(4.08) and pos.label is True
    assert neg.cost_query == pytest.approx(3.92) and neg.label is False


def test_small_tsp_labels_checked_by_held_karp():
    samples = generate_tsp_dataset(TspGenConfig(node_range=(4, 10), count=60, seed=3))
    for s in samples:
        coords = s.instance.coords
        assert np.all((coords >= 0) & (coords <= 1))
        assert s.exact
        opt = solve_exact(s.instance).cost
        assert s.cost == pytest.approx(opt, abs=1e-12)
        assert tour_cost(s.instance, s.tour) == pytest.approx(opt, abs=1e-12)
        assert opt <= s.positive.cost_query and opt > s.negative.cost_query


def test_large_tsp_flagged_approximate():
    samples = generate_tsp_dataset(TspGenConfig(node_range=(20, 24), count=3, seed=1))
    for s in samples:
        assert not s.exact and 20 <= s.instance.n <= 24
        assert s.cost == pytest.approx(tour_cost(s.instance, s.tour))


def test_tsp_generation_deterministic():
    cfg = TspGenConfig(node_range=(5, 8), count=5, seed=2)
    a, b = generate_tsp_dataset(cfg), generate_tsp_dataset(cfg)
    for x, y in zip(a, b):
        assert np.array_equal(x.instance.coords, y.instance.coords) and x.tour == y.tour


def test_tsp_config_validation():
    with pytest.raises(InvalidArgument):
        TspGenConfig(node_range=(3, 5))
    with pytest.raises(InvalidArgument):
        TspGenConfig(d=0.0)
