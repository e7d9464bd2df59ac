import dataclasses
import math

import numpy as np
import pytest

from conftest import sat_examples
from soundattack import surrogates as S
from soundattack.attacks import (
    AttackConfig,
    pgd_attack_sat,
    pgd_attack_tsp,
    random_attack_sat,
    random_attack_tsp,
    samples_until_match,
    verify_sat,
    verify_tsp,
)
from soundattack.errors import InvalidArgument
from soundattack.instances import TspInstance
from soundattack.sat_oracle import solve
from soundattack.sat_perturb import BipartiteAdjacency, Mode, budget_count
from soundattack.training import DtspExample, TourExample
from soundattack.tsp_oracle import solve_exact


@pytest.fixture(scope="module")
def examples():
    return sat_examples(100, 21)


@pytest.fixture(scope="module")
def untrained():
    return S.init_params("sat", seed=5)


def _comparable(r):
    return dataclasses.replace(r, wall_ms=0.0)


# ---------------------------------------------------------------- SAT


@pytest.mark.parametrize("mode", ["sat", "del"])
def test_zero_budget_returns_clean_instance(examples, untrained, mode):
    subset = [e for e in examples if e.label == (mode == "sat")][:20]
    results = pgd_attack_sat(untrained, subset, AttackConfig(steps=5, budget=0.0, mode=mode))
    for e, r in zip(subset, results):
        assert r.perturbed == e.formula and r.used == 0
        assert r.adv_loss == r.clean_loss


def test_zero_budget_random_attack(examples, untrained):
    results = random_attack_sat(untrained, examples[:40:2], AttackConfig(budget=0.0, mode="sat"))
    assert all(r.perturbed == e.formula for r, e in zip(results, examples[:40:2]))


def test_pgd_outputs_are_sound(examples, untrained):
    cfg = AttackConfig(steps=20, seed=3)
    results = pgd_attack_sat(untrained, examples, cfg)
    modes = {r.mode for r in results}
    assert modes == {"sat", "del", "adc"}
    for e, r in zip(examples, results):
        assert solve(r.perturbed).satisfiable == e.label
        assert verify_sat(e, r)


def test_random_outputs_are_sound(examples, untrained):
    count = 0
    for seed in range(5):
        for e, r in zip(examples, random_attack_sat(untrained, examples, AttackConfig(seed=seed))):
            assert solve(r.perturbed).satisfiable == e.label
            assert verify_sat(e, r)
            count += 1
    assert count == 1000


def test_flip_counts_within_budget(examples, untrained):
    cfg = AttackConfig(steps=10, seed=1)
    for e, r in zip(examples, pgd_attack_sat(untrained, examples, cfg)):
        edges = BipartiteAdjacency.from_formula(e.formula).num_edges
        if r.mode in ("sat", "del"):
            assert r.used <= budget_count(cfg.budget, edges)


def test_random_attack_exhausts_budget(examples, untrained):
    cfg = AttackConfig(budget=0.1, mode="del")
    unsat = [e for e in examples if not e.label]
    for e, r in zip(unsat, random_attack_sat(untrained, unsat, cfg)):
        removable = sum(len(c) - 1 for c in e.formula.clauses)
        budget = budget_count(0.1, BipartiteAdjacency.from_formula(e.formula).num_edges)
        assert r.used == min(budget, removable)


def test_attack_is_deterministic(examples, untrained):
    cfg = AttackConfig(steps=15, seed=7)
    a = pgd_attack_sat(untrained, examples[:30], cfg)
    b = pgd_attack_sat(untrained, examples[:30], cfg)
    assert [_comparable(x) for x in a] == [_comparable(x) for x in b]
    c = pgd_attack_sat(untrained, examples[:30], dataclasses.replace(cfg, seed=8))
    assert [_comparable(x) for x in a] != [_comparable(x) for x in c]


def test_early_stopping_value_is_trace_maximum(examples, untrained):
    for r in pgd_attack_sat(untrained, examples[:20], AttackConfig(steps=25)):
        assert len(r.loss_trace) == 26
        assert r.best_trace_loss == max(r.loss_trace)


def test_mode_label_mismatch_rejected(examples, untrained):
    sat = [e for e in examples if e.label][:1]
    with pytest.raises(InvalidArgument):
        pgd_attack_sat(untrained, sat, AttackConfig(mode="del"))
    with pytest.raises(InvalidArgument):
        pgd_attack_sat(S.init_params("dtsp"), sat, AttackConfig())


def test_samples_until_match_degenerate_targets(examples, untrained):
    e = examples[0]
    zero = AttackConfig(budget=0.0, mode="sat")
    clean = pgd_attack_sat(untrained, [e], zero)[0].clean_loss
    # with an empty budget the first draw is the clean instance itself
    assert samples_until_match(untrained, e, zero, clean).samples == 1
    assert samples_until_match(untrained, e, AttackConfig(), -math.inf).samples == 1
    out = samples_until_match(untrained, e, AttackConfig(), math.inf, cutoff=50, batch=20)
    assert out.exceeded and out.samples == 50


def test_single_step_does_not_lower_mean_loss(toy_sat_model):
    sat = [e for e in sat_examples(200, 31) if e.label]
    results = pgd_attack_sat(toy_sat_model, sat, AttackConfig(steps=1, mode="sat"))
    assert len(results) == 200
    assert np.mean([r.adv_loss for r in results]) >= np.mean([r.clean_loss for r in results])


def test_random_baseline_weaker_than_pgd(toy_sat_model):
    data = sat_examples(100, 32)
    cfg = AttackConfig(seed=0)
    pgd = pgd_attack_sat(toy_sat_model, data, cfg)
    rnd = random_attack_sat(toy_sat_model, data, cfg)
    assert np.mean([r.adv_loss for r in rnd]) <= np.mean([r.adv_loss for r in pgd])


# ---------------------------------------------------------------- TSP


def _tsp_examples(seed, count=6, n=7):
    rng = np.random.default_rng(seed)
    out = []
    for i in range(count):
        inst = TspInstance.from_coords(rng.random((n, 2)))
        res = solve_exact(inst)
        label = i % 2 == 0
        out.append((DtspExample(inst, res.cost * (1.02 if label else 0.98), label, res.tour), TourExample(inst, res.tour)))
    return out


@pytest.fixture(scope="module")
def tsp_models():
    return S.init_params("dtsp", width=8, rounds=3, seed=1), S.init_params("convtsp", width=8, rounds=3, seed=1)


def test_tsp_attacks_are_sound(tsp_models):
    dtsp, conv = tsp_models
    for i, (d_ex, c_ex) in enumerate(_tsp_examples(0)):
        for model, ex, factory in ((dtsp, d_ex, AttackConfig.for_dtsp), (conv, c_ex, AttackConfig.for_convtsp)):
            cfg = factory(steps=8, budget=2)
            for attack in (pgd_attack_tsp, random_attack_tsp):
                r = attack(model, ex, cfg, instance_id=i)
                assert r.used <= 2
                assert r.perturbed.n == ex.instance.n + r.used
                assert verify_tsp(ex, r)
                if model is dtsp:
                    optimum = solve_exact(r.perturbed).cost
                    assert (optimum <= r.cost_query) == ex.label


def test_tsp_early_stopping_and_determinism(tsp_models):
    dtsp, conv = tsp_models
    d_ex, c_ex = _tsp_examples(1, count=1)[0]
    for model, ex, factory in ((dtsp, d_ex, AttackConfig.for_dtsp), (conv, c_ex, AttackConfig.for_convtsp)):
        cfg = factory(steps=10, budget=2, seed=4)
        a = pgd_attack_tsp(model, ex, cfg)
        assert len(a.loss_trace) == 11
        assert a.adv_loss == pytest.approx(max(a.loss_trace), abs=1e-12)
        b = pgd_attack_tsp(model, ex, cfg)
        assert a.adv_loss == b.adv_loss and a.loss_trace == b.loss_trace
        assert np.array_equal(a.perturbed.coords, b.perturbed.coords)


def test_tsp_zero_budget_is_clean(tsp_models):
    dtsp, _ = tsp_models
    d_ex, _ = _tsp_examples(2, count=1)[0]
    r = pgd_attack_tsp(dtsp, d_ex, AttackConfig.for_dtsp(steps=3, budget=0))
    assert r.used == 0 and np.array_equal(r.perturbed.coords, d_ex.instance.coords)
    assert r.adv_loss == pytest.approx(r.clean_loss, abs=1e-12)
    assert r.cost_query == pytest.approx(d_ex.cost_query)


def test_tsp_attack_rejects_sat_model():
    d_ex, _ = _tsp_examples(3, count=1)[0]
    with pytest.raises(InvalidArgument):
        pgd_attack_tsp(S.init_params("sat"), d_ex, AttackConfig.for_dtsp())


def test_attack_config_validation():
    with pytest.raises(InvalidArgument):
        AttackConfig(steps=-1)
    with pytest.raises(InvalidArgument):
        AttackConfig(mode="bogus")
    assert AttackConfig().mode_budget(Mode.DEL) == 0.05
    assert AttackConfig(del_budget=0.1).mode_budget(Mode.DEL) == 0.1
