import numpy as np
import pytest

from conftest import sat_examples
from soundattack import surrogates as S
from soundattack.attacks import AttackConfig
from soundattack.errors import InvalidArgument, ParseError
from soundattack.evaluation import (
    ROW_FIELDS,
    SUMMARY_FIELDS,
    evaluate_suite,
    format_csv,
    format_summary_text,
    parse_csv,
    summarize,
    summary_value,
)
from soundattack.instances import TspInstance
from soundattack.training import TourExample
from soundattack.tsp_oracle import solve_exact


@pytest.fixture(scope="module")
def report():
    data = sat_examples(60, 41, var_range=(3, 8))
    return data, evaluate_suite(S.init_params("sat", seed=2), data, AttackConfig(steps=10, seed=1))


def test_untrained_model_is_at_chance(report):
    _, rep = report
    clean = summary_value(rep.summary, "pgd", "all", "clean_acc")
    assert abs(clean - 0.5) <= 0.1


def test_summary_recomputed_from_csv_matches(report):
    _, rep = report
    rows = parse_csv(format_csv(rep.rows, ROW_FIELDS), ROW_FIELDS)
    assert rows == rep.rows
    assert summarize(rows) == rep.summary
    back = parse_csv(format_csv(rep.summary, SUMMARY_FIELDS), SUMMARY_FIELDS)
    assert back == rep.summary


def test_summary_matches_independent_aggregation(report):
    data, rep = report
    labels = np.array([e.label for e in data])
    for attack, results in rep.results.items():
        clean = np.array([r.clean_pred for r in results]) > 0.5
        adv = np.array([r.adv_pred for r in results]) > 0.5
        assert summary_value(rep.summary, attack, "all", "clean_acc") == pytest.approx(np.mean(clean == labels))
        assert summary_value(rep.summary, attack, "all", "adv_acc") == pytest.approx(np.mean(adv == labels))
        flipped = (clean == labels) & (adv != labels)
        assert summary_value(rep.summary, attack, "all", "success_rate") == pytest.approx(flipped.mean())
        for cls, want in (("sat", True), ("unsat", False)):
            sel = labels == want
            got = summary_value(rep.summary, attack, f"class={cls}", "adv_acc")
            assert got == pytest.approx(np.mean(adv[sel] == labels[sel]))
        modes = {r.mode for r in results}
        for m in modes:
            sel = np.array([r.mode == m for r in results])
            assert summary_value(rep.summary, attack, f"mode={m}", "count") == sel.sum()


def test_every_row_verified(report):
    _, rep = report
    assert all(r["verified"] == "1" for r in rep.rows)
    assert summary_value(rep.summary, "pgd", "all", "verified_rate") == 1.0


def test_rows_sorted_and_timing_hidden(report):
    _, rep = report
    pgd = [r for r in rep.rows if r["attack"] == "pgd"]
    assert [int(r["instance_id"]) for r in pgd] == list(range(len(pgd)))
    assert all(r["wall_ms"] == "NA" for r in rep.rows)


def test_summary_text_lists_every_group(report):
    _, rep = report
    text = format_summary_text(rep.summary)
    lines = text.splitlines()
    assert lines[0].split() == SUMMARY_FIELDS
    assert len(lines) == len(rep.summary) + 2


def test_convtsp_report_has_gap_columns():
    rng = np.random.default_rng(3)
    data = []
    for _ in range(3):
        inst = TspInstance.from_coords(rng.random((6, 2)))
        data.append(TourExample(inst, solve_exact(inst).tour))
    params = S.init_params("convtsp", width=6, rounds=2)
    rep = evaluate_suite(params, data, AttackConfig.for_convtsp(steps=3, budget=1), random_baseline=False)
    gap = summary_value(rep.summary, "pgd", "all", "clean_gap")
    assert gap is not None and gap >= 0.0
    assert summary_value(rep.summary, "pgd", "all", "clean_acc") is None
    assert list(rep.results) == ["pgd"]


def test_bad_inputs_rejected():
    with pytest.raises(InvalidArgument):
        evaluate_suite(S.init_params("sat"), [], AttackConfig())
    with pytest.raises(ParseError):
        parse_csv("a,b\n1,2\n", ROW_FIELDS)
