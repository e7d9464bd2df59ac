"""Attack-suite evaluation: per-instance rows, summary tables, CSV/text output.

The summary is always computed from the per-instance rows, and the rows
round-trip through CSV exactly (floats use their shortest repr), so a
summary rebuilt from a CSV file equals the one produced at attack time.
"""

from __future__ import annotations

import csv
import io
import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Sequence

from . import surrogates as S
from .attacks import (
    AttackConfig,
    AttackResult,
    pgd_attack_sat,
    pgd_attack_tsp,
    random_attack_sat,
    random_attack_tsp,
    verify_sat,
    verify_tsp,
)
from .errors import InvalidArgument, ParseError

ROW_FIELDS = [
    "instance_id",
    "attack",
    "mode",
    "label",
    "clean_pred",
    "adv_pred",
    "clean_loss",
    "best_loss",
    "flips_or_nodes_used",
    "verified",
    "wall_ms",
]

SUMMARY_FIELDS = [
    "attack",
    "group",
    "count",
    "clean_acc",
    "adv_acc",
    "success_rate",
    "clean_gap",
    "adv_gap",
    "verified_rate",
]

NA = "NA"


def _fmt(v) -> str:
    if v is None:
        return NA
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return NA if math.isnan(v) else repr(v)
    return str(v)


def result_row(result: AttackResult, attack: str, timing: bool = False) -> dict[str, str]:
    """One CSV row.  ``best_loss`` is the loss of the returned (discrete) instance."""
    return {
        "instance_id": str(result.instance_id),
        "attack": attack,
        "mode": result.mode,
        "label": _fmt(result.label),
        "clean_pred": _fmt(float(result.clean_pred)),
        "adv_pred": _fmt(float(result.adv_pred)),
        "clean_loss": _fmt(float(result.clean_loss)),
        "best_loss": _fmt(float(result.adv_loss)),
        "flips_or_nodes_used": str(int(result.used)),
        "verified": _fmt(result.verified),
        "wall_ms": _fmt(round(float(result.wall_ms), 3)) if timing else NA,
    }


def _num(text: str):
    return None if text == NA else float(text)


def _flag(text: str):
    return None if text == NA else text == "1"


@dataclass
class SuiteReport:
    rows: list[dict[str, str]]
    summary: list[dict[str, str]]
    results: dict[str, list[AttackResult]]


def _attack_all(params, dataset, config: AttackConfig, attack: str) -> list[AttackResult]:
    ids = list(range(len(dataset)))
    if params.role == "sat":
        fn = pgd_attack_sat if attack == "pgd" else random_attack_sat
        return fn(params, dataset, config, ids)
    fn = pgd_attack_tsp if attack == "pgd" else random_attack_tsp
    return [fn(params, ex, config, i) for i, ex in zip(ids, dataset)]


def evaluate_suite(
    params: S.SurrogateParams,
    dataset: Sequence,
    config: AttackConfig,
    random_baseline: bool = True,
    verify: bool = True,
    timing: bool = False,
) -> SuiteReport:
    """Run the PGD attack (and the random baseline) over ``dataset``.

    ``dataset`` holds ``SatExample``s for a sat surrogate, ``DtspExample``s for
    dtsp and ``TourExample``s for convtsp.  With ``verify`` every perturbed
    instance is re-checked by the exact oracles.
    """
    if not dataset:
        raise InvalidArgument("dataset is empty")
    attacks = ["pgd", "random"] if random_baseline else ["pgd"]
    check = verify_sat if params.role == "sat" else verify_tsp
    results: dict[str, list[AttackResult]] = {}
    rows = []
    for attack in attacks:
        out = _attack_all(params, dataset, config, attack)
        for ex, r in zip(dataset, out):
            if verify:
                r.verified = check(ex, r)
        out.sort(key=lambda r: r.instance_id)
        results[attack] = out
        rows.extend(result_row(r, attack, timing) for r in out)
    return SuiteReport(rows, summarize(rows), results)


# ---------------------------------------------------------------- summary


def _class_name(mode: str, label) -> str:
    if label is None:
        return "all"
    if mode in ("sat", "del", "adc"):
        return "sat" if label else "unsat"
    return "route" if label else "no-route"


def _mean(values):
    vals = [v for v in values if v is not None]
    return sum(vals) / len(vals) if vals else None


def _group_stats(rows) -> dict:
    decision = [r for r in rows if r["label"] is not None]
    gaps = [r for r in rows if r["label"] is None]

    def correct(pred, label):
        return (pred > 0.5) == label

    out = {"count": len(rows)}
    if decision:
        out["clean_acc"] = _mean([float(correct(r["clean_pred"], r["label"])) for r in decision])
        out["adv_acc"] = _mean([float(correct(r["adv_pred"], r["label"])) for r in decision])
        out["success_rate"] = _mean(
            [
                float(correct(r["clean_pred"], r["label"]) and not correct(r["adv_pred"], r["label"]))
                for r in decision
            ]
        )
    if gaps:
        out["clean_gap"] = _mean([r["clean_pred"] for r in gaps])
        out["adv_gap"] = _mean([r["adv_pred"] for r in gaps])
    checked = [r["verified"] for r in rows if r["verified"] is not None]
    if checked:
        out["verified_rate"] = sum(checked) / len(checked)
    return out


def parse_row(row: dict[str, str]) -> dict:
    try:
        return {
            "instance_id": int(row["instance_id"]),
            "attack": row["attack"],
            "mode": row["mode"],
            "label": _flag(row["label"]),
            "clean_pred": float(row["clean_pred"]),
            "adv_pred": float(row["adv_pred"]),
            "clean_loss": _num(row["clean_loss"]),
            "best_loss": _num(row["best_loss"]),
            "used": int(row["flips_or_nodes_used"]),
            "verified": _flag(row["verified"]),
            "wall_ms": _num(row["wall_ms"]),
        }
    except (KeyError, ValueError) as exc:
        raise ParseError(f"bad result row: {exc}") from None


def summarize(rows: Sequence[dict[str, str]]) -> list[dict[str, str]]:
    """Summary rows per attack: overall, per perturbation mode and per class.

    For decision models ``success_rate`` is the share of all instances whose
    correct clean prediction was flipped; for ConvTSP the gap columns hold
    the mean optimality gap of the greedy decoding.
    """
    parsed = [parse_row(r) for r in rows]
    groups: dict[tuple[str, str], list] = defaultdict(list)
    order: list[tuple[str, str]] = []
    for r in parsed:
        keys = [(r["attack"], "all"), (r["attack"], f"mode={r['mode']}")]
        cls = _class_name(r["mode"], r["label"])
        if cls != "all":
            keys.append((r["attack"], f"class={cls}"))
        for k in keys:
            if k not in groups:
                order.append(k)
            groups[k].append(r)
    order.sort(key=lambda k: (k[0] != "pgd", k[0], k[1] != "all", k[1]))
    table = []
    for attack, group in order:
        stats = _group_stats(groups[(attack, group)])
        row = {"attack": attack, "group": group}
        for f in SUMMARY_FIELDS[2:]:
            v = stats.get(f)
            row[f] = str(v) if f == "count" else _fmt(None if v is None else float(v))
        table.append(row)
    return table


def summary_value(summary, attack: str, group: str, field: str) -> float | None:
    for row in summary:
        if row["attack"] == attack and row["group"] == group:
            return _num(row[field])
    raise KeyError((attack, group))


# ---------------------------------------------------------------- CSV / text


def format_csv(rows: Sequence[dict[str, str]], fields: Sequence[str]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(fields), lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


def parse_csv(text: str, fields: Sequence[str]) -> list[dict[str, str]]:
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames is None or list(reader.fieldnames) != list(fields):
        raise ParseError(f"expected CSV columns {','.join(fields)}", 1)
    rows = []
    for lineno, row in enumerate(reader, start=2):
        if None in row or any(v is None for v in row.values()):
            raise ParseError("wrong number of columns", lineno)
        rows.append(dict(row))
    return rows


def format_summary_text(summary: Sequence[dict[str, str]]) -> str:
    """Fixed-width table for terminals."""
    cols = SUMMARY_FIELDS
    cells = [cols] + [[_short(row[c]) for c in cols] for row in summary]
    widths = [max(len(r[i]) for r in cells) for i in range(len(cols))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def _short(text: str) -> str:
    try:
        v = float(text)
    except ValueError:
        return text
    return text if v.is_integer() and "." not in text else f"{v:.4f}"
