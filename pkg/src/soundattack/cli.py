"""Command-line interface.

    python -m soundattack gen-sat  --config exp.yaml --out data/sat
    python -m soundattack train    --config exp.yaml --data data/sat --out model.ckpt
    python -m soundattack attack   --config exp.yaml --checkpoint model.ckpt --data data/sat --out runs/a
    python -m soundattack verify   runs/a
    python -m soundattack report   runs/a/rows.csv

Exit codes: 0 success, 1 validation failure (bad input, failed verification),
2 internal error.  Errors go to stderr as ``error[<kind>]: <message>``.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import asdict
from pathlib import Path

from . import io as sio
from .attacks import AttackConfig, AttackResult, verify_sat, verify_tsp
from .datagen import SatGenConfig, TspGenConfig, generate_sat_dataset, generate_tsp_dataset
from .errors import InvalidArgument, ParseError, TrainingFailure
from .evaluation import (
    ROW_FIELDS,
    SUMMARY_FIELDS,
    evaluate_suite,
    format_csv,
    format_summary_text,
    parse_csv,
    summarize,
)
from .instances import CnfFormula
from .surrogates import init_params
from .training import TrainConfig, adversarial_finetune, train


class VerificationFailed(Exception):
    pass


# ---------------------------------------------------------------- config plumbing


def load_config(args) -> sio.ExperimentConfig:
    config = sio.read_config(args.config) if getattr(args, "config", None) else sio.ExperimentConfig()
    overrides = {"seed": getattr(args, "seed", None)}
    role = getattr(args, "role", None) or config.training.role
    if getattr(args, "role", None):
        overrides["training.role"] = args.role
    if getattr(args, "steps", None) is not None:
        overrides[f"attack.{role}.steps"] = args.steps
    if getattr(args, "budget", None) is not None:
        overrides[f"attack.{role}.budget"] = args.budget
        if role == "sat":
            # one flag for the whole perturbation budget, ADC clause share included
            overrides["attack.sat.clause_fraction"] = args.budget
    if getattr(args, "mode", None):
        overrides["attack.sat.mode"] = args.mode
    return sio.apply_overrides(config, overrides)


def attack_config(config: sio.ExperimentConfig, role: str) -> AttackConfig:
    a = config.attack
    if role == "sat":
        s = a.sat
        return AttackConfig(
            steps=s.steps, lr=s.lr, budget=s.budget, clause_fraction=s.clause_fraction,
            num_samples=s.num_samples, temperature=s.temperature, mode=s.mode,
            seed=config.seed, cutoff=a.cutoff,
        )
    t = a.dtsp if role == "dtsp" else a.convtsp
    extra = {"gap_threshold": t.gap_threshold} if role == "convtsp" else {}
    return AttackConfig(
        steps=t.steps, lr=t.lr, budget=t.budget, eta=t.eta, projection_steps=t.projection_steps,
        hull_exempt=t.hull_exempt, d=config.datagen.d, seed=config.seed, cutoff=a.cutoff, **extra,
    )


def train_config(config: sio.ExperimentConfig) -> TrainConfig:
    t = config.training
    return TrainConfig(
        epochs=t.epochs, batch_size=t.batch_size, lr=t.lr, seed=config.seed,
        finetune_epochs=t.finetune_epochs, perturb_fraction=t.perturb_fraction,
        sat_budget=t.sat_budget, del_budget=t.del_budget, adc_fraction=t.adc_fraction,
        attack_steps=t.attack_steps,
    )


def load_dataset(directory, role: str):
    return sio.read_sat_dataset(directory) if role == "sat" else sio.read_tsp_dataset(directory, role)


# ---------------------------------------------------------------- subcommands


def cmd_gen_sat(args) -> int:
    config = load_config(args)
    d = config.datagen
    gen = SatGenConfig(
        var_range=tuple(d.sat_var_range), p_bernoulli=d.p_bernoulli, p_geometric=d.p_geometric,
        seed=config.seed, pairs=d.sat_pairs,
    )
    pairs = generate_sat_dataset(gen)
    sio.write_sat_dataset(args.out, pairs)
    sio.write_manifest(args.out, {
        "kind": "sat-dataset", "seed": config.seed, "config": asdict(d),
        "counts": {"pairs": len(pairs), "formulas": 2 * len(pairs)},
    })
    print(f"wrote {len(pairs)} SAT/UNSAT pairs to {args.out}")
    return 0


def cmd_gen_tsp(args) -> int:
    config = load_config(args)
    d = config.datagen
    gen = TspGenConfig(node_range=tuple(d.tsp_node_range), d=d.d, seed=config.seed, count=d.tsp_count)
    samples = generate_tsp_dataset(gen)
    sio.write_tsp_dataset(args.out, samples)
    sio.write_manifest(args.out, {
        "kind": "tsp-dataset", "seed": config.seed, "config": asdict(d),
        "counts": {"instances": len(samples), "exact": sum(s.exact for s in samples)},
    })
    print(f"wrote {len(samples)} TSP instances to {args.out}")
    return 0


def _print_trace(trace) -> None:
    for epoch, (loss, acc) in enumerate(zip(trace.losses, trace.accuracy)):
        print(f"epoch {epoch}: loss {loss:.6f} accuracy {acc:.4f}")


def cmd_train(args) -> int:
    config = load_config(args)
    role = config.training.role
    data = load_dataset(args.data, role)
    params = init_params(role, config.training.width, config.training.rounds, seed=config.seed)
    params, trace = train(params, data, train_config(config))
    sio.write_checkpoint(args.out, params)
    _print_trace(trace)
    return 0


def cmd_finetune(args) -> int:
    config = load_config(args)
    params = sio.read_checkpoint(args.checkpoint)
    config = sio.apply_overrides(config, {"training.role": params.role})
    data = load_dataset(args.data, params.role)
    params, trace, subs = adversarial_finetune(params, data, train_config(config))
    sio.write_checkpoint(args.out, params)
    _print_trace(trace)
    print(f"substituted {len(subs)} perturbed instances")
    return 0


def _save_perturbed(directory: Path, attack: str, result: AttackResult) -> None:
    name = f"{attack}_{result.instance_id:05d}"
    if isinstance(result.perturbed, CnfFormula):
        comments = [f"instance {result.instance_id}", f"attack {attack}", f"mode {result.mode}"]
        sio.write_dimacs(directory / f"{name}.cnf", result.perturbed, comments)
        return
    extra = {"instance": result.instance_id, "attack": attack, "mode": result.mode}
    if result.cost_query is not None:
        extra["cost_query"] = float(result.cost_query)
        extra["label"] = bool(result.label)
    doc = sio.TspDocument(result.perturbed, result.solution, extra=extra)
    sio.write_tsp_json(directory / f"{name}.json", doc)


def cmd_attack(args) -> int:
    config = load_config(args)
    params = sio.read_checkpoint(args.checkpoint)
    data = load_dataset(args.data, params.role)
    cfg = attack_config(config, params.role)
    report = evaluate_suite(
        params, data, cfg, random_baseline=config.attack.random_baseline,
        verify=True, timing=config.report.timing,
    )
    out = Path(args.out)
    sio.atomic_write(out / "rows.csv", format_csv(report.rows, ROW_FIELDS))
    sio.atomic_write(out / "summary.csv", format_csv(report.summary, SUMMARY_FIELDS))
    text = format_summary_text(report.summary)
    sio.atomic_write(out / "summary.txt", text)
    for attack, results in report.results.items():
        for r in results:
            _save_perturbed(out / "perturbed", attack, r)
    sio.write_manifest(out, {
        "kind": "attack-run", "seed": config.seed, "role": params.role,
        "data": str(args.data), "checkpoint": str(args.checkpoint),
        "config": sio.format_config(config),
        "counts": {a: len(r) for a, r in report.results.items()},
    })
    sys.stdout.write(text)
    return 0


def _load_result(path: Path, role: str) -> tuple[int, AttackResult]:
    if path.suffix == ".cnf":
        text = path.read_text(encoding="utf-8")
        meta = dict(c.split(" ", 1) for c in sio.dimacs_comments(text) if " " in c)
        formula = sio.parse_dimacs(text)
        iid = int(meta["instance"])
        result = AttackResult(iid, meta["mode"], None, formula, 0.0, 0.0, 0.0, 0.0, 0, False)
        return iid, result
    doc = sio.read_tsp_json(path)
    iid = int(doc.extra["instance"])
    result = AttackResult(
        iid, role, doc.extra.get("label"), doc.instance, 0.0, 0.0, 0.0, 0.0, 0, False,
        solution=doc.tour, cost_query=doc.extra.get("cost_query"),
    )
    return iid, result


def cmd_verify(args) -> int:
    run = Path(args.run)
    manifest = sio.read_manifest(run)
    role = manifest.get("role")
    if manifest.get("kind") != "attack-run" or role not in ("sat", "dtsp", "convtsp"):
        raise ParseError(f"{run}: not an attack-run directory")
    data_dir = Path(args.data) if args.data else Path(manifest["data"])
    data = load_dataset(data_dir, role)
    check = verify_sat if role == "sat" else verify_tsp
    files = sorted(p for p in (run / "perturbed").glob("*") if p.suffix in (".cnf", ".json"))
    if not files:
        raise ParseError(f"{run}: no perturbed instances")
    failed = []
    for path in files:
        iid, result = _load_result(path, role)
        if not 0 <= iid < len(data) or not check(data[iid], result):
            failed.append(path.name)
    ok = len(files) - len(failed)
    print(f"soundness rate: {ok / len(files)!r} ({ok}/{len(files)})")
    for name in failed:
        print(f"failed: {name}")
    if failed:
        raise VerificationFailed(f"{len(failed)} of {len(files)} perturbed instances failed verification")
    return 0


def cmd_report(args) -> int:
    rows = parse_csv(Path(args.csv).read_text(encoding="utf-8"), ROW_FIELDS)
    summary = summarize(rows)
    if args.out:
        sio.atomic_write(args.out, format_csv(summary, SUMMARY_FIELDS))
    sys.stdout.write(format_summary_text(summary))
    return 0


# ---------------------------------------------------------------- entry point


class _Parser(argparse.ArgumentParser):
    # usage errors are validation failures: exit 1 with the common prefix
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"error[usage]: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="soundattack", description="Sound adversarial attacks on neural SAT/TSP solvers.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out=True):
        p.add_argument("--config", help="experiment config (YAML)")
        p.add_argument("--seed", type=int)
        if out:
            p.add_argument("--out", required=True)
        return p

    common(sub.add_parser("gen-sat", help="generate SAT/UNSAT pairs")).set_defaults(fn=cmd_gen_sat)
    common(sub.add_parser("gen-tsp", help="generate TSP instances")).set_defaults(fn=cmd_gen_tsp)

    p = common(sub.add_parser("train", help="train a surrogate"))
    p.add_argument("--data", required=True)
    p.add_argument("--role", choices=["sat", "dtsp", "convtsp"])
    p.set_defaults(fn=cmd_train)

    p = common(sub.add_parser("finetune", help="adversarial fine-tuning"))
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(fn=cmd_finetune)

    p = common(sub.add_parser("attack", help="attack a dataset and write CSV results"))
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--steps", type=int)
    p.add_argument("--budget", type=float)
    p.add_argument("--mode", choices=["auto", "sat", "del", "adc"])
    p.set_defaults(fn=cmd_attack)

    p = sub.add_parser("verify", help="re-check an attack run against the exact oracles")
    p.add_argument("run")
    p.add_argument("--data", help="dataset directory (default: the one recorded in the run)")
    p.set_defaults(fn=cmd_verify)

    p = sub.add_parser("report", help="summary table from a rows CSV")
    p.add_argument("csv")
    p.add_argument("--out", help="also write the summary as CSV")
    p.set_defaults(fn=cmd_report)
    return parser


def _fail(kind: str, message: str, code: int) -> int:
    print(f"error[{kind}]: {message}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "command", None) == "attack":
        role = None
        try:
            role = sio.read_checkpoint(args.checkpoint).role
        except (OSError, ParseError):
            pass  # reported by the command itself
        args.role = role
    try:
        return args.fn(args)
    except VerificationFailed as exc:
        return _fail("verification", str(exc), 1)
    except ParseError as exc:
        return _fail("parse", str(exc), 1)
    except (InvalidArgument, TrainingFailure) as exc:
        return _fail("invalid-argument" if isinstance(exc, InvalidArgument) else "training", str(exc), 1)
    except FileNotFoundError as exc:
        return _fail("not-found", f"{exc.filename}: no such file or directory", 1)
    except Exception as exc:  # noqa: BLE001 - last-resort reporting
        return _fail("internal", f"{type(exc).__name__}: {exc}", 2)


if __name__ == "__main__":
    sys.exit(main())
