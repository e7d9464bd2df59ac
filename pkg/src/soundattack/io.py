"""File formats: DIMACS CNF, TSP JSON, parameter checkpoints, experiment config.

All writers go through ``atomic_write`` (temp file in the target directory,
then rename), so readers never observe a half-written file.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path

import numpy as np
import yaml

from .errors import InvalidArgument, ParseError
from .instances import Assignment, CnfFormula, TspInstance, Tour
from .surrogates import SurrogateParams

CHECKPOINT_MAGIC = "soundattack-checkpoint"
CHECKPOINT_VERSION = 1


def atomic_write(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------- DIMACS


def format_dimacs(formula: CnfFormula, comments: list[str] | None = None) -> str:
    lines = [f"c {c}" for c in comments or []]
    clauses = [c for c in formula.clauses if c]
    lines.append(f"p cnf {formula.num_vars} {len(clauses)}")
    lines.extend(" ".join(str(l) for l in c) + " 0" for c in clauses)
    return "\n".join(lines) + "\n"


def parse_dimacs(text: str) -> CnfFormula:
    """Parse DIMACS CNF.  Clauses may span lines; every clause ends with 0."""
    header = None
    clauses: list[list[int]] = []
    current: list[int] = []
    current_start = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("c") or line.startswith("%"):
            continue
        if line.startswith("p"):
            if header is not None:
                raise ParseError("duplicate header", lineno)
            parts = line.split()
            if len(parts) != 4 or parts[1] != "cnf":
                raise ParseError(f"malformed header {line!r}", lineno)
            try:
                n, m = int(parts[2]), int(parts[3])
            except ValueError:
                raise ParseError(f"malformed header {line!r}", lineno) from None
            if n < 1 or m < 0:
                raise ParseError("header counts out of range", lineno)
            header = (n, m)
            continue
        if header is None:
            raise ParseError("clause before the 'p cnf' header", lineno)
        for tok in line.split():
            try:
                lit = int(tok)
            except ValueError:
                raise ParseError(f"not an integer: {tok!r}", lineno) from None
            if lit == 0:
                if not current:
                    raise ParseError("empty clause", lineno)
                clauses.append(current)
                current, current_start = [], None
                continue
            if abs(lit) > header[0]:
                raise ParseError(f"literal {lit} out of range 1..{header[0]}", lineno)
            if any(abs(l) == abs(lit) for l in current):
                raise ParseError(f"variable {abs(lit)} occurs twice in a clause", lineno)
            if current_start is None:
                current_start = lineno
            current.append(lit)
    if header is None:
        raise ParseError("missing 'p cnf' header")
    if current:
        raise ParseError("last clause is not terminated by 0", current_start)
    if len(clauses) != header[1]:
        raise ParseError(f"header announces {header[1]} clauses, found {len(clauses)}")
    return CnfFormula(header[0], clauses)


def dimacs_comments(text: str) -> list[str]:
    return [line.strip()[1:].strip() for line in text.splitlines() if line.strip().startswith("c")]


def write_dimacs(path, formula: CnfFormula, comments: list[str] | None = None) -> None:
    atomic_write(path, format_dimacs(formula, comments))


def read_dimacs(path) -> CnfFormula:
    return _parse_at(parse_dimacs, Path(path).read_text(encoding="utf-8"), path)


# ---------------------------------------------------------------- TSP JSON


@dataclass
class TspDocument:
    instance: TspInstance
    tour: Tour | None = None
    cost: float | None = None
    c0_true: float | None = None
    c0_false: float | None = None
    extra: dict = field(default_factory=dict)


def format_tsp_json(doc: TspDocument) -> str:
    inst = doc.instance
    if inst.coords is None:
        raise InvalidArgument("TSP JSON stores coordinate instances only")
    out: dict = {"coords": inst.coords.tolist()}
    if doc.tour is not None:
        out["tour"] = list(doc.tour.order)
    for key in ("cost", "c0_true", "c0_false"):
        val = getattr(doc, key)
        if val is not None:
            out[key] = float(val)
    out.update(doc.extra)
    # json uses repr for floats: the shortest string that round-trips exactly
    return json.dumps(out, indent=1) + "\n"


def parse_tsp_json(text: str) -> TspDocument:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, exc.lineno) from None
    if not isinstance(data, dict) or "coords" not in data:
        raise ParseError("missing 'coords'")
    try:
        coords = np.array(data["coords"], dtype=float)
    except (TypeError, ValueError):
        raise ParseError("'coords' must be a list of [x, y] pairs") from None
    if coords.ndim != 2 or coords.shape[1] != 2 or len(coords) < 1:
        raise ParseError("'coords' must be a list of [x, y] pairs")
    if not np.all(np.isfinite(coords)) or np.any(coords < 0) or np.any(coords > 1):
        raise ParseError("coordinates must lie in [0, 1]")
    instance = TspInstance.from_coords(coords)
    tour = None
    if "tour" in data:
        order = data["tour"]
        if (
            not isinstance(order, list)
            or not all(isinstance(i, int) for i in order)
            or sorted(order) != list(range(len(coords)))
        ):
            raise ParseError("'tour' is not a permutation of the nodes")
        tour = Tour(order)
    vals = {}
    for key in ("cost", "c0_true", "c0_false"):
        if key in data:
            if not isinstance(data[key], (int, float)):
                raise ParseError(f"'{key}' must be a number")
            vals[key] = float(data[key])
    extra = {k: v for k, v in data.items() if k not in ("coords", "tour", "cost", "c0_true", "c0_false")}
    return TspDocument(instance, tour, extra=extra, **vals)


def write_tsp_json(path, doc: TspDocument) -> None:
    atomic_write(path, format_tsp_json(doc))


def read_tsp_json(path) -> TspDocument:
    return _parse_at(parse_tsp_json, Path(path).read_text(encoding="utf-8"), path)


# ---------------------------------------------------------------- checkpoints


def format_checkpoint(params: SurrogateParams) -> str:
    """Text dump: a header, then per tensor a ``tensor <name> <ndim> <dims...>``
    line followed by one line of row-major values in shortest round-trip form."""
    lines = [
        f"{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}",
        f"role {params.role}",
        f"width {params.width}",
        f"rounds {params.rounds}",
    ]
    for name in params.names():
        arr = np.asarray(params.tensors[name], dtype=float)
        dims = " ".join(str(d) for d in arr.shape)
        lines.append(f"tensor {name} {arr.ndim} {dims}".rstrip())
        lines.append(" ".join(repr(float(v)) for v in arr.ravel()))
    return "\n".join(lines) + "\n"


def parse_checkpoint(text: str) -> SurrogateParams:
    lines = text.splitlines()
    if not lines or lines[0].split()[:1] != [CHECKPOINT_MAGIC]:
        raise ParseError("not a checkpoint file", 1)
    try:
        version = int(lines[0].split()[1])
    except (IndexError, ValueError):
        raise ParseError("missing checkpoint version", 1) from None
    if version != CHECKPOINT_VERSION:
        raise ParseError(f"unsupported checkpoint version {version}", 1)
    meta = {}
    for i, key in enumerate(("role", "width", "rounds"), start=2):
        if len(lines) < i or lines[i - 1].split()[:1] != [key]:
            raise ParseError(f"expected '{key}'", i)
        meta[key] = lines[i - 1].split()[1]
    tensors = {}
    i = 4
    while i < len(lines):
        head = lines[i].split()
        if not head:
            i += 1
            continue
        if head[0] != "tensor" or len(head) < 3:
            raise ParseError("expected a tensor header", i + 1)
        name, ndim = head[1], int(head[2])
        dims = tuple(int(d) for d in head[3 : 3 + ndim])
        if len(dims) != ndim:
            raise ParseError("tensor header has the wrong number of dimensions", i + 1)
        if i + 1 >= len(lines):
            raise ParseError(f"missing values for tensor {name}", i + 2)
        try:
            values = [float(v) for v in lines[i + 1].split()]
        except ValueError:
            raise ParseError(f"bad value in tensor {name}", i + 2) from None
        if len(values) != int(np.prod(dims)):
            raise ParseError(f"tensor {name} has {len(values)} values, expected {int(np.prod(dims))}", i + 2)
        tensors[name] = np.array(values, dtype=float).reshape(dims)
        i += 2
    try:
        return SurrogateParams(meta["role"], int(meta["width"]), int(meta["rounds"]), tensors)
    except (ValueError, InvalidArgument) as exc:
        raise ParseError(str(exc)) from None


def write_checkpoint(path, params: SurrogateParams) -> None:
    atomic_write(path, format_checkpoint(params))


def read_checkpoint(path) -> SurrogateParams:
    return _parse_at(parse_checkpoint, Path(path).read_text(encoding="utf-8"), path)


# ---------------------------------------------------------------- datasets and manifests

MANIFEST = "manifest.json"
ORACLE_VERSIONS = {"dpll": "1", "held_karp": "1", "two_opt": "1"}


def write_manifest(directory, info: dict) -> None:
    body = dict(info)
    body.setdefault("oracle_versions", ORACLE_VERSIONS)
    atomic_write(Path(directory) / MANIFEST, json.dumps(body, indent=1, sort_keys=True) + "\n")


def read_manifest(directory) -> dict:
    path = Path(directory) / MANIFEST
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ParseError("missing manifest", path=path) from None
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, exc.lineno, path) from None


def write_sat_dataset(directory, pairs) -> None:
    """One DIMACS file per formula; the sat file carries its witness as a comment."""
    directory = Path(directory)
    for i, pair in enumerate(pairs):
        lits = " ".join(str(l) for l in pair.witness.literals())
        write_dimacs(directory / f"pair_{i:05d}.sat.cnf", pair.sat, [f"witness {lits}"])
        write_dimacs(directory / f"pair_{i:05d}.unsat.cnf", pair.unsat)


def _parse_at(parse, text: str, path):
    try:
        return parse(text)
    except ParseError as exc:
        raise exc.at(Path(path).name) from None


def _witness_from(text: str, path) -> Assignment:
    for c in dimacs_comments(text):
        if c.startswith("witness"):
            lits = [int(t) for t in c.split()[1:]]
            return Assignment([l > 0 for l in sorted(lits, key=abs)])
    raise ParseError("satisfiable formula without a witness comment", path=Path(path).name)


def read_sat_dataset(directory) -> list:
    """Examples in pair order: (sat, unsat) for pair 0, then pair 1, ..."""
    from .training import SatExample

    directory = Path(directory)
    out = []
    for sat_path in sorted(directory.glob("pair_*.sat.cnf")):
        unsat_path = sat_path.with_name(sat_path.name.replace(".sat.cnf", ".unsat.cnf"))
        text = sat_path.read_text(encoding="utf-8")
        sat = _parse_at(parse_dimacs, text, sat_path)
        unsat = _parse_at(parse_dimacs, unsat_path.read_text(encoding="utf-8"), unsat_path)
        out.append(SatExample(sat, True, _witness_from(text, sat_path)))
        out.append(SatExample(unsat, False))
    if not out:
        raise ParseError(f"{directory}: no SAT pairs found")
    return out


def write_tsp_dataset(directory, samples) -> None:
    directory = Path(directory)
    for i, s in enumerate(samples):
        doc = TspDocument(
            s.instance, s.tour, s.cost, s.positive.cost_query, s.negative.cost_query,
            {"exact": bool(s.exact)},
        )
        write_tsp_json(directory / f"tsp_{i:05d}.json", doc)


def read_tsp_dataset(directory, role: str) -> list:
    """DTSP: two decision examples per file (route exists, then not); ConvTSP: one tour example."""
    from .training import DtspExample, TourExample

    directory = Path(directory)
    out = []
    for path in sorted(directory.glob("tsp_*.json")):
        doc = _parse_at(parse_tsp_json, path.read_text(encoding="utf-8"), path)
        if doc.tour is None:
            raise ParseError("missing tour", path=path.name)
        if role == "convtsp":
            out.append(TourExample(doc.instance, doc.tour))
            continue
        if doc.c0_true is None or doc.c0_false is None:
            raise ParseError("missing c0_true/c0_false", path=path.name)
        out.append(DtspExample(doc.instance, doc.c0_true, True, doc.tour))
        out.append(DtspExample(doc.instance, doc.c0_false, False, doc.tour))
    if not out:
        raise ParseError(f"{directory}: no TSP instances found")
    return out


# ---------------------------------------------------------------- experiment config


@dataclass
class DatagenSection:
    sat_var_range: list = field(default_factory=lambda: [3, 10])
    sat_pairs: int = 100
    p_bernoulli: float = 0.3
    p_geometric: float = 0.4
    tsp_node_range: list = field(default_factory=lambda: [20, 40])
    tsp_count: int = 100
    d: float = 0.02


@dataclass
class TrainingSection:
    role: str = "sat"
    width: int = 16
    rounds: int = 8
    epochs: int = 30
    batch_size: int = 32
    lr: float = 0.002
    finetune_epochs: int = 10
    perturb_fraction: float = 0.05
    sat_budget: float = 0.01
    del_budget: float = 0.05
    adc_fraction: float = 0.25
    attack_steps: int = 500


@dataclass
class SatAttackSection:
    steps: int = 500
    lr: float = 0.1
    budget: float = 0.05
    clause_fraction: float = 0.25
    num_samples: int = 20
    temperature: float = 5.0
    mode: str = "auto"


@dataclass
class DtspAttackSection:
    steps: int = 200
    lr: float = 0.001
    budget: float = 5.0
    eta: float = 0.002
    projection_steps: int = 3
    hull_exempt: bool = True


@dataclass
class ConvTspAttackSection:
    steps: int = 500
    lr: float = 0.01
    budget: float = 5.0
    eta: float = 0.002
    projection_steps: int = 3
    hull_exempt: bool = True
    gap_threshold: float = 0.02


@dataclass
class AttackSection:
    sat: SatAttackSection = field(default_factory=SatAttackSection)
    dtsp: DtspAttackSection = field(default_factory=DtspAttackSection)
    convtsp: ConvTspAttackSection = field(default_factory=ConvTspAttackSection)
    cutoff: int = 20000
    random_baseline: bool = True


@dataclass
class ReportSection:
    timing: bool = False


@dataclass
class ExperimentConfig:
    seed: int = 0
    datagen: DatagenSection = field(default_factory=DatagenSection)
    training: TrainingSection = field(default_factory=TrainingSection)
    attack: AttackSection = field(default_factory=AttackSection)
    report: ReportSection = field(default_factory=ReportSection)


def _join(where: str, name: str) -> str:
    return name if where == "config" else f"{where}.{name}"


def _build(cls, data, where: str):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ParseError(f"'{where}' must be a mapping")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ParseError(f"unknown key(s) in '{where}': {', '.join(unknown)}")
    kwargs = {}
    defaults = cls()
    for name, value in data.items():
        default = getattr(defaults, name)
        if is_dataclass(default):
            kwargs[name] = _build(type(default), value, _join(where, name))
            continue
        kwargs[name] = _coerce(value, default, _join(where, name))
    return cls(**kwargs)


def _coerce(value, default, where: str):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ParseError(f"'{where}' must be a boolean")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ParseError(f"'{where}' must be an integer")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ParseError(f"'{where}' must be a number")
        return float(value)
    if isinstance(default, list):
        if not isinstance(value, list) or len(value) != len(default):
            raise ParseError(f"'{where}' must be a list of {len(default)} items")
        return [_coerce(v, d, where) for v, d in zip(value, default)]
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ParseError(f"'{where}' must be a string")
        return value
    return value


def parse_config(text: str) -> ExperimentConfig:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        line = getattr(getattr(exc, "problem_mark", None), "line", None)
        raise ParseError(f"invalid YAML: {exc}", None if line is None else line + 1) from None
    return _build(ExperimentConfig, data or {}, "config")


def format_config(config: ExperimentConfig) -> str:
    """Canonical form: every key present, sections in declaration order."""
    return yaml.safe_dump(asdict(config), sort_keys=False, default_flow_style=None)


def read_config(path) -> ExperimentConfig:
    return _parse_at(parse_config, Path(path).read_text(encoding="utf-8"), path)


def apply_overrides(config: ExperimentConfig, overrides: dict) -> ExperimentConfig:
    """Apply dotted-key overrides such as ``{"attack.steps": 10}`` (None values skipped)."""
    data = asdict(config)
    for key, value in overrides.items():
        if value is None:
            continue
        node = data
        *parents, leaf = key.split(".")
        for p in parents:
            node = node[p]
        if leaf not in node:
            raise InvalidArgument(f"unknown config key {key!r}")
        node[leaf] = value
    return _build(ExperimentConfig, data, "config")
