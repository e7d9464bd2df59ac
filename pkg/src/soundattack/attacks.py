"""PGD and random attacks against the surrogates, with exact verification.

SAT attacks optimize a relaxed edit mask with Adam (gradient ascent on the
BCE against the true label), project it onto the budget after every step,
keep the best iterate and finally sample a discrete, label-preserving
formula.  Many instances are attacked together on padded batches; the loss
is a sum of per-instance terms, so each instance's trajectory is the same as
if it were attacked alone.

TSP attacks move a few inserted nodes with Adam, re-validating every node
after each step and pushing violating nodes back with a short constraint
projection.  Invalid nodes are left out of the model input.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import autodiff as ad
from . import surrogates as S
from .errors import InvalidArgument
from .instances import Assignment, TspDecisionInstance, TspInstance, Tour, tour_cost
from .sat_oracle import solve
from .sat_perturb import (
    BipartiteAdjacency,
    Mode,
    PerturbationMask,
    apply_flips,
    budget_count,
    build_adc_extension,
    build_protection_mask,
    certify,
    ensure_no_del,
    matrix_to_formula,
    project_budget_batch,
    random_flips,
    sample_discrete,
    sat_editable,
)
from .training import DtspExample, SatExample, TourExample, TrainConfig
from .tsp_oracle import HELD_KARP_MAX_N, solve_exact
from .tsp_perturb import (
    AdversarialNodes,
    apply_nodes,
    best_segment,
    check_insertion_constraint,
    initialize_nodes,
    insert_sequential,
    restore_constraint,
    update_cost_query,
    update_solution,
)

DEFAULT_CUTOFF = 20_000
RANDOM_SEED_OFFSET = 7919
MATCH_SEED_OFFSET = 104729


@dataclass(frozen=True)
class AttackConfig:
    steps: int = 500
    lr: float = 0.1
    budget: float = 0.05  # SAT: fraction of literals; TSP: number of nodes
    del_budget: float | None = None  # DEL fraction, defaults to ``budget``
    clause_fraction: float = 0.25  # ADC appended clauses relative to m
    num_samples: int = 20
    temperature: float = 5.0
    eta: float = 0.002
    projection_steps: int = 3
    seed: int = 0
    mode: str = "auto"  # sat | del | adc | auto
    hull_exempt: bool = True
    d: float = 0.02
    gap_threshold: float = 0.02
    cutoff: int = DEFAULT_CUTOFF
    chunk_size: int = 128

    def __post_init__(self):
        if self.steps < 0 or not self.lr > 0:
            raise InvalidArgument("steps must be nonnegative and lr positive")
        if self.budget < 0 or (self.del_budget is not None and self.del_budget < 0):
            raise InvalidArgument("budget must be nonnegative")
        if self.num_samples < 1 or self.chunk_size < 1 or self.cutoff < 1:
            raise InvalidArgument("num_samples, chunk_size and cutoff must be positive")
        if self.mode not in ("auto", "sat", "del", "adc"):
            raise InvalidArgument(f"unknown mode {self.mode!r}")

    @classmethod
    def for_dtsp(cls, **overrides) -> "AttackConfig":
        return cls(**{"steps": 200, "lr": 0.001, "budget": 5, **overrides})

    @classmethod
    def for_convtsp(cls, **overrides) -> "AttackConfig":
        return cls(**{"steps": 500, "lr": 0.01, "budget": 5, **overrides})

    def mode_budget(self, mode: Mode) -> float:
        if mode is Mode.DEL and self.del_budget is not None:
            return self.del_budget
        return self.budget


@dataclass
class AttackResult:
    instance_id: int
    mode: str
    label: bool | None
    perturbed: object  # CnfFormula or TspInstance
    clean_pred: float
    adv_pred: float
    clean_loss: float
    adv_loss: float
    used: int
    success: bool
    loss_trace: list[float] = field(default_factory=list)
    solution: Tour | None = None  # perturbed optimal tour (TSP)
    cost_query: float | None = None  # perturbed decision query (DTSP)
    wall_ms: float = 0.0
    verified: bool | None = None

    @property
    def best_trace_loss(self) -> float:
        """Early-stopping value: the largest relaxed loss seen during the attack."""
        finite = [v for v in self.loss_trace if np.isfinite(v)]
        return max(finite) if finite else float("nan")


def instance_rng(seed: int, instance_id: int, stream: int = 0) -> np.random.Generator:
    """Generator depending only on (seed, instance id, stream), not on batch layout."""
    return np.random.default_rng([seed, instance_id, stream])


# ---------------------------------------------------------------- SAT jobs


@dataclass
class _SatJob:
    instance_id: int
    example: SatExample
    mode: Mode
    adjacency: BipartiteAdjacency
    protection: object
    support: np.ndarray  # where the mask may be nonzero, (2n, cols)
    budget: int
    rng: np.random.Generator

    @property
    def num_vars(self) -> int:
        return self.adjacency.num_vars

    @property
    def cols(self) -> int:
        return self.support.shape[1]


def choose_mode(label: bool, config: AttackConfig, instance_id: int) -> Mode:
    if config.mode != "auto":
        mode = Mode(config.mode)
        if mode.label != bool(label):
            raise InvalidArgument(f"mode {mode.value} does not apply to label {label}")
        return mode
    if label:
        return Mode.SAT
    coin = instance_rng(config.seed, instance_id, stream=1).random()
    return Mode.DEL if coin < 0.5 else Mode.ADC


def _witness(example: SatExample) -> Assignment:
    if example.witness is not None:
        return example.witness
    result = solve(example.formula)
    if not result.satisfiable:
        raise InvalidArgument("example labelled satisfiable is not")
    return result.witness


def _prepare(
    example: SatExample, instance_id: int, config: AttackConfig, seed_offset: int = 0
) -> _SatJob:
    """``seed_offset`` separates the sampling stream of the baselines from the PGD
    attack; the perturbation mode depends on ``config.seed`` only, so every
    attack on an instance uses the same mode."""
    mode = choose_mode(example.label, config, instance_id)
    adj = BipartiteAdjacency.from_formula(example.formula)
    rng = instance_rng(config.seed + seed_offset, instance_id)
    protection = None
    if mode is Mode.SAT:
        protection = build_protection_mask(adj, _witness(example))
        support = sat_editable(adj, protection)
        budget = budget_count(config.mode_budget(mode), adj.num_edges)
    elif mode is Mode.DEL:
        support = adj.matrix.copy()
        budget = budget_count(config.mode_budget(mode), adj.num_edges)
    else:
        extra, delta = build_adc_extension(adj, config.clause_fraction, satisfiable=False)
        support = np.ones((adj.matrix.shape[0], extra))
        budget = budget_count(1.0, delta)
    return _SatJob(instance_id, example, mode, adj, protection, support, budget, rng)


def _relaxed(a, m, mode: Mode):
    if mode is Mode.SAT:
        return a + (1.0 - 2.0 * a) * m
    if mode is Mode.DEL:
        return a - m
    return ad.concat([a, m], axis=2)


def _project_rows(m: np.ndarray, a: np.ndarray, support: np.ndarray, budgets, mode: Mode):
    """In-place projection of a padded mask stack onto each instance's feasible set."""
    proj = project_budget_batch(m * support, budgets)
    if mode is Mode.DEL:
        proj = ensure_no_del(proj, a)
    m[...] = proj


def _sat_losses(params, matrices: list[np.ndarray], num_vars: int, label: bool) -> np.ndarray:
    batch = S.make_sat_batch(matrices, [num_vars] * len(matrices))
    probs = np.asarray(S.predict_sat(params, batch))
    return S.bce_value(probs, float(label)), probs


def _pgd_chunk(params, jobs: list[_SatJob], config: AttackConfig):
    """Relaxed PGD on one padded batch of same-mode jobs.

    Returns the best mask per job (unpadded), the per-step losses and the clean
    probabilities.
    """
    mode = jobs[0].mode
    big_n = max(j.num_vars for j in jobs)
    big_m = max(j.adjacency.num_clauses for j in jobs)
    big_c = max(j.cols for j in jobs)
    # the relaxed loop runs in float32 (it is memory bound); reported losses are
    # recomputed in float64 on the discrete instances
    f32 = np.float32
    params = params.astype(f32)
    a = np.stack([S.pad_adjacency(j.adjacency.matrix, j.num_vars, big_n, big_m) for j in jobs])
    a = a.astype(f32)
    support = np.stack([S.pad_adjacency(j.support, j.num_vars, big_n, big_c) for j in jobs])
    support = support.astype(f32)
    lit_mask = S.make_sat_batch(
        [j.adjacency.matrix for j in jobs], [j.num_vars for j in jobs], big_n, big_m
    ).literal_mask.astype(f32)
    y = np.array([float(j.example.label) for j in jobs], dtype=f32)
    budgets = [j.budget for j in jobs]

    m = np.zeros_like(support)
    opt = ad.Adam([m], lr=config.lr, maximize=True)
    best = m.copy()
    best_loss = np.full(len(jobs), -np.inf)
    trace = []
    for step in range(config.steps + 1):
        tape = ad.Tape()
        mt = tape.leaf(m)
        logits = S.forward_sat_logits(params, _relaxed(a, mt, mode), lit_mask)
        losses = S.bce_from_logits(logits, y)
        lv = np.array(losses.value, dtype=float)
        finite = np.isfinite(lv)
        improved = finite & (lv > best_loss)
        best[improved] = m[improved]
        best_loss[improved] = lv[improved]
        trace.append(np.where(finite, lv, np.nan))
        if step == config.steps or not finite.any():
            break
        grad = tape.backward(ad.sum(losses))[mt]
        grad[~finite] = 0.0
        opt.step([grad])
        _project_rows(m, a, support, budgets, mode)

    masks = [
        S.unpad_adjacency(best[b].astype(float), j.num_vars, j.cols) for b, j in enumerate(jobs)
    ]
    return masks, np.array(trace).T


def _chunks(jobs: list[_SatJob], size: int):
    """Group jobs by mode, then by size, so padding stays small."""
    out = []
    for mode in Mode:
        group = sorted(
            (j for j in jobs if j.mode is mode),
            key=lambda j: (j.cols, j.num_vars, j.instance_id),
        )
        out.extend(group[i : i + size] for i in range(0, len(group), size))
    return out


def pgd_attack_sat(
    params: S.SurrogateParams,
    examples: Sequence[SatExample],
    config: AttackConfig,
    instance_ids: Sequence[int] | None = None,
) -> list[AttackResult]:
    """L0-PGD on a list of SAT examples; results come back in input order."""
    if params.role != "sat":
        raise InvalidArgument("SAT attacks need a sat surrogate")
    ids = list(range(len(examples))) if instance_ids is None else list(instance_ids)
    jobs = [_prepare(e, i, config) for e, i in zip(examples, ids)]
    results: dict[int, AttackResult] = {}
    for chunk in _chunks(jobs, config.chunk_size):
        start = time.perf_counter()
        masks, traces = _pgd_chunk(params, chunk, config)
        per_job_ms = (time.perf_counter() - start) * 1000.0 / len(chunk)
        for job, mask, trace in zip(chunk, masks, traces):
            t0 = time.perf_counter()
            label = bool(job.example.label)
            n = job.num_vars

            def loss_fn(mats, n=n, label=label):
                return _sat_losses(params, list(mats), n, label)[0]

            sample = sample_discrete(
                PerturbationMask(mask, job.mode),
                job.adjacency,
                job.protection,
                loss_fn,
                config.num_samples,
                config.temperature,
                job.rng,
                job.budget,
                template=job.example.formula,
            )
            loss, prob = _sat_losses(params, [job.adjacency.matrix, sample.adjacency], n, label)
            adv_prob = float(prob[1])
            results[job.instance_id] = AttackResult(
                instance_id=job.instance_id,
                mode=job.mode.value,
                label=label,
                perturbed=sample.formula,
                clean_pred=float(prob[0]),
                adv_pred=adv_prob,
                clean_loss=float(loss[0]),
                adv_loss=float(loss[1]),
                used=sample.flips,
                success=(adv_prob > 0.5) != label,
                loss_trace=[float(v) for v in trace],
                wall_ms=per_job_ms + (time.perf_counter() - t0) * 1000.0,
            )
    return [results[i] for i in ids]


def _random_matrix(job: _SatJob) -> tuple[np.ndarray, int]:
    editable = job.support if job.mode is Mode.SAT else None
    extra = job.cols if job.mode is Mode.ADC else 0
    flips = random_flips(job.mode, job.adjacency, job.budget, job.rng, editable, extra)
    return apply_flips(job.mode, job.adjacency, flips), int(flips.sum())


def random_attack_sat(
    params: S.SurrogateParams,
    examples: Sequence[SatExample],
    config: AttackConfig,
    instance_ids: Sequence[int] | None = None,
) -> list[AttackResult]:
    """One uniformly random admissible perturbation per instance at full budget."""
    ids = list(range(len(examples))) if instance_ids is None else list(instance_ids)
    out = []
    for example, iid in zip(examples, ids):
        t0 = time.perf_counter()
        job = _prepare(example, iid, config, seed_offset=RANDOM_SEED_OFFSET)
        label = bool(example.label)
        mat, used = _random_matrix(job)
        losses, probs = _sat_losses(params, [job.adjacency.matrix, mat], job.num_vars, label)
        formula = matrix_to_formula(mat, job.num_vars, example.formula)
        if job.mode is Mode.ADC:
            formula = formula.drop_empty()
        out.append(
            AttackResult(
                instance_id=iid,
                mode=job.mode.value,
                label=label,
                perturbed=formula,
                clean_pred=float(probs[0]),
                adv_pred=float(probs[1]),
                clean_loss=float(losses[0]),
                adv_loss=float(losses[1]),
                used=used,
                success=(probs[1] > 0.5) != label,
                loss_trace=[float(losses[1])],
                wall_ms=(time.perf_counter() - t0) * 1000.0,
            )
        )
    return out


@dataclass(frozen=True)
class SampleCount:
    samples: int
    exceeded: bool  # True when the cutoff was hit without a match


def samples_until_match(
    params: S.SurrogateParams,
    example: SatExample,
    config: AttackConfig,
    target_loss: float,
    cutoff: int | None = None,
    instance_id: int = 0,
    batch: int = 500,
    mode: Mode | None = None,
) -> SampleCount:
    """Draw random admissible perturbations until one reaches ``target_loss``.

    ``mode`` pins the perturbation model (use the one the PGD attack used).
    """
    cutoff = config.cutoff if cutoff is None else cutoff
    cfg = config if mode is None else replace(config, mode=Mode(mode).value)
    job = _prepare(example, instance_id, cfg, seed_offset=MATCH_SEED_OFFSET)
    drawn = 0
    while drawn < cutoff:
        take = min(batch, cutoff - drawn)
        mats = [_random_matrix(job)[0] for _ in range(take)]
        losses, _ = _sat_losses(params, mats, job.num_vars, bool(example.label))
        hit = np.flatnonzero(losses >= target_loss)
        if hit.size:
            return SampleCount(drawn + int(hit[0]) + 1, False)
        drawn += take
    return SampleCount(cutoff, True)


def finetune_sat_attack(
    params: S.SurrogateParams, examples: list, config: TrainConfig, rng: np.random.Generator
) -> list[SatExample]:
    """Attack used during adversarial fine-tuning (SAT budget lowered, DEL/ADC unchanged)."""
    cfg = AttackConfig(
        steps=config.attack_steps,
        budget=config.sat_budget,
        del_budget=config.del_budget,
        clause_fraction=config.adc_fraction,
        seed=int(rng.integers(2**31)),
    )
    results = pgd_attack_sat(params, examples, cfg)
    return [
        SatExample(r.perturbed, e.label, e.witness if e.label else None)
        for r, e in zip(results, examples)
    ]


def finetune_tsp_attack(
    params: S.SurrogateParams, examples: list, config: TrainConfig, rng: np.random.Generator
) -> list:
    """Fine-tuning attack for the TSP surrogates: the perturbed instance with its
    certified tour (and, for DTSP, the updated cost query)."""
    factory = AttackConfig.for_dtsp if params.role == "dtsp" else AttackConfig.for_convtsp
    cfg = factory(steps=config.attack_steps, seed=int(rng.integers(2**31)))
    out = []
    for i, ex in enumerate(examples):
        r = pgd_attack_tsp(params, ex, cfg, instance_id=i)
        if params.role == "dtsp":
            out.append(DtspExample(r.perturbed, r.cost_query, ex.label, r.solution))
        else:
            out.append(TourExample(r.perturbed, r.solution))
    return out


# ---------------------------------------------------------------- TSP


def _coords_with(instance: TspInstance, z, valid: list[bool]):
    idx = [k for k, ok in enumerate(valid) if ok]
    if not idx:
        return instance.coords
    return ad.concat([instance.coords, ad.take(z, idx, axis=0)], axis=0)


def _tsp_objective(params, example, tour: Tour, nodes: AdversarialNodes, z, d: float):
    """Differentiable loss of the instance with the valid nodes inserted.

    Returns (loss, probability or edge map, perturbed optimal tour).
    """
    inst = example.instance
    coords = _coords_with(inst, z, nodes.valid)
    new_tour = update_solution(tour, nodes)
    if params.role == "dtsp":
        edges = new_tour.edge_matrix()
        cost = ad.sum(S.pairwise_distance(coords) * edges) * 0.5
        c0 = cost * ((1.0 + d) if example.label else (1.0 - d))
        prob = S.forward_dtsp(params, c0, coords=coords)
        return S.bce(prob, float(example.label)), prob, new_tour
    h = S.forward_convtsp(params, coords)
    return S.edge_bce(h, new_tour.edge_matrix()), h, new_tour


def _project_nodes(inst: TspInstance, tour: Tour, z: np.ndarray, config: AttackConfig):
    """Re-validate every node in order, repairing violators in place."""
    nodes = AdversarialNodes()
    cur_inst, cur_tour = inst, tour
    for k in range(z.shape[0]):
        host = best_segment(cur_inst, cur_tour, z[k])
        ok = check_insertion_constraint(cur_inst, cur_tour, z[k], host, hull_exempt=config.hull_exempt)
        if not ok:
            z[k] = restore_constraint(
                cur_inst, cur_tour, z[k], host, config.eta, config.projection_steps, config.hull_exempt
            )
            host = best_segment(cur_inst, cur_tour, z[k])
            ok = check_insertion_constraint(
                cur_inst, cur_tour, z[k], host, hull_exempt=config.hull_exempt
            )
        nodes.points.append(z[k].copy())
        nodes.hosts.append(host if ok else None)
        nodes.valid.append(ok)
        if ok:
            cur_inst, cur_tour = apply_nodes(
                cur_inst, cur_tour, AdversarialNodes([z[k].copy()], [host], [True])
            )
    return nodes


def _clean_tour(example) -> Tour:
    if isinstance(example, TourExample):
        return example.tour
    if example.tour is not None:
        return example.tour
    return solve_exact(example.instance).tour


def _gap(instance: TspInstance, predicted: Tour, optimal: Tour) -> float:
    c_opt = tour_cost(instance, optimal)
    return abs(tour_cost(instance, predicted) - c_opt) / c_opt


def _tsp_result(params, example, tour, nodes, z, config, iid, trace, clean_loss, clean_out, t0):
    inst = example.instance
    loss, out, new_tour = _tsp_objective(params, example, tour, nodes, z, config.d)
    aug, _ = apply_nodes(inst, tour, nodes)
    if params.role == "dtsp":
        old = TspDecisionInstance(inst, example.cost_query, example.label)
        dec = update_cost_query(old, tour_cost(aug, new_tour), config.d, instance=aug)
        clean_pred, adv_pred = float(ad.value(clean_out)), float(ad.value(out))
        success = (adv_pred > 0.5) != bool(example.label)
        label, cq = bool(example.label), dec.cost_query
    else:
        clean_pred = _gap(inst, S.greedy_decode(clean_out), tour)
        adv_pred = _gap(aug, S.greedy_decode(out), new_tour)
        success = adv_pred > config.gap_threshold
        label, cq = None, None
    return AttackResult(
        instance_id=iid,
        mode=params.role,
        label=label,
        perturbed=aug,
        clean_pred=clean_pred,
        adv_pred=adv_pred,
        clean_loss=float(clean_loss),
        adv_loss=float(ad.value(loss)),
        used=nodes.num_valid,
        success=bool(success),
        loss_trace=[float(v) for v in trace],
        solution=new_tour,
        cost_query=cq,
        wall_ms=(time.perf_counter() - t0) * 1000.0,
    )


def pgd_attack_tsp(params: S.SurrogateParams, example, config: AttackConfig, instance_id: int = 0):
    """Node-insertion PGD for the DTSP (``DtspExample``) or ConvTSP (``TourExample``) surrogate."""
    if params.role not in ("dtsp", "convtsp"):
        raise InvalidArgument("TSP attacks need a dtsp or convtsp surrogate")
    if example.instance.coords is None:
        raise InvalidArgument("the TSP attack moves node coordinates; instance has none")
    t0 = time.perf_counter()
    rng = instance_rng(config.seed, instance_id)
    tour = _clean_tour(example)
    count = int(round(config.budget))
    nodes = initialize_nodes(example.instance, tour, count, rng, config.hull_exempt)
    z = np.array(nodes.points, dtype=float).reshape(count, 2)
    empty = AdversarialNodes([], [], [])
    clean_loss, clean_out, _ = _tsp_objective(params, example, tour, empty, None, config.d)
    opt = ad.Adam([z], lr=config.lr, maximize=True)
    best = (-np.inf, z.copy(), nodes)
    trace = []
    for step in range(config.steps + 1):
        tape = ad.Tape()
        zt = tape.leaf(z)
        loss, _, _ = _tsp_objective(params, example, tour, nodes, zt, config.d)
        value = float(ad.value(loss))
        trace.append(value)
        if not np.isfinite(value):
            break
        if value > best[0]:
            best = (value, z.copy(), nodes)
        if step == config.steps:
            break
        grad = tape.backward(loss)[zt] if isinstance(loss, ad.Tensor) else np.zeros_like(z)
        opt.step([grad])
        np.clip(z, 0.0, 1.0, out=z)
        nodes = _project_nodes(example.instance, tour, z, config)
    _, z_best, nodes_best = best
    return _tsp_result(
        params, example, tour, nodes_best, z_best, config, instance_id, trace,
        float(ad.value(clean_loss)), clean_out, t0,
    )


def random_attack_tsp(params: S.SurrogateParams, example, config: AttackConfig, instance_id: int = 0):
    """Budget-many random allowed nodes, evaluated once."""
    t0 = time.perf_counter()
    rng = instance_rng(config.seed + RANDOM_SEED_OFFSET, instance_id)
    tour = _clean_tour(example)
    count = int(round(config.budget))
    nodes = initialize_nodes(example.instance, tour, count, rng, config.hull_exempt)
    z = np.array(nodes.points, dtype=float).reshape(count, 2)
    empty = AdversarialNodes([], [], [])
    clean_loss, clean_out, _ = _tsp_objective(params, example, tour, empty, None, config.d)
    loss, _, _ = _tsp_objective(params, example, tour, nodes, z, config.d)
    return _tsp_result(
        params, example, tour, nodes, z, config, instance_id, [float(ad.value(loss))],
        float(ad.value(clean_loss)), clean_out, t0,
    )


# ---------------------------------------------------------------- verification


def verify_sat(example: SatExample, result: AttackResult) -> bool:
    """Exact re-check: the solver's verdict on the perturbed formula equals the label,
    and the formula lies in the claimed perturbation space."""
    perturbed = result.perturbed
    if solve(perturbed).satisfiable != bool(example.label):
        return False
    mode = Mode(result.mode)
    witness = _witness(example) if mode is Mode.SAT else None
    return certify(example.formula, perturbed, mode, witness)


def verify_tsp(example, result: AttackResult, tol: float = 1e-9) -> bool:
    """Exact optimality of the claimed tour (and decision label) when Held-Karp is
    feasible; otherwise a re-run of the insertion checks from the clean tour."""
    aug: TspInstance = result.perturbed
    tour = result.solution
    cost = tour_cost(aug, tour)
    if aug.n <= HELD_KARP_MAX_N:
        optimum = solve_exact(aug).cost
        ok = abs(optimum - cost) <= tol
    else:
        n0 = example.instance.n
        _, inst, redo = insert_sequential(
            example.instance, _clean_tour(example), aug.coords[n0:], hull_exempt=True
        )
        ok = inst.n == aug.n and redo == tour
        optimum = cost
    if ok and result.cost_query is not None:
        ok = (optimum <= result.cost_query) == bool(example.label)
    return bool(ok)
