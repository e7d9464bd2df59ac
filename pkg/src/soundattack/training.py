"""Adam training and adversarial fine-tuning of the surrogate models."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from . import surrogates as S
from .errors import InvalidArgument, TrainingFailure
from .instances import CnfFormula, TspInstance, Tour
from .sat_perturb import BipartiteAdjacency


@dataclass(frozen=True)
class SatExample:
    formula: CnfFormula
    label: bool
    witness: object = None  # Assignment for satisfiable formulas, used by the SAT attack

    @property
    def matrix(self) -> np.ndarray:
        return BipartiteAdjacency.from_formula(self.formula).matrix


@dataclass(frozen=True)
class DtspExample:
    instance: TspInstance
    cost_query: float
    label: bool
    tour: Tour | None = None  # optimal tour, solved on demand when missing


@dataclass(frozen=True)
class TourExample:
    instance: TspInstance
    tour: Tour


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    lr: float = 2e-3
    seed: int = 0
    finetune_epochs: int = 10
    perturb_fraction: float = 0.05
    sat_budget: float = 0.01
    del_budget: float = 0.05
    adc_fraction: float = 0.25
    attack_steps: int = 500

    def __post_init__(self):
        if self.epochs < 0 or self.finetune_epochs < 0 or self.batch_size < 1:
            raise InvalidArgument("epochs must be nonnegative and batch_size positive")
        if not self.lr > 0:
            raise InvalidArgument("learning rate must be positive")
        for name in ("perturb_fraction", "sat_budget", "del_budget", "adc_fraction"):
            if not 0 <= getattr(self, name) <= 1:
                raise InvalidArgument(f"{name} must lie in [0, 1]")


@dataclass
class TrainTrace:
    losses: list[float] = field(default_factory=list)
    accuracy: list[float] = field(default_factory=list)


# ---------------------------------------------------------------- batch losses


def sat_batch(examples: Sequence[SatExample]) -> tuple[S.SatBatch, np.ndarray]:
    batch = S.make_sat_batch([e.matrix for e in examples], [e.formula.num_vars for e in examples])
    return batch, np.array([float(e.label) for e in examples])


def _sat_loss(params, leaves, examples):
    batch, y = sat_batch(examples)
    logits = S.forward_sat_logits(params, batch.adjacency, batch.literal_mask, leaves)
    return ad.mean(S.bce_from_logits(logits, y))


def _dtsp_loss(params, leaves, examples):
    total = 0.0
    for e in examples:
        p = S.forward_dtsp(params, e.cost_query, coords=e.instance.coords, leaves=leaves)
        total = total + S.bce(p, float(e.label))
    return total * (1.0 / len(examples))


def _convtsp_loss(params, leaves, examples):
    total = 0.0
    for e in examples:
        h = S.forward_convtsp(params, e.instance.coords, leaves=leaves)
        total = total + S.edge_bce(h, e.tour.edge_matrix())
    return total * (1.0 / len(examples))


_LOSSES = {"sat": _sat_loss, "dtsp": _dtsp_loss, "convtsp": _convtsp_loss}


def accuracy(params: S.SurrogateParams, examples: Sequence) -> float:
    """Decision accuracy (sat, dtsp) or mean edge accuracy of the thresholded map (convtsp)."""
    if not examples:
        return float("nan")
    if params.role == "sat":
        return float(np.mean(predict_labels(params, examples) == [e.label for e in examples]))
    if params.role == "dtsp":
        preds = [
            float(S.forward_dtsp(params, e.cost_query, coords=e.instance.coords)) > 0.5
            for e in examples
        ]
        return float(np.mean(np.array(preds) == [e.label for e in examples]))
    accs = []
    for e in examples:
        h = np.asarray(S.forward_convtsp(params, e.instance.coords))
        n = h.shape[0]
        off = ~np.eye(n, dtype=bool)
        accs.append(np.mean((h[off] > 0.5) == (e.tour.edge_matrix()[off] > 0.5)))
    return float(np.mean(accs))


def predict_sat_probs(params: S.SurrogateParams, examples: Sequence[SatExample], chunk: int = 256):
    out = []
    for i in range(0, len(examples), chunk):
        batch, _ = sat_batch(examples[i : i + chunk])
        out.append(np.asarray(S.predict_sat(params, batch)))
    return np.concatenate(out) if out else np.zeros(0)


def predict_labels(params: S.SurrogateParams, examples: Sequence[SatExample]) -> np.ndarray:
    return predict_sat_probs(params, examples) > 0.5


# ---------------------------------------------------------------- training


def train_epoch(
    params: S.SurrogateParams,
    examples: Sequence,
    optimizer: ad.Adam,
    config: TrainConfig,
    rng: np.random.Generator,
    epoch: int,
) -> float:
    loss_fn = _LOSSES[params.role]
    names = params.names()
    order = rng.permutation(len(examples))
    total = 0.0
    for start in range(0, len(order), config.batch_size):
        chunk = [examples[i] for i in order[start : start + config.batch_size]]
        tape = ad.Tape()
        leaves = S.bind(params, tape)
        loss = loss_fn(params, leaves, chunk)
        value = float(ad.value(loss))
        if not np.isfinite(value):
            raise TrainingFailure("loss is not finite", epoch)
        grads = tape.backward(loss)
        optimizer.step([grads[leaves[k]] for k in names])
        total += value * len(chunk)
    if not params.is_finite():
        raise TrainingFailure("parameters are not finite", epoch)
    return total / max(len(examples), 1)


def make_optimizer(params: S.SurrogateParams, lr: float) -> ad.Adam:
    # the optimizer updates the parameter arrays in place
    return ad.Adam([params.tensors[k] for k in params.names()], lr=lr)


def train(
    params: S.SurrogateParams,
    dataset: Sequence,
    config: TrainConfig,
) -> tuple[S.SurrogateParams, TrainTrace]:
    """Minimize BCE (edge BCE for convtsp) with Adam.  Returns a trained copy."""
    if not dataset:
        raise InvalidArgument("dataset is empty")
    params = params.copy()
    rng = np.random.default_rng(config.seed)
    opt = make_optimizer(params, config.lr)
    trace = TrainTrace()
    for epoch in range(config.epochs):
        trace.losses.append(train_epoch(params, dataset, opt, config, rng, epoch))
        trace.accuracy.append(accuracy(params, dataset))
    return params, trace


AttackFn = Callable[[S.SurrogateParams, list, TrainConfig, np.random.Generator], list]


def adversarial_finetune(
    params: S.SurrogateParams,
    dataset: Sequence,
    config: TrainConfig,
    attack_fn: AttackFn | None = None,
) -> tuple[S.SurrogateParams, TrainTrace, list]:
    """Continue training for ``config.finetune_epochs`` epochs, each on a copy of
    the dataset where a ``perturb_fraction`` share of instances is replaced by
    attacked versions.  Labels come from the sound perturbation models.

    ``attack_fn(params, examples, config, rng)`` returns the perturbed
    examples; the default is the PGD attack matching the surrogate's role.  Returns the fine-tuned
    parameters, the trace and every substituted example.
    """
    if not dataset:
        raise InvalidArgument("dataset is empty")
    if attack_fn is None:
        from .attacks import finetune_sat_attack, finetune_tsp_attack

        attack_fn = finetune_sat_attack if params.role == "sat" else finetune_tsp_attack
    params = params.copy()
    rng = np.random.default_rng(config.seed)
    opt = make_optimizer(params, config.lr)
    trace = TrainTrace()
    substituted = []
    count = int(round(config.perturb_fraction * len(dataset)))
    for epoch in range(config.finetune_epochs):
        data = list(dataset)
        if count:
            chosen = np.sort(rng.choice(len(data), size=count, replace=False))
            perturbed = attack_fn(params, [data[i] for i in chosen], config, rng)
            for i, ex in zip(chosen, perturbed):
                data[i] = ex
            substituted.extend(perturbed)
        trace.losses.append(train_epoch(params, data, opt, config, rng, epoch))
        trace.accuracy.append(accuracy(params, dataset))
    return params, trace, substituted


def continue_training(params, dataset, config: TrainConfig):
    """Plain continuation for ``finetune_epochs`` epochs (the regular-training baseline)."""
    cfg = replace(config, perturb_fraction=0.0)
    return adversarial_finetune(params, dataset, cfg, attack_fn=lambda *a: [])
