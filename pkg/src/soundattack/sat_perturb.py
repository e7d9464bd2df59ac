"""Sound SAT perturbations (SAT / DEL / ADC) over the literal-clause adjacency.

The adjacency ``A`` has 2n rows and m columns: row ``i < n`` is the literal
``v_{i+1}``, row ``n + i`` its negation, column ``j`` is clause ``j``.  The
attacks optimize a relaxed mask ``M`` in [0, 1] over the same shape (or over
appended clause columns for ADC), which is finally sampled back to a
discrete, label-preserving formula.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import InvalidArgument
from .instances import Assignment, CnfFormula, literal_row, row_literal


class Mode(str, enum.Enum):
    SAT = "sat"
    DEL = "del"
    ADC = "adc"

    @property
    def label(self) -> bool:
        """Satisfiability label the mode applies to."""
        return self is Mode.SAT


@dataclass(frozen=True, eq=False)
class BipartiteAdjacency:
    matrix: np.ndarray
    num_vars: int

    def __post_init__(self):
        a = np.asarray(self.matrix, dtype=float)
        if a.ndim != 2 or a.shape[0] != 2 * self.num_vars:
            raise InvalidArgument(f"adjacency must have {2 * self.num_vars} rows, got {a.shape}")
        if not np.all((a == 0) | (a == 1)):
            raise InvalidArgument("adjacency entries must be 0 or 1")
        n = self.num_vars
        if np.any(a[:n] + a[n:] > 1):
            raise InvalidArgument("a clause holds both polarities of a variable")
        a = a.copy()
        a.setflags(write=False)
        object.__setattr__(self, "matrix", a)

    @classmethod
    def from_formula(cls, formula: CnfFormula) -> "BipartiteAdjacency":
        n = formula.num_vars
        a = np.zeros((2 * n, formula.num_clauses))
        for j, clause in enumerate(formula.clauses):
            for lit in clause:
                a[literal_row(lit, n), j] = 1.0
        return cls(a, n)

    @property
    def num_clauses(self) -> int:
        return self.matrix.shape[1]

    @property
    def num_edges(self) -> int:
        return int(self.matrix.sum())

    def to_formula(self, template: CnfFormula | None = None) -> CnfFormula:
        """Convert back to a formula.

        With a template, surviving literals keep the template's clause order
        and new literals are appended; otherwise literals are listed
        positive-first by variable index.  Empty columns are kept as empty
        clauses (callers drop them where the semantics allow).
        """
        return matrix_to_formula(self.matrix, self.num_vars, template)


def matrix_to_formula(
    a: np.ndarray, num_vars: int, template: CnfFormula | None = None
) -> CnfFormula:
    clauses = []
    for j in range(a.shape[1]):
        rows = np.flatnonzero(a[:, j] > 0.5)
        lits = [row_literal(int(r), num_vars) for r in rows]
        if template is not None and j < template.num_clauses:
            present = set(lits)
            kept = [l for l in template.clauses[j] if l in present]
            kept_set = set(kept)
            lits = kept + [l for l in lits if l not in kept_set]
        clauses.append(lits)
    return CnfFormula(num_vars, clauses)


@dataclass
class PerturbationMask:
    matrix: np.ndarray
    mode: Mode

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=float)
        self.mode = Mode(self.mode)


@dataclass(frozen=True, eq=False)
class ProtectionMask:
    """Edges whose edit is forbidden: witness-true literals present in a clause."""

    matrix: np.ndarray


def witness_rows(witness: Assignment) -> np.ndarray:
    """0/1 vector over the 2n literal rows: 1 where the literal is true."""
    v = np.asarray(witness.values, dtype=float)
    return np.concatenate([v, 1.0 - v])


def build_protection_mask(adjacency: BipartiteAdjacency, witness: Assignment) -> ProtectionMask:
    if len(witness) != adjacency.num_vars:
        raise InvalidArgument("witness length does not match the number of variables")
    t = adjacency.matrix * witness_rows(witness)[:, None]
    if adjacency.num_clauses and np.any(t.sum(axis=0) < 1):
        raise InvalidArgument("witness does not satisfy the formula")
    t.setflags(write=False)
    return ProtectionMask(t)


def sat_editable(adjacency: BipartiteAdjacency, protection: ProtectionMask) -> np.ndarray:
    """0/1 matrix of entries the SAT mode may flip.

    Protected edges are frozen, and so is the complementary literal of a
    protected edge (adding it would put both polarities in one clause).
    """
    t = protection.matrix
    n = adjacency.num_vars
    complement = np.concatenate([t[n:], t[:n]])
    return 1.0 - np.clip(t + complement, 0.0, 1.0)


def budget_count(fraction: float, total: float) -> int:
    """Absolute budget from a fraction, rounded half-up."""
    if fraction < 0:
        raise InvalidArgument("budget fraction must be nonnegative")
    return int(math.floor(fraction * total + 0.5))


# ---------------------------------------------------------------- projection


def project_budget_array(y: np.ndarray, budget: float, tol: float = 1e-9, max_iter: int = 10_000):
    """Euclidean projection of ``y`` onto {x in [0,1]^d : sum(x) <= budget}.

    The projection is clip(y - mu, 0, 1) for the smallest mu >= 0 meeting the
    budget.  mu is raised iteratively by (excess / #entries above mu), which
    never overshoots because that count bounds the slope of the clipped sum.
    """
    y = np.asarray(y, dtype=float)
    x = np.clip(y, 0.0, 1.0)
    if budget < 0:
        raise InvalidArgument("budget must be nonnegative")
    excess = x.sum() - budget
    if excess <= 0:
        return x
    mu = 0.0
    for _ in range(max_iter):
        active = np.count_nonzero(y > mu)
        if active == 0:
            break
        mu += excess / active
        excess = np.clip(y - mu, 0.0, 1.0).sum() - budget
        if excess <= tol:
            break
    return np.clip(y - mu, 0.0, 1.0)


def project_budget_batch(y: np.ndarray, budgets, tol: float = 1e-9, max_iter: int = 10_000):
    """``project_budget_array`` applied independently to every ``y[b]``.

    Rows already within budget only need the clip, so they skip the search.
    """
    y = np.asarray(y)
    budgets = np.asarray(budgets, dtype=float)
    if np.any(budgets < 0):
        raise InvalidArgument("budget must be nonnegative")
    out = np.clip(y, 0.0, 1.0)
    over = out.reshape(len(y), -1).sum(axis=1, dtype=float) > budgets
    for b in np.flatnonzero(over):
        out[b] = project_budget_array(y[b], budgets[b], tol, max_iter)
    return out


def project_budget(mask: PerturbationMask, budget: float) -> PerturbationMask:
    return PerturbationMask(project_budget_array(mask.matrix, budget), mask.mode)


# ---------------------------------------------------------------- relaxation


def ensure_no_del(m: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Scale deletion weights so every clause keeps a soft edge-sum >= 1.

    Works on (..., 2n, m) stacks.
    """
    k = a.sum(axis=-2, keepdims=True)
    s = m.sum(axis=-2, keepdims=True)
    cap = np.maximum(k - 1.0, 0.0)
    scale = np.where(s > cap, cap / np.where(s > 0, s, 1.0), 1.0)
    return m * scale


def enforce_constraints(
    m: np.ndarray,
    mode: Mode,
    adjacency: np.ndarray,
    editable: np.ndarray | None = None,
) -> np.ndarray:
    """Mode-specific support constraints applied after each budget projection."""
    mode = Mode(mode)
    if mode is Mode.SAT:
        if editable is None:
            raise InvalidArgument("SAT mode needs the editable-entry mask")
        return m * editable
    if mode is Mode.DEL:
        return ensure_no_del(m * adjacency, adjacency)
    return m


def apply_relaxed(
    adjacency: BipartiteAdjacency,
    mask: PerturbationMask,
    protection: ProtectionMask | None = None,
    label: bool | None = None,
) -> np.ndarray:
    """Soft perturbed adjacency for the mask's mode.

    SAT: soft flip of editable entries.  DEL: soft deletion of existing edges
    with every clause keeping edge-sum >= 1.  ADC: mask columns appended.
    """
    mode = mask.mode
    if label is not None and bool(label) != mode.label:
        raise InvalidArgument(f"mode {mode.value} does not apply to label {label}")
    a = adjacency.matrix
    m = mask.matrix
    if mode is Mode.ADC:
        if m.shape[0] != a.shape[0]:
            raise InvalidArgument("ADC mask must have 2n rows")
        return np.concatenate([a, m], axis=1)
    if m.shape != a.shape:
        raise InvalidArgument(f"mask shape {m.shape} does not match adjacency {a.shape}")
    if mode is Mode.SAT:
        if protection is None:
            raise InvalidArgument("SAT mode requires a protection mask")
        m = enforce_constraints(m, mode, a, sat_editable(adjacency, protection))
        return a + (1.0 - 2.0 * a) * m
    m = enforce_constraints(m, mode, a)
    return a - m


def build_adc_extension(
    adjacency: BipartiteAdjacency,
    clause_fraction: float,
    satisfiable: bool | None = None,
) -> tuple[int, float]:
    """Number of appended clauses and the literal budget for ADC.

    ``satisfiable`` may be passed when the label is already known; otherwise
    the exact solver decides it.
    """
    if satisfiable is None:
        from .sat_oracle import is_satisfiable

        satisfiable = is_satisfiable(adjacency.to_formula())
    if satisfiable:
        raise InvalidArgument("ADC applies to unsatisfiable formulas only")
    m = adjacency.num_clauses
    if m == 0:
        raise InvalidArgument("formula has no clauses")
    extra = int(math.ceil(clause_fraction * m - 1e-12))
    mean_literals = adjacency.matrix.sum() / m
    return extra, float(mean_literals * extra)


# ---------------------------------------------------------------- sampling


def sharpen(m: np.ndarray, temperature: float) -> np.ndarray:
    """Tempered Bernoulli probabilities: logit(p) = temperature * logit(m).

    Keeps 0 -> 0, 1/2 -> 1/2, 1 -> 1 and pushes other weights towards {0, 1}.
    """
    m = np.clip(m, 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        a = m**temperature
        b = (1.0 - m) ** temperature
        p = a / (a + b)
    return np.where(m <= 0, 0.0, np.where(m >= 1, 1.0, p))


def _top_entries(weights: np.ndarray, chosen: np.ndarray, k: int) -> np.ndarray:
    """Keep the k highest-weight entries of a boolean selection (ties: lower flat index)."""
    if chosen.sum() <= k:
        return chosen
    flat = np.flatnonzero(chosen)
    order = np.lexsort((flat, -weights.ravel()[flat]))
    keep = np.zeros(chosen.size, dtype=bool)
    keep[flat[order[:k]]] = True
    return keep.reshape(chosen.shape)


def _resolve_polarity_conflicts(out: np.ndarray, flips: np.ndarray, weight: np.ndarray, n: int):
    """Undo added literals that put both polarities of a variable in a clause.

    An added literal clashing with an unflipped original edge is reverted;
    two clashing additions keep the heavier one (ties drop the negation).
    """
    pos, neg = out[:n] > 0.5, out[n:] > 0.5
    clash = pos & neg
    if not clash.any():
        return out, flips
    out = out.copy()
    flips = flips.copy()
    for i, j in zip(*np.nonzero(clash)):
        fp, fn = flips[i, j], flips[n + i, j]
        if fp and fn:
            drop = i if weight[i, j] < weight[n + i, j] else n + i
        elif fp:
            drop = i
        else:
            drop = n + i
        out[drop, j] = 0.0
        flips[drop, j] = False
    return out, flips


def repair_flips(
    flips: np.ndarray,
    weight: np.ndarray,
    mode: Mode,
    adjacency: BipartiteAdjacency,
    budget: int,
    editable: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Turn a raw boolean flip pattern into an admissible one.

    Returns the discrete perturbed adjacency (with appended ADC clauses, empty
    ones dropped) and the flips that were kept.
    """
    mode = Mode(mode)
    a = adjacency.matrix
    n = adjacency.num_vars
    flips = np.asarray(flips, dtype=bool)
    if mode is Mode.SAT:
        flips = flips & (editable > 0.5)
        flips = _top_entries(weight, flips, budget)
        out = np.where(flips, 1.0 - a, a)
        return _resolve_polarity_conflicts(out, flips, weight, n)
    if mode is Mode.DEL:
        flips = flips & (a > 0.5)
        flips = _top_entries(weight, flips, budget)
        out = a - flips
        emptied = np.flatnonzero((out.sum(axis=0) < 0.5) & (a.sum(axis=0) > 0.5))
        if emptied.size:
            flips = flips.copy()
            out = out.copy()
            for j in emptied:
                rows = np.flatnonzero(flips[:, j])
                r = rows[np.lexsort((rows, weight[rows, j]))[0]]
                flips[r, j] = False
                out[r, j] = 1.0
        return out, flips
    flips = _top_entries(weight, flips, budget)
    block = flips.astype(float)
    block, flips = _resolve_polarity_conflicts(block, flips, weight, n)
    nonempty = block.sum(axis=0) > 0.5
    return np.concatenate([a, block[:, nonempty]], axis=1), flips


@dataclass
class DiscreteSample:
    formula: CnfFormula
    adjacency: np.ndarray
    flips: int
    loss: float


def sample_discrete(
    mask: PerturbationMask,
    adjacency: BipartiteAdjacency,
    protection: ProtectionMask | None,
    loss_fn: Callable[[Sequence[np.ndarray]], Sequence[float]],
    num_samples: int,
    temperature: float,
    rng: np.random.Generator,
    budget: int,
    template: CnfFormula | None = None,
) -> DiscreteSample:
    """Discretize a relaxed mask and keep the realization with the largest loss.

    One deterministic candidate flips the ``budget`` largest mask entries;
    ``num_samples - 1`` more are Bernoulli draws from the sharpened mask.
    Each candidate is repaired to be admissible before scoring.
    ``loss_fn`` receives the list of discrete adjacencies and returns losses.
    """
    mode = mask.mode
    m = np.clip(mask.matrix, 0.0, 1.0)
    editable = sat_editable(adjacency, protection) if mode is Mode.SAT else None
    if mode is Mode.SAT and protection is None:
        raise InvalidArgument("SAT mode requires a protection mask")

    candidates = []
    top = _top_entries(m, m > 0, budget)
    candidates.append(repair_flips(top, m, mode, adjacency, budget, editable))
    p = sharpen(m, temperature)
    for _ in range(max(num_samples - 1, 0)):
        draw = rng.random(m.shape) < p
        candidates.append(repair_flips(draw, m, mode, adjacency, budget, editable))

    losses = np.asarray(loss_fn([c[0] for c in candidates]), dtype=float)
    best = int(np.argmax(losses))
    out, flips = candidates[best]
    formula = matrix_to_formula(out, adjacency.num_vars, template)
    if mode is Mode.ADC:
        formula = formula.drop_empty()
    return DiscreteSample(formula, out, int(flips.sum()), float(losses[best]))


# ---------------------------------------------------------------- random baseline


def random_flips(
    mode: Mode,
    adjacency: BipartiteAdjacency,
    budget: int,
    rng: np.random.Generator,
    editable: np.ndarray | None = None,
    extra_clauses: int = 0,
) -> np.ndarray:
    """Uniformly random admissible flip pattern using the full budget when possible.

    Candidates are visited in random order and accepted while they keep the
    perturbation admissible, so exactly ``budget`` flips are returned whenever
    that many admissible entries exist.
    """
    mode = Mode(mode)
    a = adjacency.matrix
    n = adjacency.num_vars
    if mode is Mode.ADC:
        shape = (2 * n, extra_clauses)
        flips = np.zeros(shape, dtype=bool)
        if extra_clauses == 0:
            return flips
        taken = 0
        for idx in rng.permutation(flips.size):
            if taken >= budget:
                break
            r, j = divmod(int(idx), extra_clauses)
            other = r + n if r < n else r - n
            if flips[other, j]:
                continue
            flips[r, j] = True
            taken += 1
        return flips

    flips = np.zeros(a.shape, dtype=bool)
    if mode is Mode.DEL:
        remaining = a.sum(axis=0)
        cand = np.flatnonzero(a.ravel() > 0.5)
        taken = 0
        for idx in rng.permutation(cand):
            if taken >= budget:
                break
            r, j = divmod(int(idx), a.shape[1])
            if remaining[j] <= 1:
                continue
            flips[r, j] = True
            remaining[j] -= 1
            taken += 1
        return flips

    out = a > 0.5
    cand = np.flatnonzero(editable.ravel() > 0.5)
    taken = 0
    for idx in rng.permutation(cand):
        if taken >= budget:
            break
        r, j = divmod(int(idx), a.shape[1])
        if not out[r, j]:
            other = r + n if r < n else r - n
            if out[other, j]:
                continue
        out[r, j] = not out[r, j]
        flips[r, j] = True
        taken += 1
    return flips


def apply_flips(mode: Mode, adjacency: BipartiteAdjacency, flips: np.ndarray) -> np.ndarray:
    """Discrete adjacency after an admissible flip pattern (ADC drops empty clauses)."""
    a = adjacency.matrix
    if Mode(mode) is Mode.ADC:
        block = flips.astype(float)
        return np.concatenate([a, block[:, block.sum(axis=0) > 0.5]], axis=1)
    return np.where(flips, 1.0 - a, a)


# ---------------------------------------------------------------- certificates


def certify(
    original: CnfFormula,
    perturbed: CnfFormula,
    mode: Mode,
    witness: Assignment | None = None,
) -> bool:
    """Cheap structural check that ``perturbed`` lies in the mode's sound space."""
    from .instances import evaluate_assignment

    mode = Mode(mode)
    if perturbed.num_vars != original.num_vars:
        return False
    if mode is Mode.SAT:
        if witness is None:
            raise InvalidArgument("SAT certificate needs the witness")
        return all(c for c in perturbed.clauses) and evaluate_assignment(perturbed, witness)
    if mode is Mode.DEL:
        return perturbed.num_clauses == original.num_clauses and all(
            c and set(c) <= set(o) for c, o in zip(perturbed.clauses, original.clauses)
        )
    m = original.num_clauses
    return perturbed.clauses[:m] == original.clauses
