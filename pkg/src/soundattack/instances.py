"""Core SAT and TSP value types, tour costs and evaluation helpers.

Literals use the DIMACS convention: variable ``v`` (1-based) is the literal
``v`` and its negation ``-v``.  Assignments and adjacency rows are 0-based.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import InvalidArgument

ABS_TOL = 1e-9


@dataclass(frozen=True)
class CnfFormula:
    num_vars: int
    clauses: tuple[tuple[int, ...], ...]

    def __init__(self, num_vars: int, clauses: Iterable[Iterable[int]]):
        if num_vars < 1:
            raise InvalidArgument(f"num_vars must be positive, got {num_vars}")
        frozen = tuple(tuple(int(l) for l in c) for c in clauses)
        for j, clause in enumerate(frozen):
            seen = set()
            for lit in clause:
                var = abs(lit)
                if lit == 0 or var > num_vars:
                    raise InvalidArgument(f"clause {j}: literal {lit} out of range 1..{num_vars}")
                if var in seen:
                    raise InvalidArgument(f"clause {j}: variable {var} occurs twice")
                seen.add(var)
        object.__setattr__(self, "num_vars", int(num_vars))
        object.__setattr__(self, "clauses", frozen)

    @property
    def num_clauses(self) -> int:
        return len(self.clauses)

    @property
    def num_literals(self) -> int:
        return sum(len(c) for c in self.clauses)

    def drop_empty(self) -> "CnfFormula":
        return CnfFormula(self.num_vars, [c for c in self.clauses if c])

    def __str__(self) -> str:
        def lit(l: int) -> str:
            return f"¬{-l}" if l < 0 else str(l)

        return " ∧ ".join("(" + " ∨ ".join(lit(l) for l in c) + ")" for c in self.clauses)


@dataclass(frozen=True)
class Assignment:
    values: tuple[bool, ...]

    def __init__(self, values: Iterable[bool]):
        object.__setattr__(self, "values", tuple(bool(v) for v in values))

    def __len__(self) -> int:
        return len(self.values)

    def satisfies(self, lit: int) -> bool:
        return self.values[abs(lit) - 1] == (lit > 0)

    def literals(self) -> list[int]:
        """The witness as the list of true literals, one per variable."""
        return [i + 1 if v else -(i + 1) for i, v in enumerate(self.values)]


@dataclass(frozen=True)
class SatDecisionLabel:
    satisfiable: bool


def evaluate_assignment(formula: CnfFormula, assignment: Assignment) -> bool:
    """True iff every nonempty clause holds a satisfied literal; empty clauses count as true."""
    if len(assignment) != formula.num_vars:
        raise InvalidArgument(
            f"assignment has {len(assignment)} values for {formula.num_vars} variables"
        )
    vals = assignment.values
    for clause in formula.clauses:
        if clause and not any(vals[abs(l) - 1] == (l > 0) for l in clause):
            return False
    return True


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def pairwise_distances(coords: np.ndarray) -> np.ndarray:
    diff = coords[:, None, :] - coords[None, :, :]
    return np.sqrt((diff**2).sum(-1))


@dataclass(frozen=True, eq=False)
class TspInstance:
    """Symmetric TSP instance.  ``coords`` is None for pure weight-matrix instances."""

    weights: np.ndarray
    coords: np.ndarray | None = None
    metric_flag: bool = True

    def __post_init__(self):
        w = _frozen(self.weights)
        if w.ndim != 2 or w.shape[0] != w.shape[1] or w.shape[0] < 1:
            raise InvalidArgument(f"weights must be square, got shape {w.shape}")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise InvalidArgument("weights must be finite and nonnegative")
        if not np.array_equal(w, w.T):
            raise InvalidArgument("weights must be symmetric")
        if np.any(np.diag(w) != 0):
            raise InvalidArgument("weights must have a zero diagonal")
        object.__setattr__(self, "weights", w)
        if self.coords is not None:
            c = _frozen(self.coords)
            if c.shape != (w.shape[0], 2):
                raise InvalidArgument(f"coords shape {c.shape} does not match {w.shape[0]} nodes")
            if np.max(np.abs(pairwise_distances(c) - w)) > 1e-12:
                raise InvalidArgument("weights disagree with coordinate distances")
            object.__setattr__(self, "coords", c)

    @classmethod
    def from_coords(cls, coords: Sequence[Sequence[float]] | np.ndarray) -> "TspInstance":
        c = np.asarray(coords, dtype=float)
        if c.ndim != 2 or c.shape[1] != 2:
            raise InvalidArgument(f"coords must have shape (n, 2), got {c.shape}")
        return cls(weights=pairwise_distances(c), coords=c, metric_flag=True)

    @classmethod
    def from_weights(cls, weights, metric_flag: bool = False) -> "TspInstance":
        return cls(weights=np.asarray(weights, dtype=float), coords=None, metric_flag=metric_flag)

    @property
    def n(self) -> int:
        return self.weights.shape[0]

    def satisfies_triangle_inequality(self, tol: float = ABS_TOL) -> bool:
        w = self.weights
        # w[i, k] <= w[i, j] + w[j, k] for all i, j, k
        via = w[:, :, None] + w[None, :, :]
        return bool(np.all(w[:, None, :] <= via + tol))

    def __eq__(self, other) -> bool:
        if not isinstance(other, TspInstance):
            return NotImplemented
        same_coords = (self.coords is None and other.coords is None) or (
            self.coords is not None
            and other.coords is not None
            and np.array_equal(self.coords, other.coords)
        )
        return (
            same_coords
            and np.array_equal(self.weights, other.weights)
            and self.metric_flag == other.metric_flag
        )


@dataclass(frozen=True)
class Tour:
    order: tuple[int, ...]

    def __init__(self, order: Iterable[int]):
        o = tuple(int(i) for i in order)
        if sorted(o) != list(range(len(o))):
            raise InvalidArgument(f"tour is not a permutation of 0..{len(o) - 1}: {o}")
        object.__setattr__(self, "order", o)

    def __len__(self) -> int:
        return len(self.order)

    def edges(self) -> list[tuple[int, int]]:
        o = self.order
        return [(o[i], o[(i + 1) % len(o)]) for i in range(len(o))]

    def edge_matrix(self) -> np.ndarray:
        """Symmetric 0/1 indicator of the tour's edges."""
        n = len(self.order)
        e = np.zeros((n, n))
        for a, b in self.edges():
            e[a, b] = e[b, a] = 1.0
        return e

    def canonical(self) -> "Tour":
        """Rotation starting at node 0, direction with the smaller second element."""
        o = self.order
        k = o.index(0)
        rot = o[k:] + o[:k]
        rev = (rot[0],) + tuple(reversed(rot[1:]))
        return Tour(min(rot, rev))


@dataclass(frozen=True)
class TspDecisionInstance:
    instance: TspInstance
    cost_query: float
    label: bool

    def __post_init__(self):
        if not self.cost_query >= 0:
            raise InvalidArgument(f"cost query must be nonnegative, got {self.cost_query}")


def tour_cost(instance: TspInstance, tour: Tour) -> float:
    if len(tour) != instance.n:
        raise InvalidArgument(f"tour has {len(tour)} nodes, instance has {instance.n}")
    o = np.asarray(tour.order)
    return float(instance.weights[o, np.roll(o, -1)].sum())


def optimality_gap(predicted: Tour, optimal: Tour, instance: TspInstance) -> float:
    c_opt = tour_cost(instance, optimal)
    if c_opt <= 0:
        raise InvalidArgument("optimal tour has zero cost")
    return abs(tour_cost(instance, predicted) - c_opt) / c_opt


def literal_row(lit: int, num_vars: int) -> int:
    """Row of ``lit`` in the 2n-row literal/clause adjacency."""
    return lit - 1 if lit > 0 else num_vars + (-lit) - 1


def row_literal(row: int, num_vars: int) -> int:
    return row + 1 if row < num_vars else -(row - num_vars + 1)
