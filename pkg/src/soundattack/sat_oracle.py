"""Exact DPLL solver for small CNF formulas, plus UNSAT core shrinking."""

from __future__ import annotations

import time
from collections import Counter
from dataclasses import dataclass, field

from .errors import InvalidArgument, ResourceExhausted
from .instances import Assignment, CnfFormula, evaluate_assignment


@dataclass
class SolverStats:
    decisions: int = 0
    propagations: int = 0


@dataclass(frozen=True)
class SatResult:
    satisfiable: bool
    witness: Assignment | None
    stats: SolverStats = field(default_factory=SolverStats)
    elapsed: float = 0.0  # seconds


class _Budget(Exception):
    pass


class DpllSolver:
    """DPLL with unit propagation and pure-literal elimination.

    Branches on the most frequent unassigned variable in the remaining
    clauses (lowest index on ties), trying its more frequent polarity first.
    One instance per worker; ``solve`` resets the counters.
    """

    def __init__(self, decision_limit: int | None = None):
        self.decision_limit = decision_limit
        self.stats = SolverStats()

    def solve(self, formula: CnfFormula) -> SatResult:
        self.stats = SolverStats()
        start = time.perf_counter()
        # empty clauses are dropped (treated as true)
        clauses = [c for c in formula.clauses if c]
        try:
            model = self._dpll(clauses, {})
        except _Budget:
            raise ResourceExhausted(
                f"decision limit {self.decision_limit} exceeded"
            ) from None
        elapsed = time.perf_counter() - start
        if model is None:
            return SatResult(False, None, self.stats, elapsed)
        witness = Assignment(model.get(v, False) for v in range(1, formula.num_vars + 1))
        if not evaluate_assignment(formula, witness):
            raise AssertionError("internal error: DPLL witness does not satisfy formula")
        return SatResult(True, witness, self.stats, elapsed)

    def _dpll(self, clauses: list[tuple[int, ...]], model: dict[int, bool]):
        clauses, model = self._simplify_fixpoint(clauses, model)
        if clauses is None:
            return None
        if not clauses:
            return model
        if self.decision_limit is not None and self.stats.decisions >= self.decision_limit:
            raise _Budget
        counts = Counter(l for c in clauses for l in c)
        var_count = Counter()
        for lit, k in counts.items():
            var_count[abs(lit)] += k
        var = min(var_count, key=lambda v: (-var_count[v], v))
        first = var if counts[var] >= counts[-var] else -var
        for lit in (first, -first):
            self.stats.decisions += 1
            result = self._dpll(_assign(clauses, lit), {**model, abs(lit): lit > 0})
            if result is not None:
                return result
        return None

    def _simplify_fixpoint(self, clauses, model):
        while True:
            unit = next((c[0] for c in clauses if len(c) == 1), None)
            if unit is not None:
                self.stats.propagations += 1
                model = {**model, abs(unit): unit > 0}
                clauses = _assign(clauses, unit)
                if any(len(c) == 0 for c in clauses):
                    return None, model
                continue
            lits = {l for c in clauses for l in c}
            pure = [l for l in lits if -l not in lits]
            if not pure:
                return clauses, model
            for lit in sorted(pure, key=abs):
                model = {**model, abs(lit): lit > 0}
                clauses = _assign(clauses, lit)
            # pure assignments never empty a clause


def _assign(clauses, lit):
    out = []
    for c in clauses:
        if lit in c:
            continue
        if -lit in c:
            out.append(tuple(l for l in c if l != -lit))
        else:
            out.append(c)
    return out


def solve(formula: CnfFormula, budget: int | None = None) -> SatResult:
    """Decide satisfiability exactly.  ``budget`` caps the number of decisions."""
    return DpllSolver(budget).solve(formula)


def is_satisfiable(formula: CnfFormula) -> bool:
    return solve(formula).satisfiable


def find_unsat_core_clauses(formula: CnfFormula) -> set[int]:
    """Indices of an UNSAT subset of clauses, by one deletion pass.

    Each clause is tentatively dropped and kept out if the rest stays UNSAT.
    The result is not necessarily minimal.
    """
    if solve(formula).satisfiable:
        raise InvalidArgument("formula is satisfiable; no UNSAT core exists")
    keep = list(range(formula.num_clauses))
    for j in range(formula.num_clauses):
        trial = [i for i in keep if i != j]
        sub = CnfFormula(formula.num_vars, [formula.clauses[i] for i in trial])
        if not solve(sub).satisfiable:
            keep = trial
    return set(keep)
