"""Exact (Held-Karp) and heuristic TSP solving, convex hulls and decision labels."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInput, InvalidArgument, ResourceExhausted
from .instances import TspInstance, Tour, tour_cost

HELD_KARP_MAX_N = 18


@dataclass(frozen=True)
class TspSolveResult:
    tour: Tour
    cost: float
    exact_flag: bool


def _popcounts(count: int) -> np.ndarray:
    masks = np.arange(count, dtype=np.int64)
    pc = np.zeros(count, dtype=np.int64)
    while masks.any():
        pc += masks & 1
        masks = masks >> 1
    return pc


def solve_exact(instance: TspInstance) -> TspSolveResult:
    """Globally optimal closed tour by Held-Karp, O(n^2 2^n).

    The tour starts at node 0 and is the lexicographically smallest among
    optimal orders (up to a 1e-10 relative cost tolerance).
    """
    n = instance.n
    if n > HELD_KARP_MAX_N:
        raise ResourceExhausted(f"Held-Karp limited to n <= {HELD_KARP_MAX_N}, got {n}")
    w = instance.weights
    if n <= 3:
        tour = Tour(range(n))
        return TspSolveResult(tour, tour_cost(instance, tour), True)

    k = n - 1
    full = (1 << k) - 1
    # f[S, j]: cheapest path 0 -> ... -> j+1 visiting exactly the nodes in S
    f = np.full((1 << k, k), np.inf)
    for j in range(k):
        f[1 << j, j] = w[0, j + 1]
    inner = w[1:, 1:]
    masks = np.arange(1 << k, dtype=np.int64)
    pc = _popcounts(1 << k)
    for size in range(2, k + 1):
        layer = masks[pc == size]
        for j in range(k):
            sel = layer[(layer >> j) & 1 == 1]
            prev = sel ^ (1 << j)
            f[sel, j] = (f[prev] + inner[:, j]).min(axis=1)

    best = float(np.min(f[full] + w[1:, 0]))
    tol = 1e-10 * max(1.0, abs(best))
    order = [0]
    visited = 0
    prefix = 0.0
    cur = 0
    for _ in range(k):
        remaining = full & ~visited
        for j in range(k):
            if not (remaining >> j) & 1:
                continue
            # rest of the tour from j back to 0 is f[remaining, j] reversed
            total = prefix + w[cur, j + 1] + f[remaining, j]
            if total <= best + tol:
                break
        else:  # pragma: no cover - DP guarantees a completion exists
            raise AssertionError("Held-Karp reconstruction failed")
        prefix += w[cur, j + 1]
        cur = j + 1
        visited |= 1 << j
        order.append(cur)
    tour = Tour(order)
    return TspSolveResult(tour, tour_cost(instance, tour), True)


def nearest_neighbor_tour(instance: TspInstance, start: int = 0) -> list[int]:
    w = instance.weights
    n = instance.n
    unvisited = set(range(n)) - {start}
    order = [start]
    while unvisited:
        cur = order[-1]
        nxt = min(unvisited, key=lambda j: (w[cur, j], j))
        order.append(nxt)
        unvisited.remove(nxt)
    return order


def two_opt(instance: TspInstance, order: list[int], tol: float = 1e-12) -> list[int]:
    """First-improvement 2-opt to a local optimum; keeps order[0] fixed."""
    w = instance.weights
    t = list(order)
    n = len(t)
    improved = True
    while improved:
        improved = False
        for i in range(n - 1):
            a, b = t[i], t[i + 1]
            for j in range(i + 2, n if i > 0 else n - 1):
                c, d = t[j], t[(j + 1) % n]
                if w[a, c] + w[b, d] - w[a, b] - w[c, d] < -tol:
                    t[i + 1 : j + 1] = reversed(t[i + 1 : j + 1])
                    improved = True
                    break
            if improved:
                break
    return t


def has_improving_two_exchange(instance: TspInstance, tour: Tour, tol: float = 1e-12) -> bool:
    w = instance.weights
    t = tour.order
    n = len(t)
    for i in range(n):
        for j in range(i + 2, n):
            if i == 0 and j == n - 1:
                continue
            a, b, c, d = t[i], t[i + 1], t[j], t[(j + 1) % n]
            if w[a, c] + w[b, d] - w[a, b] - w[c, d] < -tol:
                return True
    return False


def solve_heuristic(instance: TspInstance) -> TspSolveResult:
    """Nearest neighbour from node 0 followed by first-improvement 2-opt."""
    if instance.n < 3:
        raise InvalidArgument("heuristic needs at least 3 nodes")
    tour = Tour(two_opt(instance, nearest_neighbor_tour(instance)))
    return TspSolveResult(tour, tour_cost(instance, tour), False)


def _cross(o, a, b) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def convex_hull(points) -> list[int]:
    """Counter-clockwise hull indices (monotone chain), starting from the
    lexicographically smallest point.  Collinear boundary points are excluded."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 3:
        raise InvalidArgument("convex_hull needs at least 3 two-dimensional points")
    idx = sorted(range(len(pts)), key=lambda i: (pts[i, 0], pts[i, 1]))
    lower: list[int] = []
    for i in idx:
        while len(lower) >= 2 and _cross(pts[lower[-2]], pts[lower[-1]], pts[i]) <= 0:
            lower.pop()
        lower.append(i)
    upper: list[int] = []
    for i in reversed(idx):
        while len(upper) >= 2 and _cross(pts[upper[-2]], pts[upper[-1]], pts[i]) <= 0:
            upper.pop()
        upper.append(i)
    hull = lower[:-1] + upper[:-1]
    if len(hull) < 3:
        raise DegenerateInput("all points are collinear")
    return hull


def decision_label(instance: TspInstance, cost_query: float) -> bool | None:
    """Whether a tour of cost <= cost_query exists.

    Exact for n <= 18.  Above that only a heuristic tour is available, so the
    answer is True when it certifies the query and None (indeterminate) otherwise.
    """
    if instance.n <= HELD_KARP_MAX_N:
        return solve_exact(instance).cost <= cost_query
    if solve_heuristic(instance).cost <= cost_query:
        return True
    return None
