"""Sound TSP node insertion.

A new node ``Z`` spliced between the tour neighbours ``P`` and ``Q`` keeps
the tour optimal when the detour ``w(P,Z) + w(Q,Z) - w(P,Q)`` is strictly
smaller than the detour through any other pair of nodes.  Several nodes are
inserted one after another; each later node sees the earlier valid nodes as
ordinary tour nodes.

For Euclidean instances a node is a point in the unit square.  For pure
weight-matrix instances a node is its vector of weights to the current
nodes (the original ones followed by earlier valid adversarial nodes).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateInput, InitializationFailure, InvalidArgument
from .instances import TspDecisionInstance, TspInstance, Tour
from .tsp_oracle import convex_hull

MARGIN = 1e-9
MAX_REJECTIONS = 10_000


def is_euclidean(instance: TspInstance) -> bool:
    return instance.coords is not None


def node_distances(instance: TspInstance, z) -> np.ndarray:
    """Weights from the new node to every node of ``instance``."""
    z = np.asarray(z, dtype=float)
    if is_euclidean(instance):
        if z.shape != (2,):
            raise InvalidArgument(f"expected a 2-d point, got shape {z.shape}")
        return np.sqrt(((instance.coords - z) ** 2).sum(axis=1))
    if z.shape != (instance.n,):
        raise InvalidArgument(f"expected {instance.n} weights, got shape {z.shape}")
    return z


def detour_cost(instance: TspInstance, a: int, b: int, z) -> float:
    if a == b:
        raise InvalidArgument("detour needs two distinct nodes")
    dz = node_distances(instance, z)
    return float(dz[a] + dz[b] - instance.weights[a, b])


def detour_matrix(instance: TspInstance, z) -> np.ndarray:
    dz = node_distances(instance, z)
    return dz[:, None] + dz[None, :] - instance.weights


def augment(instance: TspInstance, z) -> TspInstance:
    """Instance with the node ``z`` appended as index ``n``."""
    if is_euclidean(instance):
        return TspInstance.from_coords(np.vstack([instance.coords, np.asarray(z, float)]))
    dz = node_distances(instance, z)
    n = instance.n
    w = np.zeros((n + 1, n + 1))
    w[:n, :n] = instance.weights
    w[n, :n] = w[:n, n] = dz
    return TspInstance.from_weights(w, metric_flag=False)


def tour_neighbors(tour: Tour, p: int, q: int) -> bool:
    o = tour.order
    n = len(o)
    i = o.index(p)
    return o[(i + 1) % n] == q or o[i - 1] == q


def splice(tour: Tour, p: int, q: int, new: int) -> Tour:
    """Insert node ``new`` between the tour neighbours ``p`` and ``q``."""
    o = list(tour.order)
    n = len(o)
    i = o.index(p)
    if o[(i + 1) % n] == q:
        o.insert(i + 1, new)
    elif o[i - 1] == q:
        o.insert(i, new)
    else:
        raise InvalidArgument(f"({p}, {q}) is not a tour segment")
    return Tour(o)


def best_segment(instance: TspInstance, tour: Tour, z) -> tuple[int, int]:
    """Tour segment with the smallest detour (first in tour order on ties)."""
    d = detour_matrix(instance, z)
    edges = tour.edges()
    costs = [d[a, b] for a, b in edges]
    return edges[int(np.argmin(costs))]


def hull_exempt_pairs(instance: TspInstance, z) -> np.ndarray:
    """Boolean (n, n) matrix of node pairs that cannot be the neighbours of ``z``
    in an optimal tour of the augmented Euclidean instance.

    Optimal Euclidean tours visit the convex hull vertices in hull order.  A
    pair of hull vertices is exempt when both hull arcs between them contain
    another hull vertex other than ``z``, so the two cannot sit on either side
    of ``z`` in such a tour.
    """
    n = instance.n
    exempt = np.zeros((n, n), dtype=bool)
    pts = np.vstack([instance.coords, np.asarray(z, float)])
    try:
        hull = convex_hull(pts)
    except DegenerateInput:
        return exempt
    pos = {v: i for i, v in enumerate(hull)}
    is_real = np.array([v != n for v in hull])
    for a in hull:
        for b in hull:
            if a >= b or a == n or b == n:
                continue
            i, j = sorted((pos[a], pos[b]))
            inner = is_real[i + 1 : j]
            outer = np.concatenate([is_real[j + 1 :], is_real[:i]])
            if inner.any() and outer.any():
                exempt[a, b] = exempt[b, a] = True
    return exempt


def constraint_margin(
    instance: TspInstance,
    z,
    segment: tuple[int, int],
    hull_exempt: bool = False,
) -> tuple[float, tuple[int, int] | None]:
    """Smallest competing detour minus the host detour, and the competing pair.

    Positive means the host segment is the strict minimizer.
    """
    p, q = segment
    d = detour_matrix(instance, z)
    n = instance.n
    allowed = ~np.eye(n, dtype=bool)
    allowed[p, q] = allowed[q, p] = False
    if hull_exempt and is_euclidean(instance) and instance.metric_flag:
        allowed &= ~hull_exempt_pairs(instance, z)
    upper = np.triu(allowed)
    if not upper.any():
        return np.inf, None
    masked = np.where(upper, d, np.inf)
    flat = int(np.argmin(masked))
    a, b = divmod(flat, n)
    return float(masked[a, b] - d[p, q]), (a, b)


def check_insertion_constraint(
    instance: TspInstance,
    tour: Tour,
    z,
    segment: tuple[int, int],
    prior: "AdversarialNodes | None" = None,
    hull_exempt: bool = False,
) -> bool:
    """Whether splicing ``z`` into ``segment`` provably gives an optimal tour.

    ``prior`` nodes (in order) that are valid are spliced first; ``segment``
    then refers to node indices of that augmented instance.  Ties reject.
    """
    if prior is not None:
        instance, tour = apply_nodes(instance, tour, prior)
    p, q = segment
    if not tour_neighbors(tour, p, q):
        raise InvalidArgument(f"({p}, {q}) is not a tour segment")
    if np.min(node_distances(instance, z)) <= 0 and is_euclidean(instance):
        return False  # coincides with an existing node
    margin, _ = constraint_margin(instance, z, segment, hull_exempt)
    return margin > MARGIN


@dataclass
class AdversarialNodes:
    points: list[np.ndarray] = field(default_factory=list)
    hosts: list[tuple[int, int] | None] = field(default_factory=list)
    valid: list[bool] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.points)

    @property
    def num_valid(self) -> int:
        return sum(self.valid)


def apply_nodes(instance: TspInstance, tour: Tour, nodes: AdversarialNodes):
    """Augmented instance and tour after splicing the valid nodes in order."""
    for z, host, ok in zip(nodes.points, nodes.hosts, nodes.valid):
        if not ok:
            continue
        new = instance.n
        instance = augment(instance, z)
        tour = splice(tour, host[0], host[1], new)
    return instance, tour


def update_solution(tour: Tour, nodes: AdversarialNodes) -> Tour:
    """The tour with every valid node spliced into its host segment.

    Hosts refer to the tour as it stands when the node is inserted, so later
    nodes may sit on segments created by earlier ones.  Valid node ``k`` gets
    index ``n + (number of valid nodes before k)``.
    """
    n = len(tour)
    count = 0
    for host, ok in zip(nodes.hosts, nodes.valid):
        if not ok:
            continue
        tour = splice(tour, host[0], host[1], n + count)
        count += 1
    return tour


def insert_sequential(
    instance: TspInstance,
    tour: Tour,
    points,
    hull_exempt: bool = False,
) -> tuple[AdversarialNodes, TspInstance, Tour]:
    """Check each point in order against the tour grown by the earlier valid ones."""
    nodes = AdversarialNodes()
    cur_inst, cur_tour = instance, tour
    for z in points:
        z = np.asarray(z, dtype=float)
        host = best_segment(cur_inst, cur_tour, z)
        ok = check_insertion_constraint(cur_inst, cur_tour, z, host, hull_exempt=hull_exempt)
        nodes.points.append(z)
        nodes.hosts.append(host if ok else None)
        nodes.valid.append(ok)
        if ok:
            new = cur_inst.n
            cur_inst = augment(cur_inst, z)
            cur_tour = splice(cur_tour, host[0], host[1], new)
    return nodes, cur_inst, cur_tour


def _distance_grad(instance: TspInstance, z: np.ndarray, node: int) -> np.ndarray:
    if is_euclidean(instance):
        diff = z - instance.coords[node]
        norm = np.sqrt((diff**2).sum())
        return diff / norm if norm > 0 else np.zeros(2)
    g = np.zeros_like(z)
    g[node] = 1.0
    return g


def violation_objective(instance, z, segment, hull_exempt: bool = False) -> float:
    """Host detour minus the smallest competing detour (negative when valid)."""
    margin, _ = constraint_margin(instance, z, segment, hull_exempt)
    return -margin


def violation_gradient(instance, z, segment, hull_exempt: bool = False) -> np.ndarray:
    """Gradient of ``violation_objective`` at the current minimizing competitor."""
    z = np.asarray(z, dtype=float)
    p, q = segment
    _, pair = constraint_margin(instance, z, segment, hull_exempt)
    g = _distance_grad(instance, z, p) + _distance_grad(instance, z, q)
    if pair is not None:
        g = g - _distance_grad(instance, z, pair[0]) - _distance_grad(instance, z, pair[1])
    return g


def clamp_node(instance: TspInstance, z: np.ndarray) -> np.ndarray:
    if is_euclidean(instance):
        return np.clip(z, 0.0, 1.0)
    return np.maximum(z, 0.0)


def restore_constraint(
    instance: TspInstance,
    tour: Tour,
    z,
    segment: tuple[int, int],
    eta: float = 0.002,
    max_steps: int = 3,
    hull_exempt: bool = False,
) -> np.ndarray:
    """A few gradient steps pushing ``z`` back inside its insertion region.

    Stops as soon as the constraint holds; may return a still-violating point.
    """
    z = np.asarray(z, dtype=float).copy()
    for _ in range(max_steps):
        if check_insertion_constraint(instance, tour, z, segment, hull_exempt=hull_exempt):
            break
        z = clamp_node(instance, z - eta * violation_gradient(instance, z, segment, hull_exempt))
    return z


def random_node(instance: TspInstance, rng: np.random.Generator) -> np.ndarray:
    if is_euclidean(instance):
        return rng.random(2)
    return rng.random(instance.n) * float(instance.weights.max())


def initialize_nodes(
    instance: TspInstance,
    tour: Tour,
    count: int,
    rng: np.random.Generator,
    hull_exempt: bool = False,
    max_rejections: int = MAX_REJECTIONS,
) -> AdversarialNodes:
    """Rejection-sample ``count`` valid nodes, each checked against the earlier ones."""
    if count < 0:
        raise InvalidArgument("count must be nonnegative")
    nodes = AdversarialNodes()
    cur_inst, cur_tour = instance, tour
    for k in range(count):
        for _ in range(max_rejections + 1):
            z = random_node(cur_inst, rng)
            host = best_segment(cur_inst, cur_tour, z)
            if check_insertion_constraint(cur_inst, cur_tour, z, host, hull_exempt=hull_exempt):
                break
        else:
            raise InitializationFailure(
                f"no valid position for node {k} after {max_rejections} rejections"
            )
        nodes.points.append(z)
        nodes.hosts.append(host)
        nodes.valid.append(True)
        new = cur_inst.n
        cur_inst = augment(cur_inst, z)
        cur_tour = splice(cur_tour, host[0], host[1], new)
    return nodes


def update_cost_query(
    old: TspDecisionInstance,
    new_tour_cost: float,
    d: float = 0.02,
    instance: TspInstance | None = None,
) -> TspDecisionInstance:
    """Decision query for the perturbed instance: cost*(1+d) if the label is true, else cost*(1-d)."""
    if not new_tour_cost > 0:
        raise InvalidArgument(f"tour cost must be positive, got {new_tour_cost}")
    c0 = new_tour_cost * (1.0 + d) if old.label else new_tour_cost * (1.0 - d)
    return TspDecisionInstance(old.instance if instance is None else instance, c0, old.label)
