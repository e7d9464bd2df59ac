"""Small differentiable surrogate solvers built on the autodiff tape.

* NeuroSAT-lite: literal/clause message passing over a (soft) adjacency.
* DTSP-lite: node/edge message passing over the complete graph, decision output.
* ConvTSP-lite: same backbone, per-edge probability map.

Every update is a linear map followed by layer norm and ReLU, with weights
shared across rounds.  SAT messages are summed over neighbours and scaled by
``MESSAGE_SCALE``; TSP messages are averaged.  The SAT model runs on padded
batches: instance ``b`` with ``n_b`` variables puts the positive literal of
variable ``i`` in row ``i`` and its negation in row ``N + i`` where ``N`` is
the batch's largest variable count, so the literal-flip message is a roll by
``N``.  Padded rows and columns are inert.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import InvalidArgument
from .instances import Tour

ROLES = ("sat", "dtsp", "convtsp")
PROB_EPS = 1e-7
MESSAGE_SCALE = 0.3


@dataclass
class SurrogateParams:
    role: str
    width: int
    rounds: int
    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.role not in ROLES:
            raise InvalidArgument(f"unknown role {self.role!r}")
        if self.width < 1 or self.rounds < 0:
            raise InvalidArgument("width must be positive and rounds nonnegative")

    def copy(self) -> "SurrogateParams":
        return SurrogateParams(
            self.role, self.width, self.rounds, {k: v.copy() for k, v in self.tensors.items()}
        )

    def astype(self, dtype) -> "SurrogateParams":
        return SurrogateParams(
            self.role, self.width, self.rounds, {k: v.astype(dtype) for k, v in self.tensors.items()}
        )

    def names(self) -> list[str]:
        return sorted(self.tensors)

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.tensors.values())

    def equals(self, other: "SurrogateParams") -> bool:
        return (
            self.role == other.role
            and self.width == other.width
            and self.rounds == other.rounds
            and self.names() == other.names()
            and all(np.array_equal(self.tensors[k], other.tensors[k]) for k in self.names())
        )


def _shapes(role: str, d: int) -> dict[str, tuple[int, ...]]:
    if role == "sat":
        return {
            "l_init": (d,),
            "c_init": (d,),
            "c_w": (2 * d, d),
            "c_b": (d,),
            "l_w": (3 * d, d),
            "l_b": (d,),
            "vote_w": (d, 1),
            "vote_b": (1,),
        }
    shapes = {
        "e_in": (3, d),  # weight, cost query / n, constant
        "v_init": (d,),
        "v_w": (2 * d, d),
        "v_b": (d,),
        "e_w": (2 * d, d),
        "e_b": (d,),
        "out_w": (d, 1),
        "out_b": (1,),
    }
    if role == "convtsp":
        shapes["v_in"] = (2, d)
    return shapes


def init_params(role: str, width: int = 16, rounds: int = 8, seed: int = 0) -> SurrogateParams:
    """Uniform init in [-1/sqrt(fan_in), 1/sqrt(fan_in)], seeded."""
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in _shapes(role, width).items():
        fan_in = shape[0] if len(shape) == 2 else width
        bound = 1.0 / np.sqrt(fan_in)
        tensors[name] = rng.uniform(-bound, bound, size=shape)
    return SurrogateParams(role, width, rounds, tensors)


def bind(params: SurrogateParams, tape: ad.Tape) -> dict[str, ad.Tensor]:
    """Parameter leaves on ``tape``; pass them as ``leaves=`` to get parameter gradients."""
    return {k: tape.leaf(params.tensors[k]) for k in params.names()}


def _weights(params: SurrogateParams, leaves):
    return params.tensors if leaves is None else leaves


# ---------------------------------------------------------------- SAT


@dataclass
class SatBatch:
    """Padded stack of literal-clause adjacencies."""

    adjacency: np.ndarray  # (B, 2N, M)
    literal_mask: np.ndarray  # (B, 2N)
    num_vars: np.ndarray  # (B,)
    num_clauses: np.ndarray  # (B,)

    @property
    def max_vars(self) -> int:
        return self.adjacency.shape[1] // 2


def pad_adjacency(a: np.ndarray, n: int, max_vars: int, max_clauses: int) -> np.ndarray:
    out = np.zeros((2 * max_vars, max_clauses))
    m = a.shape[1]
    out[:n, :m] = a[:n]
    out[max_vars : max_vars + n, :m] = a[n:]
    return out


def unpad_adjacency(p: np.ndarray, n: int, m: int) -> np.ndarray:
    half = p.shape[0] // 2
    return np.concatenate([p[:n, :m], p[half : half + n, :m]], axis=0)


def make_sat_batch(
    matrices: list[np.ndarray],
    num_vars: list[int],
    max_vars: int | None = None,
    max_clauses: int | None = None,
) -> SatBatch:
    if len(matrices) != len(num_vars) or not matrices:
        raise InvalidArgument("need a nonempty list of adjacencies with matching variable counts")
    for a, n in zip(matrices, num_vars):
        if a.ndim != 2 or a.shape[0] != 2 * n:
            raise InvalidArgument(f"adjacency shape {a.shape} does not match {n} variables")
    big_n = max(num_vars) if max_vars is None else max_vars
    big_m = max(a.shape[1] for a in matrices) if max_clauses is None else max_clauses
    adj = np.stack([pad_adjacency(a, n, big_n, big_m) for a, n in zip(matrices, num_vars)])
    lit = np.zeros((len(matrices), 2 * big_n))
    for b, n in enumerate(num_vars):
        lit[b, :n] = 1.0
        lit[b, big_n : big_n + n] = 1.0
    return SatBatch(
        adj, lit, np.asarray(num_vars), np.asarray([a.shape[1] for a in matrices])
    )


def _update(p, prefix: str, parts):
    x = ad.linear(parts, p[prefix + "_w"], p[prefix + "_b"])
    return ad.layer_norm(x, relu=True)


def forward_sat_logits(params: SurrogateParams, adjacency, literal_mask: np.ndarray, leaves=None):
    """Logits of a padded batch.  ``adjacency`` may be a Tensor of shape (B, 2N, M).

    Messages are soft-adjacency-weighted sums scaled by ``MESSAGE_SCALE``.
    """
    if params.role != "sat":
        raise InvalidArgument(f"expected sat parameters, got {params.role}")
    p = _weights(params, leaves)
    adj = adjacency
    shape = ad.value(adj).shape
    if len(shape) != 3 or shape[1] % 2 or literal_mask.shape != shape[:2]:
        raise InvalidArgument(f"bad adjacency/mask shapes {shape} / {literal_mask.shape}")
    b, rows, m = shape
    half = rows // 2
    flip = np.concatenate([np.arange(half, rows), np.arange(half)])

    dtype = ad.value(adj).dtype
    lits = np.ones((b, rows, 1), dtype) * p["l_init"]
    clauses = np.ones((b, m, 1), dtype) * p["c_init"]
    for _ in range(params.rounds):
        clauses = _update(p, "c", [clauses, ad.matmul_tn(adj, lits) * MESSAGE_SCALE])
        flipped = ad.take(lits, flip, axis=1)
        lits = _update(p, "l", [lits, ad.matmul(adj, clauses) * MESSAGE_SCALE, flipped])
    votes = ad.reshape(ad.matmul(lits, p["vote_w"]), (b, rows)) + p["vote_b"]
    counts = literal_mask.sum(axis=1)
    return ad.sum(votes * literal_mask, axis=1) / counts


def forward_sat(params: SurrogateParams, adjacency, leaves=None):
    """Satisfiability probability of a single (2n, m) adjacency, array or Tensor."""
    shape = ad.value(adjacency).shape
    if len(shape) != 2 or shape[0] % 2:
        raise InvalidArgument(f"adjacency must have shape (2n, m), got {shape}")
    adj3 = ad.reshape(adjacency, (1,) + shape)
    logits = forward_sat_logits(params, adj3, np.ones((1, shape[0])), leaves)
    return ad.reshape(ad.sigmoid(logits), ())


def predict_sat(params: SurrogateParams, batch: SatBatch) -> np.ndarray:
    """Probabilities for a padded batch without recording a tape."""
    return ad.sigmoid(forward_sat_logits(params, batch.adjacency, batch.literal_mask))


# ---------------------------------------------------------------- TSP


def pairwise_distance(coords):
    """Differentiable Euclidean distance matrix; exactly zero on the diagonal."""
    n = ad.value(coords).shape[0]
    eye = np.eye(n)
    diff = ad.reshape(coords, (n, 1, 2)) - ad.reshape(coords, (1, n, 2))
    sq = ad.sum(diff * diff, axis=2)
    # shift the diagonal away from sqrt(0) so its gradient stays finite
    return ad.sqrt(sq + eye) * (1.0 - eye)


def _edge_backbone(p, rounds: int, weights, c0, n: int, node_input=None):
    """Node/edge message passing over the complete graph.  Returns edge states (n, n, D)."""
    off = 1.0 - np.eye(n)
    w3 = ad.reshape(weights, (n, n, 1))
    e_in = p["e_in"]
    edges = w3 * ad.take(e_in, [0], axis=0)
    if c0 is not None:
        edges = edges + ad.reshape(c0 / n, (1, 1, 1)) * ad.take(e_in, [1], axis=0)
    edges = ad.relu(edges + ad.take(e_in, [2], axis=0))
    if node_input is None:
        nodes = np.ones((n, 1)) * p["v_init"]
    else:
        nodes = ad.relu(ad.matmul(node_input, p["v_in"]) + p["v_init"])
    off3 = off[:, :, None]
    for _ in range(rounds):
        agg = ad.sum(edges * off3, axis=1) * (1.0 / (n - 1))
        nodes = _update(p, "v", [nodes, agg])
        pair = ad.reshape(nodes, (n, 1, -1)) + ad.reshape(nodes, (1, n, -1))
        edges = _update(p, "e", [edges, pair])
    return edges


def _check_tsp_input(coords, weights):
    if (coords is None) == (weights is None):
        raise InvalidArgument("pass exactly one of coords or weights")
    if coords is not None:
        shape = ad.value(coords).shape
        if len(shape) != 2 or shape[1] != 2:
            raise InvalidArgument(f"coords must have shape (n, 2), got {shape}")
        n = shape[0]
    else:
        shape = ad.value(weights).shape
        if len(shape) != 2 or shape[0] != shape[1]:
            raise InvalidArgument(f"weights must be square, got {shape}")
        n = shape[0]
    if n < 3:
        raise InvalidArgument("need at least 3 nodes")
    return n


def forward_dtsp_logit(params: SurrogateParams, c0, coords=None, weights=None, leaves=None):
    if params.role != "dtsp":
        raise InvalidArgument(f"expected dtsp parameters, got {params.role}")
    n = _check_tsp_input(coords, weights)
    p = _weights(params, leaves)
    w = pairwise_distance(coords) if coords is not None else weights
    edges = _edge_backbone(p, params.rounds, w, c0, n)
    off3 = (1.0 - np.eye(n))[:, :, None]
    pooled = ad.sum(ad.sum(edges * off3, axis=0), axis=0) * (1.0 / (n * (n - 1)))
    return ad.reshape(ad.matmul(ad.reshape(pooled, (1, -1)), p["out_w"]), ()) + ad.reshape(
        p["out_b"], ()
    )


def forward_dtsp(params: SurrogateParams, c0, coords=None, weights=None, leaves=None):
    """Probability that a tour of cost <= c0 exists.

    The cost query enters every edge state scaled by 1/n, which keeps it on
    the scale of individual edge weights.
    """
    return ad.sigmoid(forward_dtsp_logit(params, c0, coords, weights, leaves))


def forward_convtsp(params: SurrogateParams, coords, leaves=None):
    """Symmetric edge probability map with an exactly zero diagonal."""
    if params.role != "convtsp":
        raise InvalidArgument(f"expected convtsp parameters, got {params.role}")
    n = _check_tsp_input(coords, None)
    p = _weights(params, leaves)
    w = pairwise_distance(coords)
    edges = _edge_backbone(p, params.rounds, w, None, n, node_input=coords)
    logits = ad.reshape(ad.matmul(edges, p["out_w"]), (n, n)) + ad.reshape(p["out_b"], ())
    h = ad.sigmoid(logits)
    return (h + ad.swapaxes(h, 0, 1)) * (0.5 * (1.0 - np.eye(n)))


def greedy_decode(h) -> Tour:
    """From node 0 repeatedly move to the unvisited node with the highest probability."""
    h = np.asarray(ad.value(h))
    n = h.shape[0]
    visited = np.zeros(n, dtype=bool)
    visited[0] = True
    order = [0]
    for _ in range(n - 1):
        row = np.where(visited, -np.inf, h[order[-1]])
        nxt = int(np.argmax(row))  # argmax returns the first maximum
        order.append(nxt)
        visited[nxt] = True
    return Tour(order)


# ---------------------------------------------------------------- losses


def bce(prediction, label):
    """Binary cross-entropy with the probability clamped to [1e-7, 1 - 1e-7]."""
    p = ad.clip(prediction, PROB_EPS, 1.0 - PROB_EPS)
    y = np.asarray(label, dtype=float)
    return -(y * ad.log(p) + (1.0 - y) * ad.log(1.0 - p))


def bce_from_logits(logits, labels):
    """Elementwise clamped BCE on logits (same clamp as ``bce``)."""
    return bce(ad.sigmoid(logits), labels)


def edge_bce(h, target) -> object:
    """Mean BCE over off-diagonal entries of an edge probability map."""
    n = ad.value(h).shape[0]
    off = 1.0 - np.eye(n)
    losses = bce(h, np.asarray(target, dtype=float))
    return ad.sum(losses * off) * (1.0 / (n * (n - 1)))


def bce_value(p, y) -> np.ndarray:
    p = np.clip(np.asarray(p, dtype=float), PROB_EPS, 1.0 - PROB_EPS)
    y = np.asarray(y, dtype=float)
    return -(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))
