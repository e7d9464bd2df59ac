"""Central finite-difference oracle for the autodiff engine.

A probe picks a random direction ``v`` over all inputs and compares the
analytic directional derivative ``<grad, v>`` with
``(F(x + h v) - F(x - h v)) / 2h`` where ``F`` is a fixed random projection
of the output.

Networks built from ReLU are only piecewise smooth, so a probe whose stencil
straddles a kink is discarded.  Such stencils are detected numerically: the
central differences at ``h`` and ``h/4`` agree to O(h^2) on smooth stencils
and disagree by O(1) across a kink.  A wrong analytic gradient is still
caught because both numeric estimates agree with each other and not with it.
"""

import numpy as np

from soundattack import autodiff as ad
from soundattack import surrogates as S

H = 1e-5
SMOOTH_TOL = 1e-6


def _scalar(out, w):
    return float(np.sum(np.asarray(ad.value(out), dtype=float) * w))


def probe(fn, inputs, rng, h=H):
    """Relative error of one directional-derivative probe, and whether its stencil is smooth."""
    inputs = [np.array(x, dtype=float) for x in inputs]
    tape = ad.Tape()
    leaves = [tape.leaf(x) for x in inputs]
    out = fn(*leaves)
    w = rng.normal(size=np.shape(ad.value(out)))
    loss = ad.sum(ad.mul(out, w))
    grads = tape.backward(loss)
    dirs = [rng.normal(size=x.shape) for x in inputs]
    analytic = sum(float(np.sum(grads[t] * d)) for t, d in zip(leaves, dirs))

    def f(step):
        shifted = [x + step * h * d for x, d in zip(inputs, dirs)]
        t = ad.Tape()
        return _scalar(fn(*[t.leaf(x) for x in shifted]), w)

    numeric = (f(1.0) - f(-1.0)) / (2 * h)
    fine = (f(0.25) - f(-0.25)) / (0.5 * h)
    smooth = abs(numeric - fine) <= SMOOTH_TOL * max(abs(numeric), abs(fine), 1e-12)
    scale = max(abs(analytic), abs(numeric))
    return (0.0 if scale == 0 else abs(analytic - numeric) / scale), smooth


def max_error(fn, make_inputs, probes=100, seed=0, max_skip=0.05):
    """Largest relative error over ``probes`` smooth probes at fresh random inputs."""
    rng = np.random.default_rng(seed)
    errors, skipped = [], 0
    while len(errors) < probes:
        err, smooth = probe(fn, make_inputs(rng), rng)
        if smooth:
            errors.append(err)
        else:
            skipped += 1
    if skipped > max_skip * (probes + skipped):
        raise AssertionError(f"{skipped} probes straddled kinks")
    return max(errors)


def _away(rng, shape, points, gap=0.05, lo=-2.0, hi=2.0):
    """Uniform values at least ``gap`` from every kink in ``points``."""
    x = rng.uniform(lo, hi, size=shape)
    for _ in range(1000):
        bad = np.zeros(shape, dtype=bool)
        for p in points:
            bad |= np.abs(x - p) < gap
        if not bad.any():
            return x
        x[bad] = rng.uniform(lo, hi, size=int(bad.sum()))
    raise RuntimeError("could not sample away from kinks")


def _ln_relu_input(rng):
    while True:
        x = rng.normal(size=(5, 6))
        if np.min(np.abs(ad.value(ad.layer_norm(x)))) > 0.05:
            return [x]


def _positive(rng, shape):
    return rng.uniform(0.5, 2.0, size=shape)


PRIMITIVES = {
    "add": (ad.add, lambda r: [r.normal(size=(3, 4)), r.normal(size=(4,))]),
    "sub": (ad.sub, lambda r: [r.normal(size=(3, 1)), r.normal(size=(1, 4))]),
    "mul": (ad.mul, lambda r: [r.normal(size=(3, 4)), r.normal(size=(3, 4))]),
    "div": (ad.div, lambda r: [r.normal(size=(3, 4)), _away(r, (3, 4), [0.0], gap=0.5)]),
    "neg": (ad.neg, lambda r: [r.normal(size=(4,))]),
    "power": (lambda a: ad.power(a, 2.5), lambda r: [_positive(r, (3, 4))]),
    "exp": (ad.exp, lambda r: [r.normal(size=(3, 4))]),
    "log": (ad.log, lambda r: [_positive(r, (3, 4))]),
    "sqrt": (ad.sqrt, lambda r: [_positive(r, (3, 4))]),
    "relu": (ad.relu, lambda r: [_away(r, (3, 4), [0.0])]),
    "sigmoid": (ad.sigmoid, lambda r: [r.normal(size=(3, 4)) * 3]),
    "tanh": (ad.tanh, lambda r: [r.normal(size=(3, 4))]),
    "clip": (lambda a: ad.clip(a, -0.5, 0.5), lambda r: [_away(r, (3, 4), [-0.5, 0.5], lo=-1, hi=1)]),
    "layer_norm": (ad.layer_norm, lambda r: [r.normal(size=(5, 6))]),
    "layer_norm_relu": (lambda a: ad.layer_norm(a, relu=True), _ln_relu_input),
    "linear": (
        lambda x1, x2, w, b: ad.linear([x1, x2], w, b),
        lambda r: [r.normal(size=(2, 5, 3)), r.normal(size=(2, 5, 4)), r.normal(size=(7, 6)), r.normal(size=(6,))],
    ),
    "matmul": (ad.matmul, lambda r: [r.normal(size=(3, 4)), r.normal(size=(4, 5))]),
    "matmul_batched": (ad.matmul, lambda r: [r.normal(size=(2, 3, 4)), r.normal(size=(2, 4, 5))]),
    "matmul_stacked": (ad.matmul, lambda r: [r.normal(size=(2, 3, 4)), r.normal(size=(4, 5))]),
    "matmul_tn": (ad.matmul_tn, lambda r: [r.normal(size=(2, 4, 3)), r.normal(size=(2, 4, 5))]),
    "sum": (lambda a: ad.sum(a, axis=1), lambda r: [r.normal(size=(3, 4, 2))]),
    "sum_all": (ad.sum, lambda r: [r.normal(size=(3, 4))]),
    "mean": (lambda a: ad.mean(a, axis=0, keepdims=True), lambda r: [r.normal(size=(3, 4))]),
    "reshape": (lambda a: ad.reshape(a, (6, 2)), lambda r: [r.normal(size=(3, 4))]),
    "swapaxes": (lambda a: ad.swapaxes(a, 0, 2), lambda r: [r.normal(size=(2, 3, 4))]),
    "concat": (lambda a, b: ad.concat([a, b], axis=1), lambda r: [r.normal(size=(3, 2)), r.normal(size=(3, 4))]),
    "take": (lambda a: ad.take(a, [2, 0, 2, 1], axis=0), lambda r: [r.normal(size=(3, 4))]),
    "take_permutation": (lambda a: ad.take(a, [2, 0, 1, 3], axis=1), lambda r: [r.normal(size=(3, 4))]),
}


def _with_params(role, forward, make_input):
    """Catalogue entry differentiating ``forward`` jointly in its input and all parameters."""

    def make(rng):
        params = S.init_params(role, width=6, rounds=2, seed=int(rng.integers(2**31)))
        return [make_input(rng)] + [params.tensors[k] for k in params.names()]

    def fn(x, *tensors):
        params = S.init_params(role, width=6, rounds=2)
        leaves = dict(zip(params.names(), tensors))
        return forward(params, x, leaves)

    return fn, make


def _soft_adjacency(rng):
    n, m = int(rng.integers(3, 6)), int(rng.integers(3, 8))
    return rng.random((2 * n, m))


def _coords(rng):
    return rng.random((int(rng.integers(4, 7)), 2))


FORWARDS = {
    "sat": _with_params("sat", lambda p, a, lv: S.forward_sat(p, a, lv), _soft_adjacency),
    "dtsp": _with_params(
        "dtsp", lambda p, xy, lv: S.forward_dtsp(p, 3.0, coords=xy, leaves=lv), _coords
    ),
    "dtsp_c0": _with_params(
        "dtsp", lambda p, c0, lv: S.forward_dtsp(p, c0, weights=_FIXED_W, leaves=lv),
        lambda r: r.uniform(1.0, 4.0, size=()),
    ),
    "convtsp": _with_params("convtsp", lambda p, xy, lv: S.forward_convtsp(p, xy, lv), _coords),
}

_FIXED_W = S.pairwise_distance(np.random.default_rng(0).random((5, 2)))

LOSSES = {
    "bce": (lambda p: S.bce(p, np.array([1.0, 0.0, 1.0])), lambda r: [r.uniform(0.05, 0.95, 3)]),
    "bce_from_logits": (
        lambda z: S.bce_from_logits(z, np.array([1.0, 0.0, 0.0, 1.0])),
        lambda r: [r.normal(size=4) * 2],
    ),
    "edge_bce": (
        lambda h: S.edge_bce(h, np.eye(4)[[1, 2, 3, 0]]),
        lambda r: [r.uniform(0.05, 0.95, (4, 4))],
    ),
}
