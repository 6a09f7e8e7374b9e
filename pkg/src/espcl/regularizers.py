"""Baseline gradient-modulation methods.

All of them map a :class:`~espcl.network.GradientSet` to a new one, so the
trainer does not care which method it runs:

* fixed per-block factors (stability, plasticity, linear plasticity),
* online EWC with a decayed running empirical Fisher,
* synaptic intelligence (path-integral importance, quadratic penalty).
"""

from dataclasses import dataclass

import numpy as np

from .network import GradientSet, forward, squared_example_grads
from .numeric import DTYPE, DimensionError, per_example_ce_grad
from .plasticity import ConfigError, scale_gradients

EWC_LAMBDA = 2000.0
SI_C = 0.1


def static_schedule(kind, n_blocks):
    """Fixed per-block factors for ``stability``, ``plasticity`` or ``linear``."""
    if kind == "stability":
        return np.zeros(n_blocks)
    if kind == "plasticity":
        return np.ones(n_blocks)
    if kind == "linear":
        if n_blocks < 2:
            raise ConfigError("linear schedule needs at least 2 blocks")
        return np.arange(n_blocks, dtype=DTYPE) / (n_blocks - 1)
    raise ConfigError(f"unknown static schedule {kind!r}")


def static_scale(grads, factors):
    return scale_gradients(grads, factors)


def _regroup(grads, flat):
    per_block, k = [], 0
    for block in grads.per_block:
        per_block.append(flat[k : k + len(block)])
        k += len(block)
    return GradientSet(per_block, flat[k:], grads.stop_below)


def _check_shapes(params, other, what):
    if len(params) != len(other) or any(p.shape != o.shape for p, o in zip(params, other)):
        raise DimensionError(f"{what} shapes do not match the network parameters")


@dataclass
class EwcState:
    fisher: list
    anchor: list
    lam: float = EWC_LAMBDA
    gamma: float = 1.0
    consolidations: int = 0

    @classmethod
    def empty(cls, net, lam=EWC_LAMBDA, gamma=1.0):
        params = net.parameters()
        return cls([np.zeros_like(p) for p in params], [p.copy() for p in params], lam, gamma)


def empirical_fisher(net, x, y, batch_size=32):
    """Mean over examples of squared per-example loss gradients."""
    x = np.asarray(x, dtype=DTYPE)
    y = np.asarray(y)
    n = x.shape[0]
    if n == 0:
        raise ConfigError("Fisher estimate needs a non-empty sample")
    total = None
    for start in range(0, n, batch_size):
        xb, yb = x[start : start + batch_size], y[start : start + batch_size]
        trace = forward(net, xb)
        sq = squared_example_grads(net, trace, per_example_ce_grad(trace.logits, yb)).flat()
        total = sq if total is None else [t + s for t, s in zip(total, sq)]
    return [t / n for t in total]


def ewc_consolidate(net, x, y, state, batch_size=32):
    """Fold a fresh Fisher estimate into ``state`` and re-anchor at the current weights."""
    f_new = empirical_fisher(net, x, y, batch_size)
    _check_shapes(net.parameters(), state.fisher, "fisher")
    state.fisher = [state.gamma * f + fn for f, fn in zip(state.fisher, f_new)]
    state.anchor = [p.copy() for p in net.parameters()]
    state.consolidations += 1
    return state


def ewc_penalty(net, state):
    """``lam/2 * sum F (theta - anchor)^2``."""
    return 0.5 * state.lam * sum(
        float((f * (p - a) ** 2).sum())
        for p, f, a in zip(net.parameters(), state.fisher, state.anchor)
    )


def ewc_penalized_grads(grads, net, state):
    params = net.parameters()
    flat = grads.flat()
    _check_shapes(params, flat, "gradient")
    _check_shapes(params, state.anchor, "anchor")
    return _regroup(
        grads,
        [g + state.lam * f * (p - a) for g, p, f, a in zip(flat, params, state.fisher, state.anchor)],
    )


@dataclass
class SiState:
    w: list
    omega: list
    theta_start: list
    c: float = SI_C
    xi: float = 0.1

    @classmethod
    def empty(cls, net, c=SI_C, xi=0.1):
        params = net.parameters()
        return cls(
            [np.zeros_like(p) for p in params],
            [np.zeros_like(p) for p in params],
            [p.copy() for p in params],
            c,
            xi,
        )


def si_accumulate(state, grads, delta):
    """Add ``-g * delta`` to the path integral.

    ``grads`` is the raw task-loss gradient (a GradientSet or flat list) taken
    before the step; ``delta`` is the parameter change the step produced.
    """
    flat = grads.flat() if isinstance(grads, GradientSet) else list(grads)
    _check_shapes(state.w, flat, "gradient")
    _check_shapes(state.w, delta, "delta")
    state.w = [w - g * d for w, g, d in zip(state.w, flat, delta)]
    return state


def si_consolidate(state, theta_end):
    """End-of-task importance update; resets the path integral.

    Negative path integrals (steps that raised the loss on net) add no
    importance, which keeps ``omega >= 0``.
    """
    _check_shapes(state.w, theta_end, "theta_end")
    state.omega = [
        om + np.maximum(w, 0.0) / ((te - ts) ** 2 + state.xi)
        for om, w, te, ts in zip(state.omega, state.w, theta_end, state.theta_start)
    ]
    state.w = [np.zeros_like(w) for w in state.w]
    state.theta_start = [np.array(t, dtype=DTYPE, copy=True) for t in theta_end]
    return state


def si_penalty(net, state):
    """``c * sum omega (theta - theta_start)^2``."""
    return state.c * sum(
        float((om * (p - ts) ** 2).sum())
        for p, om, ts in zip(net.parameters(), state.omega, state.theta_start)
    )


def si_penalized_grads(grads, net, state):
    params = net.parameters()
    flat = grads.flat()
    _check_shapes(params, flat, "gradient")
    return _regroup(
        grads,
        [
            g + 2.0 * state.c * om * (p - ts)
            for g, p, om, ts in zip(flat, params, state.omega, state.theta_start)
        ],
    )
