"""Entropy-driven plasticity factors.

Each encoder block gets a small side classifier. The entropy of its
prediction says how confident that block's features already are on the
current data; a softmax across blocks turns the entropies into shares and
``1 - share`` becomes the block's plasticity factor, which multiplies the
block's gradients during backbone training. Confident (low-entropy) blocks
therefore move more.
"""

import csv
from dataclasses import dataclass

import numpy as np

from .network import apply_update, backward, backward_partial, forward, he_init
from .numeric import (
    DTYPE,
    DimensionError,
    cross_entropy_with_logits,
    entropy,
    linear_backward,
    linear_forward,
    relu_backward,
    relu_forward,
    softmax,
)


class ConfigError(ValueError):
    pass


@dataclass
class BranchLayer:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    frozen: bool = True

    @classmethod
    def init(cls, in_width, hidden, class_count, rng):
        return cls(
            he_init(rng, in_width, hidden),
            np.zeros((1, hidden), dtype=DTYPE),
            rng.normal(0.0, np.sqrt(1.0 / hidden), size=(hidden, class_count)),
            np.zeros((1, class_count), dtype=DTYPE),
        )

    def parameters(self):
        return [self.W1, self.b1, self.W2, self.b2]

    @property
    def class_count(self):
        return self.W2.shape[1]


class BranchSet:
    """One branch per encoder block."""

    def __init__(self, branches):
        self.branches = list(branches)

    @classmethod
    def init(cls, net, rng, hidden=None):
        """``hidden=None`` uses each block's own output width."""
        return cls(
            BranchLayer.init(b.out_width, hidden or b.out_width, net.class_count, rng)
            for b in net.blocks
        )

    def __len__(self):
        return len(self.branches)

    def __iter__(self):
        return iter(self.branches)

    def __getitem__(self, i):
        return self.branches[i]

    @property
    def frozen(self):
        return all(b.frozen for b in self.branches)

    def parameters(self):
        return [p for b in self.branches for p in b.parameters()]


def _branch_forward(branch, h):
    if h.shape[1] != branch.W1.shape[0]:
        raise DimensionError(
            f"block output width {h.shape[1]} != branch input width {branch.W1.shape[0]}"
        )
    z = linear_forward(h, branch.W1, branch.b1)
    a = relu_forward(z)
    return linear_forward(a, branch.W2, branch.b2), (z, a)


def branch_forward(branch, block_output):
    """Branch logits ``relu(h W1 + b1) W2 + b2``."""
    return _branch_forward(branch, block_output)[0]


def branch_entropy(branch_logits):
    """Batch-mean Shannon entropy (nats) of the branch's softmax prediction."""
    return float(entropy(softmax(branch_logits)).mean())


def plasticity_factors(entropies):
    """``1 - softmax(entropies)``; lower entropy gives a larger factor."""
    e = np.asarray(entropies, dtype=DTYPE).ravel()
    if e.size < 2:
        raise ConfigError("plasticity factors need at least 2 blocks (a single block gets pf=0)")
    return 1.0 - softmax(e.reshape(1, -1))[0]


def scale_gradients(grads, pf):
    """Multiply every gradient of block ``i`` by ``pf[i]``; decoder untouched."""
    pf = np.asarray(pf, dtype=DTYPE).ravel()
    if pf.size != len(grads.per_block):
        raise DimensionError(f"{pf.size} factors for {len(grads.per_block)} blocks")
    per_block = [[g * f for g in block] for block, f in zip(grads.per_block, pf)]
    return type(grads)(per_block, grads.decoder, grads.stop_below)


def freeze_schedule(pf, tau):
    """Length of the longest prefix of blocks whose factor is ``<= tau``.

    Only a prefix may be frozen: skipping a block in the middle of the stack
    saves no backpropagation work, so such blocks are scaled instead.
    """
    if tau < 0:
        raise ConfigError(f"freeze threshold must be >= 0, got {tau}")
    if tau == 0:
        return 0
    k = 0
    for f in pf:
        if f > tau:
            break
        k += 1
    return k


def fit_branches(net, branches, x, y, make_optimizer, epochs=1, batch_size=32, rng=None):
    """Train every branch on the frozen network's block outputs.

    Parameters
    ----------
    make_optimizer
        Zero-argument callable returning a fresh optimizer; each branch gets
        its own.
    rng
        Generator for the per-epoch shuffle; ``None`` keeps data order.

    The network is only read. Branches come back frozen.
    """
    x = np.asarray(x, dtype=DTYPE)
    y = np.asarray(y)
    if x.shape[0] == 0:
        raise ConfigError("branch fitting needs at least one example")
    if len(branches) != net.n_blocks:
        raise DimensionError(f"{len(branches)} branches for {net.n_blocks} blocks")
    outputs = forward(net, x).block_outputs
    n = x.shape[0]
    opts = [make_optimizer() for _ in branches]
    for br in branches:
        br.frozen = False
    for _ in range(epochs):
        order = rng.permutation(n) if rng is not None else np.arange(n)
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            for br, opt, h in zip(branches, opts, outputs):
                _branch_sgd_step(br, opt, h[idx], y[idx])
    for br in branches:
        br.frozen = True
    return branches


def _branch_sgd_step(branch, opt, h, y):
    logits, (z, a) = _branch_forward(branch, h)
    loss, g = cross_entropy_with_logits(logits, y)
    ga, gW2, gb2 = linear_backward(a, branch.W2, g)
    gz = relu_backward(z, ga)
    _, gW1, gb1 = linear_backward(h, branch.W1, gz)
    opt.step(branch.parameters(), [gW1, gb1, gW2, gb2])
    return loss


def branch_accuracy(net, branches, x, y):
    """Per-branch accuracy (percent) on ``(x, y)``."""
    outputs = forward(net, x).block_outputs
    y = np.asarray(y)
    return [
        float((branch_forward(br, h).argmax(axis=1) == y).mean() * 100.0)
        for br, h in zip(branches, outputs)
    ]


@dataclass
class StepInfo:
    loss: float
    entropies: np.ndarray
    pf: np.ndarray
    stop_below: int


def block_entropies(branches, trace):
    return np.array(
        [branch_entropy(branch_forward(br, h)) for br, h in zip(branches, trace.block_outputs)]
    )


def esp_step(net, branches, x, y, optimizer, tau=0.0, pf_override=None, partial=True):
    """One entropy-modulated training step, updating ``net`` in place.

    ``pf_override`` replaces the computed factors (test hook). With
    ``partial=False`` the frozen prefix is still zeroed but gradients are
    computed for every block; results are identical under plain SGD.
    """
    if not branches.frozen:
        raise ConfigError("branches must be frozen while the backbone trains")
    trace = forward(net, x)
    ent = block_entropies(branches, trace)
    if pf_override is None:
        pf = plasticity_factors(ent)
    else:
        pf = np.array(pf_override, dtype=DTYPE)
    k = freeze_schedule(pf, tau)
    pf[:k] = 0.0
    loss, g = cross_entropy_with_logits(trace.logits, y)
    if partial:
        grads = backward_partial(net, trace, g, k)
    else:
        grads = backward(net, trace, g)
        for i in range(k):
            grads.per_block[i] = [np.zeros_like(p) for p in grads.per_block[i]]
    grads = scale_gradients(grads, pf)
    apply_update(net, grads, optimizer)
    return StepInfo(loss, ent, pf, k)


PF_LOG_COLUMNS = ("task_id", "step", "block_index", "entropy", "pf", "frozen_flag")


class PfLog:
    """Append-only CSV of per-step, per-block entropies and factors."""

    def __init__(self, path):
        self.path = path
        self._fh = open(path, "w", newline="", encoding="utf-8")
        self._w = csv.writer(self._fh)
        self._w.writerow(PF_LOG_COLUMNS)

    def log(self, task_id, step, info):
        for i, (e, f) in enumerate(zip(info.entropies, info.pf)):
            self._w.writerow([task_id, step, i, repr(float(e)), repr(float(f)), int(i < info.stop_below)])

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
