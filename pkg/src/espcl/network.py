"""Block-structured MLP encoder with a linear decoder over all classes.

The encoder is a stack of blocks, each a run of (linear, ReLU) layers. A
forward pass records every block output so per-block branches can read them,
and gradients come back grouped per block so each block's update can be
scaled (or skipped) independently.
"""

import hashlib
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .numeric import (
    DTYPE,
    DimensionError,
    as_dense,
    cross_entropy_with_logits,
    linear_forward,
    relu_backward,
    relu_forward,
)

CHECKPOINT_MAGIC = b"ESPCKPT\x00"
CHECKPOINT_VERSION = 1


def he_init(rng, fan_in, fan_out):
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out))


@dataclass
class Block:
    weights: list
    biases: list
    activation: bool = True

    @property
    def in_width(self):
        return self.weights[0].shape[0]

    @property
    def out_width(self):
        return self.weights[-1].shape[1]

    @property
    def widths(self):
        return [W.shape[1] for W in self.weights]

    def parameters(self):
        """Parameters in enumeration order ``W0, b0, W1, b1, ...``."""
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    @property
    def param_count(self):
        return sum(p.size for p in self.parameters())

    def forward(self, x):
        return self._forward(x)[0]

    def _forward(self, x):
        cache = []
        for W, b in zip(self.weights, self.biases):
            z = linear_forward(x, W, b)
            cache.append((x, z))
            x = relu_forward(z) if self.activation else z
        return x, cache


@dataclass
class Linear:
    W: np.ndarray
    b: np.ndarray

    def parameters(self):
        return [self.W, self.b]


@dataclass
class ForwardTrace:
    inputs: np.ndarray
    block_outputs: list
    logits: np.ndarray
    caches: list = field(repr=False, default_factory=list)


@dataclass
class GradientSet:
    """Parameter gradients grouped like the network's parameters.

    ``stop_below`` marks the frozen prefix: blocks with a lower index were not
    backpropagated and must not be touched by the optimizer.
    """

    per_block: list
    decoder: list
    stop_below: int = 0

    def flat(self):
        out = [g for grads in self.per_block for g in grads]
        return out + list(self.decoder)

    def copy(self):
        return GradientSet(
            [[g.copy() for g in grads] for grads in self.per_block],
            [g.copy() for g in self.decoder],
            self.stop_below,
        )


class BlockNetwork:
    """Encoder blocks followed by a single linear decoder over every class."""

    def __init__(self, blocks, decoder, class_count=None):
        if len(blocks) < 2:
            raise ValueError(f"need at least 2 encoder blocks, got {len(blocks)}")
        for prev, nxt in zip(blocks, blocks[1:]):
            if prev.out_width != nxt.in_width:
                raise DimensionError(
                    f"block output width {prev.out_width} != next input width {nxt.in_width}"
                )
        if decoder.W.shape[0] != blocks[-1].out_width:
            raise DimensionError("decoder input width does not match the last block")
        self.blocks = list(blocks)
        self.decoder = decoder
        self.class_count = decoder.W.shape[1] if class_count is None else class_count
        if decoder.W.shape[1] != self.class_count:
            raise DimensionError("decoder width must equal class_count")

    @classmethod
    def init(cls, input_dim, block_widths, class_count, rng):
        """Random He-initialized network.

        ``block_widths`` holds one entry per block: an int for a single-layer
        block or a list of layer widths.
        """
        blocks = []
        fan_in = input_dim
        for spec in block_widths:
            widths = [spec] if isinstance(spec, (int, np.integer)) else list(spec)
            Ws, bs = [], []
            for w in widths:
                Ws.append(he_init(rng, fan_in, w))
                bs.append(np.zeros((1, w), dtype=DTYPE))
                fan_in = w
            blocks.append(Block(Ws, bs))
        dec = Linear(
            rng.normal(0.0, np.sqrt(1.0 / fan_in), size=(fan_in, class_count)),
            np.zeros((1, class_count), dtype=DTYPE),
        )
        return cls(blocks, dec, class_count)

    @property
    def n_blocks(self):
        return len(self.blocks)

    @property
    def input_dim(self):
        return self.blocks[0].in_width

    @property
    def block_layers(self):
        return [b.widths for b in self.blocks]

    def parameters(self):
        """All parameters: blocks in order, then decoder ``W, b``."""
        out = [p for blk in self.blocks for p in blk.parameters()]
        return out + self.decoder.parameters()

    def block_param_slices(self):
        """Index range of each block within :meth:`parameters`."""
        out, start = [], 0
        for blk in self.blocks:
            n = len(blk.parameters())
            out.append(range(start, start + n))
            start += n
        return out

    def copy(self):
        blocks = [
            Block([W.copy() for W in b.weights], [v.copy() for v in b.biases], b.activation)
            for b in self.blocks
        ]
        return BlockNetwork(blocks, Linear(self.decoder.W.copy(), self.decoder.b.copy()))

    def predict_logits(self, x):
        return forward(self, x).logits


def forward(net, x):
    x = as_dense(x)
    if x.shape[0] == 0:
        raise DimensionError("empty batch")
    if x.shape[1] != net.input_dim:
        raise DimensionError(f"input width {x.shape[1]} != network input width {net.input_dim}")
    inputs = x
    outputs, caches = [], []
    for blk in net.blocks:
        x, cache = blk._forward(x)
        outputs.append(x)
        caches.append(cache)
    logits = linear_forward(x, net.decoder.W, net.decoder.b)
    return ForwardTrace(inputs, outputs, logits, caches)


def _check_trace(net, trace, grad_logits):
    if len(trace.block_outputs) != net.n_blocks or len(trace.caches) != net.n_blocks:
        raise DimensionError("trace does not belong to this network (block count)")
    for blk, cache in zip(net.blocks, trace.caches):
        if len(cache) != len(blk.weights) or any(
            x.shape[1] != W.shape[0] for (x, _), W in zip(cache, blk.weights)
        ):
            raise DimensionError("trace does not belong to this network (layer shapes)")
    if grad_logits.shape != trace.logits.shape:
        raise DimensionError(
            f"grad_logits{grad_logits.shape} does not match logits{trace.logits.shape}"
        )


def _plain_param_grads(x, W, g):
    # parameter half of linear_backward; grad_x is formed by the caller only when needed
    return x.T @ g, g.sum(axis=0, keepdims=True)


def _squared_param_grads(x, W, g):
    # Sum over rows of the squared per-row gradients: sum_n (x_n g_n^T)^2.
    return (x * x).T @ (g * g), (g * g).sum(axis=0, keepdims=True)


def _backprop(net, trace, grad_logits, stop_below, param_grads):
    _check_trace(net, trace, grad_logits)
    last = trace.block_outputs[-1]
    dec_W, dec_b = param_grads(last, net.decoder.W, grad_logits)
    decoder = [dec_W, dec_b]
    per_block = [None] * net.n_blocks
    g = grad_logits @ net.decoder.W.T if stop_below < net.n_blocks else None
    for i in range(net.n_blocks - 1, stop_below - 1, -1):
        blk = net.blocks[i]
        grads = []
        for j in range(len(blk.weights) - 1, -1, -1):
            x_in, z = trace.caches[i][j]
            W = blk.weights[j]
            if blk.activation:
                g = relu_backward(z, g)
            gW, gb = param_grads(x_in, W, g)
            grads = [gW, gb] + grads
            # no grad_x needed below the frozen prefix
            if i > stop_below or j > 0:
                g = g @ W.T
        per_block[i] = grads
    for i in range(stop_below):
        per_block[i] = [np.zeros_like(p) for p in net.blocks[i].parameters()]
    return GradientSet(per_block, decoder, stop_below)


def backward(net, trace, grad_logits):
    """Full chain-rule gradients for every parameter."""
    return _backprop(net, trace, grad_logits, 0, _plain_param_grads)


def backward_partial(net, trace, grad_logits, stop_below):
    """Like :func:`backward` but blocks ``< stop_below`` are skipped entirely.

    Their gradients come back as exact zeros and backpropagation stops at
    block ``stop_below``.
    """
    if not 0 <= stop_below <= net.n_blocks:
        raise IndexError(f"stop_below={stop_below} outside [0, {net.n_blocks}]")
    return _backprop(net, trace, grad_logits, stop_below, _plain_param_grads)


def squared_example_grads(net, trace, example_grad_logits):
    """Sum over the batch of squared per-example parameter gradients.

    ``example_grad_logits`` must hold each example's own loss gradient in its
    row (no ``1/batch`` factor). Used for the empirical Fisher.
    """
    return _backprop(net, trace, example_grad_logits, 0, _squared_param_grads)


def param_grads_loss(net, x, y):
    """Mean cross-entropy loss and full gradients on one batch."""
    trace = forward(net, x)
    loss, g = cross_entropy_with_logits(trace.logits, y)
    return loss, backward(net, trace, g)


class SGD:
    """SGD with optional heavy-ball momentum (``v = mu*v + g; p -= lr*v``)."""

    def __init__(self, lr=1e-3, momentum=0.0):
        self.lr = lr
        self.momentum = momentum
        self.velocity = {}

    def step(self, params, grads, skip=()):
        for k, (p, g) in enumerate(zip(params, grads)):
            if k in skip:
                continue
            if self.momentum:
                v = self.velocity.get(k)
                v = g.copy() if v is None else self.momentum * v + g
                self.velocity[k] = v
                p -= self.lr * v
            else:
                p -= self.lr * g


class Adam:
    """Adam with bias correction; step counts are kept per parameter so a
    skipped (frozen) parameter's state does not advance."""

    def __init__(self, lr=3e-5, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m, self.v, self.t = {}, {}, {}

    def step(self, params, grads, skip=()):
        b1, b2 = self.beta1, self.beta2
        for k, (p, g) in enumerate(zip(params, grads)):
            if k in skip:
                continue
            m = b1 * self.m.get(k, 0.0) + (1 - b1) * g
            v = b2 * self.v.get(k, 0.0) + (1 - b2) * g * g
            t = self.t.get(k, 0) + 1
            self.m[k], self.v[k], self.t[k] = m, v, t
            m_hat = m / (1 - b1**t)
            v_hat = v / (1 - b2**t)
            p -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def make_optimizer(kind, lr, momentum=0.0):
    if kind == "sgd":
        return SGD(lr, momentum)
    if kind == "adam":
        return Adam(lr)
    raise ValueError(f"unknown optimizer {kind!r}")


def apply_update(net, grads, optimizer):
    """Apply one optimizer step in place; frozen-prefix blocks are skipped."""
    params = net.parameters()
    flat = grads.flat()
    if len(flat) != len(params) or any(p.shape != g.shape for p, g in zip(params, flat)):
        raise DimensionError("gradient set does not match network parameters")
    skip = set()
    for rng in net.block_param_slices()[: grads.stop_below]:
        skip.update(rng)
    optimizer.step(params, flat, skip)
    return net


def checksum(arrays):
    """Order-sensitive digest of the raw bytes of ``arrays``."""
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(a, dtype="<f8").tobytes())
    return h.hexdigest()


def save_checkpoint(net, path):
    """Write ``net`` as magic, version, JSON header, then little-endian f64 params."""
    header = json.dumps(
        {
            "input_dim": net.input_dim,
            "block_layers": net.block_layers,
            "class_count": net.class_count,
        },
        sort_keys=True,
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(header)))
        fh.write(header)
        for p in net.parameters():
            fh.write(np.ascontiguousarray(p, dtype="<f8").tobytes())


def load_checkpoint(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:8] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a network checkpoint")
    version, hlen = struct.unpack("<II", raw[8:16])
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(raw[16 : 16 + hlen].decode("utf-8"))
    data = np.frombuffer(raw[16 + hlen :], dtype="<f8")
    rng = np.random.default_rng(0)
    net = BlockNetwork.init(header["input_dim"], header["block_layers"], header["class_count"], rng)
    params = net.parameters()
    need = sum(p.size for p in params)
    if data.size != need:
        raise ValueError(f"{path}: expected {need} parameters, found {data.size}")
    offset = 0
    for p in params:
        p[...] = data[offset : offset + p.size].reshape(p.shape)
        offset += p.size
    return net
