"""Dense float64 kernels shared by the network, branches and regularizers.

Arrays are plain 2-D ``numpy.ndarray`` objects in batch-first, row-major
layout. Biases are ``1 x out`` rows. Every backward pass is written by hand.
"""

import zlib

import numpy as np

DTYPE = np.float64


class DimensionError(ValueError):
    """Raised when array shapes do not conform."""


class NumericError(FloatingPointError):
    """Raised when an operation produces NaN or Inf."""


def as_dense(a):
    """Return ``a`` as a 2-D float64 array (vectors become single rows)."""
    arr = np.asarray(a, dtype=DTYPE)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise DimensionError(f"expected a 2-D array, got shape {arr.shape}")
    return arr


def check_finite(a, what="array"):
    if not np.all(np.isfinite(a)):
        raise NumericError(f"{what} contains NaN or Inf")
    return a


def linear_forward(x, W, b):
    """``x @ W + b`` with the bias broadcast over the batch."""
    if x.ndim != 2 or W.ndim != 2 or x.shape[1] != W.shape[0]:
        raise DimensionError(f"cannot multiply x{x.shape} by W{W.shape}")
    if b.shape != (1, W.shape[1]):
        raise DimensionError(f"bias b{b.shape} does not match W{W.shape}")
    with np.errstate(over="ignore", invalid="ignore"):
        out = x @ W + b
    return check_finite(out, "linear output")


def linear_backward(x, W, grad_out):
    """Gradients of a linear layer.

    Returns
    -------
    (grad_x, grad_W, grad_b)
        ``grad_out @ W.T``, ``x.T @ grad_out`` and the column sums of
        ``grad_out`` as a ``1 x out`` row.
    """
    if x.shape[1] != W.shape[0]:
        raise DimensionError(f"x{x.shape} does not match W{W.shape}")
    if grad_out.shape != (x.shape[0], W.shape[1]):
        raise DimensionError(
            f"grad_out{grad_out.shape} does not match forward output "
            f"{(x.shape[0], W.shape[1])}"
        )
    grad_x = grad_out @ W.T
    grad_W = x.T @ grad_out
    grad_b = grad_out.sum(axis=0, keepdims=True)
    return grad_x, grad_W, grad_b


def relu_forward(x):
    return np.maximum(x, 0.0)


def relu_backward(x, grad_out):
    if x.shape != grad_out.shape:
        raise DimensionError(f"x{x.shape} does not match grad_out{grad_out.shape}")
    return np.where(x > 0, grad_out, 0.0)


def softmax(logits):
    """Row-wise softmax with max subtraction."""
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def log_softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def _check_labels(labels, n, classes):
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise DimensionError(f"expected {n} labels, got shape {labels.shape}")
    if n and (labels.min() < 0 or labels.max() >= classes):
        raise ValueError(f"labels must lie in [0, {classes}), got {labels.min()}..{labels.max()}")
    return labels.astype(np.intp)


def cross_entropy_with_logits(logits, labels):
    """Mean cross-entropy over the batch and its gradient w.r.t. the logits."""
    n, c = logits.shape
    labels = _check_labels(labels, n, c)
    rows = np.arange(n)
    loss = -log_softmax(logits)[rows, labels].mean()
    grad = softmax(logits)
    grad[rows, labels] -= 1.0
    grad /= n
    return float(loss), grad


def per_example_ce_grad(logits, labels):
    """Unnormalized per-row gradient ``softmax - onehot`` (no 1/batch factor)."""
    n, c = logits.shape
    labels = _check_labels(labels, n, c)
    grad = softmax(logits)
    grad[np.arange(n), labels] -= 1.0
    return grad


def entropy(probs):
    """Shannon entropy (nats) of each row; ``0 log 0`` is taken as 0."""
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(probs > 0, probs * np.log(probs), 0.0)
    return -terms.sum(axis=1)


# Each consumer draws from its own child stream so that, e.g., fitting the
# branches never shifts the shuffle order seen by the backbone.
STREAMS = ("init", "data", "shuffle", "replay", "branch", "consolidate", "split")


def rng_stream(seed, name):
    """Independent ``numpy.random.Generator`` for one named consumer.

    The child seed is ``SeedSequence(seed, spawn_key=(crc32(name),))`` so the
    mapping is stable across runs and platforms.
    """
    if name not in STREAMS:
        raise KeyError(f"unknown rng stream {name!r}; known: {STREAMS}")
    key = zlib.crc32(name.encode("ascii"))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(key,))))
