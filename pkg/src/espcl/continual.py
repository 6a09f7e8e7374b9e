"""Class-incremental training loop.

Tasks arrive in order with no task identity. Each task is trained for a
single pass over its training set (current data and/or replay, depending on
the scenario), after which every task's test split is evaluated with an
argmax over all classes.
"""

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .network import (
    BlockNetwork,
    apply_update,
    backward,
    backward_partial,
    forward,
    make_optimizer,
)
from .numeric import DTYPE, cross_entropy_with_logits, rng_stream
from .plasticity import BranchSet, ConfigError, PfLog, esp_step, fit_branches
from .regularizers import (
    EWC_LAMBDA,
    SI_C,
    EwcState,
    SiState,
    ewc_consolidate,
    ewc_penalized_grads,
    si_accumulate,
    si_consolidate,
    si_penalized_grads,
    static_scale,
    static_schedule,
)

METHODS = ("esp", "stability", "plasticity", "linear", "oewc", "si")
SCENARIOS = ("only", "all")


def replay_count(fraction, n):
    # guard against 0.29 * 100 == 28.999999999999996
    return int(math.floor(fraction * n + 1e-9))


class ReplayBuffer:
    """Raw stored examples from finished tasks."""

    def __init__(self, fraction, input_dim):
        if not 0.0 <= fraction <= 1.0:
            raise ConfigError(f"replay fraction must be in [0, 1], got {fraction}")
        self.fraction = fraction
        self.x = np.empty((0, input_dim), dtype=DTYPE)
        self.y = np.empty(0, dtype=np.int64)
        self.sizes = []

    def __len__(self):
        return len(self.y)

    def draw(self, task, rng):
        """Indices of the task examples destined for the buffer (no replacement)."""
        n = len(task)
        return np.sort(rng.permutation(n)[: replay_count(self.fraction, n)])

    def add(self, task, idx):
        self.x = np.concatenate([self.x, task.x_train[idx]])
        self.y = np.concatenate([self.y, task.y_train[idx]])
        self.sizes.append(len(idx))


def build_training_set(task, buffer, scenario, sample_idx, rng, strict_only=False):
    """Examples for one task pass, shuffled with ``rng``.

    ``all``: the full task plus the buffer. ``only``: the buffer plus the
    task's replay-destined sample (``strict_only`` drops the latter once the
    buffer holds anything).
    """
    if len(task) == 0:
        raise ConfigError(f"task {task.task_id} has no training data")
    if scenario == "all":
        x = np.concatenate([task.x_train, buffer.x])
        y = np.concatenate([task.y_train, buffer.y])
    elif scenario == "only":
        if strict_only and len(buffer):
            x, y = buffer.x, buffer.y
        else:
            x = np.concatenate([buffer.x, task.x_train[sample_idx]])
            y = np.concatenate([buffer.y, task.y_train[sample_idx]])
    else:
        raise ConfigError(f"unknown scenario {scenario!r}")
    if len(y) == 0:
        raise ConfigError(
            f"empty training set for task {task.task_id} (scenario {scenario!r}, "
            f"replay fraction {buffer.fraction})"
        )
    perm = rng.permutation(len(y))
    return x[perm], y[perm]


def evaluate(net, x, y, batch_size=1024):
    """Accuracy in percent of argmax over every class."""
    y = np.asarray(y)
    if len(y) == 0:
        raise ConfigError("cannot evaluate on an empty test set")
    correct = 0
    for s in range(0, len(y), batch_size):
        logits = forward(net, x[s : s + batch_size]).logits
        correct += int((logits.argmax(axis=1) == y[s : s + batch_size]).sum())
    return 100.0 * correct / len(y)


@dataclass
class TrainSettings:
    batch_size: int = 32
    optimizer: str = "sgd"
    lr: float = 1e-3
    momentum: float = 0.9
    scenario: str = "all"
    replay_fraction: float = 0.2
    strict_only: bool = False
    tau: float = 0.0
    branch_hidden: int = None
    branch_epochs: int = 1
    branch_lr: float = None
    branch_data_fraction: float = 0.1
    ewc_lambda: float = EWC_LAMBDA
    ewc_gamma: float = 1.0
    si_c: float = SI_C
    si_xi: float = 0.1

    def new_optimizer(self, lr=None):
        return make_optimizer(self.optimizer, self.lr if lr is None else lr, self.momentum)


def _leading_zeros(factors):
    k = 0
    for f in factors:
        if f != 0.0:
            break
        k += 1
    return k


class StaticMethod:
    """Stability / plasticity / linear plasticity: fixed per-block factors."""

    has_regularizer = False

    def __init__(self, kind, net):
        self.name = kind
        self.factors = static_schedule(kind, net.n_blocks)
        # zero-factor prefix blocks are skipped outright; with fresh optimizer
        # state that is bit-identical to scaling their gradients by 0
        self.stop_below = _leading_zeros(self.factors)

    def prepare(self, net, task, buffer, ctx):
        pass

    def step(self, net, optimizer, x, y):
        trace = forward(net, x)
        loss, g = cross_entropy_with_logits(trace.logits, y)
        grads = static_scale(backward_partial(net, trace, g, self.stop_below), self.factors)
        apply_update(net, grads, optimizer)
        return loss

    def finish(self, net, task, ctx):
        pass


class EwcMethod:
    name = "oewc"
    has_regularizer = True

    def __init__(self, net, settings):
        self.state = EwcState.empty(net, settings.ewc_lambda, settings.ewc_gamma)
        self.batch_size = settings.batch_size

    def prepare(self, net, task, buffer, ctx):
        pass

    def step(self, net, optimizer, x, y):
        trace = forward(net, x)
        loss, g = cross_entropy_with_logits(trace.logits, y)
        grads = backward(net, trace, g)
        if self.state.consolidations:
            grads = ewc_penalized_grads(grads, net, self.state)
        apply_update(net, grads, optimizer)
        return loss

    def finish(self, net, task, ctx):
        x, y = ctx.consolidation_sample
        ewc_consolidate(net, x, y, self.state, self.batch_size)


class SiMethod:
    name = "si"
    has_regularizer = True

    def __init__(self, net, settings):
        self.state = SiState.empty(net, settings.si_c, settings.si_xi)

    def prepare(self, net, task, buffer, ctx):
        pass

    def step(self, net, optimizer, x, y):
        trace = forward(net, x)
        loss, g = cross_entropy_with_logits(trace.logits, y)
        raw = backward(net, trace, g)
        grads = si_penalized_grads(raw, net, self.state)
        before = [p.copy() for p in net.parameters()]
        apply_update(net, grads, optimizer)
        delta = [p - b for p, b in zip(net.parameters(), before)]
        si_accumulate(self.state, raw, delta)
        return loss

    def finish(self, net, task, ctx):
        si_consolidate(self.state, [p.copy() for p in net.parameters()])


class EspMethod:
    name = "esp"
    has_regularizer = True

    def __init__(self, net, settings, rng, pf_override=None, pf_log=None):
        self.settings = settings
        self.rng = rng
        self.branches = BranchSet.init(net, rng, settings.branch_hidden)
        self.pf_override = pf_override
        self.pf_log = pf_log
        self.task_id = 0
        self.step_no = 0
        self.pf_history = []

    def prepare(self, net, task, buffer, ctx):
        s = self.settings
        n = len(task)
        idx = np.sort(self.rng.permutation(n)[: replay_count(s.branch_data_fraction, n)])
        x = np.concatenate([buffer.x, task.x_train[idx]])
        y = np.concatenate([buffer.y, task.y_train[idx]])
        fit_branches(
            net,
            self.branches,
            x,
            y,
            lambda: s.new_optimizer(s.branch_lr),
            epochs=s.branch_epochs,
            batch_size=s.batch_size,
            rng=self.rng,
        )
        self.task_id = task.task_id
        self.step_no = 0

    def step(self, net, optimizer, x, y):
        info = esp_step(
            net, self.branches, x, y, optimizer, self.settings.tau, self.pf_override
        )
        if self.pf_log is not None:
            self.pf_log.log(self.task_id, self.step_no, info)
        self.pf_history.append((self.task_id, info.pf.copy(), info.stop_below))
        self.step_no += 1
        return info.loss

    def finish(self, net, task, ctx):
        pass


def make_method(name, net, settings, seed, pf_override=None, pf_log=None):
    if name in ("stability", "plasticity", "linear"):
        return StaticMethod(name, net)
    if name == "oewc":
        return EwcMethod(net, settings)
    if name == "si":
        return SiMethod(net, settings)
    if name == "esp":
        return EspMethod(net, settings, rng_stream(seed, "branch"), pf_override, pf_log)
    raise ConfigError(f"unknown method {name!r}; choose from {METHODS}")


@dataclass
class TaskContext:
    sample_idx: np.ndarray
    consolidation_sample: tuple


@dataclass
class TaskRecord:
    task_id: int
    steps: int
    examples: int
    mean_loss: float
    backbone_seconds: float
    regularizer_seconds: float
    total_seconds: float


def train_task(net, method, optimizer, task, buffer, settings, rngs):
    """Train one task: optional pre-pass (branch fitting), one pass, consolidation, buffer update.

    ``rngs`` maps ``"replay"``, ``"shuffle"`` and ``"consolidate"`` to
    generators. Returns a :class:`TaskRecord`.
    """
    t_start = time.perf_counter()
    sample_idx = buffer.draw(task, rngs["replay"])
    if len(sample_idx):
        cons = (task.x_train[sample_idx], task.y_train[sample_idx])
    else:
        # no replay-destined sample: fall back to a branch-sized sample
        n = len(task)
        k = max(1, replay_count(settings.branch_data_fraction, n))
        idx = np.sort(rngs["consolidate"].permutation(n)[:k])
        cons = (task.x_train[idx], task.y_train[idx])
    ctx = TaskContext(sample_idx, cons)

    reg = 0.0
    t0 = time.perf_counter()
    method.prepare(net, task, buffer, ctx)
    if method.has_regularizer:
        reg += time.perf_counter() - t0

    x, y = build_training_set(
        task, buffer, settings.scenario, sample_idx, rngs["shuffle"], settings.strict_only
    )
    steps, losses = 0, []
    bs = settings.batch_size
    for s in range(0, len(y), bs):
        losses.append(method.step(net, optimizer, x[s : s + bs], y[s : s + bs]))
        steps += 1

    t0 = time.perf_counter()
    method.finish(net, task, ctx)
    if method.has_regularizer:
        reg += time.perf_counter() - t0

    buffer.add(task, sample_idx)
    total = time.perf_counter() - t_start
    return TaskRecord(
        task.task_id, steps, len(y), float(np.mean(losses)), total - reg, reg, total
    )


@dataclass
class SequenceResult:
    method: str
    accuracy: np.ndarray
    records: list
    eval_seconds: list = field(default_factory=list)
    pf_history: list = field(default_factory=list)
    net: BlockNetwork = None
    method_state: object = None

    @property
    def average_accuracy(self):
        return average_accuracy(self.accuracy)

    @property
    def forgetting(self):
        return forgetting(self.accuracy)


def average_accuracy(acc):
    return float(np.mean(acc[-1]))


def forgetting(acc):
    """Per task ``j``: best accuracy after it was learned minus final accuracy."""
    T = acc.shape[0]
    return [float(acc[j:, j].max() - acc[-1, j]) for j in range(acc.shape[1]) if j < T]


def run_sequence(
    stream,
    method,
    settings,
    seed,
    block_widths=(64, 64, 64, 64),
    pf_log_path=None,
    pf_override=None,
    on_task_end=None,
):
    """Train ``method`` across ``stream`` and fill the accuracy matrix.

    Row ``t`` of the matrix holds test accuracy on every task after training
    task ``t``.
    """
    if not 0.0 <= settings.replay_fraction <= 1.0:
        raise ConfigError("replay_fraction must be in [0, 1]")
    tasks = list(stream)
    net = BlockNetwork.init(stream.input_dim, list(block_widths), stream.class_count, rng_stream(seed, "init"))
    pf_log = PfLog(pf_log_path) if (pf_log_path and method == "esp") else None
    try:
        strategy = make_method(method, net, settings, seed, pf_override, pf_log)
        optimizer = settings.new_optimizer()
        buffer = ReplayBuffer(settings.replay_fraction, stream.input_dim)
        rngs = {k: rng_stream(seed, k) for k in ("replay", "shuffle", "consolidate")}
        T = len(tasks)
        acc = np.zeros((T, T))
        records, eval_secs = [], []
        for t, task in enumerate(tasks):
            records.append(train_task(net, strategy, optimizer, task, buffer, settings, rngs))
            t0 = time.perf_counter()
            for j, other in enumerate(tasks):
                acc[t, j] = evaluate(net, other.x_test, other.y_test)
            eval_secs.append(time.perf_counter() - t0)
            if on_task_end is not None:
                on_task_end(t, net, strategy)
    finally:
        if pf_log is not None:
            pf_log.close()
    return SequenceResult(
        method,
        acc,
        records,
        eval_secs,
        getattr(strategy, "pf_history", []),
        net,
        strategy,
    )
