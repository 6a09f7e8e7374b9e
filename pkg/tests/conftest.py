import numpy as np
import pytest

from espcl.data import GaussianSpec, generate_gaussian_stream
from espcl.network import BlockNetwork

ACCEPTANCE_LINES = []


def central_diff(f, arrays, h=1e-5):
    """Central finite differences of scalar ``f()`` w.r.t. each array in place."""
    out = []
    for a in arrays:
        g = np.zeros_like(a)
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = a[i]
            a[i] = old + h
            fp = f()
            a[i] = old - h
            fm = f()
            a[i] = old
            g[i] = (fp - fm) / (2 * h)
        out.append(g)
    return out


def rel_err(a, b):
    a, b = np.asarray(a), np.asarray(b)
    denom = np.linalg.norm(a) + np.linalg.norm(b)
    return 0.0 if denom == 0 else float(np.linalg.norm(a - b) / denom)


def kink_free_instance(rng, input_dim=5, widths=(4, 3, 4), classes=3, batch=4, margin=1e-3):
    """Random net with random biases and a batch whose ReLU pre-activations
    all sit at least ``margin`` away from zero, so finite differences never
    straddle a kink."""
    while True:
        net = BlockNetwork.init(input_dim, list(widths), classes, rng)
        for p in net.parameters():
            if p.shape[0] == 1:
                p[...] = rng.normal(0.0, 0.5, size=p.shape)
        x = rng.normal(size=(batch, input_dim))
        h, ok = x, True
        for blk in net.blocks:
            z = h @ blk.weights[0] + blk.biases[0]
            ok &= bool(np.abs(z).min() > margin)
            h = np.maximum(z, 0)
        if ok:
            return net, x, rng.integers(0, classes, size=batch)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_net(rng):
    return BlockNetwork.init(5, [4, 3, 4], 3, rng)


@pytest.fixture(scope="session")
def fixture_stream():
    return generate_gaussian_stream(GaussianSpec(seed=0), 5)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
