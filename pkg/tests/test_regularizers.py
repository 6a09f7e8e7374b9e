import numpy as np
import pytest

from espcl.network import BlockNetwork, GradientSet, backward, forward
from espcl.numeric import cross_entropy_with_logits
from espcl.plasticity import ConfigError
from espcl.regularizers import (
    EwcState,
    SiState,
    empirical_fisher,
    ewc_consolidate,
    ewc_penalized_grads,
    ewc_penalty,
    si_accumulate,
    si_consolidate,
    si_penalized_grads,
    si_penalty,
    static_schedule,
)

from conftest import central_diff, rel_err


def test_static_schedules():
    assert static_schedule("stability", 4).tolist() == [0, 0, 0, 0]
    assert static_schedule("plasticity", 4).tolist() == [1, 1, 1, 1]
    np.testing.assert_allclose(static_schedule("linear", 4), [0, 1 / 3, 2 / 3, 1], rtol=1e-15)
    assert static_schedule("linear", 2).tolist() == [0.0, 1.0]
    with pytest.raises(ConfigError):
        static_schedule("sometimes", 3)


def _zero_grads(net):
    return GradientSet(
        [[np.zeros_like(p) for p in b.parameters()] for b in net.blocks],
        [np.zeros_like(p) for p in net.decoder.parameters()],
    )


def _perturb(net, rng, scale=0.1):
    for p in net.parameters():
        p += scale * rng.normal(size=p.shape)


def test_fisher_matches_per_example_loop(rng):
    net = BlockNetwork.init(4, [5, 5], 3, rng)
    x, y = rng.normal(size=(7, 4)), rng.integers(0, 3, size=7)
    slow = [np.zeros_like(p) for p in net.parameters()]
    for n in range(7):
        tr = forward(net, x[n : n + 1])
        _, g = cross_entropy_with_logits(tr.logits, y[n : n + 1])
        slow = [s + gg**2 / 7 for s, gg in zip(slow, backward(net, tr, g).flat())]
    fast = empirical_fisher(net, x, y, batch_size=3)
    for a, b in zip(fast, slow):
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-16)
        assert (a >= 0).all()


def test_ewc_penalty_zero_at_anchor(rng):
    net = BlockNetwork.init(4, [5, 5], 3, rng)
    state = EwcState.empty(net)
    ewc_consolidate(net, rng.normal(size=(10, 4)), rng.integers(0, 3, size=10), state)
    assert ewc_penalty(net, state) == 0.0
    pen = ewc_penalized_grads(_zero_grads(net), net, state)
    assert all(not g.any() for g in pen.flat())


def test_ewc_zero_fisher_leaves_grads(rng):
    net = BlockNetwork.init(4, [5, 5], 3, rng)
    state = EwcState.empty(net)
    _perturb(net, rng)
    grads = _zero_grads(net)
    for g in grads.flat():
        g += rng.normal(size=g.shape)
    pen = ewc_penalized_grads(grads, net, state)
    assert all(a.tobytes() == b.tobytes() for a, b in zip(pen.flat(), grads.flat()))


def test_ewc_decayed_accumulation(rng):
    net = BlockNetwork.init(4, [5, 5], 3, rng)
    x, y = rng.normal(size=(10, 4)), rng.integers(0, 3, size=10)
    f = empirical_fisher(net, x, y)
    state = EwcState.empty(net, gamma=0.5)
    ewc_consolidate(net, x, y, state)
    ewc_consolidate(net, x, y, state)
    for a, b in zip(state.fisher, f):
        np.testing.assert_allclose(a, 1.5 * b, rtol=1e-14)
    assert state.consolidations == 2


def test_ewc_penalty_gradient_finite_differences(rng):
    net = BlockNetwork.init(3, [3, 3], 2, rng)
    state = EwcState.empty(net, lam=7.0)
    ewc_consolidate(net, rng.normal(size=(6, 3)), rng.integers(0, 2, size=6), state)
    _perturb(net, rng)
    analytic = ewc_penalized_grads(_zero_grads(net), net, state).flat()
    numeric = central_diff(lambda: ewc_penalty(net, state), net.parameters())
    for a, n in zip(analytic, numeric):
        assert rel_err(a, n) < 1e-5


def test_si_scalar_example():
    state = SiState([np.array([0.0])], [np.array([0.0])], [np.array([0.0])], xi=0.1)
    state.w = [np.array([0.4])]
    si_consolidate(state, [np.array([-0.2])])
    assert state.omega[0][0] == pytest.approx(0.4 / 0.14, abs=1e-12)
    assert state.w[0][0] == 0.0


def test_si_quadratic_three_steps():
    # loss theta^2 / 2, so g = theta; plain SGD lr 0.1 from theta = 1
    theta = np.array([1.0])
    state = SiState([np.zeros(1)], [np.zeros(1)], [theta.copy()], xi=0.1)
    for _ in range(3):
        g = theta.copy()
        new = theta - 0.1 * g
        si_accumulate(state, [g], [new - theta])
        theta = new
    assert theta[0] == pytest.approx(0.729, abs=1e-15)
    expected_w = 1.0 * 0.1 + 0.9 * 0.09 + 0.81 * 0.081
    assert state.w[0][0] == pytest.approx(expected_w, abs=1e-12)
    si_consolidate(state, [theta])
    assert state.omega[0][0] == pytest.approx(0.24661 / (0.271**2 + 0.1), abs=1e-12)


def test_si_negative_path_adds_no_importance():
    state = SiState([np.array([-0.3])], [np.array([0.5])], [np.zeros(1)])
    si_consolidate(state, [np.array([1.0])])
    assert state.omega[0][0] == 0.5


def test_si_penalty_and_gradient(rng):
    net = BlockNetwork.init(3, [3, 3], 2, rng)
    state = SiState.empty(net, c=0.3)
    assert si_penalty(net, state) == 0.0
    state.omega = [np.abs(rng.normal(size=p.shape)) for p in net.parameters()]
    _perturb(net, rng)
    analytic = si_penalized_grads(_zero_grads(net), net, state).flat()
    numeric = central_diff(lambda: si_penalty(net, state), net.parameters())
    for a, n in zip(analytic, numeric):
        assert rel_err(a, n) < 1e-5


def test_shape_mismatch_raises(rng):
    net = BlockNetwork.init(3, [3, 3], 2, rng)
    state = SiState.empty(net)
    with pytest.raises(ValueError):
        si_accumulate(state, [np.zeros(2)], [np.zeros(2)])
