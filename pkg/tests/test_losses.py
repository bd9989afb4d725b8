import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from djam.errors import DimensionMismatch, MissingNeighborModel, NonFiniteInput
from djam.losses import (
    HuberFieldLoss,
    QuadraticLoss,
    huber_resolvent_batch,
    local_solve,
    loss_eval,
    loss_grad,
    resolvent,
)
from djam.network import build_network

from conftest import random_spd

H1 = HuberFieldLoss(0.0, 1.0, 1.0)


def grid_argmin(fun, lo, hi):
    """Dense grid then ternary refinement; independent of the Newton solver."""
    xs = np.linspace(lo, hi, 200_001)
    vals = np.array([fun(x) for x in xs])
    k = int(vals.argmin())
    a, b = xs[max(k - 1, 0)], xs[min(k + 1, xs.size - 1)]
    for _ in range(200):
        m1, m2 = a + (b - a) / 3, b - (b - a) / 3
        if fun(m1) < fun(m2):
            b = m2
        else:
            a = m1
    return 0.5 * (a + b)


@pytest.mark.parametrize("theta, value", [(0.0, 0.0), (0.5, 0.25), (3.0, 7.0)])
def test_huber_value(theta, value):
    assert loss_eval(H1, [theta]) == pytest.approx(value, abs=1e-15)


@pytest.mark.parametrize("theta, g", [(0.5, 1.0), (3.0, 4.0), (-3.0, -4.0)])
def test_huber_grad(theta, g):
    assert loss_grad(H1, [theta])[0] == pytest.approx(g, abs=1e-15)


def test_quadratic_grad_vanishes_at_y():
    rng = np.random.default_rng(0)
    f = QuadraticLoss(random_spd(rng, 3), [1.0, -2.0, 0.5])
    np.testing.assert_array_equal(loss_grad(f, [1.0, -2.0, 0.5]), np.zeros(3))


def test_constants():
    f = QuadraticLoss(np.diag([0.5, 4.0]), [0.0, 0.0])
    assert f.strong_convexity == pytest.approx(0.5) and f.grad_lipschitz == pytest.approx(4.0)
    h = HuberFieldLoss(1.0, 0.7, 0.3)
    assert h.strong_convexity == 0.7 and h.grad_lipschitz == pytest.approx(1.7)


@pytest.mark.parametrize(
    "bad",
    [lambda: QuadraticLoss([[1.0, 2.0], [0.0, 1.0]], [0, 0]), lambda: QuadraticLoss([[-1.0]], [0.0]),
     lambda: HuberFieldLoss(0.0, 0.0, 1.0), lambda: HuberFieldLoss(0.0, 1.0, 0.0)],
)
def test_invalid_losses(bad):
    with pytest.raises(ValueError):
        bad()


def test_input_checks():
    with pytest.raises(DimensionMismatch):
        loss_eval(H1, [1.0, 2.0])
    with pytest.raises(NonFiniteInput):
        loss_grad(H1, [np.nan])


def test_resolvent_quadratic():
    f = QuadraticLoss([[1.0]], [2.0])
    assert resolvent(f, 1.0, [0.0])[0] == pytest.approx(1.0, abs=1e-14)


def test_resolvent_huber_against_grid():
    f = HuberFieldLoss(10.0, 1.0, 1.0)
    x = resolvent(f, 1.0, [0.0])[0]
    ref = grid_argmin(lambda t: 0.5 * t * t + f.value(np.array([t])), -20, 20)
    assert x == pytest.approx(0.5, abs=1e-14)
    assert ref == pytest.approx(0.5, abs=1e-7)


@pytest.mark.parametrize("seed", range(5))
def test_resolvent_random_huber_against_grid(seed):
    rng = np.random.default_rng(seed)
    f = HuberFieldLoss(rng.normal(0, 3), rng.uniform(0.2, 2), rng.uniform(0.1, 1))
    w, s = rng.uniform(0, 5), rng.normal(0, 3)
    ref = grid_argmin(lambda t: 0.5 * w * t * t - s * t + f.value(np.array([t])), -30, 30)
    assert resolvent(f, w, [s])[0] == pytest.approx(ref, abs=1e-7)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 4), st.sampled_from([0.0, 0.5, 3.0]))
def test_resolvent_roundtrip(seed, p, w):
    rng = np.random.default_rng(seed)
    if p == 1 and seed % 2:
        f = HuberFieldLoss(rng.normal(0, 3), rng.uniform(0.2, 2), rng.uniform(0.1, 1))
    else:
        f = QuadraticLoss(random_spd(rng, p), rng.normal(0, 2, p))
    x0 = rng.normal(0, 5, p)
    s = f.grad(x0) + w * x0
    np.testing.assert_allclose(resolvent(f, w, s), x0, rtol=0, atol=1e-10 * (1 + np.abs(x0).max()))


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([0.0, 1.0, 10.0]))
def test_resolvent_lipschitz(seed, w):
    rng = np.random.default_rng(seed)
    f = HuberFieldLoss(rng.normal(0, 3), rng.uniform(0.2, 2), rng.uniform(0.1, 1))
    a, b = rng.normal(0, 5, 1), rng.normal(0, 5, 1)
    gap = np.linalg.norm(resolvent(f, w, a) - resolvent(f, w, b))
    assert gap <= np.linalg.norm(a - b) / (f.strong_convexity + w) + 2e-12


@pytest.mark.parametrize("kind", ["quadratic", "huber"])
def test_convexity_inequalities(kind):
    rng = np.random.default_rng(11)
    for _ in range(1000):
        if kind == "quadratic":
            p = int(rng.integers(1, 4))
            f = QuadraticLoss(random_spd(rng, p), rng.normal(0, 2, p))
        else:
            p = 1
            f = HuberFieldLoss(rng.normal(0, 3), rng.uniform(0.2, 2), rng.uniform(0.1, 1))
        x, y = rng.normal(0, 4, p), rng.normal(0, 4, p)
        dg = f.grad(x) - f.grad(y)
        d = x - y
        assert dg @ d >= f.strong_convexity * (d @ d) - 1e-10
        assert np.linalg.norm(dg) <= f.grad_lipschitz * np.linalg.norm(d) + 1e-10


def test_local_solve_examples():
    net = build_network(3, 1, [(0, 1, 1.0), (0, 2, 1.0)])
    quad = [QuadraticLoss([[1.0]], [2.0])] * 3
    assert local_solve(net, quad, 0, {1: [1.0], 2: [3.0]})[0] == pytest.approx(2.0, abs=1e-14)
    assert local_solve(net, quad, 0, {1: [2.0], 2: [2.0]})[0] == pytest.approx(2.0, abs=1e-14)
    pair = build_network(2, 1, [(0, 1, 1.0)])
    hub = [HuberFieldLoss(10.0, 1.0, 1.0)] * 2
    assert local_solve(pair, hub, 0, {1: [0.0]})[0] == pytest.approx(0.5, abs=1e-14)
    with pytest.raises(MissingNeighborModel):
        local_solve(net, quad, 0, {1: [1.0]})


def test_local_solve_first_order_condition():
    rng = np.random.default_rng(5)
    net = build_network(4, 2, [(0, 1, 0.7), (0, 2, 1.3), (0, 3, 0.4)])
    losses = [QuadraticLoss(random_spd(rng, 2), rng.normal(size=2)) for _ in range(4)]
    models = {k: rng.normal(size=2) for k in (1, 2, 3)}
    x = local_solve(net, losses, 0, models)
    res = losses[0].grad(x) + sum(net.W[0, k] * (x - v) for k, v in models.items())
    assert np.linalg.norm(res) < 1e-11


def test_huber_batch_matches_scalar():
    rng = np.random.default_rng(9)
    k = 2000
    y, sig, dl = rng.normal(0, 3, k), rng.uniform(0.2, 2, k), rng.uniform(0.1, 1, k)
    w, s = rng.uniform(0, 5, k), rng.normal(0, 5, k)
    got = huber_resolvent_batch(y, sig, dl, w, s)
    want = [resolvent(HuberFieldLoss(*a), b, [c])[0] for a, b, c in zip(zip(y, sig, dl), w, s)]
    np.testing.assert_allclose(got, want, rtol=0, atol=1e-12)
