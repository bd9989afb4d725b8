import numpy as np
import pytest

from djam.losses import HuberFieldLoss, QuadraticLoss
from djam.network import build_network

ACCEPTANCE: dict[str, tuple[bool, str]] = {}


def record(name: str, ok: bool, detail: str = "") -> None:
    ACCEPTANCE[name] = (ok, detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[name]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")


def random_connected(rng, n, extra=0.2, wlo=0.2, whi=2.0):
    """Random spanning tree plus Bernoulli(extra) chords, uniform weights."""
    perm = rng.permutation(n)
    pairs = {tuple(sorted((int(perm[k]), int(perm[rng.integers(k)])))) for k in range(1, n)}
    for i in range(n):
        for j in range(i + 1, n):
            if rng.random() < extra:
                pairs.add((i, j))
    return sorted(pairs), [float(rng.uniform(wlo, whi)) for _ in pairs]


def random_spd(rng, p, lo=0.5, hi=3.0):
    q, _ = np.linalg.qr(rng.normal(size=(p, p)))
    A = q @ np.diag(rng.uniform(lo, hi, p)) @ q.T
    return 0.5 * (A + A.T)


def mixed_instance(rng, n):
    """Scalar instance mixing quadratic and Huber losses."""
    pairs, w = random_connected(rng, n)
    net = build_network(n, 1, [(i, j, wt) for (i, j), wt in zip(pairs, w)])
    losses = []
    for _ in range(n):
        if rng.random() < 0.5:
            losses.append(QuadraticLoss([[rng.uniform(0.3, 3.0)]], [rng.normal(0, 2)]))
        else:
            y = rng.normal(0, 2) + (rng.normal(0, 10) if rng.random() < 0.2 else 0.0)
            losses.append(HuberFieldLoss(y, rng.uniform(0.3, 2.0), rng.uniform(0.1, 1.0)))
    return net, losses


def quadratic_instance(rng, n, p):
    pairs, w = random_connected(rng, n, extra=0.25, wlo=0.1, whi=1.0)
    net = build_network(n, p, [(i, j, wt) for (i, j), wt in zip(pairs, w)])
    losses = [QuadraticLoss(random_spd(rng, p, 0.5, 3.0), rng.normal(0, 2, p)) for _ in range(n)]
    return net, losses


@pytest.fixture
def triangle():
    return build_network(3, 1, [(0, 1, 1.0), (1, 2, 1.0), (0, 2, 1.0)])


@pytest.fixture
def pair():
    """Two agents, unit weight, A = 1, y = (0, 2)."""
    net = build_network(2, 1, [(0, 1, 1.0)])
    return net, [QuadraticLoss([[1.0]], [0.0]), QuadraticLoss([[1.0]], [2.0])]
