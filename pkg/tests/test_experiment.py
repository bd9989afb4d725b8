from dataclasses import fields, replace

import numpy as np
import pytest

from djam.engine import Schedule, init_state, run_djam
from djam.errors import ConfigError, ZeroNormSolutionComponent
from djam.experiment import (
    ExperimentConfig,
    check_instance,
    field_objective,
    format_config,
    generate_instance,
    instance_losses,
    monte_carlo,
    moving_average,
    parse_config,
    precision_matrix,
    problem_objective,
    relative_error_series,
    smooth_until_floor,
    solve_instance,
)
from djam.losses import huber

SMALL = ExperimentConfig(n=12, trials=3, rounds=400, topology_radius=0.45)


def same_instance(a, b):
    for f in fields(a):
        x, y = getattr(a, f.name), getattr(b, f.name)
        if isinstance(x, np.ndarray):
            assert np.array_equal(x, y), f.name
        elif f.name == "net":
            assert x.edges == y.edges and x.weights == y.weights
        else:
            assert x == y, f.name


def test_instance_deterministic():
    same_instance(generate_instance(ExperimentConfig()), generate_instance(ExperimentConfig()))


def test_instance_seed_matters():
    a, b = generate_instance(ExperimentConfig(seed=1)), generate_instance(ExperimentConfig(seed=2))
    assert not np.array_equal(a.y, b.y)


@pytest.mark.parametrize("seed", range(4))
def test_precision_structure(seed):
    inst = generate_instance(ExperimentConfig(seed=seed))
    assert set(inst.coupling) == set(inst.net.edges)
    P = precision_matrix(inst)
    assert np.linalg.eigvalsh(P)[0] > 0
    check_instance(inst)


def test_losses_from_instance():
    inst = generate_instance(ExperimentConfig())
    for i, f in enumerate(instance_losses(inst)):
        assert f.strong_convexity == inst.sigma_diag[i]
        assert f.value(np.array([inst.y[i]])) == pytest.approx(0.5 * inst.sigma_diag[i] * inst.y[i] ** 2)


def test_objective_forms_agree():
    inst = generate_instance(ExperimentConfig())
    losses = instance_losses(inst)
    rng = np.random.default_rng(0)
    for _ in range(10):
        th = rng.normal(0, 2, inst.net.n)
        direct = 0.5 * sum(w * (th[i] - th[j]) ** 2 for (i, j), w in inst.coupling.items())
        direct += sum(huber(inst.y[i] - th[i], inst.delta) + 0.5 * inst.sigma_diag[i] * th[i] ** 2 for i in range(inst.net.n))
        assert problem_objective(inst.net, losses, th) == pytest.approx(direct, rel=1e-13)
        assert field_objective(inst, th) == pytest.approx(direct, rel=1e-13)


def test_relative_error_examples():
    assert relative_error_series([[[1.0]]], [[2.0]])[0] == 0.5
    star = np.array([[1.0], [-3.0]])
    assert not relative_error_series(np.stack([star, star]), star).any()
    with pytest.raises(ZeroNormSolutionComponent):
        relative_error_series([[[1.0], [1.0]]], [[0.0], [1.0]])


def test_relative_error_brute_force():
    rng = np.random.default_rng(1)
    models, star = rng.normal(size=(7, 5, 2)), rng.normal(size=(5, 2))
    want = [np.mean([np.linalg.norm(models[t, i] - star[i]) / np.linalg.norm(star[i]) for i in range(5)]) for t in range(7)]
    np.testing.assert_allclose(relative_error_series(models, star), want, rtol=1e-14)


def test_single_trial_matches_run():
    cfg = replace(SMALL, trials=1)
    inst, sol = solve_instance(cfg)
    agg = monte_carlo(cfg, "djam", instance=(inst, sol))
    losses = instance_losses(inst)
    s = Schedule.uniform(inst.net, cfg.seed)
    _, tr = run_djam(init_state(inst.net), inst.net, losses, s, cfg.rounds, sol.theta_star, rng=s.rng(0))
    np.testing.assert_allclose(agg.mean_rel_error, tr.mean_rel_error, rtol=1e-9, atol=1e-14)


def test_monte_carlo_deterministic():
    a, b = monte_carlo(SMALL), monte_carlo(SMALL)
    assert np.array_equal(a.mean_rel_error, b.mean_rel_error)
    c = monte_carlo(SMALL, "admm", 1.0)
    assert c.rho == 1.0 and c.mean_rel_error.shape == a.mean_rel_error.shape


def test_record_stride():
    agg = monte_carlo(replace(SMALL, rounds=450, output_every=100))
    assert agg.rounds.tolist() == [100, 200, 300, 400, 450]


def test_parse_config():
    cfg = parse_config("# comment\nn = 10\nadmm.rhos = 1, 2\noutput.per_trial = true\ninit.policy = constant:0.5\n")
    assert cfg.n == 10 and cfg.rhos == (1.0, 2.0) and cfg.output_per_trial and cfg.init_policy == "constant:0.5"
    assert parse_config(format_config(cfg)) == cfg


@pytest.mark.parametrize("text", ["bogus = 1", "n = 0", "huber.delta = -1", "topology.kind = torus", "init.policy = ones", "n"])
def test_parse_config_errors(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_moving_average():
    np.testing.assert_allclose(moving_average(np.arange(7.0), 5), [2.0, 3.0, 4.0])
    assert smooth_until_floor(np.geomspace(1, 1e-9, 100), 1e-8)
    bump = np.r_[np.geomspace(1, 0.5, 20), 0.6, np.geomspace(0.5, 1e-9, 50)]
    assert not smooth_until_floor(bump, 1e-8) and smooth_until_floor(bump, 1e-8, slack=0.5)
    assert not smooth_until_floor(np.r_[np.ones(10), 2 * np.ones(10), 1e-9 * np.ones(5)], 1e-8)
