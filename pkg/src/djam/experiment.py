"""Field-estimation benchmark and Monte Carlo harness.

Agents sit at random points of the unit square and estimate a scalar field
at their own location. The field has a Gaussian prior whose precision is a
weighted graph Laplacian plus a positive diagonal,

    theta^T (L + D) theta = sum_{i~j} W_ij (theta_i - theta_j)^2 + sum_i d_i theta_i^2,

so the Huber MAP problem has exactly the pairwise-plus-personal form solved
by the gossip engine, with ``W`` as coupling weights and personal losses
``huber(y_i - theta_i) + d_i/2 theta_i^2``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np
from scipy.linalg import solve_triangular

from djam.admm import run_admm_batch
from djam.engine import Schedule, run_djam_batch
from djam.errors import (
    ConfigError,
    DjamError,
    DisconnectedGraph,
    FactorizationFailure,
    InvalidTopology,
    ZeroNormSolutionComponent,
)
from djam.losses import HuberFieldLoss, huber
from djam.network import Network, build_network, read_edge_list
from djam.oracle import Solution, solve_sync_jacobi

log = logging.getLogger(__name__)

ORACLE_TOL = 1e-13
WEIGHT_RANGE = (0.5, 1.5)
SIGMA_RANGE = (0.5, 1.5)
_INSTANCE_KEY = 0x1D5EED
_MAX_GRAPH_ATTEMPTS = 1000
_MAX_INSTANCE_ATTEMPTS = 100

__all__ = [
    "ExperimentConfig",
    "FieldInstance",
    "AggregateTrace",
    "load_config",
    "parse_config",
    "generate_instance",
    "instance_losses",
    "precision_matrix",
    "field_objective",
    "problem_objective",
    "relative_error_series",
    "solve_instance",
    "monte_carlo",
]


@dataclass(frozen=True)
class ExperimentConfig:
    n: int = 30
    topology_kind: str = "rgg"
    topology_radius: float = 0.3
    topology_file: str | None = None
    seed: int = 0
    trials: int = 100
    rounds: int = 200_000
    algorithm: str = "djam"
    rhos: tuple[float, ...] = (0.1, 0.316, 1.0, 3.16, 10.0)
    noise_base: float = 0.1
    noise_outlier_prob: float = 0.1
    noise_outlier_scale: float = 1.0
    huber_delta: float = 0.3
    init_policy: str = "zeros"
    output_every: int = 1
    output_per_trial: bool = False

    def __post_init__(self):
        if self.n < 1:
            raise ConfigError("n must be >= 1")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if self.rounds < 0:
            raise ConfigError("rounds must be >= 0")
        if self.output_every < 1:
            raise ConfigError("output.every must be >= 1")
        if self.topology_kind not in ("rgg", "path", "ring", "complete", "file"):
            raise ConfigError(f"unknown topology.kind {self.topology_kind!r}")
        if self.topology_kind == "file" and not self.topology_file:
            raise ConfigError("topology.kind = file needs topology.file")
        if self.algorithm not in ("djam", "admm", "both"):
            raise ConfigError(f"unknown algorithm {self.algorithm!r}")
        if not all(r > 0 for r in self.rhos):
            raise ConfigError("admm.rhos must all be positive")
        if self.noise_base < 0 or self.noise_outlier_scale < 0 or not 0 <= self.noise_outlier_prob <= 1:
            raise ConfigError("invalid noise parameters")
        if self.huber_delta <= 0:
            raise ConfigError("huber.delta must be positive")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        _parse_init(self.init_policy)


# config key -> (field name, parser)
_KEYS = {
    "n": ("n", int),
    "topology.kind": ("topology_kind", str),
    "topology.radius": ("topology_radius", float),
    "topology.file": ("topology_file", str),
    "seed": ("seed", int),
    "trials": ("trials", int),
    "rounds": ("rounds", int),
    "algorithm": ("algorithm", str),
    "admm.rhos": ("rhos", lambda v: tuple(float(x) for x in v.split(",") if x.strip())),
    "noise.base": ("noise_base", float),
    "noise.outlier_prob": ("noise_outlier_prob", float),
    "noise.outlier_scale": ("noise_outlier_scale", float),
    "huber.delta": ("huber_delta", float),
    "init.policy": ("init_policy", str),
    "output.every": ("output_every", int),
    "output.per_trial": ("output_per_trial", lambda v: v.strip().lower() in ("1", "true", "yes", "on")),
}

CONFIG_KEYS = tuple(_KEYS)


def _parse_init(policy: str):
    if policy == "zeros":
        return "zeros"
    if policy.startswith("constant:"):
        try:
            return float(policy.split(":", 1)[1])
        except ValueError:
            pass
    raise ConfigError(f"init.policy must be 'zeros' or 'constant:<c>', got {policy!r}")


def parse_config(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Parse ``key = value`` lines (``#`` starts a comment). Unknown keys are errors."""
    updates = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        name, conv = _KEYS[key]
        try:
            updates[name] = conv(value)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {value!r}") from exc
    return replace(base or ExperimentConfig(), **updates)


def load_config(path: str | Path | None, base: ExperimentConfig | None = None) -> ExperimentConfig:
    if path is None:
        return base or ExperimentConfig()
    return parse_config(Path(path).read_text(), base)


def format_config(cfg: ExperimentConfig) -> str:
    by_field = {name: key for key, (name, _) in _KEYS.items()}
    lines = []
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if v is None:
            continue
        if isinstance(v, tuple):
            v = ",".join(repr(x) for x in v)
        elif isinstance(v, bool):
            v = str(v).lower()
        lines.append(f"{by_field[f.name]} = {v}")
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class FieldInstance:
    net: Network
    sigma_diag: np.ndarray
    theta_true: np.ndarray
    y: np.ndarray
    delta: float
    noise: tuple[float, float, float]  # base scale, outlier probability, outlier scale
    positions: np.ndarray | None = None
    attempt: int = 0

    @property
    def coupling(self) -> dict[tuple[int, int], float]:
        return dict(zip(self.net.edges, self.net.weights))


def _instance_rng(seed: int, attempt: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=(_INSTANCE_KEY, attempt))
    return np.random.Generator(np.random.PCG64(ss))


def _topology(cfg: ExperimentConfig, rng: np.random.Generator):
    n = cfg.n
    if cfg.topology_kind == "file":
        net = read_edge_list(cfg.topology_file, n=n)
        return list(net.edges), None
    if cfg.topology_kind == "path":
        return [(i, i + 1) for i in range(n - 1)], None
    if cfg.topology_kind == "ring":
        if n < 3:
            raise InvalidTopology("a ring needs n >= 3")
        return [(i, (i + 1) % n) for i in range(n)], None
    if cfg.topology_kind == "complete":
        return [(i, j) for i in range(n) for j in range(i + 1, n)], None
    # random geometric graph, resampled until connected
    for _ in range(_MAX_GRAPH_ATTEMPTS):
        pos = rng.random((n, 2))
        d = np.linalg.norm(pos[:, None, :] - pos[None, :, :], axis=2)
        pairs = [(i, j) for i in range(n) for j in range(i + 1, n) if d[i, j] <= cfg.topology_radius]
        try:
            build_network(n, 1, [(i, j, 1.0) for i, j in pairs])
        except DisconnectedGraph:
            continue
        return pairs, pos
    raise InvalidTopology(f"no connected geometric graph with radius {cfg.topology_radius} after {_MAX_GRAPH_ATTEMPTS} draws")


def generate_instance(cfg: ExperimentConfig, attempt: int = 0) -> FieldInstance:
    """Draw a field-estimation instance; a pure function of ``(cfg, attempt)``."""
    rng = _instance_rng(cfg.seed, attempt)
    pairs, pos = _topology(cfg, rng)
    pairs = sorted((min(i, j), max(i, j)) for i, j in pairs)
    w = rng.uniform(*WEIGHT_RANGE, size=len(pairs))
    net = build_network(cfg.n, 1, [(i, j, wk) for (i, j), wk in zip(pairs, w)])
    sigma = rng.uniform(*SIGMA_RANGE, size=cfg.n)

    P = np.diag(net.weight_sums + sigma) - net.W
    try:
        chol = np.linalg.cholesky(P)
    except np.linalg.LinAlgError as exc:
        raise FactorizationFailure(f"prior precision is not positive definite: {exc}") from exc
    # chol chol^T = P  =>  chol^{-T} z has covariance P^{-1}
    theta = solve_triangular(chol, rng.standard_normal(cfg.n), lower=True, trans="T")

    outlier = rng.random(cfg.n) < cfg.noise_outlier_prob
    scale = np.where(outlier, cfg.noise_outlier_scale, cfg.noise_base)
    y = theta + scale * rng.standard_normal(cfg.n)
    return FieldInstance(
        net=net,
        sigma_diag=sigma,
        theta_true=theta,
        y=y,
        delta=cfg.huber_delta,
        noise=(cfg.noise_base, cfg.noise_outlier_prob, cfg.noise_outlier_scale),
        positions=pos,
        attempt=attempt,
    )


def precision_matrix(inst: FieldInstance) -> np.ndarray:
    return np.diag(inst.net.weight_sums + inst.sigma_diag) - inst.net.W


def instance_losses(inst: FieldInstance) -> list[HuberFieldLoss]:
    return [HuberFieldLoss(float(y), float(s), inst.delta) for y, s in zip(inst.y, inst.sigma_diag)]


def field_objective(inst: FieldInstance, theta) -> float:
    """Negative log-posterior (up to constants), written in the prior/likelihood form."""
    theta = np.asarray(theta, dtype=float).ravel()
    prior = sum(w * (theta[i] - theta[j]) ** 2 for (i, j), w in inst.coupling.items())
    prior += float(np.sum(inst.sigma_diag * theta**2))
    return 0.5 * prior + float(np.sum(huber(inst.y - theta, inst.delta)))


def problem_objective(net: Network, losses, theta) -> float:
    """``1/2 sum_{i<j} W_ij ||theta_i - theta_j||^2 + sum_i f_i(theta_i)``."""
    theta = np.asarray(theta, dtype=float).reshape(net.n, net.p)
    coupling = sum(w * float(np.sum((theta[i] - theta[j]) ** 2)) for (i, j), w in zip(net.edges, net.weights))
    return 0.5 * coupling + sum(f.value(theta[i]) for i, f in enumerate(losses))


def relative_error_series(models, theta_star) -> np.ndarray:
    """Per-round mean over agents of ``||models[t, i] - theta_star[i]|| / ||theta_star[i]||``.

    ``models`` has shape ``(rounds, n, p)`` (or ``(rounds, n)`` for ``p = 1``).
    """
    ts = np.asarray(theta_star, dtype=float)
    models = np.asarray(models, dtype=float)
    if ts.ndim == 1:
        ts = ts[:, None]
    if models.ndim == 2:
        models = models[:, :, None]
    ref = np.linalg.norm(ts, axis=1)
    if np.any(ref == 0):
        raise ZeroNormSolutionComponent(f"agents {np.flatnonzero(ref == 0).tolist()} have a zero solution block")
    return np.mean(np.linalg.norm(models - ts[None], axis=2) / ref[None], axis=1)


def solve_instance(cfg: ExperimentConfig) -> tuple[FieldInstance, Solution]:
    """Generate the instance and its reference solution.

    Instances whose solution has an exactly-zero component (relative error
    undefined) are redrawn with the next attempt index.
    """
    for attempt in range(_MAX_INSTANCE_ATTEMPTS):
        inst = generate_instance(cfg, attempt)
        sol = solve_sync_jacobi(inst.net, instance_losses(inst), tol=ORACLE_TOL)
        if np.all(np.linalg.norm(sol.theta_star, axis=1) > 0):
            return inst, sol
        log.warning("instance attempt %d has a zero solution component; redrawing", attempt)
    raise ZeroNormSolutionComponent(f"no usable instance in {_MAX_INSTANCE_ATTEMPTS} attempts")


@dataclass
class AggregateTrace:
    """Trial-averaged mean relative error of one algorithm on one instance."""

    algorithm: str
    rho: float | None
    rounds: np.ndarray
    mean_rel_error: np.ndarray
    mean_rel_error0: float
    trials: int
    per_trial: np.ndarray | None = None
    edges: np.ndarray | None = None
    epochs: list[list[int]] | None = None
    failed_trials: list[int] = field(default_factory=list)

    def rounds_to(self, level: float) -> int | None:
        """First recorded round with error ``<= level``."""
        hit = np.flatnonzero(self.mean_rel_error <= level)
        return int(self.rounds[hit[0]]) if hit.size else None

    @property
    def terminal(self) -> float:
        return float(self.mean_rel_error[-1]) if self.mean_rel_error.size else self.mean_rel_error0


def _run_batch(algorithm, inst, losses, sol, cfg, rho, trials, offset):
    sched = Schedule.uniform(inst.net, cfg.seed)
    kw = dict(
        init=_parse_init(cfg.init_policy),
        record_every=cfg.output_every,
        per_trial=cfg.output_per_trial,
        trial_offset=offset,
    )
    if algorithm == "djam":
        return run_djam_batch(inst.net, losses, sched, cfg.rounds, trials, sol.theta_star, **kw)
    return run_admm_batch(inst.net, losses, sched, cfg.rounds, trials, sol.theta_star, rho, **kw)


def monte_carlo(
    cfg: ExperimentConfig,
    algorithm: str = "djam",
    rho: float | None = None,
    instance: tuple[FieldInstance, Solution] | None = None,
) -> AggregateTrace:
    """Average the relative-error curve over ``cfg.trials`` edge-draw streams.

    Trials share one instance and differ only in their edge sequence (trial
    ``k`` uses stream ``k`` of ``cfg.seed``). If the lockstep run fails, trials
    are retried one by one; failing trials are logged and excluded.
    """
    if algorithm not in ("djam", "admm"):
        raise ValueError(f"unknown algorithm {algorithm!r}")
    if algorithm == "admm" and rho is None:
        raise ValueError("ADMM needs rho")
    inst, sol = instance if instance is not None else solve_instance(cfg)
    losses = instance_losses(inst)
    try:
        res = _run_batch(algorithm, inst, losses, sol, cfg, rho, cfg.trials, 0)
        failed: list[int] = []
        parts = None
    except DjamError as exc:
        log.error("lockstep run failed (%s); retrying trials individually", exc)
        parts, failed = [], []
        for k in range(cfg.trials):
            try:
                parts.append(_run_batch(algorithm, inst, losses, sol, cfg, rho, 1, k))
            except DjamError as e:
                log.error("trial %d failed: %s", k + 1, e)
                failed.append(k)
        if not parts:
            raise
    if parts is not None:
        res = parts[0]
        curve = np.mean([p.mean_rel_error for p in parts], axis=0)
        per = np.concatenate([p.per_trial for p in parts]) if cfg.output_per_trial else None
        edges = np.concatenate([p.edges for p in parts]) if cfg.output_per_trial else None
        epochs = sum((p.epochs for p in parts), []) if cfg.output_per_trial else None
        return AggregateTrace(algorithm, rho, res.rounds, curve, res.mean_rel_error0, len(parts), per, edges, epochs, failed)
    return AggregateTrace(
        algorithm, rho, res.rounds, res.mean_rel_error, res.mean_rel_error0, cfg.trials, res.per_trial, res.edges, res.epochs
    )


def moving_average(x: np.ndarray, window: int = 5) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.size < window:
        return np.empty(0)
    c = np.cumsum(np.concatenate([[0.0], x]))
    return (c[window:] - c[:-window]) / window


def smooth_until_floor(values: np.ndarray, floor: float, window: int = 5, slack: float = 0.0) -> bool:
    """Whether the moving average never rises by more than ``slack`` (relative)
    between consecutive windows, up to the first window at or below ``floor``."""
    ma = moving_average(values, window)
    hit = np.flatnonzero(ma <= floor)
    stop = hit[0] if hit.size else ma.size - 1
    seg = ma[: stop + 1]
    return bool(np.all(seg[1:] <= (1.0 + slack) * seg[:-1]))


def check_instance(inst: FieldInstance) -> None:
    """Assert the structural invariants of an instance (sparsity, positive definiteness)."""
    P = precision_matrix(inst)
    off = (P != 0) & ~np.eye(inst.net.n, dtype=bool)
    if not np.array_equal(off, inst.net.W > 0):
        raise FactorizationFailure("precision sparsity differs from the network")
    if np.linalg.eigvalsh(P)[0] <= 0:
        raise FactorizationFailure("precision is not positive definite")
    if not math.isclose(float(np.abs(P - P.T).max()), 0.0, abs_tol=0.0):
        raise FactorizationFailure("precision is not symmetric")
