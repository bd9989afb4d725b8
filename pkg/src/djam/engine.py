"""Asynchronous single-edge gossip engine for personalized models.

Each agent ``i`` stores a copy ``tables[i, k]`` of the model of every neighbor
``k``. One round activates one edge ``(i, j)``: agent ``j`` solves its local
problem from its own table and sends the result to ``i`` (stored as
``tables[i, j]``), and symmetrically. Personal models are never stored; they
are recomputed from the tables on demand (:func:`own_model`).

Rounds are counted from 1 in traces: round ``t`` is the state after the
``t``-th edge activation.
"""

from __future__ import annotations

import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np

from djam.errors import (
    DimensionMismatch,
    InvalidSchedule,
    NonFiniteInput,
    UnknownEdge,
    ZeroNormSolutionComponent,
)
from djam.losses import PersonalLoss, _LossBank, resolvent
from djam.network import Edge, Network

__all__ = [
    "SimState",
    "Schedule",
    "Trace",
    "BatchResult",
    "EpochTracker",
    "make_rng",
    "init_state",
    "draw_edge",
    "draw_edge_indices",
    "gossip_round",
    "own_model",
    "own_models",
    "run_djam",
    "run_djam_batch",
    "max_error",
    "mean_relative_error",
    "epoch_boundaries",
    "contraction_factor",
]


@dataclass
class SimState:
    """Neighbor-model tables and the round counter.

    ``tables`` has shape ``(n, n, p)``; ``tables[i, k]`` is agent ``i``'s copy
    of agent ``k``'s model and is meaningful only when ``k`` is a neighbor of
    ``i`` (other slots are kept at zero).
    """

    tables: np.ndarray
    round: int = 0

    def copy(self) -> SimState:
        return SimState(self.tables.copy(), self.round)

    def entry(self, i: int, k: int) -> np.ndarray:
        return self.tables[i, k]


def make_rng(seed: int, trial: int | None = None) -> np.random.Generator:
    """PCG64 generator; trial streams are spawned children of ``seed``.

    ``make_rng(s, k)`` yields the same stream as ``SeedSequence(s).spawn(k+1)[k]``.
    """
    spawn_key = () if trial is None else (int(trial),)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=spawn_key)))


@dataclass(frozen=True)
class Schedule:
    """Edge-activation distribution: ``probs[k]`` is the chance of ``net.edges[k]``."""

    edges: tuple[Edge, ...]
    probs: np.ndarray
    seed: int = 0
    _cdf: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=float)
        if probs.shape != (len(self.edges),):
            raise InvalidSchedule(f"need one probability per edge ({len(self.edges)}), got {probs.shape}")
        if not np.all(np.isfinite(probs)) or np.any(probs <= 0):
            raise InvalidSchedule("every edge needs a strictly positive probability")
        if probs.size and abs(probs.sum() - 1.0) > 1e-12:
            raise InvalidSchedule(f"probabilities sum to {probs.sum()!r}, not 1")
        if not (0 <= int(self.seed) < 2**64):
            raise InvalidSchedule("seed must fit in 64 unsigned bits")
        probs.setflags(write=False)
        cdf = np.cumsum(probs)
        if cdf.size:
            cdf[-1] = 1.0
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "_cdf", cdf)

    @classmethod
    def uniform(cls, net: Network, seed: int = 0) -> Schedule:
        m = net.num_edges
        return cls(net.edges, np.full(m, 1.0 / m) if m else np.zeros(0), seed)

    @classmethod
    def from_weights(cls, net: Network, weights: Sequence[float], seed: int = 0) -> Schedule:
        """Normalize nonnegative per-edge scores into a schedule."""
        w = np.asarray(weights, dtype=float)
        return cls(net.edges, w / w.sum(), seed)

    def rng(self, trial: int | None = None) -> np.random.Generator:
        return make_rng(self.seed, trial)


def draw_edge_indices(sched: Schedule, rng: np.random.Generator, size: int) -> np.ndarray:
    """Draw ``size`` edge indices; identical to ``size`` successive :func:`draw_edge` calls."""
    if not sched.edges:
        raise InvalidSchedule("network has no edges to draw")
    u = rng.random(size)
    return np.minimum(np.searchsorted(sched._cdf, u, side="right"), len(sched.edges) - 1)


def draw_edge(sched: Schedule, rng: np.random.Generator) -> Edge:
    return sched.edges[int(draw_edge_indices(sched, rng, 1)[0])]


def init_state(net: Network, policy="zeros") -> SimState:
    """Initial tables.

    ``policy`` is one of:

    * ``"zeros"``;
    * a real constant ``c`` (every entry equals ``c``);
    * an ``(n, p)`` array ``v``: every copy of agent ``k``'s model starts at ``v[k]``;
    * a mapping ``{(i, k): vector}`` covering every ordered neighbor pair.
    """
    n, p = net.n, net.p
    tables = np.zeros((n, n, p))
    mask = net.W > 0
    if isinstance(policy, str):
        if policy != "zeros":
            raise ValueError(f"unknown init policy {policy!r}")
    elif isinstance(policy, Mapping):
        pairs = {(i, k) for i in range(n) for k in net.neighbors[i]}
        if set(policy) != pairs:
            missing = sorted(pairs - set(policy))
            raise DimensionMismatch(f"init map must cover every neighbor pair; missing {missing[:5]}")
        for (i, k), v in policy.items():
            v = np.atleast_1d(np.asarray(v, dtype=float))
            if v.shape != (p,):
                raise DimensionMismatch(f"init vector for ({i}, {k}) has shape {v.shape}")
            tables[i, k] = v
    elif np.isscalar(policy):
        tables[mask] = float(policy)
    else:
        v = np.asarray(policy, dtype=float).reshape(n, -1) if np.size(policy) == n * p else None
        if v is None or v.shape != (n, p):
            raise DimensionMismatch(f"per-agent init must have shape ({n}, {p})")
        tables = np.where(mask[:, :, None], v[None, :, :], 0.0)
    if not np.all(np.isfinite(tables)):
        raise NonFiniteInput("initial tables must be finite")
    return SimState(tables, 0)


def _local(net: Network, losses: Sequence[PersonalLoss], tables: np.ndarray, j: int) -> np.ndarray:
    return resolvent(losses[j], float(net.weight_sums[j]), net.W[j] @ tables[j])


def own_model(state: SimState, net: Network, losses: Sequence[PersonalLoss], i: int) -> np.ndarray:
    """Agent ``i``'s personal model, computed from its current table."""
    return _local(net, losses, state.tables, i)


def own_models(state: SimState, net: Network, losses: Sequence[PersonalLoss]) -> np.ndarray:
    return np.stack([_local(net, losses, state.tables, i) for i in range(net.n)])


def _apply_round(tables: np.ndarray, net: Network, losses, i: int, j: int) -> None:
    # both messages are computed from the pre-round tables
    to_i = _local(net, losses, tables, j)
    to_j = _local(net, losses, tables, i)
    tables[i, j] = to_i
    tables[j, i] = to_j


def gossip_round(state: SimState, net: Network, losses: Sequence[PersonalLoss], edge: Edge) -> SimState:
    """Activate ``edge`` and return the new state (the input is left untouched)."""
    i, j = edge
    net.edge_index(i, j)
    new = state.copy()
    _apply_round(new.tables, net, losses, i, j)
    new.round += 1
    return new


def _check_star(net: Network, theta_star) -> np.ndarray:
    ts = np.asarray(theta_star, dtype=float).reshape(net.n, -1) if np.size(theta_star) == net.n * net.p else None
    if ts is None or ts.shape != (net.n, net.p):
        raise DimensionMismatch(f"solution must have shape ({net.n}, {net.p})")
    return ts


def max_error(state: SimState, net: Network, theta_star) -> float:
    """Largest distance between a stored neighbor copy and the matching solution block."""
    ts = _check_star(net, theta_star)
    if state.tables.shape != (net.n, net.n, net.p):
        raise DimensionMismatch(f"tables have shape {state.tables.shape}")
    if not net.edges:
        return 0.0
    mask = net.W > 0
    err = np.linalg.norm(state.tables - ts[None, :, :], axis=2)
    return float(err[mask].max())


def mean_relative_error(models: np.ndarray, theta_star: np.ndarray) -> float:
    """Mean over agents of ``||models[i] - theta_star[i]|| / ||theta_star[i]||``."""
    ref = np.linalg.norm(theta_star, axis=-1)
    if np.any(ref == 0):
        raise ZeroNormSolutionComponent(f"agents {np.flatnonzero(ref == 0).tolist()} have a zero solution block")
    return float(np.mean(np.linalg.norm(models - theta_star, axis=-1) / ref))


class EpochTracker:
    """Streaming detector of the rounds by which every edge has fired since the last epoch."""

    def __init__(self, num_edges: int):
        self.num_edges = num_edges
        self._seen = np.zeros(num_edges, dtype=bool)
        self._count = 0
        self.round = 0
        self.boundaries: list[int] = []

    def push(self, edge_index: int) -> bool:
        self.round += 1
        if not self._seen[edge_index]:
            self._seen[edge_index] = True
            self._count += 1
            if self._count == self.num_edges:
                self.boundaries.append(self.round)
                self._seen[:] = False
                self._count = 0
                return True
        return False


def epoch_boundaries(edge_sequence: Sequence[Edge], net: Network) -> list[int]:
    """Rounds ``T_1 < T_2 < ...`` (1-based) at which an epoch completes.

    ``T_{m+1}`` is the first round such that every edge appears among rounds
    ``T_m + 1 .. T_{m+1}``. Incomplete trailing epochs are dropped.
    """
    tracker = EpochTracker(net.num_edges)
    for i, j in edge_sequence:
        tracker.push(net.edge_index(i, j))
    return tracker.boundaries


def contraction_factor(net: Network, losses: Sequence[PersonalLoss]) -> float:
    """``max_i w_i / (m_i + w_i)``, the per-epoch contraction of the max error."""
    return max(
        (float(net.weight_sums[i]) / (losses[i].strong_convexity + float(net.weight_sums[i])) for i in range(net.n)),
        default=0.0,
    )


@dataclass
class Trace:
    """Per-round diagnostics of one run.

    ``V`` and ``mean_rel_error`` are ``None`` when no reference solution was
    supplied. ``epochs`` lists the rounds at which an epoch completed.
    """

    rounds: np.ndarray
    edges: np.ndarray
    V: np.ndarray | None
    mean_rel_error: np.ndarray | None
    epochs: list[int]
    V0: float | None = None
    mean_rel_error0: float | None = None

    def __len__(self):
        return len(self.rounds)

    def epoch_index(self) -> np.ndarray:
        """``m`` at rounds equal to ``T_m``, 0 elsewhere."""
        idx = np.zeros(len(self.rounds), dtype=int)
        for m, t in enumerate(self.epochs, start=1):
            idx[t - self.rounds[0]] = m
        return idx


def run_djam(
    state: SimState,
    net: Network,
    losses: Sequence[PersonalLoss],
    sched: Schedule,
    rounds: int,
    oracle_solution=None,
    rng: np.random.Generator | None = None,
) -> tuple[SimState, Trace]:
    """Run ``rounds`` random activations starting from ``state``.

    The edge stream comes from ``rng`` (default: ``sched.rng()``). With an
    ``oracle_solution`` the trace carries the max error ``V(t)`` and the mean
    relative error of the personal models.
    """
    if rounds < 0:
        raise ValueError("rounds must be >= 0")
    rng = sched.rng() if rng is None else rng
    st = state.copy()
    tables = st.tables
    ts = None if oracle_solution is None else _check_star(net, oracle_solution)

    edge_rows = np.zeros((rounds, 2), dtype=int)
    V = mre = None
    V0 = mre0 = None
    own = None
    if ts is not None:
        V = np.empty(rounds)
        mre = np.empty(rounds)
        V0 = max_error(st, net, ts)
        own = own_models(st, net, losses)
        mre0 = mean_relative_error(own, ts)

    idx = draw_edge_indices(sched, rng, rounds) if rounds else np.zeros(0, dtype=int)
    tracker = EpochTracker(net.num_edges)
    for t in range(rounds):
        i, j = net.edges[idx[t]]
        _apply_round(tables, net, losses, i, j)
        tracker.push(int(idx[t]))
        edge_rows[t] = (i, j)
        if ts is not None:
            own[i] = _local(net, losses, tables, i)
            own[j] = _local(net, losses, tables, j)
            V[t] = max_error(st, net, ts)
            mre[t] = mean_relative_error(own, ts)
    st.round += rounds
    trace = Trace(
        rounds=np.arange(state.round + 1, state.round + rounds + 1),
        edges=edge_rows,
        V=V,
        mean_rel_error=mre,
        epochs=[state.round + b for b in tracker.boundaries],
        V0=V0,
        mean_rel_error0=mre0,
    )
    return st, trace


@dataclass
class BatchResult:
    """Lockstep Monte Carlo output.

    ``mean_rel_error[r]`` is the trial-averaged metric at ``rounds[r]``;
    ``per_trial`` (``trials x len(rounds)``) and ``edges`` are filled only when
    requested.
    """

    rounds: np.ndarray
    mean_rel_error: np.ndarray
    mean_rel_error0: float
    per_trial: np.ndarray | None = None
    edges: np.ndarray | None = None
    epochs: list[list[int]] | None = None
    final_tables: np.ndarray | None = None


def _recorded_rounds(rounds: int, every: int) -> np.ndarray:
    rec = np.arange(every, rounds + 1, every)
    if rounds and (rec.size == 0 or rec[-1] != rounds):
        rec = np.append(rec, rounds)
    return rec


def run_djam_batch(
    net: Network,
    losses: Sequence[PersonalLoss],
    sched: Schedule,
    rounds: int,
    trials: int,
    theta_star,
    init="zeros",
    record_every: int = 1,
    per_trial: bool = False,
    chunk: int = 4096,
    trial_offset: int = 0,
    stop_below: float | None = None,
) -> BatchResult:
    """Run ``trials`` independent copies of :func:`run_djam` in lockstep.

    Trial ``k`` draws its edges from ``sched.rng(k)``, so it reproduces
    ``run_djam(..., rng=sched.rng(k))`` up to floating-point summation order.
    Only the relative-error metric is tracked. With ``stop_below`` the run
    ends at the first recorded round whose aggregate is at or below it.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if record_every < 1:
        raise ValueError("record_every must be >= 1")
    ts = _check_star(net, theta_star)
    ref = np.linalg.norm(ts, axis=1)
    if np.any(ref == 0):
        raise ZeroNormSolutionComponent(f"agents {np.flatnonzero(ref == 0).tolist()} have a zero solution block")

    bank = _LossBank(losses)
    T, n = trials, net.n
    ar = np.arange(T)
    ei = np.array([e[0] for e in net.edges], dtype=int)
    ej = np.array([e[1] for e in net.edges], dtype=int)
    W, wsum = net.W, net.weight_sums

    base = init_state(net, init).tables
    tab = np.repeat(base[None], T, axis=0)
    own0 = np.stack([_local(net, losses, base, a) for a in range(n)])
    own = np.repeat(own0[None], T, axis=0)
    relerr = np.linalg.norm(own - ts[None], axis=2) / ref[None]
    mre0 = float(relerr.mean(axis=1).mean())

    rec = _recorded_rounds(rounds, record_every)
    out = np.empty(rec.size)
    pt = np.empty((T, rec.size)) if per_trial else None
    edges_out = np.empty((T, rec.size, 2), dtype=int) if per_trial else None
    trackers = [EpochTracker(net.num_edges) for _ in range(T)] if per_trial else None
    rngs = [sched.rng(trial_offset + k) for k in range(T)]

    ar2 = np.concatenate([ar, ar])

    def sums(agents):
        return np.matmul(W[agents][:, None, :], tab[ar2, agents])[:, 0, :]

    r = 0
    for start in range(0, rounds, chunk):
        size = min(chunk, rounds - start)
        block = np.stack([draw_edge_indices(sched, g, size) for g in rngs])
        for c in range(size):
            e = block[:, c]
            I, J = ei[e], ej[e]
            agents = np.concatenate([J, I])
            x = bank.solve(agents, wsum[agents], sums(agents))
            tab[ar, I, J] = x[:T]
            tab[ar, J, I] = x[T:]
            agents = np.concatenate([I, J])
            x = bank.solve(agents, wsum[agents], sums(agents))
            own[ar2, agents] = x
            relerr[ar2, agents] = np.linalg.norm(x - ts[agents], axis=1) / ref[agents]
            t = start + c + 1
            if per_trial:
                for k in range(T):
                    trackers[k].push(int(e[k]))
            if r < rec.size and t == rec[r]:
                m = relerr.mean(axis=1)
                out[r] = m.mean()
                if per_trial:
                    pt[:, r] = m
                    edges_out[:, r, 0] = I
                    edges_out[:, r, 1] = J
                r += 1
                if stop_below is not None and out[r - 1] <= stop_below:
                    break
        else:
            continue
        break
    if r < rec.size:
        rec, out = rec[:r], out[:r]
        pt = pt[:, :r] if per_trial else None
        edges_out = edges_out[:, :r] if per_trial else None
    return BatchResult(
        rounds=rec,
        mean_rel_error=out,
        mean_rel_error0=mre0,
        per_trial=pt,
        edges=edges_out,
        epochs=[tr.boundaries for tr in trackers] if per_trial else None,
        final_tables=tab,
    )
