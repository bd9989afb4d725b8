"""Asynchronous edge-based ADMM baseline (CL-ADMM style).

The problem is split with one copy ``z[i, j]`` of ``theta_i`` per directed
edge ``i -> j``:

    minimize   sum_i f_i(theta_i) + sum_{(i,j) in E} W_ij/2 ||z[i,j] - z[j,i]||^2
    subject to theta_i = z[i,j]  for every directed edge,

with unscaled multipliers ``u[i, j]`` and penalty ``rho``. Activating edge
``(i, j)`` performs one Gauss-Seidel pass over that edge's variables:

1. ``theta_i`` and ``theta_j`` minimize the augmented Lagrangian using every
   incident copy and multiplier;
2. the copy pair ``(z[i,j], z[j,i])`` is updated in closed form;
3. ``u[i,j] += rho (theta_i - z[i,j])`` and ``u[j,i] += rho (theta_j - z[j,i])``.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from djam.engine import (
    EpochTracker,
    Schedule,
    Trace,
    _check_star,
    _recorded_rounds,
    draw_edge_indices,
    mean_relative_error,
)
from djam.errors import NonpositiveRho, ZeroNormSolutionComponent
from djam.losses import PersonalLoss, _LossBank, resolvent
from djam.network import Edge, Network

__all__ = ["AdmmState", "AdmmBatchResult", "admm_init", "admm_kkt_state", "admm_round", "run_admm", "run_admm_batch"]


@dataclass
class AdmmState:
    theta: np.ndarray  # (n, p)
    z: np.ndarray  # (n, n, p), z[i, j] is i's copy held for edge (i, j)
    u: np.ndarray  # (n, n, p)
    rho: float
    round: int = 0

    def copy(self) -> AdmmState:
        return AdmmState(self.theta.copy(), self.z.copy(), self.u.copy(), self.rho, self.round)


def _check_rho(rho: float) -> float:
    rho = float(rho)
    if not rho > 0 or not np.isfinite(rho):
        raise NonpositiveRho(f"rho must be positive and finite, got {rho}")
    return rho


def admm_init(net: Network, losses: Sequence[PersonalLoss], rho: float, init="zeros") -> AdmmState:
    """Primals from ``init`` (``"zeros"``, a constant, or an ``(n, p)`` array); copies match primals; zero duals."""
    rho = _check_rho(rho)
    n, p = net.n, net.p
    if isinstance(init, str):
        if init != "zeros":
            raise ValueError(f"unknown init policy {init!r}")
        theta = np.zeros((n, p))
    elif np.isscalar(init):
        theta = np.full((n, p), float(init))
    else:
        theta = np.array(init, dtype=float).reshape(n, p)
    mask = (net.W > 0)[:, :, None]
    z = np.where(mask, theta[:, None, :], 0.0)
    return AdmmState(theta, z, np.zeros((n, n, p)), rho, 0)


def admm_kkt_state(net: Network, theta_star, rho: float) -> AdmmState:
    """The ADMM fixed point that corresponds to a solution ``theta_star``."""
    ts = _check_star(net, theta_star)
    mask = (net.W > 0)[:, :, None]
    z = np.where(mask, ts[:, None, :], 0.0)
    u = net.W[:, :, None] * (ts[:, None, :] - ts[None, :, :])
    return AdmmState(ts.copy(), z, u, _check_rho(rho), 0)


def _primal_rhs(net: Network, st: AdmmState, i: int) -> np.ndarray:
    nb = list(net.neighbors[i])
    return (st.rho * st.z[i, nb] - st.u[i, nb]).sum(axis=0)


def _apply_round(st: AdmmState, net: Network, losses, i: int, j: int) -> None:
    rho = st.rho
    th_i = resolvent(losses[i], rho * net.degree(i), _primal_rhs(net, st, i))
    th_j = resolvent(losses[j], rho * net.degree(j), _primal_rhs(net, st, j))
    st.theta[i], st.theta[j] = th_i, th_j
    a = th_i + st.u[i, j] / rho
    b = th_j + st.u[j, i] / rho
    mid = 0.5 * (a + b)
    half = 0.5 * rho * (a - b) / (rho + 2.0 * net.W[i, j])
    st.z[i, j], st.z[j, i] = mid + half, mid - half
    st.u[i, j] += rho * (th_i - st.z[i, j])
    st.u[j, i] += rho * (th_j - st.z[j, i])


def admm_round(state: AdmmState, net: Network, losses: Sequence[PersonalLoss], edge: Edge) -> AdmmState:
    i, j = edge
    net.edge_index(i, j)
    new = state.copy()
    _apply_round(new, net, losses, i, j)
    new.round += 1
    return new


def primal_feasibility(state: AdmmState, net: Network) -> float:
    """``max ||theta_i - z[i, j]||`` over directed edges."""
    if not net.edges:
        return 0.0
    gap = np.linalg.norm(state.theta[:, None, :] - state.z, axis=2)
    return float(gap[net.W > 0].max())


def run_admm(
    state: AdmmState,
    net: Network,
    losses: Sequence[PersonalLoss],
    sched: Schedule,
    rounds: int,
    oracle_solution=None,
    rng: np.random.Generator | None = None,
) -> tuple[AdmmState, Trace]:
    """Like :func:`djam.engine.run_djam`; the metric uses the primal iterates.

    ``V`` is not defined for ADMM and stays ``None``.
    """
    if rounds < 0:
        raise ValueError("rounds must be >= 0")
    rng = sched.rng() if rng is None else rng
    st = state.copy()
    ts = None if oracle_solution is None else _check_star(net, oracle_solution)
    mre = np.empty(rounds) if ts is not None else None
    mre0 = mean_relative_error(st.theta, ts) if ts is not None else None
    edges = np.zeros((rounds, 2), dtype=int)
    idx = draw_edge_indices(sched, rng, rounds) if rounds else np.zeros(0, dtype=int)
    tracker = EpochTracker(net.num_edges)
    for t in range(rounds):
        i, j = net.edges[idx[t]]
        _apply_round(st, net, losses, i, j)
        tracker.push(int(idx[t]))
        edges[t] = (i, j)
        if ts is not None:
            mre[t] = mean_relative_error(st.theta, ts)
    st.round += rounds
    trace = Trace(
        rounds=np.arange(state.round + 1, state.round + rounds + 1),
        edges=edges,
        V=None,
        mean_rel_error=mre,
        epochs=[state.round + b for b in tracker.boundaries],
        mean_rel_error0=mre0,
    )
    return st, trace


@dataclass
class AdmmBatchResult:
    rounds: np.ndarray
    mean_rel_error: np.ndarray
    mean_rel_error0: float
    per_trial: np.ndarray | None = None
    edges: np.ndarray | None = None
    epochs: list[list[int]] | None = None
    final_theta: np.ndarray | None = None


def run_admm_batch(
    net: Network,
    losses: Sequence[PersonalLoss],
    sched: Schedule,
    rounds: int,
    trials: int,
    theta_star,
    rho: float,
    init="zeros",
    record_every: int = 1,
    per_trial: bool = False,
    chunk: int = 4096,
    trial_offset: int = 0,
    stop_below: float | None = None,
) -> AdmmBatchResult:
    """Lockstep version of :func:`run_admm`; trial ``k`` uses ``sched.rng(k)``.

    ``stop_below`` behaves as in :func:`djam.engine.run_djam_batch`.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if record_every < 1:
        raise ValueError("record_every must be >= 1")
    ts = _check_star(net, theta_star)
    ref = np.linalg.norm(ts, axis=1)
    if np.any(ref == 0):
        raise ZeroNormSolutionComponent(f"agents {np.flatnonzero(ref == 0).tolist()} have a zero solution block")
    st0 = admm_init(net, losses, rho, init)
    rho = st0.rho
    bank = _LossBank(losses)
    T = trials
    ar = np.arange(T)
    ei = np.array([e[0] for e in net.edges], dtype=int)
    ej = np.array([e[1] for e in net.edges], dtype=int)
    adj = (net.W > 0).astype(float)
    deg = adj.sum(axis=1)
    Wd = net.W

    theta = np.repeat(st0.theta[None], T, axis=0)
    z = np.repeat(st0.z[None], T, axis=0)
    u = np.zeros_like(z)
    relerr = np.linalg.norm(theta - ts[None], axis=2) / ref[None]
    mre0 = float(relerr.mean(axis=1).mean())

    rec = _recorded_rounds(rounds, record_every)
    out = np.empty(rec.size)
    pt = np.empty((T, rec.size)) if per_trial else None
    edges_out = np.empty((T, rec.size, 2), dtype=int) if per_trial else None
    trackers = [EpochTracker(net.num_edges) for _ in range(T)] if per_trial else None
    rngs = [sched.rng(trial_offset + k) for k in range(T)]

    ar2 = np.concatenate([ar, ar])

    def rhs(agents):
        v = rho * z[ar2, agents] - u[ar2, agents]  # (2T, n, p)
        return np.matmul(adj[agents][:, None, :], v)[:, 0, :]

    r = 0
    for start in range(0, rounds, chunk):
        size = min(chunk, rounds - start)
        block = np.stack([draw_edge_indices(sched, g, size) for g in rngs])
        for c in range(size):
            e = block[:, c]
            I, J = ei[e], ej[e]
            agents = np.concatenate([I, J])
            x = bank.solve(agents, rho * deg[agents], rhs(agents))
            th_i, th_j = x[:T], x[T:]
            theta[ar2, agents] = x
            a = th_i + u[ar, I, J] / rho
            b = th_j + u[ar, J, I] / rho
            mid = 0.5 * (a + b)
            half = 0.5 * rho * (a - b) / (rho + 2.0 * Wd[I, J])[:, None]
            z[ar, I, J] = mid + half
            z[ar, J, I] = mid - half
            u[ar, I, J] += rho * (th_i - z[ar, I, J])
            u[ar, J, I] += rho * (th_j - z[ar, J, I])
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
    return AdmmBatchResult(
        rounds=rec,
        mean_rel_error=out,
        mean_rel_error0=mre0,
        per_trial=pt,
        edges=edges_out,
        epochs=[tr.boundaries for tr in trackers] if per_trial else None,
        final_theta=theta,
    )
