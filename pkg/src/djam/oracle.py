"""Reference solutions of the personalized learning problem

    minimize  1/2 sum_{i<j} W_ij ||theta_i - theta_j||^2 + sum_i f_i(theta_i).

Quadratic instances are solved exactly from the block linear system; general
instances by the synchronous Jacobi iteration, which contracts in the
agent-wise max norm with the same factor as the gossip engine.
"""

from __future__ import annotations

import csv
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from djam.engine import contraction_factor
from djam.errors import DimensionMismatch, LinearSolveFailure, MaxSweepsExceeded, NotQuadratic
from djam.losses import PersonalLoss, QuadraticLoss, resolvent
from djam.network import Network

__all__ = [
    "Solution",
    "solve_exact_quadratic",
    "solve_sync_jacobi",
    "fixed_point_residual",
    "quadratic_system",
    "write_solution_csv",
    "read_solution_csv",
]


@dataclass(frozen=True)
class Solution:
    theta_star: np.ndarray  # (n, p)
    residual: float
    sweeps: int = 0


def fixed_point_residual(theta, net: Network, losses: Sequence[PersonalLoss]) -> float:
    """``max_j || sum_k W_jk (theta_j - theta_k) + grad f_j(theta_j) ||``."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (net.n, net.p):
        raise DimensionMismatch(f"theta must have shape ({net.n}, {net.p}), got {theta.shape}")
    lap = net.weight_sums[:, None] * theta - net.W @ theta
    res = [np.linalg.norm(lap[j] + losses[j].grad(theta[j])) for j in range(net.n)]
    return float(max(res))


def quadratic_system(net: Network, losses: Sequence[QuadraticLoss]) -> tuple[np.ndarray, np.ndarray]:
    """Block matrix ``H`` and right-hand side ``b`` of the optimality conditions."""
    if not all(isinstance(f, QuadraticLoss) for f in losses):
        raise NotQuadratic("exact solve needs every loss to be a QuadraticLoss")
    n, p = net.n, net.p
    H = np.kron(np.diag(net.weight_sums) - net.W, np.eye(p))
    b = np.zeros(n * p)
    for j, f in enumerate(losses):
        blk = slice(j * p, (j + 1) * p)
        H[blk, blk] += f.A
        b[blk] = f.A @ f.y
    return H, b


def solve_exact_quadratic(net: Network, losses: Sequence[QuadraticLoss]) -> Solution:
    H, b = quadratic_system(net, losses)
    try:
        x = np.linalg.solve(H, b)
        for _ in range(2):
            x = x + np.linalg.solve(H, b - H @ x)
    except np.linalg.LinAlgError as exc:
        raise LinearSolveFailure(str(exc)) from exc
    resid = float(np.linalg.norm(H @ x - b))
    if not np.isfinite(resid) or resid > 1e-13 * (1.0 + np.linalg.norm(b)):
        raise LinearSolveFailure(f"linear residual {resid:g} above tolerance")
    theta = x.reshape(net.n, net.p)
    return Solution(theta, fixed_point_residual(theta, net, losses))


def jacobi_sweep(theta: np.ndarray, net: Network, losses: Sequence[PersonalLoss]) -> np.ndarray:
    s = net.W @ theta
    return np.stack([resolvent(losses[j], float(net.weight_sums[j]), s[j], x0=theta[j], rtol=0.0) for j in range(net.n)])


def solve_sync_jacobi(
    net: Network,
    losses: Sequence[PersonalLoss],
    tol: float = 1e-13,
    max_sweeps: int = 100_000,
) -> Solution:
    """Synchronous Jacobi iteration from zero.

    Stops when the a-posteriori bound ``delta * beta / (1 - beta)`` on the
    distance to the solution and the first-order residual are both below
    ``tol`` (``delta`` is the largest per-agent change of the last sweep), or
    when a sweep changes nothing at all.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    beta = contraction_factor(net, losses)
    factor = beta / (1.0 - beta)
    theta = np.zeros((net.n, net.p))
    for sweep in range(1, max_sweeps + 1):
        new = jacobi_sweep(theta, net, losses)
        delta = float(np.linalg.norm(new - theta, axis=1).max())
        theta = new
        if delta == 0.0 or delta * factor <= tol:
            res = fixed_point_residual(theta, net, losses)
            if delta == 0.0 or res <= tol:
                return Solution(theta, res, sweep)
    raise MaxSweepsExceeded(f"no convergence after {max_sweeps} sweeps (last change {delta:g})")


def write_solution_csv(sol: Solution | np.ndarray, path: str | Path) -> None:
    """``agent,coord,value`` rows with 1-based agent and coordinate indices."""
    theta = sol.theta_star if isinstance(sol, Solution) else np.asarray(sol)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["agent", "coord", "value"])
        for i, row in enumerate(theta, start=1):
            for c, v in enumerate(row, start=1):
                w.writerow([i, c, f"{v:.17g}"])


def read_solution_csv(path: str | Path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = [(int(r["agent"]), int(r["coord"]), float(r["value"])) for r in csv.DictReader(fh)]
    n = max(r[0] for r in rows)
    p = max(r[1] for r in rows)
    theta = np.full((n, p), np.nan)
    for i, c, v in rows:
        theta[i - 1, c - 1] = v
    if np.isnan(theta).any():
        raise DimensionMismatch(f"{path}: incomplete solution table")
    return theta
