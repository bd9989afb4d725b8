"""Personal loss functions and the resolvent ``(grad f + w I)^{-1}``.

Every model update in the gossip engine, the synchronous reference solver and
the ADMM baseline reduces to solving

    grad f(x) + w x = s

for a strongly convex ``f``. :func:`resolvent` does this with Newton's method:
bracketed (bisection fallback) in one dimension, damped by backtracking in
higher dimensions.
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from collections.abc import Mapping, Sequence
from typing import TYPE_CHECKING

import numpy as np

from djam.errors import (
    DimensionMismatch,
    MissingNeighborModel,
    NonFiniteInput,
    SolverDidNotConverge,
)

if TYPE_CHECKING:
    from djam.network import Network

SOLVER_TOL = 1e-12
MAX_ITER = 200

__all__ = [
    "PersonalLoss",
    "QuadraticLoss",
    "HuberFieldLoss",
    "huber",
    "huber_deriv",
    "loss_eval",
    "loss_grad",
    "resolvent",
    "local_solve",
    "huber_resolvent_batch",
    "resolvent_batch",
    "SOLVER_TOL",
]


def huber(r, delta: float):
    """Huber penalty: ``r**2 / 2`` for ``|r| <= delta``, else ``delta*(|r| - delta/2)``."""
    a = np.abs(r)
    return np.where(a <= delta, 0.5 * r * r, delta * (a - 0.5 * delta))


def huber_deriv(r, delta: float):
    return np.clip(r, -delta, delta)


class PersonalLoss(ABC):
    """Strongly convex loss with Lipschitz gradient on ``R^p``.

    Subclasses declare ``strong_convexity`` (m) and ``grad_lipschitz`` (M).
    The constants feed diagnostics only; no update rule reads them.
    """

    dim: int
    strong_convexity: float
    grad_lipschitz: float

    @abstractmethod
    def value(self, theta: np.ndarray) -> float: ...

    @abstractmethod
    def grad(self, theta: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def hess(self, theta: np.ndarray) -> np.ndarray:
        """A (generalized) Hessian, used for Newton steps."""


class QuadraticLoss(PersonalLoss):
    """``f(theta) = 1/2 (theta - y)^T A (theta - y)`` with ``A`` symmetric positive definite."""

    def __init__(self, A, y):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        y = np.atleast_1d(np.asarray(y, dtype=float))
        if A.shape != (y.size, y.size):
            raise DimensionMismatch(f"A has shape {A.shape}, y has size {y.size}")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(y))):
            raise NonFiniteInput("A and y must be finite")
        if not np.allclose(A, A.T, rtol=0, atol=1e-12 * max(1.0, np.abs(A).max())):
            raise ValueError("A must be symmetric")
        A = 0.5 * (A + A.T)
        eig = np.linalg.eigvalsh(A)
        if eig[0] <= 0:
            raise ValueError(f"A must be positive definite (smallest eigenvalue {eig[0]:g})")
        self.A = A
        self.y = y
        self.dim = y.size
        self.strong_convexity = float(eig[0])
        self.grad_lipschitz = float(eig[-1])
        A.setflags(write=False)
        y.setflags(write=False)

    def value(self, theta):
        d = theta - self.y
        return float(0.5 * d @ self.A @ d)

    def grad(self, theta):
        return self.A @ (theta - self.y)

    def hess(self, theta):
        return self.A

    def __repr__(self):
        return f"QuadraticLoss(A={self.A.tolist()}, y={self.y.tolist()})"


class HuberFieldLoss(PersonalLoss):
    """Scalar field-estimation loss ``huber(y - theta) + sigma/2 * theta**2``.

    ``sigma`` is the agent's prior precision and ``delta`` the Huber
    threshold. The Huber curvature lies in ``[0, 1]``, so ``m = sigma`` and
    ``M = sigma + 1``.
    """

    dim = 1

    def __init__(self, y: float, sigma: float, delta: float):
        if not (math.isfinite(y) and math.isfinite(sigma) and math.isfinite(delta)):
            raise NonFiniteInput("y, sigma and delta must be finite")
        if sigma <= 0 or delta <= 0:
            raise ValueError("sigma and delta must be positive")
        self.y = float(y)
        self.sigma = float(sigma)
        self.delta = float(delta)
        self.strong_convexity = self.sigma
        self.grad_lipschitz = self.sigma + 1.0

    def value(self, theta):
        t = float(theta[0])
        r = self.y - t
        a = abs(r)
        pen = 0.5 * r * r if a <= self.delta else self.delta * (a - 0.5 * self.delta)
        return pen + 0.5 * self.sigma * t * t

    def grad(self, theta):
        t = float(theta[0])
        r = min(max(self.y - t, -self.delta), self.delta)
        return np.array([-r + self.sigma * t])

    def hess(self, theta):
        # curvature 1 on the closed quadratic zone, kinks included
        inside = abs(self.y - float(theta[0])) <= self.delta
        return np.array([[self.sigma + (1.0 if inside else 0.0)]])

    def __repr__(self):
        return f"HuberFieldLoss(y={self.y!r}, sigma={self.sigma!r}, delta={self.delta!r})"


def _as_vector(loss: PersonalLoss, theta) -> np.ndarray:
    x = np.atleast_1d(np.asarray(theta, dtype=float))
    if x.shape != (loss.dim,):
        raise DimensionMismatch(f"expected a vector of dimension {loss.dim}, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise NonFiniteInput(f"non-finite input {x}")
    return x


def loss_eval(loss: PersonalLoss, theta) -> float:
    return loss.value(_as_vector(loss, theta))


def loss_grad(loss: PersonalLoss, theta) -> np.ndarray:
    return loss.grad(_as_vector(loss, theta))


def resolvent(loss: PersonalLoss, w: float, s, x0=None, rtol: float = SOLVER_TOL) -> np.ndarray:
    """Solve ``grad f(x) + w x = s`` for ``x``.

    Terminates once ``||grad f(x) + w x - s|| <= rtol * max(1, ||s||)``, or when
    the iterate can no longer move in floating point. ``rtol=0`` iterates to
    that floating-point stagnation point.

    Args:
        loss: the personal loss ``f``.
        w: nonnegative quadratic weight.
        s: right-hand side, a vector of dimension ``loss.dim``.
        x0: optional starting point (defaults to zero).
        rtol: relative residual tolerance (default 1e-12).

    Raises:
        SolverDidNotConverge: more than 200 Newton iterations.
        NonFiniteInput: ``s`` or ``w`` not finite.
    """
    s = _as_vector(loss, s)
    if not math.isfinite(w):
        raise NonFiniteInput(f"w must be finite, got {w}")
    if w < 0:
        raise ValueError(f"w must be nonnegative, got {w}")
    x = np.zeros(loss.dim) if x0 is None else _as_vector(loss, x0).copy()
    tol = rtol * max(1.0, float(np.linalg.norm(s)))
    if loss.dim == 1:
        return _newton_1d(loss, float(w), float(s[0]), float(x[0]), tol)
    return _newton_nd(loss, float(w), s, x, tol)


_EPS = np.finfo(float).eps


def _newton_1d(loss: PersonalLoss, w: float, s: float, x: float, tol: float) -> np.ndarray:
    m = loss.strong_convexity + w

    def g(t):
        d = float(loss.grad(np.array([t]))[0])
        # second value: rounding noise of the residual itself
        return d + w * t - s, 4 * _EPS * (abs(d) + w * abs(t) + abs(s))

    gx, noise = g(x)
    if abs(gx) <= max(tol, noise):
        return np.array([x])
    # strong monotonicity: the root lies within |g(x)| / (m + w) of x
    lo, hi = sorted((x, x - gx / m))
    width = math.inf
    for _ in range(MAX_ITER):
        h = float(loss.hess(np.array([x]))[0, 0]) + w
        step = x - gx / h
        # Newton can 2-cycle across a curvature jump; bisect when it stalls
        if not (lo <= step <= hi) or hi - lo > 0.5 * width:
            step = 0.5 * (lo + hi)
        width = hi - lo
        if step == x:
            return np.array([x])
        x = step
        gx, noise = g(x)
        if abs(gx) <= max(tol, noise):
            return np.array([x])
        if gx > 0:
            hi = x
        else:
            lo = x
        if hi - lo <= 4 * np.spacing(max(abs(lo), abs(hi))):
            return np.array([x])
    raise SolverDidNotConverge(f"resolvent did not converge in {MAX_ITER} iterations (residual {gx:g})")


def _newton_nd(loss: PersonalLoss, w: float, s: np.ndarray, x: np.ndarray, tol: float) -> np.ndarray:
    eye = np.eye(loss.dim)
    sn = np.linalg.norm(s)

    def g(t):
        d = loss.grad(t)
        r = d + w * t - s
        return r, np.linalg.norm(r), 4 * _EPS * (np.linalg.norm(d) + w * np.linalg.norm(t) + sn)

    def merit(t):
        return loss.value(t) + 0.5 * w * (t @ t) - s @ t

    gx, gn, noise = g(x)
    for _ in range(MAX_ITER):
        if gn <= max(tol, noise):
            return x
        d = -np.linalg.solve(loss.hess(x) + w * eye, gx)
        if np.linalg.norm(d) <= 4 * _EPS * np.linalg.norm(x):
            return x
        t, phi = 1.0, None
        while True:
            cand = x + t * d
            gc, gcn, nc = g(cand)
            if gcn < gn or t < 1e-10:
                break
            if phi is None:
                phi, slope = merit(x), gx @ d
            if merit(cand) <= phi + 1e-4 * t * slope:
                break
            t *= 0.5
        x, gx, gn, noise = cand, gc, gcn, nc
    if gn <= max(tol, noise):
        return x
    raise SolverDidNotConverge(f"resolvent did not converge in {MAX_ITER} iterations (residual {gn:g})")


def local_solve(
    net: Network,
    losses: Sequence[PersonalLoss],
    j: int,
    neighbor_models: Mapping[int, np.ndarray],
) -> np.ndarray:
    """Minimize ``1/2 sum_k W_jk ||theta - models[k]||^2 + f_j(theta)`` over ``theta``.

    ``neighbor_models`` must have exactly the neighbors of ``j`` as keys.
    """
    nbrs = net.neighbors[j]
    if set(neighbor_models) != set(nbrs):
        missing = sorted(set(nbrs) - set(neighbor_models))
        extra = sorted(set(neighbor_models) - set(nbrs))
        raise MissingNeighborModel(f"agent {j}: missing models for {missing}, unexpected {extra}")
    s = np.zeros(net.p)
    for k in nbrs:
        s = s + net.W[j, k] * np.asarray(neighbor_models[k], dtype=float)
    return resolvent(losses[j], float(net.weight_sums[j]), s)


# -- batched solves for lockstep Monte Carlo trials ------------------------


def huber_resolvent_batch(y, sigma, delta, w, s) -> np.ndarray:
    """Vectorized resolvent of :class:`HuberFieldLoss` (all arguments 1-D arrays).

    The equation ``(sigma + w) x - clip(y - x, -delta, delta) = s`` is
    piecewise linear and increasing in ``x``: solve the quadratic-zone piece
    and, where its root falls outside the zone, the matching linear piece.
    """
    y, sigma, delta, w, s = (np.asarray(a, dtype=float) for a in (y, sigma, delta, w, s))
    c = sigma + w
    x = (s + y) / (c + 1.0)
    r = y - x
    x = np.where(r > delta, (s + delta) / c, x)
    x = np.where(r < -delta, (s - delta) / c, x)
    return x


class _LossBank:
    """Per-agent parameter arrays for batched solves, or a scalar fallback."""

    def __init__(self, losses: Sequence[PersonalLoss]):
        self.losses = list(losses)
        self.huber = all(isinstance(f, HuberFieldLoss) for f in self.losses)
        if self.huber:
            self.y = np.array([f.y for f in self.losses])
            self.sigma = np.array([f.sigma for f in self.losses])
            self.delta = np.array([f.delta for f in self.losses])

    def solve(self, agents: np.ndarray, w: np.ndarray, s: np.ndarray) -> np.ndarray:
        """``s`` has shape ``(B, p)``; returns ``(B, p)``."""
        if self.huber:
            x = huber_resolvent_batch(self.y[agents], self.sigma[agents], self.delta[agents], w, s[:, 0])
            return x[:, None]
        return np.stack([resolvent(self.losses[a], float(wa), sa) for a, wa, sa in zip(agents, w, s)])


def resolvent_batch(losses: Sequence[PersonalLoss], agents, w, s) -> np.ndarray:
    """Solve ``grad f_a(x) + w x = s`` for many ``(a, w, s)`` at once."""
    return _LossBank(losses).solve(np.asarray(agents), np.asarray(w, dtype=float), np.asarray(s, dtype=float))
