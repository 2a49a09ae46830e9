"""Ground-truth world: per-subsystem linear dynamics, private utilities, and
the shared coupling term.

States and actions are plain float ndarrays of length d, validated at
operation boundaries. Everything here is immutable after construction and
pure, so instances can be shared freely across solver threads.

Sign convention used by the whole package: the coupling G is ADDED everywhere.
Social welfare is sum_n U_n + G and each agent's posed reward is U_n + G, so
penalties (collision terms) must enter as G = -penalty. This removes the sign
drift that otherwise creeps in between the welfare and the agent-reward sides.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


def as_vector(v, d: int | None = None, name: str = "vector") -> np.ndarray:
    """Coerce to a finite float 1-D array, optionally checking length."""
    arr = np.asarray(v, dtype=float)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got shape {arr.shape}")
    if d is not None and arr.shape[0] != d:
        raise ValueError(f"{name} has length {arr.shape[0]}, expected {d}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def as_matrix(m, shape=None, name: str = "matrix") -> np.ndarray:
    arr = np.asarray(m, dtype=float)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {arr.shape}")
    if shape is not None and arr.shape != tuple(shape):
        raise ValueError(f"{name} has shape {arr.shape}, expected {tuple(shape)}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


@dataclass(frozen=True)
class LinearDynamics:
    """State evolution x(t+1) = A x(t) + B u(t) + w(t).

    noise_cov is the covariance of w; None means noise-free. B must be
    invertible for parametric identification (its condition number is
    reported there, not enforced here).
    """

    A: np.ndarray
    B: np.ndarray
    noise_cov: np.ndarray | None = None

    def __post_init__(self):
        A = as_matrix(self.A, name="A")
        d = A.shape[0]
        if A.shape[1] != d:
            raise ValueError(f"A must be square, got {A.shape}")
        B = as_matrix(self.B, (d, d), name="B")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        if self.noise_cov is not None:
            W = as_matrix(self.noise_cov, (d, d), name="noise_cov")
            if not np.allclose(W, W.T, atol=1e-10):
                raise ValueError("noise_cov must be symmetric")
            if np.min(np.linalg.eigvalsh(W)) < -1e-12:
                raise ValueError("noise_cov must be PSD")
            object.__setattr__(self, "noise_cov", W)

    @property
    def d(self) -> int:
        return self.A.shape[0]


def step(dyn: LinearDynamics, x, u, w=None) -> np.ndarray:
    """One step of the linear dynamics, x(t+1) = A x + B u + w."""
    x = as_vector(x, dyn.d, "x")
    u = as_vector(u, dyn.d, "u")
    out = dyn.A @ x + dyn.B @ u
    if w is not None:
        out = out + as_vector(w, dyn.d, "w")
    return out


def _check_spd(M: np.ndarray, name: str) -> np.ndarray:
    if not np.allclose(M, M.T, atol=1e-12):
        raise ValueError(f"{name} must be symmetric within 1e-12")
    M = 0.5 * (M + M.T)
    if np.min(np.linalg.eigvalsh(M)) <= 0.0:
        raise ValueError(f"{name} must be positive definite")
    return M


@dataclass(frozen=True)
class QuadraticUtility:
    """U(x_next, u) = -(x_next - x0)^T Q (x_next - x0) - u^T R u, Q, R SPD."""

    Q: np.ndarray
    R: np.ndarray
    x0: np.ndarray

    def __post_init__(self):
        Q = _check_spd(as_matrix(self.Q, name="Q"), "Q")
        d = Q.shape[0]
        R = _check_spd(as_matrix(self.R, (d, d), name="R"), "R")
        x0 = as_vector(self.x0, d, "x0")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "x0", x0)

    def value(self, x_next, u) -> float:
        return eval_quadratic(self, x_next, u)

    def grad_u(self, dyn: LinearDynamics, x, u) -> np.ndarray:
        return grad_u_quadratic(self, dyn, x, u)


def eval_quadratic(U: QuadraticUtility, x_next, u) -> float:
    x_next = as_vector(x_next, U.Q.shape[0], "x_next")
    u = as_vector(u, U.R.shape[0], "u")
    e = x_next - U.x0
    return float(-(e @ U.Q @ e) - u @ U.R @ u)


def grad_u_quadratic(U: QuadraticUtility, dyn: LinearDynamics, x, u) -> np.ndarray:
    """Total derivative of U w.r.t. u through x_next (w = 0)."""
    x_next = step(dyn, x, u)
    return -2.0 * dyn.B.T @ (U.Q @ (x_next - U.x0)) - 2.0 * (U.R @ np.asarray(u, dtype=float))


def _central_diff(f: Callable[[np.ndarray], float], u: np.ndarray, h: float) -> np.ndarray:
    g = np.empty_like(u)
    for i in range(u.size):
        e = np.zeros_like(u)
        e[i] = h
        g[i] = (f(u + e) - f(u - e)) / (2.0 * h)
    return g


@dataclass(frozen=True)
class SmoothUtility:
    """General smooth utility given as value(x_next, u) -> float.

    gradient_u, when present, is the total derivative of U w.r.t. u through
    x_next, with signature (x_next, u, dyn) -> vector. When absent it is
    defined by central finite differences of value through the dynamics.
    Analytic gradients must match finite differences to rel. err <= 1e-5;
    tests enforce this on sampled points.
    """

    value_fn: Callable[[np.ndarray, np.ndarray], float]
    gradient_u: Callable | None = None

    def value(self, x_next, u) -> float:
        return float(self.value_fn(np.asarray(x_next, float), np.asarray(u, float)))

    def grad_u(self, dyn: LinearDynamics, x, u) -> np.ndarray:
        x = as_vector(x, dyn.d, "x")
        u = as_vector(u, dyn.d, "u")
        if self.gradient_u is not None:
            return np.asarray(self.gradient_u(step(dyn, x, u), u, dyn), dtype=float)
        return _central_diff(lambda v: self.value(step(dyn, x, v), v), u, 1e-6)


def cross_term_utility(Q, R, x0, K: Sequence[np.ndarray]) -> SmoothUtility:
    """Quadratic utility plus higher-order cross terms.

    U = -(x_next-x0)^T Q (x_next-x0) - u^T R u - 0.5 * sum_i x_next[i] * u^T K_i u.
    The cross part makes the gradient field genuinely curved (nonflat), which
    the connection fit in `geometry` is designed to detect.
    """
    base = QuadraticUtility(Q, R, x0)
    Ks = [as_matrix(Ki, (base.Q.shape[0],) * 2, "K_i") for Ki in K]

    def value(x_next, u):
        cross = sum(x_next[i] * (u @ Ki @ u) for i, Ki in enumerate(Ks))
        return eval_quadratic(base, x_next, u) - 0.5 * cross

    def gradient(x_next, u, dyn):
        g = -2.0 * dyn.B.T @ (base.Q @ (x_next - base.x0)) - 2.0 * base.R @ u
        for i, Ki in enumerate(Ks):
            # d/du [x_next_i(u) * u^T K_i u]: product rule through x_next = Ax + Bu
            g = g - 0.5 * ((u @ Ki @ u) * dyn.B.T[:, i] + x_next[i] * (Ki + Ki.T) @ u)
        return g

    return SmoothUtility(value, gradient)


def decomposable_utility(value_x, grad_x, value_u, grad_u) -> SmoothUtility:
    """Utility U(x_next, u) = U^x(x_next) + U^u(u) with analytic parts.

    The total u-gradient is B^T grad_x(x_next) + grad_u(u); this split
    structure is what the kernel learner in `geometry` exploits.
    """

    def value(x_next, u):
        return float(value_x(x_next) + value_u(u))

    def gradient(x_next, u, dyn):
        return dyn.B.T @ np.asarray(grad_x(x_next), float) + np.asarray(grad_u(u), float)

    return SmoothUtility(value, gradient)


@dataclass(frozen=True)
class CouplingFunction:
    """Shared regulation term G over the joint next-state, ADDED to welfare
    and to every agent's reward (penalties enter with a minus sign).

    value takes the joint next-state as an (N, d) array. gradient_n(X, n)
    returns dG/dx_n; when absent it falls back to central differences.
    """

    N: int
    d: int
    value_fn: Callable[[np.ndarray], float]
    gradient_n: Callable | None = None

    def value(self, X) -> float:
        X = np.asarray(X, dtype=float).reshape(self.N, self.d)
        return float(self.value_fn(X))

    def grad(self, X, n: int) -> np.ndarray:
        X = np.asarray(X, dtype=float).reshape(self.N, self.d)
        if self.gradient_n is not None:
            return np.asarray(self.gradient_n(X, n), dtype=float)
        g = np.empty(self.d)
        for i in range(self.d):
            E = np.zeros_like(X)
            E[n, i] = 1e-6
            g[i] = (self.value_fn(X + E) - self.value_fn(X - E)) / 2e-6
        return g


def zero_coupling(N: int, d: int) -> CouplingFunction:
    return CouplingFunction(N, d, lambda X: 0.0, lambda X, n: np.zeros(d))


def pairwise_quadratic_coupling(strength: float, N: int, d: int) -> CouplingFunction:
    """Consensus-type coupling G(X) = -strength * sum_{n<m} ||x_n - x_m||^2.

    With strength = eps, N = 2, d = 1 this is the canonical weak/strong test
    coupling -eps (x_1 - x_2)^2.
    """

    def value(X):
        total = 0.0
        for n in range(N):
            for m in range(n + 1, N):
                diff = X[n] - X[m]
                total += diff @ diff
        return -strength * total

    def grad(X, n):
        g = np.zeros(d)
        for m in range(N):
            if m != n:
                g += 2.0 * (X[n] - X[m])
        return -strength * g

    return CouplingFunction(N, d, value, grad)


@dataclass(frozen=True)
class SystemInstance:
    """The world one coordination problem lives in: N subsystems with common
    d, their dynamics, private utilities, the shared coupling, and current
    physical states. Immutable; advancing time means building a new instance
    with updated states (see `replace_states`).
    """

    dynamics: tuple
    utilities: tuple
    coupling: CouplingFunction
    states: tuple

    def __post_init__(self):
        dynamics = tuple(self.dynamics)
        utilities = tuple(self.utilities)
        if len(dynamics) == 0 or len(dynamics) != len(utilities):
            raise ValueError("dynamics and utilities must be non-empty, equal length")
        d = dynamics[0].d
        if any(dy.d != d for dy in dynamics):
            raise ValueError("all subsystems must share the same d")
        states = tuple(as_vector(x, d, f"states[{i}]") for i, x in enumerate(self.states))
        if len(states) != len(dynamics):
            raise ValueError("states must have one entry per subsystem")
        if self.coupling.N != len(dynamics) or self.coupling.d != d:
            raise ValueError("coupling shape does not match instance")
        object.__setattr__(self, "dynamics", dynamics)
        object.__setattr__(self, "utilities", utilities)
        object.__setattr__(self, "states", states)

    @property
    def N(self) -> int:
        return len(self.dynamics)

    @property
    def d(self) -> int:
        return self.dynamics[0].d


def joint_action(sys: SystemInstance, u) -> np.ndarray:
    """Coerce a joint action to a finite (N, d) float array."""
    arr = np.asarray(u, dtype=float).reshape(sys.N, sys.d)
    if not np.all(np.isfinite(arr)):
        raise ValueError("joint action contains non-finite entries")
    return arr


def joint_next_state(sys: SystemInstance, u) -> np.ndarray:
    """Noise-free next states for all subsystems as an (N, d) array."""
    U = joint_action(sys, u)
    return np.stack([step(sys.dynamics[n], sys.states[n], U[n]) for n in range(sys.N)])


def replace_states(sys: SystemInstance, states) -> SystemInstance:
    return SystemInstance(sys.dynamics, sys.utilities, sys.coupling, tuple(states))


def utility_gradient_error(utility, dyn: LinearDynamics, points, h: float = 1e-5) -> float:
    """Max relative error of the analytic u-gradient vs central differences
    of value(step(x, u), u) over (x, u) sample points."""
    worst = 0.0
    for x, u in points:
        x = as_vector(x, dyn.d, "x")
        u = as_vector(u, dyn.d, "u")
        g = utility.grad_u(dyn, x, u)
        fd = _central_diff(lambda v: utility.value(step(dyn, x, v), v), u, h)
        denom = max(np.linalg.norm(fd), 1e-12)
        worst = max(worst, np.linalg.norm(g - fd) / denom)
    return worst


def coupling_gradient_error(G: CouplingFunction, joint_points, h: float = 1e-5) -> float:
    """Max relative error of G.grad vs central differences of G.value."""
    worst = 0.0
    for X in joint_points:
        X = np.asarray(X, dtype=float).reshape(G.N, G.d)
        for n in range(G.N):
            g = G.grad(X, n)
            fd = np.empty(G.d)
            for i in range(G.d):
                E = np.zeros_like(X)
                E[n, i] = h
                fd[i] = (G.value(X + E) - G.value(X - E)) / (2.0 * h)
            denom = max(np.linalg.norm(fd), 1e-12)
            worst = max(worst, np.linalg.norm(g - fd) / denom)
    return worst
