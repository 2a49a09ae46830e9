"""Selfish subsystem behavior: each agent maximizes the payoff the
coordinator poses to it, by damped Newton on the payoff gradient.

A posed game (GameSpec) is a sum of optional terms: the agent's private
utility, a linear price charge -p^T u, a frozen coupling slice (the shared
G with all other agents' values fixed), a proximal penalty
-lam ||u - anchor||^2, and a linear-quadratic probe -||u - target||^2 used by
the coordinator's two-stage protocol. Agents are truthful automata: they
always best-respond to the posed game.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import BestResponseError
from .model import LinearDynamics, as_vector, step


@dataclass(frozen=True)
class CouplingSlice:
    """The shared coupling as a function of one agent's action only,
    opponents frozen. value(u_n) -> float, grad(u_n) -> d-vector
    (already chain-ruled through the agent's next state)."""

    value: Callable[[np.ndarray], float]
    grad: Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class GameSpec:
    """One agent's posed payoff: sum of the enabled terms.

    utility: private utility (QuadraticUtility or SmoothUtility);
    price: vector p, contributes -p^T u;
    coupling: frozen CouplingSlice, contributes its value;
    proximal: (lam, anchor), contributes -lam ||u - anchor||^2, lam > 0;
    linear_probe: target vector v, contributes -||u - v||^2.
    """

    utility: object | None = None
    price: np.ndarray | None = None
    coupling: CouplingSlice | None = None
    proximal: tuple | None = None
    linear_probe: np.ndarray | None = None

    def __post_init__(self):
        terms = (self.utility, self.price, self.coupling, self.proximal, self.linear_probe)
        if all(t is None for t in terms):
            raise ValueError("GameSpec needs at least one payoff term")
        if self.price is not None:
            object.__setattr__(self, "price", as_vector(self.price, name="price"))
        if self.linear_probe is not None:
            object.__setattr__(self, "linear_probe",
                               as_vector(self.linear_probe, name="linear_probe"))
        if self.proximal is not None:
            lam, anchor = self.proximal
            if not lam > 0:
                raise ValueError("proximal lam must be > 0")
            object.__setattr__(self, "proximal",
                               (float(lam), as_vector(anchor, name="proximal anchor")))


@dataclass(frozen=True)
class BestResponseConfig:
    tol: float = 1e-10
    max_iter: int = 100
    line_search_shrink: float = 0.5
    box: tuple | None = None

    def __post_init__(self):
        if not (self.tol > 0 and self.max_iter >= 1 and 0 < self.line_search_shrink < 1):
            raise ValueError("invalid BestResponseConfig")


def payoff_value(game: GameSpec, x, dyn: LinearDynamics, u) -> float:
    u = as_vector(u, dyn.d, "u")
    total = 0.0
    if game.utility is not None:
        x_next = step(dyn, x, u)
        total += game.utility.value(x_next, u)
    if game.price is not None:
        total -= float(game.price @ u)
    if game.coupling is not None:
        total += float(game.coupling.value(u))
    if game.proximal is not None:
        lam, anchor = game.proximal
        diff = u - anchor
        total -= lam * float(diff @ diff)
    if game.linear_probe is not None:
        diff = u - game.linear_probe
        total -= float(diff @ diff)
    return float(total)


def payoff_gradient(game: GameSpec, x, dyn: LinearDynamics, u) -> np.ndarray:
    u = as_vector(u, dyn.d, "u")
    g = np.zeros(dyn.d)
    if game.utility is not None:
        g += game.utility.grad_u(dyn, x, u)
    if game.price is not None:
        g -= game.price
    if game.coupling is not None:
        g += np.asarray(game.coupling.grad(u), dtype=float)
    if game.proximal is not None:
        lam, anchor = game.proximal
        g -= 2.0 * lam * (u - anchor)
    if game.linear_probe is not None:
        g -= 2.0 * (u - game.linear_probe)
    return g


def _payoff_hessian(game: GameSpec, x, dyn: LinearDynamics, u: np.ndarray) -> np.ndarray:
    d = u.size
    H = np.empty((d, d))
    h = 1e-6 * max(1.0, float(np.max(np.abs(u))))
    for i in range(d):
        e = np.zeros(d)
        e[i] = h
        H[:, i] = (payoff_gradient(game, x, dyn, u + e)
                   - payoff_gradient(game, x, dyn, u - e)) / (2.0 * h)
    return 0.5 * (H + H.T)


def best_response(game: GameSpec, x, dyn: LinearDynamics, u_start,
                  cfg: BestResponseConfig = BestResponseConfig()) -> np.ndarray:
    """Maximize the posed payoff: damped Newton on the payoff gradient.

    Starts at u_start, which implements the closest-root selection rule when
    payoffs have several stationary points. Stops at
    ||grad||_inf <= cfg.tol. Raises BestResponseError on a singular Hessian,
    on convergence to a non-maximum, or after max_iter.

    When cfg.box is set and the unconstrained optimum leaves it, the result
    is clamped and a warning is issued (the clamped point is not a
    constrained optimum; the box is a sanity report, not a constraint
    solver).
    """
    u = as_vector(u_start, dyn.d, "u_start").copy()
    g = payoff_gradient(game, x, dyn, u)
    for _ in range(cfg.max_iter):
        gnorm = np.max(np.abs(g))
        if gnorm <= cfg.tol:
            H = _payoff_hessian(game, x, dyn, u)
            if np.max(np.linalg.eigvalsh(H)) >= 0.0:
                raise BestResponseError("stationary point is not a local maximum",
                                        last_iterate=u, residual=gnorm)
            if cfg.box is not None:
                lo, hi = cfg.box
                clipped = np.clip(u, lo, hi)
                if not np.array_equal(clipped, u):
                    warnings.warn("best response outside configured box, clamping")
                    return clipped
            return u
        H = _payoff_hessian(game, x, dyn, u)
        try:
            delta = np.linalg.solve(H, -g)
        except np.linalg.LinAlgError:
            raise BestResponseError("singular payoff Hessian",
                                    last_iterate=u, residual=gnorm)
        alpha = 1.0
        while alpha > 1e-12:
            u_try = u + alpha * delta
            g_try = payoff_gradient(game, x, dyn, u_try)
            if np.max(np.abs(g_try)) < gnorm:
                u, g = u_try, g_try
                break
            alpha *= cfg.line_search_shrink
        else:
            raise BestResponseError("line search failed to reduce the gradient",
                                    last_iterate=u, residual=gnorm)
    raise BestResponseError(
        f"no convergence after {cfg.max_iter} Newton iterations",
        last_iterate=u, residual=float(np.max(np.abs(g))))
