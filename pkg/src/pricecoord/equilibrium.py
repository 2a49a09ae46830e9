"""Fictitious-play iterations and the variational-inequality projection
solver they reduce to, plus co-coercivity estimation and step-size rules.

The stacked operator F(u) = (grad_{u_1} R_1, ..., grad_{u_N} R_N) collects
each agent's reward gradient (private utility plus the shared coupling,
chain-ruled through that agent's next state). Nash stationarity is F(u*) = 0,
equivalently the VI: (y - u*)^T F(u*) >= 0 rewritten for the ascent
orientation used here.

Proximal bookkeeping: GameSpec's proximal term is -lam ||u - anchor||^2 with
gradient -2 lam (u - anchor). The two-stage, single-stage, and Tikhonov plays
pose lam_k / 2 so their stationarity condition carries the coefficient
lam_k(u - anchor) exactly as the step-size analysis assumes; the gap bound
||u_hat - u_prev|| <= N D / lam_k and the probe-identity extraction of the
agent's private gradient both rely on this.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .agents import BestResponseConfig, CouplingSlice, GameSpec, best_response
from .errors import NonConvergenceError
from .model import SystemInstance, joint_action, joint_next_state, step


# ---------------------------------------------------------------------------
# operator fields and the projection solver

@dataclass(frozen=True)
class OperatorField:
    """A vector field u -> F(u) on a box K given by per-coordinate bounds
    (lo, hi) as arrays; box None means unconstrained."""

    eval: Callable[[np.ndarray], np.ndarray]
    box: tuple | None = None


def uniform_box(lo: float, hi: float, m: int) -> tuple[np.ndarray, np.ndarray]:
    return np.full(m, float(lo)), np.full(m, float(hi))


def project(box, u: np.ndarray) -> np.ndarray:
    if box is None:
        return u
    lo, hi = box
    return np.clip(u, lo, hi)


@dataclass(frozen=True)
class StepSchedule:
    """Step sequences (tau_k, lam_k, gamma_k), 1-indexed in k.

    Each entry may be a scalar, a sequence (last value repeats), or a
    callable k -> value. gamma defaults to tau. The convergence theory wants
    0 < inf tau_k <= sup tau_k < 2c for the estimated co-coercivity c;
    default_schedule builds schedules honoring that with a 0.9 margin.
    """

    tau: object = None
    lam: object = 100.0
    gamma: object = None

    @staticmethod
    def _at(value, k: int, name: str) -> float:
        if value is None:
            raise ValueError(f"schedule has no {name}; set it or use default_schedule")
        if callable(value):
            v = float(value(k))
        elif np.ndim(value) == 0:
            v = float(value)
        else:
            seq = np.asarray(value, dtype=float)
            v = float(seq[min(k - 1, seq.size - 1)])
        if not v > 0:
            raise ValueError(f"{name}_{k} must be positive, got {v}")
        return v

    def tau_at(self, k: int) -> float:
        return self._at(self.tau, k, "tau")

    def lam_at(self, k: int) -> float:
        return self._at(self.lam, k, "lam")

    def gamma_at(self, k: int) -> float:
        return self._at(self.gamma if self.gamma is not None else self.tau, k, "gamma")


def vi_project_iterate(F: OperatorField, u0, sched: StepSchedule,
                       tol: float = 1e-8, max_iter: int = 1000):
    """Projection iteration u^k = Pi_K(u^{k-1} + tau_k F(u^{k-1})).

    F is an ascent (reward-gradient) field. Stops at the first iterate whose
    projected residual ||Pi_K(u + F(u)) - u||_inf is <= tol. Returns
    (u, trace) where trace rows are (k, residual). Raises NonConvergenceError
    with the trace after max_iter.
    """
    u = np.asarray(u0, dtype=float).copy()
    trace = []
    resid = float(np.max(np.abs(project(F.box, u + F.eval(u)) - u)))
    if resid <= tol:
        return u, trace
    for k in range(1, max_iter + 1):
        u = project(F.box, u + sched.tau_at(k) * F.eval(u))
        resid = float(np.max(np.abs(project(F.box, u + F.eval(u)) - u)))
        trace.append((k, resid))
        if resid <= tol:
            return u, trace
    raise NonConvergenceError(
        f"projection iteration residual {resid:.3e} > tol after {max_iter} iters",
        reason="max_rounds", trace=trace, last=u)


@dataclass(frozen=True)
class CoCoercivityEstimate:
    c_hat: float
    samples: int
    box: tuple

    @property
    def co_coercive(self) -> bool:
        return self.c_hat > 0


def estimate_cocoercivity(F, box, n_pairs: int = 500, seed: int = 0) -> CoCoercivityEstimate:
    """Sampled co-coercivity constant of an ascent field over a box.

    c_hat = min over pairs of <-(F(x) - F(y)), x - y> / ||F(x) - F(y)||^2;
    the orientation treats F as a reward gradient, so F(u) = b - u gives
    c_hat = 1 and F(u) = b - M u gives 1/lambda_max(M) for SPD M. Pairs with
    ||F(x) - F(y)|| < 1e-12 are skipped; c_hat <= 0 flags the field as
    non-co-coercive (see CoCoercivityEstimate.co_coercive).
    """
    if n_pairs < 2:
        raise ValueError("n_pairs must be >= 2")
    eval_F = F.eval if isinstance(F, OperatorField) else F
    lo, hi = np.asarray(box[0], float), np.asarray(box[1], float)
    rng = np.random.default_rng(seed)
    best = np.inf
    used = 0
    for _ in range(n_pairs):
        x = lo + (hi - lo) * rng.random(lo.size)
        y = lo + (hi - lo) * rng.random(lo.size)
        dF = eval_F(x) - eval_F(y)
        denom = float(dF @ dF)
        if denom < 1e-24:  # ||dF|| < 1e-12
            continue
        used += 1
        best = min(best, float(-(dF @ (x - y))) / denom)
    if used == 0:
        raise ValueError("all sampled pairs were degenerate (constant field?)")
    return CoCoercivityEstimate(c_hat=float(best), samples=used, box=(lo, hi))


# ---------------------------------------------------------------------------
# the stacked reward field of a system instance

def reward_field(sys: SystemInstance):
    """F(U) as an (N, d) -> (N, d) map stacking per-agent reward gradients."""

    def F(U):
        U = joint_action(sys, U)
        X_next = joint_next_state(sys, U)
        out = np.empty_like(U)
        for n in range(sys.N):
            dyn = sys.dynamics[n]
            out[n] = (sys.utilities[n].grad_u(dyn, sys.states[n], U[n])
                      + dyn.B.T @ sys.coupling.grad(X_next, n))
        return out

    return F


def flat_reward_field(sys: SystemInstance):
    """Same field flattened to length N*d vectors, for the VI machinery."""
    F = reward_field(sys)
    return lambda u_flat: F(u_flat.reshape(sys.N, sys.d)).ravel()


def default_schedule(sys: SystemInstance, box, n_pairs: int = 500,
                     seed: int = 0) -> StepSchedule:
    """tau_k = gamma_k = min(0.9 * 2 * c_hat, 1), lam_k = 100, with c_hat
    estimated for the instance's reward field over the given flat box."""
    est = estimate_cocoercivity(flat_reward_field(sys), box, n_pairs, seed)
    if not est.co_coercive:
        raise ValueError(f"reward field not co-coercive on the box (c_hat={est.c_hat:.3e}); "
                         "supply an explicit StepSchedule")
    tau = min(0.9 * 2.0 * est.c_hat, 1.0)
    return StepSchedule(tau=tau, lam=100.0, gamma=tau)


def coupling_slice(sys: SystemInstance, n: int, u_frozen) -> CouplingSlice:
    """The shared coupling as seen by agent n with opponents frozen at
    u_frozen, chain-ruled through agent n's next state."""
    U = joint_action(sys, u_frozen)
    dyn = sys.dynamics[n]
    x_n = sys.states[n]
    X_frozen = joint_next_state(sys, U)

    def states_with(un):
        X = X_frozen.copy()
        X[n] = step(dyn, x_n, un)
        return X

    return CouplingSlice(
        value=lambda un: sys.coupling.value(states_with(un)),
        grad=lambda un: dyn.B.T @ sys.coupling.grad(states_with(un), n))


# ---------------------------------------------------------------------------
# play modes (one iteration each; the loop lives in mechanism.run_stage)

def play_simultaneous(sys: SystemInstance, u_prev,
                      cfg: BestResponseConfig = BestResponseConfig()) -> np.ndarray:
    """All agents best-respond in parallel against u_prev."""
    U = joint_action(sys, u_prev)
    out = np.empty_like(U)
    for n in range(sys.N):
        game = GameSpec(utility=sys.utilities[n], coupling=coupling_slice(sys, n, U))
        out[n] = best_response(game, sys.states[n], sys.dynamics[n], U[n], cfg)
    return out


def play_sequential(sys: SystemInstance, u_prev, t: int,
                    cfg: BestResponseConfig = BestResponseConfig()) -> np.ndarray:
    """Only agent t mod N best-responds; everyone else copies u_prev.
    Chaining t = 0, 1, ... yields a Gauss-Seidel sweep."""
    U = joint_action(sys, u_prev).copy()
    n = t % sys.N
    game = GameSpec(utility=sys.utilities[n], coupling=coupling_slice(sys, n, U))
    U[n] = best_response(game, sys.states[n], sys.dynamics[n], U[n], cfg)
    return U


def probe_utility_gradient(lam: float, response, anchor, coupling_grad) -> np.ndarray:
    """Private-gradient extraction from a proximal probe response.

    Stage-1 stationarity grad U(u_hat) + grad G(u_hat) - lam (u_hat - anchor)
    = 0 rearranges to grad U(u_hat) = lam (u_hat - anchor) - grad G(u_hat):
    the coordinator reads the agent's private utility gradient using only the
    observed response and quantities it knows.
    """
    return lam * (np.asarray(response, float) - np.asarray(anchor, float)) \
        - np.asarray(coupling_grad, float)


def stage2_probe_target(anchor, gamma: float, utility_grad, coupling_grad) -> np.ndarray:
    """Target v of the stage-2 probe game -||u - v||^2; best-responding to it
    reproduces the net update anchor + gamma (grad U + grad G)."""
    return np.asarray(anchor, float) + gamma * (
        np.asarray(utility_grad, float) + np.asarray(coupling_grad, float))


def _proximal_responses(sys: SystemInstance, anchors: np.ndarray, lam: float,
                        frozen: np.ndarray, cfg: BestResponseConfig):
    # GameSpec's proximal payoff is -c ||u - anchor||^2; posing c = lam/2 makes
    # the stationarity coefficient exactly lam (see module docstring).
    slices = [coupling_slice(sys, n, frozen) for n in range(sys.N)]
    resp = np.empty_like(anchors)
    for n in range(sys.N):
        game = GameSpec(utility=sys.utilities[n], coupling=slices[n],
                        proximal=(0.5 * lam, anchors[n]))
        resp[n] = best_response(game, sys.states[n], sys.dynamics[n], anchors[n], cfg)
    return resp, slices


class TwoStageUpdate(NamedTuple):
    u: np.ndarray              # net update u^k
    u_hat: np.ndarray          # stage-1 probe responses
    utility_grads: np.ndarray  # extracted grad U_n(u_hat_n), coordinator-side


def two_stage_update(sys: SystemInstance, u_prev, k: int, sched: StepSchedule,
                     cfg: BestResponseConfig = BestResponseConfig()) -> TwoStageUpdate:
    """One round of two-stage play, exposing the probe internals.

    Stage 1: each agent solves grad U_n(u_hat) + grad_n G(u_hat, u_prev_{-n})
    - lam_k (u_hat - u_prev_n) = 0. Stage 2 is applied as the derived net
    update u^k = u^{k-1} + gamma_k (grad U_n(u_hat_n) + grad_n G(u_hat)),
    with grad U extracted via probe_utility_gradient; the equivalent posed
    probe game is available through stage2_probe_target.
    """
    U = joint_action(sys, u_prev)
    lam = sched.lam_at(k)
    gamma = sched.gamma_at(k)
    u_hat, slices = _proximal_responses(sys, U, lam, U, cfg)
    X_hat = joint_next_state(sys, u_hat)
    g_util = np.empty_like(U)
    g_coup = np.empty_like(U)
    for n in range(sys.N):
        g_util[n] = probe_utility_gradient(lam, u_hat[n], U[n], slices[n].grad(u_hat[n]))
        g_coup[n] = sys.dynamics[n].B.T @ sys.coupling.grad(X_hat, n)
    return TwoStageUpdate(u=U + gamma * (g_util + g_coup), u_hat=u_hat,
                          utility_grads=g_util)


def play_two_stage(sys: SystemInstance, u_prev, k: int, sched: StepSchedule,
                   cfg: BestResponseConfig = BestResponseConfig()) -> np.ndarray:
    return two_stage_update(sys, u_prev, k, sched, cfg).u


class SingleStageUpdate(NamedTuple):
    u: np.ndarray              # agent responses u^k
    u_tilde: np.ndarray        # coordinator sequence u_tilde^k
    utility_grads: np.ndarray  # extracted grad U_n(u_n^k)


def single_stage_update(sys: SystemInstance, u_prev, u_tilde_prev, k: int,
                        sched: StepSchedule,
                        cfg: BestResponseConfig = BestResponseConfig()) -> SingleStageUpdate:
    """One round of single-stage play.

    Agents best-respond to the proximal probe anchored at their own previous
    response, with opponents frozen at the coordinator sequence
    u_tilde^{k-1}; the coordinator then advances
    u_tilde^k = u^{k-1} + gamma_k (grad U_n(u_n^k) + grad_n G(u^k)) using only
    known quantities (grad U extracted via the probe identity).
    """
    U = joint_action(sys, u_prev)
    Ut = joint_action(sys, u_tilde_prev)
    lam = sched.lam_at(k)
    gamma = sched.gamma_at(k)
    resp, slices = _proximal_responses(sys, U, lam, Ut, cfg)
    X = joint_next_state(sys, resp)
    g_util = np.empty_like(U)
    g_coup = np.empty_like(U)
    for n in range(sys.N):
        g_util[n] = probe_utility_gradient(lam, resp[n], U[n], slices[n].grad(resp[n]))
        g_coup[n] = sys.dynamics[n].B.T @ sys.coupling.grad(X, n)
    return SingleStageUpdate(u=resp, u_tilde=U + gamma * (g_util + g_coup),
                             utility_grads=g_util)


def play_single_stage(sys: SystemInstance, u_prev, u_tilde_prev, k: int,
                      sched: StepSchedule,
                      cfg: BestResponseConfig = BestResponseConfig()):
    upd = single_stage_update(sys, u_prev, u_tilde_prev, k, sched, cfg)
    return upd.u, upd.u_tilde


def play_tikhonov(sys: SystemInstance, u_prev, k: int, sched: StepSchedule,
                  cfg: BestResponseConfig = BestResponseConfig()) -> np.ndarray:
    """Proximally regularized full step: each agent maximizes its reward plus
    the Tikhonov anchor term; the responses are the next iterate directly
    (a perturbed projection step with effective step 1/lam_k)."""
    U = joint_action(sys, u_prev)
    resp, _ = _proximal_responses(sys, U, sched.lam_at(k), U, cfg)
    return resp


def grid_gradient_bound(sys: SystemInstance, box, pitch_divisions: int = 50) -> float:
    """Dense-grid estimate of D = max_n sup ||grad_{u_n}(U_n + G)|| over the
    joint action box (pitch = width / pitch_divisions per dimension). This
    is the constant in the proximal-gap bound ||u_hat - u_prev|| <= N D / lam.
    Practical for N * d <= 3, like the grid oracle."""
    m = sys.N * sys.d
    if m > 3:
        raise ValueError(f"grid bound supports N*d <= 3, got {m}")
    lo = np.broadcast_to(np.asarray(box[0], dtype=float), (m,))
    hi = np.broadcast_to(np.asarray(box[1], dtype=float), (m,))
    F = reward_field(sys)
    axes = [np.linspace(lo[i], hi[i], pitch_divisions + 1) for i in range(m)]
    best = 0.0
    for point in np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, m):
        vals = F(point.reshape(sys.N, sys.d))
        best = max(best, float(np.max(np.linalg.norm(vals, axis=1))))
    return best


# ---------------------------------------------------------------------------
# dynamic-tracking diagnostic bound

def tracking_error_bound(lambda_B: float, u_m: float, h_F: float, E: Sequence[float]) -> float:
    """Tracking-error bound for per-stage play against drifting states.

    lambda_B is the largest absolute eigenvalue of the input matrix B (must
    be < 1), u_m the action-norm bound, h_F the sensitivity of the per-stage
    Nash target to the state, and E the static-play decay factors E_n after n
    iterations. Returns the minimum over n = 1..len(E) of

        h_F lambda_B n u_m / (1 - lambda_B)
        - h_F lambda_B (1 - lambda_B^n) u_m / (1 - lambda_B)^2
        + 2 E_n u_m.

    At n = 1 the two drift terms cancel exactly, leaving 2 E_1 u_m; with
    lambda_B = 0 the bound is 2 u_m min_n E_n.
    """
    if not 0.0 <= lambda_B:
        raise ValueError("lambda_B must be >= 0")
    if lambda_B >= 1.0:
        raise ValueError("lambda_B must be < 1")
    E = np.asarray(E, dtype=float)
    if E.size == 0:
        raise ValueError("E must be non-empty")
    n = np.arange(1, E.size + 1, dtype=float)
    drift = (h_F * lambda_B * n * u_m / (1.0 - lambda_B)
             - h_F * lambda_B * (1.0 - lambda_B ** n) * u_m / (1.0 - lambda_B) ** 2)
    return float(np.min(drift + 2.0 * E * u_m))
