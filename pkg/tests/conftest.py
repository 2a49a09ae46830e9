"""Shared instance builders for the test suite."""

import numpy as np
import pytest

import pricecoord as pc


def make_two_agent_scalar(eps: float) -> pc.SystemInstance:
    """Two scalar agents with targets +1/-1 and a quadratic disagreement penalty.

    Dynamics are the identity (x_next = x + u at x = 0), so each agent's
    private utility is -(u_n - a_n)^2 and the coupling is -eps (u_1 - u_2)^2.
    The Nash equilibrium is u = (1/(1 + 2 eps)) (1, -1), which is also the
    welfare optimum since the shared coupling makes this an exact potential.
    """
    dyn = pc.LinearDynamics(A=np.eye(1), B=np.eye(1))
    utils = [
        pc.SmoothUtility(
            value_fn=lambda x_next, u, a=a: -float((u[0] - a) ** 2),
            gradient_u=lambda x_next, u, dyn, a=a: np.array([-2.0 * (u[0] - a)]),
        )
        for a in (1.0, -1.0)
    ]
    G = pc.pairwise_quadratic_coupling(eps, 2, 1)
    return pc.SystemInstance(
        dynamics=(dyn, dyn),
        utilities=tuple(utils),
        coupling=G,
        states=np.zeros((2, 1)),
    )


def scalar_nash(eps: float) -> np.ndarray:
    """Closed-form Nash actions for make_two_agent_scalar."""
    v = 1.0 / (1.0 + 2.0 * eps)
    return np.array([[v], [-v]])


def random_spd(rng, d: int, lo: float = 0.5, hi: float = 2.0) -> np.ndarray:
    M = rng.normal(size=(d, d))
    Qm, _ = np.linalg.qr(M)
    eigs = rng.uniform(lo, hi, size=d)
    return Qm @ np.diag(eigs) @ Qm.T


def random_quadratic_instance(rng, N: int, d: int, coupling: float = 0.0,
                              spread: float = 1.0) -> pc.SystemInstance:
    """Random well-conditioned quadratic instance, optionally coupled."""
    dynamics = []
    utilities = []
    for _ in range(N):
        A = np.eye(d) + 0.3 * rng.normal(size=(d, d)) / np.sqrt(d)
        B = np.eye(d) + 0.3 * rng.normal(size=(d, d)) / np.sqrt(d)
        dynamics.append(pc.LinearDynamics(A=A, B=B))
        utilities.append(pc.QuadraticUtility(
            Q=random_spd(rng, d),
            R=random_spd(rng, d),
            x0=spread * rng.normal(size=d),
        ))
    if coupling != 0.0 and N > 1:
        G = pc.pairwise_quadratic_coupling(coupling, N, d)
    else:
        G = pc.zero_coupling(N, d)
    return pc.SystemInstance(
        dynamics=tuple(dynamics),
        utilities=tuple(utilities),
        coupling=G,
        states=spread * rng.normal(size=(N, d)),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(0)
