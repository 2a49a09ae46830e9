#!/usr/bin/env python3
"""Learn private utilities from price responses, then price the optimum.

The coordinator never sees the agents' quadratic utilities. It only posts
prices and records the actions that come back. Each observation gives one
linear equation in the 2 d^2 unknown utility parameters, so 2d generic
probes per agent identify the whole model. With the models in hand the
coordinator computes the welfare-optimal prices directly and posts them;
the selfish best responses then land on the welfare optimum.

Usage: python3 demos/identify_and_price.py
"""

import numpy as np

import pricecoord as pc


def probe_agent(rng, sys, n, count):
    """Price observations from open-loop probes of agent n."""
    dyn, util = sys.dynamics[n], sys.utilities[n]
    rows = []
    for t in range(count):
        x = rng.normal(size=dyn.d)
        u = rng.normal(size=dyn.d)
        rows.append((t, 0, x, u, util.grad_u(dyn, x, u)))
    return pc.ObservationLog.from_rows(rows)


def main():
    rng = np.random.default_rng(12)
    d = 2
    dyns, utils = [], []
    for _ in range(2):
        A = np.eye(d) + 0.3 * rng.normal(size=(d, d)) / np.sqrt(d)
        B = np.eye(d) + 0.3 * rng.normal(size=(d, d)) / np.sqrt(d)
        dyns.append(pc.LinearDynamics(A=A, B=B))
        M = rng.normal(size=(d, d))
        Q = M @ M.T / d + 0.5 * np.eye(d)
        M = rng.normal(size=(d, d))
        R = M @ M.T / d + 0.5 * np.eye(d)
        utils.append(pc.QuadraticUtility(Q=Q, R=R, x0=rng.normal(size=d)))
    sys = pc.SystemInstance(dynamics=tuple(dyns), utilities=tuple(utils),
                            coupling=pc.pairwise_quadratic_coupling(0.3, 2, d),
                            states=rng.normal(size=(2, d)))

    print(f"message space: {pc.message_space_dimension(2, d)} parameters "
          f"({2 * d * d} per agent), so {2 * d} probes per agent suffice\n")

    models = []
    for n in range(2):
        log = probe_agent(rng, sys, n, 2 * d)
        model = pc.identify(log, 0, sys.dynamics[n], sys.utilities[n].x0)
        models.append(model)
        eq = np.linalg.norm(model.Q_hat - sys.utilities[n].Q)
        er = np.linalg.norm(model.R_hat - sys.utilities[n].R)
        print(f"agent {n}: |Q_hat - Q| = {eq:.2e}, |R_hat - R| = {er:.2e}, "
              f"regressor rank {model.rank}")

    short = probe_agent(rng, sys, 0, 2 * d - 1)
    try:
        pc.identify(short, 0, sys.dynamics[0], sys.utilities[0].x0)
    except pc.RankDeficiencyError as exc:
        print(f"\nwith one probe fewer: {exc}")

    prices = pc.optimal_price(models, sys)
    responses = np.stack([
        pc.best_response(pc.GameSpec(utility=sys.utilities[n], price=prices[n]),
                         sys.states[n], sys.dynamics[n], np.zeros(d))
        for n in range(2)])
    opt = pc.joint_welfare_opt(sys)
    print(f"\nposted the learned optimal prices; selfish responses give welfare "
          f"{pc.social_welfare(sys, responses):.8f}")
    print(f"oracle welfare optimum:                                  "
          f"{opt.welfare:.8f}")
    print(f"action gap |u - u*| = {np.linalg.norm(responses - opt.u_star):.2e}")


if __name__ == "__main__":
    main()
