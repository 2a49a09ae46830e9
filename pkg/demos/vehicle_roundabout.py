#!/usr/bin/env python3
"""Three vehicles cross a shared region without being told to avoid each other.

Each vehicle privately wants its own waypoint; the coordinator adds a
softplus separation barrier to the shared reward and polls. Stage by
stage it runs the virtual best-response loop to convergence, posts the
supporting prices, and only then lets the vehicles move. As the fleet
contracts toward the waypoints the closest pair settles just outside the
barrier radius, held there by nonzero prices; rerunning the same seed
with the barrier off shows the pair packing far closer. Coordination
comes out of the prices, not out of any hand-written avoidance rule.

Usage: python3 demos/vehicle_roundabout.py

The command line runs the same loop and writes trace.csv / report.json:
    pricecoord simulate --config <config.json> --out <dir>
"""

import numpy as np

import pricecoord as pc


def min_separation(states):
    N = len(states)
    return min(float(np.linalg.norm(states[i] - states[j]))
               for i in range(N) for j in range(i + 1, N))


def staged_run(coupling_strength, report_every=None):
    cfg = pc.ScenarioConfig(N=3, d=2, seed=13, horizon=40,
                            coupling_strength=coupling_strength,
                            safety_radius=6.0, noise_std=0.01,
                            mode={"mode": "simultaneous", "max_rounds": 500})
    inst = pc.generate(cfg)
    pcfg = pc.polling_config(cfg)
    noise = pc.noise_streams(cfg)
    u = np.zeros((cfg.N, cfg.d))
    prices = np.zeros((cfg.N, cfg.d))
    for t in range(cfg.horizon):
        trace = pc.run_stage(inst, u, pcfg)
        u = trace.u_final
        prices = pc.price_from_target(inst, u)
        new_states = np.stack([
            pc.step(inst.dynamics[n], inst.states[n], u[n],
                    cfg.noise_std * noise[n].normal(size=cfg.d))
            for n in range(cfg.N)])
        inst = pc.replace_states(inst, new_states)
        if report_every and (t % report_every == 0 or t == cfg.horizon - 1):
            print(f"  {t:2d}     {trace.iterations:4d}    "
                  f"{pc.social_welfare(inst, u):9.3f}    "
                  f"{min_separation(inst.states):6.3f}       "
                  f"{np.max(np.abs(prices)):.3f}")
    return min_separation(inst.states), prices


def main():
    print("3 vehicles, waypoints on the radius-10 circle, barrier radius 6.0\n")
    print("stage   rounds   welfare    closest pair   max |price|")
    sep_with, prices = staged_run(50.0, report_every=5)
    print(f"\nprices holding the standoff (one vector per vehicle):"
          f"\n{np.asarray(prices).round(3)}")

    sep_without, _ = staged_run(0.0)
    print(f"\nclosest pair after 40 stages: {sep_with:.3f} with the barrier, "
          f"{sep_without:.3f} without it.")
    print("Every stage converged before anyone moved; each posted price is "
          "that vehicle's utility gradient at its action, so holding the "
          "standoff is individually optimal.")


if __name__ == "__main__":
    main()
