"""Command-line driver: simulate a configured instance end to end, identify
utilities from logged observations, and compare play modes against the
oracle.

Exit codes: 0 success, 1 error (bad input, solver failure, round budget
exhausted), 2 oscillation detected during simulate, 3 rank-deficient
identification. stdout carries only the written report path; diagnostics go
to stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from .errors import ConfigError, CoordinationError, NonConvergenceError, RankDeficiencyError
from .mechanism import PLAY_MODES, PollingConfig, run_stage, price_from_target, social_welfare
from .model import LinearDynamics, replace_states, step
from .oracle import joint_welfare_opt
from .parametric import ObservationLog, identify, load_log, save_log
from .scenario import (
    ScenarioConfig,
    config_from_dict,
    generate,
    load_config,
    noise_streams,
    polling_config,
    _waypoint,
)


def _jsonify(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, dict):
        return {k: _jsonify(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonify(v) for v in obj]
    return obj


def _write_json(data: dict, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(_jsonify(data), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _announce(path: str, quiet: bool) -> None:
    if not quiet:
        print(path)


def _override_config(cfg: ScenarioConfig, seed) -> ScenarioConfig:
    if seed is None:
        return cfg
    data = cfg.to_dict()
    data["seed"] = int(seed)
    return config_from_dict(data)


def _oracle_welfare(inst, pcfg: PollingConfig):
    res = joint_welfare_opt(inst, box=pcfg.box, method="closed_form", seed=0)
    return float(res.welfare)


def _write_dynamics(cfg: ScenarioConfig, inst, path: str) -> None:
    agents = []
    for n in range(cfg.N):
        agents.append({"A": inst.dynamics[n].A, "B": inst.dynamics[n].B,
                       "x0": _waypoint(n, cfg.N, cfg.d)})
    _write_json({"N": cfg.N, "d": cfg.d, "agents": agents}, path)


def cmd_simulate(config_path: str, out_dir: str, mode=None, seed=None,
                 quiet: bool = False) -> int:
    t_start = time.perf_counter()
    cfg = _override_config(load_config(config_path), seed)
    pcfg = polling_config(cfg, mode_override=mode)
    inst = generate(cfg)
    noise = noise_streams(cfg) if cfg.noise_std > 0 else None

    os.makedirs(out_dir, exist_ok=True)
    trace_path = os.path.join(out_dir, "trace.csv")
    report_path = os.path.join(out_dir, "report.json")
    _write_dynamics(cfg, inst, os.path.join(out_dir, "dynamics.json"))

    rows = []
    welfare_series = []
    iterations = 0
    failure = None
    u_warm = np.zeros((cfg.N, cfg.d))
    stage_inst = inst  # instance the final completed stage ran on

    for t in range(cfg.horizon):
        try:
            st = run_stage(inst, u_warm, pcfg)
        except NonConvergenceError as exc:
            tr = exc.trace
            failure = {"reason": exc.reason, "stage": t,
                       "rounds": (tr.iterations if tr is not None else 0),
                       "message": str(exc)}
            if tr is not None and tr.iterations:
                iterations += tr.iterations
                failure["recent_actions"] = tr.actions[-6:]
                failure["recent_residuals"] = tr.residual[-6:]
            break
        iterations += st.iterations
        u_star = st.u_final
        stage_inst = inst
        welfare_series.append(social_welfare(inst, u_star))
        prices = price_from_target(inst, u_star)
        for n in range(cfg.N):
            rows.append((t, n, inst.states[n].copy(), u_star[n].copy(), prices[n].copy()))
        new_states = np.empty_like(inst.states)
        for n in range(cfg.N):
            w = cfg.noise_std * noise[n].normal(size=cfg.d) if noise is not None else None
            new_states[n] = step(inst.dynamics[n], inst.states[n], u_star[n], w)
        inst = replace_states(inst, new_states)
        u_warm = u_star

    if rows:
        save_log(ObservationLog.from_rows(rows), trace_path)
    else:
        from .parametric import csv_header
        with open(trace_path, "w") as fh:
            fh.write(csv_header(cfg.d) + "\n")

    final_welfare = welfare_series[-1] if welfare_series else None
    oracle_welfare = None
    gap = None
    if failure is None:
        # oracle at the same states the final stage converged on
        oracle_welfare = _oracle_welfare(stage_inst, pcfg)
        gap = oracle_welfare - final_welfare

    report = {
        "config": cfg.to_dict(),
        "mode": pcfg.mode,
        "welfare_series": welfare_series,
        "final_welfare": final_welfare,
        "oracle_welfare": oracle_welfare,
        "gap": gap,
        "iterations": iterations,
        "converged": failure is None,
        "wall_time_ms": (time.perf_counter() - t_start) * 1000.0,
    }
    if failure is not None:
        report["failure"] = failure
    _write_json(report, report_path)
    _announce(report_path, quiet)

    if failure is None:
        return 0
    print(f"simulate: {failure['message']}", file=sys.stderr)
    return 2 if failure["reason"] == "oscillation" else 1


def _load_dynamics(path: str):
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: malformed JSON at line {exc.lineno}: {exc.msg}") from None
    for key in ("N", "d", "agents"):
        if key not in data:
            raise ConfigError(f"{path}: missing field {key!r}")
    if len(data["agents"]) != data["N"]:
        raise ConfigError(f"{path}: expected {data['N']} agent entries")
    out = []
    for i, entry in enumerate(data["agents"]):
        for key in ("A", "B", "x0"):
            if key not in entry:
                raise ConfigError(f"{path}: agent {i}: missing field {key!r}")
        out.append((LinearDynamics(A=np.array(entry["A"], dtype=float),
                                   B=np.array(entry["B"], dtype=float)),
                    np.array(entry["x0"], dtype=float)))
    return out


def cmd_identify(log_path: str, dynamics_path: str, out_dir: str,
                 quiet: bool = False) -> int:
    log = load_log(log_path)
    agents = _load_dynamics(dynamics_path)
    os.makedirs(out_dir, exist_ok=True)
    entries = []
    deficient = []
    for n, (dyn, x0) in enumerate(agents):
        try:
            m = identify(log, n, dyn, x0)
        except RankDeficiencyError as exc:
            deficient.append((n, exc))
            entries.append({"agent": n, "error": str(exc), "rank": exc.rank,
                            "required": exc.required})
            continue
        entries.append({"agent": n, "C": m.C, "D": m.D, "Q_hat": m.Q_hat,
                        "R_hat": m.R_hat, "residual": m.residual, "rank": m.rank,
                        "x0_check": m.x0_check, "b_condition": m.b_condition})
    out_path = os.path.join(out_dir, "models.json")
    _write_json({"agents": entries}, out_path)
    _announce(out_path, quiet)
    if deficient:
        for n, exc in deficient:
            print(f"identify: agent {n}: rank {exc.rank} < required {exc.required}",
                  file=sys.stderr)
        return 3
    return 0


def cmd_compare(config_path: str, out_dir: str, seed=None, quiet: bool = False) -> int:
    cfg = _override_config(load_config(config_path), seed)
    inst = generate(cfg)
    base_pcfg = polling_config(cfg)
    oracle_welfare = _oracle_welfare(inst, base_pcfg)

    table = {}
    u0 = np.zeros((cfg.N, cfg.d))
    for mode in PLAY_MODES:
        pcfg = polling_config(cfg, mode_override=mode)
        try:
            st = run_stage(inst, u0, pcfg)
            final = social_welfare(inst, st.u_final)
            table[mode] = {"iterations": st.iterations, "final_welfare": final,
                           "gap": oracle_welfare - final, "converged": True}
        except NonConvergenceError as exc:
            tr = exc.trace
            final = float(tr.welfare[-1]) if tr is not None and tr.iterations else None
            table[mode] = {"iterations": (tr.iterations if tr is not None else 0),
                           "final_welfare": final,
                           "gap": (oracle_welfare - final) if final is not None else None,
                           "converged": False, "reason": exc.reason}

    os.makedirs(out_dir, exist_ok=True)
    out_path = os.path.join(out_dir, "compare.json")
    _write_json({"config": cfg.to_dict(), "oracle_welfare": oracle_welfare,
                 "modes": table}, out_path)
    _announce(out_path, quiet)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pricecoord",
        description="Price-based coordination of selfish linear-dynamics agents: "
                    "simulate, identify, compare.")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run the staged coordination loop")
    sim.add_argument("--config", required=True, help="scenario JSON path")
    sim.add_argument("--out", required=True, help="output directory")
    sim.add_argument("--mode", choices=PLAY_MODES, help="override the config's play mode")
    sim.add_argument("--seed", type=int, help="override the config's seed")
    sim.add_argument("--quiet", action="store_true", help="suppress the report path on stdout")

    idf = sub.add_parser("identify", help="fit quadratic utilities from a trace")
    idf.add_argument("--log", required=True, help="observation CSV (trace.csv)")
    idf.add_argument("--dynamics", required=True, help="dynamics JSON from simulate")
    idf.add_argument("--out", required=True, help="output directory")
    idf.add_argument("--quiet", action="store_true")

    cmp_p = sub.add_parser("compare", help="run every play mode plus the oracle once")
    cmp_p.add_argument("--config", required=True, help="scenario JSON path")
    cmp_p.add_argument("--out", default=".", help="output directory (default: cwd)")
    cmp_p.add_argument("--seed", type=int, help="override the config's seed")
    cmp_p.add_argument("--quiet", action="store_true")

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "simulate":
            return cmd_simulate(args.config, args.out, mode=args.mode,
                                seed=args.seed, quiet=args.quiet)
        if args.command == "identify":
            return cmd_identify(args.log, args.dynamics, args.out, quiet=args.quiet)
        return cmd_compare(args.config, args.out, seed=args.seed, quiet=args.quiet)
    except (ConfigError, CoordinationError, OSError, ValueError) as exc:
        print(f"pricecoord: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
