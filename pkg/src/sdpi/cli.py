"""Command-line harness: verification suites and benchmark runs.

Commands: verify-identities | oracle-study | run-sdpi | theorem1 |
optimal-cost.  Every run echoes its resolved configuration into the
output directory and writes CSV tables with fixed 17-significant-digit
formatting, so reruns with the same config and seed are byte-identical.
"""

import argparse
import csv
import dataclasses
import os
import sys

import numpy as np

from . import dynamics as dyn
from .collocation import LossWeights
from .config import echo_config, load_config
from .diagnostics import ErrorReport, compute_optimal_cost, emit_report, theorem1_experiment
from .envs import evaluate_policy_cost, gaussian_starts, make_env
from .errors import ConfigError, SdpiError
from .fd import (
    FdConfig,
    adjointness_defect,
    central_forward_bound_check,
    diffusion_identity_defect,
    transport_identity_defect,
)
from .fields import GridField
from .geometry import Box
from .oracle import (
    evaluate_policy,
    exact_policy_iteration,
    gradient_scale_experiment,
    manufactured_problem,
)
from .pi import SdpiConfig, run_sdpi
from .rng import substream


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _random_field(rng, d: int, n: int, h: float) -> GridField:
    shape = (n,) * d
    origin = -h * np.ones(d)
    return GridField(rng.standard_normal(shape), h, origin)


def cmd_verify_identities(cfg, seed: int, out_dir: str) -> int:
    v = cfg["verify"]
    h = 0.1
    tol = v["tolerance"]
    rows = []
    ok = True
    for d in v["dims"]:
        n = v["grid_n"] + 2
        for s in range(v["seeds"]):
            rng = substream(seed, f"verify/{d}/{s}")
            phi = _random_field(rng, d, n, h)
            psi = phi.with_values(rng.standard_normal(phi.shape))
            a = phi.with_values(rng.standard_normal(phi.shape))
            z = phi.with_values(rng.standard_normal(phi.shape))
            scale = float(
                np.linalg.norm(phi.values) * np.linalg.norm(psi.values) * phi.cell_volume
            )
            for i in range(d):
                adj = adjointness_defect(phi, psi, i, h) / max(scale, 1e-30)
                _, _, tdef = transport_identity_defect(z, a, i, h)
                trel = tdef / max(float(np.sum(z.values**2) * z.cell_volume), 1e-30)
                rows.append((d, s, i, "adjointness", adj, adj <= tol))
                rows.append((d, s, i, "transport", trel, trel <= tol))
                ok = ok and adj <= tol and trel <= tol
            ddef = diffusion_identity_defect(z, h)
            drel = ddef / max(float(np.sum(z.values**2) * z.cell_volume), 1e-30)
            lhs, rhs = central_forward_bound_check(z, h)
            cf_ok = lhs <= rhs * (1 + 1e-12)
            rows.append((d, s, -1, "diffusion", drel, drel <= tol))
            rows.append((d, s, -1, "central_forward", rhs - lhs, cf_ok))
            ok = ok and drel <= tol and cf_ok
    write_csv(
        os.path.join(out_dir, "identity_defects.csv"),
        ["d", "seed", "axis", "lemma", "relative_defect", "pass"],
        rows,
    )
    return 0 if ok else 1


def _oracle_env(cfg, env):
    o = cfg["oracle"]
    if env.d > 2:
        raise ConfigError("oracle study requires an environment with d <= 2")
    if o["horizon"] > 0 and o["horizon"] != env.T:
        env = dataclasses.replace(env, T=o["horizon"])
    omega = Box.cube(o["omega_half"], env.d)
    nu = o["nu_h"] if o["nu_h"] > 0 else max(1.0, env.M_a / 2.0) * o["h"]
    return env, omega, FdConfig(h=o["h"], nu_h=nu)


def cmd_oracle_study(cfg, env_name: str, seed: int, out_dir: str) -> int:
    env, omega, fdcfg = _oracle_env(cfg, make_env(env_name))
    o = cfg["oracle"]

    # manufactured-solution convergence in the time step
    def vstar(tau, x):
        return np.exp(-0.5 * tau) * np.prod(np.sin(np.atleast_2d(x)), axis=-1)

    def vstar_dtau(tau, x):
        return -0.5 * vstar(tau, x)

    def drift(tau, x):
        return np.ones_like(np.atleast_2d(x))

    T_man = min(env.T, 1.0)
    gp0 = manufactured_problem(vstar, vstar_dtau, drift, omega, T_man, fdcfg, drift_sup=1.0)
    base = gp0.stable_dtau()
    conv_rows = []
    for level in range(3):
        dtau = base / 2**level
        gp = dataclasses.replace(gp0, dtau=dtau)
        stg = evaluate_policy(gp, n_snapshots=2)
        gf = stg.snapshot(stg.taus.size - 1)
        ref = vstar(stg.taus[-1], gf.node_coords()).reshape(gf.shape)
        err = float(np.max(np.abs((gf.values - ref)[gf.interior_slices()])))
        conv_rows.append((level, dtau, err))
    write_csv(os.path.join(out_dir, "manufactured_convergence.csv"),
              ["level", "dtau", "sup_error"], conv_rows)

    # exact PI monotonicity and successive gaps
    iterates, _ = exact_policy_iteration(env, fdcfg, o["n_pi"], omega=omega,
                                         n_snapshots=o["n_snapshots"])
    scale = float(np.max(np.abs(iterates[0].values)))
    mono_rows = []
    for n in range(1, len(iterates)):
        diff = iterates[n].values - iterates[n - 1].values
        violation = float(np.max(diff))
        gap = float(np.max(np.abs(diff)))
        mono_rows.append((n, violation, gap, violation <= 1e-6 * scale))
    write_csv(os.path.join(out_dir, "pi_monotonicity.csv"),
              ["iteration", "max_increase", "sup_gap", "monotone"], mono_rows)

    grad_rows = gradient_scale_experiment(env, fdcfg.h, o["nu_sweep"], omega=omega,
                                          n_snapshots=o["n_snapshots"])
    write_csv(os.path.join(out_dir, "gradient_scale.csv"), ["nu_h", "grad0_l2"], grad_rows)
    return 0


def cmd_run_sdpi(cfg, env_name: str, seed: int, out_dir: str,
                 known_dynamics: bool | None) -> int:
    env = make_env(env_name)
    s = cfg["sdpi"]
    sdpi_cfg = SdpiConfig(
        h=s["h"],
        nu_h=s["nu_h"],
        hidden=tuple(s["hidden"]),
        kind=s["kind"],
        skip=s["skip"],
        n_pi=s["n_pi"],
        adam_steps=s["adam_steps"],
        lr=s["lr"],
        batch_interior=s["batch_interior"],
        batch_initial=s["batch_initial"],
        batch_collar=s["batch_collar"],
        weights=LossWeights(s["lambda_ic"], s["lambda_ext"]),
        known_dynamics=s["known_dynamics"] if known_dynamics is None else known_dynamics,
        representation=s["representation"],
        rollouts_per_iter=s["rollouts_per_iter"],
        data_dt=s["data_dt"] if s["data_dt"] > 0 else None,
        greedy_budget=s["greedy_budget"],
        checkpoint_every=s["checkpoint_every"],
        seed=seed,
        out_dir=out_dir,
    )
    result = run_sdpi(env, sdpi_cfg)

    eval_rng = substream(seed, "evaluation")
    starts = gaussian_starts(env, s["eval_rollouts"], s["eval_start_scale"], eval_rng)
    mean, std, costs = evaluate_policy_cost(env, result.final_policy, starts)
    write_csv(os.path.join(out_dir, "rollout_costs.csv"),
              ["start_index", "cost"], list(enumerate(costs)))
    write_csv(os.path.join(out_dir, "cost_summary.csv"),
              ["env", "n_rollouts", "cost_mean", "cost_std"],
              [(env.name, s["eval_rollouts"], mean, std)])

    dyn_rows = []
    ledger = os.path.join(out_dir, "error_ledger.csv")
    for rec in result.records:
        report = ErrorReport(
            iteration=rec.index,
            q_empirical=float(np.sqrt(max(rec.loss_parts[0], 0.0))),
            r_norm=float(np.sqrt(max(rec.loss_parts[1], 0.0))),
            b_l2=float(np.sqrt(max(rec.loss_parts[2], 0.0))),
            eta_rel=rec.dynamics_error,
            g_h=1.0 + sdpi_cfg.nu_h ** (-0.5),
        )
        if rec.index == result.records[-1].index:
            report.rollout_cost_mean = mean
            report.rollout_cost_std = std
        emit_report(report, os.path.join(out_dir, f"report_iter{rec.index:04d}.json"),
                    ledger_path=ledger)
        if rec.dynamics_error is not None:
            dyn_rows.append((rec.index, rec.dynamics_error))
    if dyn_rows:
        write_csv(os.path.join(out_dir, "dynamics_error.csv"),
                  ["iteration", "relative_l2"], dyn_rows)
    return 0


def cmd_theorem1(cfg, env_name: str, seed: int, out_dir: str) -> int:
    env = make_env(env_name)
    t = cfg["theorem1"]
    if env.d > 2:
        raise ConfigError("theorem1 requires an environment with d <= 2")
    omega = Box.cube(t["omega_half"], env.d)
    fdcfg = FdConfig(h=t["h"], nu_h=t["nu_h"])

    rows = []
    for channel, sweep in (("eta", t["eta_sweep"]), ("r", t["r_sweep"]), ("b", t["b_sweep"])):
        for val in sweep:
            kw = {"eta_const": 0.0, "r_scale": 0.0, "b_scale": 0.0}
            kw[{"eta": "eta_const", "r": "r_scale", "b": "b_scale"}[channel]] = val
            for s in range(t["n_seeds"]):
                res = theorem1_experiment(
                    env, fdcfg, omega=omega, solver=t["solver"],
                    adam_steps=t["adam_steps"], seed=seed + s, **kw,
                )
                rows.append((channel, val, s, res.lhs, res.channel_sum, res.ratio))
    write_csv(os.path.join(out_dir, "channel_sweep.csv"),
              ["channel", "injection", "seed", "lhs", "channel_sum", "ratio"], rows)

    nu_rows = []
    for nu in t["nu_sweep"]:
        cfg_nu = FdConfig(h=t["h"], nu_h=float(nu))
        res = theorem1_experiment(env, cfg_nu, omega=omega, solver=t["solver"],
                                  adam_steps=t["adam_steps"],
                                  eta_const=t["eta_for_nu_sweep"], seed=seed)
        amp = res.lhs / max(res.report.eta_inf, 1e-30)
        nu_rows.append((nu, res.lhs, res.report.eta_inf, amp, res.g_h))
    write_csv(os.path.join(out_dir, "gh_amplification.csv"),
              ["nu_h", "lhs", "eta_inf", "lhs_over_eta", "g_h"], nu_rows)
    return 0


def cmd_optimal_cost(cfg, env_name: str, seed: int, out_dir: str) -> int:
    env = make_env(env_name)
    oc = cfg["optimal_cost"]
    rng = substream(seed, "evaluation")
    starts = gaussian_starts(env, oc["n_starts"], oc["start_scale"], rng)
    dt = oc["dt"] if oc["dt"] > 0 else None
    oracle = compute_optimal_cost(env, starts, oc["method"], dt=dt)
    rows = [
        (i, oracle.costs[i], bool(oracle.failures[i]))
        for i in range(starts.shape[0])
    ]
    write_csv(os.path.join(out_dir, "oracle_costs.csv"),
              ["start_index", "cost", "failed"], rows)
    write_csv(os.path.join(out_dir, "oracle_summary.csv"),
              ["env", "method", "upper_bound_only", "cost_mean"],
              [(env.name, oracle.method, oracle.upper_bound_only, oracle.mean)])
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="sdpi")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("verify-identities", "oracle-study", "run-sdpi", "theorem1", "optimal-cost"):
        p = sub.add_parser(name)
        p.add_argument("--config", default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None)
        p.add_argument("--env", default=None)
        if name == "run-sdpi":
            p.add_argument("--known-dynamics", action="store_true", default=None)
    args = parser.parse_args(argv)

    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg["run"]["seed"] = args.seed
        if args.env is not None:
            cfg["run"]["env"] = args.env
        if args.out is not None:
            cfg["run"]["out"] = args.out
        seed = cfg["run"]["seed"]
        env_name = cfg["run"]["env"]
        out_dir = cfg["run"]["out"]
        os.makedirs(out_dir, exist_ok=True)
        echo_config(cfg, out_dir)
        if args.command == "verify-identities":
            return cmd_verify_identities(cfg, seed, out_dir)
        if args.command == "oracle-study":
            return cmd_oracle_study(cfg, env_name, seed, out_dir)
        if args.command == "run-sdpi":
            return cmd_run_sdpi(cfg, env_name, seed, out_dir,
                                getattr(args, "known_dynamics", None))
        if args.command == "theorem1":
            return cmd_theorem1(cfg, env_name, seed, out_dir)
        if args.command == "optimal-cost":
            return cmd_optimal_cost(cfg, env_name, seed, out_dir)
    except SdpiError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
