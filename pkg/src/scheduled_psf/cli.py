"""Command line front end: ``simulate``, ``train``, ``verify-sets``, ``export-plots``.

Exit codes: 0 success, 1 infeasible start, 2 verification failure,
3 configuration or input error.  ``SCHEDULED_PSF_LOG`` sets the log level.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import behavior_analysis as ba
from .config import (
    ExperimentConfig,
    build_env,
    build_problem,
    build_training,
    build_verify_problem,
    load_config,
    save_config,
)
from .mad_policy import init_policy, load_checkpoint
from .pendulum_env import ConfigError, make_state, sample_initial
from .psf import InfeasibleStart
from .simulate import (
    SchemaError,
    policy_input,
    pulse_input,
    read_trajectory_csv,
    run_closed_loop,
    write_occupancy_csv,
    write_solver_csv,
    write_trajectory_csv,
    zero_input,
)
from .training import N_AUG, decile_means, train

EXIT_OK, EXIT_INFEASIBLE, EXIT_VERIFY, EXIT_CONFIG = 0, 1, 2, 3
log = logging.getLogger("scheduled_psf")


def _configure_logging():
    level = os.environ.get("SCHEDULED_PSF_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def _dump(obj, path):
    Path(path).write_text(json.dumps(obj, indent=2, default=_jsonable))


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    if hasattr(o, "to_dict"):
        return o.to_dict()
    raise TypeError(type(o))


def build_policy(cfg: ExperimentConfig, rng):
    p = cfg.policy
    if p.checkpoint:
        return load_checkpoint(p.checkpoint)
    return init_policy(2, N_AUG, 1, rng, hidden_size=p.hidden_size, mlp_hidden=tuple(int(h) for h in p.mlp_hidden),
                       output_scale=p.output_scale, r_min=p.r_min, r_max=p.r_max)


# --------------------------------------------------------------------------
# simulate


def simulate(cfg: ExperimentConfig, out: Path):
    """Run one episode per the config; returns the summary dict."""
    problem = build_problem(cfg)
    env = build_env(cfg)
    sim = cfg.simulate
    if sim.theta0 is None:
        state0 = sample_initial(cfg.run.seed, env, problem)
    else:
        state0 = make_state(sim.theta0, env, sim.omega0)
    fixed = sim.mode == "fixed"
    if sim.mode == "scripted-detour":
        source = pulse_input(sim.pulse_amplitude, sim.pulse_length)
    elif sim.mode == "scheduled" and cfg.policy.checkpoint:
        source = policy_input(build_policy(cfg, cfg.run.seed))
    else:
        source = zero_input()
    t0 = time.perf_counter()
    traj = run_closed_loop(problem, state0, source, sim.steps, env, fixed_rate=fixed, init_mode=sim.init_mode)
    summary = traj.summary()
    summary.update(mode=sim.mode, theta0=float(state0.physical[0]), seconds=time.perf_counter() - t0)
    tb = traj.tail_bound(cfg.schedule.epsilon, cfg.schedule.rho_bar)
    summary["tail_bound"] = {"lhs": tb[0], "rhs": tb[1], "ok": tb[0] <= tb[1] + 1e-6}
    out.mkdir(parents=True, exist_ok=True)
    write_trajectory_csv(traj, out / "trajectory.csv")
    write_solver_csv(traj, out / "solver.csv")
    write_occupancy_csv(traj.column("obstacle_x"), cfg.pendulum.dt, env, out / "occupancy.csv")
    _dump(summary, out / "summary.json")
    save_config(cfg, out / "config.ini")
    return summary


def cmd_simulate(cfg, args):
    out = Path(cfg.run.out)
    try:
        summary = simulate(cfg, out)
    except InfeasibleStart as e:
        print(f"infeasible at t=0: {e}", file=sys.stderr)
        return EXIT_INFEASIBLE
    print(
        f"{cfg.simulate.mode}: collision={summary['collision']} |theta_T|={summary['terminal_abs_theta']:.3g} "
        f"max rho={summary['max_rho']:.3g} J monotone={summary['J_nonincreasing']} -> {out}"
    )
    return EXIT_OK


# --------------------------------------------------------------------------
# train


def cmd_train(cfg, args):
    out = Path(cfg.run.out)
    problem = build_problem(cfg)
    env = build_env(cfg)
    tcfg = build_training(cfg)
    policy = build_policy(cfg, np.random.default_rng([cfg.run.seed, 1]))
    try:
        res = train(tcfg, env, problem, policy, out, cfg.training.checkpoint_every)
    except InfeasibleStart as e:
        print(f"infeasible start during training: {e}", file=sys.stderr)
        return EXIT_INFEASIBLE
    first, last = decile_means(res.episode_losses) if res.episode_losses else (float("nan"),) * 2
    save_config(cfg, out / "config.ini")
    _dump({"first_decile_loss": first, "last_decile_loss": last, "improved": last <= first}, out / "train_summary.json")
    print(f"trained {tcfg.episodes} episodes: first-decile loss {first:.4g}, last-decile {last:.4g} -> {out}")
    return EXIT_OK


# --------------------------------------------------------------------------
# verify-sets


def inclusion_sweep(problem, count, seed, grid, compare_backends=False):
    """Random inclusion sweep; returns a dict of counts, verdicts and sample witnesses."""
    queries = ba.random_inclusion_queries(problem, count, seed, grid)
    violations, strict, strict_pre, disagreements = [], 0, [], []
    for q1, q2, profile in queries:
        rep = ba.verify_inclusion(q1, q2, profile=profile)
        if not rep.included:
            violations.append(rep.to_dict())
        strict += rep.strict
        if rep.strict and rep.precondition:
            strict_pre.append(rep.to_dict())
        if compare_backends:
            for q in (q1, q2):
                a = ba.admissible_input_set(q, profile=profile)
                b = ba.admissible_input_set(q, ba.SOLVER)
                bad = ba.backend_disagreements(a, b)
                if bad.size:
                    disagreements.append({"x": q.x.tolist(), "rho": q.rho, "J_prev": q.J_prev, "v": grid.points()[bad].tolist()})
    return {
        "horizon": problem.horizon,
        "queries": count,
        "inclusion_violations": violations,
        "strict": strict,
        "strict_with_precondition": len(strict_pre),
        "strict_witness_samples": strict_pre[:3],
        "backends_compared": compare_backends,
        "backend_disagreements": disagreements,
    }


def verify_sets(cfg: ExperimentConfig):
    """Run the inclusion sweeps and the separation check; returns the report dict."""
    v = cfg.verify
    seed = cfg.run.seed
    primary = build_verify_problem(cfg)
    grid = ba.GridSpec.for_problem(primary, v.grid_resolution)
    report = {"grid_resolution": v.grid_resolution, "seed": seed}
    t0 = time.perf_counter()
    report["primary"] = inclusion_sweep(primary, v.queries, seed, grid, v.compare_backends)
    sup = None
    if v.supplementary_queries > 0 and v.supplementary_horizon != v.horizon:
        sup_problem = build_verify_problem(cfg, v.supplementary_horizon)
        sup = inclusion_sweep(sup_problem, v.supplementary_queries, seed + 1, grid)
        report["supplementary"] = sup
    sep_problem = build_verify_problem(cfg, max(v.horizon, v.supplementary_horizon))
    fx = ba.shared_prefix(np.array(v.fixture_x0), np.array(v.fixture_prefix)[:, None], sep_problem)
    sep = ba.check_separation(fx, sep_problem, grid=grid)
    control = ba.check_separation(fx, sep_problem, v=fx.memory.prev_plan.inputs[1], grid=grid)
    report["separation"] = sep.to_dict()
    report["separation_control"] = control.to_dict()
    p = report["primary"]
    gates = {
        "inclusion": not p["inclusion_violations"] and not (sup and sup["inclusion_violations"]),
        "strict_enlargement_primary": p["strict_with_precondition"] > 0,
        "backend_agreement": not p["backend_disagreements"],
        "separation": sep.separated and sep.tail_ok,
        "control_not_separated": not control.separated,
    }
    if sup is not None:
        gates["strict_enlargement_supplementary"] = sup["strict_with_precondition"] > 0
    report["gates"] = gates
    report["passed"] = all(gates.values())
    report["seconds"] = time.perf_counter() - t0
    return report


def cmd_verify_sets(cfg, args):
    out = Path(cfg.run.out)
    out.mkdir(parents=True, exist_ok=True)
    report = verify_sets(cfg)
    ba.write_report(report, out / "verify_report.json")
    for name, ok in report["gates"].items():
        print(f"{'PASS' if ok else 'FAIL'} {name}")
    print(f"report -> {out / 'verify_report.json'}")
    return EXIT_OK if report["passed"] else EXIT_VERIFY


# --------------------------------------------------------------------------
# export-plots


def export_plots(run_dirs, out: Path, cfg: ExperimentConfig):
    """Overlay ``(t, theta)`` with the obstacle band and ``(t, J*)`` across runs."""
    if not run_dirs:
        raise ConfigError("no run directories given")
    runs = []
    for d in run_dirs:
        d = Path(d)
        runs.append((d.name, read_trajectory_csv(d / "trajectory.csv")))

    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    from .pendulum_env import occupancy_band

    env = build_env(cfg)
    dt = cfg.pendulum.dt
    out.mkdir(parents=True, exist_ok=True)
    alpha = max(0.25, 1.0 / len(runs))

    fig, ax = plt.subplots(figsize=(7, 4))
    longest = max(runs, key=lambda r: len(r[1]["t"]))[1]
    lo, hi = occupancy_band(longest["obstacle_x"], env)
    time_axis = longest["t"] * dt
    ax.fill_between(time_axis, lo, hi, where=np.isfinite(lo), color="red", alpha=0.25, label="obstacle")
    for name, cols in runs:
        colour = "tab:orange" if "fixed" in name or "baseline" in name else "tab:blue"
        ax.plot(cols["t"] * dt, cols["theta"], color=colour, alpha=alpha, label=name)
    for b in (-cfg.psf.theta_max, cfg.psf.theta_max):
        ax.axhline(b, color="k", linestyle=":", linewidth=1)
    ax.axhline(0.0, color="k", linestyle="--", linewidth=1)
    ax.set_xlabel("time [s]")
    ax.set_ylabel("theta [rad]")
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(out / "theta.png", dpi=120)
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(7, 4))
    for name, cols in runs:
        colour = "tab:orange" if "fixed" in name or "baseline" in name else "tab:blue"
        ax.plot(cols["t"] * dt, cols["J_star"], color=colour, alpha=alpha, label=name)
    ax.set_xlabel("time [s]")
    ax.set_ylabel("J*")
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(out / "certificate.png", dpi=120)
    plt.close(fig)
    return [out / "theta.png", out / "certificate.png"]


def cmd_export_plots(cfg, args):
    files = export_plots(args.runs, Path(cfg.run.out), cfg)
    for f in files:
        print(f)
    return EXIT_OK


# --------------------------------------------------------------------------


def make_parser():
    parser = argparse.ArgumentParser(prog="scheduled-psf", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="INI experiment file (defaults apply when omitted)")
    common.add_argument("--seed", type=int)
    common.add_argument("--steps", type=int)
    common.add_argument("--mode", choices=("scheduled", "fixed", "scripted-detour"))
    common.add_argument("--out", type=Path)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="run one closed-loop episode")
    sub.add_parser("train", parents=[common], help="train the performance policy")
    sub.add_parser("verify-sets", parents=[common], help="admissible-set inclusion and separation checks")
    p = sub.add_parser("export-plots", parents=[common], help="figures from trajectory CSVs")
    p.add_argument("runs", nargs="*", help="run directories containing trajectory.csv")
    return parser


COMMANDS = {
    "simulate": cmd_simulate,
    "train": cmd_train,
    "verify-sets": cmd_verify_sets,
    "export-plots": cmd_export_plots,
}


def main(argv=None):
    _configure_logging()
    args = make_parser().parse_args(argv)
    try:
        cfg = load_config(args.config).with_overrides(args.seed, args.steps, args.mode, args.out)
        return COMMANDS[args.command](cfg, args)
    except (ConfigError, SchemaError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
