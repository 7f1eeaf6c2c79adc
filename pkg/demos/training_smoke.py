"""Short seeded DDPG run, then a filtered rollout of the learned policy."""

from pathlib import Path

import numpy as np

from scheduled_psf import cli
from scheduled_psf.config import build_env, build_problem, build_training, load_config
from scheduled_psf.pendulum_env import make_state
from scheduled_psf.simulate import policy_input, run_closed_loop
from scheduled_psf.training import decile_means, train

ROOT = Path(__file__).resolve().parents[1]


def main():
    cfg = load_config(ROOT / "configs" / "train_smoke.ini")
    problem, env = build_problem(cfg), build_env(cfg)
    policy = cli.build_policy(cfg, np.random.default_rng([cfg.run.seed, 1]))
    res = train(build_training(cfg), env, problem, policy, ROOT / "runs" / "train_demo")
    for ep, loss, closs, rho, interv in res.metrics[:: max(1, len(res.metrics) // 6)]:
        print(f"episode {ep:3d}  loss {loss:9.3f}  critic {closs:9.4g}  mean rho {rho:5.2f}  |u - u_L| {interv:.3f}")
    first, last = decile_means(res.episode_losses)
    print(f"first-decile loss {first:.3f} -> last-decile {last:.3f}")

    traj = run_closed_loop(problem, make_state(1.0, env), policy_input(res.policy), 200, env)
    s = traj.summary()
    print(f"learned policy from theta0 = 1.0: collision={s['collision']} max rho={s['max_rho']:.2f} "
          f"|x_T|={s['terminal_state_norm']:.2e}")


if __name__ == "__main__":
    main()
