"""End-to-end acceptance checks, one test (or group) per criterion.

The heavy fixtures (closed-loop batch, set verification, training smoke)
are module scoped so every criterion reads the same runs.
"""

import time
from pathlib import Path

import numpy as np
import pytest

from scheduled_psf import cli
from scheduled_psf.config import build_env, build_problem, build_training, load_config
from scheduled_psf.dynamics import PendulumParams, fd_jacobians, pendulum
from scheduled_psf.mad_policy import direction, init_policy, magnitude_sequence
from scheduled_psf.nets import flatten, unflatten
from scheduled_psf.pendulum_env import make_state, sample_initial
from scheduled_psf.psf import INFEASIBLE_T0
from scheduled_psf.scheduler import ScheduleParams, psi
from scheduled_psf.simulate import policy_input, pulse_input, run_closed_loop, zero_input
from scheduled_psf.training import (
    N_AUG,
    CriticParams,
    actor_batch,
    actor_grads,
    actor_params,
    critic_loss_and_grads,
    decile_means,
    set_actor_params,
    train,
)

pytestmark = pytest.mark.slow

CONFIGS = Path(__file__).parents[1] / "configs"
SEEDS = range(20)
STEPS = 200
RHO_BAR = 0.5


def criterion(num, title):
    return pytest.mark.criterion(num, title)


# --------------------------------------------------------------------------
# 1


@criterion(1, "schedule values")
def test_schedule_values():
    t0 = time.perf_counter()
    p = ScheduleParams(rho_bar=0.5, epsilon=0.05, rho_max=10.0, smooth=False)
    assert psi(0.0, p) == 0.5 and psi(0.05, p) == 0.5
    assert abs(psi(0.075, p) - 5.25) <= 1e-12
    assert abs(psi(1.0, p) - 10.0) <= 1e-12
    assert time.perf_counter() - t0 < 1.0


# --------------------------------------------------------------------------
# 2-4: seeded closed-loop batch


@pytest.fixture(scope="module")
def batch():
    cfg = load_config(CONFIGS / "default.ini")
    problem, env = build_problem(cfg), build_env(cfg)
    t0 = time.perf_counter()
    runs = {"fixed": [], "scheduled": []}
    for seed in SEEDS:
        s0 = sample_initial(seed, env, problem)
        runs["fixed"].append(run_closed_loop(problem, s0, zero_input(), STEPS, env, fixed_rate=True))
        pol = init_policy(2, N_AUG, 1, np.random.default_rng([seed, 1]), output_scale=cfg.policy.output_scale)
        runs["scheduled"].append(run_closed_loop(problem, s0, policy_input(pol), STEPS, env))
    detour = load_config(CONFIGS / "detour.ini")
    runs["pulse"] = [
        run_closed_loop(problem, make_state(detour.simulate.theta0, env), pulse_input(1.5, 15), STEPS, env)
    ]
    runs["seconds"] = time.perf_counter() - t0
    return runs


@criterion(2, "recursive feasibility, boxes on 20 seeds x 2 modes")
def test_recursive_feasibility(batch):
    for mode in ("fixed", "scheduled"):
        for traj in batch[mode]:
            assert INFEASIBLE_T0 not in traj.column("status")[1:]
            assert "infeasible" not in traj.column("status")
            assert np.all(np.abs(traj.thetas) <= 2.6 + 1e-6)
            assert np.all(np.abs(traj.column("u")) <= 3.0 + 1e-6)
    assert batch["seconds"] < 300


@criterion(3, "fixed-rate certificate decrease")
def test_fixed_rate_decrease(batch):
    for traj in batch["fixed"]:
        J, s = traj.column("J_star"), traj.column("stage_cost")
        assert np.all(J[1:] <= J[:-1] - RHO_BAR * s[:-1] + 1e-6)
        assert np.all(np.diff(J) <= 1e-6)


@criterion(4, "scheduled tail bound and upright convergence")
def test_scheduled_tail(batch):
    for traj in batch["scheduled"] + batch["pulse"]:
        lhs, rhs = traj.tail_bound(0.05, RHO_BAR)
        assert lhs <= rhs + 1e-6
        assert np.linalg.norm(traj.final_state) < 0.05
    assert batch["pulse"][0].summary()["max_rho"] > 1


# --------------------------------------------------------------------------
# 5-6: admissible sets


@pytest.fixture(scope="module")
def verify_report():
    return cli.verify_sets(load_config(CONFIGS / "verify.ini"))


@criterion(5, "inclusion sweep (N=2, grid 0.01, 200 queries)")
def test_inclusion_sweep(verify_report):
    p = verify_report["primary"]
    sup = verify_report.get("supplementary", {})
    print(
        f"N={p['horizon']}: violations={len(p['inclusion_violations'])} strict={p['strict']} "
        f"strict+precondition={p['strict_with_precondition']} backend disagreements={len(p['backend_disagreements'])}; "
        f"N={sup.get('horizon')}: violations={len(sup.get('inclusion_violations', []))} "
        f"strict+precondition={sup.get('strict_with_precondition')}"
    )
    assert p["queries"] == 200 and p["horizon"] == 2
    assert not p["inclusion_violations"]
    assert not sup.get("inclusion_violations")
    assert p["backends_compared"] and not p["backend_disagreements"]
    assert verify_report["seconds"] < 600
    # with x_N = 0 and N = 2 the first input is unique, so an active member
    # at the smaller budget forces equal sets; expected to fail
    assert p["strict_with_precondition"] >= 1


@criterion(6, "separation of scheduled and fixed behaviour")
def test_separation(verify_report):
    sep = verify_report["separation"]
    assert sep["applied_matches_witness"] and sep["outside_fixed_set"]
    assert sep["psi_above_rho_bar"]
    assert sep["fixed_objective"] > verify_report["grid_resolution"] ** 2
    assert sep["tail_ok"]
    assert not verify_report["separation_control"]["separated"]


# --------------------------------------------------------------------------
# 7


@criterion(7, "detour scenario")
def test_detour(tmp_path):
    t0 = time.perf_counter()
    base = cli.simulate(load_config(CONFIGS / "baseline.ini"), tmp_path / "baseline")
    det = cli.simulate(load_config(CONFIGS / "detour.ini"), tmp_path / "detour")
    assert base["collision"]
    assert not det["collision"] and det["min_clearance"] > 0
    assert det["max_rho"] > 1 and det["J_transient_increase"]
    assert det["terminal_abs_theta"] < 0.05
    assert time.perf_counter() - t0 < 60


# --------------------------------------------------------------------------
# 8


@criterion(8, "MAD inputs square summable by construction")
def test_mad_l2():
    eps = 0.05
    for seed in range(100):
        rng = np.random.default_rng(seed)
        pol = init_policy(2, N_AUG, 1, rng, output_scale=1.0)
        assert np.all(np.abs(pol.lru.eigenvalues) < 1)
        x0 = np.array([rng.uniform(-2.6, 2.6), rng.uniform(-8, 8)])
        mags = magnitude_sequence(pol.lru, x0, 10_000)
        x_aug = rng.uniform(-3, 3, size=(10_000, N_AUG))
        u = mags * direction(pol.direction, x_aug)
        energy = np.cumsum(np.sum(u**2, axis=1))
        assert energy[-1] - energy[-1001] < 1e-8
        above = np.nonzero(np.linalg.norm(u, axis=1) > eps)[0]
        T = above[-1] if above.size else -1
        assert T < 9_000  # u_L stays in the plateau region for the last 1000 steps


# --------------------------------------------------------------------------
# 9


def _complex_step_jacobians(x, u, p: PendulumParams, h=1e-30):
    """RK4 re-implemented on complex numbers; the complex step is exact."""

    def f(z, v):
        ml2 = p.mass * p.length**2
        return np.array([z[1], -(p.gravity / p.length) * np.sin(z[0]) - p.damping / ml2 * z[1] + v[0] / ml2])

    def step(z, v):
        k1 = f(z, v)
        k2 = f(z + 0.5 * p.dt * k1, v)
        k3 = f(z + 0.5 * p.dt * k2, v)
        k4 = f(z + p.dt * k3, v)
        return z + p.dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)

    A = np.array([step(x + 1j * h * e, u.astype(complex)).imag / h for e in np.eye(2)]).T
    B = np.array([step(x.astype(complex), u + 1j * h * e).imag / h for e in np.eye(1)]).T
    return A, B


@criterion(9, "gradient and Jacobian checks")
def test_gradients():
    rng = np.random.default_rng(9)
    pol = init_policy(2, N_AUG, 1, rng, hidden_size=4, mlp_hidden=(8,))
    critic = CriticParams(N_AUG, 1, (16, 16), rng)
    Z = rng.normal(size=(8, N_AUG + 2 + 8))

    def actor_obj(v):
        set_actor_params(pol, unflatten(v, actor_params(pol)))
        return float(np.mean(critic(Z[:, :N_AUG], actor_batch(pol, Z)[0])))

    p0 = flatten(actor_params(pol))
    g = flatten(actor_grads(Z, pol, critic))
    fd = np.array([(actor_obj(p0 + 1e-6 * e) - actor_obj(p0 - 1e-6 * e)) / 2e-6 for e in np.eye(p0.size)])
    actor_obj(p0)
    assert np.linalg.norm(g - fd) / np.linalg.norm(fd) < 1e-4

    X, U, y = Z[:, :N_AUG], rng.normal(size=(8, 1)), rng.normal(size=8)
    _, cg = critic_loss_and_grads(critic, X, U, y)
    q0 = flatten(critic.net.params)

    def critic_obj(v):
        critic.net.params = unflatten(v, critic.net.params)
        return critic_loss_and_grads(critic, X, U, y)[0]

    fd = np.array([(critic_obj(q0 + 1e-6 * e) - critic_obj(q0 - 1e-6 * e)) / 2e-6 for e in np.eye(q0.size)])
    assert np.linalg.norm(flatten(cg) - fd) / np.linalg.norm(fd) < 1e-4

    params = PendulumParams()
    dyn = pendulum(params)
    for _ in range(20):
        x = np.array([rng.uniform(-2.6, 2.6), rng.uniform(-8, 8)])
        u = rng.uniform(-3, 3, size=1)
        A, B = fd_jacobians(dyn, x, u)
        Ar, Br = _complex_step_jacobians(x, u, params)
        assert np.max(np.abs(A - Ar)) < 1e-5 and np.max(np.abs(B - Br)) < 1e-5


# --------------------------------------------------------------------------
# 10


@criterion(10, "training smoke (non-gating)")
def test_training_smoke():
    cfg = load_config(CONFIGS / "train_smoke.ini")
    problem, env, tcfg = build_problem(cfg), build_env(cfg), build_training(cfg)
    runs = [train(tcfg, env, problem, cli.build_policy(cfg, np.random.default_rng([cfg.run.seed, 1])))
            for _ in range(2)]
    assert runs[0].episode_losses == runs[1].episode_losses
    first, last = decile_means(runs[0].episode_losses)
    print(f"first-decile loss {first:.4f}, last-decile loss {last:.4f}")
    assert last <= first
