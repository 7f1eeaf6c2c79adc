import numpy as np
import pytest

from scheduled_psf.dynamics import PendulumParams
from scheduled_psf.pendulum_env import (
    ConfigError,
    EnvParams,
    LossWeights,
    ObstacleParams,
    collides,
    env_step,
    make_state,
    min_clearance,
    obstacle_penalty,
    occupancy_band,
    sample_initial,
    stage_loss,
    tip_distance,
    tip_position,
)


def test_obstacle_moves_left():
    env = EnvParams(obstacle=ObstacleParams(start_x=1.0))
    s = env_step(make_state(0.0, env), [0.0], env)
    assert s.obstacle.x == pytest.approx(0.99)
    assert s.obstacle.velocity == -0.2
    assert s.features()[2:] == pytest.approx([0.99, -0.2])


def test_tip_positions():
    assert tip_position([0.0, 0.0], 0.5) == pytest.approx((0.0, 0.5))
    assert tip_position([np.pi / 2, 0.0], 0.5) == pytest.approx((0.5, 0.0))
    assert tip_position([-np.pi / 2, 0.0], 0.5) == pytest.approx((-0.5, 0.0))


def test_obstacle_height():
    s = make_state(0.0)
    assert s.obstacle.y == pytest.approx(0.45)
    assert tip_distance(s, 0.5) == pytest.approx(np.hypot(0.6, 0.05))


def test_stage_loss_hand_value():
    w = LossWeights()
    s = make_state(0.3, omega0=1.0)
    u, uL = np.array([0.5]), np.array([0.2])
    traj = 0.09 + 0.1 * 1.0 + 0.01 * 0.25
    psf = 0.09
    # tip far from the obstacle: no penalty
    assert tip_distance(s, 0.5) > 0.15
    assert stage_loss(s, u, uL, w) == pytest.approx(w.beta1 * traj + w.beta2 * psf)


def test_stage_loss_penalty_active():
    env = EnvParams(obstacle=ObstacleParams(start_x=0.0))
    s = make_state(0.0, env)  # tip at (0, 0.5), obstacle at (0, 0.45)
    d = 0.05
    expected_obs = (0.1 + 0.05 - d) ** 2
    assert stage_loss(s, [0.0], [0.0]) == pytest.approx(10.0 * expected_obs)
    assert obstacle_penalty(1.0, 0.1, 0.05) == 0.0


def test_loss_weights_positive():
    with pytest.raises(ValueError):
        LossWeights(beta2=0.0)
    with pytest.raises(ValueError):
        ObstacleParams(radius=-1)


def test_sample_initial_degenerate_interval():
    env = EnvParams(theta0_low=0.7, theta0_high=0.7)
    s = sample_initial(0, env)
    assert s.physical.tolist() == [0.7, 0.0]


def test_sample_initial_outside_box_raises():
    env = EnvParams(theta0_low=2.8, theta0_high=3.0)
    with pytest.raises(ConfigError):
        sample_initial(0, env, max_rejections=5)


def test_sample_initial_acceptance(pend):
    """Warm-start acceptance over the default interval."""
    env = EnvParams()
    rng = np.random.default_rng(5)
    accepted = 0
    for _ in range(100):
        try:
            sample_initial(rng, env, pend, max_rejections=0)
            accepted += 1
        except ConfigError:
            pass
    assert accepted / 100 >= 0.99


def test_occupancy_band_matches_brute_force():
    env = EnvParams()
    thetas = np.linspace(-np.pi, np.pi, 200001)
    l, r, oy = 0.5, 0.1, 0.45
    for ox in (0.6, 0.3, 0.1, 0.0, -0.2, 0.9):
        lo, hi = occupancy_band(ox, env)
        inside = np.hypot(l * np.sin(thetas) - ox, l * np.cos(thetas) - oy) < r
        if not inside.any():
            assert np.isnan(lo)
            continue
        assert thetas[inside].min() == pytest.approx(float(lo), abs=1e-4)
        assert thetas[inside].max() == pytest.approx(float(hi), abs=1e-4)


def test_collision_audit():
    env = EnvParams()
    assert collides([0.0], [0.0], env)
    assert not collides([-1.0], [0.5], env)
    assert min_clearance([0.0], [0.0], env) == pytest.approx(0.05 - 0.1)
