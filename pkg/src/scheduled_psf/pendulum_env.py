"""Pendulum task with a moving obstacle and the time-varying stage loss.

The obstacle is a disc moving right-to-left at a fixed height.  It only
enters the loss; the filter constraints act on the physical state alone.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from .dynamics import PendulumParams, rk4_step

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ObstacleParams:
    start_x: float = 0.6
    height_fraction: float = 0.9  # height as a fraction of the pendulum length
    speed: float = 0.2
    radius: float = 0.1

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("obstacle radius must be positive")


@dataclass(frozen=True)
class ObstacleState:
    x: float
    y: float
    speed: float
    radius: float

    @property
    def velocity(self):
        return -self.speed

    def advanced(self, dt):
        return replace(self, x=self.x - self.speed * dt)


@dataclass(frozen=True)
class LossWeights:
    beta1: float = 1.0
    beta2: float = 0.1
    beta3: float = 10.0
    q_theta: float = 1.0
    q_omega: float = 0.1
    r_u: float = 0.01
    margin: float = 0.05

    def __post_init__(self):
        if min(self.beta1, self.beta2, self.beta3) <= 0:
            raise ValueError("loss weights must be positive")


@dataclass(frozen=True)
class EnvParams:
    pendulum: PendulumParams = PendulumParams()
    obstacle: ObstacleParams = ObstacleParams()
    weights: LossWeights = LossWeights()
    theta0_low: float = -2.0
    theta0_high: float = 2.0
    theta_max: float = 2.6


@dataclass(frozen=True)
class AugmentedState:
    physical: np.ndarray
    obstacle: ObstacleState

    def features(self):
        """``[theta, omega, obstacle x, obstacle velocity]``."""
        return np.array([*self.physical, self.obstacle.x, self.obstacle.velocity])


def reset_obstacle(params: EnvParams) -> ObstacleState:
    o = params.obstacle
    return ObstacleState(o.start_x, o.height_fraction * params.pendulum.length, o.speed, o.radius)


def make_state(theta0, params: EnvParams = EnvParams(), omega0=0.0) -> AugmentedState:
    return AugmentedState(np.array([theta0, omega0], dtype=float), reset_obstacle(params))


def env_step(s: AugmentedState, u, params: EnvParams = EnvParams()) -> AugmentedState:
    x = rk4_step(s.physical, np.atleast_1d(np.asarray(u, dtype=float)), params.pendulum)
    return AugmentedState(x, s.obstacle.advanced(params.pendulum.dt))


def tip_position(x, length):
    """Tip coordinates with ``theta = 0`` pointing straight up."""
    theta = np.asarray(x, dtype=float)[..., 0]
    return length * np.sin(theta), length * np.cos(theta)


def tip_distance(s: AugmentedState, length):
    tx, ty = tip_position(s.physical, length)
    return float(np.hypot(tx - s.obstacle.x, ty - s.obstacle.y))


def obstacle_penalty(dist, radius, margin):
    return max(0.0, radius + margin - dist) ** 2


def stage_loss(s: AugmentedState, u, u_L, w: LossWeights = LossWeights(), length=0.5):
    x = s.physical
    u = np.atleast_1d(np.asarray(u, dtype=float))
    u_L = np.atleast_1d(np.asarray(u_L, dtype=float))
    traj = w.q_theta * x[0] ** 2 + w.q_omega * x[1] ** 2 + w.r_u * float(u @ u)
    psf = float((u - u_L) @ (u - u_L))
    obs = obstacle_penalty(tip_distance(s, length), s.obstacle.radius, w.margin)
    return w.beta1 * traj + w.beta2 * psf + w.beta3 * obs


def sample_initial(rng, params: EnvParams = EnvParams(), problem=None, max_rejections=100):
    """Draw ``theta0`` uniformly, ``omega0 = 0``.

    With a filter ``problem`` the draw is repeated until the warm-start
    feasibility problem is solvable.
    """
    from .psf import InfeasibleStart, init_memory

    rng = np.random.default_rng(rng)
    for attempt in range(max_rejections + 1):
        theta0 = rng.uniform(params.theta0_low, params.theta0_high)
        s = make_state(theta0, params)
        if abs(theta0) > params.theta_max:
            log.info("rejected theta0=%.4f outside the state box", theta0)
            continue
        if problem is None:
            return s
        try:
            init_memory(s.physical, problem)
            return s
        except InfeasibleStart:
            log.info("rejected theta0=%.4f: filter infeasible", theta0)
    raise ConfigError(
        f"no feasible initial state after {max_rejections} rejections; "
        f"interval [{params.theta0_low}, {params.theta0_high}] exceeds the feasible set"
    )


def collides(thetas, obstacle_x, params: EnvParams = EnvParams()):
    """Collision audit: any tip-to-centre distance below the radius (no margin)."""
    return min_clearance(thetas, obstacle_x, params) < 0.0


def min_clearance(thetas, obstacle_x, params: EnvParams = EnvParams()):
    l = params.pendulum.length
    thetas = np.asarray(thetas, dtype=float)
    tx, ty = l * np.sin(thetas), l * np.cos(thetas)
    oy = params.obstacle.height_fraction * l
    d = np.hypot(tx - np.asarray(obstacle_x), ty - oy)
    return float(np.min(d) - params.obstacle.radius)


def occupancy_band(obstacle_x, params: EnvParams = EnvParams()):
    """Angles whose tip lies inside the obstacle, one interval per time.

    Returns ``(theta_low, theta_high)`` arrays, NaN where the obstacle is out
    of reach.  The tip circle and the disc intersect in a single arc, so the
    set is an interval around the obstacle's bearing.
    """
    l = params.pendulum.length
    r = params.obstacle.radius
    ox = np.asarray(obstacle_x, dtype=float)
    oy = params.obstacle.height_fraction * l
    dist = np.hypot(ox, oy)
    bearing = np.arctan2(ox, oy)
    with np.errstate(divide="ignore", invalid="ignore"):
        kappa = (l**2 + dist**2 - r**2) / (2 * l * dist)
    half = np.arccos(np.clip(kappa, -1.0, 1.0))
    lo = np.where(kappa < 1.0, bearing - half, np.nan)
    hi = np.where(kappa < 1.0, bearing + half, np.nan)
    return lo, hi
