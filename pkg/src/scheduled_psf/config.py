"""Experiment configuration as INI files, plus builders for the runtime objects.

Every field has a default, so an empty file describes the reference
experiment.  ``to_ini``/``from_ini`` round-trip losslessly (floats are
written with ``repr``).
"""

from __future__ import annotations

import configparser
import io
import typing
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .certificate import StageCost
from .dynamics import PendulumParams
from .pendulum_env import ConfigError, EnvParams, LossWeights, ObstacleParams
from .psf import SolverSettings, double_integrator_problem, pendulum_problem
from .scheduler import ScheduleParams
from .training import TrainingConfig


@dataclass
class PendulumSection:
    mass: float = 0.2
    length: float = 0.5
    damping: float = 0.02
    gravity: float = 9.81
    dt: float = 0.05


@dataclass
class PsfSection:
    horizon: int = 20
    theta_max: float = 2.6
    omega_max: float = 8.0
    u_max: float = 3.0
    q_diag: tuple = (5.0, 0.5)
    r_diag: tuple = (0.1,)
    tol_feas: float = 1e-7
    tol_kkt: float = 1e-6
    max_iter: int = 50
    max_qp_pivots: int = 100


@dataclass
class ScheduleSection:
    rho_bar: float = 0.5
    epsilon: float = 0.05
    rho_max: float = 10.0
    smooth: bool = True
    smooth_width: Optional[float] = None


@dataclass
class PolicySection:
    hidden_size: int = 16
    mlp_hidden: tuple = (32, 32)
    output_scale: float = 0.5
    r_min: float = 0.9
    r_max: float = 0.999
    checkpoint: Optional[str] = None


@dataclass
class TrainingSection:
    gamma: float = 0.99
    batch_size: int = 128
    buffer_capacity: int = 100_000
    actor_lr: float = 1e-4
    critic_lr: float = 1e-3
    tau: float = 0.005
    noise_scale: float = 0.2
    noise_decay: float = 0.995
    noise_step_decay: float = 0.98
    noise_ball: float = 3.0
    episodes: int = 50
    steps_per_episode: int = 200
    updates_per_episode: int = 50
    warmup: int = 256
    checkpoint_every: int = 0


@dataclass
class EnvSection:
    obstacle_start_x: float = 0.6
    obstacle_height_fraction: float = 0.9
    obstacle_speed: float = 0.2
    obstacle_radius: float = 0.1
    beta1: float = 1.0
    beta2: float = 0.1
    beta3: float = 10.0
    q_theta: float = 1.0
    q_omega: float = 0.1
    r_u: float = 0.01
    margin: float = 0.05
    theta0_low: float = -2.0
    theta0_high: float = 2.0


@dataclass
class SimulateSection:
    mode: str = "scheduled"
    theta0: Optional[float] = None  # None: sample from the env interval with the run seed
    omega0: float = 0.0
    steps: int = 200
    init_mode: str = "warm-start"
    pulse_amplitude: float = 0.95
    pulse_length: int = 100


@dataclass
class VerifySection:
    queries: int = 200
    horizon: int = 2
    grid_resolution: float = 0.01
    supplementary_horizon: int = 3
    supplementary_queries: int = 40
    compare_backends: bool = True
    fixture_x0: tuple = (0.5, -0.5)
    fixture_prefix: tuple = (0.0,)


@dataclass
class RunSection:
    seed: int = 0
    out: str = "runs/default"


SECTIONS = {
    "pendulum": PendulumSection,
    "psf": PsfSection,
    "schedule": ScheduleSection,
    "policy": PolicySection,
    "training": TrainingSection,
    "env": EnvSection,
    "simulate": SimulateSection,
    "verify": VerifySection,
    "run": RunSection,
}
MODES = ("scheduled", "fixed", "scripted-detour")


@dataclass
class ExperimentConfig:
    pendulum: PendulumSection = field(default_factory=PendulumSection)
    psf: PsfSection = field(default_factory=PsfSection)
    schedule: ScheduleSection = field(default_factory=ScheduleSection)
    policy: PolicySection = field(default_factory=PolicySection)
    training: TrainingSection = field(default_factory=TrainingSection)
    env: EnvSection = field(default_factory=EnvSection)
    simulate: SimulateSection = field(default_factory=SimulateSection)
    verify: VerifySection = field(default_factory=VerifySection)
    run: RunSection = field(default_factory=RunSection)

    def to_ini(self) -> str:
        cp = configparser.ConfigParser()
        for name in SECTIONS:
            sec = getattr(self, name)
            cp[name] = {f.name: _fmt(getattr(sec, f.name)) for f in fields(sec)}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    @classmethod
    def from_ini(cls, text: str) -> "ExperimentConfig":
        cp = configparser.ConfigParser()
        try:
            cp.read_string(text)
        except configparser.Error as e:
            raise ConfigError(f"malformed config: {e}") from None
        unknown = set(cp.sections()) - set(SECTIONS)
        if unknown:
            raise ConfigError(f"unknown section(s): {', '.join(sorted(unknown))}")
        parts = {}
        for name, klass in SECTIONS.items():
            hints = typing.get_type_hints(klass)
            kw = {}
            if cp.has_section(name):
                known = {f.name for f in fields(klass)}
                for key, raw in cp[name].items():
                    if key not in known:
                        raise ConfigError(f"[{name}] unknown key {key!r}")
                    kw[key] = _parse(raw, hints[key], f"[{name}] {key}")
            parts[name] = klass(**kw)
        cfg = cls(**parts)
        cfg.validate()
        return cfg

    def validate(self):
        if self.simulate.mode not in MODES:
            raise ConfigError(f"[simulate] mode must be one of {MODES}, got {self.simulate.mode!r}")
        if self.simulate.init_mode not in ("warm-start", "deactivate-first-step"):
            raise ConfigError(f"[simulate] unknown init_mode {self.simulate.init_mode!r}")
        if self.env.theta0_low > self.env.theta0_high:
            raise ConfigError("[env] theta0_low exceeds theta0_high")
        try:
            build_problem(self)
            build_env(self)
            build_training(self)
        except ValueError as e:
            raise ConfigError(str(e)) from None

    def with_overrides(self, seed=None, steps=None, mode=None, out=None) -> "ExperimentConfig":
        cfg = replace(self, run=replace(self.run), simulate=replace(self.simulate))
        if seed is not None:
            cfg.run.seed = seed
        if steps is not None:
            cfg.simulate.steps = steps
        if mode is not None:
            cfg.simulate.mode = mode
        if out is not None:
            cfg.run.out = str(out)
        cfg.validate()
        return cfg


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ", ".join(_fmt(a) for a in v)
    return str(v)


def _parse(raw: str, hint, where):
    raw = raw.strip()
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if origin is typing.Union and type(None) in args:
        if raw == "":
            return None
        hint = next(a for a in args if a is not type(None))
    try:
        if hint is bool:
            low = raw.lower()
            if low not in ("true", "false", "yes", "no", "1", "0", "on", "off"):
                raise ValueError(raw)
            return low in ("true", "yes", "1", "on")
        if hint is int:
            return int(raw)
        if hint is float:
            return float(raw)
        if hint is tuple:
            return tuple(float(a) for a in raw.split(",") if a.strip())
        return raw
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {getattr(hint, '__name__', hint)}") from None


def load_config(path=None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    return ExperimentConfig.from_ini(p.read_text())


def save_config(cfg: ExperimentConfig, path):
    Path(path).write_text(cfg.to_ini())


# --------------------------------------------------------------------------
# builders


def build_pendulum(cfg: ExperimentConfig) -> PendulumParams:
    p = cfg.pendulum
    return PendulumParams(p.mass, p.length, p.damping, p.gravity, p.dt)


def build_schedule(cfg: ExperimentConfig) -> ScheduleParams:
    s = cfg.schedule
    return ScheduleParams(s.rho_bar, s.epsilon, s.rho_max, s.smooth, s.smooth_width)


def build_settings(cfg: ExperimentConfig) -> SolverSettings:
    p = cfg.psf
    return SolverSettings(tol_feas=p.tol_feas, tol_kkt=p.tol_kkt, max_iter=p.max_iter, max_qp_pivots=p.max_qp_pivots)


def build_problem(cfg: ExperimentConfig):
    p = cfg.psf
    return pendulum_problem(
        build_pendulum(cfg),
        horizon=p.horizon,
        theta_max=p.theta_max,
        omega_max=p.omega_max,
        u_max=p.u_max,
        cost=StageCost(np.diag(p.q_diag), np.diag(p.r_diag)),
        schedule=build_schedule(cfg),
        settings=build_settings(cfg),
    )


def build_verify_problem(cfg: ExperimentConfig, horizon=None):
    return double_integrator_problem(
        horizon=cfg.verify.horizon if horizon is None else horizon,
        schedule=build_schedule(cfg),
        settings=build_settings(cfg),
    )


def build_env(cfg: ExperimentConfig) -> EnvParams:
    e = cfg.env
    return EnvParams(
        pendulum=build_pendulum(cfg),
        obstacle=ObstacleParams(e.obstacle_start_x, e.obstacle_height_fraction, e.obstacle_speed, e.obstacle_radius),
        weights=LossWeights(e.beta1, e.beta2, e.beta3, e.q_theta, e.q_omega, e.r_u, e.margin),
        theta0_low=e.theta0_low,
        theta0_high=e.theta0_high,
        theta_max=cfg.psf.theta_max,
    )


def build_training(cfg: ExperimentConfig) -> TrainingConfig:
    t = cfg.training
    return TrainingConfig(
        gamma=t.gamma,
        batch_size=t.batch_size,
        buffer_capacity=t.buffer_capacity,
        actor_lr=t.actor_lr,
        critic_lr=t.critic_lr,
        tau=t.tau,
        noise_scale=t.noise_scale,
        noise_decay=t.noise_decay,
        noise_step_decay=t.noise_step_decay,
        noise_ball=t.noise_ball,
        episodes=t.episodes,
        steps_per_episode=t.steps_per_episode,
        updates_per_episode=t.updates_per_episode,
        warmup=t.warmup,
        seed=cfg.run.seed,
    )
