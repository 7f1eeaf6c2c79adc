"""Off-policy deterministic actor-critic for the MAD policy.

The filter-plant loop is a black box: rollouts call the filter, gradient
steps only see stored ``(zeta, u_L)`` pairs and the critic.  Losses are costs,
so the critic estimates a discounted cost-to-go and the actor descends it.

Actor input layout ``zeta``::

    [theta, omega, obstacle x, obstacle velocity, J*_{t-1}/J*_{-1},   (x_aug, 5)
     x0 impulse element (n),                                          (x0_elem)
     Re(hidden_{t-1}) (h), Im(hidden_{t-1}) (h)]

Carrying the LRU state inside ``zeta`` makes ``mu_theta(zeta)`` a one-step
map, so the deterministic policy gradient is exact for the stored input.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .mad_policy import LruParams, MadPolicyState, init_policy, mad_forward, save_checkpoint
from .nets import MLP, RMSProp, polyak
from .pendulum_env import EnvParams, env_step, sample_initial, stage_loss
from .psf import InfeasibleStart, PsfProblem, filter_step, init_memory, solves_forbidden
from .simulate import policy_features

log = logging.getLogger(__name__)

N_AUG = 5
METRICS_HEADER = ("episode", "return", "critic_loss", "mean_rho", "intervention")


@dataclass
class Transition:
    zeta: np.ndarray
    u_L: np.ndarray
    stage_loss: float
    zeta_next: np.ndarray
    done: bool

    def __post_init__(self):
        if not math.isfinite(self.stage_loss):
            raise ValueError("stage_loss must be finite")


class ReplayBuffer:
    """Ring buffer; batches are drawn uniformly without replacement."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = int(capacity)
        self._items: list = []
        self._cursor = 0

    def __len__(self):
        return len(self._items)

    def push(self, tr: Transition):
        if len(self._items) < self.capacity:
            self._items.append(tr)
        else:
            self._items[self._cursor] = tr
        self._cursor = (self._cursor + 1) % self.capacity

    def sample_indices(self, batch_size, rng):
        k = min(batch_size, len(self._items))
        return rng.choice(len(self._items), size=k, replace=False)

    def sample(self, batch_size, rng):
        return [self._items[i] for i in self.sample_indices(batch_size, rng)]


@dataclass
class TrainingConfig:
    gamma: float = 0.99
    batch_size: int = 128
    buffer_capacity: int = 100_000
    actor_lr: float = 1e-4
    critic_lr: float = 1e-3
    tau: float = 0.005
    noise_scale: float = 0.2
    noise_decay: float = 0.995  # per episode
    noise_step_decay: float = 0.98  # per step, keeps the noise square summable
    noise_ball: float = 3.0
    episodes: int = 50
    steps_per_episode: int = 200
    updates_per_episode: int = 50
    warmup: int = 256
    critic_hidden: tuple = (64, 64)
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if self.batch_size < 1 or self.episodes < 0 or self.steps_per_episode < 1:
            raise ValueError("batch size, episodes and steps must be positive")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError("tau must lie in (0, 1]")


class CriticParams:
    """``Q(x_aug, u_L)``: an MLP on the concatenation."""

    def __init__(self, n_aug, m, hidden=(64, 64), rng=None, net: Optional[MLP] = None):
        self.n_aug, self.m = n_aug, m
        self.net = net if net is not None else MLP((n_aug + m, *hidden, 1), rng)

    def copy(self):
        return CriticParams(self.n_aug, self.m, net=self.net.copy())

    def __call__(self, x_aug, u_L):
        return self.net(np.concatenate([np.atleast_2d(x_aug), np.atleast_2d(u_L)], axis=1))[:, 0]

    def grad_u(self, x_aug, u_L):
        """``dQ/du_L`` for each row."""
        inp = np.concatenate([np.atleast_2d(x_aug), np.atleast_2d(u_L)], axis=1)
        q, cache = self.net.forward(inp)
        _, gx = self.net.backward(cache, np.ones_like(q))
        return gx[:, self.n_aug :]


# --------------------------------------------------------------------------
# actor as a function of zeta


def split_zeta(zeta, n, h):
    zeta = np.atleast_2d(zeta)
    x_aug = zeta[:, :N_AUG]
    x0e = zeta[:, N_AUG : N_AUG + n]
    hid = zeta[:, N_AUG + n : N_AUG + n + h] + 1j * zeta[:, N_AUG + n + h : N_AUG + n + 2 * h]
    return x_aug, x0e, hid


def make_zeta(x_aug, x0e, hidden):
    return np.concatenate([x_aug, x0e, hidden.real, hidden.imag])


def actor_params(policy: MadPolicyState):
    """Real parameter list ``[nu, phi, Re B, Im B, Re C, Im C, D, *mlp]``."""
    L = policy.lru
    return [L.nu, L.phi, L.B.real.copy(), L.B.imag.copy(), L.C.real.copy(), L.C.imag.copy(), L.D, *policy.direction.params]


def set_actor_params(policy: MadPolicyState, params):
    nu, phi, Br, Bi, Cr, Ci, D, *mlp = params
    policy.lru = LruParams(np.array(nu), np.array(phi), Br + 1j * Bi, Cr + 1j * Ci, np.array(D))
    policy.direction.params = [np.array(p) for p in mlp]


def actor_batch(policy: MadPolicyState, zeta):
    """``mu_theta(zeta)`` for a batch; returns ``(u_L, cache)``."""
    L = policy.lru
    x_aug, x0e, hid = split_zeta(zeta, L.B.shape[1], L.h)
    lam = L.eigenvalues
    h_new = lam * hid + x0e @ L.B.T
    y = np.real(h_new @ L.C.T) + x0e @ L.D.T
    z, mcache = policy.direction.forward(x_aug)
    d = np.tanh(z)
    u = np.abs(y) * d
    return u, (x0e, hid, lam, h_new, y, d, mcache)


def actor_backward(policy: MadPolicyState, cache, g_u):
    """Gradient of ``sum(g_u * u)`` w.r.t. :func:`actor_params`."""
    L = policy.lru
    x0e, hid, lam, h_new, y, d, mcache = cache
    g_u = np.atleast_2d(g_u)
    g_y = g_u * d * np.sign(y)
    g_z = g_u * np.abs(y) * (1.0 - d * d)
    mlp_grads, _ = policy.direction.backward(mcache, g_z)

    g_Cr = g_y.T @ h_new.real
    g_Ci = -g_y.T @ h_new.imag
    g_D = g_y.T @ x0e
    g_h = g_y @ np.conj(L.C)  # d/dRe + i d/dIm
    g_B = g_h.T @ x0e
    g_lam = np.sum(g_h * np.conj(hid), axis=0)
    g_nu = np.real(np.conj(g_lam) * lam) * (-np.exp(L.nu))
    g_phi = np.real(np.conj(g_lam) * 1j * lam)
    return [g_nu, g_phi, g_B.real, g_B.imag, g_Cr, g_Ci, g_D, *mlp_grads]


# --------------------------------------------------------------------------
# updates


def _stack(batch):
    Z = np.array([tr.zeta for tr in batch])
    U = np.array([tr.u_L for tr in batch])
    r = np.array([tr.stage_loss for tr in batch])
    Zn = np.array([tr.zeta_next for tr in batch])
    done = np.array([tr.done for tr in batch], dtype=bool)
    return Z, U, r, Zn, done


def bellman_target(batch, critic_target: CriticParams, actor_target: MadPolicyState, gamma):
    """``l + gamma Q'(x_aug+, mu'(zeta+))``; the bootstrap is dropped when ``done``."""
    batch = [batch] if isinstance(batch, Transition) else batch
    _, _, r, Zn, done = _stack(batch)
    u_next, _ = actor_batch(actor_target, Zn)
    q_next = critic_target(Zn[:, :N_AUG], u_next)
    return r + gamma * np.where(done, 0.0, q_next)


def critic_loss_and_grads(critic: CriticParams, x_aug, u_L, targets):
    inp = np.concatenate([x_aug, u_L], axis=1)
    q, cache = critic.net.forward(inp)
    resid = q[:, 0] - targets
    loss = float(np.mean(resid**2))
    grads, _ = critic.net.backward(cache, (2.0 / len(resid)) * resid[:, None])
    return loss, grads


def critic_update(batch, critic: CriticParams, targets, opt: RMSProp):
    """One RMSProp step on the mean squared Bellman residual; returns the pre-step loss."""
    if not batch:
        raise ValueError("empty batch")
    Z, U, *_ = _stack(batch)
    loss, grads = critic_loss_and_grads(critic, Z[:, :N_AUG], U, np.asarray(targets, dtype=float))
    opt.step(critic.net.params, grads)
    return loss


def actor_grads(batch_zeta, policy: MadPolicyState, critic: CriticParams):
    """Deterministic policy gradient of the batch-mean ``Q(x_aug, mu(zeta))``.

    Runs under :func:`solves_forbidden`: only the actor and critic are touched.
    """
    Z = np.atleast_2d(batch_zeta)
    with solves_forbidden():
        u, cache = actor_batch(policy, Z)
        g_u = critic.grad_u(Z[:, :N_AUG], u) / len(Z)
        return actor_backward(policy, cache, g_u)


def actor_update(batch, policy: MadPolicyState, critic: CriticParams, opt: RMSProp):
    """Descend the critic's cost estimate through the actor only."""
    if not batch:
        raise ValueError("empty batch")
    Z = np.array([tr.zeta for tr in batch])
    grads = actor_grads(Z, policy, critic)
    params = actor_params(policy)
    opt.step(params, grads)
    set_actor_params(policy, params)
    return policy


# --------------------------------------------------------------------------
# rollouts


@dataclass
class EpisodeLog:
    states: list = field(default_factory=list)
    inputs: list = field(default_factory=list)
    u_L: list = field(default_factory=list)
    rho: list = field(default_factory=list)
    J: list = field(default_factory=list)
    losses: list = field(default_factory=list)
    rejections: int = 0

    @property
    def total_loss(self):
        return float(np.sum(self.losses))

    @property
    def intervention(self):
        return float(np.mean([np.linalg.norm(u - v) for u, v in zip(self.inputs, self.u_L)]))


def _clip_ball(v, radius):
    n = np.linalg.norm(v)
    return v if n <= radius else v * (radius / n)


def rollout_episode(
    env: EnvParams,
    policy: MadPolicyState,
    problem: PsfProblem,
    rng,
    steps: int,
    noise_scale: float = 0.0,
    noise_step_decay: float = 1.0,
    noise_ball: float = 3.0,
    state0=None,
):
    """One closed-loop episode with exploration on ``u_L``.

    Returns ``(EpisodeLog, transitions)``.  Starts that the filter rejects
    at ``t = 0`` are resampled.
    """
    rng = np.random.default_rng(rng)
    log_ = EpisodeLog()
    if state0 is None:
        while True:
            s = sample_initial(rng, env)
            try:
                mem = init_memory(s.physical, problem)
                break
            except InfeasibleStart:
                log_.rejections += 1
                log.info("resampling x0: filter infeasible at theta0=%.4f", s.physical[0])
    else:
        s = state0
        mem = init_memory(s.physical, problem)
    J0 = mem.J_prev
    pol = MadPolicyState(policy.lru, policy.direction)
    x0 = s.physical.copy()
    transitions = []
    zeta = None
    for t in range(steps):
        x_aug = policy_features(s, mem, J0)
        x0e = x0 if t == 0 else np.zeros_like(x0)
        zeta = make_zeta(x_aug, x0e, pol.hidden)
        u_L, pol = mad_forward(pol, x_aug, x0e)
        if noise_scale > 0:
            u_L = u_L + noise_scale * noise_step_decay**t * rng.standard_normal(u_L.shape)
        u_L = _clip_ball(u_L, noise_ball)
        u, mem_next, sol = filter_step(s.physical, u_L, mem, problem)
        loss = stage_loss(s, u, u_L, env.weights, env.pendulum.length)
        s_next = env_step(s, u, env)
        x_aug_next = policy_features(s_next, mem_next, J0)
        zeta_next = make_zeta(x_aug_next, np.zeros_like(x0), pol.hidden)
        transitions.append(Transition(zeta, u_L, loss, zeta_next, t == steps - 1))
        log_.states.append(s.physical.copy())
        log_.inputs.append(u.copy())
        log_.u_L.append(u_L.copy())
        log_.rho.append(sol.rho)
        log_.J.append(sol.J_star)
        log_.losses.append(loss)
        s, mem = s_next, mem_next
    log_.states.append(s.physical.copy())
    return log_, transitions


# --------------------------------------------------------------------------
# training loop


@dataclass
class TrainingResult:
    policy: MadPolicyState
    critic: CriticParams
    episode_losses: list
    metrics: list


def train(
    cfg: TrainingConfig,
    env: EnvParams,
    problem: PsfProblem,
    policy: Optional[MadPolicyState] = None,
    out_dir=None,
    checkpoint_every: int = 0,
) -> TrainingResult:
    """Run ``cfg.episodes`` episodes; deterministic for a fixed ``cfg.seed``."""
    rng = np.random.default_rng(cfg.seed)
    n, m = problem.n, problem.m
    if policy is None:
        policy = init_policy(n, N_AUG, m, rng, output_scale=0.5)
    critic = CriticParams(N_AUG, m, cfg.critic_hidden, rng)
    actor_t = MadPolicyState(policy.lru.copy(), policy.direction.copy())
    critic_t = critic.copy()
    a_opt, c_opt = RMSProp(cfg.actor_lr), RMSProp(cfg.critic_lr)
    buf = ReplayBuffer(cfg.buffer_capacity)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    metrics, losses = [], []
    noise = cfg.noise_scale
    for ep in range(cfg.episodes):
        ep_rng = np.random.default_rng([cfg.seed, ep])
        elog, trs = rollout_episode(
            env, policy, problem, ep_rng, cfg.steps_per_episode,
            noise, cfg.noise_step_decay, cfg.noise_ball,
        )
        for tr in trs:
            buf.push(tr)
        closs = float("nan")
        if len(buf) >= min(cfg.warmup, cfg.batch_size):
            cl = []
            for _ in range(cfg.updates_per_episode):
                batch = buf.sample(cfg.batch_size, rng)
                y = bellman_target(batch, critic_t, actor_t, cfg.gamma)
                cl.append(critic_update(batch, critic, y, c_opt))
                actor_update(batch, policy, critic, a_opt)
                polyak(critic_t.net.params, critic.net.params, cfg.tau)
                tgt = actor_params(actor_t)
                polyak(tgt, actor_params(policy), cfg.tau)
                set_actor_params(actor_t, tgt)
            closs = float(np.mean(cl))
        noise *= cfg.noise_decay
        row = (ep, elog.total_loss, closs, float(np.mean(elog.rho)), elog.intervention)
        metrics.append(row)
        losses.append(elog.total_loss)
        log.info("episode %d loss %.4f critic %.4g", ep, elog.total_loss, closs)
        if out is not None and checkpoint_every and (ep + 1) % checkpoint_every == 0:
            save_checkpoint(policy, out / f"policy_ep{ep + 1:04d}.json")
    if out is not None:
        with (out / "metrics.csv").open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(METRICS_HEADER)
            w.writerows(metrics)
        save_checkpoint(policy, out / "policy_final.json")
    return TrainingResult(policy, critic, losses, metrics)


def decile_means(values):
    """Means of the first and last tenth (at least one element each)."""
    v = np.asarray(values, dtype=float)
    k = max(1, len(v) // 10)
    return float(np.mean(v[:k])), float(np.mean(v[-k:]))
