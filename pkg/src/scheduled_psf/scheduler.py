"""Tightening schedules mapping the performance-input size to a decrease rate."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np


@dataclass(frozen=True)
class ScheduleParams:
    rho_bar: float = 0.5
    epsilon: float = 0.05
    rho_max: float = 10.0
    smooth: bool = False
    smooth_width: Optional[float] = None  # defaults to epsilon / 2

    def __post_init__(self):
        if not 0.0 <= self.rho_bar < 1.0:
            raise ValueError("rho_bar must lie in [0, 1)")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.rho_max < 1.0:
            raise ValueError("rho_max must be >= 1")
        if self.smooth_width is not None and self.smooth_width <= 0:
            raise ValueError("smooth_width must be positive")

    @property
    def width(self):
        return self.epsilon / 2 if self.smooth_width is None else self.smooth_width


def _check_r(r):
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise ValueError("schedule argument must be nonnegative")
    return r


def psi(r, p: ScheduleParams):
    """Piecewise-linear schedule: plateau ``rho_bar`` up to ``epsilon``, linear
    ramp over the next ``epsilon``, then saturation at ``rho_max``."""
    r = _check_r(r)
    ramp = np.minimum((r - p.epsilon) / p.epsilon, 1.0)
    out = np.where(r <= p.epsilon, p.rho_bar, p.rho_bar + (p.rho_max - p.rho_bar) * ramp)
    return float(out) if out.ndim == 0 else out


def _ramp_c1(s, w):
    """C1 ramp on the normalised coordinate ``s = (r - eps)/eps``.

    Zero for ``s <= 0``, one for ``s >= 1 + w``.  Hermite blends on ``[0, w]``
    and ``[1, 1 + w]`` match value and slope of the line ``s - w/2``.
    """
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    # plateau corner: quadratic s^2/(2w) on [0, w], slope 1 at s = w
    a = (s > 0) & (s <= w)
    out[a] = s[a] ** 2 / (2 * w)
    # linear middle
    b = (s > w) & (s <= 1.0)
    out[b] = s[b] - w / 2
    # saturation corner: mirrored quadratic on [1, 1 + w]
    c = (s > 1.0) & (s < 1.0 + w)
    out[c] = 1.0 - (1.0 + w - s[c]) ** 2 / (2 * w)
    out[s >= 1.0 + w] = 1.0
    return out


def psi_smooth(r, p: ScheduleParams):
    """Continuously differentiable variant of :func:`psi`.

    Identical to ``rho_bar`` on ``[0, epsilon]``; both kinks are rounded over
    a width ``smooth_width`` (in units of ``r``) so the result saturates at
    ``rho_max`` for ``r >= 2*epsilon + smooth_width``.
    """
    r = _check_r(r)
    w = min(p.width / p.epsilon, 1.0)
    s = (r - p.epsilon) / p.epsilon
    out = p.rho_bar + (p.rho_max - p.rho_bar) * _ramp_c1(np.atleast_1d(s), w).reshape(s.shape)
    return float(out) if out.ndim == 0 else out


def schedule_signal(u_L, p: ScheduleParams):
    """Decrease rate for one performance input: ``psi(||u_L||_2)``."""
    r = float(np.linalg.norm(np.asarray(u_L, dtype=float)))
    return psi_smooth(r, p) if p.smooth else psi(r, p)
