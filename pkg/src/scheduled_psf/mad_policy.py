"""Magnitude-and-direction performance policy.

``u_L = |A(x0_seq)| * D(x_aug)``: a linear recurrent unit (LRU) driven only
by the injected initial condition sets the magnitude, and a ``tanh``-squashed
MLP sets the direction.  The LRU eigenvalues are
``exp(-exp(nu) + i*phi)``, whose modulus is below one for every real ``nu``,
so the magnitude (and therefore ``u_L``) is square summable for any
parameter value.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .nets import MLP

CHECKPOINT_FORMAT = "scheduled_psf.mad_policy"
CHECKPOINT_VERSION = 1


@dataclass
class LruParams:
    nu: np.ndarray  # (h,)
    phi: np.ndarray  # (h,)
    B: np.ndarray  # (h, n_in) complex
    C: np.ndarray  # (n_out, h) complex
    D: np.ndarray  # (n_out, n_in) real

    @property
    def h(self):
        return self.nu.shape[0]

    @property
    def eigenvalues(self):
        return np.exp(-np.exp(self.nu) + 1j * self.phi)

    def copy(self):
        return LruParams(*(np.array(a) for a in (self.nu, self.phi, self.B, self.C, self.D)))

    @classmethod
    def init(cls, h, n_in, n_out, rng, r_min=0.9, r_max=0.999, max_phase=np.pi / 10, output_scale=1.0):
        """Ring initialisation: ``|lambda|`` uniform on ``[r_min, r_max]``.

        ``B`` rows are normalised by ``sqrt(1 - |lambda|^2)`` so every mode
        has unit impulse-response energy.
        """
        rng = np.random.default_rng(rng)
        r = rng.uniform(r_min, r_max, size=h)
        nu = np.log(-np.log(r))
        phi = rng.uniform(0.0, max_phase, size=h)
        gamma = np.sqrt(1.0 - r**2)[:, None]
        B = (rng.normal(size=(h, n_in)) + 1j * rng.normal(size=(h, n_in))) / np.sqrt(2 * n_in) * gamma
        C = (rng.normal(size=(n_out, h)) + 1j * rng.normal(size=(n_out, h))) / np.sqrt(h) * output_scale
        D = rng.normal(size=(n_out, n_in)) / np.sqrt(n_in) * output_scale
        return cls(nu, phi, B, C, D)


def lru_step(params: LruParams, hidden, input):
    """``hidden' = Lambda hidden + B input``; ``y = Re(C hidden') + D input``."""
    input = np.asarray(input, dtype=float)
    hidden = params.eigenvalues * hidden + params.B @ input
    return np.real(params.C @ hidden) + params.D @ input, hidden


def direction(params: MLP, x_aug):
    """Direction in ``(-1, 1)^m``."""
    return np.tanh(params(x_aug))


@dataclass
class MadPolicyState:
    lru: LruParams
    direction: MLP
    hidden: np.ndarray = None

    def __post_init__(self):
        if self.hidden is None:
            self.hidden = np.zeros(self.lru.h, dtype=complex)

    def reset(self):
        self.hidden = np.zeros(self.lru.h, dtype=complex)


def mad_forward(state: MadPolicyState, x_aug, x0_seq_elem):
    """One step of the policy; returns ``(u_L, new_state)``.

    ``x0_seq_elem`` is ``x0`` at ``t = 0`` and zero afterwards.
    """
    y, hidden = lru_step(state.lru, state.hidden, x0_seq_elem)
    u_L = np.abs(y) * direction(state.direction, x_aug)
    return u_L, MadPolicyState(state.lru, state.direction, hidden)


def magnitude_sequence(lru: LruParams, x0, steps):
    """Impulse-driven magnitudes ``|A(x0, 0, 0, ...)|_t`` for ``t < steps``."""
    x0 = np.asarray(x0, dtype=float)
    hidden = np.zeros(lru.h, dtype=complex)
    lam = lru.eigenvalues
    out = np.empty((steps, lru.C.shape[0]))
    zero = np.zeros_like(x0)
    for t in range(steps):
        y, hidden = lru_step(lru, hidden, x0 if t == 0 else zero)
        out[t] = np.abs(y)
    return out


def init_policy(n_in, n_aug, m, rng, hidden_size=16, mlp_hidden=(32, 32), output_scale=1.0, r_min=0.9, r_max=0.999):
    rng = np.random.default_rng(rng)
    lru = LruParams.init(hidden_size, n_in, m, rng, r_min=r_min, r_max=r_max, output_scale=output_scale)
    net = MLP((n_aug, *mlp_hidden, m), rng)
    return MadPolicyState(lru, net)


def _c2list(z):
    return {"re": np.real(z).tolist(), "im": np.imag(z).tolist()}


def _list2c(d):
    return np.array(d["re"], dtype=float) + 1j * np.array(d["im"], dtype=float)


def save_checkpoint(state: MadPolicyState, path):
    """Write a JSON checkpoint with a format/version header."""
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "lru": {
            "nu": state.lru.nu.tolist(),
            "phi": state.lru.phi.tolist(),
            "B": _c2list(state.lru.B),
            "C": _c2list(state.lru.C),
            "D": state.lru.D.tolist(),
        },
        "direction": {"sizes": list(state.direction.sizes), "params": [p.tolist() for p in state.direction.params]},
    }
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path) -> MadPolicyState:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a MAD policy checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {doc.get('version')}")
    l = doc["lru"]
    lru = LruParams(
        np.array(l["nu"], dtype=float),
        np.array(l["phi"], dtype=float),
        _list2c(l["B"]),
        _list2c(l["C"]),
        np.array(l["D"], dtype=float),
    )
    d = doc["direction"]
    return MadPolicyState(lru, MLP(d["sizes"], params=d["params"]))
