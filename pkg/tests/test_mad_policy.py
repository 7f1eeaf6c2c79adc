import numpy as np
import pytest

from scheduled_psf.mad_policy import (
    LruParams,
    MadPolicyState,
    direction,
    init_policy,
    load_checkpoint,
    lru_step,
    mad_forward,
    magnitude_sequence,
    save_checkpoint,
)
from scheduled_psf.nets import MLP


def scalar_lru(lam, b=1.0, c=1.0, d=0.0):
    return LruParams(
        np.array([np.log(-np.log(abs(lam)))]),
        np.array([np.angle(lam)]),
        np.array([[b]], dtype=complex),
        np.array([[c]], dtype=complex),
        np.array([[d]]),
    )


def test_scalar_impulse_response():
    p = scalar_lru(0.5)
    assert p.eigenvalues[0] == pytest.approx(0.5)
    h = np.zeros(1, dtype=complex)
    ys = []
    for t in range(4):
        y, h = lru_step(p, h, [1.0] if t == 0 else [0.0])
        ys.append(y[0])
    assert np.allclose(ys, [1.0, 0.5, 0.25, 0.125])


def test_rotating_mode_envelope():
    lam = 0.9 * np.exp(0.3j)
    mags = magnitude_sequence(scalar_lru(lam), [1.0], 30)[:, 0]
    t = np.arange(30)
    assert np.allclose(mags, np.abs(0.9**t * np.cos(0.3 * t)), atol=1e-12)


def test_eigenvalues_inside_unit_disc_for_any_nu():
    for nu in (-50.0, -5.0, 0.0, 5.0, 50.0):
        p = LruParams(np.array([nu]), np.array([1.0]), np.ones((1, 1), complex), np.ones((1, 1), complex), np.zeros((1, 1)))
        r = np.abs(p.eigenvalues[0])
        assert np.isfinite(r) and r <= 1.0
        y = magnitude_sequence(p, [1.0], 500)
        assert np.all(np.isfinite(y)) and y.max() <= 1.0 + 1e-12


def test_init_ring(rng):
    p = LruParams.init(64, 2, 1, rng, r_min=0.9, r_max=0.99)
    r = np.abs(p.eigenvalues)
    assert r.min() >= 0.9 - 1e-12 and r.max() <= 0.99 + 1e-12


def test_magnitudes_decay_to_zero(rng):
    pol = init_policy(2, 5, 1, rng, r_max=0.95)
    mags = magnitude_sequence(pol.lru, [1.0, -0.5], 600)
    assert mags[-1, 0] < 1e-10
    assert np.sum(mags**2) < np.inf


def test_direction_strictly_bounded(rng):
    net = MLP((5, 8, 2), rng, out_scale=100.0)
    d = direction(net, rng.normal(size=(1000, 5)) * 10)
    assert np.all(np.abs(d) <= 1.0)


def test_forward_is_magnitude_times_direction(rng):
    pol = init_policy(2, 5, 1, rng)
    x0 = np.array([0.7, -0.1])
    mags = magnitude_sequence(pol.lru, x0, 10)
    state = pol
    for t in range(10):
        x_aug = rng.normal(size=5)
        u, state = mad_forward(state, x_aug, x0 if t == 0 else np.zeros(2))
        assert np.abs(u[0]) <= mags[t, 0] + 1e-12
        assert u[0] == pytest.approx(mags[t, 0] * direction(pol.direction, x_aug)[0])
    assert np.allclose(pol.hidden, 0.0)  # forward is pure


def test_zero_x0_gives_zero_output(rng):
    pol = init_policy(2, 5, 1, rng)
    assert np.allclose(magnitude_sequence(pol.lru, np.zeros(2), 20), 0.0)


def test_checkpoint_round_trip(tmp_path, rng):
    pol = init_policy(2, 5, 1, rng, hidden_size=4, mlp_hidden=(6, 3))
    save_checkpoint(pol, tmp_path / "p.json")
    back = load_checkpoint(tmp_path / "p.json")
    x0 = np.array([0.4, 0.2])
    assert np.array_equal(magnitude_sequence(pol.lru, x0, 15), magnitude_sequence(back.lru, x0, 15))
    z = rng.normal(size=(7, 5))
    assert np.array_equal(pol.direction(z), back.direction(z))
    assert isinstance(back, MadPolicyState)


def test_checkpoint_rejects_foreign_file(tmp_path):
    (tmp_path / "x.json").write_text('{"format": "other"}')
    with pytest.raises(ValueError, match="checkpoint"):
        load_checkpoint(tmp_path / "x.json")
    (tmp_path / "y.json").write_text('{"format": "scheduled_psf.mad_policy", "version": 99}')
    with pytest.raises(ValueError, match="version"):
        load_checkpoint(tmp_path / "y.json")
