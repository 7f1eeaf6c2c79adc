import math

import numpy as np
import pytest

from scheduled_psf.dynamics import (
    PendulumParams,
    double_integrator,
    fd_jacobians,
    fd_step,
    linearize,
    pendulum,
    pendulum_derivative,
    rk4_step,
)

P = PendulumParams()


def euler(x, u, T, h, p=P):
    """Plain forward Euler in scalar floats, independent of the package."""
    th, om = float(x[0]), float(x[1])
    ml2 = p.mass * p.length**2
    for _ in range(int(round(T / h))):
        th, om = th + h * om, om + h * (-(p.gravity / p.length) * math.sin(th) - p.damping / ml2 * om + u / ml2)
    return np.array([th, om])


def richardson_euler(x, u, T, h, p=P):
    return 2 * euler(x, u, T, h / 2, p) - euler(x, u, T, h, p)


def classical_rk4(x, u, p=P):
    def f(s):
        ml2 = p.mass * p.length**2
        return np.array([s[1], -(p.gravity / p.length) * math.sin(s[0]) - p.damping / ml2 * s[1] + u / ml2])

    h = p.dt
    k1 = f(x)
    k2 = f(x + h / 2 * k1)
    k3 = f(x + h / 2 * k2)
    k4 = f(x + h * k3)
    return x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def test_params_validation():
    with pytest.raises(ValueError):
        PendulumParams(mass=0.0)
    with pytest.raises(ValueError):
        PendulumParams(dt=-0.1)
    with pytest.raises(ValueError):
        PendulumParams(damping=-1.0)


def test_derivative_equilibria():
    assert np.array_equal(pendulum_derivative([0.0, 0.0], [0.0]), [0.0, 0.0])
    d = pendulum_derivative([math.pi, 0.0], [0.0])
    assert d[0] == 0.0 and abs(d[1]) < 1e-13


def test_derivative_hand_value():
    ml2 = 0.2 * 0.25
    want = [0.0, -(9.81 / 0.5) * math.sin(0.1) + 0.5 / ml2]
    assert np.allclose(pendulum_derivative([0.1, 0.0], [0.5]), want, rtol=0, atol=1e-14)


def test_derivative_batched_matches_loop(rng):
    X = rng.normal(size=(7, 2))
    U = rng.normal(size=(7, 1))
    batched = pendulum_derivative(X, U)
    for k in range(7):
        assert np.array_equal(batched[k], pendulum_derivative(X[k], U[k]))


def test_rk4_fixed_points():
    for p in (P, PendulumParams(mass=1.3, length=0.7, damping=0.5, dt=0.1)):
        assert np.array_equal(rk4_step(np.zeros(2), np.zeros(1), p), [0.0, 0.0])
        x = rk4_step(np.array([math.pi, 0.0]), np.zeros(1), p)
        assert x[0] == math.pi and abs(x[1]) < 1e-12


def test_rk4_is_classical_rk4(rng):
    for _ in range(20):
        x = rng.uniform(-2, 2, size=2)
        u = float(rng.uniform(-3, 3))
        assert np.allclose(rk4_step(x, [u]), classical_rk4(x, u), rtol=0, atol=1e-13)


def test_rk4_against_fine_euler_oracle():
    # Richardson-extrapolated Euler at dt/10000 is accurate to ~1e-10 here;
    # the remaining gap is RK4's own truncation error, which is O(dt^5).
    x = np.array([0.2, -0.1])
    ref = richardson_euler(x, 1.0, P.dt, P.dt / 10000)
    err = np.abs(rk4_step(x, [1.0]) - ref).max()
    assert err < 2e-5
    # shrinking dt by 4 shrinks the one-step error by roughly 4^5
    p = PendulumParams(dt=P.dt / 4)
    y = x.copy()
    for _ in range(4):
        y = rk4_step(y, [1.0], p)
    assert np.abs(y - ref).max() < err / 100


@pytest.mark.xfail(strict=True, reason="RK4 truncation error at dt=0.05 is ~1.3e-5 in omega, above 1e-6")
def test_rk4_within_1e6_of_euler_oracle():
    x = np.array([0.2, -0.1])
    ref = euler(x, 1.0, P.dt, P.dt / 10000)
    assert np.abs(rk4_step(x, [1.0]) - ref).max() < 1e-6


def test_rk4_fourth_order():
    x0 = np.array([0.3, 0.0])
    ref = richardson_euler(x0, 0.0, 1.0, 1e-5)
    errs = []
    for dt in (0.05, 0.025, 0.0125):
        p = PendulumParams(dt=dt)
        x = x0.copy()
        for _ in range(int(round(1.0 / dt))):
            x = rk4_step(x, np.zeros(1), p)
        errs.append(np.abs(x - ref).max())
    ratios = [errs[0] / errs[1], errs[1] / errs[2]]
    assert all(12 < r < 24 for r in ratios), ratios
    assert abs(ratios[1] - 16) < abs(ratios[0] - 16)


def test_rk4_deterministic():
    x = np.array([0.7, -1.1])
    assert np.array_equal(rk4_step(x, [0.3]), rk4_step(x.copy(), [0.3]))


def test_linearize_at_equilibrium():
    dyn = pendulum(P)
    A, B = linearize(dyn, np.zeros(2), np.zeros(1))
    assert np.all(np.isfinite(A)) and np.all(np.isfinite(B))
    assert np.array_equal(A @ np.zeros(2) + B @ np.zeros(1) + dyn(np.zeros(2), np.zeros(1)), [0.0, 0.0])


def _richardson_jac(dyn, x, u, h=1e-3):
    def cd(hh):
        n = x.size
        A = np.empty((n, n))
        for j in range(n):
            e = np.zeros(n)
            e[j] = hh
            A[:, j] = (dyn(x + e, u) - dyn(x - e, u)) / (2 * hh)
        return A

    return (4 * cd(h / 2) - cd(h)) / 3


def test_fd_jacobian_vs_richardson(rng):
    dyn = pendulum(P)
    for _ in range(10):
        x = rng.uniform(-2.5, 2.5, size=2)
        u = rng.uniform(-3, 3, size=1)
        A, _ = linearize(dyn, x, u)
        assert np.abs(A - _richardson_jac(dyn, x, u)).max() < 1e-5


def test_jacobian_directional_derivatives(rng):
    dyn = pendulum(P)
    for _ in range(10):
        x = rng.uniform(-2.5, 2.5, size=2)
        u = rng.uniform(-3, 3, size=1)
        A, B = linearize(dyn, x, u)
        dx, du = rng.normal(size=2), rng.normal(size=1)
        t = 1e-4
        fd = (dyn(x + t * dx, u + t * du) - dyn(x - t * dx, u - t * du)) / (2 * t)
        lin = A @ dx + B @ du
        assert np.linalg.norm(fd - lin) <= 1e-5 * np.linalg.norm(lin)


def test_input_jacobian_first_row_small():
    dyn = pendulum(P)
    _, B = linearize(dyn, np.array([0.4, 0.2]), np.array([0.1]))
    ml2 = P.mass * P.length**2
    # theta picks up the input only through the RK4 stages: ~ dt^2 / (2 ml^2)
    assert abs(B[0, 0]) <= P.dt**2 / ml2
    assert abs(B[0, 0]) > 0


def test_fd_batched_and_step_size():
    assert fd_step(0.0) == 1e-5
    assert fd_step(-3.0) == pytest.approx(4e-5)
    dyn = pendulum(P)
    X = np.array([[0.1, 0.2], [1.0, -0.5]])
    U = np.array([[0.0], [1.0]])
    A, B = fd_jacobians(dyn, X, U)
    assert A.shape == (2, 2, 2) and B.shape == (2, 2, 1)
    A1, B1 = linearize(dyn, X[1], U[1])
    assert np.allclose(A[1], A1, atol=1e-12) and np.allclose(B[1], B1, atol=1e-12)


def test_double_integrator_exact_jacobians():
    dyn = double_integrator()
    A, B = linearize(dyn, np.array([0.3, -0.2]), np.array([0.5]))
    assert np.array_equal(A, [[1, 1], [0, 1]]) and np.array_equal(B, [[0], [1]])
    assert np.array_equal(dyn(np.array([1.0, 2.0]), np.array([3.0])), [3.0, 5.0])
