"""Walk through the admissible first-input sets on the double integrator.

Shows how the set grows with the rate and the certificate budget, then
finds an input the scheduled filter may apply but the fixed-rate one may not.
"""

import numpy as np

from scheduled_psf import behavior_analysis as ba
from scheduled_psf.psf import double_integrator_problem


def describe(s):
    if not len(s):
        return "empty"
    m = s.members[:, 0]
    return f"{len(s):4d} points in [{m.min():+.2f}, {m.max():+.2f}]"


def main():
    prob = double_integrator_problem(horizon=3)
    grid = ba.GridSpec.for_problem(prob)
    x = np.array([0.5, -0.5])
    profile = ba.certificate_profile(x, prob, grid)
    J_prev, s_prev = 1.0, 0.3
    print(f"x = {x}, J_prev = {J_prev}, s_prev = {s_prev}")
    for rho in (0.0, 0.5, 1.0, 5.0, 10.0):
        q = ba.AdmissibleSetQuery(x, J_prev, s_prev, rho, grid, prob)
        print(f"  rho = {rho:5.1f}: {describe(ba.admissible_input_set(q, profile=profile))}")
    q_inf = ba.AdmissibleSetQuery(x, np.inf, s_prev, 0.5, grid, prob)
    print(f"  no certificate: {describe(ba.admissible_input_set(q_inf, profile=profile))}")

    fx = ba.shared_prefix(x, [[0.0]], prob)
    w = ba.find_separating_input(fx, prob, grid)
    print(f"\nafter the shared prefix: state {fx.state}, J = {fx.memory.J_prev:.4f}")
    print(f"fixed-rate set: {describe(w.fixed_set)}")
    print(f"witness v = {w.v[0]:+.2f} at rate {w.rho_sch:.2f}, {w.distance:.2f} from the fixed set")
    rep = ba.check_separation(fx, prob, grid=grid)
    print(f"scheduled run applies {rep.applied_at_t_tilde[0]:+.4f}; fixed filter objective {rep.fixed_objective:.4f}")
    print("separated:", rep.separated)


if __name__ == "__main__":
    main()
