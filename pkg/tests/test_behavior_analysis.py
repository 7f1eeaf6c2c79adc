import math

import numpy as np
import pytest

from scheduled_psf.behavior_analysis import (
    SOLVER,
    AdmissibleSetQuery,
    GridSpec,
    admissible_input_set,
    backend_disagreements,
    boundary_cells,
    certificate_profile,
    check_separation,
    construct_separating_uL,
    find_separating_input,
    random_inclusion_queries,
    shared_prefix,
    verify_inclusion,
    write_report,
)
from scheduled_psf.certificate import stage_cost


def brute_profile(x, problem, grid):
    """Nested-loop enumeration over the whole input sequence."""
    G = grid.points()
    out = np.full(len(G), np.inf)
    for k, v in enumerate(G):
        stack = [(problem.dynamics(x, v), float(stage_cost(x, v, problem.cost)), problem.horizon - 1)]
        while stack:
            z, J, left = stack.pop()
            if left == 0:
                if np.max(np.abs(z)) <= 1e-7:
                    out[k] = min(out[k], J)
                continue
            if np.any(np.abs(z) > 2 + 1e-7):
                continue
            for w in G:
                stack.append((problem.dynamics(z, w), J + float(stage_cost(z, w, problem.cost)), left - 1))
    return out


def test_grid_spec():
    g = GridSpec((-1.0,), (1.0,), 0.01)
    assert g.shape == (201,) and g.points()[100, 0] == pytest.approx(0.0)
    with pytest.raises(ValueError):
        GridSpec((0.0,), (0.015,), 0.01)


def test_profile_matches_nested_enumeration(di3):
    grid = GridSpec((-1.0,), (1.0,), 0.25)
    for x in ([0.5, -0.5], [0.0, 0.0], [-1.0, 0.75]):
        x = np.array(x)
        a = certificate_profile(x, di3, grid)
        b = brute_profile(x, di3, grid)
        assert np.array_equal(np.isfinite(a), np.isfinite(b))
        assert np.allclose(a[np.isfinite(a)], b[np.isfinite(b)])


def test_unbounded_certificate_gives_full_feasible_set(di3):
    grid = GridSpec.for_problem(di3)
    x = np.array([0.5, -0.5])
    prof = certificate_profile(x, di3, grid)
    for rho in (0.0, 0.5, 10.0):
        s = admissible_input_set(AdmissibleSetQuery(x, math.inf, 1.0, rho, grid, di3), profile=prof)
        assert np.array_equal(s.mask, np.isfinite(prof))


def test_origin_zero_input_is_member(di3):
    grid = GridSpec.for_problem(di3)
    q = AdmissibleSetQuery(np.zeros(2), 0.0, 0.0, 0.5, grid, di3)
    s = admissible_input_set(q)
    assert s.members.ravel().tolist() == [0.0]


def test_same_query_not_strict(di3):
    grid = GridSpec.for_problem(di3)
    x = np.array([0.5, -0.5])
    q = AdmissibleSetQuery(x, 1.0, 0.3, 0.5, grid, di3)
    rep = verify_inclusion(q, q)
    assert rep.included and not rep.strict


def test_larger_budget_includes(di3):
    grid = GridSpec.for_problem(di3)
    x = np.array([0.5, -0.5])
    q1 = AdmissibleSetQuery(x, 0.8, 0.3, 0.5, grid, di3)
    q2 = AdmissibleSetQuery(x, 10.8, 0.3, 0.5, grid, di3)
    rep = verify_inclusion(q1, q2)
    assert rep.included and rep.strict and rep.sizes[0] < rep.sizes[1]


def test_inclusion_argument_order_checked(di3):
    grid = GridSpec.for_problem(di3)
    x = np.zeros(2)
    with pytest.raises(ValueError):
        verify_inclusion(AdmissibleSetQuery(x, 1, 0, 0.9, grid, di3), AdmissibleSetQuery(x, 1, 0, 0.5, grid, di3))


def test_random_inclusion_sweep_no_violations(di3):
    grid = GridSpec((-1.0,), (1.0,), 0.05)
    strict_pre = 0
    for q1, q2, prof in random_inclusion_queries(di3, 30, 0, grid):
        rep = verify_inclusion(q1, q2, profile=prof)
        assert rep.included, rep.violations
        strict_pre += rep.strict and rep.precondition
    assert strict_pre > 0


def test_backends_agree_off_boundary(di3):
    grid = GridSpec((-1.0,), (1.0,), 0.05)
    x = np.array([0.5, -0.5])
    for J, rho in ((math.inf, 0.5), (1.0, 0.5), (1.0, 5.0)):
        q = AdmissibleSetQuery(x, J, 0.3, rho, grid, di3)
        a = admissible_input_set(q)
        b = admissible_input_set(q, SOLVER)
        assert backend_disagreements(a, b).size == 0


def test_boundary_cells():
    mask = np.array([0, 0, 1, 1, 1, 0], dtype=bool)
    assert boundary_cells(mask, (6,)).tolist() == [False, True, True, False, True, True]


def test_separating_uL_construction():
    seq = construct_separating_uL([[0.1], [0.2]], [0.7], 5)
    assert seq.ravel().tolist() == [0.1, 0.2, 0.7, 0.0, 0.0]
    with pytest.raises(ValueError):
        construct_separating_uL([[0.1], [0.2]], [0.7], 2)


@pytest.fixture(scope="module")
def fixture_state():
    from scheduled_psf.psf import double_integrator_problem

    prob = double_integrator_problem(horizon=3)
    return prob, shared_prefix(np.array([0.5, -0.5]), [[0.0]], prob)


def test_shared_prefix_rejects_modified_prefix(fixture_state):
    prob, _ = fixture_state
    with pytest.raises(ValueError):
        shared_prefix(np.array([0.5, -0.5]), [[1.0]], prob)


def test_separation_witness_and_control(fixture_state, tmp_path):
    prob, fx = fixture_state
    w = find_separating_input(fx, prob)
    assert w is not None and w.rho_sch > prob.schedule.rho_bar
    rep = check_separation(fx, prob)
    assert rep.separated and rep.tail_ok and rep.applied_matches_witness and rep.outside_fixed_set
    assert rep.fixed_objective > 1e-4
    control = check_separation(fx, prob, v=fx.memory.prev_plan.inputs[1])
    assert not control.separated
    write_report({"sep": rep, "arr": np.arange(2)}, tmp_path / "r.json")
    assert '"separated": true' in (tmp_path / "r.json").read_text()
