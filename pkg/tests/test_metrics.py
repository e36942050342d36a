import dataclasses

import numpy as np
import pytest

import dpgames as dp
from dpgames.metrics import OracleError

from conftest import small_linear_game

CORNER = np.array([5.0, 10.0, 8.0, 12.0, 6.0])


def best_response_fixed_point(game, t, tol=1e-12, iters=10000):
    """Independent oracle: iterate exact per-agent best responses.

    For the shipped quadratic-in-own-action games the best response is the
    clamp of -(grad_own at aggregate minus own) / 2 solved in closed form.
    """
    V = game.num_agents
    x = ((game.box_lo + game.box_hi) / 2.0).copy()
    for _ in range(iters):
        x_old = x.copy()
        for i in range(V):
            others = sum(game.psi(j, x[j]) for j in range(V) if j != i)
            # own cost = (k + others + x_i) x_i with k the private linear term
            k = game.grad_own(i, t, np.zeros(1), np.zeros(1))[0] + others[0]
            x[i] = np.clip(-k / 2.0, game.box_lo[i], game.box_hi[i])
        if np.abs(x - x_old).max() < tol:
            return x
    raise RuntimeError("best-response iteration did not settle")


def test_oracle_finds_benchmark_corner(cournot):
    sol = dp.ne_oracle(cournot, 0, tol=1e-10)
    assert np.allclose(sol.x_star.ravel(), CORNER, atol=1e-8)
    assert sol.residual <= 1e-10
    br = best_response_fixed_point(cournot, 0)
    assert np.allclose(sol.x_star, br, atol=1e-8)


def test_oracle_kkt_conditions(cournot):
    sol = dp.ne_oracle(cournot, 0, tol=1e-10)
    assert dp.kkt_max_violation(cournot, 0, sol.x_star) <= 1e-8
    # at the all-upper corner every gradient component is negative
    g = cournot.pseudogradient(0, sol.x_star)
    assert (g < 0).all()


def test_oracle_agrees_from_random_starts(cournot):
    rng = np.random.default_rng(14)
    tol = 1e-10
    base = dp.ne_oracle(cournot, 9, tol=tol)
    for _ in range(10):
        x0 = cournot.box_lo + rng.random((5, 1)) * (cournot.box_hi - cournot.box_lo)
        sol = dp.ne_oracle(cournot, 9, tol=tol, x0=x0)
        assert np.linalg.norm(sol.x_star - base.x_star) <= 10 * tol


def test_oracle_matches_closed_form_on_unconstrained_toy():
    c = np.array([-6.0, 2.0, 10.0])
    game = dp.linear_demand_game(c, [-1e6] * 3, [1e6] * 3)
    sol = dp.ne_oracle(game, 0, tol=1e-12)
    # (I + 11^T) x = -c solved directly
    x_direct = np.linalg.solve(np.eye(3) + np.ones((3, 3)), -c)
    assert np.allclose(sol.x_star.ravel(), x_direct, atol=1e-10)


def test_oracle_detects_non_contraction():
    # a wildly understated Lipschitz constant makes the step size explosive
    game = dp.linear_demand_game([-6.0, 2.0, 10.0], [-1e6] * 3, [1e6] * 3)
    game = dataclasses.replace(game, grad_lipschitz=0.2)
    with pytest.raises(OracleError):
        dp.ne_oracle(game, 0, tol=1e-12)


def test_solve_equilibria_warm_starts(cournot):
    sols = dp.solve_equilibria(cournot, range(30))
    assert [s.t for s in sols] == list(range(30))
    assert all(s.residual <= 1e-10 for s in sols)
    assert max(s.iterations for s in sols[1:]) <= 10


# ---------------------------------------------------------------------------
# regret


def test_regret_of_oracle_trajectory_is_negligible(cournot):
    tol = 1e-10
    sols = dp.solve_equilibria(cournot, range(40), tol=tol)
    traj = np.stack([s.x_star for s in sols])
    rep = dp.dynamic_regret(cournot, traj, sols)
    bound = cournot.num_agents * tol * cournot.L * 40
    assert abs(rep.total()) <= max(bound, 1e-6)
    assert np.allclose(rep.cumulative_mean, rep.cumulative / 5)


def test_regret_single_agent_hand_value():
    # one agent, cost (x - 4) x: optimum x* = 2, playing 3 costs one unit more
    game = dp.linear_demand_game([-4.0], [-100.0], [100.0])
    sol = dp.ne_oracle(game, 0, tol=1e-12)
    assert sol.x_star.ravel() == pytest.approx([2.0], abs=1e-10)
    traj = np.array([[[3.0]], [[3.0]]])
    rep = dp.dynamic_regret(game, traj, dp.solve_equilibria(game, [0, 1], tol=1e-12))
    # F(3) - F(2) = (-1)(3) - (-2)(2) = 1 per round
    assert rep.increments == pytest.approx(np.ones((2, 1)), abs=1e-9)
    assert rep.total() == pytest.approx(2.0, abs=1e-8)


def test_regret_counterfactual_mixes_profiles(cournot):
    # the first term must evaluate the played action inside the others'
    # equilibrium profile, not the played profile
    sols = dp.solve_equilibria(cournot, [0])
    x = sols[0].x_star.copy()
    x[0, 0] = 0.0  # agent 0 deviates to 0, the rest sit at the equilibrium
    rep = dp.dynamic_regret(cournot, x[None], sols)
    agg_mixed = (CORNER.sum() - 5.0 + 0.0) / 5.0
    expected = (cournot.cost(0, 0, [0.0], [agg_mixed])
                - cournot.cost(0, 0, [5.0], [CORNER.sum() / 5.0]))
    assert rep.increments[0, 0] == pytest.approx(expected, abs=1e-9)
    assert np.allclose(rep.increments[0, 1:], 0.0, atol=1e-9)


def test_regret_horizon_mismatch():
    game = small_linear_game(2)
    sols = dp.solve_equilibria(game, [0, 1, 2])
    with pytest.raises(ValueError):
        dp.dynamic_regret(game, np.zeros((2, 2, 1)), sols)


# ---------------------------------------------------------------------------
# loss series and stabilization


def test_average_loss_trivial_series():
    assert dp.average_loss(np.array([7.0, 7.0, 7.0])).tolist() == [7.0, 7.0, 7.0]
    assert dp.average_loss(np.array([1.0, 2.0, 3.0])).tolist() == [1.0, 1.5, 2.0]


def test_average_loss_per_agent_columns():
    out = dp.average_loss(np.array([[1.0, 10.0], [3.0, 30.0]]))
    assert out.tolist() == [[1.0, 10.0], [2.0, 20.0]]


def test_average_of_nonincreasing_series_is_nonincreasing():
    rng = np.random.default_rng(3)
    losses = np.sort(rng.normal(0, 5, 200))[::-1]
    avg = dp.average_loss(losses)
    assert (np.diff(avg) <= 1e-12).all()


def test_stabilization_constant_series():
    st = dp.stabilization_stat(np.full(200, 3.5))
    assert st.rel_std == 0.0 and st.slope == pytest.approx(0.0, abs=1e-12)


def test_stabilization_linear_series_recovers_slope():
    a = 0.37
    st = dp.stabilization_stat(a * np.arange(500.0))
    assert st.slope == pytest.approx(a, abs=1e-9)


def test_stabilization_decaying_series_slope():
    t = np.arange(1, 10001, dtype=float)
    st = dp.stabilization_stat(1.0 / np.sqrt(t), tail_fraction=0.1)
    assert abs(st.slope) < 1e-5


def test_stabilization_degenerate_tail_flagged():
    series = np.concatenate([np.ones(180), np.zeros(40)])
    st = dp.stabilization_stat(series, tail_fraction=0.1)
    assert st.degenerate and st.rel_std == 0.0


def test_stabilization_requires_enough_points():
    with pytest.raises(ValueError):
        dp.stabilization_stat(np.ones(50), tail_fraction=0.1)


def test_stabilization_time_scan():
    # settles once the 1/sqrt(t) transient has passed
    t = np.arange(1, 2001, dtype=float)
    series = 5.0 + 30.0 / np.sqrt(t)
    t_star = dp.stabilization_time(series, rel_std_max=0.01, slope_max=1e-3)
    assert t_star is not None
    assert dp.stabilization_time(np.sin(t), rel_std_max=0.01, slope_max=1e-3) is None
