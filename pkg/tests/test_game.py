import numpy as np
import pytest

import dpgames as dp
from dpgames.game import ActionDomainError

from conftest import small_linear_game

BENCH_X0 = np.array([-1.0, 2.0, 2.0, 5.0, 1.0])


def finite_difference_own_gradient(game, i, t, x, h=1e-5):
    """Central difference of F_i(x_i, Psi(x_i, x_-i)) in x_i (m = 1)."""
    def f(s):
        xs = x.copy()
        xs[i, 0] = s
        return game.cost_fn(i, t, xs[i], game.aggregate(xs))
    s0 = x[i, 0]
    return (f(s0 + h) - f(s0 - h)) / (2.0 * h)


def test_cost_at_benchmark_init(cournot):
    # x(0) = (-1,2,2,5,1): sum = 9, scaled aggregate 9/5
    assert cournot.cost(0, 0, [-1.0], [9.0 / 5.0]) == pytest.approx(791.0, abs=1e-12)


def test_cost_zero_action_is_free(cournot):
    for t in (0, 3, 50):
        for psi in (-2.0, 0.0, 7.0):
            assert cournot.cost(1, t, [0.0], [psi]) == 0.0


def test_cost_rejects_out_of_box_action(cournot):
    with pytest.raises(ActionDomainError):
        cournot.cost(0, 0, [6.0], [0.0])  # box of agent 0 is [-5, 5]


def test_local_gradient_benchmark_value(cournot):
    g = cournot.local_gradient(0, 0, [-1.0], [9.0 / 5.0])
    assert g == pytest.approx([-792.0], abs=1e-12)


def test_grad_psi_is_identity(cournot):
    for i in range(5):
        assert np.array_equal(cournot.grad_psi(i, np.array([1.7])), np.eye(1))


def test_local_gradient_matches_finite_differences(cournot):
    rng = np.random.default_rng(17)
    lo, hi = cournot.box_lo, cournot.box_hi
    for _ in range(100):
        x = lo + (0.05 + 0.9 * rng.random(lo.shape)) * (hi - lo)
        i = int(rng.integers(5))
        t = int(rng.integers(0, 40))
        analytic = cournot.local_gradient(i, t, x[i], cournot.aggregate(x))[0]
        numeric = finite_difference_own_gradient(cournot, i, t, x)
        assert analytic == pytest.approx(numeric, rel=1e-6, abs=1e-6)


def test_linear_game_gradient_matches_finite_differences():
    game = small_linear_game(3)
    rng = np.random.default_rng(23)
    for _ in range(50):
        x = game.box_lo + (0.05 + 0.9 * rng.random(game.box_lo.shape)) * (game.box_hi - game.box_lo)
        i = int(rng.integers(3))
        analytic = game.local_gradient(i, 0, x[i], game.aggregate(x))[0]
        numeric = finite_difference_own_gradient(game, i, 0, x)
        assert analytic == pytest.approx(numeric, rel=1e-6, abs=1e-6)


def test_pseudogradient_at_benchmark_init(cournot):
    x = BENCH_X0[:, None]
    g = cournot.pseudogradient(0, x)
    expected = np.array([50.0 * (i + 1) - 850.0 + 9.0 + BENCH_X0[i] for i in range(5)])
    assert np.allclose(g.ravel(), expected, atol=1e-12)
    assert g[0, 0] == pytest.approx(-792.0)


def test_pseudogradient_at_zero_with_frozen_sin(cournot):
    g = cournot.pseudogradient(0, np.zeros((5, 1)))  # sin(0) = 0
    assert np.allclose(g.ravel(), [50.0 * (i + 1) - 850.0 for i in range(5)], atol=1e-12)


def test_pseudogradient_strong_monotonicity(cournot):
    # <grad F(x) - grad F(y), x - y> >= mu ||x - y||^2 with mu = 1
    rng = np.random.default_rng(5)
    lo, hi = cournot.box_lo, cournot.box_hi
    t = 7
    for _ in range(1000):
        x = lo + rng.random(lo.shape) * (hi - lo)
        y = lo + rng.random(lo.shape) * (hi - lo)
        dg = cournot.pseudogradient(t, x) - cournot.pseudogradient(t, y)
        dx = x - y
        inner = float((dg * dx).sum())
        assert inner >= (1.0 - 1e-9) * float((dx * dx).sum())


def test_own_gradient_bounded_by_L(cournot):
    rng = np.random.default_rng(29)
    lo, hi = cournot.box_lo, cournot.box_hi
    worst = 0.0
    for _ in range(2000):
        x = lo + rng.random(lo.shape) * (hi - lo)
        t = int(rng.integers(0, 200))
        agg = cournot.aggregate(x)
        for i in range(5):
            worst = max(worst, abs(cournot.grad_own(i, t, x[i], agg)[0]))
    assert worst <= cournot.L + 1e-9
    # the bound is tight to within the boxes' reach
    assert cournot.L == pytest.approx(825.0)


def test_cost_depends_on_others_only_through_aggregate(cournot):
    # permuting the other agents' actions leaves every cost unchanged
    x = BENCH_X0[:, None].copy()
    perm = x[[0, 3, 1, 4, 2]]
    assert np.array_equal(cournot.aggregate(x), cournot.aggregate(perm))
    agg = cournot.aggregate(x)
    c_before = cournot.cost(0, 4, x[0], agg)
    c_after = cournot.cost(0, 4, x[0], cournot.aggregate(perm))
    assert c_before == c_after


def test_linear_game_constants():
    game = small_linear_game(4)
    assert game.mu == 1.0
    assert game.grad_lipschitz == 5.0
    # L covers the extreme aggregate
    assert game.L >= abs(-35.0 - 20.0)


def test_resolve_game_registry(cournot):
    assert dp.resolve_game("nash-cournot").name == "nash-cournot"
    assert dp.resolve_game(cournot) is cournot
    with pytest.raises(ValueError):
        dp.resolve_game("no-such-game")
