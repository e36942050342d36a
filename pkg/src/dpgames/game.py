"""Aggregative game abstraction and the five-firm production benchmark.

A game couples per-agent costs F_i,t(x_i, Psi) to the scaled aggregate
Psi(x) = (1/V) sum_j psi_j(x_j). The engine always propagates the (1/V)-scaled
average; games whose published form uses the raw sum (like the production
benchmark, whose market price subtracts sum_j x_j) rescale internally.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

Vec = np.ndarray


class ActionDomainError(ValueError):
    """Raised when an action lies outside its agent's box."""


def _as_vec(x, m: int) -> Vec:
    v = np.atleast_1d(np.asarray(x, dtype=float))
    if v.shape != (m,):
        raise ValueError(f"expected shape ({m},), got {v.shape}")
    return v


@dataclass(frozen=True, eq=False)
class GameSpec:
    """An aggregative game: boxes, costs, analytic gradients, aggregate maps.

    Callables receive 0-based agent index i, integer time t, and arrays of
    shape (m,). ``grad_own`` is the partial in x_i holding the aggregate
    fixed, ``grad_agg`` the partial in the aggregate value; ``grad_psi``
    returns the (m, m) Jacobian with grad_psi[a, b] = d psi_a / d x_b.

    L bounds ||grad_own|| on the joint box, G is the own-action smoothness
    constant, mu the strong-monotonicity modulus of the pseudogradient, and R
    the regularizer-radius constant; grad_lipschitz, when known analytically,
    is the Lipschitz constant of the pseudogradient used by the equilibrium
    oracle's step size.
    """

    name: str
    num_agents: int
    dim: int
    box_lo: np.ndarray  # (V, m)
    box_hi: np.ndarray  # (V, m)
    cost_fn: Callable[[int, int, Vec, Vec], float]
    grad_own: Callable[[int, int, Vec, Vec], Vec]
    grad_agg: Callable[[int, int, Vec, Vec], Vec]
    psi_fn: Callable[[int, Vec], Vec]
    grad_psi: Callable[[int, Vec], np.ndarray]
    L: float = 1.0
    G: float = 1.0
    mu: float = 1.0
    R: float = 1.0
    grad_lipschitz: float | None = None

    def check_in_box(self, i: int, x_i: Vec, tol: float = 1e-9) -> Vec:
        x_i = _as_vec(x_i, self.dim)
        if np.any(x_i < self.box_lo[i] - tol) or np.any(x_i > self.box_hi[i] + tol):
            raise ActionDomainError(
                f"action {x_i} of agent {i} outside box "
                f"[{self.box_lo[i]}, {self.box_hi[i]}]")
        return x_i

    def cost(self, i: int, t: int, x_i, psi_val) -> float:
        """Cost of agent i at time t given an aggregate value."""
        x_i = self.check_in_box(i, x_i)
        return float(self.cost_fn(i, t, x_i, _as_vec(psi_val, self.dim)))

    def psi(self, i: int, x_i) -> Vec:
        return np.asarray(self.psi_fn(i, _as_vec(x_i, self.dim)), dtype=float)

    def aggregate(self, x: np.ndarray) -> Vec:
        """Exact aggregate Psi(x) = (1/V) sum_j psi_j(x_j); x has shape (V, m)."""
        return sum(self.psi(j, x[j]) for j in range(self.num_agents)) / self.num_agents

    def local_gradient(self, i: int, t: int, x_i, v_i) -> Vec:
        """Full aggregative gradient with the agent's aggregate estimate v_i
        substituted for the true aggregate:
        grad_own + grad_psi(x_i)^T grad_agg / V.

        Defined for any finite x_i (gradients are analytic formulas); the box
        domain is enforced on costs, not gradients, so probes at or beyond
        faces are allowed.
        """
        x_i = _as_vec(x_i, self.dim)
        v_i = _as_vec(v_i, self.dim)
        g1 = np.asarray(self.grad_own(i, t, x_i, v_i), dtype=float)
        g2 = np.asarray(self.grad_agg(i, t, x_i, v_i), dtype=float)
        J = np.asarray(self.grad_psi(i, x_i), dtype=float)
        return g1 + J.T @ g2 / self.num_agents

    def pseudogradient(self, t: int, x: np.ndarray) -> np.ndarray:
        """Stacked local gradients at the exact aggregate; x and result are (V, m)."""
        x = np.asarray(x, dtype=float).reshape(self.num_agents, self.dim)
        psi_val = self.aggregate(x)
        return np.stack([self.local_gradient(i, t, x[i], psi_val)
                         for i in range(self.num_agents)])


# ---------------------------------------------------------------------------
# Shipped games


def nash_cournot() -> GameSpec:
    """Five-firm online production game.

    Firm i (1-based) produces quantity x_i at production price
    p_i(t) = 4(i+1) sin(t/6) + 50 i and sells at market price
    m(t) = 850 - 10 sin(t/6) - sum_j x_j; its cost is (p_i - m) x_i.
    The aggregate map is the identity, so sum_j x_j = V * Psi.

    The constants L, mu, R are derived from the box geometry at construction
    (L from the affine structure of the own-gradient over the sin and
    aggregate ranges); the pseudogradient Jacobian is I + 11^T, giving
    mu = 1 and Lipschitz constant V + 1.
    """
    V, m = 5, 1
    lo = np.array([[-5.0], [0.0], [-4.0], [3.0], [-1.0]])
    hi = np.array([[5.0], [10.0], [8.0], [12.0], [6.0]])

    def price(i, t):
        firm = i + 1
        return 4.0 * (firm + 1) * math.sin(t / 6.0) + 50.0 * firm

    def cost_fn(i, t, x_i, psi_val):
        market = 850.0 - 10.0 * math.sin(t / 6.0) - V * psi_val[0]
        return (price(i, t) - market) * x_i[0]

    def grad_own(i, t, x_i, psi_val):
        return np.array([price(i, t) - 850.0 + 10.0 * math.sin(t / 6.0)
                         + V * psi_val[0]])

    def grad_agg(i, t, x_i, psi_val):
        return np.array([V * x_i[0]])

    identity = np.eye(m)

    # |grad_own| = |(4(i+1)+10) s + 50 i - 850 + S|, affine in s in [-1, 1]
    # and S = sum_j x_j in [sum lo, sum hi]: extremes at the corners.
    s_lo, s_hi = float(lo.sum()), float(hi.sum())
    L = max(abs((4.0 * (i + 2) + 10.0) * s + 50.0 * (i + 1) - 850.0 + S)
            for i in range(V) for s in (-1.0, 1.0) for S in (s_lo, s_hi))
    R = float(np.max(np.maximum(np.abs(lo), np.maximum(np.abs(hi), hi - lo))))

    return GameSpec(
        name="nash-cournot", num_agents=V, dim=m, box_lo=lo, box_hi=hi,
        cost_fn=cost_fn, grad_own=grad_own, grad_agg=grad_agg,
        psi_fn=lambda i, x: x, grad_psi=lambda i, x: identity,
        L=L, G=2.0, mu=1.0, R=R, grad_lipschitz=float(V + 1))


def linear_demand_game(c, box_lo, box_hi, name: str = "linear-demand") -> GameSpec:
    """Time-invariant test game F_i = (c_i + sum_j x_j) x_i with identity psi.

    Same I + 11^T pseudogradient Jacobian as the production benchmark
    (mu = 1, Lipschitz V + 1); with large boxes the equilibrium has the
    closed form x = -c + (sum c / (V+1)) 1.
    """
    c = np.asarray(c, dtype=float)
    V, m = c.size, 1
    lo = np.asarray(box_lo, dtype=float).reshape(V, m)
    hi = np.asarray(box_hi, dtype=float).reshape(V, m)
    if np.any(hi <= lo):
        raise ValueError("boxes must have positive extent")

    def cost_fn(i, t, x_i, psi_val):
        return (c[i] + V * psi_val[0]) * x_i[0]

    identity = np.eye(m)
    s_lo, s_hi = float(lo.sum()), float(hi.sum())
    L = max(abs(ci + S) for ci in c for S in (s_lo, s_hi))
    R = float(np.max(np.maximum(np.abs(lo), np.maximum(np.abs(hi), hi - lo))))

    return GameSpec(
        name=name, num_agents=V, dim=m, box_lo=lo, box_hi=hi,
        cost_fn=cost_fn,
        grad_own=lambda i, t, x_i, psi_val: np.array([c[i] + V * psi_val[0]]),
        grad_agg=lambda i, t, x_i, psi_val: np.array([V * x_i[0]]),
        psi_fn=lambda i, x: x, grad_psi=lambda i, x: identity,
        L=L, G=2.0, mu=1.0, R=R, grad_lipschitz=float(V + 1))


GAME_REGISTRY: dict[str, Callable[[], GameSpec]] = {
    "nash-cournot": nash_cournot,
}


def resolve_game(game) -> GameSpec:
    """Accept a GameSpec or a registered preset name."""
    if isinstance(game, GameSpec):
        return game
    try:
        return GAME_REGISTRY[game]()
    except KeyError:
        raise ValueError(f"unknown game {game!r}; registered: {sorted(GAME_REGISTRY)}")
