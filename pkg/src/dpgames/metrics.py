"""Equilibrium oracle, dynamic regret, average loss, and stabilization stats."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .game import GameSpec


class OracleError(RuntimeError):
    """The projected-pseudogradient iteration failed to contract."""


@dataclass(frozen=True)
class EquilibriumSolution:
    t: int
    x_star: np.ndarray  # (V, m)
    residual: float
    iterations: int


def _clip(game: GameSpec, x: np.ndarray) -> np.ndarray:
    return np.clip(x, game.box_lo, game.box_hi)


def _lipschitz_estimate(game: GameSpec, t: int, samples: int = 64, seed: int = 0) -> float:
    """Sampled bound on the pseudogradient's Lipschitz constant."""
    rng = np.random.default_rng(seed)
    shape = (game.num_agents, game.dim)
    best = 0.0
    for _ in range(samples):
        u = game.box_lo + rng.random(shape) * (game.box_hi - game.box_lo)
        w = game.box_lo + rng.random(shape) * (game.box_hi - game.box_lo)
        du = np.linalg.norm(u - w)
        if du < 1e-12:
            continue
        dg = np.linalg.norm(game.pseudogradient(t, u) - game.pseudogradient(t, w))
        best = max(best, dg / du)
    if best == 0.0:
        raise OracleError("could not estimate a Lipschitz constant (degenerate game?)")
    return 1.1 * best


def ne_oracle(game: GameSpec, t: int, tol: float = 1e-10,
              x0: Optional[np.ndarray] = None, max_iter: int = 200000) -> EquilibriumSolution:
    """Unique equilibrium at time t via projected pseudogradient iteration.

    Iterates x <- clip(x - alpha * grad F_t(x)) with alpha = mu / L_F^2
    (L_F the pseudogradient Lipschitz constant, analytic when the game
    provides one, sampled otherwise); stops when the fixed-point residual
    ||x - clip(x - alpha grad)|| falls below tol. Strong monotonicity makes
    the iteration a contraction, so the limit is the unique solution of the
    box-constrained variational inequality.
    """
    if tol <= 0:
        raise ValueError(f"tolerance must be positive, got {tol}")
    if game.mu <= 0:
        raise OracleError(f"game must be strongly monotone (mu > 0), got mu={game.mu}")
    L_F = game.grad_lipschitz or _lipschitz_estimate(game, t)
    alpha = game.mu / (L_F * L_F)

    x = (game.box_lo + game.box_hi) / 2.0 if x0 is None else _clip(game, np.asarray(x0, float).reshape(game.num_agents, game.dim))
    best_residual = np.inf
    stall = 0
    for k in range(1, max_iter + 1):
        x_next = _clip(game, x - alpha * game.pseudogradient(t, x))
        residual = float(np.linalg.norm(x - x_next))
        if residual <= tol:
            return EquilibriumSolution(t=t, x_star=x_next, residual=residual, iterations=k)
        if residual < best_residual * (1 - 1e-12):
            best_residual = residual
            stall = 0
        else:
            stall += 1
            if stall > 2000:
                raise OracleError(
                    f"no contraction after {k} iterations (residual {residual:.3e};"
                    f" mu={game.mu}, L_F={L_F}); check the configured constants")
        x = x_next
    raise OracleError(f"oracle did not reach tol={tol} in {max_iter} iterations "
                      f"(best residual {best_residual:.3e})")


def solve_equilibria(game: GameSpec, times: Sequence[int], tol: float = 1e-10) -> list[EquilibriumSolution]:
    """Oracle solutions for a range of rounds, warm-starting each from the last."""
    out = []
    x = None
    for t in times:
        sol = ne_oracle(game, t, tol=tol, x0=x)
        out.append(sol)
        x = sol.x_star
    return out


def kkt_max_violation(game: GameSpec, t: int, x: np.ndarray, face_tol: float = 1e-9) -> float:
    """Max violation of the box-KKT conditions of the VI at x.

    Per agent and coordinate: at a lower face the gradient must be >= 0, at
    an upper face <= 0, in the interior ~0; returns the largest violation.
    """
    x = np.asarray(x, float).reshape(game.num_agents, game.dim)
    g = game.pseudogradient(t, x)
    worst = 0.0
    for i in range(game.num_agents):
        for k in range(game.dim):
            at_lo = x[i, k] <= game.box_lo[i, k] + face_tol
            at_hi = x[i, k] >= game.box_hi[i, k] - face_tol
            if at_lo and at_hi:
                continue  # degenerate box
            if at_lo:
                worst = max(worst, -g[i, k])
            elif at_hi:
                worst = max(worst, g[i, k])
            else:
                worst = max(worst, abs(g[i, k]))
    return worst


# ---------------------------------------------------------------------------
# Regret and loss series


@dataclass(frozen=True)
class RegretReport:
    """Cumulative dynamic regret over the rounds of a trajectory.

    ``cumulative[k]`` sums the per-round gaps over the first k+1 rounds,
    where the per-round gap for agent i evaluates its played action against
    the equilibrium profile of the others minus the full equilibrium cost.
    ``cumulative_mean`` is the (1/V)-scaled variant; both conventions appear
    in the literature, so both are reported.
    """

    times: np.ndarray                 # (N,) round indices
    increments: np.ndarray            # (N, V)
    per_agent_cumulative: np.ndarray  # (N, V)
    cumulative: np.ndarray            # (N,)
    cumulative_mean: np.ndarray       # (N,)
    average_loss: Optional[np.ndarray] = None  # (N, V) when losses were supplied

    def total(self) -> float:
        return float(self.cumulative[-1])


def dynamic_regret(game: GameSpec, x_traj: np.ndarray,
                   solutions: Sequence[EquilibriumSolution],
                   losses: Optional[np.ndarray] = None) -> RegretReport:
    """Dynamic regret of a played trajectory against per-round equilibria.

    ``x_traj`` has shape (N, V, m) with round r of the trajectory matching
    ``solutions[r]``; every round present is summed, including the initial
    one. The first term of each gap evaluates agent i's actual action inside
    the others' equilibrium profile (aggregate recomputed accordingly).
    """
    x_traj = np.asarray(x_traj, float)
    N, V = x_traj.shape[0], game.num_agents
    if len(solutions) != N:
        raise ValueError(f"horizon mismatch: {N} trajectory rounds, {len(solutions)} oracle solutions")
    increments = np.zeros((N, V))
    times = np.array([s.t for s in solutions])
    for r in range(N):
        t = solutions[r].t
        xs = solutions[r].x_star
        psi_star = [game.psi(j, xs[j]) for j in range(V)]
        psi_sum = sum(psi_star)
        agg_star = psi_sum / V
        for i in range(V):
            mixed_agg = (psi_sum - psi_star[i] + game.psi(i, x_traj[r, i])) / V
            increments[r, i] = (game.cost(i, t, x_traj[r, i], mixed_agg)
                                - game.cost(i, t, xs[i], agg_star))
    per_agent = np.cumsum(increments, axis=0)
    cum = per_agent.sum(axis=1)
    avg = average_loss(losses) if losses is not None else None
    return RegretReport(times=times, increments=increments, per_agent_cumulative=per_agent,
                        cumulative=cum, cumulative_mean=cum / V, average_loss=avg)


def average_loss(losses: np.ndarray) -> np.ndarray:
    """Running mean over rounds of a loss series; shape in == shape out.

    ``losses`` is (N,) or (N, V); entry t of the result averages rounds
    0..t of the input. Callers choose which rounds to feed (the benchmark
    figures' series corresponds to feeding rounds 1..T of the local-estimate
    loss column).
    """
    losses = np.asarray(losses, float)
    if losses.size == 0:
        raise ValueError("empty loss series")
    n = np.arange(1, losses.shape[0] + 1, dtype=float)
    if losses.ndim == 1:
        return np.cumsum(losses) / n
    return np.cumsum(losses, axis=0) / n[:, None]


@dataclass(frozen=True)
class StabilizationStat:
    rel_std: float    # tail std / |tail mean| (absolute std when degenerate)
    slope: float      # least-squares slope over the tail, per step
    degenerate: bool  # tail mean ~ 0, rel_std reported as absolute std


def stabilization_stat(series: np.ndarray, tail_fraction: float = 0.1) -> StabilizationStat:
    """Dispersion and drift of the trailing fraction of a series."""
    series = np.asarray(series, float)
    if not (0 < tail_fraction <= 1):
        raise ValueError(f"tail fraction must be in (0, 1], got {tail_fraction}")
    if series.ndim != 1:
        raise ValueError("stabilization_stat expects a 1-d series")
    if series.size < 10 / tail_fraction:
        raise ValueError(
            f"series of length {series.size} too short for tail fraction {tail_fraction}")
    k = max(2, int(round(series.size * tail_fraction)))
    tail = series[-k:]
    steps = np.arange(k, dtype=float)
    A = np.vstack([steps, np.ones(k)]).T
    slope = float(np.linalg.lstsq(A, tail, rcond=None)[0][0])
    mean = float(tail.mean())
    std = float(tail.std())
    if abs(mean) < 1e-300:
        return StabilizationStat(rel_std=std, slope=slope, degenerate=True)
    return StabilizationStat(rel_std=std / abs(mean), slope=slope, degenerate=False)


def stabilization_time(series: np.ndarray, tail_fraction: float = 0.1,
                       rel_std_max: float = 0.05, slope_max: float = 1e-2,
                       stride: int = 10) -> Optional[int]:
    """Earliest prefix length at which the tail criterion holds, or None.

    Scans prefix lengths on a stride grid; the criterion is
    rel_std < rel_std_max and |slope| < slope_max on the trailing fraction.
    """
    series = np.asarray(series, float)
    start = int(np.ceil(10 / tail_fraction))
    for n in range(start, series.size + 1, stride):
        st = stabilization_stat(series[:n], tail_fraction)
        if not st.degenerate and st.rel_std < rel_std_max and abs(st.slope) < slope_max:
            return n
    return None
