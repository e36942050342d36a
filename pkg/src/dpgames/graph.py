"""Time-varying digraph schedules, row-stochastic weights, delays, and the
augmented delay matrix with virtual relay agents.

Edges are ``(src, dst)`` pairs: ``dst`` receives from ``src``, so an edge
``(j, i)`` puts ``j`` in agent ``i``'s in-neighborhood and makes ``W[i, j]``
positive. Every weight matrix here is row stochastic, with each in-edge of
agent ``i`` weighted ``1 / in_degree(i)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Optional

import networkx as nx
import numpy as np

from .privacy import substream, STREAM_COMM_DELAY, STREAM_FEEDBACK_DELAY

Edge = tuple[int, int]

ROW_SUM_TOL = 1e-12


class ScheduleError(ValueError):
    """Raised for malformed graph schedules (empty in-neighborhood, bad edges)."""


class DelayRangeError(ValueError):
    """Raised when a delay falls outside [0, tau_max] or tau_ii != 0."""


class DiagnosticsError(RuntimeError):
    """Raised when backward products fail to converge to a rank-one matrix."""


def _normalize_edges(num_agents: int, edges: Iterable[Edge], self_loops: bool) -> frozenset[Edge]:
    out = set()
    for e in edges:
        src, dst = int(e[0]), int(e[1])
        if not (0 <= src < num_agents and 0 <= dst < num_agents):
            raise ScheduleError(f"edge ({src}, {dst}) outside agent range [0, {num_agents})")
        out.add((src, dst))
    if self_loops:
        out.update((i, i) for i in range(num_agents))
    return frozenset(out)


@dataclass(frozen=True)
class GraphSchedule:
    """A rule assigning a directed edge set to every time step.

    Three rule kinds are supported: a static edge set, a periodic list of
    edge sets (the set at time t is ``edge_sets[t % period]``), and a
    procedural callable ``t -> iterable of edges``. Static and periodic
    schedules round-trip through the config file format; procedural ones
    are Python-API only.
    """

    num_agents: int
    kind: str  # "static" | "periodic" | "procedural"
    edge_sets: tuple[frozenset[Edge], ...] = ()
    rule: Optional[Callable[[int], Iterable[Edge]]] = field(default=None, compare=False)
    require_self_loops: bool = True

    @staticmethod
    def static(num_agents: int, edges: Iterable[Edge], require_self_loops: bool = True) -> "GraphSchedule":
        es = _normalize_edges(num_agents, edges, require_self_loops)
        return GraphSchedule(num_agents, "static", (es,), None, require_self_loops)

    @staticmethod
    def periodic(num_agents: int, edge_sets: Iterable[Iterable[Edge]],
                 require_self_loops: bool = True) -> "GraphSchedule":
        sets = tuple(_normalize_edges(num_agents, es, require_self_loops) for es in edge_sets)
        if not sets:
            raise ScheduleError("periodic schedule needs at least one edge set")
        return GraphSchedule(num_agents, "periodic", sets, None, require_self_loops)

    @staticmethod
    def procedural(num_agents: int, rule: Callable[[int], Iterable[Edge]],
                   require_self_loops: bool = True) -> "GraphSchedule":
        return GraphSchedule(num_agents, "procedural", (), rule, require_self_loops)

    def edges_at(self, t: int) -> frozenset[Edge]:
        if t < 0:
            raise ScheduleError(f"time index {t} < 0")
        if self.kind == "static":
            return self.edge_sets[0]
        if self.kind == "periodic":
            return self.edge_sets[t % len(self.edge_sets)]
        return _normalize_edges(self.num_agents, self.rule(t), self.require_self_loops)

    def weights_at(self, t: int) -> np.ndarray:
        """Row-stochastic weight matrix at time t, each in-edge weighted 1/d_i.

        Raises ScheduleError if some agent has an empty in-neighborhood
        (with self-loops required this cannot happen by construction).
        """
        V = self.num_agents
        W = np.zeros((V, V))
        for (src, dst) in self.edges_at(t):
            W[dst, src] = 1.0
        deg = W.sum(axis=1)
        empty = np.nonzero(deg == 0)[0]
        if empty.size:
            raise ScheduleError(
                f"agent(s) {empty.tolist()} have no in-neighbors at t={t}"
                " (self-loop requirement violated)")
        return W / deg[:, None]

    def to_descriptor(self) -> dict:
        if self.kind == "procedural":
            raise ScheduleError("procedural schedules cannot be serialized to config")
        sets = [sorted(map(list, es)) for es in self.edge_sets]
        d = {"type": self.kind, "num_agents": self.num_agents,
             "require_self_loops": self.require_self_loops}
        if self.kind == "static":
            d["edges"] = sets[0]
        else:
            d["edge_sets"] = sets
        return d

    @staticmethod
    def from_descriptor(d: dict) -> "GraphSchedule":
        kind = d["type"]
        n = int(d["num_agents"])
        loops = bool(d.get("require_self_loops", True))
        if kind == "static":
            return GraphSchedule.static(n, [tuple(e) for e in d["edges"]], loops)
        if kind == "periodic":
            return GraphSchedule.periodic(n, [[tuple(e) for e in es] for es in d["edge_sets"]], loops)
        raise ScheduleError(f"unknown schedule type {kind!r}")


# ---------------------------------------------------------------------------
# Delay schedules


@dataclass(frozen=True)
class DelaySchedule:
    """Per-edge communication delays tau_ij(t) and per-agent feedback delays
    tau_i(t), all integers in [0, tau_max], with tau_ii(t) = 0 always.

    ``comm`` / ``feedback`` descriptors:
      {"type": "none"}                              all zero
      {"type": "fixed", "entries": {(i, j): d}}     constant per (receiver i, sender j)
      {"type": "uniform", "low": a, "high": b}      iid uniform integers, seeded

    A ``seed`` of None is resolved to the run's master seed by the engine;
    the draw for a given (i, j, t) is independent of query order.
    """

    tau_max: int
    comm: dict = field(default_factory=lambda: {"type": "none"})
    feedback: dict = field(default_factory=lambda: {"type": "none"})
    seed: Optional[int] = None

    def __post_init__(self):
        if self.tau_max < 0:
            raise DelayRangeError(f"tau_max must be >= 0, got {self.tau_max}")
        for name, desc in (("comm", self.comm), ("feedback", self.feedback)):
            kind = desc.get("type")
            if kind == "fixed":
                for key, d in desc["entries"].items():
                    self._check(int(d), f"{name} entry {key}")
            elif kind == "uniform":
                lo, hi = int(desc.get("low", 0)), int(desc["high"])
                self._check(lo, f"{name} uniform low")
                self._check(hi, f"{name} uniform high")
            elif kind != "none":
                raise DelayRangeError(f"unknown delay rule type {kind!r}")

    def _check(self, d: int, what: str) -> int:
        if not (0 <= d <= self.tau_max):
            raise DelayRangeError(f"{what}: delay {d} outside [0, {self.tau_max}]")
        return d

    @staticmethod
    def none() -> "DelaySchedule":
        return DelaySchedule(0)

    @staticmethod
    def fixed(tau_max: int, comm: Optional[dict] = None,
              feedback: Optional[dict] = None) -> "DelaySchedule":
        """Constant delays: comm maps (receiver, sender) -> delay, feedback maps agent -> delay."""
        c = {"type": "fixed", "entries": {(int(i), int(j)): int(d) for (i, j), d in (comm or {}).items()}}
        f = {"type": "fixed", "entries": {int(i): int(d) for i, d in (feedback or {}).items()}}
        return DelaySchedule(tau_max, c if comm else {"type": "none"},
                             f if feedback else {"type": "none"})

    @staticmethod
    def uniform(tau_max: int, low: int = 0, high: Optional[int] = None,
                seed: Optional[int] = None) -> "DelaySchedule":
        hi = tau_max if high is None else high
        rule = {"type": "uniform", "low": low, "high": hi}
        return DelaySchedule(tau_max, rule, dict(rule), seed)

    def with_seed(self, seed: int) -> "DelaySchedule":
        return self if self.seed is not None else replace(self, seed=seed)

    def comm_delay(self, i: int, j: int, t: int) -> int:
        """Delay of the message sent by j at time t to receiver i."""
        if i == j:
            return 0
        kind = self.comm["type"]
        if kind == "none":
            return 0
        if kind == "fixed":
            return self.comm["entries"].get((i, j), 0)
        lo, hi = self.comm["low"], self.comm["high"]
        rng = substream(self._need_seed(), STREAM_COMM_DELAY, i, j, t)
        return int(rng.integers(lo, hi + 1))

    def feedback_delay(self, i: int, t: int) -> int:
        kind = self.feedback["type"]
        if kind == "none":
            return 0
        if kind == "fixed":
            return self.feedback["entries"].get(i, 0)
        lo, hi = self.feedback["low"], self.feedback["high"]
        rng = substream(self._need_seed(), STREAM_FEEDBACK_DELAY, i, t)
        return int(rng.integers(lo, hi + 1))

    def comm_matrix(self, t: int, num_agents: int) -> np.ndarray:
        D = np.zeros((num_agents, num_agents), dtype=int)
        for i in range(num_agents):
            for j in range(num_agents):
                if i != j:
                    D[i, j] = self.comm_delay(i, j, t)
        return D

    def _need_seed(self) -> int:
        if self.seed is None:
            raise DelayRangeError("randomized delay schedule used before its seed was resolved")
        return self.seed

    def to_descriptor(self) -> dict:
        def enc(desc, keyed_pairs):
            if desc["type"] != "fixed":
                return dict(desc)
            if keyed_pairs:
                entries = [[i, j, d] for (i, j), d in sorted(desc["entries"].items())]
            else:
                entries = [[i, d] for i, d in sorted(desc["entries"].items())]
            return {"type": "fixed", "entries": entries}

        return {"tau_max": self.tau_max, "comm": enc(self.comm, True),
                "feedback": enc(self.feedback, False), "seed": self.seed}

    @staticmethod
    def from_descriptor(d: dict) -> "DelaySchedule":
        def dec(desc, keyed_pairs):
            if desc.get("type") != "fixed":
                return dict(desc)
            if keyed_pairs:
                entries = {(int(i), int(j)): int(v) for i, j, v in desc["entries"]}
            else:
                entries = {int(i): int(v) for i, v in desc["entries"]}
            return {"type": "fixed", "entries": entries}

        return DelaySchedule(int(d["tau_max"]), dec(d.get("comm", {"type": "none"}), True),
                             dec(d.get("feedback", {"type": "none"}), False), d.get("seed"))


# ---------------------------------------------------------------------------
# Connectivity validation


@dataclass(frozen=True)
class ConnectivityReport:
    ok: bool
    window_length: int
    first_violation: Optional[tuple[int, int]] = None  # [start, end] inclusive

    def __bool__(self) -> bool:
        return self.ok


def validate_b_connectivity(schedule: GraphSchedule, b_window: int, horizon: int) -> ConnectivityReport:
    """Check that the union edge set over every window [kB, (k+1)B - 1] inside
    the horizon is strongly connected.

    Returns a report rather than raising; the first violating window (if any)
    is included for diagnostics.
    """
    if b_window < 1:
        raise ScheduleError(f"connectivity window must be >= 1, got {b_window}")
    if horizon < b_window:
        raise ScheduleError(f"horizon {horizon} shorter than window {b_window}")
    V = schedule.num_agents
    for start in range(0, horizon - b_window + 1, b_window):
        g = nx.DiGraph()
        g.add_nodes_from(range(V))
        for t in range(start, start + b_window):
            for (src, dst) in schedule.edges_at(t):
                if src != dst:
                    g.add_edge(src, dst)
        if V > 1 and not nx.is_strongly_connected(g):
            return ConnectivityReport(False, b_window, (start, start + b_window - 1))
    return ConnectivityReport(True, b_window)


# ---------------------------------------------------------------------------
# Augmented delay matrix


def augmented_size(num_agents: int, tau_max: int) -> int:
    return num_agents * (1 + tau_max)


def augment(weights: np.ndarray, delays: np.ndarray, tau_max: int) -> np.ndarray:
    """Augmented matrix on V' = V(1 + tau_max) nodes for one time step.

    The top block row holds W^0 .. W^tau_max with ``W^r[i, j] = W[i, j]``
    exactly when ``delays[i, j] == r`` (each original weight lands in exactly
    one block, so the result stays row stochastic). Sub-diagonal identity
    blocks shift the virtual relay chain one stage per step.
    """
    W = np.asarray(weights, dtype=float)
    V = W.shape[0]
    if W.shape != (V, V):
        raise ValueError(f"weights must be square, got {W.shape}")
    if np.abs(W.sum(axis=1) - 1.0).max() > 1e-9:
        raise ValueError("weights matrix is not row stochastic")
    D = np.asarray(delays, dtype=int)
    if D.shape != (V, V):
        raise ValueError(f"delays must match weights shape, got {D.shape}")
    if D.min() < 0 or D.max() > tau_max:
        raise DelayRangeError(
            f"delay entries span [{D.min()}, {D.max()}], outside [0, {tau_max}]")
    if np.any(np.diag(D) != 0):
        raise DelayRangeError("self delays tau_ii must be zero")

    Vp = augmented_size(V, tau_max)
    A = np.zeros((Vp, Vp))
    for r in range(tau_max + 1):
        A[:V, r * V:(r + 1) * V] = np.where(D == r, W, 0.0)
    for r in range(1, tau_max + 1):
        idx = np.arange(V)
        A[r * V + idx, (r - 1) * V + idx] = 1.0
    return A


# ---------------------------------------------------------------------------
# Mixing diagnostics


@dataclass(frozen=True)
class MixingDiagnostics:
    c_hat: float
    lambda_hat: float
    r_squared: float
    pi_trace: np.ndarray        # (horizon, V') stochastic vectors
    deviations: np.ndarray      # max_ij |[W'(t:0)]_ij - pi_j(0)| per product length
    min_pi_real: float          # min over t and real agents
    min_pi_all: float           # min over t and all augmented nodes


def mixing_diagnostics(schedule: GraphSchedule, delays: DelaySchedule,
                       horizon: int) -> MixingDiagnostics:
    """Estimate the geometric mixing constants of the augmented backward
    products and the absolute-probability trace pi(t).

    pi(t) is obtained from the backward recursion pi(t) = W'(t)^T pi(t+1)
    started from the uniform vector at the horizon; each pi(t) is a
    probability vector. Entries for real agents stay positive under
    B-connectivity with self-loops; entries for a virtual relay stage are
    exactly zero at times when no edge uses that delay level, so only the
    real-agent minimum is a meaningful positivity witness.

    C and lambda come from least squares on log deviations of the product
    anchored at t=0 against its limiting row.
    """
    if horizon < 5:
        raise DiagnosticsError(f"horizon {horizon} too short for mixing diagnostics")
    V = schedule.num_agents
    tau = delays.tau_max
    mats = [augment(schedule.weights_at(t), delays.comm_matrix(t, V), tau)
            for t in range(horizon)]
    Vp = mats[0].shape[0]

    prods = []
    P = np.eye(Vp)
    for t in range(horizon):
        P = mats[t] @ P
        prods.append(P.copy())

    row_range = lambda M: (M.max(axis=0) - M.min(axis=0)).max()
    r0, rT = row_range(prods[0]), row_range(prods[-1])
    if not (rT < min(0.5 * r0 + 1e-15, 1e-3)):
        raise DiagnosticsError(
            f"backward products not converging to rank one (row range {rT:.3e}"
            f" after {horizon} steps); check connectivity")

    pi0 = prods[-1].mean(axis=0)
    devs = np.array([np.abs(P - pi0[None, :]).max() for P in prods])

    mask = devs > 1e-14
    ell = np.arange(1, horizon + 1, dtype=float)[mask]
    logd = np.log(devs[mask])
    if ell.size >= 3:
        A = np.vstack([ell, np.ones_like(ell)]).T
        coef, resid, *_ = np.linalg.lstsq(A, logd, rcond=None)
        lam = math.exp(coef[0])
        c = math.exp(coef[1])
        ss_tot = float(((logd - logd.mean()) ** 2).sum())
        ss_res = float(resid[0]) if resid.size else 0.0
        r2 = 1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot
    else:
        # mixed below measurement precision within the first steps; report
        # the floor as an upper bound on the rate
        lam, c, r2 = 1e-14, float(max(devs[0], 1e-14)), 1.0

    trace = np.empty((horizon, Vp))
    pi = np.full(Vp, 1.0 / Vp)
    for t in range(horizon - 1, -1, -1):
        pi = mats[t].T @ pi
        trace[t] = pi
    return MixingDiagnostics(
        c_hat=c, lambda_hat=lam, r_squared=r2, pi_trace=trace, deviations=devs,
        min_pi_real=float(trace[:, :V].min()), min_pi_all=float(trace.min()))


def matrix_text(matrix: np.ndarray, precision: int = 6) -> str:
    """Dense tabular rendering of a weight matrix for debugging."""
    M = np.atleast_2d(np.asarray(matrix, float))
    width = precision + 4
    return "\n".join(
        " ".join(f"{v:{width}.{precision}f}" for v in row) for row in M)


def eigenvector_floor(schedule: GraphSchedule, horizon: int) -> float:
    """min over t in [0, horizon] and agents i of y_ii(t), with
    Y(t) = W(t-1) ... W(0) and Y(0) = I.

    The reciprocal is the empirical theta used by the analytic sensitivity
    bound.
    """
    V = schedule.num_agents
    Y = np.eye(V)
    floor = 1.0
    for t in range(horizon):
        Y = schedule.weights_at(t) @ Y
        floor = min(floor, float(np.diag(Y).min()))
    if floor <= 0:
        raise ScheduleError("y_ii reached zero; schedule lacks self-loops")
    return floor
