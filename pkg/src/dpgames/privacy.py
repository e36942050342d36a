"""Laplace mechanism, sensitivity bound, and cumulative privacy accounting.

All randomness in a run flows from one master seed through hierarchical
substreams keyed by (purpose, agent indices, time), so draws are reproducible
independent of iteration order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

# substream purpose tags (stable; part of the reproducibility contract)
STREAM_NOISE = 1
STREAM_COMM_DELAY = 2
STREAM_FEEDBACK_DELAY = 3
STREAM_NOISE_AGGREGATE = 4  # independent-draw mode only


class LedgerError(ValueError):
    """Raised on double-recording a step in the privacy ledger."""


def substream(seed: int, *key: int) -> np.random.Generator:
    """Deterministic generator for the substream (seed, *key)."""
    return np.random.default_rng([int(seed), *map(int, key)])


def sensitivity_bound(L: float, theta: float, m: int) -> float:
    """Analytic l1-sensitivity bound 2 * L * theta * sqrt(m) of one dual update.

    theta is 1 / min y_ii observed over a validation horizon, so theta >= 1.
    """
    if L <= 0:
        raise ValueError(f"gradient bound L must be positive, got {L}")
    if theta < 1:
        raise ValueError(f"theta must be >= 1 (it is 1/min y_ii), got {theta}")
    if m < 1:
        raise ValueError(f"dimension m must be >= 1, got {m}")
    return 2.0 * L * theta * math.sqrt(m)


def sigma_for(delta_t: float, epsilon_t: float) -> float:
    """Laplace scale sigma_t = Delta_t / epsilon_t."""
    if delta_t <= 0:
        raise ValueError(f"sensitivity must be positive, got {delta_t}")
    if epsilon_t <= 0:
        raise ValueError(f"per-step epsilon must be positive, got {epsilon_t}")
    return delta_t / epsilon_t


def sample_noise(sigma: float, m: int, rng: np.random.Generator) -> np.ndarray:
    """m iid draws from the zero-mean Laplace density (1/2s) exp(-|z|/s)."""
    if sigma <= 0:
        raise ValueError(f"Laplace scale must be positive, got {sigma}")
    return rng.laplace(0.0, sigma, size=m)


def density_ratio_check(b: np.ndarray, b_prime: np.ndarray, sigma: float,
                        probes: np.ndarray) -> float:
    """Max |log density ratio| of Laplace(b, sigma) vs Laplace(b', sigma) over
    the probe points.

    The analytic bound is ||b - b'||_1 / sigma; the returned maximum never
    exceeds it, which is the pointwise epsilon-DP witness.
    """
    if sigma <= 0:
        raise ValueError(f"Laplace scale must be positive, got {sigma}")
    b = np.atleast_1d(np.asarray(b, float))
    bp = np.atleast_1d(np.asarray(b_prime, float))
    pts = np.atleast_2d(np.asarray(probes, float))
    log_ratio = (np.abs(pts - bp[None, :]).sum(axis=1)
                 - np.abs(pts - b[None, :]).sum(axis=1)) / sigma
    return float(np.abs(log_ratio).max())


@dataclass(frozen=True)
class NoiseConfig:
    """How (and whether) exchanged parameters are randomized.

    mode:             "epsilon" (fixed per-step epsilon), "sigma" (fixed
                      Laplace scale), or "off".
    sensitivity_mode: "manual" uses ``delta`` as Delta_t; "analytic" computes
                      2*L*theta*sqrt(m) with theta measured from a pre-run of
                      Y(t) over the horizon.
    shared_draw:      one noise vector n_i(t) added to both the dual variable
                      and the aggregate estimate (the algorithm's literal
                      form); False draws independently for the aggregate.
    """

    mode: str = "off"
    epsilon: Optional[float] = None
    sigma: Optional[float] = None
    sensitivity_mode: str = "manual"
    delta: Optional[float] = None
    shared_draw: bool = True

    def __post_init__(self):
        if self.mode not in ("off", "epsilon", "sigma"):
            raise ValueError(f"unknown noise mode {self.mode!r}")
        if self.mode == "epsilon":
            if self.epsilon is None or self.epsilon <= 0:
                raise ValueError("epsilon mode needs epsilon > 0")
        if self.mode == "sigma":
            if self.sigma is None or self.sigma <= 0:
                raise ValueError("sigma mode needs sigma > 0")
        if self.sensitivity_mode not in ("manual", "analytic"):
            raise ValueError(f"unknown sensitivity mode {self.sensitivity_mode!r}")
        if self.mode != "off" and self.sensitivity_mode == "manual":
            if self.delta is None or self.delta <= 0:
                raise ValueError("manual sensitivity needs delta > 0")

    @property
    def enabled(self) -> bool:
        return self.mode != "off"

    def resolve(self, delta_t: float) -> tuple[float, float]:
        """(delta_t, sigma_t) for a step, given the resolved sensitivity."""
        if not self.enabled:
            raise ValueError("noise is disabled")
        if self.mode == "epsilon":
            return delta_t, sigma_for(delta_t, self.epsilon)
        return delta_t, float(self.sigma)

    @staticmethod
    def off() -> "NoiseConfig":
        return NoiseConfig("off")

    @staticmethod
    def fixed_epsilon(epsilon: float, delta: float = 1.0, *,
                      sensitivity_mode: str = "manual",
                      shared_draw: bool = True) -> "NoiseConfig":
        return NoiseConfig("epsilon", epsilon=epsilon, delta=delta,
                           sensitivity_mode=sensitivity_mode, shared_draw=shared_draw)

    @staticmethod
    def fixed_sigma(sigma: float, delta: float = 1.0, *,
                    sensitivity_mode: str = "manual",
                    shared_draw: bool = True) -> "NoiseConfig":
        return NoiseConfig("sigma", sigma=sigma, delta=delta,
                           sensitivity_mode=sensitivity_mode, shared_draw=shared_draw)

    def to_descriptor(self) -> Optional[dict]:
        if not self.enabled:
            return None
        d = {"mode": self.mode, "sensitivity": self.sensitivity_mode,
             "shared_draw": self.shared_draw}
        if self.mode == "epsilon":
            d["epsilon"] = self.epsilon
        else:
            d["sigma"] = self.sigma
        if self.sensitivity_mode == "manual":
            d["delta"] = self.delta
        return d

    @staticmethod
    def from_descriptor(d: Optional[dict]) -> "NoiseConfig":
        if d is None:
            return NoiseConfig.off()
        return NoiseConfig(
            mode=d["mode"],
            epsilon=d.get("epsilon"),
            sigma=d.get("sigma"),
            sensitivity_mode=d.get("sensitivity", "manual"),
            delta=d.get("delta"),
            shared_draw=bool(d.get("shared_draw", True)))


@dataclass
class PrivacyLedger:
    """Per-step (t, Delta_t, sigma_t, eps_t) records and the running total.

    epsilon_hat is sum_t Delta_t / sigma_t, accumulated with math.fsum so the
    reported total is the correctly rounded sum of the recorded per-step
    losses (recomputing from the records is bit-identical).
    """

    records: list[tuple[int, float, float, float]] = field(default_factory=list)
    _seen: set[int] = field(default_factory=set, repr=False)

    def record(self, t: int, delta_t: float, sigma_t: float) -> None:
        if t in self._seen:
            raise LedgerError(f"step {t} already recorded in the privacy ledger")
        if delta_t <= 0 or sigma_t <= 0:
            raise ValueError("ledger entries need positive delta and sigma")
        self._seen.add(t)
        self.records.append((t, float(delta_t), float(sigma_t), delta_t / sigma_t))

    @property
    def epsilon_hat(self) -> float:
        return math.fsum(r[3] for r in self.records)

    def to_rows(self) -> list[dict]:
        return [{"t": t, "delta": d, "sigma": s, "epsilon": e}
                for t, d, s, e in self.records]
