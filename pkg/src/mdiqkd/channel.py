"""Lossy channels between each party and the measurement station.

All transmittances are linear and already include the detector efficiency.
dB quantities are always *losses* (positive = attenuation), except the
compensation threshold which keeps the sign convention of the published
compensation tables (negative dB).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence

__all__ = [
    "DEFAULT_ALPHA",
    "StableChannel",
    "UnstableChannel",
    "TransmittancePair",
    "CompensationPolicy",
    "db_to_transmittance",
    "distance_to_transmittance",
    "pair_distribution",
    "apply_compensation",
]

DEFAULT_ALPHA = 0.2  # dB/km, standard telecom fibre


def db_to_transmittance(loss_db: float) -> float:
    return 10.0 ** (-loss_db / 10.0)


def distance_to_transmittance(L: float, alpha: float = DEFAULT_ALPHA, eta_d: float = 1.0) -> float:
    """Fibre of length ``L`` km at ``alpha`` dB/km followed by a detector of efficiency ``eta_d``."""
    if L < 0 or alpha < 0:
        raise ValueError("distance and attenuation must be non-negative")
    if not 0 <= eta_d <= 1:
        raise ValueError(f"detector efficiency must lie in [0, 1], got {eta_d}")
    return eta_d * 10.0 ** (-alpha * L / 10.0)


def _check_eta(eta: float, name: str) -> None:
    if not 0 <= eta <= 1:
        raise ValueError(f"{name} must lie in [0, 1], got {eta}")


@dataclass(frozen=True)
class TransmittancePair:
    eta_a: float
    eta_b: float
    weight: float = 1.0

    def __post_init__(self):
        _check_eta(self.eta_a, "eta_a")
        _check_eta(self.eta_b, "eta_b")
        if not 0 <= self.weight <= 1:
            raise ValueError(f"weight must lie in [0, 1], got {self.weight}")


@dataclass(frozen=True)
class StableChannel:
    eta_A: float
    eta_B: float

    def __post_init__(self):
        _check_eta(self.eta_A, "eta_A")
        _check_eta(self.eta_B, "eta_B")

    def pairs(self) -> list[TransmittancePair]:
        return [TransmittancePair(self.eta_A, self.eta_B, 1.0)]

    def swapped(self) -> "StableChannel":
        return StableChannel(self.eta_B, self.eta_A)


@dataclass(frozen=True)
class UnstableChannel:
    """Independent discrete transmittance distributions on the two arms.

    ``levels_A`` and ``levels_B`` are sequences of ``(eta, probability)``.
    """

    levels_A: tuple[tuple[float, float], ...]
    levels_B: tuple[tuple[float, float], ...]

    def __post_init__(self):
        for name in ("levels_A", "levels_B"):
            levels = tuple((float(e), float(p)) for e, p in getattr(self, name))
            object.__setattr__(self, name, levels)
            if not levels:
                raise ValueError(f"{name} is empty")
            for eta, p in levels:
                _check_eta(eta, name)
                if p < 0:
                    raise ValueError(f"{name} has a negative probability")
            total = math.fsum(p for _, p in levels)
            if abs(total - 1.0) > 1e-12:
                raise ValueError(f"{name} probabilities sum to {total}, not 1")

    @classmethod
    def from_db(
        cls,
        losses_A: Sequence[float],
        probs_A: Sequence[float],
        losses_B: Sequence[float],
        probs_B: Sequence[float],
        eta_d: float = 1.0,
    ) -> "UnstableChannel":
        if len(losses_A) != len(probs_A) or len(losses_B) != len(probs_B):
            raise ValueError("each loss list needs a probability list of equal length")
        return cls(
            tuple((eta_d * db_to_transmittance(l), p) for l, p in zip(losses_A, probs_A)),
            tuple((eta_d * db_to_transmittance(l), p) for l, p in zip(losses_B, probs_B)),
        )

    def pairs(self) -> list[TransmittancePair]:
        return pair_distribution(self)

    def swapped(self) -> "UnstableChannel":
        return UnstableChannel(self.levels_B, self.levels_A)


@dataclass(frozen=True)
class CompensationPolicy:
    """Extra attenuation ``eta_prime`` on the stronger arm once the ratio exceeds ``delta``.

    Both fields are linear.  ``delta = inf`` disables the policy.
    """

    delta: float
    eta_prime: float

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError(f"delta must be a positive ratio, got {self.delta}")
        if not 0 < self.eta_prime <= 1:
            raise ValueError(f"eta_prime must lie in (0, 1], got {self.eta_prime}")

    @classmethod
    def from_db(cls, delta_db: float, eta_prime_db: float) -> "CompensationPolicy":
        """Build from table-style dB values.

        ``delta_db`` is negative: compensation on Alice fires when
        ``loss_A - loss_B < delta_db``, i.e. ``eta_a / eta_b > 10**(-delta_db/10)``.
        ``eta_prime_db`` is the extra loss in dB (positive).
        """
        return cls(10.0 ** (-delta_db / 10.0), db_to_transmittance(eta_prime_db))

    @classmethod
    def disabled(cls) -> "CompensationPolicy":
        return cls(math.inf, 1.0)

    @property
    def is_active(self) -> bool:
        return math.isfinite(self.delta) and self.eta_prime < 1.0


def pair_distribution(ch: UnstableChannel | StableChannel) -> list[TransmittancePair]:
    """Cartesian product of the two arms, weighted by ``p_A * p_B``."""
    if isinstance(ch, StableChannel):
        return ch.pairs()
    return [
        TransmittancePair(ea, eb, pa * pb)
        for (ea, pa), (eb, pb) in itertools.product(ch.levels_A, ch.levels_B)
    ]


def apply_compensation(pair: TransmittancePair, policy: CompensationPolicy) -> TransmittancePair:
    if not math.isfinite(policy.delta):
        return pair
    # cross-multiplied so a dark arm (eta = 0) needs no special case
    if pair.eta_a > policy.delta * pair.eta_b:
        return TransmittancePair(pair.eta_a * policy.eta_prime, pair.eta_b, pair.weight)
    if pair.eta_b > policy.delta * pair.eta_a:
        return TransmittancePair(pair.eta_a, pair.eta_b * policy.eta_prime, pair.weight)
    return pair
