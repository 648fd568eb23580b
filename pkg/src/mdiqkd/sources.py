"""Four-intensity source sets and their photon-number statistics.

Each party owns a vacuum source ``o``, two X-basis decoy sources ``x`` and
``y`` and one Z-basis signal source ``z``.  A source is described by its
(diagonal) photon-number distribution; only weak coherent states get a
constructor, but any distribution that satisfies the decoy ordering is
accepted.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import poisson

__all__ = [
    "DEFAULT_KMAX",
    "MU_CAP",
    "TAIL_TOLERANCE",
    "PhotonDistribution",
    "SourceSpec",
    "ParamVector",
    "InvalidProbabilityError",
    "InvalidIntensityOrderError",
    "poisson_coefficients",
    "build_wcs_source",
    "check_decoy_conditions",
    "ka_kb",
    "decoy_chain_holds",
    "PARAM_NAMES",
]

DEFAULT_KMAX = 30
TAIL_TOLERANCE = 1e-10
MU_CAP = 1.0
# relative slack when comparing ratio chains in floating point
_RATIO_RTOL = 1e-9


class InvalidProbabilityError(ValueError):
    """Source usage probabilities do not form a (sub-)distribution."""


class InvalidIntensityOrderError(ValueError):
    """The two decoy intensities violate ``0 < mu_x < mu_y``."""


def poisson_coefficients(mu: float, kmax: int = DEFAULT_KMAX) -> np.ndarray:
    """Return ``exp(-mu) mu^k / k!`` for ``k = 0..kmax``."""
    if mu < 0:
        raise ValueError(f"intensity must be non-negative, got {mu}")
    return poisson.pmf(np.arange(kmax + 1), mu)


@dataclass(frozen=True)
class PhotonDistribution:
    """Truncated photon-number distribution of one source.

    The tail beyond ``kmax`` is dropped, not renormalised; construction fails
    if the dropped mass exceeds ``tail_tolerance``.
    """

    coefficients: np.ndarray
    intensity: float
    tail_tolerance: float = TAIL_TOLERANCE

    def __post_init__(self):
        coeffs = np.asarray(self.coefficients, dtype=float)
        coeffs.setflags(write=False)
        object.__setattr__(self, "coefficients", coeffs)
        if coeffs.ndim != 1 or coeffs.size < 1:
            raise ValueError("coefficients must be a non-empty 1-d array")
        if np.any(coeffs < 0) or np.any(coeffs > 1):
            raise ValueError("photon-number coefficients must lie in [0, 1]")
        total = float(coeffs.sum())
        if total > 1 + 1e-12 or total < 1 - self.tail_tolerance:
            raise ValueError(
                f"coefficient sum {total!r} outside [1 - {self.tail_tolerance}, 1]"
            )
        if self.intensity < 0:
            raise ValueError("intensity must be non-negative")

    @classmethod
    def coherent(cls, mu: float, kmax: int = DEFAULT_KMAX) -> "PhotonDistribution":
        return cls(poisson_coefficients(mu, kmax), float(mu))

    @classmethod
    def vacuum(cls, kmax: int = DEFAULT_KMAX) -> "PhotonDistribution":
        coeffs = np.zeros(kmax + 1)
        coeffs[0] = 1.0
        return cls(coeffs, 0.0)

    @property
    def kmax(self) -> int:
        return self.coefficients.size - 1

    def __getitem__(self, k: int) -> float:
        if k > self.kmax:
            return 0.0
        return float(self.coefficients[k])


@dataclass(frozen=True)
class SourceSpec:
    """One party's four sources and how often each is used."""

    dist_x: PhotonDistribution
    dist_y: PhotonDistribution
    dist_z: PhotonDistribution
    p_x: float
    p_y: float
    p_z: float
    p_o: float = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.p_o is None:
            object.__setattr__(self, "p_o", 1.0 - self.p_x - self.p_y - self.p_z)
        probs = (self.p_x, self.p_y, self.p_z, self.p_o)
        if any(p < -1e-15 for p in probs) or abs(sum(probs) - 1.0) > 1e-12:
            raise InvalidProbabilityError(f"usage probabilities {probs} are not a distribution")
        mu_x, mu_y = self.dist_x.intensity, self.dist_y.intensity
        if not 0 < mu_x < mu_y:
            raise InvalidIntensityOrderError(
                f"need 0 < mu_x < mu_y, got mu_x={mu_x}, mu_y={mu_y}"
            )

    @property
    def vacuum(self) -> PhotonDistribution:
        return PhotonDistribution.vacuum(self.dist_z.kmax)

    def distribution(self, label: str) -> PhotonDistribution:
        if label == "o":
            return self.vacuum
        return getattr(self, f"dist_{label}")

    def probability(self, label: str) -> float:
        return getattr(self, f"p_{label}")

    def decoy_coefficients(self) -> tuple[float, float, float, float]:
        """Coefficients ``(x1, x2, y1, y2)`` used by the single-photon bound."""
        return self.dist_x[1], self.dist_x[2], self.dist_y[1], self.dist_y[2]


def build_wcs_source(
    mu_x: float,
    mu_y: float,
    mu_z: float,
    p_x: float,
    p_y: float,
    p_z: float,
    kmax: int = DEFAULT_KMAX,
) -> SourceSpec:
    """Build a weak-coherent-state source set.

    Raises
    ------
    InvalidProbabilityError
        If any probability is negative or ``p_x + p_y + p_z > 1``.
    InvalidIntensityOrderError
        If ``mu_x >= mu_y`` or ``mu_x <= 0``.
    """
    probs = (p_x, p_y, p_z)
    if any(p < 0 for p in probs) or sum(probs) > 1 + 1e-12:
        raise InvalidProbabilityError(f"invalid usage probabilities {probs}")
    if not 0 < mu_x < mu_y:
        raise InvalidIntensityOrderError(f"need 0 < mu_x < mu_y, got {mu_x}, {mu_y}")
    return SourceSpec(
        PhotonDistribution.coherent(mu_x, kmax),
        PhotonDistribution.coherent(mu_y, kmax),
        PhotonDistribution.coherent(mu_z, kmax),
        p_x,
        p_y,
        p_z,
        max(0.0, 1.0 - p_x - p_y - p_z),
    )


def decoy_chain_holds(dx: PhotonDistribution, dy: PhotonDistribution) -> bool:
    """Ratio chain ``y_k/x_k >= y_2/x_2 >= y_1/x_1`` for ``3 <= k <= kmax``."""
    kmax = min(dx.kmax, dy.kmax)
    if dx[1] <= 0 or dx[2] <= 0:
        return False
    r1 = dy[1] / dx[1]
    r2 = dy[2] / dx[2]
    if r2 < r1 * (1 - _RATIO_RTOL):
        return False
    for k in range(3, kmax + 1):
        ax, ay = dx[k], dy[k]
        if ax == 0:
            # ratio is +inf (or undefined when both vanish); neither breaks the chain
            continue
        if ay / ax < r2 * (1 - _RATIO_RTOL):
            return False
    return True


def check_decoy_conditions(alice: SourceSpec, bob: SourceSpec) -> bool:
    """True iff ``a_yk/a_xk >= a_y2/a_x2 >= a_y1/a_x1`` for all ``k >= 3`` on both sides."""
    return decoy_chain_holds(alice.dist_x, alice.dist_y) and decoy_chain_holds(bob.dist_x, bob.dist_y)


def ka_kb(alice: SourceSpec, bob: SourceSpec) -> tuple[float, float]:
    """The ratios ``K_a = a_y1 a_x2 / (a_x1 a_y2)`` and its Bob counterpart."""
    ax1, ax2, ay1, ay2 = alice.decoy_coefficients()
    bx1, bx2, by1, by2 = bob.decoy_coefficients()
    if ax1 == 0 or ay2 == 0 or bx1 == 0 or by2 == 0:
        raise ZeroDivisionError("K_a/K_b need non-zero a_x1, a_y2, b_x1, b_y2")
    return ay1 * ax2 / (ax1 * ay2), by1 * bx2 / (bx1 * by2)


# Parameter ordering shared by the optimiser, the CLI and the CSV outputs.
PARAM_NAMES = (
    "mu_ax", "mu_ay", "mu_az", "p_ax", "p_ay", "p_az",
    "mu_bx", "mu_by", "mu_bz", "p_bx", "p_by", "p_bz",
)


@dataclass(frozen=True)
class ParamVector:
    """The twelve free source parameters, Alice's six followed by Bob's six."""

    mu_ax: float
    mu_ay: float
    mu_az: float
    p_ax: float
    p_ay: float
    p_az: float
    mu_bx: float
    mu_by: float
    mu_bz: float
    p_bx: float
    p_by: float
    p_bz: float

    @classmethod
    def from_array(cls, values) -> "ParamVector":
        values = [float(v) for v in np.asarray(values, dtype=float).ravel()]
        if len(values) != 12:
            raise ValueError(f"expected 12 parameters, got {len(values)}")
        return cls(*values)

    def to_array(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in PARAM_NAMES])

    def as_dict(self) -> dict[str, float]:
        return {n: getattr(self, n) for n in PARAM_NAMES}

    def is_feasible(self, mu_cap: float = MU_CAP, margin: float = 0.0) -> bool:
        x = self.to_array()
        mus = x[[0, 1, 2, 6, 7, 8]]
        probs = x[[3, 4, 5, 9, 10, 11]]
        return bool(
            np.all(mus > 0)
            and np.all(mus <= mu_cap)
            and x[0] + margin <= x[1]
            and x[6] + margin <= x[7]
            and x[0] < x[1]
            and x[6] < x[7]
            and np.all(probs >= 0)
            and probs[:3].sum() <= 1
            and probs[3:].sum() <= 1
        )

    def sources(self, kmax: int = DEFAULT_KMAX) -> tuple[SourceSpec, SourceSpec]:
        alice = build_wcs_source(self.mu_ax, self.mu_ay, self.mu_az,
                                 self.p_ax, self.p_ay, self.p_az, kmax)
        bob = build_wcs_source(self.mu_bx, self.mu_by, self.mu_bz,
                               self.p_bx, self.p_by, self.p_bz, kmax)
        return alice, bob

    def mirrored(self) -> "ParamVector":
        """Exchange Alice's and Bob's halves."""
        x = self.to_array()
        return ParamVector.from_array(np.concatenate([x[6:], x[:6]]))
