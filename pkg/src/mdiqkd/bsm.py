"""Bell-state-measurement detection model in photon-number space.

The measurement station is the usual polarisation-coding setup: a 50:50
beam splitter followed by a polarising beam splitter on each output port and
four threshold detectors ``c_H, c_V, d_H, d_V``.  A projection onto
``|psi->`` is a coincidence ``c_H & d_V`` or ``c_V & d_H``; onto ``|psi+>``
``c_H & c_V`` or ``d_H & d_V``.  By default only ``|psi->`` heralds a count
(see :class:`DetectorSpec`); every other click pattern is discarded.

For Fock inputs ``|j>_a |k>_b`` (after loss) with linear polarisations the
probability that all photons end up in a detector subset ``T`` has a closed
form: project both creation operators onto ``T`` and take the norm of the
resulting two-mode state.  Dark counts and the threshold response are then
folded in by inclusion-exclusion over the click pattern.  Channel loss is a
binomial thinning of each Fock state.  Misalignment flips Bob's polarisation
to the orthogonal state of the same basis with probability ``E_d``.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np
from scipy.special import comb
from scipy.stats import binom

from .channel import TransmittancePair
from .sources import DEFAULT_KMAX, SourceSpec

__all__ = [
    "DetectorSpec",
    "FockYieldTable",
    "ObservedStats",
    "LABELS",
    "POLARISATIONS",
    "fock_yields",
    "averaged_tables",
    "observed_stats",
    "stats_from_tables",
    "basis_of",
]

# detector indices
C_H, C_V, D_H, D_V = range(4)
PSI_MINUS = ((C_H, D_V), (C_V, D_H))
PSI_PLUS = ((C_H, C_V), (D_H, D_V))

# bit value -> polarisation angle
POLARISATIONS = {
    "Z": (0.0, math.pi / 2),
    "X": (math.pi / 4, -math.pi / 4),
}
_ANGLES = (0.0, math.pi / 2, math.pi / 4, -math.pi / 4)
_POL_INDEX = {"Z": (0, 1), "X": (2, 3)}

LABELS = ("o", "x", "y", "z")


@dataclass(frozen=True)
class DetectorSpec:
    """Dark-count probability per detector per gate and per-basis misalignment.

    ``projections`` selects the heralding events: ``"psi-"`` (default)
    keeps only ``|psi->`` coincidences, ``"both"`` also accepts ``|psi+>``.
    """

    dark_count: float
    misalignment_x: float
    misalignment_z: float
    projections: str = "psi-"

    def __post_init__(self):
        for name in ("dark_count", "misalignment_x", "misalignment_z"):
            v = getattr(self, name)
            if not 0 <= v <= 0.5:
                raise ValueError(f"{name} must lie in [0, 0.5], got {v}")
        if self.projections not in ("both", "psi-"):
            raise ValueError(f"projections must be 'both' or 'psi-', got {self.projections!r}")

    def misalignment(self, basis: str) -> float:
        return self.misalignment_x if basis == "X" else self.misalignment_z


@dataclass(frozen=True)
class FockYieldTable:
    """Yields ``s[m, n]`` and error yields ``t[m, n]`` of Fock pairs ``|m>|n>``."""

    s: np.ndarray
    t: np.ndarray
    basis: str  # "XX", "ZZ", "XZ" or "ZX"

    @property
    def kmax(self) -> int:
        return self.s.shape[0] - 1


def mode_vectors(theta_a: float, theta_b: float) -> tuple[np.ndarray, np.ndarray]:
    # input a -> (c + d)/sqrt2, input b -> (c - d)/sqrt2, then H/V split
    ca, sa = math.cos(theta_a), math.sin(theta_a)
    cb, sb = math.cos(theta_b), math.sin(theta_b)
    u = np.array([ca, sa, ca, sa]) / math.sqrt(2)
    v = np.array([cb, sb, -cb, -sb]) / math.sqrt(2)
    u[np.abs(u) < 1e-12] = 0.0
    v[np.abs(v) < 1e-12] = 0.0
    return u, v


def _subset_members(mask: int) -> list[int]:
    return [i for i in range(4) if mask >> i & 1]


@functools.lru_cache(maxsize=8)
def _confinement_table(kmax: int) -> np.ndarray:
    """``Q[pa, pb, T, j, k]``: probability that ``j`` photons from Alice and ``k``
    from Bob all land in detector subset ``T`` (bitmask) after interference."""
    n = kmax + 1
    j = np.arange(n)[:, None, None]
    k = np.arange(n)[None, :, None]
    r = np.arange(n)[None, None, :]
    valid = r <= k
    weights = np.where(valid, comb(k, r) * comb(j + r, r), 0.0)
    out = np.zeros((4, 4, 16, n, n))
    for pa, ta in enumerate(_ANGLES):
        for pb, tb in enumerate(_ANGLES):
            u, v = mode_vectors(ta, tb)
            for mask in range(16):
                idx = _subset_members(mask)
                alpha = float(np.sum(u[idx] ** 2))
                beta = float(np.sum(v[idx] ** 2))
                gamma2 = float(np.dot(u[idx], v[idx])) ** 2
                if alpha <= 0.0:
                    q = np.zeros((n, n))
                    q[0, :] = beta ** np.arange(n)
                else:
                    rest = max(beta - gamma2 / alpha, 0.0)
                    with np.errstate(invalid="ignore"):
                        terms = (
                            weights
                            * (gamma2 / alpha) ** r
                            * alpha ** j
                            * np.where(valid, rest ** np.clip(k - r, 0, None), 0.0)
                        )
                    q = terms.sum(axis=2)
                out[pa, pb, mask] = q
    out.setflags(write=False)
    return out


def _thinning_matrix(eta: float, kmax: int) -> np.ndarray:
    m = np.arange(kmax + 1)[:, None]
    j = np.arange(kmax + 1)[None, :]
    return np.where(j <= m, binom.pmf(j, m, eta), 0.0)


def _pattern_probability(q: np.ndarray, pattern: tuple[int, int], dark: float) -> np.ndarray:
    """Exactly the two detectors in ``pattern`` click (``q`` indexed by subset mask)."""
    i, k = pattern
    keep = 1.0 - dark
    both = (1 << i) | (1 << k)
    return (
        keep**2 * q[both]
        - keep**3 * (q[1 << i] + q[1 << k])
        + keep**4 * q[0]
    )


def fock_yields(
    eta_a: float,
    eta_b: float,
    det: DetectorSpec,
    basis: str = "ZZ",
    kmax: int = DEFAULT_KMAX,
) -> FockYieldTable:
    """Yield and error-yield tables for Fock pairs through the BSM station.

    ``basis`` is a one-letter basis used by both parties ("X", "Z") or a
    two-letter (Alice, Bob) combination.  For mismatched bases the bits are
    uncorrelated and the error yield is set to half the yield.
    """
    if len(basis) == 1:
        basis = basis * 2
    basis_a, basis_b = basis[0], basis[1]
    conf = _confinement_table(kmax)
    thin_a = _thinning_matrix(eta_a, kmax)
    thin_b = _thinning_matrix(eta_b, kmax)
    e_mis = det.misalignment(basis_b)

    s = np.zeros((kmax + 1, kmax + 1))
    t = np.zeros_like(s)
    for bit_a, pa in enumerate(_POL_INDEX[basis_a]):
        for bit_b, pb in enumerate(_POL_INDEX[basis_b]):
            pb_flip = _POL_INDEX[basis_b][1 - bit_b]
            plus = np.zeros_like(s)
            minus = np.zeros_like(s)
            for pol_b, w in ((pb, 1.0 - e_mis), (pb_flip, e_mis)):
                if w == 0.0:
                    continue
                q = thin_a @ conf[pa, pol_b] @ thin_b.T
                minus += w * sum(_pattern_probability(q, p, det.dark_count) for p in PSI_MINUS)
                if det.projections == "both":
                    plus += w * sum(_pattern_probability(q, p, det.dark_count) for p in PSI_PLUS)
            success = plus + minus
            s += 0.25 * success
            if basis_a != basis_b:
                t += 0.125 * success
            elif basis_a == "Z":
                # either projection heralds anti-correlated bits
                if bit_a == bit_b:
                    t += 0.25 * success
            else:
                t += 0.25 * (minus if bit_a == bit_b else plus)
    s = np.clip(s, 0.0, 1.0)
    t = np.clip(t, 0.0, s)
    return FockYieldTable(s, t, basis)


def basis_of(label: str, partner: str) -> str:
    if label in ("x", "y"):
        return "X"
    if label == "z":
        return "Z"
    # vacuum carries no polarisation; borrow the partner's basis
    return basis_of(partner, "x") if partner != "o" else "X"


def averaged_tables(
    pairs: Iterable[TransmittancePair],
    det: DetectorSpec,
    kmax: int = DEFAULT_KMAX,
    bases: Iterable[str] = ("XX", "ZZ", "XZ", "ZX"),
) -> dict[str, FockYieldTable]:
    """Weight-averaged Fock tables over a transmittance-pair distribution."""
    pairs = list(pairs)
    out = {}
    for basis in bases:
        s = np.zeros((kmax + 1, kmax + 1))
        t = np.zeros_like(s)
        for pair in pairs:
            table = fock_yields(pair.eta_a, pair.eta_b, det, basis, kmax)
            s += pair.weight * table.s
            t += pair.weight * table.t
        out[basis] = FockYieldTable(s, t, basis)
    return out


@dataclass(frozen=True)
class ObservedStats:
    """Per source pair ``lr``: pulse count ``N``, yield ``S``, error rate ``E``.

    Keys are two-letter labels such as ``"xx"`` or ``"oy"`` (Alice first).
    """

    N: Mapping[str, float]
    S: Mapping[str, float]
    E: Mapping[str, float]

    @property
    def T(self) -> dict[str, float]:
        return {key: self.E[key] * self.S[key] for key in self.S}

    def scaled_counts(self, factor: float) -> "ObservedStats":
        return ObservedStats({k: v * factor for k, v in self.N.items()}, self.S, self.E)


def stats_from_tables(
    alice: SourceSpec,
    bob: SourceSpec,
    tables: Mapping[str, FockYieldTable],
    N_t: float,
) -> ObservedStats:
    N, S, E = {}, {}, {}
    for l in LABELS:
        a = alice.distribution(l).coefficients
        pa = alice.probability(l)
        for r in LABELS:
            b = bob.distribution(r).coefficients
            table = tables[basis_of(l, r) + basis_of(r, l)]
            key = l + r
            s_lr = float(a @ table.s[: a.size, : b.size] @ b)
            t_lr = float(a @ table.t[: a.size, : b.size] @ b)
            S[key] = min(max(s_lr, 0.0), 1.0)
            E[key] = t_lr / s_lr if s_lr > 0 else 0.0
            N[key] = N_t * pa * bob.probability(r)
    return ObservedStats(N, S, E)


def observed_stats(
    alice: SourceSpec,
    bob: SourceSpec,
    pair_dist: Iterable[TransmittancePair],
    det: DetectorSpec,
    N_t: float,
) -> ObservedStats:
    """Modelled yields and error rates for every source pair.

    Because each source is a mixture of Fock states, ``S_lr`` is the convex
    combination ``sum_mn a_lm b_rn s_mn`` of the weight-averaged Fock tables.
    """
    pair_dist = list(pair_dist)
    total = math.fsum(p.weight for p in pair_dist)
    if abs(total - 1.0) > 1e-9:
        raise ValueError(f"transmittance-pair weights sum to {total}, not 1")
    kmax = max(alice.dist_z.kmax, bob.dist_z.kmax)
    tables = averaged_tables(pair_dist, det, kmax)
    return stats_from_tables(alice, bob, tables, N_t)
