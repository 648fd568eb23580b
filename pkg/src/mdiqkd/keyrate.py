"""Decoy-state bounds and the per-pulse-pair secure key rate.

The asymptotic path evaluates the single-photon yield lower bound, the
phase-flip error upper bound and the key-rate formula at mean values.  The
finite-size path replaces each observable by a standard-error interval
(``gamma * sqrt(S / N)``), worst-cases the additive combinations that enter
the bounds, and scans the shared vacuum term ``H`` over its interval, keeping
the smallest key rate.

Everything below works on numpy arrays so a batch of parameter points can be
evaluated at once; the public scalar helpers are thin wrappers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .bsm import ObservedStats
from .sources import SourceSpec, ka_kb

__all__ = [
    "FluctuationConfig",
    "KeyRateReport",
    "ZeroSingleYieldError",
    "DegenerateDenominatorError",
    "binary_entropy",
    "fluctuation_bounds",
    "s11_lower_bound",
    "e11ph_upper_bound",
    "key_rate_asymptotic",
    "key_rate_finite",
    "SCAN_POINTS",
]

SCAN_POINTS = 201
SCAN_REFINE_TOL = 1e-4  # relative to the H interval width
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


class ZeroSingleYieldError(ValueError):
    """The single-photon yield bound is zero; no key can be extracted."""


class DegenerateDenominatorError(ZeroDivisionError):
    """``b_x1 b_y2 == b_x2 b_y1`` (equal decoy intensities)."""


@dataclass(frozen=True)
class FluctuationConfig:
    gamma: float = 5.3
    epsilon: float = 1e-7
    joint: bool = True

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if not 0 < self.epsilon < 1:
            raise ValueError("epsilon must lie in (0, 1)")


@dataclass(frozen=True)
class KeyRateReport:
    """Bounds and key rate for one configuration.

    ``s11_lower`` and ``e11ph_upper`` hold for every ``H`` in
    ``[H_lower, H_upper]`` (on the finite-size path the true vacuum term is
    only known to lie in that interval).  The rate pairs the two bounds at
    one ``H`` and minimises over it; ``s11_argmin`` and ``e11ph_argmin`` are
    the values at the minimiser ``H_argmin``.
    """

    s11_lower: float
    e11ph_upper: float
    H_lower: float
    H_upper: float
    H_argmin: float
    R_per_pair: float
    S_plus: float
    S_minus: float
    H: float
    branch: str
    clamped: tuple[str, ...] = field(default_factory=tuple)
    s11_argmin: float = math.nan
    e11ph_argmin: float = math.nan

    def as_dict(self) -> dict:
        return {
            "s11_lower": self.s11_lower,
            "e11ph_upper": self.e11ph_upper,
            "s11_argmin": self.s11_argmin,
            "e11ph_argmin": self.e11ph_argmin,
            "S_plus": self.S_plus,
            "S_minus": self.S_minus,
            "H": self.H,
            "H_lower": self.H_lower,
            "H_upper": self.H_upper,
            "H_argmin": self.H_argmin,
            "branch": self.branch,
            "R_per_pair": self.R_per_pair,
        }


def binary_entropy(p, base: float = 2.0):
    """``-p log p - (1-p) log(1-p)`` in the given base, with ``H(0) = H(1) = 0``."""
    arr = np.asarray(p, dtype=float)
    if np.any((arr < 0) | (arr > 1)) or np.any(np.isnan(arr)):
        raise ValueError(f"binary entropy needs p in [0, 1], got {p}")
    with np.errstate(divide="ignore", invalid="ignore"):
        h = -arr * np.log(arr) - (1 - arr) * np.log1p(-arr)
    h = np.where((arr == 0) | (arr == 1), 0.0, h) / math.log(base)
    return float(h) if np.ndim(h) == 0 else h


def fluctuation_bounds(S_C: float, N_C: float, cfg: FluctuationConfig) -> tuple[float, float]:
    """Interval for the mean of an observable measured on ``N_C`` pulse pairs."""
    if N_C <= 0:
        raise ValueError("fluctuation interval of an empty set")
    if not 0 <= S_C <= 1:
        raise ValueError(f"observed yield {S_C} outside [0, 1]")
    delta = cfg.gamma * math.sqrt(S_C / N_C)
    return max(0.0, S_C - delta), min(1.0, S_C + delta)


# ---------------------------------------------------------------------------
# array core


def _spread(terms, S, N, gamma, joint):
    """Value and half-width of ``sum c_i <S_i>`` (terms are ``(c_i, key)``)."""
    value = sum(c * S[k] for c, k in terms)
    if gamma == 0:
        return value, np.zeros_like(value), value, value
    if joint:
        var = sum(c * c * S[k] / N[k] for c, k in terms)
        half = gamma * np.sqrt(var)
        return value, half, value - half, value + half
    # every constituent worst-cased on its own, each interval clamped to [0, 1]
    lo = 0.0
    hi = 0.0
    for c, k in terms:
        d = gamma * np.sqrt(S[k] / N[k])
        s_lo = np.clip(S[k] - d, 0.0, 1.0)
        s_hi = np.clip(S[k] + d, 0.0, 1.0)
        lo = lo + np.where(c >= 0, c * s_lo, c * s_hi)
        hi = hi + np.where(c >= 0, c * s_hi, c * s_lo)
    return value, (hi - lo) / 2, lo, hi


def decoy_arrays(alice: SourceSpec, bob: SourceSpec) -> dict[str, np.ndarray]:
    """Photon-number coefficients and probabilities needed by the bounds."""
    out = {}
    for party, spec in (("a", alice), ("b", bob)):
        for lab in ("x", "y"):
            d = spec.distribution(lab)
            for k in (0, 1, 2):
                out[f"{party}{lab}{k}"] = np.array([d[k]])
        out[f"{party}z1"] = np.array([spec.dist_z[1]])
        out[f"p{party}z"] = np.array([spec.p_z])
    return out


def rate_core(
    c: Mapping[str, np.ndarray],
    S: Mapping[str, np.ndarray],
    N: Mapping[str, np.ndarray],
    T_xx: np.ndarray,
    E_zz: np.ndarray,
    *,
    f: float,
    gamma: float,
    joint: bool,
    base: float = 2.0,
    scan_points: int = SCAN_POINTS,
) -> dict[str, np.ndarray]:
    """Finite-size (``gamma > 0``) or asymptotic (``gamma == 0``) key rate.

    ``c`` holds coefficient arrays keyed ``ax0, ax1, ... bz1, paz, pbz``;
    ``S`` and ``N`` are keyed by source pair.  All arrays share one batch axis.
    """
    ax1, ax2, ay1, ay2 = c["ax1"], c["ax2"], c["ay1"], c["ay2"]
    bx1, bx2, by1, by2 = c["bx1"], c["bx2"], c["by1"], c["by2"]
    # K_a > K_b, cross-multiplied; ties stay on the normal branch
    swap = ay1 * ax2 * bx1 * by2 > by1 * bx2 * ax1 * ay2
    Ax1, Bx1 = np.where(swap, bx1, ax1), np.where(swap, ax1, bx1)
    Bx2 = np.where(swap, ax2, bx2)
    Ay1, By1 = np.where(swap, by1, ay1), np.where(swap, ay1, by1)
    By2 = np.where(swap, ay2, by2)

    c1 = Ay1 * By2
    c2 = Ax1 * Bx2
    den = Ax1 * Ay1 * (Bx1 * By2 - Bx2 * By1)

    ay0, by0, ax0, bx0 = c["ay0"], c["by0"], c["ax0"], c["bx0"]
    plus_terms = [(c1, "xx"), (c2 * ay0, "oy"), (c2 * by0, "yo")]
    minus_terms = [(c2, "yy"), (c2 * ay0 * by0, "oo")]
    h_terms = [(ax0, "ox"), (bx0, "xo"), (-ax0 * bx0, "oo")]

    S_plus, _, S_plus_lo, _ = _spread(plus_terms, S, N, gamma, joint)
    S_minus, _, _, S_minus_hi = _spread(minus_terms, S, N, gamma, joint)
    H_mid, _, H_lo, H_hi = _spread(h_terms, S, N, gamma, joint)
    S_plus_lo = np.maximum(S_plus_lo, 0.0)
    H_lo = np.maximum(H_lo, 0.0)
    H_hi = np.maximum(H_hi, H_lo)
    if gamma > 0:
        T_hi = np.minimum(T_xx + gamma * np.sqrt(T_xx / N["xx"]), 1.0)
    else:
        T_hi = T_xx

    gain = c["paz"] * c["pbz"]
    single = c["az1"] * c["bz1"]
    ec = f * S["zz"] * binary_entropy(np.clip(E_zz, 0.0, 1.0), base)
    xprod = ax1 * bx1

    def evaluate(H):
        s11 = (S_plus_lo[..., None] - S_minus_hi[..., None] - c1[..., None] * H) / den[..., None]
        s11 = np.clip(s11, 0.0, 1.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            e11 = (T_hi[..., None] - H / 2) / (xprod[..., None] * s11)
        e11 = np.where(s11 > 0, np.clip(e11, 0.0, 0.5), 0.5)
        R = gain[..., None] * (single[..., None] * s11 * (1 - binary_entropy(e11, base)) - ec[..., None])
        return R, s11, e11

    if gamma == 0 or scan_points < 2:
        H_best = H_mid[..., None] if gamma == 0 else H_hi[..., None]
        R, s11, e11 = evaluate(H_best)
        R, s11, e11, H_best = R[..., 0], s11[..., 0], e11[..., 0], H_best[..., 0]
    else:
        width = H_hi - H_lo
        grid = H_lo[..., None] + width[..., None] * np.linspace(0.0, 1.0, scan_points)
        R_grid, _, _ = evaluate(grid)
        i = np.argmin(R_grid, axis=-1)
        rows = np.arange(grid.shape[0])
        R_best = R_grid[rows, i]
        H_best = grid[rows, i]
        step = width / (scan_points - 1)
        lo = np.maximum(H_best - step, H_lo)
        hi = np.minimum(H_best + step, H_hi)
        # golden-section refinement inside the bracketing grid cells
        tol = SCAN_REFINE_TOL * width
        x1 = hi - _GOLDEN * (hi - lo)
        x2 = lo + _GOLDEN * (hi - lo)
        f1 = evaluate(x1[..., None])[0][..., 0]
        f2 = evaluate(x2[..., None])[0][..., 0]
        for _ in range(100):
            if not np.any(hi - lo > tol):
                break
            left = f1 <= f2
            lo, hi = np.where(left, lo, x1), np.where(left, x2, hi)
            new_x1 = np.where(left, hi - _GOLDEN * (hi - lo), x2)
            new_x2 = np.where(left, x1, lo + _GOLDEN * (hi - lo))
            f_probe = evaluate(np.where(left, new_x1, new_x2)[..., None])[0][..., 0]
            f1, f2 = np.where(left, f_probe, f2), np.where(left, f1, f_probe)
            x1, x2 = new_x1, new_x2
        cand = np.where(f1 <= f2, x1, x2)
        f_cand = np.minimum(f1, f2)
        better = f_cand < R_best
        H_best = np.where(better, cand, H_best)
        R, s11, e11 = evaluate(H_best[..., None])
        R, s11, e11 = R[..., 0], s11[..., 0], e11[..., 0]

    # s11(H) falls linearly in H and e11(H) is a ratio of linear functions,
    # so the interval-wide worst cases sit at the endpoints
    _, s11_hi, e11_hi = evaluate(H_hi[..., None])
    _, _, e11_lo = evaluate(H_lo[..., None])

    return {
        "R": np.maximum(R, 0.0),
        "R_raw": R,
        "s11": s11,
        "e11": e11,
        "s11_lower": s11_hi[..., 0],
        "e11_upper": np.maximum(e11_lo[..., 0], e11_hi[..., 0]),
        "H": H_mid,
        "H_lower": H_lo,
        "H_upper": H_hi,
        "H_argmin": H_best,
        "S_plus": S_plus,
        "S_minus": S_minus,
        "swap": swap,
        "den": den,
    }


# ---------------------------------------------------------------------------
# scalar API

_BOUND_KEYS = ("xx", "yy", "oy", "yo", "oo", "ox", "xo", "zz")


def _coefficients_checked(alice: SourceSpec, bob: SourceSpec):
    c = decoy_arrays(alice, bob)
    K_a, K_b = ka_kb(alice, bob)
    branch = "swapped" if K_a > K_b else "normal"
    if branch == "swapped":
        x1, x2, y1, y2 = alice.decoy_coefficients()
    else:
        x1, x2, y1, y2 = bob.decoy_coefficients()
    if x1 * y2 - x2 * y1 == 0:
        raise DegenerateDenominatorError("decoy denominator vanishes (equal decoy intensities?)")
    return c, branch


def _h_term(means: Mapping[str, float], alice: SourceSpec, bob: SourceSpec) -> float:
    ax0, bx0 = alice.dist_x[0], bob.dist_x[0]
    return ax0 * means["ox"] + bx0 * means["xo"] - ax0 * bx0 * means["oo"]


def s11_lower_bound(
    means: Mapping[str, float],
    alice: SourceSpec,
    bob: SourceSpec,
    H: float | None = None,
) -> tuple[float, str]:
    """Lower bound on the single-photon-pair yield from mean yields ``<S_lr>``.

    Returns the bound clamped to ``[0, 1]`` and the branch taken
    (``"swapped"`` when ``K_a > K_b``).
    """
    c, branch = _coefficients_checked(alice, bob)
    if H is None:
        H = _h_term(means, alice, bob)
    if branch == "swapped":
        ax1, ax2, ay1, ay2 = bob.decoy_coefficients()
        bx1, bx2, by1, by2 = alice.decoy_coefficients()
    else:
        ax1, ax2, ay1, ay2 = alice.decoy_coefficients()
        bx1, bx2, by1, by2 = bob.decoy_coefficients()
    ay0, by0 = alice.dist_y[0], bob.dist_y[0]
    S_plus = ay1 * by2 * means["xx"] + ax1 * bx2 * (ay0 * means["oy"] + by0 * means["yo"])
    S_minus = ax1 * bx2 * (means["yy"] + ay0 * by0 * means["oo"])
    value = (S_plus - S_minus - ay1 * by2 * H) / (ax1 * ay1 * (bx1 * by2 - bx2 * by1))
    return min(max(value, 0.0), 1.0), branch


def e11ph_upper_bound(
    T_xx: float, H: float, s11_lower: float, alice: SourceSpec, bob: SourceSpec
) -> float:
    """Upper bound on the single-photon phase-flip error rate, clamped to ``[0, 0.5]``."""
    if s11_lower <= 0:
        raise ZeroSingleYieldError("single-photon yield bound is zero")
    value = (T_xx - H / 2) / (alice.dist_x[1] * bob.dist_x[1] * s11_lower)
    return min(max(value, 0.0), 0.5)


def _report(out: dict[str, np.ndarray]) -> KeyRateReport:
    scalar = {k: float(np.asarray(v).ravel()[0]) for k, v in out.items()}
    clamped = []
    if scalar["R_raw"] < 0:
        clamped.append("R")
    if scalar["e11"] >= 0.5:
        clamped.append("e11ph")
    if scalar["s11"] <= 0:
        clamped.append("s11")
    return KeyRateReport(
        s11_lower=scalar["s11_lower"],
        e11ph_upper=scalar["e11_upper"],
        H_lower=scalar["H_lower"],
        H_upper=scalar["H_upper"],
        H_argmin=scalar["H_argmin"],
        R_per_pair=scalar["R"],
        S_plus=scalar["S_plus"],
        S_minus=scalar["S_minus"],
        H=scalar["H"],
        branch="swapped" if scalar["swap"] else "normal",
        clamped=tuple(clamped),
        s11_argmin=scalar["s11"],
        e11ph_argmin=scalar["e11"],
    )


def _stat_arrays(stats: ObservedStats):
    S = {k: np.array([stats.S[k]]) for k in _BOUND_KEYS}
    N = {k: np.array([stats.N[k]]) for k in _BOUND_KEYS}
    T_xx = np.array([stats.E["xx"] * stats.S["xx"]])
    E_zz = np.array([stats.E["zz"]])
    return S, N, T_xx, E_zz


def key_rate_asymptotic(
    stats: ObservedStats, alice: SourceSpec, bob: SourceSpec, f: float = 1.16, base: float = 2.0
) -> KeyRateReport:
    """Key rate per pulse pair with every observable at its mean value."""
    c, _ = _coefficients_checked(alice, bob)
    S, N, T_xx, E_zz = _stat_arrays(stats)
    out = rate_core(c, S, N, T_xx, E_zz, f=f, gamma=0.0, joint=True, base=base)
    return _report(out)


def key_rate_finite(
    stats: ObservedStats,
    alice: SourceSpec,
    bob: SourceSpec,
    cfg: FluctuationConfig = FluctuationConfig(),
    f: float = 1.16,
    N_t: float | None = None,
    base: float = 2.0,
    scan_points: int = SCAN_POINTS,
) -> KeyRateReport:
    """Finite-size key rate: worst case over fluctuations and over the ``H`` interval.

    ``N_t`` rescales the pulse counts stored in ``stats`` when given.
    """
    if N_t is not None:
        current = sum(stats.N.values())
        stats = stats.scaled_counts(N_t / current)
    if any(stats.N[k] <= 0 for k in _BOUND_KEYS):
        raise ValueError("every source pair entering the bounds needs a positive pulse count")
    c, _ = _coefficients_checked(alice, bob)
    S, N, T_xx, E_zz = _stat_arrays(stats)
    out = rate_core(
        c, S, N, T_xx, E_zz, f=f, gamma=cfg.gamma, joint=cfg.joint, base=base, scan_points=scan_points
    )
    return _report(out)
