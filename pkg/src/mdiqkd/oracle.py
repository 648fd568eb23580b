"""Event-by-event Monte Carlo of the BSM station, used to check :mod:`bsm`.

Photon survival, bit choices, misalignment flips and dark counts are sampled
per trial.  The interference step samples the output Fock pattern from an
explicit expansion of ``(u . a+)^j (v . b+)^k |0>`` into output monomials, so
it shares no algebra with the subset-projection formula of the analytic model.
"""

from __future__ import annotations

import functools
import math
from collections import defaultdict

import numpy as np

from .bsm import POLARISATIONS, DetectorSpec, mode_vectors

__all__ = ["monte_carlo_oracle", "output_pattern_distribution"]

_MINUS_MASKS = (0b1001, 0b0110)  # c_H d_V, c_V d_H
_PLUS_MASKS = (0b0011, 0b1100)  # c_H c_V, d_H d_V


def _expand(j: int, k: int, u: np.ndarray, v: np.ndarray) -> dict[tuple[int, ...], float]:
    poly: dict[tuple[int, ...], float] = {(0, 0, 0, 0): 1.0}
    for vec, times in ((u, j), (v, k)):
        for _ in range(times):
            nxt: dict[tuple[int, ...], float] = defaultdict(float)
            for exps, c in poly.items():
                for i in range(4):
                    if vec[i] != 0.0:
                        e = list(exps)
                        e[i] += 1
                        nxt[tuple(e)] += c * vec[i]
            poly = dict(nxt)
    return poly


@functools.lru_cache(maxsize=4096)
def output_pattern_distribution(j: int, k: int, theta_a: float, theta_b: float) -> tuple[np.ndarray, np.ndarray]:
    """Occupied-detector bitmasks and their probabilities for input ``|j>|k>``."""
    u, v = mode_vectors(theta_a, theta_b)
    norm = math.factorial(j) * math.factorial(k)
    probs: dict[int, float] = defaultdict(float)
    for exps, c in _expand(j, k, u, v).items():
        p = c * c * math.prod(math.factorial(e) for e in exps) / norm
        mask = sum(1 << i for i, e in enumerate(exps) if e)
        probs[mask] += p
    masks = np.array(sorted(probs), dtype=np.int64)
    p = np.array([probs[m] for m in masks])
    return masks, p / p.sum()


def _run_chunk(rng, eta_a, eta_b, det, basis, m, n, size):
    pols = POLARISATIONS[basis]
    e_mis = det.misalignment(basis)
    bit_a = rng.integers(0, 2, size)
    bit_b = rng.integers(0, 2, size)
    flip = rng.random(size) < e_mis
    sent_b = bit_b ^ flip
    j = rng.binomial(m, eta_a, size)
    k = rng.binomial(n, eta_b, size)

    occupied = np.zeros(size, dtype=np.int64)
    key = ((j * (n + 1) + k) * 2 + bit_a) * 2 + sent_b
    for code in np.unique(key):
        sel = np.flatnonzero(key == code)
        sb = code % 2
        sa = code // 2 % 2
        jk = code // 4
        jj, kk = divmod(int(jk), n + 1)
        masks, p = output_pattern_distribution(jj, kk, pols[sa], pols[sb])
        occupied[sel] = rng.choice(masks, size=sel.size, p=p)

    dark = rng.random((size, 4)) < det.dark_count
    clicks = occupied | (dark @ (1 << np.arange(4)))
    minus = np.isin(clicks, _MINUS_MASKS)
    plus = np.isin(clicks, _PLUS_MASKS) & (det.projections == "both")
    same = bit_a == bit_b
    if basis == "Z":
        error = (minus | plus) & same
    else:
        error = (minus & same) | (plus & ~same)
    return int(np.count_nonzero(minus | plus)), int(np.count_nonzero(error))


def monte_carlo_oracle(
    eta_a: float,
    eta_b: float,
    det: DetectorSpec,
    basis: str,
    m: int,
    n: int,
    trials: int = 10_000_000,
    seed: int = 0,
    chunk: int = 1_000_000,
) -> tuple[float, float, float, float]:
    """Empirical ``(s_hat, t_hat, se_s, se_t)`` for Fock pair ``|m>|n>``.

    ``basis`` is ``"X"`` or ``"Z"`` (both parties in the same basis).
    Standard errors are binomial.  Chunks draw from independent spawned
    streams, so results depend only on ``seed`` and ``chunk``.
    """
    if basis not in POLARISATIONS:
        raise ValueError(f"basis must be 'X' or 'Z', got {basis!r}")
    streams = np.random.SeedSequence(seed).spawn(math.ceil(trials / chunk))
    hits = errors = 0
    remaining = trials
    for ss in streams:
        size = min(chunk, remaining)
        h, e = _run_chunk(np.random.default_rng(ss), eta_a, eta_b, det, basis, m, n, size)
        hits += h
        errors += e
        remaining -= size
    s_hat = hits / trials
    t_hat = errors / trials
    se_s = math.sqrt(s_hat * (1 - s_hat) / trials)
    se_t = math.sqrt(t_hat * (1 - t_hat) / trials)
    return s_hat, t_hat, se_s, se_t
