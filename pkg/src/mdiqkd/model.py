"""Key rate as a function of the twelve source parameters.

A :class:`SimulationModel` fixes everything except the sources: detector,
channel, compensation policy, pulse budget and the fluctuation analysis.  The
transmittance-pair distribution (after compensation) is folded into
pair-averaged Fock tables once, so evaluating a parameter point is only a few
small matrix contractions.  :meth:`SimulationModel.rate_batch` evaluates many
points at once and is what the optimiser calls.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np
from scipy.stats import poisson

from .bsm import DetectorSpec, FockYieldTable, ObservedStats, averaged_tables, basis_of, stats_from_tables
from .channel import CompensationPolicy, StableChannel, UnstableChannel, apply_compensation, pair_distribution
from .keyrate import FluctuationConfig, KeyRateReport, key_rate_asymptotic, key_rate_finite, rate_core
from .optimizer import OptimizationResult, OptimizerConfig, optimize, project
from .sources import DEFAULT_KMAX, ParamVector, SourceSpec

__all__ = ["SimulationModel", "ModelOptimum", "optimize_model", "poisson_matrix", "DEFAULT_START"]

# a modest, feasible starting point used when no initial parameters are given
DEFAULT_START = ParamVector(
    mu_ax=0.02, mu_ay=0.1, mu_az=0.6, p_ax=0.2, p_ay=0.03, p_az=0.75,
    mu_bx=0.05, mu_by=0.3, mu_bz=0.6, p_bx=0.2, p_by=0.03, p_bz=0.75,
)


def poisson_matrix(mu: np.ndarray, kmax: int) -> np.ndarray:
    """Rows of Poisson coefficients ``exp(-mu) mu^k / k!`` for a vector of ``mu``."""
    mu = np.asarray(mu, dtype=float)
    return poisson.pmf(np.arange(kmax + 1), mu[..., None])


@dataclass(frozen=True)
class SimulationModel:
    detector: DetectorSpec
    channel: StableChannel | UnstableChannel
    N_t: float = 1e11
    f: float = 1.16
    fluctuation: FluctuationConfig = field(default_factory=FluctuationConfig)
    compensation: CompensationPolicy = field(default_factory=CompensationPolicy.disabled)
    entropy_base: float = 2.0
    kmax: int = DEFAULT_KMAX
    finite: bool = True

    @cached_property
    def pairs(self):
        return [apply_compensation(p, self.compensation) for p in pair_distribution(self.channel)]

    @cached_property
    def tables(self) -> dict[str, FockYieldTable]:
        return averaged_tables(self.pairs, self.detector, self.kmax)

    # -- single point -----------------------------------------------------

    def sources(self, params: ParamVector) -> tuple[SourceSpec, SourceSpec]:
        return params.sources(self.kmax)

    def stats(self, params: ParamVector) -> ObservedStats:
        alice, bob = self.sources(params)
        return stats_from_tables(alice, bob, self.tables, self.N_t)

    def report(self, params: ParamVector, *, finite: bool | None = None) -> KeyRateReport:
        finite = self.finite if finite is None else finite
        alice, bob = self.sources(params)
        stats = stats_from_tables(alice, bob, self.tables, self.N_t)
        if finite:
            return key_rate_finite(stats, alice, bob, self.fluctuation, self.f, base=self.entropy_base)
        return key_rate_asymptotic(stats, alice, bob, self.f, base=self.entropy_base)

    def rate(self, params: ParamVector) -> float:
        return float(self.rate_batch(params.to_array()[None, :])[0])

    def true_single_photon(self) -> tuple[float, float]:
        """Model ground truth ``(s11, e11)`` of the X basis, which the bounds estimate."""
        table = self.tables["XX"]
        s11 = float(table.s[1, 1])
        return s11, float(table.t[1, 1] / s11) if s11 > 0 else 0.0

    # -- batches ------------------------------------------------------------

    def rate_batch(self, X: np.ndarray, *, finite: bool | None = None, chunk: int = 20_000) -> np.ndarray:
        """Key rates for rows of ``X`` (shape ``(B, 12)``, :data:`PARAM_NAMES` order)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        finite = self.finite if finite is None else finite
        return np.concatenate(
            [self._rate_chunk(X[i : i + chunk], finite) for i in range(0, len(X), chunk)]
        ) if len(X) else np.empty(0)

    def _rate_chunk(self, X: np.ndarray, finite: bool) -> np.ndarray:
        kmax = self.kmax
        dist = {
            ("a", "x"): poisson_matrix(X[:, 0], kmax),
            ("a", "y"): poisson_matrix(X[:, 1], kmax),
            ("a", "z"): poisson_matrix(X[:, 2], kmax),
            ("b", "x"): poisson_matrix(X[:, 6], kmax),
            ("b", "y"): poisson_matrix(X[:, 7], kmax),
            ("b", "z"): poisson_matrix(X[:, 8], kmax),
        }
        prob = {
            ("a", "x"): X[:, 3], ("a", "y"): X[:, 4], ("a", "z"): X[:, 5],
            ("b", "x"): X[:, 9], ("b", "y"): X[:, 10], ("b", "z"): X[:, 11],
        }
        prob[("a", "o")] = 1.0 - X[:, 3] - X[:, 4] - X[:, 5]
        prob[("b", "o")] = 1.0 - X[:, 9] - X[:, 10] - X[:, 11]

        S, N = {}, {}
        for key in ("xx", "yy", "oy", "yo", "oo", "ox", "xo", "zz"):
            l, r = key
            table = self.tables[basis_of(l, r) + basis_of(r, l)]
            N[key] = self.N_t * prob[("a", l)] * prob[("b", r)]
            if l == "o" and r == "o":
                S[key] = np.full(len(X), table.s[0, 0])
            elif l == "o":
                S[key] = dist[("b", r)] @ table.s[0]
            elif r == "o":
                S[key] = dist[("a", l)] @ table.s[:, 0]
            else:
                S[key] = np.einsum("bi,ij,bj->b", dist[("a", l)], table.s, dist[("b", r)])
        xx, zz = self.tables["XX"], self.tables["ZZ"]
        T_xx = np.einsum("bi,ij,bj->b", dist[("a", "x")], xx.t, dist[("b", "x")])
        T_zz = np.einsum("bi,ij,bj->b", dist[("a", "z")], zz.t, dist[("b", "z")])
        with np.errstate(divide="ignore", invalid="ignore"):
            E_zz = np.where(S["zz"] > 0, T_zz / S["zz"], 0.0)

        c = {}
        for party in ("a", "b"):
            for lab in ("x", "y"):
                d = dist[(party, lab)]
                for k in (0, 1, 2):
                    c[f"{party}{lab}{k}"] = d[:, k]
            c[f"{party}z1"] = dist[(party, "z")][:, 1]
            c[f"p{party}z"] = prob[(party, "z")]

        gamma = self.fluctuation.gamma if finite else 0.0
        with np.errstate(divide="ignore", invalid="ignore"):
            out = rate_core(
                c, S, N, T_xx, E_zz,
                f=self.f, gamma=gamma, joint=self.fluctuation.joint, base=self.entropy_base,
            )
        R = out["R"]
        # degenerate decoys or empty source pairs carry no key
        bad = ~np.isfinite(R) | (out["den"] <= 0)
        if finite:
            bad |= np.any(np.stack([N[k] for k in N]) <= 0, axis=0)
        return np.where(bad, 0.0, R)

    def with_counts(self, N_t: float) -> "SimulationModel":
        return _replace(self, N_t=N_t)

    def with_fluctuation(self, fluctuation: FluctuationConfig) -> "SimulationModel":
        return _replace(self, fluctuation=fluctuation)


def _replace(model: SimulationModel, **changes) -> SimulationModel:
    # plain replace() would drop the cached Fock tables
    new = replace(model, **changes)
    if "tables" in model.__dict__ and not {"channel", "detector", "compensation", "kmax"} & changes.keys():
        new.__dict__["tables"] = model.tables
        new.__dict__["pairs"] = model.pairs
    return new



@dataclass(frozen=True)
class ModelOptimum:
    """Outcome of :func:`optimize_model`.

    ``result`` is the final search on the target model (its trace is the one
    to audit); ``ladder`` lists ``(N_t, rate)`` for each continuation rung.
    """

    result: OptimizationResult
    report: KeyRateReport
    ladder: tuple[tuple[float, float], ...]

    @property
    def best(self) -> ParamVector:
        return self.result.best

    @property
    def value(self) -> float:
        return self.result.value


def _rescue(model, x, rng, samples, cfg):
    # multiplicative perturbations around the previous optimum
    for scale in (0.3, 0.1, 0.03):
        X = project(x * (1.0 + scale * rng.standard_normal((samples, 12))), cfg)
        vals = model.rate_batch(X)
        i = int(np.argmax(vals))
        if vals[i] > 0:
            return X[i]
    return None


def optimize_model(
    model: SimulationModel,
    initial,
    cfg: OptimizerConfig = OptimizerConfig(),
    *,
    ladder_decades: float = 3.0,
    ladder_steps: int = 12,
    rescue_samples: int = 100_000,
) -> ModelOptimum:
    """Maximise the finite-size rate of ``model`` over the source parameters.

    At long distance the rate is exactly zero on most of the parameter box
    and the positive region is a thin sliver, so a plain ascent can start on
    a plateau with nothing to climb.  Besides the direct search this runs a
    continuation in the pulse budget: optimise at ``N_t * 10**ladder_decades``
    (where fluctuations are small and the positive region wide), then lower
    ``N_t`` rung by rung, warm-starting each search at the previous optimum.
    A rung that lands on zero is re-seeded from random perturbations of the
    previous optimum.  The better of the direct and continuation end points
    is polished on the target model with the configured neighbourhood check.
    """
    x0 = np.asarray(initial.to_array() if isinstance(initial, ParamVector) else initial, dtype=float)
    quick = replace(cfg, full_neighborhood="never")
    direct = optimize(x0, model.rate_batch, quick)

    rng = np.random.default_rng(cfg.seed)
    ladder = []
    x, rung_cfg = x0, quick
    if model.finite and ladder_steps > 0:
        for N in np.logspace(np.log10(model.N_t) + ladder_decades, np.log10(model.N_t), ladder_steps + 1):
            rung = model.with_counts(float(N))
            if float(rung.rate_batch(x[None, :])[0]) <= 0:
                seed = _rescue(rung, x, rng, rescue_samples, cfg)
                x = seed if seed is not None else x
            res = optimize(x, rung.rate_batch, rung_cfg)
            if res.value > 0:
                x = res.best.to_array()
            ladder.append((float(N), res.value))
            rung_cfg = replace(quick, multistart=1)

    cands = [direct.best.to_array(), x]
    vals = model.rate_batch(np.array(cands))
    start = cands[int(np.argmax(vals))]
    final = optimize(start, model.rate_batch, replace(cfg, multistart=1))
    return ModelOptimum(final, model.report(final.best), tuple(ladder))
