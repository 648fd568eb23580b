import numpy as np
import pytest

from mdiqkd.bsm import DetectorSpec
from mdiqkd.channel import CompensationPolicy, StableChannel, UnstableChannel
from mdiqkd.keyrate import FluctuationConfig
from mdiqkd.model import DEFAULT_START, SimulationModel, optimize_model, poisson_matrix
from mdiqkd.optimizer import OptimizerConfig, random_feasible
from mdiqkd.sources import PhotonDistribution

from conftest import P_10_60, TABLE_I, stable_model


def test_poisson_matrix_rows_match_distributions():
    P = poisson_matrix(np.array([0.0, 0.3, 0.8]), 30)
    for mu, row in zip((0.3, 0.8), P[1:]):
        assert np.allclose(row, PhotonDistribution.coherent(mu, 30).coefficients, rtol=1e-13, atol=0)
    assert P[0, 0] == 1.0 and P[0, 1:].sum() == 0.0


def test_batch_matches_report(model_10_60, rng):
    X = random_feasible(rng, 40, OptimizerConfig())
    X = np.vstack([X, P_10_60.to_array()])
    batch = model_10_60.rate_batch(X)
    from mdiqkd.sources import ParamVector

    single = [model_10_60.report(ParamVector.from_array(x)).R_per_pair for x in X]
    assert np.allclose(batch, single, rtol=1e-9, atol=1e-18)
    assert batch[-1] > 0


def test_batch_asymptotic_matches_report(model_10_60):
    a = model_10_60.rate_batch(P_10_60.to_array()[None], finite=False)[0]
    assert a == pytest.approx(model_10_60.report(P_10_60, finite=False).R_per_pair, rel=1e-10)


def test_batch_empty(model_10_60):
    assert model_10_60.rate_batch(np.empty((0, 12))).shape == (0,)


def test_finite_below_asymptotic_and_growing(model_10_60):
    asym = model_10_60.rate_batch(P_10_60.to_array()[None], finite=False)[0]
    rates = [model_10_60.with_counts(N).rate(P_10_60) for N in np.logspace(9, 13, 9)]
    assert all(r <= asym for r in rates)
    assert all(b >= a for a, b in zip(rates, rates[1:]))


def test_with_counts_keeps_tables(model_10_60):
    assert model_10_60.with_counts(1e12).tables is model_10_60.tables


def test_rate_falls_with_common_attenuation():
    base = StableChannel(0.3, 0.05)
    rates = []
    for s in np.linspace(1.0, 0.2, 9):
        m = SimulationModel(TABLE_I, StableChannel(base.eta_A * s, base.eta_B * s))
        rates.append(m.rate(P_10_60))
    assert rates[0] > 0
    assert all(b <= a for a, b in zip(rates, rates[1:]))


@pytest.mark.parametrize("finite", [True, False])
def test_swap_symmetry(finite):
    m = stable_model(10, 60, finite=finite)
    swapped = SimulationModel(TABLE_I, m.channel.swapped(), finite=finite)
    r, rs = m.rate(P_10_60), swapped.rate(P_10_60.mirrored())
    assert r > 0
    assert rs == pytest.approx(r, rel=1e-10)


def test_swap_symmetry_unstable():
    ch = UnstableChannel.from_db([5, 9, 13], [0.2, 0.6, 0.2], [15, 19, 23], [0.2, 0.6, 0.2])
    m = SimulationModel(TABLE_I, ch)
    s = SimulationModel(TABLE_I, ch.swapped())
    assert s.rate(P_10_60.mirrored()) == pytest.approx(m.rate(P_10_60), rel=1e-10)


def test_true_single_photon_noiseless():
    m = SimulationModel(DetectorSpec(0.0, 0.0, 0.0), StableChannel(1.0, 1.0))
    s11, e11 = m.true_single_photon()
    assert s11 == pytest.approx(0.25) and e11 == pytest.approx(0.0, abs=1e-15)


def test_compensation_changes_unstable_rate():
    ch = UnstableChannel.from_db([5, 9, 13], [0.2, 0.6, 0.2], [15, 19, 23], [0.2, 0.6, 0.2])
    base = SimulationModel(TABLE_I, ch)
    comp = SimulationModel(TABLE_I, ch, compensation=CompensationPolicy.from_db(-7, 5))
    # the extra attenuation lowers every observed yield
    assert comp.stats(P_10_60).S["zz"] < base.stats(P_10_60).S["zz"]
    assert len(comp.pairs) == len(base.pairs) == 9


def test_independent_constraints_cost_rate(model_10_60):
    indep = model_10_60.with_fluctuation(FluctuationConfig(joint=False))
    assert indep.rate(P_10_60) <= model_10_60.rate(P_10_60)


@pytest.mark.slow
def test_optimize_short_link():
    m = stable_model(10, 60)
    cfg = OptimizerConfig(multistart=2, prescan=2000, max_iter=60, seed=3)
    opt = optimize_model(m, DEFAULT_START, cfg, ladder_steps=2, rescue_samples=2000)
    assert opt.value >= m.rate(DEFAULT_START)
    assert opt.value == pytest.approx(opt.report.R_per_pair, rel=1e-9)
    assert len(opt.ladder) == 3
    assert opt.best.is_feasible()
