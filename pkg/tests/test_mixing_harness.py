import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mixforge.coupling_engine import ControlParams, CouplingEngine, FlowModel, build_kantorovich_f
from mixforge.haar_noise import model_noise_spec, rng_stream
from mixforge.mixing_harness import (
    MIXING_COLUMNS, CalibratedEngine, MixingConfig, burn_in_steps, estimate_stationary, fit_decay_rate,
    lip_dual_estimate, observable_names, observables, run_coupled_ensemble, write_mixing_report,
)
from mixforge.spectral_models import FlowConfig


def test_decay_fit_exact_geometric():
    fit = fit_decay_rate(0.5 ** np.arange(30))
    assert abs(fit.kappa - 0.5) <= 1e-12
    assert not fit.inconclusive


def test_decay_fit_constant_flagged():
    fit = fit_decay_rate(np.ones(30))
    assert fit.kappa == pytest.approx(1.0, abs=1e-12)
    assert fit.non_mixing and fit.inconclusive


@pytest.mark.parametrize("seed", range(5))
def test_decay_fit_noisy(seed):
    rng = np.random.default_rng(seed)
    k = np.arange(40)
    y = 0.7**k * (1 + rng.uniform(-0.05, 0.05, k.size))
    fit = fit_decay_rate(y)
    assert 0.68 <= fit.kappa <= 0.72
    assert fit.band[0] <= fit.kappa <= fit.band[1] < 1


def test_decay_fit_trajectories_and_zeros():
    rng = np.random.default_rng(0)
    traj = 0.6 ** np.arange(20) * rng.uniform(0.5, 1.5, (50, 1))
    fit = fit_decay_rate(traj)
    assert fit.kappa == pytest.approx(0.6, rel=1e-10)
    y = np.r_[0.5 ** np.arange(12), np.zeros(8)]
    fit = fit_decay_rate(y)
    assert fit.floored and fit.kappa == pytest.approx(0.5, rel=1e-10)
    with pytest.raises(ValueError):
        fit_decay_rate(np.ones(5))


def test_burn_in_steps():
    assert burn_in_steps(0.0) == 0
    assert burn_in_steps(np.exp(-1.0)) == 3
    assert burn_in_steps(1.0) >= 10**6


def test_lip_dual_identical_is_zero():
    A = np.random.default_rng(1).standard_normal((30, 5))
    assert lip_dual_estimate(A, A.copy()) == 0.0


def test_lip_dual_diracs():
    a = np.zeros((1, 4))
    b = np.zeros((1, 4))
    b[0, 0] = 0.5
    val = lip_dual_estimate(a, b)
    assert 0 < val <= 0.5
    e = np.zeros((1, 4))
    e[0, 0] = 1.0
    assert lip_dual_estimate(a, b, directions=e) == pytest.approx(0.5)


@given(st.integers(0, 2**31 - 1), st.floats(0.01, 3.0))
@settings(max_examples=30, deadline=None)
def test_lip_dual_bounded_by_transport(seed, scale):
    # any coupling of the two ensembles bounds the dual distance
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((20, 3))
    B = A + scale * rng.standard_normal((20, 3))
    W1 = np.mean(np.linalg.norm(A - B, axis=1))
    assert lip_dual_estimate(A, B, rng=rng) <= W1 + 1e-12


def test_bootstrap_bandwidth_quadruple():
    # band width shrinks like n^{-1/2}: four times the trajectories halves it
    rng = np.random.default_rng(3)
    k = np.arange(20)

    def width(n):
        noise = rng.lognormal(0.0, 0.3, (n, k.size))
        return np.diff(fit_decay_rate(0.6**k * noise, n_boot=400).band)[0]

    w1 = np.mean([width(64) for _ in range(6)])
    w4 = np.mean([width(256) for _ in range(6)])
    assert abs(w4 / w1 - 0.5) <= 0.3 * 0.5


def test_mixing_config_validation():
    with pytest.raises(ValueError):
        MixingConfig(n_pairs=0)
    with pytest.raises(ValueError):
        MixingConfig(distance_schedule=(("radius", 1.0),))
    assert MixingConfig(flow=FlowConfig(model="cgl")).epsilon == 0.55


@pytest.fixture(scope="module")
def small_engine():
    m = FlowModel(FlowConfig(), model_noise_spec("nse"))
    eng = CouplingEngine(m, ControlParams(1e-3, 8), delta=0.05, C_eps=1.0, d0=0.02, C1=1.0)
    kd = build_kantorovich_f(np.exp(-0.5), 1.5, 6.0, 0.02, 0.05)
    return CalibratedEngine(eng, kd, None)


def test_small_ensemble_report(small_engine, tmp_path):
    cfg = MixingConfig(n_pairs=6, steps=8, n_boot=20)
    log = []
    rep = run_coupled_ensemble(cfg, small_engine, step_log=log)
    assert rep.fK.shape == (6, 9)
    assert np.all(rep.lip_lower <= rep.lip_upper)
    assert len(log) == 8 and all(len(r) == 8 for r in log)
    rows = list(rep.rows())
    assert len(rows) == 9 and all(len(r) == len(MIXING_COLUMNS) for r in rows)
    write_mixing_report(rep, tmp_path)
    head = (tmp_path / "mixing.csv").read_text().splitlines()[0]
    assert head == ",".join(MIXING_COLUMNS)
    rep2 = run_coupled_ensemble(cfg, small_engine)
    assert rep.fK.tobytes() == rep2.fK.tobytes()


def test_identical_pairs_stay_glued(small_engine):
    rep = run_coupled_ensemble(MixingConfig(n_pairs=4, steps=8, identical=True, n_boot=10), small_engine)
    assert np.all(rep.fK == 0) and np.all(rep.lip_lower == 0)


def test_observables_shapes():
    m = FlowModel(FlowConfig(), model_noise_spec("nse"))
    X = m.chain_states(rng_stream(0), 3, steps=2)
    obs = observables(m, X)
    assert obs.shape == (3, len(observable_names()))
    assert np.all(obs >= 0)


def test_stationary_zero_noise_vanishes():
    est = estimate_stationary(FlowConfig(), R_star=4.0, window=3, n_traj=4, zero_noise=True)
    assert np.max(np.abs(est.means)) < 1e-10


def test_stationary_radii_agree():
    est = estimate_stationary(FlowConfig(), R_star=4.0, window=10, n_traj=32, seed=1)
    assert est.all_agree
    rows = list(est.rows())
    assert len(rows) == 2 * len(est.names)
