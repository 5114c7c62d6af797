import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mixforge.coupling_engine import FlowModel, _test_fields
from mixforge.haar_noise import model_noise_spec, rng_stream
from mixforge.right_inverse import (
    CalibrationError, RightInverse, calibrate, lattice_monotonicity, m_lattice, operator_norm_A,
)
from mixforge.spectral_models import FlowConfig
from mixforge.tangent_adjoint import TangentOperator


def diag_op(sig):
    n = len(sig)
    return TangentOperator(np.diag(np.asarray(sig, float)), np.ones(n), np.ones(n))


@given(st.floats(1e-6, 10.0), st.integers(0, 2**31 - 1))
@settings(max_examples=30, deadline=None)
def test_identity_closed_form(r, seed):
    f = np.random.default_rng(seed).standard_normal((3, 6))
    R = RightInverse(diag_op(np.ones(6)), r, 6)
    assert np.allclose(R.defect(f), r / (1 + r) * np.linalg.norm(f, axis=1), rtol=0, atol=1e-12)


@given(st.floats(1e-4, 10.0), st.integers(0, 2**31 - 1))
@settings(max_examples=30, deadline=None)
def test_diagonal_closed_form(r, seed):
    rng = np.random.default_rng(seed)
    sig = rng.uniform(0.05, 3.0, 7)
    f = rng.standard_normal(7)
    R = RightInverse(diag_op(sig), r, 7)
    res = R.op.apply(R.apply(f)) - f
    assert np.max(np.abs(res + r / (sig**2 + r) * f)) <= 1e-12


def test_projection_zeroes_tail():
    R = RightInverse(diag_op(np.linspace(1, 2, 6)), 0.1, 3)
    z = R.apply(np.ones(6))
    assert np.all(z[3:] == 0) and np.all(z[:3] != 0)


def test_parameter_guards():
    op = diag_op(np.ones(4))
    with pytest.raises(ValueError):
        RightInverse(op, 0.0, 2)
    with pytest.raises(ValueError):
        RightInverse(op, 0.1, 5)
    with pytest.raises(ValueError):
        RightInverse(op, 0.1, 2, variant="other")


def test_operator_norm_estimate():
    sig = np.array([0.5, 1.0, 2.0])
    R = RightInverse(diag_op(sig), 0.25, 3)
    expect = np.max(sig / (sig**2 + 0.25))
    assert abs(R.operator_norm() - expect) < 1e-8
    assert abs(operator_norm_A(diag_op(sig)) - 2.0) < 1e-12


def test_m_lattice_contains_dim():
    L = m_lattice(16)
    assert L[-1] == 16 and L == sorted(L)


@pytest.fixture(scope="module")
def nse_test_set():
    m = FlowModel(FlowConfig(), model_noise_spec("nse"))
    rng = rng_stream(21)
    X = m.chain_states(rng, 1)[0]
    return _test_fields(m, rng, X, m.sample_noise(rng), 20)


def test_lattice_monotone_on_assembled_operator(nse_test_set):
    op, F, vn = nse_test_set
    cal = calibrate(op, F, vn, 0.5, norm_estimates=False)
    assert lattice_monotonicity(cal.table)["monotone"]
    assert cal.feasible
    assert cal.lookup(cal.chosen.r, cal.chosen.M) <= 0.5


def test_calibration_infeasible(nse_test_set):
    op, F, vn = nse_test_set
    cal = calibrate(op, F, vn, 1e-6, norm_estimates=False)
    assert not cal.feasible and cal.chosen is None
    with pytest.raises(CalibrationError):
        calibrate(op, F, vn, 1e-6, norm_estimates=False, strict=True)
