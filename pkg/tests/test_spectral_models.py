import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mixforge.fields import SCALAR, VELOCITY, SpectralField, sobolev_norm, wavenumbers
from mixforge.haar_noise import model_noise_spec, rng_stream, sample_noise_path
from mixforge.spectral_models import (
    BlowUpError, FlowConfig, dissipativity_check, flow_map, hamiltonian_monitor, leray_project,
    nonlinearity, sup_modulus,
)


def random_field(kind, N, seed, amp=1.0, decay=4.0):
    rng = np.random.default_rng(seed)
    k1, k2 = wavenumbers(N)
    shape = (2, N, N) if kind == VELOCITY else (N, N)
    z = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) * np.exp(-(k1**2 + k2**2) / decay)
    u = SpectralField.zeros(kind, N)
    if kind == VELOCITY:
        phys = np.fft.ifft2(z, axes=(-2, -1)).real
        u = SpectralField.from_physical(kind, phys)
        u = leray_project(u)
    else:
        u = u.with_coeffs(z * (k1**2 + k2**2 <= u.dealias_radius**2))
    return u * (amp / sobolev_norm(u, 1))


def shear(N, k=1, amp=1.0):
    c = np.zeros((2, N, N), complex)
    c[0, 0, k % N] = amp / 2j
    c[0, 0, -k % N] = -amp / 2j
    return SpectralField.zeros(VELOCITY, N).with_coeffs(c)


def test_config_validation():
    with pytest.raises(ValueError, match="positive"):
        FlowConfig(viscosity=-1)
    with pytest.raises(ValueError):
        FlowConfig(substeps=3)
    with pytest.raises(ValueError):
        FlowConfig(model="cgl", gamma=0.0)
    with pytest.raises(ValueError):
        FlowConfig(grid_size=9)


@pytest.mark.parametrize("k", [1, 2, 3])
def test_shear_decays_exactly(k):
    cfg = FlowConfig()
    u0 = shear(32, k)
    assert sobolev_norm(nonlinearity(u0, cfg), 0) < 1e-14
    u1 = flow_map(u0, None, cfg)
    ratio = sobolev_norm(u1, 0) / sobolev_norm(u0, 0)
    assert abs(ratio / math.exp(-cfg.viscosity * k * k) - 1) <= 1e-8


def test_cgl_constant_mode_modulus():
    cfg = FlowConfig(model="cgl", substeps=64)
    c = np.zeros((32, 32), complex)
    c[0, 0] = 0.5
    u1 = flow_map(SpectralField.zeros(SCALAR, 32).with_coeffs(c), None, cfg)
    assert abs(abs(u1.coeffs[0, 0]) / 0.5 / math.exp(-cfg.gamma) - 1) <= 1e-8


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=20, deadline=None)
def test_leray_projection_idempotent(seed):
    u = random_field(VELOCITY, 16, seed)
    rng = np.random.default_rng(seed)
    v = u.with_coeffs(u.coeffs + 0.3 * rng.standard_normal(u.coeffs.shape))
    p = leray_project(v)
    assert p.divergence_residual() < 1e-13
    assert np.max(np.abs(leray_project(p).coeffs - p.coeffs)) < 1e-15


def test_forced_flow_stays_divergence_free():
    cfg = FlowConfig()
    spec = model_noise_spec("nse")
    u = random_field(VELOCITY, 32, 1, amp=2.0)
    for k in range(3):
        u = flow_map(u, sample_noise_path(spec, rng_stream(0, k)), cfg)
        assert u.divergence_residual() < 1e-12


def test_step_halving_convergence():
    cfg = FlowConfig()
    spec = model_noise_spec("nse")
    u = random_field(VELOCITY, 32, 2, amp=3.0)
    path = sample_noise_path(spec, rng_stream(1))
    ref = flow_map(u, path, cfg.with_(substeps=256))
    errs = [sobolev_norm(flow_map(u, path, cfg.with_(substeps=n)) - ref, 1) for n in (2, 4, 8, 16)]
    for a, b in zip(errs, errs[1:]):
        assert a / b >= 1.8


def test_linear_flow_is_diagonal_decay():
    cfg = FlowConfig(linear=True, viscosity=0.3, grid_size=16)
    u0 = random_field(VELOCITY, 16, 3)
    u1 = flow_map(u0, None, cfg)
    k1, k2 = wavenumbers(16)
    assert np.max(np.abs(u1.coeffs - u0.coeffs * np.exp(-0.3 * (k1**2 + k2**2)))) < 1e-14


def test_flow_is_deterministic():
    cfg = FlowConfig(model="cgl")
    spec = model_noise_spec("cgl")
    u = random_field(SCALAR, 32, 4)
    path = sample_noise_path(spec, rng_stream(9))
    assert flow_map(u, path, cfg).coeffs.tobytes() == flow_map(u, path, cfg).coeffs.tobytes()


def test_blowup_guard_reports_substep():
    cfg = FlowConfig(blowup_factor=1e-6)
    spec = model_noise_spec("nse")
    with pytest.raises(BlowUpError) as exc:
        flow_map(random_field(VELOCITY, 32, 5), sample_noise_path(spec, rng_stream(0)), cfg)
    assert exc.value.substep >= 0


def test_dissipativity_samples():
    cfg = FlowConfig()
    spec = model_noise_spec("nse")
    samples = [(random_field(VELOCITY, 32, s, amp=1 + s), sample_noise_path(spec, rng_stream(s))) for s in range(4)]
    assert dissipativity_check(samples, cfg)["violations"] == 0
    cg = FlowConfig(model="cgl")
    out = dissipativity_check([(random_field(SCALAR, 32, s), None) for s in range(3)], cg)
    assert out["violations"] == 0


def test_cgl_diagnostics_positive():
    cfg = FlowConfig(model="cgl")
    u = random_field(SCALAR, 32, 6)
    assert hamiltonian_monitor(u, cfg) > 0
    assert sup_modulus(u) > 0
    with pytest.raises(ValueError):
        hamiltonian_monitor(shear(32), FlowConfig())
