import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mixforge.coupling_engine import (
    ControlParams, CouplingEngine, CouplingError, FlowModel, build_kantorovich_f, coupled_step, f_K_eval,
    fit_slope_through_origin, maximal_coupling_sample, phi_control, psi_squeeze, pushforward_density,
    squeeze_batch, tv_envelope_slope,
)
from mixforge.haar_noise import TentDensity, model_noise_spec, rng_stream
from mixforge.spectral_models import FlowConfig


@pytest.fixture(scope="module")
def nse():
    m = FlowModel(FlowConfig(), model_noise_spec("nse"))
    eng = CouplingEngine(m, ControlParams(1e-3, 8), delta=0.05, C_eps=1.0, d0=0.02)
    rng = rng_stream(31)
    X = m.chain_states(rng, 4)
    return eng, X, rng


def pair(eng, X, d, seed):
    rng = rng_stream(seed)
    return X, X + eng.model.random_directions(rng, 1)[0] * d


# ------------------------------------------------------------ maximal coupling

def test_maximal_coupling_equal_laws_always_glue():
    d = TentDensity(0.5)
    rng = rng_stream(0)
    for _ in range(200):
        out = maximal_coupling_sample(d.pdf, d.pdf, d.sample, d.sample, rng)
        assert out.equal and out.x == out.y


def test_maximal_coupling_disjoint_never_glue():
    d = TentDensity(0.0)
    q = lambda y: d.pdf(y - 3.0)
    rng = rng_stream(1)
    for _ in range(200):
        out = maximal_coupling_sample(d.pdf, q, d.sample, lambda g: d.sample(g) + 3.0, rng)
        assert not out.equal and abs(out.y - 3.0) <= 1.0


def test_maximal_coupling_rate_matches_tv():
    # uniform on [-1, 1] against its shift by 0.3: TV = 0.15
    d = TentDensity(0.0)
    rng = rng_stream(2)
    n = 20_000
    neq = sum(not maximal_coupling_sample(d.pdf, lambda y: d.pdf(y - 0.3), d.sample,
                                          lambda g: d.sample(g) + 0.3, rng).equal for _ in range(n))
    assert abs(neq / n - 0.15) < 0.01


def test_maximal_coupling_cap():
    d = TentDensity(0.0)
    with pytest.raises(CouplingError):
        maximal_coupling_sample(lambda y: 1.0, lambda y: 1.0 if y > 0.5 else 0.0, d.sample,
                                lambda g: 0.75, rng_stream(3), x=-0.5, max_iter=5)


# ------------------------------------------------------------ control map

def test_phi_linear_in_displacement(nse):
    eng, X, rng = nse
    eta = eng.model.sample_noise(rng_stream(4))
    ctx = eng.context(X[0], eta)
    h = eng.model.random_directions(rng_stream(5), 1)[0] * 0.01
    a = phi_control(ctx, X[0] + h)
    b = phi_control(ctx, X[0] + 2 * h, check_radius=False)
    assert np.max(np.abs(b - 2 * a)) <= 1e-12 * np.max(np.abs(b))
    assert np.all(a[eng.params.M:] == 0)


def test_phi_rejects_far_pairs(nse):
    eng, X, rng = nse
    ctx = eng.context(X[0], eng.model.sample_noise(rng_stream(6)))
    with pytest.raises(ValueError):
        phi_control(ctx, X[1] if eng.model.norm(X[1] - X[0]) > eng.delta else X[0] + 1.0)


def test_squeeze_zero_at_diagonal(nse):
    eng, X, rng = nse
    eta = eng.model.sample_noise(rng_stream(7))
    shifted, ratio, clamped = psi_squeeze(eng.context(X[0], eta), X[0])
    assert ratio == 0.0 and not clamped and np.array_equal(shifted, eta)


def test_squeeze_batch_matches_single(nse):
    eng, X, rng = nse
    m = eng.model
    etas = m.sample_noise(rng_stream(8), 3)
    Xp = X[:3] + m.random_directions(rng_stream(9), 3) * 0.02
    ratio, phi, _ = squeeze_batch(eng, X[:3], Xp, etas)
    for i in range(3):
        _, r, _ = psi_squeeze(eng.context(X[i], etas[i]), Xp[i])
        assert abs(r - ratio[i]) <= 1e-8 * max(r, 1e-12)
    assert np.all(ratio <= 0.5)


def test_jacobian_schemes_agree(nse):
    eng, X, rng = nse
    m = eng.model
    _, Xp = pair(eng, X[0], 0.02, 10)
    eta = m.sample_noise(rng_stream(11))
    cm = eng.control_map(X[0], Xp)
    Jd = cm.jacobian(eta, method="direct")
    scale = np.max(np.abs(Jd))
    for method in ("adjoint", "symmetric"):
        J = cm.jacobian(eta, method=method)
        assert np.max(np.abs(J - Jd)) <= 1e-4 * scale


def test_pushforward_inverse_and_density(nse):
    eng, X, rng = nse
    m = eng.model
    M = eng.params.M
    _, Xp = pair(eng, X[0], 0.01, 12)
    eta = 0.5 * m.sample_noise(rng_stream(13))
    cm = eng.control_map(X[0], Xp)
    pt = cm.point(eta)
    y = (eta + pt.phi)[:M]
    w = eta[M:]
    assert np.max(np.abs(cm.invert(y, w) - eta[:M])) < 1e-11
    expect = float(np.prod(m.density.pdf(eta[:M]))) / abs(np.linalg.det(np.eye(M) + cm.jacobian(eta, pt)))
    got = pushforward_density(eng, X[0], Xp, w, y)
    assert abs(got - expect) <= 1e-8 * expect


def test_pushforward_identity_at_diagonal(nse):
    eng, X, rng = nse
    x = np.full(eng.params.M, 0.2)
    w = np.zeros(eng.model.noise_dim - eng.params.M)
    assert pushforward_density(eng, X[0], X[0], w, x) == pytest.approx(float(np.prod(eng.model.density.pdf(x))))


# ------------------------------------------------------------ coupled step

def test_glued_pairs_stay_glued(nse):
    eng, X, rng = nse
    kd = build_kantorovich_f(0.6, 0.5, 2.0, 0.02, 0.1)
    u, up = X[0], X[0].copy()
    for k in range(3):
        out = coupled_step(eng, u, up, kd, rng_stream(14, k))
        assert out.glued_equal and np.array_equal(out.u1, out.u1p)
        u, up = out.u1, out.u1p


def test_far_branch_shares_noise(nse):
    eng, X, rng = nse
    _, Xp = pair(eng, X[0], 0.5, 15)
    out = eng.step(X[0], Xp, rng_stream(16), d0=0.02)
    assert out.branch == "far" and np.array_equal(out.eta, out.eta_p)
    assert math.isnan(out.tv_estimate)


def test_near_branch_contracts(nse):
    eng, X, rng = nse
    _, Xp = pair(eng, X[0], 0.01, 17)
    out = eng.step(X[0], Xp, rng_stream(18), d0=0.02)
    assert out.branch == "near"
    assert np.all(np.abs(out.eta_p) <= 1.0)
    row = out.csv_row(0)
    assert len(row) == 8 and row[1] == "near"


def test_step_is_deterministic(nse):
    eng, X, rng = nse
    _, Xp = pair(eng, X[0], 0.01, 19)
    a = eng.step(X[0], Xp, rng_stream(20), d0=0.02)
    b = eng.step(X[0], Xp, rng_stream(20), d0=0.02)
    assert a.u1p.tobytes() == b.u1p.tobytes() and a.eta_p.tobytes() == b.eta_p.tobytes()


def test_control_params_validation():
    with pytest.raises(ValueError):
        ControlParams(0.0, 4)
    with pytest.raises(ValueError):
        ControlParams(1e-3, 4, clamp=0.5)
    with pytest.raises(ValueError):
        ControlParams(1e-3, 4, fd_scheme="backward")


# ------------------------------------------------------------ Kantorovich density

kd_params = st.tuples(st.floats(0.05, 0.95), st.floats(0.1, 5.0), st.floats(1e-3, 0.5), st.floats(0.02, 0.9),
                      st.floats(1.01, 3.0))


def make_kd(params):
    gamma, beta, d0_frac, p, rs = params
    R0 = beta / (1 - gamma)
    return build_kantorovich_f(gamma, beta, rs * R0, d0_frac * 2 * R0, p)


@given(kd_params)
@settings(max_examples=60, deadline=None)
def test_kd_structure(params):
    kd = make_kd(params)
    assert kd.table[0] == 2.5 * kd.d0
    assert np.all(kd.relation_margins() > 0)
    assert kd.f(kd.R_star) == 3 * kd.d0
    x = np.geomspace(0.5 * kd.d0 * (1 + 1e-9), kd.R_star, 2000)
    fx = kd.f(x)
    assert np.all(fx > 2 * kd.d0) and np.all(fx <= 3 * kd.d0)
    assert np.all(np.diff(fx) >= -1e-15 * kd.d0)


@given(kd_params, st.integers(0, 2**31 - 1))
@settings(max_examples=60, deadline=None)
def test_kd_sandwich(params, seed):
    kd = make_kd(params)
    rng = np.random.default_rng(seed)
    n1 = rng.uniform(0, kd.R_star, 200)
    n2 = rng.uniform(0, kd.R_star, 200)
    lo = np.abs(n1 - n2)
    d = lo + rng.uniform(0, 1, 200) * (n1 + n2 - lo)
    fk = kd.f_K(d, n1, n2)
    assert np.all(fk >= np.minimum(d, kd.d0)) and np.all(fk <= 3 * d)


def test_kd_validation():
    with pytest.raises(ValueError):
        build_kantorovich_f(1.2, 1.0, 10.0, 0.1, 0.5)
    with pytest.raises(ValueError):
        build_kantorovich_f(0.5, 1.0, 1.5, 0.1, 0.5)
    with pytest.raises(ValueError, match="largest feasible gap"):
        build_kantorovich_f(0.5, 1.0, 3.0, 0.01, 0.5, a2=-10.0)


def test_f_K_eval_fields(nse):
    eng, X, rng = nse
    m = eng.model
    kd = build_kantorovich_f(0.6, 0.5, 2.0, 0.02, 0.1)
    u = m.field(X[0])
    assert f_K_eval(kd, u, u) == 0.0
    v = m.field(X[0] + m.random_directions(rng_stream(21), 1)[0] * 0.01)
    assert f_K_eval(kd, u, v) == pytest.approx(0.01, rel=1e-12)


def test_slope_fits():
    assert fit_slope_through_origin([1, 2], [2, 4]) == pytest.approx(2.0)
    rows = [(0.1, 0.01, 100, 0.005), (0.2, 0.03, 100, 0.0)]
    assert tv_envelope_slope(rows) == pytest.approx(0.2)
