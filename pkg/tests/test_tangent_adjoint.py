import numpy as np
import pytest

from mixforge.coupling_engine import FlowModel
from mixforge.fields import l2_pairing
from mixforge.haar_noise import model_noise_spec, rng_stream, sample_noise_path
from mixforge.spectral_models import FlowConfig
from mixforge.tangent_adjoint import (
    adjoint_flow, assemble_A, base_from_fields, covector_pullback, directional_tangent, fd_check,
    linearize, record_base, state_coords, tangent_flow,
)

EPS = [1e-2, 5e-3, 2e-3, 1e-3, 5e-4, 2e-4, 1e-4]


@pytest.fixture(scope="module", params=["nse", "cgl"])
def setup(request):
    cfg = FlowConfig(model=request.param)
    spec = model_noise_spec(request.param)
    m = FlowModel(cfg, spec)
    rng = rng_stream(11, 0 if request.param == "nse" else 1)
    u = m.field(m.chain_states(rng, 1)[0])
    path = sample_noise_path(spec, rng)
    return cfg, spec, m, u, path, rng


def test_fd_remainder_is_second_order(setup):
    cfg, spec, m, u, path, rng = setup
    h = m.field(m.random_directions(rng, 1)[0])
    dxi = rng.standard_normal(spec.dim)
    for wrt, d in (("u", h), ("eta", dxi / np.linalg.norm(dxi))):
        ratios = np.array([r[2] for r in fd_check(u, path, cfg, d, EPS, wrt)])
        assert ratios.max() / ratios.min() - 1 < 0.25


def test_adjoint_pairing(setup):
    cfg, spec, m, u, path, rng = setup
    base = base_from_fields(u, path, cfg)
    h = m.field(m.random_directions(rng, 1)[0])
    w1 = m.field(m.random_directions(rng, 1)[0])
    adj = adjoint_flow(u, path, w1, cfg, base)
    lhs = l2_pairing(tangent_flow(u, path, h, None, cfg, base), w1)
    assert abs(lhs - l2_pairing(h, adj.at(0.0))) <= 1e-8 * abs(lhs)
    dxi = rng.standard_normal(spec.dim)
    lhs = l2_pairing(tangent_flow(u, path, None, dxi, cfg, base), w1)
    assert abs(lhs - adj.noise_gradient @ dxi) <= 1e-8 * abs(lhs)


def test_pairing_constant_along_substeps(setup):
    cfg, spec, m, u, path, rng = setup
    base = base_from_fields(u, path, cfg)
    h = m.field(m.random_directions(rng, 1)[0])
    w1 = m.field(m.random_directions(rng, 1)[0])
    _, vs = tangent_flow(u, path, h, None, cfg, base, keep=True)
    adj = adjoint_flow(u, path, w1, cfg, base)
    vals = [l2_pairing(v, w) for v, w in zip(vs, adj.fields)]
    assert np.ptp(vals) <= 1e-9 * abs(vals[-1])


def test_matrix_matches_operator(setup):
    cfg, spec, m, u, path, rng = setup
    base = base_from_fields(u, path, cfg)
    A = assemble_A(u, path, cfg, base=base)
    xi = rng.standard_normal(spec.dim)
    v = A.from_field(tangent_flow(u, path, None, xi, cfg, base))
    assert np.max(np.abs(A.apply(xi) - v)) <= 1e-9 * np.max(np.abs(v))


def test_linear_in_noise_direction(setup):
    cfg, spec, m, u, path, rng = setup
    base = base_from_fields(u, path, cfg)
    a, b = rng.standard_normal((2, spec.dim))
    va = tangent_flow(u, path, None, a, cfg, base).coeffs
    vb = tangent_flow(u, path, None, b, cfg, base).coeffs
    vab = tangent_flow(u, path, None, 2 * a - b, cfg, base).coeffs
    assert np.max(np.abs(vab - (2 * va - vb))) <= 1e-12 * np.max(np.abs(vab))


def test_adjoint_matrix_transpose(setup):
    cfg, spec, m, u, path, rng = setup
    A = assemble_A(u, path, cfg)
    xi = rng.standard_normal(spec.dim)
    w = rng.standard_normal(A.gram_H.size)
    assert abs(A.inner_H(A.apply(xi), w) - A.inner_E(xi, A.adjoint(w))) < 1e-10


def test_truncation_and_csv(setup):
    cfg, spec, m, u, path, rng = setup
    A = assemble_A(u, path, cfg, noise_truncation=4)
    assert A.shape[1] == 4
    rows = A.csv_rows()
    assert all(len(r) == 3 for r in rows)
    with pytest.raises(ValueError):
        assemble_A(u, path, cfg, noise_truncation=spec.dim + 1)
    with pytest.raises(ValueError):
        fd_check(u, path, cfg, None, EPS, "w")


def test_dual_of_represents_coordinates(setup):
    cfg, spec, m, u, path, rng = setup
    C = state_coords(cfg, m.basis)
    g = rng.standard_normal(C.dim)
    X = m.random_directions(rng, 3)
    lhs = C.solver.pairing(C.dual_of(g), X)
    assert np.allclose(lhs, C.to_vec(X) @ g, rtol=1e-12, atol=0)


def test_batched_pullback_and_directional_tangent(setup):
    cfg, spec, m, u, path, rng = setup
    X = m.chain_states(rng, 2)
    base = record_base(X, m.sample_noise(rng, 2), cfg, spec, m.basis)
    D_H = state_coords(cfg, m.basis).dim
    h = 0.01 * rng.standard_normal((2, D_H))
    A, D = linearize(base, h_vecs=h[:, None, :])
    g = rng.standard_normal(D_H)
    ref = np.einsum("nhk,h->nk", A[..., :6], g)
    assert np.allclose(covector_pullback(base, g, 6), ref, rtol=0, atol=1e-12 * np.abs(ref).max())
    xi = rng.standard_normal((2, spec.dim))
    ref = D[..., 0] + np.einsum("nhk,nk->nh", A, xi)
    assert np.allclose(directional_tangent(base, h, xi), ref, rtol=0, atol=1e-12 * np.abs(ref).max())
