"""Linearised and dual flows, and the noise-to-state derivative matrix A = D_η S.

The tangent and the adjoint are the exact derivative and exact transpose of the
discrete time stepper in :mod:`mixforge.spectral_models`, evaluated along a
recorded base trajectory.  Consequently the L2 pairing of a tangent solution
with an adjoint solution is constant across substeps up to rounding.

Noise directions are expressed in the coefficient coordinates ξ (Haar-major
flat order), so column ``k`` of A is the response to the forcing
``b_i c^i_j h_{jl}(t) φ_i``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fields import SpectralField
from .haar_noise import NoisePath, NoiseSpec, SpatialBasis, interval_weights
from .spectral_models import FlowConfig, Solver, model_basis, solver_for


class StateCoords:
    """Real coordinates of internal states and the diagonal H^m Gram weights.

    Navier–Stokes: for each retained k in a half plane the velocity mode is
    û_k = a_k k^⊥/|k|; coordinates are (Re a_k, Im a_k) with weight
    2(1+|k|²)^m (the conjugate mode is implied).  Ginzburg–Landau: (Re û_k,
    Im û_k) for every retained k with weight (1+|k|²)^m.
    """

    def __init__(self, solver: Solver):
        self.solver = solver
        S = solver
        m = S.cfg.m
        keep = S.mask > 0
        if S.nse:
            keep = keep & ((S.k2 > 0) | ((S.k2 == 0) & (S.k1 > 0)))
            keep[:, -1] = False
        self.rows, self.cols = np.nonzero(keep)
        ksq = S.ksq[self.rows, self.cols]
        self.kabs = np.sqrt(ksq)
        w = (1 + ksq) ** m
        if S.nse:
            w = 2 * w
        self.weights = np.concatenate([w, w])
        self.dim = self.weights.size

    def to_vec(self, X):
        z = np.asarray(X)[..., self.rows, self.cols]
        if self.solver.nse:
            z = -1j * z / self.kabs
        return np.concatenate([z.real, z.imag], axis=-1)

    def from_vec(self, v):
        v = np.asarray(v, dtype=float)
        n = self.rows.size
        z = v[..., :n] + 1j * v[..., n:]
        if self.solver.nse:
            z = 1j * self.kabs * z
        X = np.zeros(v.shape[:-1] + self.solver.field_shape, dtype=complex)
        X[..., self.rows, self.cols] = z
        if self.solver.nse:
            # k2 = 0 column: fill the conjugate partner so the half spectrum is Hermitian
            N = self.solver.N
            sel = self.cols == 0
            X[..., (-self.rows[sel]) % N, 0] = np.conj(z[..., sel])
        return X

    def norm(self, v):
        return np.sqrt(np.sum(self.weights * np.asarray(v) ** 2, axis=-1))

    def dual_of(self, g):
        """Internal dual state λ with ``solver.pairing(λ, X) == g · to_vec(X)`` for real states X."""
        g = np.asarray(g, dtype=float)
        S = self.solver
        n = self.rows.size
        z = g[..., :n] + 1j * g[..., n:]
        lam = np.zeros(g.shape[:-1] + S.field_shape, dtype=complex)
        if S.nse:
            z = 1j * z / (2 * self.kabs)
            lam[..., self.rows, self.cols] = z
            sel = self.cols == 0
            lam[..., (-self.rows[sel]) % S.N, 0] = np.conj(z[..., sel])
        else:
            lam[..., self.rows, self.cols] = z
        return lam / (2 * np.pi) ** 2


@dataclass
class BaseTrajectory:
    """A recorded solve of the forced model; tangent and adjoint replay it."""

    cfg: FlowConfig
    basis: SpatialBasis
    spec: NoiseSpec
    X0: np.ndarray
    xi: np.ndarray                    # flat noise vector(s), Haar-major
    X1: np.ndarray = field(repr=False)
    rec: list = field(repr=False)

    @property
    def solver(self) -> Solver:
        return solver_for(self.cfg, self.basis)

    @property
    def substeps(self) -> int:
        return len(self.rec)


def record_base(X0, xi, cfg: FlowConfig, spec: NoiseSpec, basis: SpatialBasis | None = None) -> BaseTrajectory:
    """Run and record the flow from internal state(s) ``X0`` under flat noise ``xi``.

    Both may carry matching leading batch axes.
    """
    basis = basis or model_basis(cfg, spec.I)
    S = solver_for(cfg, basis)
    xi = np.asarray(xi, dtype=float)
    F = S.forcing_from_weights(interval_weights(xi, spec))
    X1, rec = S.run(X0, F, record=True)
    return BaseTrajectory(cfg, basis, spec, np.asarray(X0), xi, X1, rec)


def base_from_fields(u0: SpectralField, path: NoisePath, cfg: FlowConfig, basis=None) -> BaseTrajectory:
    basis = basis or model_basis(cfg, path.spec.I)
    S = solver_for(cfg, basis)
    return record_base(S.state_from_field(u0), path.flat(), cfg, path.spec, basis)


def noise_direction_forcing(base: BaseTrajectory, dxi):
    """Internal forcing per substep for noise-coefficient directions ``dxi`` (..., dim)."""
    S = base.solver
    return S.forcing_from_weights(interval_weights(dxi, base.spec))


def unit_directions(spec: NoiseSpec, count: int | None = None) -> np.ndarray:
    n = spec.dim if count is None else count
    return np.eye(spec.dim)[:n]


def _check_schedule(base: BaseTrajectory, cfg: FlowConfig):
    if cfg != base.cfg or cfg.substeps != base.substeps:
        raise ValueError("tangent/adjoint schedule does not match the recorded base trajectory")


# ---------------------------------------------------------------- public operations

def tangent_flow(u0: SpectralField, path: NoisePath, h: SpectralField | None, xi, cfg: FlowConfig,
                 base: BaseTrajectory | None = None, keep: bool = False):
    """v(1) of the linearised flow with v(0) = h and forcing direction ``xi``.

    ``xi`` is a flat noise-coefficient vector (or ``None``); D_uS h is
    ``tangent_flow(u0, path, h, None, cfg)`` and D_ηS ξ is
    ``tangent_flow(u0, path, None, xi, cfg)``.  With ``keep`` the tangent at
    every substep boundary is returned as well.
    """
    base = base or base_from_fields(u0, path, cfg)
    _check_schedule(base, cfg)
    S = base.solver
    dX0 = np.zeros(S.field_shape, complex) if h is None else S.state_from_field(h)
    dF = None if xi is None else noise_direction_forcing(base, np.asarray(xi, dtype=float))
    out = S.tangent(base.rec, dX0, dF, keep=keep)
    if keep:
        v1, vs = out
        return S.field_from_state(v1), [S.field_from_state(v) for v in vs]
    return S.field_from_state(out)


@dataclass
class AdjointResult:
    """Dual solution at the substep times and the induced noise gradient."""

    times: np.ndarray
    fields: list
    noise_gradient: np.ndarray         # ∂/∂ξ of ⟨S(u0, ξ), w1⟩_{L2}

    def at(self, t: float) -> SpectralField:
        i = int(np.argmin(np.abs(self.times - t)))
        return self.fields[i]


def _dual_to_field(S: Solver, lam) -> SpectralField:
    """Represent an internal dual state as a field with the same L2 pairing."""
    if S.nse:
        return S.field_from_state(S.ksq * lam)
    return S.field_from_state(lam)


def _field_to_dual(S: Solver, w: SpectralField):
    X = S.state_from_field(w)
    if S.nse:
        inv = np.where(S.ksq > 0, 1.0 / np.where(S.ksq > 0, S.ksq, 1.0), 0.0)
        return X * inv
    return X


def adjoint_flow(u0: SpectralField, path: NoisePath, w1: SpectralField, cfg: FlowConfig,
                 base: BaseTrajectory | None = None) -> AdjointResult:
    """Backward dual solve with terminal value ``w1``.

    For every tangent solution v without forcing, ⟨v_t, w_t⟩_{L2} is constant
    in t (exactly, up to rounding, for the discrete scheme).
    """
    base = base or base_from_fields(u0, path, cfg)
    _check_schedule(base, cfg)
    S = base.solver
    lam1 = _field_to_dual(S, w1)
    lam0, gF, lams = S.adjoint(base.rec, lam1, keep=True)
    # chain rule through forcing = Σ_i g_i(n) φ_i with g linear in ξ
    dim = base.spec.dim
    E = noise_direction_forcing(base, np.eye(dim))             # (dim, substeps, *field)
    grad = S.pairing(E, gF[None]).sum(axis=-1)
    times = np.arange(len(lams)) / len(base.rec)
    return AdjointResult(times, [_dual_to_field(S, l) for l in lams], grad)


@dataclass
class TangentOperator:
    """Dense matrix of D_ηS on the truncated noise coordinates.

    ``matrix`` maps ξ-coordinates (length ``gram_E.size``) to state coordinates
    (length ``gram_H.size``); the H inner product is diagonal with weights
    ``gram_H`` and the noise inner product diagonal with ``gram_E``.
    """

    matrix: np.ndarray
    gram_H: np.ndarray
    gram_E: np.ndarray
    base: BaseTrajectory | None = None
    coords: StateCoords | None = None

    def __post_init__(self):
        if self.matrix.shape != (self.gram_H.size, self.gram_E.size):
            raise ValueError("matrix shape does not match the Gram tables")
        if np.any(self.gram_H <= 0) or np.any(self.gram_E <= 0):
            raise ValueError("Gram weights must be strictly positive")

    @property
    def shape(self):
        return self.matrix.shape

    def apply(self, xi):
        return self.matrix @ np.asarray(xi)

    def adjoint(self, w):
        """A* w, the transpose weighted by the two Gram tables."""
        return (self.matrix.T @ (self.gram_H * np.asarray(w))) / self.gram_E

    def inner_H(self, a, b):
        return float(np.sum(self.gram_H * a * b))

    def inner_E(self, a, b):
        return float(np.sum(self.gram_E * a * b))

    def to_field(self, v) -> SpectralField:
        S = self.coords.solver
        return S.field_from_state(self.coords.from_vec(v))

    def from_field(self, u: SpectralField):
        S = self.coords.solver
        return self.coords.to_vec(S.state_from_field(u))

    def csv_rows(self):
        A = self.matrix
        r, c = np.nonzero(A)
        return [(int(i), int(j), float(A[i, j])) for i, j in zip(r, c)]


def state_coords(cfg: FlowConfig, basis: SpatialBasis) -> StateCoords:
    S = solver_for(cfg, basis)
    key = "_coords"
    if not hasattr(S, key):
        setattr(S, key, StateCoords(S))
    return getattr(S, key)


def linearize(base: BaseTrajectory, truncation: int | None = None, h_vecs=None, columns=None):
    """Batched columns of A and, optionally, D_uS applied to coordinate vectors.

    ``columns`` selects noise directions explicitly (default: the first
    ``truncation``).  Returns ``(A, D)`` with ``A`` of shape
    base_batch + (D_H, n_cols) and ``D`` of shape base_batch + (D_H, n_h)
    (or ``None``).
    """
    S = base.solver
    C = state_coords(base.cfg, base.basis)
    if columns is None:
        trunc = base.spec.dim if truncation is None else truncation
        dirs = unit_directions(base.spec, trunc)
    else:
        dirs = np.eye(base.spec.dim)[list(columns)]
    trunc = dirs.shape[0]
    nb = base.X0.ndim - 2
    lead = base.X0.shape[:nb]
    dF = noise_direction_forcing(base, dirs)                                  # (trunc, sub, *f)
    n_h = 0 if h_vecs is None else np.asarray(h_vecs).shape[-2]
    if n_h:
        H0 = C.from_vec(h_vecs)                                                # lead + (n_h, *f)
        zF = np.zeros((n_h,) + dF.shape[1:], dtype=dF.dtype)
        dF = np.concatenate([dF, zF], axis=0)
        dX0 = np.concatenate([np.zeros(lead + (trunc,) + S.field_shape, complex),
                              np.broadcast_to(H0, lead + (n_h,) + S.field_shape)], axis=-3)
    else:
        dX0 = np.zeros(lead + (trunc,) + S.field_shape, complex)
    out = S.tangent(base.rec, dX0, dF)
    V = np.swapaxes(C.to_vec(out), -1, -2)                                    # lead + (D_H, cols)
    A = V[..., :trunc]
    D = V[..., trunc:] if n_h else None
    return A, D


def directional_tangent(base: BaseTrajectory, h_vecs, dxi):
    """D_uS h + D_ηS ξ' in coordinates, one combined direction per base point.

    ``h_vecs`` (coordinate vectors) and ``dxi`` (noise directions) broadcast
    against the base batch axes.
    """
    S = base.solver
    C = state_coords(base.cfg, base.basis)
    dF = noise_direction_forcing(base, dxi)
    out = S.tangent(base.rec, C.from_vec(h_vecs), dF)
    return C.to_vec(out)


def covector_pullback(base: BaseTrajectory, g, count: int):
    """``g · D_ηS e_k`` for the first ``count`` noise directions, by one adjoint solve.

    ``g`` is a coordinate covector (or one per base point); the result has
    shape base_batch + (count,).
    """
    S = base.solver
    C = state_coords(base.cfg, base.basis)
    lam1 = np.broadcast_to(C.dual_of(g), base.X0.shape)
    _, gF = S.adjoint(base.rec, lam1)
    E = noise_direction_forcing(base, np.eye(base.spec.dim)[:count])           # (count, sub, *f)
    lead = base.X0.ndim - 2
    gF = gF.reshape(gF.shape[:lead] + (1,) + gF.shape[lead:])
    return S.pairing(E, gF).sum(axis=-1)


def assemble_A(u0: SpectralField, path: NoisePath, cfg: FlowConfig, noise_truncation: int | None = None,
               base: BaseTrajectory | None = None) -> TangentOperator:
    """Column k is the tangent response to the k-th amplitude-scaled noise direction."""
    trunc = path.spec.dim if noise_truncation is None else int(noise_truncation)
    if not 1 <= trunc <= path.spec.dim:
        raise ValueError(f"noise truncation {trunc} outside [1, {path.spec.dim}]")
    base = base or base_from_fields(u0, path, cfg)
    _check_schedule(base, cfg)
    A, _ = linearize(base, trunc)
    C = state_coords(cfg, base.basis)
    return TangentOperator(A, C.weights.copy(), np.ones(trunc), base, C)


def fd_check(u0: SpectralField, path: NoisePath, cfg: FlowConfig, direction, eps_list, wrt: str = "u"):
    """Second-order Taylor remainder ‖S(x+εd) − S(x) − ε DS d‖_H / ε² for each ε.

    ``wrt="u"`` perturbs the initial state (``direction`` a field), ``wrt="eta"``
    the noise coefficients (``direction`` a flat vector; the perturbed
    coefficients are not required to stay in [-1, 1]).
    """
    basis = model_basis(cfg, path.spec.I)
    S = solver_for(cfg, basis)
    base = base_from_fields(u0, path, cfg, basis)
    X0, xi0 = base.X0, base.xi
    F0 = noise_direction_forcing(base, xi0)
    if wrt == "u":
        d = S.state_from_field(direction)
        lin = S.tangent(base.rec, d)
    elif wrt == "eta":
        dv = np.asarray(direction, dtype=float)
        dF = noise_direction_forcing(base, dv)
        lin = S.tangent(base.rec, np.zeros(S.field_shape, complex), dF)
    else:
        raise ValueError("wrt must be 'u' or 'eta'")
    rows = []
    for eps in eps_list:
        if wrt == "u":
            Xe = S.run(X0 + eps * d, F0)
        else:
            Xe = S.run(X0, F0 + eps * dF)
        rem = float(S.norm(Xe - base.X1 - eps * lin))
        rows.append((float(eps), rem, rem / eps**2))
    return rows


__all__ = [
    "StateCoords", "BaseTrajectory", "record_base", "base_from_fields", "tangent_flow",
    "adjoint_flow", "AdjointResult", "TangentOperator", "assemble_A", "linearize",
    "fd_check", "state_coords", "noise_direction_forcing",
]
