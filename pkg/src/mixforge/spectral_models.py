"""Pseudospectral time-1 flow maps for 2D Navier–Stokes and complex Ginzburg–Landau.

Navier–Stokes is advanced in vorticity form on a real-FFT half spectrum, which
keeps every velocity exactly divergence free; the public API exchanges velocity
fields.  Ginzburg–Landau uses the full complex spectrum.

Time stepping is exponential Runge–Kutta of order four (Cox–Matthews ETDRK4):
the linear part, including the damping γ of the Ginzburg–Landau equation, is
integrated exactly, the nonlinearity and the forcing explicitly.  Substeps are
aligned with the dyadic grid of the Haar noise so the forcing is constant on
every substep.  The stage values are recorded on request so that tangent and
adjoint solves replay the identical discrete trajectory.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, replace

import numpy as np
import scipy.fft as sfft

from .fields import (
    SCALAR, VELOCITY, SpectralField, default_dealias_radius, sobolev_norm,
    wavenumbers,
)
from .haar_noise import NoisePath, SpatialBasis, spatial_basis


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("MIXFORGE_THREADS", "1")))
    except ValueError:
        return 1


class BlowUpError(RuntimeError):
    """Raised when the state norm leaves the configured guard."""

    def __init__(self, substep: int, norm: float, guard: float):
        super().__init__(f"norm {norm:.3e} exceeded guard {guard:.3e} at substep {substep}")
        self.substep = substep
        self.norm = norm
        self.guard = guard


@dataclass(frozen=True)
class FlowConfig:
    """Model and discretisation parameters.

    ``viscosity`` is ν for Navier–Stokes; ``nu1``, ``nu2``, ``gamma`` and
    ``power`` (r) describe ∂u − (ν1 + iν2)Δu + γu + i|u|^{2r}u = η.
    ``linear`` disables the nonlinearity (a test hook).
    """

    model: str = "nse"
    viscosity: float = 0.5
    nu1: float = 1.0
    nu2: float = 0.0
    gamma: float = 0.5
    power: int = 1
    grid_size: int = 32
    substeps: int = 8
    sobolev_index: int | None = None
    dealias_radius: int | None = None
    blowup_factor: float = 1e3
    linear: bool = False

    def __post_init__(self):
        if self.model not in ("nse", "cgl"):
            raise ValueError("model must be 'nse' or 'cgl'")
        if self.model == "nse" and not self.viscosity > 0:
            raise ValueError("viscosity must be positive")
        if self.model == "cgl":
            if not self.nu1 > 0 or self.nu2 < 0 or not self.gamma > 0 or self.power < 1:
                raise ValueError("cgl requires nu1 > 0, nu2 >= 0, gamma > 0, power >= 1")
        s = self.substeps
        if s < 1 or s & (s - 1):
            raise ValueError("substeps must be a power of two")
        if self.grid_size < 8 or self.grid_size % 2:
            raise ValueError("grid_size must be even and >= 8")
        if self.sobolev_index is not None and self.sobolev_index < 1:
            raise ValueError("sobolev_index must be >= 1")

    @property
    def kind(self) -> str:
        return VELOCITY if self.model == "nse" else SCALAR

    @property
    def m(self) -> int:
        if self.sobolev_index is not None:
            return self.sobolev_index
        return 1 if self.model == "nse" else 2

    @property
    def R(self) -> int:
        return default_dealias_radius(self.grid_size) if self.dealias_radius is None else self.dealias_radius

    def with_(self, **kw) -> "FlowConfig":
        return replace(self, **kw)


def _phi_functions(z):
    """ETDRK4 coefficient functions by contour averaging (Kassam–Trefethen)."""
    M = 64
    r = np.exp(2j * np.pi * (np.arange(M) + 0.5) / M)
    LR = z[..., None] + r
    eLR = np.exp(LR)
    Q = np.mean((np.exp(LR / 2) - 1) / LR, axis=-1)
    f1 = np.mean((-4 - LR + eLR * (4 - 3 * LR + LR**2)) / LR**3, axis=-1)
    f2 = np.mean((2 + LR + eLR * (-2 + LR)) / LR**3, axis=-1)
    f3 = np.mean((-4 - 3 * LR - LR**2 + eLR * (4 - LR)) / LR**3, axis=-1)
    return Q, f1, f2, f3


class Solver:
    """Discrete flow, its tangent and its adjoint for one :class:`FlowConfig`.

    States are internal spectral arrays: vorticity on the rfft half spectrum
    (Navier–Stokes) or the full spectrum (Ginzburg–Landau), always ``fft/N²``
    scaled.  Leading axes are batch axes.
    """

    def __init__(self, cfg: FlowConfig, basis: SpatialBasis | None = None):
        self.cfg = cfg
        N = self.N = cfg.grid_size
        self.nse = cfg.model == "nse"
        k1, k2 = wavenumbers(N)
        if self.nse:
            k1, k2 = k1[:, : N // 2 + 1], k2[:, : N // 2 + 1]
            k2 = np.abs(k2)
        self.k1, self.k2 = k1.astype(float), k2.astype(float)
        self.ksq = self.k1**2 + self.k2**2
        self.mask = (self.ksq <= cfg.R**2)
        if self.nse:
            self.mask = self.mask & (self.ksq > 0)
            inv = np.where(self.ksq > 0, 1.0 / np.where(self.ksq > 0, self.ksq, 1.0), 0.0)
            self.Kx = 1j * self.k2 * inv        # velocity from vorticity
            self.Ky = -1j * self.k1 * inv
            # multipliers giving (u₁, u₂, ∂₁ω, ∂₂ω) from ω
            self.KS = np.stack([self.Kx, self.Ky, 1j * self.k1, 1j * self.k2])
            L = -cfg.viscosity * self.ksq
            # rfft half-spectrum weights for inner products
            w = np.full(self.ksq.shape, 2.0)
            w[:, 0] = 1.0
            w[:, -1] = 1.0
            self.half_weight = w
        else:
            L = -(cfg.nu1 + 1j * cfg.nu2) * self.ksq - cfg.gamma
        self.L = L
        self.field_shape = self.ksq.shape
        self.mask = self.mask.astype(float)
        self.state_weight = self._state_weights()
        self.set_substeps(cfg.substeps)
        self.basis = basis
        self.forcing_basis = None if basis is None else self.state_from_coeffs(basis.coeffs)

    # ---------------------------------------------------------------- setup
    def set_substeps(self, n: int):
        self.substeps = n
        dt = 1.0 / n
        z = self.L * dt
        Q, f1, f2, f3 = _phi_functions(z.astype(complex))
        if self.nse:
            Q, f1, f2, f3 = Q.real, f1.real, f2.real, f3.real
            self.E = np.exp(z)
            self.E2 = np.exp(z / 2)
        else:
            self.E = np.exp(z)
            self.E2 = np.exp(z / 2)
        self.Q, self.f1, self.f2, self.f3 = dt * Q, dt * f1, dt * f2, dt * f3

    def _state_weights(self):
        """Per-entry weights of the H^m norm on internal states."""
        m = self.cfg.m
        if self.nse:
            inv = np.where(self.ksq > 0, 1.0 / np.where(self.ksq > 0, self.ksq, 1.0), 0.0)
            return self.half_weight * (1 + self.ksq) ** m * inv * self.mask
        return (1 + self.ksq) ** m * self.mask

    # ---------------------------------------------------------------- transforms
    def to_phys(self, X):
        if self.nse:
            return sfft.irfft2(X, s=(self.N, self.N), norm="forward", workers=_workers())
        return sfft.ifft2(X, norm="forward", workers=_workers())

    def to_spec(self, x):
        if self.nse:
            return sfft.rfft2(x, norm="forward", workers=_workers())
        return sfft.fft2(x, norm="forward", workers=_workers())

    # ---------------------------------------------------------------- conversions
    def state_from_coeffs(self, c):
        """Public coefficient arrays (..., 2, N, N) or (..., N, N) to internal states."""
        c = np.asarray(c, dtype=complex)
        if self.nse:
            k1, k2 = wavenumbers(self.N)
            w = 1j * k1 * c[..., 1, :, :] - 1j * k2 * c[..., 0, :, :]
            return w[..., : self.N // 2 + 1] * self.mask
        return c * self.mask

    def coeffs_from_state(self, X):
        X = np.asarray(X) * self.mask
        if not self.nse:
            return X.astype(complex)
        N = self.N
        full = np.zeros(X.shape[:-1] + (N,), dtype=complex)
        full[..., : N // 2 + 1] = X
        j = np.arange(N // 2 + 1, N)              # negative k2 columns
        i = (-np.arange(N)) % N
        full[..., :, j] = np.conj(X[..., i, :][..., N - j])
        k1, k2 = wavenumbers(N)
        ksq = k1**2 + k2**2
        inv = np.where(ksq > 0, 1.0 / np.where(ksq > 0, ksq, 1), 0.0)
        u = np.stack([1j * k2 * inv * full, -1j * k1 * inv * full], axis=-3)
        return u

    def state_from_field(self, u: SpectralField):
        if u.kind != self.cfg.kind or u.N != self.N:
            raise ValueError("field does not match the model configuration")
        return self.state_from_coeffs(u.coeffs)

    def field_from_state(self, X) -> SpectralField:
        return SpectralField(self.cfg.kind, self.N, self.coeffs_from_state(X), self.cfg.R)

    def norm(self, X):
        """H^m norm of internal states (vectorised over leading axes)."""
        return np.sqrt(np.sum(self.state_weight * np.abs(X) ** 2, axis=(-2, -1)))

    def pairing(self, X, Y):
        """Real L2 pairing ∫ Re(x̄ y) dx of internal states (velocity L2 for NSE
        when ``Y`` is the vorticity-dual representation returned by the adjoint)."""
        w = self.half_weight if self.nse else 1.0
        return (2 * np.pi) ** 2 * np.sum(w * (np.conj(X) * Y).real, axis=(-2, -1))

    # ---------------------------------------------------------------- nonlinear terms
    def _nonlin(self, X):
        """Explicit part of the right-hand side (without forcing) and a linearisation cache.

        For Navier–Stokes the cache holds (∂₁ω, ∂₂ω, u₁, u₂) on the grid, i.e. the
        partners of (δu₁, δu₂, ∂₁δω, ∂₂δω) in the linearised advection term.
        """
        if self.nse:
            P = self.to_phys(X[..., None, :, :] * self.KS)
            cache = P[..., [2, 3, 0, 1], :, :]
            if self.cfg.linear:
                return np.zeros_like(X), cache
            adv = P[..., 0, :, :] * P[..., 2, :, :] + P[..., 1, :, :] * P[..., 3, :, :]
            return -self.mask * self.to_spec(adv), cache
        u = self.to_phys(X)
        if self.cfg.linear:
            return np.zeros_like(X), u
        r = self.cfg.power
        nl = np.abs(u) ** (2 * r) * u
        return -1j * self.mask * self.to_spec(nl), u

    def _dnonlin(self, cache, dX):
        if self.cfg.linear:
            return np.zeros_like(dX)
        if self.nse:
            dP = self.to_phys(dX[..., None, :, :] * self.KS)
            t = np.sum(dP * cache, axis=-3)
            return -self.mask * self.to_spec(t)
        u = cache
        r = self.cfg.power
        d = self.to_phys(dX)
        a2 = np.abs(u) ** 2
        t = (r + 1) * a2**r * d + r * a2 ** (r - 1) * u * u * np.conj(d)
        return -1j * self.mask * self.to_spec(t)

    def _dnonlin_adj(self, cache, Lam):
        if self.cfg.linear:
            return np.zeros_like(Lam)
        if self.nse:
            lam = self.to_phys(self.mask * Lam)
            S = self.to_spec(cache * lam[..., None, :, :])
            return -self.mask * np.sum(np.conj(self.KS) * S, axis=-3)
        u = cache
        r = self.cfg.power
        lam = self.to_phys(self.mask * Lam)
        a2 = np.abs(u) ** 2
        t = (r + 1) * a2**r * lam - r * a2 ** (r - 1) * u * u * np.conj(lam)
        return 1j * self.mask * self.to_spec(t)

    # ---------------------------------------------------------------- forcing
    def interval_of(self, n: int, n_int: int) -> int:
        return (n * n_int) // self.substeps

    def forcing_from_weights(self, g):
        """Internal forcing per substep from interval weights g (..., n_int, I)."""
        g = np.asarray(g, dtype=float)
        n_int = g.shape[-2]
        if self.substeps % n_int:
            raise ValueError("substeps must be a multiple of the number of dyadic noise intervals")
        F = np.tensordot(g, self.forcing_basis, axes=([-1], [0]))     # (..., n_int, *field)
        idx = [self.interval_of(n, n_int) for n in range(self.substeps)]
        return F[..., idx, :, :]

    # ---------------------------------------------------------------- time stepping
    def run(self, X0, F, record=False, guard=np.inf, sub_range=None):
        """Advance internal state ``X0`` over one unit of time.

        ``F`` holds the forcing per substep, shape (..., substeps, *field) or
        ``None``.  Returns the final state and, if ``record``, the list of
        per-substep stage caches used by :meth:`tangent` and :meth:`adjoint`.
        """
        X = np.array(X0, dtype=complex) * self.mask
        rec = []
        steps = range(self.substeps) if sub_range is None else range(*sub_range)
        for n in steps:
            Fn = 0.0 if F is None else F[..., n, :, :]
            Nu, cu = self._nonlin(X)
            Nu = Nu + Fn
            a = self.E2 * X + self.Q * Nu
            Na, ca = self._nonlin(a)
            Na = Na + Fn
            b = self.E2 * X + self.Q * Na
            Nb, cb = self._nonlin(b)
            Nb = Nb + Fn
            c = self.E2 * a + self.Q * (2 * Nb - Nu)
            Nc, cc = self._nonlin(c)
            Nc = Nc + Fn
            X = (self.E * X + self.f1 * Nu + 2 * self.f2 * (Na + Nb) + self.f3 * Nc) * self.mask
            if record:
                rec.append((cu, ca, cb, cc))
            if np.isfinite(guard):
                nrm = float(np.max(self.norm(X)))
                if not nrm <= guard:
                    raise BlowUpError(n, nrm, guard)
        return (X, rec) if record else X

    def _bcast(self, cache, nd_extra):
        """Insert ``nd_extra`` singleton axes after the base batch axes of a cache array."""
        if nd_extra == 0:
            return cache
        tail = 3 if self.nse else 2
        lead = cache.shape[: cache.ndim - tail]
        return cache.reshape(lead + (1,) * nd_extra + cache.shape[cache.ndim - tail:])

    def _base_ndim(self, rec):
        tail = 3 if self.nse else 2
        return rec[0][0].ndim - tail

    def tangent(self, rec, dX0, dF=None, keep=False):
        """Tangent of the recorded discrete flow.

        ``dX0`` has shape base_batch + dir_batch + field; ``dF`` (forcing
        perturbation per substep) has the same leading shape with a substep
        axis, or is ``None``.  Returns the final tangent state (and the states
        at every substep boundary if ``keep``).
        """
        nb = self._base_ndim(rec)
        dX = np.array(dX0, dtype=complex)
        if dF is not None:
            dF = np.asarray(dF)
            shape = np.broadcast_shapes(dX.shape, dF.shape[:-3] + dF.shape[-2:])
            dX = np.broadcast_to(dX, shape).copy()
        extra = dX.ndim - 2 - nb
        out = [dX] if keep else None
        for n, (cu, ca, cb, cc) in enumerate(rec):
            cu, ca, cb, cc = (self._bcast(x, extra) for x in (cu, ca, cb, cc))
            dFn = 0.0 if dF is None else dF[..., n, :, :]
            n0 = self._dnonlin(cu, dX) + dFn
            da = self.E2 * dX + self.Q * n0
            n1 = self._dnonlin(ca, da) + dFn
            db = self.E2 * dX + self.Q * n1
            n2 = self._dnonlin(cb, db) + dFn
            dc = self.E2 * da + self.Q * (2 * n2 - n0)
            n3 = self._dnonlin(cc, dc) + dFn
            dX = (self.E * dX + self.f1 * n0 + 2 * self.f2 * (n1 + n2) + self.f3 * n3) * self.mask
            if keep:
                out.append(dX)
        return (dX, out) if keep else dX

    def adjoint(self, rec, lam1, keep=False):
        """Adjoint of :meth:`tangent` with respect to :meth:`pairing`.

        Returns ``(lam0, grad_F)`` where ``grad_F[..., n, :, :]`` is the
        sensitivity to the forcing on substep ``n`` (and the adjoint states at
        every substep boundary if ``keep``).
        """
        nb = self._base_ndim(rec)
        lam = np.array(lam1, dtype=complex) * self.mask
        extra = lam.ndim - 2 - nb
        cj = (lambda z: z) if self.nse else np.conj
        E, E2, Q, f1, f2, f3 = (cj(z) for z in (self.E, self.E2, self.Q, self.f1, self.f2, self.f3))
        gF = [None] * len(rec)
        out = [lam] if keep else None
        for n in range(len(rec) - 1, -1, -1):
            cu, ca, cb, cc = (self._bcast(x, extra) for x in rec[n])
            lu = E * lam
            g0 = f1 * lam
            g1 = 2 * f2 * lam
            g2 = 2 * f2 * lam
            g3 = f3 * lam
            # n3 = DN(c) dc + dF
            lc = self._dnonlin_adj(cc, g3)
            fsum = g3
            # dc = E2 da + Q (2 n2 - n0)
            la = E2 * lc
            g2 = g2 + 2 * Q * lc
            g0 = g0 - Q * lc
            # n2 = DN(b) db + dF
            lb = self._dnonlin_adj(cb, g2)
            fsum = fsum + g2
            # db = E2 du + Q n1
            lu = lu + E2 * lb
            g1 = g1 + Q * lb
            # n1 = DN(a) da + dF
            la = la + self._dnonlin_adj(ca, g1)
            fsum = fsum + g1
            # da = E2 du + Q n0
            lu = lu + E2 * la
            g0 = g0 + Q * la
            # n0 = DN(u) du + dF
            lu = lu + self._dnonlin_adj(cu, g0)
            fsum = fsum + g0
            lam = lu * self.mask
            gF[n] = fsum * self.mask
            if keep:
                out.append(lam)
        gF = np.stack(gF, axis=-3)
        if keep:
            return lam, gF, out[::-1]
        return lam, gF


# ---------------------------------------------------------------- public operations

_SOLVERS: dict = {}


def solver_for(cfg: FlowConfig, basis: SpatialBasis | None = None) -> Solver:
    key = (cfg, None if basis is None else (basis.kind, basis.count, basis.sobolev_index))
    s = _SOLVERS.get(key)
    if s is None:
        s = Solver(cfg, basis)
        if len(_SOLVERS) > 16:
            _SOLVERS.clear()
        _SOLVERS[key] = s
    return s


def model_basis(cfg: FlowConfig, count: int) -> SpatialBasis:
    """Spatial noise modes for ``cfg``, orthonormal in the state norm H^m."""
    return spatial_basis(cfg.kind, cfg.grid_size, count, cfg.m, cfg.R)


def leray_project(u: SpectralField) -> SpectralField:
    """û_k ↦ û_k − k (k·û_k)/|k|², with the zero mode set to zero."""
    if u.kind != VELOCITY:
        raise ValueError("leray_project needs a velocity field")
    k1, k2 = wavenumbers(u.N)
    ksq = k1**2 + k2**2
    inv = np.where(ksq > 0, 1.0 / np.where(ksq > 0, ksq, 1), 0.0)
    c = u.coeffs
    dot = k1 * c[0] + k2 * c[1]
    out = np.stack([c[0] - k1 * dot * inv, c[1] - k2 * dot * inv])
    out[:, 0, 0] = 0.0
    return u.with_coeffs(out)


def nonlinearity(u: SpectralField, cfg: FlowConfig) -> SpectralField:
    """Π((u·∇)u) for nse; γu + i|u|^{2r}u for cgl; dealiased pseudospectral products."""
    if u.kind != cfg.kind:
        raise ValueError(f"{u.kind} field does not match model {cfg.model}")
    N = u.N
    k1, k2 = wavenumbers(N)
    mask = (k1**2 + k2**2) <= cfg.R**2
    if cfg.model == "nse":
        vel = np.fft.ifft2(u.coeffs, axes=(-2, -1)).real * N**2
        grads = [np.fft.ifft2(1j * kk * u.coeffs, axes=(-2, -1)).real * N**2 for kk in (k1, k2)]
        adv = vel[0] * grads[0] + vel[1] * grads[1]         # (2, N, N): u_j ∂_j u_i
        c = np.fft.fft2(adv, axes=(-2, -1)) / N**2 * mask
        return leray_project(u.with_coeffs(c))
    z = np.fft.ifft2(u.coeffs) * N**2
    nl = np.fft.fft2(np.abs(z) ** (2 * cfg.power) * z) / N**2 * mask
    return u.with_coeffs(cfg.gamma * u.coeffs + 1j * nl)


def _guard(cfg, u0: SpectralField, path: NoisePath | None):
    r_eta = 0.0 if path is None else path.spec.radius_sup()
    return cfg.blowup_factor * (sobolev_norm(u0, cfg.m) + r_eta + 1.0)


def flow_map(u0: SpectralField, path: NoisePath | None, cfg: FlowConfig, basis: SpatialBasis | None = None) -> SpectralField:
    """u(1) for the forced model started at ``u0``; ``path=None`` means no forcing."""
    if path is not None and basis is None:
        basis = model_basis(cfg, path.spec.I)
    S = solver_for(cfg, basis)
    X0 = S.state_from_field(u0)
    F = None if path is None else S.forcing_from_weights(path.interval_weights())
    X1 = S.run(X0, F, guard=_guard(cfg, u0, path))
    return S.field_from_state(X1)


def dissipativity_check(samples, cfg: FlowConfig, beta: float | None = None, basis=None) -> dict:
    """Empirical check of the one-step energy bound on (u0, path) samples.

    nse: ‖u₁‖₁² ≤ e^{-ν}‖u₀‖₁² + β with β = Σ(b c)²/ν unless supplied.
    cgl: unforced L2 decay ‖u₁‖₀ ≤ e^{-γ}‖u₀‖₀ (paths are ignored).
    """
    if cfg.model == "nse":
        lhs, rhs0 = [], []
        beta_theory = None
        for u0, path in samples:
            u1 = flow_map(u0, path, cfg, basis)
            lhs.append(sobolev_norm(u1, 1) ** 2)
            rhs0.append(np.exp(-cfg.viscosity) * sobolev_norm(u0, 1) ** 2)
            if path is not None and beta_theory is None:
                beta_theory = float(np.sum(path.spec.amplitudes() ** 2)) / cfg.viscosity
        lhs, rhs0 = np.array(lhs), np.array(rhs0)
        b = beta if beta is not None else (beta_theory or 0.0)
        excess = lhs - rhs0
        return {
            "model": "nse",
            "beta": b,
            "beta_empirical": float(max(0.0, excess.max())) if excess.size else 0.0,
            "violations": int(np.sum(lhs > rhs0 + b + 1e-12 * (1 + rhs0))),
            "ratio_max": float(np.max(np.sqrt(lhs / np.where(rhs0 > 0, rhs0 * np.exp(cfg.viscosity), 1.0)))),
            "count": int(lhs.size),
        }
    ratios = []
    for u0, _ in samples:
        u1 = flow_map(u0, None, cfg)
        n0 = sobolev_norm(u0, 0)
        ratios.append(sobolev_norm(u1, 0) / n0 if n0 > 0 else 0.0)
    ratios = np.array(ratios)
    bound = np.exp(-cfg.gamma)
    return {
        "model": "cgl",
        "decay_bound": float(bound),
        "ratio_max": float(ratios.max()),
        "violations": int(np.sum(ratios > bound * (1 + 1e-12))),
        "count": int(ratios.size),
    }


def hamiltonian_monitor(u: SpectralField, cfg: FlowConfig) -> float:
    """H(u) = ∫ ½|∇u|² + |u|^{2r+2}/(2r+2) dx, with an alias-free quadrature grid."""
    if cfg.model != "cgl" or u.kind != SCALAR:
        raise ValueError("hamiltonian_monitor applies to the cgl model only")
    r = cfg.power
    k1, k2 = wavenumbers(u.N)
    grad = 0.5 * (2 * np.pi) ** 2 * np.sum((k1**2 + k2**2) * np.abs(u.coeffs) ** 2)
    need = (2 * r + 2) * u.dealias_radius + 1
    M = max(u.N, 1 << int(np.ceil(np.log2(need))))
    pad = _pad(u.coeffs, M)
    z = np.fft.ifft2(pad) * M**2
    pot = (2 * np.pi) ** 2 * np.mean(np.abs(z) ** (2 * r + 2)) / (2 * r + 2)
    return float(grad + pot)


def sup_modulus(u: SpectralField, oversample: int = 2) -> float:
    """max_x |u(x)| on an oversampled grid (maximum-principle diagnostic)."""
    M = u.N * oversample
    pad = _pad(u.coeffs, M)
    z = np.fft.ifft2(pad, axes=(-2, -1)) * M**2
    return float(np.max(np.abs(z)))


def _pad(c, M):
    N = c.shape[-1]
    k1, k2 = wavenumbers(N)
    out = np.zeros(c.shape[:-2] + (M, M), dtype=complex)
    out[..., k1 % M, k2 % M] = c
    return out


__all__ = [
    "FlowConfig", "Solver", "BlowUpError", "solver_for", "model_basis",
    "leray_project", "nonlinearity", "flow_map", "dissipativity_check",
    "hamiltonian_monitor", "sup_modulus", "sobolev_norm", "SpectralField",
]
