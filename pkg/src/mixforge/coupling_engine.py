"""Coupling of two copies of the randomly forced flow.

Two states closer than ``d0`` are driven by noise paths η and Ψ(η) = η + Φ(η),
where the control

    Φ(u, u′; η) = −R_{r,M}(u, η) D_uS(u, η)(u′ − u)

removes the linear part of the difference of the images.  The law of Ψ(η)
is coupled with the noise law ℓ by a maximal coupling, so both copies are
driven by noise distributed as ℓ and they share the shifted path with
probability 1 − ‖ℓ − Ψ_*ℓ‖_TV.  Pairs farther apart than ``d0`` share one
noise path.

Φ only changes the first M noise coordinates v; the remaining coordinates w
are common to both copies.  Densities of the pushed-forward law are therefore
densities of the M-block given w.

Everything here runs on internal solver states (see :mod:`spectral_models`);
the public operations also accept :class:`SpectralField` values.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .fields import SCALAR, SpectralField, sobolev_norm
from .haar_noise import NoiseSpec, interval_weights, rng_stream
from .right_inverse import (
    CalibrationError, RightInverse, calibrate as calibrate_inverse, lattice_monotonicity, tikhonov_batch,
)
from .spectral_models import FlowConfig, model_basis, solver_for
from .tangent_adjoint import (
    TangentOperator, covector_pullback, directional_tangent, linearize, record_base, state_coords,
)

SNAP_TOL = 1e-12


class CouplingError(RuntimeError):
    """A sampler exceeded its iteration cap."""


class FixedPointError(CouplingError):
    """Inversion of v ↦ v + Φ_w(v) did not converge (its Lipschitz bound is violated)."""


# ---------------------------------------------------------------- flow access

class FlowModel:
    """Batched time-one map S(u, η) on internal solver states.

    Noise vectors are flat ξ-coefficient vectors (Haar-major), states are the
    solver's internal spectral arrays with leading batch axes.
    """

    def __init__(self, cfg: FlowConfig, spec: NoiseSpec):
        self.cfg = cfg
        self.spec = spec
        self.basis = model_basis(cfg, spec.I)
        self.solver = solver_for(cfg, self.basis)
        self.coords = state_coords(cfg, self.basis)
        self.density = spec.density
        self.sqrt_w = np.sqrt(self.coords.weights)
        self._eta_radius = spec.radius_sup()

    @property
    def noise_dim(self) -> int:
        return self.spec.dim

    @property
    def field_shape(self):
        return self.solver.field_shape

    def zeros(self, n: int | None = None):
        shape = self.field_shape if n is None else (n,) + self.field_shape
        return np.zeros(shape, dtype=complex)

    def norm(self, X):
        return self.solver.norm(X)

    def guard(self, X) -> float:
        return self.cfg.blowup_factor * (float(np.max(self.norm(X))) + self._eta_radius + 1.0)

    def flow(self, X, xi):
        """S(X, ξ) for matching (or broadcastable) batches of states and noise vectors."""
        S = self.solver
        F = S.forcing_from_weights(interval_weights(np.asarray(xi, dtype=float), self.spec))
        return S.run(X, F, guard=self.guard(X))

    def state(self, u: SpectralField):
        return self.solver.state_from_field(u)

    def field(self, X) -> SpectralField:
        return self.solver.field_from_state(X)

    def vec(self, X):
        return self.coords.to_vec(X)

    def sample_noise(self, rng: np.random.Generator, n: int | None = None):
        size = self.noise_dim if n is None else (n, self.noise_dim)
        return self.density.sample(rng, size)

    def random_directions(self, rng: np.random.Generator, n: int, scale: float = 4.0):
        """Smooth random states of unit norm (Gaussian coefficients under exp(-|k|²/scale))."""
        S = self.solver
        shape = (n,) + self.field_shape
        Z = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
        Z = Z * S.mask * np.exp(-S.ksq / scale)
        if S.nse:
            # real vorticity: makes the k2 = 0 column Hermitian
            Z = S.to_spec(S.to_phys(Z)) * S.mask
        return Z / self.norm(Z)[:, None, None]

    def chain_states(self, rng: np.random.Generator, n: int, steps: int = 8, X0=None):
        """States after ``steps`` uncoupled steps of the chain started at ``X0`` (default 0)."""
        X = self.zeros(n) if X0 is None else np.array(X0, dtype=complex)
        for _ in range(steps):
            X = self.flow(X, self.sample_noise(rng, n))
        return X


def _linear_data(model: FlowModel, X, etas, hvecs, cols):
    """Base flows at noise vectors ``etas`` (n, D_E) and the tangent data there.

    ``X`` is one state or a batch of n states, ``hvecs`` one or n coordinate
    vectors.  Returns ``(X1, A, f)`` with A the selected columns of D_ηS
    (n, D_H, len(cols)) and f = D_uS h (n, D_H).
    """
    etas = np.atleast_2d(etas)
    n = etas.shape[0]
    X = np.asarray(X)
    Xb = np.broadcast_to(X, (n,) + model.field_shape) if X.ndim == 2 else X
    h = np.asarray(hvecs, dtype=float)
    h = h[None, :] if h.ndim == 1 else h[:, None, :]
    base = record_base(Xb, etas, model.cfg, model.spec, model.basis)
    A, D = linearize(base, columns=list(cols), h_vecs=h)
    return base.X1, A, D[..., 0]


# ---------------------------------------------------------------- control map

@dataclass(frozen=True)
class ControlParams:
    """Right-inverse parameters and numerical settings of the control map."""

    r: float
    M: int
    variant: str = "projected"
    fd_step: float = 1e-5
    fd_scheme: str = "forward"
    clamp: float | None = None
    max_fixed_point: int = 60
    fixed_point_tol: float = 1e-13
    max_residual: int = 5000

    def __post_init__(self):
        if not self.r > 0 or self.M < 1:
            raise ValueError("need r > 0 and M >= 1")
        if self.clamp is not None and not self.clamp > 1.0:
            raise ValueError("clamp bound must exceed the noise support radius 1")
        if self.fd_scheme not in ("forward", "central"):
            raise ValueError("fd_scheme must be 'forward' or 'central'")


def _phi_from_linear(model: FlowModel, params: ControlParams, A, f):
    sw = model.sqrt_w
    z = tikhonov_batch(sw[:, None] * A, sw * f, params.r, params.M, params.variant)
    out = np.zeros(z.shape[:-1] + (model.noise_dim,))
    out[..., : z.shape[-1]] = -z
    return out


def _control_columns(model: FlowModel, params: ControlParams):
    return range(params.M) if params.variant == "projected" else range(model.noise_dim)


@dataclass
class ControlPoint:
    """Φ and its ingredients at one noise vector."""

    eta: np.ndarray
    phi: np.ndarray
    X1: np.ndarray
    A: np.ndarray
    f: np.ndarray


class ControlMap:
    """η ↦ Φ(u, u′; η) for a fixed pair of internal states."""

    def __init__(self, model: FlowModel, params: ControlParams, X, Xp):
        if params.M > model.noise_dim:
            raise ValueError("M exceeds the noise dimension")
        self.model = model
        self.params = params
        self.X = np.asarray(X)
        self.h = model.vec(np.asarray(Xp) - self.X)
        self.cols = _control_columns(model, params)

    def evaluate(self, etas):
        """Φ (n, D_E) and S(u, η) (n, *field) at a batch of noise vectors."""
        X1, A, f = _linear_data(self.model, self.X, etas, self.h, self.cols)
        return _phi_from_linear(self.model, self.params, A, f), X1

    def point(self, eta) -> ControlPoint:
        eta = np.asarray(eta, dtype=float)
        X1, A, f = _linear_data(self.model, self.X, eta[None], self.h, self.cols)
        phi = _phi_from_linear(self.model, self.params, A, f)
        return ControlPoint(eta, phi[0], X1[0], A[0], f[0])

    def jacobian(self, eta, point: ControlPoint | None = None, method: str = "adjoint"):
        """DΦ_w(v), the M×M derivative of the first M entries of Φ in the first M coordinates.

        DΦ follows from the chain rule through the Tikhonov solve.  With
        g = W(f + AΦ) the right-hand side needs only ∂_j(g·A e_k) and
        ∂_j(f + AΦ) at fixed g and Φ.  ``"adjoint"`` obtains them by finite
        differences (scheme ``params.fd_scheme``) of one adjoint solve and
        one combined tangent per perturbed base.  ``"symmetric"``
        differentiates all tangent columns, using ∂_j(D_ηS e_k) = ∂_k(D_ηS e_j)
        to skip half of them.  ``"direct"`` takes central differences of Φ.
        """
        p = self.params
        M, tau = p.M, p.fd_step
        eta = np.asarray(eta, dtype=float)
        E = np.eye(self.model.noise_dim)[:M]
        if method == "direct" or p.variant != "projected":
            pts = np.concatenate([eta + tau * E, eta - tau * E])
            phi, _ = self.evaluate(pts)
            return ((phi[:M, :M] - phi[M:, :M]) / (2 * tau)).T
        if method not in ("adjoint", "symmetric"):
            raise ValueError("method must be 'adjoint', 'symmetric' or 'direct'")
        if point is None or not np.array_equal(point.eta, eta):
            point = self.point(eta)
        if method == "adjoint":
            return self._jacobian_adjoint(eta, point, E)
        D_H = point.A.shape[0]
        dA = np.zeros((M, D_H, M))
        df = np.zeros((M, D_H))
        central = p.fd_scheme == "central"
        for j in range(M):
            pts = np.stack([eta + tau * E[j], eta - tau * E[j]] if central else [eta + tau * E[j]])
            _, Aj, fj = _linear_data(self.model, self.X, pts, self.h, range(j, M))
            if central:
                d = (Aj[0] - Aj[1]) / (2 * tau)
                df[j] = (fj[0] - fj[1]) / (2 * tau)
            else:
                d = (Aj[0] - point.A[:, j:]) / tau
                df[j] = (fj[0] - point.f) / tau
            dA[j, :, j:] = d
            dA[j + 1:, :, j] = d[:, 1:].T
        sw = self.model.sqrt_w
        B = sw[:, None] * point.A
        ft = sw * point.f
        K = B.T @ B + p.r * np.eye(M)
        phi = point.phi[:M]
        rhs = np.empty((M, M))
        for j in range(M):
            dB = sw[:, None] * dA[j]
            rhs[:, j] = dB.T @ ft + B.T @ (sw * df[j]) + (dB.T @ B + B.T @ dB) @ phi
        return -np.linalg.solve(K, rhs)

    def _jacobian_adjoint(self, eta, point: ControlPoint, E):
        p = self.params
        M, tau = p.M, p.fd_step
        m = self.model
        W = m.sqrt_w**2
        phi = point.phi[:M]
        g = W * (point.f + point.A @ phi)
        if p.fd_scheme == "central":
            pts = np.concatenate([eta + tau * E, eta - tau * E])
        else:
            pts = np.concatenate([eta[None], eta + tau * E])
        X = np.broadcast_to(self.X, (len(pts),) + m.field_shape)
        base = record_base(X, pts, m.cfg, m.spec, m.basis)
        c = covector_pullback(base, g, M)                                  # (n, M)
        v = directional_tangent(base, self.h, point.phi)                   # (n, D_H)
        if p.fd_scheme == "central":
            H = (c[:M] - c[M:]) / (2 * tau)
            V = (v[:M] - v[M:]) / (2 * tau)
        else:
            H = (c[1:] - c[0]) / tau
            V = (v[1:] - v[0]) / tau
        H = 0.5 * (H + H.T)
        rhs = H + point.A.T @ (W[:, None] * V.T)
        K = point.A.T @ (W[:, None] * point.A) + p.r * np.eye(M)
        return -np.linalg.solve(K, rhs)

    def _fixed_point(self, y, w):
        """Inverse and the control point at the last iterate evaluated."""
        p = self.params
        y = np.asarray(y, dtype=float)
        x = y.copy()
        for _ in range(p.max_fixed_point):
            pt = self.point(np.concatenate([x, w]))
            x_new = y - pt.phi[: p.M]
            if np.max(np.abs(x_new - x)) <= p.fixed_point_tol * max(1.0, np.max(np.abs(x))):
                return x_new, pt
            x = x_new
        raise FixedPointError(f"no convergence in {p.max_fixed_point} iterations")

    def invert(self, y, w):
        """x with x + Φ_w(x) = y by fixed-point iteration."""
        return self._fixed_point(y, w)[0]

    def density(self, y, w) -> float:
        """q(y | w), the density of the first M coordinates of Ψ(η) given the rest."""
        x, pt = self._fixed_point(y, w)
        rho = float(np.prod(self.model.density.pdf(x)))
        if rho == 0.0:
            return 0.0
        # the last iterate is within the fixed-point tolerance of x
        J = self.jacobian(pt.eta, pt)
        return rho / abs(np.linalg.det(np.eye(self.params.M) + J))


# ---------------------------------------------------------------- maximal coupling

@dataclass
class MaximalDraw:
    x: np.ndarray
    y: np.ndarray
    equal: bool
    ratio: float            # q(x)/p(x), the acceptance ratio before truncation at 1
    proposals: int


def maximal_coupling_sample(p_density, q_density, sample_p, sample_q, rng: np.random.Generator,
                            x=None, px=None, max_iter: int = 5000) -> MaximalDraw:
    """Draw (x, y) with x ~ p, y ~ q and P(x = y) = 1 − ‖p − q‖_TV.

    ``x`` may be supplied (already drawn from p); ``px`` may be the value
    p(x) or a zero-argument callable evaluated only when q(x) > 0.  The
    residual (q − p)_+ is sampled by rejection from q.
    """
    if x is None:
        x = sample_p(rng)
    u = rng.random()
    qx = float(q_density(x))
    if qx > 0.0:
        pv = float(px() if callable(px) else (p_density(x) if px is None else px))
        ratio = qx / pv if pv > 0 else math.inf
    else:
        ratio = 0.0
    if u < min(1.0, ratio):
        return MaximalDraw(x, x, True, ratio, 0)
    for k in range(1, max_iter + 1):
        y = sample_q(rng)
        u = rng.random()
        qy = float(q_density(y))
        if qy <= 0.0:
            continue
        if u < 1.0 - float(p_density(y)) / qy:
            return MaximalDraw(x, y, False, ratio, k)
    raise CouplingError(f"residual sampler exceeded {max_iter} proposals (estimated TV ≈ 1)")


# ---------------------------------------------------------------- engine and outcomes

@dataclass
class CouplingOutcome:
    """Result of one coupled step; ``u1``/``u1p`` are internal states or fields."""

    u1: object
    u1p: object
    eta: np.ndarray
    eta_p: np.ndarray
    branch: str
    glued_equal: bool
    tv_density_ratio: float
    squeeze_ok: bool
    distance_before: float
    distance_after: float
    squeeze_ratio: float
    clamped: bool
    proposals: int = 0

    @property
    def tv_estimate(self) -> float:
        """Rejection probability 1 − min(1, p/q) of this step (nan on the far branch)."""
        if self.branch == "far":
            return float("nan")
        return 1.0 - min(1.0, self.tv_density_ratio)

    def csv_row(self, step: int):
        return (step, self.branch, self.distance_before, self.distance_after, self.squeeze_ratio,
                int(self.glued_equal), self.tv_estimate, int(self.clamped))


@dataclass
class CouplingEngine:
    """Calibrated control parameters plus the distance thresholds of the coupled kernel."""

    model: FlowModel
    params: ControlParams
    delta: float
    C_eps: float
    d0: float
    C1: float = float("nan")
    eps: float = float("nan")
    snap_tol: float = SNAP_TOL

    def control_map(self, X, Xp) -> ControlMap:
        return ControlMap(self.model, self.params, X, Xp)

    def context(self, u, eta) -> "ControlContext":
        return ControlContext.build(self, u, eta)

    def _clamp(self, zeta):
        c = self.params.clamp
        if c is None:
            return zeta, False
        out = np.clip(zeta, -c, c)
        return out, bool(np.any(out != zeta))

    def step(self, X, Xp, rng: np.random.Generator, d0: float | None = None) -> CouplingOutcome:
        """One step of the coupled kernel on internal states."""
        m = self.model
        d0 = self.d0 if d0 is None else d0
        X = np.asarray(X)
        Xp = np.asarray(Xp)
        dist = float(m.norm(Xp - X))
        eta = m.sample_noise(rng)
        if dist > d0:
            Y = m.flow(np.stack([X, Xp]), eta[None])
            d1 = float(m.norm(Y[1] - Y[0]))
            return CouplingOutcome(Y[0], Y[1], eta, eta, "far", False, float("nan"), d1 <= 0.5 * dist,
                                   dist, d1, d1 / dist, False)
        if dist <= self.snap_tol:
            Y = m.flow(X, eta)
            return CouplingOutcome(Y, Y.copy(), eta, eta.copy(), "near", True, 1.0, True,
                                   dist, 0.0, 0.0, False)
        M = self.params.M
        cmap = self.control_map(X, Xp)
        pt = cmap.point(eta)
        zeta2, clamped = self._clamp(eta + pt.phi)
        v, w = eta[:M], eta[M:]
        rho = m.density

        def p_at_zeta2():
            J = cmap.jacobian(eta, pt)
            return float(np.prod(rho.pdf(v))) / abs(np.linalg.det(np.eye(M) + J))

        draw = maximal_coupling_sample(
            p_density=lambda y: cmap.density(y, w),
            q_density=lambda y: float(np.prod(rho.pdf(y))),
            sample_p=None,
            sample_q=lambda g: rho.sample(g, M),
            rng=rng, x=zeta2[:M], px=p_at_zeta2, max_iter=self.params.max_residual,
        )
        zeta3 = np.concatenate([draw.y, w])
        Y1 = pt.X1
        Y1p = m.flow(Xp, zeta3)
        d1 = float(m.norm(Y1p - Y1))
        if d1 <= self.snap_tol:
            Y1p = Y1.copy()
            d1 = 0.0
        return CouplingOutcome(Y1, Y1p, eta, zeta3, "near", draw.equal, draw.ratio, d1 <= 0.5 * dist,
                               dist, d1, d1 / dist, clamped, draw.proposals)


@dataclass
class ControlContext:
    """Linearisation of the flow at one base point (u, η) with its right inverse."""

    engine: CouplingEngine
    u: SpectralField
    eta: np.ndarray
    X: np.ndarray
    A: TangentOperator
    R: RightInverse
    base: object = field(repr=False)

    @classmethod
    def build(cls, engine: CouplingEngine, u, eta):
        m = engine.model
        X = m.state(u) if isinstance(u, SpectralField) else np.asarray(u)
        u = u if isinstance(u, SpectralField) else m.field(X)
        eta = np.asarray(eta, dtype=float)
        base = record_base(X, eta, m.cfg, m.spec, m.basis)
        Amat, _ = linearize(base)
        A = TangentOperator(Amat, m.coords.weights.copy(), np.ones(m.noise_dim), base, m.coords)
        p = engine.params
        R = RightInverse(A, p.r, p.M, p.variant)
        return cls(engine, u, eta, X, A, R, base)

    @property
    def delta(self) -> float:
        return self.engine.delta

    @property
    def C_eps(self) -> float:
        return self.engine.C_eps

    def dus(self, hvec):
        """D_uS(u, η) applied to a coordinate vector."""
        m = self.engine.model
        S = m.solver
        out = S.tangent(self.base.rec, m.coords.from_vec(hvec))
        return m.vec(out)


def _as_state(model: FlowModel, u):
    return model.state(u) if isinstance(u, SpectralField) else np.asarray(u)


def phi_control(ctx: ControlContext, u_prime, eta=None, check_radius: bool = True):
    """Φ(u, u′; η) as a flat noise vector, zero beyond the first M coordinates."""
    if eta is not None and not np.array_equal(np.asarray(eta, dtype=float), ctx.eta):
        ctx = ControlContext.build(ctx.engine, ctx.u, eta)
    m = ctx.engine.model
    h = m.vec(_as_state(m, u_prime) - ctx.X)
    if check_radius and m.coords.norm(h) > ctx.delta * (1 + 1e-12):
        raise ValueError("pair farther apart than the squeeze radius; use the far branch")
    return -ctx.R.apply(ctx.dus(h))


def psi_squeeze(ctx: ControlContext, u_prime, eta=None):
    """Shifted noise η + Φ and the ratio ‖S(u,η) − S(u′,η+Φ)‖ / ‖u − u′‖.

    Returns ``(eta_shifted, ratio, clamped)``; the ratio is 0 for u′ = u.
    """
    eta = ctx.eta if eta is None else np.asarray(eta, dtype=float)
    if not np.array_equal(eta, ctx.eta):
        ctx = ControlContext.build(ctx.engine, ctx.u, eta)
    m = ctx.engine.model
    Xp = _as_state(m, u_prime)
    dist = float(m.norm(Xp - ctx.X))
    if dist == 0.0:
        return eta.copy(), 0.0, False
    phi = phi_control(ctx, Xp)
    shifted, clamped = ctx.engine._clamp(eta + phi)
    d1 = float(m.norm(m.flow(Xp, shifted) - ctx.base.X1))
    return shifted, d1 / dist, clamped


def squeeze_batch(engine: CouplingEngine, X, Xp, etas):
    """Squeeze ratios for batches of pairs and noise vectors (batched control evaluation)."""
    m = engine.model
    X = np.asarray(X)
    Xp = np.asarray(Xp)
    h = m.vec(Xp - X)
    X1, A, f = _linear_data(m, X, etas, h, _control_columns(m, engine.params))
    phi = _phi_from_linear(m, engine.params, A, f)
    shifted, clamped = engine._clamp(np.asarray(etas) + phi)
    Y = m.flow(Xp, shifted)
    d0 = m.norm(Xp - X)
    d1 = m.norm(Y - X1)
    ratio = np.where(d0 > 0, d1 / np.where(d0 > 0, d0, 1.0), 0.0)
    clamp_rows = np.any(shifted != np.asarray(etas) + phi, axis=-1)
    return ratio, phi, clamp_rows


def pushforward_density(engine: CouplingEngine, u, u_prime, w, x) -> float:
    """q(x | w): density of the first M coordinates of Ψ(η) given the complement ``w``."""
    m = engine.model
    X, Xp = _as_state(m, u), _as_state(m, u_prime)
    if float(m.norm(Xp - X)) == 0.0:
        return float(np.prod(m.density.pdf(x)))
    return engine.control_map(X, Xp).density(np.asarray(x, dtype=float), np.asarray(w, dtype=float))


def coupled_step(engine: CouplingEngine, u, u_prime, kdensity: "KantorovichDensity",
                 rng: np.random.Generator) -> CouplingOutcome:
    """One coupled step from fields (or internal states), branching at ``kdensity.d0``."""
    m = engine.model
    fields_in = isinstance(u, SpectralField)
    out = engine.step(_as_state(m, u), _as_state(m, u_prime), rng, d0=kdensity.d0)
    if fields_in:
        out.u1, out.u1p = m.field(out.u1), m.field(out.u1p)
    return out


# ---------------------------------------------------------------- Kantorovich density

@dataclass(frozen=True)
class KantorovichDensity:
    """Step function f on (a^N0 R0, R0], an affine tail up to R_*, and f_K built from it.

    The step values a_n = a_1 − g_n are stored through the logarithms of
    their gaps g_n (g_1 = 0, log −inf) because the gaps span more orders of
    magnitude than a float holds.
    """

    gamma: float
    beta: float
    R_star: float
    d0: float
    p: float
    p1: float
    N0: int
    log_gaps: np.ndarray = field(repr=False)

    @property
    def gaps(self) -> np.ndarray:
        return np.exp(self.log_gaps)

    @property
    def a(self) -> float:
        return 0.5 * (1.0 + self.gamma)

    @property
    def R0(self) -> float:
        return self.beta / (1.0 - self.gamma)

    @property
    def a1(self) -> float:
        return 2.5 * self.d0

    @property
    def table(self) -> np.ndarray:
        return self.a1 - self.gaps

    def relation_margins(self) -> np.ndarray:
        """log(p g_n) − log g_{n−1} for n = 2..N0.

        a_{n−1} > p a_n + (1−p) a_1 is equivalent to p g_n > g_{n−1}, so every
        entry is positive exactly when the relation holds (+inf at n = 2).
        """
        lg = self.log_gaps
        with np.errstate(invalid="ignore"):
            return math.log(self.p) + lg[1:] - lg[:-1]

    def relation_direct(self) -> np.ndarray:
        """The same margins evaluated on the rounded table values."""
        a = self.table
        return a[:-1] - (self.p * a[1:] + (1 - self.p) * self.a1)

    def segment(self, x):
        """Index j with x ∈ (a^j R0, a^{j−1} R0], clipped to [1, N0]."""
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore"):
            t = np.log(self.R0 / np.maximum(x, 1e-300)) / math.log(1.0 / self.a)
        return np.clip(np.floor(t).astype(int) + 1, 1, self.N0)

    def f(self, x):
        x = np.asarray(x, dtype=float)
        out = np.full(x.shape, 3.0 * self.d0)
        low = x <= self.R0
        out[low] = self.a1 - self.gaps[self.segment(x[low]) - 1]
        mid = (x > self.R0) & (x <= self.R_star)
        out[mid] = 3.0 * self.d0 - (3.0 * self.d0 - self.a1) * (self.R_star - x[mid]) / (self.R_star - self.R0)
        return out if out.ndim else float(out)

    def f_K(self, dist, n1, n2):
        """f_K from the distance and the two norms (vectorised)."""
        dist = np.asarray(dist, dtype=float)
        far = self.f(np.maximum(n1, n2))
        out = np.where(dist <= self.d0, dist, far)
        return out if out.ndim else float(out)


def build_kantorovich_f(gamma: float, beta: float, R_star: float, d0: float, p: float,
                        p1: float | None = None, a2: float | None = None) -> KantorovichDensity:
    """Construct f with a_1 = 2.5 d0 and a_n = a_1 − (a_1 − a_2) p1^{−(n−2)} for n ≥ 2.

    Without ``a2`` the gap is a_1 − a_2 = (d0/10) p1^{N0−2}, which puts the
    smallest step at a_N0 = 2.4 d0.
    """
    if not 0.0 < gamma < 1.0:
        raise ValueError("gamma must lie in (0, 1)")
    if not beta > 0:
        raise ValueError("beta must be positive")
    p1 = 0.5 * p if p1 is None else p1
    if not 0.0 < p1 < p < 1.0:
        raise ValueError("need 0 < p1 < p < 1")
    R0 = beta / (1.0 - gamma)
    if not 0.0 < d0 <= 2.0 * R0:
        raise ValueError("d0 must lie in (0, 2 beta/(1 - gamma)]")
    if not R_star > R0:
        raise ValueError(f"R_star must exceed beta/(1 - gamma) = {R0:.6g}")
    a = 0.5 * (1.0 + gamma)
    N0 = int(math.floor((math.log(2.0 * R0) + math.log(1.0 / d0)) / math.log(1.0 / a))) + 1
    a1 = 2.5 * d0
    n = np.arange(1, N0 + 1)
    if a2 is None:
        log_gap = math.log(d0 / 10.0) + (N0 - 2) * math.log(p1)
    else:
        if not a2 < a1:
            raise ValueError("a2 must be below a1 = 2.5 d0")
        log_gap = math.log(a1 - a2)
    log_gaps = np.where(n >= 2, log_gap - (n - 2) * math.log(p1), -np.inf)
    if N0 >= 2 and log_gaps[-1] >= math.log(a1):
        largest = a1 * p1 ** (N0 - 2)
        raise ValueError(f"a2 too small: a_{N0} <= 0; largest feasible gap a1 - a2 is {largest:.6g}")
    return KantorovichDensity(gamma, beta, R_star, d0, p, p1, N0, log_gaps)


def _norm_index(u: SpectralField) -> int:
    return 2 if u.kind == SCALAR else 1


def f_K_eval(kd: KantorovichDensity, xi1: SpectralField, xi2: SpectralField,
             sobolev_index: int | None = None) -> float:
    """‖ξ1 − ξ2‖ if at most d0, else f(max(‖ξ1‖, ‖ξ2‖)), in the state norm."""
    m = _norm_index(xi1) if sobolev_index is None else sobolev_index
    d = sobolev_norm(xi1 - xi2, m)
    return float(kd.f_K(d, sobolev_norm(xi1, m), sobolev_norm(xi2, m)))


# ---------------------------------------------------------------- calibration

@dataclass
class Dissipativity:
    """‖S(u, η)‖ ≤ γ‖u‖ + β with γ from the slowest linear decay and β measured."""

    gamma: float
    beta: float
    beta_raw: float
    samples: int

    @property
    def R0(self) -> float:
        return self.beta / (1.0 - self.gamma)


def slowest_decay(cfg: FlowConfig) -> float:
    """Smallest decay rate of the linear part on retained modes."""
    return cfg.viscosity if cfg.model == "nse" else cfg.gamma


def estimate_dissipativity(model: FlowModel, rng: np.random.Generator, n: int = 40,
                           radii=(0.0, 0.5, 1.0, 2.0, 3.0), safety: float = 1.5) -> Dissipativity:
    """γ = exp(−λ_min); β = safety × max(‖S(u,η)‖ − γ‖u‖) over samples.

    Radii are multiples of the largest response from rest, max ‖S(0, η)‖.
    """
    gamma = math.exp(-slowest_decay(model.cfg))
    n0 = model.norm(model.flow(model.zeros(n), model.sample_noise(rng, n)))
    scale = float(n0.max())
    excess = [float(n0.max())]
    for rad in radii:
        if rad == 0.0:
            continue
        X = model.random_directions(rng, n) * (rad * scale)
        Y = model.flow(X, model.sample_noise(rng, n))
        excess.append(float(np.max(model.norm(Y) - gamma * rad * scale)))
    raw = max(max(excess), 1e-12)
    return Dissipativity(gamma, safety * raw, raw, n * len(radii))


def estimate_small_set_probability(model: FlowModel, gamma: float, d0: float, R_star: float,
                                   rng: np.random.Generator, bins: int = 6, n: int = 40,
                                   floor: float = 0.01) -> tuple[float, list]:
    """min over radius bins of P(‖S(u, η)‖ < a‖u‖), a = (1+γ)/2, floored.

    Returns ``(p, rows)`` with rows (r_lo, r_hi, fraction).
    """
    a = 0.5 * (1.0 + gamma)
    edges = np.geomspace(0.5 * d0, R_star, bins + 1)
    rows = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        rad = rng.uniform(lo, hi, n)
        X = model.random_directions(rng, n) * rad[:, None, None]
        Y = model.flow(X, model.sample_noise(rng, n))
        frac = float(np.mean(model.norm(Y) < a * rad))
        rows.append((float(lo), float(hi), frac))
    p = max(floor, min(r[2] for r in rows))
    return min(p, 0.99), rows


def fit_slope_through_origin(x, y) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return float(np.sum(x * y) / np.sum(x * x))


def tv_envelope_slope(rows, z: float = 2.0) -> float:
    """Smallest C with mean + z·stderr <= C·d in every row (d, mean, n, stderr)."""
    return float(max((m + z * se) / d for d, m, _, se in rows))


def tv_sample(engine: CouplingEngine, X, Xp, eta) -> float:
    """1 − min(1, p/q) at ζ₂ = Ψ(η); its mean over η ~ ℓ is ‖ℓ − Ψ_*ℓ‖_TV."""
    m = engine.model
    M = engine.params.M
    cmap = engine.control_map(X, Xp)
    pt = cmap.point(eta)
    z = (eta + pt.phi)[:M]
    rz = float(np.prod(m.density.pdf(z)))
    if rz == 0.0:
        return 1.0
    J = cmap.jacobian(eta, pt)
    ratio = rz * abs(np.linalg.det(np.eye(M) + J)) / float(np.prod(m.density.pdf(eta[:M])))
    return 1.0 - min(1.0, ratio)


@dataclass
class EngineCalibration:
    """Constants fixed by :func:`calibrate_engine` and the tables behind them."""

    eps: float
    r: float
    M: int
    variant: str
    C_eps: float
    delta: float
    C1: float
    d0: float
    gamma: float
    beta: float
    R0: float
    R_star: float
    p: float
    p1: float
    inverse_table: list
    monotone: bool
    squeeze_table: list
    tv_table: list
    small_set_table: list
    lipschitz: float
    squeeze_feasible: bool = True

    def summary(self) -> dict:
        keys = ("eps", "r", "M", "variant", "C_eps", "delta", "C1", "d0", "gamma", "beta",
                "R0", "R_star", "p", "p1", "lipschitz", "monotone", "squeeze_feasible")
        return {k: getattr(self, k) for k in keys}


def _test_fields(model: FlowModel, rng, X, eta, n_test):
    """Images f = D_uS h of random unit directions, and their V-norms."""
    base = record_base(X, eta, model.cfg, model.spec, model.basis)
    H = model.vec(model.random_directions(rng, n_test))
    A, D = linearize(base, h_vecs=H)
    C = model.coords
    F = D.T
    wV = C.weights * np.concatenate([1 + C.kabs**2] * 2)
    vn = np.sqrt(np.sum(wV * F**2, axis=1))
    op = TangentOperator(A, C.weights.copy(), np.ones(model.noise_dim), base, C)
    return op, F, vn


def calibrate_engine(cfg: FlowConfig, spec: NoiseSpec, eps: float, seed: int = 0, *,
                     variant: str = "projected", clamp: float | None = None,
                     n_bases: int = 3, n_test: int = 20, n_gain: int = 100, gain_safety: float = 1.25,
                     n_squeeze: int = 200, squeeze_quantile: float = 0.99, n_lip: int = 3,
                     max_halvings: int = 8,
                     n_tv: int = 100, n_diss: int = 40, beta_safety: float = 1.5,
                     R_star_factor: float = 1.25, p_floor: float = 0.01):
    """Fix (r, M), C_ε, δ, Ĉ₁, d0, (γ, β), R_* and p, in that order.

    Returns ``(engine, kdensity, calibration)``.  Raises
    :class:`CalibrationError` when no lattice point reaches ``eps``.
    """
    model = FlowModel(cfg, spec)
    if clamp is None and cfg.model == "cgl":
        clamp = 2.0
    rng = rng_stream(seed, 101)
    # right inverse on test images at a few base points
    pool = model.chain_states(rng, max(n_bases, 8))
    tables = []
    for b in range(n_bases):
        op, F, vn = _test_fields(model, rng, pool[b], model.sample_noise(rng), n_test)
        cal = calibrate_inverse(op, F, vn, eps, norm_estimates=False, variant=variant)
        tables.append(cal.table)
    table = [(r, M, max(t[i][2] for t in tables), float("nan")) for i, (r, M, _, _) in enumerate(tables[0])]
    mono = lattice_monotonicity(table)["monotone"]
    chosen = next(((r, M) for r, M, d, _ in table if d <= eps), None)
    if chosen is None:
        raise CalibrationError(min(row[2] for row in table), eps)
    r, M = chosen
    params = ControlParams(r, M, variant, clamp=clamp)
    engine = CouplingEngine(model, params, delta=1.0, C_eps=1.0, d0=1.0, eps=eps)

    # control gain
    idx = rng.integers(0, pool.shape[0], n_gain)
    X = pool[idx]
    Hd = model.random_directions(rng, n_gain)
    etas = model.sample_noise(rng, n_gain)
    X1, A, f = _linear_data(model, X, etas, model.vec(Hd), _control_columns(model, params))
    phi = _phi_from_linear(model, params, A, f)
    C_eps = gain_safety * float(np.max(np.linalg.norm(phi, axis=1)))
    delta = 0.5 / C_eps
    if clamp is not None:
        delta = min(delta, (clamp - 1.0) / C_eps)

    # shrink δ until the squeeze and the Lipschitz bound of Φ_w hold
    squeeze_rows = []
    lip = float("nan")
    squeeze_ok = False
    for _ in range(max_halvings + 1):
        engine.delta = delta
        idx = rng.integers(0, pool.shape[0], n_squeeze)
        X = pool[idx]
        dist = delta * rng.random(n_squeeze)
        Xp = X + model.random_directions(rng, n_squeeze) * dist[:, None, None]
        ratio, _, _ = squeeze_batch(engine, X, Xp, model.sample_noise(rng, n_squeeze))
        frac = float(np.mean(ratio <= 0.5))
        lips = []
        for k in range(n_lip):
            Xk = pool[k % pool.shape[0]]
            Xpk = Xk + model.random_directions(rng, 1)[0] * delta
            lips.append(np.linalg.norm(engine.control_map(Xk, Xpk).jacobian(model.sample_noise(rng)), 2))
        lip = float(max(lips))
        squeeze_rows.append((delta, frac, float(np.quantile(ratio, squeeze_quantile)), lip))
        if frac >= squeeze_quantile and lip <= 0.5:
            squeeze_ok = True
            break
        delta *= 0.5
    if not squeeze_ok:
        # shrinking did not help: the linear defect dominates; keep the largest admissible radius
        delta = next((row[0] for row in squeeze_rows if row[3] <= 0.5), squeeze_rows[-1][0])
        engine.delta = delta

    # total variation against distance
    tv_rows = []
    for frac_d in (0.125, 0.25, 0.5):
        d = frac_d * delta
        vals = []
        for k in range(n_tv):
            Xk = pool[rng.integers(0, pool.shape[0])]
            Xpk = Xk + model.random_directions(rng, 1)[0] * d
            vals.append(tv_sample(engine, Xk, Xpk, model.sample_noise(rng)))
        tv_rows.append((d, float(np.mean(vals)), n_tv, float(np.std(vals) / math.sqrt(n_tv))))
    C1 = max(tv_envelope_slope(tv_rows), 1e-12)

    diss = estimate_dissipativity(model, rng, n_diss, safety=beta_safety)
    d0 = min(delta, 1.0 / (10.0 * C1), 2.0 * diss.R0)
    R_star = R_star_factor * diss.R0
    p, p_rows = estimate_small_set_probability(model, diss.gamma, d0, R_star, rng, floor=p_floor)
    kd = build_kantorovich_f(diss.gamma, diss.beta, R_star, d0, p)

    engine.C_eps, engine.delta, engine.d0, engine.C1 = C_eps, delta, d0, C1
    calib = EngineCalibration(eps, r, M, variant, C_eps, delta, C1, d0, diss.gamma, diss.beta,
                              diss.R0, R_star, p, kd.p1, table, mono, squeeze_rows, tv_rows,
                              p_rows, lip, squeeze_ok)
    return engine, kd, calib


__all__ = [
    "FlowModel", "ControlParams", "ControlMap", "ControlPoint", "ControlContext", "CouplingEngine",
    "CouplingOutcome", "CouplingError", "FixedPointError", "MaximalDraw", "phi_control",
    "psi_squeeze", "squeeze_batch", "pushforward_density", "maximal_coupling_sample",
    "coupled_step", "KantorovichDensity", "build_kantorovich_f", "f_K_eval", "Dissipativity",
    "estimate_dissipativity", "estimate_small_set_probability", "calibrate_engine",
    "EngineCalibration", "tv_sample", "tv_envelope_slope", "fit_slope_through_origin", "slowest_decay", "SNAP_TOL",
]
