"""Invariant and acceptance checks shared by ``mixforge verify-all`` and the test suite.

Each check returns :class:`Check` records.  Sizes come from a :class:`Scale`;
``FULL`` runs every check at its stated sample size and tolerance, ``QUICK``
uses smaller ensembles with the same tolerances.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np
from scipy import integrate, stats

from .coupling_engine import (
    FlowModel, KantorovichDensity, _test_fields, calibrate_engine, f_K_eval,
    maximal_coupling_sample, squeeze_batch,
)
from .fields import SpectralField, VELOCITY, SCALAR, l2_pairing, sobolev_norm, sobolev_weights
from .haar_noise import (
    TentDensity, haar_gram, haar_table, model_noise_spec, rng_stream, sample_noise_path,
)
from .mixing_harness import (
    DEFAULT_EPS, CalibratedEngine, MixingConfig, estimate_stationary, run_coupled_ensemble,
)
from .right_inverse import RightInverse, calibrate, lattice_monotonicity
from .spectral_models import FlowConfig, flow_map, model_basis
from .tangent_adjoint import (
    TangentOperator, adjoint_flow, assemble_A, base_from_fields, fd_check, tangent_flow,
)


@dataclass
class Check:
    criterion: int
    name: str
    value: float
    threshold: float
    passed: bool
    seconds: float = 0.0
    detail: str = ""

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return (f"[{tag}] criterion {self.criterion}: {self.name}  value={self.value:.6g}  "
                f"threshold={self.threshold:.6g}  ({self.seconds:.1f}s){'  ' + self.detail if self.detail else ''}")

    def row(self):
        return (self.criterion, self.name, self.value, self.threshold, int(self.passed), self.seconds)


CHECK_COLUMNS = ("criterion", "name", "value", "threshold", "passed", "seconds")


@dataclass(frozen=True)
class Scale:
    ks_samples: int = 10_000
    squeeze_samples: int = 500
    tent_trials: int = 100_000
    near_trials: int = 1000
    sandwich_pairs: int = 10_000
    pairs: int = 256
    steps: int = 40
    decay_step: int = 20
    stationary_traj: int = 64
    stationary_window: int = 20
    rerun_pairs: int = 8
    rerun_steps: int = 8
    timed: bool = True


FULL = Scale()
QUICK = Scale(ks_samples=5000, squeeze_samples=100, tent_trials=20_000, near_trials=100, sandwich_pairs=10_000,
              pairs=24, steps=12, decay_step=8, stationary_traj=24, stationary_window=10,
              rerun_pairs=4, rerun_steps=4, timed=False)


class _Timer:
    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.seconds = time.perf_counter() - self.t0


def _runtime_check(criterion, limit, seconds, scale: Scale):
    return Check(criterion, "runtime_seconds", seconds, limit, (seconds < limit) or not scale.timed, seconds,
                 "" if scale.timed else "not enforced at this scale")


# ---------------------------------------------------------------- 1: noise

def check_noise(scale: Scale = FULL, seed: int = 0) -> list[Check]:
    out = []
    with _Timer() as t:
        J = 4
        orth = float(np.max(np.abs(haar_gram(J) - np.eye(2 ** (J + 1)))))
        for model in ("nse", "cgl"):
            cfg = FlowConfig(model=model)
            B = model_basis(cfg, model_noise_spec(model).I)
            w = sobolev_weights(cfg.grid_size, cfg.m)
            C = B.coeffs.reshape(B.count, -1, cfg.grid_size, cfg.grid_size)
            G = np.einsum("icxy,jcxy,xy->ij", np.conj(C), C, w).real
            orth = max(orth, float(np.max(np.abs(G - np.eye(B.count)))))
        out.append(Check(1, "orthonormality_max_error", orth, 1e-12, orth <= 1e-12))

        rng = rng_stream(seed, 1)
        T = haar_table(J)
        a = rng.standard_normal(T.shape[0])
        f = a @ T
        pars = abs(np.mean(f**2) - np.sum(a**2)) / np.sum(a**2)
        out.append(Check(1, "parseval_relative_error", pars, 1e-10, pars <= 1e-10))

        spec = model_noise_spec("nse", J=2)
        viol = 0
        for _ in range(200):
            path = sample_noise_path(spec, rng)
            viol += int(np.sum(np.abs(path.xi) > 1.0))
        out.append(Check(1, "brick_violations", viol, 0, viol == 0))

        dens = TentDensity(spec.density_slope)
        x = dens.sample(rng, scale.ks_samples)
        p = stats.kstest(x, dens.cdf).pvalue
        out.append(Check(1, "coefficient_ks_pvalue", p, 0.01, p > 0.01))
    out.append(_runtime_check(1, 10.0, t.seconds, scale))
    return out


# ---------------------------------------------------------------- 2: solver

def _mode_field(kind, N, k, amp, comp=None):
    if kind == VELOCITY:
        # shear u = (sin(k y), 0): coefficients at ±k on the first component
        c = np.zeros((2, N, N), complex)
        c[0, 0, k % N] = amp / (2j)
        c[0, 0, (-k) % N] = -amp / (2j)
        return SpectralField.zeros(kind, N).with_coeffs(c)
    c = np.zeros((N, N), complex)
    c[0, 0] = amp
    return SpectralField.zeros(kind, N).with_coeffs(c)


def check_solver(scale: Scale = FULL, seed: int = 0) -> list[Check]:
    out = []
    with _Timer() as t:
        cfg = FlowConfig()
        u0 = _mode_field(VELOCITY, cfg.grid_size, 1, 1.0)
        u1 = flow_map(u0, None, cfg)
        ratio = sobolev_norm(u1, 0) / sobolev_norm(u0, 0)
        err = abs(ratio / math.exp(-cfg.viscosity) - 1.0)
        out.append(Check(2, "shear_decay_relative_error", err, 1e-8, err <= 1e-8))

        cg = FlowConfig(model="cgl", substeps=64)
        c0 = _mode_field(SCALAR, cg.grid_size, 0, 0.5)
        c1 = flow_map(c0, None, cg)
        mod = abs(c1.coeffs[0, 0]) / 0.5
        err = abs(mod / math.exp(-cg.gamma) - 1.0)
        out.append(Check(2, "cgl_constant_mode_relative_error", err, 1e-8, err <= 1e-8))

        spec = model_noise_spec("nse")
        rng = rng_stream(seed, 2)
        m = FlowModel(cfg, spec)
        X = m.chain_states(rng, 4)
        div = max(m.field(x).divergence_residual() for x in X)
        out.append(Check(2, "divergence_residual", div, 1e-12, div < 1e-12))

        path = sample_noise_path(spec, rng)
        u = m.field(X[0])
        ref = flow_map(u, path, cfg.with_(substeps=256))
        errs = [sobolev_norm(flow_map(u, path, cfg.with_(substeps=n)) - ref, 1) for n in (4, 8, 16, 32)]
        ratios = [errs[i] / errs[i + 1] for i in range(3)]
        out.append(Check(2, "step_halving_min_ratio", min(ratios), 1.8, min(ratios) >= 1.8,
                         detail="ratios=" + ",".join(f"{r:.2f}" for r in ratios)))
    out.append(_runtime_check(2, 120.0, t.seconds, scale))
    return out


# ---------------------------------------------------------------- 3: derivatives

def check_derivatives(scale: Scale = FULL, seed: int = 0) -> list[Check]:
    out = []
    with _Timer() as t:
        eps_list = [1e-2, 5e-3, 2e-3, 1e-3, 5e-4, 2e-4, 1e-4]
        worst_var, worst_pair, worst_mat = 0.0, 0.0, 0.0
        for model in ("nse", "cgl"):
            cfg = FlowConfig(model=model)
            spec = model_noise_spec(model)
            m = FlowModel(cfg, spec)
            rng = rng_stream(seed, 3, 0 if model == "nse" else 1)
            u = m.field(m.chain_states(rng, 1)[0])
            path = sample_noise_path(spec, rng)
            h = m.field(m.random_directions(rng, 1)[0])
            dxi = rng.standard_normal(spec.dim)
            dxi /= np.linalg.norm(dxi)
            for wrt, d in (("u", h), ("eta", dxi)):
                r = np.array([row[2] for row in fd_check(u, path, cfg, d, eps_list, wrt)])
                worst_var = max(worst_var, r.max() / r.min() - 1.0)
            base = base_from_fields(u, path, cfg)
            w1 = m.field(m.random_directions(rng, 1)[0])
            adj = adjoint_flow(u, path, w1, cfg, base)
            v1 = tangent_flow(u, path, h, np.zeros(spec.dim), cfg, base)
            lhs, rhs = l2_pairing(v1, w1), l2_pairing(h, adj.at(0.0))
            worst_pair = max(worst_pair, abs(lhs - rhs) / max(abs(lhs), 1e-300))
            vx = tangent_flow(u, path, None, dxi, cfg, base)
            lhs, rhs = l2_pairing(vx, w1), float(adj.noise_gradient @ dxi)
            worst_pair = max(worst_pair, abs(lhs - rhs) / max(abs(lhs), 1e-300))
            A = assemble_A(u, path, cfg, base=base)
            scale_A = np.max(np.abs(A.matrix))
            for k in range(spec.dim):
                e = np.zeros(spec.dim)
                e[k] = 1.0
                col = A.from_field(tangent_flow(u, path, None, e, cfg, base))
                worst_mat = max(worst_mat, float(np.max(np.abs(col - A.matrix[:, k]))) / scale_A)
        out.append(Check(3, "fd_remainder_variation", worst_var, 0.25, worst_var < 0.25))
        out.append(Check(3, "pairing_relative_error", worst_pair, 1e-8, worst_pair <= 1e-8))
        out.append(Check(3, "matrix_operator_relative_error", worst_mat, 1e-9, worst_mat <= 1e-9))
    out.append(_runtime_check(3, 300.0, t.seconds, scale))
    return out


# ---------------------------------------------------------------- 4: right inverse

def _synthetic_operator(diag):
    n = diag.size
    return TangentOperator(np.diag(diag), np.ones(n), np.ones(n))


def check_right_inverse(scale: Scale = FULL, seed: int = 0) -> list[Check]:
    out = []
    with _Timer() as t:
        rng = rng_stream(seed, 4)
        n = 12
        f = rng.standard_normal((5, n))
        err = 0.0
        for r in (1.0, 1e-2, 1e-5):
            R = RightInverse(_synthetic_operator(np.ones(n)), r, n)
            expect = r / (1 + r) * np.linalg.norm(f, axis=1)
            err = max(err, float(np.max(np.abs(R.defect(f) - expect))))
            sig = np.linspace(0.1, 2.0, n)
            R = RightInverse(_synthetic_operator(sig), r, n)
            res = (R.op.matrix @ R.apply(f).T).T - f
            err = max(err, float(np.max(np.abs(res - (-r / (sig**2 + r)) * f))))
        out.append(Check(4, "closed_form_defect_error", err, 1e-12, err <= 1e-12))

        cfg = FlowConfig()
        spec = model_noise_spec("nse")
        m = FlowModel(cfg, spec)
        X = m.chain_states(rng, 1)[0]
        A, F, vn = _test_fields(m, rng, X, m.sample_noise(rng), 20)
        eps = DEFAULT_EPS["nse"]
        cal = calibrate(A, F, vn, eps, norm_estimates=False)
        mono = lattice_monotonicity(cal.table)
        nviol = len(mono["r_violations"]) + len(mono["M_violations"])
        out.append(Check(4, "lattice_monotonicity_violations", nviol, 0, nviol == 0))
        got = cal.lookup(cal.chosen.r, cal.chosen.M) if cal.feasible else cal.best_ratio
        out.append(Check(4, "calibrated_defect_ratio", got, eps, cal.feasible and got <= eps,
                         detail=f"r={cal.chosen.r:g} M={cal.chosen.M}" if cal.feasible else "infeasible"))
    out.append(_runtime_check(4, 600.0, t.seconds, scale))
    return out


# ---------------------------------------------------------------- engines

_ENGINES: dict = {}


def engine_for(model: str, seed: int = 0) -> CalibratedEngine:
    """Calibrated engine for the default configuration of ``model`` (cached per process)."""
    key = (model, seed)
    if key not in _ENGINES:
        eng, kd, cal = calibrate_engine(FlowConfig(model=model), model_noise_spec(model), DEFAULT_EPS[model],
                                        seed=seed)
        _ENGINES[key] = CalibratedEngine(eng, kd, cal)
    return _ENGINES[key]


# ---------------------------------------------------------------- 5: squeezing

def squeeze_fraction(ce: CalibratedEngine, n: int, seed: int):
    eng = ce.engine
    m = eng.model
    rng = rng_stream(seed, 5)
    pool = m.chain_states(rng, 16)
    X = pool[rng.integers(0, pool.shape[0], n)]
    d = eng.delta * rng.random(n)
    Xp = X + m.random_directions(rng, n) * d[:, None, None]
    ratios = []
    for s in range(0, n, 100):
        r, _, _ = squeeze_batch(eng, X[s:s + 100], Xp[s:s + 100], m.sample_noise(rng, min(100, n - s)))
        ratios.append(r)
    r = np.concatenate(ratios)
    return float(np.mean(r <= 0.5)), r


def check_squeezing(scale: Scale = FULL, seed: int = 0) -> list[Check]:
    out = []
    with _Timer() as t:
        for model in ("nse", "cgl"):
            ce = engine_for(model, seed)
            frac, r = squeeze_fraction(ce, scale.squeeze_samples, seed)
            out.append(Check(5, f"{model}_squeeze_fraction", frac, 0.99, frac >= 0.99,
                             detail=f"delta={ce.engine.delta:.4g} q99={np.quantile(r, 0.99):.3f}"))
    out.append(_runtime_check(5, 1800.0, t.seconds, scale))
    return out


# ---------------------------------------------------------------- 6: coupling

def tent_tv_quadrature(slope: float, shift: float) -> float:
    dens = TentDensity(slope)
    g = lambda x: abs(dens.pdf(x) - dens.pdf(x - shift))
    pts = sorted({-1.0, 0.0, 1.0, shift - 1.0, shift, shift + 1.0})
    val, _ = integrate.quad(g, -1.0, 1.0 + shift, points=pts, limit=200)
    return 0.5 * val


def tent_coupling_rate(slope: float, shift: float, trials: int, seed: int):
    """Empirical P(x ≠ y) of the maximal coupling of ρ and ρ(· − shift), and both marginals."""
    dens = TentDensity(slope)
    rng = rng_stream(seed, 6, 1)
    xs, ys, neq = np.empty(trials), np.empty(trials), 0
    p = lambda z: float(dens.pdf(z))
    q = lambda z: float(dens.pdf(z - shift))
    for i in range(trials):
        d = maximal_coupling_sample(p, q, lambda g: float(dens.sample(g)),
                                    lambda g: float(dens.sample(g)) + shift, rng)
        xs[i], ys[i] = d.x, d.y
        neq += not d.equal
    return neq / trials, xs, ys


def near_branch_trials(ce: CalibratedEngine, d: float, trials: int, seed: int, key: int):
    eng, kd = ce.engine, ce.kd
    m = eng.model
    rng = rng_stream(seed, 6, 2, key)
    pool = m.chain_states(rng, 16)
    hits, zetas, etas = 0, [], []
    for i in range(trials):
        X = pool[i % pool.shape[0]]
        Xp = X + m.random_directions(rng, 1)[0] * d
        o = eng.step(X, Xp, rng_stream(seed, 6, 3, key, i), d0=kd.d0)
        hits += o.distance_after <= 0.5 * d
        zetas.append(o.eta_p[: eng.params.M])
        etas.append(o.eta[: eng.params.M])
    return hits / trials, np.concatenate(zetas), np.concatenate(etas)


def check_coupling(scale: Scale = FULL, seed: int = 0, model: str = "nse") -> list[Check]:
    out = []
    with _Timer() as t:
        tv = tent_tv_quadrature(0.0, 0.3)
        rate, xs, ys = tent_coupling_rate(0.0, 0.3, scale.tent_trials, seed)
        out.append(Check(6, "tent_tv_abs_error", abs(rate - tv), 0.01, abs(rate - tv) <= 0.01,
                         detail=f"tv={tv:.4f} empirical={rate:.4f}"))
        dens = TentDensity(0.0)
        p_tent = min(stats.kstest(xs, dens.cdf).pvalue, stats.kstest(ys - 0.3, dens.cdf).pvalue)
        out.append(Check(6, "tent_marginal_ks_pvalue", p_tent, 0.01, p_tent > 0.01))

        ce = engine_for(model, seed)
        C1, d0 = ce.engine.C1, ce.kd.d0
        pooled_z, pooled_e = [], []
        for j, frac in enumerate((0.125, 0.25, 0.5)):
            d = frac * d0
            prob, z, e = near_branch_trials(ce, d, scale.near_trials, seed, j)
            pooled_z.append(z)
            pooled_e.append(e)
            bound = 1 - C1 * d
            out.append(Check(6, f"near_branch_probability_d0x{frac:g}", prob, bound, prob >= bound,
                             detail=f"C1={C1:.4g} d={d:.4g}"))
        dens = ce.engine.model.density
        pz = stats.kstest(np.concatenate(pooled_z), dens.cdf).pvalue
        pe = stats.kstest(np.concatenate(pooled_e), dens.cdf).pvalue
        out.append(Check(6, "coupled_noise_marginal_ks_pvalue", min(pz, pe), 0.01, min(pz, pe) > 0.01))
    out.append(_runtime_check(6, 1800.0, t.seconds, scale))
    return out


# ---------------------------------------------------------------- 7: Kantorovich density

def sandwich_violations(kd: KantorovichDensity, n: int, seed: int, dim: int = 16):
    """Count pairs in the ball of radius R_* violating ‖ξ−ξ′‖∧d0 ≤ f_K ≤ 3‖ξ−ξ′‖."""
    rng = rng_stream(seed, 7)
    R = kd.R_star
    e1 = rng.standard_normal((n, dim))
    e1 /= np.linalg.norm(e1, axis=1, keepdims=True)
    e2 = rng.standard_normal((n, dim))
    e2 /= np.linalg.norm(e2, axis=1, keepdims=True)
    a = e1 * (R * rng.random(n))[:, None]
    dist = np.exp(rng.uniform(math.log(1e-4 * kd.d0), math.log(2 * R), n))
    b = a + e2 * dist[:, None]
    nb = np.linalg.norm(b, axis=1)
    b = np.where((nb > R)[:, None], b * (R / nb)[:, None], b)
    d = np.linalg.norm(a - b, axis=1)
    fk = kd.f_K(d, np.linalg.norm(a, axis=1), np.linalg.norm(b, axis=1))
    bad = (fk < np.minimum(d, kd.d0) * (1 - 1e-15)) | (fk > 3 * d * (1 + 1e-15))
    return int(bad.sum()), n


def check_kantorovich(scale: Scale = FULL, seed: int = 0, model: str = "nse") -> list[Check]:
    out = []
    with _Timer() as t:
        kd = engine_for(model, seed).kd
        a1 = float(kd.table[0])
        out.append(Check(7, "a1_minus_2.5d0", abs(a1 - 2.5 * kd.d0), 0.0, a1 == 2.5 * kd.d0))
        marg = kd.relation_margins()
        out.append(Check(7, "relation_min_margin", float(marg.min()) if marg.size else 1.0, 0.0,
                         bool(np.all(marg > 0)), detail=f"N0={kd.N0}"))
        x = np.concatenate([np.geomspace(0.5 * kd.d0 * (1 + 1e-12), kd.R_star, 20001), [kd.R_star]])
        fx = kd.f(x)
        ok = bool(np.all((fx > 2 * kd.d0) & (fx <= 3 * kd.d0)))
        out.append(Check(7, "f_range_min_over_d0", float(fx.min() / kd.d0), 2.0, ok))
        fr = float(kd.f(kd.R_star))
        out.append(Check(7, "f_at_R_star_minus_3d0", abs(fr - 3 * kd.d0), 0.0, fr == 3 * kd.d0))
        nbad, n = sandwich_violations(kd, scale.sandwich_pairs, seed)
        m = engine_for(model, seed).engine.model
        rng = rng_stream(seed, 7, 1)
        X = m.chain_states(rng, 20, steps=2)
        for i in range(10):
            u, v = m.field(X[2 * i]), m.field(X[2 * i + 1])
            d = sobolev_norm(u - v, m.cfg.m)
            fk = f_K_eval(kd, u, v)
            nbad += int(not (min(d, kd.d0) <= fk <= 3 * d))
        out.append(Check(7, "sandwich_violations", nbad, 0, nbad == 0, detail=f"pairs={n + 10}"))
    out.append(_runtime_check(7, 600.0, t.seconds, scale))
    return out


# ---------------------------------------------------------------- 8: mixing

def mixing_config(scale: Scale, seed: int = 0) -> MixingConfig:
    return MixingConfig(flow=FlowConfig(), n_pairs=scale.pairs, steps=scale.steps, seed=seed)


def check_mixing(scale: Scale = FULL, seed: int = 0, report_out: list | None = None) -> list[Check]:
    out = []
    with _Timer() as t:
        ce = engine_for("nse", seed)
        rep = run_coupled_ensemble(mixing_config(scale, seed), ce)
        if report_out is not None:
            report_out.append(rep)
        fit = rep.fit
        out.append(Check(8, "kappa", fit.kappa, 1.0, fit.kappa < 1.0))
        out.append(Check(8, "kappa_band_upper", fit.band[1], 1.0, fit.band[1] < 1.0,
                         detail=f"band=({fit.band[0]:.4g}, {fit.band[1]:.4g})"))
        k = min(scale.decay_step, rep.steps)
        ratio = float(rep.mean_fK[k] / rep.mean_fK[0])
        out.append(Check(8, f"mean_fK_ratio_step{k}", ratio, 0.2, ratio <= 0.2))
        gap = float(np.max(rep.lip_lower - rep.lip_upper))
        out.append(Check(8, "lip_lower_minus_upper_max", gap, 0.0, gap <= 0.0))
    out.append(_runtime_check(8, 7200.0, t.seconds, scale))
    return out


# ---------------------------------------------------------------- 9: stationarity

def check_stationary(scale: Scale = FULL, seed: int = 0, kappa: float | None = None) -> list[Check]:
    out = []
    with _Timer() as t:
        ce = engine_for("nse", seed)
        est = estimate_stationary(FlowConfig(), R_star=ce.kd.R_star, kappa=kappa or 0.0,
                                  window=scale.stationary_window, n_traj=scale.stationary_traj, seed=seed)
        out.append(Check(9, "moments_agree_fraction", float(np.mean(est.agree)), 1.0, est.all_agree,
                         detail=f"burn_in={est.burn_in}"))
        z = estimate_stationary(FlowConfig(), R_star=ce.kd.R_star, kappa=kappa or 0.0, window=5, n_traj=8,
                                seed=seed, zero_noise=True)
        mx = float(np.max(np.abs(z.means)))
        out.append(Check(9, "zero_noise_max_moment", mx, 1e-10, mx < 1e-10, detail=f"burn_in={z.burn_in}"))
    out.append(_runtime_check(9, 3600.0, t.seconds, scale))
    return out


# ---------------------------------------------------------------- 10: determinism

def _suite_outputs(scale: Scale, seed: int):
    """Small re-runnable outputs of every suite."""
    outs = []
    spec = model_noise_spec("nse")
    outs.append(sample_noise_path(spec, rng_stream(seed, 10)).xi)
    cfg = FlowConfig()
    m = FlowModel(cfg, spec)
    outs.append(m.chain_states(rng_stream(seed, 11), 3))
    u = m.field(outs[-1][0])
    path = sample_noise_path(spec, rng_stream(seed, 12))
    outs.append(assemble_A(u, path, cfg).matrix)
    eng, kd, cal = calibrate_engine(cfg, spec, DEFAULT_EPS["nse"], seed=seed, n_bases=1, n_test=8, n_gain=10,
                                    n_squeeze=20, n_lip=1, n_tv=5, n_diss=8)
    outs.append(np.array([cal.C_eps, cal.delta, cal.C1, cal.d0, cal.beta, cal.p]))
    ce = CalibratedEngine(eng, kd, cal)
    rep = run_coupled_ensemble(MixingConfig(n_pairs=scale.rerun_pairs, steps=max(8, scale.rerun_steps),
                                            seed=seed, n_boot=20), ce)
    outs.extend([rep.fK, rep.dist, rep.lip_lower])
    est = estimate_stationary(cfg, R_star=kd.R_star, burn_in=2, window=3, n_traj=4, seed=seed)
    outs.append(est.means)
    return outs


def check_determinism(scale: Scale = FULL, seed: int = 0) -> list[Check]:
    with _Timer() as t:
        a = _suite_outputs(scale, seed)
        b = _suite_outputs(scale, seed)
        same = all(x.shape == y.shape and x.tobytes() == y.tobytes() for x, y in zip(a, b))
        n_diff = sum(not (x.shape == y.shape and x.tobytes() == y.tobytes()) for x, y in zip(a, b))
    return [Check(10, "bitwise_mismatched_outputs", n_diff, 0, same, t.seconds, f"outputs={len(a)}")]


SUITES = {
    1: check_noise, 2: check_solver, 3: check_derivatives, 4: check_right_inverse, 5: check_squeezing,
    6: check_coupling, 7: check_kantorovich, 8: check_mixing, 9: check_stationary, 10: check_determinism,
}


def run_all(scale: Scale = QUICK, seed: int = 0, criteria=None, echo=None) -> list[Check]:
    results = []
    kappa = None
    for c in (criteria or sorted(SUITES)):
        if c == 8:
            reps = []
            res = check_mixing(scale, seed, reps)
            kappa = reps[0].kappa
        elif c == 9:
            res = check_stationary(scale, seed, kappa)
        else:
            res = SUITES[c](scale, seed)
        for r in res:
            if echo:
                echo(r.line())
        results.extend(res)
    return results


__all__ = ["Check", "Scale", "FULL", "QUICK", "SUITES", "run_all", "engine_for", "CHECK_COLUMNS",
           "tent_tv_quadrature", "tent_coupling_rate", "sandwich_violations", "squeeze_fraction"]
