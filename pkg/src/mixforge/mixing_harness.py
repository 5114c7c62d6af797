"""Ensembles of coupled trajectories: decay of E f_K, stationary moments, dual-distance bounds.

Pairs evolve under the coupled kernel of :mod:`coupling_engine`.  Each
(pair, step) draws from its own random stream, so results do not depend on
the order in which pairs are processed.
"""
from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .coupling_engine import (
    CouplingEngine, EngineCalibration, FlowModel, KantorovichDensity, calibrate_engine, slowest_decay,
)
from .haar_noise import NoiseSpec, model_noise_spec, rng_stream
from .spectral_models import FlowConfig

# ε at which the default right inverse squeezes: M = 4 for nse, M = 8 for cgl
DEFAULT_EPS = {"nse": 0.5, "cgl": 0.55}
DISTANCE_SCHEDULE = (("delta", 2.0), ("delta", 1.0), ("delta", 0.25), ("d0", 0.5))

_STREAM_INIT = 7001
_STREAM_STAT = 7002
_STREAM_LIP = 7003
_STREAM_BOOT = 7004


@dataclass
class MixingConfig:
    """Ensemble experiment settings; ``noise=None`` selects the model default."""

    flow: FlowConfig = field(default_factory=FlowConfig)
    noise: NoiseSpec | None = None
    n_pairs: int = 256
    steps: int = 40
    eps: float | None = None
    seed: int = 0
    init_steps: int = 8
    distance_schedule: tuple = DISTANCE_SCHEDULE
    n_functionals: int = 64
    identical: bool = False
    n_boot: int = 100

    def __post_init__(self):
        if self.n_pairs < 1 or self.steps < 1:
            raise ValueError("n_pairs and steps must be positive")
        for ref, c in self.distance_schedule:
            if ref not in ("delta", "d0") or not c > 0:
                raise ValueError("distance schedule entries are ('delta' | 'd0', positive factor)")

    @property
    def noise_spec(self) -> NoiseSpec:
        return model_noise_spec(self.flow.model) if self.noise is None else self.noise

    @property
    def epsilon(self) -> float:
        return DEFAULT_EPS[self.flow.model] if self.eps is None else self.eps


@dataclass
class DecayFit:
    kappa: float
    band: tuple
    window: tuple
    floored: bool
    non_mixing: bool

    @property
    def inconclusive(self) -> bool:
        return self.non_mixing or not self.band[1] < 1.0


@dataclass
class MixingReport:
    """Per-pair series (n_pairs, K+1) and the summary quantities derived from them.

    ``glued[:, k]`` marks pairs whose step into k used equal noise for the
    shifted copy (an accepted maximal coupling) or started from equal states.
    """

    fK: np.ndarray
    dist: np.ndarray
    glued: np.ndarray
    lip_lower: np.ndarray
    lip_upper: np.ndarray
    fit: DecayFit
    d0: float
    R_star: float
    calibration: dict
    branch_counts: np.ndarray
    final_states: tuple = field(default=None, repr=False)

    @property
    def steps(self) -> int:
        return self.fK.shape[1] - 1

    @property
    def mean_fK(self) -> np.ndarray:
        return self.fK.mean(axis=0)

    @property
    def kappa(self) -> float:
        return self.fit.kappa

    def glue_times(self) -> np.ndarray:
        """First step from which each pair stays glued (K+1 when never glued)."""
        g = self.glued
        K1 = g.shape[1]
        # last step not glued, plus one
        tail = np.cumprod(g[:, ::-1], axis=1)[:, ::-1]
        t = np.argmax(tail, axis=1)
        return np.where(tail.any(axis=1), t, K1)

    def glue_histogram(self):
        t = self.glue_times()
        return np.bincount(t, minlength=self.fK.shape[1] + 1)

    def rows(self):
        q10, q90 = np.quantile(self.fK, [0.1, 0.9], axis=0)
        dmin = np.minimum(self.dist, self.d0)
        for k in range(self.fK.shape[1]):
            yield (k, float(self.mean_fK[k]), float(q10[k]), float(q90[k]), float(dmin[:, k].mean()),
                   float(self.glued[:, k].mean()), float(self.lip_lower[k]), float(self.lip_upper[k]))

    def summary(self) -> dict:
        out = {
            "kappa": self.fit.kappa, "kappa_lo": self.fit.band[0], "kappa_hi": self.fit.band[1],
            "fit_start": self.fit.window[0], "fit_stop": self.fit.window[1],
            "floored": self.fit.floored, "non_mixing": self.fit.non_mixing,
            "inconclusive": self.fit.inconclusive,
            "burn_in": burn_in_steps(self.fit.kappa),
            "d0": self.d0, "R_star": self.R_star,
        }
        out.update({f"cal_{k}": v for k, v in self.calibration.items()})
        return out


MIXING_COLUMNS = ("k", "mean_fK", "q10", "q90", "mean_dist", "glued_fraction", "lip_lower", "lip_upper")


# ---------------------------------------------------------------- decay fit

def _fit_window(y):
    """Tail half of the positive prefix of ``y``."""
    pos = np.nonzero(~(y > 0))[0]
    stop = int(pos[0]) if pos.size else y.size
    if stop < 4:
        stop = y.size
    start = stop // 2
    return start, stop


def _log_slope(y, start, stop, floor):
    k = np.arange(start, stop, dtype=float)
    z = np.log(np.maximum(y[start:stop], floor))
    return float(np.polyfit(k, z, 1)[0])


def fit_decay_rate(series, n_boot: int = 100, seed: int = 0, block: int = 4) -> DecayFit:
    """κ = exp(slope) of a least-squares fit of log mean against k over the tail half.

    ``series`` is either the per-step means (length ≥ 8) or a per-trajectory
    array (n, K+1) whose column means form the series; the 95% band then
    comes from resampling trajectories.  For a bare series the band comes
    from a moving-block bootstrap of the fit residuals.  Non-positive means
    are floored at the smallest normal float and flagged; the fit uses the
    tail half of the positive prefix.
    """
    arr = np.asarray(series, dtype=float)
    traj = arr.ndim == 2
    y = arr.mean(axis=0) if traj else arr
    if y.size < 8:
        raise ValueError("need at least 8 steps")
    floor = np.finfo(float).tiny
    floored = bool(np.any(~(y > 0)))
    start, stop = _fit_window(y)
    slope = _log_slope(y, start, stop, floor)
    kappa = math.exp(slope)
    rng = rng_stream(seed, _STREAM_BOOT)
    boot = np.empty(n_boot)
    if traj:
        n = arr.shape[0]
        for b in range(n_boot):
            yb = arr[rng.integers(0, n, n)].mean(axis=0)
            s0, s1 = _fit_window(yb)
            boot[b] = _log_slope(yb, s0, s1, floor)
    else:
        k = np.arange(start, stop, dtype=float)
        z = np.log(np.maximum(y[start:stop], floor))
        coef = np.polyfit(k, z, 1)
        fitted = np.polyval(coef, k)
        res = z - fitted
        L = res.size
        bl = min(block, L)
        for b in range(n_boot):
            starts = rng.integers(0, L - bl + 1, -(-L // bl))
            rb = np.concatenate([res[s:s + bl] for s in starts])[:L]
            boot[b] = np.polyfit(k, fitted + rb, 1)[0]
    lo, hi = np.exp(np.quantile(boot, [0.025, 0.975]))
    return DecayFit(kappa, (float(min(lo, kappa)), float(max(hi, kappa))), (start, stop), floored,
                    not kappa < 1.0)


def burn_in_steps(kappa: float, factor: float = 3.0) -> int:
    """factor × mixing time 1/|ln κ|, rounded up (0 for κ = 0, a large value for κ ≥ 1)."""
    if not kappa > 0:
        return 0
    if kappa >= 1:
        return 10**6
    return int(math.ceil(factor / abs(math.log(kappa))))


# ---------------------------------------------------------------- dual distance

def lip_dual_estimate(ens_a, ens_b, F: int = 64, rng: np.random.Generator | None = None,
                      directions=None, clip: float = 1.0) -> float:
    """Lower bound on the Lipschitz-dual distance between two empirical measures.

    Points are rows in orthonormal coordinates.  Each functional is
    g(x) = clip(⟨e, x⟩, −c, c) with a unit vector e, so |g| ≤ c and g is
    1-Lipschitz; the estimate is the largest |mean g(A) − mean g(B)| (at most
    2c apart by construction).
    """
    A = np.atleast_2d(np.asarray(ens_a, dtype=float))
    B = np.atleast_2d(np.asarray(ens_b, dtype=float))
    if A.shape != B.shape:
        raise ValueError("ensembles must have equal size and dimension")
    if directions is None:
        rng = np.random.default_rng(0) if rng is None else rng
        directions = rng.standard_normal((F, A.shape[1]))
    E = np.asarray(directions, dtype=float)
    E = E / np.linalg.norm(E, axis=1, keepdims=True)
    ga = np.clip(A @ E.T, -clip, clip).mean(axis=0)
    gb = np.clip(B @ E.T, -clip, clip).mean(axis=0)
    return float(np.max(np.abs(ga - gb)))


# ---------------------------------------------------------------- ensemble

@dataclass
class CalibratedEngine:
    engine: CouplingEngine
    kd: KantorovichDensity
    calibration: EngineCalibration | None


def calibrated_engine(cfg: MixingConfig) -> CalibratedEngine:
    eng, kd, cal = calibrate_engine(cfg.flow, cfg.noise_spec, cfg.epsilon, seed=cfg.seed)
    return CalibratedEngine(eng, kd, cal)


def initial_pairs(cfg: MixingConfig, ce: CalibratedEngine):
    """States u from a short chain run from rest, u′ = u + d·e with d cycling through the schedule."""
    m = ce.engine.model
    rng = rng_stream(cfg.seed, _STREAM_INIT)
    X = m.chain_states(rng, cfg.n_pairs, steps=cfg.init_steps)
    if cfg.identical:
        return X, X.copy()
    ref = {"delta": ce.engine.delta, "d0": ce.kd.d0}
    d = np.array([c * ref[r] for r, c in cfg.distance_schedule])
    d = np.resize(d, cfg.n_pairs)
    Xp = X + m.random_directions(rng, cfg.n_pairs) * d[:, None, None]
    norms = np.maximum(m.norm(X), m.norm(Xp))
    if np.any(norms > ce.kd.R_star):
        raise ValueError("initial pair outside the ball of radius R_star")
    return X, Xp


def _smooth_directions(m: FlowModel, rng, F):
    D = m.random_directions(rng, F)
    return m.sqrt_w * m.vec(D)


def run_coupled_ensemble(cfg: MixingConfig, ce: CalibratedEngine | None = None,
                         step_log: list | None = None) -> MixingReport:
    """Evolve ``cfg.n_pairs`` coupled pairs for ``cfg.steps`` steps and fit the decay of E f_K.

    ``step_log``, if given, receives the per-step coupling CSV rows of pair 0.
    """
    ce = calibrated_engine(cfg) if ce is None else ce
    eng, kd = ce.engine, ce.kd
    m = eng.model
    X, Xp = initial_pairs(cfg, ce)
    n, K = cfg.n_pairs, cfg.steps
    dirs = _smooth_directions(m, rng_stream(cfg.seed, _STREAM_LIP), cfg.n_functionals)
    fK = np.zeros((n, K + 1))
    dist = np.zeros((n, K + 1))
    glued = np.zeros((n, K + 1), dtype=bool)
    lip_lower = np.zeros(K + 1)
    lip_upper = np.zeros(K + 1)
    counts = np.zeros((K, 3), dtype=int)        # far, near, glued-before-step

    def record(k):
        d = m.norm(Xp - X)
        dist[:, k] = d
        fK[:, k] = kd.f_K(d, m.norm(X), m.norm(Xp))
        ya = m.sqrt_w * m.vec(X)
        yb = m.sqrt_w * m.vec(Xp)
        lip_lower[k] = lip_dual_estimate(ya, yb, directions=dirs)
        lip_upper[k] = kd.R_star / kd.d0 * fK[:, k].mean()

    record(0)
    for k in range(K):
        rngs = [rng_stream(cfg.seed, i, k) for i in range(n)]
        etas = np.stack([m.sample_noise(g) for g in rngs])
        d = dist[:, k]
        same = d == 0.0
        far = d > kd.d0
        near = ~same & ~far
        counts[k] = (far.sum(), near.sum(), same.sum())
        newX, newXp = X.copy(), Xp.copy()
        idx = np.nonzero(same | far)[0]
        if idx.size:
            Y = m.flow(np.concatenate([X[idx], Xp[idx[far[idx]]]]),
                       np.concatenate([etas[idx], etas[idx[far[idx]]]]))
            newX[idx] = Y[: idx.size]
            newXp[idx] = Y[: idx.size]
            newXp[idx[far[idx]]] = Y[idx.size:]
        for i in np.nonzero(near)[0]:
            out = eng.step(X[i], Xp[i], rng_stream(cfg.seed, i, k), d0=kd.d0)
            newX[i], newXp[i] = out.u1, out.u1p
            glued[i, k + 1] = out.glued_equal
            if step_log is not None and i == 0:
                step_log.append(out.csv_row(k))
        if step_log is not None and not near[0]:
            d1 = float(m.norm(newXp[0] - newX[0]))
            branch = "far" if far[0] else "near"
            step_log.append((k, branch, float(d[0]), d1, d1 / d[0] if d[0] > 0 else 0.0,
                             int(same[0]), float("nan") if far[0] else 0.0, 0))
        glued[same, k + 1] = True
        X, Xp = newX, newXp
        record(k + 1)

    fit = fit_decay_rate(fK, n_boot=cfg.n_boot, seed=cfg.seed)
    summary = ce.calibration.summary() if ce.calibration is not None else {}
    return MixingReport(fK, dist, glued, lip_lower, lip_upper, fit, kd.d0, kd.R_star, summary,
                        counts, (X, Xp))


# ---------------------------------------------------------------- stationary moments

def _sobolev_weights(m: FlowModel, s: float):
    S = m.solver
    return S.state_weight * (1 + S.ksq) ** (s - m.cfg.m)


def observables(m: FlowModel, X, shells: int = 6):
    """‖u‖₀², ‖u‖₁² and the L² energy in shells |k| ∈ [s − ½, s + ½), s = 1..shells."""
    S = m.solver
    P = np.abs(X) ** 2
    w0 = _sobolev_weights(m, 0)
    w1 = _sobolev_weights(m, 1)
    out = [np.sum(w0 * P, axis=(-2, -1)), np.sum(w1 * P, axis=(-2, -1))]
    shell = np.rint(np.sqrt(S.ksq))
    for s in range(1, shells + 1):
        out.append(np.sum(np.where(shell == s, w0, 0.0) * P, axis=(-2, -1)))
    return np.stack(out, axis=-1)


def observable_names(shells: int = 6):
    return ["l2_sq", "h1_sq"] + [f"shell_{s}" for s in range(1, shells + 1)]


@dataclass
class StationaryEstimate:
    names: list
    radii: tuple
    means: np.ndarray        # (2, n_obs)
    lo: np.ndarray
    hi: np.ndarray
    burn_in: int
    window: int
    agree: np.ndarray        # (n_obs,)
    max_norm: float
    samples: np.ndarray = field(repr=False, default=None)

    @property
    def all_agree(self) -> bool:
        return bool(np.all(self.agree))

    def rows(self):
        for j, name in enumerate(self.names):
            for i, r in enumerate(self.radii):
                yield (name, r, float(self.means[i, j]), float(self.lo[i, j]), float(self.hi[i, j]),
                       int(self.agree[j]))


def estimate_stationary(flow: FlowConfig, spec: NoiseSpec | None = None, R_star: float = 5.0,
                        kappa: float | None = None, burn_in: int | None = None, window: int = 20,
                        gamma: float | None = None,
                        n_traj: int = 64, seed: int = 0, zero_noise: bool = False, shells: int = 6,
                        n_boot: int = 100) -> StationaryEstimate:
    """Time-averaged observables after burn-in from initial radii 0 and ``R_star``.

    Burn-in defaults to 3/|ln κ| with κ raised to the drift factor γ
    (default exp(−λ_min)); κ may be omitted.  Coupled pairs start close together, so their
    contraction rate says nothing about how fast a state started at radius
    ``R_star`` forgets its start.  Each trajectory is averaged over
    ``window`` steps; 95% bands come from resampling trajectories.  The two
    estimates agree on an observable when their bands overlap.
    """
    spec = model_noise_spec(flow.model) if spec is None else spec
    m = FlowModel(flow, spec)
    if burn_in is None:
        g = math.exp(-slowest_decay(flow)) if gamma is None else gamma
        burn_in = burn_in_steps(max(kappa or 0.0, g))
        if zero_noise:
            # squared norms from radius R_star must fall below 1e-12
            need = math.log(max(R_star, 1.0) ** 2 * 1e12) / (2 * abs(math.log(g)))
            burn_in = max(burn_in, math.ceil(need))
    rng = rng_stream(seed, _STREAM_STAT)
    starts = [m.zeros(n_traj), m.random_directions(rng, n_traj) * R_star]
    means, lo, hi, samples = [], [], [], []
    max_norm = 0.0
    for r_i, X in enumerate(starts):
        acc = np.zeros((n_traj, 2 + shells))
        for k in range(burn_in + window):
            eta = np.zeros((n_traj, m.noise_dim)) if zero_noise else m.sample_noise(rng_stream(seed, _STREAM_STAT, r_i, k), n_traj)
            X = m.flow(X, eta)
            if k >= burn_in:
                acc += observables(m, X, shells)
                max_norm = max(max_norm, float(np.max(m.norm(X))))
        acc /= window
        samples.append(acc)
        means.append(acc.mean(axis=0))
        brng = rng_stream(seed, _STREAM_BOOT, r_i)
        boot = np.stack([acc[brng.integers(0, n_traj, n_traj)].mean(axis=0) for _ in range(n_boot)])
        lo.append(np.quantile(boot, 0.025, axis=0))
        hi.append(np.quantile(boot, 0.975, axis=0))
    means, lo, hi = np.array(means), np.array(lo), np.array(hi)
    agree = (lo[0] <= hi[1]) & (lo[1] <= hi[0])
    return StationaryEstimate(observable_names(shells), (0.0, float(R_star)), means, lo, hi, burn_in,
                              window, agree, max_norm, np.array(samples))


# ---------------------------------------------------------------- CSV output

def write_csv(path, header, rows):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(x) if isinstance(x, float) else x for x in row])


def write_mixing_report(report: MixingReport, out_dir, stem: str = "mixing"):
    write_csv(os.path.join(out_dir, f"{stem}.csv"), MIXING_COLUMNS, report.rows())
    write_csv(os.path.join(out_dir, f"{stem}_summary.csv"), ("key", "value"), sorted(report.summary().items()))
    write_csv(os.path.join(out_dir, f"{stem}_glue_times.csv"), ("step", "count"),
              enumerate(report.glue_histogram().tolist()))


def write_stationary(est: StationaryEstimate, out_dir, stem: str = "stationary"):
    write_csv(os.path.join(out_dir, f"{stem}.csv"), ("observable", "radius", "mean", "lo", "hi", "agree"),
              est.rows())


__all__ = [
    "MixingConfig", "MixingReport", "DecayFit", "CalibratedEngine", "calibrated_engine",
    "run_coupled_ensemble", "initial_pairs", "fit_decay_rate", "burn_in_steps", "lip_dual_estimate",
    "estimate_stationary", "StationaryEstimate", "observables", "observable_names",
    "write_csv", "write_mixing_report", "write_stationary", "MIXING_COLUMNS", "DEFAULT_EPS",
]
