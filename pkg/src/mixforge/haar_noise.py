"""Bounded colored noise built from Haar functions in time and Fourier modes in space.

A noise path on the unit time interval is

    η_t = Σ_i b_i ( Σ_{j,l} c^i_j ξ^i_{jl} h_{jl}(t) ) φ_i ,

with ξ^i_{jl} independent draws from a tent density on [-1, 1] and φ_i an
orthonormal family of real fields (orthonormal in the state norm of the model).
The Haar system consists of the constant scaling function (level -1) and the
wavelets h_{jl}, 0 ≤ j ≤ J, 0 ≤ l < 2^j.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fields import SCALAR, VELOCITY, SpectralField, default_dealias_radius, wavenumbers


def rng_stream(seed: int, *keys: int) -> np.random.Generator:
    """Independent generator for ``(seed, *keys)``; identical keys give identical streams."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.PCG64(ss))


# ---------------------------------------------------------------- Haar basis

@dataclass(frozen=True)
class HaarIndex:
    level: int
    shift: int = 0

    def __post_init__(self):
        if self.level < -1:
            raise ValueError("Haar level must be >= -1")
        top = 0 if self.level == -1 else 2**self.level - 1
        if not 0 <= self.shift <= top:
            raise ValueError(f"shift {self.shift} out of range for level {self.level}")

    @property
    def column(self) -> int:
        """Column of the per-level coefficient table c^i_j."""
        return self.level + 1


def haar_indices(J: int) -> list[HaarIndex]:
    """Scaling function followed by wavelets of levels 0..J, shifts ascending."""
    out = [HaarIndex(-1, 0)]
    for j in range(J + 1):
        out.extend(HaarIndex(j, l) for l in range(2**j))
    return out


def haar_eval(index: HaarIndex, t: float) -> float:
    """Value of the Haar function ``index`` at time ``t`` in [0, 1)."""
    if not 0.0 <= t < 1.0:
        raise ValueError(f"t={t} outside [0, 1)")
    j, l = index.level, index.shift
    if j == -1:
        return 1.0
    x = t * 2**j - l
    if 0.0 <= x < 0.5:
        return 2 ** (j / 2)
    if 0.5 <= x < 1.0:
        return -(2 ** (j / 2))
    return 0.0


def haar_table(J: int) -> np.ndarray:
    """Values of every Haar function on the 2^{J+1} dyadic intervals.

    Row ``h`` follows ``haar_indices(J)``; the functions are constant on each
    interval so evaluating at the midpoints is exact.
    """
    n = 2 ** (J + 1)
    mids = (np.arange(n) + 0.5) / n
    return np.array([[haar_eval(ix, t) for t in mids] for ix in haar_indices(J)])


def haar_gram(J: int) -> np.ndarray:
    """Exact L2(0,1) Gram matrix of the Haar system, integrating piecewise constants."""
    T = haar_table(J)
    return T @ T.T / T.shape[1]


# ---------------------------------------------------------------- coefficient law

@dataclass(frozen=True)
class TentDensity:
    """ρ(x) = (1 - s|x|)/(2 - s) on [-1, 1]; Lipschitz with ρ(0) > 0 for 0 ≤ s < 1."""

    slope: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.slope < 1.0:
            raise ValueError("density slope must lie in [0, 1)")

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        s = self.slope
        return np.where(np.abs(x) <= 1.0, (1.0 - s * np.abs(x)) / (2.0 - s), 0.0)

    def logpdf(self, x):
        with np.errstate(divide="ignore"):
            return np.log(self.pdf(x))

    def cdf(self, x):
        x = np.clip(np.asarray(x, dtype=float), -1.0, 1.0)
        s = self.slope
        a = np.abs(x)
        return 0.5 + np.sign(x) * (a - 0.5 * s * a * a) / (2.0 - s)

    def sample(self, rng: np.random.Generator, size=None):
        """Exact inverse-CDF sampling of |x| followed by a random sign."""
        s = self.slope
        u = rng.random(size)
        sign = np.where(rng.random(size) < 0.5, -1.0, 1.0)
        if s == 0.0:
            y = u
        else:
            y = (1.0 - np.sqrt(1.0 - 2.0 * s * u * (1.0 - 0.5 * s))) / s
        return sign * y


def sample_coefficient(density_slope: float, rng: np.random.Generator) -> float:
    return float(TentDensity(density_slope).sample(rng))


# ---------------------------------------------------------------- noise parameters

@dataclass(frozen=True)
class NoiseSpec:
    """Amplitudes and coefficient law of a Haar-series noise.

    Parameters
    ----------
    b : ndarray, shape (I,)
        Spatial amplitudes, all nonzero.
    c : ndarray, shape (I, J+2)
        Time coefficients per level; column 0 is the scaling function.
    density_slope : float
        Slope ``s`` of the tent density of the coefficients.
    kick_mode : bool
        If true, the noise acts as an impulsive kick between unit flow steps.
    """

    b: np.ndarray
    c: np.ndarray
    density_slope: float = 0.5
    kick_mode: bool = False

    def __post_init__(self):
        b = np.asarray(self.b, dtype=float)
        c = np.asarray(self.c, dtype=float)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", c)
        if b.ndim != 1 or b.size < 1:
            raise ValueError("b must be a non-empty vector")
        if c.ndim != 2 or c.shape[0] != b.size or c.shape[1] < 2:
            raise ValueError("c must have shape (I, J+2) with J >= 0")
        if np.any(b == 0) or np.any(c == 0):
            raise ValueError("all amplitudes b_i and c^i_j must be nonzero")
        TentDensity(self.density_slope)

    @property
    def I(self) -> int:
        return self.b.size

    @property
    def J(self) -> int:
        return self.c.shape[1] - 2

    @property
    def indices(self) -> list[HaarIndex]:
        return haar_indices(self.J)

    @property
    def n_haar(self) -> int:
        return 2 ** (self.J + 1)

    @property
    def dim(self) -> int:
        return self.I * self.n_haar

    @property
    def density(self) -> TentDensity:
        return TentDensity(self.density_slope)

    def amplitudes(self) -> np.ndarray:
        """|b_i c^i_j| broadcast to shape (I, n_haar)."""
        cols = [ix.column for ix in self.indices]
        return np.abs(self.b[:, None] * self.c[:, cols])

    def radius_summable(self) -> float:
        """R_η with R_η² = Σ_i b_i² Σ_j 2^j (c^i_j)², the level -1 weight taken as 1."""
        w = 2.0 ** np.maximum(np.arange(-1, self.J + 1), 0)
        return float(np.sqrt(np.sum(self.b**2 * np.sum(w * self.c**2, axis=1))))

    def radius_sup(self) -> float:
        """Bound on sup_t ‖η_t‖_E: only one shift per level is active at any t."""
        w = 2.0 ** (np.maximum(np.arange(-1, self.J + 1), 0) / 2)
        per_mode = np.sum(w * np.abs(self.c), axis=1)
        return float(np.sqrt(np.sum(self.b**2 * per_mode**2)))


def default_noise_spec(I=16, J=1, B0=1.0, b_decay=2.0, density_slope=0.5, kick_mode=False):
    """b_i = B0 i^{-b_decay}; c_j = 2^{-j} for wavelets and 1 for the scaling function."""
    i = np.arange(1, I + 1)
    b = B0 * i ** (-float(b_decay))
    levels = np.arange(-1, J + 1)
    c = np.tile(2.0 ** (-np.maximum(levels, 0)), (I, 1))
    return NoiseSpec(b, c, density_slope, kick_mode)


# per-model defaults: low-mode forcing, constant plus one half-interval wavelet in time
MODEL_NOISE = {
    "nse": dict(I=8, J=0, B0=1.5, b_decay=2.0, density_slope=0.5),
    "cgl": dict(I=10, J=0, B0=1.0, b_decay=2.0, density_slope=0.5),
}


def model_noise_spec(model: str, **overrides) -> NoiseSpec:
    """Default noise for ``"nse"`` or ``"cgl"``; keyword overrides as in :func:`default_noise_spec`."""
    if model not in MODEL_NOISE:
        raise ValueError(f"unknown model {model!r}")
    kw = dict(MODEL_NOISE[model])
    kw.update(overrides)
    return default_noise_spec(**kw)


@dataclass(frozen=True)
class NoisePath:
    """One realisation ξ^i_{jl}, stored as an (I, n_haar) array."""

    xi: np.ndarray
    spec: NoiseSpec
    seed: tuple = field(default=())

    def __post_init__(self):
        xi = np.asarray(self.xi, dtype=float)
        object.__setattr__(self, "xi", xi)
        if xi.shape != (self.spec.I, self.spec.n_haar):
            raise ValueError(f"xi shape {xi.shape} != {(self.spec.I, self.spec.n_haar)}")
        if np.any(np.abs(xi) > 1.0):
            raise ValueError("noise coefficients must satisfy |xi| <= 1")

    def flat(self) -> np.ndarray:
        """Noise vector in Haar-major order: index = h * I + i."""
        return self.xi.T.ravel().copy()

    @classmethod
    def from_flat(cls, v, spec: NoiseSpec, seed=()):
        v = np.asarray(v, dtype=float)
        return cls(v.reshape(spec.n_haar, spec.I).T, spec, seed)

    def interval_weights(self) -> np.ndarray:
        """g[n, i] = b_i Σ_{jl} c^i_j ξ^i_{jl} h_{jl} on dyadic interval n."""
        return interval_weights(self.flat(), self.spec)


def interval_weights(v: np.ndarray, spec: NoiseSpec) -> np.ndarray:
    """Amplitude of each spatial mode on each dyadic interval for flat noise vectors.

    ``v`` has shape (..., dim) in Haar-major order; the result has shape
    (..., n_intervals, I).
    """
    v = np.asarray(v, dtype=float)
    T = haar_table(spec.J)                      # (n_haar, n_int)
    cols = [ix.column for ix in spec.indices]
    signed = (spec.b[:, None] * spec.c[:, cols]).T
    x = v.reshape(v.shape[:-1] + (spec.n_haar, spec.I)) * signed
    return np.einsum("hn,...hi->...ni", T, x)


def zero_path(spec: NoiseSpec) -> NoisePath:
    return NoisePath(np.zeros((spec.I, spec.n_haar)), spec, ())


def sample_noise_path(spec: NoiseSpec, rng: np.random.Generator) -> NoisePath:
    xi = spec.density.sample(rng, size=(spec.I, spec.n_haar))
    return NoisePath(xi, spec)


def path_to_csv_rows(path: NoisePath):
    rows = []
    for i in range(path.spec.I):
        for h, ix in enumerate(path.spec.indices):
            rows.append((i + 1, ix.level, ix.shift, float(path.xi[i, h])))
    return rows


# ---------------------------------------------------------------- spatial modes

@dataclass(frozen=True)
class SpatialBasis:
    """Real fields φ_i, orthonormal in the Sobolev norm of index ``sobolev_index``."""

    kind: str
    N: int
    sobolev_index: int
    coeffs: np.ndarray = field(repr=False)   # (I, 2, N, N) or (I, N, N)
    labels: tuple = ()
    dealias_radius: int = 0

    @property
    def count(self) -> int:
        return self.coeffs.shape[0]

    def field(self, i: int) -> SpectralField:
        return SpectralField(self.kind, self.N, self.coeffs[i].copy(), self.dealias_radius)

    def combine(self, weights) -> SpectralField:
        c = np.tensordot(np.asarray(weights, dtype=float), self.coeffs, axes=(0, 0))
        return SpectralField(self.kind, self.N, c, self.dealias_radius)


def _sorted_modes(R: int, half_plane: bool):
    out = []
    for k1 in range(-R, R + 1):
        for k2 in range(-R, R + 1):
            n = k1 * k1 + k2 * k2
            if n > R * R:
                continue
            if half_plane and not (k1 > 0 or (k1 == 0 and k2 > 0)):
                continue
            out.append((n, k1, k2))
    return sorted(out)


def spatial_basis(kind: str, N: int, count: int, sobolev_index: int, dealias_radius=None) -> SpatialBasis:
    """The first ``count`` real basis fields ordered by |k|² then lexicographically.

    Velocity: cos(k·x) k^⊥/|k| and sin(k·x) k^⊥/|k| for k in a half plane.
    Complex scalar: exp(ik·x) and i·exp(ik·x) for every k, including k = 0.
    """
    R = default_dealias_radius(N) if dealias_radius is None else dealias_radius
    idx = {k: (k % N) for k in range(-N, N)}
    fields, labels = [], []
    if kind == VELOCITY:
        for n, k1, k2 in _sorted_modes(R, half_plane=True):
            e = np.array([-k2, k1], dtype=float) / np.sqrt(n)
            scale = np.sqrt(2.0 / (1.0 + n) ** sobolev_index)
            for trig in ("cos", "sin"):
                c = np.zeros((2, N, N), dtype=complex)
                z = 0.5 if trig == "cos" else -0.5j
                c[:, idx[k1], idx[k2]] = scale * z * e
                c[:, idx[-k1], idx[-k2]] = scale * np.conj(z) * e
                fields.append(c)
                labels.append((k1, k2, trig))
    elif kind == SCALAR:
        for n, k1, k2 in _sorted_modes(R, half_plane=False):
            scale = (1.0 + n) ** (-sobolev_index / 2)
            for unit in (1.0, 1j):
                c = np.zeros((N, N), dtype=complex)
                c[idx[k1], idx[k2]] = scale * unit
                fields.append(c)
                labels.append((k1, k2, "re" if unit == 1.0 else "im"))
    else:
        raise ValueError(f"unknown field kind {kind!r}")
    if count > len(fields):
        raise ValueError(f"only {len(fields)} basis fields fit inside the dealiasing disk")
    return SpatialBasis(kind, N, sobolev_index, np.array(fields[:count]), tuple(labels[:count]), R)


def noise_eval(path: NoisePath, basis: SpatialBasis, t: float) -> SpectralField:
    """η_t as a spectral field; piecewise constant on intervals of width 2^{-(J+1)}."""
    if not 0.0 <= t < 1.0:
        raise ValueError(f"t={t} outside [0, 1); concatenate unit blocks for longer horizons")
    if basis.count != path.spec.I:
        raise ValueError("basis size does not match the number of spatial modes")
    n = int(np.floor(t * path.spec.n_haar))
    g = path.interval_weights()[n]
    return basis.combine(g)


def kick_sample(spec: NoiseSpec, rng: np.random.Generator, basis: SpatialBasis) -> SpectralField:
    """η = Σ_j b_j ξ_j φ_j, a single kick applied between unit flow steps."""
    if not spec.kick_mode:
        raise ValueError("kick_sample requires kick_mode = true")
    xi = spec.density.sample(rng, size=spec.I)
    return basis.combine(spec.b * xi)


__all__ = [
    "HaarIndex", "haar_indices", "haar_eval", "haar_table", "haar_gram",
    "TentDensity", "sample_coefficient", "NoiseSpec", "default_noise_spec", "model_noise_spec",
    "MODEL_NOISE",
    "NoisePath", "zero_path", "sample_noise_path", "interval_weights",
    "SpatialBasis", "spatial_basis", "noise_eval", "kick_sample", "rng_stream",
    "path_to_csv_rows", "wavenumbers",
]
