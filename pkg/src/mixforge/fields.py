"""Fourier-coefficient fields on the 2-torus [0, 2π)².

Coefficients follow the ``fft2(u) / N**2`` convention, so a single mode
``exp(i k·x)`` with unit amplitude has coefficient 1 at ``k``.  Wavenumber
arrays use numpy's FFT ordering with axis 0 carrying ``k1``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

VELOCITY = "velocity2d"
SCALAR = "complex_scalar"
KINDS = (VELOCITY, SCALAR)


def wavenumbers(N: int):
    """Integer wavenumber grids ``(k1, k2)`` of shape ``(N, N)``."""
    k = np.fft.fftfreq(N, d=1.0 / N).round().astype(int)
    return np.meshgrid(k, k, indexing="ij")


def default_dealias_radius(N: int) -> int:
    """Largest integer radius strictly below ``N/3`` (two-thirds rule)."""
    R = N // 3
    if 3 * R >= N:
        R -= 1
    return R


def dealias_mask(N: int, radius: int) -> np.ndarray:
    k1, k2 = wavenumbers(N)
    return (k1 * k1 + k2 * k2) <= radius * radius


@dataclass(frozen=True)
class SpectralField:
    """Truncated Fourier representation of a field on the torus.

    Parameters
    ----------
    kind : str
        ``"velocity2d"`` (real divergence-free velocity, coefficients of shape
        ``(2, N, N)``) or ``"complex_scalar"`` (shape ``(N, N)``).
    N : int
        Grid points per dimension.
    coeffs : ndarray of complex
        Fourier coefficients in FFT ordering.
    dealias_radius : int
        Modes with ``|k| > dealias_radius`` are identically zero.
    """

    kind: str
    N: int
    coeffs: np.ndarray = field(repr=False)
    dealias_radius: int

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown field kind {self.kind!r}")
        shape = (2, self.N, self.N) if self.kind == VELOCITY else (self.N, self.N)
        if self.coeffs.shape != shape:
            raise ValueError(f"coefficient shape {self.coeffs.shape} != {shape}")

    @classmethod
    def zeros(cls, kind: str, N: int, dealias_radius: int | None = None):
        R = default_dealias_radius(N) if dealias_radius is None else dealias_radius
        shape = (2, N, N) if kind == VELOCITY else (N, N)
        return cls(kind, N, np.zeros(shape, dtype=complex), R)

    def with_coeffs(self, coeffs) -> "SpectralField":
        return SpectralField(self.kind, self.N, np.asarray(coeffs, dtype=complex), self.dealias_radius)

    def __add__(self, other):
        return self.with_coeffs(self.coeffs + other.coeffs)

    def __sub__(self, other):
        return self.with_coeffs(self.coeffs - other.coeffs)

    def __mul__(self, a):
        return self.with_coeffs(a * self.coeffs)

    __rmul__ = __mul__

    def physical(self) -> np.ndarray:
        """Grid values (real for velocity, complex for scalars)."""
        u = np.fft.ifft2(self.coeffs, axes=(-2, -1)) * self.N**2
        return u.real if self.kind == VELOCITY else u

    @classmethod
    def from_physical(cls, kind, values, dealias_radius=None):
        values = np.asarray(values)
        N = values.shape[-1]
        R = default_dealias_radius(N) if dealias_radius is None else dealias_radius
        c = np.fft.fft2(values, axes=(-2, -1)) / N**2
        c = c * dealias_mask(N, R)
        return cls(kind, N, c.astype(complex), R)

    def divergence_residual(self) -> float:
        """max_k |k·û_k| (zero for scalar fields)."""
        if self.kind != VELOCITY:
            return 0.0
        k1, k2 = wavenumbers(self.N)
        return float(np.max(np.abs(k1 * self.coeffs[0] + k2 * self.coeffs[1])))


def sobolev_weights(N: int, s: float) -> np.ndarray:
    k1, k2 = wavenumbers(N)
    return (1.0 + k1 * k1 + k2 * k2) ** s


def sobolev_norm(u: SpectralField, s: float) -> float:
    """(Σ_k (1+|k|²)^s |û_k|²)^{1/2}, summed over components for velocity."""
    w = sobolev_weights(u.N, s)
    return float(np.sqrt(np.sum(w * np.abs(u.coeffs) ** 2)))


def l2_pairing(a: SpectralField, b: SpectralField) -> float:
    """Real L2 inner product ∫ Re(ā·b) dx over the torus."""
    return float((2 * np.pi) ** 2 * np.sum((np.conj(a.coeffs) * b.coeffs).real))


def field_to_csv_rows(u: SpectralField):
    """Rows (k1, k2, re, im[, component]) for the retained modes."""
    k1, k2 = wavenumbers(u.N)
    keep = dealias_mask(u.N, u.dealias_radius)
    rows = []
    if u.kind == VELOCITY:
        for comp in range(2):
            c = u.coeffs[comp]
            for a, b, z in zip(k1[keep], k2[keep], c[keep]):
                rows.append((int(a), int(b), float(z.real), float(z.imag), comp))
    else:
        for a, b, z in zip(k1[keep], k2[keep], u.coeffs[keep]):
            rows.append((int(a), int(b), float(z.real), float(z.imag)))
    return rows
