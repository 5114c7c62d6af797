"""Regularised approximate right inverses of the noise-to-state operator A.

Two forms are provided.  ``"projected"`` (the default) is the Tikhonov inverse
of the restricted operator A_M = A P_M,

    R_{r,M} = P_M A*(A P_M A* + rI)^{-1},

whose defect is non-increasing as r decreases.  ``"truncated"`` is
P_M A*(AA* + rI)^{-1}, the projection of the full Tikhonov inverse.  Both have
image in the first M noise coordinates and coincide when M is the full noise
dimension.

All linear algebra is carried out in H-orthonormal state coordinates
y = W_H^{1/2} x and E-orthonormal noise coordinates, where G = AA* is a plain
symmetric positive semidefinite matrix.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .tangent_adjoint import TangentOperator

R_LATTICE = tuple(10.0 ** (-k) for k in range(0, 9))
CONDITION_GUARD = 1e15


def m_lattice(dim: int) -> list[int]:
    """{4, 8, 16, ...} below ``dim``, followed by ``dim`` itself."""
    out, M = [], 4
    while M < dim:
        out.append(M)
        M *= 2
    out.append(dim)
    return out


def _scaled(A: TangentOperator) -> np.ndarray:
    return np.sqrt(A.gram_H)[:, None] * A.matrix / np.sqrt(A.gram_E)[None, :]


def build_gram(A: TangentOperator, M: int | None = None) -> np.ndarray:
    """G = AA* (or A P_M A* when ``M`` is given) in H-orthonormal coordinates, symmetrised."""
    B = _scaled(A)
    if M is not None:
        B = B[:, :M]
    G = B @ B.T
    return 0.5 * (G + G.T)


VARIANTS = ("projected", "truncated")


@dataclass
class RightInverse:
    """R_{r,M} with a cached Cholesky factorisation of G + rI.

    ``variant="projected"`` uses G = A P_M A*, ``"truncated"`` uses G = AA*.
    """

    op: TangentOperator
    r: float
    M: int
    variant: str = "projected"
    _factor: tuple = field(default=None, repr=False)

    def __post_init__(self):
        if not self.r > 0:
            raise ValueError("regularisation r must be positive")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        D = self.op.gram_E.size
        if not 1 <= self.M <= D:
            raise ValueError(f"projection dimension M={self.M} outside [1, {D}]")
        if self._factor is None:
            G = build_gram(self.op, self.M if self.variant == "projected" else None)
            gmax = float(np.linalg.norm(G, 2)) if G.size else 0.0
            if (gmax + self.r) / self.r > CONDITION_GUARD:
                raise np.linalg.LinAlgError(
                    f"G + rI condition bound {(gmax + self.r) / self.r:.2e} exceeds guard")
            self._factor = cho_factor(G + self.r * np.eye(G.shape[0]), lower=True)

    def apply(self, f):
        """ζ = R f for state-coordinate vector(s) ``f`` (..., D_H); zeros beyond M."""
        A = self.op
        f = np.asarray(f, dtype=float)
        sw = np.sqrt(A.gram_H)
        y = cho_solve(self._factor, (sw * f).T).T
        zeta = (A.matrix.T @ (sw * y).T).T / A.gram_E
        zeta[..., self.M:] = 0.0
        return zeta

    @property
    def cols(self) -> int:
        return self.M if self.variant == "projected" else self.op.gram_E.size

    def defect(self, f, zeta=None):
        """‖A R f − f‖_H."""
        zeta = self.apply(f) if zeta is None else zeta
        res = (self.op.matrix @ np.asarray(zeta).T).T - f
        return np.sqrt(np.sum(self.op.gram_H * res**2, axis=-1))

    def matrix_scaled(self) -> np.ndarray:
        """R as a matrix from H-orthonormal to E-orthonormal coordinates."""
        B = _scaled(self.op).copy()
        if self.variant == "projected":
            B[:, self.M:] = 0.0
        Y = cho_solve(self._factor, np.eye(B.shape[0]))
        R = B.T @ Y
        R[self.M:] = 0.0
        return R

    def operator_norm(self, iters: int = 200, seed: int = 0, tol: float = 1e-12) -> float:
        """‖R‖_{H→E} by power iteration on R^T R."""
        R = self.matrix_scaled()
        x = np.random.default_rng(seed).standard_normal(R.shape[1])
        x /= np.linalg.norm(x)
        s_old = 0.0
        for _ in range(iters):
            y = R.T @ (R @ x)
            n = np.linalg.norm(y)
            if n == 0:
                return 0.0
            x = y / n
            s = np.sqrt(n)
            if abs(s - s_old) <= tol * s:
                break
            s_old = s
        return float(np.linalg.norm(R @ x))


def right_inverse_apply(R: RightInverse, f):
    """Return ``(ζ, defect)`` for a state-coordinate vector ``f``."""
    zeta = R.apply(f)
    return zeta, float(R.defect(f, zeta)) if np.ndim(f) == 1 else R.defect(f, zeta)


def operator_norm_A(A: TangentOperator) -> float:
    B = _scaled(A)
    return float(np.linalg.norm(B, 2)) if B.size else 0.0


@dataclass
class Calibration:
    """Outcome of a lattice sweep; ``table`` rows are (r, M, max_defect_ratio, ‖R‖)."""

    chosen: RightInverse | None
    epsilon: float
    table: list
    feasible: bool
    best_ratio: float

    def csv_rows(self):
        return [(r, M, d, n) for r, M, d, n in self.table]

    def lookup(self, r, M):
        for row in self.table:
            if row[0] == r and row[1] == M:
                return row[2]
        raise KeyError((r, M))


class CalibrationError(RuntimeError):
    def __init__(self, best: float, eps: float):
        super().__init__(f"no lattice point reaches defect ratio {eps:g}; best achievable {best:.4g}")
        self.best = best
        self.eps = eps


def calibrate(A: TangentOperator, test_set, v_norms, eps: float, r_values=R_LATTICE, m_values=None,
              norm_estimates: bool = True, strict: bool = False, variant: str = "projected") -> Calibration:
    """Sweep the (r, M) lattice and pick the smallest M, then largest r, meeting ``eps``.

    ``test_set`` holds state-coordinate vectors (n, D_H) and ``v_norms`` their
    V-norms.  The ratio max_f ‖A R f − f‖_H / ‖f‖_V is tabulated at every
    lattice point.  With ``strict`` a :class:`CalibrationError` is raised when
    no point is feasible.
    """
    F = np.atleast_2d(np.asarray(test_set, dtype=float))
    vn = np.asarray(v_norms, dtype=float)
    m_values = m_lattice(A.gram_E.size) if m_values is None else list(m_values)
    eye = np.eye(A.gram_H.size)
    table, chosen = [], None
    best = np.inf
    for M in m_values:
        G = build_gram(A, M if variant == "projected" else None)
        for r in r_values:
            R = RightInverse(A, r, M, variant, cho_factor(G + r * eye, lower=True))
            ratio = float(np.max(R.defect(F) / vn))
            nrm = R.operator_norm() if norm_estimates else float("nan")
            table.append((float(r), int(M), ratio, nrm))
            best = min(best, ratio)
            if chosen is None and ratio <= eps:
                chosen = R
    if chosen is None and strict:
        raise CalibrationError(best, eps)
    return Calibration(chosen, eps, table, chosen is not None, best)


def lattice_monotonicity(table, rel_tol: float = 1e-9) -> dict:
    """Count violations of defect non-increase along r ↓ (fixed M) and M ↑ (fixed r)."""
    d = {(r, M): v for r, M, v, _ in table}
    rs = sorted({r for r, _ in d}, reverse=True)
    Ms = sorted({M for _, M in d})
    bad_r = [(r1, r2, M) for M in Ms for r1, r2 in zip(rs, rs[1:])
             if d[(r2, M)] > d[(r1, M)] * (1 + rel_tol)]
    bad_M = [(M1, M2, r) for r in rs for M1, M2 in zip(Ms, Ms[1:])
             if d[(r, M2)] > d[(r, M1)] * (1 + rel_tol)]
    return {"r_violations": bad_r, "M_violations": bad_M,
            "monotone": not bad_r and not bad_M}


def tikhonov_batch(A_scaled: np.ndarray, f_scaled: np.ndarray, r: float, M: int,
                   variant: str = "projected") -> np.ndarray:
    """R_{r,M} f for stacks of scaled operators B (..., D_H, D_E) and vectors f (..., D_H).

    Uses the identity B^T(BB^T + rI)^{-1} = (B^TB + rI)^{-1}B^T, which only needs
    D_E × D_E solves; results agree with :class:`RightInverse` to rounding.
    """
    if variant == "projected":
        z = np.zeros(A_scaled.shape[:-2] + (A_scaled.shape[-1],))
        z[..., :M] = tikhonov_batch(A_scaled[..., :M], f_scaled, r, M, "truncated")
        return z
    BtB = np.swapaxes(A_scaled, -1, -2) @ A_scaled
    D = BtB.shape[-1]
    rhs = np.einsum("...hd,...h->...d", A_scaled, f_scaled)
    z = np.linalg.solve(BtB + r * np.eye(D), rhs[..., None])[..., 0]
    z[..., M:] = 0.0
    return z


__all__ = [
    "RightInverse", "build_gram", "right_inverse_apply", "calibrate", "Calibration",
    "CalibrationError", "lattice_monotonicity", "m_lattice", "R_LATTICE",
    "tikhonov_batch", "operator_norm_A",
]
