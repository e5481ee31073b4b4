"""Affine interference map and contraction certificates.

At fixed targets the power-control law is affine, I(p) = T p + N, with a
nonnegative zero-diagonal matrix T built from normalized cross gains. A
weighted max-norm of T below 1 certifies a unique fixed point and geometric
convergence of the (uncapped) iteration; the spectral radius of T gives the
sharp feasibility threshold.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .balancer import TargetState
from .errors import DegenerateStreamError, InfeasibleTargetsError
from .model import unflatten_index

_GAIN_FLOOR = 1e-300


@dataclass(frozen=True)
class LinearInterferenceMap:
    """Affine form of the power-control law at fixed targets."""

    T: np.ndarray      # (total, total) nonnegative, zero diagonal
    Nvec: np.ndarray   # (total,) positive offsets
    gains: np.ndarray  # raw cross-gain table G[i, j]
    d: tuple


def _targets_flat(targets) -> np.ndarray:
    if isinstance(targets, TargetState):
        return targets.flat()
    return np.asarray(targets, dtype=float)


def build_map(channels, bf, targets) -> LinearInterferenceMap:
    """Build (T, N) from channels, frozen filters, and per-substream targets.

    gains[i, j] = |v_i^dagger H_{k_i, k_j} u_j|^2 with flat user-major stream
    indices; row i of T is the i-th target times the i-th gain row normalized
    by the direct gain, with the diagonal forced to zero.
    """
    gamma = _targets_flat(targets)
    d = bf.d
    total = sum(d)
    if gamma.shape != (total,):
        raise ValueError(f"targets must have {total} entries, got {gamma.shape}")
    gains = np.empty((total, total))
    for i in range(1, total + 1):
        k, l = unflatten_index(i, d)
        v = bf.v(k, l)
        for j in range(1, total + 1):
            ku, s = unflatten_index(j, d)
            gains[i - 1, j - 1] = np.abs(np.vdot(v, channels.block(k, ku) @ bf.u(ku, s))) ** 2
    direct = np.diag(gains).copy()
    if np.any(direct <= _GAIN_FLOOR):
        bad = int(np.argmin(direct)) + 1
        raise DegenerateStreamError(f"flat stream {bad}: direct gain vanished")
    T = gamma[:, None] * gains / direct[:, None]
    np.fill_diagonal(T, 0.0)
    Nvec = gamma / direct
    return LinearInterferenceMap(T=T, Nvec=Nvec, gains=gains, d=tuple(d))


def weighted_max_norm(T, v) -> float:
    """Induced weighted maximum norm: max_i sum_j T_ij v_j / v_i."""
    T = np.asarray(T, dtype=float)
    v = np.asarray(v, dtype=float)
    if np.any(v <= 0):
        raise ValueError("weight vector must be strictly positive")
    return float(np.max((T @ v) / v))


def _power_iteration(T, tol=1e-10, max_iter=10_000):
    """Perron root and vector of a nonnegative matrix.

    Runs power iteration on T + alpha I (alpha = max row sum). The shift
    moves every eigenvalue by exactly alpha and makes the dominant one
    simple-signed, so zero-diagonal periodic structures (any 2-substream map)
    converge instead of oscillating.
    """
    T = np.asarray(T, dtype=float)
    n = T.shape[0]
    alpha = float(np.max(np.sum(T, axis=1)))
    if alpha == 0.0:
        return 0.0, np.full(n, 1.0 / n), True
    M = T + alpha * np.eye(n)
    x = np.full(n, 1.0)
    lam = alpha
    for _ in range(int(max_iter)):
        y = M @ x
        lam = float(np.max(np.abs(y)))
        y = y / lam
        if float(np.max(np.abs(y - x))) <= tol:
            x = y
            return max(lam - alpha, 0.0), x / float(np.sum(x)), True
        x = y
    return max(lam - alpha, 0.0), x / float(np.sum(x)), False


def spectral_radius(T, *, tol: float = 1e-10, max_iter: int = 10_000) -> float:
    """Perron root of a nonnegative matrix; warns if iteration hits its cap."""
    rho, _, ok = _power_iteration(T, tol=tol, max_iter=max_iter)
    if not ok:
        warnings.warn(
            f"spectral radius estimate did not converge in {max_iter} iterations",
            RuntimeWarning, stacklevel=2)
    return rho


def fixed_point_direct(imap: LinearInterferenceMap) -> np.ndarray:
    """Closed-form fixed point (I - T)^{-1} N; requires spectral radius < 1."""
    rho = spectral_radius(imap.T)
    if rho >= 1.0:
        raise InfeasibleTargetsError(f"targets are infeasible: spectral radius {rho:.6g} >= 1")
    n = imap.T.shape[0]
    return np.linalg.solve(np.eye(n) - imap.T, imap.Nvec)


@dataclass(frozen=True)
class ContractionCertificate:
    """Contractivity verdict for the affine map at fixed targets."""

    c: float
    v_norm: np.ndarray
    rho: float
    fixed_point: np.ndarray  # None when rho >= 1
    contractive: bool

    def to_record(self) -> dict:
        return {
            "c": float(self.c),
            "rho": float(self.rho),
            "contractive": bool(self.contractive),
            "v_norm": [float(x) for x in self.v_norm],
            "fixed_point": None if self.fixed_point is None
            else [float(x) for x in self.fixed_point],
        }


def certify(channels, bf, targets, v=None) -> ContractionCertificate:
    """Certificate for the affine map at the given targets.

    v selects the norm weights: None for all-ones (row sums), the string
    "perron" for the Perron vector of T (the tightest choice), or an explicit
    positive vector.
    """
    imap = build_map(channels, bf, targets)
    return certify_map(imap, v=v)


def certify_map(imap: LinearInterferenceMap, v=None) -> ContractionCertificate:
    rho, perron, _ = _power_iteration(imap.T)
    if v is None:
        w = np.ones(imap.T.shape[0])
    elif isinstance(v, str) and v == "perron":
        # degenerate structures can zero out Perron entries; keep the norm legal
        w = np.maximum(perron, 1e-12)
    else:
        w = np.asarray(v, dtype=float)
    c = weighted_max_norm(imap.T, w)
    fixed = None
    if rho < 1.0:
        n = imap.T.shape[0]
        fixed = np.linalg.solve(np.eye(n) - imap.T, imap.Nvec)
    return ContractionCertificate(c=c, v_norm=w, rho=rho, fixed_point=fixed,
                                  contractive=bool(c < 1.0))


def convergence_rate_check(trace, certificate: ContractionCertificate) -> bool:
    """Verify geometric error decay of recorded power iterates.

    Checks ||p^n - p*||_inf^v <= c^n ||p^0 - p*||_inf^v (1 + 1e-6) for every
    recorded n; returns False on the first violation.
    """
    if not certificate.contractive or certificate.fixed_point is None:
        raise ValueError("certificate must be contractive with a fixed point")
    v = certificate.v_norm
    p_star = certificate.fixed_point

    def wnorm(x):
        return float(np.max(np.abs(x) / v))

    e0 = wnorm(np.asarray(trace[0], dtype=float) - p_star)
    for n, p in enumerate(trace):
        if wnorm(np.asarray(p, dtype=float) - p_star) > (certificate.c ** n) * e0 * (1.0 + 1e-6):
            return False
    return True
