"""Closed-form linear algebra for a single full-dimension Jordan block.

The block is ``A = lambda * I + S`` with ``S`` the upper shift.  Everything
here is exact up to floating point: the exponential action is a finite sum,
and the noise covariances reduce to moments ``int u**n exp(-2 lambda u) du``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import InvalidInputError, NumericDomainError

MAX_DIM = 20
SYMMETRY_TOL = 1e-10
PSD_TOL = 1e-8


@dataclass(frozen=True)
class JordanBlock:
    """Jordan block of size ``dim`` with eigenvalue ``lam > 0``."""

    dim: int
    lam: float

    def __post_init__(self):
        if int(self.dim) != self.dim or self.dim < 1:
            raise InvalidInputError(f"dim must be a positive integer, got {self.dim!r}")
        if self.dim > MAX_DIM:
            raise InvalidInputError(f"dim > {MAX_DIM} is not supported")
        if not (math.isfinite(self.lam) and self.lam > 0):
            raise InvalidInputError(f"lambda must be positive and finite, got {self.lam!r}")

    def matrix(self) -> np.ndarray:
        d = self.dim
        return self.lam * np.eye(d) + np.eye(d, k=1)


def _taylor_coeffs(t: float, n: int) -> np.ndarray:
    # t**j / j!, j = 0..n-1
    out = np.empty(n)
    c = 1.0
    for j in range(n):
        if j:
            c *= t / j
        out[j] = c
    return out


def exp_matrix(block: JordanBlock, t: float) -> np.ndarray:
    """Materialize ``exp(A t)`` (upper triangular Toeplitz)."""
    t = float(t)
    if not math.isfinite(t):
        raise InvalidInputError("t must be finite")
    d = block.dim
    coeffs = _taylor_coeffs(t, d) * math.exp(block.lam * t)
    out = np.zeros((d, d))
    for j in range(d):
        out += coeffs[j] * np.eye(d, k=j)
    return out


def exp_action(block: JordanBlock, t: float, v) -> np.ndarray:
    """Return ``exp(A t) v``.

    Component ``i`` is ``exp(lambda t) * sum_j t**j / j! * v[i + j]``.
    ``v`` may carry leading batch dimensions; the last axis has length ``dim``.
    """
    t = float(t)
    v = np.asarray(v, dtype=float)
    if not math.isfinite(t) or not np.all(np.isfinite(v)):
        raise InvalidInputError("exp_action needs finite t and v")
    d = block.dim
    if v.shape[-1] != d:
        raise InvalidInputError(f"vector length {v.shape[-1]} != dim {d}")
    coeffs = _taylor_coeffs(t, d)
    out = np.zeros_like(v)
    for j in range(d):
        out[..., : d - j] += coeffs[j] * v[..., j:]
    return math.exp(block.lam * t) * out


def _check_a0(block: JordanBlock, a0) -> np.ndarray:
    a0 = np.asarray(a0, dtype=float)
    d = block.dim
    if a0.shape != (d, d):
        raise InvalidInputError(f"a0 must be {d}x{d}, got shape {a0.shape}")
    if not np.all(np.isfinite(a0)):
        raise InvalidInputError("a0 has non-finite entries")
    if np.max(np.abs(a0 - a0.T)) > SYMMETRY_TOL:
        raise InvalidInputError("a0 is not symmetric")
    return 0.5 * (a0 + a0.T)


def _combine_moments(block: JordanBlock, a0: np.ndarray, moments) -> np.ndarray:
    # entry (i, j) = sum_{p,q} (-1)**(p+q) / (p! q!) * a0[i+p, j+q] * moments[p+q]
    d = block.dim
    inv_fact = [1.0 / math.factorial(k) for k in range(d)]
    out = np.empty((d, d))
    for i in range(d):
        for j in range(i, d):
            terms = []
            for p in range(d - i):
                for q in range(d - j):
                    sign = -1.0 if (p + q) % 2 else 1.0
                    terms.append(sign * inv_fact[p] * inv_fact[q] * a0[i + p, j + q] * moments[p + q])
            out[i, j] = out[j, i] = math.fsum(terms)
    return out


def limit_noise_covariance(block: JordanBlock, a0) -> np.ndarray:
    """Covariance of ``N = int_0^inf exp(-A s) sigma(0) dW(s)``.

    Entry ``(i, j)`` is the double sum over ``p, q`` of
    ``C(p+q, q) (-1)**(p+q) / (2 lambda)**(p+q+1) * a0[p+i, q+j]``.
    """
    a0 = _check_a0(block, a0)
    two_lam = 2.0 * block.lam
    # int_0^inf u**n exp(-2 lam u) du = n! / (2 lam)**(n+1)
    moments = [math.factorial(n) / two_lam ** (n + 1) for n in range(2 * block.dim - 1)]
    return _combine_moments(block, a0, moments)


def exp_moments(lam: float, delta: float, nmax: int) -> list[float]:
    """``I_n = int_0^delta u**n exp(-2 lam u) du`` for ``n = 0..nmax``.

    Evaluated through the regularized lower incomplete gamma function, which
    keeps full relative accuracy for small ``delta`` where the forward
    recurrence cancels.
    """
    two_lam = 2.0 * lam
    x = two_lam * delta
    return [
        math.factorial(n) / two_lam ** (n + 1) * float(special.gammainc(n + 1, x)) for n in range(nmax + 1)
    ]


def finite_noise_covariance(block: JordanBlock, a0, delta: float) -> np.ndarray:
    """``int_0^delta exp(-A u) a0 exp(-A^T u) du`` in closed form."""
    delta = float(delta)
    if not math.isfinite(delta) or delta < 0:
        raise InvalidInputError(f"delta must be a finite non-negative number, got {delta!r}")
    a0 = _check_a0(block, a0)
    if delta == 0.0:
        return np.zeros((block.dim, block.dim))
    moments = exp_moments(block.lam, delta, 2 * block.dim - 2)
    return _combine_moments(block, a0, moments)


def cholesky_or_psd_factor(cov) -> np.ndarray:
    """Lower-triangular ``L`` with ``L @ L.T == cov``.

    Falls back to a column-zeroing Cholesky for rank-deficient input.  Raises
    :class:`NumericDomainError` when ``cov`` has an eigenvalue below ``-1e-8``.
    """
    cov = np.asarray(cov, dtype=float)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise InvalidInputError("covariance must be square")
    cov = 0.5 * (cov + cov.T)
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        pass
    if np.linalg.eigvalsh(cov).min() < -PSD_TOL:
        raise NumericDomainError("covariance matrix is not positive semidefinite")
    d = cov.shape[0]
    L = np.zeros_like(cov)
    scale = max(np.max(np.abs(np.diag(cov))), 1e-300)
    for j in range(d):
        s = cov[j, j] - L[j, :j] @ L[j, :j]
        if s <= 1e-13 * scale:
            continue
        L[j, j] = math.sqrt(s)
        L[j + 1 :, j] = (cov[j + 1 :, j] - L[j + 1 :, :j] @ L[j, :j]) / L[j, j]
    return L
