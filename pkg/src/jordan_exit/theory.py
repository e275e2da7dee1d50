"""Limiting laws and expansion evaluators.

The random limit objects are all functions of ``chi = xi0 + N`` where ``N``
is the centred Gaussian ``int_0^inf exp(-A s) sigma(0) dW(s)``:

* ``rho = -(1/lambda) log(|chi_d| / (R (d-1)! lambda**(d-1)))`` shifts the exit time,
* ``eta = -lambda chi_{d-1} / chi_d + log(|chi_d| / (R (d-1)! lambda**(d-1)))``
  shifts the exit location at second order,
* ``sign(chi_d)`` picks the exit direction.

The vanishing remainders of the expansions are never evaluated here; they
are measured as residuals by :mod:`jordan_exit.stats`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateInputError, InvalidInputError, StateError
from .linalg_jordan import cholesky_or_psd_factor, limit_noise_covariance
from .model import InitLaw, ProblemSpec


@dataclass(frozen=True)
class GaussianLaw:
    mean: np.ndarray
    cov: np.ndarray

    def sample(self, rng: np.random.Generator, n: int | None = None) -> np.ndarray:
        L = cholesky_or_psd_factor(self.cov)
        d = len(self.mean)
        z = rng.standard_normal((1 if n is None else n, d))
        out = self.mean + z @ L.T
        return out[0] if n is None else out


@dataclass(frozen=True)
class LimitLawSampler:
    gaussian_N: GaussianLaw
    init_law: InitLaw
    lam: float
    R: float
    dim: int

    @classmethod
    def from_spec(cls, spec: ProblemSpec) -> "LimitLawSampler":
        cov = limit_noise_covariance(spec.block, spec.a0)
        return cls(GaussianLaw(np.zeros(spec.dim), cov), spec.xi_law(), spec.lam, spec.box_radius, spec.dim)


def sample_chi(sampler: LimitLawSampler, rng: np.random.Generator, n: int | None = None) -> np.ndarray:
    """Draw ``chi = xi0 + N`` with ``xi0`` and ``N`` independent.

    Returns a ``d``-vector, or an ``(n, d)`` array when ``n`` is given.
    """
    law = sampler.init_law
    count = 1 if n is None else n
    if law.kind == "point":
        xi = np.broadcast_to(np.array(law.mean, dtype=float), (count, sampler.dim))
    else:
        xi = GaussianLaw(np.array(law.mean, dtype=float), law.variance()).sample(rng, count)
    out = xi + sampler.gaussian_N.sample(rng, count)
    return out[0] if n is None else out


def _log_scaled_last(chi, lam: float, R: float, d: int):
    last = np.asarray(chi, dtype=float)[..., d - 1]
    if np.any(last == 0):
        raise DegenerateInputError("chi^(d) = 0: eta and rho are undefined")
    return np.log(np.abs(last) / (R * math.factorial(d - 1) * lam ** (d - 1)))


def _ratio(chi, d: int):
    chi = np.asarray(chi, dtype=float)
    if d == 1:
        return np.zeros(chi.shape[:-1])
    return chi[..., d - 2] / chi[..., d - 1]


def eta_of_chi(chi, lam: float, R: float, d: int):
    """``-lambda chi_{d-1}/chi_d + log(|chi_d| / (R (d-1)! lambda**(d-1)))``; first term is 0 for d=1."""
    scaled = _log_scaled_last(chi, lam, R, d)  # raises on chi_d = 0 before the division
    value = -lam * _ratio(chi, d) + scaled
    return float(value) if np.ndim(value) == 0 else value


def rho_of_chi(chi, lam: float, R: float, d: int):
    value = -_log_scaled_last(chi, lam, R, d) / lam
    return float(value) if np.ndim(value) == 0 else value


def _logs(epsilon: float) -> tuple[float, float]:
    if not (0 < epsilon < 1 / math.e):
        raise InvalidInputError(f"expansions need 0 < epsilon < 1/e, got {epsilon!r}")
    L = math.log(1.0 / epsilon)
    return L, math.log(L)


def det_time_part(epsilon: float, lam: float, d: int) -> float:
    """Deterministic part ``(1/lambda) log(1/eps) - ((d-1)/lambda) loglog(1/eps)``."""
    L, LL = _logs(epsilon)
    return L / lam - (d - 1) * LL / lam


def predict_tau_B(epsilon: float, lam: float, d: int, rho_sample):
    return det_time_part(epsilon, lam, d) + rho_sample


def exit_bracket(epsilon: float, d: int, eta=0.0):
    """``1/L + (d-1) loglog/L**2 + eta/L**2`` with ``L = log(1/eps)``."""
    L, LL = _logs(epsilon)
    return 1.0 / L + (d - 1) * LL / L**2 + np.asarray(eta) / L**2


def predict_exit_Y(epsilon: float, lam: float, d: int, R: float, sign: int, eta_sample: float) -> np.ndarray:
    """Exit point from the box ``{|y|_inf <= R}`` in every coordinate.

    Coordinate ``i`` (1-based) is
    ``lam**(i-1) R sign / L**(i-1) * (d-1)!/(d-i)! * [1 + (i-1)/L ((d-1) loglog + eta)]``.
    """
    if sign not in (-1, 1):
        raise InvalidInputError("sign must be +1 or -1")
    L, LL = _logs(epsilon)
    out = np.empty(d)
    for i in range(1, d + 1):
        coeff = lam ** (i - 1) * R * sign / L ** (i - 1) * math.factorial(d - 1) / math.factorial(d - i)
        out[i - 1] = coeff * (1.0 + (i - 1) / L * ((d - 1) * LL + eta_sample))
    out[0] = sign * R
    return out


def predict_tilde_tau(epsilon: float, alpha: float, lam: float, d: int, chi_sample) -> float:
    """Exit time from the small box ``{|y|_inf <= eps**alpha}`` including the first corrections."""
    if not 0 < alpha < 1:
        raise InvalidInputError("alpha must lie in (0, 1)")
    L, LL = _logs(epsilon)
    chi = np.asarray(chi_sample, dtype=float)
    if chi[d - 1] == 0:
        raise DegenerateInputError("chi^(d) = 0")
    G = math.log(abs(chi[d - 1]) * (1 - alpha) ** (d - 1) / (math.factorial(d - 1) * lam ** (d - 1)))
    eta_alpha = -lam * float(_ratio(chi, d)) + G
    K = (d - 1) ** 2 / (1 - alpha) * LL / L + (d - 1) * eta_alpha / ((1 - alpha) * L)
    return (1 - alpha) / lam * L - (d - 1) / lam * LL - G / lam + K / lam


def predict_small_box_exit(tilde_tau: float, epsilon: float, alpha: float, d: int, chi_sample) -> np.ndarray:
    """Exit point from the small box at time ``tilde_tau``."""
    if not tilde_tau > 0:
        raise InvalidInputError("tilde_tau must be positive")
    chi = np.asarray(chi_sample, dtype=float)
    if chi[d - 1] == 0:
        raise DegenerateInputError("chi^(d) = 0")
    scale = epsilon**alpha * math.copysign(1.0, chi[d - 1])
    ratio = float(_ratio(chi, d))
    out = np.empty(d)
    for i in range(1, d + 1):
        coeff = scale / tilde_tau ** (i - 1) * math.factorial(d - 1) / math.factorial(d - i)
        out[i - 1] = coeff * (1.0 - (i - 1) / tilde_tau * ratio)
    out[0] = scale
    return out


@dataclass
class PredictionSet:
    epsilon: float
    det_time_part: float
    coord_coeffs: list
    C_plus: float | None = None
    C_minus: float | None = None
    h1_plus: list | None = None
    h1_minus: list | None = None
    q_plus: list | None = None
    q_minus: list | None = None
    notes: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def coord_coeffs(epsilon: float, lam: float, d: int, R: float) -> list[float]:
    """Deterministic part of the exit-point expansion for ``sign = +1``, ``eta = 0``."""
    return [float(v) for v in predict_exit_Y(epsilon, lam, d, R, 1, 0.0)]


def prediction_set(spec: ProblemSpec, epsilon: float, poincare=None) -> PredictionSet:
    ps = PredictionSet(
        epsilon=epsilon,
        det_time_part=det_time_part(epsilon, spec.lam, spec.dim),
        coord_coeffs=coord_coeffs(epsilon, spec.lam, spec.dim, spec.box_radius),
    )
    if poincare is not None:
        ps.C_plus, ps.C_minus = poincare.C_plus, poincare.C_minus
        ps.h1_plus, ps.h1_minus = list(poincare.h1_plus), list(poincare.h1_minus)
        ps.q_plus, ps.q_minus = list(poincare.q_plus), list(poincare.q_minus)
    return ps


def predict_outer(spec: ProblemSpec, epsilon: float, sign: int, rho_sample, eta_sample, poincare):
    """Exit time and point for the outer box, from the Poincare data.

    Second-order data (``h2``) is not included.
    """
    if spec.outer_domain is None:
        raise StateError("predict_outer needs an outer domain")
    if poincare is None:
        raise StateError("Poincare data has not been computed")
    if sign not in (-1, 1):
        raise InvalidInputError("sign must be +1 or -1")
    C = poincare.C_plus if sign > 0 else poincare.C_minus
    q = np.asarray(poincare.q_plus if sign > 0 else poincare.q_minus, dtype=float)
    h1 = np.asarray(poincare.h1_plus if sign > 0 else poincare.h1_minus, dtype=float)
    time = det_time_part(epsilon, spec.lam, spec.dim) + rho_sample + C
    point = q + float(exit_bracket(epsilon, spec.dim, eta_sample)) * h1
    return time, point
