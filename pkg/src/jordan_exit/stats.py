"""Residuals, two-sample tests, proportion intervals and epsilon-trend checks.

Simulated exit data is reduced to the random shifts of the expansions

    rho_hat = exit_time - (1/lam) L + ((d-1)/lam) log L  [- C^sign]
    eta_hat = Y2 / (sign R lam (d-1)) * L**2 - L - (d-1) log L

with ``L = log(1/eps)``, then compared with direct samples of the limiting
variables, conditioned on the exit sign.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import kolmogorov

from .errors import InvalidInputError
from .model import ProblemSpec, TrialRecord
from .theory import LimitLawSampler, _logs, det_time_part, eta_of_chi, rho_of_chi, sample_chi

THEORY_SAMPLES = 100_000
CELL_CAP = 10_000


@dataclass(frozen=True)
class ResidualSample:
    rho_hat: float
    eta_hat: float | None
    sign: int
    epsilon: float


def _outer_C(poincare, sign: int) -> float:
    if poincare is None:
        return 0.0
    if isinstance(poincare, (tuple, list)):
        return float(poincare[0] if sign > 0 else poincare[1])
    return float(poincare.C_plus if sign > 0 else poincare.C_minus)


def extract_residuals(records, spec: ProblemSpec, poincare=None) -> list[ResidualSample]:
    """Residuals of each record against the deterministic parts of the expansions.

    For outer-domain specs ``poincare`` (a :class:`PoincareData` or a pair
    ``(C_plus, C_minus)``) supplies the travel-time constant that is also
    subtracted; ``eta_hat`` is only defined for inner-box runs with ``d >= 2``.
    """
    d, lam, R = spec.dim, spec.lam, spec.box_radius
    outer = spec.outer_domain is not None
    if outer and poincare is None:
        raise InvalidInputError("outer-domain residuals need the travel-time constants")
    out = []
    for r in records:
        L, LL = _logs(r.epsilon)
        sign = int(r.exit_sign)
        rho = r.exit_time - det_time_part(r.epsilon, lam, d) - (_outer_C(poincare, sign) if outer else 0.0)
        eta = None
        if d >= 2 and not outer:
            eta = r.exit_point[1] / (sign * R * lam * (d - 1)) * L**2 - L - (d - 1) * LL
        out.append(ResidualSample(float(rho), None if eta is None else float(eta), sign, float(r.epsilon)))
    return out


def ecdf(sample):
    """Sorted values and the right-continuous ECDF evaluated there."""
    x = np.sort(np.asarray(sample, dtype=float))
    if x.size == 0:
        raise InvalidInputError("ECDF of an empty sample")
    return x, np.arange(1, x.size + 1) / x.size


def ks_two_sample(a, b) -> tuple[float, float]:
    """Two-sample Kolmogorov-Smirnov statistic and asymptotic p-value."""
    a = np.sort(np.asarray(a, dtype=float))
    b = np.sort(np.asarray(b, dtype=float))
    if a.size == 0 or b.size == 0:
        raise InvalidInputError("KS test needs two nonempty samples")
    grid = np.concatenate([a, b])
    fa = np.searchsorted(a, grid, side="right") / a.size
    fb = np.searchsorted(b, grid, side="right") / b.size
    stat = float(np.max(np.abs(fa - fb)))
    ne = a.size * b.size / (a.size + b.size)
    return stat, float(kolmogorov(math.sqrt(ne) * stat))


def wilson_interval(k: int, n: int, z: float = 1.96) -> tuple[float, float]:
    if not (n >= 1 and 0 <= k <= n):
        raise InvalidInputError("wilson_interval needs 0 <= k <= n and n >= 1")
    p = k / n
    denom = 1 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z / denom * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n))
    lo = 0.0 if k == 0 else max(0.0, centre - half)
    hi = 1.0 if k == n else min(1.0, centre + half)
    return lo, hi


def bootstrap_se(stat, samples, n_boot: int = 200, rng: np.random.Generator | None = None) -> float:
    """Bootstrap standard error of ``stat(*samples)``, resampling each sample independently."""
    rng = rng if rng is not None else np.random.default_rng(0)
    arrs = [np.asarray(s, dtype=float) for s in samples]
    vals = [stat(*(a[rng.integers(0, a.size, a.size)] for a in arrs)) for _ in range(n_boot)]
    return float(np.std(vals, ddof=1))


def bootstrap_decrease(a, b, stat=np.median, conf: float = 0.99, n_boot: int = 2000,
                       rng: np.random.Generator | None = None) -> tuple[float, float]:
    """Observed ``stat(a) - stat(b)`` and its one-sided lower bootstrap bound at ``conf``."""
    rng = rng if rng is not None else np.random.default_rng(0)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    diffs = np.array([
        stat(a[rng.integers(0, a.size, a.size)]) - stat(b[rng.integers(0, b.size, b.size)])
        for _ in range(n_boot)
    ])
    return float(stat(a) - stat(b)), float(np.quantile(diffs, 1 - conf))


@dataclass
class TrendVerdict:
    verdict: str
    values: list
    ses: list | None
    inversions: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.verdict == "PASS"


def trend_check(values, ses=None) -> TrendVerdict:
    """Nonincreasing along the grid, up to one inversion smaller than its standard error.

    ``ses[i]`` is the standard error of ``values[i]``; an increase from
    ``i-1`` to ``i`` is tolerated once when it is below ``ses[i]``.
    """
    v = [float(x) for x in values]
    if len(v) < 3:
        raise InvalidInputError("trend_check needs at least 3 grid points")
    if ses is not None and len(ses) != len(v):
        raise InvalidInputError("ses must match values")
    inv = [(i, v[i] - v[i - 1]) for i in range(1, len(v)) if v[i] > v[i - 1]]
    ok = not inv or (len(inv) == 1 and ses is not None and inv[0][1] < float(ses[inv[0][0]]))
    return TrendVerdict("PASS" if ok else "FAIL", v, None if ses is None else [float(s) for s in ses], inv)


@dataclass
class TheorySample:
    rho: np.ndarray
    eta: np.ndarray | None
    sign: np.ndarray

    def given(self, sign: int):
        mask = self.sign == sign
        return self.rho[mask], None if self.eta is None else self.eta[mask]


def theory_sample(spec: ProblemSpec, n: int = THEORY_SAMPLES, seed: int = 0) -> TheorySample:
    """Direct samples of ``(rho, eta, sign(chi_d))``; draws with ``chi_d = 0`` are discarded."""
    sampler = LimitLawSampler.from_spec(spec)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(2**31,))))
    chi = sample_chi(sampler, rng, n)
    chi = chi[chi[:, -1] != 0]
    d, lam, R = spec.dim, spec.lam, spec.box_radius
    rho = rho_of_chi(chi, lam, R, d)
    eta = eta_of_chi(chi, lam, R, d) if d >= 2 else None
    return TheorySample(np.atleast_1d(rho), None if eta is None else np.atleast_1d(eta), np.sign(chi[:, -1]).astype(int))


def _ks_cell(sim, th, n_boot, rng):
    stat, p = ks_two_sample(sim, th)
    se = bootstrap_se(lambda a, b: ks_two_sample(a, b)[0], [sim, th], n_boot, rng)
    return {"n_sim": int(len(sim)), "n_theory": int(len(th)), "ks": stat, "p": p, "se": se,
            "mean_sim": float(np.mean(sim)), "mean_theory": float(np.mean(th)),
            "var_sim": float(np.var(sim)), "var_theory": float(np.var(th))}


@dataclass
class EmpiricalSummary:
    cells: list = field(default_factory=list)
    trend: list = field(default_factory=list)
    verdicts: dict = field(default_factory=dict)
    eta_convention: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def summarize(records_by_eps: dict, spec: ProblemSpec, poincare=None, seed: int = 0,
              n_theory: int = THEORY_SAMPLES, cap: int = CELL_CAP, n_boot: int = 100,
              z: float = 2.5758) -> EmpiricalSummary:
    """Compare residuals with the limiting laws for every epsilon and exit sign.

    ``records_by_eps`` maps epsilon to a list of :class:`TrialRecord`.  Each
    cell keeps at most ``cap`` trials (the first by trial id).
    """
    th = theory_sample(spec, n_theory, seed)
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(2**31 + 1,)))
    p_plus_theory = float(np.mean(th.sign > 0))
    summary = EmpiricalSummary()
    eps_sorted = sorted(records_by_eps, reverse=True)
    eta_gap, eta_var = [], []
    for eps in eps_sorted:
        recs = sorted(records_by_eps[eps], key=lambda r: r.trial_id)
        if not recs:
            raise InvalidInputError(f"no records for epsilon={eps!r}")
        res = extract_residuals(recs, spec, poincare)
        row = {"epsilon": eps, "n": len(res)}
        n_plus = sum(r.sign > 0 for r in res)
        lo, hi = wilson_interval(n_plus, len(res), z)
        row["sign_plus"] = {"k": n_plus, "n": len(res), "wilson": [lo, hi], "theory": p_plus_theory}
        for s in (1, -1):
            tag = "plus" if s > 0 else "minus"
            cell = [r for r in res if r.sign == s][:cap]
            th_rho, th_eta = th.given(s)
            if not cell or th_rho.size == 0:
                continue
            entry = {"epsilon": eps, "sign": s, "rho": _ks_cell([r.rho_hat for r in cell], th_rho, n_boot, rng)}
            if th_eta is not None and cell[0].eta_hat is not None:
                eh = np.array([r.eta_hat for r in cell])
                entry["eta"] = _ks_cell(eh, th_eta, n_boot, rng)
                entry["eta_flipped_ks"] = ks_two_sample(-eh, th_eta)[0]
                eta_gap.append(entry["eta_flipped_ks"] - entry["eta"]["ks"])
                eta_var.append(entry["eta"]["se"] ** 2)
            summary.cells.append(entry)
            row[f"ks_rho_{tag}"] = entry["rho"]["ks"]
            row[f"se_rho_{tag}"] = entry["rho"]["se"]
            if "eta" in entry:
                row[f"ks_eta_{tag}"] = entry["eta"]["ks"]
                row[f"se_eta_{tag}"] = entry["eta"]["se"]
        row["median_max_transverse"] = float(np.median([r.max_transverse_dist for r in recs]))
        summary.trend.append(row)
    if len(eps_sorted) >= 3:
        for key in ("rho_plus", "rho_minus", "eta_plus", "eta_minus"):
            if all(f"ks_{key}" in row for row in summary.trend):
                summary.verdicts[f"ks_{key}"] = asdict(trend_check(
                    [row[f"ks_{key}"] for row in summary.trend], [row[f"se_{key}"] for row in summary.trend]
                ))
        summary.verdicts["overall"] = (
            "PASS" if all(v["verdict"] == "PASS" for v in summary.verdicts.values()) else "FAIL"
        )
    if eta_gap:
        summary.eta_convention = eta_convention_verdict(eta_gap, eta_var)
    return summary


def eta_convention_verdict(gaps, variances, z: float = 2.0) -> dict:
    """Which sign of eta the residuals support.

    ``gaps`` are ``KS(-eta_hat, eta) - KS(eta_hat, eta)`` per cell; the total
    is compared with ``z`` times its standard error.
    """
    total = float(np.sum(gaps))
    se = float(math.sqrt(np.sum(variances)))
    if total > z * se:
        verdict = "+eta"
    elif total < -z * se:
        verdict = "-eta"
    else:
        verdict = "inconclusive"
    return {"ks_gap_total": total, "ks_gap_se": se, "cells": len(gaps), "supported": verdict}


def group_by_epsilon(records) -> dict:
    out: dict = {}
    for r in records:
        out.setdefault(r.epsilon, []).append(r)
    return out


__all__ = [
    "ResidualSample", "TrialRecord", "extract_residuals", "ecdf", "ks_two_sample", "wilson_interval",
    "bootstrap_se", "bootstrap_decrease", "trend_check", "TrendVerdict", "theory_sample", "TheorySample",
    "summarize", "EmpiricalSummary", "group_by_epsilon",
]
