"""Path simulation and first-exit detection.

Linear drift with constant diffusion is stepped with the exact Gaussian
transition ``Y(t+D) = exp(A D) (Y(t) + eps G)``, ``G ~ N(0, Sigma_D)``.
Everything else uses Euler-Maruyama.  The only discretization bias of the
exact sampler is the linear interpolation used to locate the crossing, so the
step is refined near the boundary (see :class:`StepPolicy`).

Each trial owns two counter-based random streams derived from
``(master_seed, trial_id)``: the base stream (initial datum and one normal
vector per base step) and a refinement stream used only when steps are split
(``StepPolicy.refine``).  Split steps are conditioned on the base increment,
so a refined run follows the same base path up to the crossing.
"""
from __future__ import annotations

import functools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels
from .errors import (
    BlowUpError,
    BudgetError,
    GeometryError,
    InvalidInputError,
    JordanExitError,
    MisuseError,
)
from .linalg_jordan import (
    JordanBlock,
    cholesky_or_psd_factor,
    exp_matrix,
    finite_noise_covariance,
)
from .model import DIFFUSION_CODES, NONLIN_CODES, ProblemSpec, TrialRecord, drift

DEFAULT_MAX_STEPS = 10**8
BLOCK_SIZE = 1024
MAX_SPLIT = 64

ST_RUNNING, ST_EXITED, ST_BLOWUP, ST_BUDGET = 0, 1, 2, 3


@dataclass
class StepperState:
    time: float
    position: np.ndarray
    rng: np.random.Generator | None = None
    max_transverse_dist: float = 0.0


@dataclass(frozen=True)
class StepPolicy:
    """Step sizes.

    The exact sampler uses ``coarse`` until ``|y|_inf`` exceeds
    ``switch_frac`` times the current target radius, then ``fine``.
    Euler-Maruyama always uses ``em``.  ``refine = k`` splits every step into
    ``2**k`` conditioned substeps.
    """

    coarse: float = 1e-2
    fine: float = 1e-4
    em: float = 1e-4
    switch_frac: float = 0.9
    refine: int = 0

    def __post_init__(self):
        for name in ("coarse", "fine", "em"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise InvalidInputError(f"step size {name} must be positive")
        if not 0 < self.switch_frac <= 1:
            raise InvalidInputError("switch_frac must lie in (0, 1]")
        if not 0 <= self.refine or 2**self.refine > MAX_SPLIT:
            raise InvalidInputError(f"refine must satisfy 0 <= refine <= {int(math.log2(MAX_SPLIT))}")

    @property
    def split(self) -> int:
        return 2**self.refine


@dataclass(frozen=True)
class Crossing:
    theta: float
    time: float
    point: np.ndarray
    face: int  # 1-based
    sign: int


@dataclass
class BatchResult:
    records: list[TrialRecord]
    errors: list[tuple[int, str, str]] = field(default_factory=list)
    n_started_outside: int = 0

    @property
    def n_trials(self) -> int:
        return len(self.records) + len(self.errors)


def _transverse(y) -> float:
    """Distance to span(e1); the largest one over a batch of rows."""
    y = np.asarray(y, dtype=float)
    if y.ndim == 2:
        return float(np.max(np.sqrt(np.sum(y[:, 1:] ** 2, axis=1)))) if y.size else 0.0
    return float(math.sqrt(sum(v * v for v in y[1:])))


def exact_linear_step(block, a0, epsilon: float, state: StepperState, delta: float, draws=None) -> StepperState:
    """One exact transition of the constant-coefficient linear SDE.

    ``block`` may be a :class:`JordanBlock` or a linear :class:`ProblemSpec`.
    ``draws`` (standard normals) default to ``state.rng``; an ``(n, d)``
    array of draws advances ``n`` independent copies at once.
    """
    if isinstance(block, ProblemSpec):
        if not (block.is_linear and block.diffusion.is_constant):
            raise MisuseError("exact_linear_step needs linear drift and constant diffusion")
        block = block.block
    if not isinstance(block, JordanBlock):
        raise MisuseError("exact_linear_step needs a JordanBlock or a linear ProblemSpec")
    if not delta >= 0:
        raise InvalidInputError("delta must be nonnegative")
    y = np.asarray(state.position, dtype=float)
    if delta == 0:
        return replace(state, position=y.copy())
    M = exp_matrix(block, delta)
    if epsilon != 0:
        if draws is None:
            if state.rng is None:
                raise InvalidInputError("no draws and no rng")
            draws = state.rng.standard_normal(block.dim)
        L = cholesky_or_psd_factor(finite_noise_covariance(block, a0, delta))
        y = y + epsilon * (np.asarray(draws, dtype=float) @ L.T)
    new = y @ M.T
    return StepperState(state.time + delta, new, state.rng, max(state.max_transverse_dist, _transverse(new)))


def em_step(spec: ProblemSpec, epsilon: float, state: StepperState, delta: float, draws) -> StepperState:
    """``x' = x + b(x) D + eps sigma(x) sqrt(D) draws``."""
    if not delta > 0:
        raise InvalidInputError("delta must be positive")
    x = np.asarray(state.position, dtype=float)
    dw = math.sqrt(delta) * np.asarray(draws, dtype=float)
    if spec.diffusion.is_constant:
        noise = dw @ spec.diffusion.constant_matrix(spec.dim).T
    elif x.ndim == 1:
        noise = spec.diffusion.sigma(x) @ dw
    else:
        noise = np.einsum("nij,nj->ni", spec.diffusion.sigma(x), dw)
    with np.errstate(over="ignore", invalid="ignore"):
        new = x + delta * drift(spec, x) + epsilon * noise
    if not np.all(np.isfinite(new)):
        raise BlowUpError(f"non-finite state after t={state.time + delta:.6g}")
    return StepperState(state.time + delta, new, state.rng, max(state.max_transverse_dist, _transverse(new)))


def detect_crossing(prev: StepperState, nxt: StepperState, radius: float) -> Crossing | None:
    """First face of ``{|y|_inf <= radius}`` crossed on the segment ``prev -> nxt``.

    Smallest interpolation parameter wins; ties go to the lower face.  The
    crossing coordinate is snapped onto the face.
    """
    a = np.asarray(prev.position, dtype=float)
    b = np.asarray(nxt.position, dtype=float)
    best = None
    for i in range(a.size):
        if abs(b[i]) >= radius:
            s = 1.0 if b[i] > 0 else -1.0
            th = (s * radius - a[i]) / (b[i] - a[i])
            if best is None or th < best[0]:
                best = (th, i, int(s))
    if best is None:
        return None
    th, i, s = best
    point = a + th * (b - a)
    point[i] = s * radius
    return Crossing(th, prev.time + th * (nxt.time - prev.time), point, i + 1, s)


@dataclass(frozen=True)
class _Plan:
    exact: bool
    mats: np.ndarray | None
    sigma: np.ndarray
    nonlin: int
    diff: int


def _split_mats(block: JordanBlock, a0: np.ndarray, dt: float, m: int) -> np.ndarray:
    d = block.dim
    out = np.zeros((4 + 2 * m, d, d))
    cov = finite_noise_covariance(block, a0, dt)
    out[0] = exp_matrix(block, dt)
    out[1] = cholesky_or_psd_factor(cov)
    if m == 1:
        out[2], out[3] = out[0], out[1]
        out[4] = out[5] = np.eye(d)
        return out
    h = dt / m
    cov_h = finite_noise_covariance(block, a0, h)
    out[2] = exp_matrix(block, h)
    out[3] = cholesky_or_psd_factor(cov_h)
    cov_pinv = np.linalg.pinv(cov, rcond=1e-14, hermitian=True)
    for l in range(m):
        E = exp_matrix(block, -l * h)
        out[4 + l] = E
        out[4 + m + l] = cov_h @ E.T @ cov_pinv
    return out


@functools.lru_cache(maxsize=32)
def _plan(spec: ProblemSpec, policy: StepPolicy) -> _Plan:
    d = spec.dim
    exact = spec.is_linear and spec.diffusion.is_constant
    sigma = spec.diffusion.constant_matrix(d) if spec.diffusion.is_constant else np.eye(d)
    diff = DIFFUSION_CODES["constant" if spec.diffusion.is_constant else "radial"]
    mats = None
    if exact:
        m = policy.split
        mats = np.ascontiguousarray(
            np.stack([_split_mats(spec.block, spec.a0, dt, m) for dt in (policy.coarse, policy.fine)])
        )
    return _Plan(exact, mats, np.ascontiguousarray(sigma, dtype=float), NONLIN_CODES[spec.nonlinearity], diff)


def trial_seed(master_seed: int, trial_id: int) -> int:
    """64-bit seed of one trial; it alone determines the trial's streams."""
    ss = np.random.SeedSequence(master_seed, spawn_key=(trial_id,))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _stream(seed: int, which: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(which,))))


_NO_SPLIT_DRAWS = np.zeros((1, 1))


def run_trial(
    spec: ProblemSpec,
    epsilon: float,
    trial_id: int,
    master_seed: int,
    *,
    policy: StepPolicy = StepPolicy(),
    inner: bool = False,
    antithetic: bool = False,
    x0=None,
    max_steps: int = DEFAULT_MAX_STEPS,
    backend: str | None = None,
) -> TrialRecord:
    """Simulate one path from ``epsilon * xi`` to the outer-most boundary.

    Parameters
    ----------
    inner : bool
        Also record the exit time from the small box ``|y|_inf <= eps**alpha``.
    antithetic : bool
        Negate the initial datum and every normal draw.
    x0 : array_like, optional
        Deterministic start point replacing ``epsilon * xi``.
    """
    if not (math.isfinite(epsilon) and epsilon >= 0):
        raise InvalidInputError("epsilon must be finite and nonnegative")
    if max_steps < 1:
        raise InvalidInputError("max_steps must be positive")
    plan = _plan(spec, policy)
    kern = kernels.get(backend)
    d = spec.dim
    m = policy.split
    seed = trial_seed(master_seed, trial_id)
    base = _stream(seed, 0)
    ref = _stream(seed, 1) if m > 1 else None
    flip = -1.0 if antithetic else 1.0
    if x0 is None:
        y = epsilon * (flip * np.asarray(spec.xi_law().sample(base), dtype=float))
    else:
        y = flip * np.array(x0, dtype=float)
        if y.shape != (d,):
            raise InvalidInputError(f"x0 must have length {d}")
    y = np.ascontiguousarray(y, dtype=float)
    outer_r = spec.exit_radius
    if np.max(np.abs(y)) >= outer_r:
        raise GeometryError("start point is not inside the domain")
    inner_r = epsilon**spec.alpha if (inner and epsilon > 0) else 0.0
    started_outside = inner_r > 0 and np.max(np.abs(y)) >= inner_r
    fstate = np.array([0.0, _transverse(y), 0.0 if started_outside else math.nan])
    istate = np.array([0, 1 if started_outside else 0, ST_RUNNING, 0, 0], dtype=np.int64)
    while istate[2] == ST_RUNNING:
        z = base.standard_normal((BLOCK_SIZE, d))
        zr = ref.standard_normal((BLOCK_SIZE, m * d)) if ref is not None else _NO_SPLIT_DRAWS
        if antithetic:
            z = -z
            zr = -zr
        if plan.exact:
            kern.advance_linear(
                y, fstate, istate, z, zr, plan.mats, epsilon, inner_r, outer_r,
                policy.switch_frac, policy.coarse, policy.fine, m, max_steps,
            )
        else:
            kern.advance_em(
                y, fstate, istate, z, zr, plan.sigma, epsilon, spec.lam, plan.nonlin, plan.diff,
                inner_r, outer_r, policy.em, m, max_steps,
            )
    if istate[2] == ST_BLOWUP:
        raise BlowUpError(f"non-finite state after t={fstate[0]:.6g} (trial {trial_id})")
    if istate[2] == ST_BUDGET:
        raise BudgetError(f"step budget {max_steps} exhausted at t={fstate[0]:.6g} (trial {trial_id})")
    return TrialRecord(
        trial_id=int(trial_id),
        epsilon=float(epsilon),
        exit_time=float(fstate[0]),
        exit_point=tuple(float(v) for v in y),
        exit_face=int(istate[3]) + 1,
        exit_sign=int(istate[4]),
        inner_exit_time=None if inner_r == 0 or not istate[1] else float(fstate[2]),
        max_transverse_dist=float(fstate[1]),
        steps=int(istate[0]),
        seed=seed,
        started_outside=bool(started_outside),
    )


def run_batch(
    spec: ProblemSpec,
    epsilon: float,
    n_trials: int,
    master_seed: int,
    worker_count: int = 1,
    **trial_kw,
) -> BatchResult:
    """Run trials ``0 .. n_trials-1``; the result does not depend on ``worker_count``.

    Trial-level failures are collected as ``(trial_id, error type, message)``.
    """
    if not (isinstance(n_trials, (int, np.integer)) and n_trials >= 1):
        raise InvalidInputError("n_trials must be a positive integer")
    if worker_count < 1:
        raise InvalidInputError("worker_count must be positive")
    _plan(spec, trial_kw.get("policy", StepPolicy()))  # build once, outside the workers

    def one(tid):
        try:
            return run_trial(spec, epsilon, tid, master_seed, **trial_kw)
        except JordanExitError as exc:
            return (tid, type(exc).__name__, str(exc))

    ids = range(int(n_trials))
    if worker_count == 1:
        outcomes = [one(t) for t in ids]
    else:
        with ThreadPoolExecutor(max_workers=worker_count) as pool:
            outcomes = list(pool.map(one, ids))
    out = BatchResult([])
    for o in outcomes:
        if isinstance(o, TrialRecord):
            out.records.append(o)
            out.n_started_outside += o.started_outside
        else:
            out.errors.append(o)
    return out
