"""Problem definition: drift, diffusion, domains, initial law and run grid.

A :class:`ProblemSpec` is immutable once built.  :func:`from_dict` parses the
JSON configuration (unknown keys are rejected) and :func:`validate` checks
the cross-field invariants, reporting every violation with its field path.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np

from .errors import ConfigError, InvalidInputError
from .linalg_jordan import MAX_DIM, JordanBlock

NONLINEARITIES = ("none", "cubic", "quad2")
BUILTIN_DIFFUSIONS = ("radial",)

# integer codes shared with the stepping kernels
NONLIN_CODES = {"none": 0, "cubic": 1, "quad2": 2}
DIFFUSION_CODES = {"constant": 0, "radial": 1}


@dataclass(frozen=True)
class DiffusionSpec:
    """``identity``, ``constant`` (with ``matrix``) or ``builtin`` (with ``name``).

    The only builtin is ``radial``: ``sigma(x) = (1 + |x|**2) I``.
    """

    kind: str = "identity"
    matrix: tuple | None = None
    name: str | None = None

    @property
    def is_constant(self) -> bool:
        return self.kind in ("identity", "constant")

    def constant_matrix(self, dim: int) -> np.ndarray:
        if self.kind == "identity":
            return np.eye(dim)
        if self.kind == "constant":
            return np.array(self.matrix, dtype=float)
        raise InvalidInputError(f"diffusion {self.name!r} is not constant")

    def sigma(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        d = x.shape[-1]
        if self.is_constant:
            return self.constant_matrix(d)
        if self.name == "radial":
            scale = 1.0 + np.sum(x * x, axis=-1)
            return np.asarray(scale)[..., None, None] * np.eye(d)
        raise InvalidInputError(f"unknown builtin diffusion {self.name!r}")

    def a0(self, dim: int) -> np.ndarray:
        s = self.sigma(np.zeros(dim))
        return s @ s.T


@dataclass(frozen=True)
class OuterBox:
    half_width: float


@dataclass(frozen=True)
class InitLaw:
    """Law of the unscaled initial datum ``xi``; the start point is ``epsilon * xi``."""

    kind: str = "point"
    mean: tuple = ()
    cov: tuple | None = None

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        mean = np.array(self.mean, dtype=float)
        if self.kind == "point":
            return mean
        from .linalg_jordan import cholesky_or_psd_factor

        L = cholesky_or_psd_factor(np.array(self.cov, dtype=float))
        return mean + L @ rng.standard_normal(mean.size)

    def variance(self) -> np.ndarray:
        d = len(self.mean)
        if self.kind == "point":
            return np.zeros((d, d))
        return np.array(self.cov, dtype=float)


@dataclass(frozen=True)
class ProblemSpec:
    dim: int
    lam: float
    diffusion: DiffusionSpec = field(default_factory=DiffusionSpec)
    nonlinearity: str = "none"
    box_radius: float = 1.0
    outer_domain: OuterBox | None = None
    init_law: InitLaw | None = None
    epsilon_grid: tuple = (1e-4, 1e-6, 1e-8)
    alpha: float = 0.5

    @property
    def block(self) -> JordanBlock:
        return JordanBlock(self.dim, self.lam)

    @property
    def a0(self) -> np.ndarray:
        return self.diffusion.a0(self.dim)

    @property
    def is_linear(self) -> bool:
        return self.nonlinearity == "none"

    @property
    def exit_radius(self) -> float:
        """Radius of the outer-most configured boundary."""
        if self.outer_domain is not None:
            return self.outer_domain.half_width
        return self.box_radius

    def xi_law(self) -> InitLaw:
        return self.init_law if self.init_law is not None else InitLaw("point", (0.0,) * self.dim)


def drift(spec: ProblemSpec, x) -> np.ndarray:
    """``b(x) = A x + psi(x) |x|**2`` for the configured builtin.

    Works on a single point or a batch with the coordinate on the last axis.
    """
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("drift evaluated at a non-finite point")
    out = spec.lam * x
    out[..., :-1] += x[..., 1:]
    if spec.nonlinearity == "cubic":
        r2 = np.sum(x * x, axis=-1, keepdims=True)
        out = out - r2 * x
    elif spec.nonlinearity == "quad2":
        out[..., 1] += x[..., 0] * x[..., 0]
    return out


def nonlinear_part(spec: ProblemSpec, x) -> np.ndarray:
    """``psi(x) |x|**2``, i.e. ``b(x) - A x``."""
    x = np.asarray(x, dtype=float)
    if spec.nonlinearity == "cubic":
        return -np.sum(x * x, axis=-1, keepdims=True) * x
    out = np.zeros_like(x)
    if spec.nonlinearity == "quad2":
        out[..., 1] = x[..., 0] * x[..., 0]
    return out


def _is_psd(m: np.ndarray, tol: float = 1e-8) -> bool:
    return bool(np.all(np.isfinite(m))) and np.linalg.eigvalsh(0.5 * (m + m.T)).min() >= -tol


def check(spec: ProblemSpec) -> list[tuple[str, str]]:
    """Return the list of ``(field path, message)`` invariant violations."""
    errs = []
    d = spec.dim
    if not isinstance(d, int) or d < 1 or d > MAX_DIM:
        errs.append(("dim", f"must be an integer in 1..{MAX_DIM}"))
        return errs
    if not (isinstance(spec.lam, (int, float)) and math.isfinite(spec.lam) and spec.lam > 0):
        errs.append(("lambda", "must be a positive real"))
    if spec.nonlinearity not in NONLINEARITIES:
        errs.append(("nonlinearity", f"must be one of {NONLINEARITIES}"))
    elif spec.nonlinearity == "quad2" and d < 2:
        errs.append(("nonlinearity", "quad2 needs dim >= 2"))
    diff = spec.diffusion
    if diff.kind == "constant":
        m = np.array(diff.matrix, dtype=float) if diff.matrix is not None else None
        if m is None or m.shape != (d, d):
            errs.append(("diffusion.matrix", f"must be a {d}x{d} matrix"))
        elif not _is_psd(m @ m.T):
            errs.append(("diffusion.matrix", "sigma(0) sigma(0)^T is not PSD"))
    elif diff.kind == "builtin":
        if diff.name not in BUILTIN_DIFFUSIONS:
            errs.append(("diffusion.name", f"must be one of {BUILTIN_DIFFUSIONS}"))
    elif diff.kind != "identity":
        errs.append(("diffusion.kind", "must be identity, constant or builtin"))
    R = spec.box_radius
    if not (isinstance(R, (int, float)) and math.isfinite(R) and R > 0):
        errs.append(("box_radius", "must be a positive real"))
    if spec.outer_domain is not None:
        L = spec.outer_domain.half_width
        if not (isinstance(L, (int, float)) and math.isfinite(L)):
            errs.append(("outer_domain.half_width", "must be a real number"))
        elif L <= R:
            errs.append(("outer_domain.half_width", "outer domain smaller than inner box"))
    law = spec.xi_law()
    if law.kind not in ("point", "gaussian"):
        errs.append(("init_law.kind", "must be point or gaussian"))
    if len(law.mean) != d:
        errs.append(("init_law.mean", f"must have length {d}"))
    if law.kind == "gaussian":
        c = np.array(law.cov, dtype=float) if law.cov is not None else None
        if c is None or c.shape != (d, d):
            errs.append(("init_law.cov", f"must be a {d}x{d} matrix"))
        elif np.max(np.abs(c - c.T)) > 1e-10 or not _is_psd(c):
            errs.append(("init_law.cov", "must be symmetric PSD"))
    grid = list(spec.epsilon_grid)
    if not grid:
        errs.append(("epsilon_grid", "must be non-empty"))
    if any(not (isinstance(e, (int, float)) and 0 < e < 1) for e in grid):
        errs.append(("epsilon_grid", "entries must lie in (0, 1)"))
    elif any(a <= b for a, b in zip(grid, grid[1:])):
        errs.append(("epsilon_grid", "grid not decreasing"))
    if not (isinstance(spec.alpha, (int, float)) and 0 < spec.alpha < 1):
        errs.append(("alpha", "must lie in (0, 1)"))
    return errs


def validate(spec: ProblemSpec) -> ProblemSpec:
    """Check all invariants and return the normalized spec.

    Normalization expands the identity diffusion to an explicit matrix,
    fills in a zero point-mass initial law, and converts containers to tuples.
    """
    errs = check(spec)
    if errs:
        raise ConfigError(errs)
    d = spec.dim
    diff = spec.diffusion
    if diff.kind == "identity":
        diff = DiffusionSpec("constant", _tuplify(np.eye(d)))
    elif diff.kind == "constant":
        diff = DiffusionSpec("constant", _tuplify(np.array(diff.matrix, dtype=float)))
    law = spec.xi_law()
    law = InitLaw(
        law.kind,
        tuple(float(v) for v in law.mean),
        None if law.cov is None else _tuplify(np.array(law.cov, dtype=float)),
    )
    return replace(
        spec,
        lam=float(spec.lam),
        box_radius=float(spec.box_radius),
        diffusion=diff,
        init_law=law,
        epsilon_grid=tuple(float(e) for e in spec.epsilon_grid),
        alpha=float(spec.alpha),
    )


def _tuplify(m: np.ndarray) -> tuple:
    return tuple(tuple(float(v) for v in row) for row in np.atleast_2d(m))


# --- JSON (de)serialization -------------------------------------------------

PROBLEM_KEYS = {
    "dim",
    "lambda",
    "diffusion",
    "nonlinearity",
    "box_radius",
    "outer_domain",
    "init_law",
    "epsilon_grid",
    "alpha",
}


def _reject_unknown(obj: dict, allowed: set, path: str, errs: list):
    for k in obj:
        if k not in allowed:
            errs.append((f"{path}{k}", "unknown key"))


def from_dict(obj: dict[str, Any], extra_keys: set = frozenset()) -> ProblemSpec:
    """Build and validate a spec from the JSON config object.

    ``extra_keys`` lists top-level keys owned by the caller (run controls);
    any other unknown key is an error.
    """
    errs: list[tuple[str, str]] = []
    if not isinstance(obj, dict):
        raise ConfigError([("", "config must be a JSON object")])
    _reject_unknown(obj, PROBLEM_KEYS | set(extra_keys), "", errs)
    for req in ("dim", "lambda"):
        if req not in obj:
            errs.append((req, "required"))
    if errs:
        raise ConfigError(errs)

    diff_obj = obj.get("diffusion", {"kind": "identity"})
    if isinstance(diff_obj, str):
        diff_obj = {"kind": diff_obj}
    _reject_unknown(diff_obj, {"kind", "matrix", "name"}, "diffusion.", errs)
    diffusion = DiffusionSpec(
        diff_obj.get("kind", "identity"),
        None if diff_obj.get("matrix") is None else _tuplify(np.array(diff_obj["matrix"], dtype=float)),
        diff_obj.get("name"),
    )

    outer = obj.get("outer_domain")
    outer_domain = None
    if outer is not None:
        _reject_unknown(outer, {"kind", "half_width"}, "outer_domain.", errs)
        if outer.get("kind", "box") != "box":
            errs.append(("outer_domain.kind", "only 'box' is supported"))
        if "half_width" not in outer:
            errs.append(("outer_domain.half_width", "required"))
        else:
            outer_domain = OuterBox(outer["half_width"])

    init = obj.get("init_law")
    init_law = None
    if init is not None:
        _reject_unknown(init, {"kind", "mean", "cov"}, "init_law.", errs)
        init_law = InitLaw(
            init.get("kind", "point"),
            tuple(init.get("mean", (0.0,) * int(obj["dim"]))),
            init.get("cov"),
        )
    if errs:
        raise ConfigError(errs)
    spec = ProblemSpec(
        dim=obj["dim"],
        lam=obj["lambda"],
        diffusion=diffusion,
        nonlinearity=obj.get("nonlinearity", "none"),
        box_radius=obj.get("box_radius", 1.0),
        outer_domain=outer_domain,
        init_law=init_law,
        epsilon_grid=tuple(obj.get("epsilon_grid", (1e-4, 1e-6, 1e-8))),
        alpha=obj.get("alpha", 0.5),
    )
    return validate(spec)


def to_dict(spec: ProblemSpec) -> dict[str, Any]:
    diff: dict[str, Any] = {"kind": spec.diffusion.kind}
    if spec.diffusion.matrix is not None:
        diff["matrix"] = [list(r) for r in spec.diffusion.matrix]
    if spec.diffusion.name is not None:
        diff["name"] = spec.diffusion.name
    law = spec.xi_law()
    init: dict[str, Any] = {"kind": law.kind, "mean": list(law.mean)}
    if law.cov is not None:
        init["cov"] = [list(r) for r in law.cov]
    return {
        "dim": spec.dim,
        "lambda": spec.lam,
        "diffusion": diff,
        "nonlinearity": spec.nonlinearity,
        "box_radius": spec.box_radius,
        "outer_domain": None
        if spec.outer_domain is None
        else {"kind": "box", "half_width": spec.outer_domain.half_width},
        "init_law": init,
        "epsilon_grid": list(spec.epsilon_grid),
        "alpha": spec.alpha,
    }


@dataclass(frozen=True)
class TrialRecord:
    """Outcome of one simulated path.

    ``exit_face`` is 1-based.  ``inner_exit_time`` is ``None`` unless the
    small-box diagnostic was enabled; it is ``0.0`` for paths that started
    outside the small box (``started_outside`` is then set).
    """

    trial_id: int
    epsilon: float
    exit_time: float
    exit_point: tuple
    exit_face: int
    exit_sign: int
    inner_exit_time: float | None
    max_transverse_dist: float
    steps: int
    seed: int
    started_outside: bool = False

    def invariant_errors(self, radius: float, tol: float = 1e-9) -> list[str]:
        """Violations of the on-boundary invariants for a domain of half-width ``radius``."""
        errs = []
        x = np.asarray(self.exit_point, dtype=float)
        if not 1 <= self.exit_face <= x.size:
            return [f"exit_face {self.exit_face} out of range"]
        if abs(np.max(np.abs(x)) - radius) > tol * radius:
            errs.append("exit point is not on the boundary")
        if abs(abs(x[self.exit_face - 1]) - radius) > tol * radius:
            errs.append("exit face coordinate is not at the boundary")
        if self.exit_sign != (1 if x[self.exit_face - 1] > 0 else -1):
            errs.append("exit_sign disagrees with the exit point")
        if not (math.isfinite(self.exit_time) and self.exit_time >= 0):
            errs.append("exit_time must be finite and nonnegative")
        if self.max_transverse_dist < 0:
            errs.append("negative max_transverse_dist")
        return errs
