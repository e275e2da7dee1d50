"""Deterministic dynamics: flow maps, the linearizing conjugacy and Poincare data.

``f(x) = lim_{t->inf} exp(A t) S^{-t} x = x - int_0^inf exp(A s) psi(S^{-s} x) |S^{-s} x|**2 ds``
flattens the nonlinear flow ``S^t`` onto ``exp(A t)``; ``g`` is its inverse.
The Poincare map ``pi(x) = S^{T(x)} x`` carries points near ``g(+-R e1)`` to
the outer box; its derivative along ``u1`` gives the first-order exit
direction ``h1``.

All evaluators accept a single point or a batch ``(n, d)``.  Within one batch
the integration grid and horizon are shared, so finite differences taken over
a batch see a smooth function.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, EscapeError, GeometryError, InvalidInputError
from .linalg_jordan import exp_action
from . import kernels
from .model import NONLIN_CODES, ProblemSpec, drift, nonlinear_part

MAX_HORIZON_FACTOR = 200.0
FD_STEP_FACTOR = 1e-5


@dataclass(frozen=True)
class FlowIntegrator:
    """Classical RK4 on ``x' = b(x)`` with fixed step ``step_size``.

    ``bound`` is the sup-norm radius of the bounding region; leaving it is an
    :class:`EscapeError`.
    """

    spec: ProblemSpec
    step_size: float = 1e-3
    bound: float | None = None

    @property
    def bounding_radius(self) -> float:
        return self.bound if self.bound is not None else 10.0 * self.spec.exit_radius

    def rk4_step(self, x: np.ndarray, h: float) -> np.ndarray:
        b = self.spec
        k1 = drift(b, x)
        k2 = drift(b, x + 0.5 * h * k1)
        k3 = drift(b, x + 0.5 * h * k2)
        k4 = drift(b, x + h * k3)
        return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def flow(integrator: FlowIntegrator, x0, t: float) -> np.ndarray:
    """``S^t x0``; negative ``t`` integrates backward."""
    x = np.array(x0, dtype=float)
    t = float(t)
    if not math.isfinite(t) or not np.all(np.isfinite(x)):
        raise InvalidInputError("flow needs finite x0 and t")
    if t == 0.0:
        return x
    n = max(1, math.ceil(abs(t) / integrator.step_size - 1e-9))
    h = t / n
    bound = integrator.bounding_radius
    for k in range(n):
        x = integrator.rk4_step(x, h)
        if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > bound:
            raise EscapeError(f"trajectory left the bounding region at t={(k + 1) * h:.6g}", (k + 1) * h)
    return x


def linearize_f(integrator: FlowIntegrator, x, T: float | None = None, tail_tol: float = 1e-13) -> np.ndarray:
    """The conjugacy ``f(x)``.

    The integral is truncated at ``T`` and evaluated by composite Simpson on
    the RK4 grid of the backward flow.  With ``T=None`` the horizon grows
    until the integrand bound certifies a tail below ``tail_tol``.
    """
    spec = integrator.spec
    x = np.array(x, dtype=float)
    single = x.ndim == 1
    xs = np.ascontiguousarray(np.atleast_2d(x))
    if spec.is_linear:
        return x
    if not np.all(np.isfinite(xs)):
        raise InvalidInputError("f needs finite input")
    h, n_steps = _simpson_grid(integrator.step_size, T)
    lam = spec.lam
    max_steps = math.ceil(MAX_HORIZON_FACTOR / lam / h)
    acc = np.zeros_like(xs)
    k = kernels.get().conjugacy_integral(
        xs, lam, NONLIN_CODES[spec.nonlinearity], h, n_steps or 0, tail_tol, 2.0 * spec.dim / lam, max_steps, acc
    )
    if k < 0:
        raise ConvergenceError("tail bound for the conjugacy integral not reached")
    out = xs - (h / 3.0) * acc
    return out[0] if single else out


def _simpson_grid(h: float, T: float | None) -> tuple[float, int | None]:
    if T is None:
        return h, None
    if not T > 0:
        raise InvalidInputError("horizon T must be positive")
    n_steps = 2 * max(1, math.ceil(T / (2 * h)))
    return T / n_steps, n_steps


def _linearize_f_numpy(integrator: FlowIntegrator, x, T: float | None = None, tail_tol: float = 1e-13) -> np.ndarray:
    # reference implementation of linearize_f, kept for cross-checks
    spec = integrator.spec
    x = np.array(x, dtype=float)
    single = x.ndim == 1
    xs = np.atleast_2d(x)
    if spec.is_linear:
        return x
    lam = spec.lam
    block = spec.block
    h = integrator.step_size
    s_min = 2.0 * spec.dim / lam
    max_T = MAX_HORIZON_FACTOR / lam
    h, n_steps = _simpson_grid(h, T)

    def integrand(s, y):
        return exp_action(block, s, nonlinear_part(spec, y))

    y = xs.copy()
    g_prev = integrand(0.0, y)
    acc = g_prev.copy()  # Simpson weights: 1, 4, 2, 4, ..., 4, 1 (times h/3)
    k = 0
    while True:
        y = integrator.rk4_step(y, -h)
        k += 1
        s = k * h
        g = integrand(s, y)
        if n_steps is not None:
            done = k == n_steps
        else:
            if s > max_T:
                raise ConvergenceError("tail bound for the conjugacy integral not reached")
            done = k % 2 == 0 and s >= s_min and np.max(np.abs(g)) / lam < tail_tol
        if done:
            acc += g
            break
        acc += (4.0 if k % 2 else 2.0) * g
    out = xs - (h / 3.0) * acc
    return out[0] if single else out


def _fd_jacobian(fun, x: np.ndarray, step: float) -> np.ndarray:
    """Central-difference Jacobians of ``fun`` at every row of ``x``: ``(n, d, d)``."""
    n, d = x.shape
    stencil = [x]
    for j in range(d):
        e = np.zeros(d)
        e[j] = step
        stencil += [x + e, x - e]
    vals = fun(np.concatenate(stencil))
    jac = np.empty((n, d, d))
    for j in range(d):
        plus = vals[(2 * j + 1) * n : (2 * j + 2) * n]
        minus = vals[(2 * j + 2) * n : (2 * j + 3) * n]
        jac[:, :, j] = (plus - minus) / (2 * step)
    return jac


def jacobian_f(integrator: FlowIntegrator, x, step: float = 1e-4, T: float | None = None) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=float))
    return _fd_jacobian(lambda z: linearize_f(integrator, z, T=T), x, step)


def inverse_g(f_handle, y, tol: float = 1e-12, max_iter: int = 100, fd_step: float = 1e-6) -> np.ndarray:
    """Solve ``f(x) = y`` by Newton's method seeded at ``x = y``.

    ``f_handle`` maps a batch ``(n, d)`` to ``(n, d)``.  The Jacobian is taken
    by central differences; steps are halved while they fail to reduce the
    residual.
    """
    y = np.array(y, dtype=float)
    single = y.ndim == 1
    ys = np.atleast_2d(y)
    x = ys.copy()
    res = f_handle(x) - ys
    for _ in range(max_iter):
        err = np.max(np.abs(res), axis=1)
        if np.all(err <= tol):
            return x[0] if single else x
        jac = _fd_jacobian(f_handle, x, fd_step)
        try:
            dx = np.linalg.solve(jac, res[..., None])[..., 0]
        except np.linalg.LinAlgError:
            raise ConvergenceError("singular Jacobian while inverting the conjugacy") from None
        dx[err <= tol] = 0.0
        damp = 1.0
        for _ in range(30):
            x_new = x - damp * dx
            res_new = f_handle(x_new) - ys
            if np.all(np.max(np.abs(res_new), axis=1) <= np.maximum(err, tol)):
                break
            damp *= 0.5
        x, res = x_new, res_new
    if np.all(np.max(np.abs(res), axis=1) <= tol):
        return x[0] if single else x
    raise ConvergenceError("inverse of the conjugacy did not converge")


class Conjugacy:
    """Bundles ``f``, ``g`` and ``Df`` for one problem."""

    def __init__(self, integrator: FlowIntegrator, T: float | None = None, tail_tol: float = 1e-13):
        self.integrator = integrator
        self.T = T
        self.tail_tol = tail_tol

    def f(self, x):
        return linearize_f(self.integrator, x, T=self.T, tail_tol=self.tail_tol)

    def g(self, y, tol: float = 1e-12):
        if self.integrator.spec.is_linear:
            return np.array(y, dtype=float)
        return inverse_g(self.f, y, tol=tol)

    def residual(self, x, step: float = 1e-4) -> np.ndarray:
        """``Df(x) b(x) - A f(x)`` for each row of ``x``."""
        spec = self.integrator.spec
        x = np.atleast_2d(np.asarray(x, dtype=float))
        jac = _fd_jacobian(self.f, x, step)
        fx = self.f(x)
        Af = spec.lam * fx
        Af[:, :-1] += fx[:, 1:]
        return np.einsum("nij,nj->ni", jac, drift(spec, x)) - Af


@dataclass(frozen=True)
class PoincareData:
    q_plus: np.ndarray
    q_minus: np.ndarray
    C_plus: float
    C_minus: float
    h1_plus: np.ndarray
    h1_minus: np.ndarray

    def to_dict(self) -> dict:
        return {
            "q_plus": [float(v) for v in self.q_plus],
            "q_minus": [float(v) for v in self.q_minus],
            "C_plus": float(self.C_plus),
            "C_minus": float(self.C_minus),
            "h1_plus": [float(v) for v in self.h1_plus],
            "h1_minus": [float(v) for v in self.h1_minus],
        }


def box_crossing(integrator: FlowIntegrator, x0, L: float, transversality_tol: float = 1e-3):
    """First time ``T`` with ``|S^T x0|_inf = L`` and the crossing point.

    The crossing step is refined by bisection on the substep length; the
    face coordinate of the returned point is snapped to ``+-L``.
    """
    x = np.array(x0, dtype=float)
    if np.max(np.abs(x)) >= L:
        raise GeometryError("starting point is not inside the outer box")
    h = integrator.step_size
    t = 0.0
    max_steps = int(MAX_HORIZON_FACTOR / (integrator.spec.lam * h))
    for _ in range(max_steps):
        nxt = integrator.rk4_step(x, h)
        if np.max(np.abs(nxt)) >= L:
            break
        x = nxt
        t += h
    else:
        raise GeometryError("flow did not reach the outer box")
    lo, hi = 0.0, h
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if np.max(np.abs(integrator.rk4_step(x, mid))) >= L:
            hi = mid
        else:
            lo = mid
    point = integrator.rk4_step(x, hi)
    face = int(np.argmax(np.abs(point)))
    point[face] = math.copysign(L, point[face])
    b = drift(integrator.spec, point)
    if abs(b[face]) < transversality_tol * np.linalg.norm(b):
        raise GeometryError(f"flow is not transversal to the face x[{face + 1}] = +-L")
    return t + hi, point


def _fd4(fun, x: np.ndarray, direction: np.ndarray, step: float) -> np.ndarray:
    pts = np.array([x + 2 * step * direction, x + step * direction, x - step * direction, x - 2 * step * direction])
    v = fun(pts)
    return (-v[0] + 8 * v[1] - 8 * v[2] + v[3]) / (12 * step)


def poincare_data(integrator: FlowIntegrator, R: float, L: float, g_handle=None) -> PoincareData:
    """``q+-``, ``C+- = T(g(+-R e1))`` and ``h1+- = Dpi(g(+-R e1)) u1+-``.

    ``u1+- = +-R lambda (d-1) Dg(+-R e1) e2``.  Derivatives are fourth-order
    central differences with step ``1e-5 R``.
    """
    spec = integrator.spec
    d = spec.dim
    if g_handle is None:
        g_handle = Conjugacy(integrator).g
    step = FD_STEP_FACTOR * R

    def pi(points):
        return np.array([box_crossing(integrator, p, L)[1] for p in np.atleast_2d(points)])

    out = {}
    for sign, tag in ((1, "plus"), (-1, "minus")):
        anchor = np.zeros(d)
        anchor[0] = sign * R
        x_anchor = np.asarray(g_handle(anchor), dtype=float)
        C, q = box_crossing(integrator, x_anchor, L)
        if d == 1:
            h1 = np.zeros(d)
        else:
            e2 = np.zeros(d)
            e2[1] = 1.0
            dg_e2 = _fd4(lambda p: np.atleast_2d(g_handle(p)), anchor, e2, step)
            u1 = sign * R * spec.lam * (d - 1) * dg_e2
            norm = float(np.linalg.norm(u1))
            h1 = norm * _fd4(pi, x_anchor, u1 / norm, step) if norm > 0 else np.zeros(d)
        out[tag] = (q, C, h1)
    return PoincareData(
        q_plus=out["plus"][0],
        q_minus=out["minus"][0],
        C_plus=out["plus"][1],
        C_minus=out["minus"][1],
        h1_plus=out["plus"][2],
        h1_minus=out["minus"][2],
    )


def poincare_for_spec(spec: ProblemSpec, step_size: float = 1e-3) -> PoincareData:
    if spec.outer_domain is None:
        raise InvalidInputError("spec has no outer domain")
    integ = FlowIntegrator(spec, step_size=step_size)
    return poincare_data(integ, spec.box_radius, spec.outer_domain.half_width)
