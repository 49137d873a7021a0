"""Scalar trust-region solver with a dogleg step.

Minimizes ``phi(x) = f(x)**2 / 2`` over a closed interval, starting from
``x0`` (0 deg by default).  The step is chosen on the dogleg path between
the Cauchy point of the Gauss-Newton model and the Newton point of the
full quadratic model (``f'^2 + f f''`` when a second derivative is
supplied).  In one dimension both points lie on the same ray, so the path
reduces to "Newton point if it fits, else the radius along the descent
direction".  A zero of ``f`` and a minimum of ``|f|`` are told apart by
the final residual.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

ROOT = "root"
MINIMUM = "minimum"
CLAMPED = "clamped"


@dataclass(frozen=True)
class SolverConfig:
    tol: float = 1e-8  # p.u.
    grad_tol: float = 1e-12
    max_iter: int = 100
    radius_init: float = 1.0  # degrees
    radius_max: float | None = None  # defaults to half the domain width
    eta_accept: float = 0.1
    shrink: float = 0.25
    grow: float = 2.0
    domain: tuple = (-20.0, 20.0)
    x_tol: float = 1e-12  # degrees

    def __post_init__(self):
        if not 0 < self.eta_accept < 1:
            raise ValueError("eta_accept must lie in (0, 1)")
        if not self.shrink < 1 < self.grow:
            raise ValueError("need shrink < 1 < grow")
        if not self.domain[0] <= self.domain[1]:
            raise ValueError("empty solver domain")

    @property
    def max_radius(self) -> float:
        if self.radius_max is not None:
            return self.radius_max
        return max(0.5 * (self.domain[1] - self.domain[0]), self.radius_init)

    def on(self, domain) -> "SolverConfig":
        return replace(self, domain=tuple(domain))


@dataclass(frozen=True)
class SolveResult:
    x: float  # degrees
    residual: float  # p.u.
    kind: str
    iterations: int
    gradient: float = 0.0  # d(f^2)/dx at x

    @property
    def is_root(self) -> bool:
        return self.kind == ROOT


class NonConvergence(RuntimeError):
    def __init__(self, best: SolveResult):
        self.best = best
        super().__init__(
            f"trust-region solve did not converge in {best.iterations} iterations "
            f"(best x={best.x:.6g} deg, residual={best.residual:.3e})"
        )


def _evaluate(f, x):
    out = f(x)
    if len(out) == 2:
        return out[0], out[1], None
    return out


def dogleg_step(g: float, curv_gn: float, curv_full: float | None, radius: float) -> float:
    """Dogleg step for the model ``m(p) = g p + curv p^2 / 2`` within ``radius``."""
    if g == 0.0:
        return 0.0
    direction = -math.copysign(1.0, g)
    if curv_full is not None and curv_full > 0.0:
        p_newton = -g / curv_full
        if abs(p_newton) <= radius:
            return p_newton
    if curv_gn <= 0.0:
        return direction * radius
    p_cauchy = -g / curv_gn
    if abs(p_cauchy) >= radius:
        return direction * radius
    if curv_full is None or curv_full <= 0.0:
        # model non-convex beyond the Cauchy point: follow descent to the boundary
        return direction * radius
    # the segment Cauchy -> Newton is collinear; it crosses the boundary at the radius
    return direction * radius


def solve_scalar(f, config: SolverConfig | None = None, x0: float = 0.0) -> SolveResult:
    """Zero of ``f`` (or a minimum of ``|f|``) on ``config.domain``.

    ``f(x)`` takes degrees and returns ``(value, d/dx)`` or
    ``(value, d/dx, d2/dx2)``.  Iterates never leave the domain; a step
    that hits a bound is projected and the radius shrunk.
    """
    cfg = config or SolverConfig()
    lo, hi = cfg.domain
    x = min(max(x0, lo), hi)
    fx, dfx, ddfx = _evaluate(f, x)
    radius = cfg.radius_init
    rmax = cfg.max_radius

    for it in range(cfg.max_iter + 1):
        grad = fx * dfx
        if abs(fx) <= cfg.tol:
            return SolveResult(x, fx, ROOT, it, 2 * grad)
        if (x <= lo and grad > 0) or (x >= hi and grad < 0):
            return SolveResult(x, fx, CLAMPED, it, 2 * grad)
        if abs(2 * grad) <= cfg.grad_tol:
            return SolveResult(x, fx, MINIMUM, it, 2 * grad)
        if it == cfg.max_iter:
            break

        curv_gn = dfx * dfx
        curv_full = None if ddfx is None else curv_gn + fx * ddfx
        curv_model = curv_full if curv_full is not None and curv_full > 0 else curv_gn

        while True:
            step = dogleg_step(grad, curv_gn, curv_full, radius)
            x_new = min(max(x + step, lo), hi)
            contact = x_new != x + step
            step = x_new - x
            if abs(step) <= cfg.x_tol * max(1.0, abs(x)):
                kind = CLAMPED if x in (lo, hi) else MINIMUM
                return SolveResult(x, fx, kind, it, 2 * grad)
            predicted = -(grad * step + 0.5 * curv_model * step * step)
            f_new, df_new, ddf_new = _evaluate(f, x_new)
            actual = 0.5 * (fx * fx - f_new * f_new)
            rho = actual / predicted if predicted > 0 else -1.0
            if rho < 0.25:
                radius = cfg.shrink * abs(step)
            elif rho > 0.75 and abs(abs(step) - radius) <= 1e-12 * radius:
                radius = min(cfg.grow * radius, rmax)
            if contact:
                radius = min(radius, cfg.shrink * max(abs(step), cfg.radius_init))
            if rho > cfg.eta_accept or (actual > 0 and abs(f_new) <= cfg.tol):
                x, fx, dfx, ddfx = x_new, f_new, df_new, ddf_new
                break
            if radius <= cfg.x_tol:
                kind = CLAMPED if x in (lo, hi) else MINIMUM
                return SolveResult(x, fx, kind, it, 2 * grad)

    raise NonConvergence(SolveResult(x, fx, MINIMUM, cfg.max_iter, 2 * fx * dfx))


def minimize_abs(f, config: SolverConfig | None = None, x0: float = 0.0) -> SolveResult:
    """Arg-min of ``|f|`` over the domain.

    A zero reached from ``x0`` is returned as is.  Otherwise the local
    minimum found by the trust-region iteration is compared against both
    domain bounds and the smallest ``|f|`` wins.
    """
    cfg = config or SolverConfig()
    res = solve_scalar(f, cfg, x0)
    if res.kind == ROOT:
        return res
    best = res
    for bound in cfg.domain:
        if bound == res.x:
            continue
        fb, dfb, _ = _evaluate(f, bound)
        if abs(fb) < abs(best.residual):
            best = SolveResult(bound, fb, CLAMPED, res.iterations, 2 * fb * dfb)
    return best
