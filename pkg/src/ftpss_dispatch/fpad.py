"""Feasible phase-angle domains (FPAD) under power-circulation constraints.

Active-power circulation (APC) happens when the two stations of a section
carry active power of opposite sign; reactive-power circulation (RPC) when
one station absorbs reactive power.  The feasible domain of a section is
the intersection of the APC and RPC domains, shrunk by the margin
``alpha``; a cluster's domain is the intersection over its two sections.

The bound-assembly rules are written once against abstract scalar
functions so the same logic runs on the equivalent model (trust-region
root finding) and on the power-flow oracle (bisection).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

from .circuit import A_TS, PerUnitBase, TscSpec, ZsoSpec
from .equivalent import COUPLED, PowerFunction, SectionModel
from .trdp import ROOT, SolverConfig, minimize_abs

STRICT = "strict"
RELAXED = "relaxed"
TRACTION = "traction"
BRAKING = "braking"

# sign tests at a critical angle treat |value| <= DEADBAND p.u. as zero
DEADBAND = 1e-9


class FpadError(ValueError):
    """Branch sign tests disagree; no interval can be assembled."""


@dataclass(frozen=True)
class AngleInterval:
    lo: float
    hi: float

    def __post_init__(self):
        object.__setattr__(self, "lo", float(self.lo))
        object.__setattr__(self, "hi", float(self.hi))
        if not self.lo <= self.hi:
            raise ValueError(f"interval bounds out of order: [{self.lo}, {self.hi}]")

    def __contains__(self, x) -> bool:
        return self.lo <= x <= self.hi

    @property
    def width(self) -> float:
        return self.hi - self.lo

    def intersect(self, other: "AngleInterval | None") -> "AngleInterval | None":
        if other is None:
            return None
        lo, hi = max(self.lo, other.lo), min(self.hi, other.hi)
        return AngleInterval(lo, hi) if lo <= hi else None

    def scaled(self, alpha: float) -> "AngleInterval":
        return AngleInterval(alpha * self.lo, alpha * self.hi)

    def clip(self, x: float) -> float:
        return min(max(x, self.lo), self.hi)

    def grid(self, n: int) -> list:
        if n == 1 or self.width == 0:
            return [self.lo] * n
        return [self.lo + self.width * k / (n - 1) for k in range(n)]

    def to_list(self):
        return [self.lo, self.hi]


def intersect_all(intervals) -> AngleInterval | None:
    out = None
    for k, iv in enumerate(intervals):
        if iv is None:
            return None
        out = iv if k == 0 else out.intersect(iv)
        if out is None:
            return None
    return out


@dataclass(frozen=True)
class CirculationConstraint:
    mode: str = STRICT
    q_cir_max: float = 0.0  # MVar, relaxed mode only
    system_state: str = TRACTION

    def __post_init__(self):
        if self.mode not in (STRICT, RELAXED):
            raise ValueError(f"unknown constraint mode {self.mode!r}")
        if not self.q_cir_max >= 0:
            raise ValueError("q_cir_max must be >= 0")
        if self.system_state not in (TRACTION, BRAKING):
            raise ValueError(f"unknown system state {self.system_state!r}")

    @property
    def q_offset(self) -> float:
        """Amount added to Q before the zero / sign tests (MVar)."""
        return self.q_cir_max if self.mode == RELAXED else 0.0


def detect_state(trains) -> str:
    """Traction when the net train demand is non-negative (ties count as traction)."""
    return TRACTION if sum(t.power.p for t in trains) >= 0 else BRAKING


@dataclass(frozen=True)
class Critical:
    """Critical angle of one scalar function and whether it is a true zero."""

    x: float
    exists: bool
    iterations: int = 0


@dataclass
class SectionFpad:
    """FPAD of one section plus the diagnostics behind each bound."""

    interval: AngleInterval | None
    apc: AngleInterval | None
    rpc: AngleInterval | None
    unmargined: AngleInterval | None
    critical: dict = field(default_factory=dict)
    binding: dict = field(default_factory=dict)
    reason: str = ""

    @property
    def empty(self) -> bool:
        return self.interval is None


# ---------------------------------------------------------------------------
# shared assembly logic
# ---------------------------------------------------------------------------


def _nonneg(value: float) -> bool:
    return value >= -DEADBAND


def assemble_apc(p1: Callable, p2: Callable, c1: Critical, c2: Critical) -> AngleInterval:
    """APC domain from the zeros of P1 (scenario 1) and P2 (scenario 2).

    ``p1``/``p2`` return p.u.  At the scenario-1 angle the sign of P2
    decides whether it is an upper or lower bound, and vice versa.
    """
    p2_s1 = p2(c1.x)
    p1_s2 = p1(c2.x)
    up = _nonneg(p2_s1), _nonneg(p1_s2)
    if up == (True, True):
        lo, hi = c2.x, c1.x
    elif up == (False, False):
        lo, hi = c1.x, c2.x
    else:
        raise FpadError(
            f"APC sign tests disagree: P2 at P1-zero = {p2_s1:.3e}, P1 at P2-zero = {p1_s2:.3e}"
        )
    if lo > hi:
        raise FpadError(f"APC bounds out of order: [{lo:.6g}, {hi:.6g}]")
    return AngleInterval(lo, hi)


def assemble_rpc(q1: Callable, q2: Callable, c1: Critical, c2: Critical, limits) -> AngleInterval | None:
    """RPC domain from the (possibly missing) zeros of the shifted Q1 and Q2.

    ``q1``/``q2`` are already shifted by the relaxed allowance, so every
    test is against zero.  A curve without a zero in the limits imposes no
    bound unless it is negative throughout, in which case nothing is
    feasible and ``None`` is returned.
    """
    dmin, dmax = limits
    if not c1.exists and not _nonneg(q1(c1.x)):
        return None
    if not c2.exists and not _nonneg(q2(c2.x)):
        return None
    q2_s1 = q2(c1.x)
    q1_s2 = q1(c2.x)
    # scenario 1 (Q1 = 0): a lower bound when Q2 >= 0 there, else an upper bound
    if c1.exists:
        min_s1, max_s1 = (c1.x, None) if _nonneg(q2_s1) else (None, c1.x)
    else:
        min_s1, max_s1 = dmin, dmax
    # scenario 2 (Q2 = 0): an upper bound when Q1 >= 0 there, else a lower bound
    if c2.exists:
        min_s2, max_s2 = (None, c2.x) if _nonneg(q1_s2) else (c2.x, None)
    else:
        min_s2, max_s2 = dmin, dmax
    up = _nonneg(q2_s1), _nonneg(q1_s2)
    if up == (True, True):
        lo, hi = min_s1, max_s2
    elif up == (False, False):
        lo, hi = min_s2, max_s1
    else:
        raise FpadError(
            f"RPC sign tests disagree: Q2 at Q1-zero = {q2_s1:.3e}, Q1 at Q2-zero = {q1_s2:.3e}"
        )
    if lo is None or hi is None:
        raise FpadError("RPC bound roles inconsistent with the assembled case")
    if lo > hi:
        return None
    return AngleInterval(lo, hi)


def apply_margin(interval: AngleInterval | None, alpha: float) -> AngleInterval | None:
    """Scale both bounds toward 0 deg by ``alpha`` and keep what stays inside."""
    if interval is None:
        return None
    return interval.scaled(alpha).intersect(interval)


def assemble_section(
    p1, p2, q1, q2, find: Callable, limits, constraint: CirculationConstraint, alpha: float,
    s_base: float = 100.0,
) -> SectionFpad:
    """Run the full bound logic for one section.

    ``find(fn)`` returns the Critical of a p.u. function; ``p1``..``q2``
    return p.u. values, the reactive ones not yet shifted.
    """
    limits_iv = AngleInterval(*limits)
    off = constraint.q_offset / s_base
    crit = {"P1": find("P1"), "P2": find("P2")}
    apc = assemble_apc(p1, p2, crit["P1"], crit["P2"])
    crit["Q1"] = find("Q1")
    crit["Q2"] = find("Q2")
    rq1 = lambda x: q1(x) + off  # noqa: E731
    rq2 = lambda x: q2(x) + off  # noqa: E731
    rpc = assemble_rpc(rq1, rq2, crit["Q1"], crit["Q2"], limits)
    rpc = rpc.intersect(limits_iv) if rpc is not None else None
    apc_in = apc.intersect(limits_iv)
    both = apc_in.intersect(rpc) if apc_in is not None else None
    binding = {}
    if both is not None:
        for side, value in (("lo", both.lo), ("hi", both.hi)):
            names = []
            if rpc is not None and value == getattr(rpc, side):
                names.append("RPC")
            if value == getattr(apc, side):
                names.append("APC")
            if value == getattr(limits_iv, side):
                names.append("limit")
            binding[side] = names
    reason = "" if both is not None else "APC and RPC domains do not overlap"
    if rpc is None:
        reason = "reactive circulation at every admissible angle"
    return SectionFpad(
        interval=apply_margin(both, alpha),
        apc=apc,
        rpc=rpc,
        unmargined=both,
        critical=crit,
        binding=binding,
        reason=reason,
    )


# ---------------------------------------------------------------------------
# proposed method on the equivalent model
# ---------------------------------------------------------------------------

_PARTS = {"P1": (0, "real"), "P2": (1, "real"), "Q1": (0, "imag"), "Q2": (1, "imag")}
_DEG = math.pi / 180.0
REFINE_PASSES = 4
REFINE_TOL = 1e-7  # degrees


class _Fixed:
    """Adapter giving a bare PowerFunction the SectionModel interface."""

    refinable = False

    def __init__(self, pf: PowerFunction):
        self.pf = pf

    def at(self, anchor: float = 0.0) -> PowerFunction:
        return self.pf


def as_section(obj):
    return _Fixed(obj) if isinstance(obj, PowerFunction) else obj


def component_residual(pf: PowerFunction, name: str, s_base: float = 100.0, offset: float = 0.0):
    """Station power component as a p.u. residual of the angle in degrees.

    Returns ``(value, d/dx, d2/dx2)`` per degree, as ``trdp`` expects.
    ``offset`` is in MW/MVar.
    """
    station, part = _PARTS[name]
    terms = pf.station1 if station == 0 else pf.station2

    def residual(x):
        s, ds, dds = pf._power(terms, x * _DEG, 2)
        v, dv, ddv = (getattr(z, part) for z in (s, ds, dds))
        return (v + offset) / s_base, dv * _DEG / s_base, ddv * _DEG * _DEG / s_base

    return residual


def component_value(section, name: str, s_base: float = 100.0):
    """p.u. value of a component, each angle using the function anchored there."""
    station, part = _PARTS[name]
    section = as_section(section)

    def value(x):
        return getattr(section.at(x).powers_deg(x)[station], part) / s_base

    return value


def refined_solve(make_residual, refinable: bool, config: SolverConfig, finder=minimize_abs):
    """Run ``finder`` from 0 deg, then re-anchor the model at the answer and repeat.

    ``make_residual(anchor)`` builds the residual of the power function(s)
    anchored at ``anchor`` degrees.  The model is exact at its anchor, so
    a few passes pin the answer to the model's accuracy at that angle.
    """
    res = finder(make_residual(0.0), config)
    iterations = res.iterations
    if refinable:
        for _ in range(REFINE_PASSES):
            nxt = finder(make_residual(res.x), config, res.x)
            iterations += nxt.iterations
            moved = abs(nxt.x - res.x)
            res = nxt
            if moved <= REFINE_TOL:
                break
    return res, iterations


def critical_angle(section, name: str, config: SolverConfig, s_base: float = 100.0, offset: float = 0.0) -> Critical:
    section = as_section(section)
    res, iterations = refined_solve(
        lambda anchor: component_residual(section.at(anchor), name, s_base, offset), section.refinable, config
    )
    return Critical(res.x, res.kind == ROOT, iterations)


def critical_angles_apc(section, config: SolverConfig | None = None, s_base: float = 100.0):
    """(P1 = 0 critical, P2 = 0 critical) from the trust-region solver started at 0 deg."""
    cfg = config or SolverConfig()
    return critical_angle(section, "P1", cfg, s_base), critical_angle(section, "P2", cfg, s_base)


def apc_interval(section, config: SolverConfig | None = None, s_base: float = 100.0) -> AngleInterval:
    c1, c2 = critical_angles_apc(section, config, s_base)
    return assemble_apc(component_value(section, "P1", s_base), component_value(section, "P2", s_base), c1, c2)


def rpc_interval(
    section,
    constraint: CirculationConstraint,
    limits=(-20.0, 20.0),
    config: SolverConfig | None = None,
    s_base: float = 100.0,
) -> AngleInterval | None:
    cfg = (config or SolverConfig()).on(limits)
    off = constraint.q_offset
    q1 = component_value(section, "Q1", s_base)
    q2 = component_value(section, "Q2", s_base)
    rpc = assemble_rpc(
        lambda x: q1(x) + off / s_base,
        lambda x: q2(x) + off / s_base,
        critical_angle(section, "Q1", cfg, s_base, off),
        critical_angle(section, "Q2", cfg, s_base, off),
        limits,
    )
    return rpc.intersect(AngleInterval(*limits)) if rpc is not None else None


def mso_fpad(
    section,
    constraint: CirculationConstraint,
    alpha: float = 0.95,
    limits=(-20.0, 20.0),
    config: SolverConfig | None = None,
    s_base: float = 100.0,
) -> SectionFpad:
    """FPAD of one (reduced) section.

    ``section`` is a ``SectionModel`` or a bare ``PowerFunction`` (which
    is then used as is, without re-anchoring).
    """
    cfg = (config or SolverConfig()).on(limits)
    off = constraint.q_offset

    def find(name):
        return critical_angle(section, name, cfg, s_base, off if name.startswith("Q") else 0.0)

    values = {n: component_value(section, n, s_base) for n in _PARTS}
    return assemble_section(
        values["P1"], values["P2"], values["Q1"], values["Q2"], find, limits, constraint, alpha, s_base
    )


@dataclass
class ClusterFpad:
    """Intersection of the margined section FPADs plus the per-section detail."""

    interval: AngleInterval | None
    parts: tuple  # SectionFpad per section
    sections: tuple

    @property
    def empty(self) -> bool:
        return self.interval is None

    @property
    def zso1(self) -> SectionFpad:
        return self.parts[0]

    @property
    def zso2(self) -> SectionFpad:
        return self.parts[1]


TscFpad = ClusterFpad


def cluster_fpad(
    sections,
    constraint: CirculationConstraint,
    alpha: float = 0.95,
    limits=(-20.0, 20.0),
    config: SolverConfig | None = None,
    s_base: float = 100.0,
) -> ClusterFpad:
    """FPAD shared by sections driven by one A-TS angle."""
    parts = tuple(mso_fpad(sec, constraint, alpha, limits, config, s_base) for sec in sections)
    return ClusterFpad(intersect_all(p.interval for p in parts), parts, tuple(sections))


def oriented_section(model, pantograph: str = COUPLED) -> SectionModel:
    """Section model with the N-TS as station 1 and the A-TS as station 2."""
    left = model.left
    return SectionModel(model, mirrored=(left.kind == A_TS), pantograph=pantograph)


def zso_sections(tsc: TscSpec, pantograph: str = COUPLED):
    return oriented_section(tsc.zso1, pantograph), oriented_section(tsc.zso2, pantograph)


def constraint_for(tsc: TscSpec, mode: str, trains=None) -> CirculationConstraint:
    if trains is None:
        trains = tuple(tsc.zso1.trains) + tuple(tsc.zso2.trains)
    q = tsc.q_cir_max if mode == RELAXED else 0.0
    return CirculationConstraint(mode, q, detect_state(trains))


def tsc_fpad(
    tsc: TscSpec,
    constraint: CirculationConstraint,
    config: SolverConfig | None = None,
    sections=None,
    pantograph: str = COUPLED,
) -> ClusterFpad:
    """Cluster FPAD: intersection of the margined FPADs of both ZSOs."""
    sections = sections if sections is not None else zso_sections(tsc, pantograph)
    return cluster_fpad(sections, constraint, tsc.alpha_margin, tsc.delta_limits, config, tsc.base.s_base)


def zso_fpad(zso: ZsoSpec, constraint: CirculationConstraint, alpha=0.95, limits=(-20.0, 20.0),
             config: SolverConfig | None = None, base: PerUnitBase | None = None,
             pantograph: str = COUPLED) -> SectionFpad:
    """FPAD of a single ZSO in either orientation."""
    s_base = (base or PerUnitBase()).s_base
    return mso_fpad(oriented_section(zso, pantograph), constraint, alpha, limits, config, s_base)
