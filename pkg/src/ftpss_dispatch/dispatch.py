"""Power-distribution coefficients, dispatch domains and reference-angle modes.

The distribution coefficient is the ratio of A-TS to N-TS active power,
either within one ZSO or over a whole cluster (both N-TS in the
denominator).  Three modes turn an FPAD into a reference angle:

* PDM tracks a coefficient setpoint,
* CPM tracks an A-TS active-power setpoint,
* MCM sits on the upper FPAD bound.

``sections`` arguments are sequences of section models oriented
(N-TS, A-TS), one per ZSO; see ``fpad.zso_sections``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

from .fpad import (
    AngleInterval,
    as_section,
    component_residual,
    component_value,
    refined_solve,
)
from .trdp import ROOT, SolverConfig, solve_scalar

PDM = "PDM"
CPM = "CPM"
MCM = "MCM"
ZSO = "ZSO"
TSC = "TSC"

# below this |denominator| (p.u.) the coefficient is undefined
RATIO_EPS = 1e-7  # p.u., above the 1e-8 tolerance to which an N-TS zero is located


class UndefinedRatio(ValueError):
    pass


@dataclass(frozen=True)
class DispatchMode:
    kind: str
    k_target: float | None = None
    scope: str = TSC
    p_ref: float | None = None  # MW

    def __post_init__(self):
        if self.kind not in (PDM, CPM, MCM):
            raise ValueError(f"unknown dispatch mode {self.kind!r}")
        if self.scope not in (ZSO, TSC):
            raise ValueError(f"unknown scope {self.scope!r}")
        if self.kind == PDM and (self.k_target is None or not math.isfinite(self.k_target)):
            raise ValueError("PDM needs a finite k_target")
        if self.kind == CPM and (self.p_ref is None or not math.isfinite(self.p_ref)):
            raise ValueError("CPM needs a finite p_ref")

    @classmethod
    def pdm(cls, k_target: float, scope: str = TSC) -> "DispatchMode":
        return cls(PDM, k_target=k_target, scope=scope)

    @classmethod
    def cpm(cls, p_ref: float) -> "DispatchMode":
        return cls(CPM, p_ref=p_ref)

    @classmethod
    def mcm(cls) -> "DispatchMode":
        return cls(MCM)

    def to_dict(self):
        return {k: v for k, v in asdict(self).items() if v is not None}

    @classmethod
    def from_dict(cls, doc: dict) -> "DispatchMode":
        return cls(
            kind=str(doc["kind"]).upper(),
            k_target=doc.get("k_target"),
            scope=str(doc.get("scope", TSC)).upper(),
            p_ref=doc.get("p_ref"),
        )


@dataclass(frozen=True)
class Fpdd:
    """Achievable coefficient range over an FPAD.

    ``increasing`` records the direction of the coefficient in the angle:
    it rises with the angle in traction and falls when both stations
    absorb braking power.
    """

    k_lo: float
    k_hi: float
    increasing: bool = True
    open_lo: bool = False
    open_hi: bool = False

    def __post_init__(self):
        for name in ("k_lo", "k_hi"):
            object.__setattr__(self, name, float(getattr(self, name)))
        object.__setattr__(self, "increasing", bool(self.increasing))
        if not self.k_lo <= self.k_hi:
            raise ValueError("k_lo must not exceed k_hi")

    def __contains__(self, k) -> bool:
        return self.k_lo <= k <= self.k_hi

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class RpaDecision:
    delta_a: float  # degrees
    clamped: bool
    mode: DispatchMode
    residual: float  # p.u.
    iterations: int = 0
    degenerate: bool = False
    empty_fpad: bool = False
    note: str = ""

    def __post_init__(self):
        object.__setattr__(self, "delta_a", float(self.delta_a))
        object.__setattr__(self, "residual", float(self.residual))

    def to_dict(self):
        out = asdict(self)
        out["mode"] = self.mode.to_dict()
        return out


def _pick(sections, scope, zso):
    sections = [as_section(s) for s in sections]
    return [sections[zso]] if scope == ZSO else sections


def _sum(sections, name, delta, s_base):
    return sum(component_value(s, name, s_base)(delta) for s in sections)


def kp(sections, delta_a: float, scope: str = TSC, s_base: float = 100.0, zso: int = 0) -> float:
    """A-TS to N-TS active-power ratio at ``delta_a`` degrees.

    At cluster scope the numerator is the total A-TS output and the
    denominator the sum of both N-TS outputs.
    """
    chosen = _pick(sections, scope, zso)
    den = _sum(chosen, "P1", delta_a, s_base)
    if abs(den) < RATIO_EPS:
        raise UndefinedRatio(f"N-TS active power {den:.3e} p.u. too small for a ratio at {delta_a:.6g} deg")
    return _sum(chosen, "P2", delta_a, s_base) / den


def fpdd(fpad: AngleInterval, sections, scope: str = TSC, s_base: float = 100.0, zso: int = 0) -> Fpdd:
    """Coefficient range from the coefficient at the two FPAD bounds."""
    if fpad is None:
        raise ValueError("FPDD needs a non-empty FPAD")
    values = []
    for x in (fpad.lo, fpad.hi):
        try:
            values.append(kp(sections, x, scope, s_base, zso))
        except UndefinedRatio:
            values.append(None)
    k_at_lo, k_at_hi = values
    den_lo = _sum(_pick(sections, scope, zso), "P1", fpad.lo, s_base)
    den_hi = _sum(_pick(sections, scope, zso), "P1", fpad.hi, s_base)
    if den_lo * den_hi < 0:
        # summed N-TS power changes sign inside: every ratio is reached somewhere
        return Fpdd(-math.inf, math.inf, True, True, True)
    if k_at_lo is not None and k_at_hi is not None:
        return Fpdd(min(k_at_lo, k_at_hi), max(k_at_lo, k_at_hi), k_at_hi >= k_at_lo)
    if k_at_lo is None and k_at_hi is None:
        return Fpdd(-math.inf, math.inf, True, True, True)
    # one bound sits on the N-TS zero: the ratio runs off to infinity there,
    # on the side given by its trend from the other bound
    mid = kp(sections, 0.5 * (fpad.lo + fpad.hi), scope, s_base, zso)
    if k_at_lo is None:
        return Fpdd(-math.inf, k_at_hi, True, open_lo=True) if mid < k_at_hi else Fpdd(k_at_hi, math.inf, False, open_hi=True)
    return Fpdd(k_at_lo, math.inf, True, open_hi=True) if mid > k_at_lo else Fpdd(-math.inf, k_at_lo, False, open_lo=True)


def _refinable(sections):
    return any(s.refinable for s in sections)


def _combined_residual(sections, weights, offset, s_base):
    """Residual sum_w w * component + offset over sections, as a function of anchor."""

    def make(anchor):
        parts = [
            (w, component_residual(s.at(anchor), name, s_base))
            for s in sections
            for name, w in weights.items()
            if w != 0.0
        ]

        def residual(x):
            v = dv = ddv = 0.0
            for w, r in parts:
                a, b, c = r(x)
                v += w * a
                dv += w * b
                ddv += w * c
            return v + offset, dv, ddv

        return residual

    return make


def _solve_in(fpad, make, sections, config, limits):
    cfg = (config or SolverConfig()).on(limits)
    res, iterations = refined_solve(make, _refinable(sections), cfg, finder=solve_scalar)
    return res, iterations


def _decision(x, fpad, make, mode, clamped, iterations, note=""):
    x = fpad.clip(x)
    residual = make(x)(x)[0]
    return RpaDecision(x, clamped, mode, residual, iterations, note=note)


def rpa_pdm(
    k_target: float,
    fpad: AngleInterval,
    sections,
    scope: str = TSC,
    config: SolverConfig | None = None,
    limits=(-20.0, 20.0),
    s_base: float = 100.0,
    zso: int = 0,
) -> RpaDecision:
    """Angle at which the coefficient equals ``k_target``; clamped to the FPAD."""
    mode = DispatchMode.pdm(k_target, scope)
    if fpad is None:
        return RpaDecision(0.0, False, mode, 0.0, empty_fpad=True, note="empty FPAD: hold 0 deg")
    chosen = _pick(sections, scope, zso)
    make = _combined_residual(chosen, {"P2": 1.0, "P1": -k_target}, 0.0, s_base)
    try:
        kp(chosen, 0.5 * (fpad.lo + fpad.hi), ZSO if len(chosen) == 1 else TSC, s_base)
    except UndefinedRatio as exc:
        x = fpad.clip(0.0)
        return RpaDecision(x, False, mode, make(x)(x)[0], degenerate=True, note=str(exc))
    dom = fpdd(fpad, chosen, ZSO if len(chosen) == 1 else TSC, s_base)
    if k_target not in dom:
        above = k_target > dom.k_hi
        x = fpad.hi if above == dom.increasing else fpad.lo
        return _decision(x, fpad, make, mode, True, 0, "setpoint outside the dispatch domain")
    res, iterations = _solve_in(fpad, make, chosen, config, limits)
    if res.kind != ROOT:
        # the setpoint sits on an FPDD bound to within the solver tolerance
        x = min((fpad.lo, fpad.hi), key=lambda b: abs(make(b)(b)[0]))
        return _decision(x, fpad, make, mode, True, iterations, "no interior solution")
    return _decision(res.x, fpad, make, mode, not (fpad.lo <= res.x <= fpad.hi), iterations)


def rpa_cpm(
    p_ref: float,
    fpad: AngleInterval,
    sections,
    config: SolverConfig | None = None,
    limits=(-20.0, 20.0),
    s_base: float = 100.0,
) -> RpaDecision:
    """Angle at which the total A-TS active power equals ``p_ref`` MW; clamped to the FPAD."""
    mode = DispatchMode.cpm(p_ref)
    if fpad is None:
        return RpaDecision(0.0, False, mode, 0.0, empty_fpad=True, note="empty FPAD: hold 0 deg")
    chosen = [as_section(s) for s in sections]
    make = _combined_residual(chosen, {"P2": 1.0}, -p_ref / s_base, s_base)
    at_lo, at_hi = make(fpad.lo)(fpad.lo)[0], make(fpad.hi)(fpad.hi)[0]
    if at_lo > 0:
        return _decision(fpad.lo, fpad, make, mode, True, 0, "reference below the reachable range")
    if at_hi < 0:
        return _decision(fpad.hi, fpad, make, mode, True, 0, "reference above the reachable range")
    res, iterations = _solve_in(fpad, make, chosen, config, limits)
    if res.kind != ROOT:
        x = fpad.lo if abs(at_lo) <= abs(at_hi) else fpad.hi
        return _decision(x, fpad, make, mode, True, iterations, "no interior solution")
    return _decision(res.x, fpad, make, mode, not (fpad.lo <= res.x <= fpad.hi), iterations)


def rpa_mcm(fpad: AngleInterval) -> RpaDecision:
    """Upper FPAD bound: most A-TS output in traction, least A-TS absorption in braking."""
    mode = DispatchMode.mcm()
    if fpad is None:
        return RpaDecision(0.0, False, mode, 0.0, empty_fpad=True, note="empty FPAD: hold 0 deg")
    return RpaDecision(fpad.hi, False, mode, 0.0)


def rpa(mode: DispatchMode, fpad, sections, config=None, limits=(-20.0, 20.0), s_base=100.0) -> RpaDecision:
    """Dispatch on ``mode``."""
    if mode.kind == PDM:
        return rpa_pdm(mode.k_target, fpad, sections, mode.scope, config, limits, s_base)
    if mode.kind == CPM:
        return rpa_cpm(mode.p_ref, fpad, sections, config, limits, s_base)
    return rpa_mcm(fpad)
