"""Wall-clock comparison of the equivalent-model pipeline against power-flow baselines.

Both sides run at the same 1e-8 p.u. tolerance in the same process.  FPAD
is timed against bisection over full power flows; the reference angle
against bisection over delta_A with a power flow per probe.
"""

from __future__ import annotations

import statistics
import time

from .dispatch import DispatchMode, fpdd, rpa
from .fpad import STRICT, CirculationConstraint, cluster_fpad, detect_state, intersect_all, oriented_section
from .oracle import fpad_bisect, rpa_bisect
from .scenario import Topology

SETPOINT_FRACTION = 0.37


def _timed(fn, repetitions):
    samples = []
    out = None
    for _ in range(repetitions):
        t0 = time.perf_counter()
        out = fn()
        samples.append(1e3 * (time.perf_counter() - t0))
    return samples, out


def _stats(samples):
    ordered = sorted(samples)
    n = len(ordered)
    return {
        "n": n,
        "median_ms": statistics.median(ordered),
        "p10_ms": ordered[max(0, int(0.1 * n) - 1)] if n > 1 else ordered[0],
        "p90_ms": ordered[min(n - 1, int(0.9 * n))] if n > 1 else ordered[0],
    }


def _compare(proposed, baseline):
    p, b = _stats(proposed), _stats(baseline)
    return {"proposed": p, "baseline": b, "speedup": b["median_ms"] / p["median_ms"]}


def bench_topology(topology: Topology, repetitions: int = 20, constraint_mode: str = STRICT) -> dict:
    """Timing report for one placed-train topology."""
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    state = detect_state(topology.trains())
    q = topology.q_cir_max if constraint_mode != STRICT else 0.0
    constraint = CirculationConstraint(constraint_mode, q, state)
    models = topology.sections()
    s_base = topology.base.s_base

    def proposed_fpad():
        secs = [oriented_section(m) for m in models]
        return cluster_fpad(secs, constraint, topology.alpha, topology.delta_limits, None, s_base)

    def baseline_fpad():
        parts = [fpad_bisect(m, constraint, topology.alpha, topology.delta_limits, topology.base) for m in models]
        return intersect_all(p.interval for p in parts)

    t_prop, dom = _timed(proposed_fpad, repetitions)
    t_base, base_interval = _timed(baseline_fpad, repetitions)
    report = {
        "n_trains": len(topology.trains()),
        "constraint": constraint_mode,
        "repetitions": repetitions,
        "low_confidence": repetitions < 5,
        "fpad": {
            **_compare(t_prop, t_base),
            "interval": dom.interval.to_list() if dom.interval else None,
            "baseline_interval": base_interval.to_list() if base_interval else None,
        },
    }
    interval = dom.interval
    if interval is None or interval.width == 0:
        report["rpa"] = None
        return report

    # Setpoints strictly inside the reachable range so neither side clamps.
    # The CPM target sits off-centre: at the midpoint bisection would hit it
    # on its first probe.
    secs = [oriented_section(m) for m in models]
    at = interval.lo + SETPOINT_FRACTION * interval.width
    k_dom = fpdd(interval, secs, "TSC", s_base)
    p_at = sum(s.powers_deg(at)[1].real for s in secs)
    modes = {"PDM": DispatchMode.pdm(0.5 * (k_dom.k_lo + k_dom.k_hi)), "CPM": DispatchMode.cpm(p_at)}
    report["rpa"] = {}
    for name, mode in modes.items():

        def proposed_rpa(mode=mode):
            fresh = [oriented_section(m) for m in models]
            return rpa(mode, interval, fresh, None, topology.delta_limits, s_base)

        def baseline_rpa(mode=mode):
            return rpa_bisect(models, mode, interval, topology.base)

        t_p, dec = _timed(proposed_rpa, repetitions)
        t_b, (x_b, _, _) = _timed(baseline_rpa, repetitions)
        report["rpa"][name] = {
            **_compare(t_p, t_b),
            "delta_a": dec.delta_a,
            "baseline_delta_a": x_b,
            "mode": mode.to_dict(),
        }
    return report
