"""Time-stepped run of the phase-angle controller over a train schedule.

Each step freezes train positions, computes the FPAD, the dispatch domain
and the reference angle of the active mode, then evaluates station powers
at that angle.  A failing step keeps the previous angle and records the
error instead of aborting the run.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import statistics
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .dispatch import PDM, TSC, DispatchMode, UndefinedRatio, fpdd, kp, rpa
from .fpad import (
    ClusterFpad,
    CirculationConstraint,
    RELAXED,
    cluster_fpad,
    detect_state,
    oriented_section,
)
from .scenario import Scenario, Topology

log = logging.getLogger(__name__)

RECORDS_SCHEMA = "ftpss-records/1"
STAGES = ("fpad", "fpdd", "rpa")
# sign dead-band for the circulation indicator (p.u.)
APC_DEADBAND = 1e-9

COLUMNS = (
    "step",
    "time_s",
    "n_trains",
    "state",
    "mode",
    "delta_a_deg",
    "fpad_lo_deg",
    "fpad_hi_deg",
    "fpdd_lo",
    "fpdd_hi",
    "k_achieved",
    "clamped",
    "held",
    "empty_fpad",
    "p_nts1_mw",
    "q_nts1_mvar",
    "p_ats_mw",
    "q_ats_mvar",
    "p_nts2_mw",
    "q_nts2_mvar",
    "apc",
    "q_min_mvar",
    "iterations",
    "error",
)


@dataclass
class StepRecord:
    step: int
    time_s: float
    n_trains: int
    state: str
    mode: str
    delta_a_deg: float
    fpad_lo_deg: float = math.nan
    fpad_hi_deg: float = math.nan
    fpdd_lo: float = math.nan
    fpdd_hi: float = math.nan
    k_achieved: float = math.nan
    clamped: bool = False
    held: bool = False
    empty_fpad: bool = False
    p_nts1_mw: float = 0.0
    q_nts1_mvar: float = 0.0
    p_ats_mw: float = 0.0
    q_ats_mvar: float = 0.0
    p_nts2_mw: float = 0.0
    q_nts2_mvar: float = 0.0
    apc: bool = False
    q_min_mvar: float = 0.0
    iterations: int = 0
    error: str = ""
    train_power: dict = field(default_factory=dict)  # id -> MW, not exported
    wall_ms: dict = field(default_factory=dict)  # stage -> ms, exported separately

    @property
    def fpad(self):
        return (self.fpad_lo_deg, self.fpad_hi_deg)

    def station_p(self) -> dict:
        return {"N-TS1": self.p_nts1_mw, "A-TS": self.p_ats_mw, "N-TS2": self.p_nts2_mw}

    def row(self) -> list:
        out = []
        for name in COLUMNS:
            value = getattr(self, name)
            if isinstance(value, bool):
                value = int(value)
            elif isinstance(value, float):
                value = repr(float(value))
            out.append(value)
        return out


def _mode_label(mode: DispatchMode) -> str:
    if mode.kind == PDM:
        return f"PDM:{mode.scope}:{mode.k_target:g}"
    if mode.kind == "CPM":
        return f"CPM:{mode.p_ref:g}"
    return "MCM"


def station_powers(sections, delta_a: float, kind: str) -> dict:
    """Station complex powers (MVA) keyed by station label at ``delta_a`` degrees."""
    per = [tuple(complex(v) for v in sec.powers_deg(delta_a)) for sec in sections]
    if kind == "tsc":
        return {"N-TS1": per[0][0], "A-TS": per[0][1] + per[1][1], "N-TS2": per[1][0]}
    return {"N-TS1": per[0][0], "A-TS": per[0][1], "N-TS2": 0j}


def circulation(sections, delta_a: float, s_base: float):
    """(APC present in any section, smallest station reactive power in MVar)."""
    apc = False
    q_min = math.inf
    for sec in sections:
        s1, s2 = sec.powers_deg(delta_a)
        p1, p2 = s1.real / s_base, s2.real / s_base
        if (p1 > APC_DEADBAND and p2 < -APC_DEADBAND) or (p1 < -APC_DEADBAND and p2 > APC_DEADBAND):
            apc = True
        q_min = min(q_min, float(s1.imag), float(s2.imag))
    return apc, q_min


def control_step(
    topology: Topology,
    mode: DispatchMode,
    constraint_mode: str,
    previous_delta: float = 0.0,
    step: int = 0,
    t: float = 0.0,
    solver_config=None,
) -> StepRecord:
    """One controller step on a topology whose trains are already placed."""
    trains = topology.trains()
    state = detect_state(trains)
    record = StepRecord(step, float(t), len(trains), state, _mode_label(mode), float(previous_delta))
    record.train_power = {tr.id: tr.power.p for tr in trains}
    s_base = topology.base.s_base
    q_allow = topology.q_cir_max if constraint_mode == RELAXED else 0.0
    constraint = CirculationConstraint(constraint_mode, q_allow, state)
    sections = [oriented_section(s) for s in topology.sections()]
    scope = mode.scope if mode.kind == PDM else TSC
    try:
        t0 = time.perf_counter()
        dom: ClusterFpad = cluster_fpad(
            sections, constraint, topology.alpha, topology.delta_limits, solver_config, s_base
        )
        t1 = time.perf_counter()
        record.wall_ms["fpad"] = 1e3 * (t1 - t0)
        interval = dom.interval
        if interval is not None:
            record.fpad_lo_deg, record.fpad_hi_deg = interval.lo, interval.hi
            try:
                k_dom = fpdd(interval, sections, scope, s_base)
                record.fpdd_lo, record.fpdd_hi = k_dom.k_lo, k_dom.k_hi
            except UndefinedRatio:
                pass
        t2 = time.perf_counter()
        record.wall_ms["fpdd"] = 1e3 * (t2 - t1)
        decision = rpa(mode, interval, sections, solver_config, topology.delta_limits, s_base)
        record.wall_ms["rpa"] = 1e3 * (time.perf_counter() - t2)
        record.delta_a_deg = decision.delta_a
        record.clamped = decision.clamped
        record.empty_fpad = decision.empty_fpad
        record.iterations = decision.iterations
        if decision.degenerate:
            record.error = decision.note
    except Exception as exc:  # fail-safe: keep the previous angle
        log.warning("step %d (t=%g s) failed, holding %.4f deg: %s", step, t, previous_delta, exc)
        record.held = True
        record.delta_a_deg = float(previous_delta)
        record.error = f"{type(exc).__name__}: {exc}"
    try:
        powers = station_powers(sections, record.delta_a_deg, topology.kind)
        record.p_nts1_mw, record.q_nts1_mvar = powers["N-TS1"].real, powers["N-TS1"].imag
        record.p_ats_mw, record.q_ats_mvar = powers["A-TS"].real, powers["A-TS"].imag
        record.p_nts2_mw, record.q_nts2_mvar = powers["N-TS2"].real, powers["N-TS2"].imag
        record.apc, record.q_min_mvar = circulation(sections, record.delta_a_deg, s_base)
        try:
            record.k_achieved = kp(sections, record.delta_a_deg, scope, s_base)
        except UndefinedRatio:
            pass
    except Exception as exc:
        record.error = (record.error + "; " if record.error else "") + f"{type(exc).__name__}: {exc}"
        for name in ("p_nts1_mw", "q_nts1_mvar", "p_ats_mw", "q_ats_mvar", "p_nts2_mw", "q_nts2_mvar"):
            setattr(record, name, math.nan)
    return record


# ---------------------------------------------------------------------------
# energy accounting
# ---------------------------------------------------------------------------


def trapezoid(times, values) -> float:
    """Trapezoidal integral of ``values`` (MW) over ``times`` (s), in MWh."""
    total = 0.0
    for k in range(1, len(times)):
        total += 0.5 * (values[k] + values[k - 1]) * (times[k] - times[k - 1])
    return total / 3600.0


@dataclass
class EnergyLedger:
    stations: dict  # label -> MWh delivered into the network
    trains_consumed: dict  # id -> MWh drawn while motoring
    trains_regenerated: dict  # id -> MWh returned while braking

    @classmethod
    def from_records(cls, records) -> "EnergyLedger":
        times = [r.time_s for r in records]
        stations = {
            label: trapezoid(times, [r.station_p()[label] for r in records]) for label in ("N-TS1", "A-TS", "N-TS2")
        }
        ids = sorted({tid for r in records for tid in r.train_power})
        consumed, regen = {}, {}
        for tid in ids:
            p = [r.train_power.get(tid, 0.0) for r in records]
            consumed[tid] = trapezoid(times, [max(v, 0.0) for v in p])
            regen[tid] = trapezoid(times, [max(-v, 0.0) for v in p])
        return cls(stations, consumed, regen)

    def to_dict(self):
        return asdict(self)


# ---------------------------------------------------------------------------
# run and export
# ---------------------------------------------------------------------------


@dataclass
class RunResult:
    records: list
    ledger: EnergyLedger
    summary: dict
    timing: dict


def _timing_stats(records) -> dict:
    out = {}
    for stage in STAGES:
        values = sorted(r.wall_ms[stage] for r in records if stage in r.wall_ms)
        if not values:
            continue
        out[stage] = {
            "n": len(values),
            "median_ms": statistics.median(values),
            "p90_ms": values[min(len(values) - 1, int(math.ceil(0.9 * len(values))) - 1)],
            "max_ms": values[-1],
        }
    return out


def summarize(records, ledger: EnergyLedger, scenario: Scenario) -> dict:
    cfg = scenario.config
    finite_q = [r.q_min_mvar for r in records if math.isfinite(r.q_min_mvar)]
    return {
        "schema": RECORDS_SCHEMA,
        "scenario": scenario.name,
        "constraint": cfg.constraint,
        "time_step_s": cfg.time_step,
        "n_steps": len(records),
        "modes": [{"time": t, **m.to_dict()} for t, m in cfg.modes],
        "energy_mwh": ledger.stations,
        "train_consumed_mwh": ledger.trains_consumed,
        "train_regenerated_mwh": ledger.trains_regenerated,
        "clamped_steps": sum(r.clamped for r in records),
        "held_steps": sum(r.held for r in records),
        "empty_fpad_steps": sum(r.empty_fpad for r in records),
        "apc_steps": sum(r.apc for r in records),
        "min_station_q_mvar": min(finite_q) if finite_q else None,
    }


def run(scenario: Scenario, solver_config=None) -> RunResult:
    """Replay the scenario's schedule under its controller settings."""
    cfg = scenario.config
    records = []
    delta = 0.0
    for k, t in enumerate(cfg.times()):
        topo = scenario.topology.with_trains(scenario.schedule.snapshot(scenario.topology, t))
        rec = control_step(topo, cfg.mode_at(t), cfg.constraint, delta, k, t, solver_config)
        records.append(rec)
        delta = rec.delta_a_deg
    ledger = EnergyLedger.from_records(records)
    return RunResult(records, ledger, summarize(records, ledger, scenario), _timing_stats(records))


def write_records(records, path) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        fh.write(f"# schema={RECORDS_SCHEMA}\n")
        writer = csv.writer(fh)
        writer.writerow(COLUMNS)
        for r in records:
            writer.writerow(r.row())


def read_records(path) -> list:
    """Rows of a records CSV as dicts with numeric fields converted."""
    path = Path(path)
    with path.open(newline="") as fh:
        first = fh.readline().strip()
        if not first.startswith("# schema="):
            raise ValueError(f"{path}: missing schema header")
        version = first.split("=", 1)[1]
        if version != RECORDS_SCHEMA:
            raise ValueError(f"{path}: unsupported schema {version!r}")
        rows = []
        for row in csv.DictReader(fh):
            out = {}
            for key, value in row.items():
                if key in ("state", "mode", "error"):
                    out[key] = value
                elif key in ("step", "n_trains", "iterations", "clamped", "held", "empty_fpad", "apc"):
                    out[key] = int(value)
                else:
                    out[key] = float(value)
            rows.append(out)
    return rows


def export(result: RunResult, out_dir, powerfunc_dump: dict | None = None) -> dict:
    """Write records.csv, summary.json and timing.json; return the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "records": out / "records.csv",
        "summary": out / "summary.json",
        "timing": out / "timing.json",
    }
    write_records(result.records, paths["records"])
    paths["summary"].write_text(json.dumps(result.summary, indent=2, sort_keys=True) + "\n")
    paths["timing"].write_text(json.dumps(result.timing, indent=2, sort_keys=True) + "\n")
    if powerfunc_dump is not None:
        paths["powerfunc"] = out / "powerfunc-dump.json"
        paths["powerfunc"].write_text(json.dumps(powerfunc_dump, indent=2) + "\n")
    return paths
