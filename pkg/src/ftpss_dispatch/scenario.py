"""Scenario documents: topology, train schedule and controller settings.

A scenario is one JSON object::

    {
      "topology": {"kind": "tsc", "length": 40, "z0": [0.15, 0.55], ...},
      "schedule": {"trains": [...]},
      "snapshot": {"zso1": [...], "zso2": [...]},
      "config": {"time_step": 1, "duration": 600, "constraint": "relaxed",
                 "modes": [{"time": 0, "kind": "PDM", "k_target": 1.5}]}
    }

Every key except ``topology`` is optional.  The format is documented in
``docs/scenario-format.md``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from .circuit import (
    A_TS,
    DEFAULT_ALPHA,
    DEFAULT_DELTA_LIMITS,
    DEFAULT_LENGTH,
    DEFAULT_Q_CIR_MAX,
    DEFAULT_S_BASE,
    DEFAULT_U_N,
    DEFAULT_Z_T,
    N_TS,
    TRACKS,
    ComplexPower,
    LineImpedance,
    MsoSpec,
    PerUnitBase,
    StationSpec,
    TrainLoad,
    TscSpec,
    ZsoSpec,
    require_valid,
    validate_mso,
    validate_topology,
    validate_zso,
)
from .dispatch import DispatchMode
from .fpad import RELAXED, STRICT

DEFAULT_SPEED = 300.0  # km/h
FORWARD = "forward"  # left station -> right station
REVERSE = "reverse"
KINDS = ("tsc", "zso", "mso")


class ScenarioError(ValueError):
    """Malformed scenario; ``problems`` lists "field: message" strings."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


# ---------------------------------------------------------------------------
# topology
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Topology:
    """Supply sections sharing one A-TS angle, keyed by name."""

    kind: str
    model: object  # TscSpec, ZsoSpec or MsoSpec
    delta_limits: tuple = DEFAULT_DELTA_LIMITS
    alpha: float = DEFAULT_ALPHA
    q_cir_max: float = DEFAULT_Q_CIR_MAX
    base: PerUnitBase = field(default_factory=PerUnitBase)

    @property
    def section_names(self) -> tuple:
        return ("zso1", "zso2") if self.kind == "tsc" else (self.kind,)

    def section(self, name: str):
        if self.kind == "tsc":
            return getattr(self.model, name)
        if name != self.kind:
            raise KeyError(name)
        return self.model

    def length(self, name: str) -> float:
        return self.section(name).length

    def with_trains(self, by_section: dict) -> "Topology":
        """Copy with the trains of each named section replaced."""
        if self.kind == "tsc":
            model = self.model.with_trains(by_section.get("zso1", ()), by_section.get("zso2", ()))
        else:
            model = self.model.with_trains(by_section.get(self.kind, ()))
        return Topology(self.kind, model, self.delta_limits, self.alpha, self.q_cir_max, self.base)

    def sections(self) -> list:
        return [self.section(n) for n in self.section_names]

    def trains(self) -> tuple:
        return tuple(t for sec in self.sections() for t in sec.trains)

    def validate(self):
        if self.kind == "tsc":
            require_valid(validate_topology(self.model))
        elif self.kind == "zso":
            require_valid(validate_zso(self.model))
        else:
            require_valid(validate_mso(self.model))


def _number(doc, key, default, problems, path, positive=False):
    value = doc.get(key, default)
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        problems.append(f"{path}.{key}: expected a finite number, got {value!r}")
        return default
    if positive and not value > 0:
        problems.append(f"{path}.{key}: must be > 0")
        return default
    return float(value)


def topology_from_dict(doc: dict) -> Topology:
    problems = []
    if not isinstance(doc, dict):
        raise ScenarioError([f"topology: expected an object, got {type(doc).__name__}"])
    kind = str(doc.get("kind", "tsc")).lower()
    if kind not in KINDS:
        raise ScenarioError([f"topology.kind: must be one of {KINDS}"])
    u_n = _number(doc, "u_n", DEFAULT_U_N, problems, "topology", positive=True)
    length = _number(doc, "length", DEFAULT_LENGTH, problems, "topology", positive=True)
    z0 = doc.get("z0", [0.15, 0.55])
    if not (isinstance(z0, (list, tuple)) and len(z0) == 2 and all(isinstance(v, (int, float)) for v in z0)):
        problems.append("topology.z0: expected [r, x] in ohm/km")
        z0 = [0.15, 0.55]
    line = LineImpedance(float(z0[0]), float(z0[1]))
    limits = doc.get("delta_limits", list(DEFAULT_DELTA_LIMITS))
    if not (isinstance(limits, (list, tuple)) and len(limits) == 2):
        problems.append("topology.delta_limits: expected [lo, hi] in degrees")
        limits = DEFAULT_DELTA_LIMITS
    alpha = _number(doc, "alpha", DEFAULT_ALPHA, problems, "topology")
    q_cir_max = _number(doc, "q_cir_max", DEFAULT_Q_CIR_MAX, problems, "topology")
    s_base = _number(doc, "s_base", DEFAULT_S_BASE, problems, "topology", positive=True)
    if problems:
        raise ScenarioError(problems)
    base = PerUnitBase(s_base, u_n)
    n1 = StationSpec(N_TS, u_n, "N-TS1")
    a = StationSpec(A_TS, u_n, "A-TS")
    n2 = StationSpec(N_TS, u_n, "N-TS2")
    if kind == "tsc":
        length2 = _number(doc, "length2", length, problems, "topology", positive=True)
        model = TscSpec(
            zso1=ZsoSpec(length, line, n1, a),
            zso2=ZsoSpec(length2, line, a, n2),
            delta_limits=tuple(float(v) for v in limits),
            alpha_margin=alpha,
            q_cir_max=q_cir_max,
            base=base,
        )
    elif kind == "zso":
        model = ZsoSpec(length, line, StationSpec(N_TS, u_n, "N-TS"), a)
    else:
        model = MsoSpec(length, line, StationSpec(N_TS, u_n, "N-TS"), a)
    topo = Topology(kind, model, tuple(float(v) for v in limits), alpha, q_cir_max, base)
    try:
        topo.validate()
    except ValueError as exc:
        raise ScenarioError([str(v) for v in getattr(exc, "violations", [exc])]) from None
    return topo


# ---------------------------------------------------------------------------
# schedule
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PowerSegment:
    start: float  # s
    end: float  # s
    power: ComplexPower


@dataclass(frozen=True)
class TrainPlan:
    id: str
    section: str
    track: str
    entry_time: float
    direction: str = FORWARD
    speed: float = DEFAULT_SPEED  # km/h
    profile: tuple = ()
    z_t: complex = DEFAULT_Z_T

    def position(self, t: float, length: float) -> float | None:
        """Distance from the left station at time ``t``; None when outside the section."""
        if t < self.entry_time:
            return None
        run = self.speed * (t - self.entry_time) / 3600.0
        pos = run if self.direction == FORWARD else length - run
        return pos if 0.0 < pos < length else None

    def exit_time(self, length: float) -> float:
        return self.entry_time + 3600.0 * length / self.speed

    def power(self, t: float) -> ComplexPower:
        """Scheduled power at ``t``: the segment covering it, else coasting (zero)."""
        for seg in self.profile:
            if seg.start <= t < seg.end:
                return seg.power
        return ComplexPower(0.0, 0.0)


@dataclass(frozen=True)
class Schedule:
    trains: tuple = ()

    def __len__(self):
        return len(self.trains)

    def snapshot(self, topology: Topology, t: float) -> dict:
        """Trains present at ``t``, grouped by section name."""
        out = {name: [] for name in topology.section_names}
        for plan in self.trains:
            pos = plan.position(t, topology.length(plan.section))
            if pos is None:
                continue
            out[plan.section].append(TrainLoad(plan.id, pos, plan.power(t), plan.z_t, plan.track))
        return out


def _train_plan(doc, i, topology: Topology, problems) -> TrainPlan | None:
    path = f"schedule.trains[{i}]"
    if not isinstance(doc, dict):
        problems.append(f"{path}: expected an object")
        return None
    n0 = len(problems)
    tid = doc.get("id")
    if not isinstance(tid, str) or not tid:
        problems.append(f"{path}.id: expected a non-empty string")
    section = doc.get("section", doc.get("zso", topology.section_names[0]))
    if section not in topology.section_names:
        problems.append(f"{path}.section: must be one of {topology.section_names}")
    track = doc.get("track", "up")
    if track not in TRACKS:
        problems.append(f"{path}.track: must be one of {TRACKS}")
    direction = doc.get("direction", FORWARD)
    if direction not in (FORWARD, REVERSE):
        problems.append(f"{path}.direction: must be {FORWARD!r} or {REVERSE!r}")
    entry = _number(doc, "entry_time", 0.0, problems, path)
    speed = _number(doc, "speed", DEFAULT_SPEED, problems, path, positive=True)
    segments = []
    raw = doc.get("profile", [])
    if not isinstance(raw, list):
        problems.append(f"{path}.profile: expected a list")
        raw = []
    for k, seg in enumerate(raw):
        sp = f"{path}.profile[{k}]"
        if not isinstance(seg, dict):
            problems.append(f"{sp}: expected an object")
            continue
        start = _number(seg, "start", math.nan, problems, sp)
        end = _number(seg, "end", math.nan, problems, sp)
        p = _number(seg, "p", 0.0, problems, sp)
        q = _number(seg, "q", 0.0, problems, sp)
        if not end > start:
            problems.append(f"{sp}.end: must be > start")
            continue
        if segments and start != segments[-1].end:
            problems.append(f"{sp}.start: segments must be contiguous (previous ends at {segments[-1].end})")
        segments.append(PowerSegment(start, end, ComplexPower(p, q)))
    if len(problems) > n0:
        return None
    return TrainPlan(tid, section, track, entry, direction, speed, tuple(segments))


def schedule_from_dict(doc, topology: Topology) -> Schedule:
    if doc is None:
        return Schedule()
    if not isinstance(doc, dict) or not isinstance(doc.get("trains", []), list):
        raise ScenarioError(["schedule: expected an object with a 'trains' list"])
    problems = []
    plans = [_train_plan(t, i, topology, problems) for i, t in enumerate(doc.get("trains", []))]
    ids = [p.id for p in plans if p is not None]
    for tid in sorted({x for x in ids if ids.count(x) > 1}):
        problems.append(f"schedule.trains: duplicate id {tid!r}")
    if problems:
        raise ScenarioError(problems)
    return Schedule(tuple(plans))


def load_schedule(document, topology: Topology) -> Schedule:
    """Schedule from a JSON string or an already-parsed object."""
    if isinstance(document, str):
        document = _parse_json(document, "schedule")
    return schedule_from_dict(document, topology)


def snapshot_from_dict(doc, topology: Topology) -> dict:
    """Explicit trains per section: ``{"zso1": [{"id", "l1", "p", "q", "track"}]}``."""
    problems = []
    out = {name: [] for name in topology.section_names}
    if not isinstance(doc, dict):
        raise ScenarioError(["snapshot: expected an object keyed by section name"])
    for name, trains in doc.items():
        if name not in out:
            problems.append(f"snapshot.{name}: unknown section (expected one of {topology.section_names})")
            continue
        for i, t in enumerate(trains):
            path = f"snapshot.{name}[{i}]"
            n0 = len(problems)
            l1 = _number(t, "l1", math.nan, problems, path)
            p = _number(t, "p", 0.0, problems, path)
            q = _number(t, "q", 0.0, problems, path)
            track = t.get("track", "up")
            if track not in TRACKS:
                problems.append(f"{path}.track: must be one of {TRACKS}")
            if len(problems) == n0:
                out[name].append(TrainLoad(str(t.get("id", f"{name}-{i}")), l1, ComplexPower(p, q), track=track))
    if problems:
        raise ScenarioError(problems)
    return out


# ---------------------------------------------------------------------------
# controller settings and the whole document
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SimConfig:
    time_step: float = 1.0  # s
    duration: float = 0.0  # s
    modes: tuple = ((0.0, DispatchMode.mcm()),)  # (start time, mode), sorted
    constraint: str = RELAXED
    start_time: float = 0.0

    def __post_init__(self):
        if not self.time_step > 0:
            raise ValueError("time_step must be > 0")
        if not self.duration >= 0:
            raise ValueError("duration must be >= 0")
        if self.constraint not in (STRICT, RELAXED):
            raise ValueError(f"constraint must be {STRICT!r} or {RELAXED!r}")
        if not self.modes:
            raise ValueError("at least one dispatch mode is required")
        times = [t for t, _ in self.modes]
        if times != sorted(times):
            raise ValueError("mode schedule must be sorted by time")
        for t in times:
            k = (t - self.start_time) / self.time_step
            if abs(k - round(k)) > 1e-9:
                raise ValueError(f"mode change at {t} s is not on a step boundary")

    @property
    def n_steps(self) -> int:
        return int(math.floor(self.duration / self.time_step + 1e-9)) + 1

    def times(self):
        return [self.start_time + k * self.time_step for k in range(self.n_steps)]

    def mode_at(self, t: float) -> DispatchMode:
        active = self.modes[0][1]
        for start, mode in self.modes:
            if start <= t + 1e-9:
                active = mode
        return active


def config_from_dict(doc) -> SimConfig:
    if doc is None:
        return SimConfig()
    problems = []
    step = _number(doc, "time_step", 1.0, problems, "config", positive=True)
    duration = _number(doc, "duration", 0.0, problems, "config")
    start = _number(doc, "start_time", 0.0, problems, "config")
    modes = []
    for i, m in enumerate(doc.get("modes", [{"time": 0.0, "kind": "MCM"}])):
        try:
            modes.append((float(m.get("time", 0.0)), DispatchMode.from_dict(m)))
        except (KeyError, TypeError, ValueError) as exc:
            problems.append(f"config.modes[{i}]: {exc}")
    if problems:
        raise ScenarioError(problems)
    try:
        return SimConfig(step, duration, tuple(modes), str(doc.get("constraint", RELAXED)).lower(), start)
    except ValueError as exc:
        raise ScenarioError([f"config: {exc}"]) from None


@dataclass(frozen=True)
class Scenario:
    topology: Topology
    schedule: Schedule = field(default_factory=Schedule)
    config: SimConfig = field(default_factory=SimConfig)
    snapshot: dict | None = None
    name: str = ""

    def trains_at(self, t: float | None = None) -> dict:
        """Snapshot trains if given (and no time requested), else the schedule at ``t``."""
        if self.snapshot is not None and t is None:
            return self.snapshot
        return self.schedule.snapshot(self.topology, self.config.start_time if t is None else t)

    def model_at(self, t: float | None = None) -> Topology:
        topo = self.topology.with_trains(self.trains_at(t))
        topo.validate()
        return topo


def _parse_json(text: str, what: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError([f"{what}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}"]) from None


def scenario_from_dict(doc: dict, name: str = "") -> Scenario:
    if not isinstance(doc, dict):
        raise ScenarioError(["scenario: expected a JSON object"])
    topology = topology_from_dict(doc.get("topology", {}))
    schedule = schedule_from_dict(doc.get("schedule"), topology)
    config = config_from_dict(doc.get("config"))
    snapshot = snapshot_from_dict(doc["snapshot"], topology) if "snapshot" in doc else None
    return Scenario(topology, schedule, config, snapshot, name or str(doc.get("name", "")))


def load_scenario(path) -> Scenario:
    path = Path(path)
    return scenario_from_dict(_parse_json(path.read_text(), str(path)), path.stem)
