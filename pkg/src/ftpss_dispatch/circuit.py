"""Domain types, units and topology validation.

Units used throughout the package unless a name says otherwise:
voltages in kV, currents in kA, powers in MW / MVar / MVA, impedances in
ohm, lengths in km.  With this set ``kV * kA = MVA`` and ``kV / ohm = kA``,
so no scaling factors appear in the circuit algebra.  Angles are radians
inside the numerical code and degrees on every external interface.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field, replace
from typing import Iterable

DEFAULT_U_N = 27.5
DEFAULT_Z0 = (0.15, 0.55)
DEFAULT_LENGTH = 40.0
DEFAULT_Z_T = 1000.0 + 0j
DEFAULT_DELTA_LIMITS = (-20.0, 20.0)
DEFAULT_ALPHA = 0.95
DEFAULT_Q_CIR_MAX = 0.2
DEFAULT_S_BASE = 100.0

# |z_t| must exceed this multiple of the series impedance of its section
SUPERPOSITION_RATIO = 10.0

TRACKS = ("up", "down")
N_TS = "N-TS"
A_TS = "A-TS"


class TopologyError(ValueError):
    """Raised when an operation is handed a topology that fails validation."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(str(v) for v in self.violations))


def normalize_angle(angle: float) -> float:
    """Wrap an angle in radians into (-pi, pi]."""
    wrapped = math.remainder(angle, 2.0 * math.pi)
    if wrapped == -math.pi:
        return math.pi
    return wrapped


@dataclass(frozen=True)
class Phasor:
    """Voltage (kV) or current (kA) phasor; ``angle`` is stored in radians."""

    magnitude: float
    angle: float = 0.0

    def __post_init__(self):
        if not self.magnitude >= 0.0:
            raise ValueError(f"phasor magnitude must be >= 0, got {self.magnitude}")
        object.__setattr__(self, "angle", normalize_angle(self.angle))

    @classmethod
    def from_complex(cls, value: complex) -> "Phasor":
        return cls(abs(value), cmath.phase(value))

    @classmethod
    def from_degrees(cls, magnitude: float, angle_deg: float) -> "Phasor":
        return cls(magnitude, math.radians(angle_deg))

    @property
    def angle_deg(self) -> float:
        return math.degrees(self.angle)

    def to_complex(self) -> complex:
        return cmath.rect(self.magnitude, self.angle)


@dataclass(frozen=True)
class ComplexPower:
    """Complex power in MW / MVar.  Negative ``p`` is regenerative braking."""

    p: float
    q: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.p) and math.isfinite(self.q)):
            raise ValueError("complex power must be finite")

    @classmethod
    def from_complex(cls, value: complex) -> "ComplexPower":
        return cls(value.real, value.imag)

    @property
    def s(self) -> complex:
        return complex(self.p, self.q)

    def scaled(self, factor: float) -> "ComplexPower":
        return ComplexPower(self.p * factor, self.q * factor)


@dataclass(frozen=True)
class LineImpedance:
    """Series impedance of the catenary per km of track."""

    r: float = DEFAULT_Z0[0]
    x: float = DEFAULT_Z0[1]

    @property
    def z(self) -> complex:
        return complex(self.r, self.x)

    def halved(self) -> "LineImpedance":
        return LineImpedance(self.r / 2.0, self.x / 2.0)


@dataclass(frozen=True)
class TrainLoad:
    """One train.  ``l1`` is the distance (km) to the section's left station."""

    id: str
    l1: float
    power: ComplexPower
    z_t: complex = DEFAULT_Z_T
    track: str = "up"


@dataclass(frozen=True)
class StationSpec:
    kind: str = N_TS
    u_n: float = DEFAULT_U_N
    name: str = ""


@dataclass(frozen=True)
class MsoSpec:
    """Two stations and one track between them.

    ``z0`` is the per-km impedance of the station-to-station path used for
    circulation between the stations; ``branch_z0`` is the per-km impedance
    of the track each train actually sits on.  They differ only for a
    reduced double-track section (see ``equivalent.reduce_zso``).
    """

    length: float = DEFAULT_LENGTH
    z0: LineImpedance = field(default_factory=LineImpedance)
    left: StationSpec = field(default_factory=lambda: StationSpec(N_TS))
    right: StationSpec = field(default_factory=lambda: StationSpec(A_TS))
    trains: tuple = ()
    branch_z0: LineImpedance | None = None

    @property
    def track_z0(self) -> LineImpedance:
        return self.branch_z0 if self.branch_z0 is not None else self.z0

    @property
    def u_n(self) -> float:
        return self.left.u_n

    def with_trains(self, trains: Iterable[TrainLoad]) -> "MsoSpec":
        return replace(self, trains=tuple(trains))


@dataclass(frozen=True)
class ZsoSpec:
    """Double-track section: an up and a down MSO sharing both stations."""

    length: float = DEFAULT_LENGTH
    z0: LineImpedance = field(default_factory=LineImpedance)
    left: StationSpec = field(default_factory=lambda: StationSpec(N_TS))
    right: StationSpec = field(default_factory=lambda: StationSpec(A_TS))
    trains: tuple = ()
    up_length: float | None = None
    down_length: float | None = None

    def track_length(self, track: str) -> float:
        value = self.up_length if track == "up" else self.down_length
        return self.length if value is None else value

    def mso(self, track: str) -> MsoSpec:
        return MsoSpec(
            length=self.track_length(track),
            z0=self.z0,
            left=self.left,
            right=self.right,
            trains=tuple(t for t in self.trains if t.track == track),
        )

    @property
    def u_n(self) -> float:
        return self.left.u_n

    def with_trains(self, trains: Iterable[TrainLoad]) -> "ZsoSpec":
        return replace(self, trains=tuple(trains))


@dataclass(frozen=True)
class PerUnitBase:
    s_base: float = DEFAULT_S_BASE
    v_base: float = DEFAULT_U_N

    @property
    def z_base(self) -> float:
        return self.v_base**2 / self.s_base

    @property
    def i_base(self) -> float:
        return self.s_base / self.v_base


@dataclass(frozen=True)
class TscSpec:
    """Traction station cluster: N-TS1 -- ZSO1 -- A-TS -- ZSO2 -- N-TS2.

    Train positions in ``zso2`` are measured from its left station, the A-TS.
    """

    zso1: ZsoSpec = field(default_factory=ZsoSpec)
    zso2: ZsoSpec = field(
        default_factory=lambda: ZsoSpec(left=StationSpec(A_TS), right=StationSpec(N_TS))
    )
    delta_limits: tuple = DEFAULT_DELTA_LIMITS
    alpha_margin: float = DEFAULT_ALPHA
    q_cir_max: float = DEFAULT_Q_CIR_MAX
    base: PerUnitBase = field(default_factory=PerUnitBase)

    def with_trains(self, zso1_trains, zso2_trains) -> "TscSpec":
        return replace(
            self,
            zso1=self.zso1.with_trains(zso1_trains),
            zso2=self.zso2.with_trains(zso2_trains),
        )


def default_tsc(u_n: float = DEFAULT_U_N) -> TscSpec:
    """Cluster built from the reference parameter set (40 km, 0.15+j0.55 ohm/km)."""
    n1 = StationSpec(N_TS, u_n, "N-TS1")
    a = StationSpec(A_TS, u_n, "A-TS")
    n2 = StationSpec(N_TS, u_n, "N-TS2")
    return TscSpec(
        zso1=ZsoSpec(left=n1, right=a),
        zso2=ZsoSpec(left=a, right=n2),
        base=PerUnitBase(DEFAULT_S_BASE, u_n),
    )


def segment_impedance(z0: LineImpedance, length: float) -> complex:
    """Series impedance of ``length`` km of uniform catenary."""
    if length < 0:
        raise ValueError(f"segment length must be >= 0, got {length}")
    return length * z0.z


def to_per_unit(value, base_value: float):
    return value / base_value


def from_per_unit(value, base_value: float):
    return value * base_value


def power_to_pu(value, base: PerUnitBase):
    return to_per_unit(value, base.s_base)


def power_from_pu(value, base: PerUnitBase):
    return from_per_unit(value, base.s_base)


def voltage_to_pu(value, base: PerUnitBase):
    return to_per_unit(value, base.v_base)


def voltage_from_pu(value, base: PerUnitBase):
    return from_per_unit(value, base.v_base)


@dataclass(frozen=True)
class Violation:
    field: str
    rule: str

    def __str__(self):
        return f"{self.field}: {self.rule}"


def _check_station(prefix, station, out):
    if station.kind not in (N_TS, A_TS):
        out.append(Violation(f"{prefix}.kind", f"unknown station kind {station.kind!r}"))
    if not station.u_n > 0:
        out.append(Violation(f"{prefix}.u_n", "nominal voltage must be > 0"))


def _check_section(prefix, length, z0, trains, out, tracks=TRACKS, lengths=None):
    if not length > 0:
        out.append(Violation(f"{prefix}.length", "section length must be > 0"))
    if not (z0.r > 0 and z0.x > 0):
        out.append(Violation(f"{prefix}.z0", "line resistance and reactance must be > 0"))
    seen = set()
    for i, train in enumerate(trains):
        tp = f"{prefix}.trains[{i}]"
        if train.id in seen:
            out.append(Violation(f"{tp}.id", f"duplicate train id {train.id!r}"))
        seen.add(train.id)
        if train.track not in tracks:
            out.append(Violation(f"{tp}.track", f"track must be one of {tracks}"))
            continue
        track_len = lengths(train.track) if lengths else length
        if not 0.0 < train.l1 < track_len:
            out.append(
                Violation(f"{tp}.l1", f"position out of range: {train.l1} not in (0, {track_len})")
            )
        if not (math.isfinite(train.power.p) and math.isfinite(train.power.q)):
            out.append(Violation(f"{tp}.power", "power must be finite"))
        section_z = abs(segment_impedance(z0, max(track_len, 0.0)))
        if not abs(train.z_t) >= SUPERPOSITION_RATIO * section_z:
            out.append(
                Violation(
                    f"{tp}.z_t",
                    f"superposition validity violated: |z_t|={abs(train.z_t):.4g} ohm "
                    f"< {SUPERPOSITION_RATIO:g} x section impedance {section_z:.4g} ohm",
                )
            )


def validate_mso(mso: MsoSpec, prefix: str = "mso") -> list:
    out = []
    _check_station(f"{prefix}.left", mso.left, out)
    _check_station(f"{prefix}.right", mso.right, out)
    _check_section(prefix, mso.length, mso.z0, mso.trains, out, tracks=TRACKS)
    return out


def validate_zso(zso: ZsoSpec, prefix: str = "zso") -> list:
    out = []
    _check_station(f"{prefix}.left", zso.left, out)
    _check_station(f"{prefix}.right", zso.right, out)
    _check_section(prefix, zso.length, zso.z0, zso.trains, out, lengths=zso.track_length)
    if zso.left.u_n != zso.right.u_n:
        out.append(Violation(f"{prefix}.right.u_n", "both stations must share U_N"))
    return out


def validate_topology(spec: TscSpec) -> list:
    """Return every violated invariant of ``spec``; an empty list means valid."""
    out = validate_zso(spec.zso1, "zso1") + validate_zso(spec.zso2, "zso2")
    if spec.zso1.right != spec.zso2.left:
        out.append(Violation("zso2.left", "both ZSOs must share the same A-TS"))
    if spec.zso1.right.kind != A_TS:
        out.append(Violation("zso1.right.kind", "shared station must be an A-TS"))
    if spec.zso1.left.kind != N_TS or spec.zso2.right.kind != N_TS:
        out.append(Violation("zso.outer", "outer stations must be N-TS"))
    lo, hi = spec.delta_limits
    if not (lo < 0.0 < hi and math.isclose(-lo, hi)):
        out.append(Violation("delta_limits", "must be a symmetric interval containing 0"))
    if not 0.0 <= spec.alpha_margin <= 1.0:
        out.append(Violation("alpha_margin", "must lie in [0, 1]"))
    if not spec.q_cir_max >= 0.0:
        out.append(Violation("q_cir_max", "must be >= 0"))
    if not (spec.base.s_base > 0 and spec.base.v_base > 0):
        out.append(Violation("base", "per-unit bases must be > 0"))
    return out


def require_valid(violations: list):
    if violations:
        raise TopologyError(violations)
