"""Fixed-topology equivalent of a supply section and the station power functions.

Each train branch (constant-power load split into a controlled current
source and a shunt ``z_t``) is replaced by a Norton branch at each station
terminal.  Superposing all branches leaves a network whose topology never
changes: two ideal sources, one shunt branch per station and the
station-to-station line.  The complex output of each station is then an
exponential polynomial in the A-TS angle::

    S1(d) = U_N * conj(sum_i a_i exp(j(b1_i d + b2_i)) + c_i)
    S2(d) = U_N * exp(j d) * conj(sum_i a_i exp(j(b1_i d + b2_i)) + c_i)

with one term per train plus one source term, and analytic derivatives.
Station 1 is the N-TS held at 0 deg, station 2 the A-TS at ``d``.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, replace

import numpy as np

from .circuit import (
    LineImpedance,
    MsoSpec,
    Phasor,
    TrainLoad,
    ZsoSpec,
    segment_impedance,
)

STATION1 = "station1"
STATION2 = "station2"

# pantograph-voltage estimates feeding the train terms
CLOSED_FORM = "closed-form"  # each train alone, quadratic drop formula
COUPLED = "coupled"  # all trains of a track superposed, solved at an anchor angle
PANTOGRAPH_METHODS = (CLOSED_FORM, COUPLED)


class InfeasibleOperatingPoint(ValueError):
    """A pantograph voltage has no real solution (voltage collapse)."""


class DivergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class PantographState:
    u_t: float
    delta_t: float  # degrees
    feasible: bool = True

    @property
    def phasor(self) -> Phasor:
        return Phasor.from_degrees(self.u_t, self.delta_t)


@dataclass(frozen=True)
class EquivalentBranch:
    i_src: Phasor
    z_par: complex
    side: str

    def __post_init__(self):
        if self.z_par == 0:
            raise ValueError("equivalent branch impedance must be non-zero")


def _split(mso: MsoSpec, train: TrainLoad):
    l1 = train.l1
    l2 = mso.length - l1
    z0 = mso.track_z0
    return l1, l2, segment_impedance(z0, l1), segment_impedance(z0, l2)


def _pantograph_terms(mso: MsoSpec, train: TrainLoad):
    """(beta, magnitude factor, angle offset in rad) of the pantograph voltage."""
    l1 = train.l1
    l2 = mso.length - l1
    z0 = mso.track_z0
    p, q = train.power.p, train.power.q
    k = l1 * l2 / (mso.length * mso.u_n**2)
    beta = k * (z0.r * p + z0.x * q)
    disc = 0.25 - beta
    if disc < 0:
        return beta, None, None
    root = math.sqrt(disc)
    # 1/2 - sqrt(1/4 - beta) == beta / (1/2 + sqrt(1/4 - beta)); the second
    # form avoids dividing by (R0 P + X0 Q), which vanishes at no load.
    angle = -k * (z0.x * p - z0.r * q) / (0.5 + root)
    return beta, 0.5 + root, angle


def pantograph_voltage(mso: MsoSpec, train: TrainLoad, delta_a: float) -> PantographState:
    """Closed-form pantograph voltage of a lone train between two stations.

    ``delta_a`` in degrees.  Uses the quadratic voltage-drop approximation
    with the real part of the drop ``(R P + X Q)/U`` and a first-order
    angle drop ``(X P - R Q)/U^2``; the source phase at the train is
    interpolated linearly in position.
    """
    _, factor, offset = _pantograph_terms(mso, train)
    if factor is None:
        return PantographState(0.0, 0.0, feasible=False)
    delta_t = (train.l1 / mso.length) * math.radians(delta_a) + offset
    return PantographState(factor * mso.u_n, math.degrees(delta_t), True)


def pantograph_voltage_reference_line(l1, l2, p, q, u_n, delta_a):
    """Same formula with the constants of Z0 = 0.15 + j0.55 ohm/km written out.

    Kept as an independent transcription for tests; returns (U_t kV, delta_t deg).
    """
    length = l1 + l2
    a = 11 * p - 3 * q
    b = 3 * p + 11 * q
    c = math.sqrt(5 - l1 * l2 / (length * u_n**2) * b)
    s5 = 2 * math.sqrt(5)
    delta_t = (l1 / length) * math.radians(delta_a) - (a / b) * (0.5 - c / s5)
    return (0.5 + c / s5) * u_n, math.degrees(delta_t)


def pantograph_voltage_exact(
    mso: MsoSpec,
    train: TrainLoad,
    delta_a: float,
    tol: float = 1e-10,
    max_iter: int = 200,
    damping: float = 0.7,
) -> PantographState:
    """Solve the lone-train two-source circuit exactly.

    The train draws exactly ``S`` (source plus shunt), so the node obeys
    ``U = E - Z_th * conj(S / U)`` with the Thevenin source ``E`` and
    impedance ``Z_th`` of the two stations seen from the train.  Damped
    fixed-point iteration first, complex Newton if that stalls.
    ``tol`` is relative to U_N.
    """
    l1, l2, z1, z2 = _split(mso, train)
    u_n = mso.u_n
    v1 = complex(u_n, 0.0)
    v2 = cmath.rect(u_n, math.radians(delta_a))
    e_th = (v1 * z2 + v2 * z1) / (z1 + z2)
    z_th = z1 * z2 / (z1 + z2)
    s = train.power.s

    def residual(u):
        return u - e_th + z_th * (s / u).conjugate()

    u = e_th
    for _ in range(max_iter):
        u_new = e_th - z_th * (s / u).conjugate()
        u = damping * u_new + (1 - damping) * u
        if abs(residual(u)) <= tol * u_n:
            return PantographState(abs(u), math.degrees(cmath.phase(u)), True)
        if not math.isfinite(abs(u)) or abs(u) < 1e-6 * u_n:
            break

    # Newton on (Re u, Im u); residual is not holomorphic because of conj().
    u = e_th
    for _ in range(max_iter):
        r = residual(u)
        if abs(r) <= tol * u_n:
            return PantographState(abs(u), math.degrees(cmath.phase(u)), True)
        # d/du and d/dconj(u) of z_th * conj(s/u) = z_th * conj(s) / conj(u)
        dconj = -z_th * s.conjugate() / u.conjugate() ** 2
        jac = np.array(
            [
                [1 + dconj.real, dconj.imag],
                [dconj.imag, 1 - dconj.real],
            ]
        )
        step = np.linalg.solve(jac, -np.array([r.real, r.imag]))
        u = u + complex(step[0], step[1])
        if not math.isfinite(abs(u)):
            break
    raise DivergenceError(f"exact pantograph solve did not converge for train {train.id!r}")


def _track_groups(mso: MsoSpec):
    """Trains grouped by the track they share (a plain MSO has one track)."""
    if mso.branch_z0 is None:
        return [tuple(mso.trains)] if mso.trains else []
    groups = {}
    for t in mso.trains:
        groups.setdefault(t.track, []).append(t)
    return [tuple(g) for g in groups.values()]


def pantograph_voltages_coupled(
    mso: MsoSpec, delta_a: float, tol: float = 1e-12, max_iter: int = 200
) -> dict:
    """Pantograph voltages (complex kV) of every train at ``delta_a`` degrees.

    Trains on one track interact through the transfer impedances of the
    track ``z0 * min(l) * (L - max(l)) / L``; separate tracks only meet at
    the ideal station busbars and so do not interact.  Each train draws
    exactly ``S``.  Solved by fixed-point iteration on
    ``U = U_open - Z conj(S / U)``.
    """
    u_n = mso.u_n
    length = mso.length
    z0 = mso.track_z0.z
    v2 = cmath.rect(u_n, math.radians(delta_a))
    out = {}
    for group in _track_groups(mso):
        pos = np.array([t.l1 for t in group])
        lo = np.minimum.outer(pos, pos)
        hi = np.maximum.outer(pos, pos)
        z_tr = z0 * lo * (length - hi) / length
        s_conj = np.conj(np.array([t.power.s for t in group]))
        u_open = u_n * (length - pos) / length + v2 * pos / length
        u = u_open.copy()
        for _ in range(max_iter):
            u_new = u_open - z_tr @ (s_conj / np.conj(u))
            if not np.all(np.isfinite(u_new)) or np.min(np.abs(u_new)) < 1e-3 * u_n:
                raise InfeasibleOperatingPoint("pantograph voltages collapse under the given loads")
            done = np.max(np.abs(u_new - u)) <= tol * u_n
            u = u_new
            if done:
                break
        else:
            raise DivergenceError("coupled pantograph voltages did not converge")
        for t, value in zip(group, u):
            out[id(t)] = complex(value)
    return out


def train_current_source(train: TrainLoad, u_t: Phasor) -> Phasor:
    """Controlled current source of a train branch: conj(S/U) - U/z_t (kA)."""
    if u_t.magnitude <= 0:
        raise ValueError("pantograph voltage must be non-zero")
    u = u_t.to_complex()
    return Phasor.from_complex((train.power.s / u).conjugate() - u / train.z_t)


def _branch_values(mso: MsoSpec, train: TrainLoad, delta_a: float, side: str):
    state = pantograph_voltage(mso, train, delta_a)
    if not state.feasible:
        raise InfeasibleOperatingPoint(f"pantograph voltage collapses for train {train.id!r}")
    _, _, z1, z2 = _split(mso, train)
    zt = train.z_t
    d = z1 * zt + z2 * zt + z1 * z2
    i_ts = train_current_source(train, state.phasor).to_complex()
    u_n = mso.u_n
    if side == STATION1:
        v_other = cmath.rect(u_n, math.radians(delta_a))
        i_src = v_other / (z1 + z2) + z2 * zt / d * (i_ts - v_other / z2)
        z_par = (z1 + z2) * d / z2**2
    elif side == STATION2:
        v_other = complex(u_n, 0.0)
        i_src = v_other / (z1 + z2) + z1 * zt / d * (i_ts - v_other / z1)
        z_par = (z1 + z2) * d / z1**2
    else:
        raise ValueError(f"unknown side {side!r}")
    return i_src, z_par


def equivalent_branch(mso: MsoSpec, train: TrainLoad, delta_a: float, side: str) -> EquivalentBranch:
    """Norton branch at one station terminal that replaces a train branch.

    The station draws ``V/z_par + i_src`` through this branch in addition
    to the station-to-station line current.
    """
    i_src, z_par = _branch_values(mso, train, delta_a, side)
    return EquivalentBranch(Phasor.from_complex(i_src), z_par, side)


def aggregate_branches(branches) -> EquivalentBranch:
    """Parallel combination of Norton branches sitting at the same terminal."""
    branches = list(branches)
    if not branches:
        raise ValueError("need at least one branch to aggregate")
    side = branches[0].side
    if any(b.side != side for b in branches):
        raise ValueError("all branches must sit on the same side")
    current = sum(b.i_src.to_complex() for b in branches)
    admittance = sum(1.0 / b.z_par for b in branches)
    return EquivalentBranch(Phasor.from_complex(current), 1.0 / admittance, side)


def reduce_zso(zso: ZsoSpec) -> MsoSpec:
    """Collapse a double-track section onto one equivalent section.

    The station-to-station path becomes the two tracks in parallel
    (per-km impedance ``z0/2``); every train keeps its own position and
    keeps the impedance of the track it runs on, because the tracks only
    meet at the station busbars.
    """
    if zso.track_length("up") != zso.track_length("down"):
        raise ValueError("up and down tracks must have the same length")
    return MsoSpec(
        length=zso.length,
        z0=zso.z0.halved(),
        left=zso.left,
        right=zso.right,
        trains=tuple(zso.trains),
        branch_z0=zso.z0,
    )


def mirror_section(mso: MsoSpec) -> MsoSpec:
    """Swap station roles: positions measured from the other end."""
    trains = tuple(replace(t, l1=mso.length - t.l1) for t in mso.trains)
    return replace(mso, left=mso.right, right=mso.left, trains=trains)


@dataclass(frozen=True)
class StationTerms:
    """Coefficient table of one station's exponential polynomial."""

    a: np.ndarray  # complex
    b1: np.ndarray
    b2: np.ndarray  # radians
    c: np.ndarray  # complex
    rotate: int  # 0 for the N-TS, 1 for the A-TS

    def __len__(self):
        return len(self.a)

    def current(self, delta):
        """Station current phasor and its first two derivatives (rad^-1)."""
        e = self.a * np.exp(1j * (self.b1 * delta + self.b2))
        g = e.sum() + self.c.sum()
        g1 = (1j * self.b1 * e).sum()
        g2 = (-(self.b1**2) * e).sum()
        return g, g1, g2

    def to_dict(self):
        return {
            "a": [[z.real, z.imag] for z in self.a],
            "b1": list(map(float, self.b1)),
            "b2": list(map(float, self.b2)),
            "c": [[z.real, z.imag] for z in self.c],
            "rotate": self.rotate,
        }


@dataclass(frozen=True)
class PowerFunction:
    """Station complex powers as functions of the A-TS angle (radians).

    Powers are in MVA; ``station1`` is the N-TS, ``station2`` the A-TS.
    """

    station1: StationTerms
    station2: StationTerms
    u_n: float
    n_trains: int
    mirrored: bool = False
    pantograph: str = COUPLED
    anchor: float = 0.0  # degrees

    def _power(self, terms: StationTerms, delta: float, order: int):
        g, g1, g2 = terms.current(delta)
        m = terms.rotate
        rot = self.u_n * cmath.exp(1j * m * delta)
        s0 = rot * g.conjugate()
        if order == 0:
            return s0
        s1 = rot * (1j * m * g.conjugate() + g1.conjugate())
        if order == 1:
            return s0, s1
        s2 = rot * (-(m**2) * g.conjugate() + 2j * m * g1.conjugate() + g2.conjugate())
        return s0, s1, s2

    def powers(self, delta: float):
        """(S1, S2) in MVA at ``delta`` radians."""
        return self._power(self.station1, delta, 0), self._power(self.station2, delta, 0)

    def powers_deg(self, delta_deg: float):
        return self.powers(math.radians(delta_deg))

    def derivatives(self, delta: float, order: int = 1):
        """Per station, a tuple (S, dS/dd, [d2S/dd2]) with d in radians."""
        return self._power(self.station1, delta, order), self._power(self.station2, delta, order)

    def to_dict(self):
        return {
            "u_n": self.u_n,
            "n_trains": self.n_trains,
            "mirrored": self.mirrored,
            "pantograph": self.pantograph,
            "anchor_deg": self.anchor,
            "station1": self.station1.to_dict(),
            "station2": self.station2.to_dict(),
        }


def evaluate_station_powers(pf: PowerFunction, delta_a: float):
    """(S1, S2) in MVA at ``delta_a`` degrees."""
    return pf.powers_deg(delta_a)


def evaluate_station_power_derivatives(pf: PowerFunction, delta_a: float):
    """(dS1/dd, dS2/dd) in MVA per radian at ``delta_a`` degrees."""
    (_, d1), (_, d2) = pf.derivatives(math.radians(delta_a), 1)
    return d1, d2


def build_power_functions(
    model, mirrored: bool = False, pantograph: str = COUPLED, anchor: float = 0.0
) -> PowerFunction:
    """Coefficient tables for both stations of an MSO or (reduced) ZSO.

    Each train contributes one term per station whose phase advances with
    the pantograph angle (slope ``l1/L``, offset from the voltage drop);
    everything proportional to the A-TS voltage is gathered into a single
    ``exp(j d)`` term and everything proportional to the N-TS voltage into
    the constant ``c``.

    ``pantograph`` picks the pantograph-voltage estimate.  With
    ``COUPLED`` the voltages are solved exactly at ``anchor`` degrees, so
    the function is exact there and first-order accurate around it.
    """
    if pantograph not in PANTOGRAPH_METHODS:
        raise ValueError(f"unknown pantograph method {pantograph!r}")
    if isinstance(model, ZsoSpec):
        model = reduce_zso(model)
    if pantograph == COUPLED:
        coupled = pantograph_voltages_coupled(model, anchor)
        anchor_rad = math.radians(anchor)
    u_n = model.u_n
    z_line = segment_impedance(model.z0, model.length)
    n = len(model.trains)

    a1 = np.zeros(n + 1, dtype=complex)
    a2 = np.zeros(n + 1, dtype=complex)
    b1 = np.zeros(n + 1)
    b2 = np.zeros(n + 1)
    c1 = np.zeros(n + 1, dtype=complex)
    c2 = np.zeros(n + 1, dtype=complex)

    # source term: the A-TS voltage, exp(j d)
    b1[n] = 1.0
    a1[n] = -u_n / z_line
    c1[n] = u_n / z_line
    a2[n] = u_n / z_line
    c2[n] = -u_n / z_line

    for k, train in enumerate(model.trains):
        if pantograph == COUPLED:
            u_c = coupled[id(train)]
            u_t = abs(u_c)
            offset = cmath.phase(u_c) - train.l1 / model.length * anchor_rad
        else:
            _, factor, offset = _pantograph_terms(model, train)
            if factor is None:
                raise InfeasibleOperatingPoint(f"pantograph voltage collapses for train {train.id!r}")
            u_t = factor * u_n
        _, _, z1, z2 = _split(model, train)
        b1[k] = train.l1 / model.length
        b2[k] = offset
        if pantograph == COUPLED:
            # With the pantograph voltage known exactly the whole draw
            # conj(S/U) is injected as a current (the z_t -> inf limit of
            # the branch formulas), which keeps superposition exact.
            amp = train.power.s.conjugate() / u_t
            a1[k] = z2 / (z1 + z2) * amp
            a2[k] = z1 / (z1 + z2) * amp
            continue
        zt = train.z_t
        d = z1 * zt + z2 * zt + z1 * z2
        # i_ts = A * exp(j(l1/L d + offset))
        amp = train.power.s.conjugate() / u_t - u_t / zt
        a1[k] = z2 * zt / d * amp
        a2[k] = z1 * zt / d * amp
        cross = u_n * (1.0 / (z1 + z2) - zt / d)
        a1[n] += cross
        c2[k] = cross
        c1[k] = u_n * z2**2 / ((z1 + z2) * d)
        a2[n] += u_n * z1**2 / ((z1 + z2) * d)

    s1 = StationTerms(a1, b1.copy(), b2.copy(), c1, rotate=0)
    s2 = StationTerms(a2, b1.copy(), b2.copy(), c2, rotate=1)
    return PowerFunction(s1, s2, u_n, n, mirrored, pantograph, anchor)


class SectionModel:
    """A reduced section with power functions built on demand per anchor angle.

    With the closed-form pantograph estimate the anchor has no effect and
    a single power function is shared.
    """

    def __init__(self, model, mirrored: bool = False, pantograph: str = COUPLED):
        if isinstance(model, ZsoSpec):
            model = reduce_zso(model)
        if mirrored:
            model = mirror_section(model)
        self.model = model
        self.mirrored = mirrored
        self.pantograph = pantograph
        self._cache = {}

    @property
    def refinable(self) -> bool:
        return self.pantograph == COUPLED and bool(self.model.trains)

    def at(self, anchor: float = 0.0) -> PowerFunction:
        key = float(anchor) if self.refinable else 0.0
        pf = self._cache.get(key)
        if pf is None:
            pf = build_power_functions(self.model, self.mirrored, self.pantograph, key)
            self._cache[key] = pf
        return pf

    def powers_deg(self, delta_a: float):
        """Station powers (MVA) from the function anchored at ``delta_a`` itself."""
        return self.at(delta_a).powers_deg(delta_a)
