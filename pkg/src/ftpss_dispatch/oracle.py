"""Full-network Newton-Raphson power flow used as ground truth.

Every track is modelled as its own ladder of series segments between the
two station busbars; double tracks meet only at the stations.  Stations
are ideal sources (fixed voltage phasors).  A train node carries its shunt
``z_t`` inside the admittance matrix plus the controlled source of the
train, so that the train draws exactly its scheduled complex power.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field

import numpy as np

from .circuit import (
    A_TS,
    ComplexPower,
    MsoSpec,
    PerUnitBase,
    Phasor,
    TscSpec,
    ZsoSpec,
    segment_impedance,
)

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 20


class PowerFlowDivergence(RuntimeError):
    pass


@dataclass(frozen=True)
class Section:
    """One track between two station busbars."""

    label: str
    left: str
    right: str
    length: float
    z0: complex
    trains: tuple = ()


@dataclass
class NetworkModel:
    names: list
    station_idx: list
    train_idx: list
    voltage: np.ndarray  # fixed station voltages (kV), zero for trains
    load: np.ndarray  # train complex power (MVA), zero for stations
    shunt: np.ndarray  # train shunt admittance (S), zero for stations
    branches: list  # (i, j, z_ohm, section_label)
    ybus: np.ndarray  # siemens, including train shunts
    base: PerUnitBase = field(default_factory=PerUnitBase)

    @property
    def n_nodes(self):
        return len(self.names)


@dataclass
class PfSolution:
    voltages: np.ndarray  # complex kV per node
    station_powers: dict  # station name -> ComplexPower (output into network)
    section_powers: dict  # (section label, station name) -> complex MVA
    iterations: int
    max_mismatch: float  # p.u.
    network: NetworkModel

    def phasor(self, name) -> Phasor:
        return Phasor.from_complex(self.voltages[self.network.names.index(name)])

    def branch_currents(self):
        v = self.voltages
        return [(v[i] - v[j]) / z for i, j, z, _ in self.network.branches]


def _station_name(station, default):
    return station.name or default


def sections_of(model, prefix: str = "") -> tuple:
    """Track sections of an MSO, ZSO or TSC with stable station names."""
    if isinstance(model, MsoSpec):
        left = _station_name(model.left, "left")
        right = _station_name(model.right, "right")
        return (Section(prefix + "mso", left, right, model.length, model.track_z0.z, tuple(model.trains)),)
    if isinstance(model, ZsoSpec):
        left = _station_name(model.left, "left")
        right = _station_name(model.right, "right")
        out = []
        for track in ("up", "down"):
            mso = model.mso(track)
            out.append(Section(f"{prefix}{track}", left, right, mso.length, mso.z0.z, mso.trains))
        return tuple(out)
    if isinstance(model, TscSpec):
        return sections_of(model.zso1, prefix + "zso1.") + sections_of(model.zso2, prefix + "zso2.")
    raise TypeError(f"cannot build a network from {type(model).__name__}")


def station_kinds(model) -> dict:
    if isinstance(model, (MsoSpec, ZsoSpec)):
        return {
            _station_name(model.left, "left"): model.left,
            _station_name(model.right, "right"): model.right,
        }
    if isinstance(model, TscSpec):
        return {**station_kinds(model.zso1), **station_kinds(model.zso2)}
    raise TypeError(type(model).__name__)


def build_network(sections, stations: dict, angles: dict, base: PerUnitBase | None = None) -> NetworkModel:
    """Assemble nodes, branches and the admittance matrix.

    ``stations`` maps station name -> StationSpec and ``angles`` maps
    station name -> voltage angle in degrees.
    """
    names = list(stations)
    voltage = [cmath.rect(stations[n].u_n, math.radians(angles.get(n, 0.0))) for n in names]
    load = [0j] * len(names)
    shunt = [0j] * len(names)
    station_idx = list(range(len(names)))
    train_idx = []
    branches = []
    for sec in sections:
        chain = [names.index(sec.left)]
        positions = [0.0]
        for train in sorted(sec.trains, key=lambda t: t.l1):
            if not 0.0 < train.l1 < sec.length:
                raise ValueError(f"train {train.id!r} lies outside section {sec.label}")
            if train.l1 == positions[-1]:
                # coincident trains share one node
                k = chain[-1]
                names[k] += f"+{train.id}"
                load[k] += train.power.s
                shunt[k] += 1.0 / train.z_t
                continue
            names.append(f"{sec.label}:{train.id}")
            voltage.append(0j)
            load.append(train.power.s)
            shunt.append(1.0 / train.z_t)
            train_idx.append(len(names) - 1)
            chain.append(len(names) - 1)
            positions.append(train.l1)
        chain.append(names.index(sec.right))
        positions.append(sec.length)
        for k in range(len(chain) - 1):
            z = (positions[k + 1] - positions[k]) * sec.z0
            branches.append((chain[k], chain[k + 1], z, sec.label))

    n = len(names)
    ybus = np.zeros((n, n), dtype=complex)
    for i, j, z, _ in branches:
        y = 1.0 / z
        ybus[i, i] += y
        ybus[j, j] += y
        ybus[i, j] -= y
        ybus[j, i] -= y
    ybus[np.diag_indices(n)] += np.array(shunt)

    connected = _connected(n, branches)
    if not connected:
        raise ValueError("network graph is disconnected")
    if base is None:
        base = PerUnitBase(100.0, next(iter(stations.values())).u_n)
    return NetworkModel(
        names=names,
        station_idx=station_idx,
        train_idx=train_idx,
        voltage=np.array(voltage),
        load=np.array(load),
        shunt=np.array(shunt),
        branches=branches,
        ybus=ybus,
        base=base,
    )


def _connected(n, branches):
    adj = {i: set() for i in range(n)}
    for i, j, _, _ in branches:
        adj[i].add(j)
        adj[j].add(i)
    seen = {0}
    stack = [0]
    while stack:
        for nb in adj[stack.pop()]:
            if nb not in seen:
                seen.add(nb)
                stack.append(nb)
    return len(seen) == n


def network_for(model, delta_a: float, base: PerUnitBase | None = None) -> NetworkModel:
    """Network of an MSO/ZSO/TSC with every A-TS at ``delta_a`` degrees."""
    stations = station_kinds(model)
    angles = {name: (delta_a if st.kind == A_TS else 0.0) for name, st in stations.items()}
    if base is None and isinstance(model, TscSpec):
        base = model.base
    return build_network(sections_of(model), stations, angles, base)


def _line_only_start(net: NetworkModel):
    """Train voltages of the unloaded network (exact when every S_t = 0)."""
    v = net.voltage.copy()
    t = net.train_idx
    if not t:
        return v
    s = net.station_idx
    y = net.ybus - np.diag(net.shunt)
    rhs = -y[np.ix_(t, s)] @ v[s]
    v[t] = np.linalg.solve(y[np.ix_(t, t)], rhs)
    return v


def _mismatch(ybus_pu, v, load_pu, shunt_pu, t):
    i = ybus_pu @ v
    s_calc = v[t] * np.conj(i[t])
    return s_calc + load_pu[t] - np.abs(v[t]) ** 2 * np.conj(shunt_pu[t])


def _worst(f):
    # summed over nodes so the network-wide imbalance, not just each node, meets the tolerance
    return float(max(np.abs(f.real).sum(), np.abs(f.imag).sum()))


def solve_nr(net: NetworkModel, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER) -> PfSolution:
    """Polar Newton-Raphson on the train-node power mismatches (p.u.).

    Converged when the summed absolute P and Q mismatches are each within ``tol``.
    """
    base = net.base
    zb = base.z_base
    ybus = net.ybus * zb
    shunt = net.shunt * zb
    load = net.load / base.s_base
    v = _line_only_start(net) / base.v_base
    t = np.array(net.train_idx, dtype=int)
    nt = len(t)

    iterations = 0
    worst = 0.0
    if nt:
        f = _mismatch(ybus, v, load, shunt, t)
        worst = _worst(f)
        while worst > tol:
            if iterations >= max_iter:
                raise PowerFlowDivergence(
                    f"Newton-Raphson did not converge in {max_iter} iterations (mismatch {worst:.3e} p.u.)"
                )
            ibus = ybus @ v
            vm = np.abs(v)
            vn = v / vm
            ds_dva = 1j * np.diag(v) @ np.conj(np.diag(ibus) - ybus @ np.diag(v))
            ds_dvm = np.diag(v) @ np.conj(ybus @ np.diag(vn)) + np.conj(np.diag(ibus)) @ np.diag(vn)
            dva = ds_dva[np.ix_(t, t)]
            dvm = ds_dvm[np.ix_(t, t)] - np.diag(2 * vm[t] * np.conj(shunt[t]))
            jac = np.block([[dva.real, dvm.real], [dva.imag, dvm.imag]])
            dx = np.linalg.solve(jac, -np.r_[f.real, f.imag])
            va = np.angle(v[t]) + dx[:nt]
            vmag = vm[t] + dx[nt:]
            v[t] = vmag * np.exp(1j * va)
            iterations += 1
            f = _mismatch(ybus, v, load, shunt, t)
            worst = _worst(f)
            if not np.isfinite(worst):
                raise PowerFlowDivergence("Newton-Raphson diverged (non-finite mismatch)")

    v_kv = v * base.v_base
    i_ka = net.ybus @ v_kv
    stations = {}
    for idx in net.station_idx:
        stations[net.names[idx]] = ComplexPower.from_complex(complex(v_kv[idx] * np.conj(i_ka[idx])))
    sections = {}
    for i, j, z, label in net.branches:
        flow = (v_kv[i] - v_kv[j]) / z
        if i in net.station_idx:
            key = (label, net.names[i])
            sections[key] = sections.get(key, 0j) + complex(v_kv[i] * np.conj(flow))
        if j in net.station_idx:
            key = (label, net.names[j])
            sections[key] = sections.get(key, 0j) + complex(v_kv[j] * np.conj(-flow))
    return PfSolution(v_kv, stations, sections, iterations, worst, net)


def conservation_check(sol: PfSolution) -> dict:
    """Energy balance of a converged solution, all figures in p.u."""
    net = sol.network
    s_base = net.base.s_base
    supplied = sum(p.s for p in sol.station_powers.values())
    demand = complex(net.load[net.train_idx].sum()) if net.train_idx else 0j
    losses = 0j
    for (i, j, z, _), cur in zip(net.branches, sol.branch_currents()):
        losses += z * abs(cur) ** 2
    residual = supplied - demand - losses
    return {
        "supplied_pu": supplied / s_base,
        "demand_pu": demand / s_base,
        "losses_pu": losses / s_base,
        "residual_p_pu": residual.real / s_base,
        "residual_q_pu": residual.imag / s_base,
        "losses_nonnegative": losses.real >= 0 and losses.imag >= 0,
    }


def section_station_powers(model, delta_a: float, base: PerUnitBase | None = None, **kw):
    """(S_N-TS, S_A-TS) in MVA for an MSO or ZSO in its own orientation.

    For a section whose left station is the A-TS the pair is still
    returned as (N-TS, A-TS).
    """
    sol = solve_nr(network_for(model, delta_a, base), **kw)
    stations = station_kinds(model)
    s_n = next(sol.station_powers[n].s for n, st in stations.items() if st.kind != A_TS)
    s_a = next(sol.station_powers[n].s for n, st in stations.items() if st.kind == A_TS)
    return s_n, s_a


def tsc_station_powers(tsc: TscSpec, delta_a: float, **kw):
    """Per-ZSO station powers of a cluster solved as one network.

    Returns {"zso1": (S_N-TS1, S_A-TS), "zso2": (S_N-TS2, S_A-TS)} in MVA.
    """
    sol = solve_nr(network_for(tsc, delta_a), **kw)
    out = {}
    for key, zso in (("zso1", tsc.zso1), ("zso2", tsc.zso2)):
        stations = station_kinds(zso)
        n_name = next(n for n, st in stations.items() if st.kind != A_TS)
        a_name = next(n for n, st in stations.items() if st.kind == A_TS)
        s_n = sum(sol.section_powers.get((f"{key}.{tr}", n_name), 0j) for tr in ("up", "down"))
        s_a = sum(sol.section_powers.get((f"{key}.{tr}", a_name), 0j) for tr in ("up", "down"))
        out[key] = (s_n, s_a)
    return out, sol


# ---------------------------------------------------------------------------
# bisection FPAD on the full network
# ---------------------------------------------------------------------------

BISECT_RESOLUTION = 1e-3  # degrees
SCAN_STEP = 0.5  # degrees


class SectionSweep:
    """Memoized oracle station powers of one ZSO/MSO as functions of delta_A.

    Values are p.u. on ``base`` and oriented as (N-TS, A-TS).
    """

    def __init__(self, model, base: PerUnitBase | None = None, tol: float = DEFAULT_TOL):
        self.model = model
        self.base = base or PerUnitBase(100.0, model.u_n)
        self.tol = tol
        self._cache = {}
        self.solves = 0

    def powers(self, delta_a: float):
        key = float(delta_a)
        hit = self._cache.get(key)
        if hit is None:
            s_n, s_a = section_station_powers(self.model, key, self.base, tol=self.tol)
            self.solves += 1
            hit = (s_n / self.base.s_base, s_a / self.base.s_base)
            self._cache[key] = hit
        return hit

    def component(self, name: str):
        station = 0 if name.endswith("1") else 1
        part = "real" if name.startswith("P") else "imag"
        return lambda x: getattr(self.powers(x)[station], part)


def bisect_critical(fn, limits, resolution: float = BISECT_RESOLUTION, step: float = SCAN_STEP):
    """Zero of ``fn`` reached by walking downhill in ``|fn|`` from 0 deg.

    Falls back to the arg-min of ``|fn|`` over ``limits`` when no sign
    change is met.  Returns ``(x, exists)``.
    """
    from .fpad import Critical

    lo, hi = limits
    x0 = min(max(0.0, lo), hi)
    f0 = fn(x0)
    if f0 == 0.0:
        return Critical(x0, True)
    h = 1e-4
    slope = (fn(min(x0 + h, hi)) - fn(max(x0 - h, lo))) / (min(x0 + h, hi) - max(x0 - h, lo))
    first = -1.0 if f0 * slope > 0 else 1.0
    for direction in (first, -first):
        a, fa = x0, f0
        while True:
            b = a + direction * step
            b = min(max(b, lo), hi)
            if b == a:
                break
            fb = fn(b)
            if fa * fb <= 0:
                return Critical(_bisect(fn, a, fa, b, resolution), True)
            # stop walking once |fn| starts rising in the first direction
            if direction == first and abs(fb) > abs(fa):
                break
            a, fa = b, fb
    return Critical(_argmin_abs(fn, limits, resolution, step), False)


def _bisect(fn, a, fa, b, resolution):
    while abs(b - a) > resolution:
        m = 0.5 * (a + b)
        fm = fn(m)
        if fm == 0.0:
            return m
        if fa * fm < 0:
            b = m
        else:
            a, fa = m, fm
    return 0.5 * (a + b)


def _argmin_abs(fn, limits, resolution, step):
    lo, hi = limits
    n = max(2, int(round((hi - lo) / step)) + 1)
    grid = [lo + (hi - lo) * k / (n - 1) for k in range(n)]
    vals = [abs(fn(x)) for x in grid]
    k = min(range(n), key=vals.__getitem__)
    a, b = grid[max(k - 1, 0)], grid[min(k + 1, n - 1)]
    # golden-section refinement inside the bracketing cells
    g = (math.sqrt(5) - 1) / 2
    c, d = b - g * (b - a), a + g * (b - a)
    while b - a > resolution:
        if abs(fn(c)) < abs(fn(d)):
            b, d = d, c
            c = b - g * (b - a)
        else:
            a, c = c, d
            d = a + g * (b - a)
    x = 0.5 * (a + b)
    for edge in (lo, hi):
        if abs(fn(edge)) <= abs(fn(x)):
            x = edge
    return x


def fpad_bisect(model, constraint, alpha: float = 0.95, limits=(-20.0, 20.0), base: PerUnitBase | None = None,
                resolution: float = BISECT_RESOLUTION):
    """Section FPAD from oracle power flows and bisection.

    ``model`` is an MSO or ZSO; the bound assembly is the one used by the
    equivalent-model method.
    """
    from .fpad import assemble_section

    sweep = SectionSweep(model, base)
    q_off = constraint.q_offset / sweep.base.s_base

    def find(name):
        fn = sweep.component(name)
        if name.startswith("Q"):
            return bisect_critical(lambda x: fn(x) + q_off, limits, resolution)
        return bisect_critical(fn, limits, resolution)

    comp = {n: sweep.component(n) for n in ("P1", "P2", "Q1", "Q2")}
    out = assemble_section(comp["P1"], comp["P2"], comp["Q1"], comp["Q2"], find, limits, constraint, alpha,
                           s_base=sweep.base.s_base)
    out.solves = sweep.solves
    return out


def tsc_fpad_bisect(tsc: TscSpec, constraint, resolution: float = BISECT_RESOLUTION):
    """Cluster FPAD from the oracle: each ZSO solved on its own, then intersected."""
    kw = dict(alpha=tsc.alpha_margin, limits=tsc.delta_limits, base=tsc.base, resolution=resolution)
    f1 = fpad_bisect(tsc.zso1, constraint, **kw)
    f2 = fpad_bisect(tsc.zso2, constraint, **kw)
    interval = f1.interval.intersect(f2.interval) if f1.interval is not None else None
    return interval, f1, f2


def rpa_bisect(models, mode, fpad, base: PerUnitBase | None = None, tol: float = DEFAULT_TOL,
               max_iter: int = 200):
    """Reference angle from bisection over delta_A with a full power flow per probe.

    ``models`` are the MSO/ZSO sections sharing the A-TS; ``mode`` a
    ``DispatchMode``.  Stops when the mode residual is within ``tol`` p.u.
    Returns ``(delta_a, clamped, solves)``.
    """
    if fpad is None:
        return 0.0, False, 0
    if mode.kind == "MCM":
        return fpad.hi, False, 0
    sweeps = [SectionSweep(m, base, tol) for m in models]
    s_base = sweeps[0].base.s_base
    if mode.kind == "PDM" and mode.scope == "ZSO":
        sweeps = sweeps[:1]

    def residual(x):
        p1 = sum(sw.powers(x)[0].real for sw in sweeps)
        p2 = sum(sw.powers(x)[1].real for sw in sweeps)
        if mode.kind == "PDM":
            return p2 - mode.k_target * p1
        return p2 - mode.p_ref / s_base

    lo, hi = fpad.lo, fpad.hi
    f_lo, f_hi = residual(lo), residual(hi)
    solves = lambda: sum(sw.solves for sw in sweeps)  # noqa: E731
    if f_lo * f_hi > 0:
        return (lo if abs(f_lo) < abs(f_hi) else hi), True, solves()
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        f_mid = residual(mid)
        if abs(f_mid) <= tol or hi - lo <= 1e-12:
            return mid, False, solves()
        if f_lo * f_mid < 0:
            hi, f_hi = mid, f_mid
        else:
            lo, f_lo = mid, f_mid
    return 0.5 * (lo + hi), False, solves()
