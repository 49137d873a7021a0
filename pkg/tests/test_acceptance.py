"""Acceptance gate: one test per criterion, each at its stated tolerance.

Run ``pytest tests/test_acceptance.py -v``; the terminal summary ends with
one PASS/FAIL line per criterion plus the measured figures.
"""

import math

import numpy as np
import pytest

from ftpss_dispatch.bench import bench_topology
from ftpss_dispatch.circuit import A_TS, N_TS, ComplexPower, StationSpec, TrainLoad, ZsoSpec, default_tsc
from ftpss_dispatch.dispatch import RATIO_EPS, ZSO, kp, rpa_cpm, rpa_pdm
from ftpss_dispatch.fpad import (
    RELAXED,
    STRICT,
    CirculationConstraint,
    FpadError,
    cluster_fpad,
    component_residual,
    critical_angle,
    detect_state,
    mso_fpad,
    oriented_section,
)
from ftpss_dispatch.oracle import (
    bisect_critical,
    SectionSweep,
    build_network,
    conservation_check,
    network_for,
    section_station_powers,
    sections_of,
    solve_nr,
    station_kinds,
)
from ftpss_dispatch.scenario import load_scenario
from ftpss_dispatch.sim import run
from ftpss_dispatch.trdp import MINIMUM, ROOT, SolverConfig, solve_scalar
from ftpss_dispatch.verify import GRID, fpad_agreement, power_sweep, random_zso

from conftest import FIXTURES

S_BASE = 100.0
# Calibrated once on the seed-2024 sweep below: measured maximum 0.0815 MVA
# (median 0.006), bound set at just under twice that.
FIDELITY_TOL_MVA = 0.16
EPS_PU = 1e-6
Q_CIR_MAX = 0.2


def scenarios(seed, n):
    rng = np.random.default_rng(seed)
    return [random_zso(rng) for _ in range(n)]


def constraint(model, mode):
    return CirculationConstraint(mode, Q_CIR_MAX if mode == RELAXED else 0.0, detect_state(model.trains))


def circulates(a, b, eps):
    return (a > eps and b < -eps) or (a < -eps and b > eps)


# ---------------------------------------------------------------------------


@pytest.mark.criterion(1, "equivalent-model fidelity vs N-R oracle")
def test_c1_equivalent_model_fidelity(record_property):
    errors = []
    for case, model in enumerate(scenarios(2024, 200)):
        errors.extend(row[-1] for row in power_sweep(model, GRID, case=case))
    errors = np.array(errors)
    record_property("points", errors.size)
    record_property("max_mva", f"{errors.max():.4f}")
    record_property("median_mva", f"{np.median(errors):.4f}")
    record_property("bound_mva", FIDELITY_TOL_MVA)
    assert errors.size == 200 * 21 * 2
    assert errors.max() <= FIDELITY_TOL_MVA
    assert FIDELITY_TOL_MVA < 0.01 * S_BASE


@pytest.mark.criterion(2, "FPAD bounds vs bisection oracle within 0.05 deg")
def test_c2_fpad_agreement(record_property):
    worst = 0.0
    mismatched = 0
    for model in scenarios(7, 100):
        for mode, row in fpad_agreement(model, q_cir_max=Q_CIR_MAX).items():
            err = row["max_bound_error_deg"]
            if err is None:
                mismatched += 1
            else:
                worst = max(worst, err)
    record_property("max_bound_error_deg", f"{worst:.5f}")
    record_property("emptiness_mismatches", mismatched)
    assert mismatched == 0
    assert worst <= 0.05


@pytest.mark.criterion(3, "FPAD soundness, tightness and relaxed Q floor (500 cases)")
def test_c3_fpad_soundness_and_tightness(record_property):
    eps_mva = EPS_PU * S_BASE
    problems = []
    checked_sound = checked_tight = empty = 0
    for case, model in enumerate(scenarios(11, 500)):
        sec = oriented_section(model)
        for mode in (STRICT, RELAXED):
            try:
                dom = mso_fpad(sec, constraint(model, mode))
            except FpadError as exc:
                problems.append((case, mode, f"FpadError: {exc}"))
                continue
            if dom.interval is None:
                empty += 1
                continue
            q_floor = -Q_CIR_MAX if mode == RELAXED else 0.0
            for x in dom.interval.grid(11):
                s1, s2 = section_station_powers(model, x)
                checked_sound += 1
                if circulates(s1.real, s2.real, eps_mva):
                    problems.append((case, mode, f"APC inside at {x:.4f}"))
                if mode == STRICT and circulates(s1.imag, s2.imag, eps_mva):
                    problems.append((case, mode, f"RPC inside at {x:.4f}"))
                if min(s1.imag, s2.imag) < q_floor - eps_mva:
                    problems.append((case, mode, f"Q below {q_floor} MVar inside at {x:.4f}"))
            for side, step in (("lo", -0.1), ("hi", 0.1)):
                if "limit" in dom.binding.get(side, []):
                    continue
                x = getattr(dom.unmargined, side) + step
                if not -20.0 <= x <= 20.0:
                    continue
                s1, s2 = section_station_powers(model, x)
                checked_tight += 1
                violated = circulates(s1.real, s2.real, 0.0) or min(s1.imag, s2.imag) < q_floor
                if mode == STRICT:
                    violated = violated or circulates(s1.imag, s2.imag, 0.0)
                if not violated:
                    problems.append((case, mode, f"nothing violated 0.1 deg outside {side} bound"))
    record_property("interior_points", checked_sound)
    record_property("outside_points", checked_tight)
    record_property("empty_fpads", empty)
    record_property("problems", len(problems))
    assert not problems, problems[:10]


def ratios_on_grid(secs, interval, n=11):
    """Summed P2 over summed P1 on an n-point grid.

    A bound sitting on P1 = 0 is the ratio's pole; it takes the one-sided
    limit from inside the interval.
    """
    step = 1e-3 * interval.width
    out = []
    grid = interval.grid(n)
    for i, x in enumerate(grid):
        p1 = sum(s.powers_deg(x)[0].real for s in secs)
        p2 = sum(s.powers_deg(x)[1].real for s in secs)
        if abs(p1) / S_BASE >= RATIO_EPS:
            out.append(p2 / p1)
            continue
        inside = x + (step if i < len(grid) - 1 else -step)
        p1_inside = sum(s.powers_deg(inside)[0].real for s in secs)
        out.append(math.copysign(math.inf, p2 * p1_inside))
    return out


def strictly_increasing(values):
    return all(b > a for a, b in zip(values, values[1:]))


@pytest.mark.criterion(4, "dP2/dd > 0, dP1/dd < 0 and K_P strictly increasing on FPAD grids (500 cases)")
def test_c4_monotonicity(record_property):
    failures = {"no FPAD": 0, "dP2": 0, "dP1": 0, "K_P traction": 0, "K_P braking": 0, "K_P TSC traction": 0, "K_P TSC braking": 0}
    models = scenarios(13, 500)
    checked = 0
    for model in models:
        sec = oriented_section(model)
        try:
            dom = mso_fpad(sec, constraint(model, STRICT))
        except FpadError:
            failures["no FPAD"] += 1
            continue
        if dom.interval is None or dom.interval.width < 1e-9:
            continue
        checked += 1
        grid = dom.interval.grid(11)
        d1 = []
        d2 = []
        for x in grid:
            (_, ds1), (_, ds2) = sec.at(x).derivatives(math.radians(x), 1)
            d1.append(ds1.real)
            d2.append(ds2.real)
        failures["dP2"] += not all(v > 0 for v in d2)
        failures["dP1"] += not all(v < 0 for v in d1)
        k = ratios_on_grid([sec], dom.interval)
        failures["K_P " + detect_state(model.trains)] += not strictly_increasing(k)

    # cluster scope: pair consecutive sections into one TSC
    tsc_checked = 0
    for a, b in zip(models[::2], models[1::2]):
        tsc = default_tsc().with_trains(a.trains, b.trains)
        secs = [oriented_section(tsc.zso1), oriented_section(tsc.zso2)]
        trains = a.trains + b.trains
        c = CirculationConstraint(STRICT, 0.0, detect_state(trains))
        try:
            dom = cluster_fpad(secs, c)
        except FpadError:
            failures["no FPAD"] += 1
            continue
        if dom.interval is None or dom.interval.width < 1e-9:
            continue
        tsc_checked += 1
        failures["K_P TSC " + c.system_state] += not strictly_increasing(ratios_on_grid(secs, dom.interval))

    record_property("zso_grids", checked)
    record_property("tsc_grids", tsc_checked)
    for name, count in failures.items():
        record_property(f"fail[{name}]", count)
    assert sum(failures.values()) == 0, failures


@pytest.mark.criterion(5, "PDM/CPM fixed points and the 9 MW CPM fixture")
def test_c5_dispatch_fixed_points(record_property):
    problems = []
    solved = 0
    for case, model in enumerate(scenarios(17, 100)):
        sec = oriented_section(model)
        try:
            dom = mso_fpad(sec, constraint(model, STRICT))
        except FpadError:
            continue
        iv = dom.interval
        if iv is None or iv.width < 1e-3:
            continue
        inner = iv.lo + 0.37 * iv.width
        try:
            k_target = kp([sec], inner, ZSO)
        except UndefinedRatio:
            continue
        p_ref = sec.powers_deg(iv.lo + 0.63 * iv.width)[1].real
        for decision, check in (
            (rpa_pdm(k_target, iv, [sec], ZSO), lambda x: abs(kp([sec], x, ZSO) - k_target) <= 1e-4),
            (rpa_cpm(p_ref, iv, [sec]), lambda x: abs(sec.powers_deg(x)[1].real - p_ref) / S_BASE <= 1e-6),
        ):
            solved += 1
            x = decision.delta_a
            if decision.clamped or not check(x):
                problems.append((case, decision.mode.kind, x, decision.clamped))
            oracle = section_station_powers(model, x)
            if max(abs(a - b) for a, b in zip(sec.powers_deg(x), oracle)) > FIDELITY_TOL_MVA:
                problems.append((case, decision.mode.kind, "oracle disagrees", x))
    demo = run(load_scenario(FIXTURES / "tsc_demo.json"))
    cpm_steps = [r for r in demo.records if r.mode.startswith("CPM")]
    worst = max(abs(r.p_ats_mw - 9.0) / S_BASE for r in cpm_steps)
    if any(r.clamped or r.held for r in cpm_steps) or worst > 1e-6:
        problems.append(("tsc_demo", "CPM", worst))
    sc = load_scenario(FIXTURES / "tsc_demo.json")
    for r in cpm_steps:
        topo = sc.model_at(r.time_s)
        p_ats = sum(section_station_powers(z, r.delta_a_deg)[1].real for z in topo.sections())
        if abs(p_ats - 9.0) > FIDELITY_TOL_MVA:
            problems.append(("tsc_demo oracle", r.time_s, p_ats))
    record_property("solves", solved)
    record_property("demo_cpm_steps", len(cpm_steps))
    record_property("demo_worst_pu", f"{worst:.2e}")
    assert solved > 100
    assert not problems, problems[:10]


@pytest.mark.criterion(6, "MCM dominance over 21 feasible angles per step")
def test_c6_mcm_dominance(record_property):
    demo = run(load_scenario(FIXTURES / "tsc_demo.json"))
    sc = load_scenario(FIXTURES / "tsc_demo.json")
    steps = 0
    problems = []
    for r in demo.records:
        if r.mode != "MCM" or r.empty_fpad:
            continue
        steps += 1
        secs = [oriented_section(m) for m in sc.model_at(r.time_s).sections()]
        lo, hi = r.fpad_lo_deg, r.fpad_hi_deg
        for x in np.linspace(lo, hi, 21):
            p = sum(s.powers_deg(float(x))[1].real for s in secs)
            if p > r.p_ats_mw + 1e-9:
                problems.append((r.time_s, float(x), p, r.p_ats_mw))
    record_property("mcm_steps", steps)
    assert steps > 0
    assert not problems, problems[:10]


@pytest.mark.criterion(7, "TR-DP inner zero / minimum vs 0.001 deg grid within 0.01 deg, <= 30 iterations")
def test_c7_solver_behaviour(record_property):
    cfg = SolverConfig()
    grid = np.arange(-20.0, 20.0 + 5e-4, 1e-3)
    cases = (("single_train.json", "Q1", ROOT), ("two_train.json", "Q2", MINIMUM))
    for name, component, kind in cases:
        model = load_scenario(FIXTURES / name).model_at().sections()[0]
        sec = oriented_section(model)
        f = component_residual(sec.at(0.0), component)
        res = solve_scalar(f, cfg, 0.0)
        values = np.array([f(x)[0] for x in grid])
        if kind == ROOT:
            crossings = grid[:-1][np.sign(values[:-1]) != np.sign(values[1:])]
            assert len(crossings) == 2, "fixture should show two zeros"
            target = crossings[np.argmin(np.abs(crossings))]
        else:
            assert np.all(values > 0), "fixture should show no zero"
            target = grid[np.argmin(np.abs(values))]
            assert -20.0 < target < 20.0
        refined = critical_angle(sec, component, cfg)
        oracle = bisect_critical(SectionSweep(model).component(component), (-20.0, 20.0), resolution=1e-4)
        record_property(f"{component}_x", f"{res.x:.4f}")
        record_property(f"{component}_grid", f"{target:.3f}")
        record_property(f"{component}_iterations", res.iterations)
        record_property(f"{component}_refined_iterations", refined.iterations)
        assert res.kind == kind
        assert abs(res.x - target) <= 0.01
        assert res.iterations <= 30
        # the re-anchored production solve against the full power flow
        assert refined.exists == (kind == ROOT) == oracle.exists
        if kind == ROOT:
            assert abs(refined.x - oracle.x) <= 0.01
        else:
            # |Q2| is flat at its minimum, so compare depths rather than locations
            fn = SectionSweep(model).component(component)
            assert abs(fn(refined.x)) - abs(fn(oracle.x)) <= FIDELITY_TOL_MVA / S_BASE
        assert refined.iterations <= 30


def _two_cluster_network(delta1):
    t1 = default_tsc().with_trains(
        (TrainLoad("a", 10, ComplexPower(4, 0.5)),), (TrainLoad("b", 30, ComplexPower(-3, 0.2), track="down"),)
    )
    n2 = t1.zso2.right
    a2 = StationSpec(A_TS, n2.u_n, "A-TS2")
    n3 = StationSpec(N_TS, n2.u_n, "N-TS3")
    z3 = ZsoSpec(left=n2, right=a2, trains=(TrainLoad("c", 15, ComplexPower(4, 0.4)),))
    z4 = ZsoSpec(left=a2, right=n3, trains=(TrainLoad("d", 5, ComplexPower(2, 0.1)), TrainLoad("e", 22, ComplexPower(3, 0.3), track="down")))
    sections = sections_of(t1, "c1.") + sections_of(z3, "c2.zso1.") + sections_of(z4, "c2.zso2.")
    stations = {**station_kinds(t1), **station_kinds(z3), **station_kinds(z4)}
    return build_network(sections, stations, {"A-TS": delta1, "A-TS2": 3.0})


@pytest.mark.criterion(8, "TSC decoupling in a two-cluster network < 1e-9 p.u.")
def test_c8_cluster_decoupling(record_property):
    def cluster2(d):
        sol = solve_nr(_two_cluster_network(d))
        return np.array([v for k, v in sorted(sol.section_powers.items()) if k[0].startswith("c2.")]) / S_BASE

    ref = cluster2(0.0)
    assert ref.size == 8  # four tracks, two ends each
    worst = max(np.abs(cluster2(float(d)) - ref).max() for d in np.linspace(-20.0, 20.0, 21))
    record_property("max_change_pu", f"{worst:.1e}")
    assert worst < 1e-9


@pytest.mark.criterion(9, "speedup: FPAD >= 2x, RPA >= 5x on 1-2 train scenarios")
def test_c9_performance(record_property):
    speedups = {}
    for name in ("single_train.json", "two_train.json"):
        sc = load_scenario(FIXTURES / name)
        report = bench_topology(sc.model_at(), repetitions=15, constraint_mode=sc.config.constraint)
        tag = name.split(".")[0]
        speedups[f"{tag}.fpad"] = report["fpad"]["speedup"]
        for mode, row in report["rpa"].items():
            speedups[f"{tag}.rpa.{mode}"] = row["speedup"]
            assert abs(row["delta_a"] - row["baseline_delta_a"]) < 1e-3
    for key, value in speedups.items():
        record_property(key, f"{value:.1f}x")
    assert all(v >= 2.0 for k, v in speedups.items() if k.endswith("fpad"))
    assert all(v >= 5.0 for k, v in speedups.items() if ".rpa." in k)


@pytest.mark.criterion(10, "oracle conservation to 1e-8 p.u. with non-negative losses")
def test_c10_conservation(record_property):
    worst = 0.0
    solved = 0
    models = scenarios(19, 100)
    tsc = default_tsc().with_trains(models[0].trains, models[1].trains)
    for model in models + [tsc]:
        for d in (-20.0, -7.5, 0.0, 6.0, 20.0):
            report = conservation_check(solve_nr(network_for(model, d)))
            solved += 1
            worst = max(worst, abs(report["residual_p_pu"]), abs(report["residual_q_pu"]))
            assert report["losses_nonnegative"]
    record_property("solutions", solved)
    record_property("max_residual_pu", f"{worst:.1e}")
    assert worst <= 1e-8
