import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ftpss_dispatch.circuit import MsoSpec, ZsoSpec, default_tsc
from ftpss_dispatch.equivalent import CLOSED_FORM, build_power_functions
from ftpss_dispatch.fpad import (
    BRAKING,
    RELAXED,
    STRICT,
    TRACTION,
    AngleInterval,
    CirculationConstraint,
    Critical,
    FpadError,
    apc_interval,
    apply_margin,
    assemble_apc,
    assemble_rpc,
    cluster_fpad,
    constraint_for,
    critical_angles_apc,
    detect_state,
    intersect_all,
    mso_fpad,
    oriented_section,
    rpc_interval,
    tsc_fpad,
    zso_fpad,
)
from ftpss_dispatch.oracle import fpad_bisect, section_station_powers

from conftest import mso, train

LIMITS = (-20.0, 20.0)


def test_interval_operations():
    a = AngleInterval(-2, 4)
    assert a.width == 6.0
    assert 0 in a and 5 not in a
    assert a.intersect(AngleInterval(1, 9)) == AngleInterval(1, 4)
    assert a.intersect(AngleInterval(5, 9)) is None
    assert a.intersect(None) is None
    assert a.scaled(0.5) == AngleInterval(-1, 2)
    assert a.clip(7) == 4 and a.clip(-7) == -2
    assert a.grid(3) == [-2.0, 1.0, 4.0]
    assert AngleInterval(1, 1).grid(2) == [1.0, 1.0]
    assert isinstance(AngleInterval(np.float64(1), 2).lo, float)
    with pytest.raises(ValueError):
        AngleInterval(1, 0)


def test_intersect_all():
    assert intersect_all([AngleInterval(-3, 3), AngleInterval(-1, 5)]) == AngleInterval(-1, 3)
    assert intersect_all([AngleInterval(-3, 3), None]) is None
    assert intersect_all([]) is None


def test_constraint_validation_and_offset():
    assert CirculationConstraint(RELAXED, 0.2).q_offset == 0.2
    assert CirculationConstraint(STRICT, 0.2).q_offset == 0.0
    for bad in (dict(mode="loose"), dict(q_cir_max=-1.0), dict(system_state="coasting")):
        with pytest.raises(ValueError):
            CirculationConstraint(**bad)


def test_detect_state():
    assert detect_state([]) == TRACTION
    assert detect_state([train(5, 2.0), train(9, -2.0)]) == TRACTION  # tie
    assert detect_state([train(5, 1.0), train(9, -2.0)]) == BRAKING


def lin(slope, x0):
    return lambda x: slope * (x - x0)


def test_apc_traction_orders_bounds():
    # P1 falls through zero at 3, P2 rises through zero at -2
    iv = assemble_apc(lin(-0.01, 3.0), lin(0.01, -2.0), Critical(3.0, True), Critical(-2.0, True))
    assert iv == AngleInterval(-2.0, 3.0)


def test_apc_braking_orders_bounds():
    # same slopes as in traction, both powers negative between the zeros
    iv = assemble_apc(lin(-0.01, -1.0), lin(0.01, 4.0), Critical(-1.0, True), Critical(4.0, True))
    assert iv == AngleInterval(-1.0, 4.0)


def test_apc_mixed_signs_raise():
    with pytest.raises(FpadError):
        assemble_apc(lin(-0.01, 3.0), lin(-0.01, -2.0), Critical(3.0, True), Critical(-2.0, True))


def test_apc_out_of_order_raises():
    with pytest.raises(FpadError):
        assemble_apc(lambda x: 1.0, lambda x: 1.0, Critical(-3.0, True), Critical(2.0, True))


def test_rpc_two_zeros():
    # Q1 rises through zero at -8, Q2 falls through zero at 2
    iv = assemble_rpc(lin(0.01, -8.0), lin(-0.01, 2.0), Critical(-8.0, True), Critical(2.0, True), LIMITS)
    assert iv == AngleInterval(-8.0, 2.0)


def test_rpc_missing_zero_uses_limit():
    q2 = lambda x: 0.01 + 1e-4 * x * x  # noqa: E731
    iv = assemble_rpc(lin(0.01, -3.0), q2, Critical(-3.0, True), Critical(0.0, False), LIMITS)
    assert iv == AngleInterval(-3.0, 20.0)


def test_rpc_negative_everywhere_is_empty():
    q2 = lambda x: -0.01 - 1e-4 * x * x  # noqa: E731
    assert assemble_rpc(lin(0.01, -3.0), q2, Critical(-3.0, True), Critical(0.0, False), LIMITS) is None


@pytest.mark.parametrize(
    "iv, alpha, expected",
    [
        (AngleInterval(-2, 4), 1.0, AngleInterval(-2, 4)),
        (AngleInterval(-2, 4), 0.0, AngleInterval(0, 0)),
        (AngleInterval(-2, 4), 0.95, AngleInterval(-1.9, 3.8)),
        (AngleInterval(1, 4), 0.5, AngleInterval(1, 2)),
        (AngleInterval(1, 4), 0.2, None),
        (None, 0.5, None),
    ],
)
def test_margin(iv, alpha, expected):
    got = apply_margin(iv, alpha)
    if expected is None:
        assert got is None
    else:
        assert got.lo == pytest.approx(expected.lo) and got.hi == pytest.approx(expected.hi)


@pytest.mark.parametrize("mode", [STRICT, RELAXED])
@pytest.mark.parametrize("model", [MsoSpec(), ZsoSpec()])
def test_no_trains_collapse_to_zero(mode, model):
    c = CirculationConstraint(mode, 0.2 if mode == RELAXED else 0.0)
    dom = mso_fpad(oriented_section(model), c)
    assert dom.interval.lo == pytest.approx(0.0, abs=1e-9)
    assert dom.interval.hi == pytest.approx(0.0, abs=1e-9)


def test_empty_cluster_is_zero():
    dom = tsc_fpad(default_tsc(), CirculationConstraint())
    assert dom.interval.width == pytest.approx(0.0, abs=1e-9)


def test_single_train_critical_angles_bracket_zero():
    sec = oriented_section(mso(train(10, 4, 0.5)))
    c1, c2 = critical_angles_apc(sec)
    assert c1.exists and c2.exists
    assert c2.x < 0 < c1.x
    iv = apc_interval(sec)
    for x in iv.grid(9)[1:-1]:
        s1, s2 = section_station_powers(mso(train(10, 4, 0.5)), x)
        assert s1.real > 0 and s2.real > 0


def test_braking_train_apc_has_negative_powers_inside():
    m = mso(train(10, -4, 0.5))
    iv = apc_interval(oriented_section(m))
    assert iv.width > 0
    for x in iv.grid(9)[1:-1]:
        s1, s2 = section_station_powers(m, x)
        assert s1.real < 0 and s2.real < 0


def test_apc_accepts_a_bare_power_function():
    pf = build_power_functions(mso(train(10, 4, 0.5)), pantograph=CLOSED_FORM)
    assert apc_interval(pf).width > 0


def test_q2_without_zero_leaves_upper_limit():
    # trains bunched near the A-TS keep its reactive output positive
    m = mso(train(25, 4, 0.5, id="a"), train(35, 4, 0.5, id="b"))
    rpc = rpc_interval(oriented_section(m), CirculationConstraint())
    assert rpc.hi == 20.0


def test_relaxed_contains_strict():
    m = mso(train(10, 4, 1.0))
    sec = oriented_section(m)
    strict = mso_fpad(sec, CirculationConstraint(STRICT))
    relaxed = mso_fpad(sec, CirculationConstraint(RELAXED, 0.2))
    assert relaxed.unmargined.lo < strict.unmargined.lo or relaxed.unmargined.hi > strict.unmargined.hi
    assert relaxed.unmargined.lo <= strict.unmargined.lo and strict.unmargined.hi <= relaxed.unmargined.hi


def test_single_train_bounds_match_oracle_bisection():
    m = mso(train(10, 4, 0.5))
    got = mso_fpad(oriented_section(m), CirculationConstraint()).interval
    want = fpad_bisect(m, CirculationConstraint()).interval
    assert abs(got.lo - want.lo) < 0.05 and abs(got.hi - want.hi) < 0.05


def test_binding_diagnostics():
    dom = mso_fpad(oriented_section(mso(train(10, 4, 1.0))), CirculationConstraint())
    assert set(dom.critical) == {"P1", "P2", "Q1", "Q2"}
    assert dom.binding["lo"] and dom.binding["hi"]


def test_trains_in_one_zso_only():
    tsc = default_tsc().with_trains((train(10, 4, 0.5),), ())
    c = constraint_for(tsc, STRICT)
    dom = tsc_fpad(tsc, c)
    z1 = zso_fpad(tsc.zso1, c)
    z2 = zso_fpad(tsc.zso2, c)
    assert dom.interval == z1.interval.intersect(z2.interval)
    assert dom.zso1.interval == z1.interval


def test_orientation_of_second_zso():
    tsc = default_tsc()
    assert oriented_section(tsc.zso2).mirrored
    assert not oriented_section(tsc.zso1).mirrored


rows = st.lists(
    st.tuples(st.floats(0.5, 39.5), st.floats(-4.8, 4.8), st.floats(0.0, 0.5), st.sampled_from(["up", "down"])),
    min_size=1,
    max_size=4,
)


@settings(max_examples=40)
@given(rows, st.floats(0.0, 1.0))
def test_nesting(rows_, alpha):
    m = ZsoSpec(trains=tuple(train(l, p, q, tr, f"t{i}") for i, (l, p, q, tr) in enumerate(rows_)))
    sec = oriented_section(m)
    try:
        strict = mso_fpad(sec, CirculationConstraint(STRICT), alpha)
        relaxed = mso_fpad(sec, CirculationConstraint(RELAXED, 0.2), alpha)
    except FpadError:
        return
    for dom in (strict, relaxed):
        if dom.interval is None:
            continue
        u = dom.unmargined
        assert u.lo >= dom.apc.lo - 1e-12 and u.hi <= dom.apc.hi + 1e-12
        assert dom.rpc is None or (u.lo >= dom.rpc.lo and u.hi <= dom.rpc.hi)
        assert dom.interval.lo >= u.lo - 1e-12 and dom.interval.hi <= u.hi + 1e-12
        assert LIMITS[0] <= dom.interval.lo <= dom.interval.hi <= LIMITS[1]
    if strict.unmargined is not None:
        assert relaxed.unmargined is not None
        assert relaxed.unmargined.lo <= strict.unmargined.lo + 1e-7
        assert relaxed.unmargined.hi >= strict.unmargined.hi - 1e-7


def test_cluster_fpad_intersects_parts():
    tsc = default_tsc().with_trains((train(10, 4, 0.5),), (train(30, 3, 0.2),))
    secs = [oriented_section(tsc.zso1), oriented_section(tsc.zso2)]
    dom = cluster_fpad(secs, CirculationConstraint())
    assert dom.interval == dom.parts[0].interval.intersect(dom.parts[1].interval)
    assert not dom.empty
