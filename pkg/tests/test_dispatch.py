import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ftpss_dispatch.circuit import MsoSpec, ZsoSpec, default_tsc
from ftpss_dispatch.dispatch import (
    CPM,
    MCM,
    PDM,
    TSC,
    ZSO,
    DispatchMode,
    Fpdd,
    UndefinedRatio,
    fpdd,
    kp,
    rpa,
    rpa_cpm,
    rpa_mcm,
    rpa_pdm,
)
from ftpss_dispatch.fpad import (
    RELAXED,
    STRICT,
    AngleInterval,
    CirculationConstraint,
    FpadError,
    cluster_fpad,
    critical_angles_apc,
    detect_state,
    mso_fpad,
    oriented_section,
)

from ftpss_dispatch.verify import random_zso

from conftest import mso, train


def section_and_fpad(model, mode=STRICT):
    sec = oriented_section(model)
    c = CirculationConstraint(mode, 0.2 if mode == RELAXED else 0.0, detect_state(model.trains))
    return sec, mso_fpad(sec, c)


def p2_total(sections, x):
    return sum(s.powers_deg(x)[1].real for s in sections)


@pytest.mark.parametrize(
    "mode",
    [DispatchMode.pdm(1.5), DispatchMode.pdm(0.8, ZSO), DispatchMode.cpm(9.0), DispatchMode.mcm()],
)
def test_mode_round_trip(mode):
    assert DispatchMode.from_dict(mode.to_dict()) == mode


@pytest.mark.parametrize(
    "kw", [dict(kind="XYZ"), dict(kind=PDM), dict(kind=CPM), dict(kind=PDM, k_target=math.nan), dict(kind=MCM, scope="X")]
)
def test_mode_validation(kw):
    with pytest.raises(ValueError):
        DispatchMode(**kw)


def test_mode_names_are_case_insensitive_in_documents():
    assert DispatchMode.from_dict({"kind": "pdm", "k_target": 1, "scope": "zso"}) == DispatchMode.pdm(1, ZSO)


def test_fpdd_validation():
    with pytest.raises(ValueError):
        Fpdd(2.0, 1.0)
    assert 1.5 in Fpdd(1.0, 2.0)


def test_midpoint_train_splits_evenly_at_zero():
    sec = oriented_section(mso(train(20, 4, 0.5)))
    assert kp([sec], 0.0, ZSO) == pytest.approx(1.0, abs=1e-9)


def test_coefficient_vanishes_at_p2_zero():
    sec = oriented_section(mso(train(10, 4, 0.5)))
    _, c2 = critical_angles_apc(sec)
    assert kp([sec], c2.x, ZSO) == pytest.approx(0.0, abs=1e-7)


def test_undefined_ratio_without_load():
    with pytest.raises(UndefinedRatio):
        kp([oriented_section(MsoSpec())], 0.0)


def test_fpdd_singleton():
    sec = oriented_section(mso(train(10, 4, 0.5)))
    dom = fpdd(AngleInterval(1.0, 1.0), [sec], ZSO)
    assert dom.k_lo == dom.k_hi == pytest.approx(kp([sec], 1.0, ZSO))


def test_single_train_fpdd_spans_one():
    sec, dom = section_and_fpad(mso(train(10, 4, 1.0)))
    k = fpdd(dom.interval, [sec], ZSO)
    assert k.k_lo < 1.0 < k.k_hi
    assert k.increasing


def test_relaxed_fpdd_contains_strict():
    m = mso(train(10, 4, 1.0))
    sec, strict = section_and_fpad(m, STRICT)
    _, relaxed = section_and_fpad(m, RELAXED)
    a = fpdd(strict.interval, [sec], ZSO)
    b = fpdd(relaxed.interval, [sec], ZSO)
    assert b.k_lo <= a.k_lo and a.k_hi <= b.k_hi
    assert (b.k_lo, b.k_hi) != (a.k_lo, a.k_hi)


def test_pole_on_fpad_bound_is_not_degenerate():
    # this draw has its whole FPAD below 0 deg with the N-TS zero on the upper bound
    rng = np.random.default_rng(17)
    model = [random_zso(rng) for _ in range(19)][-1]
    sec, dom = section_and_fpad(model)
    iv = dom.interval
    assert iv.hi < 0
    assert abs(sec.powers_deg(iv.hi)[0].real) < 1e-6
    k = fpdd(iv, [sec], ZSO)
    assert k.open_hi and k.k_hi == math.inf
    target = kp([sec], iv.lo + 0.37 * iv.width, ZSO)
    d = rpa_pdm(target, iv, [sec], ZSO)
    assert not d.degenerate and not d.clamped
    assert kp([sec], d.delta_a, ZSO) == pytest.approx(target, abs=1e-4)


@pytest.mark.parametrize("p_braking, spans_pole", [(-2.0, False), (-3.0, True), (-5.0, True)])
def test_cluster_fpdd_with_pole_inside(p_braking, spans_pole):
    tsc = default_tsc().with_trains((train(20, 4, 0.5),), (train(20, p_braking, 0.2),))
    secs = [oriented_section(tsc.zso1), oriented_section(tsc.zso2)]
    c = CirculationConstraint(STRICT, 0.0, detect_state(tsc.zso1.trains + tsc.zso2.trains))
    iv = cluster_fpad(secs, c).interval
    k = fpdd(iv, secs, TSC)
    assert (k.open_lo and k.open_hi) == spans_pole
    if spans_pole:
        # a ratio outside the bound values is still reached
        d = rpa_pdm(-50.0, iv, secs, TSC)
        assert not d.clamped
        assert kp(secs, d.delta_a, TSC) == pytest.approx(-50.0, abs=1e-4)


def test_pdm_at_zero_coefficient_returns_zero():
    sec, dom = section_and_fpad(mso(train(10, 4, 0.5)))
    k0 = kp([sec], 0.0, ZSO)
    d = rpa_pdm(k0, dom.interval, [sec], ZSO)
    assert d.delta_a == pytest.approx(0.0, abs=1e-6)
    assert not d.clamped


def test_pdm_fixed_point():
    sec, dom = section_and_fpad(mso(train(10, 4, 1.0)))
    d = rpa_pdm(1.0, dom.interval, [sec], ZSO)
    assert not d.clamped
    assert d.delta_a in dom.interval
    assert kp([sec], d.delta_a, ZSO) == pytest.approx(1.0, abs=1e-4)


def test_pdm_above_range_clamps_high():
    sec, dom = section_and_fpad(mso(train(10, 4, 0.5)))
    d = rpa_pdm(1e3, dom.interval, [sec], ZSO)
    assert d.clamped
    assert d.delta_a == dom.interval.hi


def test_pdm_in_braking_follows_falling_coefficient():
    sec, dom = section_and_fpad(mso(train(10, -4, 0.5)))
    k = fpdd(dom.interval, [sec], ZSO)
    assert not k.increasing
    target = 0.5 * (k.k_lo + k.k_hi)
    d = rpa_pdm(target, dom.interval, [sec], ZSO)
    assert not d.clamped
    assert kp([sec], d.delta_a, ZSO) == pytest.approx(target, abs=1e-4)
    above = rpa_pdm(k.k_hi + 1.0, dom.interval, [sec], ZSO)
    assert above.clamped and above.delta_a == dom.interval.lo


def test_pdm_degenerate_without_load():
    sec = oriented_section(MsoSpec())
    d = rpa_pdm(1.0, AngleInterval(0.0, 0.0), [sec], ZSO)
    assert d.degenerate
    assert d.delta_a == 0.0


def test_cpm_at_zero_output_returns_zero():
    sec, dom = section_and_fpad(mso(train(10, 4, 0.5)))
    d = rpa_cpm(p2_total([sec], 0.0), dom.interval, [sec])
    assert d.delta_a == pytest.approx(0.0, abs=1e-6)


def test_cpm_unreachable_reference_clamps():
    sec, dom = section_and_fpad(mso(train(10, 4, 0.5)))
    d = rpa_cpm(50.0, dom.interval, [sec])
    assert d.clamped and d.delta_a == dom.interval.hi
    assert d.residual == pytest.approx((p2_total([sec], dom.interval.hi) - 50.0) / 100.0, abs=1e-12)
    low = rpa_cpm(-50.0, dom.interval, [sec])
    assert low.clamped and low.delta_a == dom.interval.lo


def test_cpm_fixed_point_on_cluster():
    tsc = default_tsc().with_trains((train(10, 4, 0.5, id="a"),), (train(25, 3, 0.3, id="b"),))
    secs = [oriented_section(tsc.zso1), oriented_section(tsc.zso2)]
    dom = cluster_fpad(secs, CirculationConstraint())
    target = p2_total(secs, dom.interval.lo + 0.3 * dom.interval.width)
    d = rpa_cpm(target, dom.interval, secs)
    assert not d.clamped
    assert abs(p2_total(secs, d.delta_a) - target) / 100.0 <= 1e-6


def test_mcm_takes_upper_bound():
    d = rpa_mcm(AngleInterval(-3.0, 7.0))
    assert d.delta_a == 7.0
    assert not d.clamped


@pytest.mark.parametrize("mode", [DispatchMode.pdm(1.0), DispatchMode.cpm(5.0), DispatchMode.mcm()])
def test_empty_fpad_holds_zero(mode):
    d = rpa(mode, None, [])
    assert d.empty_fpad
    assert d.delta_a == 0.0


def test_decision_is_json_ready():
    import json

    sec, dom = section_and_fpad(mso(train(10, 4, 0.5)))
    d = rpa(DispatchMode.pdm(1.0, ZSO), dom.interval, [sec])
    doc = json.loads(json.dumps(d.to_dict()))
    assert doc["mode"]["kind"] == PDM


rows = st.lists(
    st.tuples(st.floats(0.5, 39.5), st.floats(-4.8, 4.8), st.floats(0.0, 0.5), st.sampled_from(["up", "down"])),
    min_size=1,
    max_size=4,
)


@settings(max_examples=40)
@given(rows, st.floats(0.0, 1.0))
def test_pdm_residual_is_monotone_so_the_answer_is_unique(rows_, frac):
    m = ZsoSpec(trains=tuple(train(l, p, q, tr, f"t{i}") for i, (l, p, q, tr) in enumerate(rows_)))
    try:
        sec, dom = section_and_fpad(m)
    except FpadError:
        return
    iv = dom.interval
    if iv is None or iv.width < 1e-6:
        return
    try:
        k = fpdd(iv, [sec], ZSO)
    except UndefinedRatio:
        return
    if not (math.isfinite(k.k_lo) and math.isfinite(k.k_hi)) or k.k_lo < 0:
        return
    target = k.k_lo + frac * (k.k_hi - k.k_lo)
    grid = iv.grid(15)
    res = [(sec.powers_deg(x)[1].real - target * sec.powers_deg(x)[0].real) for x in grid]
    changes = sum(1 for a, b in zip(res, res[1:]) if a * b < 0)
    assert changes <= 1
    assert np.all(np.diff(res) > -1e-9)
    d = rpa_pdm(target, iv, [sec], ZSO)
    assert d.delta_a in iv
    if not d.clamped:
        assert kp([sec], d.delta_a, ZSO) == pytest.approx(target, abs=1e-4)
