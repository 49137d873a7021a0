"""Equivalent model against the full-network power flow.

``random_zso`` draws the randomized sections used by the sweeps; the
sweep functions return plain rows so the CLI and the tests share them.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .circuit import TRACKS, ComplexPower, TrainLoad, ZsoSpec
from .equivalent import COUPLED
from .fpad import RELAXED, STRICT, CirculationConstraint, detect_state, mso_fpad, oriented_section
from .oracle import fpad_bisect, section_station_powers

GRID = tuple(float(x) for x in np.linspace(-20.0, 20.0, 21))
SWEEP_COLUMNS = ("case", "delta_a_deg", "station", "p_model", "q_model", "p_oracle", "q_oracle", "abs_err_mva")


def random_trains(rng: np.random.Generator, length: float = 40.0, max_trains: int = 4, p_max: float = 4.8,
                  q_max: float = 0.5) -> tuple:
    """1..max_trains trains, uniform positions and tracks, P in [-p_max, p_max], Q in [0, q_max]."""
    n = int(rng.integers(1, max_trains + 1))
    return tuple(
        TrainLoad(
            f"t{i}",
            float(rng.uniform(0.0, length)),
            ComplexPower(float(rng.uniform(-p_max, p_max)), float(rng.uniform(0.0, q_max))),
            track=str(rng.choice(TRACKS)),
        )
        for i in range(n)
    )


def random_zso(rng: np.random.Generator, **kw) -> ZsoSpec:
    return ZsoSpec(trains=random_trains(rng, **kw))


def power_sweep(model, grid=GRID, pantograph: str = COUPLED, case: int = 0) -> list:
    """Rows comparing the power function anchored at 0 deg with the oracle on ``grid``."""
    pf = oriented_section(model, pantograph).at(0.0)
    rows = []
    for d in grid:
        model_s = pf.powers_deg(d)
        oracle_s = section_station_powers(model, d)
        for k, name in enumerate(("N-TS", "A-TS")):
            a, o = complex(model_s[k]), complex(oracle_s[k])
            rows.append((case, d, name, a.real, a.imag, o.real, o.imag, abs(a - o)))
    return rows


def fpad_agreement(model, q_cir_max: float = 0.2, alpha: float = 0.95, limits=(-20.0, 20.0)) -> dict:
    """Strict and relaxed FPAD bounds from both methods for one section."""
    out = {}
    state = detect_state(model.trains)
    for mode in (STRICT, RELAXED):
        c = CirculationConstraint(mode, q_cir_max if mode == RELAXED else 0.0, state)
        prop = mso_fpad(oriented_section(model), c, alpha, limits).interval
        orac = fpad_bisect(model, c, alpha, limits).interval
        if prop is None or orac is None:
            # None marks a case where only one method found an empty FPAD
            err = 0.0 if prop is None and orac is None else None
        else:
            err = max(abs(prop.lo - orac.lo), abs(prop.hi - orac.hi))
        out[mode] = {
            "proposed": prop.to_list() if prop else None,
            "oracle": orac.to_list() if orac else None,
            "max_bound_error_deg": err,
        }
    return out


def run_verify(models, out_dir, with_fpad: bool = True) -> dict:
    """Sweep every model, write ``discrepancy.csv`` and ``verify.json``; return the summary."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    fpad_rows = []
    for case, model in enumerate(models):
        rows.extend(power_sweep(model, case=case))
        if with_fpad:
            fpad_rows.append({"case": case, **fpad_agreement(model)})
    with (out / "discrepancy.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SWEEP_COLUMNS)
        for r in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in r])
    errs = np.array([r[-1] for r in rows]) if rows else np.zeros(1)
    summary = {
        "cases": len(models),
        "points": len(rows),
        "max_abs_err_mva": float(errs.max()),
        "median_abs_err_mva": float(np.median(errs)),
        "fpad": fpad_rows,
    }
    if fpad_rows:
        errors = [r[m]["max_bound_error_deg"] for r in fpad_rows for m in (STRICT, RELAXED)]
        summary["fpad_max_bound_error_deg"] = max((e for e in errors if e is not None), default=0.0)
        summary["fpad_emptiness_mismatches"] = sum(e is None for e in errors)
    (out / "verify.json").write_text(json.dumps(summary, indent=2) + "\n")
    return summary
