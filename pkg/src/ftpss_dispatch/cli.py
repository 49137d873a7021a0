"""Command-line entry point.

Exit codes: 0 success, 1 usage or input error, 2 domain error (empty
FPAD, divergence, infeasible operating point).  Errors are also written to
standard error as one JSON object.  ``FTPSS_LOG_LEVEL`` sets log verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .bench import bench_topology
from .circuit import TopologyError
from .dispatch import CPM, MCM, PDM, TSC, ZSO, DispatchMode, UndefinedRatio, fpdd, kp, rpa
from .equivalent import CLOSED_FORM, COUPLED, DivergenceError, InfeasibleOperatingPoint
from .fpad import RELAXED, STRICT, CirculationConstraint, FpadError, cluster_fpad, detect_state, oriented_section
from .oracle import PowerFlowDivergence
from .scenario import Scenario, ScenarioError, load_scenario
from .sim import export, run
from .trdp import NonConvergence
from .verify import random_zso, run_verify

EXIT_OK, EXIT_USAGE, EXIT_DOMAIN = 0, 1, 2
DOMAIN_ERRORS = (
    PowerFlowDivergence,
    DivergenceError,
    InfeasibleOperatingPoint,
    FpadError,
    NonConvergence,
    UndefinedRatio,
)


class UsageError(Exception):
    pass


class DomainError(Exception):
    def __init__(self, kind, message, payload=None):
        super().__init__(message)
        self.kind = kind
        self.payload = payload


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message, True)


def _emit_error(kind: str, message: str, **extra):
    sys.stderr.write(json.dumps({"error": kind, "message": message, **extra}) + "\n")


def _write_json(doc, out):
    text = json.dumps(doc, indent=2, default=_json_default) + "\n"
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


# ---------------------------------------------------------------------------
# shared plumbing
# ---------------------------------------------------------------------------


def _scenario(args) -> Scenario:
    path = Path(args.scenario)
    if not path.is_file():
        raise UsageError(f"scenario file not found: {path}")
    sc = load_scenario(path)
    topo = sc.topology
    if args.alpha is not None:
        if not 0.0 <= args.alpha <= 1.0:
            raise UsageError("--alpha must lie in [0, 1]")
        topo = replace(topo, alpha=args.alpha)
    if args.q_cir_max is not None:
        if args.q_cir_max < 0:
            raise UsageError("--q-cir-max must be >= 0")
        topo = replace(topo, q_cir_max=args.q_cir_max)
    config = sc.config
    if args.constraint is not None:
        config = replace(config, constraint=args.constraint)
    return replace(sc, topology=topo, config=config)


def _placed(sc: Scenario, args):
    return sc.model_at(args.time)


def _sections(topo, args):
    return [oriented_section(m, args.pantograph) for m in topo.sections()]


def _constraint(sc: Scenario, topo) -> CirculationConstraint:
    mode = sc.config.constraint
    return CirculationConstraint(mode, topo.q_cir_max if mode == RELAXED else 0.0, detect_state(topo.trains()))


def _fpad(sc, topo, sections):
    c = _constraint(sc, topo)
    return c, cluster_fpad(sections, c, topo.alpha, topo.delta_limits, None, topo.base.s_base)


def _interval(iv):
    return iv.to_list() if iv is not None else None


def _fpad_doc(sc, topo, c, dom):
    parts = {}
    for name, part in zip(topo.section_names, dom.parts):
        parts[name] = {
            "interval": _interval(part.interval),
            "unmargined": _interval(part.unmargined),
            "apc": _interval(part.apc),
            "rpc": _interval(part.rpc),
            "critical": {k: {"x": v.x, "exists": v.exists, "iterations": v.iterations} for k, v in part.critical.items()},
            "binding": part.binding,
            "reason": part.reason,
        }
    return {
        "scenario": sc.name,
        "constraint": {"mode": c.mode, "q_cir_max": c.q_cir_max, "system_state": c.system_state},
        "alpha": topo.alpha,
        "interval": _interval(dom.interval),
        "sections": parts,
    }


def _powerfunc_dump(topo, sections):
    return {name: sec.at(0.0).to_dict() for name, sec in zip(topo.section_names, sections)}


def _require_fpad(dom, doc):
    if dom.interval is None:
        raise DomainError("empty-fpad", "no feasible phase angle under the circulation constraint", doc)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_fpad(args):
    sc = _scenario(args)
    topo = _placed(sc, args)
    sections = _sections(topo, args)
    c, dom = _fpad(sc, topo, sections)
    doc = _fpad_doc(sc, topo, c, dom)
    if args.dump_powerfunc:
        Path(args.dump_powerfunc).write_text(json.dumps(_powerfunc_dump(topo, sections), indent=2) + "\n")
    _write_json(doc, args.out)
    _require_fpad(dom, doc)


def cmd_fpdd(args):
    sc = _scenario(args)
    topo = _placed(sc, args)
    sections = _sections(topo, args)
    c, dom = _fpad(sc, topo, sections)
    doc = {"scenario": sc.name, "fpad": _interval(dom.interval), "scope": args.scope, "fpdd": None}
    _require_fpad(dom, doc)
    doc["fpdd"] = fpdd(dom.interval, sections, args.scope, topo.base.s_base).to_dict()
    _write_json(doc, args.out)


def cmd_rpa(args):
    sc = _scenario(args)
    if args.mode == PDM:
        if args.k is None:
            raise UsageError("--k is required with --mode PDM")
        mode = DispatchMode.pdm(args.k, args.scope)
    elif args.mode == CPM:
        if args.p_ref is None:
            raise UsageError("--p-ref is required with --mode CPM")
        mode = DispatchMode.cpm(args.p_ref)
    else:
        mode = DispatchMode.mcm()
    topo = _placed(sc, args)
    sections = _sections(topo, args)
    c, dom = _fpad(sc, topo, sections)
    decision = rpa(mode, dom.interval, sections, None, topo.delta_limits, topo.base.s_base)
    doc = {"scenario": sc.name, "fpad": _interval(dom.interval), "decision": decision.to_dict()}
    p_ats = sum(float(s.powers_deg(decision.delta_a)[1].real) for s in sections)
    doc["achieved"] = {"p_ats_mw": p_ats}
    try:
        doc["achieved"]["k"] = kp(sections, decision.delta_a, mode.scope, topo.base.s_base)
    except UndefinedRatio:
        doc["achieved"]["k"] = None
    _write_json(doc, args.out)
    _require_fpad(dom, doc)


def cmd_simulate(args):
    sc = _scenario(args)
    if not args.out:
        raise UsageError("simulate needs --out DIR")
    result = run(sc)
    dump = None
    if args.dump_powerfunc:
        topo = sc.model_at(None)
        dump = _powerfunc_dump(topo, _sections(topo, args))
    paths = export(result, args.out, dump)
    _write_json({k: str(v) for k, v in paths.items()}, None)


def cmd_verify(args):
    if not args.out:
        raise UsageError("verify needs --out DIR")
    models = []
    if args.scenario:
        sc = _scenario(args)
        models.extend(_placed(sc, args).sections())
    if args.random:
        rng = np.random.default_rng(args.seed)
        models.extend(random_zso(rng) for _ in range(args.random))
    if not models:
        raise UsageError("verify needs --scenario and/or --random N")
    summary = run_verify(models, args.out, with_fpad=not args.no_fpad)
    _write_json({k: v for k, v in summary.items() if k != "fpad"}, None)


def cmd_bench(args):
    sc = _scenario(args)
    if args.repetitions < 1:
        raise UsageError("--repetitions must be >= 1")
    topo = _placed(sc, args)
    report = bench_topology(topo, args.repetitions, sc.config.constraint)
    report["scenario"] = sc.name
    _write_json(report, args.out)


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ftpss", description="Phase-angle control of traction station clusters.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, scenario_required=True):
        p.add_argument("--scenario", required=scenario_required, help="scenario JSON file")
        p.add_argument("--out", help="output file (JSON commands) or directory (simulate, verify)")
        p.add_argument("--time", type=float, default=None, help="take trains from the schedule at this time (s)")
        p.add_argument("--constraint", choices=(STRICT, RELAXED), default=None)
        p.add_argument("--q-cir-max", type=float, default=None, help="reactive circulation allowance (MVar)")
        p.add_argument("--alpha", type=float, default=None, help="FPAD margin factor in [0, 1]")
        p.add_argument("--pantograph", choices=(COUPLED, CLOSED_FORM), default=COUPLED)
        return p

    p = common(sub.add_parser("fpad", help="feasible phase-angle domain"))
    p.add_argument("--dump-powerfunc", metavar="PATH", help="also write the power-function coefficients")
    p.set_defaults(func=cmd_fpad)

    p = common(sub.add_parser("fpdd", help="feasible power-dispatch domain"))
    p.add_argument("--scope", choices=(ZSO, TSC), default=TSC)
    p.set_defaults(func=cmd_fpdd)

    p = common(sub.add_parser("rpa", help="reference phase angle for a dispatch mode"))
    p.add_argument("--mode", choices=(PDM, CPM, MCM), required=True)
    p.add_argument("--k", type=float, help="PDM coefficient setpoint")
    p.add_argument("--p-ref", type=float, help="CPM A-TS active power setpoint (MW)")
    p.add_argument("--scope", choices=(ZSO, TSC), default=TSC)
    p.set_defaults(func=cmd_rpa)

    p = common(sub.add_parser("simulate", help="time-stepped controller run"))
    p.add_argument("--dump-powerfunc", action="store_true", help="write powerfunc-dump.json for the first step")
    p.set_defaults(func=cmd_simulate)

    p = common(sub.add_parser("verify", help="equivalent model vs full power flow"), scenario_required=False)
    p.add_argument("--random", type=int, default=0, metavar="N", help="add N randomized ZSO cases")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-fpad", action="store_true", help="skip the FPAD bound comparison")
    p.set_defaults(func=cmd_verify)

    p = common(sub.add_parser("bench", help="timing against the power-flow baselines"))
    p.add_argument("--repetitions", type=int, default=20)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("FTPSS_LOG_LEVEL", "WARNING").upper(), stream=sys.stderr)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        args.func(args)
    except UsageError as exc:
        if len(exc.args) < 2:
            parser.print_usage(sys.stderr)
        _emit_error("usage", str(exc.args[0]))
        return EXIT_USAGE
    except (ScenarioError, TopologyError) as exc:
        problems = getattr(exc, "problems", None) or [str(v) for v in getattr(exc, "violations", [])]
        _emit_error("invalid-scenario", str(exc), problems=problems)
        return EXIT_USAGE
    except DomainError as exc:
        _emit_error(exc.kind, str(exc))
        return EXIT_DOMAIN
    except DOMAIN_ERRORS as exc:
        _emit_error(type(exc).__name__, str(exc))
        return EXIT_DOMAIN
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
