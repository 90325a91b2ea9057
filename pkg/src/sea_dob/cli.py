"""Command-line entry point: ``sea-dob {run,analyze,usecase,presets}``.

Exit codes: 0 success, 1 a requested check failed, 2 invalid configuration,
3 simulation aborted (hard stop or non-finite state).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace

import numpy as np

from . import analysis, simulator, tms_usecase
from .config import (
    ConfigError,
    controller_from,
    impedance_from,
    load_document,
    load_preset,
    plant_from,
    preset_names,
    run_config_from,
)
from .controllers import PRESET_NAMES
from .drivetrain import KS_PRESETS
from .lti import default_grid

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_ABORT = 0, 1, 2, 3


def _write(path: str, text: str) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(text)


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _err(msg: str) -> None:
    print(f"sea-dob: error: {msg}", file=sys.stderr)


# ---------------------------------------------------------------------------
# run


def cmd_run(args) -> int:
    try:
        doc = load_document(args.scenario)
        rc = run_config_from(doc, controller=args.controller, plant=args.plant)
        if args.environment:
            rc = replace(rc, scenario=replace(rc.scenario, environment=args.environment))
        if args.hard_stop:
            rc = replace(rc, scenario=replace(rc.scenario, hard_stop=args.hard_stop))
    except ConfigError as exc:
        _err(str(exc))
        return EXIT_CONFIG
    os.makedirs(args.out, exist_ok=True)
    emit_trace = rc.emit_trace and not args.no_trace
    emit_metrics = rc.emit_metrics and not args.no_metrics
    code = EXIT_OK
    try:
        trace = simulator.run(rc.scenario, rc.plant, rc.controller, rc.impedance)
    except simulator.SimulationAbort as exc:
        _err(f"simulation aborted: {exc.reason} (partial trace of {exc.trace.n} samples written)")
        trace, code = exc.trace, EXIT_ABORT
    metrics = simulator.compute_metrics(trace, rc.scenario)
    if emit_trace:
        _write(os.path.join(args.out, "trace.csv"), trace.to_csv())
    if emit_metrics:
        d = metrics.to_dict()
        d["controller"] = rc.controller.variant
        d["environment"] = rc.scenario.environment
        d["unstable_phases"] = [p.name for p in metrics.phases if p.oscillating]
        _write(os.path.join(args.out, "metrics.json"), _dump(d))
    for p in metrics.phases:
        print(f"{p.name:>10}: bound {p.error_bound:.4f} N*m  bias {p.error_bias:+.4f} N*m  oscillating={p.oscillating}")
    for s in metrics.steps:
        print(f"step @ {s.time:.3f} s: settling {s.settling_time_5pct:.3f} s, time constant {s.time_constant:.4f} s")
    print(f"saturated samples: {100 * metrics.saturated_fraction:.1f}%")
    return code


# ---------------------------------------------------------------------------
# analyze


def cmd_analyze(args) -> int:
    try:
        doc = {"plant": {"preset": args.plant}} if args.plant else {}
        p = plant_from(doc.get("plant"))
        if args.m_e is not None:
            p = replace(p, m_e=args.m_e)
        cfg = controller_from({"preset": args.controller}, p)
        icfg = impedance_from(None, p)
    except (ConfigError, ValueError) as exc:
        _err(str(exc))
        return EXIT_CONFIG
    os.makedirs(args.out, exist_ok=True)
    code = EXIT_OK
    did = False
    if args.verify_identities:
        did = True
        for chk in analysis.verify_identities(p, cfg):
            print(f"{'PASS' if chk.passed else 'FAIL'}  {chk.name}" + (f"  [{chk.detail}]" if chk.name.startswith("G_hat_se(0)") else ""))
            if not chk.passed:
                code = EXIT_CHECK
    if args.small_alpha:
        did = True
        print(analysis.verify_small_alpha_approximation(p, [0.01, 0.1, 1.0, 10.0, 120.0]).summary())
    if args.bode or args.poles:
        did = True
        cls = analysis.build_closed_loop_set(p, cfg)
        if args.bode:
            funcs = {k: v for k, v in cls.functions().items() if k in ("G_ss_d", "G_hat_se", "Z_s")}
            _write(os.path.join(args.out, "bode.csv"), analysis.bode_csv(funcs, default_grid()))
            print(f"wrote {os.path.join(args.out, 'bode.csv')}")
        if args.poles:
            doc = {"schema_version": analysis.SCHEMA_VERSION, "poles": analysis.pole_table(cls)}
            _write(os.path.join(args.out, "poles.json"), _dump(doc))
            print(f"wrote {os.path.join(args.out, 'poles.json')}")
    if args.min_inertia:
        did = True
        try:
            res = analysis.min_stable_inertia(
                cfg, icfg, (args.m_min, args.m_max), base=p, lead_ratio=args.lead_ratio, loop_delay=args.loop_delay, outer=args.outer
            )
        except analysis.AnalysisError as exc:
            _err(str(exc))
            return EXIT_CONFIG
        _write(os.path.join(args.out, "stability.json"), _dump(res.to_dict()))
        if res.status == "boundary":
            print(f"{cfg.variant}: minimum stable inertia {res.m_star:.4g} kg*m^2 (bracket {res.bracket[0]:.4g}..{res.bracket[1]:.4g})")
        else:
            print(f"{cfg.variant}: {res.status} (low end {res.low.verdict}, high end {res.high.verdict})")
    if not did:
        _err("nothing to do; pass --bode, --poles, --min-inertia, --verify-identities or --small-alpha")
        return EXIT_CONFIG
    return code


# ---------------------------------------------------------------------------
# usecase / presets


def _parse_map(text: str) -> dict:
    out = {}
    for item in text.split(","):
        k, _, v = item.partition("=")
        out[k.strip()] = float(v)
    return out


def cmd_usecase(args) -> int:
    try:
        gearing = dict(tms_usecase.DEFAULT_GEARING)
        if args.gearing:
            gearing.update(_parse_map(args.gearing))
        masses = tuple(float(x) for x in args.link_masses.split(",")) if args.link_masses else (0.0, 0.0, 0.0)
        if len(masses) != 3 or set(gearing) != set(tms_usecase.JOINTS):
            raise ValueError("need three link masses and a reduction for shoulder, elbow, wrist")
        arm = tms_usecase.PlanarArm(base=(args.base_x, args.base_y), link_masses=masses)
        report = tms_usecase.usecase_report(arm, gearing)
    except (ValueError, tms_usecase.UnreachableError) as exc:
        _err(str(exc))
        return EXIT_CONFIG
    text = _dump(report)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        _write(os.path.join(args.out, "usecase.json"), text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_presets(args) -> int:
    if args.name is None:
        for n in preset_names():
            print(n)
        return EXIT_OK
    try:
        sys.stdout.write(_dump(load_preset(args.name)))
    except ConfigError as exc:
        _err(str(exc))
        return EXIT_CONFIG
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sea-dob", description="Velocity-sourced SEA torque-control simulation and analysis.")
    ap.add_argument("-v", "--verbose", action="store_true", help="log transfer-function cancellations and progress")
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="simulate a scenario and write trace/metrics")
    r.add_argument("--scenario", required=True, help="scenario JSON file or embedded preset name (e.g. paper_v_a)")
    r.add_argument("--controller", choices=PRESET_NAMES, help="override the controller section with a preset")
    r.add_argument("--plant", choices=sorted(KS_PRESETS), help="override the plant stiffness preset")
    r.add_argument("--environment", choices=("lab", "mri"), help="override the scenario environment")
    r.add_argument("--hard-stop", choices=simulator.HARD_STOP_POLICIES, help="override the hard-stop policy")
    r.add_argument("--out", default="out", help="output directory (default: out)")
    r.add_argument("--seed", type=int, default=0, help="reserved; simulations are deterministic")
    r.add_argument("--no-trace", action="store_true", help="do not write trace.csv")
    r.add_argument("--no-metrics", action="store_true", help="do not write metrics.json")
    r.set_defaults(func=cmd_run)

    a = sub.add_parser("analyze", help="frequency-domain and stability analysis")
    a.add_argument("--controller", "--preset", dest="controller", choices=PRESET_NAMES, default="dob-paper", help="controller preset")
    a.add_argument("--plant", choices=sorted(KS_PRESETS), help="plant stiffness preset (default ks-geometry)")
    a.add_argument("--m-e", type=float, help="external inertia, kg*m^2")
    a.add_argument("--bode", action="store_true", help="write bode.csv for G_ss_d, G_hat_se and Z_s")
    a.add_argument("--poles", action="store_true", help="write poles.json")
    a.add_argument("--min-inertia", action="store_true", help="search the minimum stable external inertia")
    a.add_argument("--m-min", type=float, default=1e-5, help="lower end of the inertia search, kg*m^2")
    a.add_argument("--m-max", type=float, default=10.0, help="upper end of the inertia search, kg*m^2")
    a.add_argument("--lead-ratio", type=float, default=analysis.DEFAULT_LEAD_RATIO, help="lead pole as a multiple of its zero")
    a.add_argument("--loop-delay", type=float, default=None, help="loop delay in seconds (default half a sample)")
    a.add_argument("--outer", choices=("lead", "observer"), default="lead", help="outer impedance-loop model")
    a.add_argument("--verify-identities", action="store_true", help="run the polynomial identity suite")
    a.add_argument("--small-alpha", action="store_true", help="tabulate the small-alpha approximation error")
    a.add_argument("--out", default="out", help="output directory (default: out)")
    a.set_defaults(func=cmd_analyze)

    u = sub.add_parser("usecase", help="joint torque/power envelope of the coil-handling arm")
    u.add_argument("--base-x", type=float, default=0.32, help="shoulder x position, m")
    u.add_argument("--base-y", type=float, default=0.0, help="shoulder y position, m")
    u.add_argument("--gearing", help="reductions, e.g. wrist=1,elbow=2,shoulder=4")
    u.add_argument("--link-masses", help="shoulder,elbow,wrist link masses in kg")
    u.add_argument("--out", help="also write usecase.json to this directory")
    u.set_defaults(func=cmd_usecase)

    p = sub.add_parser("presets", help="list embedded presets or print one")
    p.add_argument("name", nargs="?", help="preset to print")
    p.set_defaults(func=cmd_presets)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) if exc.code in (0, None) else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    np.seterr(all="ignore")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
