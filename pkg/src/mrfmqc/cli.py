"""Command-line front end: ``mrfmqc <command> [options]``."""

from __future__ import annotations

import argparse
import itertools
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from .chain import ChainState, move_probe
from .compiler import CompileError, compile_circuit, parse_circuit, verify_schedule
from .config import SCHEMA, ConfigError, RunConfig, build_config, load_config, parse_length, with_override
from .protocol import ProtocolError, execute_schedule, measure_nuclear_spin, run_ensemble
from .validator import reproduce_paper_table, table_to_csv, validate

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def _common(p: argparse.ArgumentParser, *, config=True, seed=False, mode=False, margin=False,
            circuit=False, trace=False):
    p.add_argument("--output-dir", type=Path, default=Path("."), help="directory for all output files")
    if config:
        p.add_argument("--config", type=Path, help="TOML run configuration (default: bundled paper design)")
    if seed:
        p.add_argument("--seed", type=int, help="override [run] seed")
    if mode:
        p.add_argument("--mode", choices=("single_spin", "ising_array", "statistical_ensemble"),
                       help="override [run] mode")
    if margin:
        p.add_argument("--margin", type=float, help="ratio that counts as 'much less than'")
    if circuit:
        p.add_argument("--circuit", type=Path, required=True, help="circuit file (rotx/icn/cn lines)")
    if trace:
        p.add_argument("--trace", action="store_true", help="also write each cantilever trace as CSV")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mrfmqc", description="Single-spin MRFM quantum computer toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a design against every feasibility inequality")
    _common(p, margin=True)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("reproduce", help="write the regression table against published numbers")
    _common(p, config=False)
    p.set_defaults(func=cmd_reproduce)

    p = sub.add_parser("measure", help="simulate single-nucleus readouts")
    _common(p, seed=True, trace=True)
    p.add_argument("--site", type=int, help="override [measure] site")
    p.add_argument("--repeats", type=int, help="override [measure] repeats")
    p.set_defaults(func=cmd_measure)

    p = sub.add_parser("compile", help="compile a circuit into a pulse schedule")
    _common(p, mode=True, margin=True, circuit=True)
    p.set_defaults(func=cmd_compile)

    p = sub.add_parser("run", help="compile and execute a circuit")
    _common(p, seed=True, mode=True, margin=True, circuit=True)
    p.add_argument("--pulse-mode", choices=("ideal", "stochastic"), help="override [run] pulse_mode")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="validate over a parameter grid")
    _common(p, margin=True)
    p.add_argument("--grid", action="append", required=True, metavar="SECTION.KEY=MIN:MAX:STEPS",
                   help="one grid axis; repeat for more axes (lengths may carry units, e.g. 50A:400A:20)")
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    p.set_defaults(func=cmd_sweep)
    return parser


def _load(args) -> RunConfig:
    cfg = load_config(getattr(args, "config", None))
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "mode", None):
        cfg.mode = args.mode
    if getattr(args, "margin", None) is not None:
        if args.margin < 1:
            raise ConfigError("--margin: must be >= 1")
        cfg.margin = args.margin
    return cfg


def _out(args, name: str) -> Path:
    args.output_dir.mkdir(parents=True, exist_ok=True)
    return args.output_dir / name


def _write_jsonl(path: Path, rows) -> None:
    with open(path, "w") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


# commands -------------------------------------------------------------------------

def cmd_validate(args) -> int:
    cfg = _load(args)
    report = validate(cfg.device, margin=cfg.margin, excitation_bound=cfg.excitation_bound)
    _out(args, "report.json").write_text(report.to_json() + "\n")
    text = report.to_text()
    _out(args, "report.txt").write_text(text)
    print(text, end="")
    return EXIT_OK if report.ok else EXIT_FAIL


def cmd_reproduce(args) -> int:
    rows = reproduce_paper_table()
    _out(args, "reproduce.csv").write_text(table_to_csv(rows))
    flagged = sum(r.flagged for r in rows)
    print(f"wrote {len(rows)} rows ({flagged} flagged) to {_out(args, 'reproduce.csv')}")
    return EXIT_OK


def _initial_state(cfg: RunConfig, n: int | None = None) -> ChainState:
    label = cfg.initial_state or "0" * (n or 1)
    if n is not None and len(label) != n:
        raise ConfigError(f"[state] initial: label has {len(label)} sites but the circuit has {n} qubits")
    return ChainState.from_label(label)


def cmd_measure(args) -> int:
    cfg = _load(args)
    site = cfg.measure_site if args.site is None else args.site
    repeats = cfg.measure_repeats if args.repeats is None else args.repeats
    base = _initial_state(cfg)
    if not 0 <= site < base.n:
        raise ConfigError(f"[measure] site: {site} outside the {base.n}-site initial state")
    rng = np.random.default_rng(cfg.seed)
    records = []
    for i in range(repeats):
        state = move_probe(base, site)
        if args.trace:
            rec, _, trace = measure_nuclear_spin(cfg.device, state, site, rng, return_trace=True)
            trace.to_csv(_out(args, f"trace_{i:04d}.csv"))
        else:
            rec, _ = measure_nuclear_spin(cfg.device, state, site, rng)
        records.append(json.loads(rec.to_json()))
    _write_jsonl(_out(args, "measurements.jsonl"), records)
    detected = sum(r["detected"] for r in records)
    print(f"{repeats} readout(s) of site {site}: {detected} detected")
    return EXIT_OK


def _compile_mode(cfg: RunConfig) -> str:
    if cfg.mode == "statistical_ensemble":
        return "ising_array" if cfg.ising is not None else "single_spin"
    return cfg.mode


def _compile(args, cfg: RunConfig):
    try:
        text = args.circuit.read_text()
    except OSError as exc:
        raise ConfigError(f"--circuit: {exc.strerror}") from None
    n = cfg.ising.size if cfg.ising is not None and _compile_mode(cfg) == "ising_array" else None
    if n is None and cfg.initial_state:
        n = len(cfg.initial_state)
    try:
        circuit = parse_circuit(text, n)
    except CompileError:
        raise
    except ValueError as exc:
        raise ConfigError(f"--circuit: {exc}") from None
    mode = _compile_mode(cfg)
    sched = compile_circuit(circuit, mode, cfg.device, cfg.ising, margin=cfg.margin, check=False)
    report = verify_schedule(sched, cfg.device, cfg.ising, margin=cfg.margin)
    return sched, report


def cmd_compile(args) -> int:
    cfg = _load(args)
    sched, report = _compile(args, cfg)
    _out(args, "schedule.json").write_text(sched.to_json() + "\n")
    _out(args, "verification.json").write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    return _report_violations(report, f"{len(sched.steps)} steps, {sched.total_duration_s:.6g} s")


def _report_violations(report, summary: str) -> int:
    if report.ok:
        print(summary)
        return EXIT_OK
    print("infeasible schedule:", file=sys.stderr)
    for line in report.violations():
        print("  " + line, file=sys.stderr)
    return EXIT_FAIL


def cmd_run(args) -> int:
    cfg = _load(args)
    if args.pulse_mode:
        cfg.pulse_mode = args.pulse_mode
    sched, report = _compile(args, cfg)
    _out(args, "schedule.json").write_text(sched.to_json() + "\n")
    if not report.ok:
        return _report_violations(report, "")
    ising = cfg.ising if sched.mode == "ising_array" else None
    if cfg.mode == "statistical_ensemble":
        p = cfg.ensemble_p_ground
        p = p * sched.qubit_count if len(p) == 1 else p
        if len(p) != sched.qubit_count:
            raise ConfigError(f"[ensemble] p_ground: need 1 or {sched.qubit_count} entries")
        cols = range(sched.qubit_count) if cfg.ensemble_column is None else [cfg.ensemble_column]
        rows = []
        for i, col in enumerate(cols):
            ro = run_ensemble(sched, cfg.device, p, cfg.ensemble_chains, [cfg.seed, i], col, ising,
                              sampling=cfg.ensemble_sampling)
            rows.append(json.loads(ro.to_json()))
        _write_jsonl(_out(args, "ensemble.jsonl"), rows)
        for r in rows:
            print(f"column {r['column']}: <2Iz> = {r['average_z_polarization']:+.4f} over {r['chain_count']} chains")
        return EXIT_OK
    state = _initial_state(cfg, sched.qubit_count)
    final = execute_schedule(sched, state, cfg.device, ising, mode=cfg.pulse_mode, seed=cfg.seed)
    rows = final.snapshot()
    for r in rows:
        r["probability"] = r["re"] ** 2 + r["im"] ** 2
    _write_jsonl(_out(args, "final_state.jsonl"), rows)
    for r in rows:
        print(f"|{r['bits']}>  p={r['probability']:.6f}  electrons {r['electrons']}")
    return EXIT_OK


def _parse_axis(spec: str):
    name, sep, rng = spec.partition("=")
    parts = rng.split(":")
    if not sep or len(parts) != 3:
        raise ConfigError(f"--grid {spec!r}: expected SECTION.KEY=MIN:MAX:STEPS")
    section, _, key = name.partition(".")
    if section not in SCHEMA or key not in SCHEMA[section]:
        raise ConfigError(f"--grid: unknown parameter {name!r}")
    kind = SCHEMA[section][key]
    try:
        lo, hi = (parse_length(x) if kind == "length" else float(x) for x in parts[:2])
        steps = int(parts[2])
    except ValueError as exc:
        raise ConfigError(f"--grid {spec!r}: {exc}") from None
    if steps < 1:
        raise ConfigError(f"--grid {spec!r}: steps must be >= 1")
    values = np.linspace(lo, hi, steps)
    if kind == "int":
        values = [int(round(v)) for v in values]
    else:
        values = [float(v) for v in values]
    return name, values


def _sweep_point(job):
    raw, params, margin, bound = job
    for name, value in params.items():
        raw = with_override(raw, name, value)
    cfg = build_config(raw)
    report = validate(cfg.device, margin=margin, excitation_bound=bound)
    return {"parameters": params, "pass": report.ok, "failed": report.failed(), "report": report.to_dict()}


def cmd_sweep(args) -> int:
    cfg = _load(args)
    axes = [_parse_axis(s) for s in args.grid]
    names = [a[0] for a in axes]
    jobs = []
    for combo in itertools.product(*(a[1] for a in axes)):
        params = dict(zip(names, combo))
        raw = cfg.raw
        for name, value in params.items():
            raw = with_override(raw, name, value)
        build_config(raw)  # fail fast on invalid points
        jobs.append((cfg.raw, params, cfg.margin, cfg.excitation_bound))
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_sweep_point, jobs))
    else:
        results = [_sweep_point(j) for j in jobs]
    for i, r in enumerate(results):
        r["point"] = i
    _write_jsonl(_out(args, "sweep.jsonl"), results)
    passed = sum(r["pass"] for r in results)
    print(f"{len(results)} points, {passed} feasible")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except CompileError as exc:
        print(f"compile error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except ProtocolError as exc:
        print(f"protocol error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
