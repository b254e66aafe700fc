"""Command-line entry point.

Exit codes: 0 success, 1 logical-error scenarios found by ``analyze``,
2 usage or parse errors, 3 simulation cap overflow.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from collections.abc import Sequence
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from . import __version__
from .circuit import CircuitError, QubitId, build_modified_prep, build_shor_prep, loads
from .css_code import CodeFileError, load_code, steane
from .fault_injector import WORKERS_ENV, analyze, default_workers
from .pauli_algebra import NotationError, parse_error
from .rate_model import ParamFileError, load_params, rate_table, threshold
from .sparse_sim import (
    BRANCH_CAP,
    SUPPORT_CAP,
    BranchOverflow,
    Executor,
    SupportOverflow,
    parse_dump,
)

EXIT_OK, EXIT_LOGICAL, EXIT_USAGE, EXIT_OVERFLOW = 0, 1, 2, 3
REPORT_SCHEMA = 1

log = logging.getLogger("toffoli_ft")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    """Options shared by the analysis commands; ``None`` means the default."""

    command: str
    construction: str = "shor"
    rounds: int | None = None
    order: int = 1
    sample_budget: int | None = None
    seed: int | None = None
    format: str = "table"
    support_cap: int = SUPPORT_CAP
    branch_cap: int = BRANCH_CAP
    workers: int | None = None
    code: str | None = None

    def check(self) -> None:
        if self.construction not in ("shor", "modified"):
            raise ConfigError(f"construction must be shor or modified, got {self.construction!r}")
        if self.order not in (1, 2):
            raise ConfigError("order must be 1 or 2")
        if self.format not in ("table", "csv", "json"):
            raise ConfigError(f"unknown format {self.format!r}")
        if self.sample_budget is not None:
            if self.sample_budget < 0:
                raise ConfigError("sample budget must be non-negative")
            if self.seed is None:
                raise ConfigError("--seed is required when sampling")
        for name in ("support_cap", "branch_cap"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")


def load_config(path: str | Path) -> dict:
    """Read a JSON object of RunConfig fields, rejecting unknown keys."""
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    allowed = {f.name for f in fields(RunConfig)} - {"command"}
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    return data


def _config(args: argparse.Namespace) -> RunConfig:
    values = load_config(args.config) if getattr(args, "config", None) else {}
    for f in fields(RunConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            values[f.name] = v
    values["command"] = args.command
    cfg = RunConfig(**values)
    cfg.check()
    return cfg


# --- commands -------------------------------------------------------------------


def cmd_analyze(cfg: RunConfig, out=None) -> int:
    out = out or sys.stdout
    code = load_code(cfg.code) if cfg.code else steane()
    build = build_shor_prep if cfg.construction == "shor" else build_modified_prep
    circuit = build(code, rounds=cfg.rounds)
    if cfg.sample_budget == 0:
        log.warning("sample budget is 0; no scenarios will be analyzed")
    report = analyze(
        circuit,
        code,
        order=cfg.order,
        sample_budget=cfg.sample_budget,
        seed=cfg.seed,
        workers=cfg.workers,
        support_cap=cfg.support_cap,
        branch_cap=cfg.branch_cap,
    )
    log.info("analysis took %.1f s", report.elapsed)
    echo = asdict(cfg)
    echo["rounds"] = circuit.rounds
    if cfg.format == "json":
        doc = {"schema": REPORT_SCHEMA, "version": __version__, "config": echo, "report": report.to_dict()}
        out.write(json.dumps(doc, indent=2) + "\n")
    elif cfg.format == "csv":
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["scenario", "logical_probability", "rejected_probability", "classes"])
        for v in report.offending:
            classes = ";".join(f"{k}={p:.12g}" for k, p in sorted(v.logical_classes().items()))
            w.writerow([v.scenario.label, f"{v.logical_probability:.12g}", f"{v.rejected_probability:.12g}", classes])
    else:
        out.write(f"# toffoli-ft {__version__}  " + " ".join(f"{k}={v}" for k, v in echo.items()) + "\n")
        out.write(report.to_table() + "\n")
    for label, msg in report.errors:
        log.warning("scenario %s not simulated: %s", label, msg)
    return EXIT_LOGICAL if report.has_logical else EXIT_OK


def cmd_rates(args: argparse.Namespace, out=None) -> int:
    out = out or sys.stdout
    params = load_params(args.params) if args.params else None
    table = rate_table(args.levels, params)
    out.write(table.format(args.format, sig=None if args.raw else 2) + "\n")
    return EXIT_OK


def cmd_threshold(args: argparse.Namespace, out=None) -> int:
    out = out or sys.stdout
    p = threshold()
    if args.format == "json":
        out.write(json.dumps({"p_th": float(f"{p:.6g}"), "inverse": round(1 / p)}) + "\n")
    else:
        out.write(f"p_th = 1/{round(1 / p)} = {p:.6g}\n")
    return EXIT_OK


def cmd_simulate(args: argparse.Namespace, out=None) -> int:
    out = out or sys.stdout
    circuit = loads(Path(args.circuit).read_text())
    if args.until is not None:
        circuit = _truncate(circuit, args.until)
    code = load_code(args.code) if args.code else steane()
    inputs = {}
    for item in args.input or ():
        reg, _, path = item.partition("=")
        if reg not in circuit.registers or not path:
            raise ConfigError(f"--input expects REGISTER=FILE with a known register, got {item!r}")
        inputs[reg] = parse_dump(Path(path).read_text(), circuit.register_qubits(reg))
    order = sorted(range(len(circuit.gates)), key=lambda i: circuit.gates[i].timestep)
    ex = Executor(circuit, code, inputs, support_cap=args.support_cap, branch_cap=args.branch_cap, order=order)
    injections = {}
    if args.fault:
        err = parse_error(args.fault, code)
        pos = sum(1 for i in order if circuit.gates[i].timestep < args.at)
        injections[pos] = [err]
    result = ex.run(injections=injections)
    qubits = _report_qubits(circuit, result.branches)
    print("# qubits " + " ".join(map(str, qubits)), file=sys.stderr)
    if len(result.branches) == 1 and not result.rejected and abs(result.branches[0].prob - 1) < 1e-12:
        out.write(result.branches[0].state.dump(qubits))
        return EXIT_OK
    for br in result.branches:
        bits = " ".join(f"{k}={v}" for k, v in sorted(br.bits.items()))
        out.write(f"# branch p={br.prob:.12g} {bits}\n")
        out.write(br.state.dump(qubits))
    if result.rejected:
        out.write(f"# rejected p={result.rejected:.12g}\n")
    return EXIT_OK


def _truncate(circuit, until: int):
    from .circuit.ir import Circuit

    gates = tuple(g for g in circuit.gates if g.timestep < until)
    return Circuit(circuit.name, dict(circuit.registers), gates, dict(circuit.initial), circuit.outputs, circuit.rounds)


def _report_qubits(circuit, branches) -> list[QubitId]:
    """Output qubits plus anything still live, in register declaration order."""
    live = {q for br in branches for q in br.state.slots}
    live |= {q for r in circuit.outputs for q in circuit.register_qubits(r)}
    rank = {r: i for i, r in enumerate(circuit.registers)}
    qs = sorted(live, key=lambda q: (rank[q.register], q.index))
    for br in branches:
        for q in qs:
            br.state.touch(q)
    return qs


def cmd_dump_circuit(args: argparse.Namespace, out=None) -> int:
    out = out or sys.stdout
    from .circuit import build_bfec, build_full_toffoli, build_pfec, build_toffoli_decomposition, dumps

    code = load_code(args.code) if args.code else steane()
    builders = {
        "shor": lambda: build_shor_prep(code, rounds=args.rounds),
        "modified": lambda: build_modified_prep(code, rounds=args.rounds),
        "bfec": lambda: build_bfec(code),
        "pfec": lambda: build_pfec(code),
        "toffoli": lambda: build_full_toffoli(code),
        "decomposition": build_toffoli_decomposition,
    }
    out.write(dumps(builders[args.construction]()))
    return EXIT_OK


# --- parser ------------------------------------------------------------------------


def _caps(p: argparse.ArgumentParser) -> None:
    p.add_argument("--support-cap", type=int, default=None, help=f"max basis states per branch (default {SUPPORT_CAP})")
    p.add_argument("--branch-cap", type=int, default=None, help=f"max live branches (default {BRANCH_CAP})")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="toffoli-ft", description="Fault-tolerant Toffoli ancilla analysis.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="exhaustive or sampled fault injection on an ancilla preparation")
    p.add_argument("--construction", choices=("shor", "modified"), default=None, help="default shor")
    p.add_argument("--rounds", type=int, default=None, help="parity rounds (default 2t+1)")
    p.add_argument("--order", type=int, choices=(1, 2), default=None, help="faults per scenario (default 1)")
    p.add_argument("--sample-budget", type=int, default=None, help="sample this many scenarios (needs --seed)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--format", choices=("table", "csv", "json"), default=None, help="default table")
    p.add_argument("--workers", type=int, default=None, help=f"process pool size (default ${WORKERS_ENV} or 1)")
    p.add_argument("--code", default=None, help="code file (default Steane)")
    p.add_argument("--config", default=None, help="JSON file of option defaults")
    _caps(p)

    p = sub.add_parser("rates", help="print the concatenated Toffoli error-rate table")
    p.add_argument("--levels", type=int, default=5, help="highest level j (default 5)")
    p.add_argument("--format", choices=("table", "csv", "json"), default="table")
    p.add_argument("--params", default=None, help="noise parameter file (key=value lines)")
    p.add_argument("--raw", action="store_true", help="print unrounded coefficients")

    p = sub.add_parser("threshold", help="print the threshold error rate")
    p.add_argument("--format", choices=("table", "json"), default="table")

    p = sub.add_parser("simulate", help="run a circuit file through the sparse simulator")
    p.add_argument("circuit", help="circuit text file")
    p.add_argument("--fault", default=None, help="error in operator notation, e.g. 'X[T3.2]'")
    p.add_argument("--at", type=int, default=0, help="inject the fault before this timestep (default 0)")
    p.add_argument("--until", type=int, default=None, help="stop before this timestep")
    p.add_argument("--input", action="append", help="REGISTER=FILE state dump for a register")
    p.add_argument("--code", default=None, help="code file for logical inputs (default Steane)")
    _caps(p)

    p = sub.add_parser("dump-circuit", help="print a built circuit in the text format")
    p.add_argument(
        "construction", choices=("shor", "modified", "bfec", "pfec", "toffoli", "decomposition")
    )
    p.add_argument("--rounds", type=int, default=None)
    p.add_argument("--code", default=None)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    if args.command == "analyze" and args.workers is None:
        args.workers = default_workers()
    try:
        if args.command == "analyze":
            return cmd_analyze(_config(args))
        if args.command == "rates":
            if args.levels < 0:
                raise ConfigError("--levels must be non-negative")
            return cmd_rates(args)
        if args.command == "threshold":
            return cmd_threshold(args)
        if args.command == "simulate":
            if args.support_cap is None:
                args.support_cap = SUPPORT_CAP
            if args.branch_cap is None:
                args.branch_cap = BRANCH_CAP
            return cmd_simulate(args)
        return cmd_dump_circuit(args)
    except (ConfigError, CircuitError, CodeFileError, ParamFileError, NotationError, OSError, ValueError) as exc:
        print(f"{parser.prog}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SupportOverflow, BranchOverflow) as exc:
        print(f"{parser.prog}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_OVERFLOW


if __name__ == "__main__":
    sys.exit(main())
