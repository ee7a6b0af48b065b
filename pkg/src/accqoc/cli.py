"""``accqoc`` command line: precompile, compile, stats and corpus-list.

Exit codes: 0 success, 1 usage or input error, 2 empty corpus,
3 library/model fingerprint mismatch, 4 at least one group infeasible.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import os
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from accqoc.circuit import Circuit, QasmError, load_qasm
from accqoc.grouping import POLICY_LABELS, GroupingPolicy, group_key, group_program
from accqoc.latency import (GateLatencyTable, gate_based_latency, group_schedule, mean_ratios,
                            overall_latency)
from accqoc.library import (FingerprintMismatch, PulseLibrary, coverage, precompile,
                            split_corpus)
from accqoc.mapper import DeviceTopology, MapperConfig, crosstalk_metric, map_circuit
from accqoc.qoc import ModelConfig, OptBudget
from accqoc.scheduler import compile_uncovered
from accqoc.unitary import Similarity

log = logging.getLogger("accqoc")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_EMPTY_CORPUS = 2
EXIT_FINGERPRINT = 3
EXIT_INFEASIBLE = 4

CONFIG_ENV = "ACCQOC_CONFIG"


@dataclass
class RunConfig:
    policy: str = "map2b4l"
    topology: str | None = None
    model: ModelConfig = field(default_factory=ModelConfig)
    budget: OptBudget = field(default_factory=OptBudget)
    latency: GateLatencyTable = field(default_factory=GateLatencyTable)
    library: str | None = None
    workers: int = 1
    seed: int = 0
    similarity: str = "d3"
    alpha: float = 1.0
    no_crosstalk: bool = False
    unique_coverage: bool = False
    fast_gradient: bool = False

    def __post_init__(self):
        if self.policy not in POLICY_LABELS:
            raise ValueError(f"unknown policy {self.policy!r}")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")
        Similarity(self.similarity)

    @classmethod
    def from_file(cls, path: str | Path | None) -> "RunConfig":
        if not path:
            return cls()
        data = json.loads(Path(path).read_text())
        kwargs = {k: v for k, v in data.items()
                  if k in cls.__dataclass_fields__ and k not in ("model", "budget", "latency")}
        if "model" in data:
            kwargs["model"] = ModelConfig.from_dict(data["model"])
        if "budget" in data:
            kwargs["budget"] = OptBudget(**data["budget"])
        if "latency" in data:
            kwargs["latency"] = GateLatencyTable.from_dict(data["latency"])
        return cls(**kwargs)

    def topo(self) -> DeviceTopology:
        return DeviceTopology.load(self.topology) if self.topology else DeviceTopology.melbourne()

    def opt_budget(self) -> OptBudget:
        return dataclasses.replace(self.budget, exact_gradient=not self.fast_gradient)


def bundled_corpus_dir() -> Path:
    return Path(str(resources.files("accqoc.data").joinpath("corpus")))


def load_corpus(directory: str | Path | None) -> list[Circuit]:
    directory = Path(directory) if directory else bundled_corpus_dir()
    return [load_qasm(p) for p in sorted(directory.glob("*.qasm"))]


def _merge_args(cfg: RunConfig, args) -> RunConfig:
    updates = {}
    for name in ("policy", "topology", "workers", "seed", "similarity", "alpha", "library"):
        value = getattr(args, name, None)
        if value is not None:
            updates[name] = value
    for flag in ("no_crosstalk", "unique_coverage", "fast_gradient"):
        if getattr(args, flag, False):
            updates[flag] = True
    if getattr(args, "model_config", None):
        updates["model"] = ModelConfig.from_dict(json.loads(Path(args.model_config).read_text()))
    return dataclasses.replace(cfg, **updates)


def _emit(obj, path: str | None):
    text = json.dumps(obj, indent=1)
    if path:
        Path(path).write_text(text)
    else:
        print(text)


# ---------------------------------------------------------------- commands

def cmd_precompile(cfg: RunConfig, args) -> int:
    corpus = load_corpus(args.corpus)
    if not corpus:
        print(f"error: no .qasm programs in {args.corpus or bundled_corpus_dir()}", file=sys.stderr)
        return EXIT_EMPTY_CORPUS
    profile = corpus if args.sample_frac >= 1 else split_corpus(corpus, args.sample_frac, cfg.seed)[0]
    lib, result = precompile(profile, cfg.policy, cfg.model, cfg.opt_budget(), cfg.topo(), cfg.workers,
                             cfg.similarity, cfg.alpha, cfg.seed, not cfg.no_crosstalk)
    lib.save(args.out)
    summary = {
        "library": str(args.out),
        "policy": cfg.policy,
        "programs": [c.name for c in profile],
        "unique_groups": len(lib),
        "group_instances": lib.total_frequency,
        "total_iterations": result.total_iterations,
        "infeasible": sorted(result.infeasible),
    }
    print(json.dumps(summary, indent=1))
    return EXIT_INFEASIBLE if result.infeasible else EXIT_OK


def _load_library(cfg: RunConfig, path) -> PulseLibrary:
    return PulseLibrary.load(path, expected_fingerprint=cfg.model.fingerprint())


def compile_program(program: Circuit, lib: PulseLibrary, cfg: RunConfig) -> dict:
    """Group a program, synthesize its uncovered groups and lay out a pulse schedule."""
    topo = cfg.topo()
    gp = group_program(program, lib.policy, topo, crosstalk_on=not cfg.no_crosstalk)
    keys = gp.keys()
    uncovered = [g for g, k in zip(gp.groups, keys) if not lib.covers(k)]
    res = compile_uncovered(uncovered, lib, cfg.model, cfg.similarity, cfg.workers, cfg.opt_budget(),
                            cfg.alpha, cfg.seed)
    report = {
        "program": program.name,
        "policy": lib.policy.label,
        "groups": len(keys),
        "coverage": coverage(gp, lib, unique=cfg.unique_coverage),
        "synthesized": sorted(res.pulses),
        "infeasible": {k: d for k, d in sorted(res.infeasible.items())},
        "iterations": res.total_iterations,
        "partition": [len(p) for p in res.partition.parts] if res.partition else [],
        "crosstalk_metric": crosstalk_metric(
            map_circuit(program, topo, crosstalk_on=not cfg.no_crosstalk)[0], topo),
        "gate_based_latency_ns": gate_based_latency(gp.circuit, cfg.latency),
    }
    if res.infeasible:
        report["schedule"] = []
        report["overall_latency_ns"] = None
        report["latency_ratio"] = None
        return report

    def latency_of(k):
        return lib.latency_of(k) if lib.covers(k) else res.pulses[k].duration

    start, finish = group_schedule(gp.group_dag, latency_of)
    schedule = []
    for i, grp in enumerate(gp.groups):
        key = group_key(grp)
        schedule.append({"group": i, "key": key, "qubits": list(grp.qubits), "start_ns": start[i],
                         "duration_ns": finish[i] - start[i],
                         "source": "library" if lib.covers(key) else "synthesized"})
    total = max(finish, default=0.0)
    report["schedule"] = schedule
    report["overall_latency_ns"] = total
    gate = report["gate_based_latency_ns"]
    report["latency_ratio"] = total / gate if gate else None
    return report


def cmd_compile(cfg: RunConfig, args) -> int:
    try:
        lib = _load_library(cfg, args.library or cfg.library)
    except FingerprintMismatch as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FINGERPRINT
    program = load_qasm(args.program)
    report = compile_program(program, lib, cfg)
    _emit(report, args.out)
    if report["infeasible"]:
        print(json.dumps({"infeasible": report["infeasible"]}), file=sys.stderr)
        return EXIT_INFEASIBLE
    return EXIT_OK


def cmd_stats(cfg: RunConfig, args) -> int:
    libs = []
    for path in args.library or ([cfg.library] if cfg.library else []):
        try:
            libs.append(_load_library(cfg, path))
        except FingerprintMismatch as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_FINGERPRINT
    if not libs:
        print("error: no library given", file=sys.stderr)
        return EXIT_USAGE
    corpus = load_corpus(args.corpus)
    if not corpus:
        return EXIT_EMPTY_CORPUS
    topo = cfg.topo()
    rows = []
    for prog in corpus:
        row = {"program": prog.name}
        for lib in libs:
            gp = group_program(prog, lib.policy, topo, crosstalk_on=not cfg.no_crosstalk)
            label = lib.policy.label
            row[f"{label}_coverage"] = coverage(gp, lib, unique=cfg.unique_coverage)
            row[f"{label}_profiled"] = prog.name in lib.meta.get("programs", [])
            ratio = math.nan
            if all(lib.covers(k) for k in gp.keys()):
                gate = gate_based_latency(gp.circuit, cfg.latency)
                ratio = overall_latency(gp.group_dag, lib.latency_of) / gate if gate else math.nan
            row[f"{label}_latency_ratio"] = ratio
        rows.append(row)
    cols = list(rows[0])
    means = {"program": "MEAN"}
    for c in cols[1:]:
        vals = [r[c] for r in rows if isinstance(r[c], float) and math.isfinite(r[c])]
        means[c] = sum(vals) / len(vals) if vals else math.nan
    held = {"program": "MEAN(held-out)"}
    for lib in libs:
        c = f"{lib.policy.label}_coverage"
        vals = [r[c] for r in rows if not r[f"{lib.policy.label}_profiled"]]
        held[c] = sum(vals) / len(vals) if vals else math.nan
    ratio_cols = [c for c in cols if c.endswith("_latency_ratio")]
    for c in ratio_cols:
        means[c + "_geomean"] = mean_ratios([r[c] for r in rows])["geometric"]
    table_cols = [c for c in cols if not c.endswith("_profiled")]
    width = max(len(r["program"]) for r in rows + [held])
    print("  ".join([f"{'program':<{width}}"] + [f"{c:>22}" for c in table_cols[1:]]))
    for r in rows + [means, held]:
        cells = [f"{r['program']:<{width}}"]
        for c in table_cols[1:]:
            v = r.get(c, "")
            cells.append(f"{v:>22.4f}" if isinstance(v, float) else f"{str(v):>22}")
        print("  ".join(cells))
    if args.csv:
        import csv
        with open(args.csv, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=cols)
            writer.writeheader()
            writer.writerows(rows)
    return EXIT_OK


def cmd_corpus_list(cfg: RunConfig, args) -> int:
    corpus = load_corpus(args.corpus)
    if not corpus:
        return EXIT_EMPTY_CORPUS
    for prog in corpus:
        counts = ", ".join(f"{k}={v}" for k, v in sorted(prog.counts().items()))
        print(f"{prog.name:<16} qubits={prog.num_qubits:<3} gates={len(prog.gates):<5} {counts}")
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="accqoc", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help=f"JSON run config (default: ${CONFIG_ENV})")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--policy", choices=POLICY_LABELS)
        p.add_argument("--topology", help="coupling graph JSON (default: bundled 14-qubit device)")
        p.add_argument("--model-config", help="control model JSON")
        p.add_argument("--workers", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--similarity", choices=[s.value for s in Similarity])
        p.add_argument("--alpha", type=float)
        p.add_argument("--no-crosstalk", action="store_true")
        p.add_argument("--unique", dest="unique_coverage", action="store_true",
                       help="count distinct groups instead of instances for coverage")
        p.add_argument("--fast-gradient", action="store_true", help="first-order GRAPE gradient")

    p = sub.add_parser("precompile", help="build a pulse library from a corpus sample")
    common(p)
    p.add_argument("--corpus", help="directory of .qasm programs (default: bundled corpus)")
    p.add_argument("--out", required=True)
    p.add_argument("--sample-frac", type=float, default=1 / 3)
    p.set_defaults(func=cmd_precompile)

    p = sub.add_parser("compile", help="compile one program against a library")
    common(p)
    p.add_argument("program")
    p.add_argument("--library")
    p.add_argument("--out", help="schedule/report JSON (default: stdout)")
    p.set_defaults(func=cmd_compile)

    p = sub.add_parser("stats", help="coverage and latency tables for a corpus")
    common(p)
    p.add_argument("--library", action="append", help="library JSON, repeat for several policies")
    p.add_argument("--corpus")
    p.add_argument("--csv")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("corpus-list", help="list corpus programs")
    p.add_argument("--corpus")
    p.set_defaults(func=cmd_corpus_list)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _merge_args(RunConfig.from_file(args.config or os.environ.get(CONFIG_ENV)), args)
        return args.func(cfg, args)
    except (QasmError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
