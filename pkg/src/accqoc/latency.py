"""Latency of grouped programs, gate-based baselines and coherence error."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Mapping, Sequence

from accqoc.circuit import ARITY, Circuit, build_dag
from accqoc.grouping import GroupDag, GroupingPolicy, group_key, group_program
from accqoc.mapper import DeviceTopology, MapperConfig, crosstalk_metric, map_circuit
from accqoc.qoc import ModelConfig, OptBudget
from accqoc.unitary import Similarity

CX_LATENCY_NS = 974.9
SINGLE_QUBIT_LATENCY_NS = 100.0


class LatencyError(KeyError):
    def __str__(self) -> str:
        return str(self.args[0]) if self.args else ""


@dataclass
class GateLatencyTable:
    cx: float = CX_LATENCY_NS
    single: float = SINGLE_QUBIT_LATENCY_NS
    swap: float | None = None  # defaults to three CX
    overrides: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.cx <= 0 or self.single <= 0:
            raise ValueError("gate latencies must be positive")

    def latency(self, kind: str) -> float:
        if kind in self.overrides:
            return float(self.overrides[kind])
        if kind == "cx":
            return self.cx
        if kind == "swap":
            return self.swap if self.swap is not None else 3 * self.cx
        if ARITY.get(kind) == 1:
            return self.single
        raise LatencyError(f"no latency for gate kind {kind!r}")

    @classmethod
    def from_dict(cls, data: Mapping) -> "GateLatencyTable":
        return cls(float(data.get("cx", CX_LATENCY_NS)), float(data.get("single", SINGLE_QUBIT_LATENCY_NS)),
                   data.get("swap"), dict(data.get("overrides", {})))


@dataclass
class ErrorModel:
    t1_us: float = 57.35
    t2_us: float = 61.82
    gate_error_cx: float = 2.46e-2

    def __post_init__(self):
        if self.t1_us <= 0 or self.t2_us <= 0:
            raise ValueError("T1 and T2 must be positive")
        if not 0 <= self.gate_error_cx <= 1:
            raise ValueError("gate error must lie in [0, 1]")


def coherence_error(latency_ns: float, em: ErrorModel | None = None) -> float:
    """Decoherence error ``1 - exp(-t / T1)`` accrued over a latency."""
    if latency_ns < 0:
        raise ValueError("latency must be nonnegative")
    em = em or ErrorModel()
    return -math.expm1(-(latency_ns / 1000.0) / em.t1_us)


def _lookup(latency_of) -> Callable[[str], float]:
    if callable(latency_of):
        return latency_of
    return latency_of.__getitem__


def group_schedule(group_dag: GroupDag, latency_of: Mapping[str, float] | Callable[[str], float]
                   ) -> tuple[list[float], list[float]]:
    """Start and finish time of every group along the longest-path DP."""
    get = _lookup(latency_of)
    n = len(group_dag.groups)
    start = [0.0] * n
    finish = [0.0] * n
    order = group_dag.order or list(range(n))
    for i in order:
        key = group_key(group_dag.groups[i])
        try:
            lat = float(get(key))
        except KeyError:
            raise LatencyError(f"no latency for group {key}") from None
        start[i] = max((finish[p] for p in group_dag.preds[i]), default=0.0)
        finish[i] = start[i] + lat
    return start, finish


def overall_latency(group_dag: GroupDag, latency_of: Mapping[str, float] | Callable[[str], float]) -> float:
    """Longest weighted path through the group DAG (max over all sinks)."""
    _, finish = group_schedule(group_dag, latency_of)
    return max(finish, default=0.0)


def gate_based_latency(mapped: Circuit, table: GateLatencyTable | None = None) -> float:
    """Longest path through the gate DAG with calibrated per-gate latencies."""
    table = table or GateLatencyTable()
    dag = build_dag(mapped)
    finish = [0.0] * len(mapped.gates)
    for i in dag.topological_order():
        start = max((finish[p] for p in dag.preds[i]), default=0.0)
        finish[i] = start + table.latency(mapped.gates[i].kind)
    return max(finish, default=0.0)


# ---------------------------------------------------------------- reports

@dataclass
class PolicyRow:
    policy: str
    groups: int
    unique_groups: int
    coverage: float
    qoc_latency_ns: float
    gate_latency_ns: float
    latency_ratio: float        # qoc / gate-based, below 1 is a reduction
    speedup: float              # gate-based / qoc
    synthesized: int
    iterations_warm: int
    iterations_identity: int | None
    crosstalk_off: int
    crosstalk_on: int
    infeasible: list[str] = field(default_factory=list)


@dataclass
class Report:
    program: str
    rows: list[PolicyRow] = field(default_factory=list)

    def row(self, policy: str) -> PolicyRow:
        return next(r for r in self.rows if r.policy == policy)

    def to_dict(self) -> dict:
        return {"program": self.program, "rows": [asdict(r) for r in self.rows]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    def to_csv(self) -> str:
        buf = io.StringIO()
        names = [f for f in PolicyRow.__dataclass_fields__ if f != "infeasible"]
        writer = csv.writer(buf)
        writer.writerow(["program"] + names)
        for r in self.rows:
            writer.writerow([self.program] + [getattr(r, f) for f in names])
        return buf.getvalue()

    def to_text(self) -> str:
        head = f"{'policy':<9} {'groups':>6} {'uniq':>5} {'cover':>6} {'qoc ns':>10} {'gate ns':>10} " \
               f"{'ratio':>6} {'iters':>7} {'xt off':>6} {'xt on':>6}"
        lines = [f"program {self.program}", head]
        for r in self.rows:
            lines.append(f"{r.policy:<9} {r.groups:>6} {r.unique_groups:>5} {r.coverage:>6.3f} "
                         f"{r.qoc_latency_ns:>10.1f} {r.gate_latency_ns:>10.1f} {r.latency_ratio:>6.4f} "
                         f"{r.iterations_warm:>7} {r.crosstalk_off:>6} {r.crosstalk_on:>6}")
        return "\n".join(lines)


def speedup_report(program: Circuit, libs: Mapping[str, "PulseLibrary"] | None,
                   policies: Sequence[GroupingPolicy | str], topo: DeviceTopology,
                   config: ModelConfig | None = None, budget: OptBudget | None = None,
                   table: GateLatencyTable | None = None, workers: int = 1,
                   fn: Similarity | str = Similarity.D3_TRACE, alpha: float = 1.0, seed: int = 0,
                   crosstalk_on: bool = True, mapper: MapperConfig | None = None,
                   baseline: bool = False, pulse_cache: dict | None = None) -> Report:
    """Per-policy latency, coverage, iteration and crosstalk figures for one program.

    Groups missing from the policy's library are synthesized with the
    similarity scheduler.  ``baseline`` additionally synthesizes them from
    identity starts to report the iterations a plain compile would need.
    ``pulse_cache`` (key -> latency) is read and extended so repeated calls
    can share synthesized latencies.
    """
    from accqoc.scheduler import compile_uncovered

    table = table or GateLatencyTable()
    config = config or ModelConfig()
    cache = pulse_cache if pulse_cache is not None else {}
    xt_off = crosstalk_metric(map_circuit(program, topo, crosstalk_on=False, config=mapper)[0], topo)
    xt_on = crosstalk_metric(map_circuit(program, topo, crosstalk_on=True, config=mapper)[0], topo)
    report = Report(program.name)
    for pol in policies:
        pol = GroupingPolicy.from_label(pol) if isinstance(pol, str) else pol
        lib = (libs or {}).get(pol.label)
        gp = group_program(program, pol, topo, crosstalk_on=crosstalk_on, mapper=mapper)
        keys = gp.keys()
        covered = sum(1 for k in keys if lib is not None and lib.covers(k))
        todo = [g for g, k in zip(gp.groups, keys)
                if not (lib is not None and lib.covers(k)) and k not in cache]
        res = compile_uncovered(todo, None, config, fn, workers, budget, alpha, seed)
        for k, p in res.pulses.items():
            cache[k] = p.duration
        base_iters = None
        if baseline:
            base_iters = compile_uncovered(todo, None, config, fn, 1, budget, alpha, seed,
                                           warm_start=False).total_iterations

        def latency_of(k, lib=lib):
            if lib is not None and lib.covers(k):
                return lib.latency_of(k)
            return cache[k]

        qoc = overall_latency(gp.group_dag, latency_of) if not res.infeasible else math.nan
        gate = gate_based_latency(gp.circuit, table)
        report.rows.append(PolicyRow(
            pol.label, len(keys), len(set(keys)), covered / len(keys) if keys else 1.0, qoc, gate,
            qoc / gate if gate else math.nan, gate / qoc if qoc else math.nan, len(res.pulses),
            res.total_iterations, base_iters, xt_off, xt_on, sorted(res.infeasible)))
    return report


def mean_ratios(values: Sequence[float]) -> dict[str, float]:
    vals = [v for v in values if v > 0 and math.isfinite(v)]
    if not vals:
        return {"arithmetic": math.nan, "geometric": math.nan}
    return {"arithmetic": sum(vals) / len(vals),
            "geometric": math.exp(sum(math.log(v) for v in vals) / len(vals))}
