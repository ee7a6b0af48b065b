"""Precompiled pulse library: profiling, persistence, coverage and hot-group tuning."""

from __future__ import annotations

import dataclasses
import datetime as _dt
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from accqoc.circuit import Circuit
from accqoc.grouping import GroupedProgram, GroupingPolicy, group_key, group_program
from accqoc.mapper import DeviceTopology, MapperConfig
from accqoc.qoc import (ControlModel, InfeasibleError, ModelConfig, OptBudget, Pulse,
                        binary_search_latency, feasible)
from accqoc.scheduler import SynthesisResult, compile_uncovered
from accqoc.unitary import Similarity, is_identity_up_to_phase

log = logging.getLogger(__name__)

FORMAT_VERSION = 1


class LibraryError(RuntimeError):
    pass


class FingerprintMismatch(LibraryError):
    pass


def _encode_matrix(u: np.ndarray) -> list:
    return [[[float(z.real), float(z.imag)] for z in row] for row in u]


def _decode_matrix(data) -> np.ndarray:
    arr = np.array(data, dtype=float)
    return arr[..., 0] + 1j * arr[..., 1]


@dataclass
class LibraryEntry:
    key: str
    unitary: np.ndarray
    pulse: Pulse | None
    frequency: int = 0
    programs: list[str] = field(default_factory=list)
    # set when synthesis failed; the duration is the largest one tried
    infeasible_at: float | None = None

    @property
    def feasible(self) -> bool:
        return self.pulse is not None

    @property
    def latency(self) -> float | None:
        return self.pulse.duration if self.pulse is not None else None

    @property
    def num_qubits(self) -> int:
        return int(np.log2(len(self.unitary)))

    def to_dict(self) -> dict:
        return {
            "key": self.key,
            "unitary": _encode_matrix(self.unitary),
            "pulse": self.pulse.to_dict() if self.pulse is not None else None,
            "latency": self.latency,
            "frequency": self.frequency,
            "programs": list(self.programs),
            "feasible": self.feasible,
            "infeasible_at": self.infeasible_at,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "LibraryEntry":
        pulse = Pulse.from_dict(data["pulse"]) if data.get("pulse") else None
        return cls(data["key"], _decode_matrix(data["unitary"]), pulse, int(data["frequency"]),
                   list(data["programs"]), data.get("infeasible_at"))


@dataclass
class PulseLibrary:
    policy: GroupingPolicy
    model_fingerprint: str
    entries: dict[str, LibraryEntry] = field(default_factory=dict)
    created: str = ""
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, key: str) -> bool:
        return key in self.entries

    def covers(self, key: str) -> bool:
        entry = self.entries.get(key)
        return entry is not None and entry.feasible

    def latency_of(self, key: str) -> float:
        entry = self.entries.get(key)
        if entry is None or not entry.feasible:
            raise KeyError(key)
        return entry.latency

    def latencies(self) -> dict[str, float]:
        return {k: e.latency for k, e in self.entries.items() if e.feasible}

    def pulse(self, key: str) -> Pulse:
        entry = self.entries[key]
        if entry.pulse is None:
            raise LibraryError(f"group {key} is marked infeasible")
        return entry.pulse

    @property
    def total_frequency(self) -> int:
        return sum(e.frequency for e in self.entries.values())

    def merge(self, other: "PulseLibrary") -> "PulseLibrary":
        """Union of two libraries; on shared keys the shorter feasible pulse wins."""
        if other.policy != self.policy or other.model_fingerprint != self.model_fingerprint:
            raise LibraryError("cannot merge libraries built for different policies or models")
        out = PulseLibrary(self.policy, self.model_fingerprint, dict(self.entries), self.created, dict(self.meta))
        for key, entry in other.entries.items():
            mine = out.entries.get(key)
            if mine is None:
                out.entries[key] = entry
                continue
            pick = mine
            if entry.feasible and (not mine.feasible or entry.latency < mine.latency):
                pick = entry
            out.entries[key] = dataclasses.replace(
                pick, frequency=mine.frequency + entry.frequency,
                programs=sorted(set(mine.programs) | set(entry.programs)))
        return out

    # ------------------------------------------------------------ persistence

    def to_dict(self) -> dict:
        return {
            "format": FORMAT_VERSION,
            "header": {"policy": self.policy.label, "model_fingerprint": self.model_fingerprint,
                       "created": self.created},
            "meta": self.meta,
            "entries": [self.entries[k].to_dict() for k in sorted(self.entries)],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.write_text(self.dumps())
        return path

    @classmethod
    def from_dict(cls, data: dict, expected_fingerprint: str | None = None) -> "PulseLibrary":
        header = data["header"]
        fp = header["model_fingerprint"]
        if expected_fingerprint is not None and fp != expected_fingerprint:
            raise FingerprintMismatch(
                f"library was built for model {fp}, current model is {expected_fingerprint}")
        entries = [LibraryEntry.from_dict(e) for e in data["entries"]]
        return cls(GroupingPolicy.from_label(header["policy"]), fp, {e.key: e for e in entries},
                   header.get("created", ""), data.get("meta", {}))

    @classmethod
    def load(cls, path: str | Path, expected_fingerprint: str | None = None) -> "PulseLibrary":
        return cls.from_dict(json.loads(Path(path).read_text()), expected_fingerprint)


def split_corpus(programs: Sequence[Circuit], frac: float = 1 / 3,
                 seed: int = 0) -> tuple[list[Circuit], list[Circuit]]:
    """Seeded (profiling, held-out) split; programs are sorted by name first."""
    if not programs:
        raise LibraryError("corpus is empty")
    ordered = sorted(programs, key=lambda c: c.name)
    count = min(len(ordered), max(1, round(frac * len(ordered))))
    picked = set(np.random.default_rng(seed).choice(len(ordered), count, replace=False).tolist())
    profile = [c for i, c in enumerate(ordered) if i in picked]
    held_out = [c for i, c in enumerate(ordered) if i not in picked]
    return profile, held_out


def _as_grouped(program, policy, topo, crosstalk_on, mapper) -> GroupedProgram:
    if isinstance(program, GroupedProgram):
        return program
    return group_program(program, policy, topo, crosstalk_on=crosstalk_on, mapper=mapper)


def precompile(corpus: Sequence[Circuit | GroupedProgram], policy: GroupingPolicy | str,
               config: ModelConfig | None = None, budget: OptBudget | None = None,
               topo: DeviceTopology | None = None, workers: int = 1,
               fn: Similarity | str = Similarity.D3_TRACE, alpha: float = 1.0, seed: int = 0,
               crosstalk_on: bool = True, mapper: MapperConfig | None = None,
               base: PulseLibrary | None = None) -> tuple[PulseLibrary, SynthesisResult]:
    """Group every corpus program, pool and deduplicate the groups, synthesize them.

    Synthesis runs through the similarity scheduler.  A group that stays
    infeasible is kept as an entry without a pulse.  Keys already covered
    by ``base`` are copied instead of resynthesized.
    """
    if not corpus:
        raise LibraryError("corpus is empty")
    policy = GroupingPolicy.from_label(policy) if isinstance(policy, str) else policy
    config = config or ModelConfig()
    grouped = [_as_grouped(p, policy, topo, crosstalk_on, mapper) for p in corpus]
    for gp in grouped:
        if gp.policy != policy:
            raise LibraryError(f"{gp.name} was grouped under {gp.policy}, not {policy}")

    freq: dict[str, int] = {}
    programs: dict[str, set[str]] = {}
    first = {}
    for gp in grouped:
        for grp, key in zip(gp.groups, gp.keys()):
            freq[key] = freq.get(key, 0) + 1
            programs.setdefault(key, set()).add(gp.name)
            first.setdefault(key, grp)

    result = compile_uncovered(list(first.values()), base, config, fn, workers, budget, alpha, seed)
    lib = PulseLibrary(policy, config.fingerprint(),
                       created=_dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
                       meta={"programs": sorted(gp.name for gp in grouped), "similarity": str(Similarity(fn).value),
                             "seed": seed, "total_iterations": result.total_iterations})
    for key in sorted(first):
        if base is not None and base.covers(key):
            old = base.entries[key]
            lib.entries[key] = LibraryEntry(key, old.unitary, old.pulse, freq[key], sorted(programs[key]))
            continue
        lib.entries[key] = LibraryEntry(key, result.unitaries[key], result.pulses.get(key), freq[key],
                                        sorted(programs[key]), result.infeasible.get(key))
    return lib, result


def coverage(program: Circuit | GroupedProgram, lib: PulseLibrary, unique: bool = False,
             topo: DeviceTopology | None = None, crosstalk_on: bool = True,
             mapper: MapperConfig | None = None) -> float:
    """Fraction of the program's groups that have a pulse in the library.

    Groups are counted with multiplicity unless ``unique`` is set.  A
    program with no groups is fully covered.
    """
    if isinstance(program, GroupedProgram):
        if program.policy != lib.policy:
            raise LibraryError(f"program grouped under {program.policy}, library is {lib.policy}")
        gp = program
    else:
        gp = group_program(program, lib.policy, topo, crosstalk_on=crosstalk_on, mapper=mapper)
    keys = gp.keys()
    if unique:
        keys = sorted(set(keys))
    if not keys:
        return 1.0
    return sum(lib.covers(k) for k in keys) / len(keys)


def hot_entry(lib: PulseLibrary) -> LibraryEntry:
    """Most frequent entry; ties go to the smaller key."""
    return min(lib.entries.values(), key=lambda e: (-e.frequency, e.key))


def optimize_hot_group(lib: PulseLibrary, extra_budget: OptBudget | None = None,
                       config: ModelConfig | None = None, restarts: int = 3,
                       iteration_factor: int = 4) -> tuple[PulseLibrary, bool]:
    """Spend extra effort on the most frequent group.

    The search runs on a grid of half the original time step, with
    ``iteration_factor`` times the iteration cap, from the current pulse and
    from ``restarts`` random starts.  The entry is replaced only by a pulse
    that is strictly shorter and still meets the infidelity target.
    Returns the (possibly unchanged) library and whether it changed.
    """
    if not lib.entries:
        raise LibraryError("library is empty")
    config = config or ModelConfig()
    if config.fingerprint() != lib.model_fingerprint:
        raise FingerprintMismatch("model config does not match the library")
    entry = hot_entry(lib)
    if not entry.feasible or entry.latency == 0 or is_identity_up_to_phase(entry.unitary):
        return lib, False
    base = extra_budget or OptBudget()
    budget = dataclasses.replace(base, max_iterations=base.max_iterations * iteration_factor)
    fine = ControlModel.build(entry.num_qubits, dataclasses.replace(config, dt=config.dt / 2))
    hi = 2 * entry.pulse.steps
    best: Pulse | None = None
    starts: list[tuple[Pulse | None, int]] = [(entry.pulse, 0)] + [(None, s) for s in range(restarts)]
    for init, seed in starts:
        try:
            pulse, _ = binary_search_latency(fine, entry.unitary, budget, init=init, key=entry.key,
                                             seed=seed, hi_steps=hi, max_doublings=0)
        except InfeasibleError:
            continue
        if feasible(pulse, budget) and (best is None or pulse.duration < best.duration):
            best = pulse
    if best is None or best.duration >= entry.latency - 1e-9:
        return lib, False
    out = PulseLibrary(lib.policy, lib.model_fingerprint, dict(lib.entries), lib.created, dict(lib.meta))
    out.entries[entry.key] = dataclasses.replace(entry, pulse=best)
    log.info("hot group %s: %.2f ns -> %.2f ns", entry.key, entry.latency, best.duration)
    return out, True


def corpus_programs(paths: Iterable[Path]) -> list[Circuit]:
    from accqoc.circuit import load_qasm
    return [load_qasm(p) for p in sorted(paths)]
