"""Gate grouping under the ``{map,swap}2b{n}l`` policies.

Grouping runs in two passes over the DAG.  The bit pass walks gates in
topological order and greedily attaches each gate to the groups of its
predecessors while the group stays on at most two qubits; the layer pass
cuts every resulting group into pieces that span at most ``n`` consecutive
depth levels.  Groups are then keyed by their unitary, modulo global phase
and exchange of the two qubits, so permuted copies deduplicate.
"""

from __future__ import annotations

import hashlib
import heapq
import json
from dataclasses import dataclass, field

import numpy as np

from accqoc.circuit import Circuit, CircuitDag, Gate, build_dag
from accqoc.mapper import (DeviceTopology, MapperConfig, MappingState, cancel_cx_pairs,
                           decompose_swaps, map_circuit)
from accqoc.unitary import SWAP, group_unitary, normalize_phase


class GroupingError(RuntimeError):
    pass


POLICY_LABELS = ("map2b2l", "map2b3l", "map2b4l", "swap2b2l", "swap2b3l", "swap2b4l")


@dataclass(frozen=True)
class GroupingPolicy:
    swap_handling: str  # "map": SWAP -> 3 CX before grouping; "swap": native SWAP groups
    layer_constraint: int
    bit_constraint: int = 2

    def __post_init__(self):
        if self.swap_handling not in ("map", "swap"):
            raise ValueError(f"swap handling must be 'map' or 'swap', not {self.swap_handling!r}")
        if self.bit_constraint != 2 or self.layer_constraint not in (2, 3, 4):
            raise ValueError("policies are 2 qubits by 2, 3 or 4 layers")

    @property
    def label(self) -> str:
        return f"{self.swap_handling}2b{self.layer_constraint}l"

    @classmethod
    def from_label(cls, label: str) -> "GroupingPolicy":
        if label not in POLICY_LABELS:
            raise ValueError(f"unknown policy {label!r}; expected one of {', '.join(POLICY_LABELS)}")
        return cls(label[:-4], int(label[-2]))

    def __str__(self) -> str:
        return self.label


@dataclass
class GateGroup:
    gates: list[Gate]
    qubits: tuple[int, ...]
    layer_span: int
    source_depth_start: int
    key: str | None = None

    @property
    def num_qubits(self) -> int:
        return len(self.qubits)

    def unitary(self) -> np.ndarray:
        return group_unitary(self.gates, self.qubits)

    def to_json(self) -> str:
        return json.dumps({
            "key": self.key,
            "gates": [[g.kind, list(g.qubits), list(g.params)] for g in self.gates],
            "qubits": list(self.qubits),
            "layer_span": self.layer_span,
        })


# ---------------------------------------------------------------- bit pass

@dataclass
class _Open:
    members: list[int]
    # qubit -> (first position, last position, count) in that qubit's timeline
    span: dict[int, tuple[int, int, int]]
    frozen: bool = False


def _merged_span(spans, node_q, node_pos):
    out: dict[int, tuple[int, int, int]] = {}
    for span in spans:
        for q, (lo, hi, cnt) in span.items():
            if q in out:
                a, b, c = out[q]
                out[q] = (min(a, lo), max(b, hi), c + cnt)
            else:
                out[q] = (lo, hi, cnt)
    for q, pos in zip(node_q, node_pos):
        if q in out:
            a, b, c = out[q]
            out[q] = (min(a, pos), max(b, pos), c + 1)
        else:
            out[q] = (pos, pos, 1)
    return out


def _contiguous(span) -> bool:
    return all(hi - lo + 1 == cnt for lo, hi, cnt in span.values())


def bit_divide(dag: CircuitDag, bc: int = 2, native_swap: bool = False) -> list[list[int]]:
    """Greedy predecessor merging under the qubit constraint.

    Each gate, in topological order, joins the union of both predecessor
    groups if that is legal, else one predecessor group, else starts a new
    group.  A merge is legal when the result touches at most ``bc`` qubits
    and, on every qubit, its gates are consecutive in that qubit's timeline.
    With ``native_swap`` every SWAP is a group of its own.
    """
    gates = dag.circuit.gates
    timeline_len: dict[int, int] = {}
    groups: list[_Open] = []
    group_of: dict[int, int] = {}
    alive: list[bool] = []

    for node in dag.topological_order():
        g = gates[node]
        pos = [timeline_len.get(q, 0) for q in g.qubits]
        for q in g.qubits:
            timeline_len[q] = timeline_len.get(q, 0) + 1
        pred_groups = []
        for p in dag.wire_pred[node]:
            if p is not None and group_of[p] not in pred_groups:
                pred_groups.append(group_of[p])
        candidates: list[list[int]] = []
        if not (native_swap and g.kind == "swap"):
            usable = [gi for gi in pred_groups if not groups[gi].frozen]
            if len(pred_groups) == 2 and len(usable) == 2:
                candidates.append(usable)
            candidates += [[gi] for gi in usable]
        placed = False
        for cand in candidates:
            span = _merged_span([groups[gi].span for gi in cand], g.qubits, pos)
            if len(span) <= bc and _contiguous(span):
                keep = cand[0]
                for other in cand[1:]:
                    groups[keep].members += groups[other].members
                    for m in groups[other].members:
                        group_of[m] = keep
                    alive[other] = False
                groups[keep].members.append(node)
                groups[keep].span = span
                group_of[node] = keep
                placed = True
                break
        if not placed:
            span = {q: (p, p, 1) for q, p in zip(g.qubits, pos)}
            groups.append(_Open([node], span, frozen=native_swap and g.kind == "swap"))
            alive.append(True)
            group_of[node] = len(groups) - 1
    return [sorted(grp.members) for grp, ok in zip(groups, alive) if ok]


# ---------------------------------------------------------------- layer pass

def _qubit_order(gates: list[Gate]) -> tuple[int, ...]:
    seen: list[int] = []
    for g in gates:
        for q in g.qubits:
            if q not in seen:
                seen.append(q)
    return tuple(seen)


def layer_divide(large_groups: list[list[int]], dag: CircuitDag, lc: int) -> list[GateGroup]:
    """Cut each group into pieces spanning at most ``lc`` consecutive depths.

    Depths are measured from the shallowest gate of the group, so piece ``k``
    holds the gates with ``k*lc <= depth - start < (k+1)*lc``.
    """
    gates = dag.circuit.gates
    out: list[GateGroup] = []
    for members in large_groups:
        start = min(dag.depth[m] for m in members)
        chunks: dict[int, list[int]] = {}
        for m in sorted(members):
            chunks.setdefault((dag.depth[m] - start) // lc, []).append(m)
        for idx in sorted(chunks):
            ids = chunks[idx]
            depths = [dag.depth[m] for m in ids]
            gs = [gates[m] for m in ids]
            out.append(GateGroup(gs, _qubit_order(gs), max(depths) - min(depths) + 1, min(depths)))
    return out


# ---------------------------------------------------------------- keys

def _fingerprint(u: np.ndarray) -> bytes:
    v = np.round(normalize_phase(u), 8) + 0.0  # + 0.0 folds -0.0
    return np.concatenate([v.real.ravel(), v.imag.ravel()]).round(8).tobytes()


def canonical_form(u: np.ndarray) -> tuple[str, np.ndarray, bool]:
    """(key, representative unitary, whether the representative swaps the qubits)."""
    candidates = [(_fingerprint(u), u, False)]
    if u.shape == (4, 4):
        swapped = SWAP @ u @ SWAP
        candidates.append((_fingerprint(swapped), swapped, True))
    blob, rep, permuted = min(candidates, key=lambda c: c[0])
    n = int(np.log2(len(u)))
    return f"{n}q-{hashlib.sha1(blob).hexdigest()[:16]}", normalize_phase(rep), permuted


def group_key(group: GateGroup) -> str:
    if group.key is None:
        group.key = canonical_form(group.unitary())[0]
    return group.key


def dedup(groups: list[GateGroup]) -> tuple[list[GateGroup], list[str]]:
    """Unique groups (first occurrence kept) and the key of every input group."""
    keys = [group_key(g) for g in groups]
    seen: set[str] = set()
    unique = []
    for g, k in zip(groups, keys):
        if k not in seen:
            seen.add(k)
            unique.append(g)
    return unique, keys


# ---------------------------------------------------------------- group DAG

@dataclass
class GroupDag:
    groups: list[GateGroup]
    preds: list[list[int]]
    succs: list[list[int]]
    order: list[int] = field(default_factory=list)

    @property
    def edges(self) -> list[tuple[int, int]]:
        return [(p, s) for s, ps in enumerate(self.preds) for p in ps]


def build_group_dag(groups: list[GateGroup], dag: CircuitDag) -> GroupDag:
    owner = {}
    for gi, grp in enumerate(groups):
        for g in grp.gates:
            owner[g.id] = gi
    preds: list[set[int]] = [set() for _ in groups]
    for p, s in dag.edges:
        a, b = owner[p], owner[s]
        if a != b:
            preds[b].add(a)
    succs: list[list[int]] = [[] for _ in groups]
    for b, ps in enumerate(preds):
        for a in ps:
            succs[a].append(b)
    indeg = [len(ps) for ps in preds]
    first = [min(g.id for g in grp.gates) for grp in groups]
    heap = [(first[i], i) for i in range(len(groups)) if indeg[i] == 0]
    heapq.heapify(heap)
    order = []
    while heap:
        _, i = heapq.heappop(heap)
        order.append(i)
        for j in succs[i]:
            indeg[j] -= 1
            if indeg[j] == 0:
                heapq.heappush(heap, (first[j], j))
    if len(order) != len(groups):
        raise GroupingError("group dependencies form a cycle")
    return GroupDag(groups, [sorted(p) for p in preds], [sorted(s) for s in succs], order)


def group_circuit(circuit: Circuit, layer_constraint: int, bit_constraint: int = 2,
                  native_swap: bool = False) -> tuple[GroupDag, CircuitDag]:
    dag = build_dag(circuit)
    large = bit_divide(dag, bit_constraint, native_swap)
    groups = layer_divide(large, dag, layer_constraint)
    gdag = build_group_dag(groups, dag)
    gdag.groups = [groups[i] for i in gdag.order]
    return build_group_dag(gdag.groups, dag), dag


@dataclass
class GroupedProgram:
    name: str
    policy: GroupingPolicy
    circuit: Circuit            # hardware-compatible circuit that was grouped
    group_dag: GroupDag
    mapping: MappingState | None

    @property
    def groups(self) -> list[GateGroup]:
        return self.group_dag.groups

    def keys(self) -> list[str]:
        return [group_key(g) for g in self.groups]


def group_program(circuit: Circuit, policy: GroupingPolicy, topo: DeviceTopology | None,
                  crosstalk_on: bool = True, mapper: MapperConfig | None = None) -> GroupedProgram:
    """Route (if a topology is given) and group one program.

    ``map`` policies expand every SWAP into three CX, cancel adjacent CX
    pairs and group the result.  ``swap`` policies keep each SWAP as a
    native single-gate group and group the rest of the routed circuit.
    """
    state = None
    routed = circuit
    if topo is not None:
        routed, state = map_circuit(circuit, topo, crosstalk_on=crosstalk_on, config=mapper)
        if policy.swap_handling == "map":
            routed = cancel_cx_pairs(decompose_swaps(routed, topo))
    elif policy.swap_handling == "map" and any(g.kind == "swap" for g in circuit.gates):
        raise GroupingError("map policies need a topology to decompose SWAP gates")
    gdag, _ = group_circuit(routed, policy.layer_constraint, policy.bit_constraint,
                            native_swap=policy.swap_handling == "swap")
    return GroupedProgram(circuit.name, policy, routed, gdag, state)
