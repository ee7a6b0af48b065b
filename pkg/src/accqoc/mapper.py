"""SWAP insertion by per-layer A* search with an optional crosstalk term.

Layers are the ASAP depth levels of the gate DAG.  Before each layer the
search looks for the cheapest sequence of SWAPs after which every two-qubit
gate of the layer sits on coupled physical qubits.  The cost of a state is
``swaps + h(sigma)`` where ``h`` sums gate distances in the current layer
and, with crosstalk enabled, counts pairs of two-qubit gates that land close
to each other on the chip.
"""

from __future__ import annotations

import heapq
import json
import logging
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import shortest_path

from accqoc.circuit import Circuit, CircuitDag, Gate, build_dag

log = logging.getLogger(__name__)


class MappingError(ValueError):
    pass


@dataclass
class DeviceTopology:
    num_qubits: int
    directed_edges: frozenset[tuple[int, int]]
    name: str = ""
    distance: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.directed_edges = frozenset(tuple(e) for e in self.directed_edges)
        for a, b in self.directed_edges:
            if not (0 <= a < self.num_qubits and 0 <= b < self.num_qubits) or a == b:
                raise ValueError(f"bad coupling edge {(a, b)}")
        rows = [a for a, b in self.directed_edges] + [b for a, b in self.directed_edges]
        cols = [b for a, b in self.directed_edges] + [a for a, b in self.directed_edges]
        graph = csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(self.num_qubits,) * 2)
        dist = shortest_path(graph, unweighted=True, directed=False)
        if np.isinf(dist).any():
            raise ValueError("coupling graph is not connected")
        self.distance = dist.astype(int)
        self.undirected_edges = sorted({tuple(sorted(e)) for e in self.directed_edges})
        self._adj = {q: set() for q in range(self.num_qubits)}
        for a, b in self.undirected_edges:
            self._adj[a].add(b)
            self._adj[b].add(a)

    def adjacent(self, a: int, b: int) -> bool:
        return b in self._adj[a]

    def neighbors(self, q: int) -> set[int]:
        return self._adj[q]

    @classmethod
    def from_dict(cls, data: dict) -> "DeviceTopology":
        return cls(int(data["n"]), frozenset(tuple(e) for e in data["edges"]), data.get("name", ""))

    @classmethod
    def load(cls, path: str | Path) -> "DeviceTopology":
        return cls.from_dict(json.loads(Path(path).read_text()))

    @classmethod
    def melbourne(cls) -> "DeviceTopology":
        text = resources.files("accqoc.data").joinpath("melbourne.json").read_text()
        return cls.from_dict(json.loads(text))

    @classmethod
    def line(cls, n: int) -> "DeviceTopology":
        return cls(n, frozenset((i, i + 1) for i in range(n - 1)), f"line{n}")

    def to_dict(self) -> dict:
        return {"name": self.name, "n": self.num_qubits, "edges": sorted(map(list, self.directed_edges))}


@dataclass
class MappingState:
    initial_layout: list[int]      # logical -> physical before the first layer
    sigma: list[list[int]]         # logical -> physical in force for each layer
    inserted_swaps: list[tuple[int, tuple[int, int]]] = field(default_factory=list)
    fallback_layers: int = 0

    @property
    def final_layout(self) -> list[int]:
        return self.sigma[-1] if self.sigma else self.initial_layout


@dataclass
class MapperConfig:
    crosstalk_on: bool = True
    # two gates are "close" when some qubit pair across them is within this many hops
    close_threshold: int = 1
    crosstalk_weight: float = 0.5
    lookahead_weight: float = 0.5
    max_expansions: int = 100_000
    repair_direction: bool = True


def layerize(dag: CircuitDag) -> list[list[Gate]]:
    layers: list[list[Gate]] = [[] for _ in range(dag.max_depth)]
    for g in dag.circuit.gates:
        layers[dag.depth[g.id] - 1].append(g)
    return layers


def gates_close(p: tuple[int, ...], q: tuple[int, ...], topo: DeviceTopology, threshold: int = 1) -> bool:
    return min(topo.distance[a, b] for a in p for b in q) <= threshold


def crosstalk_pairs(phys_gates: list[tuple[int, ...]], topo: DeviceTopology, threshold: int = 1) -> int:
    count = 0
    for i in range(len(phys_gates)):
        for j in range(i + 1, len(phys_gates)):
            if gates_close(phys_gates[i], phys_gates[j], topo, threshold):
                count += 1
    return count


def heuristic_cost(layer: list[Gate], sigma, topo: DeviceTopology, crosstalk_on: bool = True,
                   threshold: int = 1) -> float:
    """Sum of physical distances of the layer's two-qubit gates plus close pairs."""
    pairs = []
    total = 0.0
    for g in layer:
        if not g.is_two_qubit:
            continue
        try:
            a, b = sigma[g.qubits[0]], sigma[g.qubits[1]]
        except (IndexError, KeyError):
            raise MappingError(f"gate {g} uses an unmapped qubit") from None
        total += topo.distance[a, b]
        pairs.append((a, b))
    if crosstalk_on:
        total += crosstalk_pairs(pairs, topo, threshold)
    return total


def crosstalk_metric(mapped: Circuit, topo: DeviceTopology, threshold: int = 1) -> int:
    """Number of close pairs of two-qubit gates, summed over ASAP layers."""
    total = 0
    for layer in layerize(build_dag(mapped)):
        total += crosstalk_pairs([g.qubits for g in layer if g.is_two_qubit], topo, threshold)
    return total


def _two_qubit(layer: list[Gate]) -> list[tuple[int, int]]:
    return [g.qubits for g in layer if g.is_two_qubit]


def _search(layer_pairs, next_pairs, l2p: tuple[int, ...], topo: DeviceTopology,
            cfg: MapperConfig) -> tuple[list[tuple[int, int]], bool]:
    """A* over SWAP sequences; returns (swaps as physical pairs, hit_cap)."""
    dist = topo.distance

    def h(m):
        phys = [(m[a], m[b]) for a, b in layer_pairs]
        cost = sum(dist[p] - 1 for p in phys)
        if cfg.crosstalk_on:
            cost += cfg.crosstalk_weight * crosstalk_pairs(phys, topo, cfg.close_threshold)
        if next_pairs:
            ahead = [(m[a], m[b]) for a, b in next_pairs]
            cost += cfg.lookahead_weight * sum(dist[p] - 1 for p in ahead)
            if cfg.crosstalk_on:
                cost += cfg.lookahead_weight * cfg.crosstalk_weight * crosstalk_pairs(ahead, topo, cfg.close_threshold)
        return cost

    def done(m):
        return all(dist[m[a], m[b]] == 1 for a, b in layer_pairs)

    active = sorted({q for pair in layer_pairs for q in pair})
    start = tuple(l2p)
    heap = [(h(start), 0, (), start)]
    best_g = {start: 0}
    expanded = 0
    while heap:
        f, g, swaps, m = heapq.heappop(heap)
        if best_g.get(m, np.inf) < g:
            continue
        if done(m):
            return list(swaps), False
        expanded += 1
        if expanded > cfg.max_expansions:
            break
        p2l = {p: l for l, p in enumerate(m)}
        moves = set()
        for lq in active:
            pq = m[lq]
            for nb in topo.neighbors(pq):
                moves.add((min(pq, nb), max(pq, nb)))
        for a, b in sorted(moves):
            nm = list(m)
            la, lb = p2l[a], p2l[b]
            nm[la], nm[lb] = b, a
            nm = tuple(nm)
            ng = g + 1
            if ng < best_g.get(nm, np.inf):
                best_g[nm] = ng
                heapq.heappush(heap, (ng + h(nm), ng, swaps + ((a, b),), nm))
    return _greedy(layer_pairs, l2p, topo), True


def _greedy(layer_pairs, l2p, topo: DeviceTopology) -> list[tuple[int, int]]:
    """Walk each non-adjacent pair together along a shortest path."""
    m = list(l2p)
    swaps = []
    for a, b in layer_pairs:
        while topo.distance[m[a], m[b]] > 1:
            pa = m[a]
            step = min(nb for nb in topo.neighbors(pa) if topo.distance[nb, m[b]] < topo.distance[pa, m[b]])
            other = m.index(step)
            m[a], m[other] = step, pa
            swaps.append((min(pa, step), max(pa, step)))
    return swaps


def map_circuit(dag: CircuitDag | Circuit, topo: DeviceTopology, crosstalk_on: bool = True,
                seed: int | None = None, config: MapperConfig | None = None) -> tuple[Circuit, MappingState]:
    """Route a circuit onto ``topo``.

    SWAPs are emitted as native ``swap`` gates on coupled qubits.  A CX
    against the coupling direction becomes ``H H CX H H`` when
    ``config.repair_direction`` is set.  The initial layout is the identity
    unless ``seed`` is given, in which case it is a seeded permutation.
    """
    if isinstance(dag, Circuit):
        dag = build_dag(dag)
    circuit = dag.circuit
    cfg = config or MapperConfig()
    cfg = MapperConfig(**{**cfg.__dict__, "crosstalk_on": crosstalk_on})
    n_phys = topo.num_qubits
    if circuit.num_qubits > n_phys:
        raise MappingError(f"circuit needs {circuit.num_qubits} qubits, device has {n_phys}")

    if seed is None:
        l2p = list(range(n_phys))
    else:
        l2p = [int(p) for p in np.random.default_rng(seed).permutation(n_phys)]
    state = MappingState(list(l2p[:circuit.num_qubits]), [])
    out: list[Gate] = []
    layers = layerize(dag)
    for i, layer in enumerate(layers):
        pairs = _two_qubit(layer)
        nxt = _two_qubit(layers[i + 1]) if i + 1 < len(layers) else []
        if pairs:
            swaps, capped = _search(pairs, nxt, tuple(l2p), topo, cfg)
            if capped:
                state.fallback_layers += 1
                log.warning("layer %d: search cap hit, using greedy swaps", i)
            for a, b in swaps:
                out.append(Gate("swap", (a, b)))
                state.inserted_swaps.append((i, (a, b)))
                la, lb = l2p.index(a), l2p.index(b)
                l2p[la], l2p[lb] = b, a
        state.sigma.append(list(l2p[:circuit.num_qubits]))
        for g in layer:
            phys = tuple(l2p[q] for q in g.qubits)
            if g.kind == "cx" and cfg.repair_direction and phys not in topo.directed_edges:
                c, t = phys
                out += [Gate("h", (c,)), Gate("h", (t,)), Gate("cx", (t, c)), Gate("h", (c,)), Gate("h", (t,))]
            else:
                out.append(Gate(g.kind, phys, g.params))
    mapped = Circuit(out, n_phys, circuit.name)
    return mapped, state


def decompose_swaps(circuit: Circuit, topo: DeviceTopology, repair_direction: bool = True) -> Circuit:
    """Replace each SWAP by three CX, oriented along the coupling direction."""
    out: list[Gate] = []
    for g in circuit.gates:
        if g.kind != "swap":
            out.append(g)
            continue
        a, b = g.qubits
        if (a, b) not in topo.directed_edges and (b, a) in topo.directed_edges:
            a, b = b, a
        out.append(Gate("cx", (a, b)))
        if repair_direction:
            out += [Gate("h", (a,)), Gate("h", (b,)), Gate("cx", (a, b)), Gate("h", (a,)), Gate("h", (b,))]
        else:
            out.append(Gate("cx", (b, a)))
        out.append(Gate("cx", (a, b)))
    return Circuit(out, circuit.num_qubits, circuit.name)


def cancel_cx_pairs(circuit: Circuit) -> Circuit:
    """Drop pairs of identical CX gates that are adjacent on both their qubits."""
    gates = list(circuit.gates)
    changed = True
    while changed:
        changed = False
        last: dict[int, int] = {}
        keep = [True] * len(gates)
        for i, g in enumerate(gates):
            if g.kind == "cx":
                p0, p1 = last.get(g.qubits[0]), last.get(g.qubits[1])
                if p0 is not None and p0 == p1 and keep[p0] and gates[p0].kind == "cx" \
                        and gates[p0].qubits == g.qubits:
                    keep[p0] = keep[i] = False
                    changed = True
                    for q in g.qubits:
                        del last[q]
                    continue
            for q in g.qubits:
                last[q] = i
        gates = [g for g, k in zip(gates, keep) if k]
    return Circuit(gates, circuit.num_qubits, circuit.name)
