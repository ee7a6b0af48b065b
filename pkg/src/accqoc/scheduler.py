"""Similarity-ordered synthesis of groups that have no library pulse.

Groups of the same width form a complete graph weighted by a matrix
distance, with the identity as an extra vertex.  Prim's algorithm grown
from the identity yields both a minimum spanning tree and an order in which
every group can start its optimization from the pulse of its tree parent.
The tree is then cut into ``k`` connected parts of balanced weight, one per
worker, and each part is synthesized sequentially.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from accqoc.grouping import GateGroup, canonical_form, group_key
from accqoc.qoc import (ControlModel, InfeasibleError, ModelConfig, OptBudget, Pulse,
                        binary_search_latency)
from accqoc.unitary import Similarity, similarity

log = logging.getLogger(__name__)

IDENTITY = "IDENTITY"


def identity_vertex(num_qubits: int) -> str:
    return f"{IDENTITY}/{num_qubits}q"


def is_identity_vertex(v: str) -> bool:
    return v.startswith(IDENTITY)


@dataclass
class SimilarityGraph:
    """Complete graph over the groups of one width; vertex 0 is the identity."""

    num_qubits: int
    vertices: list[str]
    unitaries: list[np.ndarray]
    weights: np.ndarray
    fn: Similarity = Similarity.D3_TRACE

    @property
    def identity(self) -> str:
        return self.vertices[0]

    def index(self, v: str) -> int:
        return self.vertices.index(v)

    def weight(self, a: str, b: str) -> float:
        if a == b:
            raise ValueError("self-loop weight is undefined")
        return float(self.weights[self.index(a), self.index(b)])

    def __len__(self) -> int:
        return len(self.vertices)


def _representatives(groups: Sequence[GateGroup]) -> dict[str, np.ndarray]:
    reps: dict[str, np.ndarray] = {}
    for g in groups:
        key, rep, _ = canonical_form(g.unitary())
        g.key = key
        reps.setdefault(key, rep)
    return reps


def build_sg_from_unitaries(unitaries: Mapping[str, np.ndarray], fn: Similarity | str = Similarity.D3_TRACE,
                            num_qubits: int | None = None) -> SimilarityGraph:
    fn = Similarity(fn)
    keys = sorted(unitaries)
    dims = {unitaries[k].shape[0] for k in keys}
    if len(dims) > 1:
        raise ValueError("a similarity graph holds groups of a single width")
    if num_qubits is None:
        num_qubits = int(np.log2(dims.pop())) if dims else 1
    mats = [np.eye(2 ** num_qubits, dtype=complex)] + [unitaries[k] for k in keys]
    n = len(mats)
    w = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            w[i, j] = w[j, i] = similarity(mats[i], mats[j], fn)
    return SimilarityGraph(num_qubits, [identity_vertex(num_qubits)] + keys, mats, w, fn)


def build_sgs(groups: Sequence[GateGroup], fn: Similarity | str = Similarity.D3_TRACE) -> dict[int, SimilarityGraph]:
    """One graph per group width (1 or 2 qubits); widths never share a graph."""
    reps = _representatives(groups)
    by_width: dict[int, dict[str, np.ndarray]] = {}
    for key, u in reps.items():
        by_width.setdefault(int(np.log2(len(u))), {})[key] = u
    return {nq: build_sg_from_unitaries(us, fn, nq) for nq, us in sorted(by_width.items())}


def build_sg(groups: Sequence[GateGroup], fn: Similarity | str = Similarity.D3_TRACE) -> SimilarityGraph:
    """Similarity graph of same-width groups (an identity-only graph when empty)."""
    sgs = build_sgs(groups, fn)
    if len(sgs) > 1:
        raise ValueError("groups of mixed width; use build_sgs")
    return next(iter(sgs.values())) if sgs else build_sg_from_unitaries({}, fn, 1)


@dataclass
class CompileSequence:
    """Vertices in Prim selection order with their tree parent (donor)."""

    items: list[tuple[str, str]] = field(default_factory=list)
    edge_weight: dict[str, float] = field(default_factory=dict)

    @property
    def keys(self) -> list[str]:
        return [k for k, _ in self.items]

    @property
    def donors(self) -> dict[str, str]:
        return dict(self.items)

    @property
    def total_weight(self) -> float:
        return float(sum(self.edge_weight.values()))

    def __len__(self) -> int:
        return len(self.items)

    def to_dict(self) -> dict:
        return {"sequence": [{"key": k, "donor": d, "weight": self.edge_weight[k]} for k, d in self.items]}


def mst_sequence(sg: SimilarityGraph) -> CompileSequence:
    """Prim's algorithm from the identity vertex.

    The next vertex is the one with the smallest connection weight, ties
    going to the lexicographically smaller key.  A vertex keeps the first
    donor that reached its current best weight.
    """
    n = len(sg)
    in_tree = np.zeros(n, dtype=bool)
    in_tree[0] = True
    best = sg.weights[0].copy()
    parent = np.zeros(n, dtype=int)
    seq = CompileSequence()
    order = sorted(range(1, n), key=lambda i: sg.vertices[i])
    for _ in range(n - 1):
        pick = min((i for i in order if not in_tree[i]), key=lambda i: best[i])
        in_tree[pick] = True
        seq.items.append((sg.vertices[pick], sg.vertices[parent[pick]]))
        seq.edge_weight[sg.vertices[pick]] = float(best[pick])
        for i in order:
            if not in_tree[i] and sg.weights[pick, i] < best[i]:
                best[i] = sg.weights[pick, i]
                parent[i] = pick
    return seq


def merge_sequences(seqs: Sequence[CompileSequence]) -> CompileSequence:
    """Interleave per-width sequences round-robin."""
    out = CompileSequence()
    longest = max((len(s) for s in seqs), default=0)
    for i in range(longest):
        for s in seqs:
            if i < len(s):
                key, donor = s.items[i]
                out.items.append((key, donor))
                out.edge_weight[key] = s.edge_weight[key]
    return out


def shift_weights(sequence: CompileSequence, sg: SimilarityGraph | None = None,
                  alpha: float = 1.0) -> dict[str, float]:
    """Move each tree edge's weight onto the vertex it brought into the tree.

    The first vertex selected from each identity is scaled by ``alpha``,
    standing in for the cost of training it from scratch.
    """
    weights: dict[str, float] = {}
    seen_roots: set[str] = set()
    for key, donor in sequence.items:
        w = sequence.edge_weight[key] if sg is None else sg.weight(donor, key)
        if is_identity_vertex(donor) and donor not in seen_roots:
            seen_roots.add(donor)
            w *= alpha
        weights[key] = float(w)
    return weights


@dataclass
class Partition:
    parts: list[list[str]]
    node_weights: dict[str, float]

    def part_weight(self, part: Sequence[str]) -> float:
        return float(sum(self.node_weights.get(v, 0.0) for v in part))

    @property
    def max_weight(self) -> float:
        return max((self.part_weight(p) for p in self.parts), default=0.0)

    def to_dict(self) -> dict:
        return {"parts": [{"keys": p, "weight": self.part_weight(p)} for p in self.parts]}


def _children(parent: Mapping[str, str | None]) -> tuple[list[str], dict[str, list[str]]]:
    kids: dict[str, list[str]] = {v: [] for v in parent}
    roots = []
    for v, p in parent.items():
        if p is None:
            roots.append(v)
        else:
            kids.setdefault(p, []).append(v)
            kids.setdefault(v, [])
    for v in kids:
        kids[v].sort()
    return sorted(roots), kids


def _postorder(roots, kids) -> list[str]:
    out, stack = [], [(r, False) for r in reversed(roots)]
    while stack:
        v, done = stack.pop()
        if done:
            out.append(v)
            continue
        stack.append((v, True))
        stack.extend((c, False) for c in reversed(kids[v]))
    return out


def _cuts_for_bound(order, kids, w, bound) -> tuple[int, set[str]] | None:
    """Fewest edge cuts so every part weighs at most ``bound``.

    Bottom-up: a vertex keeps the residual weight of its uncut children
    and cuts the heaviest ones until it fits.  Returns (cuts, cut vertices)
    where a cut vertex is the top of a part detached from its parent.
    """
    residual: dict[str, float] = {}
    cut: set[str] = set()
    for v in order:
        if w[v] > bound:
            return None
        r = w[v]
        res = sorted(((residual[c], c) for c in kids[v]), reverse=True)
        r += sum(x for x, _ in res)
        for x, c in res:
            if r <= bound:
                break
            r -= x
            cut.add(c)
        residual[v] = r
    return len(cut), cut


def _parts_from_cuts(roots, kids, cut) -> list[list[str]]:
    parts = []
    tops = list(roots) + sorted(cut)
    for top in tops:
        part, stack = [], [top]
        while stack:
            v = stack.pop()
            part.append(v)
            stack.extend(c for c in kids[v] if c not in cut)
        parts.append(sorted(part))
    return parts


def partition_tree(tree: CompileSequence | Mapping[str, str | None], node_weights: Mapping[str, float],
                   k: int) -> Partition:
    """Cut a tree into ``k`` connected parts minimizing the heaviest part.

    ``tree`` is a compile sequence (identity vertices join the tree with
    weight 0 and are dropped from the parts) or a child -> parent map with
    ``None`` at the root(s).  The bottleneck is found by bisection over the
    exact minimum-cut count for a bound, so the result is optimal to
    floating-point precision at every tree size.
    """
    if isinstance(tree, CompileSequence):
        parent: dict[str, str | None] = {}
        for key, donor in tree.items:
            parent[key] = donor
            if is_identity_vertex(donor):
                parent[donor] = IDENTITY  # a shared root joins the per-width trees
        if parent:
            parent[IDENTITY] = None
    else:
        parent = dict(tree)
    w = {v: float(node_weights.get(v, 0.0)) for v in parent}
    real = [v for v in parent if not is_identity_vertex(v)]
    if k < 1:
        raise ValueError("k must be at least 1")
    if k > len(real):
        raise ValueError(f"cannot cut {len(real)} vertices into {k} parts")
    if any(x < 0 for x in w.values()):
        raise ValueError("node weights must be nonnegative")
    roots, kids = _children(parent)
    order = _postorder(roots, kids)
    # forests: each extra root is a free part
    budget = k - len(roots)

    lo, hi = max(w.values(), default=0.0), sum(w.values())
    if _cuts_for_bound(order, kids, w, lo)[0] > budget:
        for _ in range(200):
            mid = (lo + hi) / 2
            if mid <= lo or mid >= hi:
                break
            if _cuts_for_bound(order, kids, w, mid)[0] <= budget:
                hi = mid
            else:
                lo = mid
        bound = hi
    else:
        bound = lo
    _, cut = _cuts_for_bound(order, kids, w, bound)
    parts = [[v for v in p if not is_identity_vertex(v)] for p in _parts_from_cuts(roots, kids, cut)]
    parts = [p for p in parts if p]
    parts = _split_to(parts, parent, w, k)
    return Partition(parts, {v: w[v] for v in real})


def _split_to(parts, parent, w, k):
    """Split parts (never raising the heaviest) until there are ``k``."""
    parts = [list(p) for p in parts]
    while len(parts) < k:
        splittable = [p for p in parts if len(p) > 1]
        target = max(splittable, key=lambda p: (sum(w[v] for v in p), p))
        members = set(target)
        # detach the deepest member whose parent is also in the part
        ranked = list(reversed(_postorder_in(target, parent)))
        top = next((v for v in ranked if parent[v] in members), ranked[0])
        sub = _subtree_in(top, members, parent)
        parts.remove(target)
        parts += [sorted(members - sub), sorted(sub)]
    return sorted(parts, key=lambda p: p[0])


def _postorder_in(part, parent):
    depth = {}
    for v in part:
        d, u = 0, v
        while parent.get(u) is not None:
            u = parent[u]
            d += 1
        depth[v] = d
    return sorted(part, key=lambda v: (depth[v], v))


def _subtree_in(top, members, parent):
    sub = {top}
    changed = True
    while changed:
        changed = False
        for v in members:
            if v not in sub and parent.get(v) in sub:
                sub.add(v)
                changed = True
    return sub


# ---------------------------------------------------------------- synthesis

@dataclass
class SynthesisResult:
    """Outcome of synthesizing a set of groups."""

    pulses: dict[str, Pulse] = field(default_factory=dict)
    infeasible: dict[str, float] = field(default_factory=dict)
    iterations: dict[str, int] = field(default_factory=dict)
    unitaries: dict[str, np.ndarray] = field(default_factory=dict)
    sequence: CompileSequence = field(default_factory=CompileSequence)
    partition: Partition | None = None
    wall_seconds: float = 0.0

    @property
    def total_iterations(self) -> int:
        return int(sum(self.iterations.values()))

    def pulse_list(self) -> list[Pulse]:
        return [self.pulses[k] for k in self.sequence.keys if k in self.pulses]


def _synthesize_part(task) -> list[tuple[str, Pulse | None, float, int]]:
    keys, donors, unitaries, config, budget, seed, warm = task
    models = {nq: ControlModel.build(nq, config) for nq in (1, 2)}
    done: dict[str, Pulse] = {}
    out = []
    members = set(keys)
    for key in keys:
        u = unitaries[key]
        model = models[int(np.log2(len(u)))]
        donor = donors.get(key)
        init = done.get(donor) if warm and donor in members else None
        if init is not None and init.steps == 0:
            init = None  # an identity donor carries no pulse shape
        try:
            pulse, _ = binary_search_latency(model, u, budget, init=init, key=key, seed=seed,
                                             hint_steps=init.steps if init is not None else None)
            done[key] = pulse
            out.append((key, pulse, pulse.duration, pulse.iterations_used))
        except InfeasibleError as exc:
            log.warning("%s", exc)
            out.append((key, None, exc.duration, getattr(exc, "iterations", 0)))
    return out


def compile_uncovered(groups: Sequence[GateGroup], lib=None, config: ModelConfig | None = None,
                      fn: Similarity | str = Similarity.D3_TRACE, workers: int = 1,
                      budget: OptBudget | None = None, alpha: float = 1.0, seed: int = 0,
                      warm_start: bool = True) -> SynthesisResult:
    """Synthesize every distinct group whose key has no pulse in ``lib``.

    Groups are ordered along the similarity tree and split across
    ``workers`` parts.  Inside a part each group starts from its donor's
    pulse when that donor was synthesized earlier in the same part, and from
    small random amplitudes otherwise.  ``warm_start=False`` gives the
    identity-start baseline with the same ordering.
    """
    started = time.monotonic()
    config = config or ModelConfig()
    budget = budget or OptBudget()
    pending = [g for g in groups if lib is None or not lib.covers(group_key(g))]
    sgs = build_sgs(pending, fn)
    result = SynthesisResult()
    if not pending:
        return result
    seqs = [mst_sequence(sg) for sg in sgs.values()]
    seq = merge_sequences(seqs)
    for sg in sgs.values():
        for v, u in zip(sg.vertices[1:], sg.unitaries[1:]):
            result.unitaries[v] = u
    node_w = {}
    for s in seqs:
        node_w.update(shift_weights(s, alpha=alpha))
    k = max(1, min(workers, len(seq)))
    partition = partition_tree(seq, node_w, k)
    position = {key: i for i, key in enumerate(seq.keys)}
    donors = seq.donors
    tasks = []
    for part in partition.parts:
        ordered = sorted(part, key=position.__getitem__)
        tasks.append((ordered, donors, {key: result.unitaries[key] for key in ordered},
                      config, budget, seed, warm_start))
    if k == 1:
        outcomes = [_synthesize_part(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=k) as pool:
            outcomes = list(pool.map(_synthesize_part, tasks))
    for rows in outcomes:
        for key, pulse, duration, iters in rows:
            result.iterations[key] = iters
            if pulse is None:
                result.infeasible[key] = duration
            else:
                result.pulses[key] = pulse
    result.sequence = seq
    result.partition = partition
    result.wall_seconds = time.monotonic() - started
    return result
