import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from accqoc.circuit import Circuit, Gate, build_dag
from accqoc.grouping import (POLICY_LABELS, GateGroup, GroupingPolicy, bit_divide, canonical_form,
                             dedup, group_circuit, group_program, layer_divide)
from accqoc.mapper import DeviceTopology
from accqoc.unitary import SWAP, circuit_unitary, embed, equal_up_to_phase
from conftest import random_circuit, random_gate


def reference_bit_divide(circuit, bc=2, native_swap=False):
    """Straight-line version of the greedy predecessor merge."""
    timeline = {}
    for g in circuit.gates:
        for q in g.qubits:
            timeline.setdefault(q, []).append(g.id)
    groups = []  # list of sets; None when merged away
    frozen = []
    owner = {}

    def legal(members):
        qubits = {q for m in members for q in circuit.gates[m].qubits}
        if len(qubits) > bc:
            return False
        for q in qubits:
            pos = [timeline[q].index(m) for m in members if q in circuit.gates[m].qubits]
            if max(pos) - min(pos) + 1 != len(pos):
                return False
        return True

    for g in circuit.gates:
        preds = []
        for q in g.qubits:
            i = timeline[q].index(g.id)
            if i > 0 and owner[timeline[q][i - 1]] not in preds:
                preds.append(owner[timeline[q][i - 1]])
        options = []
        if not (native_swap and g.kind == "swap"):
            usable = [p for p in preds if not frozen[p]]
            if len(preds) == 2 and len(usable) == 2:
                options.append(usable)
            options += [[p] for p in usable]
        for opt in options:
            members = set().union(*(groups[p] for p in opt)) | {g.id}
            if legal(members):
                keep = opt[0]
                for other in opt[1:]:
                    for m in groups[other]:
                        owner[m] = keep
                    groups[other] = None
                groups[keep] = members
                owner[g.id] = keep
                break
        else:
            groups.append({g.id})
            frozen.append(native_swap and g.kind == "swap")
            owner[g.id] = len(groups) - 1
    return [sorted(s) for s in groups if s is not None]


def product_of_groups(gdag, n):
    u = np.eye(2**n, dtype=complex)
    for grp in gdag.groups:  # groups are stored in topological order
        u = embed(grp.unitary(), grp.qubits, n) @ u
    return u


def test_bit_divide_examples():
    dag = build_dag(Circuit([Gate("h", (0,)), Gate("x", (0,))], 1))
    assert bit_divide(dag) == [[0, 1]]
    dag = build_dag(Circuit([Gate("cx", (0, 1)), Gate("cx", (1, 2))], 3))
    assert bit_divide(dag) == [[0], [1]]


def test_bit_divide_matches_reference():
    rng = np.random.default_rng(11)
    for _ in range(60):
        prog = random_circuit(rng, 4, 30, two_qubit_prob=0.5)
        assert sorted(bit_divide(build_dag(prog))) == sorted(reference_bit_divide(prog))


def test_layer_divide_examples():
    gates = [Gate("h", (0,)), Gate("x", (0,)), Gate("t", (0,)), Gate("h", (0,)), Gate("x", (0,))]
    dag = build_dag(Circuit(gates[:4], 1))
    assert len(layer_divide([[0, 1, 2, 3]], dag, 4)) == 1
    dag = build_dag(Circuit(gates, 1))
    parts = layer_divide([[0, 1, 2, 3, 4]], dag, 4)
    assert [[g.id for g in p.gates] for p in parts] == [[0, 1, 2, 3], [4]]
    assert [p.layer_span for p in parts] == [4, 1]


def test_dedup_examples():
    h0 = GateGroup([Gate("h", (0,))], (0,), 1, 1)
    h5 = GateGroup([Gate("h", (5,))], (5,), 1, 1)
    cx01 = GateGroup([Gate("cx", (0, 1))], (0, 1), 1, 1)
    cx32 = GateGroup([Gate("cx", (3, 2))], (2, 3), 1, 1)
    unique, keys = dedup([h0, h5, cx01, cx32])
    assert keys[0] == keys[1] and keys[2] == keys[3]
    assert len(unique) == 2 and unique[0] is h0
    a = GateGroup([Gate("h", (0,)), Gate("cx", (0, 1))], (0, 1), 2, 1)
    b = GateGroup([Gate("h", (1,)), Gate("cx", (0, 1))], (0, 1), 2, 1)
    assert canonical_form(a.unitary())[0] != canonical_form(b.unitary())[0]


def test_distinct_angles_stay_distinct():
    a = GateGroup([Gate("rz", (0,), (0.3,))], (0,), 1, 1)
    b = GateGroup([Gate("rz", (0,), (0.3 + 1e-6,))], (0,), 1, 1)
    assert dedup([a, b])[1][0] != dedup([a, b])[1][1]


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from([0, 1]), st.floats(0, 6.3))
def test_key_is_phase_and_permutation_invariant(seed, swap, phase):
    rng = np.random.default_rng(seed)
    gates = [random_gate(rng, 2, 0.5) for _ in range(5)]
    u = circuit_unitary(gates, 2)
    v = np.exp(1j * phase) * u
    if swap:
        v = SWAP @ v @ SWAP
    assert canonical_form(u)[0] == canonical_form(v)[0]


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(2, 4), st.integers(1, 40),
       st.sampled_from(POLICY_LABELS))
def test_group_product_equals_circuit(seed, n, m, label):
    policy = GroupingPolicy.from_label(label)
    rng = np.random.default_rng(seed)
    gates = []
    for _ in range(m):
        if policy.swap_handling == "swap" and rng.random() < 0.1:
            a, b = rng.choice(n, 2, replace=False)
            gates.append(Gate("swap", (int(a), int(b))))
        else:
            gates.append(random_gate(rng, n, 0.4))
    prog = Circuit(gates, n)
    gdag, dag = group_circuit(prog, policy.layer_constraint, native_swap=policy.swap_handling == "swap")
    ids = sorted(g.id for grp in gdag.groups for g in grp.gates)
    assert ids == list(range(m))
    for grp in gdag.groups:
        assert grp.num_qubits <= 2 and grp.layer_span <= policy.layer_constraint
        if any(g.kind == "swap" for g in grp.gates):
            assert len(grp.gates) == 1
    assert equal_up_to_phase(product_of_groups(gdag, n), circuit_unitary(prog.gates, n), atol=1e-8)


def test_policy_labels():
    assert [GroupingPolicy.from_label(lab).label for lab in POLICY_LABELS] == list(POLICY_LABELS)
    with pytest.raises(ValueError):
        GroupingPolicy.from_label("map2b5l")


def test_corpus_groups_satisfy_constraints(corpus, melbourne):
    policy = GroupingPolicy.from_label("map2b3l")
    prog = next(c for c in corpus if c.name == "rev5_c")
    gp = group_program(prog, policy, melbourne)
    dag = build_dag(gp.circuit)
    for grp in gp.groups:
        assert grp.num_qubits <= 2 and grp.layer_span <= 3
    assert sorted(g.id for grp in gp.groups for g in grp.gates) == list(range(len(gp.circuit)))
    expected = layer_divide(reference_bit_divide(gp.circuit), dag, 3)
    assert len(gp.groups) == len(expected)


def test_compatible_circuit_same_groups_under_both_policies(melbourne):
    gates = [Gate("h", (1,)), Gate("cx", (1, 0)), Gate("cx", (1, 2)), Gate("t", (2,)), Gate("cx", (2, 3))]
    prog = Circuit(gates, 14)
    for lc in (2, 3, 4):
        a = group_program(prog, GroupingPolicy("map", lc), melbourne)
        b = group_program(prog, GroupingPolicy("swap", lc), melbourne)
        assert a.mapping.inserted_swaps == []
        assert a.keys() == b.keys()


def test_swap_decomposition_does_not_grow_group_gates(melbourne):
    prog = Circuit([Gate("cx", (0, 1)), Gate("cx", (0, 2)), Gate("h", (2,))], 14)
    mapped = group_program(prog, GroupingPolicy("map", 4), melbourne)
    native = group_program(prog, GroupingPolicy("swap", 4), melbourne)
    n_swaps = len(native.mapping.inserted_swaps)
    assert n_swaps >= 1
    naive = len(native.circuit.gates) - n_swaps + 3 * n_swaps + 4 * n_swaps
    assert sum(len(g.gates) for g in mapped.groups) <= naive


def test_more_layers_never_more_groups_qft10(corpus, melbourne):
    prog = next(c for c in corpus if c.name == "qft_10")
    counts = [len(group_program(prog, GroupingPolicy("map", lc), melbourne).groups) for lc in (2, 3, 4)]
    assert counts[2] <= counts[1] <= counts[0]


def test_group_dag_edges_respect_order(corpus, melbourne):
    prog = next(c for c in corpus if c.name == "4gt4-v0_79")
    gp = group_program(prog, GroupingPolicy.from_label("swap2b2l"), melbourne)
    for p, s in gp.group_dag.edges:
        assert p < s
