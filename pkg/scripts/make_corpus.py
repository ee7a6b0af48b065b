"""Regenerate the bundled benchmark corpus under src/accqoc/data/corpus.

The reversible-logic programs are seeded random cascades of Toffoli, CNOT
and NOT gates, with each Toffoli expanded into the usual 15-gate
Clifford+T circuit.  The five programs named after RevLib/ScaffCC benchmarks
reproduce those benchmarks' instruction mixes only; their gate order is
synthetic.  The ``rev*`` programs are synthetic cascades of the same kind.

    python scripts/make_corpus.py
"""

from __future__ import annotations

import math
import random
from pathlib import Path

OUT = Path(__file__).resolve().parents[1] / "src" / "accqoc" / "data" / "corpus"


def toffoli(a, b, c):
    return [
        ("h", (c,)), ("cx", (b, c)), ("tdg", (c,)), ("cx", (a, c)), ("t", (c,)),
        ("cx", (b, c)), ("tdg", (c,)), ("cx", (a, c)), ("t", (b,)), ("t", (c,)),
        ("h", (c,)), ("cx", (a, b)), ("t", (a,)), ("tdg", (b,)), ("cx", (a, b)),
    ]


def reversible(n, toffolis, cnots, nots, seed, locality=None):
    """Seeded cascade; ``locality`` limits the span of qubits a gate may touch."""
    rng = random.Random(seed)
    ops = ["ccx"] * toffolis + ["cx"] * cnots + ["x"] * nots
    rng.shuffle(ops)
    span = locality or n
    gates = []
    for op in ops:
        base = rng.randrange(0, n - min(span, n) + 1)
        window = list(range(base, base + min(span, n)))
        if op == "ccx":
            a, b, c = rng.sample(window, 3)
            gates += toffoli(a, b, c)
        elif op == "cx":
            a, b = rng.sample(window, 2)
            gates.append(("cx", (a, b)))
        else:
            gates.append(("x", (rng.choice(window),)))
    return gates


def qft_style(n):
    gates = []
    for j in range(n):
        gates.append(("h", (j,)))
        for k in range(j + 1, n):
            theta = math.pi / 2 ** (k - j)
            gates += [("rz", (j,), theta / 2), ("cx", (k, j)), ("rz", (j,), -theta / 2), ("cx", (k, j))]
    for j in range(n):
        gates.append(("h", (j,)))
    return gates


def ising(n, steps, dt=0.1):
    gates = [("h", (q,)) for q in range(n)]
    for _ in range(steps):
        for parity in (0, 1):
            for q in range(parity, n - 1, 2):
                gates += [("cx", (q, q + 1)), ("rz", (q + 1,), 2 * dt), ("cx", (q, q + 1))]
        for q in range(n):
            gates += [("h", (q,)), ("rz", (q,), 2 * dt), ("h", (q,))]
    return gates


def qaoa_ring(n, rounds, gamma=0.4, beta=0.7):
    gates = [("h", (q,)) for q in range(n)]
    for _ in range(rounds):
        for parity in (0, 1):
            for q in range(parity, n, 2):
                r = (q + 1) % n
                if r == q or (parity == 1 and r == 0 and n % 2):
                    continue
                gates += [("cx", (q, r)), ("rz", (r,), gamma), ("cx", (q, r))]
        for q in range(n):
            gates += [("h", (q,)), ("rz", (q,), 2 * beta), ("h", (q,))]
    return gates


def ghz_tree(n):
    gates = [("h", (0,))]
    have = [0]
    while len(have) < n:
        new = []
        for q in have:
            t = len(have) + len(new)
            if t < n:
                gates.append(("cx", (q, t)))
                new.append(t)
        have += new
    for q in range(n):
        gates.append(("t", (q,)))
    for q in reversed(range(1, n)):
        gates.append(("cx", ((q - 1) // 2 if q > 0 else 0, q)))
    return gates


def write(name, n, gates):
    lines = ["OPENQASM 2.0;", 'include "qelib1.inc";', f"qreg q[{n}];"]
    for g in gates:
        kind, qs = g[0], g[1]
        args = ",".join(f"q[{q}]" for q in qs)
        if len(g) > 2:
            lines.append(f"{kind}({g[2]!r}) {args};")
        else:
            lines.append(f"{kind} {args};")
    (OUT / f"{name}.qasm").write_text("\n".join(lines) + "\n")


PROGRAMS = {
    "4gt4-v0_79": (5, lambda: reversible(5, 14, 21, 0, seed=79)),
    "cm152a_212": (12, lambda: reversible(12, 76, 76, 5, seed=212, locality=5)),
    "ex2_227": (7, lambda: reversible(7, 39, 41, 5, seed=227)),
    "f2_232": (8, lambda: reversible(8, 75, 75, 6, seed=232)),
    "qft_10": (10, lambda: qft_style(10)),
    "rev5_a": (5, lambda: reversible(5, 6, 10, 2, seed=29)),
    "rev5_b": (5, lambda: reversible(5, 9, 8, 1, seed=27)),
    "rev4_a": (4, lambda: reversible(4, 10, 12, 2, seed=43)),
    "rev5_c": (5, lambda: reversible(5, 24, 30, 3, seed=176)),
    "rev4_b": (4, lambda: reversible(4, 12, 10, 0, seed=66)),
    "rev5_d": (5, lambda: reversible(5, 20, 28, 2, seed=49)),
    "rev7_a": (7, lambda: reversible(7, 36, 30, 2, seed=145)),
    "qft_6": (6, lambda: qft_style(6)),
    "ising_chain_10": (10, lambda: ising(10, 3)),
    "qaoa_ring_8": (8, lambda: qaoa_ring(8, 2)),
    "ghz_tree_12": (12, lambda: ghz_tree(12)),
}


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    for old in OUT.glob("*.qasm"):
        old.unlink()
    for name, (n, build) in PROGRAMS.items():
        write(name, n, build())


if __name__ == "__main__":
    main()
