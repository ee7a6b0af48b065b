"""Dense unitaries for single gates, gate groups and small circuits.

Two-qubit matrices use the gate's listed qubit order with the first qubit as
the most significant bit, so ``CX(c, t)`` is ``|0><0| ⊗ I + |1><1| ⊗ X``.
"""

from __future__ import annotations

import enum
from typing import Iterable, Sequence

import numpy as np

ATOL = 1e-9

IDENTITY2 = np.eye(2, dtype=complex)
PAULI_X = np.array([[0, 1], [1, 0]], dtype=complex)
PAULI_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
PAULI_Z = np.array([[1, 0], [0, -1]], dtype=complex)
HADAMARD = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)
CNOT = np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex)
SWAP = np.array([[1, 0, 0, 0], [0, 0, 1, 0], [0, 1, 0, 0], [0, 0, 0, 1]], dtype=complex)


class Similarity(str, enum.Enum):
    D1 = "d1"
    D2 = "d2"
    D3_TRACE = "d3"
    D4_FID = "d4"
    D4_INV = "d4inv"


def _phase(angle: float) -> complex:
    return complex(np.exp(1j * angle))


def u3(theta: float, phi: float, lam: float) -> np.ndarray:
    c, s = np.cos(theta / 2), np.sin(theta / 2)
    return np.array([
        [c, -_phase(lam) * s],
        [_phase(phi) * s, _phase(phi + lam) * c],
    ], dtype=complex)


def rz(theta: float) -> np.ndarray:
    return np.diag([_phase(-theta / 2), _phase(theta / 2)])


def gate_matrix(kind: str, params: Sequence[float] = ()) -> np.ndarray:
    """Matrix of a gate kind in its own qubit order."""
    if kind == "x":
        return PAULI_X.copy()
    if kind == "h":
        return HADAMARD.copy()
    if kind == "t":
        return np.diag([1, _phase(np.pi / 4)])
    if kind == "tdg":
        return np.diag([1, _phase(-np.pi / 4)])
    if kind == "s":
        return np.diag([1, 1j]).astype(complex)
    if kind == "sdg":
        return np.diag([1, -1j]).astype(complex)
    if kind == "rz":
        return rz(params[0])
    if kind == "u1":
        return np.diag([1, _phase(params[0])])
    if kind == "u2":
        return u3(np.pi / 2, params[0], params[1])
    if kind == "u3":
        return u3(*params)
    if kind == "cx":
        return CNOT.copy()
    if kind == "swap":
        return SWAP.copy()
    raise ValueError(f"unknown gate kind {kind!r}")


def gate_unitary(gate) -> np.ndarray:
    return gate_matrix(gate.kind, gate.params)


def embed(matrix: np.ndarray, targets: Sequence[int], num_qubits: int) -> np.ndarray:
    """Lift ``matrix`` acting on ``targets`` into the ``num_qubits`` space.

    Qubit 0 is the most significant bit of the full index.
    """
    return apply(np.eye(2 ** num_qubits, dtype=complex), matrix, targets, num_qubits)


def apply(state: np.ndarray, matrix: np.ndarray, targets: Sequence[int], num_qubits: int) -> np.ndarray:
    """Apply a k-qubit ``matrix`` to a state (or to the columns of a unitary)."""
    k = len(targets)
    cols = state.shape[1] if state.ndim == 2 else None
    tensor = state.reshape([2] * num_qubits + ([cols] if cols else []))
    op = matrix.reshape([2] * (2 * k))
    tensor = np.tensordot(op, tensor, axes=(list(range(k, 2 * k)), list(targets)))
    tensor = np.moveaxis(tensor, range(k), targets)
    return tensor.reshape(state.shape)


def circuit_unitary(gates: Iterable, num_qubits: int) -> np.ndarray:
    u = np.eye(2 ** num_qubits, dtype=complex)
    for g in gates:
        u = apply(u, gate_unitary(g), g.qubits, num_qubits)
    return u


def group_unitary(gates: Sequence, qubits: Sequence[int] | None = None) -> np.ndarray:
    """Product of the gates, last gate leftmost, on the local qubit order.

    ``qubits`` fixes the local order (first = most significant); by default
    qubits are ordered by first appearance.
    """
    if qubits is None:
        qubits = []
        for g in gates:
            for q in g.qubits:
                if q not in qubits:
                    qubits.append(q)
    if len(qubits) > 2:
        raise ValueError("group unitaries are limited to two qubits")
    local = {q: i for i, q in enumerate(qubits)}
    n = max(len(qubits), 1)
    u = np.eye(2 ** n, dtype=complex)
    for g in gates:
        u = apply(u, gate_unitary(g), [local[q] for q in g.qubits], n)
    return u


def is_unitary(u: np.ndarray, atol: float = ATOL) -> bool:
    return bool(np.linalg.norm(u.conj().T @ u - np.eye(len(u))) <= atol)


def normalize_phase(u: np.ndarray, tol: float = 1e-6) -> np.ndarray:
    """Divide out the phase of the first nonzero entry (row-major)."""
    flat = u.ravel()
    idx = int(np.argmax(np.abs(flat) > tol))
    z = flat[idx]
    return u * (abs(z) / z)


def equal_up_to_phase(a: np.ndarray, b: np.ndarray, atol: float = ATOL) -> bool:
    if a.shape != b.shape:
        return False
    overlap = np.trace(a.conj().T @ b)
    if abs(overlap) < 1e-12:
        return False
    return bool(np.allclose(a * (overlap / abs(overlap)), b, atol=atol))


def is_identity_up_to_phase(u: np.ndarray, atol: float = ATOL) -> bool:
    return equal_up_to_phase(np.eye(len(u), dtype=complex), u, atol)


def avg_gate_fidelity(u: np.ndarray, target: np.ndarray) -> float:
    d = len(u)
    return float(abs(np.trace(target.conj().T @ u)) ** 2 / d**2)


_INV_EPS = 1e-6


def similarity(a: np.ndarray, b: np.ndarray, fn: Similarity | str = Similarity.D3_TRACE) -> float:
    """Distance between two unitaries; lower is closer except for ``D4_INV``."""
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch {a.shape} vs {b.shape}")
    fn = Similarity(fn)
    d = len(a)
    if fn is Similarity.D1:
        return float(np.abs(a - b).sum())
    if fn is Similarity.D2:
        return float(np.linalg.norm(a - b))
    overlap = abs(np.trace(a.conj().T @ b))
    if fn is Similarity.D3_TRACE:
        return float(max(d - overlap, 0.0))
    fid_dist = max(d * (1.0 - overlap**2 / d**2), 0.0)
    if fn is Similarity.D4_FID:
        return float(fid_dist)
    return float(1.0 / (fid_dist + _INV_EPS))
