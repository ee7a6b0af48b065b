"""OpenQASM 2.0 subset frontend and the gate dependency DAG."""

from __future__ import annotations

import ast
import json
import logging
import math
import operator
import re
from dataclasses import dataclass, field, replace
from pathlib import Path

log = logging.getLogger(__name__)

ARITY = {
    "x": 1, "h": 1, "t": 1, "tdg": 1, "s": 1, "sdg": 1,
    "rz": 1, "u1": 1, "u2": 1, "u3": 1,
    "cx": 2, "swap": 2,
}
NUM_PARAMS = {"rz": 1, "u1": 1, "u2": 2, "u3": 3}
ALIASES = {"CX": "cx", "cnot": "cx", "U": "u3", "p": "u1"}
_IGNORED = {"measure", "barrier", "reset", "creg", "if"}


class QasmError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class UnsupportedGateError(QasmError):
    def __init__(self, name: str, line: int | None = None):
        self.gate = name
        super().__init__(f"unsupported gate {name!r}", line)


@dataclass(frozen=True)
class Gate:
    kind: str
    qubits: tuple[int, ...]
    params: tuple[float, ...] = ()
    id: int = 0

    def __post_init__(self):
        if self.kind not in ARITY:
            raise UnsupportedGateError(self.kind)
        if len(self.qubits) != ARITY[self.kind]:
            raise ValueError(f"{self.kind} acts on {ARITY[self.kind]} qubit(s), got {self.qubits}")
        if len(set(self.qubits)) != len(self.qubits):
            raise ValueError(f"{self.kind} repeats a qubit: {self.qubits}")
        if len(self.params) != NUM_PARAMS.get(self.kind, 0):
            raise ValueError(f"{self.kind} takes {NUM_PARAMS.get(self.kind, 0)} parameter(s)")
        if not all(math.isfinite(p) for p in self.params):
            raise ValueError(f"{self.kind} has a non-finite angle")

    @property
    def is_two_qubit(self) -> bool:
        return len(self.qubits) == 2

    def to_qasm(self) -> str:
        args = ",".join(f"q[{q}]" for q in self.qubits)
        if self.params:
            ps = ",".join(repr(p) for p in self.params)
            return f"{self.kind}({ps}) {args};"
        return f"{self.kind} {args};"


@dataclass
class Circuit:
    gates: list[Gate]
    num_qubits: int
    name: str = ""

    def __post_init__(self):
        self.gates = [g if g.id == i else replace(g, id=i) for i, g in enumerate(self.gates)]
        for g in self.gates:
            if max(g.qubits) >= self.num_qubits:
                raise ValueError(f"gate {g} outside a {self.num_qubits}-qubit register")

    def __len__(self) -> int:
        return len(self.gates)

    def counts(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for g in self.gates:
            out[g.kind] = out.get(g.kind, 0) + 1
        return out

    def to_qasm(self) -> str:
        lines = ['OPENQASM 2.0;', 'include "qelib1.inc";', f"qreg q[{self.num_qubits}];"]
        lines += [g.to_qasm() for g in self.gates]
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- parsing

_BINOPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
           ast.Div: operator.truediv, ast.Pow: operator.pow}
_FUNCS = {"sin": math.sin, "cos": math.cos, "tan": math.tan, "exp": math.exp,
          "ln": math.log, "sqrt": math.sqrt}


def eval_angle(expr: str, env: dict[str, float] | None = None) -> float:
    """Evaluate an OpenQASM parameter expression (numbers, pi, + - * / ^)."""
    env = env or {}

    def ev(node):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return float(node.value)
        if isinstance(node, ast.Name):
            if node.id == "pi":
                return math.pi
            if node.id in env:
                return env[node.id]
            raise ValueError(f"unknown identifier {node.id!r}")
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            return _BINOPS[type(node.op)](ev(node.left), ev(node.right))
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            v = ev(node.operand)
            return -v if isinstance(node.op, ast.USub) else v
        if (isinstance(node, ast.Call) and isinstance(node.func, ast.Name)
                and node.func.id in _FUNCS and len(node.args) == 1):
            return _FUNCS[node.func.id](ev(node.args[0]))
        raise ValueError(f"bad expression {expr!r}")

    return ev(ast.parse(expr.replace("^", "**"), mode="eval"))


@dataclass
class _Macro:
    params: list[str]
    args: list[str]
    body: list[tuple[str, str, str]] = field(default_factory=list)  # (name, params, args)


_STMT = re.compile(r"^(?P<name>[A-Za-z_][\w]*)\s*(?:\((?P<params>[^)]*)\))?\s*(?P<args>.*)$", re.S)
_REF = re.compile(r"^([A-Za-z_]\w*)\s*(?:\[\s*(\d+)\s*\])?$")


def _strip_comments(text: str) -> str:
    return re.sub(r"//[^\n]*", "", text)


def _statements(text: str):
    """Yield (line_number, statement); a gate definition is one statement."""
    buf: list[str] = []
    line = 1
    start = None
    depth = 0
    for c in _strip_comments(text):
        if start is None and not c.isspace():
            start = line
        if c == "\n":
            line += 1
        if c == "{":
            depth += 1
        elif c == "}":
            depth -= 1
            if depth < 0:
                raise QasmError("unbalanced '}'", line)
        if depth == 0 and c in ";}":
            stmt = "".join(buf) + ("}" if c == "}" else "")
            if stmt.strip():
                yield start, stmt.strip()
            buf, start = [], None
            continue
        buf.append(c)
    if depth:
        raise QasmError("unterminated '{'", start)
    if "".join(buf).strip():
        raise QasmError("missing ';' at end of program", start)


def _split_args(s: str) -> list[str]:
    return [a.strip() for a in s.split(",") if a.strip()]


def parse_qasm(text: str, name: str = "") -> Circuit:
    """Parse an OpenQASM 2.0 program over the supported gate alphabet.

    Registers are flattened into one index space in declaration order.
    Measurement, barriers, resets and classically controlled statements are
    dropped with a warning.
    """
    registers: dict[str, tuple[int, int]] = {}
    macros: dict[str, _Macro] = {}
    gates: list[Gate] = []
    nq = 0
    dropped: dict[str, int] = {}

    def resolve(ref: str, lineno: int) -> list[int]:
        m = _REF.match(ref)
        if not m or m.group(1) not in registers:
            raise QasmError(f"unknown qubit reference {ref!r}", lineno)
        offset, size = registers[m.group(1)]
        if m.group(2) is None:
            return [offset + i for i in range(size)]
        idx = int(m.group(2))
        if idx >= size:
            raise QasmError(f"index {idx} out of range for {m.group(1)}[{size}]", lineno)
        return [offset + idx]

    def emit(gname: str, params: list[float], qubits: list[int], lineno: int, depth: int = 0):
        gname = ALIASES.get(gname, gname)
        if gname in macros:
            if depth > 32:
                raise QasmError(f"gate {gname!r} expands too deeply", lineno)
            mac = macros[gname]
            if len(params) != len(mac.params) or len(qubits) != len(mac.args):
                raise QasmError(f"wrong arity in call to {gname!r}", lineno)
            env = dict(zip(mac.params, params))
            qmap = dict(zip(mac.args, qubits))
            for bname, bparams, bargs in mac.body:
                vals = [eval_angle(p, env) for p in _split_args(bparams)]
                try:
                    qs = [qmap[a] for a in _split_args(bargs)]
                except KeyError as exc:
                    raise QasmError(f"unknown argument {exc.args[0]!r} in gate {gname!r}", lineno)
                emit(bname, vals, qs, lineno, depth + 1)
            return
        if gname not in ARITY:
            raise UnsupportedGateError(gname, lineno)
        try:
            gates.append(Gate(gname, tuple(qubits), tuple(params), len(gates)))
        except ValueError as exc:
            raise QasmError(str(exc), lineno) from None

    for lineno, stmt in _statements(text):
        head = stmt.split(None, 1)[0] if stmt.split() else ""
        if head == "OPENQASM":
            continue
        if head == "include":
            continue
        if head == "qreg":
            m = re.match(r"qreg\s+([A-Za-z_]\w*)\s*\[\s*(\d+)\s*\]$", stmt)
            if not m:
                raise QasmError(f"malformed qreg: {stmt!r}", lineno)
            registers[m.group(1)] = (nq, int(m.group(2)))
            nq += int(m.group(2))
            continue
        if head in ("gate", "opaque"):
            m = re.match(r"gate\s+([A-Za-z_]\w*)\s*(?:\(([^)]*)\))?\s*([^{]*)\{(.*)\}$", stmt, re.S)
            if not m:
                raise QasmError(f"malformed gate definition: {stmt[:40]!r}", lineno)
            mac = _Macro(_split_args(m.group(2) or ""), _split_args(m.group(3)))
            for body in m.group(4).split(";"):
                body = body.strip()
                if not body:
                    continue
                bm = _STMT.match(body)
                if not bm:
                    raise QasmError(f"malformed statement in gate {m.group(1)!r}", lineno)
                if bm.group("name") == "barrier":
                    continue
                mac.body.append((bm.group("name"), bm.group("params") or "", bm.group("args")))
            macros[m.group(1)] = mac
            continue
        if head.split("(")[0] in _IGNORED or head.startswith("if("):
            key = head.split("(")[0]
            dropped[key] = dropped.get(key, 0) + 1
            continue
        m = _STMT.match(stmt)
        if not m:
            raise QasmError(f"syntax error: {stmt!r}", lineno)
        try:
            params = [eval_angle(p) for p in _split_args(m.group("params") or "")]
        except (ValueError, SyntaxError) as exc:
            raise QasmError(f"bad parameter: {exc}", lineno) from None
        refs = [resolve(a, lineno) for a in _split_args(m.group("args"))]
        if not refs:
            raise QasmError(f"syntax error: {stmt!r}", lineno)
        width = max(len(r) for r in refs)
        if any(len(r) not in (1, width) for r in refs):
            raise QasmError("register size mismatch", lineno)
        for i in range(width):
            emit(m.group("name"), params, [r[0] if len(r) == 1 else r[i] for r in refs], lineno)

    for key, count in dropped.items():
        log.warning("%s: dropped %d %s statement(s)", name or "program", count, key)
    return Circuit(gates, nq, name)


def load_qasm(path: str | Path) -> Circuit:
    path = Path(path)
    return parse_qasm(path.read_text(encoding="utf-8"), name=path.stem)


# ---------------------------------------------------------------- DAG

@dataclass
class CircuitDag:
    circuit: Circuit
    preds: list[list[int]]
    succs: list[list[int]]
    depth: list[int]
    # per gate, per position in gate.qubits: previous gate on that qubit (or None)
    wire_pred: list[tuple[int | None, ...]]

    @property
    def nodes(self) -> list[int]:
        return list(range(len(self.circuit.gates)))

    @property
    def edges(self) -> list[tuple[int, int]]:
        return [(p, s) for s, ps in enumerate(self.preds) for p in ps]

    def topological_order(self) -> list[int]:
        # gate ids are assigned in program order, which is already topological
        return self.nodes

    @property
    def max_depth(self) -> int:
        return max(self.depth, default=0)

    def to_json(self) -> str:
        gates = self.circuit.gates
        return json.dumps({
            "nodes": [{"id": g.id, "kind": g.kind, "qubits": list(g.qubits), "depth": self.depth[g.id]}
                      for g in gates],
            "edges": [list(e) for e in self.edges],
        })


def build_dag(circuit: Circuit) -> CircuitDag:
    n = len(circuit.gates)
    last: dict[int, int] = {}
    preds: list[list[int]] = [[] for _ in range(n)]
    succs: list[list[int]] = [[] for _ in range(n)]
    depth = [0] * n
    wire_pred = []
    for g in circuit.gates:
        wp = tuple(last.get(q) for q in g.qubits)
        wire_pred.append(wp)
        for p in sorted({p for p in wp if p is not None}):
            preds[g.id].append(p)
            succs[p].append(g.id)
        depth[g.id] = 1 + max((depth[p] for p in preds[g.id]), default=0)
        for q in g.qubits:
            last[q] = g.id
    return CircuitDag(circuit, preds, succs, depth, wire_pred)
