import numpy as np
import pytest

from accqoc.circuit import Circuit, Gate
from accqoc.cli import load_corpus
from accqoc.mapper import DeviceTopology

ONE_QUBIT_KINDS = ["x", "h", "t", "tdg", "s", "sdg", "rz", "u1", "u2", "u3"]


def random_gate(rng, n, two_qubit_prob=0.35, kinds=None):
    if n >= 2 and rng.random() < two_qubit_prob:
        a, b = rng.choice(n, 2, replace=False)
        return Gate("cx", (int(a), int(b)))
    kind = str(rng.choice(kinds or ONE_QUBIT_KINDS))
    nparams = {"rz": 1, "u1": 1, "u2": 2, "u3": 3}.get(kind, 0)
    return Gate(kind, (int(rng.integers(n)),), tuple(float(x) for x in rng.uniform(-np.pi, np.pi, nparams)))


def random_circuit(rng, n, m, **kw):
    return Circuit([random_gate(rng, n, **kw) for _ in range(m)], n, "random")


@pytest.fixture(scope="session")
def melbourne():
    return DeviceTopology.melbourne()


@pytest.fixture(scope="session")
def corpus():
    return load_corpus(None)


ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
