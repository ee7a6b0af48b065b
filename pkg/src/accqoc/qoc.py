"""GRAPE pulse synthesis for one- and two-qubit targets.

Pulses are piecewise constant: ``amplitudes[k, j]`` drives control
Hamiltonian ``k`` during step ``j``.  The propagator of step ``j`` is
``exp(-i dt (H_d + sum_k u_kj H_k))`` and the full evolution is the product
with the last step leftmost.

The cost is the phase-insensitive gate infidelity ``1 - |Tr(V^dag U)|^2 / d^2``.
Exact gradients come from the eigendecomposition of each step Hamiltonian
(the Daleckii-Krein form of the derivative of the matrix exponential), which
for d <= 4 is cheap enough to evaluate for every step in one batched call.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import minimize

from accqoc.unitary import PAULI_X, PAULI_Y, PAULI_Z, IDENTITY2, is_identity_up_to_phase

log = logging.getLogger(__name__)

TARGET_INFIDELITY = 1e-4


class QOCError(RuntimeError):
    pass


class InfeasibleError(QOCError):
    """No pulse reached the target infidelity at the largest duration tried."""

    def __init__(self, key, duration, iterations=0):
        super().__init__(f"group {key}: infeasible up to {duration:.3f} ns")
        self.key = key
        self.duration = duration
        self.iterations = iterations


@dataclass(frozen=True)
class ModelConfig:
    """Physical parameters of the control model.

    Frequencies are given as f (GHz) and converted to angular units (rad/ns)
    internally.  The drift is written in the frame rotating at each qubit
    frequency, so ``qubit_freq_ghz`` only enters the fingerprint.
    """

    qubit_freq_ghz: float = 3.9
    coupling_ghz: float = 0.02
    amp_max_ghz: float = 0.05
    dt: float = 0.1

    @property
    def amp_max(self) -> float:
        return 2 * np.pi * self.amp_max_ghz

    @property
    def coupling(self) -> float:
        return 2 * np.pi * self.coupling_ghz

    def fingerprint(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        known = {k: data[k] for k in cls.__dataclass_fields__ if k in data}
        return cls(**{k: float(v) for k, v in known.items()})


@dataclass
class ControlModel:
    num_qubits: int
    drift: np.ndarray
    controls: list
    dt: float
    amp_max: float
    config: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if not self.controls:
            raise ValueError("control model needs at least one control")
        for h in [self.drift, *self.controls]:
            if np.abs(h - h.conj().T).max() > 1e-12:
                raise ValueError("model Hamiltonians must be Hermitian")
        self._stack = np.array(self.controls)

    @property
    def dim(self) -> int:
        return 2 ** self.num_qubits

    @property
    def num_controls(self) -> int:
        return len(self.controls)

    @classmethod
    def build(cls, num_qubits: int, config: ModelConfig | None = None) -> "ControlModel":
        """Spin-qubit model in the rotating frame.

        One qubit: x and y drives, no drift.  Two qubits: x and y drives on
        each qubit plus an always-on ZZ coupling ``J Z⊗Z``.  Drive operators
        carry a factor 1/2 so an amplitude is a Rabi angular frequency.
        """
        config = config or ModelConfig()
        if num_qubits == 1:
            drift = np.zeros((2, 2), dtype=complex)
            controls = [PAULI_X / 2, PAULI_Y / 2]
        elif num_qubits == 2:
            drift = config.coupling * np.kron(PAULI_Z, PAULI_Z) / 2
            controls = [
                np.kron(PAULI_X, IDENTITY2) / 2,
                np.kron(PAULI_Y, IDENTITY2) / 2,
                np.kron(IDENTITY2, PAULI_X) / 2,
                np.kron(IDENTITY2, PAULI_Y) / 2,
            ]
        else:
            raise ValueError(f"unsupported qubit count {num_qubits}")
        return cls(num_qubits, drift.astype(complex), [c.astype(complex) for c in controls],
                   config.dt, config.amp_max, config)


@dataclass
class Pulse:
    amplitudes: np.ndarray
    dt: float
    achieved_infidelity: float = float("nan")
    target_key: str | None = None
    iterations_used: int = 0

    @property
    def steps(self) -> int:
        return int(self.amplitudes.shape[1])

    @property
    def duration(self) -> float:
        return self.steps * self.dt

    def to_dict(self) -> dict:
        return {
            "key": self.target_key,
            "dt": self.dt,
            "amplitudes": self.amplitudes.tolist(),
            "duration": self.duration,
            "infidelity": self.achieved_infidelity,
            "iterations": self.iterations_used,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Pulse":
        amps = np.array(data["amplitudes"], dtype=float)
        if amps.ndim != 2:
            amps = amps.reshape(len(amps), -1)
        return cls(amps, float(data["dt"]), float(data["infidelity"]), data.get("key"),
                   int(data.get("iterations", 0)))


@dataclass
class OptBudget:
    max_iterations: int = 5000
    wall_seconds: float = 600.0
    target_infidelity: float = TARGET_INFIDELITY
    exact_gradient: bool = True
    # give up when the best cost improved by less than stall_rtol over stall_window iterations
    stall_window: int = 100
    stall_rtol: float = 0.01


def _step_hamiltonians(model: ControlModel, amps: np.ndarray) -> np.ndarray:
    return model.drift[None] + np.einsum("kj,kab->jab", amps, model._stack)


def step_propagators(model: ControlModel, amps: np.ndarray) -> np.ndarray:
    ham = _step_hamiltonians(model, amps)
    evals, evecs = np.linalg.eigh(ham)
    phases = np.exp(-1j * model.dt * evals)
    return np.einsum("jab,jb,jcb->jac", evecs, phases, evecs.conj())


def evolve(model: ControlModel, pulse: Pulse | np.ndarray) -> np.ndarray:
    amps = pulse.amplitudes if isinstance(pulse, Pulse) else np.asarray(pulse, dtype=float)
    if amps.shape[0] != model.num_controls:
        raise ValueError("pulse does not match the model's controls")
    u = np.eye(model.dim, dtype=complex)
    if amps.shape[1] == 0:
        return u
    for step in step_propagators(model, amps):
        u = step @ u
    return u


def infidelity(model: ControlModel, target: np.ndarray, amps: np.ndarray) -> float:
    u = evolve(model, amps)
    d = model.dim
    return float(1.0 - abs(np.trace(target.conj().T @ u)) ** 2 / d**2)


def _scan(mats: np.ndarray, left: bool) -> np.ndarray:
    """Inclusive prefix products in log2(n) batched passes.

    ``left``: out[j] = mats[j] @ ... @ mats[0]; otherwise out[j] = mats[0] @ ... @ mats[j].
    """
    out = mats.copy()
    shift = 1
    n = len(out)
    while shift < n:
        if left:
            out[shift:] = out[shift:] @ out[:-shift]
        else:
            out[shift:] = out[:-shift] @ out[shift:]
        shift *= 2
    return out


def infidelity_and_gradient(model: ControlModel, target: np.ndarray, amps: np.ndarray,
                            exact: bool = True) -> tuple[float, np.ndarray]:
    """Cost and its gradient with respect to every amplitude."""
    d = model.dim
    nsteps = amps.shape[1]
    if nsteps == 0:
        return infidelity(model, target, amps), np.zeros_like(amps)
    dt = model.dt
    ham = _step_hamiltonians(model, amps)
    evals, evecs = np.linalg.eigh(ham)
    phases = np.exp(-1j * dt * evals)
    props = np.einsum("jab,jb,jcb->jac", evecs, phases, evecs.conj())

    fwd = _scan(props, left=True)  # fwd[j] = U_j ... U_1
    suffix = _scan(props[::-1], left=False)[::-1]  # suffix[j] = U_N ... U_j
    bwd = np.empty_like(props)  # bwd[j] = V^dag U_N ... U_{j+1}
    bwd[-1] = target.conj().T
    bwd[:-1] = target.conj().T[None] @ suffix[1:]
    overlap = np.trace(target.conj().T @ fwd[-1])
    cost = 1.0 - abs(overlap) ** 2 / d**2

    prev = np.concatenate([np.eye(d, dtype=complex)[None], fwd[:-1]])
    # d overlap = Tr(bwd_j dU_j prev_j) = Tr(M_j dU_j), M_j = prev_j bwd_j
    m = prev @ bwd
    if exact:
        diff = evals[:, :, None] - evals[:, None, :]
        ph_diff = phases[:, :, None] - phases[:, None, :]
        degenerate = np.abs(diff) < 1e-9
        safe = np.where(degenerate, 1.0, diff)
        diag = np.broadcast_to(-1j * dt * phases[:, :, None], ph_diff.shape)
        phi = np.where(degenerate, diag, ph_diff / safe)
        vh = np.conj(np.swapaxes(evecs, 1, 2))
        w = vh @ m @ evecs
        g = vh[None] @ model._stack[:, None] @ evecs[None]  # V^dag H_k V
        # Tr(M V (phi * G) V^dag) = sum_ab W[b,a] phi[a,b] G[a,b]
        weight = np.swapaxes(w, 1, 2) * phi
        d_overlap = (g * weight[None]).sum(axis=(2, 3))
    else:
        # first-order: dU_j ~ -i dt H_k U_j
        hu = model._stack[:, None] @ props[None]
        d_overlap = -1j * dt * (np.swapaxes(m, 1, 2)[None] * hu).sum(axis=(2, 3))
    grad = -2.0 * np.real(np.conj(overlap) * d_overlap) / d**2
    return float(cost), grad


def resample(amps: np.ndarray, steps: int) -> np.ndarray:
    """Linearly resample a pulse in time onto ``steps`` points."""
    n = amps.shape[1]
    if n == steps:
        return amps.copy()
    if n == 0:
        return np.zeros((amps.shape[0], steps))
    if steps == 0:
        return np.zeros((amps.shape[0], 0))
    src = (np.arange(n) + 0.5) / n
    dst = (np.arange(steps) + 0.5) / steps
    return np.array([np.interp(dst, src, row) for row in amps])


def duration_to_steps(duration: float, dt: float) -> int:
    steps = round(duration / dt)
    if steps < 0 or abs(steps * dt - duration) > 1e-9 * max(1.0, duration):
        raise ValueError(f"duration {duration} ns is not a multiple of dt={dt}")
    return int(steps)


def random_start(model: ControlModel, steps: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.uniform(-0.01, 0.01, size=(model.num_controls, steps)) * model.amp_max


class _Stop(Exception):
    pass


def optimize(model: ControlModel, target: np.ndarray, duration: float,
             init: Pulse | np.ndarray | None = None, budget: OptBudget | None = None,
             seed: int = 0, key: str | None = None) -> Pulse:
    """Fit piecewise-constant amplitudes on a fixed duration.

    Runs L-BFGS-B inside the amplitude box and stops at the first iterate
    reaching ``budget.target_infidelity``, at the iteration cap, or when the
    wall-clock budget runs out.  The best iterate seen is returned.
    """
    budget = budget or OptBudget()
    if target.shape != (model.dim, model.dim):
        raise ValueError("target dimension does not match the model")
    steps = duration_to_steps(duration, model.dt)
    if init is None:
        x0 = random_start(model, steps, seed)
    else:
        donor = init.amplitudes if isinstance(init, Pulse) else np.asarray(init, dtype=float)
        x0 = np.clip(resample(donor, steps), -model.amp_max, model.amp_max)
    shape = x0.shape

    best = {"f": np.inf, "x": x0.ravel().copy()}
    started = time.monotonic()
    iterations = 0
    history = []

    def fun(x):
        f, g = infidelity_and_gradient(model, target, x.reshape(shape), budget.exact_gradient)
        if not (np.isfinite(f) and np.all(np.isfinite(g))):
            raise QOCError(f"non-finite cost or gradient for {key or 'target'} "
                           f"at {duration:.3f} ns (cost={f})")
        if f < best["f"]:
            best["f"], best["x"] = f, x.copy()
        return f, g.ravel()

    def callback(intermediate_result):
        nonlocal iterations
        iterations += 1
        if best["f"] <= budget.target_infidelity:
            raise StopIteration
        if time.monotonic() - started > budget.wall_seconds:
            raise StopIteration
        history.append(best["f"])
        w = budget.stall_window
        if w and len(history) > w and history[-1] > (1 - budget.stall_rtol) * history[-1 - w]:
            raise StopIteration

    f0, _ = fun(x0.ravel())
    if f0 > budget.target_infidelity and steps > 0 and budget.max_iterations > 0:
        bound = model.amp_max
        minimize(fun, x0.ravel(), jac=True, method="L-BFGS-B",
                 bounds=[(-bound, bound)] * x0.size, callback=callback,
                 options={"maxiter": budget.max_iterations, "ftol": 1e-12, "gtol": 1e-9,
                          "maxcor": 20})
    return Pulse(best["x"].reshape(shape), model.dt, float(best["f"]), key, iterations)


def feasible(pulse: Pulse, budget: OptBudget) -> bool:
    return pulse.achieved_infidelity <= budget.target_infidelity


def default_upper_steps(num_qubits: int) -> int:
    return 40 if num_qubits == 1 else 200


def binary_search_latency(model: ControlModel, target: np.ndarray, budget: OptBudget | None = None,
                          init: Pulse | None = None, key: str | None = None, seed: int = 0,
                          lo_steps: int = 1, hi_steps: int | None = None,
                          max_doublings: int = 3, resolution: int = 1,
                          hint_steps: int | None = None) -> tuple[Pulse, float]:
    """Shortest duration on the dt grid at which ``optimize`` reaches the target.

    The upper bound doubles (at most ``max_doublings`` times) until a probe is
    feasible, then the bracket is bisected down to ``resolution`` steps.  A
    probe that misses the target infidelity, for whatever reason including
    the wall-clock budget, counts as infeasible.  The returned pulse carries
    the iterations spent over every probe.

    With ``hint_steps`` (the length of a warm-start donor) the bracket is
    found by galloping away from the hint in growing steps instead, which
    needs only a few probes when the minimum lies close to the hint.
    """
    budget = budget or OptBudget()
    if is_identity_up_to_phase(target) and is_identity_up_to_phase(evolve(model, np.zeros((model.num_controls, 0)))):
        return Pulse(np.zeros((model.num_controls, 0)), model.dt, 0.0, key, 0), 0.0
    hi = hi_steps or default_upper_steps(model.num_qubits)
    total = 0
    probes = {}

    def probe(steps):
        nonlocal total
        pulse = optimize(model, target, steps * model.dt, init, budget, seed, key)
        total += pulse.iterations_used
        probes[steps] = pulse
        log.debug("probe %s steps=%d infidelity=%.3g iterations=%d", key, steps,
                  pulse.achieved_infidelity, pulse.iterations_used)
        return feasible(pulse, budget)

    bad = lo_steps - 1
    cap = hi * 2 ** max_doublings
    if hint_steps:
        good, bad = _gallop(probe, max(hint_steps, lo_steps), bad, cap)
        if good is None:
            raise InfeasibleError(key, cap * model.dt, total)
    else:
        for _ in range(max_doublings + 1):
            if probe(hi):
                break
            bad = hi
            hi *= 2
        else:
            raise InfeasibleError(key, (hi // 2) * model.dt, total)
        good = hi
    while good - bad > resolution:
        mid = (good + bad) // 2
        if probe(mid):
            good = mid
        else:
            bad = mid
    best = probes[good]
    best.iterations_used = total
    return best, best.duration


def _gallop(probe, start: int, floor: int, cap: int) -> tuple[int | None, int]:
    """Bracket the feasibility boundary starting from ``start`` steps.

    Returns (smallest known feasible, largest known infeasible); the first
    is None when nothing up to ``cap`` is feasible.
    """
    start = min(start, cap)
    if probe(start):
        good, step = start, 1
        while good - step > floor:
            if not probe(good - step):
                return good, good - step
            good -= step
            step *= 2
        return good, floor
    bad, step = start, 1
    while bad < cap:
        nxt = min(bad + step, cap)
        if probe(nxt):
            return nxt, bad
        bad = nxt
        step *= 2
    return None, bad


def gradient_check(model: ControlModel, target: np.ndarray, pulse: Pulse | np.ndarray,
                   exact: bool = True, step: float = 1e-6) -> float:
    """Max abs difference between the analytic and central-difference gradients."""
    amps = np.array(pulse.amplitudes if isinstance(pulse, Pulse) else pulse, dtype=float)
    _, grad = infidelity_and_gradient(model, target, amps, exact)
    numeric = np.zeros_like(amps)
    for idx in np.ndindex(amps.shape):
        orig = amps[idx]
        amps[idx] = orig + step
        up = infidelity(model, target, amps)
        amps[idx] = orig - step
        down = infidelity(model, target, amps)
        amps[idx] = orig
        numeric[idx] = (up - down) / (2 * step)
    return float(np.abs(grad - numeric).max()) if amps.size else 0.0
