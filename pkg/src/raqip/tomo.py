"""Measurement emulation, correlators, state/process tomography and randomized benchmarking.

Everything here runs on the gate-level model of :mod:`raqip.effective`; pass a
:class:`~raqip.effective.NoiseModel` to include decoherence during each
primitive.  Measurement itself is an ideal projection of the transmon onto
``|g>``; leakage to ``|f>`` reads as "not g".

Conventions
-----------
* Pauli labels read left to right in the order of the modes given, first mode
  most significant in matrix indices.
* A process is written ``rho -> sum_mn chi_mn P_m rho P_n^dag`` with ``P`` the
  unnormalized Pauli strings, so a trace-preserving ``chi`` has unit trace.
* Process fidelity is ``Tr(chi_ideal chi)``.
* RB fidelity is ``1 - (1 - p)/2`` from the fit ``A p^m + B``.
"""
from __future__ import annotations

import itertools
import json
import math
import warnings
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import OptimizeWarning, curve_fit

from .effective import EffectiveState, NoiseModel, Primitive, apply_gate_effective, apply_primitives
from .hilbert import fidelity
from .gates import GateOp, GateProgram, decompose, ideal_unitary, mode_sandwich

__all__ = [
    "PAULI",
    "PauliString",
    "ProcessMatrix",
    "RBResult",
    "prepare",
    "measure_correlator",
    "correlator_sequence",
    "state_tomography",
    "project_density",
    "state_fidelity",
    "process_tomography",
    "chi_from_unitary",
    "chi_from_superop",
    "project_cptp",
    "clifford_group",
    "randomized_benchmarking",
    "clifford_average_fidelity",
    "to_json_array",
    "dump_json",
]

PAULI = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], complex),
    "Y": np.array([[0, -1j], [1j, 0]], complex),
    "Z": np.array([[1, 0], [0, -1]], complex),
}

# single-mode rotation (angle, phase) that maps each Pauli onto Z before readout
_TO_Z = {"X": (-math.pi / 2, math.pi / 2), "Y": (math.pi / 2, 0.0)}


@dataclass(frozen=True)
class PauliString:
    """Product of single-mode Paulis with a sign, e.g. ``PauliString((6, 9), "XZ")``."""

    modes: tuple[int, ...]
    ops: str
    sign: int = 1

    def __post_init__(self):
        object.__setattr__(self, "modes", tuple(self.modes))
        object.__setattr__(self, "ops", self.ops.upper())
        if len(self.ops) != len(self.modes):
            raise ValueError("one Pauli letter per mode")
        if set(self.ops) - set("IXYZ"):
            raise ValueError("Pauli letters must be I, X, Y or Z")
        if len(set(self.modes)) != len(self.modes):
            raise ValueError("modes must be distinct")
        if self.sign not in (1, -1):
            raise ValueError("sign must be +1 or -1")

    @property
    def is_identity(self) -> bool:
        return set(self.ops) <= {"I"}

    def matrix(self) -> np.ndarray:
        M = np.array([[1.0 + 0j]])
        for c in self.ops:
            M = np.kron(M, PAULI[c])
        return self.sign * M

    def __str__(self) -> str:
        s = "-" if self.sign < 0 else ""
        return s + "".join(f"{c}{m}" for c, m in zip(self.ops, self.modes))


def _pauli_labels(n: int) -> list[str]:
    return ["".join(p) for p in itertools.product("IXYZ", repeat=n)]


def to_json_array(a: np.ndarray) -> list:
    """Nested ``[re, im]`` pairs."""
    a = np.asarray(a)
    return np.stack([a.real, a.imag], axis=-1).tolist()


# ------------------------------------------------------------ preparation and correlators


def prepare(program: GateProgram | Sequence[GateOp], modes: Sequence[int] | None = None, device=None,
            noise: NoiseModel | None = None) -> EffectiveState:
    """Run ``program`` from the all-vacuum state with the transmon in ``|g>``."""
    ops = program.ops if isinstance(program, GateProgram) else tuple(program)
    if modes is None:
        modes = sorted({m for op in ops for m in op.modes()})
    state = EffectiveState.from_modes(modes)
    if noise is not None:
        state = state.to_density()
    for op in ops:
        state = apply_gate_effective(state, op, device, noise)
    return state


def correlator_sequence(pauli: PauliString, device=None) -> list[Primitive]:
    """Primitives that read ``<pauli>`` into the transmon ``|g>`` population.

    A single non-identity factor is swapped into the transmon and rotated onto
    Z.  Longer strings use Ramsey interferometry: each non-Z factor is first
    rotated onto Z by a single-mode gate, then a pair of transmon pi/2 pulses
    brackets one transmon-mode CZ per factor (two e1-f0 exchanges).  In both
    cases ``2 P_g - 1 = <pauli>``.
    """
    dur = device.control.charge_pulse_ns if device is not None else 0.0
    active = [(c, m) for c, m in zip(pauli.ops, pauli.modes) if c != "I"]
    if len(active) == 1:
        c, m = active[0]
        prims = decompose(GateOp("iswap", (m,)), device)
        prims = [Primitive(p.kind, p.duration, p.mode, p.transition, c=-1j) for p in prims]
        if c in _TO_Z:
            prims.append(Primitive("rot", dur, None, "ge", *_TO_Z[c]))
        return prims
    prims = []
    for c, m in active:
        if c in _TO_Z:
            prims += decompose(GateOp("single", (m,), *_TO_Z[c]), device)
    prims.append(Primitive("rot", dur, None, "ge", math.pi / 2, math.pi / 2))
    for c, m in active:
        prims += decompose(GateOp("iswap", (m,), transition="ef"), device) * 2
    prims.append(Primitive("rot", dur, None, "ge", -math.pi / 2, math.pi / 2))
    return prims


def _direct(state: EffectiveState, pauli: PauliString) -> float:
    rho = state.reduced([state.axis(m) for m in pauli.modes])
    return float(np.real(np.trace(rho @ pauli.matrix())))


def _seeds(seed, n: int) -> list:
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return ss.spawn(n)


def _ramsey(state: EffectiveState, pauli: PauliString, device, noise, shots, rng) -> float:
    out = apply_primitives(state, correlator_sequence(pauli, device), noise)
    pg = float(np.clip(out.transmon_populations()[0], 0.0, 1.0))
    if shots:
        pg = rng.binomial(int(shots), pg) / int(shots)
    return pauli.sign * (2.0 * pg - 1.0)


def measure_correlator(state_prep: GateProgram | EffectiveState, pauli: PauliString, device=None,
                       noise: NoiseModel | None = None, method: str = "ramsey", shots: int | None = None,
                       seed=None) -> float:
    """Expectation of ``pauli`` after ``state_prep``.

    ``method="ramsey"`` emulates the transmon interferometry readout (including
    decoherence during it when ``noise`` is given); ``method="direct"`` traces the
    simulated density matrix.  An identity string returns 1.
    """
    if pauli.is_identity:
        return float(pauli.sign)
    if isinstance(state_prep, EffectiveState):
        state = state_prep
        missing = set(pauli.modes) - set(state.modes)
        if missing:
            raise ValueError(f"modes {sorted(missing)} are not part of the state")
    else:
        modes = sorted(set(state_prep.modes()) | set(pauli.modes))
        state = prepare(state_prep, modes, device, noise)
    if method == "direct":
        return pauli.sign * _direct(state, PauliString(pauli.modes, pauli.ops))
    if method != "ramsey":
        raise ValueError("method must be 'ramsey' or 'direct'")
    return _ramsey(state, pauli, device, noise, shots, np.random.default_rng(seed))


def project_density(rho: np.ndarray) -> np.ndarray:
    """Clip negative eigenvalues to zero and renormalize the trace to one."""
    rho = 0.5 * (rho + rho.conj().T)
    w, V = np.linalg.eigh(rho)
    w = np.clip(w, 0.0, None)
    if w.sum() <= 0:
        raise ValueError("density matrix has no positive part")
    w = w / w.sum()
    return (V * w) @ V.conj().T


def state_fidelity(rho: np.ndarray, target: np.ndarray) -> float:
    """``<psi|rho|psi>`` for a target vector, Uhlmann fidelity for a target matrix."""
    return fidelity(rho, target)


def state_tomography(prep: GateProgram | EffectiveState, modes: Sequence[int], device=None,
                     noise: NoiseModel | None = None, method: str = "direct", shots: int | None = None,
                     seed=None, project: bool = True) -> np.ndarray:
    """Density matrix of ``modes`` from all ``4**n - 1`` correlators by linear inversion.

    With ``project`` the estimate is made physical by :func:`project_density`.
    """
    modes = tuple(modes)
    n = len(modes)
    if not 1 <= n <= 4:
        raise ValueError("state tomography supports 1 to 4 modes")
    if isinstance(prep, EffectiveState):
        state = prep
    else:
        state = prepare(prep, sorted(set(prep.modes()) | set(modes)), device, noise)
    labels = _pauli_labels(n)
    rngs = _seeds(seed, len(labels))
    rho = np.zeros((2**n, 2**n), complex)
    for lab, ss in zip(labels, rngs):
        P = PauliString(modes, lab)
        val = measure_correlator(state, P, device, noise, method, shots, ss)
        rho += val * P.matrix()
    rho /= 2**n
    return project_density(rho) if project else rho


# ------------------------------------------------------------ process tomography


@dataclass
class ProcessMatrix:
    """Process matrix in the Pauli basis ``labels`` (see module conventions)."""

    chi: np.ndarray
    labels: list[str]

    @property
    def n_qubits(self) -> int:
        return int(round(math.log(len(self.labels), 4)))

    def trace_condition(self) -> np.ndarray:
        """``sum_mn chi_mn P_n^dag P_m``; the identity for a trace-preserving map."""
        P = [_pauli_matrix(l) for l in self.labels]
        d = P[0].shape[0]
        out = np.zeros((d, d), complex)
        for m, Pm in enumerate(P):
            for n, Pn in enumerate(P):
                out += self.chi[m, n] * Pn.conj().T @ Pm
        return out

    def fidelity(self, ideal: "ProcessMatrix | np.ndarray") -> float:
        chi_i = ideal.chi if isinstance(ideal, ProcessMatrix) else ideal
        return float(np.real(np.trace(chi_i @ self.chi)))

    def to_json(self) -> dict:
        return {"basis": self.labels, "chi": to_json_array(self.chi)}


def _pauli_matrix(label: str) -> np.ndarray:
    M = np.array([[1.0 + 0j]])
    for c in label:
        M = np.kron(M, PAULI[c])
    return M


def _pauli_superops(n: int) -> np.ndarray:
    """Columns are row-major vec of ``X -> P_m X P_n^dag`` for all (m, n)."""
    labels = _pauli_labels(n)
    P = [_pauli_matrix(l) for l in labels]
    cols = []
    for Pm in P:
        for Pn in P:
            cols.append(np.kron(Pm, Pn.conj()).reshape(-1))
    return np.array(cols).T


def chi_from_superop(S: np.ndarray) -> ProcessMatrix:
    """Process matrix of a row-major superoperator on ``n`` qubits."""
    d = int(round(math.sqrt(S.shape[0])))
    n = int(round(math.log2(d)))
    B = _pauli_superops(n)
    # the Pauli superoperators are orthogonal with norm d^2
    coef = B.conj().T @ S.reshape(-1) / d**2
    chi = coef.reshape(4**n, 4**n)
    return ProcessMatrix(0.5 * (chi + chi.conj().T), _pauli_labels(n))


def chi_from_unitary(U: np.ndarray) -> ProcessMatrix:
    d = U.shape[0]
    n = int(round(math.log2(d)))
    labels = _pauli_labels(n)
    u = np.array([np.trace(_pauli_matrix(l).conj().T @ U) / d for l in labels])
    return ProcessMatrix(np.outer(u, u.conj()), labels)


def _tp_projector(n: int):
    labels = _pauli_labels(n)
    P = [_pauli_matrix(l) for l in labels]
    d = P[0].shape[0]
    # linear map vec(chi) -> vec(sum chi_mn P_n^dag P_m)
    A = np.zeros((d * d, len(P) ** 2), complex)
    for m, Pm in enumerate(P):
        for k, Pn in enumerate(P):
            A[:, m * len(P) + k] = (Pn.conj().T @ Pm).reshape(-1)
    return A, np.linalg.pinv(A), np.eye(d, dtype=complex).reshape(-1)


def project_cptp(pm: ProcessMatrix, tol: float = 1e-9, max_iter: int = 5000) -> ProcessMatrix:
    """Nearest completely positive, trace-preserving process matrix.

    Dykstra alternation between the positive cone (eigenvalue clipping) and
    the trace-preservation affine subspace.
    """
    A, Ap, b = _tp_projector(pm.n_qubits)
    shape = pm.chi.shape

    def p_tp(x):
        v = x.reshape(-1)
        y = (v - Ap @ (A @ v - b)).reshape(shape)
        return 0.5 * (y + y.conj().T)

    def p_psd(x):
        w, V = np.linalg.eigh(0.5 * (x + x.conj().T))
        return (V * np.clip(w, 0, None)) @ V.conj().T

    x = 0.5 * (pm.chi + pm.chi.conj().T)
    p = np.zeros_like(x)
    q = np.zeros_like(x)
    for _ in range(max_iter):
        y = p_tp(x + p)
        p = x + p - y
        x_new = p_psd(y + q)
        q = y + q - x_new
        done = np.abs(x_new - x).max() < tol and np.abs(A @ x_new.reshape(-1) - b).max() < tol
        x = x_new
        if done:
            break
    return ProcessMatrix(x, pm.labels)


# input states |0>, |1>, |+>, |+i> as single-mode gates from vacuum
_INPUTS = {"0": None, "1": (math.pi, 0.0), "+": (math.pi / 2, math.pi / 2), "+i": (math.pi / 2, math.pi)}
_INPUT_VECS = {"0": np.array([1, 0], complex), "1": np.array([0, 1], complex),
               "+": np.array([1, 1], complex) / math.sqrt(2), "+i": np.array([1, 1j], complex) / math.sqrt(2)}


def process_tomography(gate: GateOp, j: int, k: int, device=None, noise: NoiseModel | None = None,
                       method: str = "direct", shots: int | None = None, seed=None,
                       project: bool = True) -> tuple[ProcessMatrix, float]:
    """Process matrix of ``gate`` on modes ``(j, k)`` and its fidelity to the ideal gate.

    Sixteen product inputs are prepared with single-mode gates, the gate is applied
    once, and each output is reconstructed by :func:`state_tomography`.  The
    superoperator follows by linear inversion and ``chi`` from its Pauli expansion;
    with ``project`` it is mapped to the nearest CPTP process matrix.
    """
    if j == k:
        raise ValueError("process tomography needs two distinct modes")
    modes = (j, k)
    keys = list(itertools.product(_INPUTS, repeat=2))
    seeds = _seeds(seed, len(keys))
    ins, outs = [], []
    for (a, b), ss in zip(keys, seeds):
        ops = [GateOp("single", (m,), *_INPUTS[lab]) for m, lab in ((j, a), (k, b)) if _INPUTS[lab]]
        ops.append(gate)
        rho = state_tomography(GateProgram(tuple(ops)), modes, device, noise, method, shots, ss, project=False)
        v = np.kron(_INPUT_VECS[a], _INPUT_VECS[b])
        ins.append(np.outer(v, v.conj()).reshape(-1))
        outs.append(rho.reshape(-1))
    S = np.array(outs).T @ np.linalg.inv(np.array(ins).T)
    pm = chi_from_superop(S)
    if project:
        pm = project_cptp(pm)
    ideal = chi_from_unitary(ideal_unitary(gate, modes))
    return pm, pm.fidelity(ideal)


# ------------------------------------------------------------ Clifford group and RB

# generator pulses (angle, phase): +-X/2, +-Y/2, X, Y
_GENERATORS = ((math.pi / 2, 0.0), (-math.pi / 2, 0.0), (math.pi / 2, math.pi / 2),
               (-math.pi / 2, math.pi / 2), (math.pi, 0.0), (math.pi, math.pi / 2))


def _rot(angle, phase):
    c, s = math.cos(angle / 2), math.sin(angle / 2)
    return np.array([[c, -1j * s * np.exp(-1j * phase)], [-1j * s * np.exp(1j * phase), c]])


def _canon(U: np.ndarray) -> tuple:
    flat = U.reshape(-1)
    i = int(np.argmax(np.abs(flat) > 1e-6))
    V = flat * np.exp(-1j * np.angle(flat[i]))
    return tuple(np.round(np.concatenate([V.real, V.imag]), 6) + 0.0)


@dataclass(frozen=True)
class CliffordGroup:
    """The 24 single-qubit Cliffords with shortest pulse words and lookup tables.

    ``table[a, b]`` is the index of ``U_a @ U_b`` (``b`` applied first).
    """

    unitaries: tuple
    words: tuple
    table: np.ndarray
    inverse: np.ndarray

    def __len__(self) -> int:
        return len(self.unitaries)

    def compose(self, seq: Iterable[int]) -> int:
        """Index of the product of ``seq`` applied in order."""
        acc = 0
        for c in seq:
            acc = int(self.table[c, acc])
        return acc


_GROUP: CliffordGroup | None = None


def clifford_group() -> CliffordGroup:
    global _GROUP
    if _GROUP is not None:
        return _GROUP
    I = np.eye(2, dtype=complex)
    found = {_canon(I): 0}
    unitaries, words = [I], [()]
    queue = deque([0])
    while queue:
        i = queue.popleft()
        for g in _GENERATORS:
            U = _rot(*g) @ unitaries[i]
            key = _canon(U)
            if key not in found:
                found[key] = len(unitaries)
                unitaries.append(U)
                words.append(words[i] + (g,))
                queue.append(found[key])
    n = len(unitaries)
    table = np.empty((n, n), int)
    for a in range(n):
        for b in range(n):
            table[a, b] = found[_canon(unitaries[a] @ unitaries[b])]
    inverse = np.array([int(np.where(table[a] == 0)[0][0]) for a in range(n)])
    _GROUP = CliffordGroup(tuple(unitaries), tuple(words), table, inverse)
    return _GROUP


def _clifford_prims(idx: int, target, device) -> list[Primitive]:
    word = clifford_group().words[idx]
    if target == "transmon":
        dur = device.control.charge_pulse_ns if device is not None else 0.0
        return [Primitive("rot", dur, None, "ge", a, p) for a, p in word]
    return mode_sandwich(device, int(target), word)


def _superop(prims: Sequence[Primitive], modes: tuple, noise) -> np.ndarray:
    dims = (3,) + (2,) * len(modes)
    n = int(np.prod(dims))
    S = np.empty((n * n, n * n), complex)
    for col in range(n * n):
        rho = np.zeros((n, n), complex)
        rho[divmod(col, n)] = 1.0
        st = apply_primitives(EffectiveState(modes, rho.reshape(dims + dims)), prims, noise)
        S[:, col] = st.data.reshape(-1)
    return S


def _target_space(target):
    """(modes of the simulated state, flat indices of the qubit levels |0>, |1>)."""
    if target == "transmon":
        return (), (0, 1)
    return (int(target),), (0, 1)  # |g,0>, |g,1> in (transmon, mode) row-major order


@dataclass
class RBResult:
    target: str
    lengths: np.ndarray
    survival: np.ndarray  # mean over sequences
    survival_std: np.ndarray
    raw: np.ndarray  # (n_seq, len(lengths))
    A: float | None = None
    B: float | None = None
    p: float | None = None
    fidelity: float | None = None
    p_err: float | None = None
    residual_rms: float | None = None
    fit_ok: bool = False
    meta: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "target": self.target, "lengths": [int(m) for m in self.lengths],
            "survival": self.survival.tolist(), "survival_std": self.survival_std.tolist(),
            "A": self.A, "B": self.B, "p": self.p, "p_err": self.p_err, "fidelity": self.fidelity,
            "residual_rms": self.residual_rms, "fit_ok": self.fit_ok, **self.meta,
        }

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("length,survival_mean,survival_std\n")
            for m, s, e in zip(self.lengths, self.survival, self.survival_std):
                fh.write(f"{int(m)},{s:.10f},{e:.10f}\n")


def _fit_rb(lengths, surv):
    def model(m, A, p, B):
        return A * p**m + B

    if np.ptp(surv) < 1e-10:
        # flat curve: no decay to fit
        return 0.0, 1.0, float(np.mean(surv)), 0.0, float(np.std(surv))
    try:
        with warnings.catch_warnings():
            # three lengths fit exactly; p_err is then reported as nan
            warnings.simplefilter("ignore", OptimizeWarning)
            (A, p, B), cov = curve_fit(model, lengths, surv, p0=(0.5, 0.99, 0.5),
                                       bounds=([-2, 0, -2], [2, 1, 2]), maxfev=20000)
    except (RuntimeError, ValueError):
        return None
    resid = surv - model(np.asarray(lengths, float), A, p, B)
    perr = float(np.sqrt(cov[1, 1])) if np.all(np.isfinite(cov)) else float("nan")
    return float(A), float(p), float(B), perr, float(np.sqrt(np.mean(resid**2)))


def randomized_benchmarking(target, lengths: Sequence[int], n_seq: int = 32, seed=0, device=None,
                            noise: NoiseModel | None = None) -> RBResult:
    """Single-qubit Clifford RB of the transmon (``target="transmon"``) or of mode ``k``.

    Mode Cliffords are transmon Clifford pulse words between a g-e iSWAP pair.
    Each sequence draws from its own RNG stream spawned from ``seed``.  Survival
    is the population returned to ``|g>`` (transmon) or ``|g, 0_k>`` (mode).
    """
    lengths = np.asarray(list(lengths), int)
    if lengths.size == 0 or np.any(lengths < 1) or np.any(np.diff(lengths) <= 0):
        raise ValueError("lengths must be positive and strictly ascending")
    if n_seq < 1:
        raise ValueError("n_seq must be >= 1")
    target = "transmon" if str(target) in ("transmon", "T", "t") else int(target)
    G = clifford_group()
    modes, _ = _target_space(target)
    supers = [_superop(_clifford_prims(i, target, device), modes, noise) for i in range(len(G))]
    dim = 3 * 2 ** len(modes)
    rho0 = np.zeros((dim, dim), complex)
    rho0[0, 0] = 1.0
    raw = np.empty((n_seq, len(lengths)))
    streams = _seeds(seed, n_seq)
    for s, ss in enumerate(streams):
        rng = np.random.default_rng(ss)
        seq = rng.integers(len(G), size=int(lengths[-1]))
        for i, m in enumerate(lengths):
            cl = list(seq[:m])
            cl.append(int(G.inverse[G.compose(cl)]))
            v = rho0.reshape(-1)
            for c in cl:
                v = supers[c] @ v
            raw[s, i] = float(np.real(v[0]))
    surv = raw.mean(axis=0)
    res = RBResult(str(target), lengths, surv, raw.std(axis=0), raw,
                   meta={"n_seq": int(n_seq), "seed": seed if isinstance(seed, int) else None})
    fit = _fit_rb(lengths.astype(float), surv) if len(lengths) >= 3 else None
    if fit is not None:
        A, p, B, perr, rms = fit
        res.A, res.p, res.B, res.p_err, res.residual_rms = A, p, B, perr, rms
        res.fidelity = 1 - (1 - p) / 2
        res.fit_ok = True
    return res


def clifford_average_fidelity(target, device=None, noise: NoiseModel | None = None) -> float:
    """Mean average gate fidelity of the 24 compiled Cliffords on the qubit subspace."""
    G = clifford_group()
    target = "transmon" if str(target) in ("transmon", "T", "t") else int(target)
    modes, idx = _target_space(target)
    dim = 3 * 2 ** len(modes)
    sel = [a * dim + b for a in idx for b in idx]
    out = []
    for i, U in enumerate(G.unitaries):
        S = _superop(_clifford_prims(i, target, device), modes, noise)[np.ix_(sel, sel)]
        f_pro = float(np.real(np.trace(np.kron(U, U.conj()).conj().T @ S))) / 4
        out.append((2 * f_pro + 1) / 3)
    return float(np.mean(out))


def dump_json(obj, path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")
