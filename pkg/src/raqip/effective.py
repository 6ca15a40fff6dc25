"""Analytic sideband rates and a fast gate-level simulator.

The gate-level model stores states on a ``(3, 2, ..., 2)`` tensor (transmon
g/e/f, then one qubit per active mode) and applies every primitive as a
factored action on one or two axes, so nine-mode states never require a
full-size operator.  With decoherence, each primitive becomes a fixed
superoperator ``exp(L * duration)`` acting on the density tensor.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np
from scipy.linalg import expm

__all__ = [
    "bessel_j1",
    "J1_MAX_X",
    "J1_MAX",
    "SidebandSpec",
    "g_eff",
    "rabi_transfer",
    "coherence_limit",
    "Primitive",
    "rotation_matrix",
    "iswap_unitary",
    "EffectiveState",
    "apply_primitive",
    "apply_primitives",
    "apply_gate_effective",
    "primitive_superop",
    "NoiseModel",
]

J1_MAX_X = 1.8411837813406593
J1_MAX = 0.5818652242815963
_DOMAIN = 20.0


def _j1_series(x: float) -> float:
    h = 0.5 * x
    term = h
    total = term
    k = 0
    while True:
        k += 1
        term *= -h * h / (k * (k + 1))
        total += term
        if abs(term) < 1e-17 * max(1.0, abs(total)):
            return total


def _j1_miller(x: float) -> float:
    # backward recurrence J_{n-1} = (2n/x) J_n - J_{n+1}, normalised with
    # J0 + 2 sum J_{2k} = 1
    n0 = 2 * int((abs(x) + 15 + 10 * math.sqrt(abs(x))) / 2)
    jp, j = 0.0, 1e-30
    norm = 0.0
    j1 = 0.0
    for n in range(n0, 0, -1):
        jm = (2 * n / x) * j - jp
        jp, j = j, jm
        if n - 1 == 1:
            j1 = j
        if (n - 1) % 2 == 0 and n - 1 > 0:
            norm += 2 * j
        if abs(j) > 1e250:
            jp *= 1e-250
            j *= 1e-250
            j1 *= 1e-250
            norm *= 1e-250
    norm += j  # J0
    return j1 / norm


def bessel_j1(x):
    """First-kind Bessel function of order one for ``|x| <= 20``.

    Power series for ``|x| <= 8`` and Miller backward recurrence beyond;
    absolute error below 1e-10 on the whole domain.
    """
    arr = np.asarray(x, float)
    if np.any(np.abs(arr) > _DOMAIN) or np.any(~np.isfinite(arr)):
        raise ValueError(f"bessel_j1 domain is |x| <= {_DOMAIN}")
    flat = [(_j1_series(v) if abs(v) <= 8 else math.copysign(1.0, v) * _j1_miller(abs(v))) for v in arr.ravel()]
    out = np.array(flat).reshape(arr.shape)
    return float(out) if np.ndim(x) == 0 else out


@dataclass(frozen=True)
class SidebandSpec:
    mode: int
    transition: str  # "ge" or "ef"
    eps: float
    nu_sb: float
    detuning: float = 0.0

    def __post_init__(self):
        if self.transition not in ("ge", "ef"):
            raise ValueError("transition must be 'ge' or 'ef'")
        if self.eps < 0 or not self.nu_sb > 0:
            raise ValueError("need eps >= 0 and nu_sb > 0")

    @property
    def z(self) -> float:
        return self.eps / (2 * self.nu_sb)


def g_eff(device, spec: SidebandSpec) -> float:
    """``g_k J1(eps / 2 nu_sb)``, times sqrt(2) on the e1-f0 transition."""
    factor = math.sqrt(2.0) if spec.transition == "ef" else 1.0
    return factor * device.g(spec.mode) * bessel_j1(spec.z)


def rabi_transfer(g, delta, t):
    """Excitation transfer probability for coupling ``g`` and detuning ``delta`` (GHz) at ``t`` (ns)."""
    g = np.asarray(g, float)
    delta = np.asarray(delta, float)
    t = np.asarray(t, float)
    w2 = (2 * g) ** 2 + delta**2
    with np.errstate(invalid="ignore", divide="ignore"):
        amp = np.where(w2 > 0, (2 * g) ** 2 / np.where(w2 > 0, w2, 1.0), 0.0)
    out = amp * np.sin(np.pi * np.sqrt(w2) * t) ** 2
    return float(out) if out.ndim == 0 else out


def coherence_limit(gate_time: float, subsystems: Iterable[tuple[float, float]], prefactor: float = 1 / 3) -> float:
    """Coherence-limited average gate fidelity ``1 - prefactor * t * sum(1/T1 + 1/T_phi)``.

    ``subsystems`` lists ``(T1, T2)`` pairs in ns.  The default prefactor 1/3
    is the exact first-order average-fidelity loss of a qubit under
    amplitude damping plus pure dephasing; 1/6 is available as an
    alternative convention.
    """
    if gate_time < 0:
        raise ValueError("gate_time must be >= 0")
    rate = 0.0
    for t1, t2 in subsystems:
        if t1 <= 0 or t2 <= 0:
            raise ValueError("coherence times must be positive")
        g1 = 0.0 if math.isinf(t1) else 1.0 / t1
        g2 = 0.0 if math.isinf(t2) else 1.0 / t2
        rate += g1 + max(g2 - 0.5 * g1, 0.0)
    return 1.0 - prefactor * gate_time * rate


# ------------------------------------------------------------ primitives


@dataclass(frozen=True)
class Primitive:
    """Physical action in the tracked frame.

    kind:
      ``rot``   charge rotation on the transmon (``transition`` ge/ef, ``angle``, ``phase``)
      ``iswap`` pi sideband exchange with mode ``mode``, coupling phase ``c``
                (unit complex) on ``|m,1> <-> |m+1,0>``
      ``idle``  wait
    """

    kind: str
    duration: float = 0.0
    mode: int | None = None
    transition: str = "ge"
    angle: float = 0.0
    phase: float = 0.0
    c: complex = 1.0


def rotation_matrix(angle: float, phase: float, levels: int = 3, transition: str = "ge") -> np.ndarray:
    """exp(-i angle/2 (cos phase X + sin phase Y)) on the chosen transmon transition."""
    lo = 0 if transition == "ge" else 1
    U = np.eye(levels, dtype=complex)
    c, s = math.cos(angle / 2), math.sin(angle / 2)
    U[lo, lo] = c
    U[lo + 1, lo + 1] = c
    U[lo, lo + 1] = -1j * s * np.exp(-1j * phase)
    U[lo + 1, lo] = -1j * s * np.exp(1j * phase)
    return U


def iswap_unitary(c: complex, transition: str = "ge", levels: int = 3) -> np.ndarray:
    """(levels*2)-dim unitary on transmon (x) mode: |m+1,0> -> -i c |m,1>, |m,1> -> -i c* |m+1,0>."""
    m = 0 if transition == "ge" else 1
    d = levels * 2
    U = np.eye(d, dtype=complex)
    lo = m * 2 + 1  # |m, 1>
    hi = (m + 1) * 2 + 0  # |m+1, 0>
    U[lo, lo] = U[hi, hi] = 0.0
    U[lo, hi] = -1j * c
    U[hi, lo] = -1j * np.conj(c)
    return U


def _primitive_local(p: Primitive, levels: int = 3) -> tuple[np.ndarray, bool]:
    """Local unitary of a primitive; second value says whether it acts on (transmon, mode)."""
    if p.kind == "rot":
        return rotation_matrix(p.angle, p.phase, levels, p.transition), False
    if p.kind == "iswap":
        return iswap_unitary(p.c, p.transition, levels), True
    if p.kind == "idle":
        return np.eye(levels, dtype=complex), False
    raise ValueError(f"unknown primitive kind {p.kind!r}")


class EffectiveState:
    """State on the (transmon, mode_1, ..., mode_n) tensor of the gate-level model."""

    def __init__(self, modes: Sequence[int], data: np.ndarray | None = None, levels: int = 3):
        self.modes = tuple(modes)
        self.levels = levels
        dims = (levels,) + (2,) * len(self.modes)
        self.dims = dims
        if data is None:
            data = np.zeros(dims, complex)
            data[(0,) * len(dims)] = 1.0
        self.data = np.asarray(data, complex)
        if self.data.shape not in (dims, dims + dims):
            raise ValueError("data shape does not match modes")

    @classmethod
    def from_modes(cls, modes, bits: Sequence[int] | None = None, levels: int = 3) -> "EffectiveState":
        s = cls(modes, levels=levels)
        s.data[...] = 0
        s.data[(0,) + tuple(bits or [0] * len(s.modes))] = 1.0
        return s

    @property
    def is_pure(self) -> bool:
        return self.data.ndim == len(self.dims)

    def copy(self) -> "EffectiveState":
        return EffectiveState(self.modes, self.data.copy(), self.levels)

    def to_density(self) -> "EffectiveState":
        if not self.is_pure:
            return self.copy()
        v = self.data
        return EffectiveState(self.modes, np.multiply.outer(v, v.conj()), self.levels)

    def vector(self) -> np.ndarray:
        return self.data.reshape(-1)

    def matrix(self) -> np.ndarray:
        n = int(np.prod(self.dims))
        return self.to_density().data.reshape(n, n)

    def axis(self, mode: int) -> int:
        try:
            return 1 + self.modes.index(mode)
        except ValueError:
            raise ValueError(f"mode {mode} is not part of this state") from None

    def norm(self) -> float:
        if self.is_pure:
            return float(np.linalg.norm(self.data))
        return float(np.real(self.matrix().trace()))

    def transmon_populations(self) -> np.ndarray:
        return np.real(np.diag(self.reduced([0])))

    def mode_populations(self) -> np.ndarray:
        """<n_k> for each mode."""
        out = []
        for i in range(1, len(self.dims)):
            p = self.reduced([i])
            out.append(float(np.real(p[1, 1])))
        return np.array(out)

    def reduced(self, axes: Sequence[int]) -> np.ndarray:
        """Reduced density matrix on tensor axes ``axes`` (0 = transmon)."""
        n = len(self.dims)
        axes = list(axes)
        rho = self.to_density().data
        letters = [chr(97 + i) for i in range(n)]
        bra = [chr(65 + i) if i in axes else letters[i] for i in range(n)]
        out = "".join(letters[i] for i in axes) + "".join(bra[i] for i in axes)
        r = np.einsum("".join(letters) + "".join(bra) + "->" + out, rho)
        d = int(np.prod([self.dims[i] for i in axes]))
        return r.reshape(d, d)

    def modes_state(self) -> np.ndarray:
        """Density matrix of the modes with the transmon traced out."""
        return self.reduced(list(range(1, len(self.dims))))


def _apply_local(data: np.ndarray, U: np.ndarray, axes: Sequence[int], n: int, pure: bool) -> np.ndarray:
    """Apply ``U`` on tensor axes ``axes`` (ket side; bra side too for densities)."""
    k = len(axes)
    shp = [data.shape[a] for a in axes]
    Ut = U.reshape(shp + shp)
    # ket
    out = np.tensordot(Ut, data, axes=(list(range(k, 2 * k)), list(axes)))
    out = np.moveaxis(out, list(range(k)), list(axes))
    if pure:
        return out
    bra_axes = [a + n for a in axes]
    out = np.tensordot(Ut.conj(), out, axes=(list(range(k, 2 * k)), bra_axes))
    return np.moveaxis(out, list(range(k)), bra_axes)


def apply_primitive(state: EffectiveState, p: Primitive, noise=None) -> EffectiveState:
    """Apply ``p`` exactly (unitary) or through its noisy superoperator."""
    n = len(state.dims)
    if noise is not None and p.duration > 0:
        return _apply_noisy(state, p, noise)
    U, two = _primitive_local(p, state.levels)
    axes = [0, state.axis(p.mode)] if two else [0]
    if p.kind == "idle":
        return state
    data = _apply_local(state.data, U, axes, n, state.is_pure)
    return EffectiveState(state.modes, data, state.levels)


def apply_primitives(state: EffectiveState, prims: Iterable[Primitive], noise=None) -> EffectiveState:
    for p in prims:
        state = apply_primitive(state, p, noise)
    return state


# ------------------------------------------------------------ noise


@dataclass(frozen=True)
class NoiseModel:
    """Per-subsystem (T1, T2) in ns for the transmon and each mode."""

    transmon: tuple[float, float]
    modes: dict

    @classmethod
    def from_device(cls, device) -> "NoiseModel":
        c = device.coherence
        return cls((c.t1_transmon, c.t2_transmon), {k: c.mode(k) for k in range(1, device.n_modes + 1)})


def _lindblad_ops(levels_list, t1t2_list):
    """Collapse operators on a small product space given per-subsystem (T1, T2)."""
    from .hilbert import ladder

    dims = levels_list
    ops = []
    for i, (d, (t1, t2)) in enumerate(zip(dims, t1t2_list)):
        a = ladder(d)
        n = a.conj().T @ a
        for local, rate in ((a, 0.0 if math.isinf(t1) else 1.0 / t1),
                            (n, 2.0 * max((0.0 if math.isinf(t2) else 1.0 / t2)
                                          - (0.0 if math.isinf(t1) else 0.5 / t1), 0.0))):
            if rate <= 1e-15:
                continue
            mats = [np.eye(dd, dtype=complex) for dd in dims]
            mats[i] = local * math.sqrt(rate)
            op = mats[0]
            for m in mats[1:]:
                op = np.kron(op, m)
            ops.append(op)
    return ops


@lru_cache(maxsize=512)
def _superop_cached(key):
    kind, levels, H_bytes, dim, duration, t1t2 = key
    H = np.frombuffer(H_bytes, complex).reshape(dim, dim)
    dims = [levels] + [2] * (len(t1t2) - 1)
    ops = _lindblad_ops(dims, t1t2)
    I = np.eye(dim)
    # row-major vec: vec(A X B) = (A kron B^T) vec(X)
    L = -1j * (np.kron(H, I) - np.kron(I, H.T))
    for c in ops:
        cd = c.conj().T
        L = L + np.kron(c, c.conj()) - 0.5 * np.kron(cd @ c, I) - 0.5 * np.kron(I, (cd @ c).T)
    return expm(L * duration)


def primitive_superop(p: Primitive, levels: int, t1t2) -> np.ndarray:
    """Superoperator (row-major vec) of a primitive with decoherence during ``p.duration``.

    The coherent part is generated by a constant Hamiltonian whose time-``duration``
    propagator equals the ideal primitive, so dissipation acts throughout the pulse.
    """
    U, two = _primitive_local(p, levels)
    w, V = np.linalg.eig(U)
    # principal log; choose generator H with U = exp(-i H T)
    H = V @ np.diag(1j * np.log(w)) @ np.linalg.inv(V) / max(p.duration, 1e-12)
    H = 0.5 * (H + H.conj().T)
    key = (p.kind, levels, np.ascontiguousarray(H).tobytes(), U.shape[0], float(p.duration), tuple(t1t2))
    return _superop_cached(key)


def _apply_noisy(state: EffectiveState, p: Primitive, noise: NoiseModel) -> EffectiveState:
    st = state.to_density()
    n = len(st.dims)
    U, two = _primitive_local(p, st.levels)
    act = [0, st.axis(p.mode)] if two else [0]
    t1t2 = [noise.transmon] + ([noise.modes[p.mode]] if two else [])
    S = primitive_superop(p, st.levels, t1t2)
    data = _apply_superop(st.data, S, act, n)
    # idle decay of the modes not touched by the primitive
    for k in st.modes:
        if two and k == p.mode:
            continue
        data = _mode_idle(data, st.axis(k), n, noise.modes[k], p.duration)
    return EffectiveState(st.modes, data, st.levels)


def _apply_superop(rho: np.ndarray, S: np.ndarray, axes: Sequence[int], n: int) -> np.ndarray:
    k = len(axes)
    shp = [rho.shape[a] for a in axes]
    St = S.reshape(shp + shp + shp + shp)  # (ket_out, bra_out, ket_in, bra_in)
    src = list(axes) + [a + n for a in axes]
    out = np.tensordot(St, rho, axes=(list(range(2 * k, 4 * k)), src))
    return np.moveaxis(out, list(range(2 * k)), src)


def _mode_idle(rho, axis, n, t1t2, duration):
    """Amplitude damping + dephasing of a qubit mode for ``duration`` ns."""
    t1, t2 = t1t2
    if duration <= 0:
        return rho
    p1 = 0.0 if math.isinf(t1) else math.exp(-duration / t1)
    p1 = 1.0 if math.isinf(t1) else p1
    coh = 1.0 if math.isinf(t2) else math.exp(-duration / t2)
    S = np.zeros((2, 2, 2, 2), complex)  # out ket, out bra, in ket, in bra
    S[0, 0, 0, 0] = 1
    S[0, 0, 1, 1] = 1 - p1
    S[1, 1, 1, 1] = p1
    S[0, 1, 0, 1] = coh
    S[1, 0, 1, 0] = coh
    return _apply_superop(rho, S.reshape(4, 4), [axis], n)


def apply_gate_effective(state: EffectiveState, gate, device=None, noise: NoiseModel | None = None,
                         calibration=None) -> EffectiveState:
    """Apply a :class:`raqip.gates.GateOp` through its primitive decomposition."""
    from .gates import decompose

    for m in gate.modes():
        if m not in state.modes:
            raise ValueError(f"gate touches mode {m} which is not active in this state")
    prims = decompose(gate, device, calibration)
    return apply_primitives(state, prims, noise)
