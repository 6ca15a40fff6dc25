"""Tensor-product states and operators for transmon (x) memory modes.

Subsystem order is fixed: the transmon first, then the selected modes in
ascending mode index.  Basis index of a label ``(m_0, m_1, ..., m_s)`` is
row-major (first subsystem slowest)::

    index = sum_i m_i * prod_{j > i} dims[j]

which is the ordering produced by ``np.kron(A_0, A_1, ...)``.

A layout may cap the total excitation number; the basis is then the subset of
labels with ``sum(m) <= max_excitations`` kept in the same relative order.
Capped layouts are only meaningful for excitation-conserving dynamics.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from functools import cached_property, reduce
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "SpaceLayout",
    "QuantumState",
    "PhysicalityError",
    "ladder",
    "embed_ladder",
    "number_op",
    "embed",
    "build_hamiltonian",
    "partial_trace",
    "fidelity",
    "ket",
    "state_to_json",
    "state_from_json",
]

TOL = 1e-9


class PhysicalityError(ValueError):
    pass


@dataclass(frozen=True)
class SpaceLayout:
    transmon_levels: int
    modes: tuple[int, ...] = ()
    mode_levels: int = 2
    max_excitations: int | None = None

    def __post_init__(self):
        if self.transmon_levels < 2 or self.mode_levels < 2:
            raise ValueError("each subsystem needs at least 2 levels")
        if list(self.modes) != sorted(set(self.modes)):
            raise ValueError("modes must be distinct and ascending")

    @classmethod
    def for_device(cls, device, modes: Sequence[int] | None = None, max_excitations=None):
        modes = tuple(sorted(device.active_modes if modes is None else modes))
        return cls(device.transmon.n_levels, modes, device.mode_levels, max_excitations)

    @property
    def dims(self) -> tuple[int, ...]:
        return (self.transmon_levels,) + (self.mode_levels,) * len(self.modes)

    @property
    def n_subsystems(self) -> int:
        return 1 + len(self.modes)

    @property
    def capped(self) -> bool:
        return self.max_excitations is not None

    @cached_property
    def basis(self) -> tuple[tuple[int, ...], ...]:
        labels = itertools.product(*(range(d) for d in self.dims))
        if self.capped:
            labels = (lab for lab in labels if sum(lab) <= self.max_excitations)
        return tuple(labels)

    @cached_property
    def _lookup(self) -> dict:
        return {lab: i for i, lab in enumerate(self.basis)}

    @property
    def total_dim(self) -> int:
        return len(self.basis)

    def index(self, label: Sequence[int]) -> int:
        return self._lookup[tuple(label)]

    def subsystem_of_mode(self, k: int) -> int:
        return 1 + self.modes.index(k)

    @cached_property
    def occupation(self) -> np.ndarray:
        """(total_dim, n_subsystems) integer array of basis labels."""
        return np.array(self.basis, dtype=int).reshape(self.total_dim, self.n_subsystems)


def ket(layout: SpaceLayout, label: Sequence[int]) -> np.ndarray:
    v = np.zeros(layout.total_dim, complex)
    v[layout.index(label)] = 1.0
    return v


def ladder(d: int) -> np.ndarray:
    """Annihilation operator on a ``d``-level ladder: a|m> = sqrt(m)|m-1>."""
    return np.diag(np.sqrt(np.arange(1, d)), 1).astype(complex)


def _check_index(layout: SpaceLayout, i: int) -> None:
    if not 0 <= i < layout.n_subsystems:
        raise IndexError(f"subsystem index {i} out of range 0..{layout.n_subsystems - 1}")


def embed(layout: SpaceLayout, local_ops: dict[int, np.ndarray]) -> np.ndarray:
    """Operator acting as ``local_ops[i]`` on subsystem ``i`` and identity elsewhere."""
    for i in local_ops:
        _check_index(layout, i)
    if not layout.capped:
        mats = [local_ops.get(i, np.eye(d, dtype=complex)) for i, d in enumerate(layout.dims)]
        return reduce(np.kron, mats)
    # capped basis: matrix elements from label products
    out = np.zeros((layout.total_dim, layout.total_dim), complex)
    items = sorted(local_ops.items())
    for col, lab in enumerate(layout.basis):
        # enumerate output labels differing only on acted subsystems
        choices = [np.nonzero(op[:, lab[i]])[0] for i, op in items]
        for outs in itertools.product(*choices):
            new = list(lab)
            amp = 1.0 + 0j
            for (i, op), m in zip(items, outs):
                new[i] = m
                amp *= op[m, lab[i]]
            row = layout._lookup.get(tuple(new))
            if row is not None:
                out[row, col] += amp
    return out


def embed_ladder(layout: SpaceLayout, subsystem_index: int) -> np.ndarray:
    _check_index(layout, subsystem_index)
    return embed(layout, {subsystem_index: ladder(layout.dims[subsystem_index])})


def number_op(layout: SpaceLayout, subsystem_index: int) -> np.ndarray:
    _check_index(layout, subsystem_index)
    return np.diag(layout.occupation[:, subsystem_index].astype(complex))


def build_hamiltonian(device, nu_q_instant: float | None = None, layout: SpaceLayout | None = None,
                      rwa: bool = False, couplings: bool = True) -> np.ndarray:
    """Duffing transmon coupled to harmonic modes, in GHz (H/h).

    ``rwa=True`` keeps only the excitation-conserving part of the coupling.
    """
    if layout is None:
        layout = SpaceLayout.for_device(device)
    nu_q = device.transmon.nu_q0 if nu_q_instant is None else nu_q_instant
    occ = layout.occupation
    nq = occ[:, 0].astype(float)
    diag = nu_q * nq + 0.5 * device.transmon.alpha * nq * (nq - 1)
    for s, k in enumerate(layout.modes, start=1):
        diag = diag + device.nu(k) * occ[:, s]
    H = np.diag(diag).astype(complex)
    if couplings and layout.modes:
        # joint two-site embedding so capped layouts keep every matrix element
        a = ladder(layout.dims[0])
        for s, k in enumerate(layout.modes, start=1):
            b = ladder(layout.dims[s])
            g = device.g(k)
            if rwa:
                term = embed(layout, {0: a.conj().T, s: b})
                H += g * (term + term.conj().T)
            else:
                H += g * embed(layout, {0: a + a.conj().T, s: b + b.conj().T})
    return H


@dataclass
class QuantumState:
    layout: SpaceLayout
    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, complex)
        d = self.layout.total_dim
        if self.data.shape not in ((d,), (d, d)):
            raise ValueError(f"state shape {self.data.shape} does not match dimension {d}")

    @classmethod
    def from_label(cls, layout: SpaceLayout, label) -> "QuantumState":
        return cls(layout, ket(layout, label))

    @property
    def is_pure(self) -> bool:
        return self.data.ndim == 1

    def dm(self) -> np.ndarray:
        return np.outer(self.data, self.data.conj()) if self.is_pure else self.data

    def validate(self, tol: float = TOL) -> None:
        if self.is_pure:
            if abs(np.linalg.norm(self.data) - 1) > tol:
                raise PhysicalityError("state vector not normalised")
            return
        rho = self.data
        if np.max(np.abs(rho - rho.conj().T)) > tol:
            raise PhysicalityError("density matrix not Hermitian")
        if abs(np.trace(rho).real - 1) > tol:
            raise PhysicalityError("density matrix trace != 1")
        if np.linalg.eigvalsh(0.5 * (rho + rho.conj().T)).min() < -tol:
            raise PhysicalityError("density matrix has negative eigenvalue")

    def populations(self) -> np.ndarray:
        return np.abs(self.data) ** 2 if self.is_pure else np.real(np.diag(self.data))


def partial_trace(state: QuantumState, keep: Iterable[int]) -> QuantumState:
    """Reduced state on subsystems ``keep`` (0 = transmon, s >= 1 = s-th mode of the layout)."""
    keep = sorted(set(keep))
    layout = state.layout
    if not keep:
        raise ValueError("keep must be non-empty")
    if layout.capped:
        raise ValueError("partial trace requires an uncapped layout")
    for i in keep:
        _check_index(layout, i)
    dims = layout.dims
    n = len(dims)
    rho = state.dm().reshape(dims + dims)
    drop = [i for i in range(n) if i not in keep]
    # contract dropped axes pairwise, highest index first so axis numbers stay valid
    for i in sorted(drop, reverse=True):
        m = rho.ndim // 2
        rho = np.trace(rho, axis1=i, axis2=i + m)
    kd = int(np.prod([dims[i] for i in keep]))
    rho = rho.reshape(kd, kd)
    if 0 in keep:
        new = SpaceLayout(dims[0], tuple(layout.modes[i - 1] for i in keep if i), layout.mode_levels)
    else:
        # no transmon: present kept modes as a layout whose first subsystem is the first kept mode
        new = _ModesOnlyLayout(tuple(layout.modes[i - 1] for i in keep), layout.mode_levels)
    return QuantumState(new, rho)


class _ModesOnlyLayout(SpaceLayout):
    """Layout of mode subsystems only (result of tracing out the transmon)."""

    def __init__(self, modes, mode_levels):
        object.__setattr__(self, "transmon_levels", mode_levels)
        object.__setattr__(self, "modes", tuple(modes))
        object.__setattr__(self, "mode_levels", mode_levels)
        object.__setattr__(self, "max_excitations", None)

    @property
    def dims(self):
        return (self.mode_levels,) * len(self.modes)

    @property
    def n_subsystems(self):
        return len(self.modes)


def _psd_sqrt(rho: np.ndarray, tol: float) -> np.ndarray:
    w, v = np.linalg.eigh(0.5 * (rho + rho.conj().T))
    if w.min() < -tol:
        raise PhysicalityError(f"negative eigenvalue {w.min():.3e}")
    w = np.clip(w, 0, None)
    return (v * np.sqrt(w)) @ v.conj().T


def fidelity(a, b, tol: float = 1e-7) -> float:
    """Uhlmann fidelity (Tr sqrt(sqrt(rho) sigma sqrt(rho)))^2.

    Accepts :class:`QuantumState` or raw vectors / density matrices.
    """
    A = a.data if isinstance(a, QuantumState) else np.asarray(a, complex)
    B = b.data if isinstance(b, QuantumState) else np.asarray(b, complex)
    if A.shape[0] != B.shape[0]:
        raise ValueError("states have different dimensions")
    if A.ndim == 1 and B.ndim == 1:
        return float(min(1.0, abs(np.vdot(A, B)) ** 2))
    if A.ndim == 1:
        A, B = B, A
    if B.ndim == 1:
        _psd_sqrt(A, tol)
        return float(np.clip(np.real(np.vdot(B, A @ B)), 0, 1))
    s = _psd_sqrt(A, tol)
    _psd_sqrt(B, tol)
    m = s @ B @ s
    ev = np.clip(np.linalg.eigvalsh(0.5 * (m + m.conj().T)), 0, None)
    return float(np.clip(np.sum(np.sqrt(ev)) ** 2, 0, 1))


def state_to_json(state: QuantumState) -> str:
    payload = {
        "dims": list(state.layout.dims),
        "modes": list(state.layout.modes),
        "max_excitations": state.layout.max_excitations,
        "kind": "vector" if state.is_pure else "density",
        "data": np.stack([state.data.real, state.data.imag], axis=-1).tolist(),
    }
    return json.dumps(payload)


def state_from_json(text: str) -> QuantumState:
    p = json.loads(text)
    layout = SpaceLayout(p["dims"][0], tuple(p["modes"]),
                         p["dims"][1] if len(p["dims"]) > 1 else 2, p["max_excitations"])
    arr = np.asarray(p["data"], float)
    return QuantumState(layout, arr[..., 0] + 1j * arr[..., 1])
