"""Time evolution under a pulse sequence.

States are expressed in the *dressed frame*: the interaction picture of the
static Hamiltonian, in its eigenbasis, with each eigenvector labelled by the
bare Fock state it overlaps most.  Idle evolution is the identity in this
frame; only flux modulation and charge drives generate dynamics.

During integration the diagonal part of the modulation, ``f(t) * <a|n_q|a>``,
is also removed analytically through ``theta(t) = 2 pi int f``; the remaining
generator is purely off-diagonal with bounded norm, which keeps fixed-step
RK4 accurate at dt ~ 0.01 ns even for GHz-scale modulation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import curve_fit, linear_sum_assignment

from .hilbert import SpaceLayout, QuantumState, build_hamiltonian, embed, embed_ladder, number_op
from .pulses import ChargePulse, Envelope, FluxPulse, PulseSequence, active_pulses, flux_phase, nu_q_of_t

__all__ = [
    "EvolveOptions",
    "Trajectory",
    "DressedFrame",
    "IntegrationError",
    "evolve",
    "propagate",
    "chevron_scan",
    "resonant_sideband",
    "ChevronMap",
    "fit_exchange",
    "label_name",
    "collapse_operators",
]

TRANSMON_NAMES = "gefhijkl"


class IntegrationError(RuntimeError):
    pass


@dataclass(frozen=True)
class EvolveOptions:
    dt: float = 0.01
    frame: str = "rotating"  # or "lab"
    lindblad: bool = False
    rwa: bool | None = None  # default: True in rotating frame, False in lab frame
    record_every: float | None = None
    record_times: tuple[float, ...] | None = None
    keep_states: bool = False
    method: str = "rk4"  # or "dop853" (adaptive)
    rtol: float = 1e-8
    drift_tol: float = 1e-6

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be > 0")
        if self.frame not in ("rotating", "lab"):
            raise ValueError("frame must be 'rotating' or 'lab'")
        if self.method not in ("rk4", "dop853"):
            raise ValueError("method must be 'rk4' or 'dop853'")
        if not self.rtol > 0 or not self.drift_tol > 0:
            raise ValueError("tolerances must be > 0")

    @property
    def use_rwa(self) -> bool:
        return (self.frame == "rotating") if self.rwa is None else self.rwa


def label_name(label: Sequence[int]) -> str:
    return TRANSMON_NAMES[label[0]] + "".join(str(m) for m in label[1:])


class DressedFrame:
    """Eigenbasis of the static Hamiltonian with bare-state labels."""

    def __init__(self, device, layout: SpaceLayout, rwa: bool = True):
        self.device = device
        self.layout = layout
        self.rwa = rwa
        H = build_hamiltonian(device, layout=layout, rwa=rwa)
        self.H_static = H
        E, V = np.linalg.eigh(H)
        rows, cols = linear_sum_assignment(-np.abs(V) ** 2)
        order = np.empty_like(cols)
        order[rows] = cols
        V = V[:, order]
        E = E[order]
        ph = np.angle(np.diag(V))
        V = V * np.exp(-1j * ph)[None, :]
        self.E = E
        self.V = V
        nq = number_op(layout, 0)
        N = V.conj().T @ nq @ V
        self.n_diag = np.real(np.diag(N)).copy()
        self.N_off = N - np.diag(np.diag(N))
        self._drive = {}

    def energy(self, label) -> float:
        return float(self.E[self.layout.index(label)])

    def drive_op(self, transition: str) -> np.ndarray:
        """Dressed-frame matrix of the selective raising operator |e><g| (or |f><e|)."""
        if transition not in self._drive:
            d = self.layout.dims[0]
            lo = 0 if transition == "ge" else 1
            if lo + 1 >= d:
                raise ValueError(f"transmon truncation too small for {transition} drive")
            s = np.zeros((d, d), complex)
            s[lo + 1, lo] = 1.0
            bare = embed(self.layout, {0: s})
            self._drive[transition] = (bare, self.V.conj().T @ bare @ self.V)
        return self._drive[transition][1]

    def bare_drive_op(self, transition: str) -> np.ndarray:
        self.drive_op(transition)
        return self._drive[transition][0]

    def transition_frequency(self, transition: str, spectator=None) -> float:
        """Dressed charge-transition frequency with modes in ``spectator`` (default vacuum)."""
        rest = tuple(spectator) if spectator is not None else (0,) * len(self.layout.modes)
        lo = 0 if transition == "ge" else 1
        return self.energy((lo + 1,) + rest) - self.energy((lo,) + rest)

    def sideband_frequency(self, mode: int, transition: str) -> float:
        """Dressed |m,1_k> <-> |m+1,0_k> splitting (positive when the mode lies above)."""
        s = self.layout.subsystem_of_mode(mode)
        m = 0 if transition == "ge" else 1
        lo = [0] * self.layout.n_subsystems
        hi = [0] * self.layout.n_subsystems
        lo[0], lo[s] = m, 1
        hi[0] = m + 1
        return self.energy(lo) - self.energy(hi)

    def to_dressed_from_lab(self, psi_lab: np.ndarray, t: float) -> np.ndarray:
        c = self.V.conj().T @ psi_lab
        return np.exp(2j * np.pi * self.E * t)[:, None] * c if c.ndim == 2 else np.exp(2j * np.pi * self.E * t) * c

    def to_lab_from_dressed(self, psi: np.ndarray, t: float) -> np.ndarray:
        ph = np.exp(-2j * np.pi * self.E * t)
        return self.V @ (ph[:, None] * psi if psi.ndim == 2 else ph * psi)


def collapse_operators(device, layout: SpaceLayout) -> list[np.ndarray]:
    """Relaxation sqrt(1/T1) a_s and pure dephasing sqrt(2/T_phi) n_s per subsystem.

    Operators act on the dressed labels (secular approximation).
    """
    ops = []
    coh = device.coherence
    pairs = [(0, coh.t1_transmon, coh.t2_transmon)]
    pairs += [(s, *coh.mode(k)) for s, k in enumerate(layout.modes, start=1)]
    for s, t1, t2 in pairs:
        if not math.isinf(t1):
            ops.append(math.sqrt(1.0 / t1) * embed_ladder(layout, s))
        gphi = (0.0 if math.isinf(t2) else 1.0 / t2) - (0.0 if math.isinf(t1) else 0.5 / t1)
        if gphi > 1e-15:
            ops.append(math.sqrt(2.0 * gphi) * number_op(layout, s))
    return ops


@dataclass
class Trajectory:
    layout: SpaceLayout
    times: np.ndarray
    populations: np.ndarray  # (n_times, [batch,] dim)
    states: list | None = None
    final: np.ndarray | None = None

    def population(self, label) -> np.ndarray:
        return self.populations[..., self.layout.index(tuple(label))]

    def to_csv(self, path, labels=None) -> None:
        labels = labels or list(self.layout.basis)
        pops = self.populations if self.populations.ndim == 2 else self.populations[:, 0]
        cols = [self.layout.index(tuple(l)) for l in labels]
        with open(path, "w") as fh:
            fh.write("time_ns," + ",".join(f"P_{label_name(l)}" for l in labels) + "\n")
            for t, row in zip(self.times, pops):
                fh.write(f"{t:.6f}," + ",".join(f"{row[c]:.10f}" for c in cols) + "\n")


# ------------------------------------------------------------ generator


class _Generator:
    """Evaluates the frame Hamiltonian for a batch of sequences sharing timing."""

    def __init__(self, frame: DressedFrame, sequences: list[PulseSequence]):
        self.frame = frame
        self.seqs = sequences
        self.transmon = frame.device.transmon
        self.nq0 = self.transmon.nu_q0
        # charge pulses from the first sequence; all must agree
        self.charges = sequences[0].charge_pulses()
        for s in sequences[1:]:
            if s.charge_pulses() != self.charges:
                raise ValueError("batched sequences must share their charge pulses")
        self.drive_mats = {tr: frame.drive_op(tr) for tr in {p.transition for _, p in self.charges}}
        # midpoint of the current breakpoint segment; selects the running pulses
        self.segment: float | None = None

    def flux(self, times: np.ndarray):
        """f(t) and theta(t), each shaped (B, len(times))."""
        f = np.stack([nu_q_of_t(s, times, self.transmon, self.segment) - self.nq0 for s in self.seqs])
        th = np.stack([flux_phase(s, times, self.transmon) for s in self.seqs])
        return f.reshape(len(self.seqs), -1), th.reshape(len(self.seqs), -1)

    def hamiltonian(self, t: float, f: np.ndarray, th: np.ndarray) -> np.ndarray:
        fr = self.frame
        u = np.exp(1j * (2 * np.pi * fr.E[None, :] * t + fr.n_diag[None, :] * th[:, None]))  # (B,d)
        H = f[:, None, None] * (u[:, :, None] * fr.N_off[None] * u.conj()[:, None, :])
        for s, p in active_pulses(self.charges, self.segment):
            tau = t - s if self.segment is None else min(max(t - s, 0.0), p.duration)
            if tau < 0 or tau > p.duration:
                continue
            amp = 0.5 * p.amplitude * p.envelope(tau)
            if amp == 0:
                continue
            c = amp * np.exp(1j * (p.phase - 2 * np.pi * p.frequency * t))
            D = u[:, :, None] * self.drive_mats[p.transition][None] * u.conj()[:, None, :]
            term = c * D
            H = H + term + np.conj(np.swapaxes(term, 1, 2))
        return H


def _rk4_run(rhs, y, t0, t1, n):
    h = (t1 - t0) / n
    for i in range(n):
        t = t0 + i * h
        k1 = rhs(t, y, 0)
        k2 = rhs(t + h / 2, y + (h / 2) * k1, 1)
        k3 = rhs(t + h / 2, y + (h / 2) * k2, 1)
        k4 = rhs(t + h, y + h * k3, 2)
        y = y + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
    return y


def _record_grid(sequence: PulseSequence, options: EvolveOptions, t_end: float) -> np.ndarray:
    pts = set(sequence.breakpoints()) | {0.0, t_end}
    rec = {0.0, t_end}
    if options.record_times is not None:
        rec |= {float(t) for t in options.record_times if 0 <= t <= t_end}
    if options.record_every:
        n = int(round(t_end / options.record_every))
        rec |= {min(i * options.record_every, t_end) for i in range(n + 1)}
    return np.array(sorted(pts | rec)), np.array(sorted(rec))


def _as_batch(state, layout) -> tuple[np.ndarray, bool, bool]:
    """Normalise input into (B, d) vectors or (B, d, d) density matrices."""
    data = state.data if isinstance(state, QuantumState) else np.asarray(state, complex)
    d = layout.total_dim
    if data.ndim == 1:
        return data[None, :], True, True
    if data.ndim == 2 and data.shape == (d, d) and not isinstance(state, np.ndarray):
        return data[None], False, True
    if data.ndim == 2:
        return data, True, False
    return data, False, False


def evolve(state, sequence, device, options: EvolveOptions | None = None,
           layout: SpaceLayout | None = None, frame: DressedFrame | None = None) -> Trajectory:
    """Integrate the Schrodinger or Lindblad equation under ``sequence``.

    ``state`` may be a :class:`QuantumState`, a vector, a (B, d) batch of
    vectors, or a (B, d, d) batch of density matrices.  ``sequence`` may be a
    list of sequences sharing breakpoints (batched over flux parameters); the
    batch size then must equal the state batch or the state is broadcast.
    Returned states are in the dressed frame.
    """
    options = options or EvolveOptions()
    if isinstance(state, QuantumState):
        layout = state.layout
    if layout is None:
        raise ValueError("layout required for raw array input")
    seqs = list(sequence) if isinstance(sequence, (list, tuple)) else [sequence]
    t_end = max(s.duration for s in seqs)
    for s in seqs[1:]:
        if s.breakpoints() != seqs[0].breakpoints():
            raise ValueError("batched sequences must share breakpoints")
    y, pure, single = _as_batch(state, layout)
    if options.lindblad and pure:
        y = np.einsum("bi,bj->bij", y, y.conj())
        pure = False
    B = max(len(seqs), y.shape[0])
    if y.shape[0] != B:
        y = np.broadcast_to(y, (B,) + y.shape[1:]).copy()
    if len(seqs) not in (1, B):
        raise ValueError("sequence batch and state batch sizes differ")
    single = single and B == 1

    if options.frame == "lab":
        return _evolve_lab(y, pure, single, seqs, device, options, layout, t_end)

    frame = frame or DressedFrame(device, layout, rwa=options.use_rwa)
    gen = _Generator(frame, seqs)
    ops = collapse_operators(device, layout) if options.lindblad else []
    if options.lindblad and not ops:
        ops = []
    LdL = sum((c.conj().T @ c for c in ops), np.zeros((layout.total_dim,) * 2, complex))

    grid, rec = _record_grid(seqs[0], options, t_end)
    th_sign = -1j

    # state in the theta-frame: psi_D = exp(-i theta n) psi_F
    def to_frame(yd, th):
        ph = np.exp(1j * frame.n_diag[None, :] * th[:, None])
        return ph * yd if pure else ph[:, :, None] * yd * ph.conj()[:, None, :]

    def from_frame(yf, th):
        ph = np.exp(-1j * frame.n_diag[None, :] * th[:, None])
        if pure:
            return ph * yf
        return ph[:, :, None] * yf * ph.conj()[:, None, :]

    def rhs_factory(fvals, thvals, tvals):
        def rhs(t, yy, idx):
            H = gen.hamiltonian(t, fvals[:, idx], thvals[:, idx])
            if pure:
                return -2j * np.pi * np.einsum("bij,bj->bi", H, yy)
            comm = H @ yy - yy @ H
            out = -2j * np.pi * comm
            for c in ops:
                out = out + c @ yy @ c.conj().T
            if ops:
                out = out - 0.5 * (LdL @ yy + yy @ LdL)
            return out
        return rhs

    records, states = [], []
    th0 = np.zeros(B)
    yF = to_frame(y, th0)
    t_prev = 0.0

    def record(t, yF, th):
        yD = from_frame(yF, th)
        pops = np.abs(yD) ** 2 if pure else np.real(np.einsum("bii->bi", yD))
        records.append(pops)
        if options.keep_states:
            states.append(yD.copy())
        return yD

    yD = record(0.0, yF, th0)
    rec_set = set(rec.tolist())
    for t_next in grid[1:]:
        length = t_next - t_prev
        if length <= 1e-12:
            continue
        gen.segment = 0.5 * (t_prev + t_next)
        if options.method == "rk4":
            n = max(1, int(math.ceil(length / options.dt - 1e-9)))
            h = length / n
            if h < 1e-7:
                raise IntegrationError(f"step size underflow ({h:.2e} ns)")
            ts = t_prev + h * np.arange(n + 1)
            tmid = ts[:-1] + h / 2
            f0, th0s = gen.flux(ts)
            fm, thm = gen.flux(tmid)
            # per-step stage arrays: idx 0 -> start, 1 -> mid, 2 -> end
            for i in range(n):
                fv = np.stack([f0[:, i], fm[:, i], f0[:, i + 1]], axis=1)
                tv = np.stack([th0s[:, i], thm[:, i], th0s[:, i + 1]], axis=1)
                rhs = rhs_factory(fv, tv, None)
                yF = _rk4_run(rhs, yF, ts[i], ts[i + 1], 1)
            th_end = th0s[:, -1]
        else:
            yF, th_end = _adaptive(gen, yF, t_prev, t_next, pure, ops, LdL, options)
        t_prev = t_next
        if float(t_next) in rec_set or t_next == grid[-1]:
            yD = record(t_next, yF, th_end)
    # drift check
    if pure:
        drift = np.max(np.abs(np.linalg.norm(yD, axis=1) - np.linalg.norm(y, axis=1)))
    else:
        drift = np.max(np.abs(np.real(np.einsum("bii->b", yD)) - np.real(np.einsum("bii->b", y))))
    if drift > options.drift_tol:
        raise IntegrationError(f"norm/trace drift {drift:.2e} exceeds tolerance {options.drift_tol:.1e}; "
                               f"reduce dt (currently {options.dt})")
    pops = np.array(records)
    final = yD
    if single:
        pops = pops[:, 0]
        final = yD[0]
        states = [s[0] for s in states] if states else None
    return Trajectory(layout, rec, pops, states or None, final)


def _adaptive(gen, yF, t0, t1, pure, ops, LdL, options):
    shape = yF.shape

    def fun(t, v):
        yy = v.reshape(shape)
        f, th = gen.flux(np.array([t]))
        H = gen.hamiltonian(t, f[:, 0], th[:, 0])
        if pure:
            out = -2j * np.pi * np.einsum("bij,bj->bi", H, yy)
        else:
            out = -2j * np.pi * (H @ yy - yy @ H)
            for c in ops:
                out = out + c @ yy @ c.conj().T
            if ops:
                out = out - 0.5 * (LdL @ yy + yy @ LdL)
        return out.ravel()

    sol = solve_ivp(fun, (t0, t1), yF.ravel(), method="DOP853", rtol=options.rtol,
                    atol=options.rtol * 1e-2, max_step=max(options.dt * 20, 1e-3))
    if not sol.success:
        raise IntegrationError(f"adaptive integrator failed: {sol.message}")
    _, th = gen.flux(np.array([t1]))
    return sol.y[:, -1].reshape(shape), th[:, 0]


def _evolve_lab(y, pure, single, seqs, device, options, layout, t_end):
    """Bare-basis lab-frame integration; output converted to the dressed frame."""
    if len(seqs) != 1:
        raise ValueError("lab frame supports a single sequence")
    seq = seqs[0]
    frame = DressedFrame(device, layout, rwa=options.use_rwa)
    H0 = build_hamiltonian(device, layout=layout, rwa=options.use_rwa)
    nq = number_op(layout, 0)
    transmon = device.transmon
    drives = {tr: frame.bare_drive_op(tr) for tr in {p.transition for _, p in seq.charge_pulses()}}
    ops = collapse_operators(device, layout) if options.lindblad else []
    LdL = sum((c.conj().T @ c for c in ops), np.zeros((layout.total_dim,) * 2, complex))
    # input given in dressed frame at t=0 -> lab
    if pure:
        yl = (frame.V @ y.T).T
    else:
        yl = frame.V[None] @ y @ frame.V.conj().T[None]

    segment = [None]

    def H_at(t):
        H = H0 + (nu_q_of_t(seq, t, transmon, segment[0]) - transmon.nu_q0) * nq
        for s, p in active_pulses(seq.charge_pulses(), segment[0]):
            tau = min(max(t - s, 0.0), p.duration)
            if 0 <= tau <= p.duration:
                D = drives[p.transition]
                H = H + p.amplitude * p.envelope(tau) * math.cos(2 * math.pi * p.frequency * t - p.phase) * (D + D.conj().T)
        return H

    def rhs(t, yy, _):
        H = H_at(t)
        if pure:
            return -2j * np.pi * (yy @ H.T)
        out = -2j * np.pi * (H @ yy - yy @ H)
        for c in ops:
            out = out + c @ yy @ c.conj().T
        if ops:
            out = out - 0.5 * (LdL @ yy + yy @ LdL)
        return out

    grid, rec = _record_grid(seq, options, t_end)
    records, states = [], []

    def record(t, yl):
        yd = (frame.to_dressed_from_lab(yl.T, t)).T if pure else None
        if not pure:
            U = np.exp(2j * np.pi * frame.E * t)[:, None] * frame.V.conj().T
            yd = U[None] @ yl @ U.conj().T[None]
        pops = np.abs(yd) ** 2 if pure else np.real(np.einsum("bii->bi", yd))
        records.append(pops)
        if options.keep_states:
            states.append(yd)
        return yd

    yd = record(0.0, yl)
    t_prev = 0.0
    rec_set = set(rec.tolist())
    for t_next in grid[1:]:
        n = max(1, int(math.ceil((t_next - t_prev) / options.dt - 1e-9)))
        segment[0] = 0.5 * (t_prev + t_next)
        yl = _rk4_run(rhs, yl, t_prev, t_next, n)
        t_prev = t_next
        if float(t_next) in rec_set or t_next == grid[-1]:
            yd = record(t_next, yl)
    pops = np.array(records)
    if single:
        return Trajectory(layout, rec, pops[:, 0], [s[0] for s in states] or None, yd[0])
    return Trajectory(layout, rec, pops, states or None, yd)


def propagate(sequence, device, layout: SpaceLayout, labels, options: EvolveOptions | None = None,
              frame: DressedFrame | None = None) -> np.ndarray:
    """Columns = evolved dressed-frame basis states ``labels``; shape (d, len(labels))."""
    cols = np.zeros((len(labels), layout.total_dim), complex)
    for i, lab in enumerate(labels):
        cols[i, layout.index(tuple(lab))] = 1.0
    options = options or EvolveOptions()
    traj = evolve(cols, sequence, device, options, layout=layout, frame=frame)
    return traj.final.T


# ------------------------------------------------------------ chevron


@dataclass
class ChevronMap:
    nu_sb: np.ndarray
    durations: np.ndarray
    p_e: np.ndarray  # (len(nu_sb), len(durations))
    eps: float

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("nu_sb_GHz," + ",".join(f"t_{t:.4f}ns" for t in self.durations) + "\n")
            for f, row in zip(self.nu_sb, self.p_e):
                fh.write(f"{f:.9f}," + ",".join(f"{x:.10f}" for x in row) + "\n")


def resonant_sideband(device, mode: int, z: float, transition: str = "ge",
                      frame: DressedFrame | None = None) -> tuple[float, float]:
    """Modulation frequency and amplitude ``(nu_sb, eps)`` resonant with ``mode`` at depth ``z``.

    Solves ``nu_sb = splitting - delta(eps)`` with ``eps = 2 z nu_sb``, where the
    splitting is the dressed single-mode value and ``delta`` the DC transmon shift.
    """
    if frame is None:
        layout = SpaceLayout(device.transmon.n_levels, (mode,), device.mode_levels, max_excitations=2)
        frame = DressedFrame(device, layout, rwa=True)
    res = frame.sideband_frequency(mode, transition)
    nu = res
    for _ in range(100):
        nu_new = res - device.transmon.dc_shift(2 * z * nu)
        if abs(nu_new - nu) < 1e-14:
            break
        nu = nu_new
    return nu, 2 * z * nu


def chevron_scan(device, nu_sb_grid, duration_grid, eps: float, modes=None, prep: str = "pulse",
                 options: EvolveOptions | None = None, envelope_kind: str = "square",
                 phase: float = 0.0) -> ChevronMap:
    """Transmon excited-state population after a flux pulse, for each (nu_sb, duration).

    The transmon is excited (ideal ``prep='ideal'`` or a simulated charge pi
    pulse) and then modulated; the single-excitation manifold is simulated
    over ``modes`` (default: all modes of the device).
    """
    nu_sb_grid = np.asarray(nu_sb_grid, float)
    durations = np.asarray(duration_grid, float)
    if nu_sb_grid.size == 0 or durations.size == 0:
        raise ValueError("grids must be non-empty")
    modes = tuple(range(1, device.n_modes + 1)) if modes is None else tuple(sorted(modes))
    layout = SpaceLayout(device.transmon.n_levels, modes, device.mode_levels, max_excitations=1)
    options = options or EvolveOptions()
    frame = DressedFrame(device, layout, rwa=True)
    t_max = float(durations.max())
    t0 = 0.0
    base = PulseSequence()
    psi0 = np.zeros(layout.total_dim, complex)
    if prep == "pulse":
        env = Envelope(device.control.charge_envelope, device.control.charge_pulse_ns,
                       n_sigma=device.control.n_sigma)
        pi = ChargePulse.rotation(math.pi, math.pi / 2, frame.transition_frequency("ge"), env)
        base = base.insert(pi, 0.0)
        t0 = pi.duration
        psi0[layout.index((0,) * layout.n_subsystems)] = 1.0
    else:
        lab = (1,) + (0,) * len(modes)
        psi0[layout.index(lab)] = 1.0
    seqs = []
    for f in nu_sb_grid:
        env = Envelope(envelope_kind, max(t_max, 1e-6), n_sigma=device.control.n_sigma)
        seqs.append(base.insert(FluxPulse(float(f), eps, phase, env), t0))
    opts = EvolveOptions(**{**options.__dict__, "record_times": tuple(t0 + durations), "lindblad": False})
    traj = evolve(psi0, seqs, device, opts, layout=layout, frame=frame)
    e_idx = layout.index((1,) + (0,) * len(modes))
    times = traj.times
    want = t0 + durations
    cols = [int(np.argmin(np.abs(times - w))) for w in want]
    pops = traj.populations[cols]
    if pops.ndim == 2:  # a single frequency comes back without the batch axis
        pops = pops[:, None, :]
    pe = pops[:, :, e_idx].T
    return ChevronMap(nu_sb_grid, durations, pe, eps)


def fit_exchange(times, p_e, f_guess: float | None = None) -> tuple[float, float, float]:
    """Fit ``p_e = 1 - A sin^2(pi f t) - c`` style oscillation; returns (f, A, residual_rms).

    ``f`` is the population oscillation frequency (GHz), i.e. 2*g_eff at resonance.
    """
    times = np.asarray(times, float)
    p_e = np.asarray(p_e, float)
    if f_guess is None:
        spec = np.abs(np.fft.rfft(p_e - p_e.mean()))
        freqs = np.fft.rfftfreq(len(times), times[1] - times[0])
        f_guess = freqs[1 + np.argmax(spec[1:])]

    def model(t, f, A, c):
        return 1.0 - c - A * np.sin(np.pi * f * t) ** 2

    p, _ = curve_fit(model, times, p_e, p0=[f_guess, 1.0, 0.0], maxfev=20000)
    res = np.sqrt(np.mean((model(times, *p) - p_e) ** 2))
    return float(abs(p[0])), float(p[1]), float(res)
