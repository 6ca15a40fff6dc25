"""Gate programs, their primitive decompositions, and pulse compilation.

Primitive conventions (tracked frame; see :mod:`raqip.effective`):

* ``iswap(k, c)`` maps ``|m+1,0_k> -> -i c |m,1_k>`` and ``|m,1_k> -> -i c* |m+1,0_k>``.
* Single-mode gate on ``k``: ``iswap(k, -i)``, transmon rotation, ``iswap(k, +i)``;
  the swap-in and swap-out factors cancel, so the mode sees exactly the rotation.
* ``CZ(j, k)``: target ``k`` is swapped into the transmon, two e1-f0 exchanges on
  the control ``j`` (coupling phases ``c1`` and ``c1 e^{i beta}``) give ``|e1_j> -> -|e1_j>``,
  then ``k`` is swapped back.
* ``CX/CY(j, k)``: the control is swapped into the transmon, then e1-f0 exchange on
  ``k``, an e-f pi pulse, e1-f0 exchange on ``k``; exchange phase ``-1`` gives X,
  ``-i`` gives Y.
* ``SWAP(j, k)``: ``j`` into the transmon, the photon of ``k`` parked in ``f``, g-e
  exchange with ``k``, unpark, and ``j`` swapped back out of the transmon.
* ``GHZ``: transmon rotation by ``theta``, then for each mode but the last an e-f pi
  pulse and an e1-f0 load, and finally a g-e exchange into the last mode.

Compilation keeps a virtual-Z frame for the transmon (phase accumulated by
flux modulation) and for each mode; later pulse phases are referred to these
frames, and the final frames are stored on the sequence.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import brentq, minimize

from .device import TransmonParams
from .dynamics import DressedFrame, EvolveOptions, evolve
from .effective import Primitive, bessel_j1, J1_MAX_X
from .hilbert import SpaceLayout
from .pulses import ChargePulse, Envelope, FluxPulse, PulseSequence, flux_phase

__all__ = [
    "GateOp",
    "GateProgram",
    "parse_program",
    "CalibrationError",
    "CrosstalkWarning",
    "PhaseCalibration",
    "IswapParams",
    "iswap_params",
    "decompose",
    "mode_sandwich",
    "ideal_unitary",
    "program_unitary",
    "compile_primitives",
    "compile_program",
    "compile_iswap",
    "compile_single_mode_gate",
    "compile_cz",
    "compile_cx_cy",
    "compile_swap",
    "compile_ghz",
    "calibrate_phases",
    "calibrate_cz_phase",
    "calibrate_gate",
    "pulse_gate_matrix",
    "pulse_final_state",
    "process_fidelity_unitary",
    "nn_gate_count",
    "fidelity_curve",
]

KINDS = ("rot", "iswap", "single", "cz", "cx", "cy", "swap", "ghz", "barrier")


class CalibrationError(RuntimeError):
    pass


class CrosstalkWarning(UserWarning):
    pass


# ------------------------------------------------------------ programs


@dataclass(frozen=True)
class GateOp:
    """One abstract gate.

    ``rot``: transmon rotation ``(transition, angle, phase)``; ``iswap``: mode
    exchange ``(k, transition)``; ``single``: rotation ``(angle, phase)`` of mode
    ``k``; ``cz/cx/cy/swap``: two-mode gates on ``(j, k)`` with ``j`` the control;
    ``ghz``: entangle ``targets`` with transmon angle ``angle``.
    """

    kind: str
    targets: tuple[int, ...] = ()
    angle: float = 0.0
    phase: float = 0.0
    transition: str = "ge"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown gate kind {self.kind!r}")
        if not -2 * math.pi - 1e-12 < self.angle <= 2 * math.pi + 1e-12:
            raise ValueError("angle must lie in (-2pi, 2pi]")
        if self.transition not in ("ge", "ef"):
            raise ValueError("transition must be 'ge' or 'ef'")
        need = {"rot": 0, "iswap": 1, "single": 1, "cz": 2, "cx": 2, "cy": 2, "swap": 2, "barrier": 0}
        if self.kind in need and len(self.targets) != need[self.kind]:
            raise ValueError(f"{self.kind} takes {need[self.kind]} mode indices")
        if self.kind in ("cz", "cx", "cy", "swap") and self.targets[0] == self.targets[1]:
            raise ValueError("two-mode gate needs distinct modes")
        if self.kind == "ghz" and len(set(self.targets)) != len(self.targets) or (
                self.kind == "ghz" and len(self.targets) < 2):
            raise ValueError("ghz needs at least two distinct modes")

    def modes(self) -> tuple[int, ...]:
        return self.targets

    def to_text(self) -> str:
        t = " ".join(str(m) for m in self.targets)
        if self.kind == "rot":
            return f"rot {self.transition} {self.angle!r} {self.phase!r}"
        if self.kind == "iswap":
            return f"iswap {t} {self.transition}"
        if self.kind == "single":
            return f"single {t} {self.angle!r} {self.phase!r}"
        if self.kind == "ghz":
            return f"ghz {self.angle!r} {t}"
        if self.kind == "barrier":
            return "barrier"
        return f"{self.kind} {t}"


@dataclass(frozen=True)
class GateProgram:
    ops: tuple[GateOp, ...] = ()
    seed: int | None = None
    device_hash: str | None = None

    def modes(self) -> tuple[int, ...]:
        return tuple(sorted({m for op in self.ops for m in op.modes()}))

    def to_text(self) -> str:
        head = []
        if self.seed is not None:
            head.append(f"# seed {self.seed}")
        if self.device_hash:
            head.append(f"# device {self.device_hash}")
        return "\n".join(head + [op.to_text() for op in self.ops]) + "\n"

    def __add__(self, other: "GateProgram") -> "GateProgram":
        return GateProgram(self.ops + other.ops, self.seed, self.device_hash)


def parse_program(text: str) -> GateProgram:
    """Parse the line-based program format.

    Grammar (one op per line, ``#`` starts a comment)::

        rot <ge|ef> <angle> <phase>
        iswap <k> [ge|ef]
        single <k> <angle> <phase>
        cz|cx|cy|swap <j> <k>
        ghz <theta> <k1> <k2> ...
        barrier
    """
    ops = []
    seed = dev = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line, _, comment = raw.partition("#")
        c = comment.split()
        if len(c) == 2 and c[0] == "seed":
            seed = int(c[1])
        if len(c) == 2 and c[0] == "device":
            dev = c[1]
        tok = line.split()
        if not tok:
            continue
        try:
            kind = tok[0].lower()
            if kind == "rot":
                ops.append(GateOp("rot", (), float(tok[2]), float(tok[3]), tok[1]))
            elif kind == "iswap":
                ops.append(GateOp("iswap", (int(tok[1]),), transition=tok[2] if len(tok) > 2 else "ge"))
            elif kind == "single":
                ops.append(GateOp("single", (int(tok[1]),), float(tok[2]), float(tok[3])))
            elif kind in ("cz", "cx", "cy", "swap"):
                if len(tok) != 3:
                    raise ValueError("expected two mode indices")
                ops.append(GateOp(kind, (int(tok[1]), int(tok[2]))))
            elif kind == "ghz":
                ops.append(GateOp("ghz", tuple(int(x) for x in tok[2:]), float(tok[1])))
            elif kind == "barrier":
                ops.append(GateOp("barrier"))
            else:
                raise ValueError(f"unknown op {tok[0]!r}")
        except (ValueError, IndexError) as exc:
            raise ValueError(f"line {lineno}: {exc}") from None
    return GateProgram(tuple(ops), seed, dev)


# ------------------------------------------------------------ timing


@dataclass(frozen=True)
class IswapParams:
    mode: int
    transition: str
    g_eff: float
    z: float
    duration: float
    tone: float  # bare sideband frequency estimate (GHz)
    separation: float  # nearest other sideband tone (GHz)


def _bare_tones(device) -> dict:
    nq, a = device.transmon.nu_q0, device.transmon.alpha
    tones = {}
    for k in range(1, device.n_modes + 1):
        tones[(k, "ge")] = abs(device.nu(k) - nq)
        tones[(k, "ef")] = abs(device.nu(k) - (nq + a))
    return tones


def _inverse_j1(target: float, z_max: float) -> float:
    if target <= 0:
        return 0.0
    if target > bessel_j1(z_max) + 1e-15:
        raise CalibrationError("requested rate exceeds J1 at the z ceiling")
    return brentq(lambda z: bessel_j1(z) - target, 0.0, z_max, xtol=1e-14)


def iswap_params(device, k: int, transition: str = "ge") -> IswapParams:
    """Rate and square-pulse duration of the pi exchange with mode ``k``.

    The rate is ``crowding_factor`` times the distance to the nearest other
    sideband tone, clipped to the configured duration window and to the
    modulation-depth ceiling.
    """
    if not 1 <= k <= device.n_modes:
        raise ValueError(f"mode {k} out of range")
    ctl = device.control
    tones = _bare_tones(device)
    tone = tones[(k, transition)]
    sep = min(abs(tone - v) for key, v in tones.items() if key != (k, transition))
    factor = math.sqrt(2.0) if transition == "ef" else 1.0
    g_max_z = factor * device.g(k) * bessel_j1(ctl.z_ceiling)
    g_hi = 1.0 / (4 * ctl.iswap_min_ns)
    g_lo = 1.0 / (4 * ctl.iswap_max_ns)
    g = min(max(ctl.crowding_factor * sep, g_lo), g_hi, g_max_z)
    if g < g_lo * (1 - 1e-9):
        raise CalibrationError(f"mode {k} ({transition}): modulation ceiling z={ctl.z_ceiling} "
                               f"cannot reach a {ctl.iswap_max_ns} ns exchange")
    z = _inverse_j1(g / (factor * device.g(k)), ctl.z_ceiling)
    if sep < ctl.guard_band:
        warnings.warn(f"sideband tone of mode {k} ({transition}) lies {sep * 1e3:.1f} MHz from another tone",
                      CrosstalkWarning, stacklevel=2)
    return IswapParams(k, transition, g, z, 1.0 / (4 * g), tone, sep)


# ------------------------------------------------------------ decomposition


def _iswap(device, k, transition, c, spectators=()):
    p = iswap_params(device, k, transition) if device is not None else None
    return Primitive("iswap", p.duration if p else 0.0, k, transition, c=complex(c)), spectators


def decompose(gate: GateOp, device=None, calibration: "PhaseCalibration | None" = None) -> list[Primitive]:
    """Tracked-frame primitive list realising ``gate``; durations taken from ``device``."""
    return [p for p, _ in _decompose_with_spectators(gate, device, calibration)]


def mode_sandwich(device, k: int, rotations: Sequence[tuple[float, float]]) -> list[Primitive]:
    """Transmon rotations ``(angle, phase)`` applied to mode ``k`` between two g-e iSWAPs."""
    out = [_iswap(device, k, "ge", -1j)[0]]
    out += [_rot(device, a, p)[0] for a, p in rotations]
    out.append(_iswap(device, k, "ge", 1j)[0])
    return out


def _rot(device, angle, phase, transition="ge", spectators=()):
    dur = device.control.charge_pulse_ns if device is not None else 0.0
    return Primitive("rot", dur, None, transition, angle, phase), spectators


def _decompose_with_spectators(gate: GateOp, device, calibration):
    """Primitives plus, for each, the modes expected to hold a photon in the
    transmon-excited branch (used for frequency selection)."""
    beta = 0.0
    kind, t = gate.kind, gate.targets
    if kind == "barrier":
        return []
    if kind == "rot":
        return [_rot(device, gate.angle, gate.phase, gate.transition)]
    if kind == "iswap":
        return [_iswap(device, t[0], gate.transition, 1.0)]
    if kind == "single":
        k = t[0]
        return [_iswap(device, k, "ge", -1j), _rot(device, gate.angle, gate.phase), _iswap(device, k, "ge", 1j)]
    if kind == "cz":
        j, k = t
        if calibration is not None:
            beta = calibration.cz_beta.get((j, k), 0.0)
        return [_iswap(device, k, "ge", -1j), _iswap(device, j, "ef", 1.0),
                _iswap(device, j, "ef", np.exp(1j * beta)), _iswap(device, k, "ge", 1j)]
    if kind in ("cx", "cy"):
        j, k = t
        c = -1.0 if kind == "cx" else -1j
        if calibration is not None:
            beta = calibration.cz_beta.get((kind, j, k), 0.0)
        return [_iswap(device, j, "ge", -1j), _iswap(device, k, "ef", c),
                _rot(device, math.pi, 0.0, "ef"), _iswap(device, k, "ef", c * np.exp(1j * beta)),
                _iswap(device, j, "ge", 1j)]
    if kind == "swap":
        j, k = t
        # the photon of k is parked in f while the g-e exchange with k runs, so no
        # g-e drive ever acts on k with the transmon excited
        return [_iswap(device, j, "ge", -1j), _iswap(device, k, "ef", 1.0), _iswap(device, k, "ge", 1j),
                _iswap(device, k, "ef", 1.0), _iswap(device, j, "ge", -1j)]
    if kind == "ghz":
        out = [_rot(device, gate.angle, math.pi / 2)]
        loaded: list[int] = []
        for m in t[:-1]:
            out.append(_rot(device, math.pi, 0.0, "ef", tuple(loaded)))
            out.append(_iswap(device, m, "ef", -1.0, tuple(loaded)))
            loaded.append(m)
        out.append(_iswap(device, t[-1], "ge", 1j, tuple(loaded)))
        return out
    raise ValueError(f"cannot decompose {kind}")


def _rot2(angle, phase):
    c, s = math.cos(angle / 2), math.sin(angle / 2)
    return np.array([[c, -1j * s * np.exp(-1j * phase)], [-1j * s * np.exp(1j * phase), c]])


def _on_modes(ops: dict, modes: Sequence[int]) -> np.ndarray:
    U = np.array([[1.0 + 0j]])
    for m in modes:
        U = np.kron(U, ops.get(m, np.eye(2)))
    return U


def ideal_unitary(gate: GateOp, modes: Sequence[int]) -> np.ndarray:
    """Textbook unitary of a memory gate on the qubits ``modes`` (ascending order)."""
    modes = list(modes)
    n = len(modes)
    dim = 2**n
    if gate.kind == "barrier":
        return np.eye(dim, dtype=complex)
    if gate.kind == "single":
        return _on_modes({gate.targets[0]: _rot2(gate.angle, gate.phase)}, modes)
    if gate.kind in ("cz", "cx", "cy", "swap"):
        j, k = gate.targets
        ij, ik = modes.index(j), modes.index(k)
        U = np.zeros((dim, dim), complex)
        X = np.array([[0, 1], [1, 0]], complex)
        Y = np.array([[0, -1j], [1j, 0]], complex)
        for col in range(dim):
            bits = [(col >> (n - 1 - i)) & 1 for i in range(n)]
            amp = 1.0 + 0j
            out = [list(bits)]
            if gate.kind == "cz":
                amp = -1.0 if bits[ij] and bits[ik] else 1.0
            elif gate.kind == "swap":
                out[0][ij], out[0][ik] = bits[ik], bits[ij]
            elif bits[ij]:
                M = X if gate.kind == "cx" else Y
                b = bits[ik]
                out[0][ik] = 1 - b
                amp = M[1 - b, b]
            row = sum(bit << (n - 1 - i) for i, bit in enumerate(out[0]))
            U[row, col] = amp
        return U
    if gate.kind == "ghz":
        raise ValueError("ghz is a state preparation, not a unitary on the memory alone")
    raise ValueError(f"{gate.kind} acts on the transmon; no memory-only unitary")


def program_unitary(program: GateProgram, modes: Sequence[int]) -> np.ndarray:
    U = np.eye(2 ** len(modes), dtype=complex)
    for op in program.ops:
        U = ideal_unitary(op, modes) @ U
    return U


def process_fidelity_unitary(U_ideal: np.ndarray, M: np.ndarray) -> float:
    """Entanglement fidelity |Tr(U^dag M)|^2 / d^2 of a (possibly leaky) map ``M``."""
    d = U_ideal.shape[0]
    return float(abs(np.trace(U_ideal.conj().T @ M)) ** 2 / d**2)


def nn_gate_count(j: int) -> int:
    """Nearest-neighbour gates needed to entangle qubits 1 and ``j`` on a line."""
    if j < 2:
        raise ValueError("j must be >= 2")
    return 2 * j - 3


def fidelity_curve(f_gate: float, j: int) -> float:
    return f_gate ** nn_gate_count(j)


# ------------------------------------------------------------ calibration


@dataclass
class PhaseCalibration:
    """Measured quantities used by the compiler.

    ``dc_coeff``: DC transmon shift is ``-dc_coeff * eps**2`` (GHz).
    ``chi``: dispersive shift (GHz) of transmon level ``1`` (e) and ``2`` (f)
    with mode ``k`` occupied, keyed ``(level, k)``.
    ``cz_beta``: extra relative phase of the second e1-f0 exchange, keyed by
    ``(j, k)`` for CZ and ``(kind, j, k)`` for CX/CY.
    ``mode_z``: residual single-mode phases removed by virtual Z after a gate,
    keyed like ``cz_beta``.
    """

    dc_coeff: float = 0.0
    chi: dict = field(default_factory=dict)
    cz_beta: dict = field(default_factory=dict)
    mode_z: dict = field(default_factory=dict)
    enabled: bool = True

    @classmethod
    def off(cls) -> "PhaseCalibration":
        return cls(enabled=False)

    def dc_shift(self, eps: float) -> float:
        return -self.dc_coeff * eps * eps if self.enabled else 0.0

    def offsets(self, device) -> dict:
        """Phase (rad) each effect would add over one exchange, keyed ``(k, transition, effect)``."""
        out = {}
        for k in range(1, device.n_modes + 1):
            for tr in ("ge", "ef"):
                p = iswap_params(device, k, tr)
                eps = 2 * p.z * p.tone
                out[(k, tr, "dc")] = 2 * math.pi * self.dc_coeff * eps * eps * p.duration
                level = 1 if tr == "ge" else 2
                out[(k, tr, "dispersive")] = 2 * math.pi * self.chi.get((1, k), 0.0) * p.duration \
                    if tr == "ef" else 0.0
        return out


def _ramsey_dc(device, eps: float, nu_sb: float, n_periods=(40, 80, 120)) -> float:
    """DC transmon shift from simulated Ramsey phases after whole-period flux pulses."""
    lay = SpaceLayout(device.transmon.n_levels, ())
    psi = np.zeros(lay.total_dim, complex)
    psi[0] = psi[1] = 1 / math.sqrt(2)
    ts, ph = [], []
    for n in n_periods:
        T = n / nu_sb
        seq = PulseSequence().insert(FluxPulse(nu_sb, eps, 0.0, Envelope("square", T)), 0.0)
        fin = evolve(psi, seq, device, EvolveOptions(dt=min(0.01, 0.02 / nu_sb)), layout=lay).final
        ts.append(T)
        ph.append(np.angle(fin[1] / fin[0]))
    ph = np.unwrap(ph)
    slope, icpt = np.polyfit(ts, ph, 1)
    resid = np.max(np.abs(np.polyval([slope, icpt], ts) - ph))
    if resid > 1e-3 or abs(icpt) > 1e-2:
        raise CalibrationError(f"Ramsey phase not linear in time (residual {resid:.2e} rad)")
    return -slope / (2 * math.pi)


def _ramsey_frequency(device, layout, lo_label, hi_label, t_max=2000.0, n=64) -> float:
    """Free-evolution Ramsey frequency between two basis labels of the static Hamiltonian."""
    from .hilbert import build_hamiltonian

    H = build_hamiltonian(device, layout=layout, rwa=True)
    E, V = np.linalg.eigh(H)
    psi = np.zeros(layout.total_dim, complex)
    a, b = layout.index(lo_label), layout.index(hi_label)
    psi[a] = psi[b] = 1 / math.sqrt(2)
    c0 = V.conj().T @ psi
    ts = np.linspace(0, t_max, n)
    sig = []
    for t in ts:
        ps = V @ (np.exp(-2j * math.pi * E * t) * c0)
        sig.append(ps[b] * np.conj(ps[a]))
    ph = np.unwrap(np.angle(sig))
    f = -np.polyfit(ts, ph, 1)[0] / (2 * math.pi)
    return f


def calibrate_phases(device, modes: Iterable[int] | None = None) -> PhaseCalibration:
    """Measure the DC shift coefficient and the e/f dispersive shifts by simulated Ramsey."""
    modes = tuple(sorted(device.active_modes if modes is None else modes))
    dev = device.without_decoherence()
    # DC shift: Ramsey at a reference modulation away from every sideband
    nu_ref = 1.0
    coeffs = []
    for eps in (0.5, 1.0):
        d = _ramsey_dc(dev, eps, nu_ref)
        coeffs.append(-d / eps**2)
    dc_coeff = float(np.mean(coeffs))
    chi = {}
    for k in modes:
        lay = SpaceLayout(dev.transmon.n_levels, (k,), dev.mode_levels)
        for level in (1, 2):
            if level >= dev.transmon.n_levels:
                continue
            f0 = _ramsey_frequency(dev, lay, (0, 0), (level, 0))
            f1 = _ramsey_frequency(dev, lay, (0, 1), (level, 1))
            chi[(level, k)] = float(f1 - f0)
    return PhaseCalibration(dc_coeff, chi)


# ------------------------------------------------------------ compilation


class _EnergyModel:
    """Transition energies the compiler believes in.

    Single-excitation energies come from spectroscopy (dressed); pairwise
    transmon-mode dispersive shifts are added only when calibrated.
    """

    def __init__(self, device, modes, calibration: PhaseCalibration):
        self.device = device
        self.cal = calibration
        lay = SpaceLayout(device.transmon.n_levels, tuple(modes), device.mode_levels)
        self.frame = DressedFrame(device, lay, rwa=True)
        self.modes = tuple(modes)
        n = len(modes)
        self.e_t = [self.frame.energy((lvl,) + (0,) * n) for lvl in range(device.transmon.n_levels)]
        self.e_m = {}
        for i, k in enumerate(modes):
            lab = [0] * (n + 1)
            lab[i + 1] = 1
            self.e_m[k] = self.frame.energy(tuple(lab))

    def energy(self, level: int, occupied: Iterable[int]) -> float:
        e = self.e_t[level]
        for k in occupied:
            e += self.e_m[k]
            if self.cal.enabled and level > 0:
                e += self.cal.chi.get((level, k), 0.0)
        return e


def _solve_phi(target: float, z: float) -> float:
    """phi with phi + z cos(phi) = target (mod 2 pi); monotone for z < 1."""
    t = math.fmod(target, 2 * math.pi)
    if z < 1e-14:
        return t
    f = lambda p: p + z * math.cos(p) - t
    return brentq(f, t - z - 1.0, t + z + 1.0, xtol=1e-14)


@dataclass
class _CompileState:
    seq: PulseSequence
    t: float
    theta: float  # transmon frame
    mode_frames: dict


def compile_primitives(device, items, modes, calibration: PhaseCalibration | None = None,
                       state: _CompileState | None = None) -> _CompileState:
    """Schedule ``(primitive, spectators)`` items back to back with frame tracking."""
    cal = calibration if calibration is not None else PhaseCalibration()
    ctl = device.control
    model = _EnergyModel(device, modes, cal)
    st = state or _CompileState(PulseSequence(), 0.0, 0.0, {k: 0.0 for k in modes})
    bookkeeping = TransmonParams(device.transmon.nu_q0, device.transmon.alpha, device.transmon.n_levels,
                                 8.0 * cal.dc_coeff if cal.enabled else 0.0)
    for prim, spect in items:
        start = st.t + (ctl.gap_ns if st.seq.items else 0.0)
        if prim.kind == "rot":
            lo = 0 if prim.transition == "ge" else 1
            freq = model.energy(lo + 1, spect) - model.energy(lo, spect)
            env = Envelope(ctl.charge_envelope, ctl.charge_pulse_ns, n_sigma=ctl.n_sigma)
            pulse = ChargePulse.rotation(prim.angle, prim.phase - st.theta, freq, env, prim.transition)
            st.seq = st.seq.insert(pulse, start)
        elif prim.kind == "iswap":
            k = prim.mode
            p = iswap_params(device, k, prim.transition)
            m = 0 if prim.transition == "ge" else 1
            occ_lo = tuple(spect) + (k,)
            res = model.energy(m, occ_lo) - model.energy(m + 1, tuple(spect))
            # self-consistent modulation frequency including the calibrated DC shift
            nu = res
            for _ in range(50):
                eps = 2 * p.z * nu
                nu_new = res - cal.dc_shift(eps)
                if abs(nu_new - nu) < 1e-13:
                    break
                nu = nu_new
            eps = 2 * p.z * nu
            delta = cal.dc_shift(eps)
            c_dressed = complex(prim.c) * np.exp(1j * (st.theta - st.mode_frames.get(k, 0.0)))
            psi_phys = -np.angle(c_dressed)
            target = psi_phys + math.pi / 2 + 2 * math.pi * (nu + delta) * start
            phi = _solve_phi(target, p.z)
            env = Envelope(ctl.flux_envelope, p.duration, n_sigma=ctl.n_sigma)
            pulse = FluxPulse(nu, eps, phi, env, k, prim.transition)
            st.seq = st.seq.insert(pulse, start)
            one = PulseSequence().insert(pulse, 0.0)
            st.theta += float(flux_phase(one, np.array([p.duration]), bookkeeping)[0])
        elif prim.kind == "idle":
            pass
        else:
            raise ValueError(f"cannot compile primitive {prim.kind}")
        st.t = start + prim.duration
    return st


def _finish(st: _CompileState) -> PulseSequence:
    return st.seq.with_frames(st.theta, dict(st.mode_frames))


def compile_program(device, program: GateProgram | Sequence[GateOp], calibration=None,
                    modes: Sequence[int] | None = None) -> PulseSequence:
    ops = program.ops if isinstance(program, GateProgram) else tuple(program)
    modes = tuple(sorted(modes if modes is not None else {m for op in ops for m in op.modes()}))
    for m in modes:
        if m not in device.active_modes:
            raise ValueError(f"mode {m} is not active")
    cal = calibration if calibration is not None else PhaseCalibration()
    st = None
    for op in ops:
        items = _decompose_with_spectators(op, device, cal)
        if not items:
            continue
        st = compile_primitives(device, items, modes, cal, st)
        key = _gate_key(op)
        for k, z in cal.mode_z.get(key, {}).items() if cal.enabled else ():
            st.mode_frames[k] = st.mode_frames.get(k, 0.0) + z
    if st is None:
        return PulseSequence()
    return _finish(st)


def compile_iswap(device, k: int, transition: str = "ge", calibration=None, c: complex = 1.0) -> PulseSequence:
    st = compile_primitives(device, [_iswap(device, k, transition, c)], (k,), calibration)
    return _finish(st)


def compile_single_mode_gate(device, k: int, angle: float, phase: float, calibration=None) -> PulseSequence:
    return compile_program(device, [GateOp("single", (k,), angle, phase)], calibration)


def compile_cz(device, j: int, k: int, calibration=None) -> PulseSequence:
    _collision_check(device, j, k)
    return compile_program(device, [GateOp("cz", (j, k))], calibration)


def compile_cx_cy(device, j: int, k: int, kind: str = "cx", calibration=None) -> PulseSequence:
    if kind not in ("cx", "cy"):
        raise ValueError("kind must be 'cx' or 'cy'")
    _collision_check(device, j, k)
    return compile_program(device, [GateOp(kind, (j, k))], calibration)


def compile_swap(device, j: int, k: int, calibration=None) -> PulseSequence:
    return compile_program(device, [GateOp("swap", (j, k))], calibration)


def compile_ghz(device, modes: Sequence[int], theta: float, calibration=None) -> PulseSequence:
    return compile_program(device, [GateOp("ghz", tuple(modes), theta)], calibration)


def _collision_check(device, j, k):
    gap = abs(abs(device.nu(j) - device.nu(k)) - abs(device.transmon.alpha))
    if gap < device.control.guard_band:
        warnings.warn(f"modes {j},{k}: frequency difference within {gap * 1e3:.1f} MHz of the anharmonicity",
                      CrosstalkWarning, stacklevel=3)


# ------------------------------------------------------------ pulse-level maps


def pulse_gate_matrix(device, sequence: PulseSequence, modes: Sequence[int],
                      options: EvolveOptions | None = None, transmon_levels=(0,)) -> np.ndarray:
    """Pulse-level map restricted to transmon levels ``transmon_levels`` (x) mode qubits.

    Columns are inputs, rows outputs, in the tracked frame.  Leakage out of
    the subspace shows up as a non-unitary block.
    """
    modes = tuple(sorted(modes))
    lay = SpaceLayout(device.transmon.n_levels, modes, device.mode_levels)
    labels = [(t,) + tuple((i >> (len(modes) - 1 - b)) & 1 for b in range(len(modes)))
              for t in transmon_levels for i in range(2 ** len(modes))]
    idx = [lay.index(l) for l in labels]
    psi = np.zeros((len(labels), lay.total_dim), complex)
    for r, i in enumerate(idx):
        psi[r, i] = 1.0
    opts = options or EvolveOptions()
    fin = evolve(psi, sequence, device.without_decoherence(), opts, layout=lay).final  # (B, d)
    frame = np.exp(1j * sequence.frame_phase * lay.occupation[:, 0])
    for k, ph in sequence.mode_frames:
        if k in modes:
            frame = frame * np.exp(1j * ph * lay.occupation[:, lay.subsystem_of_mode(k)])
    fin = fin * frame[None, :]
    return fin[:, idx].T


def _gate_key(gate: GateOp):
    return gate.targets if gate.kind == "cz" else (gate.kind,) + gate.targets


def calibrate_gate(device, gate: GateOp, calibration: PhaseCalibration, iterations: int = 2,
                   options: EvolveOptions | None = None) -> PhaseCalibration:
    """Pulse-level phase calibration of one compiled memory gate.

    For CZ/CX/CY the conditional phase is read from the simulated gate map
    (equivalent to a Ramsey fringe on the target with the control in 0 and
    in 1) and cancelled through the relative phase of the second e1-f0
    exchange.  Residual single-mode phases after the gate are then removed
    with virtual Z updates of the mode frames.
    """
    modes = tuple(sorted(gate.targets))
    key = _gate_key(gate)
    cal = replace(calibration, cz_beta=dict(calibration.cz_beta), mode_z=dict(calibration.mode_z))
    cal.mode_z.pop(key, None)
    U = ideal_unitary(gate, modes)

    def out_phases():
        seq = compile_program(device, [gate], cal, modes)
        M = pulse_gate_matrix(device, seq, modes, options)
        return np.angle(np.diag(M @ U.conj().T))

    if gate.kind in ("cz", "cx", "cy"):
        for _ in range(iterations):
            ph = out_phases()
            cond = ph[3] - ph[2] - ph[1] + ph[0]
            cond = (cond + math.pi) % (2 * math.pi) - math.pi
            cal.cz_beta[key] = cal.cz_beta.get(key, 0.0) - cond
    # post-gate virtual Z phases maximising the gate fidelity
    seq = compile_program(device, [gate], cal, modes)
    M = pulse_gate_matrix(device, seq, modes, options)
    n = len(modes)
    occ = np.array([[(i >> (n - 1 - b)) & 1 for b in range(n)] for i in range(2**n)], float)

    def loss(z):
        D = np.exp(1j * occ @ z)
        return -abs(np.trace(U.conj().T @ (D[:, None] * M)))

    best = minimize(loss, np.zeros(n), method="Nelder-Mead", options={"xatol": 1e-7, "fatol": 1e-12})
    z = (best.x + math.pi) % (2 * math.pi) - math.pi
    cal.mode_z[key] = {m: float(z[i]) for i, m in enumerate(modes)}
    return cal


def pulse_final_state(device, sequence: PulseSequence, modes: Sequence[int], label=None,
                      options: EvolveOptions | None = None) -> np.ndarray:
    """Pulse-level final state (tracked frame) from the basis state ``label`` (default all ground)."""
    modes = tuple(sorted(modes))
    lay = SpaceLayout(device.transmon.n_levels, modes, device.mode_levels)
    psi = np.zeros(lay.total_dim, complex)
    psi[lay.index(tuple(label) if label is not None else (0,) * lay.n_subsystems)] = 1.0
    fin = evolve(psi, sequence, device.without_decoherence(), options or EvolveOptions(), layout=lay).final
    frame = np.exp(1j * sequence.frame_phase * lay.occupation[:, 0])
    for k, ph in sequence.mode_frames:
        if k in modes:
            frame = frame * np.exp(1j * ph * lay.occupation[:, lay.subsystem_of_mode(k)])
    return fin * frame


def calibrate_cz_phase(device, j: int, k: int, calibration: PhaseCalibration, kind: str = "cz",
                       iterations: int = 2, options: EvolveOptions | None = None) -> PhaseCalibration:
    """CZ (or CX/CY) conditional-phase calibration; see :func:`calibrate_gate`."""
    return calibrate_gate(device, GateOp(kind, (j, k)), calibration, iterations, options)
