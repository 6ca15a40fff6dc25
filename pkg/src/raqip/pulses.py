"""Charge and flux control pulses and their time ordering.

The flux line modulates the transmon frequency directly::

    nu_q(t) = nu_q0 + sum_p env_p(tau) * [ (eps_p / 2) * sin(2 pi nu_sb,p tau + phi_p) + dc(eps_p) ]

with ``tau = t - start_p`` and ``dc(eps) = -flux_curvature * eps**2 / 8``.
``eps`` is the peak-to-peak frequency excursion, so the first sideband has
strength ``g_k * J1(eps / (2 nu_sb))``.

Charge pulses drive one transmon transition (ge or ef).  In the frame of the
static Hamiltonian the resonant drive is ``(Omega(t)/2) (e^{i phi} s+ + h.c.)``
with ``s+ = |e><g|`` (or ``|f><e|``), so a pulse of area ``theta`` is the
rotation ``exp(-i theta/2 (cos phi X + sin phi Y))``.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Union

import numpy as np

__all__ = [
    "Envelope",
    "ChargePulse",
    "FluxPulse",
    "PulseSequence",
    "SequenceError",
    "nu_q_of_t",
    "active_pulses",
    "append",
    "flux_phase",
]

_GL_X, _GL_W = np.polynomial.legendre.leggauss(6)


class SequenceError(ValueError):
    pass


@dataclass(frozen=True)
class Envelope:
    kind: str = "gaussian"
    duration: float = 20.0
    sigma: float | None = None
    scale: float = 1.0
    n_sigma: float = 2.0

    def __post_init__(self):
        if self.kind not in ("gaussian", "flat_top_gaussian", "square"):
            raise ValueError(f"unknown envelope kind {self.kind!r}")
        if not self.duration > 0:
            raise ValueError("envelope duration must be > 0")
        if self.sigma is not None and not self.sigma > 0:
            raise ValueError("sigma must be > 0")

    @property
    def width(self) -> float:
        """Gaussian sigma actually used (ns)."""
        if self.sigma is not None:
            return self.sigma
        if self.kind == "gaussian":
            return self.duration / (2 * self.n_sigma)
        return min(self.duration / 8, 2.0)

    @property
    def ramp(self) -> float:
        return min(self.n_sigma * self.width, self.duration / 2)

    def __call__(self, tau):
        tau = np.asarray(tau, float)
        inside = (tau >= 0) & (tau <= self.duration)
        if self.kind == "square":
            val = np.ones_like(tau)
        elif self.kind == "gaussian":
            c = self.duration / 2
            val = np.exp(-((tau - c) ** 2) / (2 * self.width**2))
        else:
            r, s = self.ramp, self.width
            d = np.where(tau < r, r - tau, np.where(tau > self.duration - r, tau - (self.duration - r), 0.0))
            val = np.exp(-(d**2) / (2 * s**2))
        return self.scale * np.where(inside, val, 0.0)

    def area(self) -> float:
        """Integral of the envelope over its duration (ns)."""
        if self.kind == "square":
            a = self.duration
        elif self.kind == "gaussian":
            s, h = self.width, self.duration / 2
            a = s * math.sqrt(2 * math.pi) * math.erf(h / (math.sqrt(2) * s))
        else:
            s, r = self.width, self.ramp
            a = self.duration - 2 * r + s * math.sqrt(2 * math.pi) * math.erf(r / (math.sqrt(2) * s))
        return self.scale * a

    def mean(self) -> float:
        return self.area() / self.duration


@dataclass(frozen=True)
class ChargePulse:
    frequency: float
    phase: float
    envelope: Envelope
    transition: str = "ge"
    amplitude: float = 0.0  # peak Rabi frequency, GHz

    line = "charge"

    def __post_init__(self):
        if self.transition not in ("ge", "ef"):
            raise ValueError("charge transition must be 'ge' or 'ef'")

    @property
    def duration(self) -> float:
        return self.envelope.duration

    @property
    def angle(self) -> float:
        return 2 * math.pi * self.amplitude * self.envelope.area()

    @classmethod
    def rotation(cls, angle: float, phase: float, frequency: float, envelope: Envelope,
                 transition: str = "ge") -> "ChargePulse":
        """Pulse whose calibrated amplitude realises rotation ``angle``."""
        amp = angle / (2 * math.pi * envelope.area())
        return cls(frequency, phase, envelope, transition, amp)


@dataclass(frozen=True)
class FluxPulse:
    nu_sb: float
    eps: float
    phase: float
    envelope: Envelope
    mode: int | None = None
    transition: str = "ge"  # ge: |g1>-|e0>, ef: |e1>-|f0>

    line = "flux"

    def __post_init__(self):
        if self.eps < 0:
            raise ValueError("eps must be >= 0")
        if not self.nu_sb > 0:
            raise ValueError("nu_sb must be > 0")
        if self.transition not in ("ge", "ef"):
            raise ValueError("sideband transition must be 'ge' or 'ef'")

    @property
    def duration(self) -> float:
        return self.envelope.duration

    @property
    def z(self) -> float:
        return self.eps / (2 * self.nu_sb)


Pulse = Union[ChargePulse, FluxPulse]


@dataclass(frozen=True)
class PulseSequence:
    items: tuple[tuple[float, Pulse], ...] = ()
    # virtual-Z bookkeeping: transmon frame phase accumulated by the program,
    # and per-mode frame phases.  Applied to simulated output as exp(+i phase n).
    frame_phase: float = 0.0
    mode_frames: tuple[tuple[int, float], ...] = ()

    @property
    def duration(self) -> float:
        return max((s + p.duration for s, p in self.items), default=0.0)

    def line_end(self, line: str) -> float:
        return max((s + p.duration for s, p in self.items if p.line == line), default=0.0)

    def flux_pulses(self):
        return [(s, p) for s, p in self.items if p.line == "flux"]

    def charge_pulses(self):
        return [(s, p) for s, p in self.items if p.line == "charge"]

    def insert(self, pulse: Pulse, start: float) -> "PulseSequence":
        if start < 0:
            raise SequenceError("pulse start must be >= 0")
        end = start + pulse.duration
        for s, p in self.items:
            if p.line == pulse.line and start < s + p.duration - 1e-12 and s < end - 1e-12:
                raise SequenceError(f"{pulse.line} pulse at {start:g} ns overlaps pulse at {s:g} ns")
        items = tuple(sorted(self.items + ((float(start), pulse),), key=lambda x: x[0]))
        return replace(self, items=items)

    def breakpoints(self) -> list[float]:
        pts = {0.0, self.duration}
        for s, p in self.items:
            pts.update((s, s + p.duration))
        return sorted(pts)

    def with_frames(self, frame_phase: float, mode_frames: dict[int, float] | None = None):
        return replace(self, frame_phase=frame_phase,
                       mode_frames=tuple(sorted((mode_frames or {}).items())))

    # JSON -----------------------------------------------------------------
    def to_json(self) -> str:
        rows = []
        for s, p in self.items:
            d = asdict(p)
            d["line"] = p.line
            rows.append({"start": s, "pulse": d})
        return json.dumps({"items": rows, "frame_phase": self.frame_phase,
                           "mode_frames": [list(x) for x in self.mode_frames]}, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "PulseSequence":
        raw = json.loads(text)
        items = []
        for row in raw["items"]:
            d = dict(row["pulse"])
            line = d.pop("line")
            env = Envelope(**d.pop("envelope"))
            pulse = ChargePulse(envelope=env, **d) if line == "charge" else FluxPulse(envelope=env, **d)
            items.append((row["start"], pulse))
        return cls(tuple(items), raw.get("frame_phase", 0.0),
                   tuple(tuple(x) for x in raw.get("mode_frames", [])))


def append(sequence: PulseSequence, pulse: Pulse, gap: float = 0.0) -> PulseSequence:
    """Schedule ``pulse`` at ``sequence.duration + gap``."""
    start = sequence.duration + gap if sequence.items else max(gap, 0.0)
    if start < 0:
        raise SequenceError("negative gap before sequence start")
    return sequence.insert(pulse, start)


def _flux_offset(pulse: FluxPulse, tau, transmon) -> np.ndarray:
    env = pulse.envelope(tau)
    osc = 0.5 * pulse.eps * np.sin(2 * np.pi * pulse.nu_sb * tau + pulse.phase)
    return env * (osc + transmon.dc_shift(pulse.eps))


def active_pulses(items, t_mid: float | None):
    """Pulses running at ``t_mid``, or all of them when ``t_mid`` is None."""
    if t_mid is None:
        return list(items)
    return [(s, p) for s, p in items if s < t_mid < s + p.duration]


def nu_q_of_t(sequence: PulseSequence, t, transmon, active_at: float | None = None) -> np.ndarray | float:
    """Instantaneous transmon frequency (GHz) at time(s) ``t``.

    With ``active_at`` only pulses running at that instant contribute and
    their envelopes are held at the edge value outside the pulse, giving the
    one-sided limit an integrator needs at a pulse boundary.
    """
    t_arr = np.asarray(t, float)
    out = np.full(t_arr.shape, transmon.nu_q0, float)
    for s, p in active_pulses(sequence.flux_pulses(), active_at):
        tau = t_arr - s if active_at is None else np.clip(t_arr - s, 0.0, p.duration)
        out = out + _flux_offset(p, tau, transmon)
    return float(out) if np.ndim(t) == 0 else out


def _square_phase(p: FluxPulse, tau, transmon):
    tau = np.clip(tau, 0.0, p.duration)
    w = 2 * np.pi * p.nu_sb
    osc = 0.5 * p.eps * (np.cos(p.phase) - np.cos(w * tau + p.phase)) / w
    return 2 * np.pi * p.envelope.scale * (osc + transmon.dc_shift(p.eps) * tau)


def flux_phase(sequence: PulseSequence, times, transmon) -> np.ndarray:
    """theta(t) = 2 pi * integral_0^t (nu_q - nu_q0) dt' at sorted ``times``.

    Square envelopes are integrated in closed form, others with 6-point
    Gauss-Legendre on sub-intervals no longer than 1/8 of a modulation period.
    """
    times = np.asarray(times, float)
    theta = np.zeros_like(times)
    for s, p in sequence.flux_pulses():
        if p.envelope.kind == "square":
            theta += _square_phase(p, times - s, transmon)
            continue
        tau = np.clip(times - s, 0.0, p.duration)
        h = min(0.125 / p.nu_sb, p.envelope.width / 4)
        fine = np.linspace(0.0, p.duration, int(math.ceil(p.duration / h)) + 1)
        grid = np.unique(np.concatenate([fine, tau]))
        a, b = grid[:-1], grid[1:]
        half = 0.5 * (b - a)
        nodes = (0.5 * (a + b))[:, None] + half[:, None] * _GL_X[None, :]
        vals = _flux_offset(p, nodes, transmon)
        seg = half * (vals @ _GL_W)
        cum = np.concatenate([[0.0], np.cumsum(seg)])
        theta += 2 * np.pi * np.interp(tau, grid, cum)
    return theta
