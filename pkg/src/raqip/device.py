"""Physical parameters of the processor and the resonator-array eigenmode spectrum.

A device is a linear chain of ``n`` identical resonators (frequency ``nu_r``,
nearest-neighbour hopping ``g_r``) whose first site couples to a flux-tunable
transmon with strength ``g_q``.  The chain's normal modes are the memory;
each couples to the transmon with ``g_k = g_q * |v_k[0]|``.

Units: frequencies in GHz, times in ns.  Config files give coherence times
in microseconds and are converted on load.
"""
from __future__ import annotations

import hashlib
import json
import math
import os
import warnings
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np
import yaml
from scipy.linalg import eigh_tridiagonal

__all__ = [
    "ArrayParams",
    "TransmonParams",
    "CoherenceParams",
    "ControlParams",
    "ModeSpectrum",
    "DeviceModel",
    "ConfigError",
    "build_spectrum",
    "closed_form_spectrum",
    "load_device",
    "save_device",
    "device_from_dict",
    "device_to_dict",
    "default_config_path",
    "toy_config_path",
    "CONFIG_ENV_VAR",
]

CONFIG_ENV_VAR = "RAQIP_DEVICE_CONFIG"
INF = math.inf


class ConfigError(ValueError):
    """Raised for malformed or invalid device configuration."""


def _require(cond: bool, field_name: str, msg: str) -> None:
    if not cond:
        raise ConfigError(f"{field_name}: {msg}")


@dataclass(frozen=True)
class ArrayParams:
    n_resonators: int
    nu_r: float
    g_r: float
    g_q: float
    # optional per-site scatter; closed-form checks do not apply when set
    nu_r_sites: tuple[float, ...] | None = None
    g_r_links: tuple[float, ...] | None = None

    def __post_init__(self):
        _require(isinstance(self.n_resonators, int) and self.n_resonators >= 1,
                 "array.n_resonators", "must be an integer >= 1")
        _require(self.nu_r > 0, "array.nu_r", "must be > 0")
        _require(self.g_r >= 0, "array.g_r", "must be >= 0")
        _require(self.g_q >= 0, "array.g_q", "must be >= 0")
        if self.nu_r_sites is not None:
            _require(len(self.nu_r_sites) == self.n_resonators, "array.nu_r_sites",
                     "length must equal n_resonators")
        if self.g_r_links is not None:
            _require(len(self.g_r_links) == self.n_resonators - 1, "array.g_r_links",
                     "length must equal n_resonators - 1")

    @property
    def uniform(self) -> bool:
        return self.nu_r_sites is None and self.g_r_links is None


@dataclass(frozen=True)
class TransmonParams:
    nu_q0: float
    alpha: float
    n_levels: int = 3
    # curvature of the flux-frequency relation; a modulation of peak-to-peak
    # excursion eps shifts the mean transmon frequency by -flux_curvature*eps**2/8
    flux_curvature: float = 0.0

    def __post_init__(self):
        _require(self.nu_q0 > 0, "transmon.nu_q0", "must be > 0")
        _require(isinstance(self.n_levels, int) and self.n_levels >= 2,
                 "transmon.n_levels", "must be an integer >= 2")
        _require(not (self.n_levels >= 3 and self.alpha == 0), "transmon.alpha",
                 "must be nonzero when n_levels >= 3")
        _require(self.flux_curvature >= 0, "transmon.flux_curvature", "must be >= 0")

    def dc_shift(self, eps: float) -> float:
        """Mean frequency shift (GHz) produced by a modulation of amplitude ``eps``."""
        return -self.flux_curvature * eps * eps / 8.0


def _check_t1_t2(name: str, t1: float, t2: float) -> None:
    _require(t1 > 0, f"{name}.t1", "must be > 0 or inf")
    _require(t2 > 0, f"{name}.t2", "must be > 0 or inf")
    _require(t2 <= 2 * t1 * (1 + 1e-12), f"{name}.t2", "must satisfy T2 <= 2*T1")


@dataclass(frozen=True)
class CoherenceParams:
    """Coherence times in ns; ``math.inf`` disables the channel."""

    t1_transmon: float = INF
    t2_transmon: float = INF
    t1_mode: tuple[float, ...] = ()
    t2_mode: tuple[float, ...] = ()

    def __post_init__(self):
        _check_t1_t2("coherence.transmon", self.t1_transmon, self.t2_transmon)
        _require(len(self.t1_mode) == len(self.t2_mode), "coherence.modes",
                 "t1 and t2 lists must have equal length")
        for i, (t1, t2) in enumerate(zip(self.t1_mode, self.t2_mode)):
            _check_t1_t2(f"coherence.modes[{i}]", t1, t2)

    @staticmethod
    def off(n_modes: int) -> "CoherenceParams":
        return CoherenceParams(INF, INF, (INF,) * n_modes, (INF,) * n_modes)

    def mode(self, k: int) -> tuple[float, float]:
        """(T1, T2) of 1-based mode ``k``."""
        return self.t1_mode[k - 1], self.t2_mode[k - 1]

    @property
    def is_off(self) -> bool:
        return all(math.isinf(t) for t in (self.t1_transmon, self.t2_transmon,
                                           *self.t1_mode, *self.t2_mode))


@dataclass(frozen=True)
class ControlParams:
    """Compiler settings.  Defaults are assumptions, not published values."""

    charge_pulse_ns: float = 20.0
    gap_ns: float = 4.0
    n_sigma: float = 2.0
    charge_envelope: str = "gaussian"
    flux_envelope: str = "square"
    crowding_factor: float = 0.1
    iswap_min_ns: float = 20.0
    iswap_max_ns: float = 100.0
    z_ceiling: float = 1.0
    guard_band: float = 0.03

    def __post_init__(self):
        _require(self.charge_pulse_ns > 0, "control.charge_pulse_ns", "must be > 0")
        _require(self.gap_ns >= 0, "control.gap_ns", "must be >= 0")
        _require(self.n_sigma > 0, "control.n_sigma", "must be > 0")
        for name in ("charge_envelope", "flux_envelope"):
            _require(getattr(self, name) in ("gaussian", "square", "flat_top_gaussian"),
                     f"control.{name}", "must be gaussian, square or flat_top_gaussian")
        _require(0 < self.crowding_factor, "control.crowding_factor", "must be > 0")
        _require(0 < self.iswap_min_ns <= self.iswap_max_ns, "control.iswap_min_ns",
                 "must satisfy 0 < iswap_min_ns <= iswap_max_ns")
        _require(0 < self.z_ceiling <= 1.8411837813406593, "control.z_ceiling",
                 "must lie in (0, 1.8412]")
        _require(self.guard_band >= 0, "control.guard_band", "must be >= 0")


@dataclass(frozen=True)
class ModeSpectrum:
    nu_k: tuple[float, ...]
    g_k: tuple[float, ...]
    edge_amp: tuple[float, ...]
    vectors: np.ndarray = field(repr=False, compare=False)

    @property
    def n_modes(self) -> int:
        return len(self.nu_k)


def build_spectrum(array: ArrayParams) -> ModeSpectrum:
    """Diagonalise the chain's tridiagonal hopping matrix.

    Modes are returned in ascending frequency.  Eigenvector signs are fixed so
    the transmon-side amplitude is positive.
    """
    n = array.n_resonators
    diag = np.full(n, array.nu_r) if array.nu_r_sites is None else np.asarray(array.nu_r_sites, float)
    off = np.full(n - 1, array.g_r) if array.g_r_links is None else np.asarray(array.g_r_links, float)
    try:
        w, v = eigh_tridiagonal(diag, off)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - cannot happen for real symmetric input
        raise RuntimeError(f"tridiagonal eigensolver failed: {exc}") from exc
    order = np.argsort(w, kind="stable")
    w, v = w[order], v[:, order]
    signs = np.where(v[0] < 0, -1.0, 1.0)
    v = v * signs
    v.setflags(write=False)
    edge = v[0]
    g = array.g_q * np.abs(edge)
    return ModeSpectrum(tuple(map(float, w)), tuple(map(float, g)), tuple(map(float, edge)), v)


def closed_form_spectrum(array: ArrayParams) -> tuple[np.ndarray, np.ndarray]:
    """Analytic (nu_k, g_k) of a uniform open chain, sorted by frequency."""
    n = array.n_resonators
    k = np.arange(1, n + 1)
    nu = array.nu_r + 2 * array.g_r * np.cos(k * np.pi / (n + 1))
    g = array.g_q * np.sqrt(2 / (n + 1)) * np.sin(k * np.pi / (n + 1))
    order = np.argsort(nu, kind="stable")
    return nu[order], g[order]


@dataclass(frozen=True)
class DeviceModel:
    array: ArrayParams
    transmon: TransmonParams
    coherence: CoherenceParams
    spectrum: ModeSpectrum
    active_modes: tuple[int, ...]
    mode_levels: int = 2
    control: ControlParams = field(default_factory=ControlParams)
    label: str = ""

    def __post_init__(self):
        n = self.array.n_resonators
        _require(all(1 <= k <= n for k in self.active_modes), "active_modes",
                 f"indices must lie in 1..{n}")
        _require(len(set(self.active_modes)) == len(self.active_modes), "active_modes",
                 "duplicate index")
        _require(self.mode_levels >= 2, "mode_levels", "must be >= 2")
        _require(len(self.coherence.t1_mode) == n, "coherence.modes",
                 f"need one entry per resonator mode ({n})")

    @classmethod
    def create(cls, array: ArrayParams, transmon: TransmonParams,
               coherence: CoherenceParams | None = None,
               active_modes=None, **kw) -> "DeviceModel":
        spec = build_spectrum(array)
        n = array.n_resonators
        if coherence is None:
            coherence = CoherenceParams.off(n)
        if active_modes is None:
            active_modes = tuple(range(1, n + 1))
        return cls(array, transmon, coherence, spec, tuple(active_modes), **kw)

    @property
    def n_modes(self) -> int:
        return self.array.n_resonators

    def nu(self, k: int) -> float:
        return self.spectrum.nu_k[k - 1]

    def g(self, k: int) -> float:
        return self.spectrum.g_k[k - 1]

    def without_decoherence(self) -> "DeviceModel":
        return replace(self, coherence=CoherenceParams.off(self.n_modes))

    def with_coherence(self, coherence: CoherenceParams) -> "DeviceModel":
        return replace(self, coherence=coherence)

    def with_control(self, **kw) -> "DeviceModel":
        return replace(self, control=replace(self.control, **kw))

    def with_transmon(self, **kw) -> "DeviceModel":
        return replace(self, transmon=replace(self.transmon, **kw))

    def digest(self) -> str:
        """Stable SHA-256 of the configuration (hex, 16 chars)."""
        blob = json.dumps(device_to_dict(self), sort_keys=True, default=_json_default)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _json_default(o):
    if isinstance(o, float) and math.isinf(o):
        return "inf"
    raise TypeError(type(o))


# ---------------------------------------------------------------- config I/O

_SCHEMA = {
    "array": {"n_resonators", "nu_r", "g_r", "g_q", "nu_r_sites", "g_r_links"},
    "transmon": {"nu_q0", "alpha", "n_levels", "flux_curvature"},
    "coherence": {"t1_transmon_us", "t2_transmon_us", "t1_mode_us", "t2_mode_us"},
    "control": set(ControlParams.__dataclass_fields__),
}
_TOP = {"label", "array", "transmon", "coherence", "active_modes", "mode_levels", "control"}
_REQUIRED = {
    "array": ("n_resonators", "nu_r", "g_r", "g_q"),
    "transmon": ("nu_q0", "alpha"),
}


def _us_to_ns(x) -> float:
    if isinstance(x, str):
        if x.strip().lower() in ("inf", "infinite", ".inf"):
            return INF
        raise ConfigError(f"coherence: cannot parse time {x!r}")
    return float(x) * 1e3


def _ns_to_us(x: float):
    return "inf" if math.isinf(x) else x / 1e3


def _expand(v, n, name):
    if isinstance(v, (list, tuple)):
        if len(v) != n:
            raise ConfigError(f"coherence.{name}: expected {n} entries, got {len(v)}")
        return tuple(_us_to_ns(x) for x in v)
    return (_us_to_ns(v),) * n


def device_from_dict(data: dict[str, Any], strict: bool = True) -> DeviceModel:
    """Build and validate a device from a parsed config mapping."""
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")

    def unknown(keys, allowed, where):
        extra = sorted(set(keys) - allowed)
        if extra:
            msg = f"{where}: unknown key(s) {', '.join(extra)}"
            if strict:
                raise ConfigError(msg)
            warnings.warn(msg, stacklevel=3)

    unknown(data, _TOP, "config")
    for sec in ("array", "transmon"):
        if sec not in data:
            raise ConfigError(f"{sec}: missing section")
    for sec, allowed in _SCHEMA.items():
        body = data.get(sec) or {}
        if not isinstance(body, dict):
            raise ConfigError(f"{sec}: must be a mapping")
        unknown(body, allowed, sec)
        for req in _REQUIRED.get(sec, ()):
            if req not in body:
                raise ConfigError(f"{sec}.{req}: required field missing")

    a = data["array"]
    try:
        array = ArrayParams(
            n_resonators=a["n_resonators"], nu_r=float(a["nu_r"]), g_r=float(a["g_r"]),
            g_q=float(a["g_q"]),
            nu_r_sites=tuple(map(float, a["nu_r_sites"])) if a.get("nu_r_sites") else None,
            g_r_links=tuple(map(float, a["g_r_links"])) if a.get("g_r_links") else None,
        )
        t = data["transmon"]
        transmon = TransmonParams(float(t["nu_q0"]), float(t["alpha"]), int(t.get("n_levels", 3)),
                                  float(t.get("flux_curvature", 0.0)))
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"bad value: {exc}") from exc
    n = array.n_resonators
    c = data.get("coherence") or {}
    coherence = CoherenceParams(
        _us_to_ns(c.get("t1_transmon_us", "inf")), _us_to_ns(c.get("t2_transmon_us", "inf")),
        _expand(c.get("t1_mode_us", "inf"), n, "t1_mode_us"),
        _expand(c.get("t2_mode_us", "inf"), n, "t2_mode_us"),
    )
    control = ControlParams(**(data.get("control") or {}))
    active = data.get("active_modes")
    active = tuple(range(1, n + 1)) if active is None else tuple(int(k) for k in active)
    return DeviceModel(array, transmon, coherence, build_spectrum(array), active,
                       int(data.get("mode_levels", 2)), control, str(data.get("label", "")))


def device_to_dict(model: DeviceModel) -> dict[str, Any]:
    a = model.array
    arr: dict[str, Any] = {"n_resonators": a.n_resonators, "nu_r": a.nu_r, "g_r": a.g_r, "g_q": a.g_q}
    if a.nu_r_sites is not None:
        arr["nu_r_sites"] = list(a.nu_r_sites)
    if a.g_r_links is not None:
        arr["g_r_links"] = list(a.g_r_links)
    t = model.transmon
    c = model.coherence
    return {
        "label": model.label,
        "array": arr,
        "transmon": {"nu_q0": t.nu_q0, "alpha": t.alpha, "n_levels": t.n_levels,
                     "flux_curvature": t.flux_curvature},
        "coherence": {
            "t1_transmon_us": _ns_to_us(c.t1_transmon),
            "t2_transmon_us": _ns_to_us(c.t2_transmon),
            "t1_mode_us": [_ns_to_us(x) for x in c.t1_mode],
            "t2_mode_us": [_ns_to_us(x) for x in c.t2_mode],
        },
        "active_modes": list(model.active_modes),
        "mode_levels": model.mode_levels,
        "control": dict(model.control.__dict__),
    }


def load_device(path=None, strict: bool = True) -> DeviceModel:
    """Load a YAML device config.  ``None`` uses $RAQIP_DEVICE_CONFIG or the default."""
    if path is None:
        path = os.environ.get(CONFIG_ENV_VAR) or default_config_path()
    text = Path(path).read_text()
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" (line {mark.line + 1}, column {mark.column + 1})" if mark else ""
        raise ConfigError(f"{path}: YAML parse error{where}: {getattr(exc, 'problem', exc)}") from exc
    return device_from_dict(data, strict=strict)


def save_device(model: DeviceModel, path) -> None:
    Path(path).write_text(yaml.safe_dump(device_to_dict(model), sort_keys=False))


def default_config_path() -> Path:
    return Path(str(resources.files("raqip") / "data" / "default_device.yaml"))


def toy_config_path() -> Path:
    return Path(str(resources.files("raqip") / "data" / "toy_device.yaml"))
