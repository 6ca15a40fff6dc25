"""Command-line scenarios.  Each writes CSV/JSON files plus ``manifest.json``.

Usage::

    raqip chevron --eps 0.6 --f-min 1.6 --f-max 2.8 --t-max 200 --out runs/chev
    raqip rb --target 6 --lengths 1,2,4,8,16,32,64 --nseq 32 --seed 7 --out runs/rb6
    raqip cz-tomo --control 6 --target 9 --out runs/cz
    raqip cz-tomo --pairs preset --out runs/cz_all
    raqip ghz --modes 6,9,4 --theta-steps 21 --out runs/ghz
    raqip compare-nn --f-gate 0.98,0.99 --out runs/nn

The device config comes from ``--config``, else ``$RAQIP_DEVICE_CONFIG``, else the
packaged default.  Exit status: 0 success, 1 simulation or config failure,
2 bad command line.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .device import CONFIG_ENV_VAR, default_config_path, load_device

PAIRS_PRESET = Path(__file__).with_name("data") / "pairs_preset.txt"


@dataclass
class RunManifest:
    scenario: str
    config: str
    seed: int | None
    out_dir: str
    overrides: dict = field(default_factory=dict)
    version: str = __version__
    device_hash: str = ""

    def write(self, out: Path) -> None:
        _write_json(out / "manifest.json", asdict(self))


def _write_json(path: Path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(x) for x in row) + "\n")


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    if isinstance(x, str):
        return x
    return repr(float(x))


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.replace(" ", "").split(",") if t]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _float_list(text: str) -> list[float]:
    try:
        return [float(t) for t in text.replace(" ", "").split(",") if t]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def read_pairs(path) -> list[tuple[int, int]]:
    """``control target`` per line, ``#`` comments allowed."""
    pairs = []
    for raw in Path(path).read_text().splitlines():
        tok = raw.split("#", 1)[0].split()
        if not tok:
            continue
        if len(tok) != 2:
            raise ValueError(f"{path}: bad pair line {raw!r}")
        pairs.append((int(tok[0]), int(tok[1])))
    return pairs


def _noise(device, which: str):
    from .effective import NoiseModel

    if which == "off" or device.coherence.is_off:
        return None
    return NoiseModel.from_device(device)


# ------------------------------------------------------------ scenarios


def run_chevron(args, device, out: Path) -> dict:
    from .dynamics import EvolveOptions, chevron_scan

    if not args.f_max > args.f_min > 0:
        raise ValueError("need 0 < f-min < f-max")
    freqs = np.linspace(args.f_min, args.f_max, args.steps)
    times = np.linspace(0.0, args.t_max, args.t_steps)
    modes = args.modes or None
    cmap = chevron_scan(device, freqs, times, args.eps, modes=modes, prep=args.prep,
                        options=EvolveOptions(dt=args.dt))
    cmap.to_csv(out / "chevron.csv")
    return {"files": ["chevron.csv"]}


def run_rb(args, device, out: Path) -> dict:
    from .tomo import randomized_benchmarking

    lengths = args.lengths
    res = randomized_benchmarking(args.target, lengths, args.nseq, args.seed, device, _noise(device, args.noise))
    res.to_csv(out / "rb_survival.csv")
    _write_json(out / "rb_fit.json", res.to_json())
    if not res.fit_ok:
        print("warning: RB fit did not converge; raw survivals written", file=sys.stderr)
    return {"files": ["rb_survival.csv", "rb_fit.json"], "fidelity": res.fidelity}


def run_cz_tomo(args, device, out: Path) -> dict:
    from .gates import GateOp, decompose
    from .tomo import dump_json, process_tomography

    if args.pairs:
        src = PAIRS_PRESET if args.pairs == "preset" else Path(args.pairs)
        pairs = read_pairs(src)
    elif args.control is not None and args.target is not None:
        pairs = [(args.control, args.target)]
    else:
        raise ValueError("give --control and --target, or --pairs")
    noise = _noise(device, args.noise)
    rows = []
    for j, k in pairs:
        gate = GateOp("barrier") if args.gate == "identity" else GateOp(args.gate, (j, k))
        pm, F = process_tomography(gate, j, k, device, noise, method=args.readout, seed=args.seed)
        dur = sum(p.duration for p in decompose(gate, device))
        rows.append((j, k, dur, F))
        dump_json({"control": j, "target": k, "gate": args.gate, "fidelity": F, **pm.to_json()},
                  out / f"chi_{j}_{k}.json")
    _write_csv(out / "fidelities.csv", ["control", "target", "duration_ns", "process_fidelity"], rows)
    return {"files": ["fidelities.csv"] + [f"chi_{j}_{k}.json" for j, k, _, _ in rows]}


def run_ghz(args, device, out: Path) -> dict:
    from .gates import GateOp, GateProgram
    from .tomo import PauliString, measure_correlator, prepare

    modes = args.modes
    if len(modes) < 2 or len(set(modes)) != len(modes):
        raise ValueError("--modes needs at least two distinct modes")
    noise = _noise(device, args.noise)
    thetas = np.linspace(0.0, math.pi, args.theta_steps)
    rows = []
    for th in thetas:
        st = prepare([GateOp("ghz", tuple(modes), float(th))], modes, device, noise)
        rows.append((float(th), *st.mode_populations(), st.transmon_populations()[0]))
    _write_csv(out / "ghz_populations.csv",
               ["theta_rad"] + [f"P1_mode{m}" for m in modes] + ["P_g_transmon"], rows)
    prog = GateProgram((GateOp("ghz", tuple(modes), math.pi / 2),))
    st = prepare(prog, modes, device, noise)
    parity = measure_correlator(st, PauliString(tuple(modes), "X" * len(modes)), device, noise, "direct")
    summary = {"modes": modes, "theta": math.pi / 2, "populations": st.mode_populations().tolist(),
               "parity_X": parity}
    if len(modes) == 2:
        from .tomo import state_fidelity, state_tomography, to_json_array

        rho = state_tomography(st, modes, device, noise, method=args.readout, seed=args.seed)
        summary["bell_fidelity"] = state_fidelity(rho, np.array([1, 0, 0, 1]) / math.sqrt(2))
        summary["rho"] = to_json_array(rho)
    _write_json(out / "ghz_summary.json", summary)
    return {"files": ["ghz_populations.csv", "ghz_summary.json"]}


def run_compare_nn(args, device, out: Path) -> dict:
    from .gates import fidelity_curve, nn_gate_count

    js = range(2, args.j_max + 1)
    rows = [(j, nn_gate_count(j), *[fidelity_curve(f, j) for f in args.f_gate]) for j in js]
    _write_csv(out / "compare_nn.csv", ["j", "nn_gate_count"] + [f"F_{f:g}" for f in args.f_gate], rows)
    return {"files": ["compare_nn.csv"]}


SCENARIOS = {"chevron": run_chevron, "rb": run_rb, "cz-tomo": run_cz_tomo, "ghz": run_ghz,
             "compare-nn": run_compare_nn}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="raqip", description="Multimode processor simulation scenarios.")
    p.add_argument("--version", action="version", version=f"raqip {__version__}")
    sub = p.add_subparsers(dest="scenario", required=True)

    def common(sp, seed=True):
        sp.add_argument("--config", help=f"device YAML (default: ${CONFIG_ENV_VAR} or packaged default)")
        sp.add_argument("--out", required=True, help="output directory")
        if seed:
            sp.add_argument("--seed", type=int, default=0)

    c = sub.add_parser("chevron", help="transmon population vs sideband frequency and pulse length")
    common(c, seed=False)
    c.add_argument("--eps", type=float, default=0.6, help="modulation amplitude, GHz peak-to-peak")
    c.add_argument("--f-min", type=float, default=1.6, help="GHz")
    c.add_argument("--f-max", type=float, default=2.8, help="GHz")
    c.add_argument("--t-max", type=float, default=200.0, help="ns")
    c.add_argument("--steps", type=int, default=121, help="frequency points")
    c.add_argument("--t-steps", type=int, default=101, help="duration points")
    c.add_argument("--modes", type=_int_list, default=None, help="restrict to these modes")
    c.add_argument("--prep", choices=("pulse", "ideal"), default="pulse")
    c.add_argument("--dt", type=float, default=0.01, help="integrator step, ns")

    r = sub.add_parser("rb", help="randomized benchmarking of the transmon or a mode")
    common(r)
    r.add_argument("--target", default="transmon", help="'transmon' or a mode index")
    r.add_argument("--lengths", type=_int_list, default=[1, 2, 4, 8, 16, 32, 64, 100])
    r.add_argument("--nseq", type=int, default=32)
    r.add_argument("--noise", choices=("device", "off"), default="device")

    z = sub.add_parser("cz-tomo", help="process tomography of two-mode gates")
    common(z)
    z.add_argument("--control", type=int)
    z.add_argument("--target", type=int)
    z.add_argument("--pairs", help="pair file, or 'preset' for the shipped 32-pair list")
    z.add_argument("--gate", choices=("cz", "cx", "cy", "swap", "identity"), default="cz")
    z.add_argument("--readout", choices=("direct", "ramsey"), default="direct")
    z.add_argument("--noise", choices=("device", "off"), default="device")

    g = sub.add_parser("ghz", help="multimode entangled-state preparation")
    common(g)
    g.add_argument("--modes", type=_int_list, required=True)
    g.add_argument("--theta-steps", type=int, default=21)
    g.add_argument("--readout", choices=("direct", "ramsey"), default="direct")
    g.add_argument("--noise", choices=("device", "off"), default="device")

    n = sub.add_parser("compare-nn", help="nearest-neighbour gate count and fidelity curve")
    common(n, seed=False)
    n.add_argument("--f-gate", type=_float_list, default=[0.98, 0.99])
    n.add_argument("--j-max", type=int, default=9)
    return p


def _check(args, parser) -> None:
    if getattr(args, "steps", 2) < 2 or getattr(args, "t_steps", 2) < 2:
        parser.error("--steps and --t-steps must be >= 2")
    if getattr(args, "nseq", 1) < 1:
        parser.error("--nseq must be >= 1")
    if getattr(args, "theta_steps", 2) < 2:
        parser.error("--theta-steps must be >= 2")
    if args.scenario == "compare-nn":
        if args.j_max < 2:
            parser.error("--j-max must be >= 2")
        if not all(0 <= f <= 1 for f in args.f_gate):
            parser.error("--f-gate values must lie in [0, 1]")
    if args.scenario == "rb":
        lens = args.lengths
        if not lens or any(m < 1 for m in lens) or any(b <= a for a, b in zip(lens, lens[1:])):
            parser.error("--lengths must be positive and strictly ascending")
        if args.target not in ("transmon", "T", "t"):
            try:
                int(args.target)
            except ValueError:
                parser.error("--target must be 'transmon' or a mode index")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with status 2 on bad flags
    _check(args, parser)
    from .gates import CrosstalkWarning

    warnings.simplefilter("ignore", CrosstalkWarning)
    try:
        config = args.config or os.environ.get(CONFIG_ENV_VAR) or str(default_config_path())
        device = load_device(config)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        skip = {"config", "out", "seed", "scenario"}
        overrides = {k: v for k, v in sorted(vars(args).items()) if k not in skip}
        manifest = RunManifest(args.scenario, str(config), getattr(args, "seed", None), str(out),
                               overrides, device_hash=device.digest())
        info = SCENARIOS[args.scenario](args, device, out)
        manifest.write(out)
    except Exception as exc:  # noqa: BLE001 - reported to the user as exit status 1
        print(f"raqip {args.scenario}: error: {exc}", file=sys.stderr)
        return 1
    print(f"raqip {args.scenario}: wrote {', '.join(info['files'])} and manifest.json to {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
