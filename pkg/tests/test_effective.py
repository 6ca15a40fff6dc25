import math
from functools import reduce

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import solve_ivp
from scipy.optimize import minimize_scalar
from scipy.special import j1 as scipy_j1

from raqip.device import ArrayParams, DeviceModel, TransmonParams
from raqip.effective import (
    J1_MAX,
    J1_MAX_X,
    EffectiveState,
    NoiseModel,
    Primitive,
    SidebandSpec,
    apply_gate_effective,
    apply_primitives,
    bessel_j1,
    coherence_limit,
    g_eff,
    iswap_unitary,
    primitive_superop,
    rabi_transfer,
)
from raqip.gates import GateOp, ideal_unitary

X = np.array([[0, 1], [1, 0]], complex)


def _single_mode_device(g):
    array = ArrayParams(n_resonators=1, nu_r=6.5, g_r=0.0, g_q=g)
    return DeviceModel.create(array, TransmonParams(nu_q0=4.3, alpha=-0.2))


# ------------------------------------------------------------ Bessel


def test_bessel_matches_scipy_on_domain():
    x = np.linspace(-20, 20, 4001)
    assert np.max(np.abs(bessel_j1(x) - scipy_j1(x))) < 1e-10


@pytest.mark.parametrize("x", [0.1, 1.0, J1_MAX_X, 5.3, 8.0, 8.01, 13.7, 19.99])
def test_bessel_matches_arbitrary_precision(x):
    assert bessel_j1(x) == pytest.approx(float(mpmath.besselj(1, x)), abs=1e-10)


def test_bessel_small_argument_is_linear():
    assert bessel_j1(0.0) == 0.0
    assert bessel_j1(1e-4) == pytest.approx(0.5e-4, rel=1e-8)


def test_bessel_global_maximum():
    res = minimize_scalar(lambda x: -bessel_j1(x), bracket=(1.0, 2.0, 3.0), tol=1e-10)
    assert res.x == pytest.approx(1.8412, abs=1e-4)
    assert -res.fun == pytest.approx(0.5819, abs=1e-4)
    assert J1_MAX_X == pytest.approx(res.x, abs=1e-6)
    assert J1_MAX == pytest.approx(-res.fun, abs=1e-12)


@pytest.mark.parametrize("x", [20.5, -21.0, float("nan"), float("inf")])
def test_bessel_domain(x):
    with pytest.raises(ValueError):
        bessel_j1(x)


@settings(max_examples=50, deadline=None)
@given(st.floats(-20, 20))
def test_bessel_is_odd(x):
    assert bessel_j1(-x) == pytest.approx(-bessel_j1(x), abs=1e-14)


# ------------------------------------------------------------ rates


def test_g_eff_reference_value():
    dev = _single_mode_device(0.1)
    assert dev.g(1) == pytest.approx(0.1)
    nu = 2.0
    assert g_eff(dev, SidebandSpec(1, "ge", 2 * nu * 1.0, nu)) == pytest.approx(0.04401, abs=1e-5)
    assert g_eff(dev, SidebandSpec(1, "ge", 0.0, nu)) == 0.0


def test_g_eff_monotone_up_to_bessel_max():
    dev = _single_mode_device(0.1)
    nu = 2.0
    eps = np.linspace(0, 2 * nu * J1_MAX_X, 200)
    g = [g_eff(dev, SidebandSpec(1, "ge", e, nu)) for e in eps]
    assert np.all(np.diff(g) > 0)
    assert g[-1] == pytest.approx(0.1 * J1_MAX)


def test_g_eff_small_eps_slope():
    dev = _single_mode_device(0.1)
    nu, eps = 2.0, 1e-5
    slope = g_eff(dev, SidebandSpec(1, "ge", eps, nu)) / eps
    assert slope == pytest.approx(0.1 / (4 * nu), rel=1e-8)


def test_g_eff_ef_factor():
    dev = _single_mode_device(0.1)
    ge = g_eff(dev, SidebandSpec(1, "ge", 1.0, 2.0))
    assert g_eff(dev, SidebandSpec(1, "ef", 1.0, 2.0)) == pytest.approx(math.sqrt(2) * ge)


def test_sideband_spec_validation():
    with pytest.raises(ValueError):
        SidebandSpec(1, "gf", 1.0, 2.0)
    with pytest.raises(ValueError):
        SidebandSpec(1, "ge", -1.0, 2.0)


def test_rabi_transfer_examples():
    g = 0.01
    assert rabi_transfer(g, 0.0, 1 / (4 * g)) == pytest.approx(1.0)
    assert rabi_transfer(g, 0.0, 0.0) == 0.0
    t = np.linspace(0, 200, 2001)
    assert rabi_transfer(g, 0.02, t).max() == pytest.approx(0.5, abs=1e-4)
    assert rabi_transfer(0.0, 0.02, 10.0) == 0.0


def _two_level_transfer(g, delta, t):
    # rotating-frame two-level problem: H = [[delta/2, g], [g, -delta/2]] (GHz)
    H = np.array([[delta / 2, g], [g, -delta / 2]], complex)
    sol = solve_ivp(lambda _, y: -2j * np.pi * H @ y, (0, t), np.array([1, 0], complex),
                    rtol=1e-11, atol=1e-12)
    return abs(sol.y[1, -1]) ** 2


@pytest.mark.parametrize("g,delta,t", [(0.01, 0.0, 13.0), (0.01, 0.02, 37.0), (0.004, -0.003, 90.0)])
def test_rabi_transfer_matches_two_level_integration(g, delta, t):
    assert rabi_transfer(g, delta, t) == pytest.approx(_two_level_transfer(g, delta, t), abs=1e-8)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.001, 0.05), st.floats(0, 0.05), st.floats(0, 500))
def test_rabi_transfer_even_in_detuning(g, delta, t):
    assert rabi_transfer(g, delta, t) == pytest.approx(rabi_transfer(g, -delta, t), abs=1e-12)


def test_coherence_limit():
    inf = math.inf
    assert coherence_limit(100.0, [(inf, inf), (inf, inf)]) == 1.0
    f = coherence_limit(100.0, [(1000.0, 1000.0)])
    assert f == pytest.approx(1 - (100.0 / 3) * (1e-3 + 0.5e-3))
    assert coherence_limit(100.0, [(1000.0, 1000.0)], prefactor=1 / 6) > f
    assert coherence_limit(200.0, [(1000.0, 1000.0)]) < f
    with pytest.raises(ValueError):
        coherence_limit(-1.0, [])
    with pytest.raises(ValueError):
        coherence_limit(1.0, [(0.0, 1.0)])


# ------------------------------------------------------------ gate-level simulator


@pytest.mark.parametrize("transition", ["ge", "ef"])
@pytest.mark.parametrize("c", [1.0, 1j, np.exp(0.3j)])
def test_iswap_squared_is_phase_on_swapped_block(transition, c):
    U = iswap_unitary(c, transition)
    assert np.allclose(U.conj().T @ U, np.eye(6))
    m = 0 if transition == "ge" else 1
    swapped = [2 * m + 1, 2 * (m + 1)]
    expected = np.eye(6, dtype=complex)
    expected[swapped, swapped] = -1.0
    assert np.allclose(U @ U, expected)


def test_iswap_maps_transmon_excitation_into_mode():
    s = EffectiveState((1,))
    s.data[...] = 0
    s.data[1, 0] = 1.0
    out = apply_primitives(s, [Primitive("iswap", 10.0, 1, "ge", c=1j)])
    assert out.data[0, 1] == pytest.approx(1.0)  # -i * i


def test_cz_diagonal(default_device):
    gate = GateOp("cz", (6, 9))
    for bits in [(0, 0), (0, 1), (1, 0), (1, 1)]:
        s = EffectiveState.from_modes((6, 9), bits)
        out = apply_gate_effective(s, gate, default_device)
        expected = np.zeros((3, 2, 2), complex)
        expected[(0,) + bits] = -1.0 if bits == (1, 1) else 1.0
        assert np.allclose(out.data, expected, atol=1e-12)


@pytest.mark.parametrize("kind", ["cx", "cy", "swap"])
def test_two_mode_gates_match_textbook_unitaries(default_device, kind):
    gate = GateOp(kind, (2, 5))
    modes = (2, 5)
    U = np.zeros((4, 4), complex)
    for i, bits in enumerate([(0, 0), (0, 1), (1, 0), (1, 1)]):
        out = apply_gate_effective(EffectiveState.from_modes(modes, bits), gate, default_device)
        assert out.transmon_populations()[0] == pytest.approx(1.0)
        U[:, i] = out.data[0].reshape(-1)
    assert np.allclose(U, ideal_unitary(gate, modes), atol=1e-12)


def test_gate_on_inactive_mode_rejected(default_device):
    with pytest.raises(ValueError):
        apply_gate_effective(EffectiveState((1, 2)), GateOp("cz", (1, 3)), default_device)


def test_norm_preserved_by_random_program(default_device):
    rng = np.random.default_rng(11)
    modes = (1, 2, 3, 4)
    s = EffectiveState(modes)
    s.data = rng.normal(size=s.dims) + 1j * rng.normal(size=s.dims)
    s.data /= np.linalg.norm(s.data)
    ops = []
    for _ in range(30):
        kind = rng.choice(["cz", "cx", "cy", "swap", "single"])
        j, k = rng.choice(modes, 2, replace=False)
        if kind == "single":
            ops.append(GateOp("single", (int(j),), float(rng.uniform(0, 3)), float(rng.uniform(0, 3))))
        else:
            ops.append(GateOp(str(kind), (int(j), int(k))))
    for op in ops:
        s = apply_gate_effective(s, op, default_device)
    assert s.norm() == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("n", range(2, 8))
def test_ghz_populations_and_parity(default_device, n):
    modes = tuple(range(1, n + 1))
    s = apply_gate_effective(EffectiveState(modes), GateOp("ghz", modes, math.pi / 2), default_device)
    assert s.transmon_populations()[0] == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(s.mode_populations(), 0.5, atol=1e-9)
    rho = s.modes_state()
    parity = np.real(np.trace(rho @ reduce(np.kron, [X] * n)))
    assert abs(parity) == pytest.approx(1.0, abs=1e-9)


def test_primitive_superop_is_trace_preserving():
    inf = math.inf
    S = primitive_superop(Primitive("iswap", 50.0, 1, "ge"), 3, ((2000.0, 900.0), (3000.0, 4000.0)))
    d = 6
    rng = np.random.default_rng(2)
    A = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    rho = A @ A.conj().T
    rho /= np.trace(rho)
    out = (S @ rho.reshape(-1)).reshape(d, d)
    assert np.trace(out) == pytest.approx(1.0, abs=1e-12)
    assert np.min(np.linalg.eigvalsh((out + out.conj().T) / 2)) > -1e-12
    S_ideal = primitive_superop(Primitive("iswap", 50.0, 1, "ge"), 3, ((inf, inf), (inf, inf)))
    U = iswap_unitary(1.0)
    assert np.allclose(S_ideal, np.kron(U, U.conj()), atol=1e-10)


def test_noisy_gate_keeps_unit_trace(default_device):
    noise = NoiseModel.from_device(default_device)
    s = EffectiveState.from_modes((6, 9), (1, 0)).to_density()
    out = apply_gate_effective(s, GateOp("cz", (6, 9)), default_device, noise=noise)
    assert out.norm() == pytest.approx(1.0, abs=1e-12)
    assert out.mode_populations()[0] < 1.0
