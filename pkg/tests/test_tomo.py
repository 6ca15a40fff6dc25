import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from raqip.device import CoherenceParams
from raqip.effective import EffectiveState, NoiseModel, coherence_limit
from raqip.gates import GateOp, GateProgram, ideal_unitary, parse_program
from raqip.tomo import (
    PauliString,
    ProcessMatrix,
    chi_from_superop,
    chi_from_unitary,
    clifford_average_fidelity,
    clifford_group,
    measure_correlator,
    prepare,
    process_tomography,
    project_cptp,
    project_density,
    randomized_benchmarking,
    state_fidelity,
    state_tomography,
)

PHI_PLUS = np.array([1, 0, 0, 1], complex) / math.sqrt(2)


def _bell(j=6, k=9):
    return GateProgram((GateOp("ghz", (j, k), math.pi / 2),))


def _random_state(modes, seed):
    rng = np.random.default_rng(seed)
    s = EffectiveState(modes)
    s.data[...] = 0
    v = rng.normal(size=(2,) * len(modes)) + 1j * rng.normal(size=(2,) * len(modes))
    s.data[0] = v / np.linalg.norm(v)
    return s


# ------------------------------------------------------------ correlators


@pytest.mark.parametrize("ops,expected", [("ZZ", 1.0), ("XX", 1.0), ("YY", -1.0), ("ZI", 0.0), ("XY", 0.0)])
@pytest.mark.parametrize("method", ["direct", "ramsey"])
def test_bell_correlators(default_device, ops, expected, method):
    val = measure_correlator(_bell(), PauliString((6, 9), ops), default_device, method=method)
    assert val == pytest.approx(expected, abs=1e-9)


def test_ghz_parity_correlators(default_device):
    ghz = GateProgram((GateOp("ghz", (2, 5, 8), math.pi / 2),))
    assert measure_correlator(ghz, PauliString((2, 5, 8), "XXX"), default_device) == pytest.approx(1.0)
    for ops in ("XXY", "XYX", "YXX", "YYY"):
        val = measure_correlator(ghz, PauliString((2, 5, 8), ops), default_device)
        assert val == pytest.approx(0.0, abs=1e-9)
    # direct density-matrix oracle
    rho = prepare(ghz, (2, 5, 8), default_device).modes_state()
    for ops in ("XXX", "XYY", "ZZI"):
        P = PauliString((2, 5, 8), ops)
        assert measure_correlator(ghz, P, default_device) == pytest.approx(np.real(np.trace(rho @ P.matrix())))


@pytest.mark.parametrize("seed", range(3))
def test_ramsey_path_equals_direct_path(default_device, seed):
    modes = (1, 4, 7)
    state = _random_state(modes, seed)
    for ops in itertools.product("IXYZ", repeat=3):
        P = PauliString(modes, "".join(ops))
        a = measure_correlator(state, P, default_device, method="ramsey")
        b = measure_correlator(state, P, default_device, method="direct")
        assert a == pytest.approx(b, abs=1e-6)


def test_correlator_sign_and_identity(default_device):
    assert measure_correlator(_bell(), PauliString((6, 9), "II"), default_device) == 1.0
    assert measure_correlator(_bell(), PauliString((6, 9), "ZZ", -1), default_device) == pytest.approx(-1.0)
    assert str(PauliString((6, 9), "xz", -1)) == "-X6Z9"


def test_correlator_shot_noise_is_seeded(default_device):
    P = PauliString((6, 9), "XX")
    a = measure_correlator(_bell(), P, default_device, shots=200, seed=5)
    b = measure_correlator(_bell(), P, default_device, shots=200, seed=5)
    assert a == b
    assert abs(a - 1.0) <= 1.0


@pytest.mark.parametrize("kwargs", [dict(modes=(1, 2), ops="X"), dict(modes=(1, 1), ops="XX"),
                                    dict(modes=(1,), ops="Q"), dict(modes=(1,), ops="X", sign=2)])
def test_pauli_string_validation(kwargs):
    with pytest.raises(ValueError):
        PauliString(**kwargs)


def test_correlator_errors(default_device):
    with pytest.raises(ValueError):
        measure_correlator(EffectiveState((6,)), PauliString((9,), "Z"), default_device)
    with pytest.raises(ValueError):
        measure_correlator(_bell(), PauliString((6, 9), "ZZ"), default_device, method="magic")


# ------------------------------------------------------------ state tomography


def test_vacuum_tomography(default_device):
    rho = state_tomography(GateProgram((GateOp("barrier"),)), (6, 9), default_device)
    expected = np.zeros((4, 4))
    expected[0, 0] = 1
    assert np.allclose(rho, expected, atol=1e-6)


@pytest.mark.parametrize("method", ["direct", "ramsey"])
def test_ideal_bell_tomography(default_device, method):
    rho = state_tomography(_bell(), (6, 9), default_device, method=method)
    assert state_fidelity(rho, PHI_PLUS) >= 0.999


@pytest.mark.parametrize("seed", range(4))
def test_linear_inversion_round_trip(default_device, seed):
    modes = (2, 3)
    state = _random_state(modes, seed)
    rho = state_tomography(state, modes, default_device, project=False)
    assert np.allclose(rho, state.modes_state(), atol=1e-8)


def test_tomography_mode_limit(default_device):
    with pytest.raises(ValueError):
        state_tomography(EffectiveState((1, 2, 3, 4, 5)), (1, 2, 3, 4, 5), default_device)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_project_density_is_physical(seed):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    rho = project_density(A + A.conj().T)
    assert np.trace(rho) == pytest.approx(1.0)
    assert np.allclose(rho, rho.conj().T)
    assert np.linalg.eigvalsh(rho).min() > -1e-12


def test_project_density_keeps_valid_state():
    rho = np.outer(PHI_PLUS, PHI_PLUS.conj())
    assert np.allclose(project_density(rho), rho)


# ------------------------------------------------------------ process tomography


@pytest.mark.parametrize("kind", ["cz", "cx", "cy", "swap"])
def test_ideal_process_fidelity(default_device, kind):
    pm, F = process_tomography(GateOp(kind, (6, 9)), 6, 9, default_device)
    assert F == pytest.approx(1.0, abs=1e-6)
    assert np.allclose(pm.trace_condition(), np.eye(4), atol=1e-6)


def test_identity_process_matrix(default_device):
    pm, F = process_tomography(GateOp("barrier"), 6, 9, default_device, project=False)
    assert pm.labels[0] == "II"
    assert pm.chi[0, 0] == pytest.approx(1.0, abs=1e-9)
    rest = pm.chi.copy()
    rest[0, 0] = 0
    assert np.abs(rest).max() < 1e-9
    assert F == pytest.approx(1.0, abs=1e-9)


def test_process_matrix_of_unitary_matches_superop():
    U = ideal_unitary(GateOp("cx", (1, 2)), (1, 2))
    a = chi_from_unitary(U)
    b = chi_from_superop(np.kron(U, U.conj()))
    assert np.allclose(a.chi, b.chi, atol=1e-12)
    assert np.trace(a.chi) == pytest.approx(1.0)
    assert a.fidelity(b) == pytest.approx(1.0)


def test_cptp_projection(default_device):
    noise = NoiseModel.from_device(default_device)
    raw, _ = process_tomography(GateOp("cz", (6, 9)), 6, 9, default_device, noise, shots=500, seed=3,
                                project=False)
    assert np.linalg.eigvalsh(raw.chi).min() < 0  # shot noise makes the raw estimate unphysical
    pm = project_cptp(raw)
    assert np.linalg.eigvalsh(pm.chi).min() > -1e-8
    assert np.abs(pm.trace_condition() - np.eye(4)).max() <= 1e-6
    assert np.trace(pm.chi).real == pytest.approx(1.0, abs=1e-6)


def test_process_tomography_rejects_same_mode(default_device):
    with pytest.raises(ValueError):
        process_tomography(GateOp("cz", (6, 9)), 6, 6, default_device)


def test_process_matrix_json(default_device):
    pm, _ = process_tomography(GateOp("cz", (6, 9)), 6, 9, default_device)
    data = json.loads(json.dumps(pm.to_json()))
    assert data["basis"][:3] == ["II", "IX", "IY"]
    chi = np.array(data["chi"])
    assert chi.shape == (16, 16, 2)
    assert np.allclose(chi[..., 0] + 1j * chi[..., 1], pm.chi)
    assert isinstance(pm, ProcessMatrix) and pm.n_qubits == 2


# ------------------------------------------------------------ Clifford group and RB


def test_clifford_group_closure_and_inverses():
    G = clifford_group()
    assert len(G) == 24
    assert sorted(set(G.table.reshape(-1).tolist())) == list(range(24))
    for a in range(24):
        assert sorted(G.table[a].tolist()) == list(range(24))  # Latin square: closed and invertible
        assert G.table[a, G.inverse[a]] == 0 and G.table[G.inverse[a], a] == 0
        for b in range(24):
            U = G.unitaries[a] @ G.unitaries[b]
            V = G.unitaries[G.table[a, b]]
            assert abs(abs(np.trace(V.conj().T @ U)) - 2) < 1e-9
    mean_len = np.mean([len(w) for w in G.words])
    assert mean_len == pytest.approx(1.833, abs=1e-3)


def test_clifford_compose_order():
    G = clifford_group()
    a, b = 5, 17
    assert G.compose([a, b]) == G.table[b, a]


@pytest.mark.parametrize("target", ["transmon", 6])
def test_noiseless_rb(default_device, target):
    res = randomized_benchmarking(target, [1, 4, 16, 64], n_seq=4, seed=1, device=default_device)
    assert np.allclose(res.survival, 1.0, atol=1e-12)
    assert res.p == 1.0 and res.fidelity == 1.0


def test_rb_is_deterministic(default_device):
    noise = NoiseModel.from_device(default_device)
    a = randomized_benchmarking(6, [1, 8, 32], n_seq=5, seed=42, device=default_device, noise=noise)
    b = randomized_benchmarking(6, [1, 8, 32], n_seq=5, seed=42, device=default_device, noise=noise)
    assert np.array_equal(a.raw, b.raw)
    c = randomized_benchmarking(6, [1, 8, 32], n_seq=5, seed=43, device=default_device, noise=noise)
    assert not np.array_equal(a.raw, c.raw)
    # a sequence's survivals do not depend on how many sequences are drawn
    d = randomized_benchmarking(6, [1, 8, 32], n_seq=3, seed=42, device=default_device, noise=noise)
    assert np.array_equal(a.raw[:3], d.raw)


@pytest.fixture(scope="module")
def noisy_toy(toy_device):
    inf = math.inf
    tau = 100.0 / np.mean([len(w) for w in clifford_group().words])  # 100 ns per Clifford on average
    dev = toy_device.with_control(charge_pulse_ns=tau)
    return dev.with_coherence(CoherenceParams(1000.0, 1000.0, (inf, inf), (inf, inf)))


def test_rb_consistent_with_direct_average_fidelity(noisy_toy):
    noise = NoiseModel.from_device(noisy_toy)
    res = randomized_benchmarking("transmon", [1, 2, 4, 8, 16, 32, 64, 128], n_seq=32, seed=1,
                                  device=noisy_toy, noise=noise)
    direct = clifford_average_fidelity("transmon", noisy_toy, noise)
    assert res.fit_ok
    assert (1 - res.fidelity) == pytest.approx(1 - direct, rel=0.2)
    # coherence-limited estimate for a 100 ns Clifford on one subsystem
    assert res.fidelity == pytest.approx(coherence_limit(100.0, [(1000.0, 1000.0)]), abs=0.01)


def test_rb_outputs(tmp_path, default_device):
    noise = NoiseModel.from_device(default_device)
    res = randomized_benchmarking("transmon", [1, 10, 50], n_seq=3, seed=0, device=default_device, noise=noise)
    path = tmp_path / "rb.csv"
    res.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "length,survival_mean,survival_std"
    assert len(lines) == 4
    data = json.loads(json.dumps(res.to_json()))
    assert data["lengths"] == [1, 10, 50] and data["n_seq"] == 3


@pytest.mark.parametrize("lengths,n_seq", [([], 4), ([4, 2], 4), ([0, 1], 4), ([1, 2], 0)])
def test_rb_argument_validation(default_device, lengths, n_seq):
    with pytest.raises(ValueError):
        randomized_benchmarking("transmon", lengths, n_seq=n_seq, device=default_device)


def test_prepare_runs_program(default_device):
    state = prepare(parse_program("single 6 3.141592653589793 0\n"), (6, 9), default_device)
    assert np.allclose(state.mode_populations(), [1.0, 0.0])
