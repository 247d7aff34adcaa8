import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from donor_transport.spin_system import (
    DOWN_01,
    GAMMA_E,
    S_02,
    S_11,
    T_MINUS,
    T_PLUS,
    T_ZERO,
    UP_01,
    ConfigError,
    SystemConfig,
    apply_rwa,
    basis_for,
    build_basis,
    build_esr_drive,
    build_hamiltonian,
    eigenspectrum,
    electron_spin_left,
    electron_spin_right,
    electron_sz_total,
    electron_zeeman,
    esr_lines,
    frame_generator,
    hyperfine,
    is_hermitian,
    resonance_frequency,
    search_drive_frequency,
    sector_indices,
)

A = 117.53

configs = st.builds(
    SystemConfig,
    b0=st.floats(0, 2),
    b_ac_esr=st.floats(0, 5e-3),
    omega_drive=st.floats(0, 6e4),
    tc=st.floats(0, 3000),
    delta=st.floats(-1e4, 1e4),
    a_left=st.lists(st.floats(0, 200), min_size=1, max_size=2).map(tuple),
    a_right=st.lists(st.floats(0, 200), min_size=1, max_size=2).map(tuple),
    direction=st.sampled_from(["forward", "reverse"]),
)


def test_basis_dimensions():
    assert build_basis(1, 1).dim == 28
    assert build_basis(1, 2).dim == 56
    basis = build_basis(1, 1)
    assert basis.charge_sector("S02") == (0, 2)
    assert basis.nuclear_states == ("uu", "ud", "du", "dd")
    assert basis.index("S02", "du") == 4 * 4 + 2


@pytest.mark.parametrize("counts", [(0, 1), (1, 3), (2.5, 1)])
def test_basis_rejects_unsupported_counts(counts):
    with pytest.raises(ConfigError):
        build_basis(*counts)


@pytest.mark.parametrize(
    "kwargs",
    [dict(tc=-1), dict(b0=-0.1), dict(a_left=(-1.0,)), dict(a_right=(1.0, 2.0, 3.0)), dict(direction="up"), dict(gamma_l=np.nan)],
)
def test_config_validation(kwargs):
    with pytest.raises(ConfigError):
        SystemConfig(**kwargs)


def test_hamiltonian_basis_mismatch():
    with pytest.raises(ConfigError):
        build_hamiltonian(SystemConfig(), build_basis(1, 2))


def test_zeeman_splitting_of_polarized_triplets():
    cfg = SystemConfig(b0=1.0)
    h = build_hamiltonian(cfg)
    basis = basis_for(cfg)
    diag = np.real(np.diag(h))
    for n in range(4):
        split = diag[basis.index(T_PLUS, n)] - diag[basis.index(T_MINUS, n)]
        assert split == pytest.approx(2 * 28024.0, abs=1e-9)
    assert np.allclose(electron_zeeman(cfg, basis), np.diag(np.diag(electron_zeeman(cfg, basis))))


def test_tunnel_coupling_is_only_off_diagonal_term():
    cfg = SystemConfig(tc=A)
    h = build_hamiltonian(cfg)
    basis = basis_for(cfg)
    off = h - np.diag(np.diag(h))
    rows, cols = np.nonzero(off)
    for r, c in zip(rows, cols):
        assert {r // 4, c // 4} == {S_11, S_02}
        assert r % 4 == c % 4
        assert off[r, c] == pytest.approx(58.765)
    assert len(rows) == 8


def test_zero_parameters_give_zero_hamiltonian():
    cfg = SystemConfig(gamma_e=0, gamma_n=0)
    assert not build_hamiltonian(cfg).any()


def test_esr_drive_prefactor_and_triplet_couplings():
    assert not build_esr_drive(SystemConfig()).any()
    cfg = SystemConfig(b_ac_esr=1e-3)
    h1 = build_esr_drive(cfg)
    basis = basis_for(cfg)
    sx = electron_spin_left(0) + electron_spin_right(0)
    # gamma_e * B1 with B1 = B_ac / 2
    assert GAMMA_E * 0.5e-3 == pytest.approx(14.012)
    assert h1[basis.index(T_ZERO, 0), basis.index(T_PLUS, 0)] == pytest.approx(14.012 * sx[T_ZERO, T_PLUS])
    up = abs(h1[basis.index(T_ZERO, 1), basis.index(T_PLUS, 1)])
    down = abs(h1[basis.index(T_ZERO, 1), basis.index(T_MINUS, 1)])
    assert up == pytest.approx(down) and up > 0
    # (0,1) electron is driven with the same prefactor
    assert abs(h1[basis.index(UP_01, 0), basis.index(DOWN_01, 0)]) == pytest.approx(14.012 / 2)


def test_rwa_zero_frequency_is_identity_map():
    cfg = SystemConfig(b0=1.0, b_ac_esr=1e-3, tc=A, a_left=(A,), a_right=(A,))
    basis = basis_for(cfg)
    h, h1 = build_hamiltonian(cfg, basis), build_esr_drive(cfg, basis)
    assert np.array_equal(apply_rwa(h, h1, 0.0, basis), h + h1)


def test_rwa_cancels_electron_zeeman_in_electron_frame():
    cfg = SystemConfig(b0=1.0)
    basis = basis_for(cfg)
    h = electron_zeeman(cfg, basis)
    rot = apply_rwa(h, np.zeros_like(h), GAMMA_E * cfg.b0, basis, include_nuclei=False)
    for n in range(4):
        assert rot[basis.index(T_PLUS, n), basis.index(T_PLUS, n)] == pytest.approx(0)
        assert rot[basis.index(T_MINUS, n), basis.index(T_MINUS, n)] == pytest.approx(0)
    assert is_hermitian(rot)


def test_rwa_dimension_mismatch():
    basis = build_basis(1, 1)
    with pytest.raises(ConfigError):
        apply_rwa(np.zeros((4, 4)), np.zeros((4, 4)), 1.0, basis)


def test_resonance_frequency_values():
    cfg = SystemConfig(b0=1.0, tc=A, a_left=(A,), a_right=(A,))
    assert resonance_frequency(cfg) == pytest.approx(28101.85, abs=0.01)
    assert resonance_frequency(SystemConfig(gamma_n=0.0, gamma_e=0.0)) == 0
    shift = resonance_frequency(cfg.replace(b0=0.0))
    assert shift == pytest.approx(A / 4 + A * np.sqrt(5) / 4)
    with pytest.raises(ConfigError):
        resonance_frequency(cfg.replace(a_right=(A, A)))


def test_eigenspectrum_examples():
    assert np.array_equal(eigenspectrum(np.diag([3.0, -1.0, 2.0])), [-1.0, 2.0, 3.0])
    tc = 250.0
    e = eigenspectrum(np.array([[0, tc / 2], [tc / 2, 0]]))
    assert e[1] - e[0] == pytest.approx(tc)
    with pytest.raises(ValueError):
        eigenspectrum(np.array([[0, 1.0], [0, 0]]))


def test_s02_t_minus_anticrossing_sits_on_funnel():
    b0, tc = 0.25, 2000.0
    zeeman = GAMMA_E * b0
    target = (zeeman**2 - tc**2 / 4) / zeeman
    deltas = np.arange(target - 300, target + 300, 5.0)
    mixing = []
    for d in deltas:
        cfg = SystemConfig(b0=b0, tc=tc, delta=d, a_left=(A,), a_right=(A,))
        basis = basis_for(cfg)
        idx = sector_indices(basis, range(5))
        _, v = eigenspectrum(build_hamiltonian(cfg, basis)[np.ix_(idx, idx)], vectors=True)
        w = (np.abs(v) ** 2).reshape(5, 4, -1).sum(axis=1)
        mixing.append(np.max(np.minimum(w[S_02] + w[S_11], w[T_MINUS])))
    assert abs(deltas[int(np.argmax(mixing))] - target) < 100


@given(configs)
def test_hamiltonian_and_drive_are_hermitian(cfg):
    h = build_hamiltonian(cfg)
    h1 = build_esr_drive(cfg)
    scale = max(np.abs(h).max(), 1.0)
    assert np.abs(h - h.conj().T).max() < 1e-12 * scale
    assert is_hermitian(h1)
    basis = basis_for(cfg)
    assert is_hermitian(apply_rwa(h, h1, cfg.omega_drive, basis))


@given(configs)
def test_hyperfine_is_traceless_and_vanishes_on_s02(cfg):
    basis = basis_for(cfg)
    h = hyperfine(cfg, basis)
    assert abs(np.trace(h)) < 1e-9
    s02 = sector_indices(basis, [S_02])
    assert not h[s02, :].any() and not h[:, s02].any()


@given(configs)
def test_no_spin_mixing_without_hyperfine(cfg):
    cfg = cfg.replace(a_left=(0.0,) * cfg.n_left, a_right=(0.0,) * cfg.n_right)
    basis = basis_for(cfg)
    h = build_hamiltonian(cfg, basis)
    sz = basis.embed(electron_sz_total())
    assert np.abs(h @ sz - sz @ h).max() < 1e-10


@given(configs)
def test_total_frame_commutes_with_hyperfine(cfg):
    basis = basis_for(cfg)
    h = hyperfine(cfg, basis)
    f = frame_generator(basis)
    assert np.abs(h @ f - f @ h).max() < 1e-9


def test_spectral_line_search_near_resonance_formula():
    cfg = SystemConfig(b0=1.0, b_ac_esr=1e-3, tc=A, a_left=(A,), a_right=(A,))
    lines = esr_lines(cfg)
    assert len(lines) > 0 and np.all(lines[:, 1] > 0)
    assert abs(search_drive_frequency(cfg) - resonance_frequency(cfg)) < 14.012
