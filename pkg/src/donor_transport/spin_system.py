"""Basis, Hamiltonian and ESR drive for two tunnel-coupled donors.

All energies are linear frequencies in MHz, fields in tesla.  The electron
subspace is ordered ``T+, T0, S11, T-, S02, up01, down01`` and the nuclear
subspace enumerates every spin-1/2 configuration of the left nuclei followed
by the right nuclei (``u`` for up, ``d`` for down).  A global index is
``electron_index * nuclear_count + nuclear_index``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

GAMMA_E = 28024.0  # MHz/T
GAMMA_N = 17.235  # MHz/T

ELECTRON_STATES = ("T+", "T0", "S11", "T-", "S02", "up01", "down01")
CHARGE_SECTOR = {
    "T+": (1, 1),
    "T0": (1, 1),
    "S11": (1, 1),
    "T-": (1, 1),
    "S02": (0, 2),
    "up01": (0, 1),
    "down01": (0, 1),
}
N_ELECTRON = len(ELECTRON_STATES)
T_PLUS, T_ZERO, S_11, T_MINUS, S_02, UP_01, DOWN_01 = range(N_ELECTRON)
PAIR_STATES = slice(0, 4)
SINGLE_STATES = slice(5, 7)

DIRECTIONS = ("forward", "reverse")
MAX_DONORS_PER_DOT = 2

# spin-1/2 operators, basis (up, down)
SX = np.array([[0, 0.5], [0.5, 0]], dtype=complex)
SY = np.array([[0, -0.5j], [0.5j, 0]], dtype=complex)
SZ = np.array([[0.5, 0], [0, -0.5]], dtype=complex)
SPIN_HALF = (SX, SY, SZ)

# rows: T+, T0, S, T- expressed in the product basis uu, ud, du, dd (left first)
_R2 = 1 / np.sqrt(2)
PRODUCT_TO_ST = np.array(
    [
        [1, 0, 0, 0],
        [0, _R2, _R2, 0],
        [0, _R2, -_R2, 0],
        [0, 0, 0, 1],
    ],
    dtype=complex,
)


class ConfigError(ValueError):
    """Raised for physically invalid or inconsistent parameters."""


@dataclass(frozen=True)
class SystemConfig:
    """Physical parameters of a donor transport system.

    Units: ``b0``, ``b_ac_esr`` in T; ``omega_drive``, ``tc``, ``delta``,
    hyperfine constants and tunnel rates in MHz; gyromagnetic ratios in
    MHz/T.
    """

    b0: float = 0.0
    b_ac_esr: float = 0.0
    omega_drive: float = 0.0
    tc: float = 0.0
    delta: float = 0.0
    a_left: tuple[float, ...] = (0.0,)
    a_right: tuple[float, ...] = (0.0,)
    gamma_l: float = 100.0
    gamma_r: float = 100.0
    gamma_e: float = GAMMA_E
    gamma_n: float = GAMMA_N
    direction: str = "forward"

    def __post_init__(self):
        object.__setattr__(self, "a_left", tuple(float(a) for a in np.atleast_1d(self.a_left)))
        object.__setattr__(self, "a_right", tuple(float(a) for a in np.atleast_1d(self.a_right)))
        if self.direction not in DIRECTIONS:
            raise ConfigError(f"direction must be one of {DIRECTIONS}, got {self.direction!r}")
        for name in ("b0", "b_ac_esr", "tc", "gamma_l", "gamma_r"):
            value = getattr(self, name)
            if not np.isfinite(value) or value < 0:
                raise ConfigError(f"{name} must be finite and >= 0, got {value}")
        for name in ("omega_drive", "delta", "gamma_e", "gamma_n"):
            if not np.isfinite(getattr(self, name)):
                raise ConfigError(f"{name} must be finite")
        for name in ("a_left", "a_right"):
            values = getattr(self, name)
            if not 1 <= len(values) <= MAX_DONORS_PER_DOT:
                raise ConfigError(f"{name} must list 1 or 2 hyperfine constants, got {len(values)}")
            if any(not np.isfinite(a) or a < 0 for a in values):
                raise ConfigError(f"{name} hyperfine constants must be finite and >= 0")

    @property
    def n_left(self) -> int:
        return len(self.a_left)

    @property
    def n_right(self) -> int:
        return len(self.a_right)

    @property
    def is_single_donor_pair(self) -> bool:
        return self.n_left == 1 and self.n_right == 1

    def replace(self, **changes) -> "SystemConfig":
        from dataclasses import replace

        return replace(self, **changes)


@dataclass(frozen=True)
class BasisDescriptor:
    n_left: int
    n_right: int
    electron_states: tuple[str, ...] = ELECTRON_STATES
    nuclear_states: tuple[str, ...] = field(default=())

    @property
    def n_nuclei(self) -> int:
        return self.n_left + self.n_right

    @property
    def nuclear_count(self) -> int:
        return 2**self.n_nuclei

    @property
    def dim(self) -> int:
        return N_ELECTRON * self.nuclear_count

    def charge_sector(self, electron_state: str) -> tuple[int, int]:
        return CHARGE_SECTOR[electron_state]

    def index(self, electron_state: str | int, nuclear_state: str | int) -> int:
        e = electron_state if isinstance(electron_state, int) else self.electron_states.index(electron_state)
        n = nuclear_state if isinstance(nuclear_state, int) else self.nuclear_states.index(nuclear_state)
        return e * self.nuclear_count + n

    def embed(self, electron_op: np.ndarray, nuclear_op: np.ndarray | None = None) -> np.ndarray:
        """Tensor a 7x7 electron operator with a nuclear operator (identity by default)."""
        if nuclear_op is None:
            nuclear_op = np.eye(self.nuclear_count)
        return np.kron(electron_op, nuclear_op)


def build_basis(n_left: int, n_right: int) -> BasisDescriptor:
    for name, count in (("n_left", n_left), ("n_right", n_right)):
        if int(count) != count or not 1 <= count <= MAX_DONORS_PER_DOT:
            raise ConfigError(f"{name} must be 1 or 2, got {count}")
    n_left, n_right = int(n_left), int(n_right)
    nuclear = tuple("".join(c) for c in itertools.product("ud", repeat=n_left + n_right))
    return BasisDescriptor(n_left, n_right, ELECTRON_STATES, nuclear)


def basis_for(config: SystemConfig) -> BasisDescriptor:
    return build_basis(config.n_left, config.n_right)


def _check_consistent(config: SystemConfig, basis: BasisDescriptor):
    if (config.n_left, config.n_right) != (basis.n_left, basis.n_right):
        raise ConfigError(
            f"config has {config.n_left}+{config.n_right} donors but basis has "
            f"{basis.n_left}+{basis.n_right}"
        )


# --- spin operators ------------------------------------------------------


def nuclear_spin(basis: BasisDescriptor, k: int, axis: int) -> np.ndarray:
    """Spin-1/2 operator of nucleus ``k`` (left nuclei first) on the nuclear space."""
    ops = [np.eye(2)] * basis.n_nuclei
    ops[k] = SPIN_HALF[axis]
    out = np.array([[1.0 + 0j]])
    for op in ops:
        out = np.kron(out, op)
    return out


def _pair_operator(op_left: np.ndarray, op_right: np.ndarray) -> np.ndarray:
    """Product-basis two-electron operator rotated into the 7-state electron space."""
    product = np.kron(op_left, op_right)
    out = np.zeros((N_ELECTRON, N_ELECTRON), dtype=complex)
    out[PAIR_STATES, PAIR_STATES] = PRODUCT_TO_ST @ product @ PRODUCT_TO_ST.conj().T
    return out


def electron_spin_left(axis: int) -> np.ndarray:
    """Left-electron spin on the (1,1) block."""
    return _pair_operator(SPIN_HALF[axis], np.eye(2))


def electron_spin_right(axis: int) -> np.ndarray:
    """Right-electron spin on the (1,1) block."""
    return _pair_operator(np.eye(2), SPIN_HALF[axis])


def electron_spin_single(axis: int) -> np.ndarray:
    """Spin of the lone (0,1) electron."""
    out = np.zeros((N_ELECTRON, N_ELECTRON), dtype=complex)
    out[SINGLE_STATES, SINGLE_STATES] = SPIN_HALF[axis]
    return out


def electron_sz_total() -> np.ndarray:
    """Total electron z-spin: +1 on T+, -1 on T-, +-1/2 on the (0,1) states."""
    return electron_spin_left(2) + electron_spin_right(2) + electron_spin_single(2)


def _projector(i: int) -> np.ndarray:
    out = np.zeros((N_ELECTRON, N_ELECTRON), dtype=complex)
    out[i, i] = 1
    return out


# --- Hamiltonian terms ---------------------------------------------------


def electron_zeeman(config: SystemConfig, basis: BasisDescriptor) -> np.ndarray:
    e = config.gamma_e * config.b0 * (_projector(T_PLUS) - _projector(T_MINUS))
    e += 0.5 * config.gamma_e * config.b0 * (_projector(UP_01) - _projector(DOWN_01))
    return basis.embed(e)


def nuclear_zeeman(config: SystemConfig, basis: BasisDescriptor) -> np.ndarray:
    iz = sum(nuclear_spin(basis, k, 2) for k in range(basis.n_nuclei))
    return basis.embed(np.eye(N_ELECTRON), -config.gamma_n * config.b0 * iz)


def tunnel_coupling(config: SystemConfig, basis: BasisDescriptor) -> np.ndarray:
    e = np.zeros((N_ELECTRON, N_ELECTRON), dtype=complex)
    e[S_11, S_02] = e[S_02, S_11] = config.tc / 2
    return basis.embed(e)


def detuning(config: SystemConfig, basis: BasisDescriptor) -> np.ndarray:
    return basis.embed(-config.delta * _projector(S_02))


def hyperfine(config: SystemConfig, basis: BasisDescriptor) -> np.ndarray:
    """Isotropic contact hyperfine with flip-flop terms, zero on S02.

    Left nuclei couple to the left (1,1) electron; right nuclei couple to the
    right (1,1) electron and to the lone (0,1) electron.
    """
    h = np.zeros((basis.dim, basis.dim), dtype=complex)
    left = range(basis.n_left)
    right = range(basis.n_left, basis.n_nuclei)
    for axis in range(3):
        s_l = electron_spin_left(axis)
        s_r = electron_spin_right(axis) + electron_spin_single(axis)
        for a, k in zip(config.a_left, left):
            h += a * basis.embed(s_l, nuclear_spin(basis, k, axis))
        for a, k in zip(config.a_right, right):
            h += a * basis.embed(s_r, nuclear_spin(basis, k, axis))
    return h


def build_hamiltonian(config: SystemConfig, basis: BasisDescriptor | None = None) -> np.ndarray:
    """Static Hamiltonian (MHz) in the singlet-triplet basis with quantized nuclei."""
    basis = basis_for(config) if basis is None else basis
    _check_consistent(config, basis)
    return (
        electron_zeeman(config, basis)
        + nuclear_zeeman(config, basis)
        + tunnel_coupling(config, basis)
        + detuning(config, basis)
        + hyperfine(config, basis)
    )


def build_esr_drive(config: SystemConfig, basis: BasisDescriptor | None = None) -> np.ndarray:
    """Rotating-frame drive ``gamma_e * B1 * (S_Lx + S_Rx + S_1x)`` with ``B1 = B_ac / 2``."""
    basis = basis_for(config) if basis is None else basis
    _check_consistent(config, basis)
    b1 = config.b_ac_esr / 2
    sx = electron_spin_left(0) + electron_spin_right(0) + electron_spin_single(0)
    return basis.embed(config.gamma_e * b1 * sx)


def frame_generator(basis: BasisDescriptor, include_nuclei: bool = True) -> np.ndarray:
    """z-operator whose rotation defines the drive frame.

    With ``include_nuclei`` the frame rotates electrons and nuclei together,
    which commutes with the isotropic hyperfine coupling.
    """
    sz = basis.embed(electron_sz_total())
    if include_nuclei:
        iz = sum(nuclear_spin(basis, k, 2) for k in range(basis.n_nuclei))
        sz = sz + basis.embed(np.eye(N_ELECTRON), iz)
    return sz


def apply_rwa(
    h: np.ndarray,
    h1: np.ndarray,
    omega_drive: float,
    basis: BasisDescriptor,
    include_nuclei: bool = True,
) -> np.ndarray:
    """Rotating-frame Hamiltonian ``H + H1 - omega * Sz``."""
    h = np.asarray(h)
    h1 = np.asarray(h1)
    if h.shape != (basis.dim, basis.dim) or h1.shape != h.shape:
        raise ConfigError(f"operators must be {basis.dim}x{basis.dim}")
    return h + h1 - omega_drive * frame_generator(basis, include_nuclei)


def resonance_frequency(config: SystemConfig) -> float:
    """Drive frequency (MHz) resonant with the (1,1) triplet manifold for single donors."""
    if not config.is_single_donor_pair:
        raise ConfigError("resonance formula only holds for one donor per dot")
    a_l, a_r = config.a_left[0], config.a_right[0]
    tc = config.tc
    return (
        (config.gamma_e - config.gamma_n) * config.b0
        + tc / 4
        + (a_l - a_r) / 2
        + 0.5 * np.sqrt((a_l + a_r) ** 2 / 4 + tc**2 / 4)
    )


def is_hermitian(h: np.ndarray, rtol: float = 1e-12) -> bool:
    h = np.asarray(h)
    if h.ndim != 2 or h.shape[0] != h.shape[1]:
        return False
    scale = max(np.abs(h).max(initial=0.0), 1.0)
    return np.abs(h - h.conj().T).max(initial=0.0) <= rtol * scale


def eigenspectrum(h: np.ndarray, vectors: bool = False):
    """Ascending eigenvalues of a Hermitian operator (and eigenvectors as columns)."""
    if not is_hermitian(h):
        raise ValueError("eigenspectrum requires a Hermitian operator")
    if vectors:
        return np.linalg.eigh(h)
    return np.linalg.eigvalsh(h)


def sector_indices(basis: BasisDescriptor, electron_states: Sequence[int]) -> np.ndarray:
    n = basis.nuclear_count
    return np.concatenate([np.arange(e * n, (e + 1) * n) for e in electron_states])


def esr_lines(config: SystemConfig, basis: BasisDescriptor | None = None) -> np.ndarray:
    """PSB-lifting ESR lines of the (1,1)+(0,2) block as rows ``(frequency, strength)``.

    A line connects an eigenstate dominated by T+ (or T-) to a lower (higher)
    eigenstate; its strength is the squared (1,1) Sx matrix element weighted
    by the S11 content of the destination, since only singlet admixture opens
    the path to S02.
    """
    basis = basis_for(config) if basis is None else basis
    idx = sector_indices(basis, [T_PLUS, T_ZERO, S_11, T_MINUS, S_02])
    h = build_hamiltonian(config, basis)[np.ix_(idx, idx)]
    energies, vecs = np.linalg.eigh(h)
    sx = basis.embed(electron_spin_left(0) + electron_spin_right(0))[np.ix_(idx, idx)]
    weights = (np.abs(vecs) ** 2).reshape(5, basis.nuclear_count, -1).sum(axis=1)
    strength = np.abs(vecs.conj().T @ sx @ vecs) ** 2
    lines = []
    for i, e_i in enumerate(energies):
        if weights[T_PLUS, i] > 0.5:
            targets = np.flatnonzero(energies < e_i)
        elif weights[T_MINUS, i] > 0.5:
            targets = np.flatnonzero(energies > e_i)
        else:
            continue
        for j in targets:
            s = strength[j, i] * weights[S_11, j]
            if s > 1e-8:
                lines.append((abs(e_i - energies[j]), s))
    return np.array(lines).reshape(-1, 2)


def search_drive_frequency(config: SystemConfig, basis: BasisDescriptor | None = None) -> float:
    """Frequency (MHz) of the strongest PSB-lifting ESR line.

    Lines are broadened by the drive Rabi scale ``gamma_e * B1``; ties go to
    the higher frequency.
    """
    lines = esr_lines(config, basis)
    if not len(lines):
        raise ConfigError("no ESR line with singlet admixture found")
    width = max(config.gamma_e * config.b_ac_esr / 2, 1e-3)
    freq, strength = lines[:, 0], lines[:, 1]
    spectrum = (strength[None, :] / (1 + ((freq[:, None] - freq[None, :]) / width) ** 2)).sum(axis=1)
    spectrum = np.round(spectrum / spectrum.max(), 9)
    return float(freq[spectrum == 1.0].max())
