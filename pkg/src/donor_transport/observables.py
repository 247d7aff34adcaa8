"""Currents, charge-sector and nuclear-spin probabilities."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .liouville import DensityState
from .spin_system import (
    ELECTRON_STATES,
    N_ELECTRON,
    S_02,
    BasisDescriptor,
    ConfigError,
    SystemConfig,
    basis_for,
    nuclear_spin,
)

ELEMENTARY_CHARGE = 1.602176634e-19  # C
# I[pA] = e * rate[MHz] * 1e6 * P * 1e12
PA_PER_MHZ = ELEMENTARY_CHARGE * 1e18


def _electron_projector(states) -> np.ndarray:
    out = np.zeros((N_ELECTRON, N_ELECTRON))
    for s in states:
        out[s, s] = 1
    return out


@dataclass(frozen=True)
class ObservableSet:
    """Projectors over a basis, keyed by name."""

    p_11: np.ndarray
    p_s02: np.ndarray
    p_01: np.ndarray
    electron: dict[str, np.ndarray]
    nuclear: dict[str, np.ndarray]

    @classmethod
    def for_basis(cls, basis: BasisDescriptor) -> "ObservableSet":
        electron = {
            name: basis.embed(_electron_projector([i])) for i, name in enumerate(ELECTRON_STATES)
        }
        nuclear = {}
        for k, label in enumerate(basis.nuclear_states):
            pn = np.zeros((basis.nuclear_count, basis.nuclear_count))
            pn[k, k] = 1
            nuclear[label] = basis.embed(np.eye(N_ELECTRON), pn)
        return cls(
            p_11=basis.embed(_electron_projector(range(4))),
            p_s02=basis.embed(_electron_projector([S_02])),
            p_01=basis.embed(_electron_projector([5, 6])),
            electron=electron,
            nuclear=nuclear,
        )


def current_operator(config: SystemConfig, basis: BasisDescriptor | None = None) -> np.ndarray:
    """Operator whose expectation is the transport current in pA."""
    basis = basis_for(config) if basis is None else basis
    obs = ObservableSet.for_basis(basis)
    if config.direction == "reverse":
        return PA_PER_MHZ * config.gamma_l * obs.p_11
    return PA_PER_MHZ * config.gamma_r * obs.p_s02


def current(state: DensityState, config: SystemConfig, basis: BasisDescriptor | None = None) -> float:
    """Current in pA: ``e*Gamma_L*P(1,1)`` (reverse) or ``e*Gamma_R*P(S02)`` (forward)."""
    return float(np.real(state.expect(current_operator(config, basis))))


def iqd_reference(config: SystemConfig) -> float:
    """Double-quantum-dot current (pA) versus detuning, no spin physics."""
    if config.gamma_r <= 0:
        raise ConfigError("iqd_reference needs gamma_r > 0")
    t2 = (config.tc / 2) ** 2
    rate = config.gamma_l * t2 / (
        (config.gamma_r / 2) ** 2 + t2 * (2 + config.gamma_l / config.gamma_r) + config.delta**2
    )
    return PA_PER_MHZ * rate


def exchange_j(tc: float, delta: float) -> float:
    """Exchange splitting (MHz) between S11-like and T0 at detuning ``delta``."""
    if np.any(np.asarray(tc) < 0):
        raise ConfigError("tc must be >= 0")
    return delta / 2 + np.sqrt((tc / 2) ** 2 + (delta / 2) ** 2)


def funnel_detuning(tc: float, zeeman: float) -> float:
    """Detuning where ``exchange_j(tc, delta) == zeeman``; NaN below ``tc/2``."""
    zeeman = np.asarray(zeeman, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = (zeeman**2 - tc**2 / 4) / zeeman
    return np.where(zeeman >= tc / 2, out, np.nan)


def nuclear_projections(state: DensityState, basis: BasisDescriptor) -> dict[str, float]:
    obs = ObservableSet.for_basis(basis)
    return {label: float(np.real(state.expect(p))) for label, p in obs.nuclear.items()}


def larmor_difference(state: DensityState, config: SystemConfig) -> float:
    """Hyperfine Larmor asymmetry ``A_L<Iz_L> - A_R<Iz_R>`` in MHz."""
    if not config.is_single_donor_pair:
        raise ConfigError("larmor_difference is defined for one donor per dot")
    basis = basis_for(config)
    iz_l = basis.embed(np.eye(N_ELECTRON), nuclear_spin(basis, 0, 2))
    iz_r = basis.embed(np.eye(N_ELECTRON), nuclear_spin(basis, 1, 2))
    return float(
        np.real(config.a_left[0] * state.expect(iz_l) - config.a_right[0] * state.expect(iz_r))
    )
