"""Liouville-space generators, propagation and steady states.

Density operators are column-stacked: element ``rho[j, k]`` sits at index
``k * n + j``.  Hamiltonians are in MHz and times in microseconds, so the
coherent generator is ``-2j*pi*[H, .]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
import scipy.linalg
import scipy.sparse

from .expm import expm
from .spin_system import (
    DOWN_01,
    N_ELECTRON,
    S_02,
    S_11,
    T_MINUS,
    T_PLUS,
    T_ZERO,
    UP_01,
    BasisDescriptor,
    ConfigError,
    SystemConfig,
    is_hermitian,
)


@dataclass(frozen=True)
class DensityState:
    """Column-stacked density operator."""

    vec: np.ndarray

    def __post_init__(self):
        vec = np.asarray(self.vec, dtype=complex).reshape(-1)
        n = math.isqrt(vec.size)
        if n * n != vec.size:
            raise ValueError(f"state vector length {vec.size} is not a perfect square")
        object.__setattr__(self, "vec", vec)

    @property
    def dim(self) -> int:
        return math.isqrt(self.vec.size)

    @property
    def matrix(self) -> np.ndarray:
        return devectorize(self)

    def trace(self) -> complex:
        return self.vec[:: self.dim + 1].sum()

    def hermiticity_error(self) -> float:
        rho = self.matrix
        return float(np.abs(rho - rho.conj().T).max())

    def min_eigenvalue(self) -> float:
        rho = self.matrix
        return float(np.linalg.eigvalsh((rho + rho.conj().T) / 2)[0])

    def purity(self) -> float:
        rho = self.matrix
        return float(np.real(np.trace(rho @ rho)))

    def expect(self, op: np.ndarray) -> complex:
        """``Tr(op @ rho)``."""
        return np.asarray(op).T.reshape(-1, order="F") @ self.vec


def vectorize(rho: np.ndarray, dim: int | None = None) -> DensityState:
    rho = np.asarray(rho)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise ValueError(f"density operator must be square, got {rho.shape}")
    if dim is not None and rho.shape[0] != dim:
        raise ValueError(f"density operator has dim {rho.shape[0]}, expected {dim}")
    return DensityState(rho.reshape(-1, order="F"))


def devectorize(state: DensityState, dim: int | None = None) -> np.ndarray:
    n = state.dim
    if dim is not None and n != dim:
        raise ValueError(f"state has dim {n}, expected {dim}")
    return state.vec.reshape(n, n, order="F")


def expectation_weights(op: np.ndarray) -> np.ndarray:
    """Row vector ``w`` with ``w @ vec(rho) == Tr(op @ rho)``."""
    return np.asarray(op).T.reshape(-1, order="F")


def liouvillian(h: np.ndarray) -> np.ndarray:
    """Coherent superoperator realizing ``-2*pi*i*[H, rho]``."""
    h = np.asarray(h, dtype=complex)
    if not is_hermitian(h):
        raise ValueError("liouvillian requires a Hermitian Hamiltonian")
    ident = np.eye(h.shape[0])
    return -2j * np.pi * (np.kron(ident, h) - np.kron(h.T, ident))


# --- dissipator -----------------------------------------------------------

# (from, to, fraction of gamma_l or gamma_r)
_REVERSE_JUMPS = (
    (T_PLUS, UP_01, "l", 1.0),
    (T_ZERO, UP_01, "l", 0.5),
    (T_ZERO, DOWN_01, "l", 0.5),
    (S_11, UP_01, "l", 0.5),
    (S_11, DOWN_01, "l", 0.5),
    (T_MINUS, DOWN_01, "l", 1.0),
    (UP_01, S_02, "r", 1.0),
    (DOWN_01, S_02, "r", 1.0),
)
_FORWARD_JUMPS = (
    (UP_01, T_PLUS, "l", 0.5),
    (UP_01, T_ZERO, "l", 0.25),
    (UP_01, S_11, "l", 0.25),
    (DOWN_01, T_MINUS, "l", 0.5),
    (DOWN_01, T_ZERO, "l", 0.25),
    (DOWN_01, S_11, "l", 0.25),
    (S_02, UP_01, "r", 0.5),
    (S_02, DOWN_01, "r", 0.5),
)


def tunnel_jumps(config: SystemConfig) -> list[tuple[int, int, float]]:
    """Electron-state transitions ``(from, to, rate)`` for the transport cycle."""
    if config.direction == "forward":
        table = _FORWARD_JUMPS
    elif config.direction == "reverse":
        table = _REVERSE_JUMPS
    else:
        raise ConfigError(f"unknown direction {config.direction!r}")
    rates = {"l": config.gamma_l, "r": config.gamma_r}
    return [(src, dst, frac * rates[lead]) for src, dst, lead, frac in table]


def dissipator(config: SystemConfig, basis: BasisDescriptor) -> np.ndarray:
    """Incoherent lead-tunneling superoperator.

    Each transition moves the electron state and leaves the nuclear state
    (populations and nuclear coherences) untouched.  A coherence between
    electron states ``j`` and ``k`` decays at half the sum of their total
    escape rates, which keeps the map completely positive.
    """
    jumps = tunnel_jumps(config)
    n_nuc = basis.nuclear_count
    n = basis.dim
    escape = np.zeros(N_ELECTRON)
    for src, _, rate in jumps:
        escape[src] += rate
    escape_full = np.repeat(escape, n_nuc)

    d = np.zeros((n * n, n * n), dtype=complex)
    # loss: -(k_j + k_k)/2 on rho[j, k]
    decay = -0.5 * (escape_full[:, None] + escape_full[None, :])  # [j, k]
    d[np.diag_indices(n * n)] = decay.reshape(-1, order="F")
    # gain: rho[(dst,a),(dst,b)] += rate * rho[(src,a),(src,b)]
    a, b = np.meshgrid(np.arange(n_nuc), np.arange(n_nuc), indexing="ij")
    a, b = a.ravel(), b.ravel()
    for src, dst, rate in jumps:
        col = (src * n_nuc + b) * n + src * n_nuc + a
        row = (dst * n_nuc + b) * n + dst * n_nuc + a
        d[row, col] += rate
    return d


@dataclass(frozen=True)
class Generator:
    """Total Liouville generator with coherent and dissipative parts kept apart."""

    coherent: np.ndarray
    dissipative: np.ndarray
    matrix: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.coherent.shape != self.dissipative.shape:
            raise ValueError("coherent and dissipative parts differ in shape")
        object.__setattr__(self, "matrix", self.coherent + self.dissipative)

    @property
    def dim(self) -> int:
        return math.isqrt(self.matrix.shape[0])

    def trace_drift(self) -> float:
        """Largest column sum over diagonal-index rows (0 for trace preservation)."""
        n = self.dim
        return float(np.abs(self.matrix[:: n + 1, :].sum(axis=0)).max())


def generator(h_rot: np.ndarray, diss: np.ndarray | None = None) -> Generator:
    coh = liouvillian(h_rot)
    if diss is None:
        diss = np.zeros_like(coh)
    if diss.shape != coh.shape:
        raise ValueError(f"dissipator shape {diss.shape} does not match {coh.shape}")
    return Generator(coh, np.asarray(diss, dtype=complex))


def _as_matrix(g) -> np.ndarray:
    return g.matrix if isinstance(g, Generator) else np.asarray(g)


# --- propagation ----------------------------------------------------------


def reachable_indices(g, support: np.ndarray) -> np.ndarray:
    """Liouville indices structurally reachable from ``support`` under ``g``.

    Components outside this set stay exactly zero for all times, so
    propagation can be restricted to it without approximation.
    """
    m = _as_matrix(g)
    graph = scipy.sparse.csr_matrix(m != 0, dtype=np.int8)
    reached = np.zeros(m.shape[0], dtype=bool)
    reached[np.asarray(support)] = True
    frontier = reached.copy()
    while frontier.any():
        hit = graph @ frontier.astype(np.int8) != 0
        frontier = hit & ~reached
        reached |= hit
    return np.flatnonzero(reached)


def propagate(g, rho0: DensityState, t: float) -> DensityState:
    """``exp(G t) rho0`` via scaling-and-squaring Pade."""
    if t < 0:
        raise ValueError("propagation time must be >= 0")
    m = _as_matrix(g)
    if not np.all(np.isfinite(m)):
        raise ValueError("generator has non-finite entries")
    if t == 0:
        return DensityState(rho0.vec.copy())
    idx = reachable_indices(m, np.flatnonzero(rho0.vec))
    out = np.zeros_like(rho0.vec)
    out[idx] = expm(m[np.ix_(idx, idx)] * t) @ rho0.vec[idx]
    return DensityState(out)


@dataclass
class TimeTrace:
    """Observables sampled along a staged evolution."""

    times: np.ndarray
    observables: dict[str, np.ndarray]
    stage_starts: list[float] = field(default_factory=list)
    final_state: DensityState | None = None
    metadata: dict = field(default_factory=dict)

    def window(self, t_start: float, t_stop: float) -> np.ndarray:
        return (self.times >= t_start - 1e-12) & (self.times <= t_stop + 1e-12)

    def mean(self, name: str, t_start: float, t_stop: float) -> float:
        return float(self.observables[name][self.window(t_start, t_stop)].mean())


@dataclass(frozen=True)
class Stage:
    generator: Generator | np.ndarray
    duration: float
    sample_step: float
    record: bool = True


Observable = np.ndarray | Callable[[DensityState], float]


def _stage_steps(duration: float, step: float) -> tuple[int, float]:
    n_full = int(np.floor(duration / step + 1e-9))
    rest = duration - n_full * step
    if rest <= 1e-9 * step:
        rest = 0.0
    return n_full, rest


def evolve_trace(
    stages: Sequence[Stage | tuple],
    rho0: DensityState,
    observables: Mapping[str, Observable],
) -> TimeTrace:
    """Evolve through piecewise-constant stages, sampling observables.

    Each stage caches ``exp(G * sample_step)`` once and reapplies it; a
    shorter final step lands exactly on the stage boundary.  Linear
    observables are passed as operators and evaluated as ``Re Tr(O rho)``.
    """
    stages = [s if isinstance(s, Stage) else Stage(*s) for s in stages]
    if not stages:
        raise ValueError("evolve_trace needs at least one stage")
    for s in stages:
        if s.duration <= 0 or s.sample_step <= 0:
            raise ValueError("stage duration and sample step must be > 0")

    linear = {k: expectation_weights(v) for k, v in observables.items() if not callable(v)}
    other = {k: v for k, v in observables.items() if callable(v)}
    times: list[float] = []
    values: dict[str, list[float]] = {k: [] for k in observables}

    vec = rho0.vec.copy()
    t = 0.0

    def record(idx, local):
        times.append(t)
        for k, w in linear.items():
            values[k].append(float(np.real(w[idx] @ local)))
        if other:
            full = np.zeros_like(vec)
            full[idx] = local
            state = DensityState(full)
            for k, f in other.items():
                values[k].append(float(f(state)))

    starts = []
    for i, stage in enumerate(stages):
        m = _as_matrix(stage.generator)
        if not np.all(np.isfinite(m)):
            raise ValueError(f"stage {i}: generator has non-finite entries")
        idx = reachable_indices(m, np.flatnonzero(vec))
        sub = m[np.ix_(idx, idx)]
        local = vec[idx]
        starts.append(t)
        if i == 0:
            record(idx, local)
        t0 = t
        n_full, rest = _stage_steps(stage.duration, stage.sample_step)
        if n_full:
            prop = expm(sub * stage.sample_step)
            for k in range(1, n_full + 1):
                local = prop @ local
                t = t0 + k * stage.sample_step
                if stage.record or (k == n_full and not rest):
                    record(idx, local)
        if rest:
            local = expm(sub * rest) @ local
            t = t0 + stage.duration
            record(idx, local)
        t = t0 + stage.duration
        vec = np.zeros_like(vec)
        vec[idx] = local

    return TimeTrace(
        times=np.asarray(times),
        observables={k: np.asarray(v) for k, v in values.items()},
        stage_starts=starts,
        final_state=DensityState(vec),
    )


# --- steady state -----------------------------------------------------------


@dataclass(frozen=True)
class SteadyState:
    state: DensityState
    degenerate: bool
    residual: float


def maximally_mixed(dim: int) -> DensityState:
    return vectorize(np.eye(dim) / dim)


def steady_state(g, rcond_min: float = 1e-13, abel_eps: float = 1e-11) -> SteadyState:
    """Stationary state of ``G``, normalized to unit trace.

    Solves ``G rho = 0`` with one diagonal row replaced by the trace
    condition, restricted to the operators reachable from the maximally
    mixed state.  If that system is singular the nullspace is degenerate and
    the Abel average ``eps (eps - G)^-1 rho_mixed`` of the trajectory started
    from the maximally mixed state is returned instead.
    """
    m = _as_matrix(g)
    n2 = m.shape[0]
    n = math.isqrt(n2)
    if not np.all(np.isfinite(m)):
        raise ValueError("generator has non-finite entries")
    mixed = maximally_mixed(n)
    idx = reachable_indices(m, np.flatnonzero(mixed.vec))
    sub = m[np.ix_(idx, idx)]
    diag_local = np.flatnonzero(idx % (n + 1) == 0)
    trace_row = np.zeros(len(idx), dtype=complex)
    trace_row[diag_local] = 1.0

    scale = max(np.linalg.norm(sub, 1), 1e-300)
    degenerate = False
    sol = None
    if scale > 1e-300 and np.any(sub):
        a = (sub / scale).astype(complex)
        # replace the row with the largest diagonal-entry coupling by the trace condition
        r = diag_local[np.argmax(np.abs(a[diag_local]).sum(axis=1))]
        a[r] = trace_row
        rhs = np.zeros(len(idx), dtype=complex)
        rhs[r] = 1.0
        lu, piv = scipy.linalg.lu_factor(a, check_finite=False)
        anorm = np.linalg.norm(a, 1)
        (gecon,) = scipy.linalg.get_lapack_funcs(("gecon",), (lu,))
        rcond, _ = gecon(lu, anorm)
        if rcond > rcond_min:
            sol = scipy.linalg.lu_solve((lu, piv), rhs, check_finite=False)
            if np.linalg.norm(sub @ sol, np.inf) > 1e-8 * scale:
                sol = None
    if sol is None:
        degenerate = True
        eps = abel_eps * max(scale, 1.0)
        rho_mixed = mixed.vec[idx]
        sol = eps * scipy.linalg.solve(eps * np.eye(len(idx)) - sub, rho_mixed, check_finite=False)
        if not np.all(np.isfinite(sol)):
            raise ValueError("no normalizable stationary state found")
    tr = sol[diag_local].sum()
    if abs(tr) < 1e-300:
        raise ValueError("no normalizable stationary state found")
    sol = sol / tr
    # restore Hermiticity lost to round-off
    full = np.zeros(n2, dtype=complex)
    full[idx] = sol
    rho = full.reshape(n, n, order="F")
    rho = (rho + rho.conj().T) / 2
    state = vectorize(rho)
    residual = float(np.linalg.norm(m @ state.vec))
    return SteadyState(state, degenerate, residual)
