"""Protocol recipes: spin funnel, PSB + ESR, nuclear readout, Stark sweep, 1P-2P cluster.

Each runner takes an :class:`ExperimentSpec` and returns a :class:`TimeTrace`
or :class:`SweepGrid`.  Times are in microseconds, frequencies in MHz,
fields in tesla.
"""

from __future__ import annotations

import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Sequence

import numpy as np
import scipy.linalg

from .liouville import (
    DensityState,
    Stage,
    TimeTrace,
    dissipator,
    evolve_trace,
    generator,
    steady_state,
    vectorize,
)
from .observables import (
    ObservableSet,
    current,
    current_operator,
    funnel_detuning,
    iqd_reference,
)
from .spin_system import (
    DOWN_01,
    N_ELECTRON,
    S_02,
    UP_01,
    SX,
    BasisDescriptor,
    ConfigError,
    SystemConfig,
    apply_rwa,
    basis_for,
    build_esr_drive,
    build_hamiltonian,
    resonance_frequency,
    search_drive_frequency,
    sector_indices,
)

BULK_HYPERFINE = 117.53  # MHz, P in Si
EXPERIMENTS = ("spin_funnel", "psb_esr", "readout", "stark_sweep", "cluster")
SWEEP_PARAMETERS = {"b0": "T", "delta": "MHz", "delta_a_lr": "MHz", "tc": "MHz", "omega_drive": "MHz"}


@dataclass(frozen=True)
class Axis:
    """One sweep dimension; ``values`` are in ``unit``."""

    name: str
    values: tuple[float, ...]
    unit: str = ""

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(float(v) for v in np.atleast_1d(self.values)))
        if not self.values:
            raise ConfigError(f"axis {self.name!r} has no points")
        if not np.all(np.isfinite(self.values)):
            raise ConfigError(f"axis {self.name!r} has non-finite values")

    @classmethod
    def linspace(cls, name: str, start: float, stop: float, points: int, unit: str = "") -> "Axis":
        if points < 1:
            raise ConfigError(f"axis {name!r} needs at least one point")
        return cls(name, tuple(np.linspace(start, stop, int(points))), unit)

    def __len__(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class ExperimentSpec:
    """A fully resolved protocol run.

    ``transport_us`` and ``esr_us`` are the undriven and driven stage
    lengths; ``sample_step_us=None`` picks 1 ns for stages up to 1 us and
    10 ns otherwise.  ``initial_nuclear`` is ``"mixed"`` or a configuration
    label such as ``"uu"``.  ``theta`` is the readout NMR angle in radians.
    ``method`` selects the spin-funnel current: ``"quasi_steady"`` averages
    over ``window_us`` from the mixed state, ``"steady_state"`` solves for
    the stationary state.
    """

    experiment: str
    config: SystemConfig
    axes: tuple[Axis, ...] = ()
    transport_us: float = 50.0
    esr_us: float = 50.0
    sample_step_us: float | None = None
    initial_nuclear: str = "mixed"
    theta: float = 0.0
    method: str = "quasi_steady"
    window_us: tuple[float, float] = (0.25, 1.0)

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}; expected one of {EXPERIMENTS}")
        object.__setattr__(self, "axes", tuple(self.axes))
        object.__setattr__(self, "window_us", tuple(float(w) for w in self.window_us))
        for name in ("transport_us", "esr_us"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0")
        if self.sample_step_us is not None and not self.sample_step_us > 0:
            raise ConfigError("sample_step_us must be > 0")
        if self.method not in ("quasi_steady", "steady_state"):
            raise ConfigError(f"unknown method {self.method!r}")
        lo, hi = self.window_us
        if not 0 <= lo < hi:
            raise ConfigError("window_us must satisfy 0 <= start < stop")
        if not np.isfinite(self.theta):
            raise ConfigError("theta must be finite")
        for axis in self.axes:
            if axis.name not in SWEEP_PARAMETERS:
                raise ConfigError(f"cannot sweep {axis.name!r}; sweepable: {sorted(SWEEP_PARAMETERS)}")
            if self.experiment == "spin_funnel" and axis.name == "delta" and min(axis.values) < 0:
                raise ConfigError("spin funnel needs a delta >= 0 grid")
            if axis.name == "delta_a_lr" and not 0 <= min(axis.values) <= max(axis.values) <= BULK_HYPERFINE:
                raise ConfigError(f"delta_a_lr must lie in [0, {BULK_HYPERFINE}] MHz")

    def replace(self, **changes) -> "ExperimentSpec":
        return replace(self, **changes)

    def step_for(self, duration: float) -> float:
        if self.sample_step_us is not None:
            return min(self.sample_step_us, duration)
        return min(0.001 if duration <= 1.0 else 0.01, duration)


@dataclass
class SweepGrid:
    """Observables on a rectangular grid, arrays shaped ``[len(a) for a in axes]``."""

    axes: tuple[Axis, ...]
    observables: dict[str, np.ndarray]
    curves: dict[str, np.ndarray] = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(len(a) for a in self.axes)


@dataclass
class ReadoutResult:
    trace: TimeTrace
    current: float  # pA, mean over the final window


class SweepPointError(RuntimeError):
    """A grid point failed; ``coords`` maps axis names to the point's values."""

    def __init__(self, coords: Mapping[str, float], cause: BaseException):
        self.coords = dict(coords)
        where = ", ".join(f"{k}={v:g}" for k, v in self.coords.items())
        super().__init__(f"sweep point ({where}) failed: {cause}")


# --- defaults ---------------------------------------------------------------


def default_config(experiment: str) -> SystemConfig:
    """Default parameters for each protocol."""
    a = BULK_HYPERFINE
    if experiment == "spin_funnel":
        return SystemConfig(b0=0.25, tc=2000.0, a_left=(a,), a_right=(a,), direction="reverse")
    if experiment in ("psb_esr", "readout", "stark_sweep"):
        return SystemConfig(b0=1.0, b_ac_esr=1e-3, tc=a, a_left=(a,), a_right=(a,), direction="forward")
    if experiment == "cluster":
        return SystemConfig(b0=0.01, b_ac_esr=1e-3, tc=a, a_left=(a,), a_right=(a, a), direction="forward")
    raise ConfigError(f"unknown experiment {experiment!r}; expected one of {EXPERIMENTS}")


def default_spec(experiment: str, **overrides) -> ExperimentSpec:
    config = default_config(experiment)
    kwargs: dict = {"experiment": experiment, "config": config}
    if experiment == "spin_funnel":
        kwargs["axes"] = (
            Axis.linspace("b0", 0.01, 0.5, 50, "T"),
            Axis.linspace("delta", 0.0, 9800.0, 50, "MHz"),
        )
    elif experiment == "readout":
        kwargs["initial_nuclear"] = "uu"
    elif experiment == "stark_sweep":
        kwargs["axes"] = (
            Axis.linspace("delta_a_lr", 0.0, 20.0, 10, "MHz"),
            Axis.linspace("b0", 0.001, 1.0, 20, "T"),
        )
    elif experiment == "cluster":
        kwargs.update(transport_us=500.0, esr_us=100.0)
    kwargs.update(overrides)
    return ExperimentSpec(**kwargs)


# --- shared pieces ----------------------------------------------------------


def initial_state(basis: BasisDescriptor, nuclear: str | np.ndarray = "mixed") -> DensityState:
    """Mixed (0,1) electron times a nuclear state.

    ``nuclear`` is ``"mixed"``, a configuration label, or a nuclear density
    matrix.
    """
    n = basis.nuclear_count
    if isinstance(nuclear, str):
        if nuclear == "mixed":
            rho_n = np.eye(n) / n
        elif nuclear in basis.nuclear_states:
            rho_n = np.zeros((n, n))
            k = basis.nuclear_states.index(nuclear)
            rho_n[k, k] = 1
        else:
            raise ConfigError(f"unknown nuclear state {nuclear!r}; expected 'mixed' or one of {basis.nuclear_states}")
    else:
        rho_n = np.asarray(nuclear)
        if rho_n.shape != (n, n):
            raise ConfigError(f"nuclear density matrix must be {n}x{n}")
    rho_e = np.zeros((N_ELECTRON, N_ELECTRON))
    rho_e[UP_01, UP_01] = rho_e[DOWN_01, DOWN_01] = 0.5
    return vectorize(np.kron(rho_e, rho_n))


def rotate_left_nucleus(basis: BasisDescriptor, theta: float) -> np.ndarray:
    """Nuclear-space unitary rotating the first left nucleus by ``theta`` about x."""
    ops = [np.eye(2)] * basis.n_nuclei
    ops[0] = scipy.linalg.expm(-1j * theta * SX)
    out = np.array([[1.0 + 0j]])
    for op in ops:
        out = np.kron(out, op)
    return out


def trace_observables(config: SystemConfig, basis: BasisDescriptor) -> dict[str, np.ndarray]:
    obs = ObservableSet.for_basis(basis)
    out = {
        "current_pA": current_operator(config, basis),
        "p_s02": obs.p_s02,
        "p_11": obs.p_11,
    }
    out.update({f"nuc_{k}": p for k, p in obs.nuclear.items()})
    return out


def _esr_generators(config: SystemConfig, basis: BasisDescriptor):
    h = build_hamiltonian(config, basis)
    d = dissipator(config, basis)
    h_rot = apply_rwa(h, build_esr_drive(config, basis), config.omega_drive, basis)
    return generator(h, d), generator(h_rot, d)


def _transport_esr_trace(spec: ExperimentSpec, config: SystemConfig, rho0: DensityState, full: bool) -> TimeTrace:
    """Undriven transport then RWA drive at ``config.omega_drive``.

    With ``full=False`` only the final 20% of the drive stage is sampled;
    the rest is propagated in single exact steps.
    """
    basis = basis_for(config)
    g_off, g_on = _esr_generators(config, basis)
    t1, t2 = spec.transport_us, spec.esr_us
    if full:
        stages = [Stage(g_off, t1, spec.step_for(t1)), Stage(g_on, t2, spec.step_for(t2))]
    else:
        tail = 0.2 * t2
        stages = [
            Stage(g_off, t1, t1, record=False),
            Stage(g_on, t2 - tail, t2 - tail, record=False),
            Stage(g_on, tail, spec.step_for(tail)),
        ]
    trace = evolve_trace(stages, rho0, trace_observables(config, basis))
    trace.stage_starts = [0.0, t1]
    trace.metadata.update(omega_drive_MHz=config.omega_drive, esr_start_us=t1, stop_us=t1 + t2)
    return trace


def final_window_mean(trace: TimeTrace, name: str = "current_pA", fraction: float = 0.2) -> float:
    """Mean of ``name`` over the last ``fraction`` of the drive stage."""
    start, stop = trace.metadata["esr_start_us"], trace.metadata["stop_us"]
    return trace.mean(name, stop - fraction * (stop - start), stop)


def _require(config: SystemConfig, direction: str, experiment: str):
    if config.direction != direction:
        raise ConfigError(f"{experiment} needs direction={direction!r}, got {config.direction!r}")


def _with_eq3_drive(config: SystemConfig) -> SystemConfig:
    return config.replace(omega_drive=resonance_frequency(config))


def _apply_point(config: SystemConfig, coords: Mapping[str, float]) -> SystemConfig:
    changes = {k: v for k, v in coords.items() if k != "delta_a_lr"}
    return config.replace(**changes) if changes else config


# --- sweep engine -----------------------------------------------------------


def sweep(
    spec: ExperimentSpec,
    point: Callable[[ExperimentSpec, dict[str, float]], Mapping[str, float]],
    threads: int = 1,
    order: Sequence[int] | None = None,
) -> SweepGrid:
    """Evaluate ``point(spec, coords)`` at every grid point.

    Points are independent and run on ``threads`` workers; ``order`` permutes
    submission order (row-major by default).  Results are placed by grid
    index so the output never depends on execution order.
    """
    if not spec.axes:
        raise ConfigError("sweep needs at least one axis")
    shape = tuple(len(a) for a in spec.axes)
    cells = list(itertools.product(*(range(n) for n in shape)))
    order = range(len(cells)) if order is None else list(order)
    if sorted(order) != list(range(len(cells))):
        raise ValueError("order must be a permutation of the grid points")

    def run(i):
        coords = {a.name: a.values[j] for a, j in zip(spec.axes, cells[i])}
        try:
            return i, dict(point(spec, coords))
        except Exception as exc:  # attach coordinates for the caller
            raise SweepPointError(coords, exc) from exc

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, order))
    else:
        results = [run(i) for i in order]

    names = list(results[0][1]) if results else []
    data = {k: np.full(shape, np.nan) for k in names}
    for i, values in results:
        for k in names:
            data[k][cells[i]] = values[k]
    for k, arr in data.items():
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"sweep observable {k!r} has non-finite values")
    return SweepGrid(spec.axes, data, metadata={"experiment": spec.experiment})


# --- protocols --------------------------------------------------------------


def funnel_point(spec: ExperimentSpec, coords: Mapping[str, float]) -> dict[str, float]:
    config = _apply_point(spec.config, coords)
    if config.delta < 0:
        raise ConfigError("spin funnel needs delta >= 0")
    basis = basis_for(config)
    g = generator(build_hamiltonian(config, basis), dissipator(config, basis))
    if spec.method == "steady_state":
        i = current(steady_state(g).state, config, basis)
    else:
        lo, hi = spec.window_us
        stages = [Stage(g, hi - lo, spec.step_for(hi - lo))]
        if lo > 0:
            stages.insert(0, Stage(g, lo, lo, record=False))
        trace = evolve_trace(stages, initial_state(basis), {"i": current_operator(config, basis)})
        i = trace.mean("i", lo, hi)
    ref = iqd_reference(config)
    return {"current_pA": i, "iqd_pA": ref, "delta_i_pA": i - ref}


def run_spin_funnel(spec: ExperimentSpec, threads: int = 1) -> SweepGrid:
    """Reverse-cycle current minus the quantum-dot reference over (B0, detuning).

    Also returns the detuning where ``J = gamma_e * B0`` per B0 value.
    """
    _require(spec.config, "reverse", "spin_funnel")
    axes = spec.axes or (Axis("delta", (spec.config.delta,), "MHz"),)
    for axis in axes:
        if axis.name == "delta" and min(axis.values) < 0:
            raise ConfigError("spin funnel needs a delta >= 0 grid")
    spec = spec.replace(axes=axes)
    grid = sweep(spec, funnel_point, threads)
    b0_axis = next((a for a in axes if a.name == "b0"), Axis("b0", (spec.config.b0,), "T"))
    b0 = np.asarray(b0_axis.values)
    grid.curves["funnel_delta_MHz"] = funnel_detuning(spec.config.tc, spec.config.gamma_e * b0)
    grid.metadata["curve_axis"] = "b0"
    grid.metadata["method"] = spec.method
    return grid


def run_psb_esr(spec: ExperimentSpec) -> TimeTrace:
    """Transport into Pauli blockade, then ESR at the resonance formula frequency."""
    _require(spec.config, "forward", "psb_esr")
    config = _with_eq3_drive(spec.config)
    rho0 = initial_state(basis_for(config), spec.initial_nuclear)
    return _transport_esr_trace(spec, config, rho0, full=True)


def run_readout_protocol(spec: ExperimentSpec, full_trace: bool = False) -> ReadoutResult:
    """Prepare a nuclear state, rotate the left nucleus by ``theta``, read out by transport + ESR."""
    _require(spec.config, "forward", "readout")
    config = _with_eq3_drive(spec.config)
    basis = basis_for(config)
    theta = float(np.mod(spec.theta, 2 * np.pi))
    n = basis.nuclear_count
    if spec.initial_nuclear == "mixed":
        rho_n = np.eye(n) / n
    else:
        rho_n = np.zeros((n, n))
        k = basis.nuclear_states.index(spec.initial_nuclear)
        rho_n[k, k] = 1
    u = rotate_left_nucleus(basis, theta)
    rho0 = initial_state(basis, u @ rho_n @ u.conj().T)
    trace = _transport_esr_trace(spec, config, rho0, full=full_trace)
    trace.metadata["theta_rad"] = theta
    return ReadoutResult(trace, final_window_mean(trace))


def stark_config(config: SystemConfig, delta_a_lr: float) -> SystemConfig:
    """Reduce the left hyperfine by ``delta_a_lr`` and keep ``tc`` equal to it."""
    a = BULK_HYPERFINE
    if not 0 <= delta_a_lr <= a:
        raise ConfigError(f"delta_a_lr must lie in [0, {a}] MHz, got {delta_a_lr}")
    a_l = a - delta_a_lr
    return config.replace(a_left=(a_l,), a_right=(a,), tc=a_l)


def stark_point(spec: ExperimentSpec, coords: Mapping[str, float]) -> dict[str, float]:
    config = _apply_point(spec.config, coords)
    config = _with_eq3_drive(stark_config(config, coords.get("delta_a_lr", 0.0)))
    rho0 = initial_state(basis_for(config), spec.initial_nuclear)
    trace = _transport_esr_trace(spec, config, rho0, full=False)
    return {"current_pA": final_window_mean(trace), "omega_drive_MHz": config.omega_drive}


def run_stark_sweep(spec: ExperimentSpec, threads: int = 1) -> SweepGrid:
    """Post-ESR current over (Stark shift, B0) with the drive re-tuned per point."""
    _require(spec.config, "forward", "stark_sweep")
    axes = spec.axes or (Axis("delta_a_lr", (0.0,), "MHz"),)
    for axis in axes:
        if axis.name == "delta_a_lr" and (min(axis.values) < 0 or max(axis.values) > BULK_HYPERFINE):
            raise ConfigError(f"delta_a_lr must lie in [0, {BULK_HYPERFINE}] MHz")
    return sweep(spec.replace(axes=axes), stark_point, threads)


def run_cluster(spec: ExperimentSpec) -> TimeTrace:
    """1P-2P transport then ESR at the strongest spectral line."""
    _require(spec.config, "forward", "cluster")
    config = spec.config
    if config.is_single_donor_pair:
        raise ConfigError("cluster needs two hyperfine constants on one side")
    basis = basis_for(config)
    config = config.replace(omega_drive=search_drive_frequency(config, basis))
    return _transport_esr_trace(spec, config, initial_state(basis, spec.initial_nuclear), full=True)


def spectrum(config: SystemConfig, deltas: Sequence[float]) -> SweepGrid:
    """Eigenenergies of the (1,1)+(0,2) block versus detuning.

    ``character_k`` holds the dominant electron state index of level ``k``.
    """
    basis = basis_for(config)
    idx = sector_indices(basis, range(S_02 + 1))
    deltas = np.asarray(deltas, dtype=float)
    energies = np.empty((len(deltas), len(idx)))
    character = np.empty_like(energies)
    for i, d in enumerate(deltas):
        h = build_hamiltonian(config.replace(delta=float(d)), basis)[np.ix_(idx, idx)]
        e, v = np.linalg.eigh(h)
        weights = (np.abs(v) ** 2).reshape(S_02 + 1, basis.nuclear_count, -1).sum(axis=1)
        energies[i] = e
        character[i] = weights.argmax(axis=0)
    obs = {f"energy_{k:02d}_MHz": energies[:, k] for k in range(len(idx))}
    obs.update({f"character_{k:02d}": character[:, k] for k in range(len(idx))})
    return SweepGrid((Axis("delta", tuple(deltas), "MHz"),), obs, metadata={"experiment": "spectrum"})


def run_experiment(spec: ExperimentSpec, threads: int = 1):
    """Dispatch on ``spec.experiment``."""
    if spec.experiment == "spin_funnel":
        return run_spin_funnel(spec, threads)
    if spec.experiment == "psb_esr":
        return run_psb_esr(spec)
    if spec.experiment == "readout":
        return run_readout_protocol(spec, full_trace=True)
    if spec.experiment == "stark_sweep":
        return run_stark_sweep(spec, threads)
    if spec.experiment == "cluster":
        return run_cluster(spec)
    raise ConfigError(f"unknown experiment {spec.experiment!r}")
