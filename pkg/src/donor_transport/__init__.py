"""Liouville-space transport simulations of phosphorus donor pairs in silicon."""

__version__ = "0.1.0"

from .experiments import (
    EXPERIMENTS,
    Axis,
    ExperimentSpec,
    ReadoutResult,
    SweepGrid,
    SweepPointError,
    default_config,
    default_spec,
    run_cluster,
    run_experiment,
    run_psb_esr,
    run_readout_protocol,
    run_spin_funnel,
    run_stark_sweep,
    spectrum,
    sweep,
)
from .liouville import (
    DensityState,
    Generator,
    Stage,
    SteadyState,
    TimeTrace,
    dissipator,
    evolve_trace,
    generator,
    liouvillian,
    propagate,
    steady_state,
    vectorize,
)
from .manifest import ManifestError, RunManifest, load_manifest, parse_manifest, write_outputs
from .observables import (
    ObservableSet,
    current,
    exchange_j,
    iqd_reference,
    larmor_difference,
    nuclear_projections,
)
from .spin_system import (
    BasisDescriptor,
    ConfigError,
    SystemConfig,
    apply_rwa,
    build_basis,
    build_esr_drive,
    build_hamiltonian,
    eigenspectrum,
    resonance_frequency,
)
