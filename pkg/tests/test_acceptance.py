"""Acceptance criteria 1-10, each at its stated tolerance and runtime budget.

Every test appends a PASS/FAIL line shown in the terminal summary.
"""

import os
import time

import numpy as np
import pytest

from oracles import jump_operators, ode_evolve
from donor_transport.experiments import (
    Axis,
    default_config,
    default_spec,
    final_window_mean,
    funnel_point,
    initial_state,
    run_cluster,
    run_psb_esr,
    run_readout_protocol,
    run_spin_funnel,
    run_stark_sweep,
    sweep,
)
from donor_transport.liouville import Stage, dissipator, evolve_trace, generator, propagate
from donor_transport.observables import funnel_detuning
from donor_transport.spin_system import (
    GAMMA_E,
    SystemConfig,
    apply_rwa,
    basis_for,
    build_esr_drive,
    build_hamiltonian,
    resonance_frequency,
    search_drive_frequency,
)

THREADS = os.cpu_count() or 1
NUCLEAR = ("nuc_uu", "nuc_ud", "nuc_du", "nuc_dd")


def timed(fn, *args, **kwargs):
    start = time.perf_counter()
    out = fn(*args, **kwargs)
    return out, time.perf_counter() - start


@pytest.fixture(scope="module")
def psb_1t():
    return timed(run_psb_esr, default_spec("psb_esr"))


@pytest.fixture(scope="module")
def psb_10mt():
    return timed(run_psb_esr, default_spec("psb_esr", config=default_config("psb_esr").replace(b0=0.01)))


def test_criterion_01_psb_onset(psb_1t, acceptance_report):
    trace, runtime = psb_1t
    current = trace.observables["current_pA"]
    peak = current[trace.times <= 1.0].max()
    after = current[(trace.times >= 1.0) & (trace.times < 50.0)].max()
    ok = after < 0.01 * peak and runtime < 30
    acceptance_report(1, ok, f"peak {peak:.4g} pA, max after 1 us {after:.3g} pA ({after / peak:.2e} of peak), {runtime:.1f} s")
    assert ok


def test_criterion_02_nuclear_spin_blockade(psb_10mt, acceptance_report):
    trace, runtime = psb_10mt
    p_ud, p_du = trace.observables["nuc_ud"][-1], trace.observables["nuc_du"][-1]
    on = trace.times >= 50.0
    spike = trace.observables["current_pA"][on].max()
    final = final_window_mean(trace)
    ok = p_ud < 0.05 and p_du < 0.05 and final < 0.1 * spike and runtime < 120
    acceptance_report(
        2, ok, f"P(ud)={p_ud:.4f} P(du)={p_du:.4f}, final {final:.4g} pA = {final / spike:.3f} of spike {spike:.4g} pA, {runtime:.1f} s"
    )
    assert ok


def test_criterion_03_high_field_nuclear_invariance(psb_1t, acceptance_report):
    trace, runtime = psb_1t
    values = np.stack([trace.observables[k] for k in NUCLEAR])
    dev = np.abs(values - 0.25).max()
    ok = dev <= 0.01 and runtime < 120
    acceptance_report(3, ok, f"max |P - 0.25| = {dev:.2e} over {len(trace.times)} samples, {runtime:.1f} s")
    assert ok


def test_criterion_04_spin_funnel_location(acceptance_report):
    deltas = Axis.linspace("delta", 0.0, 9800.0, 50, "MHz")
    spec = default_spec("spin_funnel", axes=(Axis("b0", (0.25,), "T"), deltas))
    row, t_row = timed(run_spin_funnel, spec, THREADS)
    step = deltas.values[1] - deltas.values[0]
    target = float(funnel_detuning(2000.0, GAMMA_E * 0.25))
    peak = deltas.values[int(np.argmax(row.observables["delta_i_pA"][0]))]

    full = default_spec("spin_funnel", method="steady_state")
    grid, t_map = timed(run_spin_funnel, full, THREADS)
    b0_values = np.asarray(full.axes[0].values)
    i250 = int(np.argmin(np.abs(b0_values - 0.25)))
    ss_peak = full.axes[1].values[int(np.argmax(grid.observables["delta_i_pA"][i250]))]
    ss_span = np.ptp(grid.observables["delta_i_pA"][i250])

    ok = abs(peak - target) <= step and t_map < 600
    acceptance_report(
        4,
        ok,
        f"quasi-steady peak at {peak:.0f} MHz vs {target:.1f} (step {step:.0f}), row {t_row:.1f} s; "
        f"50x50 steady_state map {t_map:.1f} s (its 250 mT row: argmax {ss_peak:.0f} MHz, span {ss_span:.2e} pA)",
    )
    assert ok


def test_criterion_05_quantum_dot_oracle(acceptance_report):
    cfg = default_config("spin_funnel").replace(a_left=(0.0,), a_right=(0.0,))
    axes = (Axis("b0", (0.025, 0.25), "T"), Axis("delta", tuple(np.linspace(0, 8000, 17)), "MHz"))
    spec = default_spec("spin_funnel", config=cfg, axes=axes, method="steady_state")
    grid, runtime = timed(run_spin_funnel, spec, THREADS)
    rel = np.abs(grid.observables["delta_i_pA"]) / grid.observables["iqd_pA"]
    ok = rel.max() < 0.01 and runtime < 60
    acceptance_report(5, ok, f"max relative deviation {rel.max():.2e} over {rel.size} points, {runtime:.1f} s")
    assert ok


def test_criterion_06_readout_linearity(acceptance_report):
    thetas = np.array([0, np.pi / 4, np.pi / 2, 3 * np.pi / 4, np.pi])
    start = time.perf_counter()
    currents = np.array([run_readout_protocol(default_spec("readout", theta=t)).current for t in thetas])
    runtime = time.perf_counter() - start
    x = np.sin(thetas / 2) ** 2
    slope, intercept = np.polyfit(x, currents, 1)
    r2 = 1 - np.sum((currents - (slope * x + intercept)) ** 2) / np.sum((currents - currents.mean()) ** 2)
    ratio0, ratio_half = currents[0] / currents[-1], currents[2] / currents[-1]
    ok = ratio0 < 0.02 and abs(ratio_half - 0.5) <= 0.05 and r2 > 0.99 and runtime < 300
    acceptance_report(6, ok, f"I(0)/I(pi)={ratio0:.2e}, I(pi/2)/I(pi)={ratio_half:.4f}, R^2={r2:.6f}, {runtime:.1f} s")
    assert ok


def test_criterion_07_stark_optimum(acceptance_report):
    spec = default_spec("stark_sweep")
    grid, runtime = timed(run_stark_sweep, spec, THREADS)
    current = grid.observables["current_pA"]
    assert current.shape == (10, 20)
    argmax = current.argmax(axis=1)
    interior = bool(np.all((argmax > 0) & (argmax < current.shape[1] - 1)))
    decreasing = bool(np.all(np.diff(current[:, -1]) < 0))
    b0_opt = [spec.axes[1].values[j] * 1e3 for j in argmax]
    ok = interior and decreasing and runtime < 900
    acceptance_report(
        7,
        ok,
        f"argmax B0 per row {np.round(b0_opt).astype(int).tolist()} mT (interior={interior}), "
        f"1 T column strictly decreasing={decreasing}, {runtime:.1f} s",
    )
    assert ok


def test_criterion_08_cluster_no_blockade(acceptance_report):
    spec = default_spec("cluster")
    trace, runtime = timed(run_cluster, spec)
    single_spec = default_spec(
        "psb_esr", config=default_config("psb_esr").replace(b0=spec.config.b0), transport_us=spec.transport_us, esr_us=spec.esr_us
    )
    single = final_window_mean(run_psb_esr(single_spec))
    final = final_window_mean(trace)
    # the window before the final one, to check the current is not still decaying away
    stop, length = trace.metadata["stop_us"], 0.2 * spec.esr_us
    previous = trace.mean("current_pA", stop - 2 * length, stop - length)
    ok = final > 10 * single and final > 0.5 * previous and runtime < 600
    acceptance_report(
        8,
        ok,
        f"cluster {final:.4g} pA vs two single donors {single:.4g} pA (x{final / single:.1f}); "
        f"previous window {previous:.4g} pA; drive {trace.metadata['omega_drive_MHz']:.2f} MHz, {runtime:.1f} s",
    )
    assert ok


def test_criterion_09_resonance_cross_check(acceptance_report):
    cfg = default_config("psb_esr")
    omega = resonance_frequency(cfg)
    line = search_drive_frequency(cfg)
    width = cfg.gamma_e * cfg.b_ac_esr / 2
    ok = abs(omega - 28101.85) < 0.01 and abs(line - omega) < width
    acceptance_report(9, ok, f"spectral line {line:.2f} MHz vs formula {omega:.2f} MHz (|diff| {abs(line - omega):.2f} < {width:.3f})")
    assert ok


def _protocol_generators(experiment, **changes):
    cfg = default_config(experiment).replace(**changes)
    basis = basis_for(cfg)
    h = build_hamiltonian(cfg, basis)
    d = dissipator(cfg, basis)
    if cfg.b_ac_esr and cfg.is_single_donor_pair:
        cfg = cfg.replace(omega_drive=resonance_frequency(cfg))
    h_rot = apply_rwa(h, build_esr_drive(cfg, basis), cfg.omega_drive, basis)
    return cfg, basis, h, h_rot, generator(h, d), generator(h_rot, d)


def test_criterion_10_property_suites(acceptance_report):
    start = time.perf_counter()
    worst = {"trace": 0.0, "herm": 0.0, "neg": 0.0, "semigroup": 0.0, "ode": 0.0}
    checks = {
        "trace": lambda s: abs(s.trace() - 1),
        "herm": lambda s: s.hermiticity_error(),
        "neg": lambda s: -s.min_eigenvalue(),
    }
    cases = [("psb_esr", {"b0": 1.0}), ("psb_esr", {"b0": 0.01}), ("spin_funnel", {"delta": 6863.0}), ("cluster", {"b0": 0.01})]
    for experiment, changes in cases:
        cfg, basis, h, h_rot, g_off, g_on = _protocol_generators(experiment, **changes)
        rho0 = initial_state(basis)
        trace = evolve_trace([Stage(g_off, 0.5, 0.05), Stage(g_on, 0.5, 0.05)], rho0, checks)
        for k in checks:
            worst[k] = max(worst[k], float(np.max(trace.observables[k])))
        a = propagate(g_on, propagate(g_on, rho0, 0.21), 0.34)
        b = propagate(g_on, rho0, 0.55)
        worst["semigroup"] = max(worst["semigroup"], float(np.abs(a.vec - b.vec).max()))
    for experiment, changes, t in [("psb_esr", {"b0": 0.01}, 1.0), ("psb_esr", {"b0": 1.0}, 0.01), ("spin_funnel", {"delta": 6863.0}, 0.02)]:
        cfg, basis, h, h_rot, g_off, g_on = _protocol_generators(experiment, **changes)
        rho0 = initial_state(basis)
        for ham, g in ((h, g_off), (h_rot, g_on)):
            ref = ode_evolve(ham, jump_operators(cfg, basis.nuclear_count), rho0.matrix, t)
            got = propagate(g, rho0, t).matrix
            worst["ode"] = max(worst["ode"], float(np.abs(np.diag(got) - np.diag(ref)).max()))

    spec = default_spec("spin_funnel", axes=(Axis("b0", (0.1, 0.25), "T"), Axis("delta", (5000.0, 6800.0, 7000.0), "MHz")))
    serial = sweep(spec, funnel_point)
    parallel = sweep(spec, funnel_point, threads=4, order=[4, 1, 5, 0, 3, 2])
    deterministic = all(np.array_equal(serial.observables[k], parallel.observables[k]) for k in serial.observables)
    runtime = time.perf_counter() - start

    ok = (
        worst["trace"] < 1e-9
        and worst["herm"] < 1e-9
        and worst["neg"] <= 1e-8
        and worst["semigroup"] < 1e-8
        and worst["ode"] < 1e-6
        and deterministic
    )
    acceptance_report(
        10,
        ok,
        f"trace {worst['trace']:.1e}, herm {worst['herm']:.1e}, min eig {-worst['neg']:.1e}, "
        f"semigroup {worst['semigroup']:.1e}, expm vs RK45 {worst['ode']:.1e}, sweep deterministic={deterministic}, {runtime:.1f} s",
    )
    assert ok
