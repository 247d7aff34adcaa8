"""TOML run manifests with unit-suffixed keys, and CSV + JSON output writers.

A manifest is flat: scalar parameters at the top level (``b0_mT``,
``tc_MHz``, ...), an optional ``[[axes]]`` array and an optional
``[outputs]`` table.  Parameters stay in manifest units inside
:class:`RunManifest` so that parse -> serialize -> parse is exact; they are
converted to model units only when building the :class:`ExperimentSpec`.
"""

from __future__ import annotations

import csv
import dataclasses
import datetime as _dt
import itertools
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import __version__
from .experiments import (
    BULK_HYPERFINE,
    EXPERIMENTS,
    Axis,
    ExperimentSpec,
    ReadoutResult,
    SweepGrid,
    default_spec,
)
from .liouville import TimeTrace
from .spin_system import ConfigError, SystemConfig


class ManifestError(ConfigError):
    """Invalid manifest text or content."""


class OutputError(OSError):
    """Output files could not be written."""


# parameter -> (unit, factor to model units, kind)
_UNITS = {
    "b0": ("mT", 1e-3, "float"),
    "b_ac_esr": ("mT", 1e-3, "float"),
    "omega_drive": ("MHz", 1.0, "float"),
    "tc": ("MHz", 1.0, "float"),
    "delta": ("MHz", 1.0, "float"),
    "a_left": ("MHz", 1.0, "list"),
    "a_right": ("MHz", 1.0, "list"),
    "gamma_l": ("MHz", 1.0, "float"),
    "gamma_r": ("MHz", 1.0, "float"),
    "gamma_e": ("MHz_per_T", 1.0, "float"),
    "gamma_n": ("MHz_per_T", 1.0, "float"),
    "transport": ("us", 1.0, "float"),
    "esr": ("us", 1.0, "float"),
    "sample_step": ("ns", 1e-3, "float"),
    "theta": ("rad", 1.0, "float"),
    "delta_a_lr": ("MHz", 1.0, "float"),
    "window": ("us", 1.0, "pair"),
}
_NON_NEGATIVE = {"delta_a_lr", "b0", "b_ac_esr", "tc", "a_left", "a_right", "gamma_l", "gamma_r", "transport", "esr", "sample_step", "window"}
_PLAIN = {"direction": str, "initial_nuclear": str, "method": str}
_TOP_LEVEL = {"experiment", "threads", "seed", "axes", "outputs"}
_AXIS_UNITS = {"b0": ("mT", 1e-3), "delta": ("MHz", 1.0), "delta_a_lr": ("MHz", 1.0), "tc": ("MHz", 1.0), "omega_drive": ("MHz", 1.0)}
_OUTPUT_KEYS = {"dir", "stem"}
_CONFIG_FIELDS = {f.name for f in dataclasses.fields(SystemConfig)}

EXPERIMENT_DESCRIPTIONS = {
    "spin_funnel": "reverse-cycle current minus the quantum-dot reference over (B0, detuning)",
    "psb_esr": "transport into Pauli blockade, then ESR at the resonance-formula frequency",
    "readout": "nuclear state preparation, NMR rotation of the left nucleus, transport + ESR readout",
    "stark_sweep": "post-ESR current over (Stark shift of the left hyperfine, B0)",
    "cluster": "1P-2P transport then ESR at the strongest spectral line",
}


def _split_key(key: str) -> tuple[str, str]:
    """Match ``key`` against the known ``<name>_<unit>`` parameters."""
    for name in sorted(_UNITS, key=len, reverse=True):
        if key == name:
            return name, ""
        if key.startswith(name + "_"):
            return name, key[len(name) + 1 :]
    return key, ""


def _key(name: str) -> str:
    return f"{name}_{_UNITS[name][0]}"


def _default_parameters(experiment: str) -> dict[str, Any]:
    """Protocol defaults for ``experiment`` in manifest units."""
    spec = default_spec(experiment)
    c = spec.config
    out: dict[str, Any] = {
        "b_ac_esr_mT": c.b_ac_esr * 1e3,
        "tc_MHz": c.tc,
        "delta_MHz": c.delta,
        "a_left_MHz": list(c.a_left),
        "a_right_MHz": list(c.a_right),
        "gamma_l_MHz": c.gamma_l,
        "gamma_r_MHz": c.gamma_r,
        "direction": c.direction,
        "transport_us": spec.transport_us,
        "esr_us": spec.esr_us,
        "initial_nuclear": spec.initial_nuclear,
    }
    if experiment == "spin_funnel":
        out["method"] = spec.method
        out["window_us"] = list(spec.window_us)
    if experiment == "readout":
        out["theta_rad"] = spec.theta
    return out


def _default_axes(experiment: str) -> list[dict[str, Any]]:
    axes = []
    for axis in default_spec(experiment).axes:
        unit, factor = _AXIS_UNITS[axis.name]
        values = np.asarray(axis.values) / factor
        axes.append({"name": f"{axis.name}_{unit}", "min": float(values[0]), "max": float(values[-1]), "points": len(values)})
    return axes


def _check_value(key: str, name: str, kind: str, value):
    if kind == "list":
        values = value if isinstance(value, list) else [value]
    elif kind == "pair":
        if not isinstance(value, list) or len(value) != 2:
            raise ManifestError(f"{key} must be a two-element list")
        values = value
    else:
        values = [value]
    for v in values:
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ManifestError(f"{key} must be numeric, got {v!r}")
        if not np.isfinite(v):
            raise ManifestError(f"{key} must be finite")
        if name in _NON_NEGATIVE and v < 0:
            raise ManifestError(f"{key} must be >= 0, got {v}")
    if kind == "list":
        return [float(v) for v in values]
    if kind == "pair":
        return [float(v) for v in values]
    return float(value)


def _parse_axis(entry) -> dict[str, Any]:
    if not isinstance(entry, dict):
        raise ManifestError("each [[axes]] entry must be a table")
    unknown = set(entry) - {"name", "min", "max", "points", "values"}
    if unknown:
        raise ManifestError(f"unknown axis keys {sorted(unknown)}")
    if "name" not in entry:
        raise ManifestError("axis is missing required field 'name'")
    key = entry["name"]
    matched = next((n for n in sorted(_AXIS_UNITS, key=len, reverse=True) if key.startswith(n + "_") or key == n), None)
    if matched is None:
        raise ManifestError(f"cannot sweep {key!r}; sweepable: {sorted(f'{n}_{u}' for n, (u, _) in _AXIS_UNITS.items())}")
    unit = key[len(matched) + 1 :] if key != matched else ""
    if unit != _AXIS_UNITS[matched][0]:
        raise ManifestError(f"unit mismatch for axis {key!r}: {matched} must be given in {_AXIS_UNITS[matched][0]}")
    if "values" in entry:
        if {"min", "max", "points"} & set(entry):
            raise ManifestError(f"axis {key!r}: give either values or min/max/points")
        values = entry["values"]
        if not isinstance(values, list) or not values:
            raise ManifestError(f"axis {key!r}: values must be a non-empty list")
        return {"name": key, "values": [_check_value(key, matched, "float", v) for v in values]}
    for part in ("min", "max", "points"):
        if part not in entry:
            raise ManifestError(f"axis {key!r} is missing required field {part!r}")
    points = entry["points"]
    if isinstance(points, bool) or not isinstance(points, int) or points < 1:
        raise ManifestError(f"axis {key!r}: points must be a positive integer")
    lo = _check_value(key, matched, "float", entry["min"])
    hi = _check_value(key, matched, "float", entry["max"])
    return {"name": key, "min": lo, "max": hi, "points": points}


@dataclass(frozen=True)
class RunManifest:
    """Validated manifest; ``parameters`` are fully resolved, in manifest units."""

    experiment: str
    parameters: dict[str, Any]
    axes: tuple[dict[str, Any], ...] = ()
    outputs: dict[str, str] = field(default_factory=dict)
    threads: int = 1
    seed: int = 0  # reserved; the dynamics are deterministic

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"experiment": self.experiment, "threads": self.threads, "seed": self.seed}
        out.update(self.parameters)
        if self.axes:
            out["axes"] = [dict(a) for a in self.axes]
        if self.outputs:
            out["outputs"] = dict(self.outputs)
        return out

    def to_toml(self) -> str:
        return tomli_w.dumps(self.to_dict())

    @property
    def stem(self) -> str:
        return self.outputs.get("stem", self.experiment)

    def with_overrides(self, *, threads: int | None = None, out_dir: str | None = None, sample_step_ns: float | None = None) -> "RunManifest":
        params = dict(self.parameters)
        outputs = dict(self.outputs)
        if sample_step_ns is not None:
            params["sample_step_ns"] = _check_value("sample_step_ns", "sample_step", "float", sample_step_ns)
            if params["sample_step_ns"] <= 0:
                raise ManifestError("sample_step_ns must be > 0")
        if out_dir is not None:
            outputs["dir"] = str(out_dir)
        return dataclasses.replace(
            self,
            parameters=params,
            outputs=outputs,
            threads=self.threads if threads is None else int(threads),
        )

    def spec(self) -> ExperimentSpec:
        """Model-unit experiment spec."""
        p = self.parameters
        config_kwargs: dict[str, Any] = {}
        spec_kwargs: dict[str, Any] = {}
        stark_shift = None
        for key, value in p.items():
            name, _ = _split_key(key)
            if name in _PLAIN:
                (config_kwargs if name in _CONFIG_FIELDS else spec_kwargs)[name] = value
                continue
            factor = _UNITS[name][1]
            if name in ("a_left", "a_right"):
                config_kwargs[name] = tuple(v * factor for v in value)
            elif name in _CONFIG_FIELDS:
                config_kwargs[name] = value * factor
            elif name == "transport":
                spec_kwargs["transport_us"] = value
            elif name == "esr":
                spec_kwargs["esr_us"] = value
            elif name == "sample_step":
                spec_kwargs["sample_step_us"] = value * factor
            elif name == "theta":
                spec_kwargs["theta"] = value
            elif name == "window":
                spec_kwargs["window_us"] = tuple(value)
            elif name == "delta_a_lr":
                stark_shift = value
        axes = []
        for entry in self.axes:
            name = next(n for n in sorted(_AXIS_UNITS, key=len, reverse=True) if entry["name"].startswith(n))
            unit, factor = _AXIS_UNITS[name]
            if "values" in entry:
                values = np.asarray(entry["values"]) * factor
            else:
                values = np.linspace(entry["min"], entry["max"], entry["points"]) * factor
            axes.append(Axis(name, tuple(values), "T" if name == "b0" else unit))
        if self.experiment == "stark_sweep":
            config_kwargs.setdefault("b0", 1.0)
            if stark_shift is not None and not any(a.name == "delta_a_lr" for a in axes):
                axes.insert(0, Axis("delta_a_lr", (stark_shift,), "MHz"))
        return ExperimentSpec(
            experiment=self.experiment,
            config=SystemConfig(**config_kwargs),
            axes=tuple(axes),
            **spec_kwargs,
        )


def parse_manifest(text: str) -> RunManifest:
    """Parse and validate manifest text, filling protocol defaults."""
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ManifestError(f"malformed manifest: {exc}") from exc
    if "experiment" not in raw:
        raise ManifestError("missing required field 'experiment'")
    experiment = raw["experiment"]
    if experiment not in EXPERIMENTS:
        raise ManifestError(f"unknown experiment {experiment!r}; expected one of {list(EXPERIMENTS)}")

    params = _default_parameters(experiment)
    for key, value in raw.items():
        if key in _TOP_LEVEL:
            continue
        if key in _PLAIN:
            if not isinstance(value, str):
                raise ManifestError(f"{key} must be a string")
            params[key] = value
            continue
        name, unit = _split_key(key)
        if name not in _UNITS:
            raise ManifestError(f"unknown key {key!r}")
        expected, _, kind = _UNITS[name]
        if unit != expected:
            raise ManifestError(f"unit mismatch for {key!r}: {name} must be given as {_key(name)}")
        params[key] = _check_value(key, name, kind, value)

    if "axes" in raw:
        if not isinstance(raw["axes"], list):
            raise ManifestError("axes must be an array of tables")
        axes = tuple(_parse_axis(a) for a in raw["axes"])
    else:
        axes = tuple(_default_axes(experiment))
    names = [a["name"] for a in axes]
    if len(set(names)) != len(names):
        raise ManifestError(f"duplicate axes in {names}")
    if "b0_mT" not in params and "b0_mT" not in names and experiment != "stark_sweep":
        raise ManifestError(f"missing required parameter 'b0_mT' for {experiment}")

    outputs = raw.get("outputs", {})
    if not isinstance(outputs, dict):
        raise ManifestError("outputs must be a table")
    unknown = set(outputs) - _OUTPUT_KEYS
    if unknown:
        raise ManifestError(f"unknown outputs keys {sorted(unknown)}")
    outputs = {k: str(v) for k, v in outputs.items()}

    threads = raw.get("threads", 1)
    seed = raw.get("seed", 0)
    for key, value in (("threads", threads), ("seed", seed)):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ManifestError(f"{key} must be an integer")
    if threads < 1:
        raise ManifestError("threads must be >= 1")

    manifest = RunManifest(experiment, params, axes, outputs, threads, seed)
    try:
        manifest.spec()
    except ManifestError:
        raise
    except (ConfigError, ValueError) as exc:
        raise ManifestError(str(exc)) from exc
    return manifest


def load_manifest(path: str | Path) -> RunManifest:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from exc
    return parse_manifest(text)


# --- outputs ----------------------------------------------------------------


def _fmt(x) -> str:
    return format(float(x), ".17g")


def _json_safe(obj):
    if isinstance(obj, dict):
        return {str(k): _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _json_safe(obj.tolist())
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


def _table(result) -> tuple[list[str], list[list[float]]]:
    if isinstance(result, ReadoutResult):
        result = result.trace
    if isinstance(result, TimeTrace):
        names = list(result.observables)
        header = ["time_us", *names]
        rows = [[t, *(result.observables[k][i] for k in names)] for i, t in enumerate(result.times)]
        return header, rows
    if isinstance(result, SweepGrid):
        names = list(result.observables)
        header = [f"{a.name}_{a.unit}" if a.unit else a.name for a in result.axes] + names
        rows = []
        for cell in itertools.product(*(range(len(a)) for a in result.axes)):
            coords = [a.values[j] for a, j in zip(result.axes, cell)]
            rows.append([*coords, *(result.observables[k][cell] for k in names)])
        return header, rows
    raise TypeError(f"cannot write {type(result).__name__}")


def _write_csv(path: Path, header: list[str], rows: list[list[float]]):
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows([_fmt(x) for x in row] for row in rows)


def write_outputs(result, manifest: RunManifest, out_dir: str | Path | None = None) -> dict[str, Path]:
    """Write the CSV table(s) and a JSON sidecar; returns the written paths.

    CSV values carry 17 significant digits.  The sidecar holds the resolved
    manifest and model-unit config, so the run can be repeated exactly.
    """
    directory = Path(out_dir if out_dir is not None else manifest.outputs.get("dir", "."))
    stem = manifest.stem
    header, rows = _table(result)
    for row in rows:
        if not all(np.isfinite(row)):
            raise ValueError("refusing to write non-finite data")
    paths = {"data": directory / f"{stem}.csv", "metadata": directory / f"{stem}.json"}
    curves = getattr(result, "curves", None)
    try:
        directory.mkdir(parents=True, exist_ok=True)
        _write_csv(paths["data"], header, rows)
        if curves:
            axis_name = result.metadata.get("curve_axis")
            axis = next(a for a in result.axes if a.name == axis_name)
            paths["curves"] = directory / f"{stem}_curves.csv"
            curve_rows = [[v, *(curves[k][i] for k in curves)] for i, v in enumerate(axis.values)]
            # NaN marks B0 values with no funnel crossing; written as "nan"
            with paths["curves"].open("w", newline="") as fh:
                writer = csv.writer(fh, lineterminator="\n")
                writer.writerow([f"{axis.name}_{axis.unit}", *curves])
                writer.writerows([_fmt(x) for x in row] for row in curve_rows)
        spec = manifest.spec()
        metadata = getattr(result, "metadata", {}) if not isinstance(result, ReadoutResult) else result.trace.metadata
        sidecar = {
            "experiment": manifest.experiment,
            "version": __version__,
            "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(),
            "manifest": manifest.to_dict(),
            "resolved_config": dataclasses.asdict(spec.config),
            "protocol": {
                "transport_us": spec.transport_us,
                "esr_us": spec.esr_us,
                "sample_step_us": spec.sample_step_us,
                "initial_nuclear": spec.initial_nuclear,
                "theta_rad": spec.theta,
                "method": spec.method,
                "window_us": list(spec.window_us),
            },
            "columns": header,
            "result": _json_safe(metadata),
        }
        if isinstance(result, ReadoutResult):
            sidecar["readout_current_pA"] = result.current
        paths["metadata"].write_text(json.dumps(_json_safe(sidecar), indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise OutputError(f"cannot write outputs to {directory}: {exc}") from exc
    return paths


def spectrum_manifest_deltas(manifest: RunManifest) -> np.ndarray:
    """Detuning grid (MHz) for the spectrum command: the manifest's delta axis or +-5 tc around 0."""
    for axis in manifest.spec().axes:
        if axis.name == "delta":
            return np.asarray(axis.values)
    scale = 5 * max(manifest.spec().config.tc, BULK_HYPERFINE)
    return np.linspace(-scale, scale, 201)
