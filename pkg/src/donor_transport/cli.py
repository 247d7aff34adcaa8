"""Command-line entry point: ``donor-transport {run,spectrum,validate,list-experiments}``."""

from __future__ import annotations

import argparse
import sys
import time
from dataclasses import replace

from .experiments import EXPERIMENTS, run_experiment, spectrum
from .manifest import EXPERIMENT_DESCRIPTIONS, load_manifest, spectrum_manifest_deltas, write_outputs


class StageFailure(Exception):
    def __init__(self, stage: str, cause: BaseException, code: int):
        super().__init__(f"{stage} failed: {cause}")
        self.stage = stage
        self.code = code


def _load(args):
    try:
        return load_manifest(args.manifest).with_overrides(
            threads=args.threads, out_dir=args.out, sample_step_ns=args.sample_step_ns
        )
    except Exception as exc:
        raise StageFailure("parse", exc, 2) from exc


def _write(result, manifest, stage="write"):
    try:
        return write_outputs(result, manifest)
    except Exception as exc:
        raise StageFailure(stage, exc, 4) from exc


def cmd_run(args) -> int:
    manifest = _load(args)
    start = time.perf_counter()
    try:
        result = run_experiment(manifest.spec(), threads=manifest.threads)
    except Exception as exc:
        raise StageFailure(f"run ({manifest.experiment})", exc, 3) from exc
    paths = _write(result, manifest)
    print(f"{manifest.experiment}: {time.perf_counter() - start:.1f} s")
    for kind, path in paths.items():
        print(f"  {kind}: {path}")
    return 0


def cmd_spectrum(args) -> int:
    manifest = _load(args)
    try:
        grid = spectrum(manifest.spec().config, spectrum_manifest_deltas(manifest))
    except Exception as exc:
        raise StageFailure("spectrum", exc, 3) from exc
    manifest = replace(manifest, outputs={**manifest.outputs, "stem": manifest.stem + "_spectrum"})
    for kind, path in _write(grid, manifest).items():
        print(f"  {kind}: {path}")
    return 0


def cmd_validate(args) -> int:
    manifest = _load(args)
    print(manifest.to_toml(), end="")
    return 0


def cmd_list(args) -> int:
    for name in EXPERIMENTS:
        print(f"{name:12s} {EXPERIMENT_DESCRIPTIONS[name]}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="donor-transport", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def with_manifest(p):
        p.add_argument("manifest", help="TOML run manifest")
        p.add_argument("--threads", type=int, default=None, help="worker threads for sweeps")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--sample-step-ns", type=float, default=None, help="sampling step in ns")
        return p

    with_manifest(sub.add_parser("run", help="run the experiment")).set_defaults(func=cmd_run)
    with_manifest(sub.add_parser("spectrum", help="eigenenergies vs detuning")).set_defaults(func=cmd_spectrum)
    with_manifest(sub.add_parser("validate", help="parse and print the resolved manifest")).set_defaults(func=cmd_validate)
    sub.add_parser("list-experiments", help="list experiment ids").set_defaults(func=cmd_list)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except StageFailure as exc:
        print(f"error [{exc.stage}]: {exc.__cause__}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
