"""Command-line front end.

Four commands: `run` executes the cache-assisted scheme, `baseline` one of
the reference schemes, `sweep` repeats a scheme comparison across the values
of one scalar config key, and `validate` runs the library's invariant suite.
Results land as a CSV bundle plus PNG figures in the output directory
(flag, else the CACHEDMIMO_OUTPUT_DIR environment variable, else ./results).

Exit codes: 0 success, 1 usage error, 2 infeasible or invalid
configuration, 3 solver failure or failed validation, 4 I/O failure.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from .config import apply_overrides, known_config_keys, load_config
from .errors import ConfigurationError, SolverError, UsageError
from .report import emit_results, render_sweep, write_summary_csv
from .sim import BASELINES, run_baseline, run_mixed_timescale
from .validate import run_validation

ENV_OUTPUT_DIR = "CACHEDMIMO_OUTPUT_DIR"
DEFAULT_SLOTS = 1000
_VECTOR_KEYS = {"F", "mu", "rho"}   # comma-valued by nature, never a sweep axis
_SWEEP_SEED_STREAM = 0xD0


@dataclass(frozen=True)
class CliInvocation:
    command: str
    config_path: str | None
    overrides: tuple = ()
    output_dir: str = "results"
    seed: int | None = None
    slots: int = DEFAULT_SLOTS
    baseline: str | None = None


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems as exceptions, not sys.exit."""

    def error(self, message):
        raise UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="cachedmimo", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, default=None,
                       help="flat key=value config file")
        p.add_argument("--override", action="append", default=[],
                       metavar="KEY=VALUE",
                       help="config override, applied after the file")
        p.add_argument("--output-dir",
                       default=os.environ.get(ENV_OUTPUT_DIR, "results"),
                       help="directory for the CSV bundle and figures")
        p.add_argument("--seed", type=int, default=None,
                       help="overrides rng_seed from the config")
        p.add_argument("--slots", type=int, default=DEFAULT_SLOTS,
                       help="simulation horizon in slots")

    common(sub.add_parser("run", help="cache-assisted scheme"))
    pb = sub.add_parser("baseline", help="reference scheme")
    pb.add_argument("which", choices=BASELINES)
    common(pb)
    common(sub.add_parser("sweep",
                          help="scheme comparison across one config key"))
    common(sub.add_parser("validate", help="library invariant suite"),
           config_required=False)
    return parser


def parse_invocation(argv) -> CliInvocation:
    """Validated invocation; malformed input raises UsageError naming the
    offending token."""
    ns = _build_parser().parse_args(list(argv))
    overrides = []
    known = known_config_keys()
    for token in ns.override:
        if "=" not in token:
            raise UsageError(f"malformed override '{token}': expected KEY=VALUE")
        key, val = token.split("=", 1)
        key = key.strip()
        if key not in known:
            raise UsageError(f"unknown override key '{key}'")
        overrides.append((key, val.strip()))
    if ns.slots < 1:
        raise UsageError(f"--slots must be positive, got {ns.slots}")
    return CliInvocation(command=ns.command, config_path=ns.config,
                         overrides=tuple(overrides),
                         output_dir=ns.output_dir, seed=ns.seed,
                         slots=ns.slots,
                         baseline=getattr(ns, "which", None))


# ---------------------------------------------------------------------------
# command execution
# ---------------------------------------------------------------------------

def _load_config(inv: CliInvocation, extra_overrides=()) :
    if inv.config_path is None:
        raise UsageError("a --config file is required")
    if not os.path.exists(inv.config_path):
        raise UsageError(f"config file not found: {inv.config_path}")
    cfg = load_config(inv.config_path)
    merged = dict(inv.overrides)
    merged.update(dict(extra_overrides))
    if merged:
        try:
            cfg = apply_overrides(cfg, merged)
        except ConfigurationError as exc:
            raise UsageError(f"bad override: {exc}") from exc
    if inv.seed is not None:
        cfg = apply_overrides(cfg, {"rng_seed": inv.seed})
    return cfg


def _report_paths(paths):
    for p in paths:
        print(f"wrote {p}")


def _cmd_run(inv: CliInvocation) -> int:
    cfg = _load_config(inv)
    result = run_mixed_timescale(cfg, inv.slots)
    _report_paths(emit_results(result, inv.output_dir,
                               extra={"command": "run"}))
    print(f"avg sum power {result.avg_sum_power_db:.6g} dB, "
          f"avg backhaul {result.avg_backhaul_bps / 1e6:.6g} Mbps, "
          f"{result.interruption_count} interruptions")
    return 0


def _cmd_baseline(inv: CliInvocation) -> int:
    cfg = _load_config(inv)
    result = run_baseline(cfg, inv.baseline, inv.slots)
    _report_paths(emit_results(result, inv.output_dir,
                               extra={"command": f"baseline {inv.baseline}"}))
    print(f"avg sum power {result.avg_sum_power_db:.6g} dB, "
          f"avg backhaul {result.avg_backhaul_bps / 1e6:.6g} Mbps, "
          f"{result.interruption_count} interruptions")
    return 0


def _sweep_axis(inv: CliInvocation):
    """The single multi-valued scalar override is the sweep axis."""
    axis = [(k, v) for k, v in inv.overrides
            if "," in v and k not in _VECTOR_KEYS]
    if len(axis) != 1:
        raise UsageError(
            "sweep needs exactly one scalar override with a comma-separated "
            "value list, e.g. --override mu0=1e6,2e6,3e6")
    key, joined = axis[0]
    values = [v for v in (s.strip() for s in joined.split(",")) if v]
    if len(values) < 2:
        raise UsageError(f"sweep axis '{key}' needs at least two values")
    fixed = tuple(p for p in inv.overrides if p != axis[0])
    return key, values, fixed


def _point_seed(master: int, index: int) -> int:
    return int(np.random.SeedSequence(
        entropy=master, spawn_key=(_SWEEP_SEED_STREAM, index))
        .generate_state(1)[0])


def _cmd_sweep(inv: CliInvocation) -> int:
    key, values, fixed = _sweep_axis(inv)
    base_inv = CliInvocation(command=inv.command, config_path=inv.config_path,
                             overrides=fixed, output_dir=inv.output_dir,
                             seed=inv.seed, slots=inv.slots)
    master = _load_config(base_inv).rng_seed
    os.makedirs(inv.output_dir, exist_ok=True)
    results_by_point = []
    paths = []
    for i, val in enumerate(values):
        seed = _point_seed(master, i)
        cfg = _load_config(base_inv, extra_overrides=[(key, val)])
        cfg = apply_overrides(cfg, {"rng_seed": seed})
        point = [run_mixed_timescale(cfg, inv.slots)]
        point += [run_baseline(cfg, b, inv.slots) for b in BASELINES]
        results_by_point.append(point)
        point_dir = os.path.join(inv.output_dir, f"point_{i:02d}_{key}_{val}")
        paths += emit_results(point, point_dir,
                              extra={"command": "sweep", "sweep_key": key,
                                     "sweep_value": val})
        print(f"{key}={val}: proposed {point[0].avg_sum_power_db:.6g} dB, "
              f"{point[0].avg_backhaul_bps / 1e6:.6g} Mbps")
    flat = [r for point in results_by_point for r in point]
    paths.append(write_summary_csv(
        flat, os.path.join(inv.output_dir, "sweep_summary.csv")))
    paths.append(render_sweep(values, results_by_point, key,
                              os.path.join(inv.output_dir, "sweep.png")))
    _report_paths(paths)
    return 0


def _cmd_validate(inv: CliInvocation) -> int:
    if inv.config_path is not None:
        _load_config(inv)   # a bad file must fail the validation run
    results = run_validation(inv.seed if inv.seed is not None else 0)
    failed = [r for r in results if not r.ok]
    for r in results:
        print(f"{'PASS' if r.ok else 'FAIL'} {r.name} - {r.detail}")
    if failed:
        print(f"{len(failed)} of {len(results)} checks failed",
              file=sys.stderr)
        return 3
    print(f"all {len(results)} checks passed")
    return 0


_DISPATCH = {"run": _cmd_run, "baseline": _cmd_baseline,
             "sweep": _cmd_sweep, "validate": _cmd_validate}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        inv = parse_invocation(argv)
        return _DISPATCH[inv.command](inv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except SolverError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
