"""Command-line front end.

Subcommands: check, sample, enumerate, sweep, epr-chain.  Settings come from
an optional ``key=value`` file (``--config``) overridden by flags of the same
name.  Results are JSON on stdout (CSV for ``sweep``).  Exit status is 0 on
success, 1 when the post-selected output misses the ideal CNOT, 2 on usage
errors.
"""

from __future__ import annotations

import argparse
import cmath
import csv
import io
import json
import math
import sys
import time
from dataclasses import asdict, dataclass, fields, replace
from typing import Mapping, Optional, Sequence

import numpy as np

from . import protocol as pr
from . import verify as vf
from .devices import DeviceError, NoiseModel
from .qstate import RandomSource, StateVector

EXIT_OK = 0
EXIT_FIDELITY = 1
EXIT_USAGE = 2

FIDELITY_FLOOR = 1 - vf.CONTRACT_TOL
MODES = ("check", "sample", "enumerate", "sweep", "epr-chain")
NOISE_KEYS = (
    "eta_abs",
    "eta_arg",
    "zeta_abs",
    "zeta_arg",
    "delta",
    "k_plus_re",
    "k_plus_im",
    "k_d_re",
    "k_d_im",
    "detector_efficiency",
)
INPUT_CHOICES = ("0", "1", "2", "3", "random", "bell-ancilla")


class ConfigError(ValueError):
    """Bad configuration; the message names the offending key."""


@dataclass(frozen=True)
class RunSpec:
    mode: str = "check"
    eta_abs: float = 1.0
    eta_arg: float = 0.0
    zeta_abs: float = 1.0
    zeta_arg: float = 0.0
    delta: float = 0.0
    k_plus_re: float = 0.0
    k_plus_im: float = 0.0
    k_d_re: float = 0.0
    k_d_im: float = 0.0
    detector_efficiency: float = 1.0
    trials: int = 10_000
    seed: int = 0
    max_retries: int = 100
    input: str = "0"
    sweep_param: Optional[str] = None
    sweep_min: float = 0.0
    sweep_max: float = 1.0
    sweep_steps: int = 11
    node_count: int = 3

    def noise(self) -> NoiseModel:
        return NoiseModel(
            eta=self.eta_abs * cmath.exp(1j * self.eta_arg),
            zeta=self.zeta_abs * cmath.exp(1j * self.zeta_arg),
            delta=self.delta,
            k_plus=complex(self.k_plus_re, self.k_plus_im),
            k_d=complex(self.k_d_re, self.k_d_im),
            detector_efficiency=self.detector_efficiency,
        )

    def echo(self) -> dict:
        return asdict(self)

    def to_config_text(self) -> str:
        lines = [f"{k}={_format_value(v)}" for k, v in self.echo().items() if v is not None]
        return "\n".join(lines) + "\n"


_FIELD_TYPES = {f.name: f.type for f in fields(RunSpec)}


def _format_value(v) -> str:
    return repr(v) if isinstance(v, float) else str(v)


def _coerce(key: str, raw) -> object:
    kind = _FIELD_TYPES[key]
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    try:
        if kind == "float":
            return float(text)
        if kind == "int":
            return int(text)
    except ValueError:
        raise ConfigError(f"{key}: malformed number {raw!r}") from None
    return text


def _validate(spec: RunSpec) -> RunSpec:
    for key in NOISE_KEYS + ("sweep_min", "sweep_max"):
        if not math.isfinite(getattr(spec, key)):
            raise ConfigError(f"{key}: must be finite")
    for key in ("eta_abs", "zeta_abs"):
        if not 0.0 <= getattr(spec, key) <= 1.0:
            raise ConfigError(f"{key}: magnitude {getattr(spec, key)!r} outside [0, 1]")
    if not 0.0 < spec.detector_efficiency <= 1.0:
        raise ConfigError(f"detector_efficiency: {spec.detector_efficiency!r} outside (0, 1]")
    for key in ("trials", "max_retries", "sweep_steps"):
        if getattr(spec, key) < 1:
            raise ConfigError(f"{key}: must be >= 1")
    if spec.seed < 0:
        raise ConfigError("seed: must be >= 0")
    if spec.mode not in MODES:
        raise ConfigError(f"mode: unknown mode {spec.mode!r}")
    if spec.input not in INPUT_CHOICES:
        raise ConfigError(f"input: expected one of {', '.join(INPUT_CHOICES)}, got {spec.input!r}")
    if spec.sweep_param is not None and spec.sweep_param not in NOISE_KEYS:
        raise ConfigError(f"sweep_param: unknown parameter {spec.sweep_param!r}")
    return spec


def parse_config_text(text: str) -> dict[str, str]:
    values = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key=value, got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        values[key] = value
    return values


def parse_config(file_values: Mapping[str, object] = (), flags: Mapping[str, object] = ()) -> RunSpec:
    """Merge file values and flags (flags win) into a validated RunSpec."""
    merged = dict(file_values)
    merged.update({k: v for k, v in dict(flags).items() if v is not None})
    unknown = sorted(set(merged) - set(_FIELD_TYPES))
    if unknown:
        raise ConfigError(f"{unknown[0]}: unknown key")
    kwargs = {}
    for key, raw in merged.items():
        value = _coerce(key, raw)
        if key == "sweep_param" and value in ("", "None"):
            value = None
        kwargs[key] = value
    return _validate(RunSpec(**kwargs))


# --- inputs and output ------------------------------------------------------


def build_input(spec: RunSpec) -> StateVector:
    if spec.input == "random":
        rng = np.random.default_rng([vf.RANDOM_INPUT_SEED, spec.seed])
        return vf.random_input(rng)
    if spec.input == "bell-ancilla":
        return vf.bell_ancilla_input()
    index = int(spec.input)
    return vf.basis_input(index >> 1, index & 1)


def _clean(value):
    """JSON-safe copy: non-finite floats become null."""
    if isinstance(value, float):
        return value if math.isfinite(value) else None
    if isinstance(value, dict):
        return {k: _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    return value


def _emit(record: dict, stream) -> None:
    stream.write(json.dumps(_clean(record), indent=2, allow_nan=False) + "\n")


def _mean_attempts(p: float) -> Optional[float]:
    return 1.0 / p if p > 0 else None


# --- commands ---------------------------------------------------------------


def cmd_check(spec: RunSpec, table=None) -> tuple[int, dict]:
    report = vf.process_check(spec.noise(), table=table)
    record = {"config": spec.echo(), **report.to_dict()}
    return (EXIT_OK if report.passed else EXIT_FIDELITY), record


def cmd_enumerate(spec: RunSpec, table=None, dump_state: bool = False) -> tuple[int, dict]:
    state = build_input(spec)
    records = vf.enumerate_branches(state, spec.noise(), table)
    probs = vf.outcome_probabilities(records)
    worst = vf.worst_success_fidelity(records, vf.ideal_cnot(state))
    record = {
        "config": spec.echo(),
        "success_probability": probs["success"],
        "mean_attempts": _mean_attempts(probs["success"]),
        "worst_fidelity": worst,
        "detector_record_spread": vf.success_spread(records),
        "outcome_probabilities": probs,
        "branch_count": len(records),
        "probability_total": sum(r.probability for r in records),
    }
    if dump_state:
        wins = [r for r in records if r.outcome == "success"]
        if wins:
            best = max(wins, key=lambda r: r.probability)
            record["final_state"] = best.conditional_state.to_json_dict(tol=1e-15)
    return (EXIT_OK if worst >= FIDELITY_FLOOR else EXIT_FIDELITY), record


def cmd_sample(spec: RunSpec, table=None, workers: int = 1, dump_state: bool = False) -> tuple[int, dict]:
    state = build_input(spec)
    report = vf.sampled_vs_exact(state, spec.noise(), spec.trials, spec.seed, spec.max_retries, workers, table)
    empirical = report.counts["success"] / report.attempts_total
    record = {
        "config": spec.echo(),
        "success_probability": empirical,
        "mean_attempts": report.mean_attempts,
        "worst_fidelity": report.worst_fidelity,
        **{k: v for k, v in report.to_dict().items() if k not in ("trials", "worst_fidelity", "mean_attempts")},
    }
    if dump_state:
        config = pr.ProtocolConfig(noise=spec.noise(), max_retries=spec.max_retries, seed=spec.seed)
        try:
            first = pr.run(state, config, source=RandomSource(spec.seed).child(0), table=table)
            record["final_state"] = first.final_state.to_json_dict(tol=1e-15)
        except pr.RetriesExhausted:
            record["final_state"] = None
    ok = report.truncated < report.trials and report.worst_fidelity >= FIDELITY_FLOOR
    return (EXIT_OK if ok else EXIT_FIDELITY), record


SWEEP_COLUMNS = ("value", "success_probability", "mean_attempts", "worst_fidelity")


def sweep_rows(spec: RunSpec, table=None) -> list[tuple]:
    if spec.sweep_param is None:
        raise ConfigError("sweep_param: required for sweep")
    rows = []
    for value in np.linspace(spec.sweep_min, spec.sweep_max, spec.sweep_steps).tolist():
        point = _validate(replace(spec, **{spec.sweep_param: value}))
        report = vf.process_check(point.noise(), table=table)
        rows.append((value, report.success_probability, _mean_attempts(report.success_probability), report.worst_fidelity))
    return rows


def cmd_sweep(spec: RunSpec, table=None) -> tuple[int, str]:
    rows = sweep_rows(spec, table)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SWEEP_COLUMNS)
    for row in rows:
        writer.writerow(["" if v is None else repr(v) for v in row])
    ok = all(r[3] >= FIDELITY_FLOOR for r in rows)
    return (EXIT_OK if ok else EXIT_FIDELITY), buf.getvalue()


def cmd_epr_chain(spec: RunSpec, dump_state: bool = False) -> tuple[int, dict]:
    if spec.node_count < 3:
        raise ConfigError(f"node_count: an EPR chain needs at least 3 nodes, got {spec.node_count}")
    config = pr.ProtocolConfig(noise=spec.noise(), max_retries=spec.max_retries, seed=spec.seed)
    report = pr.share_epr_chain(spec.node_count, config)
    record = {
        "config": spec.echo(),
        "horizontal_fidelities": report.horizontal_fidelities,
        "vertical_fidelities": report.vertical_fidelities,
        "horizontal_after_cnot": report.horizontal_after_cnot,
        "attempts": report.attempts,
        "worst_fidelity": report.worst,
    }
    if dump_state:
        record["final_states"] = [s.to_json_dict(tol=1e-15) for s in report.states]
    return (EXIT_OK if report.worst >= FIDELITY_FLOOR else EXIT_FIDELITY), record


# --- argument parsing -------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="FILE", help="key=value settings file; flags override it")
    for f in fields(RunSpec):
        if f.name == "mode":
            continue
        flag = f.name.replace("_", "-")
        names = [f"--{f.name}"] + ([f"--{flag}"] if flag != f.name else [])
        kwargs = {"dest": f.name, "default": None, "metavar": f.name.upper()}
        if f.name == "input":
            kwargs["help"] = "basis index 0-3 (2*alpha + beta Zeeman), random, or bell-ancilla"
        common.add_argument(*names, **kwargs)
    common.add_argument("--workers", type=int, default=1, help="worker processes for sampling")
    common.add_argument("--out", metavar="FILE", help="write output here instead of stdout")
    common.add_argument("--dump-state", action="store_true", help="include final state amplitudes")
    common.add_argument("--timing", action="store_true", help="add wall_time to the JSON record")
    common.add_argument("--corrupt-extraction-table", action="store_true", help=argparse.SUPPRESS)

    parser = argparse.ArgumentParser(prog="backup-cnot", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="mode", required=True)
    for mode in MODES:
        sub.add_parser(mode, parents=[common])
    return parser


def _read_config_file(path: Optional[str]) -> dict[str, str]:
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            return parse_config_text(fh.read())
    except OSError as exc:
        raise ConfigError(f"config: cannot read {path!r}: {exc.strerror}") from None


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    flags = {f.name: getattr(args, f.name) for f in fields(RunSpec) if f.name != "mode"}
    flags["mode"] = args.mode
    started = time.perf_counter()
    table = pr.corrupted_extraction_table() if args.corrupt_extraction_table else None
    if args.workers < 1:
        print("error: workers: must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        spec = parse_config(_read_config_file(args.config), flags)
        if spec.mode == "sweep":
            code, text = cmd_sweep(spec, table)
        else:
            if spec.mode == "check":
                code, record = cmd_check(spec, table)
            elif spec.mode == "enumerate":
                code, record = cmd_enumerate(spec, table, args.dump_state)
            elif spec.mode == "sample":
                code, record = cmd_sample(spec, table, args.workers, args.dump_state)
            else:
                code, record = cmd_epr_chain(spec, args.dump_state)
            if args.timing:
                record["wall_time"] = time.perf_counter() - started
            buf = io.StringIO()
            _emit(record, buf)
            text = buf.getvalue()
    except (ConfigError, DeviceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except pr.RetriesExhausted as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FIDELITY
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return code


if __name__ == "__main__":
    sys.exit(main())
