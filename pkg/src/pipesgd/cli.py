"""Command line front end for training/benchmark runs.

Options can come from flags, from a JSON config file (--config), or from
built-in defaults, in that order of precedence; a flag that contradicts
the config file wins with a warning on stderr.

Exit codes: 0 success, 1 usage or configuration problem, 2 verification
mismatch, 3 transport or protocol failure.
"""

from __future__ import annotations

import argparse
import json
import sys

from .engine.config import TrainConfig
from .errors import (
    ConfigError,
    FormatError,
    InputError,
    ProtocolError,
    TransportError,
    UsageError,
    VerificationError,
)
from .harness import BenchOptions, run_benchmark
from .transport.base import LatencyModel

_CONFIG_KEYS = (
    "ranks",
    "iters",
    "batch",
    "epsilon",
    "seed",
    "layers",
    "pattern",
    "transport",
    "hosts",
    "latency_fixed_ns",
    "latency_per_byte_ns",
    "chunk_bytes",
    "compute_inflation_ns",
    "dataset_size",
    "dataset_csv",
    "input_scale",
    "timeline",
    "checkpoint",
    "metrics",
    "verify_oracle",
)


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse would sys.exit(2); we map usage to 1
        raise UsageError(message)


def _parse_layers(text) -> tuple[int, ...]:
    if isinstance(text, (list, tuple)):
        return tuple(int(v) for v in text)
    try:
        dims = tuple(int(part) for part in str(text).split(",") if part.strip())
    except ValueError as exc:
        raise UsageError(f"--layers wants comma-separated integers, got {text!r}") from exc
    if len(dims) < 2:
        raise UsageError(f"--layers needs at least two widths, got {text!r}")
    return dims


def build_parser() -> _Parser:
    p = _Parser(
        prog="pipesgd-bench",
        description="Distributed SGD benchmark: pipelined engine vs barrier baseline.",
    )
    p.add_argument("--ranks", type=int, help="world size (default 4)")
    p.add_argument("--iters", type=int, help="training iterations (default 50)")
    p.add_argument("--batch", type=int, help="global batch size (default 64)")
    p.add_argument("--epsilon", type=float, help="learning rate (default 0.05)")
    p.add_argument("--seed", type=int, help="run seed (default 42)")
    p.add_argument("--layers", help="network widths, e.g. 64,128,128,64,10")
    p.add_argument(
        "--pattern",
        choices=["pipelined", "barrier", "both"],
        help="communication pattern to run (default pipelined)",
    )
    p.add_argument(
        "--transport", choices=["inproc", "tcp"], help="rank transport (default inproc)"
    )
    p.add_argument("--hosts", help="comma-separated listen host per rank (loopback only)")
    p.add_argument("--latency-fixed-ns", type=int, help="injected per-message latency")
    p.add_argument("--latency-per-byte-ns", type=float, help="injected per-byte latency")
    p.add_argument("--chunk-bytes", type=int, help="transfer chunk size (default 65536)")
    p.add_argument(
        "--compute-inflation-ns", type=int, help="extra sleep per backward layer, for benchmarks"
    )
    p.add_argument("--dataset-size", type=int, help="synthetic dataset rows (default 256)")
    p.add_argument("--dataset-csv", help="train from CSV rows x...,t... instead of synthetic data")
    p.add_argument("--input-scale", type=float, help="synthetic input magnitude (default 1.0)")
    p.add_argument("--timeline", help="write per-rank event timeline CSV here")
    p.add_argument("--checkpoint", help="write the final model checkpoint here")
    p.add_argument("--metrics", help="write key=value metrics here")
    p.add_argument(
        "--verify-oracle",
        action="store_true",
        default=None,
        help="check results bit-for-bit against the single-process reference optimizer",
    )
    p.add_argument("--config", help="JSON file with defaults for any of the above")
    p.add_argument("--quiet", action="store_true", help="suppress progress output")
    return p


def _load_config_file(path: str) -> dict:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read config file: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise UsageError(f"{path} must hold a JSON object")
    for key in raw:
        if key not in _CONFIG_KEYS:
            raise UsageError(f"{path}: unknown option {key!r}")
    return raw


def _resolve(args: argparse.Namespace, file_values: dict) -> dict:
    """Merge flag values over config file values, warning on conflicts."""
    merged = dict(file_values)
    for key in _CONFIG_KEYS:
        flag_value = getattr(args, key.replace("-", "_"), None)
        if flag_value is None:
            continue
        if key in file_values and file_values[key] != flag_value:
            print(
                f"warning: --{key.replace('_', '-')}={flag_value} overrides config "
                f"file value {file_values[key]!r}",
                file=sys.stderr,
            )
        merged[key] = flag_value
    return merged


def options_from_args(args: argparse.Namespace) -> BenchOptions:
    file_values = _load_config_file(args.config) if args.config else {}
    values = _resolve(args, file_values)

    config_kwargs = {}
    if "ranks" in values:
        config_kwargs["world_size"] = values["ranks"]
    if "iters" in values:
        config_kwargs["iterations"] = values["iters"]
    if "batch" in values:
        config_kwargs["batch_size"] = values["batch"]
    if "epsilon" in values:
        config_kwargs["epsilon"] = values["epsilon"]
    if "seed" in values:
        config_kwargs["seed"] = values["seed"]
    if "layers" in values:
        config_kwargs["layer_dims"] = _parse_layers(values["layers"])
    if "chunk_bytes" in values:
        config_kwargs["chunk_bytes"] = values["chunk_bytes"]
    if "compute_inflation_ns" in values:
        config_kwargs["compute_inflation_ns"] = values["compute_inflation_ns"]
    if "dataset_size" in values:
        config_kwargs["dataset_size"] = values["dataset_size"]
    if "input_scale" in values:
        config_kwargs["input_scale"] = values["input_scale"]
    pattern = values.get("pattern", "pipelined")
    config = TrainConfig(pattern="pipelined", **config_kwargs)

    latency = None
    fixed = values.get("latency_fixed_ns", 0)
    per_byte = values.get("latency_per_byte_ns", 0.0)
    if fixed or per_byte:
        latency = LatencyModel(fixed_ns=fixed, per_byte_ns=per_byte)

    hosts = None
    if values.get("hosts"):
        hosts = [h.strip() for h in str(values["hosts"]).split(",") if h.strip()]

    return BenchOptions(
        config=config,
        transport=values.get("transport", "inproc"),
        patterns=("pipelined", "barrier") if pattern == "both" else (pattern,),
        latency=latency,
        hosts=hosts,
        dataset_csv=values.get("dataset_csv"),
        timeline_path=values.get("timeline"),
        metrics_path=values.get("metrics"),
        checkpoint_path=values.get("checkpoint"),
        verify_oracle=bool(values.get("verify_oracle")),
        quiet=bool(args.quiet),
    )


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        options = options_from_args(args)
    except (UsageError, ConfigError, InputError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    try:
        run_benchmark(options)
    except (ConfigError, InputError, FormatError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except VerificationError as exc:
        print(f"verification failed: {exc}", file=sys.stderr)
        return 2
    except (TransportError, ProtocolError) as exc:
        print(f"transport failure: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
