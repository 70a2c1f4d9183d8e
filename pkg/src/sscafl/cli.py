"""Experiment runner: flat key=value configs in, per-round metrics CSV out.

The config format is deliberately flat (one `key = value` per line, `#`
comments) so that any language can parse it identically; unknown keys are
rejected outright. Output files are byte-deterministic for a fixed config:
floats are printed with repr, repetition seeds derive as seed + rep, and the
elapsed_ms column is always left empty (wall time goes to stderr instead so
the file bytes never depend on the machine).
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path
from typing import Mapping

import numpy as np

from . import __version__
from .baselines import SgdConfig
from .data import RawDataset, load_idx, synth_dataset
from .errors import ConfigError, IngestionError, SscaflError
from .federation import (
    PartitionedDataset,
    RoundConfig,
    RoundMetrics,
    SAMPLE_MODE,
    run_session,
)
from .schedules import power_decay, validate_pair

DEFAULTS: dict[str, str] = {
    "algorithm": "",
    "clients": "4",
    "rounds": "100",
    "batch": "100",
    "tau": "0.2",
    "rho.a": "0.9",
    "rho.alpha": "0.1",
    "gamma.a": "0.5",
    "gamma.alpha": "0.1",
    "lam": "0.0",
    "ubound": "none",
    "penalty": "100000.0",
    "j_hidden": "16",
    "baseline.E": "1",
    "baseline.lr.a": "0.3",
    "baseline.lr.alpha": "0.3",
    "baseline.momentum": "0.0",
    "schedule.strict": "false",
    "seed": "0",
    "reps": "1",
    "transport": "in-process",
    "out": "",
    "data.source": "synthetic",
    "data.synthetic": "2000,20,4,5.0,0",
    "data.images": "",
    "data.labels": "",
    "data.test_images": "",
    "data.test_labels": "",
}

# published experiment constants: T=1000 rounds, penalty 1e5, lam 1e-5,
# U=0.13, ten clients, 128 hidden units, and per-batch-size stepsize grids
_SHARED_PRESET = {
    "rounds": "1000",
    "penalty": "100000.0",
    "lam": "1e-05",
    "ubound": "0.13",
    "clients": "10",
    "j_hidden": "128",
}


def _grid(batch, a1, a2, alpha, tau):
    keys = dict(_SHARED_PRESET)
    keys.update(
        {
            "batch": batch,
            "rho.a": a1,
            "rho.alpha": alpha,
            "gamma.a": a2,
            "gamma.alpha": alpha,
            "tau": tau,
        }
    )
    return keys


PRESETS: dict[str, dict[str, str]] = {
    "mnist-sample-b10": _grid("10", "0.9", "0.5", "0.1", "0.2"),
    "mnist-sample-b100": _grid("100", "0.3", "0.3", "0.1", "0.05"),
    "mnist-sample-b6000": _grid("6000", "0.2", "0.3", "0.1", "0.03"),
    "mnist-feature-b10": _grid("10", "0.9", "0.3", "0.3", "0.1"),
    "mnist-feature-b100": _grid("100", "0.9", "0.5", "0.1", "0.2"),
    "mnist-feature-b1000": _grid("1000", "0.3", "0.3", "0.1", "0.05"),
    "mnist-sgd": dict(
        _SHARED_PRESET,
        **{"baseline.lr.a": "0.3", "baseline.lr.alpha": "0.3", "baseline.momentum": "0.0"},
    ),
    "mnist-sgdm": dict(
        _SHARED_PRESET,
        **{"baseline.lr.a": "0.3", "baseline.lr.alpha": "0.0", "baseline.momentum": "0.1"},
    ),
}


def parse_config_text(text: str) -> dict[str, str]:
    """Parse `key = value` lines; blank lines and # comments are skipped."""
    mapping: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key != "preset" and key not in DEFAULTS:
            raise ConfigError(f"config line {lineno}: unknown key {key!r}")
        if key in mapping:
            raise ConfigError(f"config line {lineno}: duplicate key {key!r}")
        mapping[key] = value
    return mapping


def effective_config(mapping: Mapping[str, str]) -> dict[str, str]:
    """Defaults, then the named preset, then explicit keys, in that order."""
    cfg = dict(DEFAULTS)
    preset = mapping.get("preset")
    if preset is not None:
        if preset not in PRESETS:
            names = ", ".join(sorted(PRESETS))
            raise ConfigError(f"unknown preset {preset!r}; available: {names}")
        cfg["preset"] = preset
        cfg.update(PRESETS[preset])
    for key, value in mapping.items():
        if key != "preset":
            cfg[key] = value
    return cfg


def _int(cfg: Mapping[str, str], key: str) -> int:
    try:
        return int(cfg[key])
    except ValueError:
        raise ConfigError(f"{key} must be an integer, got {cfg[key]!r}") from None


def _float(cfg: Mapping[str, str], key: str) -> float:
    try:
        return float(cfg[key])
    except ValueError:
        raise ConfigError(f"{key} must be a number, got {cfg[key]!r}") from None


def _bool(cfg: Mapping[str, str], key: str) -> bool:
    value = cfg[key].lower()
    if value not in ("true", "false"):
        raise ConfigError(f"{key} must be true or false, got {cfg[key]!r}")
    return value == "true"


def build_round_config(cfg: Mapping[str, str]) -> RoundConfig:
    algorithm = cfg["algorithm"]
    if not algorithm:
        raise ConfigError("algorithm is required")
    ubound = None if cfg["ubound"] in ("", "none") else _float(cfg, "ubound")
    sgd = None
    if algorithm.startswith("sgd"):
        try:
            lr = power_decay(_float(cfg, "baseline.lr.a"), _float(cfg, "baseline.lr.alpha"))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        sgd = SgdConfig(
            lr=lr,
            local_steps=_int(cfg, "baseline.E"),
            momentum=_float(cfg, "baseline.momentum"),
        )
    try:
        rho = power_decay(_float(cfg, "rho.a"), _float(cfg, "rho.alpha"))
        gamma = power_decay(_float(cfg, "gamma.a"), _float(cfg, "gamma.alpha"))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return RoundConfig(
        algorithm=algorithm,
        batch=_int(cfg, "batch"),
        rounds=_int(cfg, "rounds"),
        tau=_float(cfg, "tau"),
        rho=rho,
        gamma=gamma,
        lam=_float(cfg, "lam"),
        ubound=ubound,
        penalty=_float(cfg, "penalty"),
        j_hidden=_int(cfg, "j_hidden"),
        sgd=sgd,
    )


def build_datasets(cfg: Mapping[str, str]) -> tuple[RawDataset, RawDataset]:
    source = cfg["data.source"]
    if source == "synthetic":
        parts = cfg["data.synthetic"].split(",")
        if len(parts) != 5:
            raise ConfigError(
                f"data.synthetic must be 'N,P,L,separation,seed', got {cfg['data.synthetic']!r}"
            )
        try:
            n, p, l_classes = int(parts[0]), int(parts[1]), int(parts[2])
            separation, seed = float(parts[3]), int(parts[4])
        except ValueError:
            raise ConfigError(f"bad data.synthetic value {cfg['data.synthetic']!r}") from None
        try:
            return synth_dataset(seed, n, p, l_classes, separation)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    if source == "idx":
        if not cfg["data.images"] or not cfg["data.labels"]:
            raise ConfigError("data.images and data.labels are required when data.source = idx")
        train = load_idx(cfg["data.images"], cfg["data.labels"])
        if cfg["data.test_images"] and cfg["data.test_labels"]:
            test = load_idx(cfg["data.test_images"], cfg["data.test_labels"])
        else:
            test = train
        return train, test
    raise ConfigError(f"data.source must be 'synthetic' or 'idx', got {source!r}")


def build_partition(config: RoundConfig, cfg: Mapping[str, str], train: RawDataset) -> PartitionedDataset:
    clients = _int(cfg, "clients")
    try:
        if config.mode == SAMPLE_MODE:
            return PartitionedDataset.by_samples(train, clients)
        return PartitionedDataset.by_features(train, clients)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def schedule_advisory(config: RoundConfig, strict: bool) -> list[str]:
    """Diminishing-stepsize check: warnings by default, errors under strict."""
    if config.is_sgd:
        return []
    report = validate_pair(config.rho, config.gamma)
    if report.all_ok:
        return []
    if strict:
        raise ConfigError("schedule conditions violated: " + "; ".join(report.notes))
    return [f"schedule warning: {note}" for note in report.notes]


def _fmt(x) -> str:
    return repr(float(x))


def _samples_per_round(config: RoundConfig) -> int:
    if config.is_sgd and config.mode == SAMPLE_MODE:
        return config.batch * config.sgd.local_steps
    return config.batch


def _header_lines(cfg: Mapping[str, str], config: RoundConfig) -> list[str]:
    # transport is excluded from the echo: results are transport-invariant,
    # and the emitted bytes must not depend on how the rounds were carried
    lines = [f"# sscafl {__version__}"]
    lines.extend(f"# {key} = {cfg[key]}" for key in sorted(cfg) if key != "transport")
    lines.append(f"# samples_per_round = {_samples_per_round(config)}")
    return lines


def _columns(constrained: bool) -> str:
    names = ["round", "training_cost", "test_accuracy", "l2_norm"]
    if constrained:
        names += ["constraint_value", "slack"]
    return ",".join(names + ["elapsed_ms"])


def _metric_row(m: RoundMetrics, constrained: bool) -> str:
    parts = [str(m.round), _fmt(m.training_cost), _fmt(m.test_accuracy), _fmt(m.l2_norm)]
    if constrained:
        parts += [_fmt(m.constraint_value), _fmt(m.slack)]
    return ",".join(parts + [""])


def _mean_row(per_rep: list[RoundMetrics], constrained: bool) -> str:
    parts = [
        str(per_rep[0].round),
        _fmt(np.mean([m.training_cost for m in per_rep])),
        _fmt(np.mean([m.test_accuracy for m in per_rep])),
        _fmt(np.mean([m.l2_norm for m in per_rep])),
    ]
    if constrained:
        parts += [
            _fmt(np.mean([m.constraint_value for m in per_rep])),
            _fmt(np.mean([m.slack for m in per_rep])),
        ]
    return ",".join(parts + [""])


def _run_reps(cfg: Mapping[str, str], config: RoundConfig):
    """All repetitions of a configured session; returns per-rep metric lists."""
    train, test = build_datasets(cfg)
    dataset = build_partition(config, cfg, train)
    seed = _int(cfg, "seed")
    reps = _int(cfg, "reps")
    if seed < 0:
        raise ConfigError(f"seed must be nonnegative, got {seed}")
    if reps < 1:
        raise ConfigError(f"reps must be >= 1, got {reps}")
    started = time.perf_counter()
    results = [
        run_session(config, dataset, test, seed + rep, transport=cfg["transport"])
        for rep in range(reps)
    ]
    elapsed = 1000.0 * (time.perf_counter() - started)
    print(
        f"{config.algorithm}: {reps} rep(s) x {config.rounds} rounds in {elapsed:.0f} ms",
        file=sys.stderr,
    )
    return results


def run_experiment(cfg: Mapping[str, str]) -> str:
    """Run reps full sessions and render the per-round metrics CSV."""
    config = build_round_config(cfg)
    for warning in schedule_advisory(config, _bool(cfg, "schedule.strict")):
        print(warning, file=sys.stderr)
    results = _run_reps(cfg, config)
    constrained = config.constrained
    lines = _header_lines(cfg, config)
    lines.append(_columns(constrained))
    for rep, result in enumerate(results):
        lines.append(f"# rep {rep}")
        lines.extend(_metric_row(m, constrained) for m in result.metrics)
    lines.append("# mean")
    for r in range(config.rounds):
        lines.append(_mean_row([result.metrics[r] for result in results], constrained))
    return "\n".join(lines) + "\n"


def run_tradeoff_sweep(cfg: Mapping[str, str], key: str, values) -> str:
    """Final cost and final model norm for each value of lam or ubound."""
    if key not in ("lam", "ubound"):
        raise ConfigError(f"sweep key must be 'lam' or 'ubound', got {key!r}")
    values = [float(v) for v in values]
    if not values:
        raise ConfigError("sweep values must be nonempty")
    base = build_round_config(cfg)
    for warning in schedule_advisory(base, _bool(cfg, "schedule.strict")):
        print(warning, file=sys.stderr)
    lines = _header_lines(cfg, base)
    lines.append(f"# sweep = {key}")
    lines.append(f"{key},final_training_cost,final_l2_norm")
    for value in values:
        point = dict(cfg)
        point[key] = _fmt(value)
        config = build_round_config(point)
        results = _run_reps(point, config)
        cost = np.mean([result.final.training_cost for result in results])
        l2 = np.mean([result.final.l2_norm for result in results])
        lines.append(f"{_fmt(value)},{_fmt(cost)},{_fmt(l2)}")
    return "\n".join(lines) + "\n"


def _load_effective(args) -> dict[str, str]:
    try:
        text = Path(args.config).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {args.config!r}: {exc}") from None
    cfg = effective_config(parse_config_text(text))
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = str(args.seed)
    if getattr(args, "out", None):
        cfg["out"] = args.out
    if getattr(args, "synthetic", None):
        cfg["data.source"] = "synthetic"
        cfg["data.synthetic"] = args.synthetic
    if getattr(args, "mnist_images", None):
        cfg["data.source"] = "idx"
        cfg["data.images"] = args.mnist_images
    if getattr(args, "mnist_labels", None):
        cfg["data.source"] = "idx"
        cfg["data.labels"] = args.mnist_labels
    return cfg


def _emit(cfg: Mapping[str, str], text: str) -> None:
    if cfg["out"]:
        Path(cfg["out"]).write_text(text)
    else:
        sys.stdout.write(text)


def _parse_values(raw: str) -> list[float]:
    try:
        return [float(part) for part in raw.split(",") if part.strip()]
    except ValueError:
        raise ConfigError(f"expected comma-separated numbers, got {raw!r}") from None


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", required=True, help="flat key=value config file")
    parser.add_argument("--out", help="output CSV path (default: stdout)")
    parser.add_argument("--seed", type=int, help="override the master seed")
    parser.add_argument("--synthetic", metavar="N,P,L,SEP,SEED", help="use a synthetic dataset")
    parser.add_argument("--mnist-images", help="IDX image file (sets data.source = idx)")
    parser.add_argument("--mnist-labels", help="IDX label file (sets data.source = idx)")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="sscafl", description="federated surrogate-optimization experiment runner"
    )
    sub = parser.add_subparsers(dest="command", required=True)
    _add_common(sub.add_parser("run", help="run an experiment and emit per-round metrics"))
    sweep = sub.add_parser("sweep", help="sweep lam or ubound and emit final metrics")
    _add_common(sweep)
    pick = sweep.add_mutually_exclusive_group(required=True)
    pick.add_argument("--lambda", dest="lam_values", metavar="V1,V2,...")
    pick.add_argument("--ubound", dest="ubound_values", metavar="V1,V2,...")
    check = sub.add_parser("check", help="print the stepsize-schedule validity report")
    check.add_argument("--config", required=True)
    args = parser.parse_args(argv)

    try:
        cfg = _load_effective(args)
        if args.command == "run":
            _emit(cfg, run_experiment(cfg))
        elif args.command == "sweep":
            if args.lam_values is not None:
                text = run_tradeoff_sweep(cfg, "lam", _parse_values(args.lam_values))
            else:
                text = run_tradeoff_sweep(cfg, "ubound", _parse_values(args.ubound_values))
            _emit(cfg, text)
        else:
            config = build_round_config(cfg)
            report = validate_pair(config.rho, config.gamma)
            print(f"rho valid: {report.rho_ok}")
            print(f"gamma^2 summable: {report.gamma_square_summable}")
            print(f"gamma/rho vanishes: {report.gamma_over_rho_vanishes}")
            for note in report.notes:
                print(f"note: {note}")
            print(f"all conditions hold: {report.all_ok}")
    except (ConfigError, IngestionError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except SscaflError as exc:
        print(f"runtime abort: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
