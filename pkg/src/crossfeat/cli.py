"""Config-driven experiment runner.

Subcommands: ``synth-verify`` (closed-form theory against its oracles),
``gen-data`` (planted dataset to disk), ``train``, ``eval``, ``attribution``,
``sweep`` (epsilon x mode x seed grid with median aggregation), and
``report`` (render a previous output directory).

Configs are JSON.  Every key is checked against the schema below and unknown
keys are rejected with their dotted location.  Results are written as
line-delimited records plus a ``summary.json``; both are deterministic for a
fixed config and seed (wall-clock metadata goes to a separate file).  The
exit status is 0 iff every embedded assertion passed.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import statistics
import sys
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import __version__
from .attack import AttackConfig
from .attribution import (cas, class_attribution_matrix, instance_cas_matrix,
                          load_matrix, matrix_diff, save_matrix)
from .data import Dataset, PlantedSpec, generate_planted, load_tabular, save_tabular
from .model import Classifier, load_checkpoint
from .numerics import RngStream
from .synthetic import SyntheticParams, run_verification
from .training import (TrainConfig, detect_collapse, evaluate, train)

__all__ = ["ConfigError", "Report", "cmd_attribution", "cmd_eval",
           "cmd_gen_data", "cmd_report", "cmd_sweep", "cmd_synth_verify",
           "cmd_train", "main"]


class ConfigError(ValueError):
    """Config rejected before execution; the message names the location."""


# ---------------------------------------------------------------------------
# Config schema
# ---------------------------------------------------------------------------

_SCHEMA = {
    "out_dir": None,
    "seed": None,
    "format": None,
    "synthetic": {"mu": None, "sigma": None, "lam": None, "mc_samples": None,
                  "oracle_steps": None, "seed": None},
    "data": {
        "planted": {"classes": None, "replication": None, "noise_dims": None,
                    "mu": None, "sigma": None, "rotate": None, "n_train": None,
                    "n_test": None, "seed": None},
        "train_path": None, "test_path": None, "format": None, "class_count": None,
    },
    "model": {"hidden": None, "hidden_bias": None, "head_bias": None},
    "train": {"epochs": None, "batch_size": None, "lr": None,
              "decay_fractions": None, "decay_factor": None, "momentum": None,
              "weight_decay": None, "mode": None, "beta": None,
              "lambda_mix": None, "temperature": None, "teacher": None},
    "attack": {"norm": None, "epsilon": None, "step_size": None, "steps": None,
               "random_start": None, "input_bounds": None},
    "eval_attack": {"norm": None, "epsilon": None, "step_size": None,
                    "steps": None, "random_start": None, "input_bounds": None},
    "attribution": {"checkpoint": None, "checkpoint_last": None, "clean": None},
    "eval": {"checkpoint": None},
    "sweep": {"epsilons": None, "modes": None, "seeds": None},
}


def _validate_keys(obj, schema, path: str) -> None:
    if not isinstance(obj, dict):
        raise ConfigError(f"{path or 'config'}: expected an object, got {type(obj).__name__}")
    for key, value in obj.items():
        location = f"{path}.{key}" if path else key
        if key not in schema:
            raise ConfigError(f"unknown config key {location!r}")
        sub = schema[key]
        if isinstance(sub, dict) and isinstance(value, dict):
            _validate_keys(value, sub, location)
        elif isinstance(sub, dict) and value is not None:
            raise ConfigError(f"{location}: expected an object")


def load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            config = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}")
    _validate_keys(config, _SCHEMA, "")
    return config


def config_hash(config: dict) -> str:
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


# ---------------------------------------------------------------------------
# Section builders
# ---------------------------------------------------------------------------


def _build(section: str, ctor, kwargs: dict):
    try:
        return ctor(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{section}: {exc}") from exc


def _attack_from(config: dict, key: str = "attack") -> AttackConfig | None:
    section = config.get(key)
    if section is None:
        return None
    kwargs = dict(section)
    if isinstance(kwargs.get("input_bounds"), list):
        kwargs["input_bounds"] = tuple(kwargs["input_bounds"])
    return _build(key, AttackConfig, kwargs)


def _planted_from(config: dict, seed: int | None) -> PlantedSpec | None:
    planted = config.get("data", {}).get("planted")
    if planted is None:
        return None
    kwargs = dict(planted)
    if seed is not None:
        kwargs["seed"] = seed
    return _build("data.planted", PlantedSpec, kwargs)


def _datasets_from(config: dict, seed: int | None) -> tuple[Dataset, Dataset]:
    spec = _planted_from(config, seed)
    if spec is not None:
        return generate_planted(spec)
    data = config.get("data", {})
    if "train_path" not in data or "test_path" not in data:
        raise ConfigError("data: need either data.planted or train_path + test_path")
    fmt = data.get("format", "delimited-text")
    count = data.get("class_count")
    return (load_tabular(data["train_path"], fmt, count),
            load_tabular(data["test_path"], fmt, count))


def _test_set_from(config: dict, seed: int | None) -> Dataset:
    return _datasets_from(config, seed)[1]


def _model_from(config: dict, input_dim: int, classes: int, seed: int) -> Classifier:
    section = config.get("model", {})
    hidden = tuple(section.get("hidden", [32, 32]))
    return Classifier.create(
        input_dim, hidden, classes, RngStream(seed).split(0),
        hidden_bias=section.get("hidden_bias", True),
        head_bias=section.get("head_bias", False),
    )


def _train_cfg_from(config: dict, seed: int, out_dir: str | None) -> TrainConfig:
    section = dict(config.get("train", {}))
    if "epochs" not in section:
        raise ConfigError("train.epochs is required")
    attack = _attack_from(config) or AttackConfig()
    if "decay_fractions" in section:
        section["decay_fractions"] = tuple(section["decay_fractions"])
    return _build("train", TrainConfig, dict(
        section, attack=attack, eval_attack=_attack_from(config, "eval_attack"),
        seed=seed, out_dir=out_dir))


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


@dataclass
class Report:
    """Deterministic run result: metadata, records, and the overall verdict."""

    command: str
    metadata: dict
    records: list[dict] = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    passed: bool = True

    def write(self, out_dir: str | None) -> None:
        if out_dir is None:
            return
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "records.jsonl"), "w", encoding="utf-8") as fh:
            for record in self.records:
                fh.write(json.dumps(record, sort_keys=True) + "\n")
        payload = {
            "command": self.command,
            "metadata": self.metadata,
            "summary": self.summary,
            "passed": self.passed,
        }
        with open(os.path.join(out_dir, "summary.json"), "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
        # Wall-clock data stays out of the deterministic files.
        with open(os.path.join(out_dir, "metadata.json"), "w", encoding="utf-8") as fh:
            json.dump({"wall_time": time.time()}, fh)
            fh.write("\n")

    def render(self, fmt: str) -> str:
        if fmt == "records":
            return "\n".join(json.dumps(r, sort_keys=True) for r in self.records)
        lines = [f"[{self.command}] passed={self.passed}"]
        for key, value in sorted(self.summary.items()):
            lines.append(f"  {key}: {value}")
        return "\n".join(lines)


def _base_metadata(command: str, config: dict, seed: int | None) -> dict:
    return {
        "command": command,
        "config_hash": config_hash(config),
        "version": __version__,
        "seed": seed,
    }


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_synth_verify(config: dict, out_dir: str | None = None,
                     seed: int | None = None) -> Report:
    section = dict(config.get("synthetic", {}))
    mc_samples = int(section.pop("mc_samples", 200_000))
    oracle_steps = int(section.pop("oracle_steps", 10_000))
    run_seed = seed if seed is not None else int(section.pop("seed", 0))
    section.pop("seed", None)
    params = _build("synthetic", SyntheticParams, section)
    checks = run_verification(params, seed=run_seed, mc_samples=mc_samples,
                              oracle_steps=oracle_steps)
    failures = [c for c in checks if c.status == "fail"]
    counts = {status: sum(1 for c in checks if c.status == status)
              for status in ("pass", "fail", "boundary", "info")}
    report = Report(
        command="synth-verify",
        metadata=_base_metadata("synth-verify", config, run_seed),
        records=[c.as_dict() for c in checks],
        summary={"checks": len(checks), **counts,
                 "failed_names": sorted({c.name for c in failures})},
        passed=not failures,
    )
    report.write(out_dir)
    return report


def cmd_gen_data(config: dict, out_dir: str | None = None,
                 seed: int | None = None) -> Report:
    spec = _planted_from(config, seed)
    if spec is None:
        raise ConfigError("gen-data requires a data.planted section")
    if out_dir is None:
        raise ConfigError("gen-data requires an output directory")
    train_set, test_set = generate_planted(spec)
    os.makedirs(out_dir, exist_ok=True)
    save_tabular(train_set, os.path.join(out_dir, "train.csv"))
    save_tabular(test_set, os.path.join(out_dir, "test.csv"))
    report = Report(
        command="gen-data",
        metadata=_base_metadata("gen-data", config, spec.seed),
        records=[{"split": "train", "rows": len(train_set), "dims": spec.total_dim},
                 {"split": "test", "rows": len(test_set), "dims": spec.total_dim}],
        summary={"classes": spec.classes, "total_dim": spec.total_dim,
                 "spec_hash": spec.spec_hash(),
                 "train_rows": len(train_set), "test_rows": len(test_set)},
    )
    report.write(out_dir)
    return report


def _run_training(config: dict, seed: int, out_dir: str | None):
    train_set, test_set = _datasets_from(config, None)
    model = _model_from(config, train_set.inputs.shape[1], train_set.class_count, seed)
    cfg = _train_cfg_from(config, seed, out_dir)
    record = train(model, train_set, test_set, cfg)
    return record, cfg, test_set


def cmd_train(config: dict, out_dir: str | None = None,
              seed: int | None = None) -> Report:
    run_seed = seed if seed is not None else int(config.get("seed", 0))
    record, cfg, _ = _run_training(config, run_seed, out_dir)
    rows = [row.as_dict() for row in record.rows]
    best = record.best_row()
    last = record.last_row()
    collapse = detect_collapse(record.rows)
    summary = {
        "mode": cfg.mode,
        "epochs": cfg.epochs,
        "epsilon": cfg.attack.epsilon,
        "best_epoch": record.best_epoch,
        "ra_best": None if best is None else best.test_robust_acc,
        "ra_last": None if last is None else last.test_robust_acc,
        "cas_best": None if best is None else best.cas,
        "cas_last": None if last is None else last.cas,
        "catastrophic_overfitting": collapse,
    }
    report = Report(
        command="train",
        metadata=_base_metadata("train", config, run_seed),
        records=rows,
        summary=summary,
    )
    report.write(out_dir)
    return report


def cmd_eval(config: dict, out_dir: str | None = None,
             seed: int | None = None) -> Report:
    section = config.get("eval", {})
    if "checkpoint" not in section:
        raise ConfigError("eval.checkpoint is required")
    model, epoch, _ = load_checkpoint(section["checkpoint"])
    run_seed = seed if seed is not None else int(config.get("seed", 0))
    test_set = _test_set_from(config, None)
    attack = _attack_from(config)
    metrics = evaluate(model, test_set, attack, RngStream(run_seed))
    report = Report(
        command="eval",
        metadata=_base_metadata("eval", config, run_seed),
        records=[{"checkpoint": section["checkpoint"], "epoch": epoch, **metrics}],
        summary=dict(metrics),
    )
    report.write(out_dir)
    return report


def _attribution_for(model: Classifier, test_set: Dataset,
                     attack: AttackConfig | None, clean: bool, run_seed: int,
                     checkpoint_id: str):
    use_attack = None if clean else attack
    rng = RngStream(run_seed).split(7)
    metrics = evaluate(model, test_set, use_attack, rng)
    matrix = class_attribution_matrix(
        model, test_set, use_attack, rng.split(0),
        provenance={"checkpoint": checkpoint_id})
    icas_matrix, icas = instance_cas_matrix(
        model, test_set, use_attack, rng.split(1),
        provenance={"checkpoint": checkpoint_id})
    return matrix, icas_matrix, {
        "checkpoint": checkpoint_id,
        "cas": cas(matrix),
        "icas": icas,
        "robust_acc": metrics["robust_acc"],
        "clean_acc": metrics["clean_acc"],
    }


def cmd_attribution(config: dict, out_dir: str | None = None,
                    seed: int | None = None) -> Report:
    section = config.get("attribution", {})
    if "checkpoint" not in section:
        raise ConfigError("attribution.checkpoint is required")
    run_seed = seed if seed is not None else int(config.get("seed", 0))
    test_set = _test_set_from(config, None)
    attack = _attack_from(config)
    clean = bool(section.get("clean", False)) or attack is None or attack.epsilon == 0.0
    model, _, _ = load_checkpoint(section["checkpoint"])
    matrix, icas_matrix, record = _attribution_for(
        model, test_set, attack, clean, run_seed, section["checkpoint"])
    records = [record]
    summary = {"cas": record["cas"], "icas": record["icas"],
               "robust_acc": record["robust_acc"], "clean_attribution": clean}
    diff_summary = {}
    matrices = {"attribution_matrix.txt": matrix,
                "instance_matrix.txt": icas_matrix}
    if "checkpoint_last" in section and section["checkpoint_last"]:
        other, _, _ = load_checkpoint(section["checkpoint_last"])
        if other.class_count != model.class_count:
            raise ConfigError("attribution: checkpoints have different class counts")
        last_matrix, last_icas, last_record = _attribution_for(
            other, test_set, attack, clean, run_seed, section["checkpoint_last"])
        records.append(last_record)
        diff, delta = matrix_diff(matrix, last_matrix)
        diff_summary = {"delta_cas": delta}
        matrices["attribution_matrix_last.txt"] = last_matrix
        matrices["instance_matrix_last.txt"] = last_icas
        matrices["attribution_diff.txt"] = diff
        summary.update(diff_summary)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        for name, m in matrices.items():
            save_matrix(m, os.path.join(out_dir, name))
    report = Report(
        command="attribution",
        metadata=_base_metadata("attribution", config, run_seed),
        records=records,
        summary=summary,
    )
    report.write(out_dir)
    return report


def cmd_sweep(config: dict, out_dir: str | None = None,
              seed: int | None = None) -> Report:
    section = config.get("sweep", {})
    epsilons = section.get("epsilons")
    modes = section.get("modes")
    seeds = section.get("seeds", [1, 2, 3])
    if not epsilons or not modes or not seeds:
        raise ConfigError("sweep requires nonempty epsilons, modes, and seeds")
    rows: list[dict] = []
    any_failed = False
    for eps in epsilons:
        for mode in modes:
            for cell_seed in seeds:
                cell_dir = None
                if out_dir is not None:
                    cell_dir = os.path.join(
                        out_dir, "cells", f"eps{eps:g}_{mode}_s{cell_seed}")
                cell_config = json.loads(json.dumps(config))
                cell_config.setdefault("attack", {})["epsilon"] = eps
                cell_config.setdefault("train", {})["mode"] = mode
                try:
                    record, cfg, _ = _run_training(cell_config, cell_seed, cell_dir)
                    best, last = record.best_row(), record.last_row()
                    row = {
                        "epsilon": eps, "mode": mode, "seed": cell_seed,
                        "ra_best": best.test_robust_acc,
                        "ra_last": last.test_robust_acc,
                        "cas_best": best.cas,
                        "cas_last": last.cas,
                        "delta_cas": best.cas - last.cas,
                        "best_epoch": record.best_epoch,
                        "collapse": detect_collapse(record.rows)["occurred"],
                    }
                except Exception as exc:  # cell failure is recorded, sweep continues
                    any_failed = True
                    row = {"epsilon": eps, "mode": mode, "seed": cell_seed,
                           "error": f"{type(exc).__name__}: {exc}"}
                rows.append(row)
    medians = []
    for eps in epsilons:
        for mode in modes:
            cell = [r for r in rows
                    if r.get("epsilon") == eps and r.get("mode") == mode
                    and "error" not in r]
            if not cell:
                continue
            medians.append({
                "epsilon": eps, "mode": mode, "seeds": len(cell),
                **{key: statistics.median(r[key] for r in cell)
                   for key in ("ra_best", "ra_last", "cas_best", "cas_last",
                               "delta_cas")},
            })
    report = Report(
        command="sweep",
        metadata=_base_metadata("sweep", config, seed),
        records=rows,
        summary={"cells": len(rows), "medians": medians,
                 "failed_cells": sum(1 for r in rows if "error" in r)},
        passed=not any_failed,
    )
    report.write(out_dir)
    if out_dir is not None:
        with open(os.path.join(out_dir, "medians.jsonl"), "w", encoding="utf-8") as fh:
            for row in medians:
                fh.write(json.dumps(row, sort_keys=True) + "\n")
    return report


def cmd_report(config: dict, out_dir: str | None = None,
               seed: int | None = None) -> Report:
    """Re-render a previous run directory in human-readable form."""
    if out_dir is None:
        raise ConfigError("report requires --out pointing at a run directory")
    summary_path = os.path.join(out_dir, "summary.json")
    if not os.path.exists(summary_path):
        raise ConfigError(f"no summary.json under {out_dir}")
    with open(summary_path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    lines = [f"run: {payload.get('command')} "
             f"(config {payload.get('metadata', {}).get('config_hash')}, "
             f"passed={payload.get('passed')})"]
    for key, value in sorted(payload.get("summary", {}).items()):
        lines.append(f"  {key}: {value}")
    for name in sorted(os.listdir(out_dir)):
        if name.endswith(".txt"):
            try:
                matrix, labels = load_matrix(os.path.join(out_dir, name))
            except ValueError:
                continue
            lines.append(f"  matrix {name} (classes {labels}):")
            for row in matrix:
                lines.append("    " + " ".join(f"{v: .4f}" for v in row))
    text = "\n".join(lines)
    return Report(
        command="report",
        metadata=_base_metadata("report", config, seed),
        records=[payload],
        summary={"rendered": text},
        passed=bool(payload.get("passed", True)),
    )


_COMMANDS = {
    "synth-verify": cmd_synth_verify,
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "attribution": cmd_attribution,
    "sweep": cmd_sweep,
    "report": cmd_report,
}


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="crossfeat",
        description="Adversarial training experiments with cross-class "
                    "feature attribution metrics.")
    parser.add_argument("command", choices=sorted(_COMMANDS))
    parser.add_argument("--config", help="path to a JSON experiment config")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--format", choices=("text", "records"), default="text",
                        help="stdout rendering")
    args = parser.parse_args(argv)
    try:
        config = load_config(args.config)
        out_dir = args.out or config.get("out_dir")
        report = _COMMANDS[args.command](config, out_dir=out_dir, seed=args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # propagate context, fail loudly
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    if args.command == "report":
        print(report.summary["rendered"])
    else:
        print(report.render(args.format))
    return 0 if report.passed else 1


if __name__ == "__main__":
    sys.exit(main())
