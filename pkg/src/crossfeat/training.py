"""Training loops: standard, adversarial, label-smoothed adversarial,
distillation-guided adversarial, and single-step fast adversarial training,
with per-epoch robust evaluation, attribution tracking, and best/last
checkpointing.

Determinism contract: a run is a pure function of (model initial state,
datasets, TrainConfig).  All randomness flows through streams split from the
config seed - one for shuffling, one for attack crafting, one for evaluation
- so modes that ignore a stream leave the others untouched (e.g. an epsilon-0
adversarial run steps identically to standard training).

Record file format: one JSON object per line, field order fixed as
``epoch, train_robust_loss, train_robust_acc, test_clean_acc,
test_robust_acc, cas``.  The train_* fields are recomputed at the end of
each epoch on the training set with the deterministic evaluation attack, so
they measure the epoch-end model rather than a running average over
minibatches taken while the weights were still moving.  For mode=standard
the two train_* fields hold the clean training quantities and the per-epoch
attribution is computed on clean examples.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .attack import AttackConfig, fgsm, pgd
from .attribution import cas, class_attribution_matrix
from .data import Dataset
from .model import (Classifier, CrossEntropy, Distillation, LabelSmoothing,
                    backward, forward, load_checkpoint, log_softmax,
                    save_checkpoint, sgd_step)
from .numerics import RngStream

__all__ = [
    "EpochRow",
    "RunRecord",
    "TrainConfig",
    "TrainingDiverged",
    "detect_collapse",
    "evaluate",
    "load_records",
    "lr_at",
    "save_records",
    "train",
]

MODES = ("standard", "at", "at_ls", "at_kd", "fast_at")

RECORD_FIELDS = ("epoch", "train_robust_loss", "train_robust_acc",
                 "test_clean_acc", "test_robust_acc", "cas")

_EVAL_CHUNK = 2048


class TrainingDiverged(RuntimeError):
    """Raised when the training loss explodes or turns non-finite."""


@dataclass(frozen=True)
class TrainConfig:
    """Everything a run needs besides the model and the data."""

    epochs: int
    attack: AttackConfig
    mode: str = "at"
    batch_size: int = 128
    lr: float = 0.1
    decay_fractions: tuple[float, ...] = (0.5, 0.75)
    decay_factor: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    beta: float = 0.2
    lambda_mix: float = 0.5
    temperature: float = 2.0
    teacher: Classifier | str | None = None
    eval_attack: AttackConfig | None = None
    attribution_on_clean: bool | None = None
    seed: int = 0
    out_dir: str | None = None

    def __post_init__(self) -> None:
        if self.epochs < 0:
            raise ValueError(f"epochs must be non-negative, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be positive, got {self.batch_size}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        fr = self.decay_fractions
        if any(not (0.0 < f < 1.0) for f in fr) or any(a >= b for a, b in zip(fr, fr[1:])):
            raise ValueError(
                f"decay_fractions must be strictly increasing within (0, 1), got {fr}")
        if not (0.0 <= self.lambda_mix <= 1.0):
            raise ValueError(f"lambda_mix must lie in [0, 1], got {self.lambda_mix}")
        if not (0.0 <= self.beta < 1.0):
            raise ValueError(f"beta must lie in [0, 1), got {self.beta}")
        if self.lr < 0 or self.decay_factor <= 0:
            raise ValueError("lr must be >= 0 and decay_factor > 0")

    def resolved_eval_attack(self) -> AttackConfig:
        """Evaluation attack: the training attack without random start unless
        overridden."""
        if self.eval_attack is not None:
            return self.eval_attack
        return replace(self.attack, random_start=False)

    def clean_attribution(self) -> bool:
        if self.attribution_on_clean is not None:
            return self.attribution_on_clean
        return self.mode == "standard"


@dataclass
class EpochRow:
    epoch: int
    train_robust_loss: float
    train_robust_acc: float
    test_clean_acc: float
    test_robust_acc: float
    cas: float

    def as_dict(self) -> dict:
        return {name: getattr(self, name) for name in RECORD_FIELDS}


@dataclass
class RunRecord:
    """Per-epoch rows plus the best (highest test robust accuracy, earliest
    tie) and final model states."""

    rows: list[EpochRow]
    best_epoch: int | None
    best_model: Classifier
    last_model: Classifier
    best_path: str | None = None
    last_path: str | None = None

    def best_row(self) -> EpochRow | None:
        if self.best_epoch is None:
            return None
        return self.rows[self.best_epoch]

    def last_row(self) -> EpochRow | None:
        return self.rows[-1] if self.rows else None


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """Stepwise-decayed learning rate for a zero-indexed epoch."""
    if not (0 <= epoch < max(cfg.epochs, 1)):
        raise ValueError(f"epoch {epoch} outside [0, {cfg.epochs})")
    lr = cfg.lr
    for fraction in cfg.decay_fractions:
        if epoch >= math.floor(fraction * cfg.epochs):
            lr *= cfg.decay_factor
    return lr


def _per_sample_ce(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    logp = log_softmax(logits)
    return -logp[np.arange(len(labels)), labels]


def _attack_inputs(model: Classifier, inputs: np.ndarray, labels: np.ndarray,
                   attack: AttackConfig, rng: RngStream) -> np.ndarray:
    if attack.epsilon == 0.0:
        return inputs
    chunks = []
    for start in range(0, len(inputs), _EVAL_CHUNK):
        sl = slice(start, start + _EVAL_CHUNK)
        chunks.append(pgd(model, inputs[sl], labels[sl], attack, rng.split(start)))
    return np.vstack(chunks)


def evaluate(model: Classifier, dataset: Dataset,
             attack: AttackConfig | None = None,
             rng: RngStream | None = None,
             return_adversarial: bool = False):
    """Clean and robust accuracy plus mean loss.

    A sample counts as robust only if it is classified correctly both at the
    clean point and at the attacked point: the clean point lies inside every
    attack ball, so the attack can only remove correct classifications and
    robust_acc <= clean_acc holds deterministically.  mean_loss averages the
    per-sample worse (higher) of the clean and attacked cross-entropy.
    """
    if len(dataset) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    if rng is None:
        rng = RngStream(0)
    inputs, labels = dataset.inputs, dataset.labels
    clean_logits = forward(model, inputs)
    clean_correct = clean_logits.argmax(axis=1) == labels
    clean_loss = _per_sample_ce(clean_logits, labels)
    if attack is None or attack.epsilon == 0.0:
        metrics = {
            "clean_acc": float(clean_correct.mean()),
            "robust_acc": float(clean_correct.mean()),
            "mean_loss": float(clean_loss.mean()),
        }
        return (metrics, inputs) if return_adversarial else metrics
    adv = _attack_inputs(model, inputs, labels, attack, rng)
    adv_logits = forward(model, adv)
    adv_correct = adv_logits.argmax(axis=1) == labels
    adv_loss = _per_sample_ce(adv_logits, labels)
    metrics = {
        "clean_acc": float(clean_correct.mean()),
        "robust_acc": float((clean_correct & adv_correct).mean()),
        "mean_loss": float(np.maximum(clean_loss, adv_loss).mean()),
    }
    return (metrics, adv) if return_adversarial else metrics


def _resolve_teacher(cfg: TrainConfig) -> Classifier | None:
    if cfg.mode != "at_kd":
        return None
    if cfg.teacher is None:
        raise ValueError("mode=at_kd requires a teacher model or checkpoint path")
    if isinstance(cfg.teacher, str):
        teacher, _, _ = load_checkpoint(cfg.teacher)
        return teacher
    return cfg.teacher


def _loss_spec(cfg: TrainConfig, teacher: Classifier | None):
    if cfg.mode in ("standard", "at", "fast_at"):
        return CrossEntropy()
    if cfg.mode == "at_ls":
        return LabelSmoothing(cfg.beta)
    return Distillation(teacher, cfg.temperature, cfg.lambda_mix)


def train(model: Classifier, train_set: Dataset, test_set: Dataset,
          cfg: TrainConfig) -> RunRecord:
    """Run the configured training mode; see the module docstring for the
    determinism and record contracts."""
    if len(train_set) == 0 or len(test_set) == 0:
        raise ValueError("train and test sets must be nonempty")
    teacher = _resolve_teacher(cfg)
    loss_spec = _loss_spec(cfg, teacher)
    eval_attack = cfg.resolved_eval_attack()
    root = RngStream(cfg.seed)
    shuffle_stream, attack_stream, eval_stream = (root.split(1), root.split(2),
                                                  root.split(3))
    train_eval_stream = root.split(4)
    opt_state = None
    rows: list[EpochRow] = []
    best_epoch: int | None = None
    best_ra = -1.0
    best_model = model.copy()
    inputs, labels = train_set.inputs, train_set.labels

    for epoch in range(cfg.epochs):
        lr = lr_at(epoch, cfg)
        order = shuffle_stream.split(epoch).generator.permutation(len(train_set))
        epoch_attack = attack_stream.split(epoch)
        for step, start in enumerate(range(0, len(order), cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            x, y = inputs[idx], labels[idx]
            if cfg.mode == "standard":
                x_in = x
            elif cfg.mode == "fast_at":
                x_in = fgsm(model, x, y, cfg.attack, epoch_attack.split(step))
            else:
                x_in = pgd(model, x, y, cfg.attack, epoch_attack.split(step))
            bundle = backward(model, x_in, y, loss_spec)
            if not np.isfinite(bundle.loss) or bundle.loss > 1e6:
                raise TrainingDiverged(
                    f"loss {bundle.loss} at epoch {epoch} step {step} "
                    f"(mode={cfg.mode}, lr={lr})")
            opt_state = sgd_step(model, bundle.params, lr, cfg.momentum,
                                 cfg.weight_decay, opt_state)

        train_metrics = evaluate(
            model, train_set,
            None if cfg.mode == "standard" else eval_attack,
            train_eval_stream.split(epoch))
        metrics, adv_inputs = evaluate(model, test_set, eval_attack,
                                       eval_stream.split(epoch),
                                       return_adversarial=True)
        attribution_inputs = test_set.inputs if cfg.clean_attribution() else adv_inputs
        matrix = class_attribution_matrix(model, test_set,
                                          attack=eval_attack,
                                          adversarial_inputs=attribution_inputs)
        rows.append(EpochRow(
            epoch=epoch,
            train_robust_loss=train_metrics["mean_loss"],
            train_robust_acc=train_metrics["robust_acc"],
            test_clean_acc=metrics["clean_acc"],
            test_robust_acc=metrics["robust_acc"],
            cas=cas(matrix),
        ))
        if metrics["robust_acc"] > best_ra:
            best_ra = metrics["robust_acc"]
            best_epoch = epoch
            best_model = model.copy()

    record = RunRecord(rows=rows, best_epoch=best_epoch,
                       best_model=best_model, last_model=model.copy())
    if cfg.out_dir is not None:
        os.makedirs(cfg.out_dir, exist_ok=True)
        record.best_path = os.path.join(cfg.out_dir, "best.ckpt")
        record.last_path = os.path.join(cfg.out_dir, "last.ckpt")
        best_row = record.best_row()
        save_checkpoint(record.best_model, record.best_path,
                        epoch=-1 if best_epoch is None else best_epoch,
                        metrics=best_row.as_dict() if best_row else {})
        last_row = record.last_row()
        save_checkpoint(record.last_model, record.last_path,
                        epoch=cfg.epochs - 1,
                        metrics=last_row.as_dict() if last_row else {})
        save_records(record, os.path.join(cfg.out_dir, "records.jsonl"))
    return record


def save_records(record: RunRecord, path: str) -> None:
    """One JSON object per epoch, keys in RECORD_FIELDS order."""
    with open(path, "w", encoding="utf-8") as fh:
        for row in record.rows:
            fh.write(json.dumps(row.as_dict()) + "\n")


def load_records(path: str) -> list[EpochRow]:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                payload = json.loads(line)
                rows.append(EpochRow(**payload))
            except (json.JSONDecodeError, TypeError) as exc:
                raise ValueError(f"{path}:{lineno}: bad record: {exc}") from exc
    return rows


def detect_collapse(rows: list[EpochRow], rise: float = 0.2,
                    floor: float = 0.05) -> dict:
    """Flag the robust-accuracy collapse signature of fast adversarial
    training: test robust accuracy exceeded ``rise`` at some epoch and later
    fell below ``floor``.

    Returns occurrence, the peak epoch, the first collapsed epoch, and the
    attribution-similarity comparison between the best epoch and the end.
    """
    exceeded_epoch = None
    collapse_epoch = None
    for row in rows:
        if exceeded_epoch is None:
            if row.test_robust_acc > rise:
                exceeded_epoch = row.epoch
        elif row.test_robust_acc < floor:
            collapse_epoch = row.epoch
            break
    result = {
        "occurred": collapse_epoch is not None,
        "peak_epoch": exceeded_epoch,
        "collapse_epoch": collapse_epoch,
    }
    if rows:
        best = max(rows, key=lambda r: (r.test_robust_acc, -r.epoch))
        result["cas_best"] = best.cas
        result["cas_after"] = rows[-1].cas
        result["cas_dropped"] = rows[-1].cas < best.cas
    return result
