"""Training: regularized binary cross entropy minimized with Adam.

The objective is the mean BCE over a mini-batch plus lambda times the
squared L2 norm of the parameters. The probability is the sigmoid of the
matching score, so on the tape the per-sample loss is computed in its
logit form softplus(score) - label * score, which is the same quantity
without the intermediate clamp. The embedding table enters the penalty
only through the rows used by the current batch.

Splits are per user: every user's samples are shuffled with the seeded
generator and cut 60/20/20, rounding in favour of the training split.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .autodiff import Parameter, Tape, Value
from .data import DataSample, sample_item_key, sample_user_key, universe_of
from .errors import ContractError, SamplingError, TrainingError
from .metrics import auc, logloss, score_dataset
from .model import (
    CANONICAL,
    ModelParams,
    VariantConfig,
    _forward,
    build_plan,
    init_model_params,
)

LOSS_EPS = 1e-12


@dataclass
class TrainConfig:
    dim: int = 64
    learning_rate: float = 1e-3
    lam: float = 1e-5
    epochs: int = 50
    batch_size: int = 256
    seed: int = 0
    variant: VariantConfig = CANONICAL
    patience: int = 5

    def __post_init__(self):
        if self.dim < 1 or self.epochs < 0 or self.batch_size < 1 or self.patience < 1:
            raise ContractError("invalid training configuration")
        if self.learning_rate <= 0 or self.lam < 0:
            raise ContractError("invalid training configuration")


@dataclass
class SplitDataset:
    train: list[DataSample]
    valid: list[DataSample]
    test: list[DataSample]
    by_user: dict = field(default_factory=dict)  # user key -> (n_train, n_valid, n_test)


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    val_auc: float
    val_logloss: float

    def __str__(self) -> str:
        return (
            f"epoch={self.epoch} train_loss={self.train_loss!r} "
            f"val_auc={self.val_auc!r} val_logloss={self.val_logloss!r}"
        )


@dataclass
class TrainResult:
    params: ModelParams
    logs: list[EpochLog]
    best_epoch: int


def bce_loss(probability: float, label: float) -> float:
    """-(y log p + (1-y) log(1-p)) with p clamped away from 0 and 1."""
    p = min(max(float(probability), LOSS_EPS), 1.0 - LOSS_EPS)
    y = float(label)
    return float(-(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))


def l2_penalty(tape: Tape, values: Sequence[Value], lam: float) -> Value:
    """lam times the summed squared entries of the given tracked arrays."""
    total = None
    for v in values:
        sq = tape.sum_reduce(tape.mul(v, v))
        total = sq if total is None else tape.add(total, sq)
    if total is None:
        raise ContractError("l2_penalty: no values given")
    return tape.scale(total, lam)


def regularized_risk(
    batch: Sequence[DataSample],
    mp: ModelParams,
    lam: float,
    variant: VariantConfig = CANONICAL,
    tape: Tape | None = None,
) -> Value:
    """Tracked mean BCE plus the squared-L2 penalty for one mini-batch."""
    if not batch:
        raise ContractError("regularized_risk: batch is empty")
    tape = tape if tape is not None else Tape()
    plan = build_plan(batch, mp.table, variant)
    out = _forward(tape, plan, mp, variant, row_local=False)
    labels = tape.constant(np.array([s.label for s in batch], dtype=np.float64))
    per_sample = tape.sub(tape.softplus(out.scores), tape.mul(out.scores, labels))
    risk = tape.scale(tape.sum_reduce(per_sample), 1.0 / len(batch))
    if lam > 0:
        tracked = [tape.param(p) for p in mp.parameters() if p is not mp.emb]
        batch_rows = np.unique(plan.attr_rows)
        tracked.append(tape.gather_rows(tape.param(mp.emb), batch_rows))
        risk = tape.add(risk, l2_penalty(tape, tracked, lam))
    return risk


class AdamState:
    """First and second moment accumulators plus the step counter."""

    def __init__(self, params: Sequence[Parameter]):
        self.m = [np.zeros_like(p.values) for p in params]
        self.v = [np.zeros_like(p.values) for p in params]
        self.t = 0


def adam_step(
    params: Sequence[Parameter],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    gradients: Sequence[np.ndarray] | None = None,
) -> None:
    """One bias-corrected Adam update, in place.

    Gradients default to each parameter's accumulated grad buffer.
    """
    if gradients is None:
        gradients = [p.grad for p in params]
    if len(gradients) != len(params) or len(state.m) != len(params):
        raise ContractError("adam_step: state does not match parameters")
    state.t += 1
    c1 = 1.0 - beta1 ** state.t
    c2 = 1.0 - beta2 ** state.t
    for p, g, m, v in zip(params, gradients, state.m, state.v):
        if g.shape != p.values.shape:
            raise ContractError(f"adam_step: gradient shape {g.shape} vs {p.values.shape}")
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p.values -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


def split_per_user(samples: Sequence[DataSample], seed: int) -> SplitDataset:
    """Seeded per-user shuffle, then a 60/20/20 cut favouring train.

    Users with fewer than 5 samples go entirely to train, with a warning.
    """
    groups: dict = {}
    for s in samples:
        groups.setdefault(sample_user_key(s), []).append(s)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 4]))
    split = SplitDataset(train=[], valid=[], test=[])
    short_users = 0
    for key, items in groups.items():
        n = len(items)
        order = rng.permutation(n)
        if n < 5:
            split.train.extend(items[k] for k in order)
            split.by_user[key] = (n, 0, 0)
            short_users += 1
            continue
        n_valid = n // 5
        n_test = n // 5
        n_train = n - n_valid - n_test
        shuffled = [items[k] for k in order]
        split.train.extend(shuffled[:n_train])
        split.valid.extend(shuffled[n_train:n_train + n_valid])
        split.test.extend(shuffled[n_train + n_valid:])
        split.by_user[key] = (n_train, n_valid, n_test)
    if short_users:
        warnings.warn(f"{short_users} user(s) had fewer than 5 samples; all their samples went to train")
    return split


def item_pool_of(samples: Sequence[DataSample]) -> list[tuple]:
    """Distinct item characteristics in first-appearance order."""
    seen = {}
    for s in samples:
        seen.setdefault(sample_item_key(s), s.item_chars)
    return list(seen.values())


def negative_sample(
    positives: Sequence[DataSample],
    item_pool: Sequence[tuple],
    seed: int,
) -> list[DataSample]:
    """Per user, as many label-0 samples as positives, items drawn without
    replacement from the pool entries the user did not interact with."""
    by_user: dict = {}
    for s in positives:
        by_user.setdefault(sample_user_key(s), []).append(s)
    pool_keys = [tuple(sorted((p.att.id, p.val) for p in chars)) for chars in item_pool]
    rng = np.random.default_rng(np.random.SeedSequence([seed, 5]))
    out: list[DataSample] = []
    for key, items in by_user.items():
        interacted = {sample_item_key(s) for s in items}
        candidates = [i for i, k in enumerate(pool_keys) if k not in interacted]
        if len(candidates) < len(items):
            raise SamplingError(
                f"item pool exhausted for user {key!r}: "
                f"{len(candidates)} candidates for {len(items)} positives"
            )
        chosen = rng.choice(len(candidates), size=len(items), replace=False)
        for c in chosen:
            out.append(
                DataSample(
                    user_chars=items[0].user_chars,
                    item_chars=item_pool[candidates[c]],
                    label=0.0,
                )
            )
    return out


def train(split: SplitDataset, config: TrainConfig) -> TrainResult:
    """Mini-batch Adam on the regularized risk; keeps the best-validation-AUC
    parameters; bit-reproducible for a fixed config and seed."""
    universe = universe_of(list(split.train) + list(split.valid) + list(split.test))
    mp = init_model_params(universe, config.dim, config.seed, config.variant)
    params = mp.parameters()
    state = AdamState(params)
    shuffle_rng = np.random.default_rng(np.random.SeedSequence([config.seed, 2]))
    logs: list[EpochLog] = []
    best_auc = -np.inf
    best_values: list[np.ndarray] | None = None
    best_epoch = 0
    stall = 0
    train_samples = list(split.train)
    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(len(train_samples))
        loss_sum, seen = 0.0, 0
        for start in range(0, len(order), config.batch_size):
            batch = [train_samples[k] for k in order[start:start + config.batch_size]]
            for p in params:
                p.zero_grad()
            tape = Tape()
            risk = regularized_risk(batch, mp, config.lam, config.variant, tape)
            value = float(risk.data)
            if not np.isfinite(value):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}, batch starting at {start}"
                )
            tape.backward(risk)
            adam_step(params, state, config.learning_rate)
            loss_sum += value * len(batch)
            seen += len(batch)
        train_loss = loss_sum / max(seen, 1)
        val_auc, val_logloss = _validation_metrics(split.valid, mp, config.variant)
        logs.append(EpochLog(epoch, train_loss, val_auc, val_logloss))
        if np.isfinite(val_auc):
            if val_auc > best_auc:
                best_auc = val_auc
                best_values = mp.copy_values()
                best_epoch = epoch
                stall = 0
            else:
                stall += 1
                if stall >= config.patience:
                    break
    if best_values is not None:
        mp.load_values(best_values)
    return TrainResult(params=mp, logs=logs, best_epoch=best_epoch)


def _validation_metrics(valid: Sequence[DataSample], mp, variant) -> tuple[float, float]:
    if not valid:
        return float("nan"), float("nan")
    labels = {s.label for s in valid}
    scored = score_dataset(list(valid), mp, variant)
    ll = logloss(scored)
    if labels == {0.0, 1.0} or labels == {0, 1}:
        return auc(scored), ll
    return float("nan"), ll
