"""Epoch-based training with per-string loss curves.

Each epoch shuffles the dataset (seeded, stateful across epochs), steps
over batches with Adam under a linear warmup / linear-decay-to-zero
schedule, and then records the loss and argmax accuracy of every dataset
string, probe string, and test string. Curves are recorded after the
epoch's updates, so entry e means "after e full passes". Runs are
bit-identical given identical configs and seeds.

Seed lineage: a master seed is split into independent init and shuffle
streams via SeedSequence([master, crc32(label)]), so paired runs can
share initialization and batch order while differing only in data.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, RunError
from .grammar import StringDataset
from .model import (
    ModelConfig,
    ModelParameters,
    Vocabulary,
    batch_eval,
    init_params,
    loss_gradient,
)

__all__ = [
    "TrainConfig",
    "LossCurve",
    "TrainRun",
    "derive_seed",
    "train",
    "optimal_learning_epoch",
    "optimal_contextual_loss",
]


def derive_seed(master: int, label: str) -> np.random.SeedSequence:
    """Independent named child stream of a master seed."""
    return np.random.SeedSequence([int(master), zlib.crc32(label.encode())])


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 8
    peak_lr: float = 1e-3
    warmup_ratio: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    # None: shuffle stream derives from the run's master seed
    shuffle_seed: int | None = None

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        # peak_lr 0 is allowed: a no-update run with constant curves
        if self.peak_lr < 0:
            raise ConfigError("peak_lr must be >= 0")
        if not 0 <= self.warmup_ratio < 1:
            raise ConfigError("warmup_ratio must be in [0, 1)")


@dataclass
class LossCurve:
    """Per-epoch losses of one string; role is 'train' for dataset members
    and 'heldout' for everything else."""

    string: tuple[str, ...]
    losses: np.ndarray
    role: str


@dataclass
class TrainRun:
    dataset: StringDataset
    model_config: ModelConfig
    train_config: TrainConfig
    curves: dict[tuple[str, ...], LossCurve]
    accuracy_curves: dict[tuple[str, ...], np.ndarray]
    test_curve_mean: np.ndarray
    seeds: dict[str, int]
    params: ModelParameters = field(repr=False)


def _learning_rate(step: int, total: int, warmup: int, peak: float) -> float:
    """1-based step; linear 0->peak over warmup, then peak->0 at total."""
    if step <= warmup:
        return peak * step / warmup
    return peak * (total - step) / max(1, total - warmup)


def train(
    dataset: StringDataset,
    probes,
    test_set,
    mcfg: ModelConfig,
    tcfg: TrainConfig,
    seed: int,
    vocab: Vocabulary | None = None,
) -> TrainRun:
    """Train on dataset and record loss/accuracy curves for every dataset
    string, probe, and test string.

    vocab should come from the generating grammar when runs over different
    datasets must agree on token ids; by default it is built from every
    string this run will ever see.
    """
    probes = [tuple(p) for p in probes]
    test_list = [tuple(t) for t in test_set]
    if dataset.size < 1:
        raise ConfigError("training dataset is empty")
    if vocab is None:
        seen: set[str] = set()
        for s in list(dataset.strings) + probes + test_list:
            seen.update(s)
        vocab = Vocabulary.from_terminals(seen)
    if vocab.size != mcfg.vocab_size:
        raise ConfigError(
            f"model vocab_size {mcfg.vocab_size} != vocabulary size {vocab.size}"
        )

    params = init_params(mcfg, derive_seed(seed, "init"))
    shuffle_master = tcfg.shuffle_seed if tcfg.shuffle_seed is not None else seed
    shuffle_rng = np.random.default_rng(derive_seed(shuffle_master, "shuffle"))

    # deterministic eval order: dataset strings sorted, then new probes,
    # then new test strings, first occurrence wins
    train_strings = sorted(dataset.freq, key=lambda s: (len(s), s))
    eval_order = list(train_strings)
    eval_index = {s: i for i, s in enumerate(eval_order)}
    for s in probes + test_list:
        if s not in eval_index:
            eval_index[s] = len(eval_order)
            eval_order.append(s)

    n = dataset.size
    steps_per_epoch = math.ceil(n / tcfg.batch_size)
    total_steps = tcfg.epochs * steps_per_epoch
    warmup_steps = int(tcfg.warmup_ratio * total_steps)

    adam_m = {k: np.zeros_like(t.data) for k, t in params.tensors.items()}
    adam_v = {k: np.zeros_like(t.data) for k, t in params.tensors.items()}
    loss_hist = np.empty((tcfg.epochs, len(eval_order)))
    acc_hist = np.empty((tcfg.epochs, len(eval_order)))

    step = 0
    for epoch in range(1, tcfg.epochs + 1):
        order = shuffle_rng.permutation(n)
        for bi in range(steps_per_epoch):
            batch = [
                dataset.strings[j]
                for j in order[bi * tcfg.batch_size : (bi + 1) * tcfg.batch_size]
            ]
            step += 1
            try:
                grads = loss_gradient(params, vocab, batch)
            except RunError as exc:
                raise RunError(f"epoch {epoch}, batch {bi + 1}: {exc}") from None
            lr = _learning_rate(step, total_steps, warmup_steps, tcfg.peak_lr)
            b1c = 1.0 - tcfg.beta1**step
            b2c = 1.0 - tcfg.beta2**step
            for name, g in grads.items():
                m = adam_m[name]
                v = adam_v[name]
                m *= tcfg.beta1
                m += (1.0 - tcfg.beta1) * g
                v *= tcfg.beta2
                v += (1.0 - tcfg.beta2) * g * g
                params.tensors[name].data -= (
                    lr * (m / b1c) / (np.sqrt(v / b2c) + tcfg.adam_eps)
                )
        losses, accs = batch_eval(params, vocab, eval_order)
        if not np.all(np.isfinite(losses)):
            raise RunError(f"non-finite evaluation loss after epoch {epoch}")
        loss_hist[epoch - 1] = losses
        acc_hist[epoch - 1] = accs

    curves = {}
    accuracy_curves = {}
    for s, idx in eval_index.items():
        role = "train" if s in dataset.freq else "heldout"
        curves[s] = LossCurve(string=s, losses=loss_hist[:, idx].copy(), role=role)
        accuracy_curves[s] = acc_hist[:, idx].copy()
    test_curve_mean = (
        np.stack([loss_hist[:, eval_index[s]] for s in test_list], axis=1).mean(axis=1)
        if test_list
        else np.zeros(0)
    )
    return TrainRun(
        dataset=dataset,
        model_config=mcfg,
        train_config=tcfg,
        curves=curves,
        accuracy_curves=accuracy_curves,
        test_curve_mean=test_curve_mean,
        seeds={"master": int(seed), "shuffle_master": int(shuffle_master)},
        params=params,
    )


def optimal_learning_epoch(run: TrainRun) -> int:
    """1-based epoch where the mean test loss is lowest; ties -> earliest."""
    if run.test_curve_mean.size == 0:
        raise ConfigError("run has no test curve")
    return int(np.argmin(run.test_curve_mean)) + 1


def optimal_contextual_loss(curve: LossCurve) -> float:
    """Lowest held-out loss of a string across all epochs."""
    return float(np.min(curve.losses))
