"""Per-string memorization measures over recorded loss curves.

Three measures, each evaluated pointwise per epoch (non-sticky):

- recollection: indicator loss < tau against a fixed threshold;
- counterfactual: (heldout[e] - train[e]) / heldout[e] once the train
  curve first dips below the paired held-out curve;
- contextual: (T - train[e]) / T against the best held-out loss ever
  reached, T = min over epochs of the held-out curve.

Raw ratio scores are clamped to [0, 1]; clamp_events counts how often
clamping fired (it fires when the held-out-not-worse premise is violated
at some epoch after the start). Start conditions use strict inequality;
equality never triggers memorization. Contextual memorization is never
above counterfactual on the same nonnegative curves: T <= heldout[e]
pointwise and (T - t)/T is monotone in T, which lemma1_check verifies.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .training import LossCurve

__all__ = [
    "MeasureKind",
    "COUNTERFACTUAL",
    "CONTEXTUAL",
    "recollection_kind",
    "PairedLossCurves",
    "MemorizationRecord",
    "DatasetMemorization",
    "Lemma1Report",
    "recollection_measure",
    "counterfactual_measure",
    "contextual_measure",
    "expected_measure",
    "dataset_memorization",
    "lemma1_check",
    "proxy_pair",
    "reference_upper_bound",
]

LOSS_FLOOR = 1e-12  # held-out losses this small make the ratio unstable
LEMMA1_SLACK = 1e-12


@dataclass(frozen=True)
class MeasureKind:
    """Measure family tag; tau is set for recollection only."""

    name: str
    tau: float | None = None

    def __post_init__(self):
        if self.name == "recollection":
            if self.tau is None or self.tau <= 0:
                raise ConfigError("recollection requires tau > 0")
        elif self.name in ("counterfactual", "contextual"):
            if self.tau is not None:
                raise ConfigError(f"{self.name} does not take tau")
        else:
            raise ConfigError(f"unknown measure kind {self.name!r}")


def recollection_kind(tau: float) -> MeasureKind:
    return MeasureKind("recollection", float(tau))


COUNTERFACTUAL = MeasureKind("counterfactual")
CONTEXTUAL = MeasureKind("contextual")


@dataclass(frozen=True)
class PairedLossCurves:
    """Aligned train/held-out curves for one probe string. The held-out
    curve normally belongs to the same string (its leave-out run); under
    the proxy approximation it may belong to a nearby-logprob stand-in,
    so only alignment and roles are enforced here."""

    string: tuple[str, ...]
    train_curve: LossCurve
    heldout_curve: LossCurve

    def __post_init__(self):
        if len(self.train_curve.losses) != len(self.heldout_curve.losses):
            raise ConfigError("paired curves must cover the same epochs")
        if self.train_curve.role != "train":
            raise ConfigError("train_curve must have role 'train'")
        if self.heldout_curve.role != "heldout":
            raise ConfigError("heldout_curve must have role 'heldout'")
        if tuple(self.train_curve.string) != tuple(self.string):
            raise ConfigError("train_curve belongs to a different string")


@dataclass(frozen=True)
class MemorizationRecord:
    """Per-epoch scores in [0,1] for one string under one measure.
    scores[e] is 0 before start_epoch; start_epoch is None iff all zero."""

    string: tuple[str, ...]
    kind: MeasureKind
    start_epoch: int | None
    scores: np.ndarray
    clamp_events: int


@dataclass(frozen=True)
class DatasetMemorization:
    """Dataset-level aggregation: frac[e] = share of records with a
    positive score, weighted[e] = mean score. weighted <= frac always."""

    kind: MeasureKind
    frac: np.ndarray
    weighted: np.ndarray


@dataclass(frozen=True)
class Lemma1Report:
    cf_record: MemorizationRecord
    ctx_record: MemorizationRecord
    ordering_ok: bool
    bound_ok: bool


def _first_true(flags: np.ndarray) -> int | None:
    """1-based index of the first True, or None."""
    hits = np.flatnonzero(flags)
    return int(hits[0]) + 1 if hits.size else None


def recollection_measure(curve: LossCurve, tau: float) -> MemorizationRecord:
    """Binary indicator per epoch: loss strictly below tau."""
    if tau <= 0:
        raise ConfigError("tau must be > 0")
    losses = np.asarray(curve.losses, dtype=np.float64)
    scores = (losses < tau).astype(np.float64)
    return MemorizationRecord(
        string=tuple(curve.string),
        kind=recollection_kind(tau),
        start_epoch=_first_true(scores > 0),
        scores=scores,
        clamp_events=0,
    )


def _ratio_record(string, kind, train, threshold, start) -> MemorizationRecord:
    """Shared scorer: (threshold - train)/threshold from start on, clamped."""
    scores = np.zeros_like(train)
    clamps = 0
    if start is not None:
        live = np.arange(len(train)) >= start - 1
        raw = (threshold - train) / threshold
        clamps = int(np.count_nonzero(live & ((raw < 0.0) | (raw > 1.0))))
        scores[live] = np.clip(raw[live], 0.0, 1.0)
    return MemorizationRecord(
        string=string, kind=kind, start_epoch=start, scores=scores, clamp_events=clamps
    )


def counterfactual_measure(paired: PairedLossCurves) -> MemorizationRecord:
    """Score against the per-epoch held-out curve with the shared ratio form.
    Starts at the first epoch where train < heldout."""
    t = np.asarray(paired.train_curve.losses, dtype=np.float64)
    h = np.asarray(paired.heldout_curve.losses, dtype=np.float64)
    if np.any(h < LOSS_FLOOR):
        raise ConfigError("held-out loss is ~0; counterfactual ratio undefined")
    start = _first_true(t < h)
    return _ratio_record(tuple(paired.string), COUNTERFACTUAL, t, h, start)


def contextual_measure(paired: PairedLossCurves) -> MemorizationRecord:
    """Score against T = the best held-out loss across all epochs.
    Starts at the first epoch where train < T."""
    t = np.asarray(paired.train_curve.losses, dtype=np.float64)
    h = np.asarray(paired.heldout_curve.losses, dtype=np.float64)
    T = float(h.min())
    if T < LOSS_FLOOR:
        raise ConfigError("optimal held-out loss is ~0; contextual ratio undefined")
    start = _first_true(t < T)
    return _ratio_record(tuple(paired.string), CONTEXTUAL, t, np.full_like(t, T), start)


def expected_measure(records, kind: MeasureKind) -> MemorizationRecord:
    """Pointwise mean over K records of the same string and kind (the
    expectation over dataset resamples). Start = first epoch with mean > 0."""
    records = list(records)
    if not records:
        raise ConfigError("expected_measure needs at least one record")
    string = records[0].string
    epochs = len(records[0].scores)
    for r in records:
        if r.kind != kind:
            raise ConfigError("expected_measure got mixed kinds")
        if r.string != string:
            raise ConfigError("expected_measure got mixed strings")
        if len(r.scores) != epochs:
            raise ConfigError("expected_measure got mixed epoch counts")
    mean = np.mean([r.scores for r in records], axis=0)
    return MemorizationRecord(
        string=string,
        kind=kind,
        start_epoch=_first_true(mean > 0),
        scores=mean,
        clamp_events=sum(r.clamp_events for r in records),
    )


def dataset_memorization(records) -> DatasetMemorization:
    """Aggregate records (already expanded to dataset multiplicity if
    frequency weighting is wanted): frac of positive scores and mean score
    per epoch."""
    records = list(records)
    if not records:
        raise ConfigError("dataset_memorization needs at least one record")
    kind = records[0].kind
    epochs = len(records[0].scores)
    for r in records:
        if r.kind != kind:
            raise ConfigError("dataset_memorization got mixed kinds")
        if len(r.scores) != epochs:
            raise ConfigError("dataset_memorization got mixed epoch counts")
    scores = np.stack([r.scores for r in records])
    return DatasetMemorization(
        kind=kind,
        frac=(scores > 0).mean(axis=0),
        weighted=scores.mean(axis=0),
    )


def lemma1_check(paired: PairedLossCurves) -> Lemma1Report:
    """Contextual never precedes or exceeds counterfactual memorization on
    the same pair: T <= heldout[e] makes the contextual start no earlier
    and the contextual score no larger, for any nonnegative curves."""
    cf = counterfactual_measure(paired)
    ctx = contextual_measure(paired)
    if ctx.start_epoch is None:
        ordering_ok = True
    else:
        ordering_ok = cf.start_epoch is not None and cf.start_epoch <= ctx.start_epoch
    bound_ok = bool(np.all(ctx.scores <= cf.scores + LEMMA1_SLACK))
    return Lemma1Report(cf, ctx, ordering_ok, bound_ok)


def proxy_pair(target_logprob: float, pool) -> int:
    """Index of the pool entry (string, logprob, heldout curve) whose
    language log-probability is nearest the target's; ties go to the
    lowest index. The entry's curve stands in for the target's unseen
    counterfactual test curve."""
    pool = list(pool)
    if not pool:
        raise ConfigError("proxy pool is empty")
    gaps = np.array([abs(lp - target_logprob) for _, lp, _ in pool])
    return int(np.argmin(gaps))


def reference_upper_bound(target_acc: float, reference_acc: float) -> bool:
    """True when a reference model trained on disjoint data recollects the
    string at least as accurately, flagging the string's recollection as
    attributable to context rather than its training copies."""
    for v in (target_acc, reference_acc):
        if not 0.0 <= v <= 1.0:
            raise ConfigError("accuracies must lie in [0, 1]")
    return reference_acc >= target_acc
