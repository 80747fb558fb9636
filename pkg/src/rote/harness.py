"""Experiment orchestration over one grammar.

Three study designs, all config-driven and deterministic:

- paired probe study: for selected probe strings, train paired models on
  datasets that differ only in the probe's presence and score all three
  memorization measures across K dataset resamples.
- language study: train once on a full dataset, pair every distinct
  string's training curve with a held-out curve (exact leave-one-out for
  a budgeted subset, nearest-log-probability proxy for the rest), and
  aggregate dataset-level memorization per epoch.
- size sweep: the language study at several dataset sizes, tabulating
  test loss and memorization at the optimal learning epoch.

Seed lineage: every dataset draw and training run gets its own child of
the master seed, keyed by a stable label, so paired runs share exactly
the intended randomness (same init, same shuffle stream) and nothing
else collides.
"""

from __future__ import annotations

import json
import math
import os
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError, RunError
from .grammar import (
    StringDataset,
    dataset_from_strings,
    grammar_text,
    load_grammar,
    sample_dataset,
    string_logprob,
)
from .measures import (
    CONTEXTUAL,
    COUNTERFACTUAL,
    LEMMA1_SLACK,
    PairedLossCurves,
    contextual_measure,
    dataset_memorization,
    expected_measure,
    lemma1_check,
    proxy_pair,
    recollection_measure,
)
from .model import ModelConfig, Vocabulary
from .reports import (
    RunArtifacts,
    AGGREGATES_HEADER,
    CURVES_HEADER,
    MEASURES_HEADER,
    STRINGS_HEADER,
    SWEEP_HEADER,
    curve_rows,
    emit_reports,
    fingerprint,
    measure_rows,
    read_summary,
    write_csv,
    write_summary,
)
from .training import TrainConfig, optimal_learning_epoch, train

__all__ = [
    "ExperimentConfig",
    "DESK_MODEL",
    "DESK_TRAIN",
    "child_seed",
    "run_paired_probe_study",
    "run_language_study",
    "run_size_sweep",
]

# desk-scale defaults; any field can be overridden per config
DESK_MODEL = {
    "d_model": 32,
    "n_layers": 2,
    "n_heads": 2,
    "context_len": 16,
    "init_scale": 0.08,
}
DESK_TRAIN = {"epochs": 50, "batch_size": 8, "peak_lr": 3e-3}


@dataclass(frozen=True)
class ExperimentConfig:
    """One study's inputs. probes is either the string "frequency"
    (pick top/median/bottom frequency ranks) or an explicit tuple of
    token tuples; model/train hold field overrides for ModelConfig
    (vocab_size is derived from the grammar) and TrainConfig."""

    grammar: str
    sizes: tuple[int, ...] = (16, 64, 256)
    n_test: int = 256
    probes: str | tuple[tuple[str, ...], ...] = "frequency"
    k_resamples: int = 3
    # tau calibrated so the binary measure is informative at desk scale:
    # smaller values leave most probes unmemorized within 50 epochs
    taus: tuple[float, ...] = (0.5,)
    seed: int = 0
    out_dir: str = "runs"
    loo_budget: int = 8
    workers: int = 1
    model: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "sizes", tuple(int(s) for s in self.sizes))
        object.__setattr__(self, "taus", tuple(float(t) for t in self.taus))
        if isinstance(self.probes, str):
            if self.probes != "frequency":
                raise ConfigError(f"unknown probe rule {self.probes!r}")
        else:
            probes = tuple(tuple(p) for p in self.probes)
            if not probes:
                raise ConfigError("explicit probe list is empty")
            object.__setattr__(self, "probes", probes)
        if not self.sizes or min(self.sizes) < 1:
            raise ConfigError("sizes must be a nonempty list of counts >= 1")
        if self.n_test < 1:
            raise ConfigError("n_test must be >= 1")
        if self.k_resamples < 1:
            raise ConfigError("k_resamples must be >= 1")
        if not self.taus or min(self.taus) <= 0:
            raise ConfigError("taus must be positive")
        if self.loo_budget < 1:
            raise ConfigError("loo_budget must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if "vocab_size" in self.model:
            raise ConfigError("vocab_size is derived from the grammar")

    def to_json(self) -> str:
        payload = asdict(self)
        if not isinstance(self.probes, str):
            payload["probes"] = [list(p) for p in self.probes]
        payload["sizes"] = list(self.sizes)
        payload["taus"] = list(self.taus)
        return json.dumps(payload, sort_keys=True)

    def fingerprint_json(self) -> str:
        """Canonical JSON of everything that can change results: the
        output directory and worker count are excluded."""
        payload = json.loads(self.to_json())
        del payload["out_dir"]
        del payload["workers"]
        return json.dumps(payload, sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "ExperimentConfig":
        try:
            payload = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
        if not isinstance(payload, dict):
            raise ConfigError("config JSON must be an object")
        known = set(ExperimentConfig.__dataclass_fields__)
        unknown = sorted(set(payload) - known)
        if unknown:
            raise ConfigError(f"unknown config fields: {', '.join(unknown)}")
        if "grammar" not in payload:
            raise ConfigError("config needs a grammar")
        if "probes" in payload and not isinstance(payload["probes"], str):
            payload["probes"] = tuple(tuple(p) for p in payload["probes"])
        for key in ("sizes", "taus"):
            if key in payload:
                payload[key] = tuple(payload[key])
        return ExperimentConfig(**payload)


def child_seed(master: int, label: str) -> int:
    """Deterministic independent integer seed derived from a labeled
    child stream of the master seed."""
    ss = np.random.SeedSequence([int(master), zlib.crc32(label.encode())])
    return int(ss.generate_state(1)[0])


def _run_tasks(tasks, workers: int) -> list:
    """Evaluate zero-arg tasks, optionally on a bounded thread pool.
    Results always come back in task order, so merging is deterministic."""
    if workers <= 1 or len(tasks) <= 1:
        return [t() for t in tasks]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(t) for t in tasks]
        return [f.result() for f in futures]


def _setup(cfg: ExperimentConfig):
    g = load_grammar(cfg.grammar)
    vocab = Vocabulary.from_terminals(g.terminals)
    mcfg = ModelConfig(vocab_size=vocab.size, **{**DESK_MODEL, **cfg.model})
    tcfg = TrainConfig(**{**DESK_TRAIN, **cfg.train})
    fp = fingerprint(cfg.fingerprint_json(), grammar_text(cfg.grammar))
    return g, vocab, mcfg, tcfg, fp


def _kind_key(kind) -> str:
    return kind.name if kind.tau is None else f"{kind.name}@{kind.tau!r}"


def _checked_pair(paired: PairedLossCurves):
    """Counterfactual and contextual records with the ordering/bound
    relation between them enforced as a hard assertion."""
    report = lemma1_check(paired)
    if not (report.ordering_ok and report.bound_ok):
        raise RunError(
            f"measure ordering violated for string {' '.join(paired.string)!r}"
        )
    return report.cf_record, report.ctx_record


def _assert_expected_ordering(cf, ctx) -> None:
    """The pointwise mean preserves the per-pair ordering; verify anyway."""
    if not np.all(ctx.scores <= cf.scores + LEMMA1_SLACK):
        raise RunError("expected contextual score exceeds counterfactual")


def _start_table(records: dict[str, list]) -> dict:
    return {
        key: {tag: rec.start_epoch for tag, rec in pairs}
        for key, pairs in records.items()
    }


# ---------------------------------------------------------------------------
# paired probe study


def _select_probes(cfg: ExperimentConfig, reference: StringDataset):
    """(tokens, designated frequency) per probe, most frequent first."""
    ranked = reference.by_frequency()
    if isinstance(cfg.probes, str):
        m = len(ranked)
        picks = sorted({0, (m - 1) // 2, m - 1})
        return [ranked[i] for i in picks]
    out = []
    for p in cfg.probes:
        if p not in reference.freq:
            raise ConfigError(
                f"probe {' '.join(p)!r} does not occur in the sampled dataset"
            )
        out.append((p, reference.freq[p]))
    out.sort(key=lambda sf: (-sf[1], len(sf[0]), sf[0]))
    return out


def run_paired_probe_study(cfg: ExperimentConfig) -> RunArtifacts:
    """Train with/without each probe across K resamples and score all
    three measures; emit curves, measures, and a start-epoch summary."""
    g, vocab, mcfg, tcfg, fp = _setup(cfg)
    n = cfg.sizes[0]
    reference = sample_dataset(g, n, child_seed(cfg.seed, "reference-data"))
    probes = _select_probes(cfg, reference)

    def pair_task(i, s, freq, k):
        if n - freq < 1:
            raise ConfigError(
                f"probe occupies the whole dataset (frequency {freq} of {n})"
            )
        data_seed = child_seed(cfg.seed, f"pair{i}-k{k}-data")
        train_seed = child_seed(cfg.seed, f"pair{i}-k{k}-train")
        d_without = sample_dataset(g, n - freq, data_seed, exclude=s)
        d_with = dataset_from_strings(d_without.strings + (s,) * freq, data_seed)
        run_with = train(d_with, [], [], mcfg, tcfg, train_seed, vocab)
        run_without = train(d_without, [s], [], mcfg, tcfg, train_seed, vocab)
        return run_with.curves[s], run_without.curves[s]

    tasks = [
        (lambda i=i, s=s, f=f, k=k: pair_task(i, s, f, k))
        for i, (s, f) in enumerate(probes)
        for k in range(1, cfg.k_resamples + 1)
    ]
    results = _run_tasks(tasks, cfg.workers)

    curves_out = []
    measures_out = []
    strings_out = []
    probe_summaries = []
    clamp_totals = {COUNTERFACTUAL.name: 0, CONTEXTUAL.name: 0}
    pairs_checked = 0
    for i, (s, freq) in enumerate(probes):
        sid = f"s{i}"
        strings_out.append((sid, " ".join(s), freq, string_logprob(g, s)))
        per_kind: dict[str, list] = {}
        for k in range(1, cfg.k_resamples + 1):
            train_curve, heldout_curve = results[i * cfg.k_resamples + (k - 1)]
            rid = f"{sid}.r{k}"
            curves_out += curve_rows(rid, train_curve)
            curves_out += curve_rows(rid, heldout_curve)
            paired = PairedLossCurves(s, train_curve, heldout_curve)
            cf, ctx = _checked_pair(paired)
            pairs_checked += 1
            records = [cf, ctx] + [
                recollection_measure(train_curve, tau) for tau in cfg.taus
            ]
            for rec in records:
                measures_out += measure_rows(rid, rec)
                per_kind.setdefault(_kind_key(rec.kind), []).append((f"r{k}", rec))
        expected_by_kind = {}
        for key, tagged in per_kind.items():
            exp = expected_measure([rec for _, rec in tagged], tagged[0][1].kind)
            measures_out += measure_rows(sid, exp)
            tagged.append(("expected", exp))
            expected_by_kind[key] = exp
            if exp.kind.name in clamp_totals:
                clamp_totals[exp.kind.name] += exp.clamp_events
        _assert_expected_ordering(
            expected_by_kind[COUNTERFACTUAL.name], expected_by_kind[CONTEXTUAL.name]
        )
        probe_summaries.append(
            {
                "id": sid,
                "tokens": " ".join(s),
                "frequency": freq,
                "logprob": string_logprob(g, s),
                "start_epochs": _start_table(per_kind),
            }
        )

    out_dir = cfg.out_dir
    os.makedirs(out_dir, exist_ok=True)
    summary = {
        "study": "paired-probe",
        "fingerprint": fp,
        "config": json.loads(cfg.to_json()),
        "dataset_size": n,
        "taus": list(cfg.taus),
        "probes": probe_summaries,
        "clamp_events": clamp_totals,
        "lemma1_pairs_checked": pairs_checked,
        "lemma1_failures": 0,
    }
    artifacts = RunArtifacts(
        out_dir=out_dir,
        summary_json=write_summary(os.path.join(out_dir, "summary.json"), summary),
        fingerprint=fp,
        curves_csv=write_csv(
            os.path.join(out_dir, "curves.csv"), CURVES_HEADER, curves_out
        ),
        measures_csv=write_csv(
            os.path.join(out_dir, "measures.csv"), MEASURES_HEADER, measures_out
        ),
        strings_csv=write_csv(
            os.path.join(out_dir, "strings.csv"), STRINGS_HEADER, strings_out
        ),
    )
    return emit_reports(artifacts)


# ---------------------------------------------------------------------------
# language study


def _loo_ranks(m: int, budget: int) -> list[int]:
    """Evenly spaced frequency ranks for exact leave-one-out runs."""
    b = min(budget, m)
    return sorted({int(r) for r in np.linspace(0, m - 1, b).round()})


def run_language_study(
    cfg: ExperimentConfig, size: int | None = None, out_dir: str | None = None
) -> RunArtifacts:
    """Train on a full dataset, pair every distinct string with a held-out
    curve (exact leave-one-out within budget, proxy otherwise), and emit
    per-epoch dataset memorization with the optimal learning epoch."""
    g, vocab, mcfg, tcfg, fp = _setup(cfg)
    n = cfg.sizes[0] if size is None else int(size)
    out_dir = cfg.out_dir if out_dir is None else out_dir

    d = sample_dataset(g, n, child_seed(cfg.seed, f"data-n{n}"))
    test = sample_dataset(g, cfg.n_test, child_seed(cfg.seed, "test-data"))
    train_seed = child_seed(cfg.seed, f"train-n{n}")
    run_full = train(d, [], list(test.strings), mcfg, tcfg, train_seed, vocab)
    e_star = optimal_learning_epoch(run_full)

    ranked = d.by_frequency()
    m = len(ranked)
    loo = _loo_ranks(m, cfg.loo_budget)

    def loo_task(rank):
        s = ranked[rank][0]
        d_minus = d.without(s)
        if d_minus.size == 0:
            return None  # nothing left to train on; fall back to proxy
        run_minus = train(d_minus, [s], [], mcfg, tcfg, train_seed, vocab)
        return run_minus.curves[s]

    loo_results = _run_tasks(
        [(lambda r=r: loo_task(r)) for r in loo], cfg.workers
    )
    exact_curves = {
        ranked[rank][0]: curve
        for rank, curve in zip(loo, loo_results)
        if curve is not None
    }
    skipped_loo = [f"d{rank}" for rank, c in zip(loo, loo_results) if c is None]

    # proxy pool: untrained test strings first, then leave-one-out curves
    seen = set()
    test_distinct = []
    for t in test.strings:
        if t not in seen and t not in d.freq:
            seen.add(t)
            test_distinct.append(t)
    pool = [(t, string_logprob(g, t), run_full.curves[t]) for t in test_distinct]
    pool += [(s, string_logprob(g, s), c) for s, c in exact_curves.items()]

    curves_out = []
    measures_out = []
    strings_out = []
    proxy_sources = {}
    clamp_totals = {COUNTERFACTUAL.name: 0, CONTEXTUAL.name: 0}
    by_kind: dict[str, list] = {}  # kind key -> [(rank, freq, record)]
    pairs_checked = 0

    test_ids = {t: f"t{j}" for j, t in enumerate(test_distinct)}
    for t in test_distinct:
        strings_out.append((test_ids[t], " ".join(t), 0, string_logprob(g, t)))
        curves_out += curve_rows(test_ids[t], run_full.curves[t])

    # rank ids for proxy-source naming
    rank_ids = {ranked[r][0]: f"d{r}" for r in range(m)}

    for rank, (s, freq) in enumerate(ranked):
        sid = f"d{rank}"
        lp = string_logprob(g, s)
        strings_out.append((sid, " ".join(s), freq, lp))
        train_curve = run_full.curves[s]
        curves_out += curve_rows(sid, train_curve)
        if s in exact_curves:
            heldout_curve = exact_curves[s]
            curves_out += curve_rows(sid, heldout_curve)
        else:
            candidates = [entry for entry in pool if entry[0] != s]
            if not candidates:
                raise RunError(
                    "no held-out curve available: leave-one-out failed and the "
                    "test sample adds no unseen strings; raise n_test or loo_budget"
                )
            pick = proxy_pair(lp, candidates)
            src = candidates[pick][0]
            proxy_sources[sid] = test_ids.get(src, rank_ids.get(src))
            heldout_curve = candidates[pick][2]
        paired = PairedLossCurves(s, train_curve, heldout_curve)
        cf, ctx = _checked_pair(paired)
        pairs_checked += 1
        records = [cf, ctx] + [
            recollection_measure(train_curve, tau) for tau in cfg.taus
        ]
        for rec in records:
            measures_out += measure_rows(sid, rec)
            by_kind.setdefault(_kind_key(rec.kind), []).append((rank, freq, rec))
            if rec.kind.tau is None:
                clamp_totals[rec.kind.name] += rec.clamp_events

    # dataset-level aggregation, expanded to multiset multiplicity
    aggregates_out = []
    at_optimal = {}
    for key in sorted(by_kind):
        entries = by_kind[key]
        expanded = [rec for _, freq, rec in entries for _ in range(freq)]
        agg = dataset_memorization(expanded)
        for e in range(len(agg.frac)):
            tau = entries[0][2].kind.tau
            aggregates_out.append(
                (
                    entries[0][2].kind.name,
                    "" if tau is None else repr(float(tau)),
                    e + 1,
                    float(agg.frac[e]),
                    float(agg.weighted[e]),
                )
            )
        at_optimal[key] = {
            "frac": float(agg.frac[e_star - 1]),
            "weighted": float(agg.weighted[e_star - 1]),
        }

    # frequency split: top vs bottom decile of distinct strings at e*
    decile = max(1, math.ceil(0.1 * m))
    split = {"top_ids": [f"d{r}" for r in range(decile)],
             "bottom_ids": [f"d{r}" for r in range(m - decile, m)]}
    for key, entries in sorted(by_kind.items()):
        scores = {rank: rec.scores[e_star - 1] for rank, _, rec in entries}
        top = [scores[r] for r in range(decile)]
        bottom = [scores[r] for r in range(m - decile, m)]
        split[key] = {
            "top_frac": float(np.mean([v > 0 for v in top])),
            "bottom_frac": float(np.mean([v > 0 for v in bottom])),
        }

    # proxy sanity: exact vs proxy contextual weighted score over the
    # leave-one-out subset (proxy chosen with the string's own entries
    # excluded from the pool)
    proxy_gap = None
    if exact_curves:
        exact_scores = []
        proxy_scores = []
        weights = []
        for rank, (s, freq) in enumerate(ranked):
            if s not in exact_curves:
                continue
            train_curve = run_full.curves[s]
            candidates = [entry for entry in pool if entry[0] != s]
            if not candidates:
                continue
            pick = proxy_pair(string_logprob(g, s), candidates)
            exact_rec = contextual_measure(
                PairedLossCurves(s, train_curve, exact_curves[s])
            )
            proxy_rec = contextual_measure(
                PairedLossCurves(s, train_curve, candidates[pick][2])
            )
            exact_scores.append(exact_rec.scores[e_star - 1])
            proxy_scores.append(proxy_rec.scores[e_star - 1])
            weights.append(freq)
        if weights:
            w = np.asarray(weights, dtype=float)
            exact_w = float(np.average(exact_scores, weights=w))
            proxy_w = float(np.average(proxy_scores, weights=w))
            proxy_gap = {
                "exact_weighted": exact_w,
                "proxy_weighted": proxy_w,
                "abs_gap": abs(exact_w - proxy_w),
                "n_strings": len(weights),
            }

    os.makedirs(out_dir, exist_ok=True)
    summary = {
        "study": "language",
        "fingerprint": fp,
        "config": json.loads(cfg.to_json()),
        "dataset_size": n,
        "distinct_strings": m,
        "taus": list(cfg.taus),
        "optimal_epoch": e_star,
        "test_loss_at_optimal": float(run_full.test_curve_mean[e_star - 1]),
        "at_optimal": at_optimal,
        "frequency_split": split,
        "loo_ids": [f"d{r}" for r in loo],
        "skipped_loo": skipped_loo,
        "proxy_pool_size": len(pool),
        "proxy_sources": proxy_sources,
        "proxy_gap": proxy_gap,
        "clamp_events": clamp_totals,
        "lemma1_pairs_checked": pairs_checked,
        "lemma1_failures": 0,
    }
    artifacts = RunArtifacts(
        out_dir=out_dir,
        summary_json=write_summary(os.path.join(out_dir, "summary.json"), summary),
        fingerprint=fp,
        curves_csv=write_csv(
            os.path.join(out_dir, "curves.csv"), CURVES_HEADER, curves_out
        ),
        measures_csv=write_csv(
            os.path.join(out_dir, "measures.csv"), MEASURES_HEADER, measures_out
        ),
        strings_csv=write_csv(
            os.path.join(out_dir, "strings.csv"), STRINGS_HEADER, strings_out
        ),
        aggregates_csv=write_csv(
            os.path.join(out_dir, "aggregates.csv"), AGGREGATES_HEADER, aggregates_out
        ),
    )
    return emit_reports(artifacts)


# ---------------------------------------------------------------------------
# size sweep


def run_size_sweep(cfg: ExperimentConfig) -> RunArtifacts:
    """Run the language study at every configured size and tabulate test
    loss and weighted memorization at the optimal epoch."""
    _, _, _, _, fp = _setup(cfg)
    os.makedirs(cfg.out_dir, exist_ok=True)
    sweep_rows = []
    summary_rows = []
    for n in cfg.sizes:
        sub = run_language_study(
            cfg, size=n, out_dir=os.path.join(cfg.out_dir, f"size-{n}")
        )
        sub_summary = read_summary(sub.summary_json)
        row = {
            "size": n,
            "optimal_epoch": sub_summary["optimal_epoch"],
            "test_loss": sub_summary["test_loss_at_optimal"],
            "weighted_at_optimum": {
                key: v["weighted"] for key, v in sub_summary["at_optimal"].items()
            },
            "artifacts": sub.out_dir,
        }
        summary_rows.append(row)
        for key in sorted(row["weighted_at_optimum"]):
            sweep_rows.append(
                (
                    n,
                    row["optimal_epoch"],
                    float(row["test_loss"]),
                    key,
                    float(row["weighted_at_optimum"][key]),
                )
            )

    trends = None
    if len(cfg.sizes) >= 2:
        def series(key):
            return [r["weighted_at_optimum"][key] for r in summary_rows]

        keys = summary_rows[0]["weighted_at_optimum"]
        rec_keys = [k for k in keys if k.startswith("recollection")]
        trends = {
            "test_loss_non_increasing": _non_increasing(
                [r["test_loss"] for r in summary_rows]
            ),
            "contextual_weighted_non_increasing": _non_increasing(
                series(CONTEXTUAL.name)
            ),
            "recollection_weighted_non_decreasing": all(
                _non_increasing(series(k)[::-1]) for k in rec_keys
            ),
        }

    summary = {
        "study": "size-sweep",
        "fingerprint": fp,
        "config": json.loads(cfg.to_json()),
        "sizes": list(cfg.sizes),
        "rows": summary_rows,
        "trends": trends,
    }
    artifacts = RunArtifacts(
        out_dir=cfg.out_dir,
        summary_json=write_summary(
            os.path.join(cfg.out_dir, "summary.json"), summary
        ),
        fingerprint=fp,
        sweep_csv=write_csv(
            os.path.join(cfg.out_dir, "sweep.csv"), SWEEP_HEADER, sweep_rows
        ),
    )
    return emit_reports(artifacts)


def _non_increasing(values, slack: float = 1e-12) -> bool:
    return all(b <= a + slack for a, b in zip(values, values[1:]))
