"""End-to-end acceptance gates, one test per numbered criterion.

Exact property suites (measure algebra, grammar probabilities, gradient
checks, determinism, worked examples) run at fixed tolerances; the three
study-level tests re-run the bundled desk-grammar experiments from
scratch and check the directional claims by majority over three seeds.
The terminal summary prints one pass/fail line per criterion (see
conftest.py).

Runtime budgets are asserted around each criterion's own work; the
shared study fixtures are timed inside the criterion that owns them
(6 owns the probe studies, 7 the language studies, 8 the size sweeps).
Every curve pair an experiment emits is additionally ordering-checked at
emit time inside the harness itself, which raises instead of writing
artifacts on a violation; criterion 1 re-verifies the written pairs
independently.
"""

import itertools
import json
import math
import time

import numpy as np
import pytest

from conftest import note
from oracles import oracle_string_probs, worst_finite_difference_error
from rote import autodiff as ad
from rote.autodiff import Tensor
from rote.cli import main as cli_main
from rote.errors import ConfigError
from rote.grammar import (
    dataset_from_strings,
    entropy_exact,
    entropy_monte_carlo,
    enumerate_language,
    load_grammar,
    parse_grammar,
    sample_dataset,
    sample_string,
    string_logprob,
)
from rote.harness import (
    ExperimentConfig,
    run_language_study,
    run_paired_probe_study,
    run_size_sweep,
)
from rote.measures import (
    CONTEXTUAL,
    MemorizationRecord,
    PairedLossCurves,
    contextual_measure,
    counterfactual_measure,
    dataset_memorization,
    expected_measure,
    lemma1_check,
    proxy_pair,
    recollection_measure,
    reference_upper_bound,
)
from rote.model import (
    ModelConfig,
    Vocabulary,
    forward,
    init_params,
    loss_gradient,
    sequence_accuracy,
    sequence_loss,
)
from rote.reports import read_csv, read_summary, write_csv
from rote.training import (
    LossCurve,
    TrainConfig,
    TrainRun,
    optimal_contextual_loss,
    optimal_learning_epoch,
    train,
)


DESK_SEEDS = (0, 1, 2)
REC_TAU = 0.5  # calibrated so the threshold measure is informative at desk scale

COIN = "S -> a [0.5]\nS -> b [0.5]"
BIASED = "S -> a [0.95]\nS -> b [0.05]"
FINITE_AMBIGUOUS = "S -> A A [1.0]\nA -> a [0.5]\nA -> a a [0.5]"

AB = Vocabulary.from_terminals(["b", "a"])  # sorted -> ("a", "b")
S = ("a", "b")


def curve(losses, role="train", string=S):
    return LossCurve(string=string, losses=np.asarray(losses, dtype=float), role=role)


def paired(train_losses, heldout_losses, string=S):
    return PairedLossCurves(
        string=string,
        train_curve=curve(train_losses, "train", string),
        heldout_curve=curve(heldout_losses, "heldout", string),
    )


def tiny_model_config(**kw):
    base = dict(
        vocab_size=AB.size, d_model=16, n_layers=2, n_heads=2,
        context_len=12, init_scale=0.3,
    )
    base.update(kw)
    return ModelConfig(**base)


# ---------------------------------------------------------------------------
# shared desk-scale study fixtures


@pytest.fixture(scope="module")
def determinism_runs(tmp_path_factory):
    """The same tiny probe study driven twice through the CLI."""
    root = tmp_path_factory.mktemp("determinism")
    cfg_path = root / "config.json"
    cfg_path.write_text(
        json.dumps(
            {
                "grammar": "desk_lo", "sizes": [24], "n_test": 16,
                "k_resamples": 2, "taus": [REC_TAU], "loo_budget": 3,
                "seed": 5, "train": {"epochs": 6},
            }
        )
    )
    runs = []
    for tag in ("a", "b"):
        out = root / tag
        t0 = time.monotonic()
        rc = cli_main(
            ["probe-study", "--config", str(cfg_path), "--out-dir", str(out)]
        )
        assert rc == 0
        runs.append((out, time.monotonic() - t0))
    return runs


@pytest.fixture(scope="module")
def probe_studies(tmp_path_factory):
    """Paired probe studies on the skewed desk grammar, one per seed."""
    root = tmp_path_factory.mktemp("probe-studies")
    t0 = time.monotonic()
    summaries = []
    for seed in DESK_SEEDS:
        cfg = ExperimentConfig(
            grammar="desk_lo", sizes=(64,), k_resamples=3, taus=(REC_TAU,),
            seed=seed, out_dir=str(root / f"seed{seed}"),
        )
        summaries.append(read_summary(run_paired_probe_study(cfg).summary_json))
    return summaries, time.monotonic() - t0


@pytest.fixture(scope="module")
def language_studies(tmp_path_factory):
    """Whole-language studies on both desk grammars, one per seed."""
    root = tmp_path_factory.mktemp("language-studies")
    t0 = time.monotonic()
    summaries = {}
    for grammar in ("desk_hi", "desk_lo"):
        for seed in DESK_SEEDS:
            cfg = ExperimentConfig(
                grammar=grammar, sizes=(64,), taus=(REC_TAU,), seed=seed,
                out_dir=str(root / f"{grammar}-seed{seed}"),
            )
            summaries[grammar, seed] = read_summary(
                run_language_study(cfg).summary_json
            )
    return summaries, time.monotonic() - t0


@pytest.fixture(scope="module")
def size_sweeps(tmp_path_factory):
    """Dataset-size sweeps on the skewed desk grammar, one per seed.
    loo_budget covers every distinct string, so the trend numbers carry
    no proxy substitution error."""
    root = tmp_path_factory.mktemp("size-sweeps")
    t0 = time.monotonic()
    summaries = []
    for seed in DESK_SEEDS:
        cfg = ExperimentConfig(
            grammar="desk_lo", sizes=(16, 64, 256), taus=(REC_TAU,),
            loo_budget=27, seed=seed, out_dir=str(root / f"seed{seed}"),
        )
        summaries.append(read_summary(run_size_sweep(cfg).summary_json))
    return summaries, time.monotonic() - t0


# ---------------------------------------------------------------------------
# criteria


def test_criterion_01_ordering_and_bound(determinism_runs):
    """Ordering/bound relation holds on 1,000 random and all emitted curve pairs."""
    t0 = time.monotonic()
    rng = np.random.default_rng(2026)
    for _ in range(1000):
        n_epochs = int(rng.integers(1, 13))
        train_losses = rng.uniform(0.0, 10.0, n_epochs)
        train_losses[rng.random(n_epochs) < 0.1] = 0.0  # exercise the loss floor
        heldout_losses = rng.uniform(0.01, 10.0, n_epochs)
        report = lemma1_check(paired(train_losses, heldout_losses))
        assert report.ordering_ok and report.bound_ok

    # re-verify every pair the tiny experiment wrote to disk
    out_dir, _ = determinism_runs[0]
    tokens = {
        r["string_id"]: tuple(r["tokens"].split())
        for r in read_csv(out_dir / "strings.csv")
    }
    by_id = {}
    for row in read_csv(out_dir / "curves.csv"):
        key = (row["string_id"], row["role"])
        by_id.setdefault(key, []).append((int(row["epoch"]), float(row["loss"])))
    pair_ids = sorted({sid for sid, role in by_id if (sid, "heldout") in by_id})
    assert pair_ids, "experiment wrote no paired curves"
    for sid in pair_ids:
        s = tokens[sid.split(".")[0]]
        losses = {
            role: np.array([l for _, l in sorted(by_id[sid, role])])
            for role in ("train", "heldout")
        }
        report = lemma1_check(paired(losses["train"], losses["heldout"], s))
        assert report.ordering_ok and report.bound_ok
    elapsed = time.monotonic() - t0
    note(1, f"1000 random + {len(pair_ids)} emitted pairs, {elapsed:.1f}s")
    assert elapsed < 10.0


def test_criterion_02_grammar_oracle_equivalence():
    """String probabilities, language mass, and exact entropy match oracles."""
    t0 = time.monotonic()
    cases = [
        (load_grammar("desk_hi"), 6),
        (load_grammar("desk_lo"), 6),
        (parse_grammar(FINITE_AMBIGUOUS), 4),  # "a a a" has two derivations
        (parse_grammar(COIN), 1),
        (parse_grammar(BIASED), 1),
    ]
    n_strings = 0
    for g, max_len in cases:
        rules = [(r.lhs, r.rhs, r.prob) for r in g.rules]
        oracle = oracle_string_probs(rules, g.start, max_len)
        assert oracle
        for tokens, p in oracle.items():
            assert math.isclose(
                string_logprob(g, tokens), math.log(p), abs_tol=1e-12
            )
        n_strings += len(oracle)
        mass = sum(p for _, p in enumerate_language(g, max_len))
        assert math.isclose(mass, 1.0, abs_tol=1e-12)
    assert math.isclose(
        entropy_exact(parse_grammar(COIN), 1), math.log(2), abs_tol=1e-9
    )
    analytic = -(0.95 * math.log(0.95) + 0.05 * math.log(0.05))
    assert math.isclose(
        entropy_exact(parse_grammar(BIASED), 1), analytic, abs_tol=1e-9
    )
    elapsed = time.monotonic() - t0
    note(2, f"5 grammars, {n_strings} strings, {elapsed:.1f}s")
    assert elapsed < 30.0


def test_criterion_03_entropy_estimator():
    """Monte Carlo entropy agrees with exact values and separates g1 from g2."""
    t0 = time.monotonic()
    for name, max_len in (("desk_hi", 6), ("desk_lo", 6)):
        g = load_grammar(name)
        exact = entropy_exact(g, max_len)
        for seed in DESK_SEEDS:
            est, se = entropy_monte_carlo(g, 10_000, seed)
            # the 1e-12 floor covers uniform languages, where se is 0
            assert abs(est - exact) <= 3 * se + 1e-12
    g1, g2 = load_grammar("g1"), load_grammar("g2")
    h1 = 36 * math.log(2)  # 36 fair binary choices per string
    h2 = 36 * -(0.95 * math.log(0.95) + 0.05 * math.log(0.05))
    gap = []
    for seed in DESK_SEEDS:
        est1, se1 = entropy_monte_carlo(g1, 10_000, seed)
        est2, se2 = entropy_monte_carlo(g2, 10_000, seed)
        assert abs(est1 - h1) <= 3 * se1 + 1e-12
        assert abs(est2 - h2) <= 3 * se2 + 1e-12
        assert est1 > est2
        gap.append(est1 - est2)
    elapsed = time.monotonic() - t0
    note(3, f"g1-g2 gap {min(gap):.2f}..{max(gap):.2f} nats, {elapsed:.0f}s")
    assert elapsed < 120.0


def test_criterion_04_gradient_check():
    """Analytic gradients match central finite differences."""
    from rote.model import batch_losses

    t0 = time.monotonic()
    batch = [("a", "b", "a"), ("b", "b")]
    worst = 0.0
    for seed in DESK_SEEDS:
        cfg = tiny_model_config(d_model=8, context_len=8)
        params = init_params(cfg, seed)
        grads = loss_gradient(params, AB, batch)

        def loss_fn():
            return float(np.mean(batch_losses(params, AB, batch)))

        rng = np.random.default_rng(300 + seed)
        worst = max(
            worst,
            worst_finite_difference_error(
                loss_fn, params.tensors, grads, n_coords=40, rng=rng
            ),
        )
    assert worst < 1e-5
    elapsed = time.monotonic() - t0
    note(4, f"120 coords, worst rel err {worst:.1e}, {elapsed:.0f}s")
    assert elapsed < 120.0


def test_criterion_05_determinism(determinism_runs):
    """Repeating a subcommand with the same config and seed is byte-identical."""
    (dir_a, t_a), (dir_b, t_b) = determinism_runs
    t0 = time.monotonic()
    csvs = sorted(p.name for p in dir_a.glob("*.csv"))
    assert csvs, "run produced no CSV files"
    for name in csvs:
        assert (dir_a / name).read_bytes() == (dir_b / name).read_bytes(), name
    for name in sorted(p.name for p in dir_a.glob("*.svg")):
        assert (dir_a / name).read_bytes() == (dir_b / name).read_bytes(), name
    compare = time.monotonic() - t0
    note(5, f"{len(csvs)} CSVs identical; runs {t_a:.1f}s/{t_b:.1f}s")
    assert t_a + t_b + compare <= 2 * max(t_a, t_b) + 10.0


def _order(starts):
    """Pairwise order pattern of start epochs; absent counts as +inf."""
    xs = [math.inf if s is None else s for s in starts]
    return tuple((a > b) - (a < b) for a, b in itertools.combinations(xs, 2))


def test_criterion_06_start_ordering(probe_studies):
    """Recollection starts follow frequency; ratio measures order differently."""
    summaries, elapsed = probe_studies
    rec_key = f"recollection@{REC_TAU!r}"
    ordered_votes = 0
    disagree_votes = 0
    for summary in summaries:
        assert summary["lemma1_failures"] == 0
        assert summary["lemma1_pairs_checked"] == 9  # 3 probes x 3 resamples
        probes = summary["probes"]  # already sorted most frequent first
        assert len(probes) == 3
        assert probes[0]["frequency"] > probes[-1]["frequency"]
        starts = {
            kind: [p["start_epochs"][kind]["expected"] for p in probes]
            for kind in (rec_key, "counterfactual", "contextual")
        }
        rec = [math.inf if s is None else s for s in starts[rec_key]]
        if rec[0] != math.inf and all(a <= b for a, b in zip(rec, rec[1:])):
            ordered_votes += 1
        if _order(starts["counterfactual"]) != _order(starts[rec_key]) or _order(
            starts["contextual"]
        ) != _order(starts[rec_key]):
            disagree_votes += 1
    note(
        6,
        f"rec follows frequency {ordered_votes}/3, "
        f"order differs {disagree_votes}/3, {elapsed:.0f}s",
    )
    assert ordered_votes >= 2
    assert disagree_votes >= 2
    assert elapsed < 1800.0


def test_criterion_07_nonzero_contextual_memorization(language_studies):
    """Weighted contextual memorization at the optimal epoch is positive."""
    summaries, elapsed = language_studies
    values = {}
    for grammar in ("desk_hi", "desk_lo"):
        weighted = [
            summaries[grammar, seed]["at_optimal"]["contextual"]["weighted"]
            for seed in DESK_SEEDS
        ]
        values[grammar] = weighted
        assert sum(w > 0 for w in weighted) >= 2, (grammar, weighted)
    note(
        7,
        "ctx weighted "
        + " ".join(
            f"{g} {min(v):.2f}..{max(v):.2f}" for g, v in values.items()
        )
        + f", {elapsed:.0f}s",
    )
    assert elapsed < 1800.0


def test_criterion_08_size_trends(size_sweeps):
    """Contextual falls and recollection rises with size, by seed majority."""
    summaries, elapsed = size_sweeps
    rec_key = f"recollection@{REC_TAU!r}"
    ctx_votes = 0
    rec_votes = 0
    for summary in summaries:
        rows = summary["rows"]
        assert [r["size"] for r in rows] == [16, 64, 256]
        ctx = [r["weighted_at_optimum"]["contextual"] for r in rows]
        rec = [r["weighted_at_optimum"][rec_key] for r in rows]
        ctx_votes += all(b <= a + 1e-12 for a, b in zip(ctx, ctx[1:]))
        rec_votes += all(a <= b + 1e-12 for a, b in zip(rec, rec[1:]))
    note(
        8,
        f"ctx non-increasing {ctx_votes}/3, rec non-decreasing {rec_votes}/3, "
        f"{elapsed:.0f}s",
    )
    assert ctx_votes >= 2
    assert rec_votes >= 2
    assert elapsed < 5400.0


def test_criterion_09_worked_examples(tmp_path):
    """Worked examples hold as exact assertions."""
    t0 = time.monotonic()
    approx = lambda x: pytest.approx(x, abs=1e-12)

    # threshold measure: strict indicator, non-sticky
    rec = recollection_measure(curve([0.5, 0.3, 0.19, 0.1]), 0.2)
    assert rec.start_epoch == 3 and rec.scores.tolist() == [0, 0, 1, 1]
    rec = recollection_measure(curve([0.5, 0.9]), 0.2)
    assert rec.start_epoch is None and rec.scores.tolist() == [0, 0]
    rec = recollection_measure(curve([0.19, 0.25, 0.15]), 0.2)
    assert rec.start_epoch == 1 and rec.scores.tolist() == [1, 0, 1]

    # train/held-out gap ratio: substitution cases to 1e-12
    cf = counterfactual_measure(paired([0.5], [2.0]))
    assert cf.start_epoch == 1 and cf.scores[0] == approx(0.75)
    cf = counterfactual_measure(paired([1.0, 1.0], [1.0, 1.0]))
    assert cf.start_epoch is None and cf.scores.tolist() == [0, 0]
    cf = counterfactual_measure(paired([1.0, 0.8, 0.4], [1.0, 1.0, 1.0]))
    assert cf.start_epoch == 2 and cf.scores.tolist() == approx([0, 0.2, 0.6])

    # ratio against the best held-out loss over all epochs
    ctx = contextual_measure(paired([1.5, 0.8, 0.6], [2.0, 1.0, 1.5]))
    assert ctx.start_epoch == 2 and ctx.scores.tolist() == approx([0, 0.2, 0.4])
    ctx = contextual_measure(paired([2.0, 1.5], [1.0, 1.0]))
    assert ctx.start_epoch is None

    # identical curves satisfy the ordering check with both starts absent
    report = lemma1_check(paired([1.0, 0.5], [1.0, 0.5]))
    assert report.ordering_ok and report.bound_ok
    assert report.cf_record.start_epoch is None
    assert report.ctx_record.start_epoch is None

    # resample averaging
    one = MemorizationRecord(S, CONTEXTUAL, 1, np.array([0.0, 1.0]), 0)
    zero = MemorizationRecord(S, CONTEXTUAL, None, np.array([0.0, 0.0]), 0)
    assert expected_measure([one], CONTEXTUAL).scores.tolist() == [0.0, 1.0]
    exp = expected_measure([one, zero], CONTEXTUAL)
    assert exp.start_epoch == 2 and exp.scores.tolist() == [0.0, 0.5]

    # dataset aggregation
    records = [
        MemorizationRecord(S, CONTEXTUAL, None, np.array([v]), 0)
        for v in (0.2, 0.0, 0.5, 0.0)
    ]
    agg = dataset_memorization(records)
    assert agg.frac[0] == 0.5 and agg.weighted[0] == approx(0.175)
    zeros = dataset_memorization(records[1::2])
    assert zeros.frac[0] == 0.0 and zeros.weighted[0] == 0.0
    ones = [MemorizationRecord(S, CONTEXTUAL, 1, np.array([1.0]), 0)] * 2
    agg = dataset_memorization(ones)
    assert agg.frac[0] == 1.0 and agg.weighted[0] == 1.0

    # proxy choice: nearest log-probability, ties to the lowest index
    pool = [(S, -5.0, None), (S, -3.0, None), (S, -1.2, None)]
    assert proxy_pair(-3.1, pool) == 1
    assert proxy_pair(-3.0, [(S, -2.9, None), (S, -3.0, None)]) == 1
    assert reference_upper_bound(1.0, 0.3) is False
    assert reference_upper_bound(0.0, 0.7) is True

    # optimal-epoch and optimal-loss scalars
    def run_shell(test_curve):
        return TrainRun(
            dataset=dataset_from_strings([S], 0),
            model_config=tiny_model_config(), train_config=TrainConfig(),
            curves={}, accuracy_curves={},
            test_curve_mean=np.asarray(test_curve, dtype=float),
            seeds={}, params=None,
        )

    assert optimal_learning_epoch(run_shell([3.0, 2.0, 1.5, 1.7])) == 3
    assert optimal_learning_epoch(run_shell([2.0, 2.0])) == 1
    assert optimal_learning_epoch(run_shell(list(range(50, 0, -1)))) == 50
    assert optimal_contextual_loss(curve([2.0, 1.1, 1.4], "heldout")) == 1.1
    assert optimal_contextual_loss(curve([0.7, 0.7], "heldout")) == 0.7

    # grammar basics
    g = parse_grammar("S -> a [1.0]")
    assert g.terminals == {"a"} and len(g.rules) == 1
    with pytest.raises(ConfigError):
        parse_grammar("S -> a [0.6]\nS -> b [0.3]")
    det = parse_grammar("S -> a b [1.0]")
    drawn = sample_string(det, 0)
    assert drawn.tokens == ("a", "b") and drawn.derivation_logprob == 0.0
    assert sample_string(det, 3) == sample_string(det, 3)
    uniq = parse_grammar("S -> A B [1.0]\nA -> x [0.95]\nA -> y [0.05]\nB -> z [1.0]")
    assert string_logprob(uniq, ("x", "z")) == approx(math.log(0.95))
    coin = parse_grammar(COIN)
    with pytest.raises(ConfigError):
        string_logprob(coin, ("q",))
    assert enumerate_language(coin, 1) == [(("a",), 0.5), (("b",), 0.5)]
    geometric = parse_grammar("S -> a S [0.5]\nS -> a [0.5]")
    assert enumerate_language(geometric, 3) == [
        (("a",), 0.5), (("a", "a"), 0.25), (("a", "a", "a"), 0.125),
    ]
    assert entropy_exact(coin, 1) == approx(math.log(2))
    analytic = -(0.95 * math.log(0.95) + 0.05 * math.log(0.05))
    assert entropy_exact(parse_grammar(BIASED), 1) == approx(analytic)
    assert entropy_exact(parse_grammar("S -> a [1.0]"), 1) == 0.0
    assert entropy_monte_carlo(parse_grammar("S -> a [1.0]"), 100, 0) == (0.0, 0.0)
    d = sample_dataset(det, 4, 0)
    assert d.freq == {("a", "b"): 4}
    forced = sample_dataset(coin, 1000, 0, exclude=("a",))
    assert set(forced.strings) == {("b",)}
    assert sample_dataset(coin, 50, 3).strings == sample_dataset(coin, 50, 3).strings

    # model closed forms at zero init
    p0 = init_params(tiny_model_config(init_scale=0.0), 0)
    dist = forward(p0, [0])
    np.testing.assert_array_equal(dist, np.full(AB.size, 1.0 / AB.size))
    p1 = init_params(tiny_model_config(), 1)
    dist = forward(p1, list(AB.encode(("a", "b"))))
    assert abs(dist.sum() - 1.0) <= 1e-12
    np.testing.assert_array_equal(dist, forward(p1, list(AB.encode(("a", "b")))))
    assert sequence_loss(p0, AB, ("a", "b")) == approx(math.log(AB.size))
    assert sequence_accuracy(p0, AB, ("b", "b")) == 0.0  # zero-init argmax is id 0

    # a handcrafted position emitter drives the loss to the floor
    emit = init_params(tiny_model_config(init_scale=0.0, context_len=8), 0)
    targets = list(AB.encode(("a", "b", "a"))) + [AB.eos_id]
    for j, t in enumerate(targets):
        emit.tensors["pos_emb"].data[j, j] = 1.0
        emit.tensors["out_proj"].data[j, t] += 40.0
    assert sequence_loss(emit, AB, ("a", "b", "a")) < 1e-12
    assert sequence_accuracy(emit, AB, ("a", "b", "a")) == 1.0

    # mean-NLL gradient at zero logits: (1/V - onehot) * mask / (len * B)
    V, targets = 5, np.array([[2, 0], [1, 4]])
    mask = np.array([[1.0, 1.0], [1.0, 0.0]])
    t = Tensor(np.zeros((2, 2, V)))
    ad.mean_nll(t, targets, mask).backward()
    onehot = np.zeros((2, 2, V))
    for b in range(2):
        for i in range(2):
            onehot[b, i, targets[b, i]] = 1.0
    np.testing.assert_allclose(
        t.grad,
        (1.0 / V - onehot) * mask[..., None] / mask.sum(-1)[:, None, None] / 2,
        atol=1e-10,
    )

    # duplicated batch leaves the mean gradient unchanged
    g1 = loss_gradient(p1, AB, [("a", "b"), ("b",)])
    g2 = loss_gradient(p1, AB, [("a", "b"), ("b",), ("a", "b"), ("b",)])
    for name in g1:
        np.testing.assert_allclose(g2[name], g1[name], atol=1e-12, rtol=0)

    # initialization determinism
    a, b = init_params(tiny_model_config(), 7), init_params(tiny_model_config(), 7)
    assert all(
        np.array_equal(a.tensors[n].data, b.tensors[n].data) for n in a.tensors
    )
    c = init_params(tiny_model_config(), 8)
    assert any(
        not np.array_equal(a.tensors[n].data, c.tensors[n].data) for n in a.tensors
    )
    z = init_params(tiny_model_config(init_scale=0.0), 9)
    assert all(not t.data.any() for t in z.tensors.values())

    # zero learning rate freezes every curve; reruns are bit-identical
    ds = dataset_from_strings([("a", "b"), ("b",), ("a", "b")], 0)
    mcfg = tiny_model_config(d_model=8, context_len=8, init_scale=0.05)
    frozen = train(ds, [], [], mcfg, TrainConfig(2, 2, 0.0), 0, AB)
    assert all(np.ptp(c.losses) == 0.0 for c in frozen.curves.values())
    r1 = train(ds, [], [], mcfg, TrainConfig(2, 2, 3e-3), 0, AB)
    r2 = train(ds, [], [], mcfg, TrainConfig(2, 2, 3e-3), 0, AB)
    assert all(
        np.array_equal(r1.curves[s].losses, r2.curves[s].losses) for s in r1.curves
    )
    assert all(
        np.array_equal(r1.params.tensors[n].data, r2.params.tensors[n].data)
        for n in r1.params.tensors
    )

    # an empty measure set still yields a valid header-only CSV
    empty = tmp_path / "empty.csv"
    write_csv(empty, ("a", "b"), [])
    assert empty.read_bytes() == b"a,b\n"

    elapsed = time.monotonic() - t0
    note(9, f"{elapsed:.1f}s")
    assert elapsed < 5.0


def test_criterion_10_proxy_gap_reported(language_studies):
    """Exact and proxy contextual scores are both reported with a finite gap."""
    summaries, _ = language_studies
    summary = summaries["desk_lo", 0]
    assert len(summary["loo_ids"]) <= 8
    gap = summary["proxy_gap"]
    assert gap is not None
    assert 1 <= gap["n_strings"] <= 8
    for key in ("exact_weighted", "proxy_weighted", "abs_gap"):
        assert math.isfinite(gap[key])
    assert gap["abs_gap"] == pytest.approx(
        abs(gap["exact_weighted"] - gap["proxy_weighted"]), abs=1e-12
    )
    note(
        10,
        f"exact {gap['exact_weighted']:.3f} proxy {gap['proxy_weighted']:.3f} "
        f"gap {gap['abs_gap']:.3f} over {gap['n_strings']} strings",
    )
