"""Command-line interface.

Subcommands: sample, entropy, train, probe-study, language-study,
size-sweep, report. Exit codes: 0 success, 1 bad configuration or
arguments, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .errors import ConfigError, RunError
from .grammar import (
    entropy_exact,
    entropy_monte_carlo,
    load_grammar,
    sample_dataset,
    string_logprob,
)
from .harness import (
    ExperimentConfig,
    child_seed,
    run_language_study,
    run_paired_probe_study,
    run_size_sweep,
    _setup,
)
from .reports import (
    CURVES_HEADER,
    STRINGS_HEADER,
    RunArtifacts,
    artifacts_from_dir,
    curve_rows,
    emit_reports,
    write_csv,
    write_summary,
)
from .training import train


def _load_config(args) -> ExperimentConfig:
    """Experiment config from --config JSON plus flag overrides."""
    if args.config:
        try:
            with open(args.config) as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config file: {exc}") from None
        cfg = ExperimentConfig.from_json(text)
    else:
        if not args.grammar:
            raise ConfigError("either --config or --grammar is required")
        cfg = ExperimentConfig(grammar=args.grammar)
    overrides = {}
    if args.grammar:
        overrides["grammar"] = args.grammar
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out_dir:
        overrides["out_dir"] = args.out_dir
    if args.workers is not None:
        overrides["workers"] = args.workers
    if overrides:
        payload = json.loads(cfg.to_json())
        payload.update(overrides)
        cfg = ExperimentConfig.from_json(json.dumps(payload))
    return cfg


def _report_artifacts(artifacts: RunArtifacts) -> None:
    print(f"fingerprint {artifacts.fingerprint}")
    for name in (
        "summary_json", "curves_csv", "measures_csv", "strings_csv",
        "aggregates_csv", "sweep_csv",
    ):
        path = getattr(artifacts, name)
        if path:
            print(path)
    for svg in artifacts.plot_svgs:
        print(svg)


def _cmd_sample(args) -> None:
    g = load_grammar(args.grammar)
    d = sample_dataset(g, args.n, args.seed)
    if args.json:
        print(d.to_json())
    else:
        for s in d.strings:
            print(" ".join(s))


def _cmd_entropy(args) -> None:
    g = load_grammar(args.grammar)
    if args.method == "exact":
        print(f"entropy {entropy_exact(g, args.max_len)!r}")
    else:
        est, se = entropy_monte_carlo(g, args.n, args.seed)
        print(f"entropy {est!r}")
        print(f"std_error {se!r}")


def _cmd_train(args) -> None:
    """One training run on a sampled dataset; emits the curve CSV."""
    cfg = _load_config(args)
    g, vocab, mcfg, tcfg, fp = _setup(cfg)
    n = args.n or cfg.sizes[0]
    d = sample_dataset(g, n, child_seed(cfg.seed, f"data-n{n}"))
    test = sample_dataset(g, cfg.n_test, child_seed(cfg.seed, "test-data"))
    run = train(
        d, [], list(test.strings), mcfg, tcfg,
        child_seed(cfg.seed, f"train-n{n}"), vocab,
    )
    out_dir = cfg.out_dir
    os.makedirs(out_dir, exist_ok=True)
    ranked = d.by_frequency()
    strings_out = []
    curves_out = []
    for rank, (s, freq) in enumerate(ranked):
        strings_out.append((f"d{rank}", " ".join(s), freq, string_logprob(g, s)))
        curves_out += curve_rows(f"d{rank}", run.curves[s])
    summary = {
        "study": "train",
        "fingerprint": fp,
        "config": json.loads(cfg.to_json()),
        "dataset_size": n,
        "final_test_loss": float(run.test_curve_mean[-1]),
        "seeds": run.seeds,
    }
    artifacts = RunArtifacts(
        out_dir=out_dir,
        summary_json=write_summary(os.path.join(out_dir, "summary.json"), summary),
        fingerprint=fp,
        curves_csv=write_csv(
            os.path.join(out_dir, "curves.csv"), CURVES_HEADER, curves_out
        ),
        strings_csv=write_csv(
            os.path.join(out_dir, "strings.csv"), STRINGS_HEADER, strings_out
        ),
    )
    _report_artifacts(artifacts)


def _cmd_probe_study(args) -> None:
    _report_artifacts(run_paired_probe_study(_load_config(args)))


def _cmd_language_study(args) -> None:
    _report_artifacts(run_language_study(_load_config(args)))


def _cmd_size_sweep(args) -> None:
    _report_artifacts(run_size_sweep(_load_config(args)))


def _cmd_report(args) -> None:
    if not args.out_dir:
        raise ConfigError("report needs --out-dir pointing at study outputs")
    _report_artifacts(emit_reports(artifacts_from_dir(args.out_dir)))


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on bad usage; route through ConfigError so bad
    arguments exit 1 like every other configuration problem."""

    def error(self, message):
        raise ConfigError(message)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--grammar", help="grammar file path or asset name")
    p.add_argument("--config", help="experiment config JSON file")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out-dir", default=None)
    p.add_argument("--workers", type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="rote",
        description="Train small language models on grammar-sampled strings "
        "and measure how they memorize.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample", help="sample strings from a grammar")
    p.add_argument("--grammar", required=True)
    p.add_argument("--n", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--json", action="store_true", help="emit dataset JSON")
    p.set_defaults(func=_cmd_sample)

    p = sub.add_parser("entropy", help="language entropy, exact or sampled")
    p.add_argument("--grammar", required=True)
    p.add_argument("--method", choices=("exact", "mc"), default="exact")
    p.add_argument("--max-len", type=int, default=64, help="exact enumeration cap")
    p.add_argument("--n", type=int, default=10_000, help="Monte Carlo samples")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_entropy)

    p = sub.add_parser("train", help="one training run; emits loss curves")
    _add_common(p)
    p.add_argument("--n", type=int, default=None, help="dataset size")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser(
        "probe-study", help="paired with/without training for probe strings"
    )
    _add_common(p)
    p.set_defaults(func=_cmd_probe_study)

    p = sub.add_parser(
        "language-study", help="dataset-level memorization on one training run"
    )
    _add_common(p)
    p.set_defaults(func=_cmd_language_study)

    p = sub.add_parser("size-sweep", help="language study across dataset sizes")
    _add_common(p)
    p.set_defaults(func=_cmd_size_sweep)

    p = sub.add_parser("report", help="re-render plots from emitted CSVs")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        args.func(args)
        return 0
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except RunError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
