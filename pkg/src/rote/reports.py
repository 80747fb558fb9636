"""Report emission: CSVs with pinned schemas, a key-sorted summary JSON,
and SVG plots rendered from the CSVs.

Everything here is deterministic: floats are written with repr (shortest
exact round trip), JSON keys are sorted, and the SVG backend gets a fixed
hash salt and no timestamp, so re-running a study with the same config
and seed reproduces identical bytes.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
from dataclasses import dataclass

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .errors import ConfigError

__all__ = [
    "RunArtifacts",
    "CURVES_HEADER",
    "MEASURES_HEADER",
    "AGGREGATES_HEADER",
    "SWEEP_HEADER",
    "STRINGS_HEADER",
    "fingerprint",
    "write_csv",
    "read_csv",
    "curve_rows",
    "measure_rows",
    "write_summary",
    "read_summary",
    "artifacts_from_dir",
    "emit_reports",
]

CURVES_HEADER = ("string_id", "role", "epoch", "loss")
MEASURES_HEADER = ("string_id", "kind", "tau", "epoch", "score", "started", "clamp_events")
AGGREGATES_HEADER = ("kind", "tau", "epoch", "frac", "weighted")
SWEEP_HEADER = ("size", "optimal_epoch", "test_loss", "kind", "weighted_at_optimum")
STRINGS_HEADER = ("string_id", "tokens", "frequency", "logprob")


@dataclass(frozen=True)
class RunArtifacts:
    """Paths of one study's outputs plus the config fingerprint."""

    out_dir: str
    summary_json: str
    fingerprint: str
    curves_csv: str | None = None
    measures_csv: str | None = None
    strings_csv: str | None = None
    aggregates_csv: str | None = None
    sweep_csv: str | None = None
    plot_svgs: tuple[str, ...] = ()


def fingerprint(*texts: str) -> str:
    """Stable hex digest of the given texts (config JSON, grammar source)."""
    h = hashlib.sha256()
    for t in texts:
        h.update(t.encode())
        h.update(b"\x00")
    return h.hexdigest()


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(path, header, rows) -> str:
    path = os.fspath(path)
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def curve_rows(string_id: str, curve) -> list[tuple]:
    """Pinned curves schema rows for one loss curve (epochs are 1-based)."""
    return [
        (string_id, curve.role, e + 1, float(v))
        for e, v in enumerate(curve.losses)
    ]


def measure_rows(string_id: str, record) -> list[tuple]:
    """Pinned measures schema rows for one record. tau is blank for the
    ratio measures; started flags epochs at or past the start epoch."""
    tau = "" if record.kind.tau is None else repr(float(record.kind.tau))
    start = record.start_epoch
    return [
        (
            string_id,
            record.kind.name,
            tau,
            e + 1,
            float(v),
            int(start is not None and e + 1 >= start),
            record.clamp_events,
        )
        for e, v in enumerate(record.scores)
    ]


def write_summary(path, payload: dict) -> str:
    path = os.fspath(path)
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w") as fh:
        fh.write(json.dumps(payload, sort_keys=True, indent=2))
        fh.write("\n")
    return path


def read_summary(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def artifacts_from_dir(out_dir) -> RunArtifacts:
    """Reconstruct a RunArtifacts from an existing output directory."""
    out_dir = os.fspath(out_dir)
    summary = os.path.join(out_dir, "summary.json")
    if not os.path.exists(summary):
        raise ConfigError(f"no summary.json in {out_dir}")
    fp = read_summary(summary).get("fingerprint", "")

    def maybe(name):
        p = os.path.join(out_dir, name)
        return p if os.path.exists(p) else None

    return RunArtifacts(
        out_dir=out_dir,
        summary_json=summary,
        fingerprint=fp,
        curves_csv=maybe("curves.csv"),
        measures_csv=maybe("measures.csv"),
        strings_csv=maybe("strings.csv"),
        aggregates_csv=maybe("aggregates.csv"),
        sweep_csv=maybe("sweep.csv"),
        plot_svgs=tuple(
            sorted(
                os.path.join(out_dir, f)
                for f in os.listdir(out_dir)
                if f.endswith(".svg")
            )
        ),
    )


# ---------------------------------------------------------------------------
# plots


def _new_figure(n_panels, fingerprint_hex):
    plt.rcParams["svg.hashsalt"] = fingerprint_hex
    fig, axes = plt.subplots(
        1, n_panels, figsize=(4.2 * n_panels, 3.4), squeeze=False
    )
    return fig, axes[0]


def _save(fig, path) -> str:
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return os.fspath(path)


def _plot_probe_curves(artifacts: RunArtifacts, summary: dict) -> str | None:
    rows = read_csv(artifacts.curves_csv)
    if not rows:
        return None
    # group per probe: ids look like "s0.r1"; the prefix names the probe
    by_probe: dict[str, dict[tuple[str, str], list[tuple[int, float]]]] = {}
    for r in rows:
        probe = r["string_id"].split(".")[0]
        key = (r["string_id"], r["role"])
        by_probe.setdefault(probe, {}).setdefault(key, []).append(
            (int(r["epoch"]), float(r["loss"]))
        )
    probes = sorted(by_probe)
    fig, axes = _new_figure(len(probes), artifacts.fingerprint)
    taus = summary.get("taus", [])
    for ax, probe in zip(axes, probes):
        for (sid, role), pts in sorted(by_probe[probe].items()):
            pts.sort()
            style = "-" if role == "train" else "--"
            color = "C0" if role == "train" else "C1"
            ax.plot(
                [e for e, _ in pts], [v for _, v in pts], style,
                color=color, linewidth=1.0, alpha=0.8,
            )
        for tau in taus:
            ax.axhline(float(tau), color="gray", linestyle=":", linewidth=0.8)
        ax.set_title(probe)
        ax.set_xlabel("epoch")
        ax.set_ylabel("loss")
    path = os.path.join(artifacts.out_dir, "probe_curves.svg")
    return _save(fig, path)


def _plot_memorization(artifacts: RunArtifacts, summary: dict) -> str | None:
    rows = read_csv(artifacts.aggregates_csv)
    if not rows:
        return None
    series: dict[str, list[tuple[int, float, float]]] = {}
    for r in rows:
        key = r["kind"] + (f"@{r['tau']}" if r["tau"] else "")
        series.setdefault(key, []).append(
            (int(r["epoch"]), float(r["frac"]), float(r["weighted"]))
        )
    fig, axes = _new_figure(2, artifacts.fingerprint)
    opt = summary.get("optimal_epoch")
    for ax, idx, label in ((axes[0], 1, "frac"), (axes[1], 2, "weighted")):
        for key in sorted(series):
            pts = sorted(series[key])
            ax.plot([p[0] for p in pts], [p[idx] for p in pts], label=key)
        if opt is not None:
            ax.axvline(opt, color="gray", linestyle=":", linewidth=0.8)
        ax.set_xlabel("epoch")
        ax.set_ylabel(label)
        ax.set_ylim(-0.02, 1.02)
    axes[0].legend(fontsize=7)
    path = os.path.join(artifacts.out_dir, "memorization.svg")
    return _save(fig, path)


def _plot_sweep(artifacts: RunArtifacts) -> str | None:
    rows = read_csv(artifacts.sweep_csv)
    if not rows:
        return None
    fig, axes = _new_figure(2, artifacts.fingerprint)
    by_kind: dict[str, list[tuple[int, float]]] = {}
    test_loss: dict[int, float] = {}
    for r in rows:
        by_kind.setdefault(r["kind"], []).append(
            (int(r["size"]), float(r["weighted_at_optimum"]))
        )
        test_loss[int(r["size"])] = float(r["test_loss"])
    for kind in sorted(by_kind):
        pts = sorted(by_kind[kind])
        axes[0].plot([p[0] for p in pts], [p[1] for p in pts], "o-", label=kind)
    axes[0].set_xscale("log", base=2)
    axes[0].set_xlabel("dataset size")
    axes[0].set_ylabel("weighted score at optimal epoch")
    axes[0].legend(fontsize=7)
    sizes = sorted(test_loss)
    axes[1].plot(sizes, [test_loss[s] for s in sizes], "o-", color="C3")
    axes[1].set_xscale("log", base=2)
    axes[1].set_xlabel("dataset size")
    axes[1].set_ylabel("optimal test loss")
    path = os.path.join(artifacts.out_dir, "sweep.svg")
    return _save(fig, path)


def emit_reports(artifacts: RunArtifacts) -> RunArtifacts:
    """Render the SVG plots this artifact set supports and return the
    artifacts with plot paths filled in."""
    summary = read_summary(artifacts.summary_json)
    plots = []
    if artifacts.curves_csv and "probes" in summary:
        p = _plot_probe_curves(artifacts, summary)
        if p:
            plots.append(p)
    if artifacts.aggregates_csv:
        p = _plot_memorization(artifacts, summary)
        if p:
            plots.append(p)
    if artifacts.sweep_csv:
        p = _plot_sweep(artifacts)
        if p:
            plots.append(p)
    return RunArtifacts(
        out_dir=artifacts.out_dir,
        summary_json=artifacts.summary_json,
        fingerprint=artifacts.fingerprint,
        curves_csv=artifacts.curves_csv,
        measures_csv=artifacts.measures_csv,
        strings_csv=artifacts.strings_csv,
        aggregates_csv=artifacts.aggregates_csv,
        sweep_csv=artifacts.sweep_csv,
        plot_svgs=tuple(plots),
    )
