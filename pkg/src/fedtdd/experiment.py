"""End-to-end experiment runner: data, regimes, metrics, CSV reports, figures.

Output directory layout::

    config.txt                 echoed configuration (reloadable)
    trace.csv                  per-round, per-client federated records
    metrics_<regime>.csv       metric, client_id, trial, value
    summary.csv                regime x metric averages
    samples_<regime>.csv       real and synthetic windows in long format
    figures/*.png              real-vs-synthetic panels, metric bars, round trace
    MANIFEST.txt               written last; lists every file with its sha256
    FAILED                     present only when the run aborted
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import sys
import time
import traceback
from pathlib import Path

import numpy as np

from .baselines import RUNNERS, RegimeResult
from .config import REGIMES, ExperimentConfig, dump_config
from .data import Partition, build_partition, generate_synthetic_source, read_series_csv
from .federation import RoundRecord
from .metrics import METRICS, MetricsReport
from .seeds import derive_seed

log = logging.getLogger(__name__)

N_SAMPLE_WINDOWS = 8


def load_source(cfg: ExperimentConfig) -> tuple[list[str], np.ndarray]:
    if cfg.data == "synthetic":
        series = generate_synthetic_source(cfg.n_timesteps, cfg.n_channels, cfg.data_seed(),
                                           cfg.noise_std)
        return [f"f{k}" for k in range(cfg.n_channels)], series
    return read_series_csv(cfg.data)


def make_partition(cfg: ExperimentConfig, series: np.ndarray) -> Partition:
    return build_partition(series, cfg.missingness(), cfg.n_clients, cfg.common_fraction,
                           cfg.window, cfg.stride)


class ReportWriter:
    """Single funnel for every file the run produces, so the manifest is complete."""

    def __init__(self, out_dir: Path):
        self.out_dir = out_dir
        self.files: list[Path] = []
        out_dir.mkdir(parents=True, exist_ok=True)

    def path(self, name: str) -> Path:
        p = self.out_dir / name
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def text(self, name: str, content: str) -> Path:
        p = self.path(name)
        p.write_text(content)
        self.files.append(p)
        return p

    def rows(self, name: str, header: list[str], rows) -> Path:
        p = self.path(name)
        with open(p, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            writer.writerows(rows)
        self.files.append(p)
        return p

    def add(self, p: Path) -> Path:
        self.files.append(p)
        return p

    def manifest(self) -> Path:
        lines = []
        for p in sorted(set(self.files)):
            digest = hashlib.sha256(p.read_bytes()).hexdigest()
            lines.append(f"{digest}  {p.stat().st_size:>9d}  {p.relative_to(self.out_dir)}")
        p = self.out_dir / "MANIFEST.txt"
        p.write_text("\n".join(lines) + "\n")
        return p


def _sample_rows(result: RegimeResult, partition: Partition):
    for c in partition.clients:
        ids = c.schema.global_ids
        for kind, arr in (("real", c.windows), ("synthetic", result.synthetic[c.client_id])):
            for i in range(min(N_SAMPLE_WINDOWS, len(arr))):
                for j in range(arr.shape[1]):
                    for k, gid in enumerate(ids):
                        yield [c.client_id, kind, i, j, gid, repr(float(arr[i, j, k]))]


def _write_regime(writer: ReportWriter, result: RegimeResult, report: MetricsReport,
                  partition: Partition, figures: bool) -> None:
    p = writer.path(f"metrics_{result.name}.csv")
    report.to_csv(p)
    writer.add(p)
    writer.rows(f"samples_{result.name}.csv",
                ["client_id", "kind", "window", "step", "feature", "value"],
                _sample_rows(result, partition))
    if figures:
        from .plotting import plot_real_vs_synthetic
        c = partition.clients[0]
        writer.add(plot_real_vs_synthetic(
            writer.path(f"figures/samples_{result.name}.png"), c.windows,
            result.synthetic[c.client_id], c.schema.global_ids,
            f"{result.name}: client {c.client_id}"))


def run_regimes(cfg: ExperimentConfig, partition: Partition,
                writer: ReportWriter | None = None) -> dict[str, MetricsReport]:
    fed_cfg = cfg.federation()
    metric_seed = derive_seed(cfg.seed, "evaluation")
    reports: dict[str, MetricsReport] = {}
    trace: list[RoundRecord] = []
    for name in REGIMES:
        if name not in cfg.baselines:
            continue
        start = time.perf_counter()
        result = RUNNERS[name](partition, fed_cfg)
        report = result.evaluate(partition, cfg.trials, metric_seed, cfg.embed_dim)
        reports[name] = report
        log.info("%s done in %.1fs: %s", name, time.perf_counter() - start,
                 {m: round(v, 4) for m, v in report.averages().items()})
        if result.federation is not None:
            trace = result.federation.trace
        if writer is not None:
            _write_regime(writer, result, report, partition, cfg.figures)
    if writer is not None:
        if trace:
            writer.rows("trace.csv", list(RoundRecord.FIELDS), [r.row() for r in trace])
            if cfg.figures:
                from .plotting import plot_round_trace
                writer.add(plot_round_trace(writer.path("figures/rounds.png"),
                                            [r.round for r in trace], [r.client_id for r in trace],
                                            [r.context_fid for r in trace], "context-FID"))
        writer.rows("summary.csv", ["regime", *METRICS],
                    [[n, *(repr(r.average(m)) for m in METRICS)] for n, r in reports.items()])
        if cfg.figures and reports:
            from .plotting import plot_metric_bars
            writer.add(plot_metric_bars(writer.path("figures/metrics.png"),
                                        {n: r.averages() for n, r in reports.items()}))
    return reports


def run_experiment(cfg: ExperimentConfig) -> int:
    out = Path(cfg.output_dir)
    writer = ReportWriter(out)
    failed = out / "FAILED"
    for stale in (failed, out / "MANIFEST.txt"):
        if stale.exists():
            stale.unlink()
    try:
        writer.text("config.txt", dump_config(cfg))
        _, series = load_source(cfg)
        partition = make_partition(cfg, series)
        run_regimes(cfg, partition, writer)
    except Exception as exc:  # every component failure becomes a structured record
        record = {"status": "failed", "error": type(exc).__name__, "message": str(exc)}
        failed.write_text(json.dumps(record) + "\n" + traceback.format_exc())
        print(json.dumps(record), file=sys.stderr)
        return 1
    writer.manifest()
    return 0
