"""Synthetic-vs-real quality scores. Lower is better for all four."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .numerics import InsufficientDataError, frechet_distance, gaussian_moments, rfft
from .seeds import derive_seed

METRICS = ("context_fid", "correlational", "discriminative", "predictive")


@dataclass(frozen=True)
class EmbeddingConfig:
    seed: int = 0
    dim: int = 16

    def __post_init__(self):
        if self.dim < 2:
            raise ValueError("embedding dimension must be >= 2")


def window_features(windows: np.ndarray) -> np.ndarray:
    """Per-channel mean, std, lag-1 autocorrelation and dominant spectral magnitude.

    Returns ``(W, 4*C)`` ordered channel-major.
    """
    x = np.asarray(windows, dtype=float)
    w, t, c = x.shape
    mean = x.mean(axis=1)
    d = x - mean[:, None, :]
    var = (d * d).sum(axis=1)
    std = np.sqrt(var / t)
    lag = (d[:, 1:] * d[:, :-1]).sum(axis=1)
    ac1 = np.where(var > 1e-12, lag / np.where(var > 1e-12, var, 1.0), 0.0)
    spec = np.abs(rfft(np.swapaxes(d, 1, 2)))[..., 1:]
    dom = spec.max(axis=2) / t
    return np.stack([mean, std, ac1, dom], axis=2).reshape(w, 4 * c)


def projection_matrix(n_features: int, cfg: EmbeddingConfig) -> np.ndarray:
    rng = np.random.default_rng(cfg.seed)
    return rng.standard_normal((n_features, cfg.dim)) / np.sqrt(n_features)


def embed(windows: np.ndarray, cfg: EmbeddingConfig) -> np.ndarray:
    feats = window_features(windows)
    return feats @ projection_matrix(feats.shape[1], cfg)


def _check_pair(real, synth, minimum: int):
    real = np.asarray(real, dtype=float)
    synth = np.asarray(synth, dtype=float)
    if real.shape[1:] != synth.shape[1:]:
        raise ValueError(f"window shapes differ: {real.shape[1:]} vs {synth.shape[1:]}")
    if len(real) < minimum or len(synth) < minimum:
        raise InsufficientDataError(
            f"need >= {minimum} windows per side, got {len(real)} real / {len(synth)} synthetic")
    return real, synth


def context_fid(real: np.ndarray, synth: np.ndarray, cfg: EmbeddingConfig | None = None) -> float:
    """Frechet distance between Gaussian fits of fixed window embeddings."""
    cfg = cfg or EmbeddingConfig()
    real, synth = _check_pair(real, synth, cfg.dim + 2)
    return frechet_distance(gaussian_moments(embed(real, cfg)),
                            gaussian_moments(embed(synth, cfg)))


def _pearson(rows: np.ndarray) -> np.ndarray:
    d = rows - rows.mean(axis=0)
    sd = np.sqrt((d * d).sum(axis=0))
    ok = sd > 1e-12
    z = np.where(ok, d / np.where(ok, sd, 1.0), 0.0)
    return z.T @ z


def correlational_score(real: np.ndarray, synth: np.ndarray) -> float:
    real, synth = _check_pair(real, synth, 2)
    c = real.shape[2]
    if c < 2:
        raise ValueError("correlational score needs at least 2 channels")
    diff = np.abs(_pearson(real.reshape(-1, c)) - _pearson(synth.reshape(-1, c)))
    np.fill_diagonal(diff, 0.0)
    return float(diff.sum() / (c * (c - 1)))


def _logistic_fit(x: np.ndarray, y: np.ndarray, steps: int = 500, lr: float = 0.5,
                  l2: float = 1e-3) -> tuple[np.ndarray, float]:
    w = np.zeros(x.shape[1])
    b = 0.0
    n = len(y)
    for _ in range(steps):
        z = np.clip(x @ w + b, -30, 30)
        p = 1.0 / (1.0 + np.exp(-z))
        g = p - y
        w -= lr * (x.T @ g / n + l2 * w)
        b -= lr * g.mean()
    return w, b


def discriminative_score(real: np.ndarray, synth: np.ndarray, seed: int = 0) -> float:
    """``|accuracy - 0.5|`` of a logistic real/synthetic classifier on held-out 25%.

    The larger side is subsampled so both classes are the same size.
    """
    real, synth = _check_pair(real, synth, 20)
    rng = np.random.default_rng(seed)
    n = min(len(real), len(synth))
    fr = window_features(real[rng.permutation(len(real))[:n]])
    fs = window_features(synth[rng.permutation(len(synth))[:n]])
    x = np.concatenate([fr, fs])
    y = np.concatenate([np.ones(n), np.zeros(n)])
    order = rng.permutation(2 * n)
    cut = int(round(0.75 * 2 * n))
    tr, te = order[:cut], order[cut:]
    mu = x[tr].mean(axis=0)
    sd = x[tr].std(axis=0)
    sd = np.where(sd > 1e-12, sd, 1.0)
    xs = (x - mu) / sd
    w, b = _logistic_fit(xs[tr], y[tr])
    acc = float((((xs[te] @ w + b) > 0).astype(float) == y[te]).mean())
    return abs(acc - 0.5)


AR_ORDER = 3


def _ar_design(windows: np.ndarray, order: int = AR_ORDER) -> tuple[np.ndarray, np.ndarray]:
    w, t, c = windows.shape
    lags = [windows[:, order - 1 - j: t - 1 - j] for j in range(order)]
    x = np.concatenate(lags, axis=2).reshape(-1, order * c)
    x = np.concatenate([x, np.ones((len(x), 1))], axis=1)
    return x, windows[:, order:].reshape(-1, c)


def fit_ar(windows: np.ndarray, order: int = AR_ORDER) -> np.ndarray:
    x, y = _ar_design(windows, order)
    coef, *_ = np.linalg.lstsq(x, y, rcond=None)
    return coef


def predictive_score(real: np.ndarray, synth: np.ndarray, seed: int = 0) -> float:
    """MAE on real windows of a joint-channel AR(3) one-step predictor fit on synthetic ones.

    ``seed`` is accepted for interface symmetry; the least-squares fit is
    deterministic.
    """
    real, synth = _check_pair(real, synth, 20)
    if real.shape[1] <= AR_ORDER:
        raise ValueError(f"windows must be longer than {AR_ORDER} steps")
    coef = fit_ar(synth)
    x, y = _ar_design(real)
    return float(np.abs(x @ coef - y).mean())


def score_all(real: np.ndarray, synth: np.ndarray, seed: int, dim: int = 16) -> dict[str, float]:
    return {
        "context_fid": context_fid(real, synth, EmbeddingConfig(derive_seed(seed, "embed"), dim)),
        "correlational": correlational_score(real, synth),
        "discriminative": discriminative_score(real, synth, derive_seed(seed, "disc")),
        "predictive": predictive_score(real, synth, derive_seed(seed, "pred")),
    }


@dataclass
class MetricsReport:
    """``values[metric][client_id]`` is the list of per-trial scores."""

    values: dict[str, dict[int, list[float]]] = field(default_factory=dict)
    seeds: list[int] = field(default_factory=list)

    @property
    def trials(self) -> int:
        return len(self.seeds)

    def per_client(self, metric: str) -> dict[int, float]:
        return {cid: float(np.mean(v)) for cid, v in sorted(self.values[metric].items())}

    def average(self, metric: str) -> float:
        return float(np.mean(list(self.per_client(metric).values())))

    def averages(self) -> dict[str, float]:
        return {m: self.average(m) for m in self.values}

    def rows(self) -> list[tuple[str, str, str, str]]:
        out = []
        for metric in METRICS:
            if metric not in self.values:
                continue
            for cid, vals in sorted(self.values[metric].items()):
                for trial, v in enumerate(vals):
                    out.append((metric, str(cid), str(trial), repr(float(v))))
                out.append((metric, str(cid), "mean", repr(float(np.mean(vals)))))
            out.append((metric, "avg", "mean", repr(self.average(metric))))
        return out

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["metric", "client_id", "trial", "value"])
            writer.writerows(self.rows())


def evaluate_clients(real: Mapping[int, np.ndarray], synth: Mapping[int, np.ndarray],
                     trials: int, seed: int, dim: int = 16) -> MetricsReport:
    """Score each client's synthetic windows against its own real windows."""
    report = MetricsReport({m: {} for m in METRICS})
    report.seeds = [derive_seed(seed, "trial", j) for j in range(trials)]
    for cid in sorted(real):
        for j, s in enumerate(report.seeds):
            scores = score_all(real[cid], synth[cid], derive_seed(s, "client", cid), dim)
            for m, v in scores.items():
                report.values[m].setdefault(cid, []).append(v)
    return report


def read_metrics_csv(path: str | Path) -> list[tuple[str, str, str, float]]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["metric", "client_id", "trial", "value"]:
            raise ValueError(f"{path}: unexpected header {header}")
        return [(m, c, t, float(v)) for m, c, t, v in reader]


def summarize(reports: Mapping[str, MetricsReport], metrics: Sequence[str] = METRICS) -> dict[str, dict[str, float]]:
    return {name: {m: r.average(m) for m in metrics} for name, r in reports.items()}
