"""Windowed multivariate series, observation masks and the federated partition.

Arrays follow one layout throughout the package: a dataset of windows is a
float array of shape ``(W, T, C)`` and its masks are a same-shape float array
of 0/1 entries (1 = observed).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .seeds import rng_for


class DataError(ValueError):
    pass


class EmptyDatasetError(DataError):
    pass


class PartitionError(DataError):
    pass


def sliding_window(series: np.ndarray, length: int, stride: int = 1) -> np.ndarray:
    """Cut ``series`` (rows = timesteps) into contiguous windows.

    Window ``w`` covers rows ``w*stride .. w*stride + length - 1``; a
    ``(W, length, C)`` array is returned with ``W = (N - length)//stride + 1``.
    """
    series = np.asarray(series, dtype=float)
    if series.ndim == 1:
        series = series[:, None]
    if length < 1 or stride < 1:
        raise ValueError("length and stride must be >= 1")
    n = series.shape[0]
    if n < length:
        raise EmptyDatasetError(f"series has {n} rows, shorter than window length {length}")
    count = (n - length) // stride + 1
    starts = np.arange(count) * stride
    idx = starts[:, None] + np.arange(length)[None, :]
    return series[idx].copy()


@dataclass(frozen=True)
class NormStats:
    """Per-channel min/max used by :func:`normalize`."""

    lo: np.ndarray
    hi: np.ndarray


def fit_normalizer(values: np.ndarray, masks: np.ndarray | None = None) -> NormStats:
    values = np.asarray(values, dtype=float)
    flat = values.reshape(-1, values.shape[-1])
    if masks is None:
        return NormStats(flat.min(axis=0), flat.max(axis=0))
    seen = np.asarray(masks).reshape(-1, values.shape[-1]) > 0
    lo = np.where(seen, flat, np.inf).min(axis=0)
    hi = np.where(seen, flat, -np.inf).max(axis=0)
    # channels with no observed entry get a degenerate range
    empty = ~seen.any(axis=0)
    lo[empty] = 0.0
    hi[empty] = 0.0
    return NormStats(lo, hi)


def normalize(values: np.ndarray, stats: NormStats | None = None,
              masks: np.ndarray | None = None) -> tuple[np.ndarray, NormStats]:
    """Min-max map each channel (last axis) into [0, 1].

    Constant channels map to 0.5. Stats are fitted from observed entries only
    when ``masks`` is given and ``stats`` is not.
    """
    values = np.asarray(values, dtype=float)
    if stats is None:
        stats = fit_normalizer(values, masks)
    span = stats.hi - stats.lo
    flat = span == 0
    safe = np.where(flat, 1.0, span)
    out = (values - stats.lo) / safe
    out = np.where(flat, 0.5, out)
    return out, stats


def denormalize(values: np.ndarray, stats: NormStats) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    span = stats.hi - stats.lo
    flat = span == 0
    return np.where(flat, stats.lo, values * span + stats.lo)


@dataclass(frozen=True)
class FeatureSchema:
    """Split of a client's local channels into common and exclusive blocks.

    ``global_ids[k]`` is the dataset-wide feature id of local channel ``k``.
    Local order is always common block first, then exclusive block.
    """

    common_indices: tuple[int, ...]
    exclusive_indices: tuple[int, ...]
    global_ids: tuple[int, ...]

    def __post_init__(self):
        common, excl = set(self.common_indices), set(self.exclusive_indices)
        if common & excl:
            raise DataError("common and exclusive channels overlap")
        if common | excl != set(range(len(self.global_ids))):
            raise DataError("schema does not cover every local channel")

    @property
    def n_channels(self) -> int:
        return len(self.global_ids)

    @property
    def n_common(self) -> int:
        return len(self.common_indices)

    @property
    def common_ids(self) -> tuple[int, ...]:
        return tuple(self.global_ids[k] for k in self.common_indices)

    @property
    def exclusive_ids(self) -> tuple[int, ...]:
        return tuple(self.global_ids[k] for k in self.exclusive_indices)


@dataclass(frozen=True)
class ClientDataset:
    """One client's windows and masks.

    ``windows`` keeps the full values (the evaluation oracle); training code
    reads data through :meth:`observed`, which zeroes every missing entry.
    """

    client_id: int
    windows: np.ndarray
    masks: np.ndarray
    schema: FeatureSchema
    time_offset: int
    n_rows: int

    def __post_init__(self):
        if self.windows.shape != self.masks.shape:
            raise DataError("windows and masks differ in shape")
        if self.windows.shape[-1] != self.schema.n_channels:
            raise DataError("window channel count does not match schema")

    def __len__(self) -> int:
        return self.windows.shape[0]

    @property
    def row_range(self) -> range:
        return range(self.time_offset, self.time_offset + self.n_rows)

    def observed(self) -> np.ndarray:
        return np.where(self.masks > 0, self.windows, 0.0)

    def split_common(self, arr: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Slice a ``(..., C)`` array into its common and exclusive blocks."""
        s = self.schema
        return arr[..., list(s.common_indices)], arr[..., list(s.exclusive_indices)]


@dataclass(frozen=True)
class PublicDataset:
    """Coordinator data over the common features; fully observed, append-only."""

    windows: np.ndarray
    common_ids: tuple[int, ...]
    base_len: int = field(default=-1)

    def __post_init__(self):
        if self.windows.ndim != 3 or self.windows.shape[-1] != len(self.common_ids):
            raise DataError("public windows must be (W, T, |F_comm|)")
        if self.base_len < 0:
            object.__setattr__(self, "base_len", self.windows.shape[0])

    def __len__(self) -> int:
        return self.windows.shape[0]

    def extend(self, windows: np.ndarray) -> "PublicDataset":
        windows = np.asarray(windows, dtype=float)
        if windows.shape[0] == 0:
            return self
        if windows.shape[1:] != self.windows.shape[1:]:
            raise DataError("appended windows do not match public window shape")
        return replace(self, windows=np.concatenate([self.windows, windows]))


@dataclass(frozen=True)
class MissingnessConfig:
    pr: float = 0.5
    sr: float = 0.5
    mr: float = 0.5
    rng_seed: int = 0

    def __post_init__(self):
        for name in ("pr", "sr", "mr"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")


def _assign_exclusive(exclusive: list[int], n_clients: int, seed: int) -> list[list[int]]:
    if not exclusive:
        return [[] for _ in range(n_clients)]
    perm = [exclusive[k] for k in rng_for(seed, "exclusive").permutation(len(exclusive))]
    groups: list[list[int]] = [[] for _ in range(n_clients)]
    for j, ch in enumerate(perm):
        groups[j % n_clients].append(ch)
    # fewer exclusive channels than clients: reuse channels (seeded overlap)
    for i in range(n_clients):
        if not groups[i]:
            groups[i].append(perm[i % len(perm)])
    return [sorted(g) for g in groups]


def partition_dataset(series: np.ndarray, config: MissingnessConfig, n_clients: int,
                      common_fraction: float = 0.5, length: int = 24,
                      stride: int = 1) -> tuple[PublicDataset, list[ClientDataset]]:
    """Build the public reserve and ``n_clients`` disjoint client segments.

    Masks come back all-ones; see :func:`apply_missingness`.
    """
    series = np.asarray(series, dtype=float)
    if n_clients < 1:
        raise ValueError("n_clients must be >= 1")
    n_rows, n_ch = series.shape
    n_pub = math.ceil(config.pr * n_rows)
    seg = (n_rows - n_pub) // n_clients
    if n_pub < length:
        raise PartitionError(
            f"public reserve has {n_pub} rows; need at least {length} (short by {length - n_pub})")
    if seg < length:
        need = n_pub + n_clients * length
        raise PartitionError(
            f"client segments have {seg} rows each; need {length}, "
            f"i.e. {need} rows total (short by {need - n_rows})")
    n_common = math.ceil(common_fraction * n_ch)
    common = list(range(n_common))
    groups = _assign_exclusive(list(range(n_common, n_ch)), n_clients, config.rng_seed)

    public = PublicDataset(sliding_window(series[:n_pub, :n_common], length, stride),
                           tuple(common))
    clients = []
    for i in range(n_clients):
        start = n_pub + i * seg
        ids = tuple(common + groups[i])
        windows = sliding_window(series[start:start + seg, list(ids)], length, stride)
        schema = FeatureSchema(tuple(range(n_common)),
                               tuple(range(n_common, len(ids))), ids)
        clients.append(ClientDataset(i, windows, np.ones_like(windows), schema, start, seg))
    return public, clients


def apply_missingness(client: ClientDataset, config: MissingnessConfig) -> ClientDataset:
    """Drop entries MCAR at rate ``mr``.

    The first ``ceil(sr*W)`` windows lose entries on common channels only,
    the rest on all channels. Each window keeps at least one observed entry
    per channel.
    """
    rng = rng_for(config.rng_seed, "mask", client.client_id)
    w, t, c = client.windows.shape
    n_first = math.ceil(config.sr * w)
    region = np.ones((w, 1, c), dtype=bool)
    region[:n_first, :, list(client.schema.exclusive_indices)] = False
    drop = (rng.random((w, t, c)) < config.mr) & region
    masks = np.where(drop, 0.0, client.masks)
    empty = np.argwhere(masks.sum(axis=1) == 0)
    if len(empty):
        picks = rng.integers(0, t, size=len(empty))
        masks[empty[:, 0], picks, empty[:, 1]] = 1.0
    return replace(client, masks=masks)


def interpolate_missing(windows: np.ndarray, masks: np.ndarray) -> np.ndarray:
    """Per-channel linear interpolation between observed entries.

    Edges take the nearest observed value; observed entries are untouched.
    A channel with nothing observed is left at zero.
    """
    out = np.where(masks > 0, windows, 0.0)
    w, t, c = windows.shape
    grid = np.arange(t)
    for i in range(w):
        for k in range(c):
            seen = masks[i, :, k] > 0
            if seen.all() or not seen.any():
                continue
            out[i, ~seen, k] = np.interp(grid[~seen], grid[seen], windows[i, seen, k])
    return out


@dataclass(frozen=True)
class SourceRecipe:
    """All random draws behind :func:`generate_synthetic_source`."""

    freqs: np.ndarray
    phases: np.ndarray
    trends: np.ndarray
    mix: np.ndarray
    noise: np.ndarray

    @property
    def n_base(self) -> int:
        return len(self.freqs)


def make_source_recipe(n_timesteps: int, n_channels: int, seed: int,
                       noise_std: float = 0.05) -> SourceRecipe:
    if n_channels < 2:
        raise ValueError("need at least 2 channels")
    rng = np.random.default_rng(seed)
    n_base = n_channels // 2
    freqs = rng.uniform(1 / 48, 1 / 6, n_base)
    phases = rng.uniform(0.0, 2 * np.pi, n_base)
    trends = rng.uniform(-0.002, 0.002, n_base)
    mix = np.zeros((n_channels, n_channels))
    for k in range(n_base, n_channels):
        mix[k, :k] = rng.uniform(-1.0, 1.0, k) / np.sqrt(k)
    noise = rng.normal(0.0, 1.0, (n_timesteps, n_channels)) * noise_std
    return SourceRecipe(freqs, phases, trends, mix, noise)


def render_source(recipe: SourceRecipe) -> np.ndarray:
    n_t, n_ch = recipe.noise.shape
    t = np.arange(n_t, dtype=float)
    out = np.zeros((n_t, n_ch))
    nb = recipe.n_base
    out[:, :nb] = (np.sin(2 * np.pi * recipe.freqs * t[:, None] + recipe.phases)
                   + recipe.trends * t[:, None] + recipe.noise[:, :nb])
    for k in range(nb, n_ch):
        out[:, k] = out[:, :k] @ recipe.mix[k, :k] + recipe.noise[:, k]
    return out


def generate_synthetic_source(n_timesteps: int, n_channels: int, seed: int,
                              noise_std: float = 0.05) -> np.ndarray:
    """Seeded sinusoid-plus-trend corpus with linearly mixed upper channels."""
    return render_source(make_source_recipe(n_timesteps, n_channels, seed, noise_std))


def read_series_csv(path: str | Path) -> tuple[list[str], np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            names = next(reader)
        except StopIteration:
            raise EmptyDatasetError(f"{path}: empty file") from None
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(names):
                raise DataError(f"{path}:{lineno}: expected {len(names)} fields, got {len(row)}")
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-numeric or missing value") from None
    if not rows:
        raise EmptyDatasetError(f"{path}: no data rows")
    return names, np.array(rows)


def write_series_csv(path: str | Path, names: Sequence[str], series: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(names)
        for row in np.asarray(series, dtype=float):
            writer.writerow([repr(float(v)) for v in row])


def write_dataset_csv(path: str | Path, names: Sequence[str], windows: np.ndarray,
                      masks: np.ndarray | None = None) -> None:
    """Write windows as ``window,step,<names>`` rows; masks go to ``*.mask.csv``."""
    path = Path(path)
    w, t, _ = windows.shape
    targets = [(path, windows, repr)]
    if masks is not None:
        targets.append((path.with_suffix(".mask.csv"), masks, lambda v: str(int(v))))
    for target, arr, fmt in targets:
        with open(target, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["window", "step", *names])
            for i in range(w):
                for j in range(t):
                    writer.writerow([i, j, *(fmt(float(v)) for v in arr[i, j])])


@dataclass(frozen=True)
class Partition:
    """A normalized source series split into public reserve and masked clients."""

    series: np.ndarray
    stats: NormStats
    public: PublicDataset
    clients: tuple[ClientDataset, ...]
    length: int
    stride: int

    @property
    def n_channels(self) -> int:
        return self.series.shape[1]

    @property
    def n_public_rows(self) -> int:
        return self.clients[0].time_offset

    def oracle_windows(self) -> np.ndarray:
        """Fully observed all-channel windows of the public rows and every client segment."""
        parts = [sliding_window(self.series[: self.n_public_rows], self.length, self.stride)]
        for c in self.clients:
            rows = self.series[c.time_offset: c.time_offset + c.n_rows]
            parts.append(sliding_window(rows, self.length, self.stride))
        return np.concatenate(parts)


def build_partition(series: np.ndarray, config: MissingnessConfig, n_clients: int,
                    common_fraction: float = 0.5, length: int = 24,
                    stride: int = 1) -> Partition:
    """Normalize globally, partition, then mask every client."""
    normed, stats = normalize(series)
    public, clients = partition_dataset(normed, config, n_clients, common_fraction, length, stride)
    clients = tuple(apply_missingness(c, config) for c in clients)
    return Partition(normed, stats, public, clients, length, stride)
