"""Comparison regimes run over the same partition and seeds as the federated run."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .data import Partition, interpolate_missing
from .diffusion import DiffusionModel, sample_unconditional, train
from .federation import (
    ClientState,
    FederationConfig,
    FederationResult,
    new_coordinator,
    pretrain_distiller,
    run_clients,
    run_federation,
)
from .metrics import MetricsReport, evaluate_clients
from .seeds import derive_seed


class BaselineKind(enum.Enum):
    CENTRALIZED_STAR = "centralized_star"
    CENTRALIZED = "centralized"
    LOCAL = "local"
    PRETRAINED = "pretrained"


@dataclass
class RegimeResult:
    name: str
    synthetic: dict[int, np.ndarray]
    models: dict[str, DiffusionModel] = field(default_factory=dict)
    train_rows: int = 0
    federation: FederationResult | None = None

    def evaluate(self, partition: Partition, trials: int, seed: int, dim: int = 16) -> MetricsReport:
        real = {c.client_id: c.windows for c in partition.clients}
        return evaluate_clients(real, self.synthetic, trials, derive_seed(seed, "metrics"), dim)


def _client_slices(model: DiffusionModel, partition: Partition, cfg: FederationConfig,
                   tag: str) -> dict[int, np.ndarray]:
    out = {}
    for c in partition.clients:
        synth = sample_unconditional(model, cfg.synth_per_client,
                                     derive_seed(cfg.seed, tag, "sample", c.client_id))
        out[c.client_id] = synth[..., list(c.schema.global_ids)]
    return out


def run_centralized_star(partition: Partition, cfg: FederationConfig) -> RegimeResult:
    """One all-feature model on every fully observed row (oracle regime)."""
    windows = partition.oracle_windows()
    model = cfg.model.build(partition.length, partition.n_channels,
                            derive_seed(cfg.seed, "centralized_star", "init"))
    model = train(model, windows, None, cfg.total_epochs(),
                  derive_seed(cfg.seed, "centralized_star", "train"))
    return RegimeResult("centralized_star", _client_slices(model, partition, cfg, "centralized_star"),
                        {"global": model}, len(windows))


def centralized_dataset(partition: Partition) -> tuple[np.ndarray, np.ndarray]:
    """Zero-filled all-feature windows and loss masks.

    Channels a party does not hold are zero in the input and 0 in the loss
    mask; owned channels carry their observation mask.
    """
    c_total = partition.n_channels
    pub = partition.public
    w, t, _ = pub.windows.shape
    xs = [np.zeros((w, t, c_total))]
    ms = [np.zeros((w, t, c_total))]
    xs[0][..., list(pub.common_ids)] = pub.windows
    ms[0][..., list(pub.common_ids)] = 1.0
    for c in partition.clients:
        ids = list(c.schema.global_ids)
        x = np.zeros((len(c), t, c_total))
        m = np.zeros((len(c), t, c_total))
        x[..., ids] = c.observed()
        m[..., ids] = c.masks
        xs.append(x)
        ms.append(m)
    return np.concatenate(xs), np.concatenate(ms)


def run_centralized(partition: Partition, cfg: FederationConfig) -> RegimeResult:
    windows, masks = centralized_dataset(partition)
    model = cfg.model.build(partition.length, partition.n_channels,
                            derive_seed(cfg.seed, "centralized", "init"))
    model = train(model, windows, masks, cfg.total_epochs(),
                  derive_seed(cfg.seed, "centralized", "train"))
    return RegimeResult("centralized", _client_slices(model, partition, cfg, "centralized"),
                        {"global": model}, len(windows))


def run_local(partition: Partition, cfg: FederationConfig) -> RegimeResult:
    """Each client alone: interpolation fill for inputs, observed-only supervision."""
    synth, models = {}, {}
    for c in partition.clients:
        x = interpolate_missing(c.observed(), c.masks)
        model = cfg.model.build(partition.length, c.schema.n_channels,
                                derive_seed(cfg.seed, "imputer", c.client_id, "init"))
        model = train(model, x, c.masks, cfg.total_epochs(),
                      derive_seed(cfg.seed, "local", c.client_id, "train"))
        synth[c.client_id] = sample_unconditional(model, cfg.synth_per_client,
                                                  derive_seed(cfg.seed, "local", c.client_id, "sample"))
        models[f"client{c.client_id}"] = model
    return RegimeResult("local", synth, models, sum(len(c) for c in partition.clients))


def run_pretrained(partition: Partition, cfg: FederationConfig) -> RegimeResult:
    """Distiller pretrained once; a single client pass with no aggregation.

    The client pass trains for the whole imputer budget (``total_epochs``),
    like Local and Centralized. With one round this is exactly round 1 of
    the federated run.
    """
    coord = new_coordinator(partition, cfg)
    coord = pretrain_distiller(coord, cfg.epochs_for(1), derive_seed(cfg.seed, "distiller", "pretrain"))
    states = [ClientState(c) for c in partition.clients]
    results = run_clients(states, coord.distiller, 1, cfg, cfg.total_epochs())
    synth = {s.client_id: s.last_synthetic for s, _ in results}
    models = {"distiller": coord.distiller}
    models.update({f"client{s.client_id}": s.imputer for s, _ in results})
    return RegimeResult("pretrained", synth, models, len(coord.public))


def run_fedtdd(partition: Partition, cfg: FederationConfig, **kwargs) -> RegimeResult:
    fed = run_federation(partition, cfg, **kwargs)
    synth = {s.client_id: s.last_synthetic for s in fed.clients}
    models = {"distiller": fed.coordinator.distiller}
    models.update({f"client{s.client_id}": s.imputer for s in fed.clients})
    return RegimeResult("fedtdd", synth, models, len(fed.coordinator.public), fed)


RUNNERS = {
    "fedtdd": run_fedtdd,
    BaselineKind.CENTRALIZED_STAR.value: run_centralized_star,
    BaselineKind.CENTRALIZED.value: run_centralized,
    BaselineKind.LOCAL.value: run_local,
    BaselineKind.PRETRAINED.value: run_pretrained,
}
