"""Coordinator/client orchestration of distiller-imputer federated training.

Only synthetic common-feature windows ever cross from a client to the
coordinator. Every stochastic step draws from a seed derived from the master
seed and a component path, so client results do not depend on the order in
which clients execute.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Callable, Iterable

import numpy as np

from .data import ClientDataset, EmptyDatasetError, Partition, PublicDataset, interpolate_missing
from .diffusion import (
    DiffusionModel,
    GuidanceConfig,
    LossConfig,
    impute_conditional,
    sample_unconditional,
    train,
)
from .metrics import context_fid, EmbeddingConfig
from .seeds import derive_seed, rng_for

log = logging.getLogger(__name__)


class FederationError(RuntimeError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    hidden: int = 128
    t_diff: int = 100
    schedule: str = "cosine"
    loss: LossConfig = field(default_factory=LossConfig)
    guidance: GuidanceConfig = field(default_factory=GuidanceConfig)

    def build(self, seq_len: int, n_channels: int, seed: int) -> DiffusionModel:
        return DiffusionModel.create(seq_len, n_channels, hidden=self.hidden, T=self.t_diff,
                                     kind=self.schedule, loss=self.loss, seed=seed)


@dataclass(frozen=True)
class FederationConfig:
    """Round structure; epoch counts are divided by ``epoch_scale`` at run time."""

    n_clients: int = 3
    rounds: int = 2
    alpha: float = 0.5
    epochs_first: int = 7500
    epochs_rest: int = 5000
    epoch_scale: int = 50
    synth_per_client: int = 100
    seed: int = 0
    threads: int = 1
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if self.rounds < 1 or self.n_clients < 1:
            raise ValueError("rounds and n_clients must be >= 1")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.epoch_scale < 1:
            raise ValueError("epoch_scale must be >= 1")

    def epochs_for(self, round_index: int) -> int:
        base = self.epochs_first if round_index == 1 else self.epochs_rest
        return base // self.epoch_scale

    def total_epochs(self) -> int:
        return sum(self.epochs_for(r) for r in range(1, self.rounds + 1))


@dataclass
class ClientState:
    dataset: ClientDataset
    imputer: DiffusionModel | None = None
    last_synthetic: np.ndarray | None = None
    last_train: np.ndarray | None = None

    @property
    def client_id(self) -> int:
        return self.dataset.client_id


@dataclass
class CoordinatorState:
    public: PublicDataset
    distiller: DiffusionModel
    round: int = 0


@dataclass(frozen=True)
class SyntheticContribution:
    """The only message a client sends: common-feature synthetic windows."""

    client_id: int
    windows: np.ndarray

    def __post_init__(self):
        arr = np.array(self.windows, dtype=float)
        arr.setflags(write=False)
        object.__setattr__(self, "windows", arr)

    def __len__(self) -> int:
        return self.windows.shape[0]


@dataclass
class RoundRecord:
    round: int
    client_id: int
    train_loss: float
    rmse_common: float
    rmse_exclusive: float
    contribution_size: int
    public_size: int
    context_fid: float

    FIELDS = ("round", "client_id", "train_loss", "rmse_common", "rmse_exclusive",
              "contribution_size", "public_size", "context_fid")

    def row(self) -> list[str]:
        return [repr(v) if isinstance(v, float) else str(v) for v in
                (getattr(self, f) for f in self.FIELDS)]


@dataclass
class FederationResult:
    coordinator: CoordinatorState
    clients: list[ClientState]
    trace: list[RoundRecord]
    public_sizes: list[int]


def pretrain_distiller(coordinator: CoordinatorState, epochs: int, seed: int) -> CoordinatorState:
    if len(coordinator.public) == 0:
        raise EmptyDatasetError("public dataset is empty")
    model = train(coordinator.distiller, coordinator.public.windows, None, epochs, seed)
    return replace(coordinator, distiller=model)


def finetune_distiller(coordinator: CoordinatorState, epochs: int, seed: int) -> CoordinatorState:
    model = train(coordinator.distiller, coordinator.public.windows, None, epochs, seed)
    return replace(coordinator, distiller=model)


def loss_mask_for(dataset: ClientDataset) -> np.ndarray:
    """All common entries plus the observed exclusive entries."""
    out = dataset.masks.copy()
    out[..., list(dataset.schema.common_indices)] = 1.0
    return out


def client_round(client: ClientState, distiller: DiffusionModel, round_index: int, epochs: int,
                 seed: int, cfg: FederationConfig) -> tuple[ClientState, SyntheticContribution]:
    """One client's local work for a round.

    Common channels are filled by the distiller; exclusive channels by linear
    interpolation on the first visit and by the client's own imputer
    afterwards. The imputer is then trained on the assembled windows and
    sampled.
    """
    ds = client.dataset
    schema = ds.schema
    if distiller.shape[1] != schema.n_common:
        raise FederationError(
            f"distiller has {distiller.shape[1]} channels, client {ds.client_id} has "
            f"{schema.n_common} common channels")
    guidance = cfg.model.guidance
    obs = ds.observed()
    comm_obs, ex_obs = ds.split_common(obs)
    m_comm, m_ex = ds.split_common(ds.masks)

    x_comm = impute_conditional(distiller, comm_obs, m_comm, guidance,
                                derive_seed(seed, "impute_common"))
    imputer = client.imputer
    if imputer is None:
        imputer = cfg.model.build(ds.windows.shape[1], schema.n_channels,
                                  derive_seed(cfg.seed, "imputer", ds.client_id, "init"))
    if schema.exclusive_indices and client.imputer is None:
        x_ex = interpolate_missing(ex_obs, m_ex)
    elif schema.exclusive_indices:
        joint = np.concatenate([x_comm, ex_obs], axis=2)
        joint_mask = np.concatenate([np.ones_like(m_comm), m_ex], axis=2)
        x_ex = impute_conditional(imputer, joint, joint_mask, guidance,
                                  derive_seed(seed, "impute_exclusive"))[..., schema.n_common:]
    else:
        x_ex = ex_obs
    x_train = np.concatenate([x_comm, x_ex], axis=2)

    imputer = train(imputer, x_train, loss_mask_for(ds), epochs, derive_seed(seed, "train"))
    synth = sample_unconditional(imputer, cfg.synth_per_client, derive_seed(seed, "sample"))
    contribution = SyntheticContribution(ds.client_id, synth[..., list(schema.common_indices)])
    return ClientState(ds, imputer, synth, x_train), contribution


def selection_count(r: int, R: int, alpha: float, L: int) -> int:
    """``floor((r/R) * alpha * L)`` computed on rationals to avoid float edge cases."""
    value = Fraction(r, R) * Fraction(alpha).limit_denominator(10 ** 9) * L
    return math.floor(value)


def aggregate(coordinator: CoordinatorState, contributions: Iterable[SyntheticContribution],
              r: int, R: int, alpha: float, seed: int, L: int | None = None) -> CoordinatorState:
    """Append ``n_r`` seeded picks from each contribution, in client-id order.

    ``L`` is the per-client sample count the schedule is computed from;
    by default each contribution's own length.
    """
    if not 1 <= r <= R:
        raise ValueError(f"round {r} outside 1..{R}")
    public = coordinator.public
    for contrib in sorted(contributions, key=lambda c: c.client_id):
        if contrib.windows.shape[-1] != len(public.common_ids):
            raise FederationError(f"client {contrib.client_id} sent non-common channels")
        n_r = selection_count(r, R, alpha, len(contrib) if L is None else L)
        if n_r == 0:
            continue
        if n_r > len(contrib):
            raise FederationError(f"client {contrib.client_id} sent {len(contrib)} < {n_r} windows")
        pick = rng_for(seed, "aggregate", r, contrib.client_id).choice(len(contrib), n_r,
                                                                          replace=False)
        public = public.extend(contrib.windows[pick])
    return replace(coordinator, public=public, round=r)


def _rmse(pred: np.ndarray, truth: np.ndarray, where: np.ndarray) -> float:
    n = where.sum()
    if n == 0:
        return float("nan")
    return float(np.sqrt((((pred - truth) ** 2) * where).sum() / n))


def _record(state: ClientState, r: int, contribution: SyntheticContribution,
            public_size: int, cfg: FederationConfig) -> RoundRecord:
    ds = state.dataset
    miss = ds.masks == 0
    mc, me = ds.split_common(miss)
    pc, pe = ds.split_common(state.last_train)
    tc, te = ds.split_common(ds.windows)
    try:
        fid = context_fid(ds.windows, state.last_synthetic,
                          EmbeddingConfig(derive_seed(cfg.seed, "trace", r, ds.client_id)))
    except ValueError:
        fid = float("nan")
    return RoundRecord(r, ds.client_id, float(state.imputer.history[-1]) if state.imputer.history
                       else float("nan"), _rmse(pc, tc, mc), _rmse(pe, te, me),
                       len(contribution), public_size, fid)


def new_coordinator(partition: Partition, cfg: FederationConfig) -> CoordinatorState:
    pub = partition.public
    distiller = cfg.model.build(pub.windows.shape[1], len(pub.common_ids),
                                derive_seed(cfg.seed, "distiller", "init"))
    return CoordinatorState(pub, distiller)


def run_clients(states: list[ClientState], distiller: DiffusionModel, r: int,
                cfg: FederationConfig,
                epochs: int | None = None) -> list[tuple[ClientState, SyntheticContribution]]:
    epochs = cfg.epochs_for(r) if epochs is None else epochs

    def work(state: ClientState):
        seed = derive_seed(cfg.seed, "client", state.client_id, "round", r)
        return client_round(state, distiller, r, epochs, seed, cfg)

    if cfg.threads > 1 and len(states) > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            results = list(pool.map(work, states))
    else:
        results = [work(s) for s in states]
    return sorted(results, key=lambda pair: pair[0].client_id)


def run_federation(partition: Partition, cfg: FederationConfig,
                   outbox: list[SyntheticContribution] | None = None,
                   client_order: Iterable[int] | None = None,
                   on_round: Callable[[int, list[RoundRecord]], None] | None = None) -> FederationResult:
    """Pretrain the distiller, then run ``cfg.rounds`` rounds of client work,
    public-set expansion and distiller fine-tuning.

    ``outbox``, when given, receives every coordinator-bound message.
    ``client_order`` permutes execution order (results are unaffected).
    """
    coord = new_coordinator(partition, cfg)
    coord = pretrain_distiller(coord, cfg.epochs_for(1), derive_seed(cfg.seed, "distiller", "pretrain"))
    by_id = {c.client_id: ClientState(c) for c in partition.clients}
    order = list(client_order) if client_order is not None else sorted(by_id)
    trace: list[RoundRecord] = []
    sizes = [len(coord.public)]
    for r in range(1, cfg.rounds + 1):
        results = run_clients([by_id[i] for i in order], coord.distiller, r, cfg)
        contributions = [c for _, c in results]
        if outbox is not None:
            outbox.extend(contributions)
        coord = aggregate(coord, contributions, r, cfg.rounds, cfg.alpha,
                          derive_seed(cfg.seed, "coordinator"), cfg.synth_per_client)
        records = []
        for state, contrib in results:
            by_id[state.client_id] = state
            records.append(_record(state, r, contrib, len(coord.public), cfg))
        coord = finetune_distiller(coord, cfg.epochs_for(2),
                                   derive_seed(cfg.seed, "distiller", "finetune", r))
        sizes.append(len(coord.public))
        trace.extend(records)
        log.info("round %d: public set %d windows", r, len(coord.public))
        if on_round is not None:
            on_round(r, records)
    return FederationResult(coord, [by_id[i] for i in sorted(by_id)], trace, sizes)


def expected_public_sizes(base: int, n_clients: int, R: int, alpha: float, L: int) -> list[int]:
    sizes = [base]
    for rho in range(1, R + 1):
        sizes.append(sizes[-1] + n_clients * selection_count(rho, R, alpha, L))
    return sizes
