"""Flat ``key = value`` experiment configuration.

One key per line, ``#`` starts a comment. Every key is listed in
:data:`SCHEMA`; anything else is rejected.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path

from .data import MissingnessConfig
from .diffusion import GuidanceConfig, LossConfig
from .federation import FederationConfig, ModelConfig
from .seeds import derive_seed

REGIMES = ("fedtdd", "centralized_star", "centralized", "local", "pretrained")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int
    data: str = "synthetic"
    n_timesteps: int = 1200
    n_channels: int = 6
    noise_std: float = 0.05
    window: int = 24
    stride: int = 1
    pr: float = 0.5
    sr: float = 0.5
    mr: float = 0.5
    common_fraction: float = 0.5
    n_clients: int = 3
    rounds: int = 2
    alpha: float = 0.5
    epochs_first: int = 7500
    epochs_rest: int = 5000
    epoch_scale: int = 15
    synth_per_client: int = 100
    t_diff: int = 100
    schedule: str = "cosine"
    hidden: int = 128
    lambda1: float = 1.0
    lambda2: float = 0.1
    lambda_w: float = 0.01
    learning_rate: float = 1e-3
    batch_size: int = 64
    eta: float = 1.0
    gamma_prior: float = 0.0
    embed_dim: int = 16
    trials: int = 3
    baselines: tuple[str, ...] = REGIMES
    output_dir: str = "out"
    threads: int = 1
    figures: bool = True

    def validate(self) -> "ExperimentConfig":
        for name in ("pr", "sr", "mr", "alpha", "common_fraction"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name}: must lie in [0, 1]")
        positive = ("n_timesteps", "window", "stride", "n_clients", "rounds", "epoch_scale",
                    "synth_per_client", "t_diff", "hidden", "batch_size", "trials", "threads")
        for name in positive:
            if getattr(self, name) < 1:
                raise ConfigError(f"{name}: must be >= 1")
        if self.t_diff < 2:
            raise ConfigError("t_diff: must be >= 2")
        if self.n_channels < 2:
            raise ConfigError("n_channels: must be >= 2")
        if self.embed_dim < 2:
            raise ConfigError("embed_dim: must be >= 2")
        if self.schedule not in ("linear", "cosine"):
            raise ConfigError("schedule: must be 'linear' or 'cosine'")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate: must be > 0")
        if self.lambda1 < 0 or self.lambda2 < 0 or self.lambda1 + self.lambda2 <= 0:
            raise ConfigError("lambda1/lambda2: must be >= 0 with a positive sum")
        if self.eta < 0 or self.gamma_prior < 0:
            raise ConfigError("eta/gamma_prior: must be >= 0")
        if not self.baselines:
            raise ConfigError("baselines: select at least one regime")
        for b in self.baselines:
            if b not in REGIMES:
                raise ConfigError(f"baselines: unknown regime {b!r}")
        if self.data != "synthetic" and not Path(self.data).is_file():
            raise ConfigError(f"data: file {self.data!r} does not exist")
        return self

    def missingness(self) -> MissingnessConfig:
        return MissingnessConfig(self.pr, self.sr, self.mr, derive_seed(self.seed, "missingness"))

    def federation(self) -> FederationConfig:
        model = ModelConfig(
            hidden=self.hidden, t_diff=self.t_diff, schedule=self.schedule,
            loss=LossConfig(self.lambda1, self.lambda2, self.lambda_w, self.learning_rate,
                            self.batch_size),
            guidance=GuidanceConfig(self.eta, self.gamma_prior))
        return FederationConfig(
            n_clients=self.n_clients, rounds=self.rounds, alpha=self.alpha,
            epochs_first=self.epochs_first, epochs_rest=self.epochs_rest,
            epoch_scale=self.epoch_scale, synth_per_client=self.synth_per_client,
            seed=derive_seed(self.seed, "federation"), threads=self.threads, model=model)

    def data_seed(self) -> int:
        return derive_seed(self.seed, "data")


SCHEMA = {f.name: f for f in fields(ExperimentConfig)}


def _coerce(name: str, raw: str):
    kind = type(getattr(ExperimentConfig(seed=0), name)) if name != "seed" else int
    try:
        if kind is bool:
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        if kind is tuple:
            return tuple(p.strip() for p in raw.split(",") if p.strip())
        return raw
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {raw!r} as {kind.__name__}") from None


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    values: dict[str, object] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {body!r}")
        key, raw = (s.strip() for s in body.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        try:
            values[key] = _coerce(key, raw)
        except ConfigError as exc:
            raise ConfigError(f"{source}:{lineno}: {exc}") from None
    if "seed" not in values:
        raise ConfigError(f"{source}: missing required key 'seed'")
    return ExperimentConfig(**values).validate()


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {str(path)!r} not found")
    return parse_config(path.read_text(), str(path))


def dump_config(cfg: ExperimentConfig) -> str:
    lines = []
    for name in SCHEMA:
        v = getattr(cfg, name)
        if isinstance(v, tuple):
            v = ",".join(v)
        elif isinstance(v, bool):
            v = "true" if v else "false"
        elif isinstance(v, float):
            v = repr(v)
        lines.append(f"{name} = {v}")
    return "\n".join(lines) + "\n"


def override(cfg: ExperimentConfig, **changes) -> ExperimentConfig:
    changes = {k: v for k, v in changes.items() if v is not None}
    return replace(cfg, **changes).validate() if changes else cfg
