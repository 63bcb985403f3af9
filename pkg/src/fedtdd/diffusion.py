"""DDPM engine shared by the coordinator distiller and the client imputers.

The denoiser predicts the clean window directly. It is a two-hidden-layer
SiLU network over the flattened noisy window plus a sinusoidal step
embedding, with a residual connection from the noisy input to the output.
Gradients are computed by hand (reverse mode through the three layers).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .numerics import rfft, rfft_adjoint

CLIP_LO, CLIP_HI = -1.5, 2.5
EMB_DIM = 32
PARAM_NAMES = ("w1", "b1", "w2", "b2", "w3", "b3")
CHECKPOINT_VERSION = 1


class PreconditionError(ValueError):
    pass


@dataclass(frozen=True)
class NoiseSchedule:
    """Forward-noise fractions ``deltas[t-1]`` for steps ``t = 1..T``."""

    deltas: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.deltas, dtype=float)
        if d.ndim != 1 or len(d) < 1:
            raise ValueError("deltas must be a non-empty vector")
        if not np.all((d > 0) & (d < 1)):
            raise ValueError("every delta must lie in (0, 1)")
        object.__setattr__(self, "deltas", d)

    @property
    def T(self) -> int:
        return len(self.deltas)

    @property
    def gammas(self) -> np.ndarray:
        return 1.0 - self.deltas

    @property
    def gamma_bars(self) -> np.ndarray:
        return np.cumprod(self.gammas)

    def gamma_bar(self, t):
        """Signal retention at step ``t`` with the convention ``gamma_bar(0) = 1``."""
        gb = np.concatenate([[1.0], self.gamma_bars])
        return gb[t]


def make_schedule(T: int, kind: str = "cosine") -> NoiseSchedule:
    if T < 2:
        raise ValueError(f"need at least 2 diffusion steps, got {T}")
    if kind == "linear":
        deltas = np.linspace(1e-4, 0.02, T)
    elif kind == "cosine":
        s = 0.008
        steps = np.arange(T + 1) / T
        f = np.cos((steps + s) / (1 + s) * np.pi / 2) ** 2
        gb = f / f[0]
        deltas = np.clip(1.0 - gb[1:] / gb[:-1], 1e-12, 0.999)
    else:
        raise ValueError(f"unknown schedule kind {kind!r}")
    return NoiseSchedule(deltas)


def loss_weights(schedule: NoiseSchedule, lam: float) -> np.ndarray:
    """Per-step weights ``lam * gamma_t (1 - gamma_bar_t) / delta_t**2``, index ``t-1``."""
    return lam * schedule.gammas * (1.0 - schedule.gamma_bars) / schedule.deltas ** 2


def forward_noise(x0: np.ndarray, t, eps: np.ndarray, schedule: NoiseSchedule) -> np.ndarray:
    """``sqrt(gb_t) x0 + sqrt(1 - gb_t) eps``; ``t`` is a scalar or one step per window."""
    t = np.asarray(t)
    if np.any(t < 0) or np.any(t > schedule.T):
        raise PreconditionError(f"diffusion step out of range 0..{schedule.T}")
    gb = np.asarray(schedule.gamma_bar(t), dtype=float)
    gb = gb.reshape(gb.shape + (1,) * (np.ndim(x0) - gb.ndim))
    return np.sqrt(gb) * x0 + np.sqrt(1.0 - gb) * eps


def step_embedding(t: np.ndarray, dim: int = EMB_DIM) -> np.ndarray:
    t = np.atleast_1d(np.asarray(t, dtype=float))
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / half)
    ang = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


def _silu(z):
    s = 1.0 / (1.0 + np.exp(-z))
    return z * s, s


@dataclass
class DenoiserParams:
    seq_len: int
    n_channels: int
    hidden: int
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: np.ndarray

    @classmethod
    def init(cls, seq_len: int, n_channels: int, hidden: int = 128, seed: int = 0,
             head_scale: float = 0.0) -> "DenoiserParams":
        rng = np.random.default_rng(seed)
        d_in = seq_len * n_channels + EMB_DIM
        d_out = seq_len * n_channels
        return cls(
            seq_len, n_channels, hidden,
            rng.normal(0.0, 1.0 / math.sqrt(d_in), (d_in, hidden)), np.zeros(hidden),
            rng.normal(0.0, 1.0 / math.sqrt(hidden), (hidden, hidden)), np.zeros(hidden),
            rng.normal(0.0, head_scale / math.sqrt(hidden), (hidden, d_out)), np.zeros(d_out),
        )

    def arrays(self) -> list[np.ndarray]:
        return [getattr(self, n) for n in PARAM_NAMES]

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def with_flat(self, vec: np.ndarray) -> "DenoiserParams":
        vec = np.asarray(vec, dtype=float)
        out, pos = {}, 0
        for name in PARAM_NAMES:
            shape = getattr(self, name).shape
            size = int(np.prod(shape))
            out[name] = vec[pos:pos + size].reshape(shape).copy()
            pos += size
        if pos != len(vec):
            raise ValueError("flat parameter vector has the wrong length")
        return replace(self, **out)

    def copy(self) -> "DenoiserParams":
        return replace(self, **{n: getattr(self, n).copy() for n in PARAM_NAMES})


@dataclass(frozen=True)
class LossConfig:
    lambda1: float = 1.0
    lambda2: float = 0.1
    lambda_w: float = 0.01
    learning_rate: float = 1e-3
    batch_size: int = 64

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0 or self.lambda1 + self.lambda2 <= 0:
            raise ValueError("lambda1, lambda2 must be >= 0 with a positive sum")
        if self.learning_rate <= 0 or self.batch_size < 1:
            raise ValueError("learning_rate must be > 0 and batch_size >= 1")


@dataclass(frozen=True)
class GuidanceConfig:
    """Observation pull ``xhat -= 2*eta*mask*(xhat - x_obs)`` applied at every step.

    ``eta = 1`` is the largest value for which the pull never enlarges the
    residual on observed entries (``|1 - 2*eta| <= 1``).
    """

    eta: float = 1.0
    gamma_prior: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.eta) and self.eta >= 0):
            raise ValueError("eta must be finite and >= 0")
        if not (math.isfinite(self.gamma_prior) and self.gamma_prior >= 0):
            raise ValueError("gamma_prior must be finite and >= 0")


@dataclass
class DiffusionModel:
    params: DenoiserParams
    schedule: NoiseSchedule
    loss: LossConfig = field(default_factory=LossConfig)
    history: list[float] = field(default_factory=list)

    @classmethod
    def create(cls, seq_len: int, n_channels: int, *, hidden: int = 128, T: int = 100,
               kind: str = "cosine", loss: LossConfig | None = None, seed: int = 0,
               head_scale: float = 0.0) -> "DiffusionModel":
        return cls(DenoiserParams.init(seq_len, n_channels, hidden, seed, head_scale),
                   make_schedule(T, kind), loss or LossConfig())

    @property
    def shape(self) -> tuple[int, int]:
        return self.params.seq_len, self.params.n_channels

    def copy(self) -> "DiffusionModel":
        return DiffusionModel(self.params.copy(), self.schedule, self.loss, list(self.history))


def _forward(p: DenoiserParams, x_t: np.ndarray, t: np.ndarray):
    b = x_t.shape[0]
    h_in = np.concatenate([x_t.reshape(b, -1), step_embedding(t)], axis=1)
    z1 = h_in @ p.w1 + p.b1
    a1, s1 = _silu(z1)
    z2 = a1 @ p.w2 + p.b2
    a2, s2 = _silu(z2)
    out = a2 @ p.w3 + p.b3
    xhat = x_t + out.reshape(x_t.shape)
    return xhat, (h_in, z1, s1, a1, z2, s2, a2)


def _backward(p: DenoiserParams, cache, g_xhat: np.ndarray) -> dict[str, np.ndarray]:
    h_in, z1, s1, a1, z2, s2, a2 = cache
    g_out = g_xhat.reshape(g_xhat.shape[0], -1)
    grads = {"w3": a2.T @ g_out, "b3": g_out.sum(axis=0)}
    g_a2 = g_out @ p.w3.T
    g_z2 = g_a2 * s2 * (1.0 + z2 * (1.0 - s2))
    grads["w2"] = a1.T @ g_z2
    grads["b2"] = g_z2.sum(axis=0)
    g_a1 = g_z2 @ p.w2.T
    g_z1 = g_a1 * s1 * (1.0 + z1 * (1.0 - s1))
    grads["w1"] = h_in.T @ g_z1
    grads["b1"] = g_z1.sum(axis=0)
    return grads


def _check_shape(model: DiffusionModel, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    single = x.ndim == 2
    if single:
        x = x[None]
    if x.shape[1:] != model.shape:
        raise PreconditionError(f"window shape {x.shape[1:]} does not match model {model.shape}")
    return x


def denoise_estimate(model: DiffusionModel, x_t: np.ndarray, t) -> np.ndarray:
    """Clean-window estimate for a window ``(T, C)`` or a batch ``(B, T, C)``."""
    single = np.ndim(x_t) == 2
    x = _check_shape(model, x_t)
    steps = np.broadcast_to(np.asarray(t), (x.shape[0],))
    if np.any(steps < 1) or np.any(steps > model.schedule.T):
        raise PreconditionError(f"diffusion step out of range 1..{model.schedule.T}")
    xhat, _ = _forward(model.params, x, steps)
    return xhat[0] if single else xhat


def training_loss(model: DiffusionModel, x0: np.ndarray, loss_mask: np.ndarray, t,
                  eps: np.ndarray) -> tuple[float, dict[str, np.ndarray]]:
    """Weighted time + frequency objective and its parameter gradients.

    Accepts one window or a batch; for a batch the loss is the mean over
    windows, each weighted by its own step weight.
    """
    x0 = _check_shape(model, x0)
    mask = np.asarray(loss_mask, dtype=float).reshape(x0.shape)
    eps = np.asarray(eps, dtype=float).reshape(x0.shape)
    b, n_t, _ = x0.shape
    steps = np.broadcast_to(np.asarray(t), (b,)).astype(int)
    if np.any(steps < 1) or np.any(steps > model.schedule.T):
        raise PreconditionError(f"diffusion step out of range 1..{model.schedule.T}")
    cfg = model.loss
    w = loss_weights(model.schedule, cfg.lambda_w)[steps - 1]

    x_t = forward_noise(x0, steps, eps, model.schedule)
    xhat, cache = _forward(model.params, x_t, steps)
    d = xhat - x0

    n_obs = mask.sum(axis=(1, 2))
    inv_obs = np.where(n_obs > 0, 1.0 / np.maximum(n_obs, 1.0), 0.0)
    l_time = (mask * d * d).sum(axis=(1, 2)) * inv_obs

    active = (mask.sum(axis=1) > 0).astype(float)          # (B, C)
    n_act = active.sum(axis=1)
    inv_act = np.where(n_act > 0, 1.0 / np.maximum(n_act, 1.0), 0.0)
    spec = rfft(np.swapaxes(d, 1, 2))                         # (B, C, K)
    power = (spec.real ** 2 + spec.imag ** 2).sum(axis=2)
    l_freq = (active * power).sum(axis=1) * inv_act

    per = w * (cfg.lambda1 * l_time + cfg.lambda2 * l_freq)
    loss = float(per.mean())

    scale = (w / b)[:, None, None]
    g_time = 2.0 * mask * d * inv_obs[:, None, None]
    g_freq = 2.0 * np.swapaxes(rfft_adjoint(spec, n_t), 1, 2)
    g_freq = g_freq * (active * inv_act[:, None])[:, None, :]
    g_xhat = scale * (cfg.lambda1 * g_time + cfg.lambda2 * g_freq)
    return loss, _backward(model.params, cache, g_xhat)


class Adam:
    def __init__(self, params: DenoiserParams, lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {n: np.zeros_like(getattr(params, n)) for n in PARAM_NAMES}
        self.v = {n: np.zeros_like(getattr(params, n)) for n in PARAM_NAMES}
        self.count = 0

    def step(self, params: DenoiserParams, grads: dict[str, np.ndarray]) -> None:
        self.count += 1
        c1 = 1.0 - self.beta1 ** self.count
        c2 = 1.0 - self.beta2 ** self.count
        for n in PARAM_NAMES:
            g = grads[n]
            m, v = self.m[n], self.v[n]
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * (g * g)
            denom = np.sqrt(v / c2)
            denom += self.eps
            setattr(params, n, getattr(params, n) - (self.lr / c1) * m / denom)


def train(model: DiffusionModel, windows: np.ndarray, loss_masks: np.ndarray | None,
          epochs: int, seed: int) -> DiffusionModel:
    """Minibatch Adam on the weighted objective; returns a new model.

    One epoch is one shuffled pass over ``windows``. The mean loss of each
    epoch is appended to ``history``. Optimizer moments start fresh on every
    call, parameters are warm.
    """
    windows = _check_shape(model, windows)
    if windows.shape[0] == 0:
        from .data import EmptyDatasetError
        raise EmptyDatasetError("cannot train on an empty dataset")
    masks = np.ones_like(windows) if loss_masks is None else np.asarray(loss_masks, dtype=float)
    out = model.copy()
    if epochs <= 0:
        return out
    rng = np.random.default_rng(seed)
    opt = Adam(out.params, out.loss.learning_rate)
    n, bs = windows.shape[0], out.loss.batch_size
    for _ in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, bs):
            idx = order[start:start + bs]
            t = rng.integers(1, out.schedule.T + 1, size=len(idx))
            eps = rng.standard_normal((len(idx),) + out.shape)
            loss, grads = training_loss(out, windows[idx], masks[idx], t, eps)
            opt.step(out.params, grads)
            total += loss * len(idx)
        out.history.append(total / n)
    return out


def _posterior(schedule: NoiseSchedule, t: int):
    gb_t = schedule.gamma_bar(t)
    gb_prev = schedule.gamma_bar(t - 1)
    delta = schedule.deltas[t - 1]
    c0 = math.sqrt(gb_prev) * delta / (1.0 - gb_t)
    ct = math.sqrt(1.0 - delta) * (1.0 - gb_prev) / (1.0 - gb_t)
    var = delta * (1.0 - gb_prev) / (1.0 - gb_t)
    return c0, ct, var


def _ancestral(model: DiffusionModel, n: int, rng: np.random.Generator, correct=None) -> np.ndarray:
    x = rng.standard_normal((n,) + model.shape)
    for t in range(model.schedule.T, 0, -1):
        xhat, _ = _forward(model.params, x, np.full(n, t))
        if correct is not None:
            xhat = correct(xhat)
        xhat = np.clip(xhat, CLIP_LO, CLIP_HI)
        if t > 1:
            c0, ct, var = _posterior(model.schedule, t)
            x = c0 * xhat + ct * x + math.sqrt(var) * rng.standard_normal(x.shape)
        else:
            x = xhat
    return np.clip(x, CLIP_LO, CLIP_HI)


def sample_unconditional(model: DiffusionModel, n: int, seed: int) -> np.ndarray:
    """Draw ``n`` windows by ancestral sampling from pure noise."""
    return _ancestral(model, n, np.random.default_rng(seed))


def impute_conditional(model: DiffusionModel, x_obs: np.ndarray, mask: np.ndarray,
                       guidance: GuidanceConfig | None = None, seed: int = 0,
                       strict: bool = True) -> np.ndarray:
    """Fill missing entries of ``x_obs`` (one window or a batch).

    At every reverse step the clean estimate is pulled toward the
    observations on observed coordinates; after the last step observed
    entries are copied back verbatim.
    """
    guidance = guidance or GuidanceConfig()
    single = np.ndim(x_obs) == 2
    x_obs = _check_shape(model, x_obs)
    mask = np.asarray(mask, dtype=float).reshape(x_obs.shape)
    if strict and np.any(mask.sum(axis=1) == 0):
        raise PreconditionError("every channel needs at least one observed entry per window")
    obs = np.where(mask > 0, x_obs, 0.0)
    step = 2.0 * guidance.eta * mask

    def correct(xhat):
        return xhat - step * (xhat - obs)

    out = _ancestral(model, x_obs.shape[0], np.random.default_rng(seed), correct)
    out = np.where(mask > 0, x_obs, out)
    return out[0] if single else out


def save_model(path: str | Path, model: DiffusionModel) -> None:
    p = model.params
    meta = {
        "version": CHECKPOINT_VERSION,
        "seq_len": p.seq_len, "n_channels": p.n_channels, "hidden": p.hidden,
        "emb_dim": EMB_DIM,
        "loss": {k: getattr(model.loss, k) for k in
                 ("lambda1", "lambda2", "lambda_w", "learning_rate", "batch_size")},
    }
    with open(path, "wb") as fh:
        np.savez(fh, meta=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8),
                 deltas=model.schedule.deltas, params=p.flat(),
                 history=np.asarray(model.history, dtype=float))


def load_model(path: str | Path) -> DiffusionModel:
    with np.load(path) as z:
        meta = json.loads(z["meta"].tobytes().decode())
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
        if meta["emb_dim"] != EMB_DIM:
            raise ValueError("checkpoint step-embedding size differs from this build")
        shell = DenoiserParams.init(meta["seq_len"], meta["n_channels"], meta["hidden"])
        return DiffusionModel(shell.with_flat(z["params"]), NoiseSchedule(z["deltas"].copy()),
                              LossConfig(**meta["loss"]), [float(v) for v in z["history"]])
