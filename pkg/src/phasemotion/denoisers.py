"""Noise-prediction models over normalized phase latents.

Both denoisers tokenize a flat latent the same way: four param-level
tokens (projected Q-rows of the de-flattened latent) and a fixed grid of
frame-level tokens holding rows of the periodic signal evaluated from the
unnormalized latent on a canonical mixT window. A diffusion-step token is
always present; the semantic model adds one text token.

The semantic model runs a self-attention stack; the transitional model
cross-attends its tokens against the neighbor segment's clean-latent
tokens (one model per direction). Both read the noise estimate off the
four param-token positions.

Text conditioning is a trainable token-embedding table with mean pooling,
learned jointly with the semantic model.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, asdict

import numpy as np

from .autodiff import Tensor, backward, concat, no_grad
from .checkpoint import Checkpoint
from .diffusion import DiffusionSchedule
from .nn import (CrossAttentionLayer, EncoderLayer, LayerNorm, Linear,
                 ParamStore, adam_step, sinusoidal_pe, sinusoidal_pe_at)
from .phase import build_time_window
from .rng import RngState, derive_seed


@dataclass
class DenoiserConfig:
    q: int = 32
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    d_ff: int = 128
    n_tok: int = 48
    d_text: int = 32
    init_seed: int = 2

    def to_dict(self) -> dict:
        return asdict(self)


class StackMismatchError(ValueError):
    """Checkpoints from different stacks refused at load/compose time."""


def _frame_signals(flat_unnorm: np.ndarray, q: int, window: np.ndarray) -> np.ndarray:
    """Periodic-signal rows [B, n_tok, Q] from unnormalized flat latents."""
    b = flat_unnorm.shape[0]
    rows = flat_unnorm.reshape(b, 4, q)
    f, a, off, s = (rows[:, i, None, :] for i in range(4))
    return a * np.sin(f * (window[None, :, :] - s)) + off


class _TokenBuilder:
    """Shared param/frame/step token assembly for one latent stream."""

    def __init__(self, store: ParamStore, name: str, cfg: DenoiserConfig,
                 rng: RngState, stats: dict[str, np.ndarray]):
        c = cfg
        self.cfg = cfg
        self.stats = stats
        self.param_proj = Linear(store, f"{name}.param", c.q, c.d_model, rng)
        self.frame_proj = Linear(store, f"{name}.frame", c.q, c.d_model, rng)
        self.param_type = store.create(f"{name}.param_type", (4, c.d_model), rng,
                                       fan_in=c.d_model)
        self.frame_type = store.create(f"{name}.frame_type", (1, c.d_model), rng,
                                       fan_in=c.d_model)
        self.window = build_time_window(c.n_tok, c.q, "mixT", c.n_tok // 2).values
        self.frame_pe = sinusoidal_pe(c.n_tok, c.d_model)

    def __call__(self, flat: np.ndarray) -> Tensor:
        """flat: [B, 4Q] normalized latents -> [B, 4 + n_tok, d_model]."""
        c = self.cfg
        b = flat.shape[0]
        param_tok = (self.param_proj(Tensor(flat.reshape(b, 4, c.q)))
                     + self.param_type.reshape(1, 4, c.d_model))
        unnorm = flat * self.stats["latent_std"] + self.stats["latent_mean"]
        signal = _frame_signals(unnorm, c.q, self.window)
        frame_tok = (self.frame_proj(Tensor(signal))
                     + Tensor(self.frame_pe[None, :, :])
                     + self.frame_type.reshape(1, 1, c.d_model))
        return concat([param_tok, frame_tok], axis=1)


class _StepToken:
    def __init__(self, store: ParamStore, name: str, cfg: DenoiserConfig,
                 rng: RngState):
        self.cfg = cfg
        self.proj = Linear(store, f"{name}.proj", cfg.d_model, cfg.d_model, rng)
        self.type = store.create(f"{name}.type", (1, cfg.d_model), rng,
                                 fan_in=cfg.d_model)

    def __call__(self, k_arr: np.ndarray, b: int) -> Tensor:
        d = self.cfg.d_model
        emb = sinusoidal_pe_at(np.broadcast_to(np.asarray(k_arr, dtype=np.float64), (b,)), d)
        return (self.proj(Tensor(emb[:, None, :])) + self.type.reshape(1, 1, d))


class _DenoiserBase:
    kind = "denoiser"

    def __init__(self, cfg: DenoiserConfig, schedule_cfg: dict,
                 pae_stats: dict[str, np.ndarray], pae_stats_digest: str):
        self.config = cfg
        self.schedule_cfg = dict(schedule_cfg)
        self.pae_stats = {k: np.array(v) for k, v in pae_stats.items()}
        self.pae_stats_digest = pae_stats_digest
        self.store = ParamStore()
        self.trained = False

    def _require_trained(self):
        if not self.trained:
            raise RuntimeError(f"{self.kind} has not been trained/loaded")

    def _check_latent(self, flat: np.ndarray) -> np.ndarray:
        flat = np.atleast_2d(np.asarray(flat, dtype=np.float64))
        if flat.shape[1] != 4 * self.config.q:
            raise ValueError(f"latent width {flat.shape[1]} != {4 * self.config.q}")
        return flat

    def extra_config(self) -> dict:
        return {}

    def to_checkpoint(self) -> Checkpoint:
        self._require_trained()
        config = {"kind": self.kind, "model": self.config.to_dict(),
                  "schedule": self.schedule_cfg,
                  "pae_stats_digest": self.pae_stats_digest}
        config.update(self.extra_config())
        return Checkpoint(config=config, params=self.store.state_arrays(),
                          stats=dict(self.pae_stats))


class SemanticDenoiser(_DenoiserBase):
    """Text-conditioned self-attention noise model."""

    kind = "semantic_denoiser"

    def __init__(self, cfg: DenoiserConfig, schedule_cfg: dict,
                 pae_stats: dict[str, np.ndarray], pae_stats_digest: str,
                 vocabulary: list[str]):
        super().__init__(cfg, schedule_cfg, pae_stats, pae_stats_digest)
        self.vocabulary = list(vocabulary)
        c = cfg
        rng = RngState(derive_seed(c.init_seed, "semantic-denoiser"))
        self.table = self.store.create("text.table", (len(self.vocabulary), c.d_text),
                                       rng, fan_in=c.d_text)
        self.text_proj = Linear(self.store, "text.proj", c.d_text, c.d_model, rng)
        self.text_type = self.store.create("text.type", (1, c.d_model), rng,
                                           fan_in=c.d_model)
        self.step_tok = _StepToken(self.store, "step", c, rng)
        self.tokens = _TokenBuilder(self.store, "tok", c, rng, self.pae_stats)
        self.layers = [EncoderLayer(self.store, f"l{i}", c.d_model, c.n_heads,
                                    c.d_ff, rng) for i in range(c.n_layers)]
        self.final_ln = LayerNorm(self.store, "final_ln", c.d_model)
        self.head = Linear(self.store, "head", c.d_model, c.q, rng)

    def multihot(self, token_lists: list[list[str]]) -> np.ndarray:
        """Mean-pooling weights [B, V]; an empty list is the null prompt."""
        out = np.zeros((len(token_lists), len(self.vocabulary)))
        index = {t: i for i, t in enumerate(self.vocabulary)}
        for row, tokens in enumerate(token_lists):
            for t in tokens:
                if t not in index:
                    raise KeyError(f"unknown action token '{t}'")
                out[row, index[t]] += 1.0 / len(tokens)
        return out

    def text_encode(self, tokens: list[str]) -> np.ndarray:
        """Mean of learned token embeddings; empty list -> zero vector."""
        hot = self.multihot([tokens])
        return (hot @ self.table.data)[0]

    def forward_graph(self, k_arr: np.ndarray, text_vec: Tensor,
                      pk: np.ndarray) -> Tensor:
        c = self.config
        b = pk.shape[0]
        text_tok = (self.text_proj(text_vec).reshape(b, 1, c.d_model)
                    + self.text_type.reshape(1, 1, c.d_model))
        seq = concat([self.step_tok(k_arr, b), text_tok, self.tokens(pk)], axis=1)
        for layer in self.layers:
            seq = layer(seq)
        hidden = self.final_ln(seq)[:, 2:6, :]
        return self.head(hidden).reshape(b, 4 * c.q)

    def denoise(self, k: int, c_vec: np.ndarray, pk: np.ndarray) -> np.ndarray:
        """eps estimate for one latent or a batch of latents."""
        self._require_trained()
        flat = self._check_latent(pk)
        single = np.asarray(pk).ndim == 1
        c_mat = np.atleast_2d(np.asarray(c_vec, dtype=np.float64))
        if c_mat.shape[0] == 1 and flat.shape[0] > 1:
            c_mat = np.repeat(c_mat, flat.shape[0], axis=0)
        with no_grad():
            out = self.forward_graph(np.full(flat.shape[0], k), Tensor(c_mat), flat).data
        return out[0] if single else out

    def extra_config(self) -> dict:
        return {"vocabulary": self.vocabulary}

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint) -> "SemanticDenoiser":
        if ckpt.config.get("kind") != cls.kind:
            raise ValueError("checkpoint does not hold a semantic denoiser")
        model = cls(DenoiserConfig(**ckpt.config["model"]), ckpt.config["schedule"],
                    ckpt.stats, ckpt.config["pae_stats_digest"],
                    ckpt.config["vocabulary"])
        model.store.load_arrays(ckpt.params)
        model.trained = True
        return model


class TransitionDenoiser(_DenoiserBase):
    """Cross-attention noise model conditioned on a neighbor clean latent."""

    kind = "transition_denoiser"

    def __init__(self, cfg: DenoiserConfig, schedule_cfg: dict,
                 pae_stats: dict[str, np.ndarray], pae_stats_digest: str,
                 direction: str):
        super().__init__(cfg, schedule_cfg, pae_stats, pae_stats_digest)
        if direction not in ("forward", "backward"):
            raise ValueError("direction must be forward or backward")
        self.direction = direction
        c = cfg
        rng = RngState(derive_seed(c.init_seed, "transition-denoiser", direction))
        self.step_tok = _StepToken(self.store, "step", c, rng)
        self.tokens = _TokenBuilder(self.store, "tok", c, rng, self.pae_stats)
        self.adj_tokens = _TokenBuilder(self.store, "adj", c, rng, self.pae_stats)
        self.layers = [CrossAttentionLayer(self.store, f"l{i}", c.d_model,
                                           c.n_heads, c.d_ff, rng)
                       for i in range(c.n_layers)]
        self.final_ln = LayerNorm(self.store, "final_ln", c.d_model)
        self.head = Linear(self.store, "head", c.d_model, c.q, rng)

    def forward_graph(self, k_arr: np.ndarray, pk: np.ndarray,
                      adj0: np.ndarray) -> Tensor:
        c = self.config
        b = pk.shape[0]
        seq = concat([self.step_tok(k_arr, b), self.tokens(pk)], axis=1)
        memory = self.adj_tokens(adj0)
        for layer in self.layers:
            seq = layer(seq, memory)
        hidden = self.final_ln(seq)[:, 1:5, :]
        return self.head(hidden).reshape(b, 4 * c.q)

    def denoise(self, k: int, pk: np.ndarray, adj0: np.ndarray) -> np.ndarray:
        self._require_trained()
        flat = self._check_latent(pk)
        adj = self._check_latent(adj0)
        if adj.shape[0] == 1 and flat.shape[0] > 1:
            adj = np.repeat(adj, flat.shape[0], axis=0)
        single = np.asarray(pk).ndim == 1
        with no_grad():
            out = self.forward_graph(np.full(flat.shape[0], k), flat, adj).data
        return out[0] if single else out

    def extra_config(self) -> dict:
        return {"direction": self.direction}

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint) -> "TransitionDenoiser":
        if ckpt.config.get("kind") != cls.kind:
            raise ValueError("checkpoint does not hold a transition denoiser")
        model = cls(DenoiserConfig(**ckpt.config["model"]), ckpt.config["schedule"],
                    ckpt.stats, ckpt.config["pae_stats_digest"],
                    ckpt.config["direction"])
        model.store.load_arrays(ckpt.params)
        model.trained = True
        return model


# -- training ------------------------------------------------------------


@dataclass
class DenoiserTrainConfig:
    steps: int = 1200
    batch_size: int = 64
    lr: float = 1e-3
    seed: int = 0
    log_every: int = 50


@dataclass
class LatentPairSet:
    """Normalized latents of every (preceding, transition, succeeding) tuple."""

    p: np.ndarray            # [M, 4Q]
    t: np.ndarray
    s: np.ndarray
    p_tokens: list[list[str]]
    s_tokens: list[list[str]]


def _noise_batch(p0: np.ndarray, sched: DiffusionSchedule, rng: RngState):
    b = p0.shape[0]
    k = rng.integers(0, sched.k_train, b)
    eps = rng.normal(b, p0.shape[1])
    ab = sched.alpha_bar[k][:, None]
    pk = np.sqrt(ab) * p0 + np.sqrt(1.0 - ab) * eps
    return k, eps, pk


def train_denoiser(model, targets: np.ndarray, cond, sched: DiffusionSchedule,
                   cfg: DenoiserTrainConfig, progress=None) -> list[tuple[int, float]]:
    """L1 noise-prediction training; `cond` are multihots or neighbor latents."""
    rng = RngState(derive_seed(cfg.seed, "train", model.kind,
                               getattr(model, "direction", "")))
    m = targets.shape[0]
    model.trained = True
    log: list[tuple[int, float]] = []
    is_semantic = isinstance(model, SemanticDenoiser)
    t0 = time.time()
    for step in range(cfg.steps):
        idx = rng.integers(0, m, cfg.batch_size)
        k, eps, pk = _noise_batch(targets[idx], sched, rng)
        model.store.zero_grad()
        if is_semantic:
            text_vec = Tensor(cond[idx]) @ model.table
            eps_hat = model.forward_graph(k, text_vec, pk)
        else:
            eps_hat = model.forward_graph(k, pk, cond[idx])
        loss = (eps_hat - Tensor(eps)).abs().mean()
        backward(loss)
        adam_step(model.store, model.store.named_grads(), lr=cfg.lr)
        if step % cfg.log_every == 0:
            log.append((step, loss.item()))
            if progress:
                progress(step, loss.item(), time.time() - t0)
    return log


def holdout_l1(model, targets: np.ndarray, cond, sched: DiffusionSchedule,
               seed: int = 7, limit: int = 512,
               batch: int = 128) -> tuple[float, float]:
    """(model L1, zero-predictor L1) on a fixed noised evaluation set."""
    rng = RngState(derive_seed(seed, "holdout", model.kind,
                               getattr(model, "direction", "")))
    m = min(limit, targets.shape[0])
    order = rng.permutation(targets.shape[0])[:m]
    total_model = 0.0
    total_zero = 0.0
    is_semantic = isinstance(model, SemanticDenoiser)
    for start in range(0, m, batch):
        idx = order[start:start + batch]
        k, eps, pk = _noise_batch(targets[idx], sched, rng)
        with no_grad():
            if is_semantic:
                text_vec = Tensor(cond[idx] @ model.table.data)
                eps_hat = model.forward_graph(k, text_vec, pk).data
            else:
                eps_hat = model.forward_graph(k, pk, cond[idx]).data
        total_model += np.abs(eps_hat - eps).sum()
        total_zero += np.abs(eps).sum()
    denom = m * targets.shape[1]
    return total_model / denom, total_zero / denom
