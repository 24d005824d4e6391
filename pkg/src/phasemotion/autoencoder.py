"""Action-centric periodic autoencoder over variable-length motion.

Encoder: per-frame channel projection plus projected composite positional
embedding, a self-attention stack, then four learned query tokens
cross-attending over the frame tokens; each query reads out one of
(frequency, amplitude, offset, phase shift) as a Q-vector.

Decoder: the latent tuple is reparameterized into the periodic signal on
a mixT time window anchored per segment, and a second self-attention
stack maps signal rows (plus positional embedding) back to frames.

Root-translation channels are multiplied by an emphasis factor before
encoding and divided back after decoding, which weights trajectory
fidelity in the reconstruction loss.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, asdict, field

import numpy as np

from .autodiff import Tensor, backward, no_grad
from .checkpoint import Checkpoint, arrays_digest
from .motiondata import ChannelGroup, ChannelLayout, DEFAULT_LAYOUT, MotionSegment
from .nn import (CrossAttentionLayer, EncoderLayer, LayerNorm, Linear,
                 ParamStore, adam_step, padding_mask)
from .phase import PhaseParams, build_time_window, comp_pe
from .rng import RngState, derive_seed

PARAM_NAMES = ("f", "a", "b", "s")


@dataclass
class AutoencoderConfig:
    e: int = 16
    q: int = 32
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    d_ff: int = 128
    pe_dim: int = 32                 # per-anchor Comp-PE width (stacked x3)
    n_min: int = 24
    n_max: int = 96
    fps: float = 24.0
    emphasis: float = 15.0
    window_mode: str = "mixT"
    init_seed: int = 1

    def to_dict(self) -> dict:
        return asdict(self)


class UntrainedModelError(RuntimeError):
    pass


class PhaseAutoencoder:
    def __init__(self, config: AutoencoderConfig,
                 layout: ChannelLayout = DEFAULT_LAYOUT):
        if layout.width != config.e:
            raise ValueError("layout width does not match config.e")
        self.config = config
        self.layout = layout
        self.store = ParamStore()
        self.stats: dict[str, np.ndarray] = {}
        self.trained = False
        c = config
        rng = RngState(derive_seed(c.init_seed, "phase-autoencoder"))

        self.enc_in = Linear(self.store, "enc.in", c.e, c.d_model, rng)
        self.enc_pe = Linear(self.store, "enc.pe", 3 * c.pe_dim, c.d_model, rng)
        self.enc_layers = [EncoderLayer(self.store, f"enc.l{i}", c.d_model,
                                        c.n_heads, c.d_ff, rng)
                           for i in range(c.n_layers)]
        self.enc_ln = LayerNorm(self.store, "enc.ln", c.d_model)
        self.queries = self.store.create("enc.queries", (4, c.d_model), rng,
                                         fan_in=c.d_model)
        self.readout = CrossAttentionLayer(self.store, "enc.readout", c.d_model,
                                           c.n_heads, c.d_ff, rng)
        self.readout_ln = LayerNorm(self.store, "enc.readout_ln", c.d_model)
        self.head = Linear(self.store, "enc.head", c.d_model, c.q, rng)

        self.dec_in = Linear(self.store, "dec.in", c.q, c.d_model, rng)
        self.dec_pe = Linear(self.store, "dec.pe", 3 * c.pe_dim, c.d_model, rng)
        self.dec_layers = [EncoderLayer(self.store, f"dec.l{i}", c.d_model,
                                        c.n_heads, c.d_ff, rng)
                           for i in range(c.n_layers)]
        self.dec_ln = LayerNorm(self.store, "dec.ln", c.d_model)
        self.dec_out = Linear(self.store, "dec.out", c.d_model, c.e, rng)

        scale = np.ones(c.e)
        scale[layout.indices("root_translation")] = c.emphasis
        self._scale = scale
        self._pe_cache: dict[int, np.ndarray] = {}
        self._win_cache: dict[tuple[int, int], np.ndarray] = {}

    # -- constant inputs -------------------------------------------------

    def _comp_pe(self, n: int) -> np.ndarray:
        if n not in self._pe_cache:
            self._pe_cache[n] = comp_pe(n, self.config.pe_dim)
        return self._pe_cache[n]

    def _window(self, n: int, anchor: int) -> np.ndarray:
        key = (n, anchor)
        if key not in self._win_cache:
            self._win_cache[key] = build_time_window(
                n, self.config.q, self.config.window_mode, anchor).values
        return self._win_cache[key]

    def check_length(self, n: int) -> None:
        if not self.config.n_min <= n <= self.config.n_max:
            raise ValueError(f"segment length {n} outside "
                             f"[{self.config.n_min}, {self.config.n_max}]")

    # -- graphs ------------------------------------------------------------

    def encode_graph(self, x: Tensor, pe: np.ndarray,
                     mask: np.ndarray | None) -> Tensor:
        """x: [B, N, E] emphasis-scaled frames -> [B, 4, Q] latent rows."""
        h = self.enc_in(x) + self.enc_pe(Tensor(pe))
        for layer in self.enc_layers:
            h = layer(h, mask)
        h = self.enc_ln(h)
        b = x.shape[0]
        q = (self.queries.reshape(1, 4, self.config.d_model)
             + Tensor(np.zeros((b, 4, self.config.d_model))))
        q = self.readout(q, h, self_mask=None, memory_mask=mask)
        return self.head(self.readout_ln(q))

    def decode_graph(self, latent_rows: Tensor, windows: np.ndarray,
                     pe: np.ndarray, mask: np.ndarray | None) -> Tensor:
        """latent_rows: [B, 4, Q] -> [B, N, E] emphasis-scaled frames."""
        f = latent_rows[:, 0:1, :]
        a = latent_rows[:, 1:2, :]
        b_off = latent_rows[:, 2:3, :]
        s = latent_rows[:, 3:4, :]
        signal = a * ((Tensor(windows) - s) * f).sin() + b_off
        h = self.dec_in(signal) + self.dec_pe(Tensor(pe))
        for layer in self.dec_layers:
            h = layer(h, mask)
        return self.dec_out(self.dec_ln(h))

    # -- batching ----------------------------------------------------------

    def _pad_inputs(self, frames_list: list[np.ndarray],
                    anchors: list[int]) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        c = self.config
        lengths = np.array([f.shape[0] for f in frames_list])
        n_max = int(lengths.max())
        b = len(frames_list)
        x = np.zeros((b, n_max, c.e))
        pe = np.zeros((b, n_max, 3 * c.pe_dim))
        win = np.zeros((b, n_max, c.q))
        for i, f in enumerate(frames_list):
            n = f.shape[0]
            x[i, :n] = f * self._scale
            pe[i, :n] = self._comp_pe(n)
            win[i, :n] = self._window(n, anchors[i])
        mask = padding_mask(lengths, n_max)
        return x, pe, win, mask

    # -- public encode / decode ---------------------------------------------

    def _require_trained(self):
        if not self.trained:
            raise UntrainedModelError("phase autoencoder has not been trained/loaded")

    def encode(self, segment: MotionSegment) -> PhaseParams:
        self._require_trained()
        if segment.e != self.config.e:
            raise ValueError(f"segment has {segment.e} channels, model expects "
                             f"{self.config.e}")
        self.check_length(segment.n)
        flat = self.encode_batch([segment.frames])[0]
        return PhaseParams.from_flat(flat)

    def encode_batch(self, frames_list: list[np.ndarray]) -> np.ndarray:
        """Unnormalized flat latents [B, 4Q]; anchors are irrelevant to encoding."""
        self._require_trained()
        x, pe, _, mask = self._pad_inputs(frames_list, [0] * len(frames_list))
        with no_grad():
            rows = self.encode_graph(Tensor(x), pe, mask).data
        return rows.reshape(len(frames_list), 4 * self.config.q)

    def decode(self, params: PhaseParams, n: int, anchor: int) -> MotionSegment:
        self._require_trained()
        if params.normalized:
            raise ValueError("decode expects unnormalized phase parameters")
        self.check_length(n)
        frames = self.decode_batch([params.flat()], [n], [anchor])[0]
        return MotionSegment(frames=frames, fps=self.config.fps, layout=self.layout)

    def decode_batch(self, flats: list[np.ndarray], lengths: list[int],
                     anchors: list[int]) -> list[np.ndarray]:
        self._require_trained()
        c = self.config
        b = len(flats)
        n_max = max(lengths)
        pe = np.zeros((b, n_max, 3 * c.pe_dim))
        win = np.zeros((b, n_max, c.q))
        for i, (n, anchor) in enumerate(zip(lengths, anchors)):
            self.check_length(n)
            pe[i, :n] = self._comp_pe(n)
            win[i, :n] = self._window(n, anchor)
        mask = padding_mask(np.array(lengths), n_max)
        rows = Tensor(np.stack(flats).reshape(b, 4, c.q))
        with no_grad():
            out = self.decode_graph(rows, win, pe, mask).data
        return [out[i, :n] / self._scale for i, n in enumerate(lengths)]

    # -- latent normalization ------------------------------------------------

    def normalize_latent(self, flat: np.ndarray) -> np.ndarray:
        self._require_trained()
        return (flat - self.stats["latent_mean"]) / self.stats["latent_std"]

    def unnormalize_latent(self, flat: np.ndarray) -> np.ndarray:
        self._require_trained()
        return flat * self.stats["latent_std"] + self.stats["latent_mean"]

    @property
    def stats_digest(self) -> str:
        self._require_trained()
        return arrays_digest(self.stats)

    # -- persistence -----------------------------------------------------------

    def to_checkpoint(self) -> Checkpoint:
        self._require_trained()
        config = {"kind": "phase_autoencoder", "model": self.config.to_dict(),
                  "layout": [[g.name, g.role, g.size] for g in self.layout.groups]}
        return Checkpoint(config=config, params=self.store.state_arrays(),
                          stats=dict(self.stats))

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint) -> "PhaseAutoencoder":
        if ckpt.config.get("kind") != "phase_autoencoder":
            raise ValueError("checkpoint does not hold a phase autoencoder")
        layout = ChannelLayout(groups=tuple(
            ChannelGroup(n, r, s) for n, r, s in ckpt.config["layout"]))
        model = cls(AutoencoderConfig(**ckpt.config["model"]), layout)
        model.store.load_arrays(ckpt.params)
        model.stats = {k: np.array(v) for k, v in ckpt.stats.items()}
        model.trained = True
        return model


# -- training -----------------------------------------------------------------


@dataclass
class PAETrainConfig:
    steps: int = 4000
    batch_size: int = 32
    lr: float = 3e-4
    seed: int = 0
    log_every: int = 50
    bucket_pools: int = 8    # batches per length-sorted shuffle pool


@dataclass
class TrainItem:
    frames: np.ndarray
    anchor: int


def _batched_order(n_items: int, batch_size: int, pools: int, lengths: np.ndarray,
                   rng: RngState) -> list[np.ndarray]:
    """Shuffle, then sort within pools of a few batches to limit padding."""
    order = rng.permutation(n_items)
    pool = batch_size * pools
    batches = []
    for start in range(0, n_items, pool):
        chunk = order[start:start + pool]
        chunk = chunk[np.argsort(lengths[chunk], kind="stable")]
        for b in range(0, len(chunk), batch_size):
            batch = chunk[b:b + batch_size]
            if len(batch):
                batches.append(batch)
    return batches


def train_autoencoder(items: list[TrainItem], model: PhaseAutoencoder,
                      train_cfg: PAETrainConfig,
                      progress=None) -> tuple[PhaseAutoencoder, list[tuple[int, float]]]:
    """Minimize masked MSE over emphasis-scaled frames; fill latent stats."""
    if not items:
        raise ValueError("empty training set")
    for it in items:
        model.check_length(it.frames.shape[0])
    rng = RngState(derive_seed(train_cfg.seed, "train-actpae"))
    lengths = np.array([it.frames.shape[0] for it in items])
    log: list[tuple[int, float]] = []
    model.trained = True  # the store is live from here on
    step = 0
    t0 = time.time()
    while step < train_cfg.steps:
        for batch_idx in _batched_order(len(items), train_cfg.batch_size,
                                        train_cfg.bucket_pools, lengths, rng):
            if step >= train_cfg.steps:
                break
            frames = [items[i].frames for i in batch_idx]
            anchors = [items[i].anchor for i in batch_idx]
            x, pe, win, mask = model._pad_inputs(frames, anchors)
            valid = (mask == 0.0)[:, :, None]  # [B, N, 1]
            model.store.zero_grad()
            xt = Tensor(x)
            rows = model.encode_graph(xt, pe, mask)
            xhat = model.decode_graph(rows, win, pe, mask)
            diff = (xhat - xt) * Tensor(valid)
            loss = (diff * diff).sum() * (1.0 / (valid.sum() * model.config.e))
            backward(loss)
            adam_step(model.store, model.store.named_grads(), lr=train_cfg.lr)
            if step % train_cfg.log_every == 0:
                log.append((step, loss.item()))
                if progress:
                    progress(step, loss.item(), time.time() - t0)
            step += 1
    _fill_stats(model, items)
    return model, log


def _fill_stats(model: PhaseAutoencoder, items: list[TrainItem],
                chunk: int = 256) -> None:
    flats = []
    for start in range(0, len(items), chunk):
        frames = [it.frames for it in items[start:start + chunk]]
        flats.append(model.encode_batch(frames))
    lat = np.concatenate(flats, axis=0)
    std = lat.std(axis=0)
    model.stats = {
        "latent_mean": lat.mean(axis=0),
        "latent_std": np.maximum(std, 1e-8),
    }


def reconstruction_rmse(model: PhaseAutoencoder, items: list[TrainItem],
                        chunk: int = 128) -> np.ndarray:
    """Per-channel RMSE of decode(encode(x)) against x, pooled over frames."""
    sq = np.zeros(model.config.e)
    count = 0
    for start in range(0, len(items), chunk):
        part = items[start:start + chunk]
        frames = [it.frames for it in part]
        flats = model.encode_batch(frames)
        outs = model.decode_batch(list(flats), [f.shape[0] for f in frames],
                                  [it.anchor for it in part])
        for f, o in zip(frames, outs):
            sq += ((o - f) ** 2).sum(axis=0)
            count += f.shape[0]
    return np.sqrt(sq / count)
