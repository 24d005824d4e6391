"""Chain orchestration: parallel denoising of semantic and transitional
segments with phase mixing, then decoding and linear blending.

A chain interleaves semantic segments with derived transitional segments,
each transition covering the second half of its predecessor and the first
half of its successor, anchored at the shared boundary frame. Per sweep,
every live segment is denoised by whichever of (semantic model, forward
transition model, backward transition model) applies; neighbor
conditioning always reads the neighbor's clean-latent cache from the
previous sweep, so all same-model calls in a sweep can be batched without
changing results. The DDIM update then advances the latent and refreshes
the cache with its clean-latent estimate.

Frozen segments (inbetweening endpoints) keep their encoded latents and
verbatim frames; blending ramps are confined to generated regions.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autoencoder import PhaseAutoencoder
from .checkpoint import arrays_digest
from .denoisers import SemanticDenoiser, StackMismatchError, TransitionDenoiser
from .diffusion import DiffusionSchedule, ddim_step, mixing_weight, phase_mix
from .motiondata import MotionSegment
from .phase import PhaseParams
from .rng import RngState, derive_seed


@dataclass
class ChainSpec:
    items: list[tuple[list[str], int]]  # (action tokens, frame count)
    seed: int = 0


@dataclass
class Segment:
    kind: str                    # "semantic" | "transition"
    index: int                   # per-kind index, also the rng stream id
    start: int
    length: int
    anchor: int                  # local anchor frame
    tokens: list[str] | None = None
    frozen: bool = False
    frozen_latent: np.ndarray | None = None   # normalized clean latent
    frames: np.ndarray | None = None          # verbatim frames (frozen only)

    @property
    def name(self) -> str:
        return ("sem" if self.kind == "semantic" else "trn") + str(self.index)

    @property
    def end(self) -> int:
        return self.start + self.length


@dataclass
class SegmentChain:
    segments: list[Segment]      # interleaved: sem0, trn0, sem1, trn1, ...
    total: int
    seed: int


def derive_transition_spans(spec: ChainSpec, n_min: int = 24,
                            n_max: int = 96) -> SegmentChain:
    """Place semantic segments on the timeline and derive transitions.

    Transition i spans [start_i + floor(N_i/2), start_{i+1} + floor(N_{i+1}/2));
    its anchor is the shared boundary frame. Odd lengths round the left
    half down.
    """
    if not spec.items:
        raise ValueError("chain needs at least one segment")
    for tokens, n in spec.items:
        if not n_min <= n <= n_max:
            raise ValueError(f"segment length {n} outside [{n_min}, {n_max}]")
    starts = np.concatenate([[0], np.cumsum([n for _, n in spec.items])])
    segments: list[Segment] = []
    for i, (tokens, n) in enumerate(spec.items):
        segments.append(Segment(kind="semantic", index=i, start=int(starts[i]),
                                length=n, anchor=n // 2, tokens=list(tokens)))
        if i + 1 < len(spec.items):
            n_next = spec.items[i + 1][1]
            t_start = int(starts[i]) + n // 2
            t_end = int(starts[i + 1]) + n_next // 2
            segments.append(Segment(kind="transition", index=i, start=t_start,
                                    length=t_end - t_start,
                                    anchor=(n - n // 2)))
    chain = SegmentChain(segments=[], total=int(starts[-1]), seed=spec.seed)
    # interleave in timeline order: semantic i, transition i, semantic i+1, ...
    sems = [s for s in segments if s.kind == "semantic"]
    trns = [s for s in segments if s.kind == "transition"]
    for i, s in enumerate(sems):
        chain.segments.append(s)
        if i < len(trns):
            chain.segments.append(trns[i])
    return chain


# -- blending ---------------------------------------------------------------


@dataclass
class BlendPlan:
    weights: list[list[tuple[int, float]]]  # per frame: (segment list idx, w)


def build_blend_plan(chain: SegmentChain) -> BlendPlan:
    """Linear crossfades between each semantic segment and its transitions.

    Within a transition's overlap with a semantic span, the transition
    weight ramps linearly up toward the boundary ((j+1)/(L+1) over the
    second half of the left segment) and back down after it. Overlaps
    inside frozen segments are dropped so input frames pass through
    verbatim.
    """
    weights: list[dict[int, float]] = [dict() for _ in range(chain.total)]
    for pos, seg in enumerate(chain.segments):
        if seg.kind != "semantic":
            continue
        for t in range(seg.start, seg.end):
            weights[t][pos] = 1.0
    for pos, seg in enumerate(chain.segments):
        if seg.kind != "transition":
            continue
        left = chain.segments[pos - 1]
        right = chain.segments[pos + 1]
        if not left.frozen:
            la = left.end - seg.start
            for j in range(la):
                w = (j + 1.0) / (la + 1.0)
                t = seg.start + j
                weights[t] = {pos - 1: 1.0 - w, pos: w}
        if not right.frozen:
            lb = seg.end - right.start
            for j in range(lb):
                w = (lb - j) / (lb + 1.0)
                t = right.start + j
                weights[t] = {pos: w, pos + 1: 1.0 - w}
    return BlendPlan(weights=[sorted(d.items()) for d in weights])


def blend(decoded: dict[int, np.ndarray], chain: SegmentChain,
          plan: BlendPlan, width: int) -> np.ndarray:
    """Per-frame convex combination of the contributing segments' frames."""
    out = np.zeros((chain.total, width))
    for t, entries in enumerate(plan.weights):
        if not entries:
            raise ValueError(f"blend plan leaves frame {t} uncovered")
        total_w = 0.0
        for pos, w in entries:
            seg = chain.segments[pos]
            out[t] += w * decoded[pos][t - seg.start]
            total_w += w
        if abs(total_w - 1.0) > 1e-9:
            raise ValueError(f"blend weights at frame {t} sum to {total_w}")
    return out


# -- the stack ---------------------------------------------------------------


@dataclass
class DenoiseResult:
    latents: dict[int, np.ndarray]   # normalized clean latent per segment pos
    sweeps: int


class ComposerStack:
    """Loaded autoencoder + three denoisers + schedule, digest-verified."""

    def __init__(self, pae: PhaseAutoencoder, spdm: SemanticDenoiser,
                 tpdm_f: TransitionDenoiser, tpdm_b: TransitionDenoiser,
                 schedule: DiffusionSchedule, verify: bool = True):
        self.pae = pae
        self.spdm = spdm
        self.tpdm_f = tpdm_f
        self.tpdm_b = tpdm_b
        self.schedule = schedule
        if verify:
            digest = arrays_digest(pae.stats)
            sched_cfg = schedule.config()
            for model in (spdm, tpdm_f, tpdm_b):
                if model.pae_stats_digest != digest:
                    raise StackMismatchError(
                        f"{model.kind} was trained against different autoencoder "
                        f"statistics (digest {model.pae_stats_digest[:12]} != "
                        f"{digest[:12]})")
                if model.schedule_cfg != sched_cfg:
                    raise StackMismatchError(f"{model.kind} schedule differs "
                                             f"from the requested schedule")
            if tpdm_f.direction != "forward" or tpdm_b.direction != "backward":
                raise StackMismatchError("transition denoiser directions are swapped")

    # -- denoising loop -----------------------------------------------------

    def denoise_chain(self, chain: SegmentChain, batched: bool = True,
                      step_hook=None) -> DenoiseResult:
        q4 = 4 * self.spdm.config.q
        segs = chain.segments
        pk: dict[int, np.ndarray] = {}
        cache: dict[int, np.ndarray] = {}
        text: dict[int, np.ndarray] = {}
        for pos, seg in enumerate(segs):
            if seg.frozen:
                if seg.frozen_latent is None:
                    raise ValueError(f"frozen segment {seg.name} has no latent")
                cache[pos] = seg.frozen_latent
                continue
            stream = RngState(derive_seed(chain.seed, seg.kind, seg.index))
            pk[pos] = stream.normal(q4)
            cache[pos] = pk[pos].copy()  # clean-latent placeholder
            if seg.kind == "semantic" and seg.tokens:
                text[pos] = self.spdm.text_encode(seg.tokens)

        k_infer = self.schedule.k_infer
        sweeps = 0
        for s, (k, k_prev) in enumerate(self.schedule.step_pairs()):
            k_index = k_infer - s
            prev_cache = {pos: c.copy() for pos, c in cache.items()}
            eps_hat = self._predict(segs, pk, prev_cache, text, k, batched)
            for pos, seg in enumerate(segs):
                if seg.frozen:
                    continue
                conditioned = pos in text
                w = mixing_weight(k_index, k_infer, conditioned)
                eps_c = eps_hat.get(("c", pos))
                eps_mixed = phase_mix(eps_hat.get(("f", pos)),
                                      eps_hat.get(("b", pos)),
                                      eps_c, w)
                pk[pos], cache[pos] = ddim_step(pk[pos], eps_mixed, k, k_prev,
                                                self.schedule)
            sweeps += 1
            if step_hook:
                step_hook(s, k, {p: c.copy() for p, c in cache.items()})
        return DenoiseResult(latents=dict(cache), sweeps=sweeps)

    def _predict(self, segs, pk, prev_cache, text, k, batched):
        """One sweep of model calls; at most one batched call per model."""
        calls = {"c": [], "f": [], "b": []}
        for pos, seg in enumerate(segs):
            if seg.frozen:
                continue
            if pos in text:
                calls["c"].append(pos)
            if pos - 1 >= 0:
                calls["f"].append(pos)
            if pos + 1 < len(segs):
                calls["b"].append(pos)
        out: dict[tuple[str, int], np.ndarray] = {}
        if batched:
            if calls["c"]:
                mat = np.stack([pk[p] for p in calls["c"]])
                cmat = np.stack([text[p] for p in calls["c"]])
                res = self.spdm.denoise(k, cmat, mat)
                for row, p in enumerate(calls["c"]):
                    out[("c", p)] = res[row]
            for tag, model, shift in (("f", self.tpdm_f, -1), ("b", self.tpdm_b, +1)):
                if calls[tag]:
                    mat = np.stack([pk[p] for p in calls[tag]])
                    adj = np.stack([prev_cache[p + shift] for p in calls[tag]])
                    res = model.denoise(k, mat, adj)
                    for row, p in enumerate(calls[tag]):
                        out[(tag, p)] = res[row]
        else:
            for p in calls["c"]:
                out[("c", p)] = self.spdm.denoise(k, text[p], pk[p])
            for p in calls["f"]:
                out[("f", p)] = self.tpdm_f.denoise(k, pk[p], prev_cache[p - 1])
            for p in calls["b"]:
                out[("b", p)] = self.tpdm_b.denoise(k, pk[p], prev_cache[p + 1])
        return out

    # -- decode + blend -------------------------------------------------------

    def decode_chain(self, chain: SegmentChain,
                     result: DenoiseResult) -> dict[int, np.ndarray]:
        flats, lengths, anchors, positions = [], [], [], []
        decoded: dict[int, np.ndarray] = {}
        for pos, seg in enumerate(chain.segments):
            if seg.frozen:
                decoded[pos] = seg.frames
                continue
            flats.append(self.pae.unnormalize_latent(result.latents[pos]))
            lengths.append(seg.length)
            anchors.append(seg.anchor)
            positions.append(pos)
        if flats:
            frames = self.pae.decode_batch(flats, lengths, anchors)
            for pos, f in zip(positions, frames):
                decoded[pos] = f
        return decoded

    def compose_chain(self, chain: SegmentChain, batched: bool = True) -> "ComposeOutput":
        result = self.denoise_chain(chain, batched=batched)
        decoded = self.decode_chain(chain, result)
        plan = build_blend_plan(chain)
        frames = blend(decoded, chain, plan, self.pae.config.e)
        seq = MotionSegment(frames=frames, fps=self.pae.config.fps,
                            layout=self.pae.layout)
        return ComposeOutput(sequence=seq, chain=chain, decoded=decoded,
                             plan=plan, result=result)


@dataclass
class ComposeOutput:
    sequence: MotionSegment
    chain: SegmentChain
    decoded: dict[int, np.ndarray]
    plan: BlendPlan
    result: DenoiseResult


# -- public tasks -------------------------------------------------------------


def compose_long(stack: ComposerStack, spec: ChainSpec,
                 batched: bool = True) -> ComposeOutput:
    """Unrolled chain generation; sequential sweeps stay at K_infer."""
    if len(spec.items) < 2:
        raise ValueError("long-form composition needs at least 2 segments")
    cfg = stack.pae.config
    chain = derive_transition_spans(spec, cfg.n_min, cfg.n_max)
    return stack.compose_chain(chain, batched=batched)


def compose_pair(stack: ComposerStack, c_p: list[str], c_s: list[str],
                 n_p: int, n_s: int, seed: int):
    """Two-segment composition; returns the decoded parts and the blend."""
    spec = ChainSpec(items=[(c_p, n_p), (c_s, n_s)], seed=seed)
    out = compose_long(stack, spec)
    fps, layout = stack.pae.config.fps, stack.pae.layout
    x_p = MotionSegment(out.decoded[0], fps, layout, label=list(c_p))
    x_t = MotionSegment(out.decoded[1], fps, layout)
    x_s = MotionSegment(out.decoded[2], fps, layout, label=list(c_s))
    return x_p, x_t, x_s, out.sequence, out


def inbetween(stack: ComposerStack, x_p: MotionSegment, x_s: MotionSegment,
              n_i: int, c_i: list[str] | None = None,
              seed: int = 0) -> ComposeOutput:
    """Bridge two segments with a generated middle of n_i frames.

    Endpoint latents are encoded once and frozen for the whole denoise
    loop; output frames of the endpoints are the inputs, byte for byte.
    With a text condition the middle segment is semantically denoised
    (conditional variant); without one it is purely transitional.
    """
    cfg = stack.pae.config
    stack.pae.check_length(n_i)
    lat_p = stack.pae.normalize_latent(stack.pae.encode(x_p).flat())
    lat_s = stack.pae.normalize_latent(stack.pae.encode(x_s).flat())

    spec = ChainSpec(items=[([], x_p.n), (c_i or [], n_i), ([], x_s.n)], seed=seed)
    chain = derive_transition_spans(spec, cfg.n_min, cfg.n_max)
    sem = [s for s in chain.segments if s.kind == "semantic"]
    sem[0].frozen = True
    sem[0].frozen_latent = lat_p
    sem[0].frames = x_p.frames
    sem[0].tokens = None
    sem[2].frozen = True
    sem[2].frozen_latent = lat_s
    sem[2].frames = x_s.frames
    sem[2].tokens = None
    sem[1].tokens = list(c_i) if c_i else None

    return stack.compose_chain(chain)


# -- chain request file --------------------------------------------------------

_CHAIN_MAGIC = "#phasemotion-chain v1"


def dumps_chain_spec(spec: ChainSpec) -> str:
    lines = [_CHAIN_MAGIC, f"seed {spec.seed}"]
    for tokens, n in spec.items:
        lines.append(f"segment {n} " + " ".join(tokens))
    return "\n".join(lines) + "\n"


def loads_chain_spec(text: str) -> ChainSpec:
    lines = [l for l in text.split("\n") if l.strip()]
    if not lines or lines[0] != _CHAIN_MAGIC:
        raise ValueError("not a chain request file")
    seed = 0
    items: list[tuple[list[str], int]] = []
    for line in lines[1:]:
        key, _, rest = line.partition(" ")
        if key == "seed":
            seed = int(rest)
        elif key == "segment":
            parts = rest.split()
            items.append((parts[1:], int(parts[0])))
        else:
            raise ValueError(f"unknown chain field '{key}'")
    return ChainSpec(items=items, seed=seed)


def provenance_table(chain: SegmentChain, plan: BlendPlan) -> str:
    """Per-frame contributor weights, one line per output frame."""
    lines = ["#phasemotion-provenance v1"]
    for t, entries in enumerate(plan.weights):
        parts = " ".join(f"{chain.segments[pos].name}:{w:.17g}"
                         for pos, w in entries)
        lines.append(f"{t} {parts}")
    return "\n".join(lines) + "\n"
