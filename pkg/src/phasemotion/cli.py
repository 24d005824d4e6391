"""Command-line entry points.

    phasemotion <command> [--config FILE] [key=value ...]

Configuration is a key-value text file (one `key = value` per line, `#`
comments); command-line `key=value` overrides win. Unknown keys are
rejected. Every run writes its resolved configuration next to its
outputs, and all artifacts are byte-deterministic for a fixed
configuration and seed.

Exit codes: 0 ok, 2 bad configuration or usage, 3 missing input artifact,
4 checkpoint digest mismatch, 5 invalid data or failed run.
"""
from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import composer as comp
from .autoencoder import (AutoencoderConfig, PAETrainConfig, PhaseAutoencoder,
                          TrainItem, reconstruction_rmse, train_autoencoder)
from .checkpoint import (Checkpoint, CheckpointError, arrays_digest,
                         load_checkpoint, save_checkpoint)
from .denoisers import (DenoiserConfig, DenoiserTrainConfig, SemanticDenoiser,
                        StackMismatchError, TransitionDenoiser, holdout_l1,
                        train_denoiser)
from .diffusion import make_schedule
from .kinematics import dumps_positions
from .metrics import EvalWindow, format_report, l2_rot, l2_vel, npss, rms_jerk
from .motiondata import (ChannelGroup, ChannelLayout, MotionSegment,
                         load_motion, save_motion)
from .rng import derive_seed
from .synth import Corpus, CorpusConfig, SynthConfig, build_corpus

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_MISSING = 3
EXIT_DIGEST = 4
EXIT_DATA = 5

DENOISER_FILES = {"semantic": "semantic.ckpt",
                  "forward": "transition_forward.ckpt",
                  "backward": "transition_backward.ckpt"}


class ConfigError(ValueError):
    pass


class MissingArtifactError(FileNotFoundError):
    pass


# -- config handling -----------------------------------------------------------

SCHEMAS: dict[str, dict[str, tuple]] = {
    "synth-data": {
        "out": (str, None), "seed": (int, 1234),
        "streams_train": (int, 2000), "streams_test": (int, 500),
        "fps": (float, 24.0), "n_min": (int, 24), "n_max": (int, 96),
        "transition_window": (int, 12),
    },
    "train-pae": {
        "corpus": (str, None), "out": (str, None),
        "steps": (int, 2500), "batch": (int, 32), "lr": (float, 1e-3),
        "seed": (int, 0), "max_items": (int, 0),
        "q": (int, 32), "d_model": (int, 64), "n_layers": (int, 2),
        "n_heads": (int, 4), "d_ff": (int, 128), "pe_dim": (int, 32),
        "emphasis": (float, 15.0), "init_seed": (int, 1),
    },
    "train-diffusion": {
        "corpus": (str, None), "pae": (str, None), "out": (str, None),
        "steps": (int, 1200), "batch": (int, 64), "lr": (float, 1e-3),
        "seed": (int, 0), "k_train": (int, 1000), "k_infer": (int, 100),
        "n_tok": (int, 48), "d_text": (int, 32), "d_model": (int, 64),
        "n_layers": (int, 2), "n_heads": (int, 4), "d_ff": (int, 128),
        "init_seed": (int, 2),
    },
    "compose": {
        "pae": (str, None), "denoisers": (str, None), "out": (str, None),
        "text_p": (str, None), "text_s": (str, None),
        "n_p": (int, 48), "n_s": (int, 48), "seed": (int, 0),
    },
    "longgen": {
        "pae": (str, None), "denoisers": (str, None), "out": (str, None),
        "request": (str, None),
    },
    "inbetween": {
        "pae": (str, None), "denoisers": (str, None), "out": (str, None),
        "x_p": (str, None), "x_s": (str, None), "n_i": (int, 24),
        "text": (str, ""), "seed": (int, 0),
    },
    "eval": {
        "corpus": (str, None), "pae": (str, None), "denoisers": (str, None),
        "out": (str, None), "n_eval": (int, 50), "gap": (int, 24),
        "seed": (int, 0),
    },
    "export": {
        "input": (str, None), "out": (str, None),
    },
}

REQUIRED = {
    "synth-data": ["out"],
    "train-pae": ["corpus", "out"],
    "train-diffusion": ["corpus", "pae", "out"],
    "compose": ["pae", "denoisers", "out", "text_p", "text_s"],
    "longgen": ["pae", "denoisers", "out", "request"],
    "inbetween": ["pae", "denoisers", "out", "x_p", "x_s"],
    "eval": ["corpus", "pae", "denoisers", "out"],
    "export": ["input", "out"],
}


def parse_config(command: str, config_path: str | None,
                 overrides: list[str]) -> dict:
    schema = SCHEMAS[command]
    values = {k: default for k, (_, default) in schema.items()}

    def apply(key: str, raw: str, origin: str):
        if key not in schema:
            raise ConfigError(f"unknown key '{key}' for {command} ({origin})")
        typ = schema[key][0]
        try:
            values[key] = typ(raw)
        except ValueError as e:
            raise ConfigError(f"bad value for '{key}': {raw!r} ({origin})") from e

    if config_path:
        if not os.path.exists(config_path):
            raise MissingArtifactError(f"missing config file: {config_path}")
        with open(config_path) as f:
            for ln, line in enumerate(f, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{config_path}:{ln}: expected key = value")
                key, _, raw = line.partition("=")
                apply(key.strip(), raw.strip(), f"{config_path}:{ln}")
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override '{item}' is not key=value")
        key, _, raw = item.partition("=")
        apply(key.strip(), raw.strip(), "command line")
    missing = [k for k in REQUIRED[command] if values.get(k) in (None, "")]
    if missing:
        raise ConfigError(f"{command} needs: {', '.join(missing)}")
    return values


def write_resolved_config(command: str, cfg: dict, out_path: str) -> None:
    """Drop `<command>.config.txt` next to the command's outputs."""
    if os.path.isdir(out_path):
        target = os.path.join(out_path, f"{command}.config.txt")
    else:
        target = out_path + ".config.txt"
    lines = [f"{k} = {cfg[k]}" for k in sorted(cfg)]
    with open(target, "w") as f:
        f.write("\n".join(lines) + "\n")


# -- artifact loading ------------------------------------------------------------


def _load_checkpoint(path: str) -> Checkpoint:
    if not os.path.exists(path):
        raise MissingArtifactError(f"missing checkpoint: {path}")
    return load_checkpoint(path)


def load_corpus(path: str) -> Corpus:
    if not os.path.isdir(path) or not os.path.exists(os.path.join(path, "manifest.json")):
        raise MissingArtifactError(f"missing corpus: {path}")
    return Corpus(path)


def load_stack(pae_path: str, denoiser_dir: str) -> comp.ComposerStack:
    pae = PhaseAutoencoder.from_checkpoint(_load_checkpoint(pae_path))
    models = {}
    for tag, fname in DENOISER_FILES.items():
        ck = _load_checkpoint(os.path.join(denoiser_dir, fname))
        if tag == "semantic":
            models[tag] = SemanticDenoiser.from_checkpoint(ck)
        else:
            models[tag] = TransitionDenoiser.from_checkpoint(ck)
    sch = models["semantic"].schedule_cfg
    schedule = make_schedule(sch["k_train"], sch["k_infer"],
                             sch["beta_start"], sch["beta_end"])
    return comp.ComposerStack(pae, models["semantic"], models["forward"],
                              models["backward"], schedule)


def pae_training_items(corpus: Corpus, split: str = "train",
                       max_items: int = 0) -> list[TrainItem]:
    """Deduplicated (X_p, X_t, X_s) segments with their decode anchors."""
    items: list[TrainItem] = []
    seen: set[tuple] = set()
    for rec in corpus.pairs[split]:
        x_p, x_t, x_s = corpus.pair_segments(rec)
        entries = [
            (rec.stream, rec.p_start, rec.boundary, rec.n_p // 2, x_p),
            (rec.stream, rec.p_start + rec.n_p // 2, rec.boundary + rec.n_s // 2,
             rec.n_p - rec.n_p // 2, x_t),
            (rec.stream, rec.boundary, rec.s_end, rec.n_s // 2, x_s),
        ]
        for stream, start, end, anchor, seg in entries:
            key = (stream, start, end, anchor)
            if key not in seen:
                seen.add(key)
                items.append(TrainItem(frames=seg.frames, anchor=anchor))
    if max_items and len(items) > max_items:
        items = items[:max_items]
    return items


def latent_pair_arrays(corpus: Corpus, pae: PhaseAutoencoder, split: str):
    """Normalized (P_p, P_t, P_s) latents and the pair token lists."""
    recs = corpus.pairs[split]
    frames, anchors = [], []
    for rec in recs:
        x_p, x_t, x_s = corpus.pair_segments(rec)
        frames.extend([x_p.frames, x_t.frames, x_s.frames])
    flats = []
    chunk = 192
    for start in range(0, len(frames), chunk):
        flats.append(pae.encode_batch(frames[start:start + chunk]))
    flat = pae.normalize_latent(np.concatenate(flats, axis=0))
    p = flat[0::3]
    t = flat[1::3]
    s = flat[2::3]
    p_tokens = [[rec.p_label] for rec in recs]
    s_tokens = [[rec.s_label] for rec in recs]
    return p, t, s, p_tokens, s_tokens


# -- commands --------------------------------------------------------------------


def cmd_synth_data(cfg: dict) -> int:
    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    synth = SynthConfig(fps=cfg["fps"], n_min=cfg["n_min"], n_max=cfg["n_max"],
                        transition_window=cfg["transition_window"])
    manifest = build_corpus(out, CorpusConfig(
        synth=synth, n_streams_train=cfg["streams_train"],
        n_streams_test=cfg["streams_test"], seed=cfg["seed"]))
    write_resolved_config("synth-data", cfg, out)
    print(f"corpus written to {out}: {manifest['counts']}")
    return EXIT_OK


def _write_loss_log(path: str, log: list[tuple[int, float]]) -> None:
    with open(path, "w") as f:
        f.write("step\tloss\n")
        for step, loss in log:
            f.write(f"{step}\t{loss:.17g}\n")


def cmd_train_pae(cfg: dict) -> int:
    corpus = load_corpus(cfg["corpus"])
    model_cfg = AutoencoderConfig(
        q=cfg["q"], d_model=cfg["d_model"], n_layers=cfg["n_layers"],
        n_heads=cfg["n_heads"], d_ff=cfg["d_ff"], pe_dim=cfg["pe_dim"],
        emphasis=cfg["emphasis"], init_seed=cfg["init_seed"],
        n_min=corpus.manifest["n_min"], n_max=corpus.manifest["n_max"],
        fps=corpus.fps)
    items = pae_training_items(corpus, "train", cfg["max_items"])
    model = PhaseAutoencoder(model_cfg)
    model, log = train_autoencoder(items, model, PAETrainConfig(
        steps=cfg["steps"], batch_size=cfg["batch"], lr=cfg["lr"],
        seed=cfg["seed"]))
    save_checkpoint(cfg["out"], model.to_checkpoint())
    _write_loss_log(cfg["out"] + ".loss.tsv", log)
    write_resolved_config("train-pae", cfg, cfg["out"])
    print(f"autoencoder checkpoint written to {cfg['out']} "
          f"(final loss {log[-1][1]:.5f})")
    return EXIT_OK


def cmd_train_diffusion(cfg: dict) -> int:
    corpus = load_corpus(cfg["corpus"])
    pae = PhaseAutoencoder.from_checkpoint(_load_checkpoint(cfg["pae"]))
    os.makedirs(cfg["out"], exist_ok=True)
    schedule = make_schedule(cfg["k_train"], cfg["k_infer"])
    digest = arrays_digest(pae.stats)
    den_cfg = DenoiserConfig(q=pae.config.q, d_model=cfg["d_model"],
                             n_layers=cfg["n_layers"], n_heads=cfg["n_heads"],
                             d_ff=cfg["d_ff"], n_tok=cfg["n_tok"],
                             d_text=cfg["d_text"], init_seed=cfg["init_seed"])
    p, t, s, p_tok, s_tok = latent_pair_arrays(corpus, pae, "train")
    vocab = list(corpus.manifest["vocabulary"])
    train_cfg = DenoiserTrainConfig(steps=cfg["steps"], batch_size=cfg["batch"],
                                    lr=cfg["lr"], seed=cfg["seed"])

    spdm = SemanticDenoiser(den_cfg, schedule.config(), pae.stats, digest, vocab)
    hot = spdm.multihot(p_tok + s_tok)
    log = train_denoiser(spdm, np.concatenate([p, s]), hot, schedule, train_cfg)
    save_checkpoint(os.path.join(cfg["out"], DENOISER_FILES["semantic"]),
                    spdm.to_checkpoint())
    _write_loss_log(os.path.join(cfg["out"], "semantic.loss.tsv"), log)

    tpdm_f = TransitionDenoiser(den_cfg, schedule.config(), pae.stats, digest,
                                "forward")
    log = train_denoiser(tpdm_f, np.concatenate([t, s]),
                         np.concatenate([p, t]), schedule, train_cfg)
    save_checkpoint(os.path.join(cfg["out"], DENOISER_FILES["forward"]),
                    tpdm_f.to_checkpoint())
    _write_loss_log(os.path.join(cfg["out"], "transition_forward.loss.tsv"), log)

    tpdm_b = TransitionDenoiser(den_cfg, schedule.config(), pae.stats, digest,
                                "backward")
    log = train_denoiser(tpdm_b, np.concatenate([p, t]),
                         np.concatenate([t, s]), schedule, train_cfg)
    save_checkpoint(os.path.join(cfg["out"], DENOISER_FILES["backward"]),
                    tpdm_b.to_checkpoint())
    _write_loss_log(os.path.join(cfg["out"], "transition_backward.loss.tsv"), log)

    write_resolved_config("train-diffusion", cfg, cfg["out"])
    print(f"denoiser checkpoints written to {cfg['out']}")
    return EXIT_OK


def _tokens(text: str) -> list[str]:
    return [t for t in text.replace(",", " ").split() if t]


def cmd_compose(cfg: dict) -> int:
    stack = load_stack(cfg["pae"], cfg["denoisers"])
    os.makedirs(cfg["out"], exist_ok=True)
    x_p, x_t, x_s, seq, out = comp.compose_pair(
        stack, _tokens(cfg["text_p"]), _tokens(cfg["text_s"]),
        cfg["n_p"], cfg["n_s"], cfg["seed"])
    save_motion(os.path.join(cfg["out"], "composed.mtn"), seq)
    for name, part in (("part_p", x_p), ("part_t", x_t), ("part_s", x_s)):
        save_motion(os.path.join(cfg["out"], name + ".mtn"), part)
    with open(os.path.join(cfg["out"], "provenance.txt"), "w") as f:
        f.write(comp.provenance_table(out.chain, out.plan))
    write_resolved_config("compose", cfg, cfg["out"])
    print(f"composed {seq.n} frames into {cfg['out']}")
    return EXIT_OK


def cmd_longgen(cfg: dict) -> int:
    stack = load_stack(cfg["pae"], cfg["denoisers"])
    if not os.path.exists(cfg["request"]):
        raise MissingArtifactError(f"missing chain request: {cfg['request']}")
    with open(cfg["request"]) as f:
        spec = comp.loads_chain_spec(f.read())
    os.makedirs(cfg["out"], exist_ok=True)
    out = comp.compose_long(stack, spec)
    save_motion(os.path.join(cfg["out"], "longgen.mtn"), out.sequence)
    with open(os.path.join(cfg["out"], "provenance.txt"), "w") as f:
        f.write(comp.provenance_table(out.chain, out.plan))
    write_resolved_config("longgen", cfg, cfg["out"])
    print(f"generated {out.sequence.n} frames over {len(spec.items)} segments")
    return EXIT_OK


def cmd_inbetween(cfg: dict) -> int:
    stack = load_stack(cfg["pae"], cfg["denoisers"])
    for key in ("x_p", "x_s"):
        if not os.path.exists(cfg[key]):
            raise MissingArtifactError(f"missing motion file: {cfg[key]}")
    x_p = load_motion(cfg["x_p"])
    x_s = load_motion(cfg["x_s"])
    os.makedirs(cfg["out"], exist_ok=True)
    tokens = _tokens(cfg["text"]) or None
    out = comp.inbetween(stack, x_p, x_s, cfg["n_i"], tokens, cfg["seed"])
    save_motion(os.path.join(cfg["out"], "inbetween.mtn"), out.sequence)
    with open(os.path.join(cfg["out"], "provenance.txt"), "w") as f:
        f.write(comp.provenance_table(out.chain, out.plan))
    write_resolved_config("inbetween", cfg, cfg["out"])
    mode = "conditional" if tokens else "unconditional"
    print(f"{mode} inbetweening wrote {out.sequence.n} frames")
    return EXIT_OK


def evaluation_windows(corpus: Corpus, gap: int, n_min: int, n_max: int,
                       n_eval: int, seed: int):
    """Held-out gap tasks: (x_p context, true gap frames, x_s context)."""
    out = []
    recs = corpus.pairs["test"]
    order = sorted(range(len(recs)),
                   key=lambda i: derive_seed(seed, "eval-order", i))
    for i in order:
        rec = recs[i]
        stream = corpus.stream(rec.stream)
        g_start = rec.boundary - gap // 2
        g_end = g_start + gap
        p_start = max(0, g_start - n_max)
        s_end = min(stream.n, g_end + n_max)
        if g_start - p_start < n_min or s_end - g_end < n_min:
            continue
        out.append((stream.cut(p_start, g_start), stream.cut(g_start, g_end),
                    stream.cut(g_end, s_end), rec))
        if len(out) >= n_eval:
            break
    return out


def linear_interp_gap(x_p: MotionSegment, x_s: MotionSegment, gap: int) -> np.ndarray:
    """Per-channel linear ramp from the last context frame to the first."""
    a = x_p.frames[-1]
    b = x_s.frames[0]
    steps = np.arange(1, gap + 1) / (gap + 1)
    return a[None, :] + steps[:, None] * (b - a)[None, :]


def cmd_eval(cfg: dict) -> int:
    corpus = load_corpus(cfg["corpus"])
    stack = load_stack(cfg["pae"], cfg["denoisers"])
    os.makedirs(cfg["out"], exist_ok=True)
    n_min, n_max = stack.pae.config.n_min, stack.pae.config.n_max
    tasks = evaluation_windows(corpus, cfg["gap"], n_min, n_max,
                               cfg["n_eval"], cfg["seed"])
    if not tasks:
        raise ValueError("no evaluable gaps in the test split")
    sums = {}
    wins = {"l2_vel": 0, "l2_rot": 0, "npss": 0}
    for x_p, truth, x_s, rec in tasks:
        seq = comp.inbetween(stack, x_p, x_s, truth.n, None, cfg["seed"]).sequence
        ref_frames = np.concatenate([x_p.frames, truth.frames, x_s.frames])
        ref = MotionSegment(ref_frames, corpus.fps, stream_layout(corpus))
        base_frames = ref_frames.copy()
        base_frames[x_p.n:x_p.n + truth.n] = linear_interp_gap(x_p, x_s, truth.n)
        base = MotionSegment(base_frames, corpus.fps, stream_layout(corpus))
        mask = np.zeros(ref.n, dtype=bool)
        mask[x_p.n:x_p.n + truth.n] = True
        for name, cand in (("model", seq), ("interp", base)):
            w_all = EvalWindow(ref, cand, mask, None)
            w_rot = EvalWindow(ref, cand, mask, "rotation")
            gap_seg = MotionSegment(cand.frames[x_p.n:x_p.n + truth.n], corpus.fps,
                                    ref.layout)
            vals = {"l2_vel": l2_vel(w_all), "l2_rot": l2_rot(w_rot),
                    "npss": npss(w_all), "rms_jerk": rms_jerk(gap_seg)}
            for metric, v in vals.items():
                sums.setdefault((metric, name), []).append(v)
        sums.setdefault(("rms_jerk", "reference"), []).append(rms_jerk(truth))
        for metric in wins:
            if sums[(metric, "model")][-1] < sums[(metric, "interp")][-1]:
                wins[metric] += 1
    rows = []
    for metric in ("l2_vel", "l2_rot", "npss", "rms_jerk"):
        for group in ("model", "interp", "reference"):
            if (metric, group) in sums:
                rows.append((metric, group, float(np.mean(sums[(metric, group)]))))
        if metric in wins:
            rows.append((metric, "win_rate_vs_interp", wins[metric] / len(tasks)))
    tsv, txt = format_report(rows)
    with open(os.path.join(cfg["out"], "report.tsv"), "w") as f:
        f.write(tsv)
    with open(os.path.join(cfg["out"], "report.txt"), "w") as f:
        f.write(txt)
    write_resolved_config("eval", cfg, cfg["out"])
    print(txt)
    return EXIT_OK


def stream_layout(corpus: Corpus) -> ChannelLayout:
    return ChannelLayout(groups=tuple(
        ChannelGroup(n, r, s) for n, r, s in corpus.manifest["layout"]))


def cmd_export(cfg: dict) -> int:
    if not os.path.exists(cfg["input"]):
        raise MissingArtifactError(f"missing motion file: {cfg['input']}")
    seg = load_motion(cfg["input"])
    with open(cfg["out"], "w") as f:
        f.write(dumps_positions(seg))
    write_resolved_config("export", cfg, cfg["out"])
    print(f"exported {seg.n} frames of joint positions to {cfg['out']}")
    return EXIT_OK


HANDLERS = {
    "synth-data": cmd_synth_data,
    "train-pae": cmd_train_pae,
    "train-diffusion": cmd_train_diffusion,
    "compose": cmd_compose,
    "longgen": cmd_longgen,
    "inbetween": cmd_inbetween,
    "eval": cmd_eval,
    "export": cmd_export,
}


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="phasemotion",
        description="Compositional motion generation in a phase latent space.")
    parser.add_argument("command", choices=sorted(HANDLERS.keys()))
    parser.add_argument("--config", default=None, help="key=value config file")
    parser.add_argument("overrides", nargs="*", metavar="key=value",
                        help="config overrides (win over the file)")
    args = parser.parse_args(argv)
    try:
        cfg = parse_config(args.command, args.config, args.overrides)
        return HANDLERS[args.command](cfg)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingArtifactError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_MISSING
    except (StackMismatchError, CheckpointError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DIGEST
    except (ValueError, KeyError, RuntimeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
