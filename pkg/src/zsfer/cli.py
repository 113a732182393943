"""Command-line entry point: ``zsfer <subcommand> [flags]``.

Every subcommand resolves its settings as defaults < ``--config`` JSON file <
explicit flags, writes the resolved settings to ``<out>/resolved_config.json``
and logs to ``<out>/run.log``. Exit status is 0 on success, 2 for usage errors
and 1 for failures inside the pipeline.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .errors import ConfigInvalid, ZsferError

log = logging.getLogger("zsfer")

OUT_ENV = "ZSFER_OUT"
DEFAULT_OUT = "zsfer-out"

# (flag, default, type, help); type "bool" gives --flag/--no-flag
_ENCODER = [
    ("dim", 32, int, "joint embedding dimension D"),
    ("heads", 2, int, "attention heads in the temporal encoder"),
    ("layers", 2, int, "temporal encoder layers"),
    ("max_frames", 32, int, "longest clip the positional table covers"),
]
_TRAIN = [
    ("head_lr", 1e-3, float, "learning rate of the temporal encoder and temperature"),
    ("backbone_lr", 1e-6, float, "learning rate of the frame and text encoders"),
    ("epochs", 30, int, "training epochs"),
    ("batch_size", 64, int, "contrastive batch size"),
    ("clip_len", 32, int, "frames per clip after downsampling"),
    ("downsample", 4, int, "temporal downsampling factor"),
    ("jitter", 0.0, float, "std of Gaussian feature jitter during training"),
    ("checkpoint_every", 0, int, "save a checkpoint every N epochs (0: only the final one)"),
]
_EVAL = [
    ("clip_len", 32, int, "frames per clip after downsampling"),
    ("downsample", 4, int, "temporal downsampling factor"),
]
_REGISTRY = [
    ("registry", None, str, "class-description TSV (default: bundled descriptions)"),
    ("subset", "custom", str, "class subset: eleven, seven or custom (all rows)"),
]
_PROBE = [
    ("hidden", 0, int, "probe hidden width (0: the embedding dimension)"),
    ("probe_lr", 0.05, float, "probe learning rate"),
    ("probe_epochs", 300, int, "probe training epochs"),
    ("probe_batch_size", 32, int, "probe mini-batch size"),
    ("clips_per_video", 4, int, "training crops per video per epoch"),
    ("temporal_crop", True, "bool", "random temporal crops during probe training"),
    ("clip_len", 16, int, "frames per clip after downsampling"),
    ("downsample", 4, int, "temporal downsampling factor"),
]


def _with(*groups):
    seen, out = set(), []
    for g in groups:
        for p in g:
            if p[0] not in seen:
                seen.add(p[0])
                out.append(p)
    return out


COMMANDS = {
    "gen-synth": ("write a synthetic corpus: manifest, frame files, ground-truth key", [
        ("kind", "default", str, "corpus family: default, temporal_pairs or planted_probe"),
        ("n_classes", 7, int, "classes for the default family"),
        ("n_train", 2000, int, "training samples"),
        ("n_test", 700, int, "test samples"),
        ("frames", 64, int, "raw frames per sample"),
        ("feature_dim", 32, int, "frame feature dimension F"),
        ("noise", 0.1, float, "per-frame Gaussian noise std"),
        ("temporal_patterns", True, "bool", "class-dependent temporal envelopes"),
        ("compounds", None, str, "compound-spec TSV, or 'pairs' for every pair of classes"),
        ("n_compound_test", 0, int, "compound test samples"),
        ("n_patients", 0, int, "patients to assign samples to (0: none)"),
        ("checkpoint", None, str, "frozen model for the planted_probe family"),
        ("clip_len", 16, int, "planted_probe: frames per reference clip after downsampling"),
        ("downsample", 4, int, "planted_probe: temporal downsampling factor"),
    ]),
    "train": ("contrastive training on a manifest's video-caption pairs", _with(
        [("manifest", None, str, "manifest JSONL"),
         ("split", "train", str, "records whose split equals this are used ('' for all)"),
         ("init", None, str, "start from this checkpoint instead of a fresh init"),
         ("resume", None, str, "continue an interrupted run from this checkpoint")],
        _TRAIN, _ENCODER, _REGISTRY)),
    "eval-zeroshot": ("zero-shot classification report", _with(
        [("checkpoint", None, str, "trained checkpoint"),
         ("manifest", None, str, "manifest JSONL"),
         ("split", "test", str, "records whose split equals this are scored ('' for all)"),
         ("mode", "temporal", str, "video mode: temporal, middle_frame or frame_ensemble"),
         ("prompt_mode", "class_description", str, "class_description or prompt_ensemble"),
         ("label_key", "label", str, "record field holding the class")],
        _REGISTRY, _EVAL)),
    "eval-compound": ("compound-class zero-shot report", _with(
        [("checkpoint", None, str, "trained checkpoint"),
         ("manifest", None, str, "manifest JSONL"),
         ("split", "compound_test", str, "records whose split equals this are scored"),
         ("compounds", None, str, "compound-spec TSV (default: bundled example list)"),
         ("method", "compose", str, "compose (averaged components) or concat (joined descriptions)"),
         ("mode", "temporal", str, "video mode")],
        _REGISTRY, _EVAL)),
    "eval-loco": ("leave-one-class-out zero-shot evaluation, retraining per fold", _with(
        [("manifest", None, str, "manifest JSONL"),
         ("mode", "temporal", str, "video mode")],
        _TRAIN, _ENCODER, _REGISTRY)),
    "probe-train": ("fit the regression probe on a frozen encoder", _with(
        [("checkpoint", None, str, "frozen checkpoint"),
         ("manifest", None, str, "manifest JSONL with symptoms and patients"),
         ("scaling", None, str, "target scaling JSON (names, ranges, totals)")],
        _PROBE)),
    "probe-eval": ("leave-one-patient-out probe evaluation", _with(
        [("checkpoint", None, str, "frozen checkpoint"),
         ("manifest", None, str, "manifest JSONL with symptoms and patients"),
         ("scaling", None, str, "target scaling JSON (names, ranges, totals)")],
        _PROBE)),
    "export-embeddings": ("project video or class embeddings with PCA and write CSV", _with(
        [("checkpoint", None, str, "trained checkpoint"),
         ("manifest", None, str, "manifest JSONL (video embeddings)"),
         ("split", "", str, "records whose split equals this are exported ('' for all)"),
         ("what", "videos", str, "videos or classes"),
         ("mode", "temporal", str, "video mode"),
         ("dims", 3, int, "output dimensions")],
        _REGISTRY, _EVAL)),
}


# ---------------------------------------------------------------- parsing


class _Help(argparse.ArgumentDefaultsHelpFormatter):
    pass


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="zsfer", description=__doc__.splitlines()[0],
                                     formatter_class=_Help)
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    for name, (text, params) in COMMANDS.items():
        p = sub.add_parser(name, help=text, description=text, formatter_class=_Help)
        p.add_argument("--config", default=argparse.SUPPRESS,
                       help="JSON file of settings (default: none)")
        p.add_argument("--out", default=argparse.SUPPRESS,
                       help=f"output directory (default: ${OUT_ENV} or {DEFAULT_OUT})")
        p.add_argument("--seed", type=int, default=argparse.SUPPRESS,
                       help="random seed (default: 0)")
        p.add_argument("--threads", type=int, default=argparse.SUPPRESS,
                       help="worker threads (default: 1)")
        p.add_argument("--log-level", default="INFO", help="logging level")
        for key, default, typ, text in params:
            flag = "--" + key.replace("_", "-")
            shown = f"{text} (default: {default})"
            if typ == "bool":
                p.add_argument(flag, dest=key, action=argparse.BooleanOptionalAction,
                               default=argparse.SUPPRESS, help=shown)
            else:
                p.add_argument(flag, dest=key, type=typ, default=argparse.SUPPRESS, help=shown)
    return parser


def resolve(command: str, args: argparse.Namespace) -> dict:
    """Defaults, then the config file, then explicit flags."""
    params = COMMANDS[command][1]
    cfg = {"seed": 0, "threads": 1}
    cfg.update({k: d for k, d, _, _ in params})
    path = getattr(args, "config", None)
    if path:
        try:
            loaded = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigInvalid(f"cannot read config {path}: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigInvalid(f"{path}: expected a JSON object")
        unknown = sorted(set(loaded) - set(cfg))
        if unknown:
            raise ConfigInvalid(f"{path}: unknown settings for {command}: {unknown}")
        cfg.update(loaded)
    for key in cfg:
        if hasattr(args, key):
            cfg[key] = getattr(args, key)
    if cfg["threads"] < 1:
        raise ConfigInvalid("--threads must be >= 1")
    return cfg


def _need(cfg, *keys):
    missing = [k for k in keys if not cfg.get(k)]
    if missing:
        raise ConfigInvalid("missing required settings: " +
                            ", ".join("--" + k.replace("_", "-") for k in missing))


def _checkpoint_path(p) -> Path:
    p = Path(p)
    if not p.exists() and Path(str(p) + ".ckpt").exists():
        return Path(str(p) + ".ckpt")
    return p


def _write(path: Path, text: str) -> None:
    path.write_text(text)
    log.info("wrote %s", path)


def _split(manifest, split):
    return manifest.where(split=split) if split else manifest


def _registry(cfg, state=None, tokenizer=None, strict=True):
    from .prompts import build_class_embedding_set, load_registry

    reg = load_registry(cfg["registry"], cfg["subset"])
    if state is None:
        return reg
    return build_class_embedding_set(reg, state, tokenizer, strict=strict)


def _load_model(cfg):
    from .data.checkpoint import load_checkpoint

    ck = load_checkpoint(_checkpoint_path(cfg["checkpoint"]))
    if ck.tokenizer is None:
        raise ConfigInvalid(f"{cfg['checkpoint']} carries no tokenizer")
    return ck


# ---------------------------------------------------------------- subcommands


def cmd_gen_synth(cfg, out: Path) -> None:
    from .data.manifest import save_manifest
    from .data.synthetic import (
        SyntheticCorpusConfig,
        default_classes,
        generate_synthetic_corpus,
        temporal_pair_classes,
    )

    if cfg["kind"] == "planted_probe":
        from .probe import planted_response_corpus

        _need(cfg, "checkpoint")
        state = _load_model(cfg).state
        man, scaling, key = planted_response_corpus(
            state, n_patients=cfg["n_patients"] or 20, n_frames=cfg["frames"],
            noise=cfg["noise"], clip_len=cfg["clip_len"], downsample=cfg["downsample"],
            seed=cfg["seed"])
        save_manifest(man, out / "manifest.jsonl")
        _write(out / "scaling.json", json.dumps(scaling.to_dict(), indent=1) + "\n")
        _write(out / "key.json", json.dumps({k: np.asarray(v).tolist() for k, v in key.items()},
                                            indent=1) + "\n")
        return
    if cfg["kind"] == "default":
        classes = default_classes(cfg["n_classes"], temporal_patterns=cfg["temporal_patterns"])
    elif cfg["kind"] == "temporal_pairs":
        classes = temporal_pair_classes()
    else:
        raise ConfigInvalid(f"unknown corpus kind {cfg['kind']!r}")
    compounds = []
    if cfg["compounds"] == "pairs":
        compounds = [(f"{a.name}_{b.name}", [a.name, b.name])
                     for i, a in enumerate(classes) for b in classes[i + 1:]]
    elif cfg["compounds"]:
        from .prompts import load_compound_specs

        compounds = load_compound_specs(cfg["compounds"])
    sc = SyntheticCorpusConfig(
        classes=classes, n_train=cfg["n_train"], n_test=cfg["n_test"],
        frames_per_sample=cfg["frames"], feature_dim=cfg["feature_dim"], noise=cfg["noise"],
        temporal_patterns=cfg["temporal_patterns"], compounds=compounds,
        n_compound_test=cfg["n_compound_test"], n_patients=cfg["n_patients"], seed=cfg["seed"])
    corpus = generate_synthetic_corpus(sc)
    save_manifest(corpus.manifest, out / "manifest.jsonl")
    _write(out / "key.json", corpus.key_json() + "\n")
    _write(out / "classes.tsv", corpus.registry_text())
    if compounds:
        _write(out / "compounds.tsv", corpus.compound_text())


def _train_config(cfg):
    from .trainer import TrainConfig

    return TrainConfig(head_lr=cfg["head_lr"], backbone_lr=cfg["backbone_lr"],
                       epochs=cfg["epochs"], batch_size=cfg["batch_size"], seed=cfg["seed"],
                       max_clip_len=cfg["clip_len"], temporal_downsample=cfg["downsample"],
                       jitter=cfg["jitter"], checkpoint_every=cfg["checkpoint_every"])


def _fresh_model(cfg, manifest, registry):
    """A new encoder plus a tokenizer over captions, descriptions and neutral prompts."""
    from .encoders import EncoderConfig, init_state
    from .prompts import load_neutral_prompts
    from .tokenizer import Tokenizer

    texts = [r.caption for r in manifest if r.caption]
    texts += [e.description for e in registry.entries] + load_neutral_prompts()
    tok = Tokenizer.from_texts(texts)
    enc = EncoderConfig(feature_dim=manifest.feature_dim, vocab_size=tok.vocab_size,
                        dim=cfg["dim"], heads=cfg["heads"], layers=cfg["layers"],
                        max_frames=max(cfg["max_frames"], cfg["clip_len"]))
    return init_state(enc, seed=cfg["seed"]), tok


def cmd_train(cfg, out: Path) -> None:
    from .data.checkpoint import load_checkpoint, save_checkpoint
    from .data.manifest import load_manifest
    from .trainer import train, write_loss_csv

    _need(cfg, "manifest")
    manifest = load_manifest(cfg["manifest"])
    tc = _train_config(cfg)
    resume = None
    if cfg["resume"] or cfg["init"]:
        ck = load_checkpoint(_checkpoint_path(cfg["resume"] or cfg["init"]))
        state, tok = ck.state, ck.tokenizer
        if cfg["resume"]:
            if ck.progress is None:
                raise ConfigInvalid(f"{cfg['resume']} holds no training progress to resume")
            resume = ck.progress
    else:
        state, tok = _fresh_model(cfg, manifest, _registry(cfg))
    result = train(state, _split(manifest, cfg["split"]), tc, tok, checkpoint_dir=out,
                   resume=resume)
    save_checkpoint(result.state, out / "final.ckpt", progress=result, train_config=tc,
                    tokenizer=tok)
    write_loss_csv(result.steps, out / "losses.csv")
    log.info("final mean epoch loss %.6f", result.final_loss)


def _report(out: Path, report) -> None:
    _write(out / "report.csv", report.to_csv())
    _write(out / "report.txt", report.to_text() + "\n")
    print(report.to_text())


def cmd_eval_zeroshot(cfg, out: Path) -> None:
    from .data.manifest import load_manifest
    from .evaluation import zero_shot_eval

    _need(cfg, "checkpoint", "manifest")
    ck = _load_model(cfg)
    reg = _registry(cfg, ck.state, ck.tokenizer)
    manifest = _split(load_manifest(cfg["manifest"]), cfg["split"])
    report = zero_shot_eval(ck.state, reg, manifest, cfg["mode"], cfg["prompt_mode"],
                            tokenizer=ck.tokenizer, label_key=cfg["label_key"],
                            clip_len=cfg["clip_len"], downsample=cfg["downsample"])
    _report(out, report)


def cmd_eval_compound(cfg, out: Path) -> None:
    from .data.manifest import load_manifest
    from .evaluation import zero_shot_eval
    from .prompts import concat_prompt_baseline, extend_with_compounds, load_compound_specs

    _need(cfg, "checkpoint", "manifest")
    ck = _load_model(cfg)
    base = _registry(cfg, ck.state, ck.tokenizer)
    specs = load_compound_specs(cfg["compounds"])
    if cfg["method"] == "compose":
        reg = extend_with_compounds(base, specs)
    elif cfg["method"] == "concat":
        reg = concat_prompt_baseline(base, specs, ck.state, ck.tokenizer)
    else:
        raise ConfigInvalid(f"unknown compound method {cfg['method']!r}")
    manifest = _split(load_manifest(cfg["manifest"]), cfg["split"])
    report = zero_shot_eval(ck.state, reg, manifest, cfg["mode"], label_key="compound_label",
                            classes=[n for n, _ in specs], clip_len=cfg["clip_len"],
                            downsample=cfg["downsample"])
    _report(out, report)


def cmd_eval_loco(cfg, out: Path) -> None:
    from .data.manifest import load_manifest
    from .evaluation import loco_eval

    _need(cfg, "manifest")
    manifest = load_manifest(cfg["manifest"])
    reg = _registry(cfg)
    state, tok = _fresh_model(cfg, manifest, reg)
    from .prompts import build_class_embedding_set

    report, folds = loco_eval(state, manifest.where(split="train"), manifest.where(split="test"),
                              lambda s: build_class_embedding_set(reg, s, tok),
                              _train_config(cfg), tok, cfg["mode"])
    with open(out / "folds.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["held_out", "n_train", "n_test", "final_loss"])
        w.writerows([h, a, b, repr(l)] for h, a, b, l in folds)
    _report(out, report)


def _probe_setup(cfg):
    from .data.manifest import load_manifest
    from .probe import ProbeConfig, TargetScaling

    _need(cfg, "checkpoint", "manifest", "scaling")
    ck = _load_model(cfg)
    scaling = TargetScaling.from_dict(json.loads(Path(cfg["scaling"]).read_text()))
    pc = ProbeConfig(hidden=cfg["hidden"] or None, outputs=len(scaling.names),
                     lr=cfg["probe_lr"], epochs=cfg["probe_epochs"],
                     batch_size=cfg["probe_batch_size"], clip_len=cfg["clip_len"],
                     downsample=cfg["downsample"], clips_per_video=cfg["clips_per_video"],
                     temporal_crop=cfg["temporal_crop"], seed=cfg["seed"])
    return ck.state, load_manifest(cfg["manifest"]), pc, scaling


def cmd_probe_train(cfg, out: Path) -> None:
    from .probe import train_probe

    state, manifest, pc, scaling = _probe_setup(cfg)
    before = state.backbone_fingerprint()
    res = train_probe(state, manifest, pc, scaling)
    if state.backbone_fingerprint() != before:
        raise ZsferError("backbone parameters changed during probe training")
    np.savez(out / "probe.npz", **res.params)
    with open(out / "probe_losses.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "loss"])
        w.writerows([i, repr(l)] for i, l in enumerate(res.losses))
    log.info("final probe loss %.6f", res.losses[-1] if res.losses else float("nan"))


def cmd_probe_eval(cfg, out: Path) -> None:
    from .probe import evaluate_lopo

    state, manifest, pc, scaling = _probe_setup(cfg)
    res = evaluate_lopo(state, manifest, pc, scaling, threads=cfg["threads"])
    with open(out / "predictions.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id"] + [f"{n}_{kind}" for n in scaling.names for kind in ("true", "pred")])
        for vid, pred in res.predictions.items():
            truth = res.truth[vid]
            w.writerow([vid] + [f"{v:.10g}" for pair in zip(truth, pred) for v in pair])
    _report(out, res.report)


def cmd_export_embeddings(cfg, out: Path) -> None:
    from .data.clips import sample_clip
    from .data.manifest import load_manifest
    from .evaluation import pca_project, video_embeddings, write_projection_csv

    _need(cfg, "checkpoint")
    ck = _load_model(cfg)
    if cfg["what"] == "classes":
        reg = _registry(cfg, ck.state, ck.tokenizer)
        ids, labels, emb = reg.names, reg.names, reg.embeddings
    elif cfg["what"] == "videos":
        _need(cfg, "manifest")
        manifest = _split(load_manifest(cfg["manifest"]), cfg["split"])
        clips = np.stack([sample_clip(r.load_frames(), "eval", cfg["clip_len"], cfg["downsample"])
                          for r in manifest])
        emb = video_embeddings(ck.state, clips, cfg["mode"])
        ids = manifest.ids()
        labels = [r.label or r.compound_label for r in manifest]
    else:
        raise ConfigInvalid(f"unknown export target {cfg['what']!r}")
    res = pca_project(emb, cfg["dims"], seed=cfg["seed"])
    write_projection_csv(out / "embeddings_pca.csv", ids, labels, res.points)
    _write(out / "pca.txt", "explained variance ratio: " +
           " ".join(f"{r:.6f}" for r in res.explained_variance_ratio) + "\n")


HANDLERS = {
    "gen-synth": cmd_gen_synth,
    "train": cmd_train,
    "eval-zeroshot": cmd_eval_zeroshot,
    "eval-compound": cmd_eval_compound,
    "eval-loco": cmd_eval_loco,
    "probe-train": cmd_probe_train,
    "probe-eval": cmd_probe_eval,
    "export-embeddings": cmd_export_embeddings,
}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors, 0 on --help
        return int(exc.code or 0)
    out = Path(getattr(args, "out", None) or os.environ.get(OUT_ENV) or DEFAULT_OUT)
    root = logging.getLogger("zsfer")
    handlers = []
    try:
        cfg = resolve(args.command, args)
        out.mkdir(parents=True, exist_ok=True)
        handlers = [logging.FileHandler(out / "run.log", mode="w"), logging.StreamHandler()]
        for h in handlers:
            h.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
            root.addHandler(h)
        root.setLevel(args.log_level.upper())
        (out / "resolved_config.json").write_text(
            json.dumps({"command": args.command, **cfg}, indent=1, sort_keys=True) + "\n")
        HANDLERS[args.command](cfg, out)
        return 0
    except (ZsferError, ValueError, OSError) as exc:
        print(f"zsfer {args.command}: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    finally:
        for h in handlers:
            root.removeHandler(h)
            h.close()


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
