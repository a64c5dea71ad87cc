"""``bcpredict`` command line: features, annotate, synth, train, grid, eval, embeddings."""
from __future__ import annotations

import argparse
import json
import logging
import shutil
import sys
import wave
from pathlib import Path

from . import analysis, config as cfgmod, corpus, features, training
from .errors import BCPredictError, ConfigError, IoFailure
from .model import Variant, load_checkpoint

log = logging.getLogger("bcpredict")

SLI_VARIANTS = {"sum": Variant.AC_SLI_SUM, "bilinear": Variant.AC_SLI_BILINEAR, "ntn": Variant.AC_SLI_NTN}


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config key (repeatable)")
    p.add_argument("--seed", type=int)
    p.add_argument("--variant", help="AC, AC_S, AC_L, AC_S_L or an AC_SLI_* name")
    p.add_argument("--sli", choices=sorted(SLI_VARIANTS), help="use the AC+SLI variant with this encoder")
    p.add_argument("--frames", type=int, choices=[48, 98, 148, 198])
    p.add_argument("--out", help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bcpredict", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("features", help="audio -> MFCC feature cache")
    _common(p)
    p.add_argument("--audio", nargs="+", required=True, help="WAV files or directories")
    p.add_argument("--cache-dir")

    p = sub.add_parser("annotate", help="transcripts -> manifest + stats")
    _common(p)
    p.add_argument("--transcripts", nargs="+", help="transcript TSV files")
    p.add_argument("--corpus", choices=["swda", "geco"])
    p.add_argument("--lexicon-dir")
    p.add_argument("--audio-dir")

    p = sub.add_parser("synth", help="synthetic corpus (manifest + feature cache)")
    _common(p)
    p.add_argument("--rule", choices=list(corpus.RULES))
    p.add_argument("--n-instances", type=int)

    for name, helptext in (("train", "train one model"), ("grid", "grid search"),
                           ("eval", "evaluate a checkpoint"),
                           ("embeddings", "per-listener sweep, PCA and plots")):
        p = sub.add_parser(name, help=helptext)
        _common(p)
        p.add_argument("--manifest")
        p.add_argument("--cache-dir")
        if name in ("eval", "embeddings"):
            p.add_argument("--checkpoint")
            p.add_argument("--split", choices=["train", "dev", "test"])
        if name == "grid":
            p.add_argument("--grid", action="append", default=[], metavar="KEY=V1,V2",
                           help="grid axis (repeatable); defaults to the full standard ranges")
    return ap


def resolve_config(args) -> cfgmod.CliConfig:
    cfg = cfgmod.load(args.config) if args.config else cfgmod.CliConfig()
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        cfgmod.apply(cfg, *item.split("=", 1))
    for item in getattr(args, "grid", []) or []:
        if "=" not in item:
            raise ConfigError(f"--grid expects KEY=V1,V2, got {item!r}")
        k, v = item.split("=", 1)
        cfgmod.apply(cfg, "grid_" + k, v)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.variant:
        cfg.variant = args.variant
    if args.sli:
        cfg.variant = SLI_VARIANTS[args.sli].value
    if args.frames:
        cfg.n_frames = args.frames
    if args.out:
        cfg.out = args.out
    for flag, key in (("cache_dir", "cache_dir"), ("manifest", "manifest"), ("checkpoint", "checkpoint"),
                      ("corpus", "corpus"), ("lexicon_dir", "lexicon_dir"), ("audio_dir", "audio_dir"),
                      ("split", "split"), ("rule", "synth_rule"), ("n_instances", "synth_n_instances")):
        val = getattr(args, flag, None)
        if val is not None:
            setattr(cfg, key, val)
    if getattr(args, "transcripts", None):
        cfg.transcripts = ",".join(args.transcripts)
    return cfgmod.finalize(cfg)


def _provenance(cfg) -> dict:
    return {"config_hash": cfg.digest(), "seed": cfg.seed}


def _write_text(path: Path, text: str) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def _stamp(cfg) -> str:
    return "# " + " ".join(f"{k}={v}" for k, v in sorted(_provenance(cfg).items())) + "\n"


def _write_meta(path: Path, cfg, **extra) -> None:
    meta = {**_provenance(cfg), **extra}
    _write_text(path.with_name(path.name + ".meta.json"), json.dumps(meta, sort_keys=True, indent=1) + "\n")


def _need(value, what):
    if not value:
        raise ConfigError(f"{what} is required")
    return value


def _load_manifest(cfg):
    path = _need(cfg.manifest, "manifest (--manifest)")
    try:
        return corpus.read_manifest(path)
    except OSError as exc:
        raise IoFailure(f"cannot read manifest {path}: {exc}") from exc


# -- subcommands ---------------------------------------------------------------------

def cmd_features(cfg, args):
    cache_dir = Path(cfg.cache_dir or Path(cfg.out) / "cache")
    wavs = []
    for a in args.audio:
        p = Path(a)
        wavs.extend(sorted(p.glob("*.wav")) if p.is_dir() else [p])
    for wav in wavs:
        try:
            audio = features.read_wav(wav)
        except (OSError, EOFError, ValueError, wave.Error) as exc:
            raise IoFailure(f"cannot read {wav}: {exc}") from exc
        feats = features.mfcc(audio)
        target = features.cache_path(cache_dir, wav)
        features.cache_write(target, feats)
        log.info("%s: %d frames -> %s", wav, len(feats), target)
    _write_meta(cache_dir / "features", cfg, files=[str(w) for w in wavs])
    return 0


def cmd_annotate(cfg, args):
    paths = _need(cfg.transcripts, "transcripts (--transcripts)").split(",")
    utts = []
    for p in paths:
        try:
            utts.extend(corpus.read_transcript(p))
        except OSError as exc:
            raise IoFailure(f"cannot read {p}: {exc}") from exc
    lexicon = (corpus.TokenLexicon.from_dir(cfg.lexicon_dir, cfg.corpus) if cfg.lexicon_dir
               else corpus.TokenLexicon.default(cfg.corpus))
    res = corpus.annotate(utts, lexicon, cfg.corpus, cfg.split_sizes or None, cfg.seed,
                          cfg.negative_offset_ms, cfg.window_ms, cfg.audio_dir)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    corpus.write_manifest(out / "manifest.jsonl", res.instances)
    _write_meta(out / "manifest.jsonl", cfg, skips=res.skips, rejections=len(res.rejections))
    stats = corpus.corpus_stats(res.instances)
    _write_text(out / "stats.csv", _stamp(cfg) + corpus.stats_csv(stats))
    rej = "dialog_id\tchannel\tstart_ms\ttext\n" + "".join(
        f"{u.dialog_id}\t{u.channel}\t{u.start_ms:g}\t{u.text}\n" for u in res.rejections)
    _write_text(out / "rejections.tsv", rej)
    log.info("%d instances, %d rejected, skips %s", len(res.instances), len(res.rejections), res.skips)
    return 0


def cmd_synth(cfg, args):
    sc = corpus.SynthConfig(
        rule=cfg.synth_rule, n_listeners=cfg.synth_n_listeners, n_speakers=cfg.synth_n_speakers,
        n_instances=cfg.synth_n_instances, split_sizes=cfg.synth_split_sizes or None,
        n_frames=cfg.n_frames, noise=cfg.synth_noise,
        instances_per_dialog=cfg.synth_instances_per_dialog, seed=cfg.seed)
    syn = corpus.synth_corpus(sc)
    out = Path(cfg.out)
    cache_dir = Path(cfg.cache_dir or out / "cache")
    for stem in sorted(syn.features):
        features.cache_write(cache_dir / f"{stem}.bcmf", syn.features[stem])
    corpus.write_manifest(out / "manifest.jsonl", syn.instances)
    _write_meta(out / "manifest.jsonl", cfg, rule=sc.rule)
    _write_text(out / "stats.csv", _stamp(cfg) + corpus.stats_csv(corpus.corpus_stats(syn.instances)))
    log.info("%d synthetic instances in %s", len(syn.instances), out)
    return 0


def _default_cache(cfg):
    if cfg.cache_dir:
        return cfg.cache_dir
    return str(Path(cfg.manifest).parent / "cache")


def cmd_train(cfg, args):
    instances = _load_manifest(cfg)
    out = Path(cfg.out)
    model, hist = training.train(cfg.train_config(), instances, _default_cache(cfg), out / "model.ckpt")
    rows = [_stamp(cfg).rstrip("\n"), "epoch,train_loss,dev_accuracy,dev_macro_f1"]
    for e, (l, a, f) in enumerate(zip(hist.train_loss, hist.dev_accuracy, hist.dev_macro_f1)):
        rows.append(f"{e},{l:.6g},{a:.6g},{f:.6g}")
    _write_text(out / "history.csv", "\n".join(rows) + "\n")
    log.info("best epoch %d (%s)", hist.best_epoch, hist.stop_reason)
    return 0


def cmd_grid(cfg, args):
    instances = _load_manifest(cfg)
    grid = dict(cfg.grid) or dict(training.GRID_RANGES)
    out = Path(cfg.out)
    # the default search keeps every value inside the standard ranges
    runs = training.grid_search(grid, instances, _default_cache(cfg), cfg.train_config(), out / "runs",
                                restrict=not cfg.grid)
    _write_text(out / "grid.csv", training.grid_csv(runs, _provenance(cfg), base_dir=out))
    if runs and runs[0].checkpoint:
        shutil.copyfile(runs[0].checkpoint, out / "best.ckpt")
    log.info("%d runs; best dev macro-F1 %.4f", len(runs), runs[0].dev.macro_f1 if runs else float("nan"))
    return 0


def _checkpoint_and_batch(cfg):
    instances = _load_manifest(cfg)
    ckpt = cfg.checkpoint or str(Path(cfg.out) / "model.ckpt")
    try:
        model, _ = load_checkpoint(ckpt)
    except OSError as exc:
        raise IoFailure(f"cannot read checkpoint {ckpt}: {exc}") from exc
    chosen = training.split_instances(instances, cfg.split)
    batch = training.make_batch(model, chosen, _default_cache(cfg))
    return model, batch


def cmd_eval(cfg, args):
    model, batch = _checkpoint_and_batch(cfg)
    rep = analysis.evaluate(model, batch)
    out = Path(cfg.out)
    analysis.emit_reports(rep, out, provenance=_provenance(cfg))
    body = {**rep.as_dict(), **_provenance(cfg), "split": cfg.split}
    _write_text(out / "eval.json", json.dumps(body, sort_keys=True, indent=1) + "\n")
    log.info("accuracy %.4f macro-F1 %.4f", rep.accuracy, rep.macro_f1)
    return 0


def cmd_embeddings(cfg, args):
    model, batch = _checkpoint_and_batch(cfg)
    res = analysis.analyze_listeners(model, batch)
    analysis.emit_reports(res, Path(cfg.out), provenance=_provenance(cfg))
    log.info("listener F1 mean %.4f median %.4f", res.mean, res.median)
    return 0


COMMANDS = {"features": cmd_features, "annotate": cmd_annotate, "synth": cmd_synth,
            "train": cmd_train, "grid": cmd_grid, "eval": cmd_eval, "embeddings": cmd_embeddings}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = resolve_config(args)
        log.info("resolved config (%s):\n%s", cfg.digest(), cfg.resolved_text())
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        _write_text(out / f"{args.command}.config.txt", cfg.resolved_text())
        return COMMANDS[args.command](cfg, args)
    except BCPredictError as exc:
        print(json.dumps({"error": type(exc).__name__, "command": args.command, "message": str(exc)}),
              file=sys.stderr)
        return 2 if isinstance(exc, ConfigError) else 1


if __name__ == "__main__":
    sys.exit(main())
