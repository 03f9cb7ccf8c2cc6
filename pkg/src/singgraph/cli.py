"""Command-line entry point.

Results go to stdout, logs to stderr. Exit codes: 0 success, 1 domain error,
2 usage error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import __version__
from .errors import SingGraphError

log = logging.getLogger("singgraph")

U64_MAX = 2 ** 64 - 1


def _u64(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= v <= U64_MAX:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return v


def _positive(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _out(line: str = "") -> None:
    sys.stdout.write(line + "\n")


def _resolved(args, run_cfg, **inputs) -> None:
    """--dry-run output: the resolved configuration plus the validated inputs."""
    doc = {"command": args.command, "config": run_cfg.to_dict(), "inputs": inputs}
    _out(json.dumps(doc, sort_keys=True, indent=2))


def _config(args):
    from .config import load_config

    return load_config(args.config, args.set or (), args.seed)


# ------------------------------------------------------------------ commands


def cmd_version(args) -> int:
    _out(f"singgraph {__version__}")
    return 0


def cmd_manifest(args) -> int:
    from .manifest import (
        LABELS, SPLITS, Manifest, import_beat_annotation, load_manifest, save_manifest, verify_splits)

    cfg = _config(args)
    if args.action == "synth":
        from .synth import make_corpus, write_corpus

        if args.out is None:
            raise SingGraphError("manifest synth needs --out DIR")
        if args.dry_run:
            _resolved(args, cfg, out=args.out, n_clips=args.n_clips, dur_s=args.dur, val_clips=args.val_clips)
            return 0
        if not 0 <= args.val_clips < args.n_clips:
            raise SingGraphError("--val-clips must leave at least one training clip")
        splits = ["train"] * (args.n_clips - args.val_clips) + ["val"] * args.val_clips
        clips = make_corpus(args.n_clips, args.dur, seed=cfg.train.seed, splits=splits)
        path = write_corpus(clips, args.out, with_embeddings=not args.no_embeddings)
        _out(f"manifest\t{path.name}")
        _out(f"clips\t{len(clips)}")
        return 0

    if args.manifest is None:
        raise SingGraphError(f"manifest {args.action} needs --manifest PATH")
    m = load_manifest(args.manifest)
    if args.action == "merge-beats":
        if args.annotations is None or args.out is None:
            raise SingGraphError("manifest merge-beats needs --annotations DIR and --out PATH")
        ann = Path(args.annotations)
        records, merged = [], 0
        for rec in m.records:
            src = ann / f"{rec.clip_id}.json"
            if src.exists():
                rec = import_beat_annotation(rec, src)
                merged += 1
            records.append(rec)
        if args.dry_run:
            _resolved(args, cfg, manifest=args.manifest, annotations=args.annotations, merged=merged)
            return 0
        save_manifest(Manifest(records, m.version, m.root), args.out)
        _out(f"merged\t{merged}")
        _out(f"clips\t{len(records)}")
        return 0

    # validate
    if args.dry_run:
        _resolved(args, cfg, manifest=args.manifest, clips=len(m))
        return 0
    _out("split\tlabel\tclips")
    for split in SPLITS:
        for label in LABELS:
            n = sum(1 for r in m.records if r.split == split and r.label == label)
            if n:
                _out(f"{split}\t{label}\t{n}")
    violations = verify_splits(m)
    _out(f"violations\t{len(violations)}")
    for v in violations:
        _out(f"violation\t{v.singer_id}\t{v.other_split}")
    return 1 if violations else 0


def cmd_augment(args) -> int:
    from .augment import augment_segment, derive_seed
    from .dsp import Waveform, load_stem, write_wav
    from .manifest import build_tempo_index, load_manifest

    cfg = _config(args)
    tc = cfg.train
    m = load_manifest(args.manifest)
    records = m.split(args.split)
    if args.clips:
        wanted = args.clips.split(",")
        records = [m[c] for c in wanted]
    if not records:
        raise SingGraphError(f"no clips selected from split {args.split!r}")
    if args.dry_run:
        _resolved(args, cfg, manifest=args.manifest, clips=[r.clip_id for r in records], epoch=args.epoch)
        return 0
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    tempo_index = None
    if tc.use_beat_matching:
        labels = ("bonafide",) if tc.replacement_pool == "bonafide" else None
        tempo_index = build_tempo_index(m, tc.bucket_width_bpm, labels)
    rawboost = cfg.rawboost if tc.use_rawboost else None

    def load_ins(cid):
        rec = m[cid]
        return load_stem(m.resolve(rec.instrumental_path)), rec

    def one(rec):
        seed = derive_seed(tc.seed, args.epoch, rec.clip_id)
        rng = np.random.default_rng(seed)
        voc = load_stem(m.resolve(rec.vocal_path))
        ins = load_stem(m.resolve(rec.instrumental_path)) if rec.instrumental_path \
            else Waveform.zeros(len(voc), voc.sample_rate)
        span = max(0.0, voc.duration - tc.clip_dur_s)
        start = float(rng.uniform(0.0, span)) if span > 0 else 0.0
        pair = augment_segment(rec, voc, ins, start, tc.clip_dur_s, rng, rawboost=rawboost,
                               tempo_index=tempo_index if rec.instrumental_path else None,
                               load_instrumental=load_ins)
        write_wav(pair.vocal, out / f"{rec.clip_id}_voc.wav")
        write_wav(pair.instrumental, out / f"{rec.clip_id}_ins.wav")
        prov = {**pair.provenance, "seed": seed, "epoch": args.epoch, "start_s": start}
        (out / f"{rec.clip_id}.json").write_text(json.dumps(prov, sort_keys=True, indent=2) + "\n")
        if args.report:
            from .dsp import segment_clip
            from .plotting import plot_augmentation

            plot_augmentation(segment_clip(voc, start, tc.clip_dur_s).samples, pair.vocal.samples,
                              voc.sample_rate, out / f"{rec.clip_id}_vocal.png", title=rec.clip_id)
        return prov

    if args.jobs > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(args.jobs) as pool:
            provs = list(pool.map(one, records))
    else:
        provs = [one(r) for r in records]
    _out("clip_id\treplacement\toffset_s\trealized_snr_db\tseed")
    for rec, p in zip(records, provs):
        off = "-" if p["offset_s"] is None else f"{p['offset_s']:.6f}"
        snr = "-" if p["realized_snr_db"] is None else f"{p['realized_snr_db']:.6f}"
        _out(f"{rec.clip_id}\t{p['replacement'] or '-'}\t{off}\t{snr}\t{p['seed']}")
    return 0


def cmd_train(args) -> int:
    from .manifest import load_manifest
    from .train import train

    cfg = _config(args)
    m = load_manifest(args.manifest)
    if args.dry_run:
        _resolved(args, cfg, manifest=args.manifest, train_clips=len(m.split("train")),
                  val_clips=len(m.split("val")))
        return 0
    res = train(cfg.train, m, cfg.model, out_path=args.out, rawboost_cfg=cfg.rawboost,
                log_path=args.log, jobs=args.jobs)
    _out(f"epochs\t{len(res.history)}")
    _out(f"best_epoch\t{'-' if res.best_epoch is None else res.best_epoch}")
    _out(f"best_val_eer\t{'-' if res.best_val_eer is None else format(res.best_val_eer, '.6f')}")
    if res.history:
        _out(f"final_loss\t{res.history[-1]['loss']:.6f}")
    if args.report:
        from .plotting import plot_training

        rep = Path(args.report)
        rep.mkdir(parents=True, exist_ok=True)
        with open(rep / "training.tsv", "w", encoding="utf-8", newline="\n") as fh:
            fh.write("epoch\tloss\tval_eer\n")
            for h in res.history:
                v = "-" if h["val_eer"] is None else f"{h['val_eer']:.6f}"
                fh.write(f"{h['epoch']}\t{h['loss']:.6f}\t{v}\n")
        if res.history:
            plot_training(res.history, rep / "training.png")
    return 0


def cmd_score(args) -> int:
    from .manifest import load_manifest
    from .metrics import write_scores
    from .model import read_checkpoint
    from .train import score

    cfg = _config(args)
    m = load_manifest(args.manifest)
    _, model_cfg, _, extra = read_checkpoint(args.checkpoint)
    if args.dry_run:
        _resolved(args, cfg, checkpoint=args.checkpoint, manifest=args.manifest, split=args.split,
                  clips=len(m.split(args.split)), model=model_cfg.to_dict(), stored_train=extra.get("train"))
        return 0
    sf = score(args.checkpoint, m, args.split, setup=args.setup, clip_dur_s=args.clip_dur, jobs=args.jobs)
    write_scores(sf, args.out)
    _out(f"scored\t{len(sf)}")
    _out(f"failed\t{len(sf.failures)}")
    for cid, msg in sf.failures:
        _out(f"error\t{cid}\t{msg}")
    if args.report and len(sf):
        _report_eer(sf, Path(args.report))
    return 0 if len(sf) else 1


def _report_eer(sf, rep: Path):
    from .metrics import compute_eer, operating_points
    from .plotting import plot_scores

    bona, spoof = sf.split_by_label()
    if not bona.size or not spoof.size:
        log.warning("report skipped: scores need both labels")
        return
    rep.mkdir(parents=True, exist_ok=True)
    op = operating_points(bona, spoof)
    with open(rep / "operating_points.tsv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("threshold\tfar\tfrr\n")
        for t, a, r in zip(op.thresholds, op.far, op.frr):
            fh.write(f"{t:.6f}\t{a:.6f}\t{r:.6f}\n")
    eer, thr = compute_eer(sf)
    with open(rep / "eer.tsv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"EER\t{eer:.6f}\nthreshold\t{thr:.6f}\nbonafide\t{bona.size}\nspoof\t{spoof.size}\n")
    plot_scores(sf, rep / "scores.png")


def cmd_eer(args) -> int:
    from .metrics import compute_eer, read_scores

    cfg = _config(args)
    sf = read_scores(args.scores)
    if args.dry_run:
        _resolved(args, cfg, scores=args.scores, rows=len(sf))
        return 0
    if any(lab is None for lab in sf.labels):
        raise SingGraphError(f"{args.scores}: every row needs a label to compute the EER")
    eer, thr = compute_eer(sf)
    _out(f"EER\t{eer:.6f}")
    _out(f"threshold\t{thr:.6f}")
    if args.report:
        _report_eer(sf, Path(args.report))
    return 0


def cmd_gradcheck(args) -> int:
    from .selfcheck import model_check, op_checks

    cfg = _config(args)
    gc = cfg.gradcheck
    if args.dry_run:
        _resolved(args, cfg)
        return 0
    ok = True
    if not args.skip_ops:
        for name, res in op_checks(gc.seed, gc.eps).items():
            good = res.passed(gc.op_tol)
            ok &= good
            _out(f"op\t{name}\t{res.max_rel_error:.3e}\t{'pass' if good else 'FAIL'}")
    res = model_check(cfg.model, gc)
    if res.tie_warning:
        log.warning("a max/top-k tie fell within the finite-difference step; result may be unreliable")
    ok &= res.passed(gc.tol)
    _out(f"checked\t{res.n_checked}")
    _out(f"max_rel_error\t{res.max_rel_error:.3e}")
    return 0 if ok else 1


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="TOML config file")
    common.add_argument("--set", metavar="KEY=VALUE", action="append",
                        help="override a config key (section.key or an unambiguous key); repeatable")
    common.add_argument("--seed", type=_u64, help="global seed (overrides every seed in the config)")
    common.add_argument("--jobs", type=_positive, default=1, help="worker threads (default 1)")
    common.add_argument("--dry-run", action="store_true",
                        help="validate inputs and print the resolved config without side effects")
    common.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")

    p = argparse.ArgumentParser(prog="singgraph", description="Singing-voice deepfake detection toolkit.")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    s = sub.add_parser("manifest", parents=[common], help="synthesize, validate or annotate a manifest")
    s.add_argument("action", choices=("validate", "synth", "merge-beats"))
    s.add_argument("--manifest", metavar="PATH")
    s.add_argument("--annotations", metavar="DIR", help="directory of <clip_id>.json beat files")
    s.add_argument("--out", metavar="PATH")
    s.add_argument("--n-clips", type=_positive, default=32)
    s.add_argument("--dur", type=float, default=4.0, help="synthetic clip length in seconds")
    s.add_argument("--val-clips", type=int, default=0, help="synthetic clips assigned to the val split")
    s.add_argument("--no-embeddings", action="store_true")
    s.set_defaults(func=cmd_manifest)

    s = sub.add_parser("augment", parents=[common], help="write augmented stem pairs with provenance")
    s.add_argument("--manifest", required=True, metavar="PATH")
    s.add_argument("--out", required=True, metavar="DIR")
    s.add_argument("--split", default="train")
    s.add_argument("--clips", metavar="ID,ID", help="comma-separated clip ids")
    s.add_argument("--epoch", type=int, default=0)
    s.add_argument("--report", action="store_true", help="also write before/after spectrogram PNGs")
    s.set_defaults(func=cmd_augment)

    s = sub.add_parser("train", parents=[common], help="train a detector")
    s.add_argument("--manifest", required=True, metavar="PATH")
    s.add_argument("--out", required=True, metavar="CKPT")
    s.add_argument("--log", metavar="PATH", help="JSON-lines training log")
    s.add_argument("--report", metavar="DIR", help="write training.tsv and training.png")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("score", parents=[common], help="score a split with a checkpoint")
    s.add_argument("--checkpoint", required=True, metavar="CKPT")
    s.add_argument("--manifest", required=True, metavar="PATH")
    s.add_argument("--split", required=True)
    s.add_argument("--out", required=True, metavar="TSV")
    s.add_argument("--setup", choices=("M", "V", "IV"), help="defaults to the training setup")
    s.add_argument("--clip-dur", type=float, help="segment length in seconds; defaults to training")
    s.add_argument("--report", metavar="DIR", help="write EER tables and score figures")
    s.set_defaults(func=cmd_score)

    s = sub.add_parser("eer", parents=[common], help="equal error rate of a labelled score file")
    s.add_argument("--scores", required=True, metavar="TSV")
    s.add_argument("--report", metavar="DIR", help="write EER tables and score figures")
    s.set_defaults(func=cmd_eer)

    s = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient self-check")
    s.add_argument("--skip-ops", action="store_true", help="only check the full model")
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("version", parents=[common], help="print the version")
    s.set_defaults(func=cmd_version)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s", force=True)
    logging.getLogger("matplotlib").setLevel(logging.WARNING)
    try:
        return args.func(args)
    except SingGraphError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc.filename or ''}: {exc.strerror or exc}", file=sys.stderr)
        return 1


def run() -> None:
    sys.exit(main())


if __name__ == "__main__":
    run()
