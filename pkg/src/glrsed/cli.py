"""Command-line entry points: build-graph, train, eval, synth, gradcheck, features."""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import data, graph, metrics, model, postprocess, training
from . import features as feat
from . import tensor as tc

log = logging.getLogger("glrsed")


class CommandError(Exception):
    pass


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _sha256_files(paths) -> str:
    h = hashlib.sha256()
    for p in paths:
        p = Path(p)
        h.update(p.name.encode())
        if p.is_file():
            h.update(p.read_bytes())
    return h.hexdigest()


def _dataset_hash(annotations: Path, clips, root: Path) -> str:
    return _sha256_files([annotations] + [root / c.audio_path for c in clips])


def _write_manifest(path: Path, **fields) -> None:
    path.write_text(json.dumps(fields, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _load_clips(annotations: str, audio_root: str | None):
    path = Path(annotations)
    if not path.is_file():
        raise CommandError(f"annotation file not found: {path}")
    try:
        clips = data.parse_annotations(path, audio_root)
    except data.AnnotationError as exc:
        raise CommandError(str(exc)) from None
    root = path.parent if audio_root is None else Path(audio_root)
    return path, clips, root


def _examples(clips, root: Path, vocab: graph.EventVocabulary, fcfg: cfgmod.FeatureConfig, bands: int):
    out = []
    for clip in clips:
        wav = root / clip.audio_path
        if not wav.is_file():
            raise CommandError(f"audio file not found: {wav}")
        audio = feat.read_wav(wav)
        fmap = feat.extract(audio, bands, fcfg.frame_length, fcfg.frame_shift, fcfg.energy_floor)
        roll = data.to_event_roll(clip.events, clip.duration, vocab, fcfg.frame_shift, fcfg.frame_length,
                                  n_frames=fmap.num_frames)
        out.append(training.Example(clip.audio_path, fmap.values, roll.astype(np.float64)))
    return out


def _check_vocab(clips, vocab: graph.EventVocabulary, what: str) -> None:
    unknown = sorted({e.label for c in clips for e in c.events if e.label not in vocab})
    if unknown:
        raise CommandError(f"labels missing from the {what} vocabulary: {', '.join(unknown)}")


def _overrides(args) -> dict:
    return {k: getattr(args, k) for k in cfgmod.config_keys() if getattr(args, k, None) is not None}


def _add_config_options(p: argparse.ArgumentParser, sections=None) -> None:
    p.add_argument("--config", help="key=value configuration file")
    group = p.add_argument_group("configuration overrides (take precedence over --config)")
    for key, cls in cfgmod.config_keys().items():
        if sections is None or cls in sections:
            group.add_argument(f"--{key}", dest=key, metavar="VALUE", help=f"{cls.__name__}.{key}")


def _figures(args) -> bool:
    return not getattr(args, "no_figures", False)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_build_graph(args) -> int:
    ann, clips, _ = _load_clips(args.annotations, args.audio_root)
    vocab = data.vocabulary(clips)
    g, counts = graph.build_graph([c.events for c in clips], vocab)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    graph.write_graph(out, g)
    max_count = int(counts.max()) if counts.size else 0
    print(f"events={len(vocab)} edges={g.edge_count} max_count={max_count}", file=sys.stderr)
    if max_count == 0:
        print("warning: no co-occurring events; adjacency is all zero", file=sys.stderr)
    if _figures(args) and len(vocab):
        from . import plotting

        plotting.adjacency(g.adjacency, vocab.labels, out.with_suffix(".png"))
    return 0


def cmd_train(args) -> int:
    started = _now()
    exp = cfgmod.load_config(args.config, _overrides(args))
    tcfg = exp.train
    if tcfg.glr_enabled and not args.graph:
        raise CommandError("glr_enabled is set but no --graph was given")
    ann, clips, root = _load_clips(args.annotations, args.audio_root)
    if not clips:
        raise CommandError("training set is empty")
    lap = None
    graph_hash = None
    if args.graph:
        g = graph.read_graph(args.graph)
        vocab = g.vocab
        _check_vocab(clips, vocab, "graph")
        lap = g.laplacian()
        graph_hash = _sha256_files([args.graph])
    else:
        vocab = data.vocabulary(clips)
    mcfg = exp.model_config(len(vocab))
    examples = _examples(clips, root, vocab, exp.features, mcfg.input_bands)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    def progress(epoch, br):
        print(f"epoch {epoch}/{tcfg.epochs} bce={br.bce:.4f} glr={br.glr:.4f} total={br.total:.4f}",
              file=sys.stderr)

    result = training.train(examples, lap, mcfg, tcfg, on_epoch=progress)
    ckpt = out / "model.ckpt"
    model.save_checkpoint(ckpt, mcfg, vocab.labels, result.params)
    training.write_loss_log(out / "loss.csv", result.log)
    if _figures(args):
        from . import plotting

        plotting.loss_curves(result.epoch_means(), out / "loss.png",
                             tcfg.alpha if tcfg.glr_enabled else None)
    _write_manifest(
        out / "manifest.json", command="train", config=exp.snapshot(), seed=tcfg.seed,
        dataset=str(ann), dataset_hash=_dataset_hash(ann, clips, root), graph=args.graph,
        graph_hash=graph_hash, checkpoint=str(ckpt), loss_log=str(out / "loss.csv"),
        started=started, finished=_now())
    return 0


def cmd_eval(args) -> int:
    started = _now()
    exp = cfgmod.load_config(args.config, _overrides(args))
    ck = model.load_checkpoint(args.checkpoint)
    vocab = graph.EventVocabulary(ck.labels)
    ann, clips, root = _load_clips(args.annotations, args.audio_root)
    _check_vocab(clips, vocab, "checkpoint")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report = out / "report.csv"
    if not clips:
        report.write_text(metrics.format_report([], [], [], vocab.labels), encoding="utf-8")
        data.write_annotations(out / "predictions.tsv", [])
        print("no clips to evaluate", file=sys.stderr)
        return 0

    examples = _examples(clips, root, vocab, exp.features, ck.config.input_bands)
    params = ck.tensors()
    shift = exp.features.frame_shift
    refs, hyps, durations, scenes, predicted = [], [], [], [], []
    first = None
    for clip, ex in zip(clips, examples):
        y = model.predict(ex.features, params, ck.config)
        events = postprocess.detect(y, vocab.labels, exp.threshold, shift)
        refs.append(clip.events)
        hyps.append(events)
        durations.append(clip.duration)
        scenes.append(clip.scene_label)
        predicted.append(data.AnnotatedClip(clip.audio_path, clip.scene_label, events, clip.duration))
        if first is None:
            first = (clip, ex, y)
    report.write_text(metrics.format_report(refs, hyps, durations, vocab.labels, scenes), encoding="utf-8")
    data.write_annotations(out / "predictions.tsv", predicted)
    overall = metrics.evaluate(refs, hyps, durations, vocab.labels)
    er = "undefined" if overall.error_rate is None else f"{overall.error_rate:.4f}"
    print(f"clips={len(clips)} micro_f1={overall.f1:.2f}% error_rate={er}", file=sys.stderr)

    if _figures(args):
        from . import plotting

        clip, ex, y = first
        hyp_roll = postprocess.binarize(y, postprocess.thresholds(y, exp.threshold))
        plotting.detection(y, ex.roll, hyp_roll, vocab.labels, out / "detection.png", shift, clip.audio_path)
        plotting.event_scores(metrics.evaluate_per_event(refs, hyps, durations, vocab.labels),
                              out / "event_f1.png")
    _write_manifest(
        out / "manifest.json", command="eval", config=exp.snapshot(), checkpoint=str(args.checkpoint),
        checkpoint_hash=_sha256_files([args.checkpoint]), dataset=str(ann),
        dataset_hash=_dataset_hash(ann, clips, root), report=str(report), started=started, finished=_now())
    return 0


def cmd_synth(args) -> int:
    overrides = {"seed": args.seed, "n_clips": args.n_clips, "test_clips": args.test_clips}
    spec, n_clips, test_clips = cfgmod.load_synth_spec(args.spec, overrides)
    if test_clips > n_clips:
        raise CommandError("test_clips cannot exceed n_clips")
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        clips = data.synth_generate(spec, n_clips, out)
    except OSError as exc:
        raise CommandError(f"cannot write to {out}: {exc}") from None
    if test_clips:
        data.write_annotations(out / "train.tsv", clips[:n_clips - test_clips])
        data.write_annotations(out / "test.tsv", clips[n_clips - test_clips:])
    vocab = graph.EventVocabulary(spec.labels)
    counts = graph.count_cooccurrence([c.events for c in clips], vocab)
    print(f"clips={n_clips} events={sum(len(c.events) for c in clips)}", file=sys.stderr)
    for a, b, p in spec.pairs:
        la, lb = spec.labels[a], spec.labels[b]
        print(f"pair {la}-{lb}: target={p:g} realized={counts[a, b]}/{n_clips}", file=sys.stderr)
    return 0


def cmd_gradcheck(args) -> int:
    start = time.perf_counter()
    alphas = [float(a) for a in args.alphas.split(",")]
    if args.inject_fault:
        with tc.corrupt_backward(args.inject_fault, args.fault_factor):
            rows = training.toy_gradcheck(alphas, args.frames, args.seed)
    else:
        rows = training.toy_gradcheck(alphas, args.frames, args.seed)
    worst = max(rows, key=lambda r: r[2])
    elapsed = time.perf_counter() - start
    for alpha, name, err in rows:
        print(f"alpha={alpha:g}\t{name}\t{err:.3e}")
    ok = worst[2] < args.tolerance
    status = "PASS" if ok else "FAIL"
    print(f"{status}: max relative error {worst[2]:.3e} ({worst[1]}, alpha={worst[0]:g}); "
          f"tolerance {args.tolerance:g}; {elapsed:.1f} s", file=sys.stderr)
    return 0 if ok else 1


def cmd_features(args) -> int:
    exp = cfgmod.load_config(args.config, _overrides(args))
    bands = exp.model.get("input_bands", model.ModelConfig().input_bands)
    try:
        audio = feat.read_wav(args.audio)
    except (OSError, ValueError) as exc:
        raise CommandError(f"cannot read {args.audio}: {exc}") from None
    fmap = feat.extract(audio, bands, exp.features.frame_length, exp.features.frame_shift,
                        exp.features.energy_floor)
    feat.write_feature_map(args.out, fmap)
    print(f"bands={fmap.num_bands} frames={fmap.num_frames}", file=sys.stderr)
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="glrsed", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-graph", help="co-occurrence graph from annotations")
    p.add_argument("--annotations", required=True)
    p.add_argument("--audio-root")
    p.add_argument("--out", required=True, help="graph file to write")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_build_graph)

    p = sub.add_parser("train", help="train the CNN-BiGRU model")
    p.add_argument("--annotations", required=True)
    p.add_argument("--audio-root")
    p.add_argument("--graph", help="graph file; required when glr_enabled is true")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--no-figures", action="store_true")
    _add_config_options(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="detect events and score them")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--annotations", required=True)
    p.add_argument("--audio-root")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--no-figures", action="store_true")
    _add_config_options(p, (postprocess.ThresholdConfig, cfgmod.FeatureConfig))
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="generate a synthetic correlated-event dataset")
    p.add_argument("--spec", help="key=value synthetic spec file")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--n-clips", dest="n_clips", type=int)
    p.add_argument("--test-clips", dest="test_clips", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("gradcheck", help="finite-difference check on the toy model")
    p.add_argument("--alphas", default="0,1e-5,1e-2")
    p.add_argument("--frames", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tolerance", type=float, default=1e-5)
    p.add_argument("--inject-fault", metavar="OP", help="scale the backward rule of OP (negative control)")
    p.add_argument("--fault-factor", type=float, default=1.01)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("features", help="dump log mel-band energies of a WAV file")
    p.add_argument("--audio", required=True)
    p.add_argument("--out", required=True)
    _add_config_options(p, (cfgmod.FeatureConfig, model.ModelConfig))
    p.set_defaults(func=cmd_features)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (CommandError, cfgmod.ConfigError, data.AnnotationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
