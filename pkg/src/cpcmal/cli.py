"""``cpcmal`` command line: thin wrappers over the library.

Exit codes: 0 success, 1 bad input (including usage errors), 2 internal error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import InputError

log = logging.getLogger("cpcmal")

QUADRANT_EMOTIONS = {(1, 1): "joy", (-1, 1): "anger", (-1, -1): "sadness", (1, -1): "tenderness"}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _load_frames(args):
    """(ids, list of LogMelFrames) from --wavs DIR or --frames NPZ."""
    from .audio import LogMelFrames, read_wav, wav_to_logmel

    if args.frames:
        try:
            with np.load(args.frames) as npz:
                ids = sorted(npz.files)
                return ids, [LogMelFrames(npz[i]) for i in ids]
        except (OSError, ValueError) as exc:
            raise InputError(f"cannot read frames from {args.frames}: {exc}") from None
    wavs = sorted(Path(args.wavs).glob("*.wav"))
    if not wavs:
        raise InputError(f"no .wav files in {args.wavs}")
    out = []
    for p in wavs:
        audio, sr = read_wav(p)
        out.append(wav_to_logmel(audio, sr))
    return [p.stem for p in wavs], out


def _add_source(p):
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--wavs", help="directory of .wav files (one utterance each)")
    src.add_argument("--frames", help=".npz of (T, 40) log-mel arrays keyed by utterance id")


def cmd_synth(args):
    from .featmat import FeatureMatrix, write_features_csv
    from .harness import synth_dataset, write_labels_csv
    from .synthetic import temporal_utterances

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.kind == "blobs":
        ds = synth_dataset(args.n_blobs, args.per_blob, args.dim, args.separation, args.label_noise,
                           args.halo_fraction, args.halo_scale, args.seed)
        write_features_csv(out / "features.csv", FeatureMatrix(ds.ids, ds.classifier))
        valence, arousal, ids = ds.valence, ds.arousal, ds.ids
    else:
        corpus = temporal_utterances(n_utterances=args.n_utterances, n_frames=args.n_frames, dim=args.dim,
                                     seed=args.seed)
        ids = [f"u{i:05d}" for i in range(len(corpus.utterances))]
        np.savez(out / "frames.npz", **dict(zip(ids, corpus.utterances)))
        valence, arousal = corpus.valence, corpus.arousal
    write_labels_csv(out / "labels.csv", ids, [QUADRANT_EMOTIONS[(int(v), int(a))] for v, a in zip(valence, arousal)])
    labelmap = {e: {"valence": "pos" if v > 0 else "neg", "arousal": "high" if a > 0 else "low"}
                for (v, a), e in QUADRANT_EMOTIONS.items()}
    (out / "labelmap.json").write_text(json.dumps(labelmap, indent=2, sort_keys=True) + "\n")
    print(out)


def cmd_features(args):
    from .audio import functionals_600
    from .cpc import CpcModel, extract_cpc_features
    from .featmat import FeatureMatrix, write_features_csv

    ids, frames = _load_frames(args)
    if args.kind == "logmel600":
        rows = [functionals_600(f).vector for f in frames]
    else:
        if not args.model:
            raise InputError("--model is required for cpc features")
        model = CpcModel.load(args.model)
        rows = [extract_cpc_features(model, f).vector for f in frames]
    write_features_csv(args.out, FeatureMatrix(ids, np.vstack(rows)))
    print(args.out)


def cmd_train_cpc(args):
    from .cpc import CpcConfig, TrainSchedule, train_cpc

    raw = json.loads(Path(args.config).read_text()) if args.config else {}
    if not isinstance(raw, dict) or set(raw) - {"model", "schedule"}:
        bad = sorted(set(raw) - {"model", "schedule"}) if isinstance(raw, dict) else ["<root>"]
        raise InputError(f"unknown config key {bad[0]!r}; expected 'model' and 'schedule'")
    try:
        config = CpcConfig(**raw.get("model", {}))
        schedule = TrainSchedule(**raw.get("schedule", {}))
    except TypeError as exc:
        raise InputError(f"bad config key: {exc}") from None
    _, frames = _load_frames(args)
    model, history = train_cpc(frames, schedule, seed=args.seed, config=config)
    model.save(args.out)
    if args.history:
        Path(args.history).write_text(json.dumps(history, indent=2) + "\n")
    print(f"best validation loss {history['best_val_loss']:.4f} at epoch {history['best_epoch']}")


def cmd_reduce(args):
    from .dimred import reduce_features
    from .featmat import read_features_csv, write_features_csv

    fm = read_features_csv(args.features)
    write_features_csv(args.out, fm.with_values(reduce_features(fm.values, args.pipeline, seed=args.seed)))
    print(args.out)


def cmd_mal_plan(args):
    from .featmat import read_features_csv
    from .harness import budget_to_count
    from .mal import affinity, auto_metric, default_k, k_medoids, query_plan

    fm = read_features_csv(args.features)
    metric = auto_metric(fm.shape[1]) if args.metric == "auto" else args.metric
    clusters = k_medoids(affinity(fm.values, metric), args.k or default_k(fm.shape[0]), seed=args.seed)
    plan = query_plan(clusters, budget_to_count(fm.shape[0], args.budget), args.policy, seed=args.seed)
    for i in plan.indices:
        print(fm.ids[i] if args.ids else int(i))


def cmd_run(args):
    from .harness import ExperimentConfig, bundled_config, run_experiment

    cfg = bundled_config(args.bundled) if args.bundled else ExperimentConfig.from_json(args.config)
    report = run_experiment(cfg, args.out, workers=args.workers)
    print(f"{len(report.records)} records -> {report.report_path}")
    for f in report.failures:
        print(f"cell failed: {f}", file=sys.stderr)
    return 0


def cmd_aggregate(args):
    from .harness import aggregate, read_report, write_table

    table = aggregate(read_report(args.report), by=[k.strip() for k in args.by.split(",") if k.strip()])
    if args.summary:
        write_table(args.summary, table.summary)
    if args.contrasts:
        write_table(args.contrasts, table.contrasts)
    if not args.summary and not args.contrasts:
        for row in table.contrasts or table.summary:
            print(" ".join(f"{k}={v:.4g}" if isinstance(v, float) else f"{k}={v}" for k, v in row.items()))


def cmd_selfcheck(args):
    from .selfcheck import run_selfcheck

    results = run_selfcheck()
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name}: {r.detail} ({r.seconds:.2f}s)")
    return 0 if all(r.passed for r in results) else 2


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cpcmal", description="Medoid-based active learning experiments")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="write a synthetic dataset")
    s.add_argument("--kind", choices=("blobs", "temporal"), default="blobs")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--dim", type=int, default=40)
    s.add_argument("--n-blobs", type=int, default=4)
    s.add_argument("--per-blob", type=int, default=375)
    s.add_argument("--separation", type=float, default=5.0)
    s.add_argument("--label-noise", type=float, default=0.0)
    s.add_argument("--halo-fraction", type=float, default=0.0)
    s.add_argument("--halo-scale", type=float, default=3.0)
    s.add_argument("--n-utterances", type=int, default=200)
    s.add_argument("--n-frames", type=int, default=120)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("features", help="utterance features from audio or frames")
    _add_source(s)
    s.add_argument("--kind", choices=("logmel600", "cpc"), default="logmel600")
    s.add_argument("--model", help="CPC checkpoint for --kind cpc")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_features)

    s = sub.add_parser("train-cpc", help="train a CPC model")
    _add_source(s)
    s.add_argument("--config", help="JSON with optional 'model' and 'schedule' objects")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True, help="checkpoint path")
    s.add_argument("--history", help="write the loss history as JSON")
    s.set_defaults(func=cmd_train_cpc)

    s = sub.add_parser("reduce", help="apply a reducer pipeline to a feature CSV")
    s.add_argument("--features", required=True)
    s.add_argument("--pipeline", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_reduce)

    s = sub.add_parser("mal-plan", help="print MAL query indices for a budget")
    s.add_argument("--features", required=True)
    s.add_argument("--budget", type=float, required=True, help="percent of samples")
    s.add_argument("--metric", choices=("auto", "euclidean", "cosine"), default="auto")
    s.add_argument("--policy", choices=("medoid_labels", "cluster_labels"), default="medoid_labels")
    s.add_argument("--k", type=int, help="cluster count (default round(N/3))")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--ids", action="store_true", help="print utterance ids instead of row indices")
    s.set_defaults(func=cmd_mal_plan)

    s = sub.add_parser("run", help="run an experiment config")
    cfg = s.add_mutually_exclusive_group(required=True)
    cfg.add_argument("--config", help="experiment JSON")
    cfg.add_argument("--bundled", help="name of a bundled config, e.g. quadrant_blobs")
    s.add_argument("--out", required=True)
    s.add_argument("--workers", type=int, help="parallel cells (default $CPCMAL_WORKERS or 1)")
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("aggregate", help="means, standard errors and paired t tests")
    s.add_argument("--report", required=True)
    s.add_argument("--by", default="feature,reducer,budget,strategy")
    s.add_argument("--summary", help="write group means here")
    s.add_argument("--contrasts", help="write MAL vs random paired tests here")
    s.set_defaults(func=cmd_aggregate)

    s = sub.add_parser("selfcheck", help="run the quick oracle suite")
    s.set_defaults(func=cmd_selfcheck)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return int(args.func(args) or 0)
    except (InputError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"cpcmal: error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # anything else is a bug
        log.debug("internal error", exc_info=True)
        print(f"cpcmal: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
