"""Command-line interface: ``vidsum {synth,score,train,summarize,eval}``.

Every command writes ``effective_config.json`` into its output directory.
Passing that file back through ``--config`` reruns the command with the
same resolved settings; flags given explicitly still win.

Exit codes: 0 success, 1 input error, 2 internal error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import __version__
from .errors import VidsumError
from .evaluate import (
    PrecomputedScorer,
    RefinedScorer,
    TrainingFreeScorer,
    format_table,
    run_setting,
    write_per_video_csv,
    write_results_csv,
)
from .featureio import SETTINGS, l2_normalize_rows, load_manifest
from .metrics import (
    DEFAULT_EPSILON,
    DEFAULT_RATIO,
    DEFAULT_SIGMA,
    METRIC_NAMES,
    importance_scores,
    load_scores_json,
    save_scores_json,
)
from .refine import REFINED_METRICS, TrainConfig, load_checkpoint, refined_importance, save_checkpoint, train
from .summarize import DEFAULT_RATIO as SUMMARY_RATIO
from .summarize import DEFAULT_SHOT_LEN, default_shots, make_summary, summary_to_json
from .synth import SynthSpec, generate, write_dataset

log = logging.getLogger("vidsum")

EXIT_OK, EXIT_INPUT, EXIT_INTERNAL = 0, 1, 2
CONFIG_NAME = "effective_config.json"
# not part of the recorded configuration
_UNRECORDED = {"config", "out", "func", "log_level", "_subparsers"}
# may come from --config instead of the command line
_REQUIRED = {"score": ("manifest",), "train": ("manifest",), "summarize": ("manifest", "scores"),
             "eval": ("manifest",), "synth": ()}


class InputError(VidsumError):
    pass


class _Parser(argparse.ArgumentParser):
    """Usage errors are input errors (exit 1), not argparse's default 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# helpers

def _metric_list(text: str | None) -> list[str] | None:
    if text is None:
        return None
    names = [t.strip() for t in text.split(",") if t.strip()]
    if not names:
        raise InputError("--metrics needs at least one metric name")
    return names


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=1) + "\n")


def _record_config(args, out: Path) -> None:
    cfg = {k: v for k, v in vars(args).items() if k not in _UNRECORDED}
    _write_json(out / CONFIG_NAME, cfg)


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _map(fn, items, workers: int):
    """Order-preserving map over a bounded thread pool."""
    if workers <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _train_config(args) -> TrainConfig:
    return TrainConfig(
        lambda1=args.lambda1,
        lambda2=args.lambda2,
        lambda3=args.lambda3,
        a=args.a,
        lr=args.lr,
        weight_decay=args.weight_decay,
        batch_size=args.batch_size,
        epochs=args.epochs,
        seed=args.seed,
        proj_dim=args.proj_dim,
        hidden_dim=args.hidden_dim,
        filter_hidden=args.filter_hidden,
        segment_len=args.segment_len,
        length=args.length or None,
    )


# ---------------------------------------------------------------------------
# commands

def cmd_synth(args) -> int:
    spec = SynthSpec(
        n_videos=args.videos,
        frames=args.frames,
        dim=args.dim,
        n_clusters=args.clusters,
        redundancy=args.redundancy,
        noise=args.noise,
        key_fraction=args.key_fraction,
        key_spread=args.key_spread,
        background_pool_size=args.pool,
        shot_len=args.shot_len,
        n_annotators=args.annotators,
        annotator_noise=args.annotator_noise,
        n_aux=args.aux,
        seed=args.seed,
    )
    out = _out_dir(args)
    manifest = write_dataset(generate(spec), out)
    _record_config(args, out)
    log.info("wrote %d videos to %s", len(manifest), out)
    return EXIT_OK


def cmd_score(args) -> int:
    manifest = load_manifest(args.manifest)
    ids = manifest.ids() if args.group == "all" else manifest.ids(args.group)
    metrics = _metric_list(args.metrics)
    if args.checkpoint:
        proj, filt, tcfg = load_checkpoint(args.checkpoint)
        metrics = metrics or list(REFINED_METRICS)
        a = args.a if args.a is not None else tcfg.a
    else:
        metrics = metrics or list(METRIC_NAMES)
        if "filter" in metrics:
            raise InputError("the 'filter' metric needs --checkpoint")
        a = args.a if args.a is not None else DEFAULT_RATIO
    args.metrics = ",".join(metrics)
    args.a = a

    def one(vid):
        feats = manifest.load_video(vid).features
        x = feats if feats.normalized else l2_normalize_rows(feats)
        if args.checkpoint:
            return refined_importance(
                x, proj, filt, metrics, a, args.epsilon, args.sigma, not args.no_scale_filter
            )
        return importance_scores(x, metrics, a, args.epsilon, args.sigma)

    scores = dict(zip(ids, _map(one, ids, args.workers)))
    out = _out_dir(args)
    save_scores_json(out / "scores.json", scores)
    _record_config(args, out)
    log.info("scored %d videos", len(scores))
    return EXIT_OK


def cmd_train(args) -> int:
    manifest = load_manifest(args.manifest)
    cfg = _train_config(args)
    proj, filt, history = train(manifest, cfg)
    out = _out_dir(args)
    save_checkpoint(out / "checkpoint.vckp", proj, filt, cfg)
    with open(out / "history.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "loss"])
        for i, loss in enumerate(history.epoch_loss):
            w.writerow([i + 1, repr(loss)])
    _record_config(args, out)
    return EXIT_OK


def cmd_summarize(args) -> int:
    manifest = load_manifest(args.manifest)
    scores = load_scores_json(args.scores)

    def one(vid):
        if vid not in manifest.ids():
            raise InputError(f"scores file lists unknown video {vid!r}")
        rec = manifest.load_video(vid)
        s = scores[vid]
        if len(s) != rec.features.frames:
            raise InputError(f"video {vid}: {len(s)} scores for {rec.features.frames} frames")
        shots = rec.shots if rec.shots is not None else default_shots(rec.features.frames, args.shot_len)
        sel = make_summary(s, shots, args.ratio)
        d = summary_to_json(sel)
        d["budget"] = sel.budget
        d["value"] = float(sel.value)
        return d

    ids = sorted(scores)
    out = _out_dir(args)
    _write_json(out / "summaries.json", dict(zip(ids, _map(one, ids, args.workers))))
    _record_config(args, out)
    return EXIT_OK


def cmd_eval(args) -> int:
    manifest = load_manifest(args.manifest)
    metrics = _metric_list(args.metrics)
    if args.scores:
        scorer = PrecomputedScorer(load_scores_json(args.scores))
    elif args.checkpoint:
        proj, filt, tcfg = load_checkpoint(args.checkpoint)
        scorer = RefinedScorer(tcfg, metrics or REFINED_METRICS, args.epsilon, args.sigma,
                               not args.no_scale_filter, (proj, filt), pretrained=True)
    elif args.refine:
        scorer = RefinedScorer(_train_config(args), metrics or REFINED_METRICS, args.epsilon,
                               args.sigma, not args.no_scale_filter)
    else:
        metrics = metrics or list(METRIC_NAMES)
        if "filter" in metrics:
            raise InputError("the 'filter' metric needs --refine or --checkpoint")
        scorer = TrainingFreeScorer(metrics, args.a, args.epsilon, args.sigma)
    result = run_setting(
        manifest, scorer, args.setting, args.ratio, args.shot_len, args.aggregation,
        args.eval_length or None, args.seed,
    )
    out = _out_dir(args)
    write_results_csv(out / "results.csv", result)
    write_per_video_csv(out / "per_video.csv", result)
    _record_config(args, out)
    print(format_table(result))
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser

def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", help=f"rerun from a previous {CONFIG_NAME}")
    p.add_argument("--out", required=True, help="output directory")


def _add_score_flags(p: argparse.ArgumentParser, a_default) -> None:
    p.add_argument("--metrics", help="comma-separated subset of align,uniform,filter")
    p.add_argument("--a", type=float, default=a_default, help="neighbor ratio")
    p.add_argument("--epsilon", type=float, default=DEFAULT_EPSILON)
    p.add_argument("--sigma", type=float, default=DEFAULT_SIGMA, help="smoothing width; 0 disables")
    p.add_argument("--no-scale-filter", action="store_true", help="use raw filter outputs")


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    d = TrainConfig()
    p.add_argument("--epochs", type=int, default=d.epochs)
    p.add_argument("--lr", type=float, default=d.lr)
    p.add_argument("--weight-decay", type=float, default=d.weight_decay)
    p.add_argument("--batch-size", type=int, default=d.batch_size)
    p.add_argument("--lambda1", type=float, default=d.lambda1)
    p.add_argument("--lambda2", type=float, default=d.lambda2)
    p.add_argument("--lambda3", type=float, default=d.lambda3)
    p.add_argument("--proj-dim", type=int, default=d.proj_dim)
    p.add_argument("--hidden-dim", type=int, default=d.hidden_dim)
    p.add_argument("--filter-hidden", type=int, default=d.filter_hidden)
    p.add_argument("--segment-len", type=int, default=d.segment_len)
    p.add_argument("--length", type=int, default=d.length, help="resample videos to this length; 0 disables")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="vidsum", description="Training-free and refined video summarization.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", default="WARNING")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    parser.set_defaults(_subparsers=sub.choices)

    p = sub.add_parser("synth", help="generate a planted-structure dataset")
    _add_common(p)
    d = SynthSpec()
    p.add_argument("--videos", type=int, default=d.n_videos)
    p.add_argument("--frames", type=int, default=d.frames)
    p.add_argument("--dim", type=int, default=d.dim)
    p.add_argument("--clusters", type=int, default=d.n_clusters)
    p.add_argument("--redundancy", type=int, default=d.redundancy)
    p.add_argument("--noise", type=float, default=d.noise)
    p.add_argument("--key-fraction", type=float, default=d.key_fraction)
    p.add_argument("--key-spread", type=float, default=d.key_spread)
    p.add_argument("--pool", type=int, default=d.background_pool_size, help="background pool size")
    p.add_argument("--shot-len", type=int, default=d.shot_len)
    p.add_argument("--annotators", type=int, default=d.n_annotators)
    p.add_argument("--annotator-noise", type=float, default=d.annotator_noise)
    p.add_argument("--aux", type=int, default=d.n_aux, help="extra train-only videos")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("score", help="per-frame importance scores")
    _add_common(p)
    p.add_argument("--manifest", help="dataset manifest.json")
    p.add_argument("--checkpoint", help="refined model; enables the filter metric")
    p.add_argument("--group", choices=("all", "eval", "train-only"), default="all")
    p.add_argument("--workers", type=int, default=1)
    _add_score_flags(p, None)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("train", help="fit projector and uniqueness filter")
    _add_common(p)
    p.add_argument("--manifest", help="dataset manifest.json")
    p.add_argument("--a", type=float, default=DEFAULT_RATIO, help="neighbor ratio")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("summarize", help="knapsack summaries from scores")
    _add_common(p)
    p.add_argument("--manifest", help="dataset manifest.json")
    p.add_argument("--scores", help="scores.json from the score command")
    p.add_argument("--ratio", type=float, default=SUMMARY_RATIO)
    p.add_argument("--shot-len", type=int, default=DEFAULT_SHOT_LEN, help="used when shots are missing")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_summarize)

    p = sub.add_parser("eval", help="cross-validated F1 and rank correlations")
    _add_common(p)
    p.add_argument("--manifest", help="dataset manifest.json")
    p.add_argument("--setting", choices=SETTINGS, help="overrides the manifest setting")
    p.add_argument("--aggregation", choices=("mean", "max"), help="overrides the manifest aggregation")
    p.add_argument("--ratio", type=float, default=SUMMARY_RATIO)
    p.add_argument("--shot-len", type=int, default=DEFAULT_SHOT_LEN)
    p.add_argument("--eval-length", type=int, default=0, help="score at this length, 0 keeps native length")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--refine", action="store_true", help="train a refined model per fold")
    src.add_argument("--checkpoint", help="score with a fixed refined model")
    src.add_argument("--scores", help="evaluate precomputed scores.json")
    _add_score_flags(p, DEFAULT_RATIO)
    _add_train_flags(p)
    p.set_defaults(func=cmd_eval)
    return parser


def _parse(parser: argparse.ArgumentParser, argv) -> argparse.Namespace:
    args = parser.parse_args(argv)
    if args.config is not None:
        args = _apply_config(parser, args, argv)
    for name in _REQUIRED[args.command]:
        if getattr(args, name) is None:
            parser.error(f"{args.command}: --{name} is required")
    return args


def _apply_config(parser, args, argv) -> argparse.Namespace:
    path = Path(args.config)
    try:
        saved = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read config {path}: {exc}") from None
    if saved.get("command") != args.command:
        raise InputError(f"{path} was written by {saved.get('command')!r}, not {args.command!r}")
    # saved values become defaults, so explicit flags still override them
    subparser = args._subparsers[args.command]
    subparser.set_defaults(**{k: v for k, v in saved.items() if k not in _UNRECORDED and k != "command"})
    return parser.parse_args(argv)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _parse(parser, argv)
        logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except (VidsumError, ValueError, OSError, KeyError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"vidsum: error: {msg}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # noqa: BLE001
        log.debug("internal error", exc_info=True)
        print(f"vidsum: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
