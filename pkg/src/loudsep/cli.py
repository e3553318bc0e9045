"""``loudsep`` command-line entry point.

Exit status: 0 on success, 1 on operational errors (bad files, failed checks,
external process failures), 2 on usage errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .audio_io import STEM_NAMES, WRITE_FORMATS, AudioClip, discover_tracks, load_stem_set, read_wav, write_wav
from .augment import STRATEGIES, LimitAugConfig, TargetLoudnessDist, example_record, iter_examples
from .dataset import DatasetRecipe, build_dataset, verify_dataset
from .errors import ConsistencyError, LoudsepError
from .limiter import LimiterParams, limit
from .loudness import integrated_lufs, loudness_stats
from .metrics import ProjectionConfig, aggregate_tracks, evaluate_stemsets, results_json, summary_csv
from .wrap import WrapConfig, wrap_separate

logger = logging.getLogger("loudsep")

LOG_ENV = "LOUDSEP_LOG_LEVEL"


class UsageError(Exception):
    pass


def _pair(text: str) -> tuple[float, float]:
    try:
        lo, hi = (float(v) for v in str(text).split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected LO,HI, got {text!r}") from None
    return lo, hi


def _require(args, *names):
    for name in names:
        if getattr(args, name, None) is None:
            raise UsageError(f"--{name.replace('_', '-')} is required")


def _dump_json(doc, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


# --------------------------------------------------------------------------
# subcommands

def _measure_targets(paths):
    """(track_id, clip loader) pairs for files, track directories or WAV folders."""
    targets = []
    for raw in paths:
        p = Path(raw)
        if p.is_file():
            targets.append((p.stem, lambda p=p: read_wav(p)))
            continue
        tracks = discover_tracks(p)
        if tracks:
            targets += [(m.track_id, lambda m=m: load_stem_set(m).mixture) for m in tracks]
        else:
            for f in sorted(p.rglob("*.wav")):
                tid = f.relative_to(p).with_suffix("").as_posix()
                targets.append((tid, lambda f=f: read_wav(f)))
    return targets


def cmd_measure(args) -> int:
    _require(args, "inputs")
    rows, skipped = [], {}
    for tid, load in _measure_targets(args.inputs):
        try:
            rows.append((tid, integrated_lufs(load()).lufs))
        except LoudsepError as exc:
            logger.warning("%s: skipped (%s)", tid, exc)
            skipped[tid] = str(exc)
    if not rows:
        raise ConsistencyError("no measurable tracks found")
    stats = loudness_stats([v for _, v in rows])
    doc = {"stats": stats.to_json(), "tracks": {t: v for t, v in rows}, "skipped": skipped}
    if args.out:
        _dump_json(doc, args.out)
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["track_id", "lufs"])
            writer.writerows((t, f"{v:.4f}") for t, v in rows)
    print(json.dumps(stats.to_json(), sort_keys=True))
    return 0


def cmd_limit(args) -> int:
    _require(args, "input", "output")
    clip = read_wav(args.input)
    params = LimiterParams(threshold=args.threshold, attack=args.attack, release=args.release,
                           lookahead=args.lookahead, stereo_link=not args.no_stereo_link)
    out, trace = limit(clip, params)
    write_wav(out, args.output, args.format)
    if args.trace_out:
        gain = trace.gain if trace.gain.ndim == 1 else trace.gain.min(axis=0)
        write_wav(AudioClip(gain, clip.sample_rate), args.trace_out, "float32")
    print(json.dumps({"max_reduction_db": trace.max_reduction_db(), "peak_out": out.peak()}))
    return 0


def cmd_build_dataset(args) -> int:
    _require(args, "input", "output")
    if args.recipe == "custom":
        _require(args, "reduction")
        recipe = DatasetRecipe("custom", tuple(args.reduction), LimiterParams(release=args.release_ms))
    else:
        recipe = DatasetRecipe.preset(args.recipe, release=args.release_ms)
        if args.reduction is not None:
            recipe = DatasetRecipe(recipe.name, tuple(args.reduction), recipe.limiter_template)
    library = discover_tracks(args.input)
    if not library:
        raise ConsistencyError(f"no tracks found under {args.input}")
    report = build_dataset(library, recipe, args.output, jobs=args.jobs, format=args.format)
    report.write(args.report or Path(args.output) / "report.json")
    print(json.dumps({"built": len(report.rows), "failed": len(report.failures)}))
    return 0 if report.rows else 1


def cmd_augment(args) -> int:
    _require(args, "input", "output")
    config = LimitAugConfig(
        target_dist=TargetLoudnessDist.parse(args.target_dist),
        release_range=tuple(args.release_ms),
        post_norm_target=args.post_norm,
        strategy=args.strategy.replace("-", "_"),
    )
    library = discover_tracks(args.input)
    if not library:
        raise ConsistencyError(f"no tracks found under {args.input}")
    items = iter_examples(library, config, args.count, args.seed, args.duration,
                          target_stem=args.target_stem, jobs=args.jobs,
                          gain_range=tuple(args.gain_range))
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    written = 0
    with open(out / "examples.jsonl", "w") as fh:
        for item in items:
            write_wav(item.example.mixture, out / f"{item.index:05d}_mixture.wav", args.format)
            write_wav(item.example.target, out / f"{item.index:05d}_{args.target_stem}.wav", args.format)
            fh.write(json.dumps(example_record(item, config), sort_keys=True) + "\n")
            written += 1
    print(json.dumps({"examples": written}))
    return 0


def cmd_eval(args) -> int:
    _require(args, "ref", "est")
    refs = {m.track_id: m for m in discover_tracks(args.ref, args.stems)}
    ests = {m.track_id: m for m in discover_tracks(args.est, args.stems)}
    if not refs or set(refs) != set(ests):
        report = {"only_in_ref": sorted(set(refs) - set(ests)),
                  "only_in_est": sorted(set(ests) - set(refs))}
        print(json.dumps(report, sort_keys=True), file=sys.stderr)
        raise ConsistencyError("reference and estimate directories hold different tracks")
    config = ProjectionConfig(args.filter_len, args.window, args.hop)
    results = [
        evaluate_stemsets(load_stem_set(refs[t]), load_stem_set(ests[t]), config, t, args.stems)
        for t in sorted(refs)
    ]
    summary = aggregate_tracks(results)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(results_json(results, summary) + "\n")
    if args.csv:
        Path(args.csv).write_text(summary_csv(summary))
    sys.stdout.write(summary_csv(summary))
    return 0


def cmd_wrap_separate(args) -> int:
    _require(args, "input", "command", "output")
    config = WrapConfig(
        command_template=args.command,
        target_lufs=args.target_lufs,
        restore_gain=not args.no_restore_gain,
        target_from=args.target_from,
        expected_stems=tuple(args.expect_stems or ()),
    )
    written = wrap_separate(args.input, config, args.output)
    print(json.dumps({k: str(v) for k, v in written.items()}, sort_keys=True))
    return 0


def cmd_verify(args) -> int:
    _require(args, "original", "limited")
    report = verify_dataset(args.original, args.limited)
    if args.out:
        _dump_json(report.to_json(), args.out)
    print(json.dumps({"ok": report.ok, "failing": report.failing()}))
    return 0 if report.ok else 1


# --------------------------------------------------------------------------
# parser

def _csv_list(text):
    return [s for s in str(text).split(",") if s]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with flag values (flags win)")
    common.add_argument("--log-level", default=os.environ.get(LOG_ENV, "WARNING"))

    parser = argparse.ArgumentParser(prog="loudsep", description=__doc__.splitlines()[0],
                                     parents=[common])
    parser.add_argument("--version", action="version", version=f"loudsep {__version__}")
    sub = parser.add_subparsers(dest="command_name", metavar="COMMAND")
    jobs_default = os.cpu_count() or 1

    p = sub.add_parser("measure", parents=[common], help="integrated loudness per track + stats")
    p.add_argument("--in", dest="inputs", action="append", help="file or directory (repeatable)")
    p.add_argument("--out", help="JSON with LoudnessStats and per-track values")
    p.add_argument("--csv", help="CSV with columns track_id,lufs")
    p.set_defaults(func=cmd_measure)

    p = sub.add_parser("limit", parents=[common], help="limit one WAV file")
    p.add_argument("--in", dest="input")
    p.add_argument("--out", dest="output")
    p.add_argument("--threshold", type=float, default=0.0, help="dBFS")
    p.add_argument("--release", type=float, default=100.0, help="ms")
    p.add_argument("--attack", type=float, default=1.0, help="ms")
    p.add_argument("--lookahead", type=float, default=None, help="ms (default: attack)")
    p.add_argument("--no-stereo-link", action="store_true")
    p.add_argument("--format", choices=WRITE_FORMATS, default="float32")
    p.add_argument("--trace-out", help="write the gain trace as a mono float32 WAV")
    p.set_defaults(func=cmd_limit)

    p = sub.add_parser("build-dataset", parents=[common], help="build an L/XL-style limited dataset")
    p.add_argument("--recipe", choices=("L", "XL", "custom"), default="L")
    p.add_argument("--reduction", type=_pair, help="LO,HI dB of maximum gain reduction")
    p.add_argument("--release-ms", type=float, default=100.0)
    p.add_argument("--in", dest="input")
    p.add_argument("--out", dest="output")
    p.add_argument("--report")
    p.add_argument("--format", choices=WRITE_FORMATS, default="float32")
    p.add_argument("--jobs", type=int, default=jobs_default)
    p.set_defaults(func=cmd_build_dataset)

    p = sub.add_parser("augment", parents=[common], help="generate training examples")
    p.add_argument("--in", dest="input")
    p.add_argument("--out", dest="output")
    p.add_argument("--strategy", choices=[s.replace("_", "-") for s in STRATEGIES], default="limitaug")
    p.add_argument("--target-dist", default="normal:-8.61,1.17")
    p.add_argument("--release-ms", type=_pair, default=(30.0, 200.0))
    p.add_argument("--post-norm", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--duration", type=float, default=6.0)
    p.add_argument("--target-stem", choices=STEM_NAMES, default="vocals")
    p.add_argument("--gain-range", type=_pair, default=(-6.0, 6.0))
    p.add_argument("--format", choices=WRITE_FORMATS, default="float32")
    p.add_argument("--jobs", type=int, default=jobs_default)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("eval", parents=[common], help="framewise SDR and SI-SDR per stem")
    p.add_argument("--ref")
    p.add_argument("--est")
    p.add_argument("--filter-len", type=int, default=512)
    p.add_argument("--window", type=float, default=1.0)
    p.add_argument("--hop", type=float, default=1.0)
    p.add_argument("--stems", type=_csv_list, default=list(STEM_NAMES))
    p.add_argument("--out")
    p.add_argument("--csv")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("wrap-separate", parents=[common], help="loudness-normalized separation")
    p.add_argument("--in", dest="input")
    p.add_argument("--command", help="template with {input} and {output_dir}")
    p.add_argument("--out", dest="output")
    p.add_argument("--target-lufs", type=float, default=-14.0)
    p.add_argument("--target-from", type=Path, help="use this file's loudness as the target")
    p.add_argument("--no-restore-gain", action="store_true")
    p.add_argument("--expect-stems", type=_csv_list)
    p.set_defaults(func=cmd_wrap_separate)

    p = sub.add_parser("verify", parents=[common], help="check a limited dataset against its source")
    p.add_argument("--original")
    p.add_argument("--limited")
    p.add_argument("--out")
    p.set_defaults(func=cmd_verify)
    return parser


def _config_defaults(argv) -> dict:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return {}
    with open(known.config) as fh:
        doc = json.load(fh)
    return {k.replace("-", "_"): v for k, v in doc.items()}


def dispatch(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        defaults = _config_defaults(argv)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"loudsep: cannot read config: {exc}", file=sys.stderr)
        return 2
    if defaults:
        for action in parser._subparsers._group_actions:
            for subparser in action.choices.values():
                subparser.set_defaults(**defaults)
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if not getattr(args, "func", None):
        parser.print_usage(sys.stderr)
        return 2

    logging.basicConfig(level=str(args.log_level).upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"loudsep {args.command_name}: error: {exc}", file=sys.stderr)
        return 2
    except (LoudsepError, OSError, ValueError) as exc:
        print(f"loudsep {args.command_name}: {exc}", file=sys.stderr)
        output = getattr(exc, "output", "")
        if output:
            print(output, file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(dispatch())
