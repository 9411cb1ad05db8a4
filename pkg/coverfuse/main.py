"""
Command-line entry point for coverfuse.

    coverfuse extract --manifest m.json --out cache/
    coverfuse score-pair a b [--dump-csm --dump-fusion --dump-sw]
    coverfuse rank --cache cache/ --channels mfcc,ssm,hpcp,early --out scores/
    coverfuse eval --scores scores/ --mode early+late --report r.json
    coverfuse synth --out corpus/ --cliques 20 --covers 2 --percussive 1

Exit codes: 0 success (warnings allowed), 1 usage error, 2 data error.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

from . import __version__
from .audio import load_audio
from .cache import FeatureCache, read_container
from .config import Config
from .constants import (
    CACHE_SUFFIX,
    CONFIG_FILE,
    DEFAULT_CACHE_DIR,
    DEFAULT_DUMP_DIR,
    DEFAULT_SCORES_DIR,
    EXIT_DATA,
    EXIT_OK,
    EXIT_USAGE,
)
from .errors import DataError, UsageError
from .evaluation import evaluate_all
from .pipeline import (
    PairDump,
    ScoreMatrices,
    SongFeatures,
    compute_song_features,
    extract_features,
    load_manifest,
    score_corpus,
    score_pair,
)
from .synth import generate_corpus

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(levelname)s %(name)s: %(message)s"
FILE_LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


# Handlers installed by setup_logging; replaced on the next call
_handlers: List[logging.Handler] = []


def setup_logging(verbose: bool = False, log_file: Optional[str] = None, quiet: bool = False):
    """Console logging at INFO (DEBUG with -v, WARNING with --quiet), plus an optional debug file."""
    root = logging.getLogger()
    while _handlers:
        handler = _handlers.pop()
        root.removeHandler(handler)
        handler.close()
    root.setLevel(logging.DEBUG)

    console = logging.StreamHandler(sys.stderr)
    console.setLevel(logging.DEBUG if verbose else (logging.WARNING if quiet else logging.INFO))
    console.setFormatter(logging.Formatter(LOG_FORMAT))
    _handlers.append(console)

    if log_file:
        handler = logging.FileHandler(log_file, encoding="utf-8")
        handler.setLevel(logging.DEBUG)
        handler.setFormatter(logging.Formatter(FILE_LOG_FORMAT))
        _handlers.append(handler)

    for handler in _handlers:
        root.addHandler(handler)

    # numba/audioread chatter from librosa is never useful here
    for noisy in ("numba", "audioread"):
        logging.getLogger(noisy).setLevel(logging.WARNING)


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on bad usage; coverfuse reserves 2 for data errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _number_list(text: str) -> tuple:
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got '{text}'")
    return tuple(int(v) if v.is_integer() else v for v in values)


def _name_list(text: str) -> tuple:
    return tuple(v.strip().lower() for v in text.split(",") if v.strip())


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    group = common.add_argument_group("global options")
    group.add_argument("--config", help=f"JSON settings file (default: {CONFIG_FILE.name} if present)")
    group.add_argument("--kappa", type=float, help="mutual nearest neighbor fraction [0.1]")
    group.add_argument("--block-beats", type=int, help="beats per block B [20]")
    group.add_argument("--knn", type=int, help="nearest neighbors for fusion [20]")
    group.add_argument("--early-iters", type=int, help="early fusion iterations [3]")
    group.add_argument("--late-iters", type=int, help="late fusion iterations [20]")
    group.add_argument("--tempo-biases", type=_number_list, help="tempo biases in bpm [60,120,180]")
    group.add_argument("--workers", type=int, help="worker processes [1]")
    group.add_argument("--seed", type=int, help="random seed [0]")
    group.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    group.add_argument("--quiet", action="store_true", help="warnings only, no progress bars")
    group.add_argument("--log-file", help="also write a debug log to this file")

    parser = _Parser(prog="coverfuse", description="Cover song identification with similarity network fusion.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("extract", parents=[common], help="extract features into the cache")
    p.add_argument("--manifest", required=True, help="JSON manifest of songs")
    p.add_argument("--out", default=str(DEFAULT_CACHE_DIR), help="cache directory")

    p = sub.add_parser("score-pair", parents=[common], help="score two songs")
    p.add_argument("a", help="song id in the cache, a .cfse file or an audio file")
    p.add_argument("b", help="song id in the cache, a .cfse file or an audio file")
    p.add_argument("--cache", default=str(DEFAULT_CACHE_DIR), help="cache directory")
    p.add_argument("--channels", type=_name_list, help="channels to score")
    p.add_argument("--dump-csm", action="store_true", help="dump CSMs and binary CSMs")
    p.add_argument("--dump-fusion", action="store_true", help="dump parent kernels and fused cross blocks")
    p.add_argument("--dump-sw", action="store_true", help="dump full Smith-Waterman tables and paths")
    p.add_argument("--dump-dir", default=str(DEFAULT_DUMP_DIR), help="dump directory")

    p = sub.add_parser("rank", parents=[common], help="score every pair in the cache")
    p.add_argument("--cache", default=str(DEFAULT_CACHE_DIR), help="cache directory")
    p.add_argument("--channels", type=_name_list, help="channels to score [mfcc,ssm,hpcp,early]")
    p.add_argument("--out", default=str(DEFAULT_SCORES_DIR), help="scores directory")
    p.add_argument("--manifest", help="restrict to (and order by) the songs of this manifest")

    p = sub.add_parser("eval", parents=[common], help="evaluate score matrices")
    p.add_argument("--scores", default=str(DEFAULT_SCORES_DIR), help="scores directory or scores.cfse")
    p.add_argument("--mode", action="append", default=[],
                   help="late, early+late or a '+'-joined channel list; repeatable")
    p.add_argument("--report", help="write the JSON report here")

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic cover corpus")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--cliques", type=int, default=20)
    p.add_argument("--covers", type=int, default=2)
    p.add_argument("--percussive", type=int, default=0, help="drums-only cliques")
    p.add_argument("--bars", type=int, default=12)
    return parser


def build_config(args) -> Config:
    """Settings file first, then command-line overrides."""
    if args.config:
        cfg = Config.load(Path(args.config))
    elif CONFIG_FILE.exists():
        cfg = Config.load(CONFIG_FILE)
    else:
        cfg = Config()
    return cfg.with_overrides(**{
        "fusion.kappa": args.kappa,
        "blocks.B": args.block_beats,
        "fusion.knn": args.knn,
        "fusion.early_iterations": args.early_iters,
        "fusion.late_iterations": args.late_iters,
        "tempo_biases": args.tempo_biases,
        "workers": args.workers,
        "seed": args.seed,
        "channels": getattr(args, "channels", None),
    })


# ============================================================================
# Commands
# ============================================================================

def _resolve_song(ref: str, cache_dir: str, cfg: Config) -> SongFeatures:
    path = Path(ref)
    if path.suffix.lower() == CACHE_SUFFIX and path.exists():
        return SongFeatures.from_container(read_container(path))
    if path.is_file():
        clip = load_audio(path, cfg.sample_rate)
        return compute_song_features(clip, cfg, path.stem)
    return SongFeatures.from_container(FeatureCache(cache_dir).load(ref))


def cmd_extract(args, cfg: Config) -> int:
    entries = load_manifest(args.manifest)
    report = extract_features(entries, args.out, cfg, quiet=args.quiet)
    logger.info(f"Extracted {len(report.written)}, skipped {len(report.skipped)}, failed {len(report.failed)}")
    if report.failed:
        logger.warning(f"{len(report.failed)} song(s) failed; see {Path(args.out) / 'extract_errors.json'}")
    return EXIT_OK


def cmd_score_pair(args, cfg: Config) -> int:
    a = _resolve_song(args.a, args.cache, cfg)
    b = _resolve_song(args.b, args.cache, cfg)
    dump = PairDump(csm=args.dump_csm, fusion=args.dump_fusion, sw=args.dump_sw)
    pair = score_pair(a, b, cfg, dump if dump.active else None)
    if dump.active:
        name = FeatureCache.file_name(f"{a.song_id}__{b.song_id}")
        path = dump.write(Path(args.dump_dir) / name, a.song_id, b.song_id, pair)
        logger.info(f"Wrote dump {path}")
    print(json.dumps(pair.to_dict(), indent=2))
    return EXIT_OK


def cmd_rank(args, cfg: Config) -> int:
    song_ids = [e.song_id for e in load_manifest(args.manifest)] if args.manifest else None
    scores = score_corpus(args.cache, cfg, args.out, song_ids=song_ids, quiet=args.quiet)
    logger.info(f"Scored {len(scores.song_ids)} songs on {', '.join(scores.channels)}")
    return EXIT_OK


def cmd_eval(args, cfg: Config) -> int:
    scores = ScoreMatrices.load(args.scores)
    reports = evaluate_all(scores, cfg, args.mode)
    for report in reports:
        print(report.summary())
    if args.report:
        with open(args.report, "w", encoding="utf-8") as f:
            json.dump({"reports": [r.to_dict() for r in reports], "config": cfg.to_dict()}, f, indent=2)
        logger.info(f"Wrote report {args.report}")
    return EXIT_OK


def cmd_synth(args, cfg: Config) -> int:
    if args.cliques < 1 or args.covers < 2 or not 0 <= args.percussive <= args.cliques:
        raise UsageError("need >= 1 clique, >= 2 covers per clique and 0 <= percussive <= cliques")
    manifest = generate_corpus(
        args.out, n_cliques=args.cliques, covers_per_clique=args.covers, seed=cfg.seed,
        sample_rate=cfg.sample_rate, bars=args.bars, percussive_cliques=args.percussive,
    )
    logger.info(f"Manifest: {manifest}")
    return EXIT_OK


COMMANDS = {
    "extract": cmd_extract,
    "score-pair": cmd_score_pair,
    "rank": cmd_rank,
    "eval": cmd_eval,
    "synth": cmd_synth,
}


def main(argv: Optional[List[str]] = None) -> int:
    """Run the coverfuse CLI and return its exit code."""
    args = build_parser().parse_args(argv)
    setup_logging(args.verbose, args.log_file, args.quiet)
    try:
        cfg = build_config(args)
        return COMMANDS[args.command](args, cfg)
    except UsageError as e:
        logger.error(str(e))
        return EXIT_USAGE
    except DataError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
