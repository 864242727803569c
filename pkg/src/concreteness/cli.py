"""Command-line entry point.

Every command streams records shard-by-shard (inputs are glob patterns) and
prints a machine-parseable ``key=value`` summary on stdout. Exit code 0
means no error; failures append an ``error=...`` line and exit 1.
"""

from __future__ import annotations

import argparse
import glob
import os
import shutil
import tempfile
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Iterator, Sequence

from . import corpus, curate, fusion, gateway, metrics, standardize
from .corpus import CaptionRecord, ReadStats, read_corpus, write_corpus


@dataclass(frozen=True)
class CommandResult:
    exit_code: int
    summary: str


def _expand_inputs(pattern: str) -> list[str]:
    paths = sorted(glob.glob(pattern))
    if not paths:
        raise FileNotFoundError(f"no input files match {pattern!r}")
    return paths


def _chain_shards(paths: Sequence[str], strict: bool, stats: ReadStats) -> Iterator[CaptionRecord]:
    for path in paths:
        yield from read_corpus(path, strict=strict, stats=stats)


def _merge_stats(target: ReadStats, part: ReadStats) -> None:
    target.read += part.read
    target.skipped += part.skipped
    target.duplicates += part.duplicates


def _map_shards_to_file(paths: Sequence[str], output: str, workers: int, strict: bool,
                        mapper: Callable[[Iterable[CaptionRecord], ReadStats], Iterator[CaptionRecord]],
                        ) -> tuple[int, ReadStats]:
    """Apply a per-record mapper over shards; concatenate results in shard order.

    With multiple workers each shard maps into a temporary part file in
    parallel; concatenation order is shard order either way, so the output
    is worker-count invariant.
    """
    stats = ReadStats()
    if workers <= 1:
        def generate():
            for path in paths:
                yield from mapper(read_corpus(path, strict=strict, stats=stats), stats)
        return write_corpus(generate(), output), stats

    tmpdir = tempfile.mkdtemp(prefix="parts-", dir=os.path.dirname(os.path.abspath(output)) or ".")

    def work(job):
        idx, path = job
        local = ReadStats()
        part_path = os.path.join(tmpdir, f"part-{idx:05d}.jsonl")
        count = write_corpus(mapper(read_corpus(path, strict=strict, stats=local), local),
                             part_path)
        return part_path, count, local

    try:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(work, enumerate(paths)))
        total = 0
        with open(output, "w", encoding="utf-8") as out:
            for part_path, count, local in parts:
                with open(part_path, encoding="utf-8") as fh:
                    shutil.copyfileobj(fh, out)
                total += count
                _merge_stats(stats, local)
        return total, stats
    finally:
        shutil.rmtree(tmpdir, ignore_errors=True)


def _format_float(value: float) -> str:
    return repr(float(value))


# ---------------------------------------------------------------------------
# command handlers


def cmd_score(args, lines: list[str]) -> None:
    paths = _expand_inputs(args.input)
    read_stats = ReadStats()
    score_stats = ReadStats()
    failures = args.failures or args.output + ".failures"
    records = _chain_shards(paths, args.strict, read_stats)
    enriched = gateway.attach_scores(
        records, args.endpoint, args.score, batch_size=args.batch_size,
        failures=failures, stats=score_stats, timeout=args.timeout,
        max_in_flight=args.max_in_flight)
    count = write_corpus(enriched, args.output)
    lines.append(f"records={read_stats.read}")
    lines.append(f"scored={score_stats.read}")
    lines.append(f"failed={score_stats.skipped}")
    lines.append(f"written={count}")
    lines.append(f"output={args.output}")
    lines.append(f"failures={failures}")


def cmd_standardize_fit(args, lines: list[str]) -> None:
    paths = _expand_inputs(args.input)

    def collect(path: str) -> tuple[dict, ReadStats]:
        local = ReadStats()

        def samples():
            for record in read_corpus(path, strict=args.strict, stats=local):
                if args.score not in record.scores:
                    if args.strict:
                        raise KeyError(f"record {record.id!r} has no score {args.score!r}")
                    local.skipped += 1
                    continue
                yield (standardize.caption_length(record.caption, args.length_unit),
                       record.scores[args.score])

        return standardize.collect_bucket_stats(samples(), transform=args.transform,
                                                clamp_eps=args.clamp_eps), local

    if args.workers > 1:
        with ThreadPoolExecutor(max_workers=args.workers) as pool:
            parts = list(pool.map(collect, paths))
    else:
        parts = [collect(path) for path in paths]

    stats = ReadStats()
    for _, local in parts:
        _merge_stats(stats, local)
    merged = standardize.merge_bucket_stats(part for part, _ in parts)
    model = standardize.build_model(
        merged, transform=args.transform, clamp_eps=args.clamp_eps,
        min_bucket_count=args.min_bucket_count, length_unit=args.length_unit)
    model.save(args.output)
    lines.append(f"samples={model.global_stats.count}")
    lines.append(f"buckets={len(model.buckets)}")
    lines.append(f"skipped={stats.skipped}")
    lines.append(f"output={args.output}")


def cmd_standardize_apply(args, lines: list[str]) -> None:
    paths = _expand_inputs(args.input)
    model = standardize.StandardizationModel.load(args.model)

    def mapper(records, stats):
        return standardize.standardize_corpus(records, args.score, model,
                                              strict=args.strict, stats=stats)

    count, stats = _map_shards_to_file(paths, args.output, args.workers, args.strict, mapper)
    lines.append(f"records={count}")
    lines.append(f"skipped={stats.skipped}")
    lines.append(f"score={args.score}_std")
    lines.append(f"output={args.output}")


def cmd_fuse_fit(args, lines: list[str]) -> None:
    paths = _expand_inputs(args.input)
    annotations = corpus.read_annotations(args.annotations)
    binary = fusion.binarize_labels(annotations, args.threshold)

    stats = ReadStats()
    points = []
    for record in _chain_shards(paths, args.strict, stats):
        if record.id not in binary:
            continue
        if args.vba not in record.scores or args.sba not in record.scores:
            if args.strict:
                missing = args.vba if args.vba not in record.scores else args.sba
                raise KeyError(f"record {record.id!r} has no score {missing!r}")
            stats.skipped += 1
            continue
        points.append((record.scores[args.vba], record.scores[args.sba], binary[record.id]))

    config = fusion.FitConfig(max_iters=args.max_iters, tol=args.tol, l2=args.l2,
                              binarize_threshold=args.threshold)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        params = fusion.fit_fusion(points, config)
    converged = not any(issubclass(w.category, fusion.ConvergenceWarning) for w in caught)
    params.save(args.output)
    lines.append(f"points={len(points)}")
    lines.append(f"a={_format_float(params.a)}")
    lines.append(f"b={_format_float(params.b)}")
    lines.append(f"c={_format_float(params.c)}")
    lines.append(f"converged={str(converged).lower()}")
    lines.append(f"output={args.output}")


def cmd_fuse_apply(args, lines: list[str]) -> None:
    paths = _expand_inputs(args.input)
    params = fusion.resolve_params(args.params)

    def mapper(records, stats):
        return fusion.fuse_corpus(records, params, args.vba, args.sba, args.out,
                                  strict=args.strict, stats=stats)

    count, stats = _map_shards_to_file(paths, args.output, args.workers, args.strict, mapper)
    lines.append(f"records={count}")
    lines.append(f"skipped={stats.skipped}")
    lines.append(f"score={args.out}")
    lines.append(f"output={args.output}")


def _selection_spec_from_args(args) -> curate.SelectionSpec:
    if args.spec:
        return curate.SelectionSpec.load(args.spec)
    spec = curate.SelectionSpec(method=args.method, score_name=args.score,
                                k=args.k, theta=args.theta, seed=args.seed)
    spec.validate()
    return spec


def cmd_filter(args, lines: list[str]) -> None:
    paths = _expand_inputs(args.input)
    spec = _selection_spec_from_args(args)
    stats = ReadStats()
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        selected = curate.select_sharded(paths, spec, workers=args.workers,
                                         strict=args.strict, stats=stats)
    count = write_corpus(selected, args.output)
    lines.append(f"selected={count}")
    lines.append(f"skipped={stats.skipped}")
    for caught_warning in caught:
        message = str(caught_warning.message).replace("\n", " ")
        lines.append(f"warning={message}")
    lines.append(f"output={args.output}")


def cmd_eval_corr(args, lines: list[str]) -> None:
    paths = _expand_inputs(args.input)
    annotations = corpus.read_annotations(args.annotations)
    stats = ReadStats()
    xs: list[float] = []
    ys: list[float] = []
    for record in _chain_shards(paths, args.strict, stats):
        if record.id not in annotations.labels:
            continue
        if args.score not in record.scores:
            if args.strict:
                raise KeyError(f"record {record.id!r} has no score {args.score!r}")
            stats.skipped += 1
            continue
        xs.append(record.scores[args.score])
        ys.append(annotations.labels[record.id])
    report = metrics.correlate(xs, ys)
    lines.append(f"n={report.n}")
    lines.append(f"pearson={_format_float(report.pearson)}")
    lines.append(f"spearman={_format_float(report.spearman)}")
    lines.append(f"kendall={_format_float(report.kendall)}")
    lines.append(f"score={args.score}")


def cmd_emit_distill(args, lines: list[str]) -> None:
    paths = _expand_inputs(args.input)
    stats = ReadStats()
    records = _chain_shards(paths, args.strict, stats)
    count = curate.emit_distillation_set(records, args.score, args.target, args.output)
    lines.append(f"emitted={count}")
    lines.append(f"target_space={args.target}")
    lines.append(f"output={args.output}")


def cmd_split(args, lines: list[str]) -> None:
    paths = _expand_inputs(args.input)
    fractions = [float(f) for f in args.fractions.split(",") if f]
    stats = ReadStats()
    records = list(_chain_shards(paths, args.strict, stats))
    parts = curate.split_corpus(records, fractions, args.seed)
    outputs = []
    for index, part in enumerate(parts):
        out_path = f"{args.output}.part{index}.jsonl"
        write_corpus(part, out_path)
        outputs.append(out_path)
    lines.append(f"parts={len(parts)}")
    lines.append(f"sizes={','.join(str(len(part)) for part in parts)}")
    lines.append(f"outputs={','.join(outputs)}")


def cmd_shard(args, lines: list[str]) -> None:
    paths = _expand_inputs(args.input)
    stats = ReadStats()
    records = _chain_shards(paths, args.strict, stats)
    manifest = corpus.shard(records, args.shard_size, args.out_dir)
    manifest_path = args.manifest or str(Path(args.out_dir) / "manifest.json")
    manifest.save(manifest_path)
    lines.append(f"shards={len(manifest.shard_paths)}")
    lines.append(f"total={manifest.total}")
    lines.append(f"manifest={manifest_path}")


# ---------------------------------------------------------------------------
# parser


def _add_common(parser: argparse.ArgumentParser, output: bool = True) -> None:
    parser.add_argument("--input", required=True, help="input corpus file or glob")
    if output:
        parser.add_argument("--output", required=True, help="output path")
    strictness = parser.add_mutually_exclusive_group()
    strictness.add_argument("--strict", dest="strict", action="store_true", default=True,
                            help="abort on malformed or incomplete records (default)")
    strictness.add_argument("--lenient", dest="strict", action="store_false",
                            help="skip malformed or incomplete records and count them")
    parser.add_argument("--workers", type=int, default=1, help="shard-level parallelism")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="concreteness",
        description="Score, standardize, fuse, and filter caption corpora by "
                    "visual concreteness.")
    sub = parser.add_subparsers(dest="command", required=True)

    f = argparse.ArgumentDefaultsHelpFormatter

    p = sub.add_parser("score", formatter_class=f,
                       help="attach scores from a scorer endpoint")
    _add_common(p)
    p.add_argument("--endpoint", required=True, help="cmd:<argv> or tcp:<host>:<port>")
    p.add_argument("--score", required=True, help="name to store the score under")
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--max-in-flight", type=int, default=32)
    p.add_argument("--timeout", type=float, default=30.0, help="seconds per response wait")
    p.add_argument("--failures", help="failure side-channel file "
                                      "(default: <output>.failures)")
    p.set_defaults(handler=cmd_score)

    p = sub.add_parser("standardize-fit", formatter_class=f,
                       help="fit per-length standardization statistics")
    _add_common(p)
    p.add_argument("--score", required=True, help="score to fit on")
    p.add_argument("--transform", choices=standardize.TRANSFORMS, default="standard")
    p.add_argument("--clamp-eps", type=float, default=standardize.DEFAULT_CLAMP_EPS)
    p.add_argument("--min-bucket-count", type=int, default=standardize.DEFAULT_MIN_BUCKET_COUNT)
    p.add_argument("--length-unit", choices=("word", "char"), default="word")
    p.set_defaults(handler=cmd_standardize_fit)

    p = sub.add_parser("standardize-apply", formatter_class=f,
                       help="attach <score>_std using a fitted model")
    _add_common(p)
    p.add_argument("--model", required=True, help="fitted standardizer file")
    p.add_argument("--score", required=True, help="score to standardize")
    p.set_defaults(handler=cmd_standardize_apply)

    p = sub.add_parser("fuse-fit", formatter_class=f,
                       help="fit fusion weights against binarized annotations")
    _add_common(p)
    p.add_argument("--annotations", required=True, help="annotation TSV file")
    p.add_argument("--vba", default="vba", help="first score name")
    p.add_argument("--sba", default="sba", help="second score name")
    p.add_argument("--l2", type=float, default=1e-6)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--max-iters", type=int, default=10_000)
    p.add_argument("--threshold", type=float, default=None,
                   help="binarization threshold (default: median split)")
    p.set_defaults(handler=cmd_fuse_fit)

    p = sub.add_parser("fuse-apply", formatter_class=f,
                       help="attach the fused score")
    _add_common(p)
    p.add_argument("--params", required=True,
                   help=f"params file or preset ({', '.join(fusion.PRESETS)})")
    p.add_argument("--vba", default="vba", help="first score name")
    p.add_argument("--sba", default="sba", help="second score name")
    p.add_argument("--out", default="icc", help="name for the fused score")
    p.set_defaults(handler=cmd_fuse_apply)

    p = sub.add_parser("filter", formatter_class=f,
                       help="select records by top-k, threshold, or random sample")
    _add_common(p)
    p.add_argument("--method", choices=curate.METHODS, default="top_k",
                   help="selection method")
    p.add_argument("--score", help="score to rank by")
    p.add_argument("--k", type=int, help="selection size (top_k, random)")
    p.add_argument("--theta", type=float, help="threshold value")
    p.add_argument("--seed", type=int, help="seed (random)")
    p.add_argument("--spec", help="selection spec JSON file (supports prefilter "
                                  "nesting; overrides the flags above)")
    p.set_defaults(handler=cmd_filter)

    p = sub.add_parser("eval-corr", formatter_class=f,
                       help="correlate a score against human annotations")
    _add_common(p, output=False)
    p.add_argument("--score", required=True,
                   help="score name to evaluate (raw or standardized; the summary "
                        "reports which name was used)")
    p.add_argument("--annotations", required=True, help="annotation TSV file")
    p.set_defaults(handler=cmd_eval_corr)

    p = sub.add_parser("emit-distill", formatter_class=f,
                       help="write (caption, target) training pairs")
    _add_common(p)
    p.add_argument("--score", required=True, help="score to emit as the target")
    p.add_argument("--target", choices=("probability", "logit"), default="probability")
    p.set_defaults(handler=cmd_emit_distill)

    p = sub.add_parser("split", formatter_class=f,
                       help="seeded partition into fractional parts")
    _add_common(p)
    p.add_argument("--fractions", required=True, help="comma-separated, e.g. 0.8,0.2")
    p.add_argument("--seed", type=int, required=True)
    p.set_defaults(handler=cmd_split)

    p = sub.add_parser("shard", formatter_class=f,
                       help="split a corpus into fixed-size shards")
    _add_common(p, output=False)
    p.add_argument("--shard-size", type=int, required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--manifest", help="manifest path (default: <out-dir>/manifest.json)")
    p.set_defaults(handler=cmd_shard)

    return parser


def dispatch(argv: list[str]) -> CommandResult:
    """Run one command; returns its exit code and key=value summary."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return CommandResult(int(exc.code or 0), "")
    lines: list[str] = []
    try:
        args.handler(args, lines)
    except Exception as exc:
        lines.append(f"error={exc}")
        return CommandResult(1, "\n".join(lines))
    return CommandResult(0, "\n".join(lines))


def main() -> None:
    import sys

    result = dispatch(sys.argv[1:])
    if result.summary:
        print(result.summary)
    sys.exit(result.exit_code)


if __name__ == "__main__":
    main()
