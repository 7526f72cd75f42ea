"""Command line entry point: ``corpuskit <subcommand>``.

Exit codes: 0 success, 1 configuration error, 2 data error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from corpuskit import pipeline, planner, quality
from corpuskit.corpus import CorpusFormatError, corpus_stats, emit_shard, ingest_shard, read_corpus

EXIT_OK, EXIT_CONFIG, EXIT_DATA = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _common(p, inputs=True, output=True):
    p.add_argument("--config", type=Path, help="YAML file whose block for this stage supplies defaults")
    p.add_argument("--seed", type=int, default=None, help="global seed (unsigned 64-bit)")
    p.add_argument("--jobs", type=int, default=1, help="worker processes for per-shard stages")
    p.add_argument("--json", action="store_true", help="print the report as JSON")
    if inputs:
        p.add_argument("-i", "--input", nargs="+", type=Path, required=True, help="input JSONL shards")
    if output:
        p.add_argument("-o", "--output", type=Path, required=True, help="output directory")


def build_parser():
    parser = _Parser(prog="corpuskit", description="Corpus curation and training capacity planning.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("run", help="run the full pipeline from a config")
    p.add_argument("--config", type=Path, required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--jobs", type=int, default=None)
    p.add_argument("--json", action="store_true")

    p = sub.add_parser("stats", help="per-dataset document and character counts")
    p.add_argument("input", nargs="+", type=Path)
    p.add_argument("--json", action="store_true")
    p.add_argument("-o", "--output", type=Path, help="also write the JSON report here")

    p = sub.add_parser("clean", help="unicode repair, language id and length rules")
    _common(p)
    p.add_argument("--language", default=None)

    p = sub.add_parser("train", help="train the quality classifier")
    p.add_argument("--positives", type=Path, required=True)
    p.add_argument("--negatives", type=Path, required=True)
    p.add_argument("--model-out", type=Path, required=True)
    p.add_argument("--holdout", type=float, default=0.1)
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--json", action="store_true")

    p = sub.add_parser("score", help="attach quality scores")
    _common(p)
    p.add_argument("--model", type=Path)
    p.add_argument("--datasets", nargs="*")

    p = sub.add_parser("filter", help="Pareto quality filtering of scored documents")
    _common(p)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--datasets", nargs="*")

    p = sub.add_parser("dedup", help="MinHash/LSH fuzzy deduplication")
    _common(p)
    p.add_argument("--priority", help="comma-separated dataset names, best first")
    p.add_argument("--bands", type=int)
    p.add_argument("--rows", type=int)
    p.add_argument("--threshold", type=float)
    p.add_argument("--sample-iterations", type=int)

    p = sub.add_parser("decontaminate", help="remove downstream task n-grams")
    _common(p)
    p.add_argument("--task", action="append", default=[], help="name=path[,n=13]; repeatable")

    p = sub.add_parser("blend", help="blend datasets by mixing weight")
    _common(p)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--weights", help="comma-separated name=weight pairs")

    p = sub.add_parser("plan", help="memory, bubble and throughput report")
    p.add_argument("--config", type=Path, required=True, help="INI planner config")
    p.add_argument("--json", action="store_true")
    return parser


def parse_task(spec: str) -> pipeline.TaskSpec:
    head, *rest = spec.split(",")
    if "=" not in head:
        raise pipeline.ConfigError(f"--task expects name=path[,n=N], got {spec!r}")
    name, path = head.split("=", 1)
    n = 13
    for item in rest:
        key, _, value = item.partition("=")
        if key != "n":
            raise pipeline.ConfigError(f"unknown task option {key!r} in {spec!r}")
        try:
            n = int(value)
        except ValueError:
            raise pipeline.ConfigError(f"task n must be an integer in {spec!r}") from None
    return pipeline.TaskSpec(name=name, path=Path(path), n=n)


def _stage_params(args, stage):
    params = {}
    if getattr(args, "config", None):
        raw = pipeline.yaml.safe_load(Path(args.config).read_text(encoding="utf-8")) or {}
        params.update(raw.get(stage) or {})
    return params


def _run_single(args, stage, params, **kwargs):
    seed = args.seed or 0
    shards = read_corpus(args.input)
    out = args.output
    (out / "shards").mkdir(parents=True, exist_ok=True)
    result = pipeline.STAGE_RUNNERS[stage](shards, params, seed, args.jobs, out, **kwargs)
    for i, shard in enumerate(result.shards):
        emit_shard(shard, out / "shards" / pipeline.shard_name(i))
    report = {
        "stage": stage,
        "drops": result.drops,
        "char_delta": result.char_delta,
        "output_docs": sum(len(s) for s in result.shards),
        **result.report,
    }
    pipeline._write_json(out / "report.json", report)
    return report


def _emit(report, as_json):
    if as_json:
        print(json.dumps(report, indent=2, sort_keys=True))
        return
    for key, value in report.items():
        if isinstance(value, dict):
            print(f"{key}:")
            for k, v in value.items():
                print(f"  {k}: {v}")
        else:
            print(f"{key}: {value}")


def _plan_text(report):
    mem = report["memory"]
    lines = [
        f"model state (total):       {mem['model_state_bytes_total'] / 1e12:.2f} TB",
        f"model state (per GPU):     {mem['model_state_bytes_per_gpu'] / 1e9:.2f} GB",
        f"activations (full batch):  {mem['activation_bytes_full_batch'] / 1e12:.2f} TB",
        f"activations (micro-batch): {mem['activation_bytes_per_micro_batch'] / 1e9:.2f} GB",
        f"pipeline efficiency:       {report['pipeline_efficiency']:.4f}",
        f"weight init std:           {report['weight_init_std']:.3e}",
    ]
    rm = report["rank_map"]
    lines.append(
        f"rank map: {rm['ranks']} ranks, {rm['tp_groups_intra_node']}/{rm['tp_groups']} TP groups intra-node, "
        f"DP groups span <= {rm['dp_max_nodes_spanned']} nodes, replica = {rm['replica_gpus']} GPUs"
    )
    if "throughput" in report:
        tp = report["throughput"]
        lines.append(
            f"throughput: {tp['tflops_per_gpu']:.1f} TFLOP/s per GPU ({100 * tp['fraction_of_peak']:.1f}% of peak)"
        )
    return "\n".join(lines)


def dispatch(args) -> int:
    cmd = args.command
    if cmd == "run":
        cfg = pipeline.PipelineConfig.load(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        if args.jobs is not None:
            cfg.jobs = args.jobs
        stats, reports = pipeline.execute_pipeline(cfg)
        _emit({"stats": stats.to_dict(), "stages": reports} if args.json else stats.to_dict()["datasets"], args.json)
        return EXIT_OK
    if cmd == "stats":
        stats = corpus_stats(read_corpus(args.input))
        if args.output:
            args.output.write_text(stats.to_json() + "\n", encoding="utf-8")
        _emit(stats.to_dict(), True)
        return EXIT_OK
    if cmd == "plan":
        try:
            text = args.config.read_text(encoding="utf-8")
        except OSError as exc:
            raise pipeline.ConfigError(f"cannot read {args.config}: {exc}") from None
        shape, par, topo, seconds = planner.read_planner_config(text)
        report = planner.plan_report(shape, par, topo, seconds)
        print(json.dumps(report, indent=2, sort_keys=True) if args.json else _plan_text(report))
        return EXIT_OK
    if cmd == "train":
        pos = list(ingest_shard(args.positives).records)
        neg = list(ingest_shard(args.negatives).records)
        try:
            model, acc = quality.train_quality_classifier(pos, neg, args.holdout, seed=args.seed, epochs=args.epochs)
        except ValueError as exc:
            raise pipeline.DataError(str(exc)) from None
        model.save(args.model_out)
        _emit({"model": str(args.model_out), "holdout_accuracy": acc}, args.json)
        return EXIT_OK

    if args.jobs < 1:
        raise pipeline.ConfigError("--jobs must be at least 1")
    stage = {"filter": "quality_filter"}.get(cmd, cmd)
    params = _stage_params(args, stage)
    kwargs = {}
    if cmd == "clean" and args.language:
        params["language"] = args.language
    elif cmd == "score":
        if args.model:
            params["model"] = str(args.model)
        if "model" not in params:
            raise pipeline.ConfigError("score needs --model")
        if args.datasets:
            params["datasets"] = args.datasets
    elif cmd == "filter":
        if args.alpha is not None:
            params["alpha"] = args.alpha
        if args.datasets:
            params["datasets"] = args.datasets
    elif cmd == "dedup":
        for key in ("bands", "rows", "threshold", "sample_iterations"):
            if getattr(args, key) is not None:
                params[key] = getattr(args, key)
        kwargs["priority"] = [p.strip() for p in args.priority.split(",")] if args.priority else []
    elif cmd == "decontaminate":
        tasks = [parse_task(t) for t in args.task]
        if not tasks:
            raise pipeline.ConfigError("decontaminate needs at least one --task")
        for t in tasks:
            if not t.path.is_file():
                raise pipeline.ConfigError(f"task file for '{t.name}' not found: {t.path}")
        kwargs["tasks"] = tasks
    elif cmd == "blend":
        if args.batch_size is not None:
            params["batch_size"] = args.batch_size
        if args.steps is not None:
            params["steps"] = args.steps
        if args.weights:
            weights = {}
            for item in args.weights.split(","):
                name, _, value = item.rpartition("=")
                try:
                    weights[name.strip()] = float(value)
                except ValueError:
                    raise pipeline.ConfigError(f"bad weight {item!r}") from None
            params["weights"] = weights
    report = _run_single(args, stage, params, **kwargs)
    _emit(report, args.json)
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return dispatch(args)
    except (pipeline.ConfigError, planner.PlannerConfigError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (pipeline.DataError, CorpusFormatError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FileNotFoundError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
