"""Config-driven stage graph for the end-to-end curation run.

Each stage reads the previous stage's shards and writes its own shards plus a
``report.json`` into ``<output_dir>/<stage>/``. The report carries a
fingerprint of (stage, parameters, seed, input bytes); a stage whose report
fingerprint still matches is skipped on re-run, so deleting one stage's
directory re-runs only that stage and whatever its new output invalidates.
"""

from __future__ import annotations

import glob
import hashlib
import json
import logging
import math
import random
import shutil
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import yaml

from corpuskit import blending, cleanup, decontam, dedup, langid, planner, quality
from corpuskit.corpus import (
    CorpusFormatError,
    CorpusShard,
    CorpusStats,
    Document,
    corpus_stats,
    emit_shard,
    ingest_shard,
    read_corpus,
)
from corpuskit.hashing import MASK64, derive_seed

log = logging.getLogger(__name__)

STAGES = ("clean", "score", "quality_filter", "dedup", "decontaminate", "blend", "plan")
CORPUS_STAGES = STAGES[:-1]
DEPENDENCIES = (
    ("clean", "score"),
    ("score", "quality_filter"),
    ("dedup", "decontaminate"),
    ("decontaminate", "blend"),
    ("dedup", "blend"),
)


class ConfigError(ValueError):
    pass


class DataError(ValueError):
    pass


@dataclass
class TaskSpec:
    name: str
    path: Path
    n: int = decontam.DEFAULT_N


@dataclass
class PipelineConfig:
    stages: List[str]
    inputs: List[Path]
    output_dir: Path
    seed: int = 0
    priority: List[str] = field(default_factory=list)
    tasks: List[TaskSpec] = field(default_factory=list)
    params: Dict[str, dict] = field(default_factory=dict)
    jobs: int = 1

    def validate(self) -> None:
        unknown = [s for s in self.stages if s not in STAGES]
        if unknown:
            raise ConfigError(f"unknown stages: {unknown}")
        if len(set(self.stages)) != len(self.stages):
            raise ConfigError("a stage is listed more than once")
        pos = {s: i for i, s in enumerate(self.stages)}
        for before, after in DEPENDENCIES:
            if before in pos and after in pos and pos[before] > pos[after]:
                raise ConfigError(f"stage '{after}' must run after '{before}'")
        if not 0 <= self.seed <= MASK64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if self.jobs < 1:
            raise ConfigError("jobs must be at least 1")
        for path in self.inputs:
            if not path.is_file():
                raise ConfigError(f"input shard not found: {path}")
        if "decontaminate" in self.stages:
            if not self.tasks:
                raise ConfigError("decontaminate stage needs at least one task")
            for task in self.tasks:
                if not task.path.is_file():
                    raise ConfigError(f"task file for '{task.name}' not found: {task.path}")
                if task.n < 1:
                    raise ConfigError(f"task '{task.name}': n must be at least 1")
        if "score" in self.stages:
            sp = self.params.get("score", {})
            if "model" not in sp and "train" not in sp:
                raise ConfigError("score stage needs either 'model' or 'train'")
        if "plan" in self.stages and "config" not in self.params.get("plan", {}):
            raise ConfigError("plan stage needs 'config'")

    @classmethod
    def from_dict(cls, raw: dict, base_dir: Path = Path(".")) -> "PipelineConfig":
        if not isinstance(raw, dict):
            raise ConfigError("pipeline config must be a mapping")

        def resolve(p):
            p = Path(p)
            return p if p.is_absolute() else base_dir / p

        inputs = raw.get("inputs", [])
        if isinstance(inputs, str):
            inputs = [inputs]
        expanded = []
        for item in inputs:
            item = str(item)
            if any(ch in item for ch in "*?["):
                expanded.extend(Path(p) for p in sorted(glob.glob(str(resolve(item)))))
            else:
                expanded.append(resolve(item))
        tasks = []
        for t in raw.get("tasks", []) or []:
            if not isinstance(t, dict) or "name" not in t or "path" not in t:
                raise ConfigError("each task needs 'name' and 'path'")
            tasks.append(TaskSpec(name=str(t["name"]), path=resolve(t["path"]), n=int(t.get("n", decontam.DEFAULT_N))))
        params = {}
        for stage in STAGES:
            block = raw.get(stage) or {}
            if not isinstance(block, dict):
                raise ConfigError(f"parameters for '{stage}' must be a mapping")
            params[stage] = dict(block)
        for key in ("model", "config"):
            for stage in ("score", "plan"):
                if key in params[stage]:
                    params[stage][key] = str(resolve(params[stage][key]))
        train = params["score"].get("train")
        if isinstance(train, dict):
            for key in ("positives", "negatives"):
                if key in train:
                    train[key] = str(resolve(train[key]))
        if "output_dir" not in raw:
            raise ConfigError("output_dir is required")
        try:
            cfg = cls(
                stages=list(raw.get("stages", CORPUS_STAGES)),
                inputs=expanded,
                output_dir=resolve(raw["output_dir"]),
                seed=int(raw.get("seed", 0)),
                priority=[str(p) for p in raw.get("priority", []) or []],
                tasks=tasks,
                params=params,
                jobs=int(raw.get("jobs", 1)),
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None
        return cfg

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        path = Path(path)
        try:
            raw = yaml.safe_load(path.read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except yaml.YAMLError as exc:
            raise ConfigError(f"invalid YAML in {path}: {exc}") from None
        return cls.from_dict(raw or {}, base_dir=path.parent)


# ---------------------------------------------------------------------------
# stage bodies; each takes shards and returns (shards, drops, extra report)


class StageResult:
    def __init__(self, shards):
        self.shards = shards
        self.drops: Dict[str, Dict[str, int]] = {}
        self.char_delta: Dict[str, int] = {}
        self.report: dict = {}

    def drop(self, doc: Document, reason: str) -> None:
        per = self.drops.setdefault(doc.dataset, {})
        per[reason] = per.get(reason, 0) + 1

    def chars(self, dataset: str, delta: int) -> None:
        if delta:
            self.char_delta[dataset] = self.char_delta.get(dataset, 0) + delta

    def merge_part(self, drops, char_delta):
        for ds, per in drops.items():
            for reason, n in per.items():
                self.drops.setdefault(ds, {}).setdefault(reason, 0)
                self.drops[ds][reason] += n
        for ds, d in char_delta.items():
            self.chars(ds, d)


def _map_shards(fn, shards, jobs):
    if jobs > 1 and len(shards) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, shards))
    return [fn(s) for s in shards]


def _clean_shard(shard: CorpusShard, language: str):
    kept, drops, delta = [], {}, {}
    for doc in shard.records:
        fixed = doc.with_text(cleanup.fix_text(doc.text))
        verdict = langid.detect_language(fixed.text)
        decision = cleanup.apply_rules(fixed, verdict, language)
        if decision.keep:
            kept.append(fixed)
            delta[doc.dataset] = delta.get(doc.dataset, 0) + fixed.char_count - doc.char_count
        else:
            drops.setdefault(doc.dataset, {}).setdefault(decision.reason, 0)
            drops[doc.dataset][decision.reason] += 1
            delta[doc.dataset] = delta.get(doc.dataset, 0) - doc.char_count
    return CorpusShard(shard.path, tuple(kept)), drops, delta


def run_clean(shards, params, seed, jobs=1, workdir=None) -> StageResult:
    parts = _map_shards(partial(_clean_shard, language=params.get("language", "en")), shards, jobs)
    result = StageResult([p[0] for p in parts])
    for _, drops, delta in parts:
        result.merge_part(drops, delta)
    return result


def _read_labeled(path) -> List[Document]:
    try:
        return list(ingest_shard(path).records)
    except FileNotFoundError:
        raise ConfigError(f"training file not found: {path}") from None


def _score_shard(shard: CorpusShard, model, datasets):
    out = []
    for doc in shard.records:
        if datasets is None or doc.dataset in datasets:
            doc = doc.with_score(quality.score_document(model, doc))
        out.append(doc)
    return CorpusShard(shard.path, tuple(out))


def run_score(shards, params, seed, jobs=1, workdir=None) -> StageResult:
    report = {}
    if "model" in params:
        try:
            model = quality.QualityModel.load(params["model"])
        except FileNotFoundError:
            raise ConfigError(f"quality model not found: {params['model']}") from None
        report["model"] = Path(params["model"]).name
    else:
        train = params["train"]
        positives = _read_labeled(train["positives"])
        negatives = _read_labeled(train["negatives"])
        try:
            model, acc = quality.train_quality_classifier(
                positives,
                negatives,
                float(train.get("holdout_fraction", 0.1)),
                seed=derive_seed(seed, "score"),
                epochs=int(train.get("epochs", 5)),
            )
        except ValueError as exc:
            raise DataError(str(exc)) from None
        report["holdout_accuracy"] = acc
        if workdir is not None:
            model.save(Path(workdir) / "quality_model.bin")
    datasets = params.get("datasets")
    datasets = set(datasets) if datasets else None
    result = StageResult(_map_shards(partial(_score_shard, model=model, datasets=datasets), shards, jobs))
    result.report = report
    return result


def run_quality_filter(shards, params, seed, jobs=1, workdir=None) -> StageResult:
    pp = quality.ParetoFilterParams(
        alpha=float(params.get("alpha", 3.0)), rng_seed=derive_seed(seed, "quality_filter")
    )
    datasets = params.get("datasets")
    datasets = set(datasets) if datasets else None
    out_shards = []
    result = StageResult(out_shards)
    for shard in shards:
        kept = []
        for doc in shard.records:
            if datasets is not None and doc.dataset not in datasets:
                kept.append(doc)
                continue
            if doc.score is None:
                raise DataError(f"{shard.path}: doc {doc.doc_id} has no score; run the score stage first")
            if quality.pareto_keep(doc.score, pp, doc.doc_id):
                kept.append(doc)
            else:
                result.drop(doc, "quality")
                result.chars(doc.dataset, -doc.char_count)
        out_shards.append(CorpusShard(shard.path, tuple(kept)))
    return result


def _priority(priority, shards) -> List[str]:
    present = {d.dataset for s in shards for d in s.records}
    order = list(priority) if priority else [name for name, *_ in blending.DEFAULT_MIX]
    missing = sorted(present - set(order))
    if missing:
        raise ConfigError(f"datasets missing from priority order: {missing}")
    return order


def run_dedup(shards, params, seed, jobs=1, workdir=None, priority=()) -> StageResult:
    lsh = dedup.LshParams(
        bands=int(params.get("bands", 20)),
        rows=int(params.get("rows", 13)),
        jaccard_threshold=float(params.get("threshold", 0.8)),
        sample_iterations=int(params.get("sample_iterations", 11)),
        rng_seed=derive_seed(seed, "dedup"),
        similarity=params.get("similarity", "exact"),
    )
    order = _priority(priority, shards)
    texts, meta = {}, {}
    for shard in shards:
        for doc in shard.records:
            texts[doc.doc_id] = doc.text
            meta[doc.doc_id] = doc.dataset
    graph = dedup.find_duplicates(texts, meta, order, lsh)
    discard = graph.discarded
    out_shards = []
    result = StageResult(out_shards)
    for shard in shards:
        kept = []
        for doc in shard.records:
            if doc.doc_id in discard:
                result.drop(doc, "duplicate")
                result.chars(doc.dataset, -doc.char_count)
            else:
                kept.append(doc)
        out_shards.append(CorpusShard(shard.path, tuple(kept)))
    if workdir is not None:
        _write_jsonl(Path(workdir) / "duplicates.jsonl", graph.edge_records(lsh.rng_seed))
        _write_jsonl(Path(workdir) / "components.jsonl", graph.component_records(meta))
    result.report = {
        "edges": len(graph.edges),
        "components_with_duplicates": sum(1 for c in graph.components if len(c) > 1),
        "discarded": len(discard),
    }
    return result


def _fragment_id(doc_id: int, k: int) -> int:
    return doc_id if k == 0 else derive_seed(doc_id, "fragment", k)


def _decontam_shard(shard: CorpusShard, indexes):
    out, drops, delta = [], {}, {}
    report = decontam.DecontamReport()
    for doc in shard.records:
        outcome = decontam.split_document(doc, indexes)
        report.add(outcome)
        if outcome.removed:
            drops.setdefault(doc.dataset, {}).setdefault("contamination", 0)
            drops[doc.dataset]["contamination"] += 1
            delta[doc.dataset] = delta.get(doc.dataset, 0) - doc.char_count
            continue
        if outcome.splits == 0:
            out.append(doc)
            continue
        kept_chars = 0
        for k, frag in enumerate(outcome.fragments):
            out.append(Document(_fragment_id(doc.doc_id, k), doc.dataset, frag, doc.url, doc.score))
            kept_chars += len(frag)
        delta[doc.dataset] = delta.get(doc.dataset, 0) + kept_chars - doc.char_count
    return CorpusShard(shard.path, tuple(out)), drops, delta, report.to_dict()


def run_decontaminate(shards, params, seed, jobs=1, workdir=None, tasks=()) -> StageResult:
    indexes = [decontam.load_task_file(t.path, t.n, t.name) for t in tasks]
    parts = _map_shards(partial(_decontam_shard, indexes=indexes), shards, jobs)
    result = StageResult([p[0] for p in parts])
    totals = decontam.DecontamReport()
    for _, drops, delta, rep in parts:
        result.merge_part(drops, delta)
        for k, v in rep.items():
            setattr(totals, k, getattr(totals, k) + v)
    result.report = {"tasks": {i.task_name: {"n": i.n, "grams": len(i.grams)} for i in indexes}, **totals.to_dict()}
    return result


def run_blend(shards, params, seed, jobs=1, workdir=None) -> StageResult:
    by_dataset: Dict[str, List[int]] = {}
    for shard in shards:
        for doc in shard.records:
            by_dataset.setdefault(doc.dataset, []).append(doc.doc_id)
    weights = params.get("weights") or {name: pct for name, _, pct, _ in blending.DEFAULT_MIX}
    active = [(name, float(w)) for name, w in weights.items() if name in by_dataset and float(w) > 0]
    unweighted = sorted(set(by_dataset) - {n for n, _ in active})
    batch_size = int(params.get("batch_size", 1920))
    result = StageResult(shards)
    manifest = []
    if active:
        specs = [
            blending.DatasetSpec(name, w, tokens_available=len(by_dataset[name]))
            for name, w in blending.normalize_weights(active)
        ]
        total_docs = sum(len(by_dataset[s.name]) for s in specs)
        steps = int(params.get("steps", math.ceil(total_docs / batch_size)))
        cursors = [blending.DatasetCursor(list(by_dataset[s.name])) for s in specs]
        if params.get("shuffle"):
            for i, c in enumerate(cursors):
                random.Random(derive_seed(seed, "blend", specs[i].name)).shuffle(c.doc_ids)
        state = blending.BlendState.initial(len(specs))
        worst = 0.0
        for step in range(steps):
            counts, state = blending.next_batch_composition(state, specs, batch_size)
            worst = max(worst, max(abs(c) for c in state.credit))
            for spec, cursor, k in zip(specs, cursors, counts):
                for doc_id in cursor.take(k):
                    manifest.append({"step": step, "dataset": spec.name, "doc_id": doc_id})
        result.report = {
            "batch_size": batch_size,
            "steps": steps,
            "max_abs_deviation": worst,
            "datasets": {
                s.name: {
                    "weight": s.weight,
                    "documents": s.tokens_available,
                    "drawn": d,
                    "epochs": d / s.tokens_available,
                }
                for s, d in zip(specs, state.drawn)
            },
        }
    else:
        result.report = {"batch_size": batch_size, "steps": 0, "datasets": {}}
    result.report["unweighted_datasets"] = unweighted
    if workdir is not None:
        _write_jsonl(Path(workdir) / "blend_manifest.jsonl", manifest)
    return result


def run_plan(params, workdir=None) -> dict:
    path = Path(params["config"])
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read planner config {path}: {exc}") from None
    try:
        shape, par, topo, seconds = planner.read_planner_config(text)
        return planner.plan_report(shape, par, topo, seconds)
    except planner.PlannerConfigError as exc:
        raise ConfigError(str(exc)) from None


# ---------------------------------------------------------------------------
# orchestration


def _write_jsonl(path: Path, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True, ensure_ascii=False))
            fh.write("\n")


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")


def _digest_files(paths: Sequence[Path]) -> str:
    h = hashlib.sha256()
    for p in paths:
        h.update(Path(p).name.encode())
        h.update(Path(p).read_bytes())
    return h.hexdigest()


def _location_free(params: dict) -> dict:
    # file-valued params enter the fingerprint through their content digest
    out = {k: v for k, v in params.items() if k not in ("model", "config")}
    if isinstance(out.get("train"), dict):
        out["train"] = {k: v for k, v in out["train"].items() if k not in ("positives", "negatives")}
    return out


def _fingerprint(stage, params, seed, input_digest, extra=None) -> str:
    blob = json.dumps(
        {"stage": stage, "params": _location_free(params), "seed": seed, "input": input_digest, "extra": extra},
        sort_keys=True,
        default=str,
    )
    return hashlib.sha256(blob.encode()).hexdigest()


def shard_name(i: int) -> str:
    return f"shard-{i:05d}.jsonl"


def _stage_extra(cfg: PipelineConfig, stage: str):
    if stage == "dedup":
        return {"priority": cfg.priority}
    if stage == "decontaminate":
        return [
            {"name": t.name, "n": t.n, "sha256": hashlib.sha256(t.path.read_bytes()).hexdigest()} for t in cfg.tasks
        ]
    if stage == "score" and "model" in cfg.params.get("score", {}):
        return hashlib.sha256(Path(cfg.params["score"]["model"]).read_bytes()).hexdigest()
    if stage == "score" and "train" in cfg.params.get("score", {}):
        train = cfg.params["score"]["train"]
        return _digest_files([Path(train["positives"]), Path(train["negatives"])])
    if stage == "plan":
        return hashlib.sha256(Path(cfg.params["plan"]["config"]).read_bytes()).hexdigest()
    return None


def _load_stage(stage_dir: Path, n_shards: int) -> Optional[dict]:
    report_path = stage_dir / "report.json"
    if not report_path.is_file():
        return None
    try:
        report = json.loads(report_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError:
        return None
    if any(not (stage_dir / "shards" / shard_name(i)).is_file() for i in range(n_shards)):
        return None
    return report


def execute_pipeline(cfg: PipelineConfig):
    """Run the configured stages; returns (CorpusStats, {stage: report})."""
    cfg.validate()
    try:
        shards = read_corpus(cfg.inputs)
    except CorpusFormatError as exc:
        raise DataError(str(exc)) from None
    stats = corpus_stats(shards)
    out_root = cfg.output_dir
    out_root.mkdir(parents=True, exist_ok=True)
    current_files = [Path(p) for p in cfg.inputs]
    reports = {}

    for stage in cfg.stages:
        stage_dir = out_root / stage
        params = cfg.params.get(stage, {})
        if stage == "plan":
            fp = _fingerprint(stage, params, cfg.seed, None, _stage_extra(cfg, stage))
            existing = _load_stage(stage_dir, 0)
            if existing and existing.get("fingerprint") == fp:
                reports[stage] = existing
                continue
            if stage_dir.exists():
                shutil.rmtree(stage_dir)
            stage_dir.mkdir(parents=True)
            plan = run_plan(params, stage_dir)
            _write_json(stage_dir / "plan.json", plan)
            report = {"stage": stage, "fingerprint": fp, "plan": plan}
            _write_json(stage_dir / "report.json", report)
            reports[stage] = report
            continue

        fp = _fingerprint(stage, params, cfg.seed, _digest_files(current_files), _stage_extra(cfg, stage))
        existing = _load_stage(stage_dir, len(shards))
        if existing and existing.get("fingerprint") == fp:
            log.info("stage %s up to date, reusing %s", stage, stage_dir)
            report = existing
            shard_paths = [stage_dir / "shards" / shard_name(i) for i in range(len(shards))]
            shards = [ingest_shard(p, i) for i, p in enumerate(shard_paths)]
        else:
            log.info("running stage %s", stage)
            if stage_dir.exists():
                shutil.rmtree(stage_dir)
            (stage_dir / "shards").mkdir(parents=True)
            runner = STAGE_RUNNERS[stage]
            kwargs = {}
            if stage == "dedup":
                kwargs["priority"] = cfg.priority
            if stage == "decontaminate":
                kwargs["tasks"] = cfg.tasks
            result = runner(shards, params, cfg.seed, cfg.jobs, stage_dir, **kwargs)
            shard_paths = []
            for i, shard in enumerate(result.shards):
                p = stage_dir / "shards" / shard_name(i)
                emit_shard(shard, p)
                shard_paths.append(p)
            shards = [CorpusShard(str(p), s.records) for p, s in zip(shard_paths, result.shards)]
            report = {
                "stage": stage,
                "fingerprint": fp,
                "drops": {ds: dict(sorted(v.items())) for ds, v in sorted(result.drops.items())},
                "char_delta": dict(sorted(result.char_delta.items())),
                "output_docs": sum(len(s) for s in result.shards),
                **result.report,
            }
            # report last: its presence marks the stage complete
            _write_json(stage_dir / "report.json", report)
        _apply_report(stats, report)
        reports[stage] = report
        current_files = shard_paths

    _write_json(out_root / "stats.json", stats.to_dict())
    return stats, reports


def _apply_report(stats: CorpusStats, report: dict) -> None:
    for ds, per in report.get("drops", {}).items():
        for reason, n in per.items():
            stats.drop_count(ds, reason, n)
    for ds, delta in report.get("char_delta", {}).items():
        stats.adjust_chars(ds, delta)


STAGE_RUNNERS = {
    "clean": run_clean,
    "score": run_score,
    "quality_filter": run_quality_filter,
    "dedup": run_dedup,
    "decontaminate": run_decontaminate,
    "blend": run_blend,
}
