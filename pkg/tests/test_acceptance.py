"""Acceptance criteria, one test each, each printing a single PASS/FAIL line."""

import math
import random
import shutil
import time

import numpy as np
import pytest

from corpuskit import blending, planner
from corpuskit.dedup import (
    FeatureSet,
    LshParams,
    band_keys,
    collision_probability,
    estimate_jaccard,
    find_duplicates,
    minhash_signatures,
)
from corpuskit.decontam import build_task_ngram_index, match_regions, split_document
from corpuskit.hashing import NUM_FEATURES, hash_text
from corpuskit.pipeline import PipelineConfig, execute_pipeline
from corpuskit.quality import ParetoFilterParams, pareto_keep
from oracles import naive_split
from synth import write_pipeline_fixture

pytestmark = pytest.mark.acceptance


@pytest.fixture
def verdict(capsys):
    def report(number, title, ok, elapsed, detail=""):
        line = f"[{'PASS' if ok else 'FAIL'}] AC-{number:02d} {title}: {detail} ({elapsed:.2f} s)"
        with capsys.disabled():
            print("\n" + line)
        assert ok, line

    return report


def test_ac01_memory_figures(verdict):
    t = time.perf_counter()
    state = planner.model_state_bytes(530e9)
    act = planner.activation_bytes(1920, 105, 2048, 20480)
    micro = planner.activation_bytes(1, 105, 2048, 20480)
    std = planner.weight_init_std(20480)
    elapsed = time.perf_counter() - t
    ok = (
        state == 1.06e13
        and abs(act / 1.6911e13 - 1) <= 5e-4
        and abs(micro / 8.808e9 - 1) <= 5e-4
        and abs(std / 4.03e-3 - 1) <= 0.01
        and elapsed < 1
    )
    verdict(1, "planner memory", ok, elapsed,
            f"state={state:.4g} act={act:.5g} micro={micro:.4g} std={std:.4g}")


def test_ac02_throughput(verdict):
    t = time.perf_counter()
    shape = planner.ModelShape(vocab=50257)
    got = []
    for nodes, seconds in ((280, 60.1), (350, 50.2), (420, 44.4)):
        dp = nodes // 35
        par = planner.ParallelConfig(data=dp, micro_batches=1920 // dp)
        got.append(planner.estimated_tflops_per_gpu(shape, par, planner.ClusterTopology(nodes=nodes), seconds))
    elapsed = time.perf_counter() - t
    ok = all(abs(g - r) / r <= 0.02 for g, r in zip(got, (126, 121, 113))) and elapsed < 1
    verdict(2, "throughput rows", ok, elapsed, " / ".join(f"{g:.2f}" for g in got) + " TFLOP/s vs 126/121/113")


def test_ac03_pipeline_efficiency(verdict):
    t = time.perf_counter()
    e4 = planner.pipeline_efficiency(4 * 35, 35)
    e8 = planner.pipeline_efficiency(8 * 35, 35)
    elapsed = time.perf_counter() - t
    ok = round(e4, 4) == 0.8046 and round(e8, 4) == 0.8917 and abs(e4 - 0.81) <= 0.015 and abs(e8 - 0.90) <= 0.015
    verdict(3, "pipeline efficiency", ok, elapsed, f"{e4:.4f} {e8:.4f} vs 0.81 0.90")


def exact_pair_sets(rng, s, union=20):
    inter = round(s * union)
    private = (union - inter) // 2
    assert inter + 2 * private == union and inter / union == s
    ids = rng.choice(NUM_FEATURES, union, replace=False)
    common = ids[:inter]
    return (FeatureSet.from_ids(np.concatenate([common, ids[inter : inter + private]])),
            FeatureSet.from_ids(np.concatenate([common, ids[inter + private :]])))


def test_ac04_lsh_s_curve(verdict):
    t = time.perf_counter()
    params = LshParams(rng_seed=4)
    rng = np.random.default_rng(4)
    trials = 10_000
    rows = []
    ok = True
    for s in (0.5, 0.7, 0.8, 0.9):
        sets = []
        for _ in range(trials):
            sets.extend(exact_pair_sets(rng, s))
        sigs = minhash_signatures(sets, params)
        hits = 0
        for k in range(trials):
            ka, kb = band_keys(sigs[2 * k], params), band_keys(sigs[2 * k + 1], params)
            hits += any(x == y for x, y in zip(ka, kb))
        freq = hits / trials
        expect = collision_probability(s, params)
        ok &= abs(expect - (1 - (1 - s**13) ** 20)) < 1e-12 and abs(freq - expect) <= 0.02
        rows.append(f"s={s}: {freq:.4f}/{expect:.4f}")
    elapsed = time.perf_counter() - t
    verdict(4, "LSH S-curve", ok and elapsed < 30, elapsed, ", ".join(rows))


class UniqueFeatureTokens:
    """Word tokens whose hashed feature ids never collide with earlier ones."""

    def __init__(self, seed):
        self.count = seed * 10_000_000
        self.used = set()

    def __call__(self):
        while True:
            self.count += 1
            tok = f"t{self.count}z"
            fid = hash_text(tok) & (NUM_FEATURES - 1)
            if fid not in self.used:
                self.used.add(fid)
                return tok


def planted_corpus(seed=0, n_docs=10_000, near=500, far=1000, union=60):
    rng = random.Random(seed)
    tok = UniqueFeatureTokens(seed)

    def pair(j_num, j_den):
        inter = union * j_num // j_den
        priv = (union - inter) // 2
        common = [tok() for _ in range(inter)]
        a = common + [tok() for _ in range(priv)]
        b = common + [tok() for _ in range(priv)]
        rng.shuffle(a)
        rng.shuffle(b)
        return " ".join(a), " ".join(b)

    texts = []
    near_idx, far_idx = [], []
    for _ in range(near):
        near_idx.append((len(texts), len(texts) + 1))
        texts.extend(pair(9, 10))
    for _ in range(far):
        far_idx.append((len(texts), len(texts) + 1))
        texts.extend(pair(3, 10))
    while len(texts) < n_docs:
        texts.append(" ".join(tok() for _ in range(union)))
    ids = rng.sample(range(1, 10 * n_docs), n_docs)
    by_id = {ids[i]: texts[i] for i in range(n_docs)}
    near_pairs = [(ids[a], ids[b]) for a, b in near_idx]
    far_pairs = [(ids[a], ids[b]) for a, b in far_idx]
    meta = {d: ("Books3", "Wikipedia", "CC-2020-50")[d % 3] for d in by_id}
    return by_id, meta, near_pairs, far_pairs


def test_ac05_dedup_end_to_end(verdict):
    from corpuskit.dedup import jaccard, vectorize

    t = time.perf_counter()
    texts, meta, near, far = planted_corpus()
    assert all(jaccard(vectorize(texts[a]), vectorize(texts[b])) == 0.9 for a, b in near[:50])
    assert all(jaccard(vectorize(texts[a]), vectorize(texts[b])) == 0.3 for a, b in far[:50])
    priority = ["Books3", "Wikipedia", "CC-2020-50"]
    params = LshParams(rng_seed=11)
    graphs = [find_duplicates(texts, meta, priority, params) for _ in range(3)]
    elapsed = time.perf_counter() - t
    g = graphs[0]
    comp = g.component_of()
    recall = sum(comp[a] == comp[b] for a, b in near) / len(near)
    false_merges = sum(comp[a] == comp[b] for a, b in far)
    deterministic = all(
        (x.edges, x.components, x.representatives) == (g.edges, g.components, g.representatives) for x in graphs[1:]
    )
    ok = recall >= 0.99 and false_merges == 0 and deterministic and elapsed < 120
    verdict(5, "dedup end-to-end", ok, elapsed,
            f"recall={recall:.3f} (bound {collision_probability(0.9, params):.3f}) false_merges={false_merges} "
            f"deterministic={deterministic}")


def test_ac06_minhash_estimator(verdict):
    t = time.perf_counter()
    rng = np.random.default_rng(6)
    estimates = []
    for seed in range(1000):
        a, b = exact_pair_sets(rng, 0.5, union=200)
        sig = minhash_signatures([a, b], LshParams(rng_seed=seed))
        estimates.append(estimate_jaccard(sig[0], sig[1]))
    est = np.array(estimates)
    mean = est.mean()
    within = np.mean(np.abs(est - 0.5) <= 0.1)
    elapsed = time.perf_counter() - t
    verdict(6, "MinHash estimator", abs(mean - 0.5) <= 0.01 and within >= 0.95, elapsed,
            f"mean={mean:.4f} within_0.1={within:.3f}")


def test_ac07_pareto_filter(verdict):
    t = time.perf_counter()
    params = ParetoFilterParams(alpha=3.0, rng_seed=7)
    rng = np.random.default_rng(7)
    scores = rng.random(100_000)
    rate = np.mean([pareto_keep(float(s), params, i) for i, s in enumerate(scores)])
    ones = np.mean([pareto_keep(1.0, params, i) for i in range(100_000)])
    elapsed = time.perf_counter() - t
    verdict(7, "Pareto filter", abs(rate - 0.375) <= 0.01 and ones == 1.0, elapsed,
            f"uniform keep={rate:.4f} score-1 keep={ones:.3f}")


def test_ac08_decontamination(verdict):
    t = time.perf_counter()
    rng = random.Random(8)

    def word():
        return "".join(rng.choice("abcdefgh") for _ in range(rng.randint(1, 6)))

    def filler(chars):
        out, n = [], 0
        while n < chars:
            w = word() + rng.choice([" ", " ", ", ", ". ", "\n"])
            out.append(w)
            n += len(w)
        return "".join(out)

    tasks = ["a b c", "dd ee", "fff ggg hh", "abc def gh"]
    n = 2
    index = build_task_ngram_index(tasks, n)
    oracle_ok = props_ok = True
    for _ in range(1000):
        parts, target = [], rng.randint(50, 1900)
        while sum(map(len, parts)) < target:
            parts.append(" " + rng.choice(tasks).upper() + " " if rng.random() < 0.03 else filler(rng.randint(20, 300)))
        text = "".join(parts)[:2000]
        out = split_document(text, index)
        oracle_ok &= naive_split(text, tasks, n) == (out.fragments, out.splits, out.removed, out.trim_events)
        for frag in out.fragments:
            props_ok &= not match_regions(frag, [index]) and (len(frag) >= 200 or out.splits == 0)
        props_ok &= all(a[1] <= b[0] for a, b in zip(out.spans, out.spans[1:]))
    grams = [" ".join(f"k{j}x{i}" for i in range(13)) for j in range(11)]
    big = "".join(filler(500) + g + " " for g in grams) + filler(500)
    eleven = split_document(big, build_task_ngram_index(grams, 13))
    removed_ok = eleven.removed and eleven.fragments == [] and eleven.splits == 11
    elapsed = time.perf_counter() - t
    ok = oracle_ok and props_ok and removed_ok and elapsed < 30
    verdict(8, "decontamination", ok, elapsed,
            f"oracle={oracle_ok} properties={props_ok} 11-match removed={removed_ok}")


def test_ac09_blending(verdict):
    t = time.perf_counter()
    specs = blending.default_mix_specs()
    assert len(specs) == 15
    weights = [s.weight for s in specs]
    drawn = [0] * 15
    worst, sums_ok = 0.0, True
    for step, counts in enumerate(blending.blend_stream(specs, 1920, 10_000), 1):
        sums_ok &= sum(counts) == 1920
        total = 1920 * step
        drawn = [d + c for d, c in zip(drawn, counts)]
        worst = max(worst, max(abs(d - w * total) for d, w in zip(drawn, weights)))
    elapsed = time.perf_counter() - t
    verdict(9, "blending", sums_ok and worst < 1 and elapsed < 10, elapsed,
            f"max deviation={worst:.4f} samples, sums exact={sums_ok}")


def test_ac10_schedules(verdict):
    t = time.perf_counter()
    left = planner.lr_at(math.nextafter(1e9, 0))
    right = planner.lr_at(1e9)
    floor_ok = all(abs(planner.lr_at(x) - 5.0e-6) <= 1e-18 for x in (341e9, 342e9, 500e9, 1e12))
    levels = sorted({planner.batch_size_at(k * 1e6) for k in range(13_000)})
    elapsed = time.perf_counter() - t
    ok = (abs(left - 5.0e-5) <= 1e-12 and abs(right - 5.0e-5) <= 1e-12 and floor_ok
          and levels[0] == 32 and levels[-1] == 1920 and len(levels) == 60)
    verdict(10, "schedules", ok, elapsed,
            f"lr(1e9-)={left:.6g} lr(1e9)={right:.6g} floor={floor_ok} batch levels={len(levels)} "
            f"[{levels[0]}..{levels[-1]}]")


def test_ac11_orchestrator_determinism(verdict, tmp_path):
    def snapshot(root):
        return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}

    t = time.perf_counter()
    cfg_a = write_pipeline_fixture(tmp_path / "a", n_docs=1000, seed=0)
    cfg_b = write_pipeline_fixture(tmp_path / "b", n_docs=1000, seed=0)
    execute_pipeline(PipelineConfig.load(cfg_a))
    execute_pipeline(PipelineConfig.load(cfg_b))
    out_a = snapshot(tmp_path / "a" / "out")
    identical = out_a == snapshot(tmp_path / "b" / "out")
    shutil.rmtree(tmp_path / "a" / "out" / "decontaminate")
    execute_pipeline(PipelineConfig.load(cfg_a))
    resumed = snapshot(tmp_path / "a" / "out") == out_a
    elapsed = time.perf_counter() - t
    verdict(11, "orchestrator determinism", identical and resumed, elapsed,
            f"rerun identical={identical} resume identical={resumed} files={len(out_a)}")
