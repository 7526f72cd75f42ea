"""Closed-form capacity planning for 3D-parallel transformer training.

Memory: 20 bytes of model state per parameter under mixed-precision Adam
(2+4 weights, 2+4 gradients, 4+4 optimizer moments), and
``batch * layers * seq * hidden * 2`` bytes of boundary activations.
Pipeline bubble efficiency is ``MB / (MB + PP - 1)``. Throughput uses the
recompute-inclusive transformer FLOP count
``96 B s L h^2 (1 + s / 6h + V / 16Lh)``.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Tuple

BYTES_PER_PARAM = 2 + 4 + 2 + 4 + 4 + 4
ACTIVATION_BYTES_PER_VALUE = 2
A100_PEAK_FLOPS = 312e12
GPT2_VOCAB = 50257


class PlannerConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelShape:
    parameters: float = 530e9
    layers: int = 105
    hidden: int = 20480
    heads: int = 128
    seq_len: int = 2048
    vocab: int = GPT2_VOCAB

    def __post_init__(self):
        for name in ("parameters", "layers", "hidden", "heads", "seq_len", "vocab"):
            if not getattr(self, name) > 0:
                raise PlannerConfigError(f"model.{name} must be positive")


@dataclass(frozen=True)
class ParallelConfig:
    tensor: int = 8
    pipeline: int = 35
    data: int = 8
    batch: int = 1920
    micro_batches: int = 240

    def __post_init__(self):
        for name in ("tensor", "pipeline", "data", "micro_batches", "batch"):
            if getattr(self, name) < 1:
                raise PlannerConfigError(f"parallel.{name} must be at least 1")
        if self.batch % (self.micro_batches * self.data):
            raise PlannerConfigError(
                f"batch {self.batch} not divisible by micro_batches x data = {self.micro_batches * self.data}"
            )

    @property
    def world_size(self) -> int:
        return self.tensor * self.pipeline * self.data

    @property
    def micro_batch_size(self) -> int:
        return self.batch // (self.micro_batches * self.data)


@dataclass(frozen=True)
class ClusterTopology:
    nodes: int = 280
    gpus_per_node: int = 8
    intra_node_bw: float = 600e9
    inter_node_bw: float = 200e9
    peak_flops_per_gpu: float = A100_PEAK_FLOPS

    def __post_init__(self):
        for name in ("nodes", "gpus_per_node", "intra_node_bw", "inter_node_bw", "peak_flops_per_gpu"):
            if not getattr(self, name) > 0:
                raise PlannerConfigError(f"cluster.{name} must be positive")

    @property
    def gpus(self) -> int:
        return self.nodes * self.gpus_per_node


@dataclass(frozen=True)
class TrainingRecipe:
    lr_peak: float = 5.0e-5
    warmup_tokens: float = 1e9
    decay_tokens: float = 3.4e11
    decay_floor_fraction: float = 0.1
    batch_start: int = 32
    batch_step: int = 32
    batch_final: int = 1920
    ramp_tokens: float = 1.2e10
    adam_beta1: float = 0.9
    adam_beta2: float = 0.95
    adam_eps: float = 1e-8
    grad_clip: float = 1.0
    weight_decay: float = 0.1


def model_state_bytes(parameters: float) -> float:
    if parameters < 0:
        raise ValueError("parameter count must be non-negative")
    return BYTES_PER_PARAM * parameters


def activation_bytes(batch: int, layers: int, seq_len: int, hidden: int) -> float:
    return batch * layers * seq_len * hidden * ACTIVATION_BYTES_PER_VALUE


def pipeline_efficiency(micro_batches: int, stages: int) -> float:
    if micro_batches < 1 or stages < 1:
        raise ValueError("micro_batches and stages must be at least 1")
    return micro_batches / (micro_batches + stages - 1)


def flops_per_iteration(shape: ModelShape, batch: int) -> float:
    B, s, L, h, V = batch, shape.seq_len, shape.layers, shape.hidden, shape.vocab
    return 96.0 * B * s * L * h * h * (1.0 + s / (6.0 * h) + V / (16.0 * L * h))


def estimated_tflops_per_gpu(
    shape: ModelShape, parallel: ParallelConfig, topo: ClusterTopology, iteration_seconds: float
) -> float:
    if iteration_seconds <= 0:
        raise ValueError("iteration_seconds must be positive")
    return flops_per_iteration(shape, parallel.batch) / (topo.gpus * iteration_seconds * 1e12)


def weight_init_std(hidden: float) -> float:
    if hidden <= 0:
        raise ValueError("hidden size must be positive")
    return math.sqrt(1.0 / (3.0 * hidden))


def lr_at(tokens_seen: float, recipe: TrainingRecipe = TrainingRecipe()) -> float:
    """Linear warmup from 0, then cosine decay to the floor, then flat."""
    if tokens_seen < 0:
        raise ValueError("tokens_seen must be non-negative")
    peak = recipe.lr_peak
    if tokens_seen < recipe.warmup_tokens:
        return peak * tokens_seen / recipe.warmup_tokens
    floor = recipe.decay_floor_fraction * peak
    progress = min((tokens_seen - recipe.warmup_tokens) / recipe.decay_tokens, 1.0)
    return floor + (peak - floor) * 0.5 * (1.0 + math.cos(math.pi * progress))


def batch_size_at(tokens_seen: float, recipe: TrainingRecipe = TrainingRecipe()) -> int:
    """Stepwise ramp with one +batch_step increment per equal token interval."""
    if tokens_seen < 0:
        raise ValueError("tokens_seen must be non-negative")
    increments = (recipe.batch_final - recipe.batch_start) // recipe.batch_step
    if tokens_seen >= recipe.ramp_tokens:
        return recipe.batch_final
    level = math.floor(increments * tokens_seen / recipe.ramp_tokens)
    return min(recipe.batch_start + recipe.batch_step * level, recipe.batch_final)


@dataclass(frozen=True)
class RankPlacement:
    rank: int
    dp: int
    pp: int
    tp: int
    node: int
    local_gpu: int


@dataclass
class RankGrid:
    topo: ClusterTopology
    parallel: ParallelConfig
    placements: List[RankPlacement] = field(default_factory=list)

    def coordinate(self, rank: int) -> Tuple[int, int, int]:
        p = self.placements[rank]
        return p.dp, p.pp, p.tp

    def rank_of(self, dp: int, pp: int, tp: int) -> int:
        par = self.parallel
        return (pp * par.data + dp) * par.tensor + tp

    def groups(self, axis: str) -> Dict[tuple, List[RankPlacement]]:
        others = [a for a in ("dp", "pp", "tp") if a != axis]
        out: Dict[tuple, List[RankPlacement]] = {}
        for p in self.placements:
            out.setdefault(tuple(getattr(p, a) for a in others), []).append(p)
        return out

    def nodes_spanned(self, axis: str) -> List[int]:
        return [len({p.node for p in members}) for members in self.groups(axis).values()]

    def summary(self) -> dict:
        tp_spans = self.nodes_spanned("tp")
        dp_spans = self.nodes_spanned("dp")
        pp_spans = self.nodes_spanned("pp")
        return {
            "ranks": len(self.placements),
            "tp_groups": len(tp_spans),
            "tp_groups_intra_node": sum(1 for s in tp_spans if s == 1),
            "dp_groups": len(dp_spans),
            "dp_max_nodes_spanned": max(dp_spans),
            "pp_groups": len(pp_spans),
            "pp_max_nodes_spanned": max(pp_spans),
            "replica_gpus": self.parallel.tensor * self.parallel.pipeline,
        }


def map_topology(topo: ClusterTopology, parallel: ParallelConfig) -> RankGrid:
    """Place ranks with TP fastest-varying, then DP, then PP.

    TP groups therefore fill whole nodes, and each DP group occupies a
    contiguous block of ``ceil(DP * TP / gpus_per_node)`` nodes.
    """
    tp, pp, dp = parallel.tensor, parallel.pipeline, parallel.data
    if tp > topo.gpus_per_node:
        raise PlannerConfigError(f"TP={tp} exceeds gpus_per_node={topo.gpus_per_node}")
    if topo.gpus_per_node % tp:
        raise PlannerConfigError(f"gpus_per_node={topo.gpus_per_node} not divisible by TP={tp}")
    if tp * pp * dp != topo.gpus:
        raise PlannerConfigError(
            f"TP x PP x DP = {tp * pp * dp} does not match nodes x gpus_per_node = {topo.gpus}"
        )
    placements = []
    for rank in range(topo.gpus):
        t = rank % tp
        d = (rank // tp) % dp
        p = rank // (tp * dp)
        placements.append(RankPlacement(rank, d, p, t, rank // topo.gpus_per_node, rank % topo.gpus_per_node))
    return RankGrid(topo=topo, parallel=parallel, placements=placements)


def plan_report(
    shape: ModelShape,
    parallel: ParallelConfig,
    topo: ClusterTopology,
    iteration_seconds: float = 0.0,
) -> dict:
    grid = map_topology(topo, parallel)
    state_total = model_state_bytes(shape.parameters)
    report = {
        "model": asdict(shape),
        "parallel": asdict(parallel),
        "cluster": asdict(topo),
        "memory": {
            "model_state_bytes_total": state_total,
            "model_state_bytes_per_gpu": state_total / (parallel.tensor * parallel.pipeline),
            "activation_bytes_full_batch": activation_bytes(parallel.batch, shape.layers, shape.seq_len, shape.hidden),
            "activation_bytes_per_micro_batch": activation_bytes(
                parallel.micro_batch_size, shape.layers, shape.seq_len, shape.hidden
            ),
        },
        "pipeline_efficiency": pipeline_efficiency(parallel.micro_batches, parallel.pipeline),
        "rank_map": grid.summary(),
        "weight_init_std": weight_init_std(shape.hidden),
    }
    if iteration_seconds > 0:
        tflops = estimated_tflops_per_gpu(shape, parallel, topo, iteration_seconds)
        report["throughput"] = {
            "iteration_seconds": iteration_seconds,
            "tflops_per_gpu": tflops,
            "fraction_of_peak": tflops * 1e12 / topo.peak_flops_per_gpu,
        }
    return report


def _section(cp, name, cls, converters):
    if not cp.has_section(name):
        return cls()
    kwargs = {}
    for key, value in cp.items(name):
        if key not in converters:
            raise PlannerConfigError(f"unknown key [{name}] {key}")
        try:
            kwargs[key] = converters[key](value)
        except ValueError:
            raise PlannerConfigError(f"[{name}] {key}: cannot parse {value!r}") from None
    return cls(**kwargs)


def _num(value: str) -> float:
    return float(value.replace("_", ""))


def _int(value: str) -> int:
    f = _num(value)
    if f != int(f):
        raise ValueError(value)
    return int(f)


def read_planner_config(text: str):
    """Parse an INI-style planner config: [model], [parallel], [cluster], [run]."""
    cp = configparser.ConfigParser()
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise PlannerConfigError(str(exc)) from None
    unknown = set(cp.sections()) - {"model", "parallel", "cluster", "run"}
    if unknown:
        raise PlannerConfigError(f"unknown sections: {sorted(unknown)}")
    shape = _section(
        cp, "model", ModelShape,
        {"parameters": _num, "layers": _int, "hidden": _int, "heads": _int, "seq_len": _int, "vocab": _int},
    )
    parallel = _section(
        cp, "parallel", ParallelConfig,
        {"tensor": _int, "pipeline": _int, "data": _int, "batch": _int, "micro_batches": _int},
    )
    topo = _section(
        cp, "cluster", ClusterTopology,
        {"nodes": _int, "gpus_per_node": _int, "intra_node_bw": _num, "inter_node_bw": _num,
         "peak_flops_per_gpu": _num},
    )
    iteration_seconds = cp.getfloat("run", "iteration_seconds", fallback=0.0)
    return shape, parallel, topo, iteration_seconds
