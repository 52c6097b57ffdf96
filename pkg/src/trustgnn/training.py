"""Training loop, evaluation protocol, repeated runs, sweeps, and the
attention-weight explanation report.

Protocol: edges are split train/test at the configured ratio; a validation
slice is carved out of the training split for early stopping; message-passing
adjacency is built from the remaining supervision edges only, so neither
validation nor test relationships are visible to propagation.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import autodiff as ad
from . import model as m
from .checkpoint import save_checkpoint
from .graph import (
    TRUSTEE,
    TRUSTOR,
    UPTO_K,
    ChainIndex,
    EdgeSplit,
    TrustGraph,
    enumerate_chain_types,
    split_edges,
)
from .metrics import EvalRecord, Metrics, compute_metrics
from .optim import adam_init, adam_step, clip_gradients

Array = np.ndarray


class DivergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.005
    d_attr: int = 1024
    d_attr_node: int = 0  # 0 = inherit d_attr
    d_attr_edge: int = 0
    d: int = 128
    d_attn: int = 0  # 0 = inherit d
    d_z: int = 0
    K: int = 2
    chain_mode: str = UPTO_K
    epochs: int = 200
    patience: int = 20
    val_fraction: float = 0.1
    seed: int = 0
    variant: str = "full"
    repeats: int = 20
    edge_attr_mode: str = "learnable"
    train_ratio: float = 0.8
    num_relations: int = 4
    dtype: str = "float32"
    clip_norm: float = 0.0  # 0 = no clipping

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.epochs < 1 or self.patience < 0 or self.repeats < 1:
            raise ValueError("epochs/patience/repeats out of range")
        if not 0.0 <= self.val_fraction < 0.5:
            raise ValueError(f"val_fraction must be in [0, 0.5), got {self.val_fraction}")
        if not 0.0 < self.train_ratio < 1.0:
            raise ValueError(f"train_ratio must be in (0, 1), got {self.train_ratio}")
        if self.d % 2 != 0:
            raise ValueError(f"representation dim must be even, got {self.d}")

    def resolved(self) -> "TrainConfig":
        return replace(
            self,
            d_attr_node=self.d_attr_node or self.d_attr,
            d_attr_edge=self.d_attr_edge or self.d_attr,
            d_attn=self.d_attn or self.d,
            d_z=self.d_z or self.d,
        )

    def model_config(self, num_nodes: int) -> m.ModelConfig:
        r = self.resolved()
        return m.ModelConfig(
            num_nodes=num_nodes,
            num_relations=r.num_relations,
            d_attr_node=r.d_attr_node,
            d_attr_edge=r.d_attr_edge,
            d=r.d,
            d_attn=r.d_attn,
            d_z=r.d_z,
            K=r.K,
            chain_mode=r.chain_mode,
            variant=r.variant,
            edge_attr_mode=r.edge_attr_mode,
            dtype=r.dtype,
        )

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(unknown)}")
        kwargs = {}
        for f in fields(cls):
            if f.name in data:
                kwargs[f.name] = _coerce(f.type, data[f.name])
        return cls(**kwargs)


def _coerce(type_name: str, value):
    if isinstance(value, str):
        if type_name == "int":
            return int(value)
        if type_name == "float":
            return float(value)
    return value


@dataclass
class TrainResult:
    params: dict[str, Array]
    config: TrainConfig
    model_cfg: m.ModelConfig
    chain_index: ChainIndex
    split: EdgeSplit
    sup_index: Array
    val_index: Array
    metrics: Metrics
    record: EvalRecord
    history: dict[str, list[float]]
    best_epoch: int
    runtime: float


def _pair_loss_np(params: dict[str, Array], z_final: Array, edges: Array) -> float:
    probs = m.pair_probabilities_np(params, z_final, edges[:, 0], edges[:, 1])
    p = probs[np.arange(edges.shape[0]), edges[:, 2]]
    return float(-np.log(np.maximum(p, 1e-30)).mean())


def carve_validation(split: EdgeSplit, val_fraction: float, seed: int) -> tuple[Array, Array]:
    """Split the training indices into supervision and validation slices."""
    train_idx = split.train_index
    n_val = int(round(val_fraction * train_idx.shape[0]))
    if n_val == 0:
        return train_idx, np.empty(0, dtype=np.int64)
    perm = np.random.default_rng([seed, 1]).permutation(train_idx.shape[0])
    return np.sort(train_idx[perm[n_val:]]), np.sort(train_idx[perm[:n_val]])


def rebuild_protocol(graph: TrustGraph, config: TrainConfig):
    """Recover the exact split/supervision structure a config trained with."""
    cfg = config.resolved()
    split = split_edges(graph, cfg.train_ratio, cfg.seed)
    sup_index, val_index = carve_validation(split, cfg.val_fraction, cfg.seed)
    return split, sup_index, val_index, graph.subgraph(sup_index)


def _run_epochs(
    graph_mp: TrustGraph,
    chain_index: ChainIndex,
    model_cfg: m.ModelConfig,
    cfg: TrainConfig,
    sup_edges: Array,
    val_edges: Array | None,
    log=None,
) -> tuple[dict[str, Array], dict[str, list[float]], int]:
    """Adam epochs with best-monitor restore; monitors validation loss when a
    validation slice exists, training loss otherwise."""
    params = m.init_params(model_cfg, chain_index, np.random.default_rng([cfg.seed, 2]))
    state = adam_init(params, lr=cfg.lr)
    history: dict[str, list[float]] = {"train_loss": [], "val_loss": []}
    best_monitor = np.inf
    best_epoch = 0
    best_params = {k: v.copy() for k, v in params.items()}
    bad_epochs = 0

    for epoch in range(1, cfg.epochs + 1):
        tape = ad.Tape()
        tensors = {k: tape.param(v) for k, v in params.items()}
        loss, fwd = m.model_loss(tape, tensors, graph_mp, chain_index, model_cfg, sup_edges)
        train_loss = float(loss.data)
        if not np.isfinite(train_loss):
            raise DivergenceError(
                f"training diverged at epoch {epoch}: loss={train_loss!r} "
                f"(lr={cfg.lr}, dtype={cfg.dtype})"
            )
        if val_edges is not None:
            val_loss = _pair_loss_np(params, fwd.Z_final.data, val_edges)
        else:
            val_loss = train_loss
        history["train_loss"].append(train_loss)
        history["val_loss"].append(val_loss)
        if log is not None:
            log(epoch, train_loss, val_loss)

        if val_loss < best_monitor:
            best_monitor = val_loss
            best_epoch = epoch
            best_params = {k: v.copy() for k, v in params.items()}
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs > cfg.patience:
                break

        grads = backward_named(tape, loss, tensors)
        if cfg.clip_norm > 0:
            clip_gradients(grads, cfg.clip_norm)
        adam_step(params, grads, state)

    return best_params, history, best_epoch


@dataclass
class FitResult:
    params: dict[str, Array]
    model_cfg: m.ModelConfig
    chain_index: ChainIndex
    history: dict[str, list[float]]
    best_epoch: int


def fit(graph: TrustGraph, config: TrainConfig, edges: Array | None = None, log=None) -> FitResult:
    """Fit the model on an explicit supervision edge set (default: every edge)
    with the whole graph as message-passing structure. No split, no validation;
    used for capacity probes and toy studies."""
    cfg = config.resolved()
    chain_index = enumerate_chain_types(cfg.num_relations, cfg.K, cfg.chain_mode)
    model_cfg = cfg.model_config(graph.num_nodes)
    if edges is None:
        edges = np.stack([graph.src, graph.dst, graph.rel], axis=1)
    params, history, best_epoch = _run_epochs(
        graph, chain_index, model_cfg, cfg, edges, None, log
    )
    return FitResult(params, model_cfg, chain_index, history, best_epoch)


def train(
    graph: TrustGraph,
    config: TrainConfig,
    log=None,
    checkpoint_path=None,
) -> TrainResult:
    """Full-batch training with early stopping on the validation slice.

    Deterministic given the seed (single-threaded kernels assumed); the best
    parameters seen under the monitored loss are restored before evaluation.
    """
    t0 = time.time()
    cfg = config.resolved()
    split, sup_index, val_index, graph_mp = rebuild_protocol(graph, cfg)
    if sup_index.size == 0:
        raise ValueError("validation carve-out left no supervision edges")
    chain_index = enumerate_chain_types(cfg.num_relations, cfg.K, cfg.chain_mode)
    model_cfg = cfg.model_config(graph.num_nodes)

    def edges_at(index: Array) -> Array:
        return np.stack([graph.src[index], graph.dst[index], graph.rel[index]], axis=1)

    sup_edges = edges_at(sup_index)
    val_edges = edges_at(val_index) if val_index.size else None
    params, history, best_epoch = _run_epochs(
        graph_mp, chain_index, model_cfg, cfg, sup_edges, val_edges, log
    )
    test_edges = split.test_edges(graph)
    metrics, record = evaluate(params, graph_mp, chain_index, model_cfg, test_edges)
    metrics.loss_history = history["train_loss"]
    metrics.runtime = time.time() - t0
    result = TrainResult(
        params=params,
        config=config,
        model_cfg=model_cfg,
        chain_index=chain_index,
        split=split,
        sup_index=sup_index,
        val_index=val_index,
        metrics=metrics,
        record=record,
        history=history,
        best_epoch=best_epoch,
        runtime=metrics.runtime,
    )
    if checkpoint_path is not None:
        save_checkpoint(
            checkpoint_path, config.to_dict(), model_cfg, chain_index, params, cfg.seed
        )
    return result


def backward_named(tape: ad.Tape, loss: ad.Tensor, tensors: dict[str, ad.Tensor]) -> dict[str, Array]:
    grads = ad.backward(tape, loss)
    return {name: grads[t] for name, t in tensors.items()}


def evaluate(
    params: dict[str, Array],
    graph_mp: TrustGraph,
    chain_index: ChainIndex,
    model_cfg: m.ModelConfig,
    test_edges: Array,
) -> tuple[Metrics, EvalRecord]:
    """Argmax-class prediction over held-out pairs; micro-F1 on categorical
    labels, MAE on the scalar trust mapping. Pure: same inputs, same output."""
    test_edges = np.asarray(test_edges)
    if test_edges.size == 0:
        raise ValueError("empty test set")
    tape = ad.Tape()
    tensors = {k: tape.param(v) for k, v in params.items()}
    fwd = m.forward(tape, tensors, graph_mp, chain_index, model_cfg)
    probs = m.pair_probabilities_np(params, fwd.Z_final.data, test_edges[:, 0], test_edges[:, 1])
    y_pred = probs.argmax(axis=1)
    y_true = test_edges[:, 2]
    metrics = compute_metrics(y_true, y_pred, model_cfg.num_relations)
    return metrics, EvalRecord(y_true=y_true, y_pred=y_pred)


@dataclass
class RepeatReport:
    config: TrainConfig
    seeds: list[int]
    runs: list[Metrics]
    failures: list[tuple[int, str]] = field(default_factory=list)

    @property
    def mean_f1(self) -> float:
        return float(np.mean([r.micro_f1 for r in self.runs])) if self.runs else float("nan")

    @property
    def std_f1(self) -> float:
        vals = [r.micro_f1 for r in self.runs]
        return float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0

    @property
    def mean_mae(self) -> float:
        return float(np.mean([r.mae for r in self.runs])) if self.runs else float("nan")

    @property
    def std_mae(self) -> float:
        vals = [r.mae for r in self.runs]
        return float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "seeds": self.seeds,
            "per_run": [r.to_dict() for r in self.runs],
            "mean": {"micro_f1": self.mean_f1, "mae": self.mean_mae},
            "std": {"micro_f1": self.std_f1, "mae": self.std_mae},
            "runtime": sum(r.runtime for r in self.runs),
            "failures": [{"seed": s, "error": e} for s, e in self.failures],
        }


def repeat_runs(
    graph: TrustGraph,
    config: TrainConfig,
    n: int | None = None,
    seeds: list[int] | None = None,
    workers: int = 1,
    log=None,
) -> RepeatReport:
    """n independent seeded runs; mean and sample standard deviation per metric.

    Each run reseeds both the split and the initialization (seed + run index
    by default), so the reported spread includes split noise.
    """
    if seeds is None:
        n = config.repeats if n is None else n
        if n < 1:
            raise ValueError("need at least one run")
        seeds = [config.seed + i for i in range(n)]
    report = RepeatReport(config=config, seeds=list(seeds), runs=[])

    def one(seed: int):
        return train(graph, replace(config, seed=seed))

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = {s: pool.submit(one, s) for s in seeds}
            results = [(s, futures[s]) for s in seeds]
            for s, fut in results:
                try:
                    res = fut.result()
                    report.runs.append(res.metrics)
                except Exception as exc:  # noqa: BLE001 - per-run isolation
                    report.failures.append((s, f"{type(exc).__name__}: {exc}"))
                if log is not None:
                    log(s, report)
    else:
        for s in seeds:
            try:
                res = one(s)
                report.runs.append(res.metrics)
            except Exception as exc:  # noqa: BLE001 - per-run isolation
                report.failures.append((s, f"{type(exc).__name__}: {exc}"))
            if log is not None:
                log(s, report)
    return report


SWEEP_AXES = ("K", "node_dim", "edge_dim", "train_ratio")


def _apply_axis(config: TrainConfig, axis: str, value) -> TrainConfig:
    if axis == "K":
        return replace(config, K=int(value))
    if axis == "node_dim":
        return replace(config, d_attr_node=int(value))
    if axis == "edge_dim":
        return replace(config, d_attr_edge=int(value))
    if axis == "train_ratio":
        return replace(config, train_ratio=float(value))
    raise ValueError(f"unknown sweep axis {axis!r}; expected one of {SWEEP_AXES}")


@dataclass
class SweepReport:
    axis: str
    values: list
    cells: list[RepeatReport]

    def to_dict(self) -> dict:
        return {
            "axis": self.axis,
            "values": self.values,
            "cells": [c.to_dict() for c in self.cells],
        }


def sweep(
    graph: TrustGraph,
    config: TrainConfig,
    axis: str,
    values: list,
    runs_per_cell: int | None = None,
    workers: int = 1,
    log=None,
) -> SweepReport:
    """One repeat_runs per axis value; per-cell failures are recorded, not raised."""
    if not values:
        raise ValueError("sweep needs at least one value")
    cells = []
    for value in values:
        cell_cfg = _apply_axis(config, axis, value)
        cells.append(repeat_runs(graph, cell_cfg, n=runs_per_cell, workers=workers, log=log))
    return SweepReport(axis=axis, values=list(values), cells=cells)


@dataclass
class ExplainRow:
    chain: tuple[int, ...]
    label: str
    alpha: float
    alpha_bar: float


def explain(
    params: dict[str, Array],
    graph_mp: TrustGraph,
    chain_index: ChainIndex,
    model_cfg: m.ModelConfig,
) -> list[ExplainRow]:
    """Chain types ranked by trustee-role attention weight, with the trustor
    weight alongside. The uniform-aggregation ablation reports equal weights."""
    tape = ad.Tape()
    tensors = {k: tape.param(v) for k, v in params.items()}
    fwd = m.forward(tape, tensors, graph_mp, chain_index, model_cfg)
    n = len(chain_index)
    uniform = np.full(n, 1.0 / n)
    a = fwd.alpha[TRUSTEE].data if fwd.alpha[TRUSTEE] is not None else uniform
    a_bar = fwd.alpha[TRUSTOR].data if fwd.alpha[TRUSTOR] is not None else uniform
    rows = [
        ExplainRow(
            chain=chain,
            label=chain_index.label(chain),
            alpha=float(a[j]),
            alpha_bar=float(a_bar[j]),
        )
        for j, chain in enumerate(chain_index)
    ]
    rows.sort(key=lambda r: -r.alpha)
    return rows
