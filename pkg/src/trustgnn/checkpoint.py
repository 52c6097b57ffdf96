"""Checkpoint file format: one JSON document holding the config echo, the
chain-type ordering, the RNG seed, and every named parameter tensor as nested
lists of 64-bit decimals. Loading validates shapes against the config and the
canonical chain ordering before accepting anything."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .graph import ChainIndex, enumerate_chain_types
from .model import ModelConfig, param_spec

FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(
    path: str | Path,
    config: dict,
    model_cfg: ModelConfig,
    chain_index: ChainIndex,
    params: dict[str, np.ndarray],
    seed: int,
) -> None:
    doc = {
        "format_version": FORMAT_VERSION,
        "config": config,
        "num_nodes": model_cfg.num_nodes,
        "num_relations": model_cfg.num_relations,
        "model": {
            "d_attr_node": model_cfg.d_attr_node,
            "d_attr_edge": model_cfg.d_attr_edge,
            "d": model_cfg.d,
            "d_attn": model_cfg.d_attn,
            "d_z": model_cfg.d_z,
            "K": model_cfg.K,
            "chain_mode": model_cfg.chain_mode,
            "variant": model_cfg.variant,
            "edge_attr_mode": model_cfg.edge_attr_mode,
            "dtype": model_cfg.dtype,
        },
        "chain_index": [list(chain) for chain in chain_index],
        "rng_seed": seed,
        "params": {
            name: np.asarray(value, dtype=np.float64).tolist()
            for name, value in params.items()
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def load_checkpoint(path: str | Path) -> tuple[dict, ModelConfig, ChainIndex, dict[str, np.ndarray], int]:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint format {doc.get('format_version')!r}"
        )
    m = doc["model"]
    model_cfg = ModelConfig(
        num_nodes=int(doc["num_nodes"]),
        num_relations=int(doc["num_relations"]),
        d_attr_node=int(m["d_attr_node"]),
        d_attr_edge=int(m["d_attr_edge"]),
        d=int(m["d"]),
        d_attn=int(m["d_attn"]),
        d_z=int(m["d_z"]),
        K=int(m["K"]),
        chain_mode=m["chain_mode"],
        variant=m["variant"],
        edge_attr_mode=m["edge_attr_mode"],
        dtype=m["dtype"],
    )
    chain_index = enumerate_chain_types(model_cfg.num_relations, model_cfg.K, model_cfg.chain_mode)
    stored = [tuple(chain) for chain in doc["chain_index"]]
    if stored != list(chain_index.types):
        raise CheckpointError(
            "checkpoint chain ordering does not match the canonical enumeration "
            f"for K={model_cfg.K} mode={model_cfg.chain_mode}"
        )
    expected = {name: shape for name, shape, _ in param_spec(model_cfg, chain_index)}
    raw = doc["params"]
    missing = sorted(set(expected) - set(raw))
    extra = sorted(set(raw) - set(expected))
    if missing or extra:
        raise CheckpointError(
            f"parameter set mismatch: missing {missing or 'none'}, unexpected {extra or 'none'}"
        )
    params: dict[str, np.ndarray] = {}
    diffs = []
    for name, shape in expected.items():
        arr = np.asarray(raw[name], dtype=np.float64)
        if arr.shape != shape:
            diffs.append(f"{name}: checkpoint {arr.shape} vs config {shape}")
        params[name] = arr.astype(model_cfg.np_dtype)
    if diffs:
        raise CheckpointError("shape mismatch: " + "; ".join(diffs))
    return doc["config"], model_cfg, chain_index, params, int(doc["rng_seed"])
