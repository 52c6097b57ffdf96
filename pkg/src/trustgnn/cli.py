"""Command-line entry point.

Human-readable progress goes to stderr; machine-readable artifacts are files.
Configuration precedence: built-in defaults < config file < TRUSTGNN_* env
vars < command-line flags. Exit codes: 0 success, 1 usage error, 2 data
error, 3 numeric failure.

Thread pinning (--threads / TRUSTGNN_THREADS) must act before numpy loads,
so numerical modules are imported lazily inside the command handlers.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

ENV_PREFIX = "TRUSTGNN_"

PATH_KEYS = ("data", "out_dir", "checkpoint")

_THREAD_ENV_VARS = (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "NUMEXPR_NUM_THREADS",
    "VECLIB_MAXIMUM_THREADS",
)


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2
        raise UsageError(message)


def _pin_threads_early(argv: list[str]) -> None:
    """Apply --threads/TRUSTGNN_THREADS to BLAS env vars before numpy loads."""
    threads = os.environ.get(ENV_PREFIX + "THREADS")
    for i, arg in enumerate(argv):
        if arg == "--threads" and i + 1 < len(argv):
            threads = argv[i + 1]
        elif arg.startswith("--threads="):
            threads = arg.split("=", 1)[1]
    if threads is None:
        return
    if not threads.isdigit() or int(threads) < 1:
        raise UsageError(f"--threads must be a positive integer, got {threads!r}")
    for var in _THREAD_ENV_VARS:
        os.environ[var] = threads


def _config_field_info():
    from .training import TrainConfig
    import dataclasses

    return {f.name: f for f in dataclasses.fields(TrainConfig)}


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    for name in _config_field_info():
        parser.add_argument(f"--{name.replace('_', '-')}", dest=name, default=None)


def _parse_config_file(path: Path) -> dict[str, str]:
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    values: dict[str, str] = {}
    allowed = set(_config_field_info()) | set(PATH_KEYS)
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise UsageError(f"{path.name}:{lineno}: expected key=value, got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in allowed:
            raise UsageError(f"{path.name}:{lineno}: unknown config key {key!r}")
        values[key] = value
    return values


def _resolve_config(args) -> tuple["object", dict[str, str]]:
    """Merge defaults, config file, env vars, and flags into a TrainConfig."""
    from .training import TrainConfig

    merged: dict[str, str] = {}
    paths: dict[str, str] = {}
    if getattr(args, "config", None):
        for key, value in _parse_config_file(Path(args.config)).items():
            (paths if key in PATH_KEYS else merged)[key] = value
    for name in _config_field_info():
        env = os.environ.get(ENV_PREFIX + name.upper())
        if env is not None:
            merged[name] = env
    for key in PATH_KEYS:
        env = os.environ.get(ENV_PREFIX + key.upper())
        if env is not None:
            paths[key] = env
    for name in _config_field_info():
        flag = getattr(args, name, None)
        if flag is not None:
            merged[name] = flag
    for key in PATH_KEYS:
        flag = getattr(args, key, None)
        if flag is not None:
            paths[key] = flag
    try:
        cfg = TrainConfig.from_dict(merged)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    return cfg, paths


def _require(paths: dict[str, str], key: str) -> Path:
    if key not in paths or not paths[key]:
        raise UsageError(f"missing required --{key.replace('_', '-')}")
    return Path(paths[key])


def _out_dir(paths: dict[str, str]) -> Path:
    out = Path(paths.get("out_dir") or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_data(paths: dict[str, str], num_relations: int):
    from .graph import load_graph

    data = _require(paths, "data")
    if not data.is_file():
        raise FileNotFoundError(f"dataset not found: {data}")
    return load_graph(data, num_relations=num_relations)


def _metrics_doc(cfg, metrics, best_epoch, history) -> dict:
    return {
        "config": cfg.to_dict(),
        "metrics": {
            "micro_f1": metrics.micro_f1,
            "mae": metrics.mae,
            "per_class_f1": metrics.per_class_f1,
        },
        "best_epoch": best_epoch,
        "loss_history": history,
    }


def _write_json(path: Path, doc: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _suffix(cfg) -> str:
    return f"seed{cfg.seed}_{cfg.variant}"


def _node_map_path(path: Path) -> Path:
    stem = path.stem if path.suffix else path.name
    return path.parent / (stem + ".nodes.tsv")


def cmd_convert(args) -> int:
    from .graph import load_graph, save_graph, save_node_map

    graph = load_graph(args.input, num_relations=int(args.num_relations))
    out = Path(args.output)
    save_graph(graph, out)
    save_node_map(graph, _node_map_path(out))
    print(f"converted {graph.num_edges} edges over {graph.num_nodes} nodes -> {out}", file=sys.stderr)
    return EXIT_OK


def cmd_train(args) -> int:
    cfg, paths = _resolve_config(args)
    out = _out_dir(paths)
    graph = _load_data(paths, cfg.num_relations)
    from .training import train

    every = max(1, cfg.epochs // 10)

    def log(epoch, train_loss, val_loss):
        if epoch % every == 0 or epoch == 1:
            print(f"epoch {epoch} train {train_loss:.4f} val {val_loss:.4f}", file=sys.stderr)

    ckpt_path = out / f"checkpoint_{_suffix(cfg)}.json"
    result = train(graph, cfg, log=log, checkpoint_path=ckpt_path)
    metrics_path = out / f"metrics_{_suffix(cfg)}.json"
    _write_json(metrics_path, _metrics_doc(cfg, result.metrics, result.best_epoch, result.history))
    print(
        f"done: micro_f1 {result.metrics.micro_f1:.4f} mae {result.metrics.mae:.4f} "
        f"best_epoch {result.best_epoch} runtime {result.runtime:.1f}s",
        file=sys.stderr,
    )
    print(f"wrote {ckpt_path} and {metrics_path}", file=sys.stderr)
    return EXIT_OK


def _load_checkpoint_and_graph(args, paths):
    from .checkpoint import load_checkpoint
    from .training import TrainConfig, rebuild_protocol

    ckpt = _require(paths, "checkpoint")
    if not ckpt.is_file():
        raise FileNotFoundError(f"checkpoint not found: {ckpt}")
    config_echo, model_cfg, chain_index, params, seed = load_checkpoint(ckpt)
    cfg = TrainConfig.from_dict(config_echo)
    graph = _load_data(paths, cfg.num_relations)
    if graph.num_nodes != model_cfg.num_nodes:
        from .checkpoint import CheckpointError

        raise CheckpointError(
            f"checkpoint was trained on {model_cfg.num_nodes} nodes but the "
            f"dataset has {graph.num_nodes}"
        )
    split, sup_index, val_index, graph_mp = rebuild_protocol(graph, cfg)
    return cfg, model_cfg, chain_index, params, graph, graph_mp, split


def cmd_eval(args) -> int:
    cfg, paths = _resolve_config(args)
    out = _out_dir(paths)
    cfg, model_cfg, chain_index, params, graph, graph_mp, split = _load_checkpoint_and_graph(args, paths)
    from .training import evaluate

    metrics, record = evaluate(params, graph_mp, chain_index, model_cfg, split.test_edges(graph))
    path = out / f"eval_metrics_{_suffix(cfg)}.json"
    _write_json(path, _metrics_doc(cfg, metrics, 0, {}))
    print(f"micro_f1 {metrics.micro_f1:.4f} mae {metrics.mae:.4f} -> {path}", file=sys.stderr)
    return EXIT_OK


def cmd_predict(args) -> int:
    cfg, paths = _resolve_config(args)
    cfg, model_cfg, chain_index, params, graph, graph_mp, split = _load_checkpoint_and_graph(args, paths)
    import numpy as np

    from . import autodiff as ad
    from . import model as m
    from .graph import load_node_map

    pairs_path = Path(args.pairs)
    if not pairs_path.is_file():
        raise FileNotFoundError(f"pairs file not found: {pairs_path}")
    map_path = Path(args.node_map) if args.node_map else _node_map_path(_require(paths, "data"))
    if map_path.is_file():
        names = load_node_map(map_path)
        if len(names) != model_cfg.num_nodes:
            from .checkpoint import CheckpointError

            raise CheckpointError(
                f"node map {map_path} has {len(names)} entries but the checkpoint "
                f"expects {model_cfg.num_nodes} nodes"
            )
        ids = {name: i for i, name in enumerate(names)}
    else:
        ids = {str(i): i for i in range(graph.num_nodes)}

    # Inference adjacency: every observed edge in the data file.
    tape = ad.Tape()
    tensors = {k: tape.param(v) for k, v in params.items()}
    state = m.forward(tape, tensors, graph, chain_index, model_cfg)
    z_final = state.Z_final.data

    out_path = Path(args.out) if args.out else _out_dir(paths) / f"predictions_{_suffix(cfg)}.tsv"
    n_ok = n_err = 0
    with open(out_path, "w", encoding="utf-8") as fh:
        for lineno, line in enumerate(pairs_path.read_text(encoding="utf-8").splitlines(), start=1):
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t") if "\t" in line else line.split()
            if len(parts) != 2:
                fh.write(f"{line}\terror\tmalformed pair line {lineno}\n")
                n_err += 1
                continue
            s_tok, d_tok = parts
            if s_tok not in ids or d_tok not in ids:
                fh.write(f"{s_tok}\t{d_tok}\terror\tunknown node id\n")
                n_err += 1
                continue
            u, v = ids[s_tok], ids[d_tok]
            if u == v:
                fh.write(f"{s_tok}\t{d_tok}\terror\tself pair\n")
                n_err += 1
                continue
            probs = m.predict_pair(params, z_final, u, v)
            level = int(np.argmax(probs))
            cols = "\t".join(f"{p:.6f}" for p in probs)
            fh.write(f"{s_tok}\t{d_tok}\t{level}\t{cols}\n")
            n_ok += 1
    print(f"predicted {n_ok} pairs ({n_err} error rows) -> {out_path}", file=sys.stderr)
    return EXIT_OK


def cmd_explain(args) -> int:
    cfg, paths = _resolve_config(args)
    out = _out_dir(paths)
    cfg, model_cfg, chain_index, params, graph, graph_mp, split = _load_checkpoint_and_graph(args, paths)
    from .training import explain

    rows = explain(params, graph_mp, chain_index, model_cfg)
    top_k = int(args.top_k)
    if top_k > len(rows):
        print(f"warning: top-k {top_k} clamped to {len(rows)} chain types", file=sys.stderr)
        top_k = len(rows)
    doc = {
        "config": cfg.to_dict(),
        "top_k": top_k,
        "rows": [
            {"chain": list(r.chain), "label": r.label, "alpha": r.alpha, "alpha_bar": r.alpha_bar}
            for r in rows
        ],
    }
    json_path = out / f"explain_{_suffix(cfg)}.json"
    _write_json(json_path, doc)
    csv_path = out / f"explain_{_suffix(cfg)}.csv"
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["chain_label", "alpha", "alpha_bar"])
        for r in rows[:top_k]:
            writer.writerow([r.label, f"{r.alpha:.8f}", f"{r.alpha_bar:.8f}"])
    for r in rows[:top_k]:
        print(f"{r.label}\talpha={r.alpha:.4f}\talpha_bar={r.alpha_bar:.4f}", file=sys.stderr)
    print(f"wrote {json_path} and {csv_path}", file=sys.stderr)
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg, paths = _resolve_config(args)
    out = _out_dir(paths)
    graph = _load_data(paths, cfg.num_relations)
    from .training import sweep

    values = [v.strip() for v in args.values.split(",") if v.strip()]
    if not values:
        raise UsageError("--values must list at least one value")
    runs = int(args.runs) if args.runs else None

    def log(seed, report):
        cell = report.config
        print(
            f"[{args.axis}] run seed {seed}: {len(report.runs)} done, "
            f"{len(report.failures)} failed (cell {getattr(cell, args.axis, '?')})",
            file=sys.stderr,
        )

    report = sweep(graph, cfg, args.axis, values, runs_per_cell=runs, workers=int(args.workers), log=log)
    path = out / f"sweep_{args.axis}_{_suffix(cfg)}.json"
    _write_json(path, report.to_dict())
    from .metrics import format_pct

    for value, cell in zip(report.values, report.cells):
        print(f"{args.axis}={value}: F1 {format_pct(cell.mean_f1, cell.std_f1)} mae {cell.mean_mae:.4f}", file=sys.stderr)
    print(f"wrote {path}", file=sys.stderr)
    return EXIT_OK


def cmd_selfcheck(args) -> int:
    from .selfcheck import run_selfcheck

    results = run_selfcheck(stream=sys.stderr)
    failed = [r for r in results if not r.passed]
    print(
        f"{len(results) - len(failed)}/{len(results)} properties passed",
        file=sys.stderr,
    )
    return EXIT_NUMERIC if failed else EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="trustgnn", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--threads", default=None, help="pin BLAS worker threads (use 1 for bit-reproducible runs)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("convert", help="normalize a raw edge list to canonical TSV + node map sidecar")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--num-relations", default="4")
    p.set_defaults(fn=cmd_convert)

    def common(p):
        p.add_argument("--config", default=None, help="key=value config file")
        p.add_argument("--data", default=None)
        p.add_argument("--out-dir", dest="out_dir", default=None)
        _add_config_flags(p)

    p = sub.add_parser("train", help="train a model and write checkpoint + metrics")
    common(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="re-evaluate a checkpoint on its test split")
    common(p)
    p.add_argument("--checkpoint", default=None)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("predict", help="score trustor-trustee pairs from a checkpoint")
    common(p)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--pairs", required=True, help="TSV of src<TAB>dst using original node ids")
    p.add_argument("--node-map", dest="node_map", default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_predict)

    p = sub.add_parser("explain", help="rank chain types by learned attention weight")
    common(p)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--top-k", dest="top_k", default="5")
    p.set_defaults(fn=cmd_explain)

    p = sub.add_parser("sweep", help="repeat runs across a hyper-parameter axis")
    common(p)
    p.add_argument("--axis", required=True, choices=("K", "node_dim", "edge_dim", "train_ratio"))
    p.add_argument("--values", required=True, help="comma-separated axis values")
    p.add_argument("--runs", default=None, help="runs per cell (default: config repeats)")
    p.add_argument("--workers", default="1")
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("selfcheck", help="run the property suite")
    p.set_defaults(fn=cmd_selfcheck)

    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        _pin_threads_early(argv)
        parser = build_parser()
        args = parser.parse_args(argv)
        return args.fn(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001 - map to exit-code contract
        from .graph import GraphFormatError

        try:
            from .checkpoint import CheckpointError
        except Exception:  # pragma: no cover
            CheckpointError = ()  # type: ignore[assignment]
        from .training import DivergenceError

        if isinstance(exc, (GraphFormatError, CheckpointError)):
            print(f"data error: {exc}", file=sys.stderr)
            return EXIT_DATA
        if isinstance(exc, DivergenceError):
            print(f"numeric failure: {exc}", file=sys.stderr)
            return EXIT_NUMERIC
        if isinstance(exc, (ValueError, KeyError)):
            print(f"usage error: {exc}", file=sys.stderr)
            return EXIT_USAGE
        raise


if __name__ == "__main__":
    sys.exit(main())
