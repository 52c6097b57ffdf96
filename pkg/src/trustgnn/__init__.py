"""Trust evaluation on directed multi-relational graphs.

Submodules are loaded lazily so the CLI can pin BLAS thread counts before
numpy is imported.
"""

__version__ = "0.1.0"

_EXPORTS = {
    "TrustGraph": "graph",
    "ChainIndex": "graph",
    "EdgeSplit": "graph",
    "load_graph": "graph",
    "save_graph": "graph",
    "enumerate_chain_types": "graph",
    "chain_reach_sum": "graph",
    "brute_force_chain_paths": "graph",
    "split_edges": "graph",
    "Tape": "autodiff",
    "Tensor": "autodiff",
    "backward": "autodiff",
    "finite_diff_check": "autodiff",
    "AdamState": "optim",
    "adam_init": "optim",
    "adam_step": "optim",
    "ModelConfig": "model",
    "init_params": "model",
    "forward": "model",
    "model_loss": "model",
    "predict_pair": "model",
    "Metrics": "metrics",
    "micro_f1": "metrics",
    "mae": "metrics",
    "TrainConfig": "training",
    "train": "training",
    "evaluate": "training",
    "repeat_runs": "training",
    "sweep": "training",
    "explain": "training",
    "save_checkpoint": "checkpoint",
    "load_checkpoint": "checkpoint",
    "run_selfcheck": "selfcheck",
}

__all__ = sorted(_EXPORTS)


def __getattr__(name):
    if name in _EXPORTS:
        import importlib

        module = importlib.import_module("." + _EXPORTS[name], __name__)
        return getattr(module, name)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
