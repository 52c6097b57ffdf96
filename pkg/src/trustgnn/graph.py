"""Directed multi-relational trust graphs: loading, splitting, chain enumeration,
and the sparse reachability sums consumed by the model.

Edge files are UTF-8 text, one edge per line ``src<TAB>dst<TAB>level`` with
``#``-prefixed comment lines ignored. Levels are integers in ``[0, num_relations)``
or, for four-level trust data, the names observer/apprentice/journeyer/master
(case-insensitive). Node ids are arbitrary strings compacted to dense integers
in first-appearance order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

LEVEL_NAMES = ("observer", "apprentice", "journeyer", "master")

TRUSTEE = "trustee"
TRUSTOR = "trustor"

UPTO_K = "upto-K"
EXACT_K = "exact-K"

# Walk-enumeration budget for the brute-force oracle.
ORACLE_WALK_LIMIT = 10**6


class GraphFormatError(ValueError):
    """Raised for malformed edge files or inconsistent edge data."""


class OracleOverflowError(RuntimeError):
    """Raised when brute-force walk enumeration would exceed the budget."""


def parse_level(token: str, num_relations: int) -> int:
    """Parse a trust level: decimal id in [0, num_relations) or a level name."""
    name = token.strip().lower()
    if name in LEVEL_NAMES:
        level = LEVEL_NAMES.index(name)
    else:
        try:
            level = int(token)
        except ValueError:
            raise GraphFormatError(f"unrecognized trust level {token!r}") from None
    if not 0 <= level < num_relations:
        raise GraphFormatError(
            f"trust level {level} outside [0, {num_relations})"
        )
    return level


class TrustGraph:
    """Immutable directed graph with typed edges and per-relation sparse adjacency.

    ``adjacency(t)[i, j] == 1`` iff an edge i->j of relation t exists. Both the
    CSR matrix and its transpose are built once at construction because
    propagation needs both multiplication directions every epoch.
    """

    def __init__(
        self,
        num_nodes: int,
        num_relations: int,
        edges: Sequence[tuple[int, int, int]] | np.ndarray,
        node_ids: list[str] | None = None,
    ):
        if num_nodes <= 0:
            raise GraphFormatError("graph needs at least one node")
        if num_relations <= 0:
            raise GraphFormatError("graph needs at least one relation type")
        arr = np.asarray(edges, dtype=np.int64)
        if arr.size == 0:
            arr = arr.reshape(0, 3)
        if arr.ndim != 2 or arr.shape[1] != 3:
            raise GraphFormatError("edges must be (src, dst, rel) triples")
        if node_ids is not None and len(node_ids) != num_nodes:
            raise GraphFormatError(
                f"node id map has {len(node_ids)} entries for {num_nodes} nodes"
            )
        self.num_nodes = int(num_nodes)
        self.num_relations = int(num_relations)
        self.src = np.ascontiguousarray(arr[:, 0])
        self.dst = np.ascontiguousarray(arr[:, 1])
        self.rel = np.ascontiguousarray(arr[:, 2])
        self.node_ids = list(node_ids) if node_ids is not None else None
        self._validate()
        self._adj: list[sp.csr_matrix] = []
        self._adj_t: list[sp.csr_matrix] = []
        for t in range(self.num_relations):
            mask = self.rel == t
            data = np.ones(int(mask.sum()), dtype=np.float64)
            mat = sp.csr_matrix(
                (data, (self.src[mask], self.dst[mask])),
                shape=(self.num_nodes, self.num_nodes),
            )
            self._adj.append(mat)
            self._adj_t.append(mat.T.tocsr())
        self._dtype_cache: dict[tuple[int, bool, str], sp.csr_matrix] = {}

    def _validate(self) -> None:
        if self.num_edges:
            if self.src.min() < 0 or self.dst.min() < 0:
                raise GraphFormatError("negative node id in edge list")
            hi = max(self.src.max(), self.dst.max())
            if hi >= self.num_nodes:
                raise GraphFormatError(
                    f"node id {hi} out of range for {self.num_nodes} nodes"
                )
            if self.rel.min() < 0 or self.rel.max() >= self.num_relations:
                raise GraphFormatError("relation id out of range")
            if np.any(self.src == self.dst):
                i = int(np.argmax(self.src == self.dst))
                raise GraphFormatError(
                    f"self-loop on node {self.src[i]} is not a trust relationship"
                )
        pairs = {}
        for s, d, t in zip(self.src, self.dst, self.rel):
            key = (int(s), int(d))
            if key in pairs:
                raise GraphFormatError(
                    f"duplicate edge {key[0]}->{key[1]} "
                    f"(relations {pairs[key]} and {int(t)})"
                )
            pairs[key] = int(t)

    @property
    def num_edges(self) -> int:
        return self.src.shape[0]

    def edge_triples(self) -> list[tuple[int, int, int]]:
        return [
            (int(s), int(d), int(t))
            for s, d, t in zip(self.src, self.dst, self.rel)
        ]

    def adjacency(self, rel: int, dtype: np.dtype | None = None) -> sp.csr_matrix:
        return self._typed(rel, transposed=False, dtype=dtype)

    def adjacency_t(self, rel: int, dtype: np.dtype | None = None) -> sp.csr_matrix:
        return self._typed(rel, transposed=True, dtype=dtype)

    def _typed(self, rel: int, transposed: bool, dtype) -> sp.csr_matrix:
        base = self._adj_t[rel] if transposed else self._adj[rel]
        if dtype is None or np.dtype(dtype) == base.dtype:
            return base
        key = (rel, transposed, np.dtype(dtype).str)
        if key not in self._dtype_cache:
            self._dtype_cache[key] = base.astype(dtype)
        return self._dtype_cache[key]

    def subgraph(self, edge_index: np.ndarray) -> "TrustGraph":
        """Graph over the same node set restricted to the given edge indices."""
        arr = np.stack(
            [self.src[edge_index], self.dst[edge_index], self.rel[edge_index]],
            axis=1,
        )
        return TrustGraph(self.num_nodes, self.num_relations, arr, self.node_ids)

    def reversed(self) -> "TrustGraph":
        """Edge-reversed copy (used by the transposition-duality checks)."""
        arr = np.stack([self.dst, self.src, self.rel], axis=1)
        return TrustGraph(self.num_nodes, self.num_relations, arr, self.node_ids)

    def out_neighbors(self, node: int, rel: int) -> np.ndarray:
        m = self._adj[rel]
        return m.indices[m.indptr[node] : m.indptr[node + 1]]

    def in_neighbors(self, node: int, rel: int) -> np.ndarray:
        m = self._adj_t[rel]
        return m.indices[m.indptr[node] : m.indptr[node + 1]]


def load_graph(
    path: str | Path,
    num_relations: int = 4,
    node_map: dict[str, int] | None = None,
) -> TrustGraph:
    """Load a TSV edge file into a TrustGraph.

    Duplicate identical triples are dropped; the same (src, dst) pair with two
    different relations is an error, as are self-loops. ``node_map`` pins the
    string->dense-id mapping (otherwise first-appearance order is used).
    """
    path = Path(path)
    ids: dict[str, int] = dict(node_map) if node_map else {}
    frozen = node_map is not None
    triples: list[tuple[int, int, int]] = []
    seen: dict[tuple[int, int], tuple[int, int]] = {}
    order: list[str] = list(ids) if frozen else []

    def intern(token: str, lineno: int) -> int:
        if token in ids:
            return ids[token]
        if frozen:
            raise GraphFormatError(
                f"{path.name}:{lineno}: node id {token!r} not in node map"
            )
        ids[token] = len(ids)
        order.append(token)
        return ids[token]

    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                parts = line.split()
            if len(parts) != 3:
                raise GraphFormatError(
                    f"{path.name}:{lineno}: expected 'src<TAB>dst<TAB>level', got {line!r}"
                )
            s_tok, d_tok, l_tok = parts
            try:
                level = parse_level(l_tok, num_relations)
            except GraphFormatError as exc:
                raise GraphFormatError(f"{path.name}:{lineno}: {exc}") from None
            s = intern(s_tok, lineno)
            d = intern(d_tok, lineno)
            if s == d:
                raise GraphFormatError(
                    f"{path.name}:{lineno}: self-loop on {s_tok!r} is not a trust relationship"
                )
            key = (s, d)
            if key in seen:
                prev_level, prev_line = seen[key]
                if prev_level != level:
                    raise GraphFormatError(
                        f"{path.name}:{lineno}: edge {s_tok!r}->{d_tok!r} has relation "
                        f"{level} but line {prev_line} gave {prev_level}"
                    )
                continue  # exact duplicate, dedup
            seen[key] = (level, lineno)
            triples.append((s, d, level))
    if not triples:
        raise GraphFormatError(f"{path.name}: no edges found")
    return TrustGraph(len(ids), num_relations, triples, node_ids=order)


def save_graph(graph: TrustGraph, path: str | Path) -> None:
    """Write the canonical TSV form: dense integer ids, integer levels."""
    with open(path, "w", encoding="utf-8") as fh:
        for s, d, t in zip(graph.src, graph.dst, graph.rel):
            fh.write(f"{s}\t{d}\t{t}\n")


def save_node_map(graph: TrustGraph, path: str | Path) -> None:
    """Write the sidecar mapping file: ``dense_id<TAB>original_id`` per line."""
    ids = graph.node_ids or [str(i) for i in range(graph.num_nodes)]
    with open(path, "w", encoding="utf-8") as fh:
        for dense, original in enumerate(ids):
            fh.write(f"{dense}\t{original}\n")


def load_node_map(path: str | Path) -> list[str]:
    names: list[str] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 2 or int(parts[0]) != len(names):
                raise GraphFormatError(f"{Path(path).name}:{lineno}: bad node map row")
            names.append(parts[1])
    return names


@dataclass(frozen=True)
class ChainIndex:
    """Deterministic enumeration of chain types (relation-id sequences).

    Ordering is lexicographic over relation ids, shorter sequences first, so
    the same (num_relations, K, mode) always yields the same index.
    """

    num_relations: int
    K: int
    mode: str
    types: tuple[tuple[int, ...], ...] = field(default=())

    def __len__(self) -> int:
        return len(self.types)

    def __iter__(self):
        return iter(self.types)

    def label(self, chain: tuple[int, ...]) -> str:
        """Human-readable label using 1-based trust levels, e.g. ``1->4``."""
        return "->".join(str(t + 1) for t in chain)


def enumerate_chain_types(num_relations: int, K: int, mode: str = UPTO_K) -> ChainIndex:
    """All relation sequences of length 1..K (upto-K) or exactly K (exact-K)."""
    if num_relations < 1:
        raise ValueError("num_relations must be >= 1")
    if K < 1:
        raise ValueError("chain length bound K must be >= 1 (no propagation possible)")
    if mode not in (UPTO_K, EXACT_K):
        raise ValueError(f"unknown chain mode {mode!r}")
    lengths = range(1, K + 1) if mode == UPTO_K else (K,)
    types: list[tuple[int, ...]] = []
    for k in lengths:
        seqs = [()]
        for _ in range(k):
            seqs = [s + (t,) for s in seqs for t in range(num_relations)]
        types.extend(seqs)
    return ChainIndex(num_relations, K, mode, tuple(types))


def chain_reach_sum(
    graph: TrustGraph,
    chain: Sequence[int],
    direction: str,
    H: np.ndarray,
) -> np.ndarray:
    """Sum node representations over all walks whose relation sequence is `chain`.

    trustee: out[v] = sum of H[u] over walks u -> ... -> v, computed as
    A_tk^T (... (A_t1^T H)). trustor: out[v] = sum of H[u] over walks
    v -> ... -> u, computed as A_t1 (... (A_tk H)). Walks may revisit nodes;
    each distinct edge sequence counts once.
    """
    H = np.asarray(H)
    if H.shape[0] != graph.num_nodes:
        raise ValueError(
            f"H has {H.shape[0]} rows for a graph with {graph.num_nodes} nodes"
        )
    out = H
    if direction == TRUSTEE:
        for t in chain:
            out = graph.adjacency_t(t) @ out
    elif direction == TRUSTOR:
        for t in reversed(list(chain)):
            out = graph.adjacency(t) @ out
    else:
        raise ValueError(f"unknown direction {direction!r}")
    return np.asarray(out)


def brute_force_chain_paths(
    graph: TrustGraph,
    chain: Sequence[int],
    direction: str,
    node: int,
    limit: int = ORACLE_WALK_LIMIT,
) -> list[list[int]]:
    """Enumerate every walk matching the chain's relation sequence that ends at
    (trustee) or starts from (trustor) `node`, as ordered node lists.

    Test oracle only: depth-first, exhaustive, guarded at `limit` enumerated
    walk extensions.
    """
    chain = list(chain)
    if direction not in (TRUSTEE, TRUSTOR):
        raise ValueError(f"unknown direction {direction!r}")
    budget = [0]
    paths: list[list[int]] = []

    def extend(partial: list[int], depth: int) -> None:
        budget[0] += 1
        if budget[0] > limit:
            raise OracleOverflowError(
                f"more than {limit} walks while enumerating chain {tuple(chain)}"
            )
        if depth == len(chain):
            paths.append(list(partial) if direction == TRUSTOR else list(reversed(partial)))
            return
        if direction == TRUSTEE:
            # Grow backwards from the tail: next hop uses the relation
            # preceding the current position.
            rel = chain[len(chain) - 1 - depth]
            for prev in graph.in_neighbors(partial[-1], rel):
                partial.append(int(prev))
                extend(partial, depth + 1)
                partial.pop()
        else:
            rel = chain[depth]
            for nxt in graph.out_neighbors(partial[-1], rel):
                partial.append(int(nxt))
                extend(partial, depth + 1)
                partial.pop()

    extend([node], 0)
    return paths


@dataclass(frozen=True)
class EdgeSplit:
    """Random train/test partition of a graph's edge indices."""

    train_index: np.ndarray
    test_index: np.ndarray
    seed: int
    train_ratio: float

    def train_edges(self, graph: TrustGraph) -> np.ndarray:
        return np.stack(
            [graph.src[self.train_index], graph.dst[self.train_index], graph.rel[self.train_index]],
            axis=1,
        )

    def test_edges(self, graph: TrustGraph) -> np.ndarray:
        return np.stack(
            [graph.src[self.test_index], graph.dst[self.test_index], graph.rel[self.test_index]],
            axis=1,
        )


def split_edges(graph: TrustGraph, train_ratio: float, seed: int) -> EdgeSplit:
    """Uniform random edge partition, reproducible from the seed."""
    if not 0.0 < train_ratio < 1.0:
        raise ValueError(f"train_ratio must be in (0, 1), got {train_ratio}")
    n = graph.num_edges
    n_train = int(round(train_ratio * n))
    if n_train == 0 or n_train == n:
        raise ValueError(
            f"ratio {train_ratio} leaves an empty split for {n} edges"
        )
    perm = np.random.default_rng(seed).permutation(n)
    return EdgeSplit(
        train_index=np.sort(perm[:n_train]),
        test_index=np.sort(perm[n_train:]),
        seed=seed,
        train_ratio=train_ratio,
    )
