"""Trust-evaluation network over typed chain propagation.

Node and relation attributes are projected into a shared even-dimensional
space read as complex vectors. Relation embeddings are normalized to unit
modulus and act as RotatE-style rotations: information arriving over a chain
is the reach-sum of source representations rotated by the composed relation
rotation (conjugated for the trustor role). Chain-type representations are
mixed by a learned attention simplex per role, roles are fused by
concatenation, and an MLP scores ordered node pairs against relation classes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .graph import TRUSTEE, TRUSTOR, UPTO_K, ChainIndex, TrustGraph

Array = np.ndarray

VARIANTS = ("full", "trustgnn-1", "trustgnn-2", "trustgnn-3")

EDGE_ATTR_MODES = ("learnable", "one-hot")


@dataclass(frozen=True)
class ModelConfig:
    num_nodes: int
    num_relations: int
    d_attr_node: int = 1024
    d_attr_edge: int = 1024
    d: int = 128
    d_attn: int = 128
    d_z: int = 128
    K: int = 2
    chain_mode: str = UPTO_K
    variant: str = "full"
    edge_attr_mode: str = "learnable"
    dtype: str = "float32"

    def __post_init__(self):
        if self.d % 2 != 0:
            raise ValueError(f"representation dim must be even, got {self.d}")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.edge_attr_mode not in EDGE_ATTR_MODES:
            raise ValueError(f"unknown edge attribute mode {self.edge_attr_mode!r}")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"dtype must be float32 or float64, got {self.dtype!r}")

    @property
    def np_dtype(self) -> np.dtype:
        return np.dtype(self.dtype)

    @property
    def edge_attr_dim(self) -> int:
        return self.d_attr_edge if self.edge_attr_mode == "learnable" else self.num_relations

    @property
    def fuse_in_dim(self) -> int:
        return self.d if self.variant in ("trustgnn-1", "trustgnn-2") else 2 * self.d


def variant_roles(variant: str) -> tuple[str, ...]:
    """Which propagation roles a variant wires up."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    if variant == "trustgnn-1":
        return (TRUSTEE,)
    if variant == "trustgnn-2":
        return (TRUSTOR,)
    return (TRUSTEE, TRUSTOR)


def chain_param_name(role: str, chain: tuple[int, ...]) -> str:
    return f"W_P.{role}." + "-".join(str(t) for t in chain)


def param_spec(cfg: ModelConfig, chain_index: ChainIndex) -> list[tuple[str, tuple[int, ...], float | None]]:
    """Ordered (name, shape, init_bound) for every learnable tensor.

    Bound is the fan-in uniform half-width, or None for zero-initialized
    biases. All variants carry the full parameter set (unused roles simply
    receive zero gradients); only the fusion input width depends on the
    variant.
    """
    spec: list[tuple[str, tuple[int, ...], float | None]] = []
    spec.append(("node_attr", (cfg.num_nodes, cfg.d_attr_node), cfg.d_attr_node**-0.5))
    if cfg.edge_attr_mode == "learnable":
        spec.append(("edge_attr", (cfg.num_relations, cfg.d_attr_edge), cfg.d_attr_edge**-0.5))
    spec.append(("W_node", (cfg.d_attr_node, cfg.d), cfg.d_attr_node**-0.5))
    ed = cfg.edge_attr_dim
    for i in range(cfg.num_relations):
        spec.append((f"W_edge.{i}", (ed, cfg.d), ed**-0.5))
    for role in (TRUSTEE, TRUSTOR):
        for chain in chain_index:
            spec.append((chain_param_name(role, chain), (cfg.d, cfg.d), cfg.d**-0.5))
    for role in (TRUSTEE, TRUSTOR):
        spec.append((f"attn.{role}.W", (cfg.d, cfg.d_attn), cfg.d**-0.5))
        spec.append((f"attn.{role}.b", (cfg.d_attn,), None))
        spec.append((f"attn.{role}.q", (cfg.d_attn,), cfg.d_attn**-0.5))
    spec.append(("W_fuse", (cfg.fuse_in_dim, cfg.d_z), cfg.fuse_in_dim**-0.5))
    spec.append(("mlp.W1", (2 * cfg.d_z, cfg.d_z), (2 * cfg.d_z) ** -0.5))
    spec.append(("mlp.b1", (cfg.d_z,), None))
    spec.append(("mlp.W2", (cfg.d_z, cfg.num_relations), cfg.d_z**-0.5))
    spec.append(("mlp.b2", (cfg.num_relations,), None))
    return spec


def init_params(cfg: ModelConfig, chain_index: ChainIndex, rng: np.random.Generator) -> dict[str, Array]:
    params: dict[str, Array] = {}
    for name, shape, bound in param_spec(cfg, chain_index):
        if bound is None:
            params[name] = np.zeros(shape, dtype=cfg.np_dtype)
        else:
            params[name] = rng.uniform(-bound, bound, size=shape).astype(cfg.np_dtype)
    return params


@dataclass
class ForwardState:
    """Tape tensors produced by one forward pass."""

    H: Tensor
    relations: list[Tensor]
    chain_reps: dict[str, list[Tensor]]
    alpha: dict[str, Tensor | None]
    Z: Tensor | None
    Z_bar: Tensor | None
    Z_final: Tensor


def transform_attributes(tape: Tape, params: dict[str, Tensor], cfg: ModelConfig) -> tuple[Tensor, list[Tensor]]:
    """Project node/edge attributes into the shared space; relation vectors
    are normalized to unit modulus entry-by-entry."""
    H = ad.matmul(params["node_attr"], params["W_node"])
    if cfg.edge_attr_mode == "learnable":
        edge_attr = params["edge_attr"]
    else:
        edge_attr = tape.constant(np.eye(cfg.num_relations, dtype=cfg.np_dtype))
    relations = []
    for i in range(cfg.num_relations):
        row = ad.reshape(ad.gather_rows(edge_attr, np.array([i])), (cfg.edge_attr_dim,))
        raw = ad.matmul(row, params[f"W_edge.{i}"])
        relations.append(ad.complex_unit_normalize(raw))
    return H, relations


def _compose_rotations(relations: list[Tensor], memo: dict, chain: tuple[int, ...]) -> Tensor:
    if chain in memo:
        return memo[chain]
    if len(chain) == 1:
        rho = relations[chain[0]]
    else:
        rho = ad.complex_hadamard(_compose_rotations(relations, memo, chain[:-1]), relations[chain[-1]])
    memo[chain] = rho
    return rho


def _reach_sums(
    graph: TrustGraph,
    chains: tuple[tuple[int, ...], ...],
    direction: str,
    H: Tensor,
    dtype: np.dtype,
) -> dict[tuple[int, ...], Tensor]:
    """Walk-sum of H over each chain's relation sequence, sharing partial
    products between chains with a common prefix (trustee) or suffix (trustor)."""
    memo: dict[tuple[int, ...], Tensor] = {}

    def get(seq: tuple[int, ...]) -> Tensor:
        if seq in memo:
            return memo[seq]
        if direction == TRUSTEE:
            t, rest = seq[-1], seq[:-1]
            mat, mat_t = graph.adjacency_t(t, dtype), graph.adjacency(t, dtype)
        else:
            t, rest = seq[0], seq[1:]
            mat, mat_t = graph.adjacency(t, dtype), graph.adjacency_t(t, dtype)
        src = get(rest) if rest else H
        out = ad.sparse_matmul(mat, mat_t, src)
        memo[seq] = out
        return out

    return {seq: get(seq) for seq in chains}


def propagate_chain_type(
    tape: Tape,
    graph: TrustGraph,
    chain: tuple[int, ...],
    direction: str,
    H: Tensor,
    relations: list[Tensor],
) -> Tensor:
    """Message each node receives over one chain type.

    The composed rotation is constant per chain type and rotation distributes
    over sums, so rotating the walk-sum equals summing per-walk rotated
    sources; the trustor role applies the conjugated rotation.
    """
    if direction not in (TRUSTEE, TRUSTOR):
        raise ValueError(f"unknown direction {direction!r}")
    dtype = H.data.dtype
    reach = _reach_sums(graph, (tuple(chain),), direction, H, dtype)[tuple(chain)]
    rho = _compose_rotations(relations, {}, tuple(chain))
    if direction == TRUSTOR:
        rho = ad.complex_conjugate(rho)
    return ad.complex_hadamard(reach, rho)


def aggregate_chain_type(tape: Tape, H: Tensor, message: Tensor | None, w_p: Tensor) -> Tensor:
    """Per-type representation: linear map of the self term plus the chain
    messages (absent messages mean the sum over an empty walk set)."""
    inp = H if message is None else ad.add(H, message)
    return ad.matmul(inp, w_p)


def attention_weights(tape: Tape, chain_reps: list[Tensor], w_attn: Tensor, b: Tensor, q: Tensor) -> Tensor:
    """Simplex weights over chain types: graph-averaged tanh feature score per
    type, normalized by softmax."""
    if not chain_reps:
        raise ValueError("attention needs at least one chain type")
    scores = []
    for rep in chain_reps:
        projected = ad.tanh(ad.add(ad.matmul(rep, w_attn), b))
        scores.append(ad.mean_all(ad.matmul(projected, q)))
    return ad.softmax(ad.stack_scalars(scores))


def combine_chain_types(tape: Tape, chain_reps: list[Tensor], alpha: Tensor | None) -> Tensor:
    """Weighted sum of per-type representations; None weights mean a plain sum
    (the uniform-aggregation ablation)."""
    total: Tensor | None = None
    for j, rep in enumerate(chain_reps):
        term = rep if alpha is None else ad.mul_scalar(rep, ad.index_scalar(alpha, j))
        total = term if total is None else ad.add(total, term)
    assert total is not None
    return total


def fuse_roles(
    tape: Tape,
    Z: Tensor | None,
    Z_bar: Tensor | None,
    w_fuse: Tensor,
    variant: str,
) -> Tensor:
    """Final embedding: concatenated roles through the fusion map; the
    single-role ablations project their one role directly."""
    if variant == "trustgnn-1":
        assert Z is not None
        return ad.matmul(Z, w_fuse)
    if variant == "trustgnn-2":
        assert Z_bar is not None
        return ad.matmul(Z_bar, w_fuse)
    assert Z is not None and Z_bar is not None
    return ad.matmul(ad.concat_last(Z, Z_bar), w_fuse)


def forward(
    tape: Tape,
    params: dict[str, Tensor],
    graph: TrustGraph,
    chain_index: ChainIndex,
    cfg: ModelConfig,
) -> ForwardState:
    H, relations = transform_attributes(tape, params, cfg)
    dtype = cfg.np_dtype
    chain_reps: dict[str, list[Tensor]] = {}
    alpha: dict[str, Tensor | None] = {TRUSTEE: None, TRUSTOR: None}
    combined: dict[str, Tensor | None] = {TRUSTEE: None, TRUSTOR: None}
    rho_memo: dict[tuple[int, ...], Tensor] = {}
    for role in variant_roles(cfg.variant):
        reach = _reach_sums(graph, chain_index.types, role, H, dtype)
        reps = []
        for chain in chain_index:
            rho = _compose_rotations(relations, rho_memo, chain)
            if role == TRUSTOR:
                rho = ad.complex_conjugate(rho)
            message = ad.complex_hadamard(reach[chain], rho)
            reps.append(aggregate_chain_type(tape, H, message, params[chain_param_name(role, chain)]))
        chain_reps[role] = reps
        if cfg.variant != "trustgnn-3":
            alpha[role] = attention_weights(
                tape, reps,
                params[f"attn.{role}.W"], params[f"attn.{role}.b"], params[f"attn.{role}.q"],
            )
        combined[role] = combine_chain_types(tape, reps, alpha[role])
    Z = combined.get(TRUSTEE)
    Z_bar = combined.get(TRUSTOR)
    Z_final = fuse_roles(tape, Z, Z_bar, params["W_fuse"], cfg.variant)
    return ForwardState(
        H=H,
        relations=relations,
        chain_reps=chain_reps,
        alpha=alpha,
        Z=Z,
        Z_bar=Z_bar,
        Z_final=Z_final,
    )


def pair_logits(tape: Tape, params: dict[str, Tensor], z_final: Tensor, src: Array, dst: Array) -> Tensor:
    """Predictor MLP on ordered pairs: relu hidden layer on the concatenated
    endpoint embeddings, one logit per relation class."""
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    if np.any(src == dst):
        i = int(np.argmax(src == dst))
        raise ValueError(f"cannot score a node against itself (pair {src[i]})")
    x = ad.concat_last(ad.gather_rows(z_final, src), ad.gather_rows(z_final, dst))
    hidden = ad.relu(ad.add(ad.matmul(x, params["mlp.W1"]), params["mlp.b1"]))
    return ad.add(ad.matmul(hidden, params["mlp.W2"]), params["mlp.b2"])


def pair_probabilities_np(params: dict[str, Array], z_final: Array, src: Array, dst: Array) -> Array:
    """Plain-numpy predictor path for evaluation and serving."""
    x = np.concatenate([z_final[np.asarray(src)], z_final[np.asarray(dst)]], axis=-1)
    hidden = np.maximum(x @ params["mlp.W1"] + params["mlp.b1"], 0.0)
    return ad.softmax_rows(hidden @ params["mlp.W2"] + params["mlp.b2"])


def predict_pair(params: dict[str, Array], z_final: Array, u: int, v: int) -> Array:
    """Class distribution for the ordered pair (u, v)."""
    if u == v:
        raise ValueError("trust of a node in itself is undefined")
    n = z_final.shape[0]
    if not (0 <= u < n and 0 <= v < n):
        raise IndexError(f"pair ({u}, {v}) outside the {n}-node graph")
    return pair_probabilities_np(params, z_final, np.array([u]), np.array([v]))[0]


def model_loss(
    tape: Tape,
    params: dict[str, Tensor],
    graph: TrustGraph,
    chain_index: ChainIndex,
    cfg: ModelConfig,
    edges: Array,
) -> tuple[Tensor, ForwardState]:
    """Mean cross-entropy of the predictor over (src, dst, rel) triples."""
    edges = np.asarray(edges)
    if edges.size == 0:
        raise ValueError("empty edge batch")
    state = forward(tape, params, graph, chain_index, cfg)
    logits = pair_logits(tape, params, state.Z_final, edges[:, 0], edges[:, 1])
    return ad.cross_entropy(logits, edges[:, 2]), state
