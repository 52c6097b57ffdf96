"""Generated graphs: test fixtures, property-check corpora, and a synthetic
trust network with learnable structure for end-to-end runs when no real
dataset file is on disk."""

from __future__ import annotations

import numpy as np

from .graph import TrustGraph


def toy_asymmetric_graph() -> TrustGraph:
    """Six users whose only consistent labeling is asymmetric: node 0 trusts
    node 1 as master while node 1 trusts node 0 as observer. The remaining
    edges give every node incoming and outgoing chains."""
    edges = [
        (0, 1, 3),
        (1, 0, 0),
        (1, 2, 2),
        (2, 3, 1),
        (3, 0, 2),
        (2, 4, 3),
        (4, 5, 1),
        (5, 2, 0),
        (3, 5, 3),
        (5, 0, 1),
        (4, 1, 2),
        (0, 3, 0),
    ]
    return TrustGraph(6, 4, edges)


def random_trust_graph(
    num_nodes: int,
    num_edges: int,
    num_relations: int = 4,
    seed: int = 0,
) -> TrustGraph:
    """Uniform random digraph (distinct ordered pairs, no self-loops)."""
    rng = np.random.default_rng(seed)
    max_edges = num_nodes * (num_nodes - 1)
    if num_edges > max_edges:
        raise ValueError(f"{num_edges} edges do not fit in {num_nodes} nodes")
    seen: set[tuple[int, int]] = set()
    triples = []
    while len(triples) < num_edges:
        s = int(rng.integers(num_nodes))
        d = int(rng.integers(num_nodes))
        if s == d or (s, d) in seen:
            continue
        seen.add((s, d))
        triples.append((s, d, int(rng.integers(num_relations))))
    return TrustGraph(num_nodes, num_relations, triples)


def synthetic_trust_graph(
    num_nodes: int = 400,
    num_edges: int = 4000,
    num_relations: int = 4,
    seed: int = 0,
    noise: float = 0.12,
) -> TrustGraph:
    """Trust network with propagating structure.

    Each node gets a latent competence score; edges attach preferentially to
    competent nodes and the trust level quantizes the target's competence plus
    noise, so levels correlate along chains and held-out edges are genuinely
    predictable from observed ones.
    """
    rng = np.random.default_rng(seed)
    competence = rng.beta(2.0, 2.0, size=num_nodes)
    weights = np.exp(2.5 * competence)
    weights /= weights.sum()
    cuts = np.quantile(competence, np.linspace(0, 1, num_relations + 1)[1:-1])
    seen: set[tuple[int, int]] = set()
    triples = []
    while len(triples) < num_edges:
        s = int(rng.integers(num_nodes))
        d = int(rng.choice(num_nodes, p=weights))
        if s == d or (s, d) in seen:
            continue
        seen.add((s, d))
        level = int(np.searchsorted(cuts, competence[d] + rng.normal(0.0, noise)))
        triples.append((s, d, min(level, num_relations - 1)))
    return TrustGraph(num_nodes, num_relations, triples)
