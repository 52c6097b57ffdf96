"""Release-gate property suite: every core invariant checked on generated
instances, one PASS/FAIL line per named property. Used by the `selfcheck` CLI
command and mirrored by the acceptance tests."""

from __future__ import annotations

import sys
import time
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import model as m
from .datagen import random_trust_graph, toy_asymmetric_graph
from .graph import (
    TRUSTEE,
    TRUSTOR,
    brute_force_chain_paths,
    chain_reach_sum,
    enumerate_chain_types,
    split_edges,
)
from .metrics import micro_f1
from .optim import adam_init, adam_step

ROTATION_TOL = 1e-10
REACH_TOL = 1e-9
GRAD_TOL_PRIMITIVE = 1e-6
GRAD_TOL_MODEL = 1e-4
CORPUS_SIZE = 200


def _rand_complex_pair(rng, n=7, d=12):
    return rng.standard_normal((n, d)), rng.standard_normal((n, d))


def _unit(rng, d=12):
    tape = ad.Tape()
    r = ad.complex_unit_normalize(tape.constant(rng.standard_normal(d) + 0.5))
    return tape, r


def check_rotation_modulus_preservation() -> str:
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(20):
        tape = ad.Tape()
        h = tape.constant(rng.standard_normal((9, 12)))
        r = ad.complex_unit_normalize(tape.constant(rng.standard_normal(12) + 0.3))
        rotated = ad.complex_hadamard(h, r)
        worst = max(worst, float(np.max(np.abs(
            ad.complex_modulus(rotated.data) - ad.complex_modulus(h.data)
        ))))
    assert worst <= ROTATION_TOL, f"modulus drift {worst:.3e}"
    return f"max modulus drift {worst:.1e}"


def check_rotation_composition_associativity() -> str:
    rng = np.random.default_rng(12)
    worst = 0.0
    for _ in range(20):
        tape = ad.Tape()
        h = tape.constant(rng.standard_normal((5, 10)))
        r1 = tape.constant(rng.standard_normal(10))
        r2 = tape.constant(rng.standard_normal(10))
        once = ad.complex_hadamard(h, ad.complex_hadamard(r1, r2))
        stepwise = ad.complex_hadamard(ad.complex_hadamard(h, r1), r2)
        worst = max(worst, float(np.max(np.abs(once.data - stepwise.data))))
    assert worst <= ROTATION_TOL, f"composition mismatch {worst:.3e}"
    return f"max composition mismatch {worst:.1e}"


def check_rotation_inversion_identity() -> str:
    rng = np.random.default_rng(13)
    worst = 0.0
    for _ in range(20):
        tape = ad.Tape()
        h = tape.constant(rng.standard_normal((6, 14)))
        r = ad.complex_unit_normalize(tape.constant(rng.standard_normal(14) + 0.4))
        back = ad.complex_hadamard(ad.complex_hadamard(h, r), ad.complex_conjugate(r))
        worst = max(worst, float(np.max(np.abs(back.data - h.data))))
    assert worst <= ROTATION_TOL, f"inversion residual {worst:.3e}"
    return f"max inversion residual {worst:.1e}"


def check_hadamard_commutativity() -> str:
    rng = np.random.default_rng(14)
    tape = ad.Tape()
    x, y = _rand_complex_pair(rng)
    a = ad.complex_hadamard(tape.constant(x), tape.constant(y))
    b = ad.complex_hadamard(tape.constant(y), tape.constant(x))
    assert np.array_equal(a.data, b.data), "hadamard product is not commutative"
    return "exact"


def check_unit_normalize_modulus() -> str:
    rng = np.random.default_rng(15)
    tape = ad.Tape()
    r = ad.complex_unit_normalize(tape.constant(rng.standard_normal(40) * 3 + 0.2))
    err = float(np.max(np.abs(ad.complex_modulus(r.data) - 1.0)))
    assert err <= 1e-9, f"normalized modulus off unit circle by {err:.3e}"
    return f"max |modulus-1| {err:.1e}"


def check_softmax_simplex() -> str:
    rng = np.random.default_rng(16)
    worst = 0.0
    # positivity at realistic spreads, stability at large magnitudes
    for shift in (0.0, 10.0, 1000.0):
        tape = ad.Tape()
        y = ad.softmax(tape.constant(rng.standard_normal(17) + shift))
        assert np.all(np.isfinite(y.data)), "softmax overflowed"
        assert np.all(y.data > 0), "softmax output not strictly positive"
        worst = max(worst, abs(float(y.data.sum()) - 1.0))
    assert worst <= 1e-9, f"softmax sum off by {worst:.3e}"
    return f"max |sum-1| {worst:.1e}"


def _corpus(count: int = CORPUS_SIZE):
    """Random graphs (<= 40 nodes) with a random chain of length <= 3 each."""
    rng = np.random.default_rng(2024)
    for i in range(count):
        n = int(rng.integers(5, 41))
        num_rel = int(rng.integers(1, 5))
        n_edges = int(min(rng.integers(n, 3 * n + 1), n * (n - 1)))
        graph = random_trust_graph(n, n_edges, num_rel, seed=1000 + i)
        k = int(rng.integers(1, 4))
        chain = tuple(int(rng.integers(num_rel)) for _ in range(k))
        d = 8
        H = rng.standard_normal((n, d))
        yield graph, chain, H, rng


def _brute_reach(graph, chain, direction, H):
    out = np.zeros_like(H)
    for v in range(graph.num_nodes):
        for path in brute_force_chain_paths(graph, chain, direction, v):
            u = path[0] if direction == TRUSTEE else path[-1]
            out[v] += H[u]
    return out


def check_chain_reach_matches_brute_force() -> str:
    worst = 0.0
    for graph, chain, H, _ in _corpus():
        for direction in (TRUSTEE, TRUSTOR):
            fast = chain_reach_sum(graph, chain, direction, H)
            slow = _brute_reach(graph, chain, direction, H)
            denom = max(float(np.max(np.abs(slow))), 1.0)
            worst = max(worst, float(np.max(np.abs(fast - slow))) / denom)
    assert worst <= REACH_TOL, f"reach sum deviates from path oracle by {worst:.3e}"
    return f"{CORPUS_SIZE} graphs, max relative deviation {worst:.1e}"


def _perpath_message(graph, chain, direction, H, rotations):
    """Literal per-walk propagation: rotate each walk's source stepwise."""
    Hc = ad.as_complex(H)
    rc = [ad.as_complex(r) for r in rotations]
    out = np.zeros_like(Hc)
    for v in range(graph.num_nodes):
        for path in brute_force_chain_paths(graph, chain, direction, v):
            if direction == TRUSTEE:
                z = Hc[path[0]].copy()
                for t in chain:
                    z = z * rc[t]
            else:
                z = Hc[path[-1]].copy()
                for t in reversed(chain):
                    z = z * np.conj(rc[t])
            out[v] += z
    return ad.from_complex(out)


def check_propagation_matches_per_path() -> str:
    worst = 0.0
    for graph, chain, H, rng in _corpus():
        tape = ad.Tape()
        Ht = tape.constant(H)
        rotations = [
            ad.complex_unit_normalize(tape.constant(rng.standard_normal(H.shape[1]) + 0.3))
            for _ in range(graph.num_relations)
        ]
        for direction in (TRUSTEE, TRUSTOR):
            fast = m.propagate_chain_type(tape, graph, chain, direction, Ht, rotations)
            slow = _perpath_message(graph, chain, direction, H, [r.data for r in rotations])
            denom = max(float(np.max(np.abs(slow))), 1.0)
            worst = max(worst, float(np.max(np.abs(fast.data - slow))) / denom)
    assert worst <= REACH_TOL, f"factorized propagation deviates by {worst:.3e}"
    return f"{CORPUS_SIZE} graphs, max relative deviation {worst:.1e}"


def _toy_setup(dtype="float64", variant="full"):
    graph = toy_asymmetric_graph()
    chain_index = enumerate_chain_types(4, 2, "upto-K")
    cfg = m.ModelConfig(
        num_nodes=graph.num_nodes, num_relations=4,
        d_attr_node=8, d_attr_edge=8, d=4, d_attn=4, d_z=4,
        K=2, variant=variant, dtype=dtype,
    )
    params = m.init_params(cfg, chain_index, np.random.default_rng(3))
    return graph, chain_index, cfg, params


def check_attention_simplex_contract() -> str:
    worst = 0.0
    for seed in range(5):
        graph = random_trust_graph(12, 40, 3, seed=seed)
        chain_index = enumerate_chain_types(3, 2, "upto-K")
        cfg = m.ModelConfig(
            num_nodes=12, num_relations=3, d_attr_node=6, d_attr_edge=6,
            d=4, d_attn=4, d_z=4, K=2, dtype="float64",
        )
        params = m.init_params(cfg, chain_index, np.random.default_rng(seed))
        tape = ad.Tape()
        tensors = {k: tape.param(v) for k, v in params.items()}
        state = m.forward(tape, tensors, graph, chain_index, cfg)
        for role in (TRUSTEE, TRUSTOR):
            a = state.alpha[role].data
            assert np.all(a > 0), f"{role} attention weight not strictly positive"
            worst = max(worst, abs(float(a.sum()) - 1.0))
    assert worst <= 1e-6, f"attention weights sum off by {worst:.3e}"
    return f"max |sum-1| {worst:.1e}"


def check_micro_f1_equals_accuracy() -> str:
    rng = np.random.default_rng(17)
    for _ in range(50):
        n = int(rng.integers(1, 200))
        classes = int(rng.integers(2, 6))
        y_true = rng.integers(classes, size=n)
        y_pred = rng.integers(classes, size=n)
        f1 = micro_f1(y_true, y_pred, classes)
        acc = float(np.mean(y_true == y_pred))
        assert abs(f1 - acc) <= 1e-12, f"micro-F1 {f1} != accuracy {acc}"
    return "50 random label sets"


def check_gradient_primitives() -> str:
    rng = np.random.default_rng(18)
    worst = 0.0

    cases = {
        "matmul": lambda tape, p: ad.sum_all(ad.matmul(p["a"], p["b"])),
        "add_bias": lambda tape, p: ad.sum_all(ad.add(p["a"], p["bias"])),
        "mul": lambda tape, p: ad.sum_all(ad.mul(p["a"], p["c"])),
        "tanh": lambda tape, p: ad.sum_all(ad.tanh(p["a"])),
        "relu": lambda tape, p: ad.sum_all(ad.relu(p["a"])),
        "softmax": lambda tape, p: ad.sum_all(ad.mul(ad.softmax(p["vec"]), p["vec"])),
        "hadamard": lambda tape, p: ad.sum_all(ad.complex_hadamard(p["a"], p["c"])),
        "conjugate": lambda tape, p: ad.sum_all(
            ad.complex_hadamard(p["a"], ad.complex_conjugate(p["c"]))
        ),
        "normalize": lambda tape, p: ad.sum_all(
            ad.complex_hadamard(p["a"], ad.complex_unit_normalize(p["vec"]))
        ),
        "cross_entropy": lambda tape, p: ad.cross_entropy(p["logits"], np.array([0, 2, 1])),
        "gather": lambda tape, p: ad.sum_all(ad.gather_rows(p["a"], np.array([1, 1, 3]))),
        "mean": lambda tape, p: ad.mean_all(p["a"]),
    }
    params = {
        "a": rng.standard_normal((4, 6)),
        "b": rng.standard_normal((6, 3)),
        "c": rng.standard_normal((4, 6)),
        "bias": rng.standard_normal(6),
        "vec": rng.standard_normal(6) + 0.4,
        "logits": rng.standard_normal((3, 4)),
    }
    for name, fn in cases.items():
        err = ad.finite_diff_check(fn, params, seed=5)
        assert err <= GRAD_TOL_PRIMITIVE, f"{name}: gradient error {err:.3e}"
        worst = max(worst, err)
    return f"{len(cases)} primitives, worst error {worst:.1e}"


def check_gradient_full_model() -> str:
    graph, chain_index, cfg, _ = _toy_setup()
    # Generic evaluation point: fan-in init leaves some true gradients near
    # the 1e-8 guard where central differences are pure cancellation noise.
    rng = np.random.default_rng(42)
    params = {
        name: rng.uniform(-0.7, 0.7, size=shape)
        for name, shape, _ in m.param_spec(cfg, chain_index)
    }
    edges = np.stack([graph.src, graph.dst, graph.rel], axis=1)

    def loss_fn(tape, tensors):
        loss, _ = m.model_loss(tape, tensors, graph, chain_index, cfg, edges)
        return loss

    err = ad.finite_diff_check(loss_fn, params, seed=7)
    assert err <= GRAD_TOL_MODEL, f"end-to-end gradient error {err:.3e}"
    return f"max relative error {err:.1e}"


def check_adam_determinism() -> str:
    rng = np.random.default_rng(19)
    params1 = {"w": rng.standard_normal((3, 3))}
    params2 = {k: v.copy() for k, v in params1.items()}
    grads = {"w": rng.standard_normal((3, 3))}
    s1 = adam_init(params1, lr=0.01)
    s2 = adam_init(params2, lr=0.01)
    for _ in range(5):
        adam_step(params1, grads, s1)
        adam_step(params2, grads, s2)
    assert np.array_equal(params1["w"], params2["w"]), "adam updates diverged"
    return "5 identical steps, bitwise equal"


def check_split_determinism() -> str:
    graph = random_trust_graph(30, 120, 4, seed=4)
    a = split_edges(graph, 0.8, seed=7)
    b = split_edges(graph, 0.8, seed=7)
    assert np.array_equal(a.train_index, b.train_index), "split not reproducible"
    assert np.array_equal(a.test_index, b.test_index), "split not reproducible"
    overlap = np.intersect1d(a.train_index, a.test_index)
    assert overlap.size == 0, "train and test overlap"
    assert a.train_index.size + a.test_index.size == graph.num_edges
    return "seed 7 reproduces; partition exact"


CHECKS = [
    ("rotation-modulus-preservation", check_rotation_modulus_preservation),
    ("rotation-composition-associativity", check_rotation_composition_associativity),
    ("rotation-inversion-identity", check_rotation_inversion_identity),
    ("hadamard-commutativity", check_hadamard_commutativity),
    ("unit-normalize-modulus", check_unit_normalize_modulus),
    ("softmax-simplex", check_softmax_simplex),
    ("chain-reach-matches-brute-force", check_chain_reach_matches_brute_force),
    ("propagation-matches-per-path", check_propagation_matches_per_path),
    ("attention-simplex-contract", check_attention_simplex_contract),
    ("micro-f1-equals-accuracy", check_micro_f1_equals_accuracy),
    ("gradient-check-primitives", check_gradient_primitives),
    ("gradient-check-full-model", check_gradient_full_model),
    ("adam-step-determinism", check_adam_determinism),
    ("edge-split-determinism", check_split_determinism),
]


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float


def run_selfcheck(stream=None, names: list[str] | None = None) -> list[CheckResult]:
    stream = stream if stream is not None else sys.stderr
    results = []
    for name, fn in CHECKS:
        if names is not None and name not in names:
            continue
        t0 = time.time()
        try:
            detail = fn()
            results.append(CheckResult(name, True, detail or "", time.time() - t0))
        except Exception as exc:  # noqa: BLE001 - report, don't crash the gate
            results.append(CheckResult(name, False, f"{type(exc).__name__}: {exc}", time.time() - t0))
        r = results[-1]
        status = "PASS" if r.passed else "FAIL"
        print(f"{status} {r.name} ({r.seconds:.2f}s) {r.detail}", file=stream)
    return results
