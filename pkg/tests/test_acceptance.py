"""Acceptance suite: one test per criterion, one printed PASS line each.

Run `pytest tests/test_acceptance.py -v` for the per-criterion lines, or
plain `pytest` to include them in the full suite. The two long paired-training
checks are marked `slow`.
"""

import collections
import json
import math
import sys
import time

import numpy as np
import pytest

from kgrank import tensor as tt
from kgrank import training
from kgrank.data import MrsSample, load_dataset
from kgrank.encoder import EncoderConfig, EncoderModel, Vocabulary, split_text, trans_a
from kgrank.evaluation import RankResult, evaluate, latency_bench, mrr, r_at_k
from kgrank.extraction import (
    KG_COUNTER, ExtractionConfig, Extractor, ScoredConcept,
    link_entities, rank_and_prune,
)
from kgrank.gnn import GnnConfig, GnnParams, bridged_seed, propagate
from kgrank.kg import ConceptLexicon, KnowledgeGraph, k_hop_neighbors
from kgrank.synth import SynthConfig, synth_generate, write_corpus
from kgrank.tensor import Tensor
from kgrank.training import LossWeights, TrainConfig, bce_loss, combined_loss, cosine_loss

from test_extraction import span_oracle
from test_kg import bfs_oracle, random_graph
from test_tensor import assert_grad_close, fd_gradient


def _pass(criterion, text):
    print(f"[criterion {criterion:>2}] PASS  {text}", file=sys.__stdout__, flush=True)


# shared desk-scale run shape for the end-to-end criteria
RUN_ENCODER = {"dim": 32, "layers": 2, "heads": 2, "max_seq_len": 48}
RUN_GNN = {"layers": 2, "type_emb_dim": 8, "rel_emb_dim": 8}


def run_config(variant, seed, epochs, **kw):
    base = dict(variant=variant, seed=seed, epochs=epochs, batch_size=16, lr=2e-3,
                max_nodes=12, hops=2, encoder=dict(RUN_ENCODER), gnn=dict(RUN_GNN))
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture(scope="module")
def corpus7(tmp_path_factory):
    """The pinned transfer corpus: seed 7, 300/60 dialogues, 20 candidates."""
    config = SynthConfig(seed=7, n_train_dialogues=300, n_dev_dialogues=60,
                         n_candidates=20, paraphrase_fraction=0.6)
    result = synth_generate(config)
    report = write_corpus(result, tmp_path_factory.mktemp("corpus7"))
    graph = KnowledgeGraph()
    for rel, h, t, w in result.kg_edges:
        graph.add_edge(rel, h, t, w)
    return result, graph, report


# ---------------------------------------------------------------------------
# 1. gradient correctness

def test_criterion_01_gradient_correctness():
    t0 = time.perf_counter()
    rng = np.random.default_rng(101)
    cases = 0

    def fd_check(build, shapes):
        nonlocal cases
        arrs = [rng.uniform(-2, 2, size=s) for s in shapes]
        ts = [Tensor(a, requires_grad=True) for a in arrs]
        tt.sum_all(build(*ts)).backward()
        for i, a in enumerate(arrs):
            def f(v, i=i):
                vals = [Tensor(u) for u in arrs]
                vals[i] = Tensor(v.reshape(a.shape))
                return tt.sum_all(build(*vals)).item()

            assert_grad_close(ts[i].grad.ravel(), fd_gradient(f, a.ravel().copy()))
        cases += 1

    for _ in range(12):
        fd_check(lambda a, b: tt.matmul(a, b), [(3, 4), (4, 2)])
        fd_check(tt.softmax_rows, [(3, 5)])
        fd_check(tt.sigmoid, [(2, 3)])
        fd_check(tt.tanh, [(2, 3)])
        fd_check(tt.relu, [(2, 3)])
        fd_check(tt.layernorm_rows, [(2, 6)])
        fd_check(lambda u, v: tt.cosine(u, v), [(5,), (5,)])
        fd_check(lambda y: bce_loss(1.0, tt.sigmoid(tt.mean_all(y))), [(4,)])
        fd_check(lambda u, v: combined_loss(
            LossWeights(alpha=0.3),
            bce_loss(0.0, tt.sigmoid(tt.dot(u, v))),
            cosine_loss(u, v)), [(5,), (5,)])

    # full encoder: d(predict)/d(every parameter)
    vocab = Vocabulary(["a", "b", "c"])
    model = EncoderModel(EncoderConfig(dim=8, layers=1, heads=2, max_seq_len=8),
                         vocab, rng=rng)
    for p in model.params.values():
        p.data[...] = rng.uniform(-0.5, 0.5, p.data.shape)
    sample = MrsSample(["a b"], ["c"], ["b a"], [1])
    seq = trans_a(vocab, sample, 0, 8)
    model.predict(model.encode(seq)).backward()
    for name, p in model.params.items():
        def f(v, name=name, shape=p.data.shape):
            saved = model.params[name].data.copy()
            model.params[name].data[...] = v.reshape(shape)
            out = model.predict(model.encode(seq)).item()
            model.params[name].data[...] = saved
            return out

        analytic = (p.grad if p.grad is not None else np.zeros_like(p.data)).ravel()
        assert_grad_close(analytic, fd_gradient(f, p.data.ravel().copy()))
        cases += 1

    # full GNN layer stack: d(sum h_X)/d(every attention parameter and the seed)
    from test_gnn import make_spec
    spec = make_spec(rng, n_concepts=3, n_edges=3, dim=4)
    params = GnnParams(GnnConfig(layers=2, type_emb_dim=2, rel_emb_dim=2),
                       input_dim=4, n_kg_relations=2, rng=rng)
    seed_arr = spec.super_seed.copy()
    seed = Tensor(seed_arr, requires_grad=True)
    tt.sum_all(propagate(spec, params, super_seed=seed)).backward()

    def f_seed(v):
        return tt.sum_all(propagate(spec, params, super_seed=Tensor(v))).item()

    assert_grad_close(seed.grad, fd_gradient(f_seed, seed_arr.copy()))
    cases += 1
    for name, p in params.params.items():
        def f(v, name=name, shape=p.data.shape):
            saved = params.params[name].data.copy()
            params.params[name].data[...] = v.reshape(shape)
            out = tt.sum_all(propagate(spec, params, super_seed=Tensor(seed_arr))).item()
            params.params[name].data[...] = saved
            return out

        analytic = (p.grad if p.grad is not None else np.zeros_like(p.data)).ravel()
        assert_grad_close(analytic, fd_gradient(f, p.data.ravel().copy()))
        cases += 1

    elapsed = time.perf_counter() - t0
    assert cases >= 100, f"only {cases} finite-difference cases"
    assert elapsed < 60.0, f"gradient checks took {elapsed:.1f}s"
    _pass(1, f"{cases} finite-difference cases, max(1e-4 rel, 1e-6 abs), {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# 2. metric oracles

def test_criterion_02_metric_oracles():
    rng = np.random.default_rng(202)
    ranks = [int(r) for r in rng.integers(1, 21, size=1000)]
    results = [RankResult(i, [0.0] * 20, r) for i, r in enumerate(ranks)]
    for k in (1, 2, 5, 10, 20):
        direct = sum(1 for r in ranks if r <= k) / len(ranks)
        assert abs(r_at_k(results, 20, k) - direct) <= 1e-12
    direct_mrr = sum(1.0 / r for r in ranks) / len(ranks)
    assert abs(mrr(results) - direct_mrr) <= 1e-12
    two_four = [RankResult(0, [0.0] * 20, 2), RankResult(1, [0.0] * 20, 4)]
    assert mrr(two_four) == 0.375
    _pass(2, "r_at_k and mrr match brute-force counting on 1000 rank vectors; MRR([2,4]) == 0.375")


# ---------------------------------------------------------------------------
# 3. extraction oracles

def test_criterion_03_extraction_oracles():
    rng = np.random.default_rng(303)
    for _ in range(200):
        g = random_graph(rng, n_nodes=50, n_edges=int(rng.integers(20, 120)))
        seeds = set(rng.integers(0, 50, size=rng.integers(1, 5)).tolist())
        k = int(rng.integers(0, 4))
        assert k_hop_neighbors(g, seeds, k) == bfs_oracle(g, seeds, k)

    for _ in range(200):
        scored = [ScoredConcept(i, "linked", float(rng.choice([-1.0, 0.5, rng.uniform(-2, 2)])))
                  for i in range(int(rng.integers(0, 400)))]
        k = int(rng.integers(0, 220))
        assert rank_and_prune(scored, k) == sorted(
            scored, key=lambda c: (-c.score, c.concept))[:k]

    words = [f"w{i}" for i in range(12)]
    for _ in range(200):
        phrases = set()
        while len(phrases) < int(rng.integers(1, 8)):
            phrases.add(" ".join(rng.choice(words, size=int(rng.integers(1, 4)))))
        g = KnowledgeGraph()
        for p in sorted(phrases):
            g.concepts.intern(p)
        g.adjacency.extend([] for _ in range(g.n_concepts - len(g.adjacency)))
        lex = ConceptLexicon(g)
        tokens = [str(w) for w in rng.choice(words, size=int(rng.integers(0, 25)))]
        assert link_entities(tokens, lex) == span_oracle(tokens, lex)

    _pass(3, "k-hop == BFS, pruning == sort-truncate, linking == exhaustive spans (200 trials each)")


# ---------------------------------------------------------------------------
# 4. subgraph structural contract

def test_criterion_04_subgraph_structure(corpus7):
    result, graph, _ = corpus7
    vocab = training.build_vocab(result.train, graph)
    model = EncoderModel(EncoderConfig(**RUN_ENCODER), vocab, rng=np.random.default_rng(4))
    extractor = Extractor(graph, model.snapshot(), ExtractionConfig(max_nodes=12, hops=2))
    checked = 0
    for sample in result.train[:20]:
        for ci in range(len(sample.candidates)):
            spec = extractor.build(sample, ci, model)
            assert spec.node_count == len(spec.concepts) + 1
            assert len(spec.super_edges) == len(spec.concepts)
            for (local, weight), c in zip(spec.super_edges, spec.concepts):
                assert weight == c.score  # bit-exact
            for h, r, t, w in spec.kg_edges:
                assert 1 <= h <= len(spec.concepts) and 1 <= t <= len(spec.concepts)
            checked += 1
    assert checked == 20 * 20
    _pass(4, f"{checked} specs: nodes == kept+1, one super-edge per concept, weights == scores")


# ---------------------------------------------------------------------------
# 5. loss contracts

def test_criterion_05_loss_contracts():
    rng = np.random.default_rng(505)
    for _ in range(20):
        h = Tensor(rng.uniform(-2, 2, int(rng.integers(2, 12))))
        assert cosine_loss(h, h).item() == -1.0
        assert cosine_loss(h, tt.neg(h)).item() == 1.0
    l_bce, l_cos = Tensor(0.8537), Tensor(-0.613)
    assert combined_loss(LossWeights(alpha=1.0), l_bce, l_cos).item() == l_bce.item()
    assert combined_loss(LossWeights(alpha=0.0), l_bce, l_cos).item() == l_cos.item()
    assert abs(bce_loss(0.0, Tensor(0.5)).item() - math.log(2)) <= 1e-12
    _pass(5, "L_cos(h,h) == -1, L_cos(h,-h) == +1, alpha boundaries exact, BCE(0, .5) == ln 2")


# ---------------------------------------------------------------------------
# 6. learning sanity

def test_criterion_06_overfit_toy_batch():
    t0 = time.perf_counter()
    samples = [
        MrsSample(["i like blue"], ["color ?"], ["blue", "red"], [1, 0]),
        MrsSample(["i like red"], ["color ?"], ["blue", "red"], [0, 1]),
        MrsSample(["i like green and gold"], ["color ?"], ["green", "red"], [1, 0]),
        MrsSample(["i like crimson"], ["color ?"], ["green", "crimson"], [0, 1]),
    ]
    cfg = TrainConfig(variant="plm", epochs=0, batch_size=8, seed=3, lr=3e-3,
                      encoder={"dim": 24, "layers": 1, "heads": 2, "max_seq_len": 24})
    state = training.ModelState(cfg, training.build_vocab(samples),
                                rng=np.random.default_rng(cfg.seed))
    rows = training.prepare_rows(state, samples)
    assert len(rows) == 8
    opt = training.AdamW(state.trainable_parameters(), lr=cfg.lr,
                         weight_decay=cfg.weight_decay)
    loss = None
    steps = 0
    for steps in range(1, 501):
        loss = training.train_step(rows, state, opt, cfg.weights)["loss"]
        if loss < 0.05:
            break
    elapsed = time.perf_counter() - t0
    assert loss < 0.05, f"loss stuck at {loss:.4f} after 500 steps"
    assert elapsed < 120.0, f"overfit run took {elapsed:.1f}s"
    _pass(6, f"toy batch loss {loss:.4f} < 0.05 after {steps} steps in {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# 7. the transfer effect (paired runs over 3 seeds)

TRANSFER_EPOCHS = 8
TRANSFER_SEEDS = (0, 1, 2)


def _best_dev_r1(logs):
    return max(l["dev_r_at_1"] for l in logs)


@pytest.mark.slow
def test_criterion_07_kg_transfer_gap(corpus7):
    t0 = time.perf_counter()
    result, graph, report = corpus7
    assert report["n_train"] == 300 and report["n_dev"] == 60
    assert all(len(s.candidates) == 20 for s in result.train + result.dev)
    assert report["paraphrase_only_train"] >= 0.5
    assert report["paraphrase_only_dev"] >= 0.5

    plm_scores, sinlg_scores = [], []
    for seed in TRANSFER_SEEDS:
        _, _, plm_logs = training.train(
            run_config("plm", seed, TRANSFER_EPOCHS), result.train, result.dev)
        _, _, sinlg_logs = training.train(
            run_config("sinlg", seed, TRANSFER_EPOCHS), result.train, result.dev,
            graph=graph)
        plm_scores.append(_best_dev_r1(plm_logs))
        sinlg_scores.append(_best_dev_r1(sinlg_logs))

    plm_avg = sum(plm_scores) / len(plm_scores)
    sinlg_avg = sum(sinlg_scores) / len(sinlg_scores)
    elapsed = time.perf_counter() - t0
    assert elapsed < 1800.0, f"paired runs took {elapsed:.0f}s"
    assert sinlg_avg - plm_avg >= 0.05, (
        f"transfer gap {sinlg_avg - plm_avg:.4f} < 0.05 "
        f"(sinlg {sinlg_scores}, plm {plm_scores})")
    _pass(7, f"dev R20@1 sinlg {sinlg_avg:.3f} vs plm {plm_avg:.3f} "
             f"(gap {sinlg_avg - plm_avg:.3f} >= 0.05, 3 seeds, {elapsed:.0f}s)")


# ---------------------------------------------------------------------------
# 8 + 9. graph-free inference and latency ordering

@pytest.fixture(scope="module")
def sinlg_checkpoint(corpus7):
    result, graph, _ = corpus7
    state, _, logs = training.train(run_config("sinlg", 11, 1), result.train[:60],
                                    result.dev[:12], graph=graph)
    extractor = Extractor(graph, state.snapshot, ExtractionConfig(max_nodes=12, hops=2))
    return state, extractor, result


def test_criterion_08_qo_free_inference(sinlg_checkpoint):
    state, _, result = sinlg_checkpoint
    KG_COUNTER.reset()
    report = evaluate(state, result.dev)
    assert KG_COUNTER.count == 0, f"eval touched the graph {KG_COUNTER.count} times"
    assert report["n_samples"] == 60
    _pass(8, "full eval over 60 instances with zero knowledge-graph accesses")


def test_criterion_09_latency_ordering(sinlg_checkpoint):
    state, extractor, result = sinlg_checkpoint
    report = latency_bench(state, result.dev[:8], extractor, repetitions=3)
    assert report.ratio > 1.0, f"online/qo-free ratio {report.ratio:.2f} <= 1"
    assert report.qo_free_best <= report.qo_free_avg <= report.qo_free_worst
    assert report.online_best <= report.online_avg <= report.online_worst
    _pass(9, f"online/graph-free average-time ratio {report.ratio:.1f} > 1.0")


# ---------------------------------------------------------------------------
# 10. ablation harness

@pytest.mark.slow
def test_criterion_10_ablation_and_sweeps(tmp_path):
    config = SynthConfig(seed=5, n_train_dialogues=40, n_dev_dialogues=16,
                         vocab_size=30, n_concepts=40, n_paraphrase_pairs=16,
                         n_noise_edges=12, n_candidates=8, paraphrase_fraction=0.5,
                         min_distractor_distance=3)
    result = synth_generate(config)
    graph = KnowledgeGraph()
    for rel, h, t, w in result.kg_edges:
        graph.add_edge(rel, h, t, w)

    rows = []
    for variant in ("plm", "s0", "s1", "s2", "s3", "sinlg"):
        cfg = run_config(variant, 1, 1, max_nodes=6, batch_size=16)
        state, _, logs = training.train(cfg, result.train, result.dev,
                                        graph=graph if variant != "plm" else None)
        assert logs and "dev_r_at_1" in logs[-1]
        rows.append({"variant": variant, "dev_r_at_1": logs[-1]["dev_r_at_1"]})
    assert [r["variant"] for r in rows] == ["plm", "s0", "s1", "s2", "s3", "sinlg"]

    alpha_rows = []
    for alpha in (0.1, 0.3, 0.5, 0.7, 0.9):
        cfg = run_config("sinlg", 2, 1, alpha=alpha, max_nodes=6, batch_size=16)
        _, _, logs = training.train(cfg, result.train, result.dev, graph=graph)
        alpha_rows.append({"alpha": alpha, "dev_r_at_1": logs[-1]["dev_r_at_1"]})
    assert [r["alpha"] for r in alpha_rows] == [0.1, 0.3, 0.5, 0.7, 0.9]

    node_rows = []
    for max_nodes in (10, 50, 100, 200, 300):
        cfg = run_config("sinlg", 2, 1, max_nodes=max_nodes, batch_size=16)
        _, _, logs = training.train(cfg, result.train, result.dev, graph=graph)
        node_rows.append({"max_nodes": max_nodes, "dev_r_at_1": logs[-1]["dev_r_at_1"]})
    assert [r["max_nodes"] for r in node_rows] == [10, 50, 100, 200, 300]

    _pass(10, f"6 variants + alpha sweep (5 rows) + max_nodes sweep (5 rows) all completed")


# ---------------------------------------------------------------------------
# 11. determinism

def test_criterion_11_determinism(tmp_path):
    config = dict(seed=5, n_train_dialogues=24, n_dev_dialogues=16, vocab_size=30,
                  n_concepts=40, n_paraphrase_pairs=16, n_noise_edges=12,
                  n_candidates=8, paraphrase_fraction=0.5, min_distractor_distance=3)
    reports = []
    for sub in ("a", "b"):
        result = synth_generate(SynthConfig(**config))
        write_corpus(result, tmp_path / sub)
        graph = KnowledgeGraph()
        for rel, h, t, w in result.kg_edges:
            graph.add_edge(rel, h, t, w)
        cfg = run_config("sinlg", 4, 2, max_nodes=6, batch_size=16)
        state, _, logs = training.train(cfg, result.train, result.dev, graph=graph)
        report = evaluate(state, result.dev)
        reports.append((json.dumps(logs, sort_keys=True), json.dumps(report, sort_keys=True)))
    for name in ("train.jsonl", "dev.jsonl", "kg.tsv", "report.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert reports[0] == reports[1]
    _pass(11, "byte-identical corpora, training logs, and metric reports across reruns")
