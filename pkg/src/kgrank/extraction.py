"""Subgraph retrieval: entity linking, hop expansion, scoring, pruning, assembly.

The output ``SubgraphSpec`` is the graph-side input transformation: kept
concepts plus one virtual super node that represents the whole dialogue text,
connected to every concept by a super-edge whose weight is the concept's
relevance score. Scores and initial concept embeddings come from the frozen
scorer snapshot, so a spec for a given (sample, candidate) pair is stable
across the whole training run.

Every knowledge-graph access (linking, expansion, scoring) bumps
``KG_COUNTER``; graph-free inference asserts that it never moves.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .encoder import split_text, trans_a
from .kg import ConceptLexicon, KnowledgeGraph, induced_edges, k_hop_neighbors

__all__ = [
    "KG_COUNTER", "AccessCounter", "ScoredConcept", "SubgraphSpec",
    "ExtractionConfig", "Extractor", "link_entities", "score_concepts",
    "rank_and_prune", "SUPER_RELATION",
]

SUPER_RELATION = "__super__"

NODE_TYPE_SUPER, NODE_TYPE_LINKED, NODE_TYPE_EXPANDED = 0, 1, 2


class AccessCounter:
    """Counts knowledge-graph touches; read by the graph-free inference check."""

    def __init__(self):
        self.count = 0

    def bump(self, n=1):
        self.count += n

    def reset(self):
        self.count = 0


KG_COUNTER = AccessCounter()


@dataclass(frozen=True)
class ScoredConcept:
    concept: int
    origin: str  # "linked" | "expanded"
    score: float


@dataclass
class SubgraphSpec:
    """Super-node subgraph for one (sample, candidate) pair.

    Node 0 is the super node; concept i sits at local index i + 1. The
    super-edges (one per concept, weight = relevance score) are implied by
    ``concepts`` and materialized by ``super_edges``.
    """

    concepts: list[ScoredConcept]
    kg_edges: list[tuple[int, int, int, float]]  # (local head, relation, local tail, weight)
    concept_embeddings: np.ndarray  # (len(concepts), d), frozen-snapshot vectors
    super_seed: np.ndarray  # h' for the super node at extraction time
    relation_names: dict[int, str] = field(default_factory=dict)

    @property
    def node_count(self) -> int:
        return len(self.concepts) + 1

    @property
    def super_edges(self) -> list[tuple[int, float]]:
        return [(i + 1, c.score) for i, c in enumerate(self.concepts)]

    def node_types(self) -> np.ndarray:
        types = [NODE_TYPE_SUPER]
        types += [NODE_TYPE_LINKED if c.origin == "linked" else NODE_TYPE_EXPANDED
                  for c in self.concepts]
        return np.asarray(types, dtype=np.int64)

    def to_jsonable(self, graph=None):
        obj = {
            "concepts": [{"concept": c.concept, "origin": c.origin, "score": c.score}
                         for c in self.concepts],
            "kg_edges": [list(e) for e in self.kg_edges],
            "super_edges": [list(e) for e in self.super_edges],
            "concept_embeddings": self.concept_embeddings.tolist(),
            "super_seed": self.super_seed.tolist(),
        }
        if graph is not None:
            for c in obj["concepts"]:
                c["phrase"] = graph.concepts.name_of(c["concept"])
        return obj


@dataclass
class ExtractionConfig:
    max_nodes: int = 200  # K, kept concepts per subgraph
    hops: int = 2

    def __post_init__(self):
        if self.max_nodes < 0 or self.hops < 0:
            raise ValueError("max_nodes and hops must be >= 0")


def link_entities(tokens, lexicon: ConceptLexicon) -> set[int]:
    """Greedy longest-match n-gram scan over a token stream.

    Matched spans never overlap; at each position the longest lexicon phrase
    wins and the scan resumes after it.
    """
    KG_COUNTER.bump()
    found = set()
    i, n = 0, len(tokens)
    max_len = lexicon.max_phrase_tokens
    while i < n:
        hit = None
        for span in range(min(max_len, n - i), 0, -1):
            cid = lexicon.lookup(" ".join(tokens[i:i + span]))
            if cid is not None:
                hit = (cid, span)
                break
        if hit is None:
            i += 1
        else:
            found.add(hit[0])
            i += hit[1]
    return found


def score_concepts(h_ctx: np.ndarray, candidates, table, origin="linked") -> list[ScoredConcept]:
    """Dot-product relevance of each candidate concept against the context vector."""
    KG_COUNTER.bump()
    out = []
    for cid in sorted(candidates):
        emb = table.get(cid)
        if emb is None:
            raise KeyError(f"concept {cid} missing from the precomputed embedding table")
        out.append(ScoredConcept(cid, origin, float(np.dot(h_ctx, emb))))
    return out


def rank_and_prune(scored, k: int) -> list[ScoredConcept]:
    """Top-k by descending score, ties broken by ascending concept id."""
    if k < 0:
        raise ValueError("k must be >= 0")
    return sorted(scored, key=lambda c: (-c.score, c.concept))[:k]


class Extractor:
    """Binds a knowledge graph and a frozen scorer into the retrieval pipeline."""

    def __init__(self, graph: KnowledgeGraph, snapshot, config: ExtractionConfig = None):
        self.graph = graph
        self.lexicon = ConceptLexicon(graph)
        self.snapshot = snapshot
        self.config = config or ExtractionConfig()
        self.table = snapshot.concept_table(graph)

    def linked_concepts(self, sample, candidate_index: int) -> set[int]:
        tokens = []
        for text in (*sample.persona, *sample.context, sample.candidates[candidate_index]):
            tokens.extend(split_text(text))
        return link_entities(tokens, self.lexicon)

    def build(self, sample, candidate_index: int, model=None) -> SubgraphSpec:
        """Full pipeline: link -> expand -> score -> prune -> induce -> assemble.

        `model` supplies the live super-node seed; without it the recorded
        seed is zero and the caller passes the live representation at
        propagation time.
        """
        seq = trans_a(self.snapshot.vocab if model is None else model.vocab,
                      sample, candidate_index, self.snapshot.config.max_seq_len)
        if model is None:
            super_seed = np.zeros(self.snapshot.config.dim)
        else:
            super_seed = model.encode(seq).data.copy()
        h_score = self.snapshot.encode_sequence(seq)

        linked = self.linked_concepts(sample, candidate_index)
        KG_COUNTER.bump()  # neighbor expansion
        expanded = k_hop_neighbors(self.graph, linked, self.config.hops) - linked

        scored = {c.concept: c for c in score_concepts(h_score, linked | expanded, self.table)}
        linked_scored = [scored[c] for c in sorted(linked)]
        expanded_scored = [
            ScoredConcept(c, "expanded", scored[c].score) for c in sorted(expanded)]

        # directly mentioned concepts are always kept; pruning hits expansions first
        k = self.config.max_nodes
        if len(linked_scored) >= k:
            kept = rank_and_prune(linked_scored, k)
        else:
            kept = linked_scored + rank_and_prune(expanded_scored, k - len(linked_scored))
        kept = sorted(kept, key=lambda c: (-c.score, c.concept))

        kept_ids = [c.concept for c in kept]
        local = {cid: i + 1 for i, cid in enumerate(kept_ids)}
        kg_edges = [(local[h], r, local[t], w)
                    for h, r, t, w in induced_edges(self.graph, set(kept_ids))]
        emb_dim = self.snapshot.config.dim
        embs = (np.stack([self.table[c] for c in kept_ids])
                if kept_ids else np.zeros((0, emb_dim)))
        rel_names = {r: self.graph.relations.name_of(r) for r in range(self.graph.n_relations)}
        return SubgraphSpec(concepts=kept, kg_edges=kg_edges, concept_embeddings=embs,
                            super_seed=super_seed, relation_names=rel_names)

    def n_relations(self) -> int:
        return self.graph.n_relations

    def write_specs_jsonl(self, samples, model, path):
        """One spec per (sample, candidate) pair, for inspection and caching."""
        with open(path, "w", encoding="utf-8") as fh:
            for si, sample in enumerate(samples):
                for ci in range(len(sample.candidates)):
                    spec = self.build(sample, ci, model)
                    obj = {"sample": si, "candidate": ci, **spec.to_jsonable(self.graph)}
                    fh.write(json.dumps(obj, sort_keys=True) + "\n")
