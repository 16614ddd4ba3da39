"""Multi-relational knowledge graph: TSV loading, interning, neighborhood queries.

Edges are stored directed as they appear in the file, but neighborhood
expansion treats them as undirected since conceptual relevance flows both
ways. The graph is immutable after load and safe for concurrent reads.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field

__all__ = [
    "EdgeListFormatError", "KnowledgeGraph", "ConceptLexicon",
    "normalize_phrase", "load_edge_list", "k_hop_neighbors", "induced_edges",
]

_WS = re.compile(r"\s+")


class EdgeListFormatError(ValueError):
    """A TSV edge-list line violates the `relation<TAB>head<TAB>tail[<TAB>weight]` format."""


def normalize_phrase(phrase: str) -> str:
    """Lowercase, underscores/hyphens to spaces, internal whitespace collapsed."""
    return _WS.sub(" ", phrase.lower().replace("_", " ").replace("-", " ")).strip()


class _Interner:
    """Bijective string <-> dense id table."""

    def __init__(self):
        self._ids: dict[str, int] = {}
        self._names: list[str] = []

    def intern(self, name: str) -> int:
        idx = self._ids.get(name)
        if idx is None:
            idx = len(self._names)
            self._ids[name] = idx
            self._names.append(name)
        return idx

    def id_of(self, name: str):
        return self._ids.get(name)

    def name_of(self, idx: int) -> str:
        return self._names[idx]

    def __len__(self):
        return len(self._names)

    def __contains__(self, name):
        return name in self._ids


@dataclass
class KnowledgeGraph:
    concepts: _Interner = field(default_factory=_Interner)
    relations: _Interner = field(default_factory=_Interner)
    edges: list[tuple[int, int, int, float]] = field(default_factory=list)  # (head, rel, tail, weight)
    adjacency: list[list[int]] = field(default_factory=list)  # concept -> incident edge indices
    duplicates: int = 0
    _edge_keys: set = field(default_factory=set, repr=False)

    @property
    def n_concepts(self):
        return len(self.concepts)

    @property
    def n_relations(self):
        return len(self.relations)

    def add_edge(self, relation: str, head: str, tail: str, weight: float = 1.0):
        if not math.isfinite(weight) or weight < 0:
            raise EdgeListFormatError(f"edge weight must be finite and >= 0, got {weight}")
        r = self.relations.intern(normalize_phrase(relation))
        h = self.concepts.intern(normalize_phrase(head))
        t = self.concepts.intern(normalize_phrase(tail))
        while len(self.adjacency) < self.n_concepts:
            self.adjacency.append([])
        if (h, r, t) in self._edge_keys:
            self.duplicates += 1  # first occurrence wins
            return
        self._edge_keys.add((h, r, t))
        idx = len(self.edges)
        self.edges.append((h, r, t, weight))
        self.adjacency[h].append(idx)
        if t != h:
            self.adjacency[t].append(idx)

    def neighbors(self, concept: int) -> set[int]:
        if not 0 <= concept < self.n_concepts:
            raise KeyError(f"unknown concept id {concept}")
        out = set()
        for i in self.adjacency[concept]:
            h, _, t, _ = self.edges[i]
            out.add(t if h == concept else h)
        return out

    def load_report(self) -> dict:
        return {
            "concepts": self.n_concepts,
            "relations": self.n_relations,
            "edges": len(self.edges),
            "duplicates": self.duplicates,
        }

    def report_json(self) -> str:
        return json.dumps(self.load_report(), sort_keys=True)


def load_edge_list(path) -> KnowledgeGraph:
    """Build a graph from TSV lines `relation<TAB>head<TAB>tail[<TAB>weight]`."""
    graph = KnowledgeGraph()
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) not in (3, 4):
                raise EdgeListFormatError(
                    f"{path}:{lineno}: expected 3 or 4 tab-separated fields, got {len(parts)}")
            weight = 1.0
            if len(parts) == 4:
                try:
                    weight = float(parts[3])
                except ValueError:
                    raise EdgeListFormatError(
                        f"{path}:{lineno}: weight {parts[3]!r} is not a number") from None
            try:
                graph.add_edge(parts[0], parts[1], parts[2], weight)
            except EdgeListFormatError as err:
                raise EdgeListFormatError(f"{path}:{lineno}: {err}") from None
    return graph


def k_hop_neighbors(graph: KnowledgeGraph, seeds, k: int) -> set[int]:
    """All concepts within k undirected hops of any seed, seeds included."""
    seeds = set(seeds)
    for s in seeds:
        if not 0 <= s < graph.n_concepts:
            raise KeyError(f"unknown seed concept id {s}")
    if k < 0:
        raise ValueError("hop count must be >= 0")
    frontier = set(seeds)
    reached = set(seeds)
    for _ in range(k):
        nxt = set()
        for c in frontier:
            nxt |= graph.neighbors(c)
        frontier = nxt - reached
        if not frontier:
            break
        reached |= frontier
    return reached


def induced_edges(graph: KnowledgeGraph, nodes) -> list[tuple[int, int, int, float]]:
    """All edges of the graph with both endpoints in `nodes`."""
    nodes = set(nodes)
    seen = set()
    out = []
    for c in nodes:
        for i in graph.adjacency[c]:
            if i in seen:
                continue
            h, r, t, w = graph.edges[i]
            if h in nodes and t in nodes:
                seen.add(i)
                out.append((h, r, t, w))
    out.sort(key=lambda e: (e[0], e[1], e[2]))
    return out


class ConceptLexicon:
    """Normalized phrase -> concept id map for entity linking."""

    def __init__(self, graph: KnowledgeGraph):
        self.phrase_to_id = {
            graph.concepts.name_of(i): i for i in range(graph.n_concepts)
        }
        self.max_phrase_tokens = max(
            (len(p.split()) for p in self.phrase_to_id), default=0)

    def lookup(self, phrase: str):
        return self.phrase_to_id.get(normalize_phrase(phrase))

    def __len__(self):
        return len(self.phrase_to_id)
