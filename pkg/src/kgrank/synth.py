"""Deterministic synthetic corpus whose labels depend on the knowledge graph.

Each dialogue gets a persona that mentions concept tokens, a filler-only
context, and a 20-way candidate set. The correct candidate mentions a concept
graph-adjacent to a persona concept: either the persona concept itself (plain
token match) or its paraphrase partner, a different surface form connected
only through a `paraphrase_of` edge. Distractors are other dialogues' correct
responses whose concepts sit far from this persona in the graph, so the label
is a pure function of graph adjacency. The paraphrase-only share is the
difficulty dial: those positives share no token with the persona, which is
exactly the case a text-only ranker cannot resolve from one look.

Dev dialogues reuse concepts and paraphrase pairs that occur in training
text, so every informative token has been seen by the model at least once.
"""

from __future__ import annotations

import collections
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import MrsSample, save_dataset

__all__ = ["SynthConfig", "SynthResult", "synth_generate", "write_corpus"]

PARAPHRASE_RELATION = "paraphrase_of"

_CONSONANTS = list("bdfglmnprstvz")
_VOWELS = list("aeiou")


@dataclass
class SynthConfig:
    seed: int = 7
    n_train_dialogues: int = 300
    n_dev_dialogues: int = 60
    turns_min: int = 6
    turns_max: int = 8
    vocab_size: int = 60  # filler words
    n_concepts: int = 120  # base concepts; paraphrase partners come on top
    n_relations: int = 3  # relation types, paraphrase_of included
    n_paraphrase_pairs: int = 60
    n_noise_edges: int = 40
    n_candidates: int = 20
    paraphrase_fraction: float = 0.6  # dialogues whose positive needs the graph hop
    persona_size: int = 2
    rounds_per_dialogue: int = 3  # selection instances per dialogue (rolling context)
    utterance_words_min: int = 2
    utterance_words_max: int = 4
    min_distractor_distance: int = 5  # > 2 * default hop count

    def __post_init__(self):
        numeric = [self.n_train_dialogues, self.n_dev_dialogues, self.turns_min,
                   self.turns_max, self.vocab_size, self.n_concepts, self.n_relations,
                   self.n_paraphrase_pairs, self.n_candidates, self.persona_size,
                   self.rounds_per_dialogue, self.utterance_words_min,
                   self.utterance_words_max, self.min_distractor_distance]
        if any(v <= 0 for v in numeric) or self.n_noise_edges < 0:
            raise ValueError("synthetic-corpus sizes must be positive")
        if not 0.0 <= self.paraphrase_fraction <= 1.0:
            raise ValueError("paraphrase_fraction must lie in [0, 1]")
        if self.turns_max < self.turns_min:
            raise ValueError("turns_max must be >= turns_min")
        if self.n_paraphrase_pairs > self.n_concepts:
            raise ValueError("cannot pair more concepts than exist")
        if self.persona_size > self.n_concepts:
            raise ValueError("persona_size exceeds the concept inventory")
        if self.rounds_per_dialogue >= self.turns_min:
            raise ValueError("rounds_per_dialogue must leave at least one context turn")


@dataclass
class SynthResult:
    train: list
    dev: list
    kg_edges: list  # (relation, head, tail, weight)
    report: dict


def _make_words(rng, count, taken):
    words = []
    while len(words) < count:
        w = "".join(rng.choice(_CONSONANTS) + rng.choice(_VOWELS)
                    for _ in range(int(rng.integers(2, 4))))
        if w not in taken:
            taken.add(w)
            words.append(w)
    return words


def _distances_from(adj, start):
    dist = {start: 0}
    queue = collections.deque([start])
    while queue:
        c = queue.popleft()
        for n in adj[c]:
            if n not in dist:
                dist[n] = dist[c] + 1
                queue.append(n)
    return dist


class _World:
    """Concept inventory, graph edges, and all-pairs BFS distances."""

    def __init__(self, config: SynthConfig, rng):
        taken = set()
        self.fillers = _make_words(rng, config.vocab_size, taken)
        # ~1 in 6 base concepts is a two-word phrase to exercise longest-match linking
        surfaces = []
        for i in range(config.n_concepts):
            n_words = 2 if rng.random() < 1 / 6 else 1
            surfaces.append(" ".join(_make_words(rng, n_words, taken)))
        self.base = surfaces
        self.partners = {}  # base index -> partner surface
        for i in range(config.n_paraphrase_pairs):
            self.partners[i] = _make_words(rng, 1, taken)[0]

        self.edges = []
        for i, partner in sorted(self.partners.items()):
            self.edges.append((PARAPHRASE_RELATION, self.base[i], partner, 2.0))
        n_noise_rels = max(config.n_relations - 1, 1)
        for _ in range(config.n_noise_edges):
            a, b = rng.integers(config.n_concepts, size=2)
            while b == a:
                b = rng.integers(config.n_concepts)
            rel = f"relates_{int(rng.integers(n_noise_rels))}"
            self.edges.append((rel, self.base[int(a)], self.base[int(b)],
                               round(float(rng.uniform(0.5, 1.5)), 4)))

        # undirected adjacency over surfaces for distance checks
        adj = collections.defaultdict(set)
        for _, h, t, _ in self.edges:
            adj[h].add(t)
            adj[t].add(h)
        self._dist = {s: _distances_from(adj, s) for s in adj}

    def surface_distance(self, a: str, b: str) -> float:
        if a == b:
            return 0
        return self._dist.get(a, {}).get(b, float("inf"))

    def response_surface(self, base_index: int, paraphrase_only: bool) -> str:
        if paraphrase_only:
            return self.partners[base_index]
        return self.base[base_index]


def _utterance(rng, fillers, config, insert=None) -> str:
    n = int(rng.integers(config.utterance_words_min, config.utterance_words_max + 1))
    words = [fillers[int(i)] for i in rng.integers(len(fillers), size=n)]
    if insert is not None:
        pos = int(rng.integers(len(words) + 1))
        words[pos:pos] = insert.split()
    return " ".join(words)


@dataclass
class _Dialogue:
    persona: list[str]
    context: list[str]
    positive: str
    persona_surfaces: list[str]
    target_base: int
    paraphrase_only: bool
    response_surface: str


def _gen_dialogues(rng, world, config, count, paraphrase_count,
                   allowed_pairs=None, allowed_easy=None):
    flags = [i < paraphrase_count for i in range(count)]
    rng.shuffle(flags)
    dialogues = []
    pair_pool = sorted(allowed_pairs) if allowed_pairs is not None else sorted(world.partners)
    easy_pool = sorted(allowed_easy) if allowed_easy is not None else list(range(config.n_concepts))
    if not pair_pool or not easy_pool:
        raise ValueError("infeasible synthetic config: empty concept pool for a split")
    for flag in flags:
        target = int(rng.choice(pair_pool if flag else easy_pool))
        others = [c for c in easy_pool if c != target]
        if len(others) < config.persona_size - 1:
            raise ValueError("infeasible synthetic config: not enough persona concepts")
        extra = [int(c) for c in rng.choice(others, size=config.persona_size - 1,
                                            replace=False)] if config.persona_size > 1 else []
        persona_bases = [target] + extra
        rng.shuffle(persona_bases)
        persona_surfaces = [world.base[c] for c in persona_bases]
        persona = [_utterance(rng, world.fillers, config, insert=s) for s in persona_surfaces]
        n_context = int(rng.integers(config.turns_min, config.turns_max + 1)) - 1
        context = [_utterance(rng, world.fillers, config) for _ in range(n_context)]
        resp_surface = world.response_surface(target, flag)
        positive = _utterance(rng, world.fillers, config, insert=resp_surface)
        dialogues.append(_Dialogue(persona, context, positive, persona_surfaces,
                                   target, flag, resp_surface))
    return dialogues


def _assemble_samples(rng, world, config, dialogues):
    """Attach distractors drawn from other dialogues' positives, graph-far only."""
    samples = []
    n_needed = config.n_candidates - 1
    for i, d in enumerate(dialogues):
        pool = [j for j, other in enumerate(dialogues) if j != i and all(
            world.surface_distance(ps, other.response_surface) >= config.min_distractor_distance
            for ps in d.persona_surfaces)]
        if len(pool) < n_needed:
            raise ValueError(
                f"infeasible synthetic config: dialogue {i} has only {len(pool)} "
                f"graph-far distractor sources for {n_needed} slots")
        chosen = rng.choice(pool, size=n_needed, replace=False)
        candidates = [dialogues[int(j)].positive for j in chosen]
        pos_at = int(rng.integers(config.n_candidates))
        candidates.insert(pos_at, d.positive)
        labels = [1 if k == pos_at else 0 for k in range(config.n_candidates)]
        samples.append(MrsSample(persona=d.persona, context=d.context,
                                 candidates=candidates, labels=labels))
    return samples


def synth_generate(config: SynthConfig) -> SynthResult:
    """Build the graph, the train split, and a dev split over seen concepts."""
    rng = np.random.default_rng(config.seed)
    world = _World(config, rng)

    n_para_train = round(config.paraphrase_fraction * config.n_train_dialogues)
    train_dialogues = _gen_dialogues(rng, world, config,
                                     config.n_train_dialogues, n_para_train)

    seen_pairs = sorted({d.target_base for d in train_dialogues if d.paraphrase_only})
    seen_easy = sorted({d.target_base for d in train_dialogues if not d.paraphrase_only})
    n_para_dev = round(config.paraphrase_fraction * config.n_dev_dialogues)
    dev_dialogues = _gen_dialogues(rng, world, config,
                                   config.n_dev_dialogues, n_para_dev,
                                   allowed_pairs=seen_pairs, allowed_easy=seen_easy)

    train = _assemble_samples(rng, world, config, train_dialogues)
    dev = _assemble_samples(rng, world, config, dev_dialogues)

    def para_fraction(dialogues):
        return sum(d.paraphrase_only for d in dialogues) / len(dialogues)

    report = {
        "config": asdict(config),
        "n_train": len(train),
        "n_dev": len(dev),
        "n_concepts": config.n_concepts + config.n_paraphrase_pairs,
        "n_kg_edges": len(world.edges),
        "paraphrase_only_train": para_fraction(train_dialogues),
        "paraphrase_only_dev": para_fraction(dev_dialogues),
    }
    return SynthResult(train=train, dev=dev, kg_edges=world.edges, report=report)


def write_corpus(result: SynthResult, out_dir) -> dict:
    """Write train.jsonl / dev.jsonl / kg.tsv / report.json; returns the report."""
    import os

    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "train": os.path.join(out_dir, "train.jsonl"),
        "dev": os.path.join(out_dir, "dev.jsonl"),
        "kg": os.path.join(out_dir, "kg.tsv"),
        "report": os.path.join(out_dir, "report.json"),
    }
    save_dataset(result.train, paths["train"])
    save_dataset(result.dev, paths["dev"])
    with open(paths["kg"], "w", encoding="utf-8") as fh:
        for rel, h, t, w in result.kg_edges:
            fh.write(f"{rel}\t{h}\t{t}\t{w}\n")
    # the persisted report names files relative to out_dir so identical
    # seeds produce identical bytes wherever the corpus lands
    on_disk = {**result.report,
               "files": ["train.jsonl", "dev.jsonl", "kg.tsv", "report.json"]}
    with open(paths["report"], "w", encoding="utf-8") as fh:
        json.dump(on_disk, fh, sort_keys=True, indent=2)
    return {**result.report, "paths": paths}
