"""Knowledge-graph-guided training for multi-turn response ranking.

A small trainable text encoder scores dialogue response candidates. During
training, a graph attention network over retrieved commonsense subgraphs
produces a second view of each input, and a cosine-similarity loss transfers
its structure into the encoder, which then serves rankings with no graph in
the loop.
"""

from .data import DatasetFormatError, MrsSample, load_dataset, save_dataset
from .encoder import EncoderConfig, EncoderModel, ScorerSnapshot, TokenSequence, Vocabulary
from .evaluation import LatencyReport, RankResult, evaluate, latency_bench, mrr, r_at_k
from .extraction import KG_COUNTER, ExtractionConfig, Extractor, ScoredConcept, SubgraphSpec
from .gnn import GnnConfig, GnnParams, propagate
from .kg import ConceptLexicon, KnowledgeGraph, induced_edges, k_hop_neighbors, load_edge_list
from .synth import SynthConfig, synth_generate, write_corpus
from .tensor import NonFiniteError, ShapeError, Tensor
from .training import (
    AdamW, LossWeights, ModelState, TrainConfig, bce_loss, combined_loss,
    cosine_loss, load_checkpoint, save_checkpoint, train,
)

__version__ = "0.1.0"

__all__ = [
    "AdamW", "ConceptLexicon", "DatasetFormatError", "EncoderConfig", "EncoderModel",
    "ExtractionConfig", "Extractor", "GnnConfig", "GnnParams", "KG_COUNTER",
    "KnowledgeGraph", "LatencyReport", "LossWeights", "ModelState", "MrsSample",
    "NonFiniteError", "RankResult", "ScoredConcept", "ScorerSnapshot", "ShapeError",
    "SubgraphSpec", "SynthConfig", "Tensor", "TokenSequence", "TrainConfig",
    "Vocabulary", "bce_loss", "combined_loss", "cosine_loss", "evaluate",
    "induced_edges", "k_hop_neighbors", "latency_bench", "load_checkpoint",
    "load_dataset", "load_edge_list", "mrr", "propagate", "r_at_k",
    "save_checkpoint", "save_dataset", "synth_generate", "train", "write_corpus",
]
