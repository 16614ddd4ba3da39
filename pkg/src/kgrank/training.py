"""Graph-guided siamese training with decoupled-weight-decay Adam updates.

The trainable encoder scores candidates; during training a GNN over the
retrieved subgraph produces a second representation of the same input, and a
negative-cosine similarity term pulls the two together. The combined objective
is ``alpha * bce + (1 - alpha) * cos``. Ablation variants swap how (or
whether) the graph side participates:

  plm    encoder only, binary cross entropy.
  s0     kept concept phrases appended to the input text; bce only.
  s1     prediction head reads [h' | mean(concept embeddings)]; bce only.
  s2     plm prediction plus similarity loss against the concept mean.
  s3     prediction head reads [h' | h_X] from the GNN; bce only.
  sinlg  plm prediction plus similarity loss against the GNN output.

Only plm, s2, and sinlg can run inference without touching the graph.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import evaluation
from . import tensor as tt
from .encoder import EncoderConfig, EncoderModel, Vocabulary, split_text, trans_a
from .extraction import ExtractionConfig, Extractor
from .gnn import GnnConfig, GnnParams, bridged_seed, propagate
from .tensor import Tensor

logger = logging.getLogger(__name__)

__all__ = [
    "VARIANTS", "QO_FREE_VARIANTS", "LossWeights", "TrainConfig", "AdamW",
    "ModelState", "cosine_loss", "bce_loss", "combined_loss",
    "train", "train_step", "prepare_rows",
    "save_checkpoint", "load_checkpoint",
]

VARIANTS = ("plm", "s0", "s1", "s2", "s3", "sinlg")
QO_FREE_VARIANTS = ("plm", "s2", "sinlg")
GRAPH_VARIANTS = ("s0", "s1", "s2", "s3", "sinlg")

Y_CLAMP = 1e-7


@dataclass
class LossWeights:
    alpha: float = 0.5
    epsilon: float = 1e-8

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")


@dataclass
class TrainConfig:
    variant: str = "sinlg"
    lr: float = 1e-3
    weight_decay: float = 0.01
    batch_size: int = 64
    epochs: int = 5
    seed: int = 0
    max_nodes: int = 200
    hops: int = 2
    alpha: float = 0.5
    epsilon: float = 1e-8
    pos_weight: float = 1.0  # bce weight on positive rows, counters the 19:1 imbalance
    stop_grad_gnn_target: bool = False
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    gnn: GnnConfig = field(default_factory=GnnConfig)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        if self.lr < 0 or self.weight_decay < 0:
            raise ValueError("rates must be >= 0")
        if self.batch_size <= 0 or self.epochs < 0:
            raise ValueError("batch_size must be positive and epochs >= 0")
        if self.pos_weight <= 0:
            raise ValueError("pos_weight must be positive")
        if isinstance(self.encoder, dict):
            self.encoder = EncoderConfig(**self.encoder)
        if isinstance(self.gnn, dict):
            self.gnn = GnnConfig(**self.gnn)
        LossWeights(self.alpha, self.epsilon)  # validate

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.alpha, self.epsilon)

    def hash(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# losses

def cosine_loss(h_prime: Tensor, h_x: Tensor, epsilon: float = 1e-8) -> Tensor:
    """Negative cosine similarity between the two context representations."""
    return tt.neg(tt.cosine(h_prime, h_x, epsilon))


def bce_loss(y, y_hat: Tensor) -> Tensor:
    """Binary cross entropy with the prediction clamped away from {0, 1}."""
    y = float(y)
    yh = tt.clip(y_hat, Y_CLAMP, 1.0 - Y_CLAMP)
    return tt.neg(tt.add(tt.mul(y, tt.log(yh)),
                         tt.mul(1.0 - y, tt.log(tt.sub(1.0, yh)))))


def combined_loss(weights: LossWeights, l_bce: Tensor, l_cos: Tensor) -> Tensor:
    return tt.add(tt.mul(weights.alpha, l_bce), tt.mul(1.0 - weights.alpha, l_cos))


# ---------------------------------------------------------------------------
# optimizer

class AdamW:
    """Adam with bias-corrected moments and decoupled weight decay."""

    def __init__(self, params: dict[str, Tensor], lr=1e-3, betas=(0.9, 0.999),
                 eps=1e-8, weight_decay=0.01):
        self.params = params
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.t = 0

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def step(self):
        self.t += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for k, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            self.m[k] = b1 * self.m[k] + (1.0 - b1) * g
            self.v[k] = b2 * self.v[k] + (1.0 - b2) * (g * g)
            update = (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)
            p.data -= self.lr * (update + self.weight_decay * p.data)

    def state_dict(self):
        return {"t": self.t,
                "m": {k: v.tolist() for k, v in self.m.items()},
                "v": {k: v.tolist() for k, v in self.v.items()}}

    def load_state_dict(self, obj):
        self.t = obj["t"]
        self.m = {k: np.asarray(v, dtype=np.float64) for k, v in obj["m"].items()}
        self.v = {k: np.asarray(v, dtype=np.float64) for k, v in obj["v"].items()}


# ---------------------------------------------------------------------------
# model state

class ModelState:
    """Everything a variant trains: encoder, optional GNN, optional concat head."""

    def __init__(self, config: TrainConfig, vocab: Vocabulary, n_kg_relations: int = 0,
                 rng=None, encoder: EncoderModel = None):
        self.config = config
        self.variant = config.variant
        rng = rng if rng is not None else np.random.default_rng(config.seed)
        self.encoder = encoder or EncoderModel(config.encoder, vocab, rng=rng)
        self.snapshot = self.encoder.snapshot()  # frozen before any update
        self.n_kg_relations = n_kg_relations
        d = config.encoder.dim
        self.gnn = None
        self.aux: dict[str, Tensor] = {}
        if self.variant in ("s3", "sinlg"):
            self.gnn = GnnParams(config.gnn, input_dim=d,
                                 n_kg_relations=n_kg_relations, rng=rng)
        if self.variant == "s1":
            self.aux = {"aux_w": Tensor(rng.normal(0.0, 0.02, 2 * d), requires_grad=True),
                        "aux_b": Tensor(np.zeros(()), requires_grad=True)}
        elif self.variant == "s3":
            width = d + config.gnn.resolve_hidden(d)
            self.aux = {"aux_w": Tensor(rng.normal(0.0, 0.02, width), requires_grad=True),
                        "aux_b": Tensor(np.zeros(()), requires_grad=True)}

    @property
    def vocab(self):
        return self.encoder.vocab

    @property
    def qo_free(self) -> bool:
        return self.variant in QO_FREE_VARIANTS

    def trainable_parameters(self) -> dict[str, Tensor]:
        out = {f"enc.{k}": v for k, v in self.encoder.params.items()}
        if self.gnn is not None:
            out.update({f"gnn.{k}": v for k, v in self.gnn.params.items()})
        out.update({f"aux.{k}": v for k, v in self.aux.items()})
        return out

    def zero_grad(self):
        for p in self.trainable_parameters().values():
            p.zero_grad()

    # -- scoring paths -------------------------------------------------------

    def score_qo_free(self, sample, candidate_index: int) -> float:
        """Encoder-only score; never touches the knowledge graph."""
        seq = trans_a(self.vocab, sample, candidate_index, self.config.encoder.max_seq_len)
        with tt.no_grad():
            return self.encoder.predict(self.encoder.encode(seq)).item()

    def score_online(self, sample, candidate_index: int, extractor: Extractor) -> float:
        """Full pipeline score: extraction, GNN propagation, then the head."""
        with tt.no_grad():
            row = prepare_row(self, sample, candidate_index, 0, extractor)
            loss_parts = forward_row(self, row, self.config.weights)
            return loss_parts.y_hat


# ---------------------------------------------------------------------------
# row preparation and the per-variant forward

@dataclass
class PreparedRow:
    """Static per-(sample, candidate) inputs, reusable across epochs."""

    seq: object
    label: float
    spec: object = None
    concept_mean: np.ndarray = None


@dataclass
class RowResult:
    loss: Tensor
    y_hat: float
    bce: float
    cos: float


def prepare_row(state: ModelState, sample, candidate_index: int, label,
                extractor: Extractor = None) -> PreparedRow:
    variant = state.variant
    cfg = state.config
    if variant in GRAPH_VARIANTS:
        if extractor is None:
            raise ValueError(f"variant {variant!r} needs a subgraph extractor")
        spec = extractor.build(sample, candidate_index)
    else:
        spec = None

    extra = ()
    if variant == "s0":
        extra = [extractor.graph.concepts.name_of(c.concept) for c in spec.concepts]
    seq = trans_a(state.vocab, sample, candidate_index, cfg.encoder.max_seq_len,
                  extra_segments=extra)

    mean = None
    if variant in ("s1", "s2"):
        mean = (spec.concept_embeddings.mean(axis=0) if len(spec.concepts)
                else np.zeros(cfg.encoder.dim))
    return PreparedRow(seq=seq, label=float(label), spec=spec, concept_mean=mean)


def prepare_rows(state: ModelState, samples, extractor: Extractor = None):
    rows = []
    for sample in samples:
        for ci, label in enumerate(sample.labels):
            rows.append(prepare_row(state, sample, ci, label, extractor))
    return rows


def forward_row(state: ModelState, row: PreparedRow, weights: LossWeights) -> RowResult:
    variant = state.variant
    enc = state.encoder
    h = enc.encode(row.seq)

    def weighted_bce(y_hat):
        l = bce_loss(row.label, y_hat)
        if row.label == 1.0 and state.config.pos_weight != 1.0:
            l = tt.mul(state.config.pos_weight, l)
        return l

    if variant in ("plm", "s0"):
        y_hat = enc.predict(h)
        l_bce = weighted_bce(y_hat)
        return RowResult(l_bce, y_hat.item(), l_bce.item(), 0.0)

    if variant == "s1":
        feat = tt.concat([h, Tensor(row.concept_mean)])
        y_hat = tt.sigmoid(tt.add(tt.dot(feat, state.aux["aux_w"]), state.aux["aux_b"]))
        l_bce = weighted_bce(y_hat)
        return RowResult(l_bce, y_hat.item(), l_bce.item(), 0.0)

    if variant == "s2":
        y_hat = enc.predict(h)
        l_bce = weighted_bce(y_hat)
        l_cos = cosine_loss(h, Tensor(row.concept_mean), weights.epsilon)
        return RowResult(combined_loss(weights, l_bce, l_cos),
                         y_hat.item(), l_bce.item(), l_cos.item())

    if variant == "s3":
        h_x = propagate(row.spec, state.gnn, super_seed=h)
        feat = tt.concat([h, h_x])
        y_hat = tt.sigmoid(tt.add(tt.dot(feat, state.aux["aux_w"]), state.aux["aux_b"]))
        l_bce = weighted_bce(y_hat)
        return RowResult(l_bce, y_hat.item(), l_bce.item(), 0.0)

    # sinlg: prediction reads the encoder representation only (graph-free at
    # inference); the similarity loss compares the super node's initial
    # in-graph feature against its final one
    y_hat = enc.predict(h)
    l_bce = weighted_bce(y_hat)
    h_x = propagate(row.spec, state.gnn, super_seed=h)
    if state.config.stop_grad_gnn_target:
        h_x = h_x.detach()
    l_cos = cosine_loss(bridged_seed(state.gnn, h), h_x, weights.epsilon)
    return RowResult(combined_loss(weights, l_bce, l_cos),
                     y_hat.item(), l_bce.item(), l_cos.item())


def train_step(rows, state: ModelState, optimizer: AdamW, weights: LossWeights) -> dict:
    """One optimization step over a batch of prepared rows."""
    optimizer.zero_grad()
    results = [forward_row(state, r, weights) for r in rows]
    batch_loss = tt.mean_all(tt.stack_scalars([r.loss for r in results]))
    batch_loss.backward()
    optimizer.step()
    n = len(results)
    return {
        "loss": batch_loss.item(),
        "bce": sum(r.bce for r in results) / n,
        "cos": sum(r.cos for r in results) / n,
    }


# ---------------------------------------------------------------------------
# full training loop

def build_vocab(samples, graph=None) -> Vocabulary:
    tokens = set()
    for s in samples:
        for text in s.texts():
            tokens.update(split_text(text))
    if graph is not None:
        for i in range(graph.n_concepts):
            tokens.update(split_text(graph.concepts.name_of(i)))
    return Vocabulary(tokens)


def train(config: TrainConfig, train_samples, dev_samples, graph=None, progress=False):
    """Train one variant; returns (state, optimizer, per-epoch log rows)."""
    if config.variant in GRAPH_VARIANTS and graph is None:
        raise ValueError(f"variant {config.variant!r} requires a knowledge graph")

    rng = np.random.default_rng(config.seed)
    vocab = build_vocab(train_samples, graph)
    state = ModelState(config, vocab,
                       n_kg_relations=graph.n_relations if graph else 0, rng=rng)
    # prior-initialize the output bias so early steps work on discrimination,
    # not base-rate calibration
    total = sum(len(s.candidates) for s in train_samples)
    if total:
        rate = min(max(len(train_samples) / total, 1e-4), 1 - 1e-4)
        bias = float(np.log(rate / (1.0 - rate)))
        state.encoder.params["head_b"].data[()] = bias
        if "aux_b" in state.aux:
            state.aux["aux_b"].data[()] = bias
    extractor = None
    if config.variant in GRAPH_VARIANTS:
        extractor = Extractor(graph, state.snapshot,
                              ExtractionConfig(config.max_nodes, config.hops))

    t0 = time.perf_counter()
    rows = prepare_rows(state, train_samples, extractor)
    if progress:
        logger.info("prepared %d rows in %.1fs", len(rows), time.perf_counter() - t0)

    optimizer = AdamW(state.trainable_parameters(), lr=config.lr,
                      weight_decay=config.weight_decay)
    weights = config.weights
    logs = []
    for epoch in range(config.epochs):
        order = rng.permutation(len(rows))
        stats = {"loss": 0.0, "bce": 0.0, "cos": 0.0}
        n_batches = 0
        for start in range(0, len(rows), config.batch_size):
            batch = [rows[i] for i in order[start:start + config.batch_size]]
            out = train_step(batch, state, optimizer, weights)
            for k in stats:
                stats[k] += out[k]
            n_batches += 1
        for k in stats:
            stats[k] /= max(n_batches, 1)

        report = evaluation.evaluate(state, dev_samples, extractor=extractor)
        entry = {"epoch": epoch, "variant": config.variant,
                 "train_loss": stats["loss"], "train_bce": stats["bce"],
                 "train_cos": stats["cos"], **{f"dev_{k}": v for k, v in report.items()}}
        logs.append(entry)
        if progress:
            logger.info("epoch %d: loss %.4f dev R@1 %.4f (%.1fs)", epoch,
                        stats["loss"], report["r_at_1"], time.perf_counter() - t0)
    return state, optimizer, logs


# ---------------------------------------------------------------------------
# checkpoints

def save_checkpoint(state: ModelState, optimizer: AdamW, path):
    obj = {
        "format_version": 1,
        "variant": state.variant,
        "config": asdict(state.config),
        "config_hash": state.config.hash(),
        "n_kg_relations": state.n_kg_relations,
        "vocab": state.vocab.to_jsonable(),
        "encoder": {k: v.data.tolist() for k, v in state.encoder.params.items()},
        "snapshot": {k: v.data.tolist() for k, v in state.snapshot._params.items()},
        "gnn": ({k: v.data.tolist() for k, v in state.gnn.params.items()}
                if state.gnn is not None else None),
        "aux": {k: v.data.tolist() for k, v in state.aux.items()},
        "optimizer": optimizer.state_dict() if optimizer is not None else None,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh)


def load_checkpoint(path):
    """Rebuild (state, optimizer) exactly as saved; forward outputs are bit-identical."""
    with open(path, encoding="utf-8") as fh:
        obj = json.load(fh)
    if obj.get("format_version") != 1:
        raise ValueError(f"unsupported checkpoint version {obj.get('format_version')}")
    config = TrainConfig(**obj["config"])
    if config.hash() != obj["config_hash"]:
        raise ValueError("checkpoint config hash mismatch")
    vocab = Vocabulary.from_jsonable(obj["vocab"])
    enc_params = {k: np.asarray(v, dtype=np.float64) for k, v in obj["encoder"].items()}
    encoder = EncoderModel(config.encoder, vocab, params=enc_params)
    state = ModelState(config, vocab, n_kg_relations=obj["n_kg_relations"],
                       encoder=encoder)
    # restore the true pre-training snapshot (ModelState copied the loaded weights)
    snap_arrays = {k: np.asarray(v, dtype=np.float64) for k, v in obj["snapshot"].items()}
    state.snapshot = type(state.snapshot)(config.encoder, vocab, snap_arrays)
    if obj["gnn"] is not None:
        arrays = {k: np.asarray(v, dtype=np.float64) for k, v in obj["gnn"].items()}
        state.gnn = GnnParams(config.gnn, input_dim=config.encoder.dim,
                              n_kg_relations=obj["n_kg_relations"], arrays=arrays)
    state.aux = {k: Tensor(np.asarray(v, dtype=np.float64), requires_grad=True)
                 for k, v in obj["aux"].items()}
    optimizer = AdamW(state.trainable_parameters(), lr=config.lr,
                      weight_decay=config.weight_decay)
    if obj["optimizer"] is not None:
        optimizer.load_state_dict(obj["optimizer"])
    return state, optimizer
