"""Command-line surface: corpus generation, extraction, training, eval, bench.

All reports go to stdout as JSON (sorted keys); progress chatter goes to
stderr. Config files are JSON objects or `key=value` lines with dotted keys
for nested sections (for example `encoder.dim=32`).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from . import evaluation, training
from .data import load_dataset
from .encoder import EncoderModel
from .extraction import KG_COUNTER, ExtractionConfig, Extractor
from .kg import load_edge_list
from .synth import SynthConfig, synth_generate, write_corpus

logger = logging.getLogger("kgrank")

TRAIN_PATH_KEYS = ("train_path", "dev_path", "kg_path", "checkpoint_out", "log_out")


def _coerce(value: str):
    low = value.lower()
    if low in ("true", "false"):
        return low == "true"
    if low in ("none", "null"):
        return None
    for cast in (int, float):
        try:
            return cast(value)
        except ValueError:
            continue
    return value


def parse_config_file(path) -> dict:
    """JSON object or key=value lines; dotted keys nest."""
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    if text.lstrip().startswith("{"):
        return json.loads(text)
    flat = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value")
        key, value = line.split("=", 1)
        flat[key.strip()] = _coerce(value.strip())
    nested: dict = {}
    for key, value in flat.items():
        node = nested
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = value
    return nested


def _split_train_config(obj: dict, args) -> tuple[training.TrainConfig, dict]:
    obj = dict(obj)
    paths = {k: obj.pop(k, None) for k in TRAIN_PATH_KEYS}
    for name, key in (("variant", "variant"), ("seed", "seed"), ("alpha", "alpha"),
                      ("max_nodes", "max_nodes"), ("epochs", "epochs")):
        value = getattr(args, name, None)
        if value is not None:
            obj[key] = value
    if getattr(args, "max_seq_len", None) is not None:
        obj.setdefault("encoder", {})["max_seq_len"] = args.max_seq_len
    try:
        config = training.TrainConfig(**obj)
    except TypeError as err:
        raise ValueError(f"bad training config: {err}") from None
    return config, paths


def _emit(obj):
    print(json.dumps(obj, sort_keys=True))


def _load_corpus(config: training.TrainConfig, paths):
    if not paths.get("train_path"):
        raise ValueError("config must set train_path")
    train_samples = load_dataset(paths["train_path"])
    dev_samples = load_dataset(paths["dev_path"]) if paths.get("dev_path") else []
    graph = load_edge_list(paths["kg_path"]) if paths.get("kg_path") else None
    return train_samples, dev_samples, graph


def _run_training(config, paths):
    train_samples, dev_samples, graph = _load_corpus(config, paths)
    state, optimizer, logs = training.train(config, train_samples, dev_samples,
                                            graph=graph, progress=True)
    ckpt_path = paths.get("checkpoint_out") or "checkpoint.json"
    training.save_checkpoint(state, optimizer, ckpt_path)
    log_path = paths.get("log_out") or "train_log.jsonl"
    with open(log_path, "w", encoding="utf-8") as fh:
        for row in logs:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    return state, logs, ckpt_path, log_path


def _extractor_for(state, graph) -> Extractor:
    return Extractor(graph, state.snapshot,
                     ExtractionConfig(state.config.max_nodes, state.config.hops))


# ---------------------------------------------------------------------------
# subcommands

def cmd_kg(args) -> int:
    graph = load_edge_list(args.path)
    _emit(graph.load_report())
    return 0


def cmd_synth(args) -> int:
    obj = parse_config_file(args.config) if args.config else {}
    if args.seed is not None:
        obj["seed"] = args.seed
    try:
        config = SynthConfig(**obj)
    except TypeError as err:
        raise ValueError(f"bad synth config: {err}") from None
    report = write_corpus(synth_generate(config), args.out_dir)
    _emit(report)
    return 0


def cmd_extract(args) -> int:
    samples = load_dataset(args.dataset)
    graph = load_edge_list(args.kg)
    if args.checkpoint:
        state, _ = training.load_checkpoint(args.checkpoint)
        model, snapshot = state.encoder, state.snapshot
        config = ExtractionConfig(args.max_nodes or state.config.max_nodes,
                                  args.hops if args.hops is not None else state.config.hops)
    else:
        vocab = training.build_vocab(samples, graph)
        model = EncoderModel(training.EncoderConfig(
            max_seq_len=args.max_seq_len or 512), vocab,
            rng=np.random.default_rng(args.seed or 0))
        snapshot = model.snapshot()
        config = ExtractionConfig(args.max_nodes or 200,
                                  args.hops if args.hops is not None else 2)
    extractor = Extractor(graph, snapshot, config)
    extractor.write_specs_jsonl(samples, model, args.out)
    _emit({"specs": sum(len(s.candidates) for s in samples), "out": args.out})
    return 0


def cmd_train(args) -> int:
    obj = parse_config_file(args.config) if args.config else {}
    config, paths = _split_train_config(obj, args)
    state, logs, ckpt_path, log_path = _run_training(config, paths)
    final = logs[-1] if logs else {}
    _emit({"checkpoint": ckpt_path, "log": log_path, "epochs": config.epochs,
           "variant": config.variant, **{k: v for k, v in final.items()
                                         if k.startswith("dev_")}})
    return 0


def cmd_eval(args) -> int:
    state, _ = training.load_checkpoint(args.checkpoint)
    samples = load_dataset(args.dataset)
    extractor = None
    if not state.qo_free:
        if not args.kg:
            raise ValueError(f"variant {state.variant!r} needs --kg to rank candidates")
        extractor = _extractor_for(state, load_edge_list(args.kg))
    before = KG_COUNTER.count
    report = evaluation.evaluate(state, samples, extractor=extractor)
    report["kg_accesses"] = KG_COUNTER.count - before
    if state.qo_free and report["kg_accesses"]:
        raise RuntimeError("graph-free evaluation touched the knowledge graph")
    _emit(report)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(report, fh, sort_keys=True)
    return 0


def cmd_bench(args) -> int:
    state, _ = training.load_checkpoint(args.checkpoint)
    samples = load_dataset(args.dataset)
    extractor = _extractor_for(state, load_edge_list(args.kg))
    report = evaluation.latency_bench(state, samples, extractor,
                                      repetitions=args.repetitions).to_jsonable()
    _emit(report)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(report, fh, sort_keys=True)
    return 0


def cmd_sweep(args) -> int:
    obj = parse_config_file(args.config) if args.config else {}
    values = [_coerce(v) for v in args.values.split(",") if v]
    if not values:
        raise ValueError("--values must list at least one value")
    rows = []
    for value in values:
        run_obj = dict(obj)
        run_obj[args.param] = value
        config, paths = _split_train_config(run_obj, args)
        paths["checkpoint_out"] = paths.get("checkpoint_out") or "sweep_checkpoint.json"
        paths["log_out"] = paths.get("log_out") or "sweep_log.jsonl"
        _, logs, _, _ = _run_training(config, paths)
        final = logs[-1] if logs else {}
        row = {"param": args.param, "value": value,
               **{k: v for k, v in final.items() if k.startswith("dev_")}}
        rows.append(row)
        _emit(row)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            for row in rows:
                fh.write(json.dumps(row, sort_keys=True) + "\n")
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kgrank",
        description="Knowledge-graph-guided response ranking: train, evaluate, benchmark.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_kg = sub.add_parser("kg", help="knowledge-graph utilities")
    kg_sub = p_kg.add_subparsers(dest="kg_command", required=True)
    p_build = kg_sub.add_parser("build", help="load a TSV edge list and print the report")
    p_build.add_argument("path")
    p_build.set_defaults(func=cmd_kg)

    p_synth = sub.add_parser("synth", help="generate a synthetic corpus and graph")
    p_synth.add_argument("config", nargs="?", help="SynthConfig file (JSON or key=value)")
    p_synth.add_argument("--out-dir", default="corpus")
    p_synth.add_argument("--seed", type=int)
    p_synth.set_defaults(func=cmd_synth)

    p_extract = sub.add_parser("extract", help="emit subgraph specs as JSONL")
    p_extract.add_argument("dataset")
    p_extract.add_argument("kg")
    p_extract.add_argument("--out", default="specs.jsonl")
    p_extract.add_argument("--checkpoint")
    p_extract.add_argument("--seed", type=int)
    p_extract.add_argument("--hops", type=int)
    p_extract.set_defaults(func=cmd_extract)

    p_train = sub.add_parser("train", help="train one variant")
    p_train.add_argument("config", help="training config file (JSON or key=value)")
    p_train.add_argument("--variant", choices=training.VARIANTS)
    p_train.add_argument("--epochs", type=int)
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="rank a dataset and print metrics")
    p_eval.add_argument("checkpoint")
    p_eval.add_argument("dataset")
    p_eval.add_argument("--kg", help="graph path (graph-bound variants only)")
    p_eval.add_argument("--out")
    p_eval.set_defaults(func=cmd_eval)

    p_bench = sub.add_parser("bench", help="time graph-free vs online inference")
    p_bench.add_argument("checkpoint")
    p_bench.add_argument("dataset")
    p_bench.add_argument("kg")
    p_bench.add_argument("--repetitions", type=int, default=3)
    p_bench.add_argument("--out")
    p_bench.set_defaults(func=cmd_bench)

    p_sweep = sub.add_parser("sweep", help="train and evaluate across one hyperparameter")
    p_sweep.add_argument("--param", required=True, choices=("alpha", "max_nodes"))
    p_sweep.add_argument("--values", required=True, help="comma-separated values")
    p_sweep.add_argument("--config", required=True)
    p_sweep.add_argument("--out")
    p_sweep.add_argument("--epochs", type=int)
    p_sweep.add_argument("--variant", choices=training.VARIANTS)
    p_sweep.set_defaults(func=cmd_sweep)

    for p in (p_train, p_sweep):
        p.add_argument("--seed", type=int)
        p.add_argument("--alpha", type=float)
        p.add_argument("--max-nodes", type=int, dest="max_nodes")
        p.add_argument("--max-seq-len", type=int, dest="max_seq_len")
    p_extract.add_argument("--max-nodes", type=int, dest="max_nodes")
    p_extract.add_argument("--max-seq-len", type=int, dest="max_seq_len")

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (OSError, ValueError, RuntimeError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
