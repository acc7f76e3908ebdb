"""Command-line interface.

Exit codes: 0 success, 1 contract/config errors, 2 numeric errors.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .checkpoint import load_checkpoint
from .config import TrainConfig
from .corpus import corpus_from_config, generate_corpus, save_corpus
from .errors import ContractError, NumericError
from .gradcheck import finite_diff_check
from .metrics import eval_retrieval, export_attention, modality_gap, eval_embeddings, qa_accuracy
from .tasks import TASK_TABLE, compose_task, forward_task
from .train import train


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="multimod",
        description="Modular multi-modal transformer: synthetic-corpus training, "
                    "task composition, and verification tools.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-corpus", help="write a synthetic corpus to a directory")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--num-concepts", type=int, default=32)
    p.add_argument("--samples-per-split", type=int, default=64)
    p.add_argument("--noise-sigma", type=float, default=0.25)

    p = sub.add_parser("train", help="train from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, required=True,
                   help="training seed (overrides the config file)")
    p.add_argument("--out", default="runs/default")
    p.add_argument("--resume", default=None)

    p = sub.add_parser("compose", help="print the module graph for a task")
    p.add_argument("task")

    p = sub.add_parser("gradcheck", help="finite-difference checks per module")
    p.add_argument("--module", default=None,
                   help="one of: primitives, vision, text, universal, fusion, decoder, losses")

    p = sub.add_parser("eval", help="run one task against a checkpoint")
    p.add_argument("--task", required=True)
    p.add_argument("--ckpt", required=True)

    p = sub.add_parser("gap", help="modality gap of a checkpoint on the eval split")
    p.add_argument("--ckpt", required=True)

    p = sub.add_parser("export-attn", help="write a universal-layer cross-attention map")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--layer", type=int, required=True)
    p.add_argument("--sample", type=int, required=True)
    p.add_argument("--out", default=None)
    return parser


def cmd_gen_corpus(args) -> int:
    corpus = generate_corpus(args.seed, args.num_concepts, args.samples_per_split,
                             args.noise_sigma)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "corpus.json")
    save_corpus(corpus, path)
    print(f"wrote {path} ({len(corpus.train)} train / {len(corpus.eval)} eval samples)")
    return 0


def cmd_train(args) -> int:
    cfg = TrainConfig.from_json(args.config, overrides={"seed": args.seed})
    result = train(cfg, out_dir=args.out, resume=args.resume, log=print)
    print(f"checkpoint: {result.checkpoint_path}")
    print(f"metrics: {result.metrics_path}")
    return 0


def cmd_compose(args) -> int:
    graph = compose_task(args.task)
    sys.stdout.write(graph.render())
    return 0


def cmd_eval(args) -> int:
    model, _, _, _ = load_checkpoint(args.ckpt)
    corpus = corpus_from_config(model.cfg)
    graph = compose_task(args.task)
    spec = graph.task
    if spec.output == "similarityMatrix":
        wanted = "video" in spec.inputs
        samples = [s for s in corpus.eval if s.is_video == wanted][: model.cfg.eval_pairs]
        out = forward_task(model, graph, samples)
        from .metrics import retrieval_recall
        scores = retrieval_recall(out.similarity)
        for key in ("r1_i2t", "r5_i2t", "r10_i2t", "r1_t2i", "r5_t2i", "r10_t2i"):
            print(f"{key}: {scores[key]:.4f}")
    else:
        wanted = "video" in spec.inputs
        sample = next(s for s in corpus.eval if s.is_video == wanted)
        out = forward_task(model, graph, sample)
        if out.kind == "generatedText":
            print("tokens:", out.tokens)
            print("text:", model.vocab.decode(out.tokens))
        else:
            print("logits:", np.array2string(out.logits, precision=4))
    return 0


def cmd_gap(args) -> int:
    model, _, _, _ = load_checkpoint(args.ckpt)
    corpus = corpus_from_config(model.cfg)
    v, t = eval_embeddings(model, corpus.eval[: model.cfg.eval_pairs])
    print(f"modality_gap: {modality_gap(v, t):.6f}")
    return 0


def cmd_export_attn(args) -> int:
    model, _, _, _ = load_checkpoint(args.ckpt)
    corpus = corpus_from_config(model.cfg)
    if not 0 <= args.sample < len(corpus.eval):
        raise ContractError(f"sample index {args.sample} outside eval split of size {len(corpus.eval)}")
    sample = corpus.eval[args.sample]
    out = args.out or f"attention_layer{args.layer}_sample{args.sample}.txt"
    export_attention(model, sample, args.layer, out)
    print(f"wrote {out}")
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck_suite import run_gradcheck_suite
    failures = run_gradcheck_suite(args.module, log=print)
    if failures:
        raise NumericError(f"{failures} gradient check(s) exceeded tolerance")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {
        "gen-corpus": cmd_gen_corpus,
        "train": cmd_train,
        "compose": cmd_compose,
        "gradcheck": cmd_gradcheck,
        "eval": cmd_eval,
        "gap": cmd_gap,
        "export-attn": cmd_export_attn,
    }
    try:
        return handlers[args.command](args)
    except ContractError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
