"""Single executable exposing the pipeline stages.

Subcommands: ingest, index-bm25, augment, train, finetune, adapt, eval.
Exit codes: 0 success, 1 usage error, 2 data error. Diagnostics go to
stderr; data and reports go to files or stdout.

Configuration precedence is flags > --config file > defaults. The config
file is flat ``key=value`` text whose keys mirror the long flag names.
Worker parallelism is capped by --threads (fallback: the AUGTRIEVER_THREADS
environment variable); outputs are independent of the thread count.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from typing import Optional

from . import _util, augment, corpus, encoder, evaluator, lexical, ngram, tqgen, trainer
from .errors import DataError

log = logging.getLogger("augret")


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _read_config_file(path: str) -> dict[str, str]:
    values = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{line_no}: expected key=value")
            key, value = line.split("=", 1)
            values[key.strip()] = value.strip()
    return values


def _coerce(raw: str, like):
    if isinstance(like, bool):
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise UsageError(f"expected a boolean, got {raw!r}")
    if isinstance(like, int):
        return int(raw)
    if isinstance(like, float):
        return float(raw)
    return raw


def _merge(args: argparse.Namespace, defaults: dict) -> dict:
    """flags > config file > defaults; every arg was parsed with default
    None so explicit flags are distinguishable."""
    file_values = _read_config_file(args.config) if getattr(args, "config", None) else {}
    merged = {}
    for key, default in defaults.items():
        flag_value = getattr(args, key.replace("-", "_"), None)
        if flag_value is not None:
            merged[key] = flag_value
        elif key in file_values:
            merged[key] = _coerce(file_values[key], default if default is not None else "")
        else:
            merged[key] = default
    return merged


def _threads(merged: dict) -> int:
    if merged.get("threads") is not None:
        return int(merged["threads"])
    env = os.environ.get("AUGTRIEVER_THREADS")
    return int(env) if env else 1


def _add_common(p: Parser) -> None:
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--threads", type=int, help="worker parallelism cap")
    p.add_argument("--seed", type=int, help="global random seed")


TRAIN_DEFAULTS = {
    "arch": "inbatch",
    "steps": 1000,
    "batch-size": 32,
    "lr": 5e-5,
    "warmup-steps": 100,
    "temperature": 0.05,
    "queue-size": 2**10,
    "momentum": 0.999,
    "dim": 32,
    "loss-direction": "q2d",
    "min-freq": 1,
    "seed": 0,
    "threads": None,
}


def _train_flags(p: Parser) -> None:
    p.add_argument("--arch", choices=["inbatch", "moco"])
    p.add_argument("--steps", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--warmup-steps", type=int)
    p.add_argument("--temperature", type=float)
    p.add_argument("--queue-size", type=int)
    p.add_argument("--momentum", type=float)
    p.add_argument("--dim", type=int)
    p.add_argument("--loss-direction", choices=["q2d", "bidirectional"])
    p.add_argument("--min-freq", type=int)


def _train_config(merged: dict) -> trainer.TrainConfig:
    return trainer.TrainConfig(
        arch=merged["arch"],
        steps=merged["steps"],
        batch_size=merged["batch-size"],
        lr=merged["lr"],
        warmup_steps=merged["warmup-steps"],
        temperature=merged["temperature"],
        queue_size=merged["queue-size"],
        momentum=merged["momentum"],
        seed=merged["seed"],
        dim=merged["dim"],
        loss_direction=merged["loss-direction"],
        vocab_min_freq=merged["min-freq"],
    )


def build_parser() -> Parser:
    parser = Parser(prog="augret", description=__doc__)
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("ingest", help="normalize raw records into canonical documents")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--format", choices=["cc", "wiki", "generic"], default="generic")
    _add_common(p)

    p = sub.add_parser("index-bm25", help="build and persist a BM25 index")
    p.add_argument("--docs", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--k1", type=float)
    p.add_argument("--b", type=float)
    _add_common(p)

    p = sub.add_parser("augment", help="produce pseudo query-document pairs")
    p.add_argument("--docs", required=True)
    p.add_argument("--output", required=True)
    p.add_argument(
        "--strategy",
        required=True,
        help="a strategy name, hybrid-all, hybrid-tqgen, or mix50:<strategy>",
    )
    p.add_argument("--model", help="encoder snapshot, required for qext-self")
    p.add_argument("--gen-stub", action="store_true", default=None)
    p.add_argument("--gen-endpoint", help="generation service URL")
    p.add_argument("--crop-positive", choices=["span", "document"])
    _add_common(p)

    p = sub.add_parser("train", help="contrastive pretraining on a pair file")
    p.add_argument("--pairs", required=True)
    p.add_argument("--model-out", required=True)
    p.add_argument("--log-out")
    p.add_argument("--vocab", help="vocab file; default builds one from the pairs")
    _train_flags(p)
    _add_common(p)

    p = sub.add_parser("finetune", help="hard-negative fine-tuning of a model")
    p.add_argument("--model", required=True)
    p.add_argument("--pairs", required=True)
    p.add_argument("--model-out", required=True)
    p.add_argument("--log-out")
    _train_flags(p)
    _add_common(p)

    p = sub.add_parser("adapt", help="domain-adapt a model on a target corpus")
    p.add_argument("--model", required=True)
    p.add_argument("--docs", required=True)
    p.add_argument("--model-out", required=True)
    p.add_argument("--log-out")
    p.add_argument("--gen-stub", action="store_true", default=None)
    p.add_argument("--gen-endpoint")
    _train_flags(p)
    _add_common(p)

    p = sub.add_parser("eval", help="evaluate a retrieval system")
    p.add_argument("--system", choices=["dense", "bm25"], required=True)
    p.add_argument("--model", help="model file (dense)")
    p.add_argument("--index", help="index file (bm25)")
    p.add_argument("--docs", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--qrels")
    p.add_argument("--metrics", help="comma list of ndcg,recall,answer_recall")
    p.add_argument("--k", help="comma list of cutoffs, e.g. 5,10,20")
    p.add_argument("--out", help="report path; default stdout")
    _add_common(p)

    return parser


def _gen_client(merged: dict, docs) -> object:
    if merged.get("gen-endpoint"):
        return tqgen.GenClient(merged["gen-endpoint"])
    index = lexical.build_bm25_index(docs)
    return tqgen.StubClient(index=index)


def _cmd_ingest(args) -> int:
    records = _util.read_jsonl(args.input)
    docs = corpus.ingest_records(records, args.format)
    n = corpus.write_documents(args.output, docs)
    log.info("wrote %d document(s) to %s", n, args.output)
    return 0


def _cmd_index(args) -> int:
    merged = _merge(args, {"k1": 1.2, "b": 0.75, "seed": 0, "threads": None})
    docs = corpus.read_documents(args.docs)
    index = lexical.build_bm25_index(docs, lexical.Bm25Params(merged["k1"], merged["b"]))
    lexical.save_index(index, args.output, config={"seed": merged["seed"]})
    log.info("indexed %d document(s), %d term(s)", index.n_docs, len(index.postings))
    return 0


def _cmd_augment(args) -> int:
    defaults = {
        "seed": 0,
        "threads": None,
        "gen-stub": False,
        "gen-endpoint": None,
        "crop-positive": "span",
        "strategy": None,
        "model": None,
    }
    merged = _merge(args, defaults)
    threads = _threads(merged)
    docs = corpus.read_documents(args.docs)
    spec = augment.MixSpec.named(merged["strategy"])
    named = {name for name, _ in spec.entries}

    wants_tqgen = any(n.startswith("tqgen-") for n in named)
    backends = augment.PairBackends(crop_positive_side=merged["crop-positive"])
    if "qext-bm25" in named or (wants_tqgen and not merged["gen-endpoint"]):
        backends.bm25_index = lexical.build_bm25_index(docs)
    if "qext-plm" in named:
        backends.lm = ngram.build_ngram_lm(d.text for d in docs)
    if "qext-self" in named:
        if not merged["model"]:
            raise UsageError("qext-self requires --model")
        params, vocab, _ = encoder.load_model(merged["model"])
        backends.self_params = params
        backends.self_vocab = vocab
    if wants_tqgen:
        if merged["gen-endpoint"]:
            backends.gen_client = tqgen.GenClient(merged["gen-endpoint"])
            backends.external_score_client = backends.gen_client
        elif merged["gen-stub"]:
            backends.gen_client = tqgen.StubClient(index=backends.bm25_index)
        else:
            raise UsageError("tqgen strategies need --gen-stub or --gen-endpoint")

    pairs = augment.mix_strategies(docs, spec, merged["seed"], backends, threads=threads)
    meta = {
        "strategy": merged["strategy"],
        "seed": merged["seed"],
        "crop_positive": merged["crop-positive"],
        "generator": "stub" if merged["gen-stub"] else (merged["gen-endpoint"] or None),
    }
    n = augment.write_pairs(args.output, pairs, meta=meta)
    log.info("wrote %d pair(s) to %s", n, args.output)
    return 0


def _cmd_train(args) -> int:
    merged = _merge(args, TRAIN_DEFAULTS)
    cfg = _train_config(merged)
    pairs = augment.read_pairs(args.pairs)
    vocab = corpus.Vocab.load(args.vocab) if args.vocab else None
    trainer.run_pretrain(
        cfg, pairs, vocab=vocab, model_path=args.model_out, log_path=args.log_out
    )
    log.info("trained %d step(s); model at %s", cfg.steps, args.model_out)
    return 0


def _cmd_finetune(args) -> int:
    defaults = dict(TRAIN_DEFAULTS, lr=1e-5)
    merged = _merge(args, defaults)
    cfg = _train_config(merged)
    params, vocab, _ = encoder.load_model(args.model)
    pairs = augment.read_pairs(args.pairs)
    trainer.run_finetune(
        params, vocab, pairs, cfg, model_path=args.model_out, log_path=args.log_out
    )
    log.info("fine-tuned %d step(s); model at %s", cfg.steps, args.model_out)
    return 0


def _cmd_adapt(args) -> int:
    defaults = dict(
        TRAIN_DEFAULTS,
        steps=trainer.ADAPT_DEFAULTS["steps"],
        lr=trainer.ADAPT_DEFAULTS["lr"],
        **{"gen-stub": False, "gen-endpoint": None},
    )
    merged = _merge(args, defaults)
    cfg = _train_config(merged)
    params, vocab, _ = encoder.load_model(args.model)
    docs = corpus.read_documents(args.docs)
    client = None
    if merged["gen-endpoint"]:
        client = tqgen.GenClient(merged["gen-endpoint"])
    trainer.run_adapt(
        params,
        vocab,
        docs,
        cfg,
        gen_client=client,
        model_path=args.model_out,
        log_path=args.log_out,
    )
    log.info("adapted %d step(s); model at %s", cfg.steps, args.model_out)
    return 0


def _cmd_eval(args) -> int:
    defaults = {
        "metrics": "ndcg,recall",
        "k": "10,20",
        "seed": 0,
        "threads": None,
        "model": None,
        "index": None,
    }
    merged = _merge(args, defaults)
    threads = _threads(merged)
    docs = corpus.read_documents(args.docs)
    queries = evaluator.read_queries(args.queries)
    qrels = evaluator.read_qrels(args.qrels) if args.qrels else None
    metrics = [m.strip() for m in merged["metrics"].split(",") if m.strip()]
    ks = [int(x) for x in str(merged["k"]).split(",") if x]

    if args.system == "dense":
        if not merged["model"]:
            raise UsageError("eval --system dense requires --model")
        params, vocab, model_meta = encoder.load_model(merged["model"])
        system = evaluator.DenseSystem(params, vocab)
        config = {"model_meta": model_meta, "seed": merged["seed"]}
    else:
        if not merged["index"]:
            raise UsageError("eval --system bm25 requires --index")
        index = lexical.load_index(merged["index"])
        system = evaluator.Bm25System(index)
        config = {"k1": index.params.k1, "b": index.params.b, "seed": merged["seed"]}

    report = evaluator.evaluate_run(
        system, docs, queries, qrels, metrics, ks, threads=threads, config=config
    )
    text = _util.dumps(report)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    return 0


COMMANDS = {
    "ingest": _cmd_ingest,
    "index-bm25": _cmd_index,
    "augment": _cmd_augment,
    "train": _cmd_train,
    "finetune": _cmd_finetune,
    "adapt": _cmd_adapt,
    "eval": _cmd_eval,
}


def dispatch(argv: Optional[list[str]] = None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO, format="%(levelname)s %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not args.command:
            raise UsageError("a subcommand is required")
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
