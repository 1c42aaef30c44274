"""Contrastive training: InBatch and MoCo objectives with exact gradients,
momentum/queue mechanics, Adam with linear warmup then linear decay, and
the three run modes (pretrain, hard-negative fine-tune, domain adapt).

One logical loop owns all mutable state; gradients are reduced in fixed
index order, so training is a pure function of (pairs bytes, config, seed).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, asdict
from typing import Optional, Sequence

import numpy as np

from . import _util, augment, encoder
from .augment import MixSpec, PairBackends, TrainingPair
from .corpus import Document, TokenSeq, Vocab, build_vocab, tokenize
from .encoder import EncoderParams, GradientSet, encode, encode_backward, init_params
from .errors import (
    BatchExceedsQueue,
    EmptyCorpus,
    MissingHardNegative,
    NonFinite,
)

log = logging.getLogger(__name__)

QUEUE_SIZE_WARN_ABOVE = 2**14


@dataclass
class TrainConfig:
    arch: str = "inbatch"  # or "moco"
    steps: int = 1000
    batch_size: int = 32
    lr: float = 5e-5
    warmup_steps: int = 100
    temperature: float = 0.05
    queue_size: int = 2**10
    momentum: float = 0.999
    seed: int = 0
    dim: int = 32
    loss_direction: str = "q2d"  # or "bidirectional"
    mix: Optional[str] = None
    vocab_min_freq: int = 1

    def __post_init__(self):
        if self.arch not in ("inbatch", "moco"):
            raise ValueError(f"unknown arch {self.arch!r}")
        if self.loss_direction not in ("q2d", "bidirectional"):
            raise ValueError(f"unknown loss direction {self.loss_direction!r}")
        if self.warmup_steps > self.steps:
            raise ValueError("warmup_steps must be <= steps")
        if self.arch == "inbatch" and self.batch_size < 2:
            raise ValueError("inbatch needs batch_size >= 2")
        if self.temperature <= 0:
            raise ValueError("temperature must be > 0")
        if not 0.0 <= self.momentum <= 1.0:
            raise ValueError("momentum must be in [0, 1]")
        if self.queue_size < 1 or self.queue_size & (self.queue_size - 1):
            raise ValueError("queue_size must be a power of two")
        if self.queue_size > QUEUE_SIZE_WARN_ABOVE:
            log.warning(
                "queue_size %d above %d; larger queues have been observed to hurt",
                self.queue_size,
                QUEUE_SIZE_WARN_ABOVE,
            )

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class MoCoState:
    momentum_params: EncoderParams
    queue: np.ndarray  # K x H ring buffer
    ptr: int = 0
    filled: int = 0

    @classmethod
    def fresh(cls, params: EncoderParams, queue_size: int) -> "MoCoState":
        return cls(
            momentum_params=params.copy(),
            queue=np.zeros((queue_size, params.dim)),
        )

    def valid_keys(self) -> np.ndarray:
        return self.queue[: self.filled]


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m_embed: np.ndarray | None = None
    v_embed: np.ndarray | None = None
    m_proj: np.ndarray | None = None
    v_proj: np.ndarray | None = None
    m_bias: np.ndarray | None = None
    v_bias: np.ndarray | None = None

    @classmethod
    def fresh(cls, params: EncoderParams) -> "AdamState":
        return cls(
            m_embed=np.zeros_like(params.embed),
            v_embed=np.zeros_like(params.embed),
            m_proj=np.zeros_like(params.proj),
            v_proj=np.zeros_like(params.proj),
            m_bias=np.zeros_like(params.bias),
            v_bias=np.zeros_like(params.bias),
        )


# ---------------------------------------------------------------------------
# Losses


def _softmax_xent(logits: np.ndarray, targets: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy of each row against its target column, with the
    exact gradient wrt the logits. Log-sum-exp uses max subtraction."""
    if not np.isfinite(logits).all():
        raise NonFinite("non-finite logits")
    n = logits.shape[0]
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    denom = exp.sum(axis=1)
    log_probs = shifted - np.log(denom)[:, None]
    loss = -log_probs[np.arange(n), targets].sum() / n
    grad = exp / denom[:, None]
    grad[np.arange(n), targets] -= 1.0
    grad /= n
    return float(loss), grad


def inbatch_loss(scores: np.ndarray, temperature: float) -> tuple[float, np.ndarray]:
    """(1/B) sum_i -log softmax(S_i / tau)[i] and its gradient wrt S."""
    if scores.ndim != 2 or scores.shape[0] != scores.shape[1]:
        raise ValueError(f"scores must be square, got {scores.shape}")
    b = scores.shape[0]
    loss, d_logits = _softmax_xent(scores / temperature, np.arange(b))
    return loss, d_logits / temperature


def moco_loss(
    q_vecs: np.ndarray,
    k_pos: np.ndarray,
    queue_view: np.ndarray,
    temperature: float,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Per-example logits [q.k+, q.n_1, ..., q.n_f] / tau, cross-entropy
    against index 0. Keys are detached: gradients flow to q only, d_kpos is
    returned as zeros for interface symmetry."""
    b = q_vecs.shape[0]
    pos = np.sum(q_vecs * k_pos, axis=1, keepdims=True)
    if queue_view.shape[0]:
        logits = np.concatenate([pos, q_vecs @ queue_view.T], axis=1) / temperature
    else:
        logits = pos / temperature
    loss, d_logits = _softmax_xent(logits, np.zeros(b, dtype=int))
    d_q = d_logits[:, :1] * k_pos
    if queue_view.shape[0]:
        d_q = d_q + d_logits[:, 1:] @ queue_view
    d_q /= temperature
    return loss, d_q, np.zeros_like(k_pos)


def hard_negative_loss(
    scores: np.ndarray, temperature: float
) -> tuple[float, np.ndarray]:
    """B x 2B candidate matrix (positives on the diagonal of the left
    block): each query sees 1 positive and 2B-1 negatives."""
    b, cols = scores.shape
    if cols != 2 * b:
        raise ValueError(f"expected B x 2B scores, got {scores.shape}")
    loss, d_logits = _softmax_xent(scores / temperature, np.arange(b))
    return loss, d_logits / temperature


# ---------------------------------------------------------------------------
# MoCo mechanics


def momentum_update(
    momentum_params: EncoderParams, online: EncoderParams, m: float
) -> EncoderParams:
    """theta_k <- m * theta_k + (1 - m) * theta_q, elementwise in place."""
    if not 0.0 <= m <= 1.0:
        raise ValueError("momentum must be in [0, 1]")
    for name in ("embed", "proj", "bias"):
        target = getattr(momentum_params, name)
        source = getattr(online, name)
        target *= m
        target += (1.0 - m) * source
    return momentum_params


def queue_push(state: MoCoState, keys: np.ndarray) -> MoCoState:
    """FIFO ring write with wraparound; once full the oldest keys are
    exactly the ones overwritten."""
    b = keys.shape[0]
    k = state.queue.shape[0]
    if b > k:
        raise BatchExceedsQueue(f"pushing {b} keys into a queue of {k}")
    end = state.ptr + b
    if end <= k:
        state.queue[state.ptr : end] = keys
    else:
        split = k - state.ptr
        state.queue[state.ptr :] = keys[:split]
        state.queue[: end - k] = keys[split:]
    state.ptr = end % k
    state.filled = min(state.filled + b, k)
    return state


# ---------------------------------------------------------------------------
# Optimization


def lr_at(step: int, cfg: TrainConfig) -> float:
    """Linear ramp 0 -> lr over warmup_steps, then linear decay to 0."""
    if not 0 <= step <= cfg.steps:
        raise ValueError(f"step {step} outside [0, {cfg.steps}]")
    if cfg.warmup_steps > 0 and step <= cfg.warmup_steps:
        return cfg.lr * step / cfg.warmup_steps
    if cfg.steps == cfg.warmup_steps:
        return cfg.lr
    return cfg.lr * (cfg.steps - step) / (cfg.steps - cfg.warmup_steps)


def adam_step(
    params: EncoderParams,
    grads: GradientSet,
    state: AdamState,
    lr_t: float,
) -> None:
    """Bias-corrected Adam, in place. Embedding moments are lazy: only rows
    touched by the batch are updated."""
    state.t += 1
    b1, b2, eps, t = state.beta1, state.beta2, state.eps, state.t
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t

    def dense(param, grad, m, v):
        if grad is None:
            return
        if not np.isfinite(grad).all():
            raise NonFinite("non-finite gradient")
        m *= b1
        m += (1 - b1) * grad
        v *= b2
        v += (1 - b2) * grad * grad
        param -= lr_t * (m / bc1) / (np.sqrt(v / bc2) + eps)

    dense(params.proj, grads.d_proj, state.m_proj, state.v_proj)
    dense(params.bias, grads.d_bias, state.m_bias, state.v_bias)
    for row in sorted(grads.d_embed):
        g = grads.d_embed[row]
        if not np.isfinite(g).all():
            raise NonFinite(f"non-finite gradient at embedding row {row}")
        state.m_embed[row] = b1 * state.m_embed[row] + (1 - b1) * g
        state.v_embed[row] = b2 * state.v_embed[row] + (1 - b2) * g * g
        params.embed[row] -= lr_t * (state.m_embed[row] / bc1) / (
            np.sqrt(state.v_embed[row] / bc2) + eps
        )


# ---------------------------------------------------------------------------
# Batching


@dataclass
class TokenizedPair:
    query: TokenSeq
    doc: TokenSeq
    neg: Optional[TokenSeq] = None


def tokenize_pairs(
    pairs: Sequence[TrainingPair], vocab: Vocab, require_negative: bool = False
) -> list[TokenizedPair]:
    out = []
    dropped = 0
    for pair in pairs:
        if require_negative and pair.neg_doc_text is None:
            raise MissingHardNegative(pair.qid)
        q = tokenize(pair.query, vocab)
        d = tokenize(pair.doc_text, vocab)
        neg = tokenize(pair.neg_doc_text, vocab) if pair.neg_doc_text is not None else None
        if len(q) == 0 or len(d) == 0 or (require_negative and len(neg) == 0):
            dropped += 1
            continue
        out.append(TokenizedPair(q, d, neg))
    if dropped:
        log.warning("dropped %d pair(s) with empty token sequences", dropped)
    if not out:
        raise EmptyCorpus("no usable training pairs")
    return out


def _batches(n_items: int, cfg: TrainConfig):
    """Yield index batches forever; each epoch is a fresh seeded shuffle.
    A corpus smaller than the batch size trains on full-corpus batches."""
    epoch = 0
    while True:
        order = list(range(n_items))
        _util.derive_rng(cfg.seed, "epoch", str(epoch)).shuffle(order)
        if n_items <= cfg.batch_size:
            yield order
        else:
            for lo in range(0, n_items - cfg.batch_size + 1, cfg.batch_size):
                yield order[lo : lo + cfg.batch_size]
        epoch += 1


def _encode_batch(params: EncoderParams, seqs: Sequence[TokenSeq]) -> np.ndarray:
    return np.stack([encode(params, s) for s in seqs])


def _backprop_batch(
    params: EncoderParams, seqs: Sequence[TokenSeq], upstreams: np.ndarray, into: GradientSet
) -> None:
    for seq, upstream in zip(seqs, upstreams):
        into.merge(encode_backward(params, seq, upstream))


# ---------------------------------------------------------------------------
# Run modes


class RunLogger:
    def __init__(self, path: Optional[str]):
        self.path = path
        self._fh = open(path, "w", encoding="utf-8") if path else None

    def log(self, step: int, loss: float, lr: float) -> None:
        if self._fh:
            self._fh.write(_util.dumps({"step": step, "loss": loss, "lr": lr}) + "\n")

    def close(self) -> None:
        if self._fh:
            self._fh.close()


def _train_loop(
    params: EncoderParams,
    items: list[TokenizedPair],
    cfg: TrainConfig,
    log_path: Optional[str] = None,
    hard_negatives: bool = False,
    live_pair_provider=None,
) -> EncoderParams:
    adam = AdamState.fresh(params)
    moco = MoCoState.fresh(params, cfg.queue_size) if cfg.arch == "moco" else None
    run_log = RunLogger(log_path)
    batches = _batches(len(items), cfg) if items else iter(())
    try:
        for step in range(1, cfg.steps + 1):
            if live_pair_provider is not None:
                batch = live_pair_provider(step, params)
            else:
                batch = [items[i] for i in next(batches)]
            lr_t = lr_at(step, cfg)
            grads = GradientSet()
            q_vecs = _encode_batch(params, [p.query for p in batch])
            if hard_negatives:
                docs = [p.doc for p in batch] + [p.neg for p in batch]
                c_vecs = _encode_batch(params, docs)
                scores = q_vecs @ c_vecs.T
                loss, d_scores = hard_negative_loss(scores, cfg.temperature)
                _backprop_batch(params, [p.query for p in batch], d_scores @ c_vecs, grads)
                _backprop_batch(params, docs, d_scores.T @ q_vecs, grads)
            elif cfg.arch == "inbatch":
                d_vecs = _encode_batch(params, [p.doc for p in batch])
                scores = q_vecs @ d_vecs.T
                loss, d_scores = inbatch_loss(scores, cfg.temperature)
                if cfg.loss_direction == "bidirectional":
                    loss_b, d_scores_b = inbatch_loss(scores.T, cfg.temperature)
                    loss = (loss + loss_b) / 2.0
                    d_scores = (d_scores + d_scores_b.T) / 2.0
                _backprop_batch(params, [p.query for p in batch], d_scores @ d_vecs, grads)
                _backprop_batch(params, [p.doc for p in batch], d_scores.T @ q_vecs, grads)
            else:  # moco
                k_pos = _encode_batch(moco.momentum_params, [p.doc for p in batch])
                loss, d_q, _ = moco_loss(q_vecs, k_pos, moco.valid_keys(), cfg.temperature)
                _backprop_batch(params, [p.query for p in batch], d_q, grads)
            adam_step(params, grads, adam, lr_t)
            if cfg.arch == "moco" and not hard_negatives:
                momentum_update(moco.momentum_params, params, cfg.momentum)
                queue_push(moco, k_pos)
            run_log.log(step, loss, lr_t)
    finally:
        run_log.close()
    return params


def run_pretrain(
    cfg: TrainConfig,
    pairs: Sequence[TrainingPair],
    vocab: Optional[Vocab] = None,
    model_path: Optional[str] = None,
    log_path: Optional[str] = None,
    docs: Optional[Sequence[Document]] = None,
    live_augment: Optional[dict] = None,
) -> tuple[EncoderParams, Vocab]:
    """Pretrain from scratch on a pair stream, or on documents with
    on-the-fly augmentation (``docs`` + ``live_augment`` carrying at least
    {"mix": MixSpec, "backends": PairBackends}); qext-self in that mode
    scores spans with the current parameters each step."""
    if vocab is None:
        texts = [p.query for p in pairs] + [p.doc_text for p in pairs]
        if docs is not None:
            texts += [d.text for d in docs]
        vocab = build_vocab(texts, min_freq=cfg.vocab_min_freq)
    params = init_params(len(vocab), cfg.dim, cfg.seed)

    provider = None
    items: list[TokenizedPair] = []
    if docs is not None and live_augment is not None:
        provider = _live_provider(docs, vocab, cfg, live_augment)
    else:
        items = tokenize_pairs(pairs, vocab)
    params = _train_loop(params, items, cfg, log_path, live_pair_provider=provider)
    if model_path:
        encoder.save_model(path=model_path, params=params, vocab=vocab, metadata=_metadata(cfg))
    return params, vocab


def _metadata(cfg: TrainConfig, mode: str = "pretrain") -> dict:
    meta = cfg.to_dict()
    meta["mode"] = mode
    return meta


def _live_provider(docs, vocab, cfg, live_augment):
    """On-the-fly augmentation: each step assembles a batch of documents
    and produces pairs with the configured mix; the qext-self scorer reads
    the parameters as they are at that step."""
    docs = list(docs)
    mix: MixSpec = live_augment["mix"]
    backends: PairBackends = live_augment["backends"]
    batches = _batches(len(docs), cfg)

    def provide(step: int, params: EncoderParams) -> list[TokenizedPair]:
        backends.self_params = params
        backends.self_vocab = vocab
        chosen = [docs[i] for i in next(batches)]
        out = []
        for doc in chosen:
            strategy = augment.assign_strategy(cfg.seed, doc.id, mix)
            try:
                pair = augment.make_pair(doc, strategy, cfg.seed, backends)
            except augment.SKIPPABLE:
                pair = augment.random_crop_pair(doc, cfg.seed)
            q = tokenize(pair.query, vocab)
            d = tokenize(pair.doc_text, vocab)
            if len(q) and len(d):
                out.append(TokenizedPair(q, d))
        # keep the batch full so the loss shape is stable across steps
        valid = list(out)
        while valid and len(out) < len(chosen):
            out.append(valid[(len(out) - len(valid)) % len(valid)])
        return out

    return provide


def run_finetune(
    params: EncoderParams,
    vocab: Vocab,
    pairs: Sequence[TrainingPair],
    cfg: TrainConfig,
    model_path: Optional[str] = None,
    log_path: Optional[str] = None,
) -> EncoderParams:
    """Hard-negative fine-tuning: every pair must carry a negative; each
    query in a B-batch faces the 2B candidates (1 positive, 2B-1 negatives)."""
    items = tokenize_pairs(pairs, vocab, require_negative=True)
    params = _train_loop(params, items, cfg, log_path, hard_negatives=True)
    if model_path:
        encoder.save_model(model_path, params, vocab, _metadata(cfg, mode="finetune"))
    return params


def run_adapt(
    params: EncoderParams,
    vocab: Vocab,
    target_docs: Sequence[Document],
    cfg: TrainConfig,
    gen_client=None,
    model_path: Optional[str] = None,
    log_path: Optional[str] = None,
) -> EncoderParams:
    """Domain adaptation: topic-style pseudo queries for the target corpus,
    then continued training. Defaults clamp to a short low-lr run."""
    from . import lexical, tqgen

    if cfg.steps > 2000:
        log.warning("adapt typically runs <= 2000 steps; using %d as requested", cfg.steps)
    if gen_client is None:
        index = lexical.build_bm25_index(target_docs)
        gen_client = tqgen.StubClient(index=index)
    pairs = []
    skipped = 0
    for doc in target_docs:
        try:
            pairs.append(tqgen.generate_query(gen_client, doc, "topic", seed=cfg.seed))
        except (augment.SKIPPABLE) as exc:
            skipped += 1
            log.warning("adapt skipped %s: %s", doc.id, exc)
    if skipped:
        log.warning("adapt skipped %d document(s)", skipped)
    items = tokenize_pairs(pairs, vocab)
    params = _train_loop(params, items, cfg, log_path)
    if model_path:
        encoder.save_model(model_path, params, vocab, _metadata(cfg, mode="adapt"))
    return params


ADAPT_DEFAULTS = {"steps": 2000, "lr": 1e-5}
