"""Built-in statistical backend: a per-request n-gram model over the
supplied context.

Scoring mixes a context bigram, a context unigram, and a uniform floor:

    p(w | prev) = 0.5 * bigram(w | prev) + 0.3 * unigram(w) + 0.2 / V

so a continuation that occurs verbatim in the context (especially
repeatedly) is far cheaper than a shuffle of the same words. Generation
samples from the same distribution under nucleus / top-k filtering with a
seeded RNG, which makes responses reproducible request by request.
"""

from __future__ import annotations

import math
import random
import re
from collections import Counter

_TOKEN_RE = re.compile(r"\w+", re.UNICODE)

W_BIGRAM = 0.5
W_UNIGRAM = 0.3
W_UNIFORM = 0.2


def tokenize(text: str) -> list[str]:
    return [m.group(0).lower() for m in _TOKEN_RE.finditer(text)]


class ContextNgramModel:
    model_id = "context-ngram"

    def score(self, context: str, continuation: str) -> float:
        """Summed negative log-likelihood of the continuation tokens given
        the context; finite and non-negative, lower = more salient."""
        ctx = tokenize(context)
        cont = tokenize(continuation)
        if not ctx or not cont:
            raise ValueError("context and continuation must contain words")
        vocab = set(ctx) | set(cont)
        unigrams = Counter(ctx)
        bigrams = Counter(zip(ctx, ctx[1:]))
        contexts = Counter(ctx[:-1])
        nll = 0.0
        prev = ctx[-1]
        for word in cont:
            nll -= math.log(self._prob(word, prev, unigrams, bigrams, contexts, len(ctx), len(vocab)))
            prev = word
        return nll

    def _prob(self, word, prev, unigrams, bigrams, contexts, total, v):
        p = W_UNIFORM / v
        if contexts.get(prev, 0) > 0:
            p += W_BIGRAM * bigrams.get((prev, word), 0) / contexts[prev]
        p += W_UNIGRAM * unigrams.get(word, 0) / total
        return p

    def generate(
        self,
        prompt: str,
        top_p: float = 0.9,
        top_k: int = 0,
        temperature: float = 1.0,
        max_new_tokens: int = 64,
        seed: int = 0,
    ) -> str:
        ctx = tokenize(prompt)
        if not ctx:
            raise ValueError("prompt must contain words")
        vocab = sorted(set(ctx))
        unigrams = Counter(ctx)
        bigrams = Counter(zip(ctx, ctx[1:]))
        contexts = Counter(ctx[:-1])
        rng = random.Random(seed)
        out: list[str] = []
        prev = ctx[-1]
        for _ in range(max_new_tokens):
            probs = [
                self._prob(w, prev, unigrams, bigrams, contexts, len(ctx), len(vocab))
                for w in vocab
            ]
            word = vocab[_sample(probs, top_p, top_k, temperature, rng)]
            out.append(word)
            prev = word
        return " ".join(out)


def _sample(probs: list[float], top_p: float, top_k: int, temperature: float, rng) -> int:
    """Temperature reshaping, then top-k, then nucleus filtering: keep the
    smallest probability-sorted prefix whose cumulative mass reaches top_p."""
    if temperature != 1.0:
        probs = [p ** (1.0 / temperature) for p in probs]
    total = sum(probs)
    probs = [p / total for p in probs]
    order = sorted(range(len(probs)), key=lambda i: (-probs[i], i))
    if top_k > 0:
        order = order[:top_k]
    kept = []
    cumulative = 0.0
    for i in order:
        kept.append(i)
        cumulative += probs[i]
        if cumulative >= top_p:
            break
    mass = sum(probs[i] for i in kept)
    u = rng.random() * mass
    running = 0.0
    for i in kept:
        running += probs[i]
        if u <= running:
            return i
    return kept[-1]


def load_backend(model: str, device: str = "cpu"):
    if model == ContextNgramModel.model_id:
        return ContextNgramModel()
    from .hf_backend import HfModel

    return HfModel(model, device=device)
