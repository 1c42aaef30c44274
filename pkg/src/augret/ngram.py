"""Document-conditioned interpolated n-gram language model.

Reference backend for likelihood-based span salience: the probability of a
continuation word mixes a within-document bigram, a within-document unigram,
a corpus unigram, and a uniform floor over the corpus vocabulary:

    p(w | prev, d) = l1*bigram_d(w|prev) + l2*unigram_d(w)
                   + l3*unigram_corpus(w) + l4/V

The span's score is the summed negative log-likelihood with the document as
prefix (the first span word conditions on the document's last word). No
length normalization is applied, so raw scores are comparable only the way
a raw NLL is: shorter spans are cheaper. A neural scorer can replace this
backend through the generation-service /score endpoint.
"""

from __future__ import annotations

import math
from collections import Counter
from typing import Iterable, Sequence

from .corpus import tokenize
from .errors import EmptySpan

DEFAULT_LAMBDAS = (0.4, 0.3, 0.2, 0.1)


class NgramLm:
    def __init__(self, lambdas: tuple[float, float, float, float] = DEFAULT_LAMBDAS):
        if len(lambdas) != 4 or abs(sum(lambdas) - 1.0) > 1e-9 or min(lambdas) < 0:
            raise ValueError("lambdas must be 4 non-negative weights summing to 1")
        self.lambdas = lambdas
        self.corpus_counts: Counter[str] = Counter()
        self.corpus_total = 0

    @property
    def vocab_size(self) -> int:
        return max(1, len(self.corpus_counts))

    def fit(self, texts: Iterable[str]) -> "NgramLm":
        for text in texts:
            terms = tokenize(text).surface
            self.corpus_counts.update(terms)
            self.corpus_total += len(terms)
        return self

    def _word_prob(
        self,
        word: str,
        prev: str | None,
        doc_unigrams: Counter,
        doc_bigrams: Counter,
        doc_contexts: Counter,
        doc_total: int,
    ) -> float:
        l1, l2, l3, l4 = self.lambdas
        p = l4 / self.vocab_size
        if prev is not None and doc_contexts.get(prev, 0) > 0:
            p += l1 * doc_bigrams.get((prev, word), 0) / doc_contexts[prev]
        if doc_total > 0:
            p += l2 * doc_unigrams.get(word, 0) / doc_total
        if self.corpus_total > 0:
            p += l3 * self.corpus_counts.get(word, 0) / self.corpus_total
        return p

    def continuation_nll(self, context_terms: Sequence[str], span_terms: Sequence[str]) -> float:
        """Sum of -ln p(w_i | w_{i-1}, context) over the span terms."""
        if not span_terms:
            raise EmptySpan("span has no tokens")
        doc_unigrams = Counter(context_terms)
        doc_bigrams = Counter(zip(context_terms, context_terms[1:]))
        doc_contexts = Counter(context_terms[:-1])
        doc_total = len(context_terms)
        nll = 0.0
        prev = context_terms[-1] if context_terms else None
        for word in span_terms:
            p = self._word_prob(word, prev, doc_unigrams, doc_bigrams, doc_contexts, doc_total)
            nll -= math.log(p)
            prev = word
        return nll

    def span_nll(self, doc_text: str, span_text: str) -> float:
        return self.continuation_nll(tokenize(doc_text).surface, tokenize(span_text).surface)


def build_ngram_lm(
    texts: Iterable[str],
    lambdas: tuple[float, float, float, float] = DEFAULT_LAMBDAS,
) -> NgramLm:
    return NgramLm(lambdas).fit(texts)
