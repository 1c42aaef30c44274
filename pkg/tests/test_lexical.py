import math

import pytest

from augret._util import derive_rng
from augret.corpus import Document, tokenize
from augret.errors import DuplicateDocId, EmptyCorpus, UnknownDoc
from augret.lexical import (
    Bm25Params,
    bm25_score,
    bm25_search,
    build_bm25_index,
    load_index,
    save_index,
)


def docs_from(texts, prefix="d"):
    return [Document(id=f"{prefix}{i}", text=t) for i, t in enumerate(texts)]


# Independent oracle: score every document directly from raw term counts.
def oracle_scores(texts, ids, query_terms, k1=1.2, b=0.75):
    token_lists = [tokenize(t).surface for t in texts]
    n = len(texts)
    avg = sum(len(ts) for ts in token_lists) / n
    df = {}
    for ts in token_lists:
        for term in set(ts):
            df[term] = df.get(term, 0) + 1
    scores = {}
    for doc_id, ts in zip(ids, token_lists):
        s = 0.0
        for term in query_terms:
            tf = ts.count(term)
            if tf == 0 or term not in df:
                continue
            idf = math.log(1 + (n - df[term] + 0.5) / (df[term] + 0.5))
            s += idf * tf * (k1 + 1) / (tf + k1 * (1 - b + b * len(ts) / avg))
        scores[doc_id] = s
    return scores


def oracle_ranking(scores, k):
    hits = sorted(((d, s) for d, s in scores.items() if s > 0), key=lambda x: (-x[1], x[0]))[:k]
    if len(hits) < k:
        have = {d for d, _ in hits}
        for doc_id in sorted(scores):
            if len(hits) >= k:
                break
            if doc_id not in have:
                hits.append((doc_id, 0.0))
    return hits


def test_build_statistics():
    index = build_bm25_index(docs_from(["a b", "a", "c"]))
    assert index.n_docs == 3
    assert index.df == {"a": 2, "b": 1, "c": 1}
    assert index.avg_len == pytest.approx(4 / 3)
    for term, posting in index.postings.items():
        assert index.df[term] == len(posting)
        assert posting == sorted(posting)


def test_build_single_doc():
    index = build_bm25_index(docs_from(["only one document here"]))
    assert index.avg_len == 4
    assert all(df == 1 for df in index.df.values())


def test_duplicate_doc_id():
    docs = [Document(id="same", text="a"), Document(id="same", text="b")]
    with pytest.raises(DuplicateDocId):
        build_bm25_index(docs)


def test_empty_corpus():
    with pytest.raises(EmptyCorpus):
        build_bm25_index([])


def test_score_empty_query_is_zero():
    index = build_bm25_index(docs_from(["a b", "a", "c"]))
    assert bm25_score(index, tokenize(""), "d0") == 0.0


def test_score_disjoint_terms_is_zero():
    index = build_bm25_index(docs_from(["a b", "a", "c"]))
    assert bm25_score(index, tokenize("z q"), "d0") == 0.0


def test_score_hand_fixture():
    # frozen from the independent formula oracle before implementation
    index = build_bm25_index(docs_from(["a b", "a", "c"]))
    assert bm25_score(index, tokenize("a"), "d0") == pytest.approx(
        0.39019169220400696, abs=1e-9
    )
    assert bm25_score(index, tokenize("a"), "d1") == pytest.approx(
        0.523548346501579, abs=1e-9
    )


def test_score_unknown_doc():
    index = build_bm25_index(docs_from(["a"]))
    with pytest.raises(UnknownDoc):
        bm25_score(index, tokenize("a"), "nope")


def test_score_repeated_query_terms_add_up():
    index = build_bm25_index(docs_from(["a b", "a", "c"]))
    once = bm25_score(index, tokenize("a"), "d0")
    twice = bm25_score(index, tokenize("a a"), "d0")
    assert twice == pytest.approx(2 * once)


def test_idf_positive_for_indexed_terms():
    index = build_bm25_index(docs_from(["common", "common", "common", "rare common"]))
    for term in index.df:
        assert index.idf(term) > 0


def test_score_monotone_in_tf():
    # same doc length, increasing tf of the query term
    texts = ["q x x x", "q q x x", "q q q x"]
    index = build_bm25_index(docs_from(texts))
    scores = [bm25_score(index, tokenize("q"), f"d{i}") for i in range(3)]
    assert scores[0] < scores[1] < scores[2]


def test_search_single_match_first():
    index = build_bm25_index(docs_from(["apple pie", "banana bread", "cherry cake"]))
    hits = bm25_search(index, tokenize("banana"), 3)
    assert hits[0][0] == "d1"


def test_search_tie_broken_by_doc_id():
    index = build_bm25_index(docs_from(["same text", "same text", "other stuff"]))
    hits = bm25_search(index, tokenize("same"), 2)
    assert [h[0] for h in hits] == ["d0", "d1"]


def test_search_fills_with_zero_scores():
    index = build_bm25_index(docs_from(["apple", "banana", "cherry"]))
    hits = bm25_search(index, tokenize("apple"), 3)
    assert hits[0] == ("d0", pytest.approx(hits[0][1]))
    assert [h[0] for h in hits[1:]] == ["d1", "d2"]
    assert all(h[1] == 0.0 for h in hits[1:])


def test_search_matches_exhaustive_oracle():
    rng = derive_rng(4242, "bm25-oracle")
    terms = [f"t{i}" for i in range(30)]
    for trial in range(20):
        n = rng.randint(2, 40)
        texts = [
            " ".join(rng.choice(terms) for _ in range(rng.randint(1, 25))) for _ in range(n)
        ]
        ids = [f"d{i:03d}" for i in range(n)]
        docs = [Document(id=i, text=t) for i, t in zip(ids, texts)]
        index = build_bm25_index(docs)
        for _ in range(25):
            q_terms = [rng.choice(terms) for _ in range(rng.randint(1, 4))]
            expect = oracle_ranking(oracle_scores(texts, ids, q_terms), n)
            got = bm25_search(index, tokenize(" ".join(q_terms)), n)
            assert [g[0] for g in got] == [e[0] for e in expect]
            for (gd, gs), (ed, es) in zip(got, expect):
                assert gs == pytest.approx(es, abs=1e-9)


def test_index_order_insensitive():
    texts = ["a b c", "b c d", "c d e", "x y"]
    fwd = build_bm25_index(docs_from(texts))
    rev_docs = list(reversed(docs_from(texts)))
    rev = build_bm25_index(rev_docs)
    assert fwd.df == rev.df
    assert fwd.postings == rev.postings
    assert fwd.avg_len == rev.avg_len


def test_index_file_roundtrip(tmp_path):
    index = build_bm25_index(docs_from(["a b b", "b c", "c c a"]), Bm25Params(1.4, 0.6))
    path = tmp_path / "corpus.abix"
    save_index(index, str(path), config={"seed": 7})
    loaded = load_index(str(path))
    assert loaded.params == Bm25Params(1.4, 0.6)
    assert loaded.df == index.df
    assert loaded.postings == index.postings
    assert loaded.doc_len == index.doc_len
    assert loaded.avg_len == index.avg_len
    q = tokenize("b c")
    assert bm25_search(loaded, q, 3) == bm25_search(index, q, 3)


def test_index_file_magic(tmp_path):
    path = tmp_path / "bogus.bin"
    path.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(ValueError):
        load_index(str(path))
