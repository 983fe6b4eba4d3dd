import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sdoh_forge.errors import DataError, EmptyCorpus
from sdoh_forge.features import (
    SparseVector,
    Vocabulary,
    fit_vocab,
    ngrams,
    term_weights,
    tokenize,
    vectorize,
)

CORPUS = ["smokes daily", "never smokes", "lives alone"]


def test_tokenize_rules():
    assert tokenize("Smokes 1-2 PPD, since 2001; MRN 1234567.") == ["smokes", "1", "2", "ppd", "since", "2001", "mrn"]


def test_ngrams():
    assert ngrams(["a", "b", "c"], (1, 2)) == ["a", "b", "c", "a b", "b c"]


def test_fit_vocab_examples():
    v = fit_vocab(["a b", "b c"], (1, 1), min_df=1)
    assert v.index_to_term() == ["a", "b", "c"]
    assert v.df("b") == 2
    assert fit_vocab(["a b", "b c"], (1, 1), min_df=2).index_to_term() == ["b"]
    with pytest.raises(EmptyCorpus):
        fit_vocab([])


def test_idf_formula():
    v = fit_vocab(["x y", "y"], (1, 1), min_df=1)
    assert v.idf("x") == pytest.approx(1.405465, abs=5e-7)
    assert round(v.idf("x"), 6) == round(math.log(3 / 2) + 1, 6)


def test_golden_weights():
    v = fit_vocab(CORPUS, (1, 1), min_df=1)
    x = dict(zip(v.index_to_term(), [0.0] * len(v)))
    for i, w in vectorize("smokes daily", v).pairs():
        x[v.index_to_term()[i]] = w
    assert f"{x['smokes']:.6f}" == "0.605349"
    assert f"{x['daily']:.6f}" == "0.795961"
    pairs = dict((v.index_to_term()[i], w) for i, w in vectorize("smokes smokes daily", v).pairs())
    assert (f"{pairs['smokes']:.6f}", f"{pairs['daily']:.6f}") == ("0.835592", "0.549351")


def test_empty_and_oov_give_zero_vector():
    v = fit_vocab(CORPUS, (1, 1), min_df=1)
    assert vectorize("", v).pairs() == []
    assert vectorize("zebra quokka", v).pairs() == []


words = st.sampled_from(["no", "tobacco", "smokes", "lives", "alone", "wife", "retired", "daily"])
docs = st.lists(st.lists(words, min_size=0, max_size=8).map(" ".join), min_size=1, max_size=12)


@settings(max_examples=100, deadline=None)
@given(docs, st.randoms(use_true_random=False))
def test_properties(corpus, rnd):
    v = fit_vocab(corpus, (1, 2), min_df=1)
    shuffled = list(corpus)
    rnd.shuffle(shuffled)
    v2 = fit_vocab(shuffled, (1, 2), min_df=1)
    assert v.terms == v2.terms
    for doc in corpus:
        x = vectorize(doc, v)
        assert x == vectorize(doc, v2)
        if x.pairs():
            assert abs(math.sqrt(sum(w * w for w in x.weights)) - 1.0) < 1e-9
        # dropping a token never raises another term's pre-normalization weight
        toks = doc.split()
        if toks:
            before = term_weights(doc, v)
            after = term_weights(" ".join(toks[1:]), v)
            for idx, w in after.items():
                assert w <= before[idx] + 1e-12


def test_vocab_invariants_and_roundtrip(tmp_path):
    v = fit_vocab(["a b c", "a b", "b d", "e"], (1, 2), min_df=2)
    assert sorted(i for i, _ in v.terms.values()) == list(range(len(v)))
    assert all(df >= 2 for _, df in v.terms.values())
    path = tmp_path / "vocab.tsv"
    v.save(path)
    back = Vocabulary.load(path)
    assert back.terms == v.terms and back.n_docs == v.n_docs
    assert back.ngram_range == v.ngram_range and back.min_df == v.min_df
    assert back.fingerprint == v.fingerprint


def test_vocab_load_rejects_other_files(tmp_path):
    p = tmp_path / "x.tsv"
    p.write_text("something else\n")
    with pytest.raises(DataError):
        Vocabulary.load(p)


def test_sparse_vector_invariants():
    with pytest.raises(DataError):
        SparseVector((2, 1), (1.0, 1.0), 5)
    with pytest.raises(DataError):
        SparseVector((0,), (0.0,), 5)
    with pytest.raises(DataError):
        SparseVector((5,), (1.0,), 5)
    x = SparseVector.from_dense([0, 1.5, 0, -2])
    assert x.pairs() == [(1, 1.5), (3, -2.0)]
    assert np.array_equal(x.to_dense(), [0, 1.5, 0, -2])
