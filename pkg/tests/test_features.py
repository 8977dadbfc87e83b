from __future__ import annotations

import hashlib
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from lotlsynth.features import (
    EncoderSpec,
    FeatureMatrix,
    encode,
    encode_batch,
    feature_matrix_from_json,
    feature_matrix_to_json,
    fit_encoder,
    load_feature_matrix,
    save_feature_matrix,
)
from lotlsynth.textproc import PAD_ID, Vocabulary, build_vocabulary

M64 = (1 << 64) - 1
VOCAB = Vocabulary(["<pad>", "<oov>", "a", "b", "c"], 8)


def ref_minhash(tokens, keys):
    """Pure-int reference: blake2b base hash, xor key, splitmix64 finalizer, min over the set."""
    def mix(z):
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & M64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & M64
        return z ^ (z >> 31)
    hashes = [int.from_bytes(hashlib.blake2b(t.encode(), digest_size=8).digest(), "little") for t in set(tokens)]
    return [min(mix(h ^ int(k)) for h in hashes) for k in keys]


def test_idf_single_document():
    spec = fit_encoder("tfidf", [["a"]], VOCAB)
    assert spec.idf[VOCAB.lookup("a")] == pytest.approx(1.0)
    assert spec.idf[VOCAB.lookup("b")] == pytest.approx(math.log(2) + 1)


def test_idf_formula_against_hand_count():
    corpus = [["a", "b"], ["a"], ["c", "c"]]
    spec = fit_encoder("tfidf", corpus, VOCAB)
    for tok, df in (("a", 2), ("b", 1), ("c", 1)):
        assert spec.idf[VOCAB.lookup(tok)] == pytest.approx(math.log(4 / (1 + df)) + 1)
    row = encode(["c", "c", "a"], spec)
    assert row[VOCAB.lookup("c")] == pytest.approx(2 * (math.log(2) + 1))
    assert (row >= 0).all()


def test_tfidf_empty_corpus_errors():
    with pytest.raises(ValueError):
        fit_encoder("tfidf", [], VOCAB)


def test_onehot_presence():
    spec = fit_encoder("onehot", [["a"]], VOCAB)
    assert spec.dims == len(VOCAB)
    row = encode(["a", "c", "a"], spec)
    assert row[VOCAB.lookup("a")] == 1 and row[VOCAB.lookup("c")] == 1 and row[VOCAB.lookup("b")] == 0
    assert set(np.unique(row)) <= {0.0, 1.0}


def test_token_ids_truncate_and_pad():
    spec = fit_encoder("token_ids", [], VOCAB, max_len=256)
    long = encode(["a"] * 300, spec)
    assert long.shape == (256,) and (long == VOCAB.lookup("a")).all()
    short = encode(["b", "zzz"], spec)
    assert short[:2].tolist() == [VOCAB.lookup("b"), 1]
    assert (short[2:] == PAD_ID).all()


def test_minhash_matches_reference():
    spec = fit_encoder("minhash", [], VOCAB, minhash_k=16, seed=5)
    toks = ["nc", "-", "e", "sh", "nc"]
    assert encode(toks, spec).tolist() == ref_minhash(toks, spec._keys)
    assert encode(toks, spec).tolist() == encode(list(reversed(toks)), spec).tolist()


def test_minhash_seed_changes_sketch():
    a = fit_encoder("minhash", [], VOCAB, minhash_k=8, seed=1)
    b = fit_encoder("minhash", [], VOCAB, minhash_k=8, seed=2)
    assert encode(["x", "y"], a).tolist() != encode(["x", "y"], b).tolist()


def test_spec_validation():
    with pytest.raises(ValueError):
        EncoderSpec("onehot", VOCAB, minhash_k=0)
    with pytest.raises(ValueError):
        EncoderSpec("onehot", VOCAB, max_len=0)
    with pytest.raises(ValueError):
        EncoderSpec("embedding", VOCAB)


def test_spec_roundtrip_and_vocab_guard():
    spec = fit_encoder("tfidf", [["a", "b"]], VOCAB)
    back = EncoderSpec.from_dict(spec.to_dict(), VOCAB)
    assert np.allclose(back.idf, spec.idf)
    other = Vocabulary(["<pad>", "<oov>", "z"], 8)
    with pytest.raises(ValueError):
        EncoderSpec.from_dict(spec.to_dict(), other)


def test_row_label_count_mismatch():
    with pytest.raises(ValueError):
        FeatureMatrix("token_ids", np.zeros((2, 3), dtype=np.int32), [0])


_tokens = st.lists(st.sampled_from(["a", "b", "c", "d", "-", "/"]), max_size=20)


@given(_tokens, st.randoms(use_true_random=False))
def test_order_insensitive_bag_encoders(toks, rnd):
    shuffled = list(toks)
    rnd.shuffle(shuffled)
    for kind in ("onehot", "tfidf", "minhash"):
        spec = fit_encoder(kind, [["a", "b"], ["c"]], VOCAB, minhash_k=8)
        assert np.array_equal(encode(toks, spec), encode(shuffled, spec))


@given(_tokens)
def test_onehot_idempotent_under_duplication(toks):
    spec = fit_encoder("onehot", [], VOCAB)
    assert np.array_equal(encode(toks, spec), encode(toks + toks, spec))


@given(_tokens, st.integers(1, 12))
def test_token_ids_tail_padding(toks, max_len):
    row = encode(toks, fit_encoder("token_ids", [], VOCAB, max_len=max_len))
    assert len(row) == max_len
    n = min(len(toks), max_len)
    assert (row[:n] != PAD_ID).all() and (row[n:] == PAD_ID).all()


def _corpus():
    toks = [["a", "b", "q"], ["c"], [], ["a", "a", "zz"]]
    vocab = build_vocabulary(toks, 16)
    return toks, vocab


@pytest.mark.parametrize("kind", ["onehot", "tfidf", "minhash", "token_ids"])
def test_binary_and_json_roundtrip(tmp_path, kind):
    toks, vocab = _corpus()
    spec = fit_encoder(kind, toks, vocab, minhash_k=4, max_len=5)
    fm = encode_batch(toks, spec, [0, 1, 0, 1])
    save_feature_matrix(fm, tmp_path / "m.bin")
    for back in (load_feature_matrix(tmp_path / "m.bin"), feature_matrix_from_json(feature_matrix_to_json(fm))):
        assert back.kind == kind and back.labels.tolist() == [0, 1, 0, 1]
        a = back.data.toarray() if back.is_sparse else back.data
        b = fm.data.toarray() if fm.is_sparse else fm.data
        assert a.dtype == b.dtype and np.array_equal(a, b)


def test_bad_container_rejected(tmp_path):
    p = tmp_path / "junk.bin"
    p.write_bytes(b"NOPE" + bytes(40))
    with pytest.raises(ValueError):
        load_feature_matrix(p)


def test_minhash_model_input_scaled():
    spec = fit_encoder("minhash", [], VOCAB, minhash_k=4)
    x = encode_batch([["a"], ["b", "c"]], spec).model_input()
    assert x.dtype == np.float64 and (x >= 0).all() and (x <= 1).all()
