import gzip
import json
import logging
import math
from collections import Counter

import numpy as np
import pytest

from carl.corpus import (
    PAD,
    RawInteraction,
    assemble_dataset,
    build_documents,
    build_vocabulary,
    filter_empty,
    load_corpus,
    load_stopwords,
    preprocess,
    read_interactions,
    save_corpus,
    split,
    tokenize,
)
from carl.errors import ColdStartError, DataError
from carl.synthetic import synthetic_interactions, write_jsonl


def rec(user, item, text, rating=4.0, ts=0):
    return RawInteraction(user, item, rating, text, ts)


def grid_interactions(n_users, n_items, per_user, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for u in range(n_users):
        for i in rng.choice(n_items, size=per_user, replace=False):
            out.append(rec(f"u{u}", f"i{i}", f"word{u} thing{i}", float(rng.integers(1, 6)), int(rng.integers(1e6))))
    return out


class TestIngest:
    def test_empty_file(self, tmp_path, caplog):
        path = tmp_path / "empty.json"
        path.write_text("")
        with caplog.at_level(logging.WARNING):
            records, malformed = read_interactions(path)
        assert records == [] and malformed == []
        assert "no records" in caplog.text

    def test_missing_rating_counted_and_skipped(self, tmp_path):
        good = synthetic_interactions(num_users=40, num_items=20, per_user=5)
        path = write_jsonl(good, tmp_path / "r.json")
        with open(path, "a") as fh:
            fh.write(json.dumps({"reviewerID": "x", "asin": "y", "reviewText": "hi"}) + "\n")
        records, malformed = read_interactions(path)
        assert len(records) == len(good) and malformed == [len(good) + 1]

    def test_too_many_malformed(self, tmp_path):
        path = tmp_path / "bad.json"
        lines = [json.dumps({"reviewerID": "a", "asin": "b", "overall": 3, "reviewText": "x"})] * 10
        lines += ["{not json"] * 2
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(DataError, match="lines \\[11, 12\\]"):
            read_interactions(path)

    def test_gzip(self, tmp_path):
        recs = synthetic_interactions(num_users=5, num_items=5, per_user=2)
        plain = write_jsonl(recs, tmp_path / "r.json")
        with gzip.open(tmp_path / "r.json.gz", "wb") as fh:
            fh.write(plain.read_bytes())
        assert read_interactions(tmp_path / "r.json.gz")[0] == read_interactions(plain)[0]

    def test_unreadable(self, tmp_path):
        with pytest.raises(DataError):
            read_interactions(tmp_path / "missing.json")


class TestVocabulary:
    def test_tokenizer(self):
        assert tokenize("Great AMP, loud_and clear!! 10/10") == ["great", "amp", "loud", "and", "clear", "10", "10"]

    def test_stopwords_loaded(self):
        sw = load_stopwords()
        assert {"the", "and", "of"} <= sw and "guitar" not in sw

    def test_frequent_word_dropped(self):
        # "strings" appears in 6 of 10 reviews (60%)
        recs = [rec("u", f"i{k}", ("strings " if k < 6 else "") + f"unique{k}") for k in range(10)]
        vocab = build_vocabulary(recs)
        assert "strings" not in vocab and all(f"unique{k}" in vocab for k in range(10))

    def test_single_review_keeps_everything(self):
        words = [f"w{k}" for k in range(30)]
        vocab = build_vocabulary([rec("u", "i", " ".join(words))])
        assert sorted(vocab.words) == sorted(words)

    def test_tfidf_oracle(self):
        texts = ["amp amp cable", "cable pick", "pick tuner", "strap", "strap knob"]
        vocab = build_vocabulary([rec("u", str(k), t) for k, t in enumerate(texts)])
        # tf * ln(N / df) by hand for N = 5; every df is at most 2/5
        expected = {
            "amp": 2 * math.log(5 / 1),
            "cable": 2 * math.log(5 / 2),
            "pick": 2 * math.log(5 / 2),
            "strap": 2 * math.log(5 / 2),
            "knob": 1 * math.log(5 / 1),
            "tuner": 1 * math.log(5 / 1),
        }
        assert vocab.scores == pytest.approx(expected, rel=1e-15)
        assert vocab.words == ["amp", "cable", "pick", "strap", "knob", "tuner"]
        assert vocab.index["amp"] == 1

    def test_cap_and_stopwords(self):
        recs = [rec("u", f"i{k}", f"the w{k} w{k}") for k in range(50)]
        vocab = build_vocabulary(recs, max_size=10)
        assert len(vocab) == 10 and "the" not in vocab

    def test_empty_vocabulary_fails(self):
        with pytest.raises(DataError):
            build_vocabulary([rec("u", "i", "the and of")])


class TestDocuments:
    def test_short_review_padded(self):
        recs = [rec("u", "i", "alpha beta gamma delta epsilon")]
        vocab = build_vocabulary(recs)
        udocs, idocs, _, _ = build_documents(recs, vocab, ["train"], 300)
        assert udocs.shape == (1, 300)
        assert np.count_nonzero(udocs[0]) == 5 and np.all(udocs[0, 5:] == PAD)

    def test_truncation(self):
        words = [f"w{k}" for k in range(400)]
        recs = [rec("u", "i", " ".join(words))]
        vocab = build_vocabulary(recs)
        udocs, _, _, _ = build_documents(recs, vocab, ["train"], 300)
        assert vocab.decode(udocs[0].tolist()) == words[:300]

    def test_empty_owner_flagged(self):
        recs = [rec("u1", "i1", "alpha beta"), rec("u2", "i1", "gamma")]
        vocab = build_vocabulary(recs)
        udocs, _, empty_users, _ = build_documents(recs, vocab, ["train", "test"], 10)
        assert empty_users == ["u2"] and np.all(udocs[1] == PAD)

    def test_provenance_only_training_reviews(self):
        recs = synthetic_interactions(num_users=5, num_items=4, per_user=4, seed=1)[:20]
        vocab = build_vocabulary(recs)
        recs = filter_empty(recs, vocab)
        labels = split(recs, seed=0)
        users = list(dict.fromkeys(r.user_id for r in recs))
        items = list(dict.fromkeys(r.item_id for r in recs))
        udocs, idocs, _, _ = build_documents(recs, vocab, labels, 1000, users, items)
        for owners, docs, key in ((users, udocs, "user_id"), (items, idocs, "item_id")):
            for row, owner in enumerate(owners):
                mine = sorted(
                    (r for r, lab in zip(recs, labels) if lab == "train" and getattr(r, key) == owner),
                    key=lambda r: r.timestamp,
                )
                expected = [t for r in mine for t in vocab.encode(tokenize(r.review_text))]
                got = docs[row][docs[row] != PAD].tolist()
                assert got == expected


class TestSplit:
    def test_deterministic(self):
        recs = grid_interactions(4, 5, 3)[:10]
        assert split(recs, 42) == split(recs, 42)

    def test_single_interaction_user_in_train(self):
        recs = grid_interactions(10, 8, 4) + [rec("lonely", "i0", "x")]
        for seed in range(10):
            labels = split(recs, seed)
            assert labels[-1] == "train"

    def test_train_fraction(self):
        recs = grid_interactions(100, 50, 10)
        assert len(recs) == 1000
        labels = split(recs, 0)
        frac = labels.count("train") / len(recs)
        # validation is carved out of train, so train + val is the 80% side
        frac_with_val = (labels.count("train") + labels.count("val")) / len(recs)
        assert 0.78 <= frac_with_val <= 0.82
        assert frac < frac_with_val

    def test_partition_and_coverage(self):
        recs = grid_interactions(30, 20, 6, seed=5)
        labels = split(recs, 3)
        assert set(labels) <= {"train", "val", "test"} and len(labels) == len(recs)
        train = [r for r, lab in zip(recs, labels) if lab == "train"]
        assert {r.user_id for r in train} == {r.user_id for r in recs}
        assert {r.item_id for r in train} == {r.item_id for r in recs}


class TestPipeline:
    def test_preprocess_and_roundtrip(self, tmp_path):
        path = write_jsonl(synthetic_interactions(), tmp_path / "r.json")
        dataset, stats = preprocess(path, seed=0, doc_len=50)
        assert stats["users"] == dataset.num_users and stats["ratings"] == sum(stats["split"].values())
        save_corpus(dataset, tmp_path / "corpus", stats)
        back = load_corpus(tmp_path / "corpus")
        np.testing.assert_array_equal(back.user_docs, dataset.user_docs)
        np.testing.assert_array_equal(back.item_docs, dataset.item_docs)
        for name in ("train", "val", "test"):
            np.testing.assert_array_equal(back.split_of(name).ratings, dataset.split_of(name).ratings)
        assert back.vocab.words == dataset.vocab.words and back.stats == stats

    def test_seeded_stats_identical(self, tmp_path):
        path = write_jsonl(synthetic_interactions(), tmp_path / "r.json")
        assert preprocess(path, seed=7)[1] == preprocess(path, seed=7)[1]

    def test_cold_start(self, small_dataset):
        with pytest.raises(ColdStartError):
            small_dataset.encode_pair("nobody", small_dataset.item_ids[0])

    def test_counts(self):
        recs = grid_interactions(6, 6, 3)
        vocab = build_vocabulary(recs)
        ds = assemble_dataset(recs, vocab, split(recs, 0), 20)
        assert len(ds.train) + len(ds.val) + len(ds.test) == len(recs)
        assert Counter(ds.user_ids) == Counter({f"u{u}": 1 for u in range(6)})
