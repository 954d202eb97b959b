"""Amazon 5-core ingestion, vocabulary, splits and per-owner review documents.

Pipeline order: ingest -> vocabulary over all raw reviews -> drop ratings
whose review has no in-vocabulary word -> train/val/test split -> user and
item documents from training reviews only.
"""

from __future__ import annotations

import csv
import gzip
import json
import logging
import math
import re
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ColdStartError, ConfigError, DataError

logger = logging.getLogger(__name__)

PAD = 0
DOC_LEN = 300
VOCAB_SIZE = 20000
DF_MAX = 0.5
MALFORMED_LIMIT = 0.01

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)


@dataclass(frozen=True)
class RawInteraction:
    user_id: str
    item_id: str
    rating: float
    review_text: str
    timestamp: int = 0


@dataclass
class Vocabulary:
    """Words in rank order; token id of ``words[k]`` is ``k + 1`` (0 is padding)."""

    words: list
    df: dict = field(default_factory=dict)
    scores: dict = field(default_factory=dict)

    def __post_init__(self):
        self.index = {w: k + 1 for k, w in enumerate(self.words)}
        if len(self.index) != len(self.words):
            raise DataError("vocabulary contains duplicate words")

    def __len__(self):
        return len(self.words)

    def __contains__(self, word):
        return word in self.index

    def encode(self, tokens):
        return [self.index[w] for w in tokens if w in self.index]

    def decode(self, ids):
        return [self.words[i - 1] if i != PAD else "<pad>" for i in ids]


@dataclass
class Pairs:
    """Index-encoded (user, item, rating) triples."""

    users: np.ndarray
    items: np.ndarray
    ratings: np.ndarray

    def __len__(self):
        return len(self.ratings)

    def subset(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        return Pairs(self.users[idx], self.items[idx], self.ratings[idx])


@dataclass
class SplitDataset:
    vocab: Vocabulary
    user_ids: list
    item_ids: list
    user_docs: np.ndarray  # [num_users, doc_len] int32
    item_docs: np.ndarray  # [num_items, doc_len] int32
    train: Pairs
    val: Pairs
    test: Pairs
    empty_users: list = field(default_factory=list)
    empty_items: list = field(default_factory=list)
    stats: dict | None = None

    def __post_init__(self):
        self.user_index = {u: k for k, u in enumerate(self.user_ids)}
        self.item_index = {i: k for k, i in enumerate(self.item_ids)}

    @property
    def num_users(self):
        return len(self.user_ids)

    @property
    def num_items(self):
        return len(self.item_ids)

    @property
    def doc_len(self):
        return self.user_docs.shape[1]

    def encode_pair(self, user_id, item_id):
        if user_id not in self.user_index:
            raise ColdStartError(f"unknown user id {user_id!r}")
        if item_id not in self.item_index:
            raise ColdStartError(f"unknown item id {item_id!r}")
        return self.user_index[user_id], self.item_index[item_id]

    def split_of(self, name):
        return {"train": self.train, "val": self.val, "test": self.test}[name]


def load_stopwords():
    text = resources.files("carl").joinpath("data/stopwords.txt").read_text(encoding="utf-8")
    return frozenset(w.strip() for w in text.splitlines() if w.strip())


def tokenize(text):
    """Lowercase and split on anything that is not a letter or digit."""
    return _TOKEN_RE.findall(text.lower())


# ---------------------------------------------------------------------------
# ingestion
# ---------------------------------------------------------------------------


def _open_text(path):
    path = Path(path)
    if path.suffix == ".gz":
        return gzip.open(path, "rt", encoding="utf-8")
    return open(path, encoding="utf-8")


def _parse_record(line):
    obj = json.loads(line)
    if not isinstance(obj, dict):
        raise ValueError("not an object")
    user = obj["reviewerID"]
    item = obj["asin"]
    rating = float(obj["overall"])
    if not (isinstance(user, str) and user and isinstance(item, str) and item):
        raise ValueError("empty id")
    if not 1.0 <= rating <= 5.0:
        raise ValueError(f"rating {rating} outside [1, 5]")
    text = obj.get("reviewText") or ""
    if not isinstance(text, str):
        raise ValueError("review text is not a string")
    return RawInteraction(user, item, rating, text, int(obj.get("unixReviewTime") or 0))


def read_interactions(path):
    """Parse a JSON-lines review dump; returns ``(records, malformed_line_numbers)``."""
    try:
        fh = _open_text(path)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    records, malformed = [], []
    with fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                records.append(_parse_record(line))
            except (ValueError, KeyError, TypeError):
                malformed.append(lineno)
    total = len(records) + len(malformed)
    if total == 0:
        logger.warning("%s contains no records", path)
    elif malformed:
        logger.warning("%s: skipped %d malformed line(s)", path, len(malformed))
        if len(malformed) / total > MALFORMED_LIMIT:
            raise DataError(
                f"{path}: {len(malformed)}/{total} lines malformed (> {MALFORMED_LIMIT:.0%}); "
                f"first offenders at lines {malformed[:5]}"
            )
    return records, malformed


def ingest(path):
    return read_interactions(path)[0]


# ---------------------------------------------------------------------------
# vocabulary
# ---------------------------------------------------------------------------


def build_vocabulary(interactions, max_size=VOCAB_SIZE, df_max=DF_MAX, stopwords=None):
    """Rank non-stopword words by corpus tf times ln(N / df) and keep the top ``max_size``.

    Each raw review is one document for df. Words in more than ``df_max`` of
    the reviews are dropped; with a single review the df rule is vacuous and
    is skipped.
    """
    if not interactions:
        raise DataError("cannot build a vocabulary from an empty corpus")
    if stopwords is None:
        stopwords = load_stopwords()
    n_docs = len(interactions)
    tf, df = Counter(), Counter()
    for rec in interactions:
        tokens = tokenize(rec.review_text)
        tf.update(tokens)
        df.update(set(tokens))
    scores = {}
    for word, count in df.items():
        if word in stopwords:
            continue
        if n_docs > 1 and count / n_docs > df_max:
            continue
        scores[word] = tf[word] * math.log(n_docs / count)
    ranked = sorted(scores, key=lambda w: (-scores[w], w))[:max_size]
    if not ranked:
        raise DataError("vocabulary is empty after stopword and df filtering")
    return Vocabulary(ranked, {w: df[w] for w in ranked}, {w: scores[w] for w in ranked})


def filter_empty(interactions, vocab):
    """Drop ratings whose review keeps no word once out-of-vocabulary words go."""
    kept = [r for r in interactions if any(w in vocab for w in tokenize(r.review_text))]
    dropped = len(interactions) - len(kept)
    if dropped:
        logger.info("dropped %d rating(s) with empty preprocessed review", dropped)
    return kept


# ---------------------------------------------------------------------------
# splitting
# ---------------------------------------------------------------------------


def split(interactions, seed, train_frac=0.8, val_frac=0.1):
    """Label each interaction 'train', 'val' or 'test'.

    Every user and item keeps at least one training interaction: a seeded
    shuffle is scanned and anything covering a not-yet-covered entity is
    forced into train; the rest tops train up to ``train_frac``. Validation
    is then carved out of train (``val_frac`` of it) without breaking
    coverage.
    """
    n = len(interactions)
    if n == 0:
        return []
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    in_train = np.zeros(n, dtype=bool)
    seen_u, seen_i = set(), set()
    for k in order:
        rec = interactions[k]
        if rec.user_id not in seen_u or rec.item_id not in seen_i:
            in_train[k] = True
            seen_u.add(rec.user_id)
            seen_i.add(rec.item_id)
    target = int(round(train_frac * n))
    need = target - int(in_train.sum())
    if need > 0:
        rest = [k for k in order if not in_train[k]]
        in_train[rest[:need]] = True

    labels = np.where(in_train, "train", "test").astype(object)
    train_idx = np.flatnonzero(in_train)
    u_count = Counter(interactions[k].user_id for k in train_idx)
    i_count = Counter(interactions[k].item_id for k in train_idx)
    val_target = int(round(val_frac * len(train_idx)))
    moved = 0
    for k in rng.permutation(train_idx):
        if moved >= val_target:
            break
        rec = interactions[k]
        if u_count[rec.user_id] > 1 and i_count[rec.item_id] > 1:
            u_count[rec.user_id] -= 1
            i_count[rec.item_id] -= 1
            labels[k] = "val"
            moved += 1

    for rec in interactions:
        if u_count[rec.user_id] < 1:
            raise DataError(f"coverage unsatisfiable for user {rec.user_id!r}")
        if i_count[rec.item_id] < 1:
            raise DataError(f"coverage unsatisfiable for item {rec.item_id!r}")
    return list(labels)


# ---------------------------------------------------------------------------
# documents
# ---------------------------------------------------------------------------


def _fit(ids, doc_len):
    ids = ids[:doc_len]
    return ids + [PAD] * (doc_len - len(ids))


def build_documents(interactions, vocab, labels, doc_len=DOC_LEN, user_ids=None, item_ids=None):
    """Concatenate each owner's training reviews (oldest first) into a fixed-length id sequence.

    Returns ``(user_docs, item_docs, empty_users, empty_items)``. Owners whose
    documents keep no token get an all-pad row and are listed as empty.
    """
    if doc_len < 1:
        raise ConfigError("doc_len must be positive")
    if user_ids is None:
        user_ids = list(dict.fromkeys(r.user_id for r in interactions))
    if item_ids is None:
        item_ids = list(dict.fromkeys(r.item_id for r in interactions))
    by_user, by_item = defaultdict(list), defaultdict(list)
    for pos, (rec, label) in enumerate(zip(interactions, labels)):
        if label != "train":
            continue
        by_user[rec.user_id].append((rec.timestamp, pos))
        by_item[rec.item_id].append((rec.timestamp, pos))

    encoded = {}

    def tokens_of(pos):
        if pos not in encoded:
            encoded[pos] = vocab.encode(tokenize(interactions[pos].review_text))
        return encoded[pos]

    def assemble(owners, grouped):
        docs = np.zeros((len(owners), doc_len), dtype=np.int32)
        empty = []
        for row, owner in enumerate(owners):
            ids = []
            for _, pos in sorted(grouped.get(owner, ())):
                ids.extend(tokens_of(pos))
                if len(ids) >= doc_len:
                    break
            if not ids:
                empty.append(owner)
            docs[row] = _fit(ids, doc_len)
        return docs, empty

    user_docs, empty_users = assemble(user_ids, by_user)
    item_docs, empty_items = assemble(item_ids, by_item)
    for kind, empty in (("user", empty_users), ("item", empty_items)):
        if empty:
            logger.warning("%d %s document(s) are all padding", len(empty), kind)
    return user_docs, item_docs, empty_users, empty_items


def assemble_dataset(interactions, vocab, labels, doc_len=DOC_LEN):
    user_ids = list(dict.fromkeys(r.user_id for r in interactions))
    item_ids = list(dict.fromkeys(r.item_id for r in interactions))
    user_docs, item_docs, empty_users, empty_items = build_documents(
        interactions, vocab, labels, doc_len, user_ids, item_ids
    )
    return _dataset_from_rows(
        vocab,
        user_ids,
        item_ids,
        user_docs,
        item_docs,
        [(r.user_id, r.item_id, r.rating, lab) for r, lab in zip(interactions, labels)],
        empty_users,
        empty_items,
    )


def _dataset_from_rows(vocab, user_ids, item_ids, user_docs, item_docs, rows, empty_users, empty_items):
    u_index = {u: k for k, u in enumerate(user_ids)}
    i_index = {i: k for k, i in enumerate(item_ids)}
    parts = {"train": ([], [], []), "val": ([], [], []), "test": ([], [], [])}
    for user, item, rating, label in rows:
        if label not in parts:
            raise DataError(f"unknown split label {label!r}")
        us, its, rs = parts[label]
        us.append(u_index[user])
        its.append(i_index[item])
        rs.append(float(rating))

    def pairs(label):
        us, its, rs = parts[label]
        return Pairs(np.array(us, dtype=np.int64), np.array(its, dtype=np.int64), np.array(rs, dtype=np.float64))

    return SplitDataset(
        vocab, user_ids, item_ids, user_docs, item_docs,
        pairs("train"), pairs("val"), pairs("test"), empty_users, empty_items,
    )


def corpus_stats(raw, malformed, filtered, labels, vocab, dataset, seed):
    users = {r.user_id for r in filtered}
    items = {r.item_id for r in filtered}
    n = len(filtered)
    words_per_review = [len(vocab.encode(tokenize(r.review_text))) for r in filtered]
    per_user, per_item = Counter(), Counter()
    for r, w in zip(filtered, words_per_review):
        per_user[r.user_id] += w
        per_item[r.item_id] += w
    label_counts = Counter(labels)
    return {
        "raw_records": len(raw),
        "malformed_lines": len(malformed),
        "empty_review_filtered": len(raw) - n,
        "users": len(users),
        "items": len(items),
        "ratings": n,
        "density": n / (len(users) * len(items)) if users and items else 0.0,
        "words_per_review": float(np.mean(words_per_review)) if n else 0.0,
        "words_per_user": float(np.mean(list(per_user.values()))) if per_user else 0.0,
        "words_per_item": float(np.mean(list(per_item.values()))) if per_item else 0.0,
        "vocab_size": len(vocab),
        "doc_len": dataset.doc_len,
        "empty_user_documents": len(dataset.empty_users),
        "empty_item_documents": len(dataset.empty_items),
        "split": {k: label_counts.get(k, 0) for k in ("train", "val", "test")},
        "seed": seed,
    }


def preprocess(path, seed=0, vocab_size=VOCAB_SIZE, doc_len=DOC_LEN, df_max=DF_MAX):
    """Run the whole pipeline on one review dump; returns ``(dataset, stats)``."""
    if vocab_size < 1:
        raise ConfigError("vocab_size must be positive")
    if not 0.0 < df_max <= 1.0:
        raise ConfigError("df_max must lie in (0, 1]")
    raw, malformed = read_interactions(path)
    if not raw:
        raise DataError(f"{path}: no usable records")
    vocab = build_vocabulary(raw, vocab_size, df_max)
    filtered = filter_empty(raw, vocab)
    labels = split(filtered, seed)
    dataset = assemble_dataset(filtered, vocab, labels, doc_len)
    stats = corpus_stats(raw, malformed, filtered, labels, vocab, dataset, seed)
    dataset.stats = stats
    return dataset, stats


# ---------------------------------------------------------------------------
# on-disk corpus directory
# ---------------------------------------------------------------------------

DOCS_MAGIC = b"CARLDOCS"


def save_corpus(dataset, out_dir, stats=None):
    """Write vocab.txt, documents.bin, splits.csv and stats.json under ``out_dir``.

    documents.bin is ``DOCS_MAGIC``, a little-endian uint64 header length, a
    JSON header with the owner-id tables, then one row of ``doc_len``
    little-endian int32 token ids per user followed by one per item.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "vocab.txt").write_text("".join(w + "\n" for w in dataset.vocab.words), encoding="utf-8")

    header = {
        "doc_len": int(dataset.doc_len),
        "pad": PAD,
        "users": list(dataset.user_ids),
        "items": list(dataset.item_ids),
        "empty_users": list(dataset.empty_users),
        "empty_items": list(dataset.empty_items),
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(out / "documents.bin", "wb") as fh:
        fh.write(DOCS_MAGIC)
        fh.write(len(head).to_bytes(8, "little"))
        fh.write(head)
        fh.write(np.ascontiguousarray(dataset.user_docs, dtype="<i4").tobytes())
        fh.write(np.ascontiguousarray(dataset.item_docs, dtype="<i4").tobytes())

    with open(out / "splits.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["user_id", "item_id", "rating", "split"])
        for label in ("train", "val", "test"):
            pairs = dataset.split_of(label)
            for u, i, r in zip(pairs.users, pairs.items, pairs.ratings):
                writer.writerow([dataset.user_ids[u], dataset.item_ids[i], repr(float(r)), label])

    if stats is None:
        stats = getattr(dataset, "stats", None)
    if stats is not None:
        (out / "stats.json").write_text(json.dumps(stats, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return out


def load_corpus(corpus_dir):
    base = Path(corpus_dir)
    for name in ("vocab.txt", "documents.bin", "splits.csv"):
        if not (base / name).exists():
            raise DataError(f"corpus directory {base} is missing {name}")
    words = (base / "vocab.txt").read_text(encoding="utf-8").split("\n")
    vocab = Vocabulary([w for w in words if w])

    blob = (base / "documents.bin").read_bytes()
    if blob[:8] != DOCS_MAGIC:
        raise DataError(f"{base / 'documents.bin'}: bad magic")
    hlen = int.from_bytes(blob[8:16], "little")
    header = json.loads(blob[16 : 16 + hlen].decode("utf-8"))
    doc_len = header["doc_len"]
    n_u, n_i = len(header["users"]), len(header["items"])
    tokens = np.frombuffer(blob[16 + hlen :], dtype="<i4")
    if tokens.size != (n_u + n_i) * doc_len:
        raise DataError(f"{base / 'documents.bin'}: expected {(n_u + n_i) * doc_len} ids, found {tokens.size}")
    tokens = tokens.astype(np.int32).reshape(n_u + n_i, doc_len)
    if tokens.size and (tokens.min() < 0 or tokens.max() > len(vocab)):
        raise DataError("documents reference token ids outside the vocabulary")

    rows = []
    with open(base / "splits.csv", newline="", encoding="utf-8") as fh:
        for rec in csv.DictReader(fh):
            rows.append((rec["user_id"], rec["item_id"], float(rec["rating"]), rec["split"]))
    dataset = _dataset_from_rows(
        vocab, header["users"], header["items"], tokens[:n_u].copy(), tokens[n_u:].copy(),
        rows, header["empty_users"], header["empty_items"],
    )
    stats_path = base / "stats.json"
    dataset.stats = json.loads(stats_path.read_text()) if stats_path.exists() else None
    return dataset
