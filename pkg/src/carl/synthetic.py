"""Small Amazon-schema review corpora with planted structure, for tests and smoke runs."""

import json
from pathlib import Path

import numpy as np

from .corpus import RawInteraction

_SENTIMENT = {
    1: ["awful", "broke", "junk", "refund", "useless"],
    2: ["flimsy", "disappointing", "cheap", "noisy", "weak"],
    3: ["okay", "average", "decent", "fine", "mediocre"],
    4: ["solid", "good", "reliable", "sturdy", "nice"],
    5: ["excellent", "superb", "perfect", "love", "fantastic"],
}


def synthetic_interactions(num_users=20, num_items=15, per_user=5, topics=4, words_per_topic=12,
                           review_len=12, seed=0):
    """Users and items share latent topics; ratings follow topic affinity plus noise.

    Each user rates ``per_user`` distinct items (every item is rated at least
    once). Review text mixes the item's topic words with sentiment words
    matching the rating, so the text genuinely carries signal.
    """
    rng = np.random.default_rng(seed)
    vocab = [[f"t{k}w{j}" for j in range(words_per_topic)] for k in range(topics)]
    user_topic = rng.dirichlet(np.ones(topics), size=num_users)
    item_topic = rng.integers(0, topics, size=num_items)
    item_quality = rng.normal(0, 0.7, size=num_items)
    user_bias = rng.normal(0, 0.4, size=num_users)

    chosen = [list(rng.choice(num_items, size=min(per_user, num_items), replace=False)) for _ in range(num_users)]
    rated = {i for items in chosen for i in items}
    for i in range(num_items):
        if i not in rated:
            chosen[i % num_users].append(i)

    records = []
    ts = 1_300_000_000
    for u in range(num_users):
        for i in chosen[u]:
            affinity = user_topic[u, item_topic[i]] * topics - 1.0
            score = 3.4 + 0.9 * affinity + item_quality[i] + user_bias[u] + rng.normal(0, 0.25)
            rating = float(np.clip(np.rint(score), 1, 5))
            words = list(rng.choice(vocab[item_topic[i]], size=review_len // 2))
            words += list(rng.choice(_SENTIMENT[int(rating)], size=review_len - review_len // 2))
            rng.shuffle(words)
            ts += int(rng.integers(1, 10_000))
            records.append(RawInteraction(f"U{u:04d}", f"I{i:04d}", rating, " ".join(words), ts))
    order = rng.permutation(len(records))
    return [records[k] for k in order]


def write_jsonl(records, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps({
                "reviewerID": r.user_id,
                "asin": r.item_id,
                "overall": r.rating,
                "reviewText": r.review_text,
                "unixReviewTime": r.timestamp,
            }) + "\n")
    return path
