"""Seeded generator of Twitter-like class-imbalanced heterogeneous graphs.

Not a statistical twin of any real dataset: it reproduces the node/relation
schema, the class-imbalance ratio, and the premise that minority users
preferentially connect to each other (homophily), so the full pipeline can be
exercised offline at desk scale.
"""

from dataclasses import dataclass, field

import numpy as np

from .hetgraph import HeteroGraph, build_graph, cir
from .lexicon import DRUG_KEYWORD_LIST, NEUTRAL_KEYWORDS

_GREETINGS = ("Hey there!", "Welcome.", "Hi all.", "What's up?", "Hello!")

_MINORITY_PROFILES = (
    "Online dispensary, premium lab-tested {kw0} products, same day shipping. DM me for menu.",
    "Top-shelf {kw0} and {kw1} in stock, discreet delivery, order now.",
    "Vendor of {kw0}, menu on request, telegram in bio.",
    "Giveaway weekend! {kw0} discount for followers, DM to order.",
)
_MINORITY_TWEETS = (
    "DM me for menu. #{kw0} #{kw1}",
    "Fresh {kw0} stock just landed, same day shipping. #{kw0}",
    "!!!Giveaway!!! retweet to win a bag of {kw0}. #{kw1}",
    "Best {kw0} in town, discreet order and delivery. #{kw0} #{kw1}",
)
_NEUTRAL_PROFILES = (
    "Love {kw0} and {kw1}, posting daily.",
    "{kw0} enthusiast, weekend {kw1} fan.",
    "All about {kw0}. Occasionally {kw1}.",
)
_NEUTRAL_TWEETS = (
    "Great {kw0} session today! #{kw0}",
    "Anyone up for {kw0} this weekend? #{kw1}",
    "Vibe for everyday. How was your day? #{kw0}",
)


@dataclass(frozen=True)
class SynthConfig:
    n_users: int = 200
    minority_fraction: float = 0.119
    tweets_per_user: tuple = (1, 4)       # inclusive range
    homophily: float = 0.8                # in [0, 1]
    kappa: float = 4.0                    # homophily scaling ceiling
    contamination: float = 0.15           # benign profiles that mention a drug keyword
    stealth: float = 0.0                  # minority users with neutral-looking text
    follows_per_user: int = 3             # R1 density
    engagements_per_user: int = 2         # R3 density
    drug_pool: tuple = field(default=DRUG_KEYWORD_LIST)
    neutral_pool: tuple = field(default=NEUTRAL_KEYWORDS)
    seed: int = 0

    def __post_init__(self):
        if self.n_users < 1:
            raise ValueError("n_users must be positive")
        if not 0 < self.minority_fraction < 1:
            raise ValueError("minority_fraction must be in (0, 1)")
        if not 0.0 <= self.homophily <= 1.0:
            raise ValueError("homophily must be in [0, 1]")
        if not 0.0 <= self.stealth <= 1.0:
            raise ValueError("stealth must be in [0, 1]")
        if not self.drug_pool or not self.neutral_pool:
            raise ValueError("keyword pools must be non-empty")


def _keywords_in(text: str, vocab) -> list:
    import re

    tokens = set(re.findall(r"[a-z0-9]+", text.lower()))
    return sorted(t for t in tokens if t in vocab)


def generate(config: SynthConfig):
    """Returns (HeteroGraph, labels dict).  Deterministic per seed."""
    rng = np.random.default_rng(config.seed)
    n = config.n_users
    n_minority = round(n * config.minority_fraction)
    is_minority = np.zeros(n, dtype=bool)
    is_minority[rng.choice(n, size=n_minority, replace=False)] = True

    vocab = set(config.drug_pool) | set(config.neutral_pool)
    nodes, edges = [], []
    labels = {}
    user_ids, tweet_owner = [], []
    tweet_texts = []

    def pick(pool, k):
        return [pool[i] for i in rng.integers(0, len(pool), size=k)]

    for u in range(n):
        uid = f"u{u:05d}"
        user_ids.append(uid)
        minority = bool(is_minority[u])
        labels[uid] = "participant" if minority else "benign"
        # A stealthy participant posts neutral-looking content; only their
        # position in the graph gives them away.
        overt = minority and rng.random() >= config.stealth
        greeting = _GREETINGS[rng.integers(0, len(_GREETINGS))]
        if overt:
            kw = pick(config.drug_pool, 2)
            template = _MINORITY_PROFILES[rng.integers(0, len(_MINORITY_PROFILES))]
            profile = f"{greeting} {template.format(kw0=kw[0], kw1=kw[1])} #{kw[0]} #{kw[1]}"
        else:
            kw = pick(config.neutral_pool, 2)
            template = _NEUTRAL_PROFILES[rng.integers(0, len(_NEUTRAL_PROFILES))]
            profile = f"{greeting} {template.format(kw0=kw[0], kw1=kw[1])} #{kw[0]}"
            if rng.random() < config.contamination:
                extra = config.drug_pool[rng.integers(0, len(config.drug_pool))]
                profile += f" Curious about {extra}. #{extra}"
        nodes.append((uid, "user", f"Username: {uid}; User ID: @{uid}; User Profile: {profile}"))

        n_tweets = int(rng.integers(config.tweets_per_user[0], config.tweets_per_user[1] + 1))
        for k in range(n_tweets):
            tid = f"t{u:05d}_{k}"
            if overt:
                kws = pick(config.drug_pool, 2)
                text = _MINORITY_TWEETS[rng.integers(0, len(_MINORITY_TWEETS))].format(kw0=kws[0], kw1=kws[1])
            else:
                kws = pick(config.neutral_pool, 2)
                text = _NEUTRAL_TWEETS[rng.integers(0, len(_NEUTRAL_TWEETS))].format(kw0=kws[0], kw1=kws[1])
            nodes.append((tid, "tweet", text))
            edges.append((uid, tid, "R2"))
            tweet_owner.append(u)
            tweet_texts.append((tid, text))

    # keyword nodes for every vocabulary word that actually occurs
    used = set()
    for _, _, text in nodes:
        used.update(_keywords_in(text, vocab))
    kw_id = {w: f"k_{w}" for w in sorted(used)}
    for w, kid in kw_id.items():
        nodes.append((kid, "keyword", w))

    # R4 / R5 / R6 from text content
    for uid, text in [(nid, t) for nid, ntype, t in nodes if ntype == "user"]:
        for w in _keywords_in(text, vocab):
            edges.append((uid, kw_id[w], "R4"))
    import re as _re

    for tid, text in tweet_texts:
        tags = {h.lower() for h in _re.findall(r"#(\w+)", text)}
        for w in _keywords_in(text, vocab):
            edges.append((tid, kw_id[w], "R6" if w in tags else "R5"))

    # R1 follows with homophily bias: participant-participant weight is
    # scaled by (1 + homophily * kappa)
    boost = 1.0 + config.homophily * config.kappa
    seen_r1 = set()
    for u in range(n):
        weights = np.ones(n)
        if is_minority[u]:
            weights[is_minority] = boost
        weights[u] = 0.0
        weights /= weights.sum()
        partners = rng.choice(n, size=min(config.follows_per_user, n - 1),
                              replace=False, p=weights)
        for v in partners:
            key = (min(u, int(v)), max(u, int(v)))
            if key not in seen_r1:
                seen_r1.add(key)
                edges.append((user_ids[key[0]], user_ids[key[1]], "R1"))

    # R3 engagements, same author-class bias
    tweet_owner = np.array(tweet_owner)
    for u in range(n):
        w = np.ones(len(tweet_owner))
        w[tweet_owner == u] = 0.0
        if is_minority[u]:
            w[is_minority[tweet_owner]] *= boost
        total = w.sum()
        if total == 0:
            continue
        count = min(config.engagements_per_user, int((w > 0).sum()))
        chosen = rng.choice(len(tweet_owner), size=count, replace=False, p=w / total)
        for t in chosen:
            edges.append((user_ids[u], tweet_texts[int(t)][0], "R3"))

    g = build_graph(nodes, edges, labels)
    return g, labels


def stats(g: HeteroGraph, labels: dict = None) -> dict:
    """Summary mirroring the reference dataset's statistics table: per-type
    node counts, class counts, per-relation edge counts, and the CIR."""
    labels = labels if labels is not None else g.labels
    rel_counts = {f"R{i}": 0 for i in range(1, 7)}
    for _, _, rel in g.edges:
        rel_counts[rel] += 1
    class_counts = {"participant": 0, "benign": 0}
    for cls in labels.values():
        class_counts[cls] += 1
    out = {
        "nodes": {t: g.num(t) for t in ("user", "tweet", "keyword")},
        "classes": class_counts,
        "edges": rel_counts,
    }
    if class_counts["participant"] and class_counts["benign"]:
        out["cir"] = cir(g, "benign", "participant")
    else:
        out["cir"] = None
    return out
