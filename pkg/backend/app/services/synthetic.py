"""
Planted-cluster dataset generator for desk-scale validation.

Handles:
- Users and apps partitioned into clusters with in/out interaction rates
- Cluster-specific categories, providers and readme vocabularies
- Deterministic output for a given seed
"""

from datetime import date, timedelta
from typing import List, Tuple

import numpy as np
from loguru import logger

from app.config import SyntheticSection
from app.exceptions import ConfigError
from app.models.schemas import AppRecord, Dataset, RatingRecord


CATEGORIES = ["Games", "Finance", "Health", "Education", "Travel", "Music", "Photography", "Shopping"]
CONTENT_RATINGS = ["Everyone", "Teen", "Mature 17+"]
ELEMENTS = ["Users Interact", "Shares Location", "Digital Purchases", "Unrestricted Internet"]
PROVIDERS_PER_CLUSTER = 3

_LETTERS = "bcdfghjklmnpqrstvwxz"
_VOWELS = "aeiou"


def pseudo_word(group: int, index: int) -> str:
    """Distinct lowercase token for (group, index), stable under stemming"""
    def syllables(n: int) -> str:
        out = ""
        while True:
            n, r = divmod(n, len(_LETTERS) * len(_VOWELS))
            out += _LETTERS[r // len(_VOWELS)] + _VOWELS[r % len(_VOWELS)]
            if n == 0:
                return out
            n -= 1
    return f"{syllables(group)}q{syllables(index)}k"


def expected_interactions(config: SyntheticSection) -> Tuple[float, float]:
    """Mean and standard deviation of the total interaction count"""
    users = config.clusters * config.users_per_cluster
    inside = config.apps_per_cluster
    outside = config.apps_per_cluster * (config.clusters - 1)
    mean = users * (inside * config.p_in + outside * config.p_out)
    var = users * (inside * config.p_in * (1 - config.p_in) + outside * config.p_out * (1 - config.p_out))
    return mean, float(np.sqrt(var))


def _readme(rng: np.random.Generator, vocab: List[str], shared: List[str], length: int) -> str:
    words = []
    for _ in range(length):
        if shared and rng.random() < 0.2:
            words.append(shared[rng.integers(0, len(shared))])
        else:
            words.append(vocab[rng.integers(0, len(vocab))])
    return " ".join(words)


def generate_synthetic(config: SyntheticSection, seed: int) -> Dataset:
    """
    Build a dataset whose users in cluster c interact with cluster-c apps
    with probability p_in and with every other app with probability p_out.

    Args:
        config: generator settings
        seed: RNG seed

    Returns:
        Dataset with apps sorted by id and ratings sorted by (user, app)
    """
    if config.p_out >= config.p_in:
        raise ConfigError(f"p_out ({config.p_out}) must be smaller than p_in ({config.p_in})")

    rng = np.random.default_rng(seed)
    shared = [pseudo_word(config.clusters, j) for j in range(config.shared_vocab)]
    base_day = date(2019, 1, 1)

    apps: List[AppRecord] = []
    app_cluster: List[int] = []
    for c in range(config.clusters):
        vocab = [pseudo_word(c, j) for j in range(config.vocab_per_cluster)]
        category = f"{CATEGORIES[c % len(CATEGORIES)]}{c // len(CATEGORIES) or ''}"
        for j in range(config.apps_per_cluster):
            size = "VARIES" if rng.random() < 0.05 else int(rng.integers(1, 200) * 2 ** 20)
            n_elements = int(rng.integers(0, 3))
            elements = sorted(rng.choice(len(ELEMENTS), size=n_elements, replace=False).tolist())
            apps.append(AppRecord(
                app_id=f"app{c:02d}{j:04d}",
                category=category,
                provider=f"provider{c:02d}{int(rng.integers(0, PROVIDERS_PER_CLUSTER))}",
                content_rating=CONTENT_RATINGS[int(rng.integers(0, len(CONTENT_RATINGS)))],
                has_ads=bool(rng.random() < 0.5),
                is_free=bool(rng.random() < 0.8),
                interactive_elements=tuple(ELEMENTS[e] for e in elements),
                avg_rating=round(float(rng.uniform(3.0, 5.0)), 1),
                install_count=int(10 ** int(rng.integers(2, 8)) * int(rng.integers(1, 10))),
                updated_date=base_day + timedelta(days=int(rng.integers(0, 3 * 365))),
                size_bytes=size,
                readme_text=_readme(rng, vocab, shared, config.words_per_readme),
            ))
            app_cluster.append(c)

    app_cluster_arr = np.array(app_cluster)
    ratings: List[RatingRecord] = []
    for c in range(config.clusters):
        probs = np.where(app_cluster_arr == c, config.p_in, config.p_out)
        for i in range(config.users_per_cluster):
            user_id = f"user{c:02d}{i:04d}"
            hits = np.flatnonzero(rng.random(len(apps)) < probs)
            stars = rng.integers(1, 6, size=len(hits))
            for a, s in zip(hits.tolist(), stars.tolist()):
                ratings.append(RatingRecord(user_id=user_id, app_id=apps[a].app_id, rating=s / 5))

    logger.info(
        f"Generated synthetic dataset: {config.clusters} clusters, {len(apps)} apps, "
        f"{config.clusters * config.users_per_cluster} users, {len(ratings)} ratings"
    )
    return Dataset(apps=apps, ratings=ratings)
