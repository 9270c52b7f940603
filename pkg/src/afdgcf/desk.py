"""Synthetic MovieLens-100K-sized interaction log for desk-scale experiments.

Users and items get latent taste vectors; items also get a heavy-tailed
popularity. Each user draws an activity level (at least 20, like the real
log) and picks that many distinct items by Gumbel-top-k over
``taste . item / sqrt(k) * sharpness + log popularity``. Ratings follow the
affinity; timestamps are arbitrary but deterministic.
"""

from __future__ import annotations

import numpy as np

from .dataset import RawInteractions, Record
from .rng import substream

DESK_USERS = 943
DESK_ITEMS = 1682
DESK_INTERACTIONS = 100_000
DESK_MIN_INTER = 15


def generate(seed: int = 0, num_users: int = DESK_USERS, num_items: int = DESK_ITEMS,
             num_interactions: int = DESK_INTERACTIONS, latent_dim: int = 16,
             sharpness: float = 2.0, min_per_user: int = 20) -> RawInteractions:
    rng = substream(seed, "synth")
    users = rng.normal(size=(num_users, latent_dim))
    items = rng.normal(size=(num_items, latent_dim))
    ranks = rng.permutation(num_items) + 1
    log_pop = -0.9 * np.log(ranks)

    activity = rng.lognormal(mean=0.0, sigma=0.9, size=num_users)
    extra = num_interactions - min_per_user * num_users
    counts = min_per_user + np.floor(activity / activity.sum() * extra).astype(int)
    counts = np.minimum(counts, num_items // 2)

    logits = sharpness * (users @ items.T) / np.sqrt(latent_dim) + log_pop
    gumbel = rng.gumbel(size=logits.shape)
    noisy = logits + gumbel
    records = []
    ts = 874_724_710
    for u in range(num_users):
        chosen = np.argpartition(-noisy[u], counts[u])[: counts[u]]
        chosen = chosen[np.argsort(-noisy[u, chosen], kind="stable")]
        aff = logits[u, chosen]
        z = (aff - aff.mean()) / (aff.std() + 1e-12)
        ratings = np.clip(np.rint(3.5 + 1.1 * z + rng.normal(0, 0.5, size=len(chosen))), 1, 5)
        for it, r in zip(chosen.tolist(), ratings.tolist()):
            ts += int(rng.integers(1, 200))
            records.append(Record(f"u{u + 1}", f"i{it + 1}", ts, float(r)))
    return RawInteractions(records)


def write_tsv(raw: RawInteractions, path, header: bool = True) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        if header:
            fh.write("user_id\titem_id\trating\ttimestamp\n")
        for r in raw.records:
            rating = "" if r.rating is None else f"{r.rating:g}"
            fh.write(f"{r.user}\t{r.item}\t{rating}\t{r.timestamp}\n")
