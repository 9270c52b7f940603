"""Interaction log ingestion, k-core filtering, ID remapping and per-user splits.

Raw logs are tab separated: ``user<TAB>item[<TAB>rating[<TAB>timestamp]]``.
Ratings are kept on the raw records but ignored downstream; interactions are
binary.
"""

from __future__ import annotations

import json
import logging
import math
import os
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .errors import (
    DataError,
    EmptyAfterFilter,
    EmptyFile,
    InvalidRatios,
    MalformedLine,
)
from .rng import substream

log = logging.getLogger(__name__)

FORMATS = ("tsv_with_header", "tsv_bare")
MIN_USER_RECORDS = 3


class Record(NamedTuple):
    user: str
    item: str
    timestamp: int
    rating: Optional[float]


@dataclass
class RawInteractions:
    records: list

    def __len__(self):
        return len(self.records)

    def pairs(self):
        return [(r.user, r.item) for r in self.records]


def _parse_line(parts: list, line_no: int) -> Record:
    if len(parts) < 2:
        raise MalformedLine(line_no, f"expected >= 2 fields, got {len(parts)}")
    if len(parts) > 4:
        raise MalformedLine(line_no, f"expected <= 4 fields, got {len(parts)}")
    user, item = parts[0].strip(), parts[1].strip()
    if not user or not item:
        raise MalformedLine(line_no, "empty user or item token")
    rating = None
    timestamp = 0
    try:
        if len(parts) >= 3 and parts[2].strip():
            rating = float(parts[2])
        if len(parts) == 4 and parts[3].strip():
            timestamp = int(float(parts[3]))
    except ValueError as exc:
        raise MalformedLine(line_no, str(exc)) from None
    return Record(user, item, timestamp, rating)


def load_interactions(path, format: str = "tsv_bare") -> RawInteractions:
    """Parse a TSV interaction log.

    Duplicate (user, item) pairs collapse onto the record with the earliest
    timestamp (first occurrence wins ties). Blank lines are skipped. Line
    numbers in errors are 1-based and count the header.
    """
    if format not in FORMATS:
        raise ValueError(f"unknown format {format!r}; expected one of {FORMATS}")
    best: dict = {}
    order: list = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if line_no == 1 and format == "tsv_with_header":
                continue
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            rec = _parse_line(line.split("\t"), line_no)
            key = (rec.user, rec.item)
            prev = best.get(key)
            if prev is None:
                order.append(key)
                best[key] = rec
            elif rec.timestamp < prev.timestamp:
                best[key] = rec
    if not order:
        raise EmptyFile(f"no interaction records in {path}")
    return RawInteractions([best[k] for k in order])


def sniff_format(path) -> str:
    """Guess whether the first line is a header (non-numeric rating/timestamp)."""
    with open(path, "r", encoding="utf-8") as fh:
        first = fh.readline().rstrip("\r\n").split("\t")
    try:
        _parse_line(first, 1)
    except MalformedLine:
        return "tsv_with_header"
    return "tsv_bare"


def filter_k_core(raw: RawInteractions, min_user_inter: int, min_item_inter: int) -> RawInteractions:
    """Iteratively peel users/items below the thresholds until a fixed point."""
    if min_user_inter < 1 or min_item_inter < 1:
        raise ValueError("k-core thresholds must be >= 1")
    records = list(raw.records)
    while True:
        ucount = Counter(r.user for r in records)
        icount = Counter(r.item for r in records)
        kept = [
            r for r in records
            if ucount[r.user] >= min_user_inter and icount[r.item] >= min_item_inter
        ]
        if len(kept) == len(records):
            break
        records = kept
    if not records:
        raise EmptyAfterFilter(
            f"k-core filter ({min_user_inter}, {min_item_inter}) removed every record"
        )
    return RawInteractions(records)


@dataclass(frozen=True)
class InteractionDataset:
    num_users: int
    num_items: int
    train: np.ndarray  # (n, 2) int64 (user_index, item_index)
    valid: np.ndarray
    test: np.ndarray
    user_vocab: dict = field(repr=False)
    item_vocab: dict = field(repr=False)
    train_items_by_user: list = field(repr=False)

    @property
    def p(self) -> int:
        return self.num_users

    @property
    def q(self) -> int:
        return self.num_items

    def items_by_user(self, split: str) -> list:
        if split == "train":
            return self.train_items_by_user
        pairs = {"valid": self.valid, "test": self.test}[split]
        return _group_by_user(pairs, self.num_users)

    def stats(self) -> dict:
        n = len(self.train) + len(self.valid) + len(self.test)
        return {
            "num_users": self.num_users,
            "num_items": self.num_items,
            "num_interactions": n,
            "num_train": len(self.train),
            "num_valid": len(self.valid),
            "num_test": len(self.test),
            "density": n / (self.num_users * self.num_items),
        }


def _group_by_user(pairs: np.ndarray, num_users: int) -> list:
    groups = [[] for _ in range(num_users)]
    for u, i in pairs.tolist():
        groups[u].append(i)
    return [np.array(sorted(g), dtype=np.int64) for g in groups]


def split_sizes(n: int, ratios: Sequence[float]) -> tuple:
    """Per-user (train, valid, test) counts.

    Floors each share, hands the remainder to train then valid, and for
    n >= 3 guarantees at least one valid and one test item.
    """
    sizes = [int(math.floor(n * r + 1e-9)) for r in ratios]
    rem = n - sum(sizes)
    for k in range(rem):
        sizes[k % 2] += 1
    if n >= 3:
        for k in (1, 2):
            if sizes[k] == 0 and ratios[k] > 0:
                sizes[k] = 1
                sizes[0] -= 1
    return tuple(sizes)


def _check_ratios(ratios) -> None:
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise InvalidRatios(f"ratios must be three non-negative reals summing to 1, got {ratios}")


def build_dataset(raw: RawInteractions, ratios=(0.8, 0.1, 0.1), seed: int = 2020) -> InteractionDataset:
    """Random per-user split followed by dense re-indexing on the train split.

    Users with fewer than 3 records are dropped. Valid/test pairs whose item
    never reaches the train split are dropped too, so no index is orphaned.
    """
    ratios = tuple(float(r) for r in ratios)
    _check_ratios(ratios)
    by_user = defaultdict(list)
    for r in raw.records:
        by_user[r.user].append(r.item)

    rng = substream(seed, "split")
    splits = ([], [], [])
    dropped_users = 0
    for user in sorted(by_user):
        items = by_user[user]
        if len(items) < MIN_USER_RECORDS:
            dropped_users += 1
            continue
        perm = rng.permutation(len(items))
        n_tr, n_va, _ = split_sizes(len(items), ratios)
        bounds = (0, n_tr, n_tr + n_va, len(items))
        for k in range(3):
            for j in perm[bounds[k]:bounds[k + 1]]:
                splits[k].append((user, items[j]))
    if dropped_users:
        log.info("dropped %d users with fewer than %d interactions", dropped_users, MIN_USER_RECORDS)
    if not splits[0]:
        raise EmptyAfterFilter("no user has enough interactions to split")

    users = sorted({u for u, _ in splits[0]})
    items = sorted({i for _, i in splits[0]})
    user_vocab = {tok: k for k, tok in enumerate(users)}
    item_vocab = {tok: k for k, tok in enumerate(items)}

    def encode(pairs):
        out = [(user_vocab[u], item_vocab[i]) for u, i in pairs if i in item_vocab]
        arr = np.array(sorted(out), dtype=np.int64).reshape(-1, 2)
        return arr, len(pairs) - len(out)

    train, _ = encode(splits[0])
    valid, dv = encode(splits[1])
    test, dt = encode(splits[2])
    if dv or dt:
        log.info("dropped %d valid / %d test pairs with items unseen in train", dv, dt)
    return InteractionDataset(
        num_users=len(users),
        num_items=len(items),
        train=train,
        valid=valid,
        test=test,
        user_vocab=user_vocab,
        item_vocab=item_vocab,
        train_items_by_user=_group_by_user(train, len(users)),
    )


def _write_pairs(path, pairs: np.ndarray) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.writelines(f"{u}\t{i}\n" for u, i in pairs.tolist())


def _write_vocab(path, vocab: dict) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for tok, idx in sorted(vocab.items(), key=lambda kv: kv[1]):
            fh.write(f"{tok}\t{idx}\n")


def write_dataset(ds: InteractionDataset, out_dir) -> None:
    os.makedirs(out_dir, exist_ok=True)
    _write_vocab(os.path.join(out_dir, "mapping_users.tsv"), ds.user_vocab)
    _write_vocab(os.path.join(out_dir, "mapping_items.tsv"), ds.item_vocab)
    for name in ("train", "valid", "test"):
        _write_pairs(os.path.join(out_dir, f"{name}.tsv"), getattr(ds, name))
    with open(os.path.join(out_dir, "stats.json"), "w", encoding="ascii") as fh:
        json.dump(ds.stats(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _read_vocab(path) -> dict:
    vocab = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            tok, idx = line.rstrip("\n").split("\t")
            vocab[tok] = int(idx)
    return vocab


def _read_pairs(path) -> np.ndarray:
    arr = np.loadtxt(path, dtype=np.int64, delimiter="\t", ndmin=2)
    return arr.reshape(-1, 2)


def read_dataset(data_dir) -> InteractionDataset:
    """Load a directory written by :func:`write_dataset`."""
    if not os.path.isdir(data_dir):
        raise DataError(f"dataset directory not found: {data_dir}")
    try:
        user_vocab = _read_vocab(os.path.join(data_dir, "mapping_users.tsv"))
        item_vocab = _read_vocab(os.path.join(data_dir, "mapping_items.tsv"))
        train, valid, test = (
            _read_pairs(os.path.join(data_dir, f"{n}.tsv")) for n in ("train", "valid", "test")
        )
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read dataset at {data_dir}: {exc}") from exc
    p, q = len(user_vocab), len(item_vocab)
    for arr in (train, valid, test):
        if len(arr) and (arr.min() < 0 or arr[:, 0].max() >= p or arr[:, 1].max() >= q):
            raise DataError(f"index out of range in {data_dir}")
    return InteractionDataset(p, q, train, valid, test, user_vocab, item_vocab, _group_by_user(train, p))


def from_pairs(num_users: int, num_items: int, train, valid=(), test=()) -> InteractionDataset:
    """Build a dataset directly from index pairs (handy for tests and toy graphs)."""
    def arr(x):
        return np.array(sorted(map(tuple, x)), dtype=np.int64).reshape(-1, 2)

    tr, va, te = arr(train), arr(valid), arr(test)
    return InteractionDataset(
        num_users, num_items, tr, va, te,
        {str(u): u for u in range(num_users)},
        {str(i): i for i in range(num_items)},
        _group_by_user(tr, num_users),
    )
