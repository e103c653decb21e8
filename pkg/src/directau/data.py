"""Interaction ingestion, k-core preprocessing, per-user splits, batching.

File format: UTF-8 text, one interaction per line, `user<delim>item[<delim>...]`,
lines starting with '#' ignored. Columns past the second are ignored for
modeling (a third column is kept as a timestamp when it parses as an integer).
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from functools import cached_property
from math import floor
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import DataError, EmptyAfterFiltering, EmptyInput, MalformedLine
from .rng import substream


@dataclass(frozen=True)
class RawInteraction:
    """One parsed input line; keys are opaque strings."""

    user_key: str
    item_key: str
    timestamp: int | None = None


@dataclass
class InteractionSet:
    """Deduplicated (user, item) pairs over contiguous integer IDs.

    `user_pop[u]` / `item_pop[i]` count the interactions touching u / i.
    `user_keys` / `item_keys`, when present, map each ID back to the
    original key it was remapped from.
    """

    n_users: int
    n_items: int
    users: np.ndarray
    items: np.ndarray
    user_pop: np.ndarray
    item_pop: np.ndarray
    user_keys: tuple[str, ...] | None = None
    item_keys: tuple[str, ...] | None = None

    @classmethod
    def from_pairs(
        cls,
        users: Sequence[int] | np.ndarray,
        items: Sequence[int] | np.ndarray,
        n_users: int | None = None,
        n_items: int | None = None,
    ) -> "InteractionSet":
        users = np.asarray(users, dtype=np.int64)
        items = np.asarray(items, dtype=np.int64)
        if users.shape != items.shape or users.ndim != 1:
            raise ValueError("users and items must be 1-D arrays of equal length")
        if users.size == 0:
            raise DataError("interaction set has no pairs")
        if users.min() < 0 or items.min() < 0:
            raise DataError("negative IDs in interaction pairs")
        n_users = int(users.max()) + 1 if n_users is None else int(n_users)
        n_items = int(items.max()) + 1 if n_items is None else int(n_items)
        if users.max() >= n_users or items.max() >= n_items:
            raise DataError("interaction IDs exceed declared user/item counts")
        key = users * n_items + items
        if np.unique(key).size != key.size:
            raise DataError("duplicate (user, item) pairs")
        return cls(
            n_users=n_users,
            n_items=n_items,
            users=users,
            items=items,
            user_pop=np.bincount(users, minlength=n_users),
            item_pop=np.bincount(items, minlength=n_items),
        )

    @property
    def n_pairs(self) -> int:
        return int(self.users.size)

    @property
    def pairs(self) -> Iterator[tuple[int, int]]:
        return zip(self.users.tolist(), self.items.tolist())

    def validate(self) -> None:
        """Check the full invariants (every ID used, popularity sums)."""
        assert self.user_pop.sum() == self.n_pairs == self.item_pop.sum()
        if np.unique(self.users).size != self.n_users:
            raise DataError("some user IDs in [0, n_users) never appear")
        if np.unique(self.items).size != self.n_items:
            raise DataError("some item IDs in [0, n_items) never appear")


@dataclass
class PositiveBatch:
    """A mini-batch of aligned positive (user, item) pairs."""

    users: np.ndarray
    items: np.ndarray

    def __len__(self) -> int:
        return int(self.users.size)


@dataclass
class DatasetSplit:
    """Per-user train/validation/test partition of an InteractionSet.

    `validation` and `test` are (k, 2) arrays of held-out (user, item)
    pairs, ordered by their position in the source set.
    """

    train: InteractionSet
    validation: np.ndarray
    test: np.ndarray
    seed: int

    @cached_property
    def train_item_sets(self) -> list[frozenset[int]]:
        """Per-user frozensets of training items (masking, negative sampling)."""
        grouped = group_by_user(
            np.column_stack([self.train.users, self.train.items]), self.train.n_users
        )
        return [frozenset(g.tolist()) for g in grouped]


def group_by_user(pairs: np.ndarray, n_users: int) -> list[np.ndarray]:
    """Split a (k, 2) pair array into per-user item arrays (input order kept)."""
    out: list[np.ndarray] = [np.empty(0, dtype=np.int64) for _ in range(n_users)]
    if pairs.size == 0:
        return out
    order = np.argsort(pairs[:, 0], kind="stable")
    sorted_pairs = pairs[order]
    uniq, starts = np.unique(sorted_pairs[:, 0], return_index=True)
    bounds = np.append(starts, sorted_pairs.shape[0])
    for k, u in enumerate(uniq.tolist()):
        out[u] = sorted_pairs[bounds[k] : bounds[k + 1], 1].copy()
    return out


def load_interactions(path: str | Path, delimiter: str = "\t") -> list[RawInteraction]:
    """Parse an interaction file into RawInteractions, preserving file order.

    Duplicate lines survive here; deduplication belongs to preprocess().
    Raises MalformedLine with the offending line number, EmptyInput when
    nothing parses.
    """
    path = Path(path)
    rows: list[RawInteraction] = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            fields = [f.strip() for f in line.split(delimiter)]
            if len(fields) < 2:
                raise MalformedLine(str(path), lineno, f"expected >=2 fields, got {len(fields)}")
            user_key, item_key = fields[0], fields[1]
            if not user_key or not item_key:
                raise MalformedLine(str(path), lineno, "empty user or item field")
            ts: int | None = None
            if len(fields) >= 3:
                try:
                    ts = int(fields[2])
                except ValueError:
                    ts = None
            rows.append(RawInteraction(user_key, item_key, ts))
    if not rows:
        raise EmptyInput(f"no interactions in {path}")
    return rows


def preprocess(raw: Sequence[RawInteraction], k_core: int = 5) -> InteractionSet:
    """Dedup, k-core filter to a fixpoint, remap keys to contiguous IDs.

    Deduplication keeps the first occurrence. Filtering repeatedly removes
    users/items with fewer than k_core interactions until none remain (a
    single pass is not enough: dropping a user can push an item below the
    threshold). Surviving keys get IDs in first-seen input order.
    """
    if not raw:
        raise EmptyInput("no interactions to preprocess")
    if k_core < 1:
        raise ValueError(f"k_core must be >= 1, got {k_core}")

    seen: set[tuple[str, str]] = set()
    pairs: list[tuple[str, str]] = []
    for r in raw:
        key = (r.user_key, r.item_key)
        if key not in seen:
            seen.add(key)
            pairs.append(key)

    while True:
        user_cnt = Counter(u for u, _ in pairs)
        item_cnt = Counter(i for _, i in pairs)
        bad_users = {u for u, c in user_cnt.items() if c < k_core}
        bad_items = {i for i, c in item_cnt.items() if c < k_core}
        if not bad_users and not bad_items:
            break
        pairs = [(u, i) for u, i in pairs if u not in bad_users and i not in bad_items]
        if not pairs:
            raise EmptyAfterFiltering(f"no interactions survive {k_core}-core filtering")

    user_ids: dict[str, int] = {}
    item_ids: dict[str, int] = {}
    users = np.empty(len(pairs), dtype=np.int64)
    items = np.empty(len(pairs), dtype=np.int64)
    for k, (u, i) in enumerate(pairs):
        users[k] = user_ids.setdefault(u, len(user_ids))
        items[k] = item_ids.setdefault(i, len(item_ids))

    out = InteractionSet.from_pairs(users, items, len(user_ids), len(item_ids))
    out.user_keys = tuple(user_ids)
    out.item_keys = tuple(item_ids)
    out.validate()
    return out


def split(
    data: InteractionSet,
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1),
    seed: int = 0,
) -> DatasetSplit:
    """Per-user random partition into train/validation/test.

    For each user independently, interactions are shuffled with the seeded
    split substream; floor(val_ratio * p(u)) go to validation and
    floor(test_ratio * p(u)) to test, the remainder to train, so every user
    keeps at least one training interaction.
    """
    if len(ratios) != 3:
        raise ValueError("ratios must be (train, validation, test)")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got {sum(ratios)}")
    if any(r < 0 for r in ratios) or ratios[0] <= 0:
        raise ValueError("ratios must be non-negative with a positive train share")

    rng = substream(seed, "split")
    by_user_idx = group_by_user(
        np.column_stack([data.users, np.arange(data.n_pairs, dtype=np.int64)]),
        data.n_users,
    )
    train_idx: list[np.ndarray] = []
    val_idx: list[np.ndarray] = []
    test_idx: list[np.ndarray] = []
    for u in range(data.n_users):
        idx = by_user_idx[u]
        p = idx.size
        shuffled = idx[rng.permutation(p)]
        n_val = floor(ratios[1] * p)
        n_test = floor(ratios[2] * p)
        val_idx.append(shuffled[:n_val])
        test_idx.append(shuffled[n_val : n_val + n_test])
        train_idx.append(shuffled[n_val + n_test :])

    tr = np.sort(np.concatenate(train_idx))
    va = np.sort(np.concatenate(val_idx))
    te = np.sort(np.concatenate(test_idx))
    train_set = InteractionSet.from_pairs(
        data.users[tr], data.items[tr], data.n_users, data.n_items
    )
    active = data.user_pop > 0
    assert train_set.user_pop[active].min() >= 1, "split left a user without training pairs"
    return DatasetSplit(
        train=train_set,
        validation=np.column_stack([data.users[va], data.items[va]]),
        test=np.column_stack([data.users[te], data.items[te]]),
        seed=seed,
    )


def iter_batches(
    split: DatasetSplit, batch_size: int, seed: int, epoch: int
) -> Iterator[PositiveBatch]:
    """Deterministically shuffled positive-pair batches for one epoch.

    The shuffle substream depends on (seed, epoch); the last batch may be
    short. The union of batches is exactly the training set.
    """
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    train = split.train
    perm = substream(seed, "shuffle", epoch).permutation(train.n_pairs)
    for start in range(0, train.n_pairs, batch_size):
        sel = perm[start : start + batch_size]
        yield PositiveBatch(users=train.users[sel], items=train.items[sel])


def write_interactions(data: InteractionSet, path: str | Path, delimiter: str = "\t") -> None:
    """Serialize remapped integer-ID pairs, one per line, input order."""
    with Path(path).open("w", encoding="utf-8") as fh:
        for u, i in zip(data.users.tolist(), data.items.tolist()):
            fh.write(f"{u}{delimiter}{i}\n")


def write_id_map(keys: Sequence[str], path: str | Path, delimiter: str = "\t") -> None:
    """Two-column sidecar: original key, remapped contiguous ID."""
    with Path(path).open("w", encoding="utf-8") as fh:
        for new_id, key in enumerate(keys):
            fh.write(f"{key}{delimiter}{new_id}\n")


def read_id_pairs(
    path: str | Path,
    delimiter: str = "\t",
    n_users: int | None = None,
    n_items: int | None = None,
) -> InteractionSet:
    """Load a preprocessed integer-ID interaction file.

    IDs need not be contiguous (popularity is zero for unused IDs), but
    duplicates and out-of-range IDs are rejected.
    """
    raw = load_interactions(path, delimiter)
    try:
        users = [int(r.user_key) for r in raw]
        items = [int(r.item_key) for r in raw]
    except ValueError as exc:
        raise DataError(f"{path}: expected integer IDs ({exc})") from exc
    return InteractionSet.from_pairs(users, items, n_users, n_items)
