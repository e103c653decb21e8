"""ID-to-representation encoders: embedding table and linear graph propagation.

Ranking scores use raw dot products, so normalization is NOT applied here;
it lives in the loss/metric path (normalize_rows).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .data import InteractionSet
from .errors import DataError, DegenerateEmbedding
from .rng import substream


@dataclass
class EmbeddingTable:
    """Dense |U| x d and |I| x d parameter matrices."""

    user_emb: np.ndarray
    item_emb: np.ndarray

    @property
    def d(self) -> int:
        return int(self.user_emb.shape[1])

    @property
    def n_users(self) -> int:
        return int(self.user_emb.shape[0])

    @property
    def n_items(self) -> int:
        return int(self.item_emb.shape[0])

    def copy(self) -> "EmbeddingTable":
        return EmbeddingTable(self.user_emb.copy(), self.item_emb.copy())


def init_xavier(n_users: int, n_items: int, d: int, seed: int) -> EmbeddingTable:
    """Xavier-uniform init: entries ~ U[-a, a], a = sqrt(6 / (n_rows + d)) per matrix."""
    if d < 1:
        raise ValueError(f"embedding dimension must be >= 1, got {d}")
    rng = substream(seed, "init")
    a_user = np.sqrt(6.0 / (n_users + d))
    a_item = np.sqrt(6.0 / (n_items + d))
    user = rng.uniform(-a_user, a_user, size=(n_users, d))
    item = rng.uniform(-a_item, a_item, size=(n_items, d))
    return EmbeddingTable(user, item)


def _check_ids(ids: np.ndarray, n: int, what: str) -> np.ndarray:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= n):
        raise IndexError(f"{what} ID out of range [0, {n})")
    return ids


def forward_mf(
    table: EmbeddingTable, users: np.ndarray, items: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Plain table lookup: returns the raw embedding rows."""
    users = _check_ids(users, table.n_users, "user")
    items = _check_ids(items, table.n_items, "item")
    return table.user_emb[users], table.item_emb[items]


@dataclass
class GraphPropagator:
    """Linear propagation over the symmetrically normalized bipartite graph.

    adjacency is (|U|+|I|) square, rows/cols users first; the entry for a
    training edge (u, i) is 1/sqrt(p(u) * p(i)) with p(.) the training
    degree. No self-loops and no feature transforms; layer outputs are
    combined by their mean.
    """

    base: EmbeddingTable
    n_layers: int
    adjacency: sp.csr_matrix

    @classmethod
    def build(
        cls, base: EmbeddingTable, interactions: InteractionSet, n_layers: int
    ) -> "GraphPropagator":
        if n_layers < 0:
            raise ValueError(f"n_layers must be >= 0, got {n_layers}")
        if interactions.n_users != base.n_users or interactions.n_items != base.n_items:
            raise DataError("interaction set and embedding table disagree on entity counts")
        n = interactions.n_users + interactions.n_items
        u = interactions.users
        i = interactions.items + interactions.n_users
        w = 1.0 / np.sqrt(
            interactions.user_pop[interactions.users]
            * interactions.item_pop[interactions.items]
        )
        rows = np.concatenate([u, i])
        cols = np.concatenate([i, u])
        vals = np.concatenate([w, w])
        adj = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
        return cls(base=base, n_layers=n_layers, adjacency=adj)

    def _layer_mean(self, x: np.ndarray) -> np.ndarray:
        acc = x.copy()
        cur = x
        for _ in range(self.n_layers):
            cur = self.adjacency @ cur
            acc += cur
        return acc / (self.n_layers + 1)

    def propagate(self) -> EmbeddingTable:
        """Materialize the propagated representations for every user and item."""
        stacked = np.vstack([self.base.user_emb, self.base.item_emb])
        out = self._layer_mean(stacked)
        nu = self.base.n_users
        return EmbeddingTable(out[:nu], out[nu:])

    def backward(
        self, grad_user_out: np.ndarray, grad_item_out: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray]:
        """Pull output-side gradients back onto the base embeddings.

        The adjacency is symmetric, so the transpose pass reuses the same
        layer-mean propagation.
        """
        stacked = np.vstack([grad_user_out, grad_item_out])
        g = self._layer_mean(stacked)
        nu = self.base.n_users
        return g[:nu], g[nu:]


def forward_lgcn(
    g: GraphPropagator, users: np.ndarray, items: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Propagated representations for the requested IDs."""
    users = _check_ids(users, g.base.n_users, "user")
    items = _check_ids(items, g.base.n_items, "item")
    out = g.propagate()
    return out.user_emb[users], out.item_emb[items]


def normalize_rows(reps: np.ndarray) -> np.ndarray:
    """Scale each row to unit Euclidean norm.

    Raises DegenerateEmbedding on zero or non-finite row norms rather than
    epsilon-fudging: those only arise from divergence and must not be masked.
    """
    reps = np.asarray(reps, dtype=np.float64)
    norms = np.linalg.norm(reps, axis=-1, keepdims=True)
    if not np.all(np.isfinite(norms)) or np.any(norms == 0.0):
        raise DegenerateEmbedding("row with zero or non-finite norm")
    return reps / norms


def write_embeddings(table: EmbeddingTable, path: str | Path) -> None:
    """Dump as text: header 'n_users n_items d', then one row per entity
    (users first), space-separated at 17 significant digits (lossless)."""
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write(f"{table.n_users} {table.n_items} {table.d}\n")
        for mat in (table.user_emb, table.item_emb):
            for row in mat:
                fh.write(" ".join(f"{v:.17g}" for v in row) + "\n")


def read_embeddings(path: str | Path) -> EmbeddingTable:
    """Parse a write_embeddings() dump; raises DataError on malformed content."""
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 3:
            raise DataError(f"{path}: malformed header, expected 'n_users n_items d'")
        try:
            n_users, n_items, d = (int(x) for x in header)
        except ValueError as exc:
            raise DataError(f"{path}: malformed header ({exc})") from exc
        if n_users < 1 or n_items < 1 or d < 1:
            raise DataError(f"{path}: non-positive counts in header")
        try:
            flat = np.loadtxt(fh, dtype=np.float64, ndmin=2)
        except ValueError as exc:
            raise DataError(f"{path}: malformed embedding rows ({exc})") from exc
    if flat.shape != (n_users + n_items, d):
        raise DataError(
            f"{path}: expected {n_users + n_items} rows of width {d}, got {flat.shape}"
        )
    return EmbeddingTable(flat[:n_users].copy(), flat[n_users:].copy())
