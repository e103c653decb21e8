"""Shared test utilities: oracles and synthetic data builders."""

import numpy as np

from directau import InteractionSet
from directau.encoders import normalize_rows


def finite_difference_gradients(fn, arrays, h=1e-5):
    """Central-difference gradients of a scalar function of several arrays."""
    grads = [np.zeros_like(a) for a in arrays]
    for ai, a in enumerate(arrays):
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = a[idx]
            a[idx] = orig + h
            fp = fn(*arrays)
            a[idx] = orig - h
            fm = fn(*arrays)
            a[idx] = orig
            grads[ai][idx] = (fp - fm) / (2.0 * h)
    return grads


def relative_gradient_error(analytic, numeric):
    """Max elementwise |a - n| / max(1, |n|)."""
    return float(np.max(np.abs(analytic - numeric) / np.maximum(1.0, np.abs(numeric))))


def two_cluster_dataset(n_users=200, n_items=100, per_user=10):
    """Two disjoint user/item blocks with learnable within-block structure.

    Inside each block, user j interacts with a contiguous window of
    per_user items starting at its offset (mod the block size); the second
    half of each block's users take stride-2 windows so no two users have
    identical histories. Held-out items are therefore predictable from the
    window overlap, unlike uniform within-block sampling.
    """
    users, items = [], []
    half_u, half_i = n_users // 2, n_items // 2
    for u in range(n_users):
        block = 0 if u < half_u else 1
        j = u - block * half_u
        base = block * half_i
        off = j % half_i
        stride = 2 if j >= half_i else 1
        for t in range(per_user):
            users.append(u)
            items.append(base + (off + stride * t) % half_i)
    return InteractionSet.from_pairs(users, items, n_users, n_items)


def naive_uniformity(table, inter):
    """Literal O(|R|^2) double loop over ordered pairs of distinct interactions."""
    un = normalize_rows(table.user_emb)
    im = normalize_rows(table.item_emb)
    n = inter.n_pairs
    sum_user = sum_item = 0.0
    for a in range(n):
        du = un[inter.users[a]] - un[inter.users]
        di = im[inter.items[a]] - im[inter.items]
        wu = np.exp(-2.0 * np.sum(du * du, axis=1))
        wi = np.exp(-2.0 * np.sum(di * di, axis=1))
        wu[a] = 0.0
        wi[a] = 0.0
        sum_user += wu.sum()
        sum_item += wi.sum()
    lu = float(np.log(sum_user / (n * (n - 1))))
    li = float(np.log(sum_item / (n * (n - 1))))
    return lu, li, (lu + li) / 2.0


def naive_alignment(table, inter):
    """Direct per-pair summation of squared normalized distances."""
    un = normalize_rows(table.user_emb)
    im = normalize_rows(table.item_emb)
    total = 0.0
    for u, i in zip(inter.users.tolist(), inter.items.tolist()):
        diff = un[u] - im[i]
        total += float(diff @ diff)
    return total / inter.n_pairs


def random_interaction_set(rng, max_users=8, max_items=9, max_pairs=60):
    """A random small InteractionSet with distinct pairs."""
    nu = int(rng.integers(2, max_users))
    ni = int(rng.integers(2, max_items))
    n_pairs = int(rng.integers(2, min(max_pairs, nu * ni) + 1))
    grid = [(u, i) for u in range(nu) for i in range(ni)]
    sel = rng.choice(len(grid), size=n_pairs, replace=False)
    users = np.array([grid[s][0] for s in sel], dtype=np.int64)
    items = np.array([grid[s][1] for s in sel], dtype=np.int64)
    return InteractionSet.from_pairs(users, items, nu, ni)
