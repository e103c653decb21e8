"""Dataset ingestion, k-core filtering, splitting, and batching."""

from collections import Counter

import numpy as np
import pytest

from directau import (
    InteractionSet,
    RawInteraction,
    iter_batches,
    load_interactions,
    preprocess,
    split,
)
from directau.data import read_id_pairs, write_id_map, write_interactions
from directau.errors import (
    DataError,
    EmptyAfterFiltering,
    EmptyInput,
    MalformedLine,
)


def raw(*pairs):
    return [RawInteraction(u, i) for u, i in pairs]


class TestLoadInteractions:
    def test_basic_tab_parse(self, tmp_path):
        p = tmp_path / "a.txt"
        p.write_text("u1\ti1\nu1\ti2\n")
        rows = load_interactions(p)
        assert [(r.user_key, r.item_key) for r in rows] == [("u1", "i1"), ("u1", "i2")]

    def test_duplicates_survive_parsing(self, tmp_path):
        p = tmp_path / "a.txt"
        p.write_text("u1\ti1\nu1\ti1\n")
        assert len(load_interactions(p)) == 2

    def test_empty_file_raises(self, tmp_path):
        p = tmp_path / "a.txt"
        p.write_text("")
        with pytest.raises(EmptyInput):
            load_interactions(p)

    def test_comments_and_blank_lines_skipped(self, tmp_path):
        p = tmp_path / "a.txt"
        p.write_text("# header\n\nu1\ti1\n   \nu2\ti2\n")
        assert len(load_interactions(p)) == 2

    def test_malformed_line_reports_number(self, tmp_path):
        p = tmp_path / "a.txt"
        p.write_text("u1\ti1\nonlyonefield\n")
        with pytest.raises(MalformedLine) as exc:
            load_interactions(p)
        assert exc.value.lineno == 2

    def test_comma_delimiter_with_extra_columns(self, tmp_path):
        p = tmp_path / "a.csv"
        p.write_text("u1,i1,5.0,1234\nu2,i2,3.0,5678\n")
        rows = load_interactions(p, delimiter=",")
        assert rows[0].user_key == "u1" and rows[0].item_key == "i1"
        # non-integer third column is not a timestamp; ignored
        assert rows[0].timestamp is None

    def test_integer_timestamp_kept(self, tmp_path):
        p = tmp_path / "a.txt"
        p.write_text("u1\ti1\t99\n")
        assert load_interactions(p)[0].timestamp == 99

    def test_missing_file(self, tmp_path):
        with pytest.raises(OSError):
            load_interactions(tmp_path / "nope.txt")


def brute_force_k_core(pairs, k):
    """Oracle: iteratively delete under-connected users/items until stable."""
    pairs = list(dict.fromkeys(pairs))
    while True:
        uc = Counter(u for u, _ in pairs)
        ic = Counter(i for _, i in pairs)
        keep = [(u, i) for u, i in pairs if uc[u] >= k and ic[i] >= k]
        if len(keep) == len(pairs):
            return pairs
        pairs = keep


class TestPreprocess:
    def test_already_k_core_retained(self):
        # 6 users x 5 items, every item appears 6 times
        pairs = [(f"u{u}", f"i{i}") for u in range(6) for i in range(5)]
        out = preprocess(raw(*pairs), k_core=5)
        assert out.n_users == 6 and out.n_items == 5 and out.n_pairs == 30

    def test_iterative_removal_matches_brute_force(self):
        # u_weak has 4 interactions; dropping it pushes i9 under the threshold
        pairs = [(f"u{u}", f"i{i}") for u in range(5) for i in range(5)]
        pairs += [("u_weak", "i0"), ("u_weak", "i1"), ("u_weak", "i2"), ("u_weak", "i9")]
        pairs += [("u0", "i9"), ("u1", "i9"), ("u2", "i9"), ("u3", "i9")]
        expected = brute_force_k_core(pairs, 5)
        out = preprocess(raw(*pairs), k_core=5)
        back = [(out.user_keys[u], out.item_keys[i]) for u, i in out.pairs]
        assert back == expected
        assert "u_weak" not in out.user_keys and "i9" not in out.item_keys

    @pytest.mark.parametrize("trial", range(20))
    def test_random_instances_match_brute_force(self, trial):
        rng = np.random.default_rng(trial)
        pairs = [
            (f"u{rng.integers(0, 5)}", f"i{rng.integers(0, 5)}")
            for _ in range(int(rng.integers(8, 21)))
        ]
        k = int(rng.integers(1, 4))
        expected = brute_force_k_core(pairs, k)
        if not expected:
            with pytest.raises(EmptyAfterFiltering):
                preprocess(raw(*pairs), k_core=k)
            return
        out = preprocess(raw(*pairs), k_core=k)
        back = [(out.user_keys[u], out.item_keys[i]) for u, i in out.pairs]
        assert back == expected

    def test_empty_fixpoint_raises(self):
        with pytest.raises(EmptyAfterFiltering):
            preprocess(raw(("u1", "i1"), ("u2", "i2")), k_core=5)

    def test_min_popularity_after_filtering(self):
        rng = np.random.default_rng(5)
        pairs = list({(f"u{rng.integers(0, 12)}", f"i{rng.integers(0, 12)}") for _ in range(120)})
        out = preprocess(raw(*pairs), k_core=3)
        assert out.user_pop.min() >= 3 and out.item_pop.min() >= 3

    def test_dedup_keeps_first_and_first_seen_ids(self):
        pairs = [("b", "y"), ("a", "x"), ("b", "y"), ("a", "y"), ("b", "x"), ("a", "x")]
        out = preprocess(raw(*pairs), k_core=1)
        assert out.user_keys == ("b", "a")
        assert out.item_keys == ("y", "x")
        assert out.n_pairs == 4

    def test_idempotent(self):
        rng = np.random.default_rng(9)
        pairs = [(f"u{rng.integers(0, 8)}", f"i{rng.integers(0, 8)}") for _ in range(80)]
        once = preprocess(raw(*pairs), k_core=3)
        again = preprocess(
            [RawInteraction(str(u), str(i)) for u, i in once.pairs], k_core=3
        )
        assert np.array_equal(once.users, again.users)
        assert np.array_equal(once.items, again.items)
        assert (once.n_users, once.n_items) == (again.n_users, again.n_items)


class TestSplit:
    def make(self, counts, seed=0):
        users, items = [], []
        nxt = 0
        for u, c in enumerate(counts):
            for _ in range(c):
                users.append(u)
                items.append(nxt)
                nxt += 1
        return InteractionSet.from_pairs(users, items)

    def test_user_with_10_gets_8_1_1(self):
        data = self.make([10])
        ds = split(data, seed=1)
        assert ds.train.n_pairs == 8 and len(ds.validation) == 1 and len(ds.test) == 1

    def test_user_with_5_gets_5_0_0(self):
        data = self.make([5])
        ds = split(data, seed=1)
        assert ds.train.n_pairs == 5 and ds.validation.size == 0 and ds.test.size == 0

    def test_determinism(self, two_cluster):
        a = split(two_cluster, seed=7)
        b = split(two_cluster, seed=7)
        assert np.array_equal(a.train.users, b.train.users)
        assert np.array_equal(a.train.items, b.train.items)
        assert np.array_equal(a.validation, b.validation)
        assert np.array_equal(a.test, b.test)

    def test_different_seed_differs(self, two_cluster):
        a = split(two_cluster, seed=7)
        b = split(two_cluster, seed=8)
        assert not (
            np.array_equal(a.validation, b.validation)
            and np.array_equal(a.test, b.test)
        )

    def test_partition_property(self):
        rng = np.random.default_rng(3)
        counts = [int(rng.integers(1, 15)) for _ in range(10)]
        data = self.make(counts)
        ds = split(data, seed=4)
        src = set(data.pairs)
        tr = set(ds.train.pairs)
        va = {tuple(p) for p in ds.validation.tolist()}
        te = {tuple(p) for p in ds.test.tolist()}
        assert tr | va | te == src
        assert len(tr) + len(va) + len(te) == len(src)
        # per-user floor rule
        for u, c in enumerate(counts):
            n_val = sum(1 for p in va if p[0] == u)
            n_test = sum(1 for p in te if p[0] == u)
            assert n_val == c // 10 and n_test == c // 10
        assert ds.train.user_pop.min() >= 1

    def test_bad_ratios(self, two_cluster):
        with pytest.raises(ValueError):
            split(two_cluster, ratios=(0.8, 0.1, 0.2), seed=0)


class TestIterBatches:
    def test_partition_sizes(self):
        data = InteractionSet.from_pairs(list(range(10)), [0] * 10, 10, 1)
        tiny = split(data, ratios=(1.0, 0.0, 0.0), seed=0)
        sizes = [len(b) for b in iter_batches(tiny, 4, seed=0, epoch=1)]
        assert sizes == [4, 4, 2]

    def test_single_batch_when_outsized(self, two_cluster):
        ds = split(two_cluster, seed=0)
        batches = list(iter_batches(ds, 10**6, seed=0, epoch=1))
        assert len(batches) == 1 and len(batches[0]) == ds.train.n_pairs

    def test_determinism_and_epoch_variation(self, two_cluster):
        ds = split(two_cluster, seed=0)
        a = [b.users for b in iter_batches(ds, 64, seed=5, epoch=2)]
        b = [b.users for b in iter_batches(ds, 64, seed=5, epoch=2)]
        c = [b.users for b in iter_batches(ds, 64, seed=5, epoch=3)]
        assert all(np.array_equal(x, y) for x, y in zip(a, b))
        assert not all(np.array_equal(x, y) for x, y in zip(a, c))

    def test_union_covers_train_exactly_once(self, two_cluster):
        ds = split(two_cluster, seed=0)
        got = Counter()
        for b in iter_batches(ds, 33, seed=1, epoch=4):
            got.update(zip(b.users.tolist(), b.items.tolist()))
        want = Counter(ds.train.pairs)
        assert got == want

    def test_bad_batch_size(self, two_cluster):
        ds = split(two_cluster, seed=0)
        with pytest.raises(ValueError):
            next(iter_batches(ds, 0, seed=0, epoch=1))


class TestSerialization:
    def test_interaction_roundtrip(self, tmp_path, two_cluster):
        p = tmp_path / "inter.txt"
        write_interactions(two_cluster, p)
        back = read_id_pairs(p)
        assert np.array_equal(back.users, two_cluster.users)
        assert np.array_equal(back.items, two_cluster.items)

    def test_id_map_format(self, tmp_path):
        p = tmp_path / "m.map"
        write_id_map(("alice", "bob"), p)
        assert p.read_text() == "alice\t0\nbob\t1\n"

    def test_read_rejects_duplicates(self, tmp_path):
        p = tmp_path / "dup.txt"
        p.write_text("0\t0\n0\t0\n")
        with pytest.raises(DataError):
            read_id_pairs(p)

    def test_read_rejects_non_integer(self, tmp_path):
        p = tmp_path / "bad.txt"
        p.write_text("a\tb\n")
        with pytest.raises(DataError):
            read_id_pairs(p)
