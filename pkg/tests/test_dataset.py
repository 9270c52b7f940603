import numpy as np
import pytest

from afdgcf import dataset
from afdgcf.dataset import Record, RawInteractions
from afdgcf.errors import EmptyAfterFilter, EmptyFile, InvalidRatios, MalformedLine


def write(tmp_path, text, name="log.tsv"):
    path = tmp_path / name
    path.write_text(text)
    return path


def raw_from_pairs(pairs):
    return RawInteractions([Record(u, i, t, None) for t, (u, i) in enumerate(pairs)])


def test_load_three_lines(tmp_path):
    path = write(tmp_path, "u1\ti1\t5\t100\nu1\ti2\t3\t200\nu2\ti1\t4\t300\n")
    raw = dataset.load_interactions(path, "tsv_bare")
    assert len(raw) == 3
    assert raw.records[0] == Record("u1", "i1", 100, 5.0)


def test_duplicates_keep_earliest(tmp_path):
    path = write(tmp_path, "u1\ti1\t5\t100\nu1\ti1\t2\t50\n")
    raw = dataset.load_interactions(path, "tsv_bare")
    assert len(raw) == 1
    assert raw.records[0].timestamp == 50


def test_single_field_line_is_malformed(tmp_path):
    path = write(tmp_path, "u1\n")
    with pytest.raises(MalformedLine) as exc:
        dataset.load_interactions(path, "tsv_bare")
    assert exc.value.line_no == 1


def test_bad_timestamp_reports_line(tmp_path):
    path = write(tmp_path, "user\titem\trating\tts\nu1\ti1\t5\t100\nu2\ti2\t1\tnoon\n")
    with pytest.raises(MalformedLine) as exc:
        dataset.load_interactions(path, "tsv_with_header")
    assert exc.value.line_no == 3


def test_header_and_sniffing(tmp_path):
    path = write(tmp_path, "user_id\titem_id\trating\ttimestamp\nu1\ti1\t5\t1\n")
    assert dataset.sniff_format(path) == "tsv_with_header"
    assert len(dataset.load_interactions(path, "tsv_with_header")) == 1
    bare = write(tmp_path, "u1\ti1\n", "b.tsv")
    assert dataset.sniff_format(bare) == "tsv_bare"


def test_empty_file(tmp_path):
    with pytest.raises(EmptyFile):
        dataset.load_interactions(write(tmp_path, "\n\n"), "tsv_bare")


def test_k_core_noop_thresholds():
    raw = raw_from_pairs([("a", "x"), ("b", "y"), ("a", "y")])
    assert dataset.filter_k_core(raw, 1, 1).records == raw.records


def test_k_core_star_graph_empties():
    # items of degree 1 go first, which leaves the hub user with nothing
    raw = raw_from_pairs([("u", f"i{k}") for k in range(5)])
    with pytest.raises(EmptyAfterFilter):
        dataset.filter_k_core(raw, 2, 2)


def test_k_core_complete_bipartite_unchanged():
    raw = raw_from_pairs([(f"u{a}", f"i{b}") for a in range(3) for b in range(3)])
    out = dataset.filter_k_core(raw, 3, 3)
    assert len(out) == 9


def test_k_core_fixed_point(rng):
    pairs = {(f"u{rng.integers(0, 40)}", f"i{rng.integers(0, 30)}") for _ in range(400)}
    out = dataset.filter_k_core(raw_from_pairs(sorted(pairs)), 5, 4)
    from collections import Counter
    uc = Counter(r.user for r in out.records)
    ic = Counter(r.item for r in out.records)
    assert min(uc.values()) >= 5 and min(ic.values()) >= 4


@pytest.mark.parametrize("n,expected", [(10, (8, 1, 1)), (20, (16, 2, 2)), (3, (1, 1, 1)), (5, (3, 1, 1)), (13, (11, 1, 1))])
def test_split_sizes(n, expected):
    assert dataset.split_sizes(n, (0.8, 0.1, 0.1)) == expected


def test_ten_interactions_split_8_1_1():
    raw = raw_from_pairs([("u", f"i{k}") for k in range(10)] + [("v", f"i{k}") for k in range(10)])
    ds = dataset.build_dataset(raw, (0.8, 0.1, 0.1), seed=1)
    for u in range(ds.num_users):
        assert (ds.train[:, 0] == u).sum() + ((ds.valid[:, 0] == u).sum()) + (ds.test[:, 0] == u).sum() <= 10
    # with two identical users every item lands in train for at least one of them
    assert len(ds.train) == 16 or (len(ds.valid) + len(ds.test)) < 4


def test_invalid_ratios():
    raw = raw_from_pairs([("u", "i"), ("u", "j"), ("u", "k")])
    with pytest.raises(InvalidRatios):
        dataset.build_dataset(raw, (0.8, 0.1, 0.2), 0)
    with pytest.raises(InvalidRatios):
        dataset.build_dataset(raw, (1.1, -0.1, 0.0), 0)


def _dense_raw(rng, users=30, items=25, per_user=12):
    pairs = []
    for u in range(users):
        for i in rng.choice(items, size=per_user, replace=False):
            pairs.append((f"u{u}", f"i{i}"))
    return raw_from_pairs(pairs)


def test_build_dataset_invariants(rng):
    raw = _dense_raw(rng)
    ds = dataset.build_dataset(raw, (0.8, 0.1, 0.1), seed=7)
    p, q = ds.num_users, ds.num_items
    sets = [set(map(tuple, a.tolist())) for a in (ds.train, ds.valid, ds.test)]
    assert not (sets[0] & sets[1]) and not (sets[0] & sets[2]) and not (sets[1] & sets[2])
    for arr in (ds.train, ds.valid, ds.test):
        assert arr[:, 0].min() >= 0 and arr[:, 0].max() < p
        assert arr[:, 1].min() >= 0 and arr[:, 1].max() < q
    assert set(ds.train[:, 0].tolist()) == set(range(p))
    assert set(ds.train[:, 1].tolist()) == set(range(q))
    for items in ds.train_items_by_user:
        assert np.all(np.diff(items) > 0)
    # each user: 12 records -> 10/1/1 (remainder to train)
    for u in range(p):
        assert (ds.train[:, 0] == u).sum() == 10
        assert (ds.valid[:, 0] == u).sum() == 1
        assert (ds.test[:, 0] == u).sum() == 1
    # coverage: every filtered record appears exactly once
    assert sum(len(s) for s in sets) == len(raw)


def test_build_dataset_is_deterministic(rng, tmp_path):
    raw = _dense_raw(rng)
    a = dataset.build_dataset(raw, (0.8, 0.1, 0.1), seed=3)
    b = dataset.build_dataset(raw, (0.8, 0.1, 0.1), seed=3)
    dataset.write_dataset(a, tmp_path / "a")
    dataset.write_dataset(b, tmp_path / "b")
    for name in ("train.tsv", "valid.tsv", "test.tsv", "mapping_users.tsv", "mapping_items.tsv", "stats.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    c = dataset.build_dataset(raw, (0.8, 0.1, 0.1), seed=4)
    assert not np.array_equal(a.test, c.test)


def test_users_with_too_few_records_are_dropped():
    raw = raw_from_pairs([("u", "a"), ("u", "b"), ("v", "a"), ("v", "b"), ("v", "c")])
    ds = dataset.build_dataset(raw, (0.8, 0.1, 0.1), seed=0)
    assert ds.num_users == 1 and "u" not in ds.user_vocab


def test_roundtrip(tmp_path, rng):
    ds = dataset.build_dataset(_dense_raw(rng), (0.8, 0.1, 0.1), seed=5)
    dataset.write_dataset(ds, tmp_path / "d")
    back = dataset.read_dataset(tmp_path / "d")
    assert back.num_users == ds.num_users and back.num_items == ds.num_items
    for name in ("train", "valid", "test"):
        assert np.array_equal(getattr(back, name), getattr(ds, name))
    assert back.user_vocab == ds.user_vocab
    lines = (tmp_path / "d" / "train.tsv").read_text().splitlines()
    assert all(line.count("\t") == 1 and line.replace("\t", "").isdigit() for line in lines)
