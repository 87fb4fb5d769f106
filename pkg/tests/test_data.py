import json

import numpy as np
import pytest

from conngcl.data import (
    Connectome,
    Dataset,
    SplitSpec,
    generate_synthetic,
    load_dataset,
    normalize_adjacency,
    save_dataset,
    split_dataset,
)
from conngcl.errors import DataError, ValidationError

from conftest import make_flat_dataset


# ---------------------------------------------------------------------------
# normalize_adjacency
# ---------------------------------------------------------------------------


def test_normalize_zero_matrix_is_identity():
    out = normalize_adjacency(np.zeros((2, 2)))
    assert np.array_equal(out, np.eye(2))


def test_normalize_worked_examples():
    out = normalize_adjacency(np.array([[0.0, 1.0], [1.0, 0.0]]))
    np.testing.assert_allclose(out, [[0.5, 0.5], [0.5, 0.5]], rtol=0, atol=1e-15)
    out = normalize_adjacency(np.array([[0.0, 2.0], [2.0, 0.0]]))
    np.testing.assert_allclose(out, [[1 / 3, 2 / 3], [2 / 3, 1 / 3]], rtol=0, atol=1e-15)


def test_normalize_symmetric_and_bounded():
    rng = np.random.default_rng(0)
    for _ in range(50):
        n = int(rng.integers(2, 12))
        sc = rng.random((n, n)) * (rng.random((n, n)) < 0.4)
        sc = np.triu(sc, 1)
        sc = sc + sc.T
        out = normalize_adjacency(sc)
        assert np.max(np.abs(out - out.T)) <= 1e-12
        assert out.min() >= 0.0 and out.max() <= 1.0


def test_normalize_permutation_equivariant():
    rng = np.random.default_rng(1)
    for _ in range(50):
        n = int(rng.integers(2, 10))
        sc = np.triu(rng.random((n, n)), 1)
        sc = sc + sc.T
        perm = rng.permutation(n)
        p = np.eye(n)[perm]
        lhs = normalize_adjacency(p @ sc @ p.T)
        rhs = p @ normalize_adjacency(sc) @ p.T
        np.testing.assert_allclose(lhs, rhs, rtol=0, atol=1e-12)


def test_normalize_rejects_bad_inputs():
    with pytest.raises(ValidationError):
        normalize_adjacency(np.array([[0.0, 1.0], [0.5, 0.0]]))
    with pytest.raises(ValidationError):
        normalize_adjacency(np.array([[0.0, -1.0], [-1.0, 0.0]]))


# ---------------------------------------------------------------------------
# types
# ---------------------------------------------------------------------------


def test_connectome_validation():
    sc = np.zeros((3, 3))
    fc = np.eye(3)
    Connectome("a", sc, fc, 0)  # valid
    with pytest.raises(ValidationError):
        Connectome("a", sc, np.eye(4), 0)  # dimension mismatch
    with pytest.raises(ValidationError):
        Connectome("a", -sc - 0.1 + np.diag([0.1] * 3), fc, 0)  # negative sc
    bad_fc = fc.copy()
    bad_fc[0, 1] = bad_fc[1, 0] = 1.5
    with pytest.raises(ValidationError):
        Connectome("a", sc, bad_fc, 0)
    with pytest.raises(ValidationError):
        Connectome("a", sc, fc, 2)


def test_dataset_rejects_duplicates_and_mixed_sizes():
    a = Connectome("x", np.zeros((3, 3)), np.eye(3), 0)
    b = Connectome("x", np.zeros((3, 3)), np.eye(3), 1)
    with pytest.raises(ValidationError):
        Dataset([a, b])
    c = Connectome("y", np.zeros((4, 4)), np.eye(4), 1)
    with pytest.raises(ValidationError):
        Dataset([a, c])


def test_splitspec_validation():
    SplitSpec(0.8, 0.1, 0.1, 0, 1.0)
    with pytest.raises(ValidationError):
        SplitSpec(0.8, 0.1, 0.2, 0)
    with pytest.raises(ValidationError):
        SplitSpec(train_proportion=0.0)
    with pytest.raises(ValidationError):
        SplitSpec(seed=-1)


# ---------------------------------------------------------------------------
# split_dataset
# ---------------------------------------------------------------------------


def test_split_sizes_1000():
    ds = make_flat_dataset(1000)
    train, val, test = split_dataset(ds, SplitSpec(0.8, 0.1, 0.1, 0, 1.0))
    assert (len(train), len(val), len(test)) == (800, 100, 100)
    train_half, val_half, test_half = split_dataset(ds, SplitSpec(0.8, 0.1, 0.1, 0, 0.5))
    assert (len(train_half), len(val_half), len(test_half)) == (400, 100, 100)
    # val/test identical under reduced train proportion
    assert [s.subject_id for s in val_half.subjects] == [s.subject_id for s in val.subjects]
    assert [s.subject_id for s in test_half.subjects] == [s.subject_id for s in test.subjects]
    # the reduced train set is a prefix of the full one
    full_ids = [s.subject_id for s in train.subjects]
    assert [s.subject_id for s in train_half.subjects] == full_ids[:400]


def test_split_is_a_partition():
    ds = make_flat_dataset(97)
    train, val, test = split_dataset(ds, SplitSpec(0.8, 0.1, 0.1, 3, 1.0))
    ids = lambda d: {s.subject_id for s in d.subjects}
    assert len(train) + len(val) + len(test) == 97
    assert ids(train) | ids(val) | ids(test) == ids(ds)
    assert not ids(train) & ids(val)
    assert not ids(train) & ids(test)
    assert not ids(val) & ids(test)


def test_split_deterministic_and_seed_sensitive():
    ds = make_flat_dataset(60)
    spec = SplitSpec(0.8, 0.1, 0.1, 11, 1.0)
    a = split_dataset(ds, spec)
    b = split_dataset(ds, spec)
    for x, y in zip(a, b):
        assert [s.subject_id for s in x.subjects] == [s.subject_id for s in y.subjects]
    c = split_dataset(ds, SplitSpec(0.8, 0.1, 0.1, 12, 1.0))
    assert [s.subject_id for s in a[0].subjects] != [s.subject_id for s in c[0].subjects]


def test_split_empty_portion_rejected():
    ds = make_flat_dataset(4)
    with pytest.raises(ValidationError):
        split_dataset(ds, SplitSpec(0.8, 0.1, 0.1, 0, 1.0))  # round(0.4) of val = 0


# ---------------------------------------------------------------------------
# save / load
# ---------------------------------------------------------------------------


def test_save_load_round_trip_bit_exact(tiny_ds, tmp_path):
    manifest = save_dataset(tiny_ds, tmp_path / "ds")
    loaded = load_dataset(manifest)
    assert len(loaded) == len(tiny_ds)
    for a, b in zip(tiny_ds.subjects, loaded.subjects):
        assert a.subject_id == b.subject_id
        assert a.label == b.label
        assert np.array_equal(a.sc, b.sc)
        assert np.array_equal(a.fc, b.fc)


def test_load_accepts_directory_path(tiny_ds, tmp_path):
    save_dataset(tiny_ds, tmp_path / "ds")
    loaded = load_dataset(tmp_path / "ds")
    assert len(loaded) == len(tiny_ds)


def _write_and_corrupt(ds, tmp_path, mutate):
    out = tmp_path / "ds"
    manifest = save_dataset(ds, out)
    payload = json.loads(manifest.read_text())
    mutate(out, payload)
    manifest.write_text(json.dumps(payload))
    return manifest


def test_load_rejects_missing_file(tiny_ds, tmp_path):
    manifest = _write_and_corrupt(
        tiny_ds, tmp_path, lambda out, p: (out / p["subjects"][0]["sc_file"]).unlink()
    )
    with pytest.raises(DataError):
        load_dataset(manifest)


def test_load_rejects_dimension_mismatch(tiny_ds, tmp_path):
    def mutate(out, p):
        (out / p["subjects"][0]["sc_file"]).write_text("0,0\n0,0\n")

    with pytest.raises(DataError):
        load_dataset(_write_and_corrupt(tiny_ds, tmp_path, mutate))


def test_load_rejects_duplicate_ids(tiny_ds, tmp_path):
    def mutate(out, p):
        p["subjects"][1]["id"] = p["subjects"][0]["id"]

    with pytest.raises(DataError):
        load_dataset(_write_and_corrupt(tiny_ds, tmp_path, mutate))


def test_load_rejects_fc_out_of_range(tiny_ds, tmp_path):
    def mutate(out, p):
        n = tiny_ds.n
        fc = np.eye(n)
        fc[0, 1] = fc[1, 0] = 1.5
        lines = "\n".join(",".join("%.17g" % v for v in row) for row in fc)
        (out / p["subjects"][0]["fc_file"]).write_text(lines + "\n")

    with pytest.raises(DataError):
        load_dataset(_write_and_corrupt(tiny_ds, tmp_path, mutate))


def test_load_rejects_bad_label(tiny_ds, tmp_path):
    def mutate(out, p):
        p["subjects"][0]["label"] = 3

    with pytest.raises(DataError):
        load_dataset(_write_and_corrupt(tiny_ds, tmp_path, mutate))


def test_load_clamps_in_band_fc_excursion(tiny_ds, tmp_path):
    # a value 5e-10 below zero is inside the slack band and must clamp to 0
    out = tmp_path / "ds"
    manifest = save_dataset(tiny_ds, out)
    payload = json.loads(manifest.read_text())
    n = tiny_ds.n
    fc = np.eye(n)
    i, j = 0, 1
    fc[i, j] = fc[j, i] = -5e-10
    lines = "\n".join(",".join("%.17g" % v for v in row) for row in fc)
    (out / payload["subjects"][0]["fc_file"]).write_text(lines + "\n")
    loaded = load_dataset(manifest)
    assert loaded.subjects[0].fc[i, j] == 0.0


# ---------------------------------------------------------------------------
# generate_synthetic
# ---------------------------------------------------------------------------


def test_generate_invariants():
    ds = generate_synthetic(10, 8, 0.3, 0.05, 2)
    assert len(ds) == 10
    labels = ds.labels()
    assert set(labels.tolist()) == {0, 1}
    assert abs(int(labels.sum()) - 5) <= 0
    for s in ds.subjects:
        assert np.array_equal(s.sc, s.sc.T)
        assert np.all(np.diag(s.sc) == 0)
        assert s.sc.min() >= 0.0 and s.sc.max() <= 1.0
        assert s.fc.min() >= 0.0 and s.fc.max() <= 1.0
        assert np.all(np.diag(s.fc) == 1.0)


def test_generate_deterministic():
    a = generate_synthetic(6, 6, 0.3, 0.05, 4)
    b = generate_synthetic(6, 6, 0.3, 0.05, 4)
    for x, y in zip(a.subjects, b.subjects):
        assert np.array_equal(x.sc, y.sc) and np.array_equal(x.fc, y.fc)
    c = generate_synthetic(6, 6, 0.3, 0.05, 5)
    assert not np.array_equal(a.subjects[0].sc, c.subjects[0].sc)


def test_generate_subject_substreams_are_order_independent():
    # subject i draws from (seed, i), so a longer run reproduces a shorter prefix
    short = generate_synthetic(4, 6, 0.3, 0.05, 8)
    long = generate_synthetic(9, 6, 0.3, 0.05, 8)
    for a, b in zip(short.subjects, long.subjects):
        assert np.array_equal(a.sc, b.sc) and np.array_equal(a.fc, b.fc)


def test_generate_sigma_zero_fc_is_deterministic_function_of_sc():
    ds = generate_synthetic(4, 8, 0.3, 0.0, 6)
    for s in ds.subjects:
        a = normalize_adjacency(s.sc)
        two_step = a @ a
        expected = np.clip(two_step / np.max(two_step), 0.0, 1.0)
        np.fill_diagonal(expected, 1.0)
        assert np.array_equal(s.fc, expected)


def test_generate_parameter_validation():
    with pytest.raises(ValidationError):
        generate_synthetic(1, 8, 0.3, 0.05, 0)
    with pytest.raises(ValidationError):
        generate_synthetic(10, 7, 0.3, 0.05, 0)
    with pytest.raises(ValidationError):
        generate_synthetic(10, 8, 1.5, 0.05, 0)
    with pytest.raises(ValidationError):
        generate_synthetic(10, 8, 0.3, -0.1, 0)


def test_generate_zero_gap_is_not_separable():
    # scalar oracle: mean inter-block weight carries no label signal at gap 0
    sklearn = pytest.importorskip("sklearn.linear_model")
    ds = generate_synthetic(600, 16, 0.0, 0.05, 3)
    feats = np.array([[s.sc[:8, 8:].mean()] for s in ds.subjects])
    labels = ds.labels()
    clf = sklearn.LogisticRegression().fit(feats[:400], labels[:400])
    acc = clf.score(feats[400:], labels[400:])
    assert 0.35 <= acc <= 0.65


def test_generate_gap_moves_interblock_density():
    ds = generate_synthetic(40, 16, 0.5, 0.0, 9)
    inter = np.array([np.count_nonzero(s.sc[:8, 8:]) for s in ds.subjects])
    labels = ds.labels()
    assert inter[labels == 1].mean() > inter[labels == 0].mean() * 2
