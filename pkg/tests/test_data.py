import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import chisquare

from momentum_tde import container
from momentum_tde.data import (FEW, IMBALANCE_PRESETS, MANY, MEDIUM, TEST, TRAIN, VAL, Dataset,
                               DatasetProfile, class_balanced_batches, dataset_from_bytes,
                               dataset_to_bytes, frequency_splits, instance_balanced_batches,
                               load_dataset, load_feature_csv, save_dataset, synthesize)

SMALL = DatasetProfile(num_classes=5, n_max=40, imbalance_ratio=10, dim=6,
                       n_val_per_class=3, n_test_per_class=4)


def toy(counts, dim=2):
    labels = np.repeat(np.arange(len(counts)), counts)
    feats = np.arange(len(labels) * dim, dtype=float).reshape(-1, dim)
    return Dataset(feats, labels, np.full(len(labels), TRAIN), len(counts))


def test_balanced_ratio():
    p = DatasetProfile(num_classes=7, n_max=30, imbalance_ratio=1)
    np.testing.assert_array_equal(p.class_counts(), 30)


def test_tail_count_example():
    n = DatasetProfile(num_classes=10, n_max=1000, imbalance_ratio=100).class_counts()
    assert n[9] == 10 and n[0] == 1000
    assert np.all(np.diff(n) <= 0)


def test_presets():
    assert IMBALANCE_PRESETS == (100, 50, 10)


def test_counts_rounding_to_zero():
    with pytest.raises(ValueError):
        DatasetProfile(num_classes=5, n_max=10, imbalance_ratio=100).class_counts()


def test_profile_validation():
    with pytest.raises(ValueError):
        DatasetProfile(imbalance_ratio=0.5)
    with pytest.raises(ValueError):
        DatasetProfile(background_fraction=1.0)


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 40), st.integers(50, 2000), st.floats(1, 100))
def test_count_ratio_within_rounding_slack(C, n_max, rho):
    n = DatasetProfile(num_classes=C, n_max=n_max, imbalance_ratio=rho).class_counts()
    lo, hi = rho * (1 - 2 / n[-1]), rho * (1 + 2 / n[-1])
    assert lo <= n[0] / n[-1] <= hi


def test_frequency_split_examples():
    assert frequency_splits([150, 100, 20, 19, 5], (100, 20)) == [MANY, MEDIUM, MEDIUM, FEW, FEW]
    with pytest.raises(ValueError):
        frequency_splits([1], (20, 100))


def test_default_thresholds_scaled_and_all_splits_present():
    p = DatasetProfile()
    hi, lo = p.thresholds()
    assert (hi, lo) == pytest.approx((100 * 500 / 1280, 20 * 500 / 1280))
    tags = frequency_splits(p.class_counts(), p.thresholds())
    assert {MANY, MEDIUM, FEW} <= set(tags)


def test_synthesize_counts_and_balanced_eval_parts():
    ds = synthesize(SMALL, 3)
    np.testing.assert_array_equal(ds.class_counts("train"), SMALL.class_counts())
    np.testing.assert_array_equal(ds.class_counts("val"), 3)
    np.testing.assert_array_equal(ds.class_counts("test"), 4)
    assert ds.dim == 6


def test_synthesize_deterministic():
    a, b = synthesize(SMALL, 5), synthesize(SMALL, 5)
    assert dataset_to_bytes(a) == dataset_to_bytes(b)
    assert not np.array_equal(a.features, synthesize(SMALL, 6).features)


def test_eval_parts_independent_of_imbalance():
    flat = synthesize(DatasetProfile(num_classes=4, n_max=20, imbalance_ratio=1, dim=3,
                                     n_val_per_class=2, n_test_per_class=2), 1)
    skew = synthesize(DatasetProfile(num_classes=4, n_max=20, imbalance_ratio=10, dim=3,
                                     n_val_per_class=2, n_test_per_class=2), 1)
    np.testing.assert_array_equal(flat.part("test")[0], skew.part("test")[0])


def test_prototypes_on_unit_sphere():
    p = DatasetProfile(num_classes=3, n_max=400, imbalance_ratio=1, dim=5, noise=0.01)
    ds = synthesize(p, 0)
    for c in range(3):
        X = ds.features[(ds.labels == c) & (ds.splits == TRAIN)]
        assert abs(np.linalg.norm(X.mean(axis=0)) - 1) < 0.01


def test_background_class_is_majority_label_zero():
    p = DatasetProfile(num_classes=4, n_max=50, imbalance_ratio=5, dim=6,
                       background_fraction=0.6, n_val_per_class=2, n_test_per_class=2)
    ds = synthesize(p, 0)
    assert ds.background and ds.num_classes == 5
    counts = ds.class_counts()
    assert counts[0] / counts.sum() == pytest.approx(0.6, abs=0.01)
    np.testing.assert_array_equal(counts[1:], p.class_counts())


def test_instance_batches_cover_once():
    ds = synthesize(SMALL, 0)
    seen = np.concatenate(list(instance_balanced_batches(ds, 7, seed=1, epoch=2)))
    np.testing.assert_array_equal(np.sort(seen), ds.indices("train"))
    again = list(instance_balanced_batches(ds, 7, seed=1, epoch=2))
    assert all(np.array_equal(a, b) for a, b in
               zip(again, instance_balanced_batches(ds, 7, seed=1, epoch=2)))
    with pytest.raises(ValueError):
        list(instance_balanced_batches(ds, 10**6, 0))


def test_instance_batches_follow_frequencies():
    ds = toy([99, 1])
    hits = [np.mean(ds.labels[b] == 1) for e in range(200)
            for b in instance_balanced_batches(ds, 10, seed=0, epoch=e)]
    assert np.mean(hits) == pytest.approx(0.01, abs=0.002)


def test_class_balanced_expected_counts():
    ds = toy([4, 1])
    labels = np.concatenate([ds.labels[b] for e in range(500)
                             for b in class_balanced_batches(ds, 4, 0, e, num_batches=1)])
    assert np.mean(labels == 0) * 4 == pytest.approx(2.0, abs=0.15)


def test_class_balanced_near_uniform():
    ds = toy([99, 1])
    labels = np.concatenate(list(class_balanced_batches(ds, 100, 0, 0, num_batches=100)))
    freq = np.bincount(ds.labels[labels], minlength=2) / len(labels)
    assert np.all(np.abs(freq - 0.5) < 0.01)


def test_class_balanced_chi_square():
    ds = synthesize(SMALL, 0)
    idx = np.concatenate(list(class_balanced_batches(ds, 100, 3, 0, num_batches=100)))
    obs = np.bincount(ds.labels[idx], minlength=5)
    assert chisquare(obs).pvalue > 0.01


def test_class_balanced_single_and_empty():
    ds = toy([5])
    assert all(np.all(ds.labels[b] == 0) for b in class_balanced_batches(ds, 3, 0))
    empty = Dataset(np.zeros((2, 1)), [0, 0], [TRAIN, TRAIN], 2)
    with pytest.raises(ValueError):
        list(class_balanced_batches(empty, 2, 0))


def test_save_load_roundtrip(tmp_path):
    ds = synthesize(SMALL, 2)
    save_dataset(ds, tmp_path / "a.ltds")
    back = load_dataset(tmp_path / "a.ltds")
    np.testing.assert_array_equal(back.features, ds.features)
    np.testing.assert_array_equal(back.labels, ds.labels)
    np.testing.assert_array_equal(back.splits, ds.splits)
    assert back.thresholds == ds.thresholds
    save_dataset(back, tmp_path / "b.ltds")
    assert (tmp_path / "a.ltds").read_bytes() == (tmp_path / "b.ltds").read_bytes()


def test_truncated_and_corrupt_files():
    raw = dataset_to_bytes(synthesize(SMALL, 0))
    for bad in (raw[:-5], raw[:10], b"XXXX" + raw[4:], raw + b"\0"):
        with pytest.raises(container.FormatError):
            dataset_from_bytes(bad)
    wrong_version = raw[:4] + (2).to_bytes(4, "little") + raw[8:]
    with pytest.raises(container.FormatError):
        dataset_from_bytes(wrong_version)


def test_container_rejects_other_magic():
    blob = container.dumps(b"LTCK", {}, {"a": np.zeros(2)})
    with pytest.raises(container.FormatError):
        container.loads(b"LTDS", blob)
    meta, arrays = container.loads(b"LTCK", blob)
    np.testing.assert_array_equal(arrays["a"], [0.0, 0.0])


def test_feature_csv(tmp_path):
    path = tmp_path / "f.csv"
    path.write_text("label,f0,f1\n0,1.5,2\n1,-1,0.25\n1,0,0\n")
    ds = load_feature_csv(path)
    assert ds.num_classes == 2 and ds.dim == 2
    np.testing.assert_array_equal(ds.features[0], [1.5, 2.0])
    np.testing.assert_array_equal(ds.class_counts(), [1, 2])


def test_feature_csv_split_column(tmp_path):
    path = tmp_path / "f.csv"
    path.write_text("label,f0,split\n0,1,train\n1,2,val\n1,3,test\n")
    ds = load_feature_csv(path, num_classes=3)
    np.testing.assert_array_equal(ds.splits, [TRAIN, VAL, TEST])
    assert ds.num_classes == 3


@pytest.mark.parametrize("text", ["", "lbl,f0\n1,2\n", "label,f0\n1\n", "label,f0\nx,2\n",
                                  "label,f0,split\n0,1,holdout\n"])
def test_feature_csv_errors(tmp_path, text):
    path = tmp_path / "f.csv"
    path.write_text(text)
    with pytest.raises(container.FormatError):
        load_feature_csv(path)
