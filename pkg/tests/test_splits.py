import numpy as np
import pytest

from ldpvlm.exceptions import ValidationError
from ldpvlm.pipeline.splits import Dataset, LabelledPool, split_datasets


def pool(n_train=60000, n_test=10000, k=10):
    y_tr = np.arange(n_train) % k
    y_te = np.arange(n_test) % k
    return LabelledPool.from_arrays(np.zeros((n_train, 1)), y_tr, np.zeros((n_test, 1)), y_te)


def test_data_collection_sizes():
    s = split_datasets(pool(), "data_collection", rng=0)
    assert len(s.vlm_train) == 45000
    assert len(s.clf_train) + len(s.clf_val) == 15000
    assert len(s.clf_train) == 13500
    assert len(s.vlm_val) + len(s.test) == 10000
    all_ids = np.concatenate([d.ids for d in (s.vlm_train, s.vlm_val, s.clf_train, s.clf_val, s.test)])
    assert len(np.unique(all_ids)) == 70000


def test_novel_class_excluded_from_vlm_and_balanced():
    p = pool(9000, 1800)
    s = split_datasets(p, "novel_class", rng=1, novel_class=9)
    orig = np.concatenate([p.train.y, p.test.y])
    for d in (s.vlm_train, s.vlm_val):
        assert not np.any(orig[d.ids.astype(int)] == 9)
    for d in (s.clf_train, s.clf_val, s.test):
        assert set(np.unique(d.y)) <= {0, 1}
    both = np.concatenate([s.clf_train.y, s.clf_val.y])
    assert (both == 1).sum() == (both == 0).sum()
    assert (s.test.y == 1).sum() == (s.test.y == 0).sum()
    assert np.all(orig[s.test.ids.astype(int)][s.test.y == 1] == 9)


def test_novel_class_absent():
    with pytest.raises(ValidationError):
        split_datasets(pool(900, 180, k=5), "novel_class", rng=0, novel_class=9)


def test_split_is_deterministic():
    a = split_datasets(pool(1000, 200), "data_collection", rng=3)
    b = split_datasets(pool(1000, 200), "data_collection", rng=3)
    np.testing.assert_array_equal(a.clf_train.ids, b.clf_train.ids)


def test_unknown_task():
    with pytest.raises(ValidationError):
        split_datasets(pool(10, 10), "bogus")


def test_dataset_take_keeps_codes():
    d = Dataset(np.arange(6.0).reshape(3, 2), np.array([0, 1, 0]), np.arange(3), np.array([[7], [8], [9]]))
    t = d.take([2, 0])
    np.testing.assert_array_equal(t.feature_codes, [[9], [7]])
    assert Dataset(d.X, d.y, d.ids).feature_codes is d.X
