import math

import numpy as np
import pytest

from ldpvlm.classifier import (NoiseAwareClassifier, PrivatizedDataset, join_by_id, predict,
                               split_budget, train_joined, train_on_private)
from ldpvlm.exceptions import ValidationError
from ldpvlm.rng import RandomnessSource
from ldpvlm.vlm import LaplaceVLM, privatize_to_latent, train_stage_one
from oracles import central_difference, flip_probability_table, relative_error


def blobs(n=300, seed=0, k=3):
    rng = RandomnessSource(seed)
    y = rng.integers(0, k, n)
    centres = np.array([[3.0, 0.0], [-3.0, 0.0], [0.0, 3.0]])[:k]
    return centres[y] + rng.normal(0.7, (n, 2)), y


def test_split_budget():
    s = split_budget(10, 0.8)
    assert s.epsilon_x == pytest.approx(8.0) and s.epsilon_y == pytest.approx(2.0)
    assert s.labels_collected
    full = split_budget(4, 1.0)
    assert full.epsilon_y == 0.0 and not full.labels_collected
    inf = split_budget(math.inf, 0.5)
    assert math.isinf(inf.epsilon_x) and math.isinf(inf.epsilon_y)
    for eps, lam in [(0, 0.5), (1, 0.0), (1, 1.2)]:
        with pytest.raises(ValidationError):
            split_budget(eps, lam)


def test_transition_matches_definition():
    clf = NoiseAwareClassifier(n_classes=4, flip_prob=3 / (math.exp(1.5) + 3))
    np.testing.assert_allclose(clf._transition(), flip_probability_table(4, 1.5), rtol=1e-12)


def test_uniform_flip_rejected():
    with pytest.raises(ValidationError):
        NoiseAwareClassifier(n_classes=2, flip_prob=0.5)._transition()


def test_noise_aware_gradients_match_finite_differences():
    X, y = blobs(20)
    clf = NoiseAwareClassifier(n_classes=3, hidden=(5,), flip_prob=0.3, n_epochs=0).fit(X, y)
    _, grads = clf.loss_and_grads(X, y)
    for p, g in zip(clf.network_.params, grads):
        num = central_difference(lambda: clf.loss_and_grads(X, y)[0], p)
        assert relative_error(g, num) < 1e-6


def test_zero_flip_is_cross_entropy():
    X, y = blobs(15)
    clf = NoiseAwareClassifier(n_classes=3, hidden=(4,), n_epochs=0).fit(X, y)
    probs = clf.predict_proba(X)
    ce = -np.log(probs[np.arange(len(y)), y]).mean()
    assert clf.loss_and_grads(X, y)[0] == pytest.approx(ce, rel=1e-12)


def test_learns_through_label_noise():
    X, y = blobs(900, seed=1)
    p = 0.4
    rng = RandomnessSource(2)
    flip = rng.uniform(len(y)) < p
    noisy = np.where(flip, (y + rng.integers(1, 3, len(y))) % 3, y)
    clf = NoiseAwareClassifier(n_classes=3, hidden=(16,), flip_prob=p, n_epochs=30,
                               learning_rate=1e-2).fit(X, noisy)
    Xt, yt = blobs(600, seed=3)
    assert clf.score(Xt, yt) > 0.9


def test_standardize_records_statistics():
    X, y = blobs(50)
    X = X * 100 + 7
    clf = NoiseAwareClassifier(n_classes=3, n_epochs=1).fit(X, y)
    np.testing.assert_allclose(clf.input_mean_, X.mean(axis=0))
    raw = NoiseAwareClassifier(n_classes=3, n_epochs=1, standardize=False).fit(X, y)
    assert np.all(raw.input_scale_ == 1.0)


def test_fit_validates_labels_and_shapes():
    X, y = blobs(10)
    with pytest.raises(ValidationError):
        NoiseAwareClassifier(n_classes=2).fit(X, y + 5)
    with pytest.raises(ValidationError):
        NoiseAwareClassifier(n_classes=3).fit(X, y[:-1])
    clf = NoiseAwareClassifier(n_classes=3, n_epochs=1).fit(X, y)
    with pytest.raises(ValidationError):
        clf.predict(np.zeros((2, 5)))


def _dataset(level="latent", eps_y=1.0, source="flipped"):
    X, y = blobs(40)
    return PrivatizedDataset(X, y, level, 2.0, eps_y, 3, np.arange(40), source)


def test_privatized_dataset_budget_and_flip():
    data = _dataset()
    assert np.all(data.budget_per_record() == 3.0)
    assert data.flip_spec.flip_prob == pytest.approx(2 / (math.e + 2))
    constructed = _dataset(eps_y=0.0, source="constructed")
    assert constructed.flip_spec.flip_prob == 0.0
    assert np.all(constructed.budget_per_record() == 2.0)
    with pytest.raises(ValidationError):
        _dataset(level="joined")


def test_train_on_private_sets_flip_and_checks_level():
    clf = train_on_private(NoiseAwareClassifier(n_classes=3, n_epochs=2), _dataset())
    assert clf.flip_prob == pytest.approx(2 / (math.e + 2))
    assert clf.budget_["epsilon_y"] == 1.0
    with pytest.raises(ValidationError):
        train_on_private(NoiseAwareClassifier(n_classes=3, level="feature"), _dataset())


def test_predict_modes():
    X, y = blobs(60)
    vlm = train_stage_one(LaplaceVLM(latent_dim=2, clip_radius=2.0, encoder_hidden=(4,),
                                     decoder_hidden=(4,), n_epochs=1), X, rng=0)
    lat = privatize_to_latent(vlm, X, 5.0, RandomnessSource(0))
    clf = NoiseAwareClassifier(n_classes=3, n_epochs=2).fit(lat.z_tilde, y)
    assert predict(clf, lat, "private").shape == (60, 3)
    assert predict(clf, X, "clean", vlm=vlm).shape == (60, 3)
    with pytest.raises(ValidationError):
        predict(clf, X, "clean")
    with pytest.raises(ValidationError):
        predict(clf, X, "semi_private")
    with pytest.raises(ValidationError):
        predict(clf, X, "bogus")


def test_join_by_id_aligns_rows():
    out = join_by_id([3, 1], [[30.0], [10.0]], [1, 3], [[100.0], [300.0]])
    np.testing.assert_array_equal(out, [[30, 300], [10, 100]])


@pytest.mark.parametrize("left,right", [([1, 2], [2, 3]), ([1, 1], [1, 1]), ([1, 2], [1])])
def test_join_by_id_errors(left, right):
    with pytest.raises(ValidationError):
        join_by_id(left, np.zeros((len(left), 1)), right, np.zeros((len(right), 1)))


def test_train_joined_and_semi_private_predict():
    X, y = blobs(80)
    ids = np.arange(80)
    clf = train_joined(NoiseAwareClassifier(n_classes=3, level="joined", n_epochs=2),
                       X[:, :1], y, ids, (ids[::-1], X[::-1, 1:]))
    assert clf.clean_width_ == 1 and clf.partner_width_ == 1
    assert predict(clf, X, "semi_private").shape == (80, 3)
    with pytest.raises(ValidationError):
        predict(clf, X, "clean")
    empty = train_joined(NoiseAwareClassifier(n_classes=3, level="joined", n_epochs=1),
                         X, y, ids, (ids, np.zeros((80, 0))))
    assert empty.partner_width_ == 0
