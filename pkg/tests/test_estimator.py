import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from pevit.data import synth_dataset
from pevit.estimator import ViTClassifier, check_images
from pevit.config import PRESETS


@pytest.fixture(scope="module")
def small_data():
    ds = synth_dataset(3, 6, seed=0)
    return ds.images, ds.labels


def test_params_round_trip():
    clf = ViTClassifier(variant="grouped", epochs=3)
    assert clf.get_params()["variant"] == "grouped"
    twin = clone(clf)
    assert twin.get_params() == clf.get_params()
    clf.set_params(variant="shallow", width_ratio=0.25)
    assert clf.variant == "shallow" and twin.variant == "grouped"


def test_unfitted_predict_raises(small_data):
    with pytest.raises(NotFittedError):
        ViTClassifier().predict(small_data[0])


@pytest.mark.parametrize("variant", ["baseline", "grouped", "shallow"])
def test_fit_predict(small_data, variant):
    X, y = small_data
    labels = np.array(["cat", "dog", "emu"])[y]
    clf = ViTClassifier(variant=variant, epochs=2, warmup_epochs=1, batch_size=8,
                        random_state=0).fit(X, labels)
    pred = clf.predict(X)
    assert pred.shape == (len(X),) and set(pred) <= set(clf.classes_)
    proba = clf.predict_proba(X.reshape(len(X), -1))
    np.testing.assert_allclose(proba.sum(axis=1), 1.0, rtol=1e-6)
    assert clf.n_features_in_ == 3 * 32 * 32
    assert clf.metrics_.epochs == 2
    assert 0.0 <= clf.score(X, labels) <= 1.0


def test_fit_is_deterministic(small_data):
    X, y = small_data
    kw = dict(epochs=2, warmup_epochs=1, batch_size=8, random_state=5)
    a = ViTClassifier(**kw).fit(X, y).decision_function(X)
    b = ViTClassifier(**kw).fit(X, y).decision_function(X)
    assert a.tobytes() == b.tobytes()


def test_input_validation(small_data):
    X, y = small_data
    cfg = PRESETS["tiny"]
    with pytest.raises(ValueError):
        check_images(np.zeros((2, 3, 16, 16)), cfg)
    with pytest.raises(ValueError):
        check_images(np.full((1, 3, 32, 32), np.nan), cfg)
    with pytest.raises(ValueError):
        check_images(np.array([["a"] * 3072]), cfg)
    u8 = (X[:2] * 255).astype(np.uint8)
    assert check_images(u8, cfg).max() <= 1.0
    with pytest.raises(ValueError):
        ViTClassifier(epochs=2).fit(X, np.zeros(len(X), dtype=int))
    with pytest.raises(ValueError):
        ViTClassifier(epochs=2).fit(X, y[:-1])
    with pytest.raises(ValueError):
        ViTClassifier(preset="huge", epochs=2).fit(X, y)
