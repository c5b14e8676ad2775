import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from evidential_uq import (
    ConfidenceHeadEstimator,
    EvidentialClassifier,
    MahalanobisDetector,
    TemperatureScaler,
)
from evidential_uq.measures import mahalanobis_fit, mahalanobis_score


def _blobs(rng, n=300):
    y = rng.integers(0, 3, n)
    centres = np.array([[0.0, 4.0], [-4.0, -3.0], [4.0, -3.0]])
    return centres[y] + rng.normal(size=(n, 2)), y


def test_clone_and_params():
    est = EvidentialClassifier(lam=0.1, hidden_dims=(4,), epochs=3)
    c = clone(est)
    assert c.get_params() == est.get_params()
    c.set_params(lam=0.2)
    assert est.lam == 0.1 and c.lam == 0.2
    assert clone(ConfidenceHeadEstimator(epochs1=1)).epochs1 == 1
    assert clone(MahalanobisDetector(ridge=1e-3)).ridge == 1e-3


def test_classifier_fit_predict_with_string_labels(rng):
    X, y = _blobs(rng)
    names = np.array(["a", "b", "c"])[y]
    est = EvidentialClassifier(epochs=100, random_state=1).fit(X, names)
    assert list(est.classes_) == ["a", "b", "c"]
    assert est.score(X, names) > 0.95
    P = est.predict_proba(X)
    assert np.allclose(P.sum(1), 1)
    assert np.allclose(est.predict_alpha(X), np.exp(est.decision_function(X)))
    assert np.array_equal(est.transform(X), X)
    u = est.uncertainty(X[:5])
    assert set(u) == {"mcp", "entropy", "mutual_information", "klos"}
    with pytest.raises(ValueError):
        est.predict(np.zeros((2, 3)))


def test_classifier_errors(rng):
    with pytest.raises(NotFittedError):
        EvidentialClassifier().predict(np.zeros((1, 2)))
    with pytest.raises(ValueError):
        EvidentialClassifier(epochs=1).fit(np.zeros((4, 2)), [1, 1, 1, 1])


def test_reverse_kl_with_ood(rng):
    X, y = _blobs(rng)
    ood = rng.normal(scale=12, size=(100, 2))
    est = EvidentialClassifier(objective="reverse_kl", hidden_dims=(8,), epochs=30).fit(X, y, X_ood=ood)
    assert est.history_ and np.isfinite(est.history_).all()


def test_mahalanobis_detector_matches_functional(rng):
    X, y = _blobs(rng)
    det = MahalanobisDetector(ridge=1e-6).fit(X, y)
    ref = mahalanobis_score(mahalanobis_fit(X, y, ridge=1e-6), X[:10])
    assert np.allclose(det.score_samples(X[:10]), ref)


def test_temperature_scaler(rng):
    logits = rng.normal(scale=3, size=(2000, 3))
    p = np.exp(logits / 2)
    p /= p.sum(1, keepdims=True)
    y = (rng.random(2000)[:, None] > np.cumsum(p, 1)).sum(1)
    ts = TemperatureScaler().fit(logits, y)
    assert ts.temperature_ == pytest.approx(2.0, abs=0.3)
    assert np.allclose(ts.transform(logits).sum(1), 1)


def test_confidence_head_estimator(rng):
    X, y = _blobs(rng)
    clf = EvidentialClassifier(hidden_dims=(8,), epochs=20).fit(X, y)
    head = ConfidenceHeadEstimator(clf, hidden_dims=(8,), target="klos_star_sigmoid",
                                   epochs1=3, epochs2=1).fit(X, y)
    s = head.score_samples(X)
    assert s.shape == (300,) and np.all((s >= 0) & (s <= 1))
    with pytest.raises(ValueError):
        ConfidenceHeadEstimator().fit(X, y)
