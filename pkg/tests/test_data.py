import numpy as np
import pytest
from scipy import stats

from evidential_uq.data import (
    DEFAULT_MEANS,
    DataFormatError,
    Dataset,
    MixtureConfig,
    RingConfig,
    box_muller,
    gen_mixture,
    gen_ring,
    load_csv,
    make_rng,
    mixture_posterior,
    save_csv,
    split,
)

MEANS = np.array(DEFAULT_MEANS)


def test_means_are_an_equilateral_triangle():
    d = np.linalg.norm(MEANS[:, None] - MEANS[None], axis=-1)
    assert np.allclose(d[~np.eye(3, dtype=bool)], 2.0)
    assert np.allclose(MEANS.mean(0), [0.0, -np.sqrt(3) / 6])


def test_box_muller_is_standard_normal():
    z = box_muller(make_rng(1), 200_001)
    assert z.size == 200_001
    assert stats.kstest(z, "norm").pvalue > 1e-3
    assert abs(z.mean()) < 4 / np.sqrt(z.size)
    assert abs(z.var() - 1) < 0.02


def test_small_sigma_collapses_to_means():
    train, test = gen_mixture(MixtureConfig(sigma=1e-9, n_train=300, n_test=10, seed=2))
    assert np.allclose(train.features, MEANS[train.labels], atol=1e-7)
    assert len(test) == 10


def test_class_moments():
    train, _ = gen_mixture(MixtureConfig(sigma=4.0, n_train=60_000, n_test=0, seed=5))
    counts = np.bincount(train.labels, minlength=3)
    assert np.all(np.abs(counts - 20_000) < 4 * np.sqrt(60_000 * (1 / 3) * (2 / 3)))
    for k in range(3):
        Xk = train.features[train.labels == k]
        se = 4.0 / np.sqrt(len(Xk))
        assert np.all(np.abs(Xk.mean(0) - MEANS[k]) < 4 * se)
        assert np.allclose(np.cov(Xk.T), 16 * np.eye(2), atol=0.6)


def test_train_and_test_streams_differ_and_are_reproducible():
    a_train, a_test = gen_mixture(MixtureConfig(seed=7))
    b_train, b_test = gen_mixture(MixtureConfig(seed=7))
    assert np.array_equal(a_train.features, b_train.features)
    assert np.array_equal(a_test.labels, b_test.labels)
    assert not np.allclose(a_train.features, a_test.features)
    c_train, _ = gen_mixture(MixtureConfig(seed=8))
    assert not np.allclose(a_train.features, c_train.features)


def test_ring_without_noise_has_exact_radius():
    ring = gen_ring(RingConfig(n_ood=500, radius=12.0, noise=0.0, seed=3))
    assert ring.labels is None
    assert np.allclose(np.linalg.norm(ring.features, axis=1), 12.0)
    ang = np.arctan2(ring.features[:, 1], ring.features[:, 0])
    assert stats.kstest((ang + np.pi) / (2 * np.pi), "uniform").pvalue > 1e-3


def test_ring_noise_moments():
    ring = gen_ring(RingConfig(n_ood=50_000, radius=12.0, noise=2.0, seed=4))
    r = np.linalg.norm(ring.features, axis=1)
    assert abs(r.mean() - 12.0) < 0.05 and abs(r.std() - 2.0) < 0.05


def test_config_validation():
    with pytest.raises(ValueError):
        MixtureConfig(sigma=0)
    with pytest.raises(ValueError):
        MixtureConfig(n_train=-1)
    with pytest.raises(ValueError):
        RingConfig(radius=0)
    with pytest.raises(ValueError):
        RingConfig(noise=-1)


def test_posterior_matches_bayes_rule(rng):
    X = rng.normal(scale=5, size=(50, 2))
    dens = np.stack([stats.multivariate_normal(m, 16 * np.eye(2)).pdf(X) for m in MEANS], 1)
    assert np.allclose(mixture_posterior(X), dens / dens.sum(1, keepdims=True), rtol=1e-10)


def test_csv_round_trip(tmp_path):
    train, _ = gen_mixture(MixtureConfig(n_train=50, n_test=0, seed=1))
    save_csv(train, tmp_path / "d.csv")
    back = load_csv(tmp_path / "d.csv", n_classes=3)
    assert np.array_equal(back.features, train.features)
    assert np.array_equal(back.labels, train.labels)
    ring = gen_ring(RingConfig(n_ood=5))
    save_csv(ring, tmp_path / "r.csv")
    assert load_csv(tmp_path / "r.csv").labels is None


@pytest.mark.parametrize("body,match", [
    ("", "empty"),
    ("f0,f1,label\n1.0,2.0\n", "line 2"),
    ("f0,f1,label\n1.0,2.0,0\n1.0,x,1\n", "line 3"),
    ("f0,f1,label\n1.0,2.0,a\n", "not an integer"),
    ("f0,f1,label\n1.0,2.0,3\n", "out of range"),
    ("f0,g1\n1.0,2.0\n", "column name"),
])
def test_csv_errors_name_the_line(tmp_path, body, match):
    p = tmp_path / "bad.csv"
    p.write_text(body)
    with pytest.raises(DataFormatError, match=match):
        load_csv(p, n_classes=3)


def test_dataset_validation():
    with pytest.raises(ValueError):
        Dataset(np.zeros(3))
    with pytest.raises(ValueError):
        Dataset(np.zeros((3, 2)), np.zeros(2))
    with pytest.raises(ValueError):
        Dataset(np.zeros((1, 2)), np.array([-1]))


def test_split_partitions():
    d = Dataset(np.arange(20.0).reshape(10, 2), np.arange(10))
    a, b = split(d, [0.8, 0.2], seed=1)
    assert len(a) == 8 and len(b) == 2
    assert sorted(np.concatenate([a.labels, b.labels])) == list(range(10))
    assert np.array_equal(a.features[:, 0], 2 * a.labels)
    a2, _ = split(d, [0.8, 0.2], seed=1)
    assert np.array_equal(a.labels, a2.labels)
    with pytest.raises(ValueError):
        split(d, [0.5, 0.6])
