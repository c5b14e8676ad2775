import numpy as np
import pytest
from scipy import special as sp
from scipy.stats import dirichlet as sp_dirichlet

from evidential_uq import dirichlet as dr
from evidential_uq.dirichlet import DirichletParams, EvidenceError


def _kl_oracle(a, b):
    # written against scipy's special functions rather than our own
    a0, b0 = a.sum(), b.sum()
    return (sp.gammaln(a0) - sp.gammaln(a).sum() - sp.gammaln(b0) + sp.gammaln(b).sum()
            + np.sum((a - b) * (sp.digamma(a) - sp.digamma(a0))))


def test_params_validation():
    d = DirichletParams([2.0, 3.0, 5.0])
    assert d.K == 3 and d.alpha0 == 10.0
    with pytest.raises(ValueError):
        DirichletParams([1.0])
    with pytest.raises(ValueError):
        DirichletParams([1.0, 0.0])
    with pytest.raises(ValueError):
        DirichletParams([1.0, np.nan])
    with pytest.raises(ValueError):
        d.alpha[0] = 3.0


def test_expected_probs_and_precision():
    assert np.allclose(dr.expected_probs([2.0, 3.0, 5.0]), [0.2, 0.3, 0.5])
    assert dr.precision(DirichletParams([1.0, 1.0, 1.0])) == 3.0


def test_kl_matches_scipy_oracle(rng):
    for _ in range(100):
        K = rng.integers(2, 7)
        a, b = rng.gamma(1.0, 3.0, K) + 0.05, rng.gamma(1.0, 3.0, K) + 0.05
        assert dr.kl_dirichlet(a, b) == pytest.approx(_kl_oracle(a, b), rel=1e-11, abs=1e-12)


def test_kl_properties(rng):
    a = np.array([2.0, 3.0, 4.0])
    assert dr.kl_dirichlet(a, a) == pytest.approx(0.0, abs=1e-13)
    assert dr.kl_dirichlet(a, np.ones(3)) == pytest.approx(dr.kl_to_uniform(a), rel=1e-13)
    with pytest.raises(ValueError):
        dr.kl_dirichlet([1.0, 2.0], [1.0, 2.0, 3.0])
    batch = rng.gamma(2.0, 2.0, (20, 4)) + 0.1
    assert np.all(dr.kl_to_uniform(batch) >= -1e-12)


def test_differential_entropy_matches_scipy(rng):
    for _ in range(50):
        a = rng.gamma(1.0, 4.0, rng.integers(2, 6)) + 0.1
        assert dr.differential_entropy(a) == pytest.approx(sp_dirichlet(a).entropy(), rel=1e-10, abs=1e-10)


def test_uniform_dirichlet_values():
    # flat Dirichlet on the 2-simplex has density 2 so entropy -ln 2
    assert dr.differential_entropy([1.0, 1.0, 1.0]) == pytest.approx(-np.log(2.0), rel=1e-13)
    assert dr.epkl([1.0, 1.0, 1.0]) == pytest.approx(2.0 / 3.0)


def test_expected_entropy_and_mi_monte_carlo(rng):
    a = np.array([1.5, 4.0, 0.7])
    draws = rng.dirichlet(a, 200_000)
    ent = -np.sum(sp.xlogy(draws, draws), axis=1)
    assert abs(dr.expected_categorical_entropy(a) - ent.mean()) < 4 * ent.std() / np.sqrt(ent.size)
    p = a / a.sum()
    mi_mc = -np.sum(p * np.log(p)) - ent
    assert abs(dr.mutual_information(a) - mi_mc.mean()) < 4 * mi_mc.std() / np.sqrt(mi_mc.size)


def test_mutual_information_decreases_with_precision():
    base = np.array([0.2, 0.3, 0.5])
    mis = [dr.mutual_information(base * s) for s in (1, 10, 100, 1000)]
    assert all(x > y for x, y in zip(mis, mis[1:]))
    assert mis[-1] > 0


def test_opinion_mapping():
    op = dr.to_opinion([4.0, 2.0, 1.0, 3.0])
    assert np.allclose(op.belief, [0.3, 0.1, 0.0, 0.2])
    assert op.vacuity == pytest.approx(0.4)
    assert op.belief.sum() + op.vacuity == pytest.approx(1.0)
    assert np.allclose(op.base_rate, 0.25)
    with pytest.raises(EvidenceError):
        dr.to_opinion([0.5, 2.0])


def _dissonance_oracle(b):
    K = len(b)
    total = 0.0
    for k in range(K):
        others = [j for j in range(K) if j != k]
        den = sum(b[j] for j in others)
        if den == 0:
            continue
        num = 0.0
        for j in others:
            if b[j] > 0 and b[k] > 0:
                num += b[j] * (1 - abs(b[j] - b[k]) / (b[j] + b[k]))
        total += b[k] * num / den
    return total


def test_dissonance_values(rng):
    assert dr.dissonance(np.array([0.3, 0.3, 0.3])) == pytest.approx(0.9, abs=1e-15)
    assert dr.dissonance(np.array([0.9, 0.0, 0.0])) == 0.0
    assert dr.dissonance(np.zeros(3)) == 0.0
    for _ in range(50):
        b = rng.dirichlet(np.ones(5)) * rng.uniform(0.1, 1.0)
        b[rng.random(5) < 0.2] = 0.0
        assert dr.dissonance(b) == pytest.approx(_dissonance_oracle(b), rel=1e-12, abs=1e-15)
    batch = rng.dirichlet(np.ones(4), 10) * 0.8
    assert np.allclose(dr.dissonance(batch), [_dissonance_oracle(b) for b in batch], rtol=1e-12)


def test_batched_inputs_match_rows(rng):
    A = rng.gamma(2.0, 2.0, (7, 3)) + 0.2
    for f in (dr.kl_to_uniform, dr.mutual_information, dr.differential_entropy, dr.epkl,
              dr.expected_categorical_entropy):
        assert np.allclose(f(A), [f(a) for a in A], rtol=1e-13, atol=0)
