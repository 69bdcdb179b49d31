import logging
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from kcm.errors import CapacityError, DimensionError, ValidationError
from kcm.lattice import Model
from kcm.measure import (DistributionVector, check_capacity, chi_square_distance, config_to_id,
                         id_to_config, marginal_on, pi_weight, product_distribution, renormalize,
                         tv_distance)

import oracles


def random_dist(rng, k):
    w = rng.random(1 << k) ** 3
    return w / w.sum()


def test_pi_weight_examples():
    m = Model.build(2, 2, 0.3)
    assert pi_weight(m, [1, 0, 0, 1]) == pytest.approx(0.0441, abs=1e-15)
    half = Model.build(2, 2, 0.5)
    assert pi_weight(half, [0, 1, 1, 0]) == 2.0 ** -4
    total = sum(pi_weight(m, id_to_config(s, 4)) for s in range(16))
    assert total == pytest.approx(1.0, abs=1e-14)


@given(st.lists(st.integers(0, 1), min_size=1, max_size=12), st.randoms())
def test_pi_weight_permutation_invariant(bits, rnd):
    m = Model.build(1, len(bits), 0.37)
    perm = bits[:]
    rnd.shuffle(perm)
    assert pi_weight(m, bits) == pytest.approx(pi_weight(m, perm), rel=1e-12)


@given(st.lists(st.integers(0, 1), min_size=1, max_size=20))
def test_state_id_roundtrip(bits):
    s = config_to_id(bits)
    assert id_to_config(s, len(bits)).tolist() == bits
    assert s == sum(b << k for k, b in enumerate(bits))


def test_product_distribution_examples():
    one = Model.build(1, 1, 0.3)
    assert np.allclose(product_distribution(one).weights, [0.7, 0.3], atol=1e-15)
    m = Model.build(2, 2, 0.3)
    full = product_distribution(m)
    assert full.n_states == 16 and abs(full.weights.sum() - 1) < 1e-12
    assert np.allclose(full.weights, oracles.product_pi(4, 0.3), atol=1e-15)


@pytest.mark.parametrize("i", range(2, 7))
def test_marginal_of_pi_is_pi(i):
    m = Model.build(2, 3, 0.3)
    U = m.geometry.lower_set(i)
    a = marginal_on(product_distribution(m), U)
    b = product_distribution(m, U)
    assert a.sites == b.sites
    assert np.allclose(a.weights, b.weights, atol=1e-14)


def test_marginal_examples_and_errors():
    m = Model.build(2, 3, 0.3)
    cfg = np.array([1, 0, 1, 1, 0, 0, 1, 1, 0], dtype=np.uint8)
    delta = DistributionVector.point_mass(tuple(range(9)), cfg)
    U = m.geometry.lower_set(4)
    marg = marginal_on(delta, U)
    assert marg.weights[config_to_id(cfg[U])] == 1.0
    same = marginal_on(delta, m.geometry.lower_set(6))
    assert np.array_equal(same.weights, delta.weights)
    with pytest.raises(DimensionError):
        marginal_on(marg, m.geometry.lower_set(5))


def test_marginal_composes():
    rng = np.random.default_rng(3)
    m = Model.build(2, 3, 0.3)
    dist = DistributionVector(random_dist(rng, 9), tuple(range(9)))
    for i in range(3, 7):
        for j in range(2, i):
            Ui, Uj = m.geometry.lower_set(i), m.geometry.lower_set(j)
            two = marginal_on(marginal_on(dist, Ui), Uj)
            assert np.allclose(two.weights, marginal_on(dist, Uj).weights, atol=1e-14)


def test_tv_examples():
    one = Model.build(1, 1, 0.3)
    pi = product_distribution(one)
    up = DistributionVector.point_mass((0,), [1])
    assert tv_distance(pi, pi) == 0.0
    assert tv_distance(up, pi) == pytest.approx(0.7, abs=1e-15)
    assert tv_distance(up, DistributionVector.point_mass((0,), [0])) == 1.0
    with pytest.raises(DimensionError):
        tv_distance(np.ones(4) / 4, np.ones(8) / 8)


def test_tv_metric_properties():
    rng = np.random.default_rng(11)
    for _ in range(100):
        a, b, c = (random_dist(rng, 4) for _ in range(3))
        assert tv_distance(a, b) == pytest.approx(tv_distance(b, a), abs=1e-15)
        assert tv_distance(a, c) <= tv_distance(a, b) + tv_distance(b, c) + 1e-15
        assert 0 <= tv_distance(a, b) <= 1


def test_chi_square_examples_and_inequality():
    one = Model.build(1, 1, 0.3)
    assert chi_square_distance(product_distribution(one), one) == pytest.approx(0, abs=1e-14)
    assert chi_square_distance(np.array([0.0, 1.0]), one) == pytest.approx(1 / 0.3 - 1, rel=1e-14)
    m = Model.build(2, 2, 0.3)
    rng = np.random.default_rng(5)
    pi = oracles.product_pi(4, 0.3)
    for _ in range(100):
        a = random_dist(rng, 4)
        assert chi_square_distance(a, m) >= (2 * tv_distance(a, pi)) ** 2 - 1e-12
        assert chi_square_distance(a, m) == pytest.approx(np.sum((a - pi) ** 2 / pi), rel=1e-9, abs=1e-12)


def test_distribution_vector_validation(tmp_path):
    with pytest.raises(ValidationError):
        DistributionVector(np.array([0.5, 0.6]), (0,))
    with pytest.raises(ValidationError):
        DistributionVector(np.array([1.5, -0.5]), (0,))
    with pytest.raises(DimensionError):
        DistributionVector(np.ones(3) / 3, (0,))
    d = DistributionVector(np.array([0.25, 0.75]), (0,))
    d.to_csv(tmp_path / "d.csv")
    assert (tmp_path / "d.csv").read_text().splitlines() == ["state_id,weight", "0,0.25", "1,0.75"]


def test_capacity_and_renormalize(caplog):
    with pytest.raises(CapacityError):
        check_capacity(25)
    assert check_capacity(10, cap=1 << 10) == 1 << 10
    with pytest.raises(CapacityError):
        check_capacity(11, cap=1 << 10)
    with caplog.at_level(logging.WARNING):
        w = renormalize(np.array([0.5, 0.5 + 1e-6]))
    assert math.isclose(w.sum(), 1.0) and "drift" in caplog.text
