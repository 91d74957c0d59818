import math

import numpy as np
import pytest

from cea_engine.exceptions import QuadratureError
from cea_engine.glmm.quadrature import gauss_hermite


def test_single_node_rule():
    rule = gauss_hermite(1)
    assert rule.nodes.tolist() == [0.0]
    assert rule.weights[0] == pytest.approx(math.sqrt(math.pi))


def test_two_node_rule():
    rule = gauss_hermite(2)
    assert np.allclose(rule.nodes, [-0.7071067812, 0.7071067812])
    assert np.allclose(rule.weights, [0.8862269255, 0.8862269255])


@pytest.mark.parametrize("order", [5, 30, 70])
def test_weights_sum_to_root_pi(order):
    assert gauss_hermite(order).weights.sum() == pytest.approx(math.sqrt(math.pi), rel=1e-12)


def test_polynomial_moments_are_exact():
    rule = gauss_hermite(4)
    assert rule.integrate(lambda x: x ** 2) == pytest.approx(math.sqrt(math.pi) / 2)
    assert rule.integrate(lambda x: x ** 4) == pytest.approx(3 * math.sqrt(math.pi) / 4)
    assert rule.integrate(lambda x: x ** 7) == pytest.approx(0.0, abs=1e-12)


def test_nodes_are_symmetric():
    rule = gauss_hermite(31)
    assert np.array_equal(rule.nodes, -rule.nodes[::-1])
    assert np.array_equal(rule.weights, rule.weights[::-1])


@pytest.mark.parametrize("order", [0, -3, 201, 2.5, True, "10"])
def test_invalid_order_raises(order):
    with pytest.raises(QuadratureError):
        gauss_hermite(order)


@pytest.mark.parametrize("order", range(1, 71))
def test_gaussian_moments_exact_up_to_degree_2n_minus_1(order):
    rule = gauss_hermite(order)
    for k in range(2 * order):
        value = rule.integrate(lambda x: x ** k)
        if k % 2:
            scale = float(np.sum(rule.weights * np.abs(rule.nodes) ** k))
            assert abs(value) <= 1e-10 * max(scale, 1.0)
        else:
            assert value == pytest.approx(math.gamma((k + 1) / 2), rel=1e-10)


def test_order_70_tenth_moment():
    exact = 945 * math.sqrt(math.pi) / 32
    assert gauss_hermite(70).integrate(lambda x: x ** 10) == pytest.approx(exact, rel=1e-12)
