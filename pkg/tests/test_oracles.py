import itertools

import numpy as np
import pytest

from fedattr.oracles import fd_gradient, shapley_bruteforce


def full_table(n, fn):
    return {
        frozenset(s): fn(frozenset(s))
        for r in range(n + 1)
        for s in itertools.combinations(range(n), r)
    }


def test_bruteforce_additive_game_returns_addends():
    weights = [1.0, -2.0, 0.5]
    table = full_table(3, lambda s: sum(weights[i] for i in s))
    assert np.allclose(shapley_bruteforce(table, 3), weights, atol=1e-12)


def test_bruteforce_single_player():
    table = {frozenset(): 1.0, frozenset([0]): 4.0}
    assert shapley_bruteforce(table, 1)[0] == pytest.approx(3.0)


def test_bruteforce_guard():
    with pytest.raises(ValueError):
        shapley_bruteforce({}, 9)


def test_fd_gradient_quadratic():
    x = np.array([1.0, -2.0, 0.5])
    grad = fd_gradient(lambda v: float(v @ v), x, 1e-5)
    assert np.allclose(grad, 2 * x, atol=1e-6)


def test_fd_gradient_constant():
    grad = fd_gradient(lambda v: 3.0, np.ones(4), 1e-5)
    assert np.array_equal(grad, np.zeros(4))


def test_fd_gradient_sin_sum():
    x = np.linspace(-1, 1, 5)
    grad = fd_gradient(lambda v: float(np.sin(v).sum()), x, 1e-5)
    assert np.allclose(grad, np.cos(x), atol=1e-6)


def test_fd_gradient_step_validation():
    with pytest.raises(ValueError):
        fd_gradient(lambda v: 0.0, np.ones(2), 0.0)
