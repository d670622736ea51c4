"""
Тесты для инициализации и Adam
"""

import numpy as np
import pytest

from ynet_core.exceptions import ShapeMismatch
from ynet_core.optim import (
    NORMAL_INIT_STD,
    AdamState,
    adam_step,
    normal_init,
    xavier_bound,
    xavier_init,
)


class TestInit:
    """Тесты инициализации весов"""

    def test_xavier_bound(self):
        """Тест границы Xavier для ядра 3x3x3"""
        assert xavier_bound((16, 4, 3, 3, 3)) == pytest.approx(
            np.sqrt(6.0 / (4 * 27 + 16 * 27))
        )

    def test_xavier_range(self):
        """Тест диапазона и типа"""
        rng = np.random.default_rng(0)
        w = xavier_init((8, 8, 3, 3, 3), rng)
        bound = xavier_bound(w.shape)
        assert w.dtype == np.float32
        assert np.abs(w).max() <= bound + 1e-6
        assert np.abs(w).max() > 0.9 * bound

    def test_normal_std(self):
        """Тест стандартного отклонения нормальной инициализации"""
        w = normal_init((32, 32, 3, 3, 3), np.random.default_rng(1))
        assert w.std() == pytest.approx(NORMAL_INIT_STD, rel=0.05)
        assert abs(w.mean()) < 0.005


class TestAdam:
    """Тесты оптимизатора Adam"""

    def setup_method(self):
        """Подготовка тестовых данных"""
        self.params = [np.array([1.0, -2.0]), np.array([[0.5]])]
        self.grads = [np.array([0.2, -0.4]), np.array([[3.0]])]

    def test_first_step_is_sign(self):
        """Тест первого шага: lr * g / (|g| + eps)"""
        state = AdamState.zeros_like(self.params, lr=0.01)
        new, state = adam_step(self.params, self.grads, state)
        assert state.step == 1
        assert np.allclose(new[0], [1.0 - 0.01, -2.0 + 0.01], atol=1e-9)
        assert np.allclose(new[1], [[0.5 - 0.01]], atol=1e-9)

    def test_two_steps_match_formula(self):
        """Тест двух шагов против явной формулы"""
        lr, b1, b2, eps = 0.05, 0.9, 0.999, 1e-8
        state = AdamState.zeros_like(self.params, lr=lr)
        p = self.params
        g2 = [np.array([0.1, 0.3]), np.array([[-1.0]])]
        p1, state = adam_step(p, self.grads, state)
        p2, state = adam_step(p1, g2, state)

        g1 = self.grads[0]
        m = (1 - b1) * g1
        v = (1 - b2) * g1**2
        x = p[0] - lr * (m / (1 - b1)) / (np.sqrt(v / (1 - b2)) + eps)
        m = b1 * m + (1 - b1) * np.array([0.1, 0.3])
        v = b2 * v + (1 - b2) * np.array([0.1, 0.3]) ** 2
        x = x - lr * (m / (1 - b1**2)) / (np.sqrt(v / (1 - b2**2)) + eps)
        assert np.allclose(p2[0], x)
        assert state.step == 2

    def test_inputs_unchanged(self):
        """Тест функциональности шага"""
        before = [p.copy() for p in self.params]
        state = AdamState.zeros_like(self.params)
        adam_step(self.params, self.grads, state)
        assert all(np.array_equal(a, b) for a, b in zip(before, self.params))
        assert state.step == 0

    def test_quadratic_converges(self):
        """Тест минимизации квадратичной функции"""
        params = [np.array([5.0, -4.0])]
        state = AdamState.zeros_like(params, lr=0.1)
        for _ in range(2000):
            params, state = adam_step(params, [2 * (params[0] - 3.0)], state)
        assert np.allclose(params[0], 3.0, atol=5e-2)

    def test_shape_mismatch(self):
        """Тест несовпадения форм"""
        state = AdamState.zeros_like(self.params)
        with pytest.raises(ShapeMismatch):
            adam_step(self.params, [np.zeros(3), np.zeros((1, 1))], state)
        with pytest.raises(ShapeMismatch):
            adam_step(self.params, self.grads[:1], state)
