"""
Проверка градиентов центральными конечными разностями
"""

from typing import Callable, Optional

import numpy as np

FD_STEP = 1e-3


def numeric_gradient(
    f: Callable[[], float],
    x: np.ndarray,
    step: float = FD_STEP,
    indices: Optional[np.ndarray] = None,
) -> np.ndarray:
    """
    Численный градиент скалярной функции по массиву x

    x изменяется на месте и восстанавливается после каждой пробы,
    поэтому f должна читать x по ссылке.

    Args:
        f: Функция без аргументов, возвращающая скаляр
        x: Массив (float64)
        step: Шаг разности
        indices: Плоские индексы для проверки (по умолчанию все)

    Returns:
        grad: Массив формы x; непроверенные элементы равны 0
    """
    grad = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    flat_grad = grad.reshape(-1)
    positions = np.arange(flat.size) if indices is None else indices
    for i in positions:
        original = flat[i]
        flat[i] = original + step
        f_plus = f()
        flat[i] = original - step
        f_minus = f()
        flat[i] = original
        flat_grad[i] = (f_plus - f_minus) / (2 * step)
    return grad


def max_relative_error(
    analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8
) -> float:
    """max |a - n| / max(|a|, |n|, floor) по всем элементам"""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    scale = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / scale)) if a.size else 0.0


def gradients_close(
    analytic: np.ndarray, numeric: np.ndarray, rtol: float = 1e-4, atol: float = 1e-8
) -> bool:
    """|a - n| <= rtol * max(|a|, |n|) + atol поэлементно"""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return bool(np.all(np.abs(a - n) <= rtol * np.maximum(np.abs(a), np.abs(n)) + atol))
