"""
Инициализация параметров и оптимизатор Adam
"""

from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from .exceptions import ShapeMismatch

NORMAL_INIT_STD = 0.05


def _conv_fans(shape: Sequence[int]) -> Tuple[int, int]:
    """fan_in = c_in * 27, fan_out = c_out * 27 для ядра (c_out, c_in, 3, 3, 3)"""
    receptive = int(np.prod(shape[2:])) if len(shape) > 2 else 1
    fan_out = int(shape[0]) * receptive
    fan_in = int(shape[1]) * receptive if len(shape) > 1 else int(shape[0])
    return fan_in, fan_out


def xavier_bound(shape: Sequence[int]) -> float:
    fan_in, fan_out = _conv_fans(shape)
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


def xavier_init(
    shape: Sequence[int], rng: np.random.Generator, dtype: type = np.float32
) -> np.ndarray:
    """
    Равномерная инициализация Xavier

    Args:
        shape: Форма весов (c_out, c_in, 3, 3, 3)
        rng: Генератор случайных чисел
        dtype: Тип результата

    Returns:
        weights: Значения из U[-sqrt(6/(fan_in+fan_out)), +sqrt(6/(fan_in+fan_out))]
    """
    bound = xavier_bound(shape)
    return rng.uniform(-bound, bound, size=tuple(shape)).astype(dtype)


def normal_init(
    shape: Sequence[int], rng: np.random.Generator, dtype: type = np.float32
) -> np.ndarray:
    """Нормальное распределение N(0, 0.05^2)"""
    return rng.normal(0.0, NORMAL_INIT_STD, size=tuple(shape)).astype(dtype)


@dataclass
class AdamState:
    """
    Состояние Adam: шаг и моменты для каждого массива параметров
    """

    m: List[np.ndarray]
    v: List[np.ndarray]
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def zeros_like(cls, params: Sequence[np.ndarray], **hyper: float) -> "AdamState":
        return cls(
            m=[np.zeros_like(p) for p in params],
            v=[np.zeros_like(p) for p in params],
            **hyper,  # type: ignore[arg-type]
        )


def adam_step(
    params: Sequence[np.ndarray],
    grads: Sequence[np.ndarray],
    state: AdamState,
) -> Tuple[List[np.ndarray], AdamState]:
    """
    Один шаг Adam с коррекцией смещения

    m <- b1*m + (1-b1)*g; v <- b2*v + (1-b2)*g^2;
    p <- p - lr * m_hat / (sqrt(v_hat) + eps)

    Args:
        params: Массивы параметров
        grads: Градиенты той же формы
        state: Текущее состояние

    Returns:
        (new_params, new_state): входные массивы не изменяются
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeMismatch(
            f"Параметров {len(params)}, градиентов {len(grads)}, "
            f"моментов {len(state.m)}"
        )
    for p, g, m in zip(params, grads, state.m):
        if p.shape != g.shape or p.shape != m.shape:
            raise ShapeMismatch(f"Формы не совпадают: {p.shape}, {g.shape}, {m.shape}")

    step = state.step + 1
    b1, b2 = state.beta1, state.beta2
    correction1 = 1.0 - b1**step
    correction2 = 1.0 - b2**step

    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * (g * g)
        m_hat = m / correction1
        v_hat = v / correction2
        update = state.lr * m_hat / (np.sqrt(v_hat) + state.epsilon)
        new_params.append((p - update).astype(p.dtype))
        new_m.append(m.astype(p.dtype))
        new_v.append(v.astype(p.dtype))

    new_state = AdamState(
        m=new_m,
        v=new_v,
        step=step,
        lr=state.lr,
        beta1=b1,
        beta2=b2,
        epsilon=state.epsilon,
    )
    return new_params, new_state
