"""
Операции над 5-мерными тензорами (n, c, d, h, w) с ручными градиентами

Свертка реализована как кросс-корреляция (без разворота ядра) с
нулевым дополнением "same". Все функции чистые.
"""

from dataclasses import dataclass
from enum import Enum
from itertools import product
from typing import Tuple

import numpy as np
from scipy.special import expit

from .exceptions import OddSpatialDim, ShapeMismatch

KERNEL = 3
BCE_EPS = 1e-7

_OFFSETS = list(product(range(KERNEL), repeat=3))


class Activation(str, Enum):
    """Функция активации"""

    RELU = "relu"
    TANH = "tanh"
    SIGMOID = "sigmoid"


@dataclass
class ConvParams:
    """Веса (c_out, c_in, 3, 3, 3) и смещения (c_out,) сверточного слоя"""

    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self) -> None:
        if self.weights.ndim != 5 or self.weights.shape[2:] != (KERNEL,) * 3:
            raise ShapeMismatch(f"Ядро должно быть кубом 3: {self.weights.shape}")
        if self.bias.shape != (self.weights.shape[0],):
            raise ShapeMismatch(
                f"Смещения {self.bias.shape} не соответствуют "
                f"весам {self.weights.shape}"
            )

    @property
    def c_out(self) -> int:
        return int(self.weights.shape[0])

    @property
    def c_in(self) -> int:
        return int(self.weights.shape[1])


def _check_5d(x: np.ndarray, name: str = "x") -> None:
    if x.ndim != 5:
        raise ShapeMismatch(f"{name}: ожидался 5D тензор, получено {x.shape}")


def _strided_slices(i: int, j: int, k: int, out: Tuple[int, ...], stride: int) -> tuple:
    od, oh, ow = out
    return (
        slice(None),
        slice(None),
        slice(i, i + stride * (od - 1) + 1, stride),
        slice(j, j + stride * (oh - 1) + 1, stride),
        slice(k, k + stride * (ow - 1) + 1, stride),
    )


def _conv_out_shape(x: np.ndarray, stride: int) -> Tuple[int, int, int]:
    spatial = x.shape[2:]
    if min(spatial) < 1:
        raise ShapeMismatch(f"Пустые пространственные размеры: {x.shape}")
    if stride == 1:
        return tuple(spatial)  # type: ignore[return-value]
    if stride != 2:
        raise ShapeMismatch(f"Поддерживается шаг 1 или 2, получено {stride}")
    if any(s % 2 for s in spatial):
        raise OddSpatialDim(f"Свертка с шагом 2 требует четных размеров: {x.shape}")
    return tuple(s // 2 for s in spatial)  # type: ignore[return-value]


def conv3d(x: np.ndarray, p: ConvParams, stride: int = 1) -> np.ndarray:
    """
    3D свертка 3x3x3 с нулевым дополнением

    Args:
        x: Вход, shape (n, c_in, d, h, w)
        p: Параметры слоя
        stride: Шаг (1 или 2)

    Returns:
        y: Выход, shape (n, c_out, d/stride, h/stride, w/stride)
    """
    _check_5d(x)
    if x.shape[1] != p.c_in:
        raise ShapeMismatch(f"Каналов на входе {x.shape[1]}, слой ждет {p.c_in}")
    out_shape = _conv_out_shape(x, stride)

    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1), (1, 1)))
    dtype = np.result_type(x, p.weights)
    acc = np.zeros((x.shape[0], *out_shape, p.c_out), dtype=dtype)
    for i, j, k in _OFFSETS:
        window = xp[_strided_slices(i, j, k, out_shape, stride)]
        acc += np.tensordot(window, p.weights[:, :, i, j, k], axes=([1], [1]))
    y = np.moveaxis(acc, -1, 1) + p.bias.reshape(1, -1, 1, 1, 1)
    return np.ascontiguousarray(y, dtype=dtype)


def conv3d_backward(
    x: np.ndarray, p: ConvParams, grad_out: np.ndarray, stride: int = 1
) -> Tuple[np.ndarray, ConvParams]:
    """
    Градиенты свертки по входу, весам и смещениям

    Returns:
        (grad_x, grad_p): grad_p.weights и grad_p.bias повторяют формы p
    """
    _check_5d(x)
    out_shape = _conv_out_shape(x, stride)
    if grad_out.shape != (x.shape[0], p.c_out, *out_shape):
        raise ShapeMismatch(f"grad_out {grad_out.shape} не совпадает с выходом слоя")

    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1), (1, 1)))
    g = np.moveaxis(grad_out, 1, -1)
    grad_xp = np.zeros_like(xp, dtype=np.result_type(x, grad_out))
    grad_w = np.zeros_like(p.weights, dtype=np.result_type(p.weights, grad_out))
    for i, j, k in _OFFSETS:
        sl = _strided_slices(i, j, k, out_shape, stride)
        grad_w[:, :, i, j, k] = np.tensordot(
            g, xp[sl], axes=([0, 1, 2, 3], [0, 2, 3, 4])
        )
        grad_xp[sl] += np.moveaxis(
            np.tensordot(g, p.weights[:, :, i, j, k], axes=([4], [0])), -1, 1
        )
    grad_b = grad_out.sum(axis=(0, 2, 3, 4))
    grad_x = np.ascontiguousarray(grad_xp[:, :, 1:-1, 1:-1, 1:-1])
    return grad_x, ConvParams(weights=grad_w, bias=grad_b.astype(grad_w.dtype))


def conv_transpose3d(x: np.ndarray, p: ConvParams) -> np.ndarray:
    """
    Транспонированная свертка 3x3x3 с шагом 2 (удваивает размеры)

    Args:
        x: Вход, shape (n, c_in, d, h, w)
        p: Параметры, веса shape (c_out, c_in, 3, 3, 3)

    Returns:
        y: Выход, shape (n, c_out, 2d, 2h, 2w)
    """
    _check_5d(x)
    if x.shape[1] != p.c_in:
        raise ShapeMismatch(f"Каналов на входе {x.shape[1]}, слой ждет {p.c_in}")
    n = x.shape[0]
    in_shape = x.shape[2:]
    out_shape = tuple(2 * s for s in in_shape)
    dtype = np.result_type(x, p.weights)

    acc = np.zeros((n, *(s + 2 for s in out_shape), p.c_out), dtype=dtype)
    for i, j, k in _OFFSETS:
        sl = _strided_slices(i, j, k, in_shape, 2)[2:]
        acc[(slice(None), *sl)] += np.tensordot(
            x, p.weights[:, :, i, j, k], axes=([1], [1])
        )
    y = np.moveaxis(acc[:, 1:-1, 1:-1, 1:-1, :], -1, 1) + p.bias.reshape(1, -1, 1, 1, 1)
    return np.ascontiguousarray(y, dtype=dtype)


def conv_transpose3d_backward(
    x: np.ndarray, p: ConvParams, grad_out: np.ndarray
) -> Tuple[np.ndarray, ConvParams]:
    """Градиенты транспонированной свертки"""
    _check_5d(x)
    in_shape = x.shape[2:]
    if grad_out.shape != (x.shape[0], p.c_out, *(2 * s for s in in_shape)):
        raise ShapeMismatch(f"grad_out {grad_out.shape} не совпадает с выходом слоя")

    gp = np.pad(np.moveaxis(grad_out, 1, -1), ((0, 0), (1, 1), (1, 1), (1, 1), (0, 0)))
    grad_x = np.zeros_like(x, dtype=np.result_type(x, grad_out))
    grad_w = np.zeros_like(p.weights, dtype=np.result_type(p.weights, grad_out))
    for i, j, k in _OFFSETS:
        sl = (slice(None), *_strided_slices(i, j, k, in_shape, 2)[2:])
        window = gp[sl]
        grad_x += np.moveaxis(
            np.tensordot(window, p.weights[:, :, i, j, k], axes=([4], [0])), -1, 1
        )
        grad_w[:, :, i, j, k] = np.tensordot(
            window, x, axes=([0, 1, 2, 3], [0, 2, 3, 4])
        )
    grad_b = grad_out.sum(axis=(0, 2, 3, 4))
    return grad_x, ConvParams(weights=grad_w, bias=grad_b.astype(grad_w.dtype))


def maxpool3d(x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Max-pooling неперекрывающимися окнами 2x2x2

    Returns:
        (y, argmax): argmax - индекс победителя 0..7 в порядке обхода окна
        (z, y, x), при равенстве выигрывает первый
    """
    _check_5d(x)
    n, c, d, h, w = x.shape
    if d % 2 or h % 2 or w % 2:
        raise OddSpatialDim(f"Пулинг 2x2x2 требует четных размеров: {x.shape}")
    windows = (
        x.reshape(n, c, d // 2, 2, h // 2, 2, w // 2, 2)
        .transpose(0, 1, 2, 4, 6, 3, 5, 7)
        .reshape(n, c, d // 2, h // 2, w // 2, 8)
    )
    argmax = windows.argmax(axis=-1)
    y = np.take_along_axis(windows, argmax[..., None], axis=-1)[..., 0]
    return y, argmax


def maxpool3d_backward(
    grad_y: np.ndarray, argmax: np.ndarray, x_shape: Tuple[int, ...]
) -> np.ndarray:
    """Градиент пулинга: все направляется в записанный argmax"""
    n, c, d, h, w = x_shape
    windows = np.zeros((*argmax.shape, 8), dtype=grad_y.dtype)
    np.put_along_axis(windows, argmax[..., None], grad_y[..., None], axis=-1)
    return (
        windows.reshape(n, c, d // 2, h // 2, w // 2, 2, 2, 2)
        .transpose(0, 1, 2, 5, 3, 6, 4, 7)
        .reshape(x_shape)
    )


def upsample3(x: np.ndarray) -> np.ndarray:
    """Повторение каждого вокселя в блок 2x2x2"""
    _check_5d(x)
    return x.repeat(2, axis=2).repeat(2, axis=3).repeat(2, axis=4)


def upsample3_backward(grad_y: np.ndarray) -> np.ndarray:
    """Сумма восьми градиентов каждого блока"""
    n, c, d, h, w = grad_y.shape
    return grad_y.reshape(n, c, d // 2, 2, h // 2, 2, w // 2, 2).sum(axis=(3, 5, 7))


def concat_channels(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Конкатенация по оси каналов [каналы a | каналы b]"""
    _check_5d(a, "a")
    _check_5d(b, "b")
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ShapeMismatch(f"Нельзя объединить {a.shape} и {b.shape}")
    return np.concatenate([a, b], axis=1)


def split_channels(grad: np.ndarray, n_first: int) -> Tuple[np.ndarray, np.ndarray]:
    """Обратный проход конкатенации: разрез градиента на границе"""
    return grad[:, :n_first], grad[:, n_first:]


def activation(x: np.ndarray, kind: Activation) -> np.ndarray:
    """Поэлементная активация"""
    kind = Activation(kind)
    if kind is Activation.RELU:
        return np.maximum(x, 0)
    if kind is Activation.TANH:
        return np.tanh(x)
    return expit(x)


def activation_backward(
    x: np.ndarray, y: np.ndarray, grad_y: np.ndarray, kind: Activation
) -> np.ndarray:
    """
    Градиент активации

    Args:
        x: Вход активации
        y: Выход активации
        grad_y: Градиент по выходу
        kind: Тип активации (ReLU'(0) = 0)
    """
    kind = Activation(kind)
    if kind is Activation.RELU:
        return grad_y * (x > 0)
    if kind is Activation.TANH:
        return grad_y * (1 - y * y)
    return grad_y * y * (1 - y)


def bce_loss(pred: np.ndarray, target: np.ndarray) -> float:
    """
    Бинарная кросс-энтропия, среднее по всем элементам

    pred ограничивается в [eps, 1 - eps], eps = 1e-7
    """
    if pred.shape != target.shape:
        raise ShapeMismatch(f"pred {pred.shape} и target {target.shape} различаются")
    p = np.clip(pred.astype(np.float64), BCE_EPS, 1 - BCE_EPS)
    t = target.astype(np.float64)
    return float(np.mean(-(t * np.log(p) + (1 - t) * np.log(1 - p))))


def bce_loss_backward(pred: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Градиент BCE по pred (ноль там, где сработало ограничение)"""
    if pred.shape != target.shape:
        raise ShapeMismatch(f"pred {pred.shape} и target {target.shape} различаются")
    inside = (pred > BCE_EPS) & (pred < 1 - BCE_EPS)
    p = np.clip(pred, BCE_EPS, 1 - BCE_EPS)
    grad = (p - target) / (p * (1 - p)) / pred.size
    return np.where(inside, grad, 0).astype(pred.dtype)


def bce_logits_backward(pred: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Градиент BCE по логитам сигмоидной головы: (p - t) / N"""
    if pred.shape != target.shape:
        raise ShapeMismatch(f"pred {pred.shape} и target {target.shape} различаются")
    return ((pred - target) / pred.size).astype(pred.dtype)
