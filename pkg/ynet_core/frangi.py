"""
Многомасштабный фильтр сосудистости Frangi

Гессиан считается производными гауссиана (усечение 4 sigma, края
продолжаются) с нормировкой sigma^2. Собственные значения симметричных
3x3 матриц - замкнутая тригонометрическая формула, для почти скалярных
матриц - итерации Якоби.
"""

import logging
from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator
from scipy.ndimage import gaussian_filter

from .volume import Volume3D, VolumeKind

logger = logging.getLogger(__name__)

GAUSS_TRUNCATE = 4.0
DEGENERATE_TOL = 1e-12
JACOBI_SWEEPS = 12
# Ниже этой нормы гессиана отклик считается нулевым
HESSIAN_TOL = 1e-10


class FrangiParams(BaseModel):
    """Параметры фильтра"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    scales: List[float] = Field(default_factory=lambda: [0.75, 1.0, 1.5, 2.0])
    alpha: float = Field(0.5, gt=0)
    beta: float = Field(0.5, gt=0)
    c: Optional[float] = Field(None, gt=0)
    bright_on_dark: bool = True

    @field_validator("scales")
    @classmethod
    def _ascending(cls, v: List[float]) -> List[float]:
        if not v:
            raise ValueError("Нужен хотя бы один масштаб")
        if any(s <= 0 for s in v):
            raise ValueError(f"Масштабы должны быть положительными: {v}")
        if any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError(f"Масштабы должны строго возрастать: {v}")
        return v

    @field_validator("bright_on_dark")
    @classmethod
    def _bright_only(cls, v: bool) -> bool:
        if not v:
            raise ValueError("Поддерживаются только светлые сосуды на темном фоне")
        return v


def hessian(values: np.ndarray, sigma: float) -> np.ndarray:
    """
    Нормированный гессиан в каждом вокселе

    Returns:
        H: (..., 3, 3), оси массива (z, y, x)
    """
    if sigma <= 0:
        raise ValueError(f"sigma должна быть > 0, получено {sigma}")
    v = np.asarray(values, dtype=np.float64)
    h = np.empty(v.shape + (3, 3), dtype=np.float64)
    for i in range(3):
        for j in range(i, 3):
            order = [0, 0, 0]
            order[i] += 1
            order[j] += 1
            d = gaussian_filter(
                v, sigma, order=order, mode="nearest", truncate=GAUSS_TRUNCATE
            )
            h[..., i, j] = h[..., j, i] = d * sigma**2
    return h


def _jacobi_eigenvalues(a: np.ndarray) -> np.ndarray:
    """Циклический метод Якоби для пакета (n, 3, 3)"""
    a = a.copy()
    n = a.shape[0]
    for _ in range(JACOBI_SWEEPS):
        for p, q in ((0, 1), (0, 2), (1, 2)):
            apq = a[:, p, q]
            active = np.abs(apq) > 0
            safe = np.where(active, apq, 1.0)
            theta = (a[:, q, q] - a[:, p, p]) / (2.0 * safe)
            sign = np.where(theta >= 0, 1.0, -1.0)
            t = sign / (np.abs(theta) + np.sqrt(theta * theta + 1.0))
            t = np.where(active, t, 0.0)
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c
            rot = np.broadcast_to(np.eye(3), (n, 3, 3)).copy()
            rot[:, p, p] = c
            rot[:, q, q] = c
            rot[:, p, q] = s
            rot[:, q, p] = -s
            a = np.einsum("nji,njk,nkl->nil", rot, a, rot)
    return np.diagonal(a, axis1=1, axis2=2).copy()


def symmetric_eigenvalues(h: np.ndarray) -> np.ndarray:
    """
    Собственные значения симметричных 3x3 матриц, упорядоченные по модулю

    Args:
        h: (..., 3, 3)

    Returns:
        lambdas: (..., 3), |l1| <= |l2| <= |l3|
    """
    shape = h.shape[:-2]
    a = np.asarray(h, dtype=np.float64).reshape(-1, 3, 3)
    diag = np.diagonal(a, axis1=1, axis2=2)
    off = a[:, 0, 1] ** 2 + a[:, 0, 2] ** 2 + a[:, 1, 2] ** 2
    q = diag.sum(axis=1) / 3.0
    p2 = ((diag - q[:, None]) ** 2).sum(axis=1) + 2.0 * off
    frob2 = (a * a).sum(axis=(1, 2))
    degenerate = p2 <= DEGENERATE_TOL * frob2

    eig = np.empty((a.shape[0], 3), dtype=np.float64)
    ok = ~degenerate
    if np.any(ok):
        ak, qk = a[ok], q[ok]
        p = np.sqrt(p2[ok] / 6.0)
        b = (ak - qk[:, None, None] * np.eye(3)) / p[:, None, None]
        r = np.clip(np.linalg.det(b) / 2.0, -1.0, 1.0)
        phi = np.arccos(r) / 3.0
        e1 = qk + 2.0 * p * np.cos(phi)
        e3 = qk + 2.0 * p * np.cos(phi + 2.0 * np.pi / 3.0)
        eig[ok] = np.stack([e1, 3.0 * qk - e1 - e3, e3], axis=1)
    if np.any(degenerate):
        eig[degenerate] = _jacobi_eigenvalues(a[degenerate])

    order = np.argsort(np.abs(eig), axis=1, kind="stable")
    return np.take_along_axis(eig, order, axis=1).reshape(shape + (3,))


def hessian_eigenvalues(
    vol: Volume3D, sigma: float
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(l1, l2, l3) формы (nz, ny, nx) с |l1| <= |l2| <= |l3|"""
    lambdas = symmetric_eigenvalues(hessian(vol.data, sigma))
    return lambdas[..., 0], lambdas[..., 1], lambdas[..., 2]


def _vesselness_at_scale(
    l1: np.ndarray, l2: np.ndarray, l3: np.ndarray, params: FrangiParams
) -> np.ndarray:
    a2, a3 = np.abs(l2), np.abs(l3)
    with np.errstate(divide="ignore", invalid="ignore"):
        r_a = np.where(a3 > 0, a2 / a3, 0.0)
        denom = np.sqrt(a2 * a3)
        r_b = np.where(denom > 0, np.abs(l1) / np.where(denom > 0, denom, 1.0), 0.0)
    s = np.sqrt(l1 * l1 + l2 * l2 + l3 * l3)
    c = params.c if params.c is not None else 0.5 * float(s.max())

    v = (1.0 - np.exp(-(r_a**2) / (2 * params.alpha**2))) * np.exp(
        -(r_b**2) / (2 * params.beta**2)
    )
    if c > HESSIAN_TOL:
        v = v * (1.0 - np.exp(-(s**2) / (2 * c**2)))
    else:
        v = np.zeros_like(v)
    v[(l2 > 0) | (l3 > 0) | (s <= HESSIAN_TOL)] = 0.0
    return v


def frangi_vesselness(vol: Volume3D, params: Optional[FrangiParams] = None) -> Volume3D:
    """
    Сосудистость: максимум отклика по масштабам

    Args:
        vol: Нормированный объем
        params: Параметры фильтра

    Returns:
        probability: Volume3D(kind=Probability) со значениями в [0, 1]
    """
    params = params or FrangiParams()
    out = np.zeros(vol.data.shape, dtype=np.float64)
    for sigma in params.scales:
        l1, l2, l3 = hessian_eigenvalues(vol, sigma)
        out = np.maximum(out, _vesselness_at_scale(l1, l2, l3, params))
        logger.debug("Frangi sigma=%.2f: max=%.4f", sigma, float(out.max()))
    return vol.with_data(np.clip(out, 0.0, 1.0), VolumeKind.PROBABILITY)
