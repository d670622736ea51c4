"""
Y-net: сверточный автоэнкодер с U-образными skip-связями и позиционным входом

Три ветви сети:
    - кодирующая (conv, act, conv, act, понижение) x n_levels
    - позиционная: три константных канала с нормированным центром патча
    - декодирующая (повышение, skip, conv, act, conv, act) x n_levels

Голова - свертка в один канал и сигмоида.
"""

import copy
import json
import logging
import struct
from enum import Enum
from pathlib import Path
from typing import (
    Any,
    Dict,
    List,
    NamedTuple,
    Optional,
    Protocol,
    Sequence,
    Tuple,
    Union,
)

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .exceptions import (
    BadConfig,
    BadMagic,
    ConfigMismatch,
    IoFailure,
    OutOfBounds,
    ShapeMismatch,
    TruncatedPayload,
)
from .optim import normal_init, xavier_init
from .rng import STREAM_MODEL_INIT, make_rng
from .tensor_ops import (
    KERNEL,
    Activation,
    ConvParams,
    activation,
    activation_backward,
    concat_channels,
    conv3d,
    conv3d_backward,
    conv_transpose3d,
    conv_transpose3d_backward,
    maxpool3d,
    maxpool3d_backward,
    split_channels,
    upsample3,
    upsample3_backward,
)

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

POSITION_CHANNELS = 3
CHECKPOINT_MAGIC = b"YNET"
CHECKPOINT_VERSION = 1
_U32 = struct.Struct("<I")


class Downsample(str, Enum):
    MAX_POOL = "max_pool"
    STRIDED_CONV = "strided_conv"


class Upsample(str, Enum):
    NEIGHBOR_PAD_CONV = "neighbor_pad_conv"
    STRIDED_DECONV = "strided_deconv"


class PositionSite(str, Enum):
    """Место подключения позиционных каналов"""

    ENCODER_FIRST = "encoder_first"
    ENCODER_LAST = "encoder_last"
    DECODER_LAST = "decoder_last"
    NONE = "none"


class InitKind(str, Enum):
    XAVIER = "xavier"
    NORMAL_RANDOM = "normal_random"


class Morphology(str, Enum):
    """Морфологическая постобработка бинарной маски"""

    NONE = "none"
    CLOSING = "closing"
    OPENING = "opening"


class YNetConfig(BaseModel):
    """Гиперпараметры архитектуры (значения по умолчанию - базовая конфигурация)"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    activation: Activation = Activation.RELU
    n_levels: int = Field(2, ge=1)
    base_kernels: int = Field(16, ge=1)
    downsample: Downsample = Downsample.MAX_POOL
    upsample: Upsample = Upsample.NEIGHBOR_PAD_CONV
    position_site: PositionSite = PositionSite.ENCODER_LAST
    init: InitKind = InitKind.XAVIER
    patch_size: int = Field(16, ge=2)
    morphology_post: Morphology = Morphology.NONE

    @model_validator(mode="after")
    def _patch_divisible(self) -> "YNetConfig":
        if self.patch_size % (2**self.n_levels):
            raise ValueError(
                f"patch_size={self.patch_size} не делится на 2^{self.n_levels}"
            )
        return self

    @classmethod
    def parse(cls, data: Dict[str, Any]) -> "YNetConfig":
        """Валидация словаря с ошибкой BadConfig вместо ValidationError"""
        try:
            return cls.model_validate(data)
        except ValidationError as e:
            raise BadConfig(f"Недопустимая конфигурация Y-net: {e}") from e


class LayerSpec(NamedTuple):
    """Сверточный слой в порядке построения"""

    name: str
    c_in: int
    c_out: int
    stride: int = 1
    transpose: bool = False


def layer_specs(config: YNetConfig) -> List[LayerSpec]:
    """
    Перечисление сверточных слоев сети

    Ширина уровня l кодировщика - base_kernels * 2^l, узкое место -
    base_kernels * 2^n_levels.
    """
    k, n_levels, site = config.base_kernels, config.n_levels, config.position_site
    specs: List[LayerSpec] = []

    c_in = 1 + (POSITION_CHANNELS if site is PositionSite.ENCODER_FIRST else 0)
    for level in range(n_levels):
        ch = k * 2**level
        specs.append(LayerSpec(f"enc{level + 1}_a", c_in, ch))
        specs.append(LayerSpec(f"enc{level + 1}_b", ch, ch))
        if config.downsample is Downsample.STRIDED_CONV:
            specs.append(LayerSpec(f"enc{level + 1}_down", ch, ch, stride=2))
        c_in = ch

    c = k * 2**n_levels
    extra = POSITION_CHANNELS if site is PositionSite.ENCODER_LAST else 0
    specs.append(LayerSpec("bottleneck", c_in + extra, c))

    for level in reversed(range(n_levels)):
        ch = k * 2**level
        if config.upsample is Upsample.STRIDED_DECONV:
            specs.append(
                LayerSpec(f"dec{level + 1}_up", c, c, stride=2, transpose=True)
            )
        specs.append(LayerSpec(f"dec{level + 1}_a", c + ch, ch))
        specs.append(LayerSpec(f"dec{level + 1}_b", ch, ch))
        c = ch

    extra = POSITION_CHANNELS if site is PositionSite.DECODER_LAST else 0
    specs.append(LayerSpec("head", c + extra, 1))
    return specs


def parameter_count(config: YNetConfig) -> int:
    """Сумма c_out * (c_in * 27 + 1) по всем слоям"""
    return sum(s.c_out * (s.c_in * KERNEL**3 + 1) for s in layer_specs(config))


def position_center(
    origin: Sequence[int], volume_dims: Sequence[int], patch_size: int = 16
) -> Tuple[float, float, float]:
    """
    Нормированный центр патча (cx, cy, cz) = (origin + patch/2) / dim

    Args:
        origin: Минимальный угол патча (x, y, z)
        volume_dims: Размеры объема (nx, ny, nz)
        patch_size: Ребро патча
    """
    for o, d in zip(origin, volume_dims):
        if o < 0 or o + patch_size > d:
            raise OutOfBounds(
                f"Патч {tuple(origin)} (ребро {patch_size}) вне {tuple(volume_dims)}"
            )
    return tuple(  # type: ignore[return-value]
        (o + patch_size / 2) / d for o, d in zip(origin, volume_dims)
    )


def normalized_centers(
    origins: np.ndarray, volume_dims: Sequence[int], patch_size: int = 16
) -> np.ndarray:
    """Центры для пакета origins формы (B, 3), результат (B, 3)"""
    return np.array(
        [position_center(o, volume_dims, patch_size) for o in np.asarray(origins)],
        dtype=np.float64,
    ).reshape(-1, 3)


def _position_block(
    centers: np.ndarray, spatial: Tuple[int, ...], dtype: Any
) -> np.ndarray:
    block = np.empty((centers.shape[0], POSITION_CHANNELS, *spatial), dtype=dtype)
    block[...] = centers.astype(dtype)[:, :, None, None, None]
    return block


def position_channels(
    origin: Sequence[int],
    volume_dims: Sequence[int],
    target_spatial: Tuple[int, int, int],
    patch_size: int = 16,
) -> np.ndarray:
    """Три константных канала (cx, cy, cz) формы (1, 3, d, h, w)"""
    center = np.array([position_center(origin, volume_dims, patch_size)])
    return _position_block(center, tuple(target_spatial), np.float64)


class PatchModel(Protocol):
    """Все, что умеет предсказывать пакет патчей"""

    @property
    def patch_size(self) -> int:
        ...

    def predict(self, batch: np.ndarray, centers: np.ndarray) -> np.ndarray:
        ...


class _Tape:
    """Записи прямого прохода, нужные для обратного"""

    def __init__(self) -> None:
        self.entries: List[tuple] = []


class YNetModel:
    """
    Модель Y-net: конфигурация и список сверточных слоев в порядке построения
    """

    def __init__(self, config: YNetConfig, layers: List[ConvParams]):
        specs = layer_specs(config)
        if len(layers) != len(specs):
            raise ConfigMismatch(
                f"Слоев {len(layers)}, конфигурация требует {len(specs)}"
            )
        for spec, layer in zip(specs, layers):
            if layer.weights.shape != (spec.c_out, spec.c_in, KERNEL, KERNEL, KERNEL):
                raise ConfigMismatch(f"{spec.name}: форма весов {layer.weights.shape}")
        self.config = config
        self.layers = layers
        self._specs = specs

    @property
    def patch_size(self) -> int:
        return self.config.patch_size

    @property
    def specs(self) -> List[LayerSpec]:
        return list(self._specs)

    @property
    def dtype(self) -> np.dtype:
        return self.layers[0].weights.dtype

    def n_parameters(self) -> int:
        return sum(layer.weights.size + layer.bias.size for layer in self.layers)

    def parameters(self) -> List[np.ndarray]:
        """Плоский список [w0, b0, w1, b1, ...]"""
        flat: List[np.ndarray] = []
        for layer in self.layers:
            flat.extend([layer.weights, layer.bias])
        return flat

    def with_parameters(self, flat: Sequence[np.ndarray]) -> "YNetModel":
        layers = [
            ConvParams(weights=flat[2 * i], bias=flat[2 * i + 1])
            for i in range(len(self.layers))
        ]
        return YNetModel(self.config, layers)

    def copy(self) -> "YNetModel":
        return YNetModel(self.config, copy.deepcopy(self.layers))

    def astype(self, dtype: Any) -> "YNetModel":
        return self.with_parameters([p.astype(dtype) for p in self.parameters()])

    # Прямой проход

    def _conv(
        self, h: np.ndarray, idx: int, kind: Activation, tape: Optional[_Tape]
    ) -> Tuple[np.ndarray, np.ndarray]:
        spec, params = self._specs[idx], self.layers[idx]
        if spec.transpose:
            pre = conv_transpose3d(h, params)
        else:
            pre = conv3d(h, params, stride=spec.stride)
        y = activation(pre, kind)
        if tape is not None:
            tape.entries.append(("conv", idx, h, pre, y, kind))
        return pre, y

    def _concat_position(
        self, h: np.ndarray, centers: np.ndarray, tape: Optional[_Tape]
    ) -> np.ndarray:
        if tape is not None:
            tape.entries.append(("concat_position", h.shape[1]))
        return concat_channels(h, _position_block(centers, h.shape[2:], h.dtype))

    def _run(
        self, batch: np.ndarray, centers: np.ndarray, tape: Optional[_Tape]
    ) -> Tuple[np.ndarray, np.ndarray]:
        cfg = self.config
        p = cfg.patch_size
        if batch.ndim != 5 or batch.shape[1:] != (1, p, p, p):
            raise ShapeMismatch(
                f"Ожидался пакет (B, 1, {p}, {p}, {p}), получено {batch.shape}"
            )
        centers = np.asarray(centers, dtype=np.float64)
        if centers.shape != (batch.shape[0], POSITION_CHANNELS):
            raise ShapeMismatch(
                f"Центры {centers.shape} не соответствуют пакету {batch.shape}"
            )

        act = cfg.activation
        site = cfg.position_site
        h = batch.astype(np.result_type(batch, self.dtype), copy=False)
        cursor = iter(range(len(self.layers)))
        skips: List[np.ndarray] = []

        if site is PositionSite.ENCODER_FIRST:
            h = self._concat_position(h, centers, tape)

        for level in range(cfg.n_levels):
            _, h = self._conv(h, next(cursor), act, tape)
            _, h = self._conv(h, next(cursor), act, tape)
            if tape is not None:
                tape.entries.append(("skip", level))
            skip = h
            if cfg.downsample is Downsample.STRIDED_CONV:
                _, h = self._conv(h, next(cursor), act, tape)
            else:
                shape = h.shape
                h, argmax = maxpool3d(h)
                if tape is not None:
                    tape.entries.append(("pool", argmax, shape))
            skips.append(skip)

        if site is PositionSite.ENCODER_LAST:
            h = self._concat_position(h, centers, tape)
        _, h = self._conv(h, next(cursor), act, tape)

        for level in reversed(range(cfg.n_levels)):
            if cfg.upsample is Upsample.STRIDED_DECONV:
                _, h = self._conv(h, next(cursor), act, tape)
            else:
                h = upsample3(h)
                if tape is not None:
                    tape.entries.append(("upsample",))
            if tape is not None:
                tape.entries.append(("concat_skip", h.shape[1], level))
            h = concat_channels(h, skips.pop())
            _, h = self._conv(h, next(cursor), act, tape)
            _, h = self._conv(h, next(cursor), act, tape)

        if site is PositionSite.DECODER_LAST:
            h = self._concat_position(h, centers, tape)
        logits, out = self._conv(h, next(cursor), Activation.SIGMOID, tape)
        return out, logits

    def forward(self, batch: np.ndarray, centers: np.ndarray) -> np.ndarray:
        """
        Прямой проход

        Args:
            batch: Патчи формы (B, 1, p, p, p)
            centers: Нормированные центры патчей (B, 3) в порядке (cx, cy, cz)

        Returns:
            probabilities: Выход сигмоиды формы (B, 1, p, p, p)
        """
        out, _ = self._run(batch, centers, None)
        return out

    def predict(self, batch: np.ndarray, centers: np.ndarray) -> np.ndarray:
        return self.forward(batch, centers)

    def forward_train(
        self, batch: np.ndarray, centers: np.ndarray
    ) -> Tuple[np.ndarray, _Tape]:
        """Прямой проход с записью промежуточных значений"""
        tape = _Tape()
        out, _ = self._run(batch, centers, tape)
        return out, tape

    # Обратный проход

    def backward(
        self, tape: _Tape, grad: np.ndarray, wrt_logits: bool = False
    ) -> List[np.ndarray]:
        """
        Градиенты по всем параметрам

        Args:
            tape: Запись из forward_train
            grad: Градиент по выходу сети (или по логитам головы)
            wrt_logits: grad уже взят по логитам, сигмоида головы пропускается

        Returns:
            grads: Плоский список в порядке parameters()
        """
        grads: List[Optional[ConvParams]] = [None] * len(self.layers)
        skip_grads: Dict[int, np.ndarray] = {}
        head_pending = wrt_logits

        for entry in reversed(tape.entries):
            op = entry[0]
            if op == "conv":
                _, idx, x_in, pre, y, kind = entry
                if head_pending:
                    head_pending = False
                else:
                    grad = activation_backward(pre, y, grad, kind)
                params = self.layers[idx]
                if self._specs[idx].transpose:
                    grad, grads[idx] = conv_transpose3d_backward(x_in, params, grad)
                else:
                    grad, grads[idx] = conv3d_backward(
                        x_in, params, grad, stride=self._specs[idx].stride
                    )
            elif op == "pool":
                _, argmax, shape = entry
                grad = maxpool3d_backward(grad, argmax, shape)
            elif op == "upsample":
                grad = upsample3_backward(grad)
            elif op == "concat_position":
                grad, _ = split_channels(grad, entry[1])
            elif op == "concat_skip":
                _, n_first, level = entry
                grad, skip_grads[level] = split_channels(grad, n_first)
            elif op == "skip":
                grad = grad + skip_grads.pop(entry[1])

        flat: List[np.ndarray] = []
        for layer_grad in grads:
            assert layer_grad is not None
            flat.extend([layer_grad.weights, layer_grad.bias])
        return flat


def build(config: YNetConfig, seed: int) -> YNetModel:
    """
    Построение модели со случайной инициализацией

    Args:
        config: Конфигурация
        seed: Зерно (поток STREAM_MODEL_INIT)

    Returns:
        model: Веса по config.init, смещения нулевые
    """
    if config.patch_size % (2**config.n_levels):
        raise BadConfig(
            f"patch_size={config.patch_size} не делится на 2^{config.n_levels}"
        )
    rng = make_rng(seed, STREAM_MODEL_INIT)
    init = xavier_init if config.init is InitKind.XAVIER else normal_init
    layers = []
    for spec in layer_specs(config):
        shape = (spec.c_out, spec.c_in, KERNEL, KERNEL, KERNEL)
        layers.append(
            ConvParams(
                weights=init(shape, rng),
                bias=np.zeros(spec.c_out, dtype=np.float32),
            )
        )
    model = YNetModel(config, layers)
    logger.debug("Y-net построена: %d параметров", model.n_parameters())
    return model


def _config_blob(config: YNetConfig) -> bytes:
    return json.dumps(config.model_dump(mode="json"), sort_keys=True).encode("utf-8")


def save_checkpoint(model: YNetModel, path: PathLike) -> None:
    """
    Сохранение модели: "YNET", u32 версия, u32 длина + JSON конфигурации,
    затем для каждого массива (веса, смещения слоя по порядку) u32 число
    элементов и значения float32
    """
    blob = _config_blob(model.config)
    chunks = [
        CHECKPOINT_MAGIC,
        _U32.pack(CHECKPOINT_VERSION),
        _U32.pack(len(blob)),
        blob,
    ]
    for array in model.parameters():
        chunks.append(_U32.pack(array.size))
        chunks.append(np.ascontiguousarray(array, dtype="<f4").tobytes())
    try:
        Path(path).write_bytes(b"".join(chunks))
    except OSError as e:
        raise IoFailure(f"Не удалось записать {path}: {e}") from e


def load_checkpoint(path: PathLike) -> YNetModel:
    """Загрузка модели; конфигурация читается из самого файла"""
    try:
        raw = Path(path).read_bytes()
    except OSError as e:
        raise IoFailure(f"Не удалось прочитать {path}: {e}") from e

    if raw[:4] != CHECKPOINT_MAGIC:
        raise BadMagic(f"{path}: сигнатура {raw[:4]!r} вместо {CHECKPOINT_MAGIC!r}")
    pos = 4

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(raw):
            raise TruncatedPayload(f"{path}: файл обрывается на байте {len(raw)}")
        chunk = raw[pos : pos + n]
        pos += n
        return chunk

    (version,) = _U32.unpack(take(4))
    if version != CHECKPOINT_VERSION:
        raise BadMagic(f"{path}: неподдерживаемая версия {version}")
    (blob_len,) = _U32.unpack(take(4))
    try:
        config = YNetConfig.model_validate(json.loads(take(blob_len).decode("utf-8")))
    except (ValidationError, ValueError) as e:
        raise ConfigMismatch(f"{path}: некорректная конфигурация: {e}") from e

    layers = []
    for spec in layer_specs(config):
        arrays = []
        for shape in ((spec.c_out, spec.c_in, KERNEL, KERNEL, KERNEL), (spec.c_out,)):
            (count,) = _U32.unpack(take(4))
            expected = int(np.prod(shape))
            if count != expected:
                raise ConfigMismatch(
                    f"{path}: слой {spec.name} хранит {count} значений, "
                    f"ожидалось {expected}"
                )
            values = np.frombuffer(take(4 * count), dtype="<f4")
            arrays.append(values.reshape(shape).copy())
        layers.append(ConvParams(weights=arrays[0], bias=arrays[1]))
    if pos != len(raw):
        raise ConfigMismatch(f"{path}: {len(raw) - pos} лишних байт после параметров")
    return YNetModel(config, layers)
