"""
Тесты для модели Y-net: архитектура, позиционный вход, градиенты, чекпоинты
"""

import numpy as np
import pytest

from ynet_core.exceptions import (
    BadConfig,
    BadMagic,
    ConfigMismatch,
    IoFailure,
    OutOfBounds,
    ShapeMismatch,
    TruncatedPayload,
)
from ynet_core.gradcheck import gradients_close, max_relative_error, numeric_gradient
from ynet_core.optim import xavier_bound
from ynet_core.tensor_ops import bce_logits_backward, bce_loss, bce_loss_backward
from ynet_core.ynet import (
    YNetConfig,
    YNetModel,
    build,
    layer_specs,
    load_checkpoint,
    normalized_centers,
    parameter_count,
    position_center,
    position_channels,
    save_checkpoint,
)

SMALL = {"n_levels": 1, "base_kernels": 2, "patch_size": 8}


def _batch(rng, n=2, p=8):
    batch = rng.random((n, 1, p, p, p))
    centers = rng.random((n, 3))
    target = (rng.random(batch.shape) > 0.7).astype(np.float64)
    return batch, centers, target


class TestArchitecture:
    """Тесты перечня слоев"""

    def test_default_layers(self):
        """Тест слоев базовой конфигурации"""
        specs = layer_specs(YNetConfig())
        assert [(s.name, s.c_in, s.c_out) for s in specs] == [
            ("enc1_a", 1, 16),
            ("enc1_b", 16, 16),
            ("enc2_a", 16, 32),
            ("enc2_b", 32, 32),
            ("bottleneck", 35, 64),
            ("dec2_a", 96, 32),
            ("dec2_b", 32, 32),
            ("dec1_a", 48, 16),
            ("dec1_b", 16, 16),
            ("head", 16, 1),
        ]

    def test_position_sites(self):
        """Тест места подключения позиционных каналов"""
        first = layer_specs(YNetConfig(position_site="encoder_first"))
        last = layer_specs(YNetConfig(position_site="decoder_last"))
        assert first[0].c_in == 4
        assert last[-1].c_in == 19
        none = YNetConfig(position_site="none")
        assert parameter_count(YNetConfig()) - parameter_count(none) == 3 * 27 * 64

    def test_strided_layers(self):
        """Тест слоев с шагом 2"""
        cfg = YNetConfig(downsample="strided_conv", upsample="strided_deconv", **SMALL)
        specs = {s.name: s for s in layer_specs(cfg)}
        assert specs["enc1_down"].stride == 2
        assert specs["dec1_up"].transpose

    def test_parameter_count(self):
        """Тест числа параметров построенной модели"""
        cfg = YNetConfig(**SMALL)
        assert build(cfg, 0).n_parameters() == parameter_count(cfg)

    def test_patch_not_divisible(self):
        """Тест размера патча, не делящегося на 2^n_levels"""
        with pytest.raises(BadConfig):
            YNetConfig.parse({"n_levels": 2, "patch_size": 12})

    def test_unknown_key(self):
        """Тест неизвестного ключа конфигурации"""
        with pytest.raises(BadConfig):
            YNetConfig.parse({"bogus": 1})

    def test_mismatched_layers(self):
        """Тест несовпадения слоев и конфигурации"""
        model = build(YNetConfig(**SMALL), 0)
        with pytest.raises(ConfigMismatch):
            YNetModel(YNetConfig(**SMALL), model.layers[:-1])


class TestPosition:
    """Тесты нормированных центров"""

    def test_center(self):
        """Тест центра патча в начале объема"""
        assert position_center((0, 0, 0), (64, 64, 64)) == (0.125, 0.125, 0.125)
        assert position_center((48, 0, 16), (64, 32, 64)) == (0.875, 0.25, 0.375)

    def test_out_of_bounds(self):
        """Тест патча за краем объема"""
        with pytest.raises(OutOfBounds):
            position_center((50, 0, 0), (64, 64, 64))
        with pytest.raises(OutOfBounds):
            position_center((-1, 0, 0), (64, 64, 64))

    def test_channels_constant(self):
        """Тест трех константных каналов"""
        block = position_channels((0, 16, 32), (64, 64, 64), (4, 4, 4))
        assert block.shape == (1, 3, 4, 4, 4)
        assert np.all(block[0, 0] == 0.125)
        assert np.all(block[0, 1] == 0.375)
        assert np.all(block[0, 2] == 0.625)

    def test_normalized_centers(self):
        """Тест пакета центров"""
        centers = normalized_centers(np.array([[0, 0, 0], [8, 8, 8]]), (32, 32, 32), 16)
        assert np.allclose(centers, [[0.25] * 3, [0.5] * 3])


class TestForward:
    """Тесты прямого прохода"""

    def setup_method(self):
        """Подготовка модели"""
        self.rng = np.random.default_rng(0)
        self.model = build(YNetConfig(**SMALL), seed=1)

    def test_output_shape_and_range(self):
        """Тест формы и диапазона выхода"""
        batch, centers, _ = _batch(self.rng, n=3)
        out = self.model.forward(batch, centers)
        assert out.shape == (3, 1, 8, 8, 8)
        assert np.all((out > 0) & (out < 1))

    def test_deterministic_build(self):
        """Тест воспроизводимой инициализации"""
        a = build(YNetConfig(**SMALL), seed=5)
        b = build(YNetConfig(**SMALL), seed=5)
        c = build(YNetConfig(**SMALL), seed=6)
        assert all(np.array_equal(x, y) for x, y in zip(a.parameters(), b.parameters()))
        assert not np.array_equal(a.parameters()[0], c.parameters()[0])

    def test_xavier_and_zero_bias(self):
        """Тест инициализации весов и смещений"""
        for spec, layer in zip(self.model.specs, self.model.layers):
            assert np.all(layer.bias == 0)
            bound = xavier_bound(layer.weights.shape)
            assert np.abs(layer.weights).max() <= bound + 1e-6
            assert spec.c_out == layer.c_out

    def test_position_changes_output(self):
        """Тест влияния позиции на выход"""
        batch, _, _ = _batch(self.rng, n=1)
        a = self.model.forward(batch, np.array([[0.1, 0.1, 0.1]]))
        b = self.model.forward(batch, np.array([[0.9, 0.9, 0.9]]))
        assert not np.allclose(a, b)

    def test_no_position_ignores_centers(self):
        """Тест модели без позиционного пути"""
        model = build(YNetConfig(position_site="none", **SMALL), seed=1)
        batch, _, _ = _batch(self.rng, n=1)
        a = model.forward(batch, np.array([[0.1, 0.1, 0.1]]))
        b = model.forward(batch, np.array([[0.9, 0.9, 0.9]]))
        assert np.array_equal(a, b)

    def test_repeated_forward(self):
        """Тест отсутствия состояния между вызовами"""
        batch, centers, _ = _batch(self.rng)
        a = self.model.predict(batch, centers)
        b = self.model.predict(batch, centers)
        assert np.array_equal(a, b)

    def test_bad_batch(self):
        """Тест неверной формы пакета и центров"""
        with pytest.raises(ShapeMismatch):
            self.model.forward(np.zeros((1, 1, 4, 4, 4)), np.zeros((1, 3)))
        with pytest.raises(ShapeMismatch):
            self.model.forward(np.zeros((2, 1, 8, 8, 8)), np.zeros((1, 3)))


class TestModelGradients:
    """Проверка градиентов всей сети (float64)"""

    def setup_method(self):
        """Подготовка тестовых данных"""
        self.rng = np.random.default_rng(3)

    def _check(self, config):
        model = build(config, seed=2).astype(np.float64)
        batch, centers, target = _batch(self.rng)

        def loss():
            return bce_loss(model.forward(batch, centers), target)

        out, tape = model.forward_train(batch, centers)
        grads = model.backward(tape, bce_loss_backward(out, target))
        for param, grad in zip(model.parameters(), grads):
            assert grad.shape == param.shape
            idx = self.rng.choice(param.size, size=min(param.size, 8), replace=False)
            numeric = numeric_gradient(loss, param, step=1e-6, indices=idx)
            analytic = grad.reshape(-1)[idx]
            assert gradients_close(analytic, numeric.reshape(-1)[idx], 1e-3, 1e-9)

    @pytest.mark.parametrize(
        "variant",
        [
            {},
            {"position_site": "encoder_first"},
            {"position_site": "decoder_last"},
            {"position_site": "none"},
            {"downsample": "strided_conv", "upsample": "strided_deconv"},
        ],
    )
    def test_tanh_variants(self, variant):
        """Тест градиентов вариантов архитектуры с tanh"""
        self._check(YNetConfig(activation="tanh", **SMALL, **variant))

    def test_sigmoid_two_levels(self):
        """Тест градиентов двухуровневой сети с сигмоидой"""
        cfg = YNetConfig(activation="sigmoid", n_levels=2, base_kernels=2, patch_size=8)
        self._check(cfg)

    def test_relu_directional(self):
        """Тест производной по случайному направлению для ReLU"""
        model = build(YNetConfig(**SMALL), seed=4).astype(np.float64)
        batch, centers, target = _batch(self.rng)
        out, tape = model.forward_train(batch, centers)
        grads = model.backward(tape, bce_loss_backward(out, target))

        direction = [self.rng.normal(size=p.shape) for p in model.parameters()]
        analytic = sum(float(np.sum(g * d)) for g, d in zip(grads, direction))
        h = 1e-6

        def shifted(sign):
            params = [p + sign * h * d for p, d in zip(model.parameters(), direction)]
            shifted_model = model.with_parameters(params)
            return bce_loss(shifted_model.forward(batch, centers), target)

        numeric = (shifted(1.0) - shifted(-1.0)) / (2 * h)
        assert max_relative_error(np.array([analytic]), np.array([numeric])) < 1e-3

    def test_logits_shortcut(self):
        """Тест градиента по логитам против цепочки через сигмоиду"""
        model = build(YNetConfig(**SMALL), seed=4).astype(np.float64)
        batch, centers, target = _batch(self.rng)
        out, tape = model.forward_train(batch, centers)
        chained = model.backward(tape, bce_loss_backward(out, target))
        fused = model.backward(tape, bce_logits_backward(out, target), wrt_logits=True)
        for a, b in zip(chained, fused):
            assert np.allclose(a, b, rtol=1e-6, atol=1e-12)


class TestCheckpoint:
    """Тесты сохранения и загрузки"""

    def setup_method(self):
        """Подготовка модели"""
        self.config = YNetConfig(position_site="decoder_last", **SMALL)
        self.model = build(self.config, seed=9)

    def test_round_trip(self, tmp_path):
        """Тест совпадения параметров и предсказаний"""
        path = tmp_path / "m.ynet"
        save_checkpoint(self.model, path)
        loaded = load_checkpoint(path)

        assert loaded.config == self.config
        for a, b in zip(self.model.parameters(), loaded.parameters()):
            assert np.array_equal(a, b)
        batch, centers, _ = _batch(np.random.default_rng(0))
        assert np.array_equal(
            self.model.forward(batch, centers), loaded.forward(batch, centers)
        )

    def test_bad_magic(self, tmp_path):
        """Тест неверной сигнатуры"""
        path = tmp_path / "m.ynet"
        save_checkpoint(self.model, path)
        path.write_bytes(b"XNET" + path.read_bytes()[4:])
        with pytest.raises(BadMagic):
            load_checkpoint(path)

    def test_truncated(self, tmp_path):
        """Тест обрезанного файла"""
        path = tmp_path / "m.ynet"
        save_checkpoint(self.model, path)
        path.write_bytes(path.read_bytes()[:-10])
        with pytest.raises(TruncatedPayload):
            load_checkpoint(path)

    def test_trailing_bytes(self, tmp_path):
        """Тест лишних байт"""
        path = tmp_path / "m.ynet"
        save_checkpoint(self.model, path)
        path.write_bytes(path.read_bytes() + b"\0\0\0\0")
        with pytest.raises(ConfigMismatch):
            load_checkpoint(path)

    def test_missing_file(self, tmp_path):
        """Тест отсутствующего файла"""
        with pytest.raises(IoFailure):
            load_checkpoint(tmp_path / "none.ynet")
