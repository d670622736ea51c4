"""
Тесты для выборки патчей
"""

import itertools

import numpy as np
import pytest

from ynet_core.exceptions import DimMismatch, NoPositives, VolumeTooSmall
from ynet_core.patches import (
    BackgroundGenerator,
    LabeledVolume,
    SamplingPlan,
    count_grid_candidates,
    epoch_stream,
    estimate_negative_stride,
    extract_balanced,
    extract_negative,
    extract_positive,
    grid_origins,
    stack_batch,
)
from ynet_core.phantom import default_dataset
from ynet_core.volume import Volume3D, VolumeKind


def _pair(rng, shape, density, name="v"):
    image = Volume3D(data=rng.random(shape))
    label = Volume3D(
        data=(rng.random(shape) < density).astype(np.float32), kind=VolumeKind.LABEL
    )
    return LabeledVolume(source_id=name, image=image, label=label)


def _brute_origins(label, stride, offset, p, positive):
    nz, ny, nx = label.shape
    found = []
    for z in grid_origins(nz, stride, offset, p):
        for y in grid_origins(ny, stride, offset, p):
            for x in grid_origins(nx, stride, offset, p):
                hit = label[z : z + p, y : y + p, x : x + p].sum() > 0
                if hit == positive:
                    found.append((x, y, z))
    return found


class TestGrid:
    """Тесты сетки начал окон"""

    def test_edge_origin_appended(self):
        """Тест добавления окна у края"""
        assert grid_origins(64, 20, 0, 16) == [0, 20, 40, 48]
        assert grid_origins(64, 20, 5, 16) == [5, 25, 45, 48]
        assert grid_origins(64, 16, 0, 16) == [0, 16, 32, 48]

    def test_small_dims(self):
        """Тест объема размером с патч и смещения за краем"""
        assert grid_origins(16, 20, 0, 16) == [0]
        assert grid_origins(20, 8, 6, 16) == [4]

    def test_too_small(self):
        """Тест объема меньше патча"""
        with pytest.raises(VolumeTooSmall):
            grid_origins(10, 4, 0, 16)

    def test_candidates(self):
        """Тест числа кандидатов"""
        assert count_grid_candidates((64, 64, 32), 20, 0, 16) == 4 * 4 * 2


class TestExtraction:
    """Сравнение отбора патчей с перебором"""

    def setup_method(self):
        """Подготовка генератора"""
        self.rng = np.random.default_rng(11)

    def test_positive_and_negative_match_brute_force(self):
        """Тест на 100 случайных объемах"""
        for _ in range(100):
            shape = tuple(int(s) for s in self.rng.integers(6, 13, size=3))
            pair = _pair(self.rng, shape, self.rng.uniform(0.0, 0.01))
            stride = int(self.rng.integers(1, 5))
            offset = int(self.rng.integers(0, stride))

            pos = extract_positive(pair.image, pair.label, stride, offset, 4)
            neg = extract_negative(pair.image, pair.label, stride, offset, 4)
            label = pair.label.data
            assert [r.origin for r in pos] == _brute_origins(
                label, stride, offset, 4, True
            )
            assert [r.origin for r in neg] == _brute_origins(
                label, stride, offset, 4, False
            )

    def test_positive_union_covers_labels(self):
        """Тест: объединение положительных окон по всем смещениям покрывает разметку"""
        rng = np.random.default_rng(6)
        pair = _pair(rng, (35, 41, 37), 0.002)
        label = pair.label.data
        for stride in (4, 9, 16):
            covered = np.zeros(label.shape, dtype=bool)
            for offset in range(stride):
                for r in extract_positive(pair.image, pair.label, stride, offset):
                    x, y, z = r.origin
                    covered[z : z + 16, y : y + 16, x : x + 16] = True
            assert np.all(covered[label == 1])

    def test_record_contents(self):
        """Тест содержимого патча"""
        pair = _pair(self.rng, (10, 12, 14), 0.05, name="a")
        record = extract_positive(pair.image, pair.label, 3, 1, 4, "a")[0]
        x, y, z = record.origin
        window = (slice(z, z + 4), slice(y, y + 4), slice(x, x + 4))
        assert np.array_equal(record.image_patch, pair.image.data[window])
        assert np.array_equal(record.label_patch, pair.label.data[window])
        assert record.volume_dims == (14, 12, 10)
        assert record.source_id == "a"

    def test_dim_mismatch(self):
        """Тест разных форм изображения и разметки"""
        a = _pair(self.rng, (8, 8, 8), 0.1)
        b = _pair(self.rng, (8, 8, 10), 0.1)
        with pytest.raises(DimMismatch):
            extract_positive(a.image, b.label, 2, 0, 4)


class TestBalancing:
    """Тесты балансировки"""

    def test_negative_stride(self):
        """Тест шага отрицательной сетки"""
        assert estimate_negative_stride(10, 80, 2) == 4
        assert estimate_negative_stride(10, 10, 3) == 3
        assert estimate_negative_stride(1, 1000, 20) == 200

    def test_no_positives(self):
        """Тест объема без положительных патчей"""
        with pytest.raises(NoPositives):
            estimate_negative_stride(0, 100, 2)

    def test_empty_volume_skipped(self):
        """Тест пропуска объема без сосудов"""
        pair = _pair(np.random.default_rng(0), (8, 8, 8), 0.0)
        pos, neg, stats = extract_balanced(pair, 2, 0, 4)
        assert pos == [] and neg == []
        assert stats.n_positive == 0

    def test_default_phantoms_within_3x(self):
        """Тест: на фантомах по умолчанию отрицательных не больше чем втрое меньше"""
        plan = SamplingPlan(stride_pos=8)
        for pair in default_dataset(7, 8, 2, 1):
            volume = LabeledVolume(pair.name, pair.image, pair.label)
            pos, neg, _ = extract_balanced(volume, plan.stride_pos, 0)
            assert len(pos) > 0 and len(neg) > 0
            assert len(neg) <= 3 * len(pos)
            assert len(pos) <= 3 * len(neg)

    def test_balanced_counts(self):
        """Тест отрицательных патчей с вычисленным шагом"""
        label = np.zeros((16, 16, 16), dtype=np.float32)
        label[2:4, 2:4, 2:4] = 1
        pair = LabeledVolume(
            "b",
            Volume3D(data=np.zeros((16, 16, 16))),
            Volume3D(data=label, kind=VolumeKind.LABEL),
        )
        pos, neg, stats = extract_balanced(pair, 2, 0, 4)
        expected = estimate_negative_stride(len(pos), stats.n_candidates, 2)
        assert stats.stride_neg == expected
        assert stats.n_negative == len(neg) > 0
        assert all(r.label_patch.sum() == 0 for r in neg)
        assert all(r.label_patch.sum() > 0 for r in pos)


class TestEpochStream:
    """Тесты потока пакетов"""

    def setup_method(self):
        """Подготовка набора"""
        rng = np.random.default_rng(5)
        self.dataset = [_pair(rng, (12, 12, 12), 0.01, name=f"v{i}") for i in range(3)]
        self.plan = SamplingPlan(stride_pos=2, batch_cap=16, patch_size=4)

    def _keys(self, batches):
        return [[(r.source_id, r.origin) for r in batch] for batch in batches]

    def test_batch_sizes(self):
        """Тест размеров пакетов"""
        batches = list(epoch_stream(self.dataset, 0, self.plan, 7))
        assert all(len(b) == 16 for b in batches[:-1])
        assert 0 < len(batches[-1]) <= 16
        total = sum(
            len(p) + len(n)
            for p, n, _ in (extract_balanced(v, 2, 0, 4) for v in self.dataset)
        )
        assert sum(len(b) for b in batches) == total

    def test_deterministic(self):
        """Тест воспроизводимости и независимости от числа потоков"""
        a = self._keys(epoch_stream(self.dataset, 3, self.plan, 7))
        b = self._keys(epoch_stream(self.dataset, 3, self.plan, 7))
        c = self._keys(epoch_stream(self.dataset, 3, self.plan, 7, threads=2))
        assert a == b == c

    def test_epochs_differ(self):
        """Тест смены смещения и порядка между эпохами"""
        a = self._keys(epoch_stream(self.dataset, 0, self.plan, 7))
        b = self._keys(epoch_stream(self.dataset, 1, self.plan, 7))
        assert a != b
        assert self.plan.offset_for(1) == 1
        assert self.plan.offset_for(2) == 0

    def test_empty_dataset(self):
        """Тест пустого набора"""
        with pytest.raises(ValueError):
            list(epoch_stream([], 0, self.plan, 7))

    def test_stack_batch(self):
        """Тест сборки пакета"""
        batch = next(iter(epoch_stream(self.dataset, 0, self.plan, 7)))
        images, labels, origins = stack_batch(batch)
        assert images.shape == (len(batch), 1, 4, 4, 4)
        assert labels.shape == images.shape
        assert origins.shape == (len(batch), 3)


class TestBackgroundGenerator:
    """Тесты фонового производителя"""

    def test_order_preserved(self):
        """Тест порядка элементов"""
        assert list(BackgroundGenerator(iter(range(50)), capacity=2)) == list(range(50))

    def test_error_passthrough(self):
        """Тест передачи исключения потребителю"""

        def failing():
            yield 1
            raise RuntimeError("сбой")

        with pytest.raises(RuntimeError, match="сбой"):
            list(BackgroundGenerator(failing()))

    def test_close_stops_producer(self):
        """Тест остановки потока при закрытии недочитанного итератора"""
        producer = BackgroundGenerator(itertools.count(), capacity=1)
        items = iter(producer)
        assert next(items) == 0
        items.close()
        producer.join(timeout=5)
        assert not producer.is_alive()
