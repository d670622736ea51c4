"""
Интеграционные тесты для командной строки
"""

import json

import numpy as np
import pandas as pd
import pytest

from ynet_app.cli import EXIT_OK, EXIT_USAGE, main
from ynet_app.schemas import DatasetManifest
from ynet_core.metrics import evaluate
from ynet_core.volume import Volume3D, VolumeKind, read_volume, write_volume
from ynet_core.ynet import (
    PositionSite,
    YNetConfig,
    build,
    load_checkpoint,
    save_checkpoint,
)

DIMS = ["24", "24", "24"]


def phantom_args(out, *extra):
    return [
        "phantom", "--out", str(out), "--dims", *DIMS,
        "--train", "2", "--val", "1", "--test", "1", *extra,
    ]


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    """Небольшой набор фантомов 24^3"""
    out = tmp_path_factory.mktemp("data")
    assert main(phantom_args(out, "--force")) == EXIT_OK
    return out


@pytest.fixture(scope="module")
def checkpoint(tmp_path_factory):
    """Необученная маленькая модель"""
    path = tmp_path_factory.mktemp("model") / "tiny.ynet"
    config = YNetConfig(n_levels=1, base_kernels=2, patch_size=8)
    save_checkpoint(build(config, 0), path)
    return path


class TestPhantomCommand:
    """Тесты команды phantom"""

    def test_files(self, dataset):
        """Тест состава набора"""
        volumes = sorted(p.name for p in dataset.glob("*.yvol"))
        assert len(volumes) == 8
        assert "train_000.img.yvol" in volumes
        assert "test_000.lbl.yvol" in volumes
        assert (dataset / "effective_config.json").exists()

        manifest = DatasetManifest.read(dataset)
        assert [e.split for e in manifest.pairs] == ["train", "train", "val", "test"]
        assert manifest.dims == (24, 24, 24)
        assert read_volume(dataset / "val_000.lbl.yvol").kind is VolumeKind.LABEL

    def test_rerun_identical(self, dataset, tmp_path):
        """Тест: повторный запуск дает побайтово те же файлы"""
        assert main(phantom_args(tmp_path)) == EXIT_OK
        for path in dataset.iterdir():
            assert (tmp_path / path.name).read_bytes() == path.read_bytes()

    def test_existing_dir(self, tmp_path, capsys):
        """Тест: непустой каталог без --force"""
        (tmp_path / "keep.txt").write_text("x")
        assert main(phantom_args(tmp_path)) == EXIT_USAGE
        assert "--force" in capsys.readouterr().err

    def test_seed_changes_data(self, dataset, tmp_path):
        """Тест: другое зерно дает другой набор"""
        assert main(phantom_args(tmp_path, "--seed", "8")) == EXIT_OK
        name = "train_000.img.yvol"
        assert (tmp_path / name).read_bytes() != (dataset / name).read_bytes()


class TestConfigErrors:
    """Тесты ошибок конфигурации"""

    def test_unknown_key(self, tmp_path):
        """Тест неизвестного ключа в JSON"""
        config = tmp_path / "config.json"
        config.write_text(json.dumps({"bogus": 1}))
        code = main(phantom_args(tmp_path / "out", "--config", str(config)))
        assert code == EXIT_USAGE

    def test_bad_value(self, tmp_path):
        """Тест недопустимого значения из флага"""
        code = main(
            ["train", "--data-dir", str(tmp_path), "--out", str(tmp_path / "o"),
             "--n-levels", "5"]
        )
        assert code == EXIT_USAGE

    def test_missing_config_file(self, tmp_path):
        """Тест отсутствующего файла конфигурации"""
        code = main(["mip", "--volume", "x", "--config", str(tmp_path / "no.json")])
        assert code == 1


class TestEvalCommand:
    """Тесты команды eval"""

    def test_identical(self, dataset, tmp_path, capsys):
        """Тест: сравнение разметки с собой"""
        truth = str(dataset / "test_000.lbl.yvol")
        csv = tmp_path / "row.csv"
        code = main(
            ["eval", "--pred", truth, "--truth", truth, "--name", "self",
             "--out", str(csv)]
        )
        assert code == EXIT_OK
        assert "accuracy=1.00000" in capsys.readouterr().out
        row = pd.read_csv(csv).iloc[0]
        assert row["model"] == "self"
        assert row["DSC"] == 1.0

    def test_dim_mismatch(self, dataset, tmp_path):
        """Тест: размеры различаются"""
        other = tmp_path / "small.lbl.yvol"
        write_volume(
            Volume3D(data=np.zeros((4, 4, 4)), kind=VolumeKind.LABEL), other
        )
        truth = str(dataset / "test_000.lbl.yvol")
        assert main(["eval", "--pred", str(other), "--truth", truth]) == EXIT_USAGE


class TestMipCommand:
    """Тесты команды mip"""

    def test_three_projections(self, dataset, tmp_path):
        """Тест записи трех PGM"""
        stem = tmp_path / "img"
        code = main(
            ["mip", "--volume", str(dataset / "test_000.img.yvol"),
             "--out-stem", str(stem)]
        )
        assert code == EXIT_OK
        for axis in "xyz":
            path = tmp_path / f"img.mip_{axis}.pgm"
            assert path.read_bytes().startswith(b"P5")


class TestBaselineCommand:
    """Тесты команды baseline"""

    def test_renyi(self, dataset, tmp_path):
        """Тест сегментации Реньи с записью файлов"""
        out = tmp_path / "renyi.yvol"
        code = main(
            ["baseline", "--which", "renyi",
             "--volume", str(dataset / "test_000.img.yvol"), "--out", str(out)]
        )
        assert code == EXIT_OK
        assert read_volume(out).kind is VolumeKind.LABEL
        assert (tmp_path / "renyi.mip_z.pgm").exists()

    def test_frangi_calibrated(self, dataset, tmp_path):
        """Тест Frangi с калибровкой порога на валидации"""
        out = tmp_path / "frangi.yvol"
        code = main(
            ["baseline", "--which", "frangi", "--data-dir", str(dataset),
             "--volume", str(dataset / "test_000.img.yvol"), "--out", str(out)]
        )
        assert code == EXIT_OK
        assert out.exists()

    def test_frangi_without_threshold(self, dataset, tmp_path):
        """Тест Frangi без порога и набора"""
        code = main(
            ["baseline", "--which", "frangi",
             "--volume", str(dataset / "test_000.img.yvol"),
             "--out", str(tmp_path / "f.yvol")]
        )
        assert code == EXIT_USAGE


class TestPredictCommand:
    """Тесты команды predict"""

    def test_fixed_threshold(self, dataset, checkpoint, tmp_path, capsys):
        """Тест предсказания с заданным порогом"""
        code = main(
            ["predict", "--checkpoint", str(checkpoint),
             "--volume", str(dataset / "test_000.img.yvol"),
             "--out", str(tmp_path), "--threshold", "0.38"]
        )
        assert code == EXIT_OK
        assert "0.38" in capsys.readouterr().out

        prob = read_volume(tmp_path / "test_000.prob.yvol")
        seg = read_volume(tmp_path / "test_000.seg.yvol")
        assert prob.kind is VolumeKind.PROBABILITY
        assert prob.dims == (24, 24, 24)
        assert np.array_equal(seg.data, (prob.data >= 0.38).astype(np.float32))
        assert (tmp_path / "test_000.seg.mip_x.pgm").exists()

        record = json.loads((tmp_path / "test_000.threshold.json").read_text())
        assert record["threshold"] == 0.38
        assert record["calibrated"] is False

    def test_calibrated(self, dataset, checkpoint, tmp_path):
        """Тест калибровки порога по валидационной части набора"""
        code = main(
            ["predict", "--checkpoint", str(checkpoint),
             "--volume", str(dataset / "test_000.img.yvol"),
             "--out", str(tmp_path), "--data-dir", str(dataset), "--calibrate-dsc"]
        )
        assert code == EXIT_OK
        record = json.loads((tmp_path / "test_000.threshold.json").read_text())
        assert record["calibrated"] is True
        assert record["objective"] == "dsc"
        assert 0.0 <= record["threshold"] <= 1.0

    def test_needs_threshold_or_data(self, dataset, checkpoint, tmp_path):
        """Тест: нет ни порога, ни набора"""
        code = main(
            ["predict", "--checkpoint", str(checkpoint),
             "--volume", str(dataset / "test_000.img.yvol"), "--out", str(tmp_path)]
        )
        assert code == EXIT_USAGE

    def test_bad_checkpoint(self, dataset, tmp_path):
        """Тест поврежденного чекпоинта"""
        bad = tmp_path / "bad.ynet"
        bad.write_bytes(b"nope")
        code = main(
            ["predict", "--checkpoint", str(bad),
             "--volume", str(dataset / "test_000.img.yvol"),
             "--out", str(tmp_path), "--threshold", "0.5"]
        )
        assert code == 1


@pytest.mark.slow
class TestEndToEnd:
    """Полный цикл: phantom, train, predict, table"""

    def test_pipeline(self, tmp_path):
        """Тест полного цикла на маленьком наборе"""
        data, run = tmp_path / "data", tmp_path / "run"
        assert main(phantom_args(data)) == EXIT_OK
        code = main(
            ["train", "--data-dir", str(data), "--out", str(run),
             "--n-levels", "1", "--base-kernels", "2", "--max-epochs", "2",
             "--threads", "2"]
        )
        assert code == EXIT_OK
        assert (run / "best.ynet").exists()
        assert len(pd.read_csv(run / "train_log.csv")) == 2
        assert (run / "effective_config.json").exists()

        code = main(
            ["table", "--checkpoint", str(run / "best.ynet"),
             "--data-dir", str(data), "--out", str(run),
             "--extra-thresholds", "0.38"]
        )
        assert code == EXIT_OK
        table = pd.read_csv(run / "table.csv")
        assert table["model"].tolist()[-3:] == ["Renyi", "Phansalkar", "Frangi"]
        assert len(table) == 5

    def test_position_site_none(self, dataset, tmp_path):
        """Тест: модель без позиционного пути обучается и сохраняется"""
        run = tmp_path / "run"
        code = main(
            ["train", "--data-dir", str(dataset), "--out", str(run),
             "--position-site", "none", "--n-levels", "1", "--base-kernels", "2",
             "--max-epochs", "2", "--threads", "1"]
        )
        assert code == EXIT_OK
        model = load_checkpoint(run / "best.ynet")
        assert model.config.position_site is PositionSite.NONE
        code = main(
            ["predict", "--checkpoint", str(run / "best.ynet"),
             "--volume", str(dataset / "test_000.img.yvol"),
             "--out", str(run), "--threshold", "0.5"]
        )
        assert code == EXIT_OK

    def test_single_thread_reproducible(self, tmp_path, monkeypatch):
        """Тест: два цикла phantom-train-predict-eval с --threads 1 побайтово равны"""
        for name in ("a", "b"):
            root = tmp_path / name
            root.mkdir()
            monkeypatch.chdir(root)
            assert main(phantom_args("data")) == EXIT_OK
            code = main(
                ["train", "--data-dir", "data", "--out", "run",
                 "--n-levels", "1", "--base-kernels", "2", "--max-epochs", "2",
                 "--threads", "1"]
            )
            assert code == EXIT_OK
            code = main(
                ["predict", "--checkpoint", "run/best.ynet",
                 "--volume", "data/test_000.img.yvol", "--out", "pred",
                 "--data-dir", "data", "--threads", "1"]
            )
            assert code == EXIT_OK
            code = main(
                ["eval", "--pred", "pred/test_000.seg.yvol",
                 "--truth", "data/test_000.lbl.yvol", "--out", "eval.csv"]
            )
            assert code == EXIT_OK

        first, second = (
            sorted(p.relative_to(root) for p in root.rglob("*"))
            for root in (tmp_path / "a", tmp_path / "b")
        )
        assert first == second
        log = pd.read_csv(tmp_path / "a" / "run" / "train_log.csv")
        assert log["seconds"].isna().all()
        for rel in first:
            a, b = tmp_path / "a" / rel, tmp_path / "b" / rel
            if a.is_file():
                assert a.read_bytes() == b.read_bytes(), rel


@pytest.mark.slow
class TestDeskRun:
    """Настольный запуск: набор и расписание по умолчанию"""

    def test_test_dsc(self, tmp_path):
        """Тест: DSC лучшей модели на тестовом фантоме не ниже 0.75"""
        data, run = tmp_path / "data", tmp_path / "run"
        assert main(["phantom", "--out", str(data)]) == EXIT_OK
        assert main(["train", "--data-dir", str(data), "--out", str(run)]) == EXIT_OK
        code = main(
            ["predict", "--checkpoint", str(run / "best.ynet"),
             "--volume", str(data / "test_000.img.yvol"),
             "--out", str(run), "--data-dir", str(data)]
        )
        assert code == EXIT_OK
        report = evaluate(
            read_volume(run / "test_000.seg.yvol"),
            read_volume(data / "test_000.lbl.yvol"),
        )
        assert report.dsc >= 0.75
