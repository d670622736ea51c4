"""
Иерархия исключений ynet_core
"""


class YNetError(Exception):
    """Базовое исключение библиотеки"""


# Форматы файлов


class VolumeFormatError(YNetError):
    """Ошибка разбора файла YVOL/YNET"""


class BadMagic(VolumeFormatError):
    """Неверная сигнатура файла"""


class TruncatedPayload(VolumeFormatError):
    """Файл обрывается раньше, чем указано в заголовке"""


class DimMismatch(VolumeFormatError, ValueError):
    """Размеры не согласованы (заголовок/данные или два объема)"""


class InvalidKindCode(VolumeFormatError):
    """Неизвестный код типа объема"""


class IoFailure(YNetError, OSError):
    """Ошибка записи/чтения на диск"""


# Объемы и данные


class InvalidVolume(YNetError, ValueError):
    """Нарушены инварианты Volume3D"""


class DegenerateRange(YNetError, ValueError):
    """Нижний и верхний перцентили совпадают"""


class TubeOutOfBounds(YNetError, ValueError):
    """Опорная точка сосуда лежит вне объема"""


class ForegroundOutOfRange(YNetError, RuntimeError):
    """Случайный фантом не попал в допустимую долю сосудов"""


class OutOfBounds(YNetError, ValueError):
    """Координата патча вне объема"""


class VolumeTooSmall(YNetError, ValueError):
    """Объем меньше размера патча"""


class NoPositives(YNetError, ValueError):
    """В объеме нет ни одного патча с сосудом"""


# Тензоры и модель


class ShapeMismatch(YNetError, ValueError):
    """Несовместимые формы тензоров"""


class OddSpatialDim(YNetError, ValueError):
    """Нечетный пространственный размер для пулинга"""


class BadConfig(YNetError, ValueError):
    """Недопустимая конфигурация"""


class ConfigMismatch(YNetError, ValueError):
    """Параметры чекпоинта не соответствуют его конфигурации"""


class DivergedLoss(YNetError, ArithmeticError):
    """Функция потерь стала NaN/Inf"""


# Пороговые методы


class DegenerateHistogram(YNetError, ValueError):
    """Гистограмма содержит меньше двух непустых бинов"""


# Прикладной уровень


class OutputExists(YNetError, FileExistsError):
    """Каталог результатов уже существует и не пуст"""
