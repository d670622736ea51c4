"""
Воспроизводимые генераторы случайных чисел

Вся случайность проекта идет через numpy PCG64 (128-битное состояние,
линейный конгруэнтный шаг state = state * 0x2360ED051FC65DA44385DF649FCCF645
+ inc по модулю 2^128, выход XSL-RR 64 бит). Состояние инициализируется
через numpy.random.SeedSequence из верхнеуровневого seed и целочисленных
ключей потока:

    seed фантомов      -> SeedSequence(seed).spawn(n_train + n_val + n_test)
    инициализация сети -> (seed, STREAM_MODEL_INIT)
    эпоха e            -> (seed, STREAM_EPOCH, e)
    порядок минибатчей -> (seed, STREAM_MINIBATCH, e)
"""

from typing import List

import numpy as np

STREAM_MODEL_INIT = 1
STREAM_EPOCH = 2
STREAM_MINIBATCH = 3

_SEED_MASK = (1 << 64) - 1


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    """Генератор PCG64 для потока (seed, *keys)"""
    entropy = [int(seed) & _SEED_MASK, *(int(k) for k in keys)]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def spawn_seeds(seed: int, count: int) -> List[int]:
    """Непересекающиеся 64-битные seed для count независимых объектов"""
    children = np.random.SeedSequence(int(seed) & _SEED_MASK).spawn(count)
    return [int(c.generate_state(1, dtype=np.uint64)[0]) for c in children]
