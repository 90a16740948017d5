"""
随机数子流

每个输入样本从 (seed, purpose, epoch, input_id) 派生独立的 Generator，
结果与批大小、分块方式和线程数无关
"""
from enum import IntEnum
from typing import List, Sequence

import numpy as np


class StreamPurpose(IntEnum):
    TRAIN = 1
    PROBE = 2
    EVAL = 3
    PR_UNIFORM = 4
    PR_GAUSSIAN = 5
    PGD = 6
    EXPORT = 7
    SHUFFLE = 8


def substream(seed: int, purpose: StreamPurpose, epoch: int, input_id: int) -> np.random.Generator:
    sequence = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(purpose), int(epoch), int(input_id)))
    return np.random.default_rng(sequence)


def input_streams(
    seed: int, purpose: StreamPurpose, epoch: int, input_ids: Sequence[int]
) -> List[np.random.Generator]:
    return [substream(seed, purpose, epoch, i) for i in input_ids]


def derive_seed(seed: int, *keys: int) -> int:
    """由父种子和若干键派生子实验种子（sweep 使用）"""
    sequence = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in keys))
    return int(sequence.generate_state(1, dtype=np.uint32)[0])
