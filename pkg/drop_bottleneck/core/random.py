"""
시드 기반 난수 스트림
"""
from dataclasses import dataclass
from typing import Dict, Sequence

import numpy as np
import torch

STREAM_NAMES = ("init", "data", "mask", "shuffle", "env", "policy", "probe")


def torch_generator(seed: int) -> torch.Generator:
    """시드가 고정된 CPU torch.Generator"""
    generator = torch.Generator()
    generator.manual_seed(int(seed))
    return generator


@dataclass
class RandomStreams:
    """하나의 시드에서 파생된 이름별 난수 스트림"""
    seed: int
    numpy_streams: Dict[str, np.random.Generator]
    torch_streams: Dict[str, torch.Generator]

    def numpy_rng(self, name: str) -> np.random.Generator:
        return self.numpy_streams[name]

    def torch_rng(self, name: str) -> torch.Generator:
        return self.torch_streams[name]


def make_streams(seed: int, names: Sequence[str] = STREAM_NAMES) -> RandomStreams:
    """시드 하나로 모든 스트림을 결정"""
    children = np.random.SeedSequence(int(seed)).spawn(len(names))
    numpy_streams = {}
    torch_streams = {}
    for name, child in zip(names, children):
        numpy_streams[name] = np.random.default_rng(child)
        # torch 시드는 63비트 양수여야 함
        torch_seed = int(child.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))
        torch_streams[name] = torch_generator(torch_seed)
    return RandomStreams(seed=int(seed), numpy_streams=numpy_streams, torch_streams=torch_streams)


def configure_torch(num_threads: int, deterministic: bool):
    """재현성을 위한 torch 전역 설정"""
    torch.set_num_threads(num_threads)
    torch.use_deterministic_algorithms(deterministic)
