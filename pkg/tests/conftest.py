"""
공용 fixture
"""
import os
import tempfile

# 테스트 로그는 임시 디렉터리로 (설정 로드 전에 지정)
os.environ.setdefault("DB_LOG_FILE", os.path.join(tempfile.gettempdir(), "drop_bottleneck_tests", "test.log"))
os.environ.setdefault("DB_CONSOLE_LOGGING", "false")

import numpy as np  # noqa: E402
import pytest  # noqa: E402
import torch  # noqa: E402

from drop_bottleneck.core.random import torch_generator  # noqa: E402


@pytest.fixture
def gen():
    return torch_generator(1234)


@pytest.fixture
def np_rng():
    return np.random.default_rng(1234)


@pytest.fixture
def float64():
    previous = torch.get_default_dtype()
    torch.set_default_dtype(torch.float64)
    yield torch.float64
    torch.set_default_dtype(previous)


@pytest.fixture
def out_dir(tmp_path):
    path = tmp_path / "run"
    path.mkdir()
    return path
