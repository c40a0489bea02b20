"""
체크포인트 저장소
텐서마다 원시 바이트 파일(<name>.bin) + manifest.json(이름, 모양, dtype, 설정 사본)
"""
import json
import logging
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Union

import numpy as np
import torch
import torch.nn as nn

from drop_bottleneck.core.exceptions import CheckpointError

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
FORMAT_VERSION = 1

_DTYPES = {
    torch.float32: "float32",
    torch.float64: "float64",
    torch.float16: "float16",
    torch.int64: "int64",
    torch.int32: "int32",
    torch.bool: "bool",
}


class CheckpointStore:
    """체크포인트 디렉터리 관리자"""

    def __init__(self, directory: Union[str, Path]):
        self.directory = Path(directory)

    @property
    def manifest_path(self) -> Path:
        return self.directory / MANIFEST_NAME

    def exists(self) -> bool:
        return self.manifest_path.exists()

    def save(self, modules: Mapping[str, nn.Module],
             optimizers: Optional[Mapping[str, torch.optim.Optimizer]] = None,
             config: Optional[Dict[str, Any]] = None, extra: Optional[Dict[str, Any]] = None) -> Path:
        """모듈 state_dict와 옵티마이저 상태를 저장"""
        self.directory.mkdir(parents=True, exist_ok=True)
        tensors: Dict[str, torch.Tensor] = {}
        for prefix, module in modules.items():
            for name, tensor in module.state_dict().items():
                tensors[f"{prefix}.{name}"] = tensor

        optimizer_groups = {}
        for prefix, optimizer in (optimizers or {}).items():
            state = optimizer.state_dict()
            scalars = {}
            for index, entries in state["state"].items():
                for key, value in entries.items():
                    name = f"optim.{prefix}.state.{index}.{key}"
                    if torch.is_tensor(value):
                        tensors[name] = value
                    else:
                        scalars[name] = value
            optimizer_groups[prefix] = {"param_groups": state["param_groups"], "scalars": scalars}

        entries = []
        for name, tensor in tensors.items():
            tensor = tensor.detach().cpu().contiguous()
            if tensor.dtype not in _DTYPES:
                raise CheckpointError(f"unsupported dtype {tensor.dtype} for '{name}'")
            file_name = f"{name}.bin"
            (self.directory / file_name).write_bytes(tensor.numpy().tobytes())
            entries.append({"name": name, "file": file_name, "shape": list(tensor.shape),
                            "dtype": _DTYPES[tensor.dtype]})

        manifest = {
            "format": FORMAT_VERSION,
            "tensors": entries,
            "optimizers": optimizer_groups,
            "config": config or {},
            "extra": extra or {},
        }
        self.manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8")
        logger.info(f"Checkpoint saved to {self.directory} ({len(entries)} tensors)")
        return self.directory

    def manifest(self) -> Dict[str, Any]:
        if not self.exists():
            raise CheckpointError(f"no checkpoint manifest in {self.directory}")
        try:
            return json.loads(self.manifest_path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise CheckpointError(f"corrupt manifest in {self.directory}: {e}") from e

    def tensors(self) -> Dict[str, torch.Tensor]:
        """manifest에 적힌 텐서를 모두 읽음"""
        result = {}
        for entry in self.manifest()["tensors"]:
            path = self.directory / entry["file"]
            if not path.exists():
                raise CheckpointError(f"tensor file missing: {path}")
            dtype = np.dtype(entry["dtype"])
            raw = np.frombuffer(path.read_bytes(), dtype=dtype)
            expected = int(np.prod(entry["shape"])) if entry["shape"] else 1
            if raw.size != expected:
                raise CheckpointError(f"'{entry['name']}' has {raw.size} values, expected {expected}")
            result[entry["name"]] = torch.from_numpy(raw.copy().reshape(entry["shape"]))
        return result

    def load(self, modules: Mapping[str, nn.Module],
             optimizers: Optional[Mapping[str, torch.optim.Optimizer]] = None) -> Dict[str, Any]:
        """저장된 값을 모듈/옵티마이저에 복원하고 설정 사본을 반환"""
        manifest = self.manifest()
        tensors = self.tensors()
        for prefix, module in modules.items():
            state = {name[len(prefix) + 1:]: tensor for name, tensor in tensors.items()
                     if name.startswith(prefix + ".")}
            try:
                module.load_state_dict(state, strict=True)
            except RuntimeError as e:
                raise CheckpointError(f"cannot restore module '{prefix}': {e}") from e

        for prefix, optimizer in (optimizers or {}).items():
            saved = manifest["optimizers"].get(prefix)
            if saved is None:
                raise CheckpointError(f"checkpoint has no optimizer '{prefix}'")
            marker = f"optim.{prefix}.state."
            state: Dict[int, Dict[str, Any]] = {}
            for name, value in list(tensors.items()) + list(saved["scalars"].items()):
                if name.startswith(marker):
                    index, key = name[len(marker):].split(".", 1)
                    state.setdefault(int(index), {})[key] = value
            optimizer.load_state_dict({"state": state, "param_groups": saved["param_groups"]})

        logger.info(f"Checkpoint loaded from {self.directory}")
        return manifest["config"]
