import json

import pytest
import torch
import torch.nn as nn

from drop_bottleneck.core.checkpoint import CheckpointStore
from drop_bottleneck.core.exceptions import CheckpointError
from drop_bottleneck.services.bottleneck import init_drop_params


def make_modules(seed: int):
    torch.manual_seed(seed)
    net = nn.Sequential(nn.Linear(4, 8), nn.ReLU(), nn.Linear(8, 2))
    params = init_drop_params(8, -2.0, 1.0, torch.Generator().manual_seed(seed))
    return net, params


def train_a_little(net, params, steps=3):
    optimizer = torch.optim.Adam(list(net.parameters()) + list(params.parameters()), lr=0.01)
    for _ in range(steps):
        optimizer.zero_grad()
        loss = net(torch.ones(5, 4)).pow(2).sum() + params.logits.sum()
        loss.backward()
        optimizer.step()
    return optimizer


def test_round_trip_is_bit_exact(tmp_path):
    net, params = make_modules(0)
    optimizer = train_a_little(net, params)
    store = CheckpointStore(tmp_path / "ckpt")
    store.save({"net": net, "params": params}, {"adam": optimizer}, config={"seed": 0}, extra={"kind": "test"})

    net2, params2 = make_modules(1)
    optimizer2 = torch.optim.Adam(list(net2.parameters()) + list(params2.parameters()), lr=0.5)
    config = store.load({"net": net2, "params": params2}, {"adam": optimizer2})

    assert config == {"seed": 0}
    for a, b in zip(net.state_dict().values(), net2.state_dict().values()):
        assert torch.equal(a, b)
    assert torch.equal(params.logits, params2.logits)
    saved, restored = optimizer.state_dict(), optimizer2.state_dict()
    assert restored["param_groups"][0]["lr"] == 0.01
    for index, entries in saved["state"].items():
        for key, value in entries.items():
            assert torch.equal(torch.as_tensor(value), torch.as_tensor(restored["state"][index][key]))


def test_training_continues_identically(tmp_path):
    net, params = make_modules(0)
    optimizer = train_a_little(net, params)
    store = CheckpointStore(tmp_path)
    store.save({"net": net, "params": params}, {"adam": optimizer})

    net2, params2 = make_modules(5)
    optimizer2 = torch.optim.Adam(list(net2.parameters()) + list(params2.parameters()), lr=0.01)
    store.load({"net": net2, "params": params2}, {"adam": optimizer2})
    for module, opt in ((net, optimizer), (net2, optimizer2)):
        opt.zero_grad()
        module(torch.ones(5, 4)).pow(2).sum().backward()
        opt.step()
    for a, b in zip(net.parameters(), net2.parameters()):
        assert torch.equal(a, b)


def test_manifest_layout(tmp_path):
    net, params = make_modules(0)
    CheckpointStore(tmp_path).save({"params": params})
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    entry = next(e for e in manifest["tensors"] if e["name"] == "params.logits")
    assert entry["shape"] == [8] and entry["dtype"] == "float32"
    assert (tmp_path / entry["file"]).stat().st_size == 8 * 4


class TestErrors:
    def test_missing_manifest(self, tmp_path):
        store = CheckpointStore(tmp_path)
        assert not store.exists()
        with pytest.raises(CheckpointError):
            store.manifest()

    def test_missing_tensor_file(self, tmp_path):
        net, params = make_modules(0)
        CheckpointStore(tmp_path).save({"params": params})
        (tmp_path / "params.logits.bin").unlink()
        with pytest.raises(CheckpointError):
            CheckpointStore(tmp_path).tensors()

    def test_truncated_tensor(self, tmp_path):
        net, params = make_modules(0)
        CheckpointStore(tmp_path).save({"params": params})
        path = tmp_path / "params.logits.bin"
        path.write_bytes(path.read_bytes()[:-4])
        with pytest.raises(CheckpointError):
            CheckpointStore(tmp_path).tensors()

    def test_shape_mismatch(self, tmp_path):
        net, params = make_modules(0)
        CheckpointStore(tmp_path).save({"params": params})
        other = init_drop_params(4, -2.0, 1.0, torch.Generator().manual_seed(0))
        with pytest.raises(CheckpointError):
            CheckpointStore(tmp_path).load({"params": other})

    def test_missing_optimizer(self, tmp_path):
        net, params = make_modules(0)
        CheckpointStore(tmp_path).save({"net": net})
        optimizer = torch.optim.Adam(net.parameters())
        with pytest.raises(CheckpointError):
            CheckpointStore(tmp_path).load({"net": net}, {"adam": optimizer})
