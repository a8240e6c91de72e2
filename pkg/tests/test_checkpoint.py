import pytest
import torch

from casgan.checkpoint import (
    Checkpoint,
    load_checkpoint,
    load_module_tensors,
    load_optimizer_state,
    module_tensors,
    optimizer_tensors,
    save_checkpoint,
)
from casgan.errors import CheckpointCorruptError, CheckpointIncompatibleError
from casgan.generator import CascadeConfig, UBlockSpec, build_cascade


def make_checkpoint():
    gen = torch.Generator().manual_seed(5)
    tensors = {
        "a.weight": torch.randn(3, 4, generator=gen),
        "b.bias": torch.randn(7, generator=gen),
        "c.count": torch.arange(5, dtype=torch.int64),
        "d.hi": torch.randn(2, 2, generator=gen).double(),
    }
    return Checkpoint(tensors=tensors, metadata={"step": 12, "note": "fixture"})


def test_round_trip_bit_exact(tmp_path):
    ck = make_checkpoint()
    path = save_checkpoint(ck, tmp_path / "state.mgck")
    back = load_checkpoint(path)
    assert back.metadata == ck.metadata
    assert set(back.tensors) == set(ck.tensors)
    for name, tensor in ck.tensors.items():
        assert back.tensors[name].dtype == tensor.dtype
        assert torch.equal(back.tensors[name], tensor)


def test_truncated_file_is_corrupt(tmp_path):
    path = save_checkpoint(make_checkpoint(), tmp_path / "state.mgck")
    blob = path.read_bytes()
    path.write_bytes(blob[: len(blob) - 9])
    with pytest.raises(CheckpointCorruptError):
        load_checkpoint(path)


def test_flipped_byte_is_corrupt(tmp_path):
    path = save_checkpoint(make_checkpoint(), tmp_path / "state.mgck")
    blob = bytearray(path.read_bytes())
    blob[len(blob) // 2] ^= 0xFF
    path.write_bytes(bytes(blob))
    with pytest.raises(CheckpointCorruptError):
        load_checkpoint(path)


def test_tiny_file_is_corrupt(tmp_path):
    path = tmp_path / "state.mgck"
    path.write_bytes(b"MG")
    with pytest.raises(CheckpointCorruptError):
        load_checkpoint(path)


def test_module_round_trip(tmp_path, tiny_cascade_config):
    model = build_cascade(tiny_cascade_config, seed=3)
    ck = Checkpoint(tensors=module_tensors(model, "generator"), metadata={})
    path = save_checkpoint(ck, tmp_path / "model.mgck")
    back = load_checkpoint(path)

    other = build_cascade(tiny_cascade_config, seed=99)
    load_module_tensors(other, back.tensors, "generator")
    for (name_a, pa), (name_b, pb) in zip(model.state_dict().items(), other.state_dict().items()):
        assert name_a == name_b
        assert torch.equal(pa, pb)


def test_shape_mismatch_names_tensor(tmp_path, tiny_ublock_spec):
    small = build_cascade(CascadeConfig(n_blocks=1, ublock=tiny_ublock_spec), seed=3)
    ck = Checkpoint(tensors=module_tensors(small, "generator"), metadata={})
    path = save_checkpoint(ck, tmp_path / "model.mgck")
    back = load_checkpoint(path)

    big = build_cascade(CascadeConfig(n_blocks=2, ublock=tiny_ublock_spec), seed=3)
    with pytest.raises(CheckpointIncompatibleError) as err:
        load_module_tensors(big, back.tensors, "generator")
    assert "generator." in str(err.value)


def test_extra_tensor_rejected(tmp_path, tiny_cascade_config):
    model = build_cascade(tiny_cascade_config, seed=3)
    tensors = module_tensors(model, "generator")
    tensors["generator.bogus"] = torch.zeros(1)
    with pytest.raises(CheckpointIncompatibleError) as err:
        load_module_tensors(build_cascade(tiny_cascade_config, seed=4), tensors, "generator")
    assert "bogus" in str(err.value)


def test_optimizer_state_round_trip(tiny_cascade_config):
    model = build_cascade(tiny_cascade_config, seed=3)
    opt = torch.optim.Adam(model.parameters(), lr=2e-4, betas=(0.5, 0.999))
    # populate state with a couple of steps
    for _ in range(2):
        out = model(torch.rand(1, 1, 16, 16))
        loss = out.abs().mean()
        opt.zero_grad()
        loss.backward()
        opt.step()

    tensors, meta = optimizer_tensors(opt, "opt_g")
    twin = build_cascade(tiny_cascade_config, seed=3)
    twin_opt = torch.optim.Adam(twin.parameters(), lr=2e-4, betas=(0.5, 0.999))
    load_optimizer_state(twin_opt, tensors, meta, "opt_g")

    sd_a, sd_b = opt.state_dict(), twin_opt.state_dict()
    assert sd_a["param_groups"] == sd_b["param_groups"]
    for pid in sd_a["state"]:
        for key, value in sd_a["state"][pid].items():
            other = sd_b["state"][pid][key]
            if isinstance(value, torch.Tensor):
                assert torch.equal(value, other)
            else:
                assert value == other
