import numpy as np
import pytest

from flowplan.checkpoint import load_checkpoint, save_checkpoint
from flowplan.config import RunConfig
from flowplan.optim import Adam
from flowplan.trainer import DrivingSystem


def test_roundtrip_is_bit_exact(tmp_path):
    rng = np.random.Generator(np.random.PCG64(5))
    params = {
        "layer.weight": rng.normal(size=(7, 3)),
        "layer.bias": rng.normal(size=3) * 1e-300,  # subnormal-adjacent values
    }
    path = tmp_path / "ckpt.json"
    save_checkpoint(path, params, rng_state=rng.bit_generator.state,
                    meta={"note": "x"})
    loaded = load_checkpoint(path)
    for name, arr in params.items():
        assert loaded["params"][name].shape == arr.shape
        assert np.array_equal(loaded["params"][name], arr)
    assert loaded["rng_state"] == rng.bit_generator.state
    assert loaded["meta"] == {"note": "x"}


def test_optimizer_state_roundtrip(tmp_path):
    from flowplan.tensor import Tensor

    p = Tensor(np.array([1.0, -1.0]), requires_grad=True)
    opt = Adam([("p", p)], lr=0.01)
    p.grad = np.array([0.5, 0.25])
    opt.step()
    path = tmp_path / "ckpt.json"
    save_checkpoint(path, {"p": p.data}, optimizer_state=opt.state_dict())
    loaded = load_checkpoint(path)
    assert loaded["optimizer"]["step_count"] == 1
    assert np.array_equal(loaded["optimizer"]["m"]["p"], opt.m["p"])
    assert np.array_equal(loaded["optimizer"]["v"]["p"], opt.v["p"])


def test_full_system_roundtrip(tmp_path):
    config = RunConfig()
    system = DrivingSystem(config)
    path = tmp_path / "ckpt.json"
    save_checkpoint(path, system.state_dict(), meta={"config": config.to_dict()})
    loaded = load_checkpoint(path)
    clone = DrivingSystem(config)
    clone.load_state_dict(loaded["params"])
    for (name_a, a), (name_b, b) in zip(system.named_parameters(),
                                        clone.named_parameters()):
        assert name_a == name_b
        assert np.array_equal(a.data, b.data)


def test_missing_params_section(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{}")
    with pytest.raises(KeyError, match="params"):
        load_checkpoint(path)
