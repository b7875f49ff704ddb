import numpy as np
import pytest

from horesnet.network import (
    CheckpointError, ConfigError, NetworkShape, build, dense2_param_count, equivalent_depth, load_checkpoint,
    param_count, read_checkpoint, save_checkpoint, valid_depths,
)
from horesnet.tensor import Tensor, no_grad, softmax_cross_entropy


@pytest.mark.parametrize("scheme,blocks", [("euler", 28), ("midpoint", 14), ("rk4", 7), ("verner", 2)])
def test_depth58_block_counts(scheme, blocks):
    assert NetworkShape(58, scheme).block_count == blocks


def test_depth18_euler():
    assert NetworkShape(18, "euler").block_count == 8


def test_invalid_depth_names_neighbours():
    with pytest.raises(ConfigError, match=r"\[10, 18"):
        NetworkShape(7, "rk4").block_count
    with pytest.raises(ConfigError):
        NetworkShape(10, "verner").block_count


def test_valid_and_equivalent_depths():
    assert equivalent_depth("verner", 58) == 58
    assert equivalent_depth("rk4", 60) == 58
    assert equivalent_depth("verner", 10) == 30
    assert 26 in valid_depths("rk4", 22)


def test_parameter_parity_at_depth58():
    counts = {s: param_count(build(NetworkShape(58, s, width=64), 0)) for s in ("euler", "midpoint", "rk4", "verner")}
    assert len({c for c, _ in counts.values()}) == 1
    assert all(extra == 0 for _, extra in counts.values())
    fixed = counts["verner"][0]
    assert param_count(build(NetworkShape(58, "verner-adaptive", width=64), 0)) == (fixed + 2, 2)


def test_parameter_count_closed_form():
    shape = NetworkShape(18, "euler", width=8)
    emb, head = 2 * 8 + 8, 8 * 2 + 2
    assert param_count(build(shape, 0))[0] == emb + head + 8 * dense2_param_count(8, 8)


def test_stub_blocks_carry_no_parameters():
    net = build(NetworkShape(10, "rk4", width=4, stage="identity"), 0)
    assert sum(p.size for b in net.blocks for p in b.parameters()) == 0


def test_zero_blocks_zero_head_give_zero_logits():
    net = build(NetworkShape(18, "midpoint", width=4, stage="zero"), 0)
    net.head.w.data[...] = 0.0
    logits = net(Tensor(np.random.default_rng(0).standard_normal((3, 2))))
    np.testing.assert_array_equal(logits.data, 0.0)


def test_forward_shape_and_determinism():
    x = Tensor([[0.3, -0.2]])
    a = build(NetworkShape(10, "euler"), 5)(x).data
    b = build(NetworkShape(10, "euler"), 5)(x).data
    assert a.shape == (1, 2)
    assert np.array_equal(a, b)


def test_different_seeds_differ():
    x = Tensor([[0.3, -0.2], [0.1, 0.9]])
    assert not np.array_equal(build(NetworkShape(10, "euler"), 1)(x).data, build(NetworkShape(10, "euler"), 2)(x).data)


def test_wrong_input_features():
    from horesnet.tensor import DimensionError
    with pytest.raises(DimensionError):
        build(NetworkShape(10, "euler"), 0)(Tensor(np.ones((2, 3))))


def test_layer_count_matches_depth():
    for s, d in [("euler", 10), ("midpoint", 18), ("rk4", 26), ("verner", 30)]:
        assert build(NetworkShape(d, s, width=4), 0).layer_count == d


def test_conv_network_shape():
    net = build(NetworkShape(10, "euler", width=4, in_features=3, classes=10, stage="conv2", image_size=6), 0)
    assert net(Tensor(np.zeros((2, 3, 6, 6)))).shape == (2, 10)


def test_checkpoint_round_trip(tmp_path):
    shape = NetworkShape(30, "verner-adaptive", width=4)
    net = build(shape, 3)
    net.blocks[0].step.set(1.25)
    x = Tensor(np.random.default_rng(1).standard_normal((16, 2)))
    net(x)                                  # moves running statistics
    net.eval()
    before = net(x).data
    path = save_checkpoint(net, tmp_path / "m.ckpt", {"epoch": 4})
    assert (tmp_path / "m.ckpt.json").exists()
    loaded, extra, rest = load_checkpoint(path)
    loaded.eval()
    assert extra == {"epoch": 4} and rest == {}
    assert np.array_equal(loaded(x).data, before)
    assert loaded.blocks[0].step.h == 1.25


def test_checkpoint_detects_corruption(tmp_path):
    path = save_checkpoint(build(NetworkShape(10, "euler", width=4), 0), tmp_path / "m.ckpt")
    raw = bytearray(path.read_bytes())
    raw[40] ^= 0xFF
    path.write_bytes(bytes(raw))
    with pytest.raises(CheckpointError, match="checksum"):
        read_checkpoint(path)
    (tmp_path / "junk").write_bytes(b"nope")
    with pytest.raises(CheckpointError):
        read_checkpoint(tmp_path / "junk")


def test_shape_dict_round_trip():
    s = NetworkShape(26, "rk4", width=8, h_clamp=(0.125, 4.0))
    assert NetworkShape.from_dict(s.to_dict()) == s


def test_clamp_applies_to_learnable_h():
    net = build(NetworkShape(30, "verner-adaptive", width=4, h_clamp=(0.125, 4.0)), 0)
    net.blocks[0].step.set(10.0)
    net.project_step_scales()
    assert net.blocks[0].step.h == 4.0
