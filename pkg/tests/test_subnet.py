import numpy as np
import pytest

from horesnet.subnet import Conv2, Dense2, NormLayer, make_stage, make_stub
from horesnet.tensor import DimensionError, Tensor, no_grad, tsum

from conftest import check_grads


def test_identity_stub():
    np.testing.assert_array_equal(make_stub("identity")(Tensor([1.0, 2.0])).data, [1.0, 2.0])


def test_zero_stub():
    np.testing.assert_array_equal(make_stub(0.0)(Tensor([3.0, -1.0])).data, [0.0, 0.0])


def test_scalar_stub():
    np.testing.assert_array_equal(make_stub(-2.0)(Tensor([3.0])).data, [-6.0])


def test_stub_has_no_parameters():
    assert make_stub("identity").num_parameters() == 0


def test_zero_last_layer_gives_zero_map(rng):
    f = Dense2(5, rng=rng, zero_last=True)
    out = f(Tensor(rng.standard_normal((8, 5))))
    np.testing.assert_array_equal(out.data, 0.0)


def test_zero_last_conv_gives_zero_map(rng):
    f = Conv2(3, rng=rng, zero_last=True)
    out = f(Tensor(rng.standard_normal((2, 3, 4, 4))))
    np.testing.assert_array_equal(out.data, 0.0)


def test_dense2_preserves_shape(rng):
    f = Dense2(6, width=10, rng=rng)
    assert f(Tensor(rng.standard_normal((4, 6)))).shape == (4, 6)


def test_dense2_rejects_wrong_features(rng):
    with pytest.raises(DimensionError):
        Dense2(6, rng=rng)(Tensor(np.ones((4, 5))))


def test_dense2_parameter_count(rng):
    f = Dense2(7, width=11, rng=rng)
    assert f.num_parameters() == 7 * 11 + 11 + 11 * 7 + 7


def test_dense2_gradient_width16(rng):
    f = Dense2(16, rng=rng)
    x = Tensor(rng.standard_normal((12, 16)))
    w = rng.standard_normal((12, 16))
    params = f.parameters()
    check_grads(lambda: tsum(f(x) * w), params, rtol=1e-4, atol=1e-7)


def test_conv2_gradient(rng):
    f = Conv2(2, rng=rng, activation="tanh")
    x = Tensor(rng.standard_normal((3, 2, 4, 4)))
    check_grads(lambda: tsum(f(x)), f.parameters(), rtol=1e-4, atol=1e-7)


def test_norm_training_uses_batch_stats_and_updates_running(rng):
    n = NormLayer(3)
    x = rng.standard_normal((50, 3)) * 2 + 5
    out = n(Tensor(x)).data
    np.testing.assert_allclose(out.mean(axis=0), 0, atol=1e-12)
    np.testing.assert_allclose(n.running_mean, 0.1 * x.mean(axis=0), rtol=1e-12)
    np.testing.assert_allclose(n.running_var, 0.9 + 0.1 * x.var(axis=0, ddof=1), rtol=1e-12)


def test_norm_inference_uses_frozen_stats(rng):
    n = NormLayer(2)
    n.running_mean[:] = [1.0, -1.0]
    n.running_var[:] = [4.0, 1.0]
    n.training = False
    out = n(Tensor(np.array([[3.0, 0.0]]))).data
    np.testing.assert_allclose(out, [[2.0 / np.sqrt(4 + 1e-5), 1.0 / np.sqrt(1 + 1e-5)]], rtol=1e-12)
    np.testing.assert_array_equal(n.running_mean, [1.0, -1.0])


def test_eval_switches_every_norm(rng):
    f = Dense2(4, rng=rng)
    f.eval()
    assert all(not n.training for n in f.norm_layers())
    f.train()
    assert all(n.training for n in f.norm_layers())


def test_make_stage_kinds(rng):
    assert make_stage("dense2", 4, rng).kind == "dense2"
    assert make_stage("conv2", 4, rng).kind == "conv2"
    assert make_stage("zero", 4, rng).lam == 0.0
    with pytest.raises(ValueError):
        make_stage("mlp3", 4, rng)
