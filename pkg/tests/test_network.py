import numpy as np
import pytest

from nrmf.compressor import FactorizedConv, compress_network
from nrmf.engine.layers import Flatten, Linear, ReLU
from nrmf.engine.network import Network, backward, cross_entropy, forward
from nrmf.engine.training import TrainConfig, add_gradients, sgd_step
from nrmf.errors import LabelError, ShapeError, StaleCacheError, UnknownLayerError
from nrmf.regularizer import make_regularizer, nuclear_loss


def _objective(net, x, y, alpha):
    loss, _ = forward(net, x, y)
    if alpha:
        loss += alpha * nuclear_loss([conv.kernel for conv in net.regularized_convs()])
    return loss


def _analytic(net, x, y, alpha):
    _, cache = forward(net, x, y)
    grads = backward(net, cache)
    if alpha:
        _, reg = make_regularizer()(net)
        grads = add_gradients(grads, reg, alpha)
    return grads


def _check_gradients(net, x, y, alpha, h=1e-5):
    grads = _analytic(net, x, y, alpha)
    checked = 0
    for layer in net.layers:
        for key, value in layer.params().items():
            numeric = np.zeros_like(value)
            for idx in np.ndindex(value.shape):
                original = value[idx]
                value[idx] = original + h
                plus = _objective(net, x, y, alpha)
                value[idx] = original - h
                minus = _objective(net, x, y, alpha)
                value[idx] = original
                numeric[idx] = (plus - minus) / (2 * h)
            analytic = grads[layer.name][key]
            scale = max(np.linalg.norm(analytic) + np.linalg.norm(numeric), 1e-12)
            assert np.linalg.norm(analytic - numeric) / scale < 1e-4, f"{layer.name}.{key}"
            checked += 1
    return checked


def test_gradients_of_cross_entropy(toy_net, toy_data):
    x, y = toy_data
    assert _check_gradients(toy_net, x[:8], y[:8], alpha=0.0) == 8


def test_gradients_include_regularizer(toy_net, toy_data):
    x, y = toy_data
    _check_gradients(toy_net, x[:8], y[:8], alpha=0.5)


def test_gradients_through_factorized_layers(toy_net, toy_data):
    x, y = toy_data
    compressed, _ = compress_network(toy_net, {"conv1": (2, 2), "conv2": (2, 3)})
    assert isinstance(compressed.layer("conv2"), FactorizedConv)
    _check_gradients(compressed, x[:8], y[:8], alpha=0.0)


def test_layer_names_must_be_unique():
    with pytest.raises(ShapeError):
        Network([Flatten("a"), Linear("a", np.zeros((4, 2)))], (2, 2, 1), 2)


def test_output_must_match_class_count():
    with pytest.raises(ShapeError):
        Network([Flatten("flatten"), Linear("fc", np.zeros((4, 3)))], (2, 2, 1), 2)


def test_layer_lookup(toy_net):
    assert toy_net.index_of("conv2") == 3
    assert [c.name for c in toy_net.regularized_convs()] == ["conv1", "conv2"]
    with pytest.raises(UnknownLayerError):
        toy_net.layer("conv9")


def test_forward_validates_batch_and_labels(toy_net, toy_data):
    x, y = toy_data
    with pytest.raises(LabelError):
        forward(toy_net, x[:2], np.array([0, 3]))
    with pytest.raises(ShapeError):
        forward(toy_net, x[:2, :5], y[:2])
    with pytest.raises(ShapeError):
        forward(toy_net, x[:2], y[:3])


def test_stale_caches_are_rejected(toy_net, toy_data):
    x, y = toy_data
    with pytest.raises(StaleCacheError):
        backward(toy_net, None)
    _, cache = forward(toy_net, x[:4], y[:4])
    with pytest.raises(StaleCacheError):
        backward(toy_net.copy(), cache)
    grads = backward(toy_net, cache)
    sgd_step(toy_net, grads, TrainConfig(lr=0.1), epoch=0)
    with pytest.raises(StaleCacheError):
        backward(toy_net, cache)


def test_interleaved_passes_do_not_interfere(toy_net, toy_data):
    x, y = toy_data
    _, first = forward(toy_net, x[:4], y[:4])
    _, second = forward(toy_net, x[4:8], y[4:8])
    g1 = backward(toy_net, first)
    _, again = forward(toy_net, x[:4], y[:4])
    np.testing.assert_array_equal(g1["conv1"]["kernel"], backward(toy_net, again)["conv1"]["kernel"])
    backward(toy_net, second)


def test_copy_is_independent(toy_net):
    clone = toy_net.copy()
    clone.layer("conv1").kernel[:] = 0.0
    assert np.abs(toy_net.layer("conv1").kernel).sum() > 0
    assert clone.param_count() == toy_net.param_count()


def test_cross_entropy_of_uniform_logits():
    loss, probs = cross_entropy(np.zeros((4, 5)), np.array([0, 1, 2, 3]))
    assert loss == pytest.approx(np.log(5))
    np.testing.assert_allclose(probs, 0.2)


def test_relu_has_no_params():
    assert ReLU("r").param_count() == 0


def test_duplicated_batch_keeps_mean_gradient(toy_net, toy_data):
    x, y = toy_data
    x, y = x[:8], y[:8]
    loss, cache = forward(toy_net, x, y)
    single = backward(toy_net, cache)
    loss2, cache2 = forward(toy_net, np.concatenate([x, x]), np.concatenate([y, y]))
    doubled = backward(toy_net, cache2)
    assert loss2 == pytest.approx(loss, rel=1e-12)
    for name, layer_grads in single.items():
        for key, g in layer_grads.items():
            np.testing.assert_allclose(doubled[name][key], g, rtol=1e-12, atol=1e-14)
