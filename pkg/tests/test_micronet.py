import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hydra_ensemble.errors import ConfigError, NumericError, ShapeError
from hydra_ensemble.micronet import (
    AdamState,
    LayerSpec,
    Network,
    adam_step,
    backward,
    build_network,
    conv2d,
    dense,
    dense_block,
    dense_block_forward,
    dropout,
    flatten,
    forward,
    infer_shapes,
    relu,
    residual_block,
    residual_block_forward,
    softmax_cross_entropy,
    weighted_cross_entropy,
)
from hydra_ensemble.checkpoint import decode_network, encode_network, load_network, save_network

from oracles import MICRO_KINDS, adam_oracle, conv_oracle, fd_gradients, max_relative_error, random_micro_case


def zeroed(net):
    for p in net.params:
        for a in p.values():
            a[...] = 0.0
    return net


# ---------------------------------------------------------------------------
# layer specs and shapes
# ---------------------------------------------------------------------------


def test_layer_spec_validation():
    with pytest.raises(ConfigError):
        dropout(1.0)
    with pytest.raises(ConfigError):
        dense(0)
    with pytest.raises(ConfigError):
        LayerSpec("pooling")
    spec = conv2d(4, kernel=3, stride=2)
    assert LayerSpec.from_dict(spec.to_dict()) == spec


def test_shape_inference_adds_metadata_to_first_dense():
    shapes = infer_shapes((4, 4, 2), [conv2d(3, stride=2), flatten(), dense(5), relu(), dense(2)], metadata_width=3)
    assert shapes[0] == ((4, 4, 2), (2, 2, 3))
    assert shapes[2] == ((12 + 3,), (5,))
    assert shapes[4] == ((5,), (2,))


def test_parameter_shape_mismatch_is_rejected():
    net = build_network((2, 2, 1), [flatten(), dense(2)])
    params = [dict(p) for p in net.params]
    params[1]["w"] = np.zeros((3, 2))
    with pytest.raises(ShapeError, match="layer 1"):
        Network(net.input_shape, net.layers, params)


def test_forward_rejects_wrong_input_shape():
    net = build_network((3, 3, 1), [flatten(), dense(2)])
    with pytest.raises(ShapeError, match="layer 0"):
        forward(net, np.zeros((4, 3, 1)))
    meta_net = build_network((3, 3, 1), [flatten(), dense(2)], metadata_width=2)
    with pytest.raises(ShapeError):
        forward(meta_net, np.zeros((3, 3, 1)))
    with pytest.raises(ShapeError):
        forward(meta_net, np.zeros((3, 3, 1)), np.zeros(3))


# ---------------------------------------------------------------------------
# forward examples
# ---------------------------------------------------------------------------


def test_zero_network_gives_zero_scores():
    net = zeroed(build_network((4, 4, 3), [conv2d(2), relu(), flatten(), dense(5), relu(), dense(3)], 2, seed=1))
    out = forward(net, np.random.default_rng(0).normal(size=(4, 4, 3)), np.ones(2))
    assert np.array_equal(out, np.zeros(3))


def test_identity_dense_layer():
    net = build_network((1, 1, 2), [flatten(), dense(2)])
    net.params[1]["w"][...] = np.eye(2)
    assert np.array_equal(forward(net, np.array([[[1.0, 2.0]]])), [1.0, 2.0])


def test_two_layer_net_matches_hand_unrolled_oracle():
    net = build_network((1, 1, 3), [flatten(), dense(4), relu(), dense(2)], seed=7)
    x = np.array([0.5, -1.25, 2.0])
    w1, b1 = net.params[1]["w"], net.params[1]["b"] + np.array([0.1, -0.2, 0.3, -0.4])
    net.params[1]["b"][...] = b1
    w2, b2 = net.params[3]["w"], net.params[3]["b"]
    hidden = [max(0.0, sum(x[i] * w1[i, j] for i in range(3)) + b1[j]) for j in range(4)]
    oracle = [sum(hidden[j] * w2[j, k] for j in range(4)) + b2[k] for k in range(2)]
    out = forward(net, x.reshape(1, 1, 3))
    np.testing.assert_allclose(out, oracle, rtol=0, atol=1e-12)
    # golden values of the same computation, frozen from the loop oracle
    np.testing.assert_allclose(out, [-0.8807444597785611, -0.2998349832305784], rtol=0, atol=1e-12)


@pytest.mark.parametrize("kernel,stride", [(1, 1), (3, 1), (3, 2), (5, 2)])
def test_conv_matches_loop_oracle(kernel, stride):
    rng = np.random.default_rng(kernel * 10 + stride)
    net = build_network((5, 6, 2), [conv2d(3, kernel=kernel, stride=stride)], seed=3)
    net.params[0]["b"][...] = rng.normal(size=3)
    x = rng.normal(size=(5, 6, 2))
    out = forward(net, x)
    np.testing.assert_allclose(out, conv_oracle(x, net.params[0]["w"], net.params[0]["b"], stride), atol=1e-12)


def test_residual_block_with_zero_branch_is_identity():
    net = zeroed(build_network((4, 4, 3), [residual_block()]))
    x = np.random.default_rng(1).normal(size=(2, 4, 4, 3))
    assert np.array_equal(residual_block_forward(net.params[0], x), x)


def test_residual_block_with_identity_branch_doubles():
    # conv1 = identity on nonnegative input, relu passes it, conv2 = identity
    p = {"w1": np.zeros((1, 1, 2, 2)), "b1": np.zeros(2), "w2": np.zeros((1, 1, 2, 2)), "b2": np.zeros(2)}
    p["w1"][0, 0] = np.eye(2)
    p["w2"][0, 0] = np.eye(2)
    x = np.abs(np.random.default_rng(2).normal(size=(1, 3, 3, 2)))
    np.testing.assert_array_equal(residual_block_forward(p, x), 2 * x)


def test_residual_block_equals_branch_plus_input():
    rng = np.random.default_rng(3)
    net = build_network((4, 4, 2), [residual_block()], seed=4)
    p = net.params[0]
    x = rng.normal(size=(1, 4, 4, 2))
    branch = build_network((4, 4, 2), [conv2d(2), relu(), conv2d(2)])
    branch.params[0].update(w=p["w1"], b=p["b1"])
    branch.params[2].update(w=p["w2"], b=p["b2"])
    np.testing.assert_allclose(residual_block_forward(p, x), forward(branch, x) + x, atol=1e-14)


def test_residual_block_rejects_shape_change():
    p = {"w1": np.zeros((3, 3, 2, 2)), "b1": np.zeros(2), "w2": np.zeros((3, 3, 2, 3)), "b2": np.zeros(3)}
    with pytest.raises(ShapeError):
        residual_block_forward(p, np.zeros((1, 4, 4, 2)))


def test_dense_block_channel_bookkeeping():
    net = build_network((4, 4, 3), [dense_block(2, 5)], seed=1)
    x = np.random.default_rng(0).normal(size=(1, 4, 4, 3))
    assert dense_block_forward(net.params[0], x).shape == (1, 4, 4, 3 + 2 * 5)
    assert np.array_equal(dense_block_forward({}, x), x)


def test_dense_block_feeds_each_layer_the_concatenation():
    net = build_network((3, 3, 2), [dense_block(3, 2)], seed=5)
    x = np.random.default_rng(1).normal(size=(1, 3, 3, 2))
    trace = []
    out = dense_block_forward(net.params[0], x, trace)
    assert np.array_equal(trace[0], x)
    assert [t.shape[3] for t in trace] == [2, 4, 6]
    for l in range(1, 3):
        assert np.array_equal(trace[l], out[..., : 2 + 2 * l])


def test_dense_block_channel_mismatch_is_an_error():
    net = build_network((3, 3, 2), [dense_block(2, 2)])
    with pytest.raises(ShapeError):
        dense_block_forward(net.params[0], np.zeros((1, 3, 3, 4)))


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------


def test_uniform_scores_loss_is_weighted_log_m():
    assert softmax_cross_entropy(np.zeros(5), 2, 1.5) == pytest.approx(1.5 * math.log(5), abs=1e-15)


def test_known_two_class_loss():
    assert softmax_cross_entropy([0.0, math.log(3.0)], 1, 1.0) == pytest.approx(-math.log(0.75), abs=1e-15)


@settings(max_examples=200, deadline=None)
@given(
    st.lists(st.floats(-50, 50), min_size=2, max_size=8),
    st.floats(-1e3, 1e3),
    st.data(),
)
def test_loss_is_shift_invariant(scores, c, data):
    target = data.draw(st.integers(0, len(scores) - 1))
    a = softmax_cross_entropy(scores, target)
    b = softmax_cross_entropy(np.array(scores) + c, target)
    assert abs(a - b) <= 1e-12 * max(1.0, abs(a)) + 1e-12


def test_loss_rejects_non_finite_scores():
    with pytest.raises(NumericError):
        softmax_cross_entropy([0.0, np.inf], 0)


def test_doubling_class_weight_doubles_gradient():
    scores = np.array([[0.2, -0.4, 1.0], [0.5, 0.1, -0.3]])
    _, g1 = weighted_cross_entropy(scores, [1, 2], [1.0, 1.0, 1.0])
    _, g2 = weighted_cross_entropy(scores, [1, 2], [1.0, 2.0, 1.0])
    np.testing.assert_allclose(g2[0], 2 * g1[0], rtol=1e-15)
    np.testing.assert_array_equal(g2[1], g1[1])


def test_saturated_softmax_has_near_zero_gradients():
    net = build_network((1, 1, 2), [flatten(), dense(3)])
    net.params[1]["w"][...] = 0.0
    net.params[1]["b"][...] = [0.0, 200.0, 0.0]
    _, grads = backward(net, np.ones((1, 1, 2)), None, [1])
    assert max(np.abs(a).max() for a in grads[1].values()) < 1e-80


# ---------------------------------------------------------------------------
# backward
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("case", range(16))
def test_backward_matches_finite_differences(case):
    kind = MICRO_KINDS[case % len(MICRO_KINDS)]
    net, x, md, y, w, train, seed = random_micro_case(5000 + case, kind)
    _, analytic = backward(net, x, md, y, w, train_mode=train, rng_seed=seed)
    numeric = fd_gradients(net, x, md, y, w, train, seed)
    assert max_relative_error(analytic, numeric) < 1e-6


@pytest.mark.filterwarnings("ignore:overflow encountered")
def test_backward_reports_non_finite_layer():
    net = build_network((1, 1, 2), [flatten(), dense(2), relu(), dense(2)])
    net.params[1]["w"][...] = 1e300
    with pytest.raises(NumericError, match="layer"):
        backward(net, np.full((1, 1, 2), 1e10), None, [0])


def test_backward_rejects_bad_target():
    net = build_network((1, 1, 2), [flatten(), dense(2)])
    with pytest.raises(ShapeError):
        backward(net, np.zeros((1, 1, 2)), None, [2])


# ---------------------------------------------------------------------------
# determinism and dropout
# ---------------------------------------------------------------------------


def test_eval_forward_is_bit_stable():
    net = build_network((4, 4, 3), [conv2d(3), relu(), flatten(), dense(8), relu(), dropout(0.5), dense(3)], 4)
    x = np.random.default_rng(0).normal(size=(3, 4, 4, 3))
    md = np.ones((3, 4))
    a = forward(net, x, md)
    b = forward(net, x, md, train_mode=False, rng_seed=99)
    assert a.tobytes() == b.tobytes()


def test_train_mode_masks_are_reproducible():
    net = build_network((1, 1, 6), [flatten(), dropout(0.5), dense(2)])
    x = np.ones((4, 1, 1, 6))
    a = forward(net, x, train_mode=True, rng_seed=5)
    b = forward(net, x, train_mode=True, rng_seed=5)
    c = forward(net, x, train_mode=True, rng_seed=6)
    assert a.tobytes() == b.tobytes()
    assert a.tobytes() != c.tobytes()


def test_dropout_preserves_expected_activation():
    net = build_network((1, 1, 8), [flatten(), dropout(0.5)])
    x = np.linspace(0.5, 2.0, 8).reshape(1, 1, 1, 8)
    draws = np.repeat(x, 20000, axis=0)
    mean = forward(net, draws, train_mode=True, rng_seed=0).mean(axis=0)
    eval_out = forward(net, x)[0]
    assert np.all(np.abs(mean / eval_out - 1.0) < 0.02)


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


def test_adam_zero_gradient_leaves_params():
    net = build_network((1, 1, 2), [flatten(), dense(3)], seed=1)
    before = net.copy()
    state = AdamState.for_params(net.params)
    grads = [{k: np.zeros_like(a) for k, a in p.items()} for p in net.params]
    adam_step(net.params, grads, state, 1e-3)
    assert state.t == 1
    assert net.checksum() == before.checksum()


def test_adam_first_step_matches_oracle():
    theta = np.array([0.3, -1.2, 2.5, 0.0])
    g = np.array([0.5, -2e-9, 3.0, -0.25])
    params = [{"w": theta.copy()}]
    state = AdamState.for_params(params)
    adam_step(params, [{"w": g}], state, 0.01)
    # at t = 1 the bias-corrected step is lr * g / (|g| + eps)
    expected = theta - 0.01 * g / (np.abs(g) + 1e-8)
    np.testing.assert_allclose(params[0]["w"], expected, rtol=0, atol=1e-15)
    np.testing.assert_allclose(params[0]["w"], adam_oracle(theta, [g], 0.01), rtol=0, atol=1e-15)


def test_adam_multi_step_matches_oracle():
    rng = np.random.default_rng(0)
    theta = rng.normal(size=5)
    seq = [rng.normal(size=5) for _ in range(7)]
    params = [{"w": theta.copy()}]
    state = AdamState.for_params(params)
    for g in seq:
        adam_step(params, [{"w": g}], state, 3e-3)
    assert state.t == 7
    np.testing.assert_allclose(params[0]["w"], adam_oracle(theta, seq, 3e-3), rtol=0, atol=1e-14)


def test_adam_constant_gradient_moves_monotonically():
    params = [{"w": np.zeros(3)}]
    state = AdamState.for_params(params)
    g = np.array([1.0, -2.0, 0.5])
    path = []
    for _ in range(2):
        adam_step(params, [{"w": g}], state, 0.1)
        path.append(params[0]["w"].copy())
    assert np.all(np.sign(path[0]) == -np.sign(g))
    assert np.all(np.abs(path[1]) > np.abs(path[0]))


@pytest.mark.parametrize("lr", [0.0, -1e-3])
def test_adam_rejects_non_positive_lr(lr):
    params = [{"w": np.zeros(1)}]
    with pytest.raises(ConfigError):
        adam_step(params, [{"w": np.ones(1)}], AdamState.for_params(params), lr)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def test_checkpoint_round_trip(tmp_path):
    net = build_network((6, 6, 3), [conv2d(4), residual_block(), dense_block(1, 2), flatten(), dense(5), relu(),
                                    dropout(0.25), dense(3)], metadata_width=2, seed=11)
    path = tmp_path / "net.ckpt"
    save_network(net, path, {"note": "x", "means": [1.5]})
    loaded, extra = load_network(path)
    assert extra == {"note": "x", "means": [1.5]}
    assert loaded.checksum() == net.checksum()
    x = np.random.default_rng(0).normal(size=(6, 6, 3))
    assert forward(loaded, x, np.ones(2)).tobytes() == forward(net, x, np.ones(2)).tobytes()
    assert path.read_bytes()[:8] == b"HYDRNET1"


def test_checkpoint_encoding_is_deterministic():
    net = build_network((2, 2, 1), [flatten(), dense(2)], seed=3)
    assert encode_network(net, {"b": 1, "a": 2}) == encode_network(net.copy(), {"a": 2, "b": 1})


@pytest.mark.parametrize("mutate", [lambda b: b"XXXXXXXX" + b[8:], lambda b: b[:-3], lambda b: b + b"\0"])
def test_corrupt_checkpoint_is_a_data_error(mutate):
    from hydra_ensemble.errors import DataError

    data = encode_network(build_network((2, 2, 1), [flatten(), dense(2)]))
    with pytest.raises(DataError):
        decode_network(mutate(data))
