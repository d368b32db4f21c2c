import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from uad.nn import (
    Mlp,
    RmsPropState,
    ShapeError,
    backward,
    clip_weights,
    forward,
    init_mlp,
    rmsprop_step,
)


def _net(dims, weights, biases, out="identity"):
    return Mlp(tuple(dims), tuple(np.array(w, float) for w in weights),
               tuple(np.array(b, float) for b in biases), "leaky_relu", out)


def test_forward_affine():
    net = _net([1, 1], [[[2.0]]], [[1.0]])
    assert forward(net, [3.0]) == pytest.approx([7.0])


def test_forward_sigmoid_of_zero():
    net = init_mlp([3, 4, 1], np.random.default_rng(0), output_activation="sigmoid")
    net = net.with_params([np.zeros_like(p) for p in net.params()])
    np.testing.assert_array_equal(forward(net, [5.0, -2.0, 9.0]), [0.5])


def test_forward_two_layer_by_hand():
    # W stored (fan_in, fan_out): h = x @ W + b
    W1, b1 = [[1.0, -2.0], [0.5, 1.0]], [0.1, -0.3]
    W2, b2 = [[2.0, -1.0], [1.0, 3.0]], [0.0, 0.5]
    net = _net([2, 2, 2], [W1, W2], [b1, b2])
    x = [1.0, 2.0]
    # hidden pre-activations: [1*1 + 2*0.5 + 0.1, 1*-2 + 2*1 - 0.3] = [2.1, -0.3]
    h = [2.1, -0.3 * 0.01]
    expected = [h[0] * 2.0 + h[1] * 1.0 + 0.0, h[0] * -1.0 + h[1] * 3.0 + 0.5]
    np.testing.assert_allclose(forward(net, x), expected, rtol=1e-15)


def test_forward_shape_error():
    net = init_mlp([2, 3, 1], np.random.default_rng(0))
    with pytest.raises(ShapeError):
        forward(net, [1.0, 2.0, 3.0])


def test_mlp_rejects_inconsistent_shapes():
    with pytest.raises(ShapeError):
        _net([2, 1], [[[1.0, 2.0]]], [[0.0]])


def test_backward_single_neuron():
    net = _net([1, 1], [[[0.7]]], [[-0.2]])
    g = backward(net, [[3.0]], [[1.0]])
    assert g.weights[0][0, 0] == 3.0
    assert g.biases[0][0] == 1.0


def test_backward_zero_input_linear_layer():
    net = _net([2, 2], [[[0.3, -0.1], [0.2, 0.4]]], [[0.0, 0.0]])
    og = np.array([[1.0, -2.0], [0.5, 3.0], [2.0, 1.0]])
    g = backward(net, np.zeros((3, 2)), og)
    np.testing.assert_array_equal(g.weights[0], np.zeros((2, 2)))
    np.testing.assert_array_equal(g.biases[0], og.sum(axis=0))


def test_backward_rejects_nan():
    net = init_mlp([1, 2, 1], np.random.default_rng(0))
    with pytest.raises(ValueError):
        backward(net, [[np.nan]], [[1.0]])


def test_backward_rejects_empty():
    net = init_mlp([1, 2, 1], np.random.default_rng(0))
    with pytest.raises(ShapeError):
        backward(net, np.zeros((0, 1)), np.zeros((0, 1)))


def numeric_gradients(net, x, og, h=1e-5):
    """Central differences of sum_i <net(x_i), og_i> over every parameter."""
    params = net.params()
    out = []
    for k, p in enumerate(params):
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            plus = [q.copy() for q in params]
            minus = [q.copy() for q in params]
            plus[k][idx] += h
            minus[k][idx] -= h
            fp = np.sum(forward(net.with_params(plus), x) * og)
            fm = np.sum(forward(net.with_params(minus), x) * og)
            g[idx] = (fp - fm) / (2 * h)
        out.append(g)
    return out


def max_rel_error(analytic, numeric, floor=1e-7):
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


@pytest.mark.parametrize("dims,out", [([1, 3, 2], "identity"), ([2, 4, 3, 1], "sigmoid")])
def test_backward_matches_finite_differences_small(dims, out):
    rng = np.random.default_rng(5)
    net = init_mlp(dims, rng, output_activation=out)
    net = net.with_params([p + 0.1 * rng.standard_normal(p.shape) for p in net.params()])
    x = rng.standard_normal((6, dims[0]))
    og = rng.standard_normal((6, dims[-1]))
    g = backward(net, x, og)
    assert max_rel_error(g.params(), numeric_gradients(net, x, og)) < 1e-4


def test_input_gradient_matches_finite_differences():
    rng = np.random.default_rng(2)
    net = init_mlp([3, 5, 1], rng, output_activation="sigmoid")
    x = rng.standard_normal((4, 3))
    og = rng.standard_normal((4, 1))
    g = backward(net, x, og).inputs
    num = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[idx] += 1e-5
        xm[idx] -= 1e-5
        num[idx] = (np.sum(forward(net, xp) * og) - np.sum(forward(net, xm) * og)) / 2e-5
    np.testing.assert_allclose(g, num, rtol=1e-6, atol=1e-9)


def test_forward_is_pure():
    net = init_mlp([2, 32, 32, 1], np.random.default_rng(3), output_activation="sigmoid")
    x = np.random.default_rng(4).standard_normal((50, 2))
    before = [p.copy() for p in net.params()]
    a, b = forward(net, x), forward(net, x)
    assert np.array_equal(a, b)
    assert all(np.array_equal(p, q) for p, q in zip(before, net.params()))


def test_sigmoid_output_in_open_interval():
    net = init_mlp([1, 8, 1], np.random.default_rng(0), output_activation="sigmoid")
    y = forward(net, np.linspace(-50, 50, 201)[:, None])
    assert np.all((y > 0) & (y < 1))


# --- RMSProp -------------------------------------------------------------------

def test_rmsprop_zero_gradient():
    p = [np.array([1.0, -2.0])]
    st_ = RmsPropState((np.array([4.0, 1.0]),), rho=0.9, eps=1e-8)
    new_p, new_st = rmsprop_step(p, [np.zeros(2)], st_, 0.001)
    np.testing.assert_array_equal(new_p[0], p[0])
    np.testing.assert_allclose(new_st.accum[0], [3.6, 0.9])


def test_rmsprop_first_step_magnitude():
    # v' = 0.1, step = 0.001 / (sqrt(0.1) + 1e-8)
    p, s = rmsprop_step([np.array([0.0])], [np.array([1.0])],
                        RmsPropState.for_params([np.zeros(1)]), 0.001)
    assert -p[0][0] == pytest.approx(0.0031623, abs=1e-7)
    assert s.accum[0][0] == pytest.approx(0.1)


def test_rmsprop_sign_flip():
    g = np.array([0.3, -1.2, 2.0])
    st0 = RmsPropState((np.array([0.5, 0.1, 0.0]),))
    p0 = [np.zeros(3)]
    a, sa = rmsprop_step(p0, [g], st0, 0.01)
    b, sb = rmsprop_step(p0, [-g], st0, 0.01)
    np.testing.assert_array_equal(a[0], -b[0])
    np.testing.assert_array_equal(sa.accum[0], sb.accum[0])


def test_rmsprop_rejects_nonpositive_rate():
    with pytest.raises(ValueError):
        rmsprop_step([np.zeros(1)], [np.zeros(1)], RmsPropState.for_params([np.zeros(1)]), 0.0)


finite = st.floats(-1e6, 1e6, allow_nan=False)


@settings(max_examples=50, deadline=None)
@given(arrays(float, 5, elements=finite), arrays(float, 5, elements=finite),
       arrays(float, 5, elements=st.floats(0, 1e6)))
def test_rmsprop_never_nan(p, g, v):
    new_p, new_st = rmsprop_step([p], [g], RmsPropState((v,)), 0.001)
    assert np.all(np.isfinite(new_p[0]))
    assert np.all(new_st.accum[0] >= 0)


# --- clipping --------------------------------------------------------------------

def test_clip_examples():
    np.testing.assert_array_equal(clip_weights([np.array([0.02, -0.05])], 0.01)[0], [0.01, -0.01])
    inside = np.array([0.005, -0.01, 0.01, 0.0])
    np.testing.assert_array_equal(clip_weights([inside], 0.01)[0], inside)


@settings(max_examples=50, deadline=None)
@given(arrays(float, (3, 4), elements=finite), st.floats(1e-6, 10))
def test_clip_idempotent(p, c):
    once = clip_weights([p], c)
    twice = clip_weights(once, c)
    np.testing.assert_array_equal(once[0], twice[0])
    assert np.all(np.abs(once[0]) <= c)
