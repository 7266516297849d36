import numpy as np
import pytest

from spikerpe import autograd as ag
from spikerpe.errors import DimensionError, NumericError
from spikerpe.neuron import LIFParams, LIFState, lif_step
from spikerpe.verify import gradient_cases


def T(x, rg=True):
    return ag.tensor(np.asarray(x, dtype=np.float64), requires_grad=rg)


# -- linear -------------------------------------------------------------------


def test_linear_identity_and_hand_case():
    x = T([[1.0, 2.0]])
    np.testing.assert_array_equal(ag.linear(x, T(np.eye(2))).values, [[1.0, 2.0]])
    w = T([[1.0], [1.0]])
    y = ag.linear(x, w)
    np.testing.assert_array_equal(y.values, [[3.0]])
    ag.sum_all(y).backward()
    np.testing.assert_array_equal(w.grad, [[1.0], [2.0]])
    np.testing.assert_array_equal(x.grad, [[1.0, 1.0]])


def test_linear_shape_error():
    with pytest.raises(DimensionError):
        ag.linear(T(np.ones((2, 3))), T(np.ones((2, 2))))


def test_grad_check_examples(rng):
    x, w = T(rng.normal(size=(4, 3))), T(rng.normal(size=(3, 2)))
    wl = rng.normal(size=(4, 2))
    assert ag.grad_check(lambda p: ag.sum_all(ag.mul(ag.linear(p[0], p[1]), wl)), [x, w], eps=1e-4) < 1e-5

    bn = ag.BatchNormState.create(3)
    wt = rng.normal(size=(5, 3))

    def f_bn(p):
        return ag.sum_all(ag.mul(ag.batch_norm(p[0], bn), wt))

    assert ag.grad_check(f_bn, [T(rng.normal(size=(5, 3)))], eps=1e-4) < 1e-4

    w2 = T(rng.normal(size=(3, 3)))
    wt2 = rng.normal(size=(5, 3))

    def f_chain(p):
        return ag.sum_all(ag.mul(ag.batch_norm(ag.linear(p[0], p[1]), bn), wt2))

    assert ag.grad_check(f_chain, [T(rng.normal(size=(5, 3))), w2], eps=1e-4) < 1e-4


@pytest.mark.parametrize("name", list(gradient_cases().keys()))
def test_every_smooth_layer_passes_grad_check(name):
    f, params = gradient_cases(seed=7)[name]
    assert ag.grad_check(f, params, eps=1e-5) < 1e-4


def test_grad_check_catches_wrong_backward():
    def bad_square(x):
        def bw(g):
            x._accumulate(g * 3.0 * x.values)  # should be 2x

        return ag._result(x.values**2, (x,), bw)

    assert ag.grad_check(lambda p: ag.sum_all(bad_square(p[0])), [T([0.3, -1.2])]) > 0.1


# -- batch norm ----------------------------------------------------------------


def test_bn_constant_input_is_zero():
    st = ag.BatchNormState.create(2)
    out = ag.batch_norm(T(np.full((4, 2), 3.0)), st)
    np.testing.assert_allclose(out.values, 0.0, atol=1e-12)


def test_bn_zero_gamma_gives_beta(rng):
    st = ag.BatchNormState.create(3)
    st.gamma.values[:] = 0.0
    st.beta.values[:] = [1.0, -2.0, 0.5]
    out = ag.batch_norm(T(rng.normal(size=(6, 3))), st)
    np.testing.assert_array_equal(out.values, np.broadcast_to([1.0, -2.0, 0.5], (6, 3)))


def test_bn_two_sample_hand_case():
    st = ag.BatchNormState.create(1)
    out = ag.batch_norm(T([[0.0], [2.0]]), st).values[:, 0]
    expect = 1.0 / np.sqrt(1.0 + 1e-5)
    np.testing.assert_allclose(out, [-expect, expect], rtol=0, atol=1e-15)


def test_bn_normalises_over_all_leading_axes(rng):
    st = ag.BatchNormState.create(5)
    x = rng.normal(3.0, 2.5, (4, 8, 16, 5))  # T x B x L x C
    y = ag.batch_norm(T(x), st).values.reshape(-1, 5)
    assert np.abs(y.mean(axis=0)).max() < 1e-6
    assert np.abs(y.var(axis=0) - 1.0).max() < 1e-4


def test_bn_running_stats_and_eval(rng):
    st = ag.BatchNormState.create(2, momentum=0.5)
    x = rng.normal(size=(10, 2))
    ag.batch_norm(T(x), st)
    np.testing.assert_allclose(st.running_mean, 0.5 * x.mean(axis=0))
    np.testing.assert_allclose(st.running_var, 0.5 + 0.5 * x.var(axis=0, ddof=1))
    out = ag.batch_norm(T(x), st, training=False).values
    np.testing.assert_allclose(out, (x - st.running_mean) / np.sqrt(st.running_var + st.eps))


def test_bn_errors():
    st = ag.BatchNormState.create(3)
    with pytest.raises(DimensionError):
        ag.batch_norm(T(np.ones((2, 2))), st)
    with pytest.raises(NumericError):
        ag.batch_norm(T(np.ones((0, 3))), st)


# -- spike layer -----------------------------------------------------------------


def test_spike_layer_examples():
    p = LIFParams()
    big = ag.spike_layer(T(np.full((4, 3), 10.0), rg=False), p)
    np.testing.assert_array_equal(big.values, 1.0)
    zero = ag.spike_layer(T(np.zeros((4, 3)), rg=False), p)
    np.testing.assert_array_equal(zero.values, 0.0)


def test_spike_layer_matches_lif_step(rng):
    cur = rng.normal(0.8, 1.0, (6, 3, 5))
    out = ag.spike_layer(T(cur, rg=False)).values
    st = LIFState.rest(15)
    for t in range(6):
        s, st = lif_step(st, cur[t].ravel())
        np.testing.assert_array_equal(out[t].ravel(), s)


def test_surrogate_gradient_at_threshold():
    x = T([0.0])
    ag.sum_all(ag.heaviside(x, alpha=2.0)).backward()
    assert x.grad[0] == 1.0  # alpha / 2
    # through the LIF layer: dS/dI = surrogate(H - u_thr) / tau with H == u_thr
    i = T([[2.0]])
    ag.sum_all(ag.spike_layer(i, LIFParams(tau=2.0), alpha=2.0)).backward()
    assert i.grad[0, 0] == 0.5


def _composed_lif(x, p, alpha):
    """The same recurrence from primitive ops, for cross-checking the fused layer."""
    u = ag.tensor(np.full(x.shape[1:], p.u_reset))
    outs = []
    for t in range(x.shape[0]):
        it = ag.select(x, t, axis=0)
        h = ag.add(u, ag.mul(ag.add(it, ag.add(ag.mul(u, -1.0), p.u_reset)), 1.0 / p.tau))
        s = ag.heaviside(ag.add(h, -p.u_thr), alpha)
        u = ag.add(ag.add(h, ag.mul(ag.mul(h, s), -1.0)), ag.mul(s, p.u_reset))
        outs.append(s)
    return outs


@pytest.mark.parametrize("params", [LIFParams(), LIFParams(tau=3.0, u_thr=0.7, u_reset=-0.2)])
def test_fused_spike_layer_matches_composed_primitives(rng, params):
    cur = rng.normal(0.6, 1.0, (5, 4, 3))
    w = rng.normal(size=cur.shape)
    x1, x2 = T(cur), T(cur)
    fused = ag.spike_layer(x1, params, alpha=2.0)
    ag.sum_all(ag.mul(fused, w)).backward()
    steps = _composed_lif(x2, params, 2.0)
    np.testing.assert_array_equal(fused.values, np.stack([s.values for s in steps]))
    total = ag.sum_all(ag.mul(steps[0], w[0]))
    for t in range(1, len(steps)):
        total = ag.add(total, ag.sum_all(ag.mul(steps[t], w[t])))
    total.backward()
    np.testing.assert_allclose(x1.grad, x2.grad, rtol=1e-12, atol=1e-14)


def test_spike_layer_binary_in_float32(rng):
    out = ag.spike_layer(ag.tensor(rng.normal(size=(4, 10)).astype(np.float32), True))
    assert out.values.dtype == np.float32
    assert set(np.unique(out.values).tolist()) <= {0.0, 1.0}


# -- tape mechanics ------------------------------------------------------------------


def test_gradients_accumulate_across_uses():
    x = T([1.0, 2.0])
    y = ag.add(ag.mul(x, 3.0), ag.mul(x, x))
    ag.sum_all(y).backward()
    np.testing.assert_array_equal(x.grad, [3 + 2, 3 + 4])


def test_backward_twice_accumulates_leaf_grads():
    x = T([1.0])
    ag.sum_all(ag.mul(x, 2.0)).backward()
    ag.sum_all(ag.mul(x, 2.0)).backward()
    assert x.grad[0] == 4.0


def test_backward_needs_scalar():
    with pytest.raises(DimensionError):
        ag.mul(T([1.0, 2.0]), 2.0).backward()


def test_dtype_is_preserved():
    x = ag.tensor(np.ones((2, 3), dtype=np.float32), True)
    w = ag.tensor(np.ones((3, 2), dtype=np.float32), True)
    y = ag.mul(ag.linear(x, w), 0.5)
    assert y.values.dtype == np.float32
    ag.sum_all(y).backward()
    assert x.grad.dtype == np.float32 and w.grad.dtype == np.float32


def test_xnor_scores_on_binary_inputs_count_agreements(rng):
    q = rng.integers(0, 2, (3, 6)).astype(float)
    k = rng.integers(0, 2, (4, 6)).astype(float)
    s = ag.xnor_scores(T(q), T(k)).values
    np.testing.assert_array_equal(s, (q[:, None, :] == k[None, :, :]).sum(-1))


def test_cross_entropy_value():
    logits = T([[0.0, 0.0], [np.log(3.0), 0.0]])
    loss = ag.cross_entropy(logits, [0, 0]).values
    assert float(loss) == pytest.approx((np.log(2) + np.log(4 / 3)) / 2)


def test_adam_minimises_quadratic():
    x = T([3.0, -2.0])
    opt = ag.Adam([x], lr=0.1)
    for _ in range(300):
        opt.zero_grad()
        ag.sum_all(ag.mul(x, x)).backward()
        opt.step()
    assert np.abs(x.values).max() < 1e-2


def test_cosine_lr():
    assert ag.cosine_lr(1.0, 0, 10) == 1.0
    assert ag.cosine_lr(1.0, 5, 10) == pytest.approx(0.5)
    assert ag.cosine_lr(1.0, 10, 10, floor=0.1) == pytest.approx(0.1)
    assert ag.cosine_lr(0.3, 4, 0) == 0.3
