import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from edgefedcache.neural import (
    SGD,
    Adam,
    LayerParams,
    QNetwork,
    apply_gradients,
    backward,
    forward,
    grad_check,
    make_optimizer,
    random_probe,
    soft_update,
)


def zeroed(net):
    for p in net.parameters():
        p[...] = 0.0
    return net


def numeric_grads(net, states, actions, targets, eps=1e-6):
    """Independent central-difference oracle over every parameter."""
    out = []
    for p in net.parameters():
        g = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = p[idx]
            p[idx] = orig + eps
            up = net.loss(states, actions, targets)
            p[idx] = orig - eps
            down = net.loss(states, actions, targets)
            p[idx] = orig
            g[idx] = (up - down) / (2 * eps)
        out.append(g)
    return out


def test_layer_dimensions_chain():
    net = QNetwork(5, 128, 6)
    assert net.dims == [10, 128, 128, 128, 128, 128, 10]
    assert len(net.weights) == 6
    assert all(w.shape == (a, b) for w, a, b in zip(net.weights, net.dims[:-1], net.dims[1:]))


def test_init_bounds_follow_fan_in():
    net = QNetwork(3, 16, 4, seed=5)
    for w, b, fan_in in zip(net.weights, net.biases, net.dims[:-1]):
        bound = 1 / np.sqrt(fan_in)
        assert np.all(np.abs(w) <= bound) and np.all(np.abs(b) <= bound)


def test_zero_network_outputs_zero():
    net = zeroed(QNetwork(3, 8, 4))
    assert np.all(forward(net, np.arange(6.0)) == 0)


def test_single_linear_layer_reads_weight_column():
    net = QNetwork(2, 1, 1, seed=1)
    net.biases[0][...] = 0
    for i in range(4):
        e = np.zeros(4)
        e[i] = 1
        np.testing.assert_array_equal(net.forward(e).reshape(-1), net.weights[0][i])


def test_forward_is_deterministic():
    net = QNetwork(4, 16, 6, seed=3)
    s = np.random.default_rng(0).normal(size=8)
    assert forward(net, s).tobytes() == forward(net, s).tobytes()
    assert forward(net, s).shape == (4, 2)


def test_forward_rejects_wrong_dimension():
    with pytest.raises(ValueError):
        QNetwork(3, 4, 2).forward(np.zeros(5))


def test_targets_at_outputs_give_zero_loss_and_gradient():
    net = QNetwork(3, 8, 4, seed=2)
    rng = np.random.default_rng(0)
    s = rng.normal(size=(5, 6))
    a = rng.integers(0, 2, size=(5, 3))
    y = np.take_along_axis(net.forward_batch(s), a[..., None], axis=2)[..., 0]
    loss, grads = backward(net, s, a, y)
    assert loss == 0.0
    assert all(np.all(g == 0) for g in grads)


def test_single_parameter_hand_gradient():
    net = QNetwork(1, 1, 1)
    net.weights[0][...] = 0.0
    net.biases[0][...] = 0.0
    net.weights[0][0, 1] = 1.0  # Q(s, a=1) = theta * s[0]
    loss, grads = net.backward(np.array([[1.0, 0.0]]), np.array([[1]]), np.array([[2.0]]))
    assert loss == pytest.approx(1.0, abs=1e-12)
    assert grads[0][0, 1] == pytest.approx(-2.0, abs=1e-12)
    assert grads[0][0, 0] == 0.0  # unchosen head unit gets no signal


def test_only_chosen_units_get_direct_signal():
    net = QNetwork(3, 4, 1, seed=0)
    s = np.ones((1, 6))
    _, grads = net.backward(s, np.array([[0, 1, 1]]), np.array([[5.0, 5.0, 5.0]]))
    db = grads[1]
    assert np.all(db[[1, 2, 4]] == 0) and np.all(db[[0, 3, 5]] != 0)


def test_backward_matches_oracle_on_small_net():
    net = QNetwork(2, 3, 3, seed=8)
    s, a, y = random_probe(net, 6, np.random.default_rng(1), scale=1.0)
    _, grads = net.backward(s, a, y)
    for g, n in zip(grads, numeric_grads(net, s, a, y)):
        np.testing.assert_allclose(g, n, rtol=1e-5, atol=1e-8)
    assert grad_check(net, s, a, y) < 1e-4


def test_backward_rejects_non_finite_targets():
    net = QNetwork(2, 3, 2)
    with pytest.raises(FloatingPointError):
        net.backward(np.zeros((1, 4)), np.zeros((1, 2), int), np.array([[np.nan, 0.0]]))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), c=st.integers(1, 4), width=st.integers(2, 8))
def test_gradients_agree_with_finite_differences(seed, c, width):
    rng = np.random.default_rng(seed)
    net = QNetwork(c, width, 6, rng=rng)
    s, a, y = random_probe(net, 4, rng)
    assert grad_check(net, s, a, y, eps=1e-5) < 1e-4


def test_grad_check_on_linear_net_is_near_exact():
    net = QNetwork(3, 4, 1, seed=4)
    s, a, y = random_probe(net, 5, np.random.default_rng(2))
    assert grad_check(net, s, a, y) < 1e-8


def test_grad_check_catches_a_corrupted_entry():
    net = QNetwork(4, 8, 6, seed=6)
    s, a, y = random_probe(net, 4, np.random.default_rng(3))
    _, grads = net.backward(s, a, y)
    assert grad_check(net, s, a, y, grads=grads) < 1e-4
    bad = [g.copy() for g in grads]
    flat = bad[-2].reshape(-1)
    flat[np.argmax(np.abs(flat))] *= 2
    assert grad_check(net, s, a, y, grads=bad) > 0.3


def test_grad_check_restores_parameters():
    net = QNetwork(2, 4, 3, seed=1)
    before = [p.copy() for p in net.parameters()]
    grad_check(net, *random_probe(net, 3, np.random.default_rng(0)))
    assert all(np.array_equal(p, q) for p, q in zip(before, net.parameters()))


def test_sgd_step_arithmetic():
    net = QNetwork(1, 1, 1)
    for p in net.parameters():
        p[...] = 1.0
    grads = [np.full_like(p, 0.5) for p in net.parameters()]
    apply_gradients(net, grads, SGD(0.002))
    assert all(np.allclose(p, 0.999, rtol=0, atol=1e-15) for p in net.parameters())


def test_zero_gradient_leaves_net_unchanged():
    net = QNetwork(2, 4, 3, seed=3)
    before = net.to_bytes()
    apply_gradients(net, [np.zeros_like(p) for p in net.parameters()], SGD(0.1))
    assert net.to_bytes() == before


def test_sgd_steps_add_up():
    rng = np.random.default_rng(0)
    a, b = QNetwork(2, 4, 3, seed=3), QNetwork(2, 4, 3, seed=3)
    g = [rng.normal(size=p.shape) for p in a.parameters()]
    sgd = SGD(0.01)
    sgd.step(a, g)
    sgd.step(a, g)
    sgd.step(b, [2 * x for x in g])
    for p, q in zip(a.parameters(), b.parameters()):
        np.testing.assert_allclose(p, q, rtol=0, atol=1e-14)


def test_gradient_shape_mismatch():
    net = QNetwork(2, 4, 3)
    with pytest.raises(ValueError):
        apply_gradients(net, [np.zeros(3)], SGD())


def test_adam_moves_against_gradient():
    net = QNetwork(2, 4, 3, seed=0)
    before = [p.copy() for p in net.parameters()]
    grads = [np.ones_like(p) for p in net.parameters()]
    Adam(0.01).step(net, grads)
    for p, q in zip(net.parameters(), before):
        np.testing.assert_allclose(p, q - 0.01, atol=1e-6)
    with pytest.raises(ValueError):
        make_optimizer("rmsprop", 0.1)


def test_soft_update_extremes_and_value():
    online, target = QNetwork(2, 4, 3, seed=1), QNetwork(2, 4, 3, seed=2)
    frozen = target.to_bytes()
    soft_update(target, online, 0.0)
    assert target.to_bytes() == frozen
    soft_update(target, online, 1.0)
    assert all(np.array_equal(p, q) for p, q in zip(target.parameters(), online.parameters()))

    one, zero = QNetwork(1, 1, 1), QNetwork(1, 1, 1)
    for p in one.parameters():
        p[...] = 1.0
    for p in zero.parameters():
        p[...] = 0.0
    soft_update(zero, one, 0.005)
    assert all(np.all(p == 0.005) for p in zero.parameters())


@settings(max_examples=30, deadline=None)
@given(tau=st.floats(0, 1), seed=st.integers(0, 1000))
def test_soft_update_fixed_point(tau, seed):
    online = QNetwork(2, 4, 3, seed=seed)
    target = online.copy()
    soft_update(target, online, tau)
    assert target.to_bytes() == online.to_bytes()


def test_soft_update_architecture_mismatch():
    with pytest.raises(ValueError):
        soft_update(QNetwork(2, 4, 3), QNetwork(2, 5, 3), 0.5)
    with pytest.raises(ValueError):
        soft_update(QNetwork(2, 4, 3), QNetwork(2, 4, 3), 1.5)


def test_export_import_round_trip():
    net = QNetwork(3, 6, 6, seed=4)
    clone = zeroed(net.copy())
    clone.import_layers(net.export_layers(range(6)))
    assert clone.to_bytes() == net.to_bytes()


def test_import_touches_only_named_layers():
    net, other = QNetwork(3, 6, 6, seed=4), QNetwork(3, 6, 6, seed=5)
    net.import_layers(other.export_layers([0]))
    assert np.array_equal(net.weights[0], other.weights[0])
    ref = QNetwork(3, 6, 6, seed=4)
    for i in range(1, 6):
        assert np.array_equal(net.weights[i], ref.weights[i])
        assert np.array_equal(net.biases[i], ref.biases[i])


def test_disjoint_exports_partition_parameters():
    net = QNetwork(3, 6, 6, seed=4)
    a, b = net.export_layers([0, 1, 2, 3]), net.export_layers([4, 5])
    total = sum(p.weights.size + p.biases.size for p in a + b)
    assert total == net.num_parameters()
    assert {p.layer_index for p in a}.isdisjoint({p.layer_index for p in b})


def test_import_validates_before_mutating():
    net = QNetwork(3, 6, 3, seed=4)
    before = net.to_bytes()
    good = net.export_layers([0])[0]
    bad = LayerParams(1, np.zeros((2, 2)), np.zeros(2))
    with pytest.raises(ValueError):
        net.import_layers([good, bad])
    with pytest.raises(IndexError):
        net.import_layers([LayerParams(7, good.weights, good.biases)])
    assert net.to_bytes() == before


def test_checkpoint_round_trip():
    net = QNetwork(3, 6, 4, seed=9)
    back = QNetwork.from_bytes(net.to_bytes())
    assert back.dims == net.dims and back.to_bytes() == net.to_bytes()


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_loss_is_nonnegative(seed):
    net = QNetwork(2, 4, 3, seed=seed)
    s, a, y = random_probe(net, 3, np.random.default_rng(seed), scale=2.0)
    assert net.loss(s, a, y) >= 0
