import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from epitopo import autodiff as ad
from epitopo.errors import DomainError, NotScalar, ShapeMismatch

from conftest import finite_difference


def check_grad(build, leaves, rng, coords=5, rtol=1e-6, atol=1e-8):
    """Compare backward() against central differences on random coordinates."""
    for t in leaves:
        t.zero_grad()
    build().backward()
    for t in leaves:
        for _ in range(coords):
            idx = tuple(int(rng.integers(0, s)) for s in t.shape)
            fd = finite_difference(lambda: build().item(), t.data, idx)
            assert t.grad[idx] == pytest.approx(fd, rel=rtol, abs=atol)


def test_sigmoid_at_zero():
    x = ad.tensor(0.0)
    y = ad.sigmoid(x)
    y.backward()
    assert y.item() == 0.5
    assert x.grad == pytest.approx(0.25)


def test_square_derivative():
    x = ad.tensor(3.0)
    (x * x).backward()
    assert x.grad == pytest.approx(6.0)


def test_variance_of_constant_is_flat():
    x = ad.tensor(np.full(6, 2.5))
    v = ad.variance(x)
    v.backward()
    assert v.item() == 0.0
    assert np.all(x.grad == 0.0)


def test_sum_gives_ones(rng):
    W = ad.tensor(rng.normal(size=(3, 4, 2)))
    ad.sum(W).backward()
    assert np.array_equal(W.grad, np.ones((3, 4, 2)))


def test_least_squares_gradient_matches_closed_form(rng):
    W = ad.tensor(rng.normal(size=(4, 3)))
    x = rng.normal(size=(3, 1))
    y = rng.normal(size=(4, 1))
    r = ad.matmul(W, x) - y
    ad.sum(r * r).backward()
    expected = 2.0 * (W.data @ x - y) @ x.T
    assert np.max(np.abs(W.grad - expected)) < 1e-10


def test_backward_requires_scalar():
    with pytest.raises(NotScalar):
        ad.tensor(np.ones(3)).backward()


def test_backward_accumulates_on_leaves():
    x = ad.tensor(2.0)
    (x * x).backward()
    (x * x).backward()
    assert x.grad == pytest.approx(8.0)
    x.zero_grad()
    assert x.grad == 0.0


def test_domain_errors():
    with pytest.raises(DomainError):
        ad.log(ad.tensor([1.0, 0.0]))
    with pytest.raises(DomainError):
        ad.div(ad.tensor(1.0), ad.tensor([1.0, 0.0]))


def test_shape_errors():
    with pytest.raises(ShapeMismatch):
        ad.matmul(ad.tensor(np.ones((2, 3))), ad.tensor(np.ones((2, 3))))
    with pytest.raises(ShapeMismatch):
        ad.matmul(ad.tensor(np.ones(3)), ad.tensor(np.ones((3, 1))))
    with pytest.raises(ShapeMismatch):
        ad.tensor(np.ones(3)) + ad.tensor(np.ones(4))


def test_constants_carry_no_gradient():
    c = ad.constant([1.0, 2.0])
    x = ad.tensor([3.0, 4.0])
    ad.sum(c * x).backward()
    assert c.grad is None
    assert np.array_equal(x.grad, [1.0, 2.0])


ELEMENTWISE = {
    "exp": ad.exp,
    "expm1": ad.expm1,
    "log": ad.log,
    "sigmoid": ad.sigmoid,
    "sqrt": ad.sqrt,
    "neg": lambda t: -t,
    "pow3": lambda t: t ** 3,
    "recip": lambda t: 1.0 / t,
}


@pytest.mark.parametrize("name", sorted(ELEMENTWISE))
def test_elementwise_gradients(name, rng):
    x = ad.tensor(rng.uniform(0.2, 2.0, size=(3, 4)))
    w = rng.normal(size=(3, 4))
    check_grad(lambda: ad.sum(ELEMENTWISE[name](x) * w), [x], rng)


def test_binary_broadcast_gradients(rng):
    a = ad.tensor(rng.normal(size=(3, 1, 4)))
    b = ad.tensor(rng.uniform(0.5, 1.5, size=(5, 1)))
    w = rng.normal(size=(3, 5, 4))
    for op in (np.add, np.subtract, np.multiply, np.divide):
        f = {np.add: lambda: a + b, np.subtract: lambda: a - b,
             np.multiply: lambda: a * b, np.divide: lambda: a / b}[op]
        check_grad(lambda: ad.sum(f() * w), [a, b], rng)


def test_reduction_gradients(rng):
    x = ad.tensor(rng.normal(size=(3, 4, 5)))
    w1 = rng.normal(size=(3, 5))
    check_grad(lambda: ad.sum(ad.sum(x, axis=1) * w1), [x], rng)
    w2 = rng.normal(size=(1, 4, 1))
    check_grad(lambda: ad.sum(ad.mean(x, axis=(0, 2), keepdims=True) * w2), [x], rng)
    w3 = rng.normal(size=(3, 5))
    check_grad(lambda: ad.sum(ad.variance(x, axis=1) * w3), [x], rng)
    check_grad(lambda: ad.l2_norm(x), [x], rng)
    w4 = rng.normal(size=(3, 4, 1))
    check_grad(lambda: ad.sum(ad.l2_norm(x, axis=-1, keepdims=True) * w4), [x], rng)


def test_shape_op_gradients(rng):
    x = ad.tensor(rng.normal(size=(2, 3, 4)))
    w = rng.normal(size=(4, 2, 3))
    check_grad(lambda: ad.sum(ad.transpose(x, (2, 0, 1)) * w), [x], rng)
    check_grad(lambda: ad.sum(ad.reshape(x, (6, 4)) * w.reshape(6, 4)), [x], rng)
    check_grad(lambda: ad.sum(ad.broadcast_to(x[:, :1, :], (2, 3, 4)) * w.transpose(1, 2, 0)), [x], rng)
    y = ad.tensor(rng.normal(size=(2, 3, 4)))
    ws = rng.normal(size=(2, 2, 3, 4))
    check_grad(lambda: ad.sum(ad.stack([x, y], axis=1) * ws), [x, y], rng)
    wc = rng.normal(size=(2, 3, 8))
    check_grad(lambda: ad.sum(ad.concatenate([x, y], axis=2) * wc), [x, y], rng)
    check_grad(lambda: ad.sum(x[1, ::2] * 3.0), [x], rng)


def test_matmul_batched_gradients(rng):
    a = ad.tensor(rng.normal(size=(2, 3, 4)))
    b = ad.tensor(rng.normal(size=(4, 5)))
    w = rng.normal(size=(2, 3, 5))
    check_grad(lambda: ad.sum(ad.matmul(a, b) * w), [a, b], rng)


def test_scalar_power_base_matches_power(rng):
    M = ad.tensor(rng.uniform(0, 5, size=(3, 3)))
    out = ad.scalar_power_base(0.8, M)
    assert np.allclose(out.data, 0.8 ** M.data, rtol=1e-14)
    check_grad(lambda: ad.sum(ad.scalar_power_base(0.8, M)), [M], rng)


def dense_recurrence(q, x, init):
    """Closed form y[t] = q^t init + sum_{s<t} q^(t-1-s) x[s]."""
    T = x.shape[-1]
    t = np.arange(T)
    lag = t[:, None] - 1 - t[None, :]
    mask = lag >= 0
    decay = np.where(mask, q[..., None, None] ** np.where(mask, lag, 0), 0.0)
    return (decay @ x[..., None])[..., 0] + q[..., None] ** t * init[..., None]


def test_linear_recurrence_matches_closed_form(rng):
    q = rng.uniform(0.1, 0.95, size=(4, 3))
    x = rng.uniform(0, 0.1, size=(4, 3, 20))
    init = rng.uniform(0, 0.1, size=(4, 3))
    y = ad.linear_recurrence(ad.constant(q), ad.constant(x), ad.constant(init))
    assert np.max(np.abs(y.data - dense_recurrence(q, x, init))) < 1e-15


def test_linear_recurrence_gradients(rng):
    q = ad.tensor(rng.uniform(0.3, 0.9, size=(3, 2)))
    x = ad.tensor(rng.normal(size=(3, 2, 9)))
    init = ad.tensor(rng.normal(size=(3, 2)))
    w = rng.normal(size=(3, 2, 9))
    check_grad(lambda: ad.sum(ad.linear_recurrence(q, x, init) * w), [q, x, init], rng)


@given(arrays(np.float64, st.integers(1, 6), elements=st.floats(-3, 3)))
def test_sigmoid_bounded_and_symmetric(values):
    s = ad.sigmoid(ad.constant(values)).data
    assert np.all((s >= 0) & (s <= 1))
    assert np.allclose(s + ad.sigmoid(ad.constant(-values)).data, 1.0)


@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 4)), elements=st.floats(-5, 5)))
def test_sum_and_mean_gradients_are_uniform(values):
    x = ad.tensor(values)
    ad.mean(x).backward()
    assert np.allclose(x.grad, 1.0 / values.size)


# --- Adam ---------------------------------------------------------------

def test_adam_zero_gradient_leaves_parameters():
    p = [np.array([1.0, -2.0])]
    state = ad.OptimizerState()
    ad.adam_step(p, [np.zeros(2)], state)
    assert np.array_equal(p[0], [1.0, -2.0])
    assert state.step == 1


def test_adam_moves_against_gradient_sign():
    p = [np.array([0.0, 0.0])]
    state = ad.OptimizerState(lr=0.1)
    for _ in range(20):
        ad.adam_step(p, [np.array([2.0, -0.5])], state)
    assert p[0][0] < 0 < p[0][1]


def test_adam_quadratic_bowl():
    x = ad.tensor(1.0)
    opt = ad.Adam([x], lr=0.05)
    for _ in range(500):
        opt.zero_grad()
        (x * x).backward()
        opt.step()
    assert abs(x.item()) < 1e-2


def test_adam_first_step_is_lr_times_sign():
    p = [np.array([3.0])]
    ad.adam_step(p, [np.array([1e-3])], ad.OptimizerState(lr=0.01))
    assert p[0][0] == pytest.approx(2.99, abs=1e-6)


def test_adam_is_deterministic(rng):
    start = rng.normal(size=(3, 3))

    def run():
        W = ad.tensor(start.copy())
        opt = ad.Adam([W], lr=0.01)
        for _ in range(50):
            opt.zero_grad()
            ad.sum(ad.sigmoid(W) * ad.sigmoid(W)).backward()
            opt.step()
        return W.data

    assert np.array_equal(run(), run())


def test_sessions_do_not_share_gradients():
    a, b = ad.tensor(1.0), ad.tensor(1.0)
    (a * 3.0).backward()
    assert b.grad == 0.0
    (b * 5.0).backward()
    assert a.grad == 3.0 and b.grad == 5.0
