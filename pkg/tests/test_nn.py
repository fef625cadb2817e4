import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from diffinfo.nn import (
    FIXED_KEYS,
    Batch,
    NetworkParams,
    NonFiniteError,
    adam_init,
    adam_step,
    net_backward,
    net_forward,
    net_init,
)


def small_net(seed=0, cond_dim=2):
    return net_init(3, hidden=(16, 12), cond_dim=cond_dim, seed=seed, embed_dim=5, n_freq=4)


def make_batch(seed, n=6, cond_dim=2):
    rng = np.random.default_rng(seed)
    cond = rng.standard_normal((n, cond_dim)) if cond_dim else None
    drop = rng.random(n) < 0.4 if cond_dim else None
    if cond_dim:
        drop[0] = True
        drop[1] = False
    return Batch(rng.standard_normal((n, 3)), rng.uniform(0.01, 1.0, n), cond, drop)


def quadratic_closure(target):
    def closure(out):
        r = out - target
        return 0.5 * float(np.sum(r**2 * np.linspace(0.5, 1.5, r.size).reshape(r.shape))), \
            r * np.linspace(0.5, 1.5, r.size).reshape(r.shape)

    return closure


def relative_gradient_errors(params, batch, closure, n_check=20, seed=0, h=1e-4):
    _, grads = net_backward(params, batch, closure)
    keys = [k for k in sorted(params.arrays) if k not in FIXED_KEYS]
    rng = np.random.default_rng(seed)
    errs = []
    for _ in range(n_check):
        k = keys[rng.integers(len(keys))]
        idx = tuple(rng.integers(d) for d in params.arrays[k].shape)
        orig = params.arrays[k][idx]
        params.arrays[k][idx] = orig + h
        up, _ = closure(net_forward(params, batch.x, batch.s, batch.condition, batch.drop))
        params.arrays[k][idx] = orig - h
        down, _ = closure(net_forward(params, batch.x, batch.s, batch.condition, batch.drop))
        params.arrays[k][idx] = orig
        fd = (up - down) / (2 * h)
        bp = grads[k][idx]
        errs.append(abs(fd - bp) / max(abs(fd) + abs(bp), 1e-7))
    return np.array(errs)


# -- init ---------------------------------------------------------------------

def test_init_is_deterministic():
    a, b = small_net(4), small_net(4)
    assert a.arrays.keys() == b.arrays.keys()
    for k in a.arrays:
        np.testing.assert_array_equal(a.arrays[k], b.arrays[k])


def test_init_shapes_and_null_embedding():
    p = small_net()
    assert p.arrays["w_out"].shape[1] == 3
    assert p.arrays["null"].shape == (2,)
    np.testing.assert_array_equal(p.arrays["null"], 0.0)
    assert np.all(np.isfinite(p.flatten()))
    out = net_forward(p, np.zeros((2, 3)), 0.5)
    assert out.shape == (2, 3) and np.all(np.isfinite(out))


@pytest.mark.parametrize("hidden", [(), (8, 0)])
def test_init_rejects_bad_layers(hidden):
    with pytest.raises(ValueError):
        net_init(2, hidden=hidden)


# -- forward ------------------------------------------------------------------

def test_forward_deterministic_and_shape():
    p = small_net()
    x = np.random.default_rng(0).standard_normal((4, 3))
    y = np.ones((4, 2))
    a = net_forward(p, x, 0.3, y)
    np.testing.assert_array_equal(a, net_forward(p, x, 0.3, y))
    assert a.shape == x.shape
    assert net_forward(p, x[0], 0.3, y[0]).shape == (3,)


def test_none_condition_is_the_null_path():
    p = small_net()
    p.arrays["null"][:] = [0.4, -1.3]
    x = np.random.default_rng(1).standard_normal((5, 3))
    y = np.random.default_rng(2).standard_normal((5, 2))
    np.testing.assert_array_equal(net_forward(p, x, 0.2, None),
                                  net_forward(p, x, 0.2, y, drop=np.ones(5, dtype=bool)))


def test_forward_rejects_nonfinite_and_bad_dims():
    p = small_net()
    with pytest.raises(NonFiniteError):
        net_forward(p, np.array([[np.nan, 0.0, 0.0]]), 0.1)
    with pytest.raises(ValueError):
        net_forward(p, np.zeros((1, 2)), 0.1)


def test_forward_bounded_on_large_inputs():
    p = net_init(3, seed=0)
    x = np.random.default_rng(0).uniform(-1e3, 1e3, (200, 3))
    out = net_forward(p, x, 0.5)
    assert np.all(np.isfinite(out))
    # silu nets grow at most linearly; the constant is loose on purpose
    assert np.max(np.abs(out)) < 1e3 * np.linalg.norm(x, axis=1).max()


def test_condition_standardization():
    p = small_net()
    p.arrays["cond_shift"][:] = [1.0, -2.0]
    p.arrays["cond_scale"][:] = [2.0, 0.5]
    x = np.zeros((1, 3))
    q = small_net()
    np.testing.assert_allclose(net_forward(p, x, 0.4, np.array([[3.0, -1.5]])),
                               net_forward(q, x, 0.4, np.array([[1.0, 1.0]])), rtol=1e-14)


# -- backward -----------------------------------------------------------------

@pytest.mark.parametrize("seed", range(5))
def test_gradient_check(seed):
    p = small_net(seed)
    batch = make_batch(seed + 100)
    target = np.random.default_rng(seed).standard_normal((6, 3))
    errs = relative_gradient_errors(p, batch, quadratic_closure(target), seed=seed)
    assert errs.max() <= 1e-4


@given(st.integers(0, 2**31), st.integers(0, 2))
@settings(max_examples=10, deadline=None)
def test_gradient_check_property(seed, cond_dim):
    p = small_net(seed, cond_dim)
    batch = make_batch(seed, cond_dim=cond_dim)
    target = np.random.default_rng(seed + 1).standard_normal((6, 3))
    assert relative_gradient_errors(p, batch, quadratic_closure(target), n_check=10, seed=seed).max() <= 1e-4


def test_gradients_cover_trainable_keys_only():
    p = small_net()
    _, grads = net_backward(p, make_batch(0), quadratic_closure(np.zeros((6, 3))))
    assert set(grads) == set(p.arrays) - set(FIXED_KEYS)


def test_zero_loss_closure_gives_zero_gradients():
    p = small_net()
    loss, grads = net_backward(p, make_batch(1), lambda out: (0.0, np.zeros_like(out)))
    assert loss == 0.0
    assert all(np.all(g == 0) for g in grads.values())


def test_output_bias_gradient_of_half_squared_norm():
    p = small_net()
    p.arrays["b_out"][:] = [0.1, -0.2, 0.3]
    batch = make_batch(2)
    out = net_forward(p, batch.x, batch.s, batch.condition, batch.drop)
    _, grads = net_backward(p, batch, lambda o: (0.5 * float(np.sum(o**2)), o))
    np.testing.assert_allclose(grads["b_out"], out.sum(axis=0), rtol=1e-13)


def test_nonfinite_loss_aborts():
    with pytest.raises(NonFiniteError):
        net_backward(small_net(), make_batch(0), lambda o: (float("inf"), o))


# -- adam ---------------------------------------------------------------------

def test_adam_zero_grads_leave_params():
    p = small_net()
    before = p.flatten().copy()
    state = adam_init(p)
    adam_step(p, {k: np.zeros_like(v) for k, v in p.arrays.items()}, state)
    np.testing.assert_array_equal(p.flatten(), before)
    assert state.step == 1


def test_adam_decreases_convex_quadratic():
    p = NetworkParams({"w": np.array([3.0])}, 1, 0, (1,), 0, 1)
    state = adam_init(p, lr=0.1)
    losses = []
    for _ in range(50):
        w = p.arrays["w"]
        losses.append(float(0.5 * (w[0] - 1.0) ** 2))
        adam_step(p, {"w": w - 1.0}, state)
    assert losses[1] < losses[0]
    assert losses[-1] < 0.1 * losses[0]
    assert state.step == 50


def test_adam_first_step_moves_by_lr():
    # bias correction makes the first update exactly lr * sign(g) up to eps
    p = NetworkParams({"w": np.array([0.0, 0.0])}, 1, 0, (1,), 0, 1)
    state = adam_init(p, lr=0.01)
    adam_step(p, {"w": np.array([5.0, -0.2])}, state)
    np.testing.assert_allclose(p.arrays["w"], [-0.01, 0.01], rtol=1e-6)


# -- checkpoints --------------------------------------------------------------

def test_checkpoint_round_trip_is_bit_exact(tmp_path):
    p = small_net(3)
    p.arrays["cond_scale"][:] = [1.5, 0.25]
    path = tmp_path / "ckpt.npz"
    p.save(path)
    q = NetworkParams.load(path)
    assert q.meta() == p.meta()
    for k in p.arrays:
        np.testing.assert_array_equal(p.arrays[k], q.arrays[k])
    second = tmp_path / "again.npz"
    q.save(second)
    assert path.read_bytes() == second.read_bytes()
