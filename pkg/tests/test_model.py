import numpy as np
import pytest

from tustinnet.errors import DimensionError, DivergenceError
from tustinnet.model import (TustinModel, features, rollout, rollout_backward,
                             rollout_batch, step)
from tustinnet.network import FeedforwardNet, init_net
from tustinnet.state import StateVector
from tustinnet.training import _window_loss_and_grads


def _model(seed=0, sizes=(7, 8, 8, 2), n_q=2, tau_s=0.01):
    net = init_net(list(sizes), 0.01, seed=seed)
    return TustinModel(net=net, n_q=n_q, n_u=1, tau_s=tau_s)


def _zero_model(n_q=2, tau_s=0.01):
    m = _model(n_q=n_q, sizes=(1 + 3 * n_q, 4, n_q))
    for w in m.net.weights:
        w[:] = 0.0
    return m


def _constant_model(value, tau_s=0.01):
    # n_q = 1: one hidden unit pinned by its bias, identity-ish output
    net = FeedforwardNet(
        layer_sizes=[4, 1, 1],
        weights=[np.zeros((1, 4)), np.array([[1.0]])],
        biases=[np.array([float(value)])],
        activation_slope=0.01,
    )
    return TustinModel(net=net, n_q=1, n_u=1, tau_s=tau_s)


def test_features_order_and_values():
    m = _model()
    x = StateVector(q=[0.0, 0.0], qdot=[0.0, 0.0])
    assert np.array_equal(features(m, x, [0.0]),
                          np.array([0, 0, 1, 1, 0, 0, 0], dtype=float))
    x = StateVector(q=[np.pi / 2, np.pi], qdot=[1.0, 2.0])
    z = features(m, x, [3.0])
    assert np.allclose(z, [1, 0, 0, -1, 1, 2, 3], atol=1e-15)


def test_features_periodicity():
    m = _model()
    x1 = StateVector(q=[0.4, -1.2], qdot=[3.0, -0.5])
    x2 = StateVector(q=[0.4 + 2 * np.pi, -1.2], qdot=[3.0, -0.5])
    assert np.allclose(features(m, x1, [0.7]), features(m, x2, [0.7]),
                       atol=1e-15)


def test_features_shape_error():
    m = _model()
    with pytest.raises(DimensionError):
        features(m, StateVector(q=[0.0, 0.0], qdot=[0.0, 0.0]), [1.0, 2.0])


def test_step_zero_increment_is_constant_velocity():
    m = _zero_model(n_q=1)
    x = step(m, StateVector(q=[0.3], qdot=[2.0]), [0.0])
    assert x.qdot[0] == 2.0
    assert abs(x.q[0] - 0.32) < 1e-15


def test_step_constant_increment_trapezoid():
    # tau_s * f = 0.5: qdot 2 -> 2.5 and q = 0 + 0.01 * (2 + 2.5) / 2
    m = _constant_model(50.0)
    x = step(m, StateVector(q=[0.0], qdot=[2.0]), [0.0])
    assert abs(x.qdot[0] - 2.5) < 1e-12
    assert abs(x.q[0] - 0.0225) < 1e-12


def test_step_rejects_wrong_input_length():
    m = _model()  # n_q = 2, n_u = 1
    with pytest.raises(DimensionError):
        step(m, StateVector(q=[0.0, 0.0], qdot=[0.0, 0.0]), [1.0, 2.0])


def test_rollout_zero_horizon():
    m = _model()
    x0 = StateVector(q=[0.1, 0.2], qdot=[0.3, 0.4])
    traj = rollout(m, x0, np.zeros((1, 1)))
    assert len(traj) == 1
    assert np.array_equal(traj.q[0], x0.q)


def test_rollout_linear_drift_exact():
    m = _zero_model(n_q=1)
    traj = rollout(m, StateVector(q=[0.0], qdot=[1.0]), np.zeros((101, 1)))
    assert traj.qdot[-1, 0] == 1.0
    assert abs(traj.q[-1, 0] - 1.0) < 1e-12


def test_rollout_semigroup():
    m = _model(seed=5)
    rng = np.random.default_rng(6)
    u = rng.normal(0, 1, (21, 1))
    x0 = StateVector(q=rng.normal(0, 1, 2), qdot=rng.normal(0, 1, 2))
    full = rollout(m, x0, u)
    first = rollout(m, x0, u[:11])
    mid = StateVector(q=first.q[-1], qdot=first.qdot[-1])
    second = rollout(m, mid, u[10:])
    assert np.allclose(full.q[10:], second.q, atol=1e-12)
    assert np.allclose(full.qdot[10:], second.qdot, atol=1e-12)


def test_rollout_two_pi_shift_property():
    m = _model(seed=7)
    rng = np.random.default_rng(8)
    u = rng.normal(0, 1, (31, 1))
    x0 = StateVector(q=[0.3, -0.8], qdot=[1.0, 2.0])
    x0s = StateVector(q=x0.q + 2 * np.pi, qdot=x0.qdot)
    a = rollout(m, x0, u)
    b = rollout(m, x0s, u)
    assert np.allclose(b.q - a.q, 2 * np.pi, atol=1e-9)
    assert np.allclose(b.qdot, a.qdot, atol=1e-9)


def test_rollout_divergence_guard_reports_step():
    m = _constant_model(1e7, tau_s=1.0)
    with pytest.raises(DivergenceError) as err:
        rollout(m, StateVector(q=[0.0], qdot=[0.0]), np.zeros((10, 1)))
    assert err.value.step == 1


def test_rollout_backward_zero_gradients():
    m = _model(seed=9)
    traj = rollout(m, StateVector(q=[0.1, 0.1], qdot=[0.0, 0.0]),
                   np.zeros((6, 1)))
    bundle = rollout_backward(m, traj, np.zeros((6, 4)))
    assert all(np.array_equal(g, np.zeros_like(g)) for g in bundle.d_weights)


def test_rollout_backward_one_step_hand_derivation():
    # n_q = 1, one hidden unit, all preactivations positive: the one-step
    # chain is q1 = q0 + tau*v0 + tau^2/2 * f and v1 = v0 + tau * f with
    # f = W2 * (W1 . z + b1), z = (sin q0, cos q0, v0, u0)
    W1 = np.array([[0.3, -0.2, 0.4, 0.1]])
    b1 = np.array([2.0])
    W2 = np.array([[1.5]])
    net = FeedforwardNet(layer_sizes=[4, 1, 1],
                         weights=[W1.copy(), W2.copy()], biases=[b1.copy()],
                         activation_slope=0.01)
    tau = 0.01
    m = TustinModel(net=net, n_q=1, n_u=1, tau_s=tau)
    q0, v0, u0 = 0.7, -0.4, 1.3
    traj = rollout(m, StateVector(q=[q0], qdot=[v0]),
                   np.array([[u0], [0.0]]))
    z = np.array([np.sin(q0), np.cos(q0), v0, u0])
    s = (W1 @ z + b1)[0]
    assert s > 0
    dq1, dv1 = 0.9, -1.7
    d_states = np.array([[0.0, 0.0], [dq1, dv1]])
    bundle = rollout_backward(m, traj, d_states)

    upstream = dq1 * tau * tau / 2 + dv1 * tau  # weight on f
    w2 = W2[0, 0]
    assert abs(bundle.d_weights[1][0, 0] - upstream * s) < 1e-15
    assert abs(bundle.d_biases[0][0] - upstream * w2) < 1e-15
    assert np.allclose(bundle.d_weights[0][0], upstream * w2 * z, atol=1e-15)


def test_rollout_backward_matches_finite_differences():
    # loss = sum of squared final positions, T = 10, 2 coordinates.
    # FD at step 1e-6 cannot resolve entries below the loss roundoff
    # floor, so errors are measured against the gradient scale gmax.
    m = _model(seed=10)
    rng = np.random.default_rng(11)
    T = 10
    u = rng.normal(0, 1, (T + 1, 1))
    x0 = StateVector(q=rng.normal(0, 1, 2), qdot=rng.normal(0, 0.5, 2))

    def final_loss():
        traj = rollout(m, x0, u)
        return float(np.sum(traj.q[-1] ** 2))

    traj = rollout(m, x0, u)
    d_states = np.zeros((T + 1, 4))
    d_states[-1, :2] = 2.0 * traj.q[-1]
    bundle = rollout_backward(m, traj, d_states)
    gmax = max(np.abs(g).max()
               for g in bundle.d_weights + bundle.d_biases)

    h = 1e-6
    worst = 0.0
    for arr, grad in (list(zip(m.net.weights, bundle.d_weights))
                      + list(zip(m.net.biases, bundle.d_biases))):
        flat, gflat = arr.reshape(-1), grad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            lp = final_loss()
            flat[i] = orig - h
            lm = final_loss()
            flat[i] = orig
            fd = (lp - lm) / (2 * h)
            worst = max(worst,
                        abs(fd - gflat[i]) / max(abs(fd), abs(gflat[i]), gmax))
    assert worst <= 1e-5


def test_rollout_backward_length_mismatch():
    m = _model(seed=12)
    traj = rollout(m, StateVector(q=[0, 0], qdot=[0, 0]), np.zeros((5, 1)))
    with pytest.raises(DimensionError):
        rollout_backward(m, traj, np.zeros((4, 4)))


def test_strict_reduction_matches_fast_path():
    from tustinnet.model import rollout_backward_batch
    m = _model(seed=13)
    rng = np.random.default_rng(14)
    B, T = 4, 8
    Q0, V0 = rng.normal(0, 1, (B, 2)), rng.normal(0, 1, (B, 2))
    U = rng.normal(0, 1, (B, T + 1, 1))
    Q, V = rollout_batch(m, Q0, V0, U)
    _, dQ, dV = _window_loss_and_grads(Q, V, np.zeros_like(Q), np.zeros_like(V))
    fast = rollout_backward_batch(m, Q, V, U, dQ, dV, strict=False)
    strict = rollout_backward_batch(m, Q, V, U, dQ, dV, strict=True)
    for a, b in zip(fast.d_weights, strict.d_weights):
        assert np.allclose(a, b, rtol=1e-12, atol=1e-15)


def test_model_validates_dimensions():
    net = init_net([7, 8, 8, 2], 0.01, seed=0)
    with pytest.raises(DimensionError):
        TustinModel(net=net, n_q=2, n_u=2, tau_s=0.01)   # needs n_in = 8
    from tustinnet.errors import ConfigError
    with pytest.raises(ConfigError):
        TustinModel(net=net, n_q=2, n_u=1, tau_s=0.0)
