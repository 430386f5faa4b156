"""Discrete-time neural state-space model with trapezoidal position updates.

One step advances velocities by a learned increment and positions by the
trapezoid of old and new velocities:

    qdot_{k+1} = qdot_k + tau_s * f(cat(sin q_k, cos q_k, qdot_k, u_k))
    q_{k+1}    = q_k + tau_s * (qdot_k + qdot_{k+1}) / 2

The feature map replaces angles by their sine/cosine, so the model is
exactly periodic in every coordinate. Rollouts are fully explicit; the
reverse pass re-derives network activations from the stored states, which
keeps memory at one activation set regardless of horizon.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError, DivergenceError
from .network import (FeedforwardNet, GradientBundle, backward_batch,
                      forward_batch, zero_bundle)
from .state import StateVector, Trajectory

DIVERGENCE_LIMIT = 1e6


@dataclass
class TustinModel:
    """A feedforward velocity-increment net plus the fixed integration shell."""

    net: FeedforwardNet
    n_q: int
    n_u: int
    tau_s: float

    def __post_init__(self):
        if self.tau_s <= 0:
            raise ConfigError(f"sampling time must be positive, got {self.tau_s}")
        if self.net.n_in != self.n_u + 3 * self.n_q:
            raise DimensionError(
                f"net input size {self.net.n_in} != n_u + 3 n_q = "
                f"{self.n_u + 3 * self.n_q}"
            )
        if self.net.n_out != self.n_q:
            raise DimensionError(
                f"net output size {self.net.n_out} != n_q = {self.n_q}"
            )

    def copy(self) -> "TustinModel":
        return TustinModel(net=self.net.copy(), n_q=self.n_q, n_u=self.n_u,
                           tau_s=self.tau_s)


def features(model: TustinModel, x: StateVector, u: np.ndarray) -> np.ndarray:
    """Feature vector cat(sin q, cos q, qdot, u) of length n_u + 3 n_q."""
    u = np.asarray(u, dtype=float).reshape(-1)
    if x.n_q != model.n_q:
        raise DimensionError(f"state has {x.n_q} coordinates, model expects {model.n_q}")
    if u.size != model.n_u:
        raise DimensionError(f"input has length {u.size}, model expects {model.n_u}")
    return np.concatenate([np.sin(x.q), np.cos(x.q), x.qdot, u])


def _features_batch(Q: np.ndarray, V: np.ndarray, U: np.ndarray) -> np.ndarray:
    return np.concatenate([np.sin(Q), np.cos(Q), V, U], axis=1)


def step(model: TustinModel, x: StateVector, u: np.ndarray) -> StateVector:
    """One transition: velocity increment first, then the trapezoidal update."""
    z = features(model, x, u)
    f = forward_batch(model.net, z[None, :])[0]
    qdot_next = x.qdot + model.tau_s * f
    q_next = x.q + model.tau_s * (x.qdot + qdot_next) / 2.0
    bad = ~(np.isfinite(q_next) & np.isfinite(qdot_next))
    if bad.any() or np.max(np.abs(q_next)) > DIVERGENCE_LIMIT \
            or np.max(np.abs(qdot_next)) > DIVERGENCE_LIMIT:
        raise DivergenceError("state diverged within a single step", step=1)
    return StateVector(q=q_next, qdot=qdot_next)


def rollout_batch(model: TustinModel, Q0: np.ndarray, V0: np.ndarray,
                  U: np.ndarray):
    """Free-run rollout of a whole batch of initial states.

    ``Q0``/``V0`` are (B, n_q); ``U`` is (B, T+1, n_u). Returns position and
    velocity arrays of shape (B, T+1, n_q). Aborts with the failing step
    index when any sample leaves the divergence guard band.
    """
    B, steps_plus_1, _ = U.shape
    T = steps_plus_1 - 1
    Q = np.empty((B, T + 1, model.n_q))
    V = np.empty((B, T + 1, model.n_q))
    Q[:, 0] = Q0
    V[:, 0] = V0
    tau = model.tau_s
    for k in range(T):
        Z = _features_batch(Q[:, k], V[:, k], U[:, k])
        F = forward_batch(model.net, Z)
        V[:, k + 1] = V[:, k] + tau * F
        Q[:, k + 1] = Q[:, k] + tau * (V[:, k] + V[:, k + 1]) / 2.0
        block = np.concatenate([Q[:, k + 1], V[:, k + 1]], axis=1)
        if not np.all(np.isfinite(block)) or np.max(np.abs(block)) > DIVERGENCE_LIMIT:
            raise DivergenceError(
                f"rollout diverged at step {k + 1}", step=k + 1
            )
    return Q, V


def rollout(model: TustinModel, x0: StateVector, u_seq: np.ndarray) -> Trajectory:
    """Free-run simulation from x0 under a (T+1, n_u) input sequence."""
    u_seq = np.asarray(u_seq, dtype=float)
    if u_seq.ndim == 1:
        u_seq = u_seq[:, None]
    if u_seq.ndim != 2 or u_seq.shape[1] != model.n_u:
        raise DimensionError(f"input sequence must be (T+1, {model.n_u})")
    if u_seq.shape[0] < 1:
        raise DimensionError("input sequence must contain at least the x0 sample")
    if x0.n_q != model.n_q:
        raise DimensionError(f"x0 has {x0.n_q} coordinates, model expects {model.n_q}")
    Q, V = rollout_batch(model, x0.q[None, :], x0.qdot[None, :], u_seq[None, :, :])
    return Trajectory(q=Q[0], qdot=V[0], inputs=u_seq.copy(), tau_s=model.tau_s)


def rollout_backward_batch(model: TustinModel, Q: np.ndarray, V: np.ndarray,
                           U: np.ndarray, dQ: np.ndarray, dV: np.ndarray,
                           strict: bool = False) -> GradientBundle:
    """Reverse accumulation through the two coupled recursions of a rollout.

    ``dQ``/``dV`` hold the loss gradient with respect to every stored state
    (index 0 influences only the initial condition, which is data, so it
    never reaches the weights). Network activations are recomputed per step
    from the stored states. Weight gradients are summed over batch and time.
    """
    B, steps_plus_1, n_q = Q.shape
    T = steps_plus_1 - 1
    if dQ.shape != Q.shape or dV.shape != V.shape:
        raise DimensionError("state gradients must align with the trajectory")
    tau = model.tau_s
    total = zero_bundle(model.net)
    aq = dQ[:, T].copy()
    av = dV[:, T].copy()
    for k in range(T - 1, -1, -1):
        Z = _features_batch(Q[:, k], V[:, k], U[:, k])
        upstream = (tau * tau / 2.0) * aq + tau * av
        bundle = backward_batch(model.net, Z, upstream, strict=strict)
        for acc, d in zip(total.d_weights, bundle.d_weights):
            acc += d
        for acc, d in zip(total.d_biases, bundle.d_biases):
            acc += d
        dZ = bundle.d_input  # (B, n_u + 3 n_q)
        d_sin = dZ[:, :n_q]
        d_cos = dZ[:, n_q:2 * n_q]
        d_vel = dZ[:, 2 * n_q:3 * n_q]
        aq_new = dQ[:, k] + aq + d_sin * np.cos(Q[:, k]) - d_cos * np.sin(Q[:, k])
        av_new = dV[:, k] + av + tau * aq + d_vel
        aq, av = aq_new, av_new
    return total


def rollout_backward(model: TustinModel, traj: Trajectory,
                     d_states) -> GradientBundle:
    """Gradients of a rollout loss with respect to all network parameters.

    ``d_states`` is a (T+1, 2 n_q) array (or a list of per-state vectors)
    holding dL/dx_k for every state of the trajectory, positions first.
    """
    d_states = np.asarray(d_states, dtype=float)
    if d_states.ndim != 2 or d_states.shape != (len(traj), 2 * model.n_q):
        raise DimensionError(
            f"d_states must be ({len(traj)}, {2 * model.n_q}), got {d_states.shape}"
        )
    dQ = d_states[None, :, :model.n_q]
    dV = d_states[None, :, model.n_q:]
    bundle = rollout_backward_batch(
        model, traj.q[None], traj.qdot[None], traj.inputs[None], dQ, dV
    )
    bundle.d_input = bundle.d_input[0] if bundle.d_input.ndim == 2 else bundle.d_input
    return bundle
