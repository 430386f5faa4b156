"""Distance measures, training losses, and the free-run RMSE metric.

Angular components are compared through the squared chordal distance
2(1 - cos(a - b)), which is insensitive to whole turns, so simulated
angles never need wrapping. Velocities (and, if ever present, linear
positions) use the plain squared difference.
"""

from __future__ import annotations

from enum import Enum

import numpy as np

from .errors import ConfigError, DimensionError


class ComponentKind(Enum):
    ANGULAR_POSITION = "angular-position"
    VELOCITY = "velocity"
    LINEAR_POSITION = "linear-position"  # dispatch hook, unused for this system


def state_dispatch(n_q: int) -> list:
    """Component kinds of a state vector: n_q angles then n_q velocities."""
    return [ComponentKind.ANGULAR_POSITION] * n_q + [ComponentKind.VELOCITY] * n_q


def output_dispatch(n_q: int) -> list:
    """Component kinds of the output (position) vector."""
    return [ComponentKind.ANGULAR_POSITION] * n_q


def squared_distance(yhat, y):
    """Plain squared difference (yhat - y)^2, elementwise."""
    d = np.asarray(yhat, dtype=float) - np.asarray(y, dtype=float)
    return d * d


def angular_distance(yhat, y):
    """Periodic squared distance 2(1 - cos(yhat - y)), elementwise.

    Equals the squared chordal distance
    (cos yhat - cos y)^2 + (sin yhat - sin y)^2 and lies in [0, 4].
    """
    d = np.asarray(yhat, dtype=float) - np.asarray(y, dtype=float)
    return 2.0 * (1.0 - np.cos(d))


def squared_distance_grad(yhat, y):
    """d/dyhat of squared_distance: 2 (yhat - y)."""
    return 2.0 * (np.asarray(yhat, dtype=float) - np.asarray(y, dtype=float))


def angular_distance_grad(yhat, y):
    """d/dyhat of angular_distance: 2 sin(yhat - y)."""
    return 2.0 * np.sin(np.asarray(yhat, dtype=float) - np.asarray(y, dtype=float))


_DISTANCE = {
    ComponentKind.ANGULAR_POSITION: angular_distance,
    ComponentKind.VELOCITY: squared_distance,
    ComponentKind.LINEAR_POSITION: squared_distance,
}

_DISTANCE_GRAD = {
    ComponentKind.ANGULAR_POSITION: angular_distance_grad,
    ComponentKind.VELOCITY: squared_distance_grad,
    ComponentKind.LINEAR_POSITION: squared_distance_grad,
}


def component_distance(kind: ComponentKind, yhat, y):
    return _DISTANCE[kind](yhat, y)


def component_distance_grad(kind: ComponentKind, yhat, y):
    return _DISTANCE_GRAD[kind](yhat, y)


def _window_loss(sim: np.ndarray, ref: np.ndarray, dispatch) -> float:
    """Sum over k = 1..T and all components of the dispatched distances."""
    if sim.shape != ref.shape:
        raise DimensionError(f"simulated {sim.shape} vs reference {ref.shape}")
    if sim.shape[1] != len(dispatch):
        raise DimensionError(
            f"{sim.shape[1]} components but dispatch table has {len(dispatch)}"
        )
    total = 0.0
    for j, kind in enumerate(dispatch):
        total += float(np.sum(component_distance(kind, sim[1:, j], ref[1:, j])))
    return total


def output_loss(simulated, reference, dispatch=None) -> float:
    """Mean-over-experiments simulation-error loss on the outputs.

    ``simulated`` and ``reference`` are aligned lists of (T_i + 1, n_y)
    output sequences. Per experiment the inner sums run over k = 1..T_i
    (the k = 0 sample is the known initial condition) and are scaled by
    1/T_i; the outer mean runs over experiments.
    """
    if len(simulated) == 0:
        raise ConfigError("output_loss needs at least one experiment")
    if len(simulated) != len(reference):
        raise DimensionError(
            f"{len(simulated)} simulated sequences vs {len(reference)} references"
        )
    total = 0.0
    for sim, ref in zip(simulated, reference):
        sim = np.asarray(sim, dtype=float)
        ref = np.asarray(ref, dtype=float)
        horizon = sim.shape[0] - 1
        if horizon < 1:
            raise ConfigError("each sequence needs at least one transition")
        table = output_dispatch(sim.shape[1]) if dispatch is None else dispatch
        total += _window_loss(sim, ref, table) / horizon
    return total / len(simulated)


def state_loss(simulated, reference, dispatch=None) -> float:
    """Mean-over-samples loss on full state windows.

    Arguments are aligned lists of (T + 1, 2 n_q) state sequences; angular
    positions go through the periodic distance and velocities through the
    squared distance (or as overridden by ``dispatch``).
    """
    if len(simulated) == 0:
        raise ConfigError("state_loss needs at least one sample")
    if len(simulated) != len(reference):
        raise DimensionError(
            f"{len(simulated)} simulated windows vs {len(reference)} references"
        )
    total = 0.0
    for sim, ref in zip(simulated, reference):
        sim = np.asarray(sim, dtype=float)
        ref = np.asarray(ref, dtype=float)
        horizon = sim.shape[0] - 1
        if horizon < 1:
            raise ConfigError("each window needs at least one transition")
        table = state_dispatch(sim.shape[1] // 2) if dispatch is None else dispatch
        total += _window_loss(sim, ref, table) / horizon
    return total / len(simulated)


def rmse(y_sim: np.ndarray, y_ref: np.ndarray) -> float:
    """Free-run root mean squared error over a validation sequence.

    Sums the squared 2-norm of the output error over all T_v + 1 samples
    (k = 0 included) and divides by T_v, exactly in that normalization.
    """
    y_sim = np.asarray(y_sim, dtype=float)
    y_ref = np.asarray(y_ref, dtype=float)
    if y_sim.shape != y_ref.shape:
        raise DimensionError(f"simulated {y_sim.shape} vs reference {y_ref.shape}")
    horizon = y_sim.shape[0] - 1
    if horizon < 1:
        raise ConfigError("rmse needs T_v >= 1 (divisor is T_v)")
    return float(np.sqrt(np.sum((y_sim - y_ref) ** 2) / horizon))
