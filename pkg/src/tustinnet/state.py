"""State and trajectory containers shared by the neural and grey-box models."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError


@dataclass
class StateVector:
    """Generalized coordinates and velocities, as raw unwrapped angles.

    ``q`` holds angular positions in rad, ``qdot`` angular velocities in
    rad/s. No wrapping is ever applied here; periodicity is handled by the
    angular distance measure instead.
    """

    q: np.ndarray
    qdot: np.ndarray

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float).reshape(-1)
        self.qdot = np.asarray(self.qdot, dtype=float).reshape(-1)
        if self.q.shape != self.qdot.shape:
            raise DimensionError(
                f"q has length {self.q.size} but qdot has length {self.qdot.size}"
            )
        if not (np.all(np.isfinite(self.q)) and np.all(np.isfinite(self.qdot))):
            raise DimensionError("state entries must be finite")

    @property
    def n_q(self) -> int:
        return self.q.size

    def as_array(self) -> np.ndarray:
        """Concatenated [q, qdot] vector of length 2 n_q."""
        return np.concatenate([self.q, self.qdot])

    @staticmethod
    def from_array(x: np.ndarray) -> "StateVector":
        x = np.asarray(x, dtype=float).reshape(-1)
        if x.size % 2 != 0:
            raise DimensionError(f"state array length {x.size} is not even")
        n = x.size // 2
        return StateVector(q=x[:n].copy(), qdot=x[n:].copy())


@dataclass
class Trajectory:
    """A simulated or recorded run sampled at a fixed rate.

    ``q`` and ``qdot`` have shape (T+1, n_q); ``inputs`` has shape
    (T+1, n_u) with the final input stored but unused by the last
    transition. Outputs are the positions (identity-on-q output map).
    """

    q: np.ndarray
    qdot: np.ndarray
    inputs: np.ndarray
    tau_s: float

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float)
        self.qdot = np.asarray(self.qdot, dtype=float)
        self.inputs = np.asarray(self.inputs, dtype=float)
        if self.q.shape != self.qdot.shape:
            raise DimensionError("q and qdot must have identical shapes")
        if self.inputs.shape[0] != self.q.shape[0]:
            raise DimensionError(
                f"{self.inputs.shape[0]} input samples for {self.q.shape[0]} states"
            )

    def __len__(self) -> int:
        return self.q.shape[0]

    @property
    def horizon(self) -> int:
        """Number of transitions T (one less than the number of states)."""
        return self.q.shape[0] - 1

    def state(self, k: int) -> StateVector:
        return StateVector(q=self.q[k].copy(), qdot=self.qdot[k].copy())

    @property
    def states(self) -> list:
        """All states as StateVector objects (convenience accessor)."""
        return [self.state(k) for k in range(len(self))]

    @property
    def outputs(self) -> np.ndarray:
        """Output sequence y_k = q_k, shape (T+1, n_q)."""
        return self.q
