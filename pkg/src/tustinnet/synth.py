"""Synthetic experiment generator with apparatus non-idealities.

Runs the grey-box simulator from a planted parameter set and records what
the real rig would log: encoder-quantized angles and saturated input
voltages. Free-fall runs start at rest near the upright position with no
input; noise-excited runs start near the hanging position under a
zero-order-held uniform white-noise voltage.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import greybox
from .data import (FREE_FALL, NOISE_EXCITED, ExperimentSequence, annotate,
                   DEFAULT_EQUILIBRIUM_WINDOW, DEFAULT_SPEED_TOL)
from .errors import ConfigError, DivergenceError
from .state import StateVector

ENCODER_STEP = np.pi / 1024.0
VOLTAGE_LIMIT = 15.0


@dataclass
class GenerationSpec:
    """Recipe for one synthetic experiment."""

    theta: greybox.ELParameters
    kind: str = FREE_FALL
    duration: float = 10.0
    tau_s: float = 0.01
    noise_amplitude: float = 3.0
    perturbation: float = 0.1      # bound on the initial pendulum offset (rad)
    min_perturbation: float = 0.03  # free-fall dead zone so the encoder still
    #                                 resolves the fall direction (~10 counts)
    theta0_perturbation: float = 0.0  # bound on the initial arm offset (rad)
    seed: int = 0
    quantize: bool = True
    substeps: int = 10

    def validate(self):
        if self.kind not in (FREE_FALL, NOISE_EXCITED):
            raise ConfigError(f"unknown experiment kind {self.kind!r}")
        steps = self.duration / self.tau_s
        if abs(steps - round(steps)) > 1e-9:
            raise ConfigError(
                f"duration {self.duration} is not a multiple of tau_s {self.tau_s}"
            )
        if self.noise_amplitude > VOLTAGE_LIMIT:
            raise ConfigError("noise amplitude exceeds the 15 V saturation bound")
        if self.tau_s <= 0 or self.duration <= 0:
            raise ConfigError("duration and tau_s must be positive")
        if not 0.0 <= self.min_perturbation <= self.perturbation:
            raise ConfigError(
                "min_perturbation must lie in [0, perturbation]"
            )


def quantize_encoder(angle):
    """Round to the nearest encoder count (pi/1024 rad), halves away from zero."""
    a = np.asarray(angle, dtype=float)
    counts = np.floor(np.abs(a) / ENCODER_STEP + 0.5) * np.sign(a)
    result = counts * ENCODER_STEP
    return float(result) if np.isscalar(angle) else result


def saturate_voltage(u):
    """Clamp to the +-15 V actuator range."""
    return np.clip(u, -VOLTAGE_LIMIT, VOLTAGE_LIMIT)


def generate(spec: GenerationSpec,
             speed_tol: float = DEFAULT_SPEED_TOL,
             window: int = DEFAULT_EQUILIBRIUM_WINDOW,
             id: int = 0) -> ExperimentSequence:
    """Simulate one experiment and package it like a recorded log.

    The stored velocities are re-estimated from the (possibly quantized)
    positions exactly as they would be for real data, so downstream code
    sees the same artifacts either way.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    T = int(round(spec.duration / spec.tau_s))

    theta0_arm = rng.uniform(-spec.theta0_perturbation, spec.theta0_perturbation) \
        if spec.theta0_perturbation > 0 else 0.0
    if spec.kind == FREE_FALL:
        magnitude = rng.uniform(spec.min_perturbation, spec.perturbation)
        alpha0 = magnitude * (1.0 if rng.uniform() < 0.5 else -1.0)
        u = np.zeros(T + 1)
    else:
        alpha0 = np.pi + rng.uniform(-spec.perturbation, spec.perturbation)
        u = saturate_voltage(
            rng.uniform(-spec.noise_amplitude, spec.noise_amplitude, size=T + 1)
        )
    x0 = StateVector(q=[theta0_arm, alpha0], qdot=[0.0, 0.0])

    try:
        traj = greybox.simulate(spec.theta, x0, u, spec.tau_s,
                                mode=greybox.WITH_SPRING, substeps=spec.substeps)
    except DivergenceError as exc:
        raise DivergenceError(
            f"generation diverged (seed {spec.seed}): {exc}", step=exc.step
        ) from exc

    q = quantize_encoder(traj.q) if spec.quantize else traj.q.copy()
    t = np.arange(T + 1) * spec.tau_s
    seq = ExperimentSequence(
        id=id, t=t, u=u[:, None], q=q, qdot_est=None, tau_s=spec.tau_s,
        kbar=-1, kind=spec.kind, source=f"synthetic(seed={spec.seed})",
    )
    return annotate(seq, speed_tol=speed_tol, window=window)
