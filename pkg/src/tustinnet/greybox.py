"""First-principles rotary-pendulum model and constrained identification.

Coordinates are q = (theta, alpha): arm angle and pendulum angle, with
alpha = 0 at the upright (unstable) position and alpha = pi hanging down.
The dynamics follow M(q) qddot + C(q, qdot) qdot + H(q) = K u with

    M = [[J_r + m_p L_r^2 + m_p l_p^2 sin^2(alpha),  m_p L_r l_p cos(alpha)],
         [m_p L_r l_p cos(alpha),                    J_p + m_p l_p^2      ]]

C assembled from the Christoffel symbols of M plus the viscous damping and
motor back-EMF terms, H = grad of the potential (cable spring on the arm,
gravity on the pendulum), and K = (kappa_t, 0)'. Simulation is classical
fixed-step RK4 with zero-order-held inputs, compiled with numba so that
simulation-error identification stays fast.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, fields, replace
from importlib import resources

import numpy as np
import yaml
from numba import njit
from scipy.optimize import minimize

from .errors import (ConfigError, ConstraintError, DivergenceError,
                     IdentificationError, NumericError)
from .losses import angular_distance, squared_distance
from .state import StateVector, Trajectory

DIVERGENCE_LIMIT = 1e6
GRAVITY = 9.81

WITH_SPRING = "with-spring"
NO_SPRING = "no-spring"
SPRING_MODES = (WITH_SPRING, NO_SPRING)

# parameters identified from data by default; kappa_v multiplies the same
# velocity the viscous term b1 does, so only b1 + kappa_t*kappa_v is
# observable and kappa_v stays a known (datasheet) constant unless a
# config explicitly frees it
DEFAULT_FREE = ("J_r", "J_p", "kappa1", "kappa2", "b1", "b2", "kappa_t")
POSITIVE_PARAMS = ("J_r", "J_p", "kappa1", "b1", "b2", "kappa_t", "kappa_v")


@dataclass
class ELParameters:
    """Grey-box parameter set plus known geometric and mass constants.

    Identified set (subject to the box constraints): inertias J_r, J_p,
    cable-spring coefficients kappa1/kappa2, viscous dampings b1/b2, and
    the motor constants kappa_t (torque per volt) and kappa_v (back-EMF).
    The masses, lengths, and g are treated as known and never optimized.
    """

    J_r: float       # kg m^2, arm + rotor inertia about the vertical axis
    J_p: float       # kg m^2, pendulum inertia about its center of mass
    kappa1: float    # N m / rad, linear cable-spring coefficient
    kappa2: float    # N m / rad^2, quadratic cable-spring coefficient
    b1: float        # N m s / rad, arm viscous damping
    b2: float        # N m s / rad, pendulum viscous damping
    kappa_t: float   # N m / V, motor torque constant
    kappa_v: float   # V s / rad, motor back-EMF constant
    m_r: float = 0.095    # kg, arm mass (known)
    m_p: float = 0.024    # kg, pendulum mass (known)
    L_r: float = 0.085    # m, arm length (known)
    l_p: float = 0.0645   # m, pivot-to-pendulum-COM distance (known)
    g: float = GRAVITY    # m / s^2

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def copy(self, **changes) -> "ELParameters":
        return replace(self, **changes)


def default_parameters() -> ELParameters:
    """Nominal desk-scale parameter set from the packaged config file."""
    ref = resources.files("tustinnet") / "configs" / "nominal_system.yaml"
    with resources.as_file(ref) as path:
        return load_parameters(path)


@dataclass
class ParameterBounds:
    """Box constraints for the identified parameters."""

    lower: dict
    upper: dict

    def contains(self, theta: ELParameters, names) -> bool:
        d = theta.as_dict()
        return all(self.lower[n] <= d[n] <= self.upper[n] for n in names)


def default_bounds(positive_kappa2: bool = False) -> ParameterBounds:
    lower = {"J_r": 1e-6, "J_p": 1e-6, "kappa1": 1e-6, "kappa2": -1.0,
             "b1": 1e-7, "b2": 1e-7, "kappa_t": 1e-4, "kappa_v": 1e-3}
    upper = {"J_r": 1e-2, "J_p": 1e-2, "kappa1": 1.0, "kappa2": 1.0,
             "b1": 0.1, "b2": 0.1, "kappa_t": 0.1, "kappa_v": 1.0}
    if positive_kappa2:
        lower["kappa2"] = 1e-6
    return ParameterBounds(lower=lower, upper=upper)


def _check_spring_mode(mode: str):
    if mode not in SPRING_MODES:
        raise ConfigError(f"unknown spring mode {mode!r}")


def _effective(theta: ELParameters, mode: str):
    """Collapse the parameter set into the coefficients the equations use."""
    _check_spring_mode(mode)
    spring = mode == WITH_SPRING
    return (
        theta.J_r + theta.m_p * theta.L_r ** 2,      # constant part of M11
        theta.m_p * theta.l_p ** 2,                  # sin^2(alpha) part of M11
        theta.m_p * theta.L_r * theta.l_p,           # coupling M12
        theta.J_p + theta.m_p * theta.l_p ** 2,      # M22
        theta.kappa1 if spring else 0.0,
        theta.kappa2 if spring else 0.0,
        theta.b1 + theta.kappa_t * theta.kappa_v,    # arm damping incl. back-EMF
        theta.b2,
        theta.kappa_t,
        theta.m_p * theta.g * theta.l_p,
    )


def mass_matrix(alpha: float, theta: ELParameters) -> np.ndarray:
    a11, bsin, ccpl, m22, *_ = _effective(theta, WITH_SPRING)
    sa, ca = np.sin(alpha), np.cos(alpha)
    return np.array([[a11 + bsin * sa * sa, ccpl * ca],
                     [ccpl * ca, m22]])


def mass_matrix_dalpha(alpha: float, theta: ELParameters) -> np.ndarray:
    """Analytic d(M)/d(alpha), used by the skew-symmetry audit."""
    _, bsin, ccpl, _, *_ = _effective(theta, WITH_SPRING)
    sa, ca = np.sin(alpha), np.cos(alpha)
    return np.array([[2.0 * bsin * sa * ca, -ccpl * sa],
                     [-ccpl * sa, 0.0]])


def christoffel_matrix(x: StateVector, theta: ELParameters) -> np.ndarray:
    """Coriolis/centrifugal matrix from the Christoffel symbols of M."""
    _, bsin, ccpl, _, *_ = _effective(theta, WITH_SPRING)
    alpha = x.q[1]
    thd, ald = x.qdot
    sa, ca = np.sin(alpha), np.cos(alpha)
    return np.array([
        [bsin * sa * ca * ald, bsin * sa * ca * thd - ccpl * sa * ald],
        [-bsin * sa * ca * thd, 0.0],
    ])


def potential_gradient(q: np.ndarray, theta: ELParameters, mode: str) -> np.ndarray:
    *_, k1, k2, _, _, _, mgl = _effective(theta, mode)
    th, al = q
    return np.array([k1 * th + k2 * th * th, -mgl * np.sin(al)])


def energy(x: StateVector, theta: ELParameters, mode: str = WITH_SPRING) -> float:
    """Total mechanical energy T + V (gravity zero at the pivot height)."""
    *_, k1, k2, _, _, _, mgl = _effective(theta, mode)
    M = mass_matrix(x.q[1], theta)
    kinetic = 0.5 * x.qdot @ M @ x.qdot
    th = x.q[0]
    potential = mgl * np.cos(x.q[1]) + 0.5 * k1 * th * th + k2 * th ** 3 / 3.0
    return float(kinetic + potential)


def dynamics(x: StateVector, u: float, theta: ELParameters,
             mode: str = WITH_SPRING) -> np.ndarray:
    """Continuous-time state derivative (theta', alpha', theta'', alpha'').

    The input voltage is clamped to the +-15 V actuator range. This is the
    plain-numpy reference path; simulate() runs the numerically identical
    compiled kernel.
    """
    a11, bsin, ccpl, m22, k1, k2, d1, d2, kt, mgl = _effective(theta, mode)
    u = float(np.clip(u, -15.0, 15.0))
    M = mass_matrix(x.q[1], theta)
    C = christoffel_matrix(x, theta) + np.diag([d1, d2])
    H = potential_gradient(x.q, theta, mode)
    rhs = np.array([kt * u, 0.0]) - C @ x.qdot - H
    det = M[0, 0] * M[1, 1] - M[0, 1] * M[1, 0]
    if not np.isfinite(det) or det <= 1e-300:
        raise NumericError(f"mass matrix numerically singular (det={det})")
    qdd = np.linalg.solve(M, rhs)
    return np.concatenate([x.qdot, qdd])


@njit(cache=True)
def _accel(th, al, thd, ald, u, a11, bsin, ccpl, m22, k1, k2, d1, d2, kt, mgl):
    sa = np.sin(al)
    ca = np.cos(al)
    M11 = a11 + bsin * sa * sa
    M12 = ccpl * ca
    C11 = bsin * sa * ca * ald + d1
    C12 = bsin * sa * ca * thd - ccpl * sa * ald
    C21 = -bsin * sa * ca * thd
    r1 = kt * u - (C11 * thd + C12 * ald) - (k1 * th + k2 * th * th)
    r2 = -(C21 * thd + d2 * ald) + mgl * sa
    det = M11 * m22 - M12 * M12
    thdd = (m22 * r1 - M12 * r2) / det
    aldd = (-M12 * r1 + M11 * r2) / det
    return thdd, aldd


@njit(cache=True)
def _rk4_path(q0, u_seq, tau_s, substeps,
              a11, bsin, ccpl, m22, k1, k2, d1, d2, kt, mgl, limit):
    """Fixed-step RK4 over the full horizon; returns (path, failing_step).

    ``q0`` is (theta, alpha, theta', alpha'); the input is held constant
    over each sampling interval. failing_step is -1 on success.
    """
    T = u_seq.shape[0] - 1
    out = np.empty((T + 1, 4))
    th, al, thd, ald = q0[0], q0[1], q0[2], q0[3]
    out[0, 0] = th
    out[0, 1] = al
    out[0, 2] = thd
    out[0, 3] = ald
    h = tau_s / substeps
    for k in range(T):
        u = u_seq[k]
        if u > 15.0:
            u = 15.0
        elif u < -15.0:
            u = -15.0
        for _ in range(substeps):
            a1t, a1a = _accel(th, al, thd, ald, u,
                              a11, bsin, ccpl, m22, k1, k2, d1, d2, kt, mgl)
            th2 = th + 0.5 * h * thd
            al2 = al + 0.5 * h * ald
            thd2 = thd + 0.5 * h * a1t
            ald2 = ald + 0.5 * h * a1a
            a2t, a2a = _accel(th2, al2, thd2, ald2, u,
                              a11, bsin, ccpl, m22, k1, k2, d1, d2, kt, mgl)
            th3 = th + 0.5 * h * thd2
            al3 = al + 0.5 * h * ald2
            thd3 = thd + 0.5 * h * a2t
            ald3 = ald + 0.5 * h * a2a
            a3t, a3a = _accel(th3, al3, thd3, ald3, u,
                              a11, bsin, ccpl, m22, k1, k2, d1, d2, kt, mgl)
            th4 = th + h * thd3
            al4 = al + h * ald3
            thd4 = thd + h * a3t
            ald4 = ald + h * a3a
            a4t, a4a = _accel(th4, al4, thd4, ald4, u,
                              a11, bsin, ccpl, m22, k1, k2, d1, d2, kt, mgl)
            th = th + h * (thd + 2.0 * thd2 + 2.0 * thd3 + thd4) / 6.0
            al = al + h * (ald + 2.0 * ald2 + 2.0 * ald3 + ald4) / 6.0
            thd = thd + h * (a1t + 2.0 * a2t + 2.0 * a3t + a4t) / 6.0
            ald = ald + h * (a1a + 2.0 * a2a + 2.0 * a3a + a4a) / 6.0
        out[k + 1, 0] = th
        out[k + 1, 1] = al
        out[k + 1, 2] = thd
        out[k + 1, 3] = ald
        bad = not (np.isfinite(th) and np.isfinite(al)
                   and np.isfinite(thd) and np.isfinite(ald))
        if bad or abs(th) > limit or abs(al) > limit \
                or abs(thd) > limit or abs(ald) > limit:
            return out, k + 1
    return out, -1


def simulate(theta: ELParameters, x0: StateVector, u_seq, tau_s: float,
             mode: str = WITH_SPRING, substeps: int = 10) -> Trajectory:
    """Integrate the grey-box ODE with fixed-step RK4 (tau_s / substeps).

    The input sequence carries T+1 samples (the last one unused) and is
    zero-order held between samples.
    """
    u_seq = np.asarray(u_seq, dtype=float)
    if u_seq.ndim == 2:
        u_flat = u_seq[:, 0]
    else:
        u_flat = u_seq
        u_seq = u_seq[:, None]
    coeffs = _effective(theta, mode)
    q0 = np.concatenate([x0.q, x0.qdot])
    path, failed = _rk4_path(q0, np.ascontiguousarray(u_flat), float(tau_s),
                             int(substeps), *coeffs, DIVERGENCE_LIMIT)
    if failed >= 0:
        raise DivergenceError(f"grey-box simulation diverged at step {failed}",
                              step=int(failed))
    return Trajectory(q=path[:, :2].copy(), qdot=path[:, 2:].copy(),
                      inputs=u_seq.copy(), tau_s=float(tau_s))


# ---------------------------------------------------------------------------
# Constrained identification

@dataclass
class IdentifyConfig:
    """Budget and options for simulation-error identification."""

    loss: str = "output"         # "output" (positions) or "state" (+ stencil velocities)
    max_evals: int = 8000
    restarts: int = 5
    substeps: int = 10
    start_index: int = 2         # simulate from the first stencil-valid sample
    # skip ahead until the stencil resolves actual motion: near-rest starts
    # (quantized free falls) give velocity estimates that are all noise and
    # push the fitted inertias off; 0 disables the gate
    motion_threshold: float = 1.0
    free: tuple = DEFAULT_FREE
    xatol: float = 1e-10
    fatol: float = 1e-12


@dataclass
class IdentificationReport:
    mode: str
    loss_name: str
    initial_loss: float
    final_loss: float
    n_evals: int
    wall_time: float
    trace: list = field(default_factory=list)  # best loss after each eval


def _start_indices(experiments, start_index: int, motion_threshold: float):
    starts = []
    for seq in experiments:
        s = start_index
        if motion_threshold > 0:
            speed = np.max(np.abs(seq.qdot_est), axis=1)
            moving = np.nonzero(speed[start_index:] >= motion_threshold)[0]
            if moving.size and start_index + moving[0] < seq.horizon - 10:
                s = start_index + int(moving[0])
        starts.append(s)
    return starts


def _sequence_loss(theta: ELParameters, experiments, mode: str,
                   loss_name: str, substeps: int, starts) -> float:
    """Mean per-experiment simulation-error loss; inf on divergence."""
    coeffs = _effective(theta, mode)
    total = 0.0
    for seq, s in zip(experiments, starts):
        x0 = np.concatenate([seq.q[s], seq.qdot_est[s]])
        path, failed = _rk4_path(x0, np.ascontiguousarray(seq.u[s:, 0]),
                                 seq.tau_s, substeps, *coeffs, DIVERGENCE_LIMIT)
        if failed >= 0:
            return np.inf
        horizon = path.shape[0] - 1
        pos = float(np.sum(angular_distance(path[1:, :2], seq.q[s + 1:])))
        if loss_name == "state":
            vel = float(np.sum(squared_distance(path[1:, 2:], seq.qdot_est[s + 1:])))
            total += (pos + vel) / horizon
        else:
            total += pos / horizon
    return total / len(experiments)


def _pack(theta: ELParameters, free) -> np.ndarray:
    d = theta.as_dict()
    return np.array([np.log(d[n]) if n in POSITIVE_PARAMS else d[n] for n in free])


def _unpack(z: np.ndarray, template: ELParameters, free) -> ELParameters:
    changes = {}
    for n, v in zip(free, z):
        changes[n] = float(np.exp(v)) if n in POSITIVE_PARAMS else float(v)
    return template.copy(**changes)


def identify_parameters(experiments, bounds: ParameterBounds,
                        theta0: ELParameters, mode: str = WITH_SPRING,
                        cfg: IdentifyConfig = None):
    """Minimize the simulation-error loss over the free parameters.

    Positive parameters are optimized in log space; kappa2 stays raw so the
    cable spring may be sign-asymmetric. The search is Nelder-Mead within
    the box constraints, restarted from the incumbent until the evaluation
    budget runs out. Returns (best ELParameters, IdentificationReport).
    """
    cfg = cfg or IdentifyConfig()
    _check_spring_mode(mode)
    if not experiments:
        raise ConfigError("identification needs at least one experiment")
    free = [n for n in cfg.free if not (mode == NO_SPRING and n.startswith("kappa")
                                        and n in ("kappa1", "kappa2"))]
    if mode == NO_SPRING:
        theta0 = theta0.copy(kappa1=0.0, kappa2=0.0)
    if not bounds.contains(theta0, free):
        raise ConstraintError("initial guess violates the box constraints")

    t_start = time.perf_counter()
    evals = 0
    best = {"loss": np.inf, "z": _pack(theta0, free)}
    trace = []
    starts = _start_indices(experiments, cfg.start_index, cfg.motion_threshold)

    def objective(z):
        nonlocal evals
        evals += 1
        theta = _unpack(z, theta0, free)
        loss = _sequence_loss(theta, experiments, mode, cfg.loss,
                              cfg.substeps, starts)
        if loss < best["loss"]:
            best["loss"] = loss
            best["z"] = z.copy()
        trace.append(best["loss"] if np.isfinite(best["loss"]) else np.nan)
        return loss if np.isfinite(loss) else 1e18

    initial_loss = objective(_pack(theta0, free))
    if cfg.max_evals <= 1:
        report = IdentificationReport(
            mode=mode, loss_name=cfg.loss,
            initial_loss=initial_loss, final_loss=initial_loss,
            n_evals=evals, wall_time=time.perf_counter() - t_start, trace=trace,
        )
        if not np.isfinite(initial_loss):
            raise IdentificationError("initial guess diverges and no budget remains")
        return theta0, report

    z_bounds = []
    for n in free:
        lo, hi = bounds.lower[n], bounds.upper[n]
        if n in POSITIVE_PARAMS:
            z_bounds.append((np.log(lo), np.log(hi)))
        else:
            z_bounds.append((lo, hi))

    remaining = cfg.max_evals - evals
    for _ in range(max(1, cfg.restarts)):
        if remaining <= 0:
            break
        res = minimize(
            objective, best["z"], method="Nelder-Mead", bounds=z_bounds,
            options={"maxfev": remaining, "xatol": cfg.xatol,
                     "fatol": cfg.fatol, "adaptive": True},
        )
        remaining = cfg.max_evals - evals
        if res.fun >= 1e18:
            continue

    if not np.isfinite(best["loss"]):
        raise IdentificationError("every candidate simulation diverged")
    theta_best = _unpack(best["z"], theta0, free)
    report = IdentificationReport(
        mode=mode, loss_name=cfg.loss,
        initial_loss=float(initial_loss) if np.isfinite(initial_loss) else float("inf"),
        final_loss=float(best["loss"]),
        n_evals=evals, wall_time=time.perf_counter() - t_start, trace=trace,
    )
    return theta_best, report


# ---------------------------------------------------------------------------
# Parameter-file round trip

_PARAM_COMMENTS = {
    "J_r": "kg m^2, arm + rotor inertia about the vertical axis",
    "J_p": "kg m^2, pendulum inertia about its center of mass",
    "kappa1": "N m / rad, linear cable-spring coefficient",
    "kappa2": "N m / rad^2, quadratic cable-spring coefficient",
    "b1": "N m s / rad, arm viscous damping",
    "b2": "N m s / rad, pendulum viscous damping",
    "kappa_t": "N m / V, motor torque constant",
    "kappa_v": "V s / rad, motor back-EMF constant",
    "m_r": "kg, arm mass (known constant)",
    "m_p": "kg, pendulum mass (known constant)",
    "L_r": "m, arm length (known constant)",
    "l_p": "m, pivot to pendulum COM (known constant)",
    "g": "m / s^2, gravitational acceleration (known constant)",
}


def save_parameters(path, theta: ELParameters):
    lines = ["# rotary-pendulum grey-box parameters"]
    for name, value in theta.as_dict().items():
        lines.append(f"{name}: {value!r}  # {_PARAM_COMMENTS[name]}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_parameters(path) -> ELParameters:
    with open(path, "r", encoding="utf-8") as fh:
        doc = yaml.safe_load(fh)
    names = {f.name for f in fields(ELParameters)}
    unknown = set(doc) - names
    if unknown:
        raise ConfigError(f"{path}: unknown parameter keys {sorted(unknown)}")
    return ELParameters(**{k: float(v) for k, v in doc.items()})
