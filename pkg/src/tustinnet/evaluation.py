"""Free-run evaluation: RMSE matrices and plot-ready trajectory dumps.

A "runner" wraps anything that can free-run an experiment from its
recorded initial state: a trained neural model or a grey-box parameter
set. Initial velocities come from the stencil estimates because recorded
logs carry no velocity channel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import greybox
from .data import FREE_FALL, ExperimentSequence
from .errors import DimensionError
from .losses import rmse
from .model import TustinModel, rollout
from .state import StateVector, Trajectory

# Published free-run RMSE (x 10^-1 rad) measured on the physical apparatus,
# shown in report footers for side-by-side reading. Columns: four free-fall
# then four noise-excited validation experiments.
REFERENCE_RMSE = {
    "Euler-Lagrange": [1.42, 1.07, 3.11, 0.67, 1.41, 1.61, 1.39, 2.99],
    "Tustin-Net (standard training)": [5.31, 2.28, 6.14, 1.84, 0.72, 1.23, 1.57, 1.79],
    "Tustin-Net (transfer learning)": [0.75, 1.53, 1.11, 0.94, 1.03, 1.42, 1.68, 1.77],
}


def initial_state(seq: ExperimentSequence) -> StateVector:
    """Recorded positions plus stencil velocity estimates at step 0."""
    return seq.state(0)


@dataclass
class TustinRunner:
    name: str
    model: TustinModel

    def free_run(self, seq: ExperimentSequence) -> Trajectory:
        if self.model.n_q != seq.n_q or self.model.n_u != seq.n_u:
            raise DimensionError(
                f"model ({self.model.n_q}, {self.model.n_u}) does not match "
                f"experiment ({seq.n_q}, {seq.n_u})"
            )
        if abs(self.model.tau_s - seq.tau_s) > 1e-12:
            raise DimensionError(
                f"model tau_s {self.model.tau_s} != experiment tau_s {seq.tau_s}"
            )
        return rollout(self.model, initial_state(seq), seq.u)


@dataclass
class GreyboxRunner:
    name: str
    theta: greybox.ELParameters
    mode: str = greybox.WITH_SPRING
    substeps: int = 10

    def free_run(self, seq: ExperimentSequence) -> Trajectory:
        return greybox.simulate(self.theta, initial_state(seq), seq.u,
                                seq.tau_s, mode=self.mode,
                                substeps=self.substeps)


def free_run_rmse(runner, seq: ExperimentSequence):
    """(RMSE on the position outputs, the simulated trajectory)."""
    traj = runner.free_run(seq)
    return rmse(traj.outputs, seq.q), traj


@dataclass
class EvaluationResult:
    runner_names: list
    experiment_labels: list
    experiment_kinds: list
    matrix: np.ndarray       # (n_runners, n_experiments) RMSE in rad

    def row(self, name: str) -> np.ndarray:
        return self.matrix[self.runner_names.index(name)]


def evaluate_models(runners, experiments, trajectory_sink=None) -> EvaluationResult:
    """RMSE of every runner on every experiment, free-fall columns first.

    ``trajectory_sink(runner_name, label, seq, traj)`` receives each
    simulated trajectory, e.g. to write plot-ready CSVs.
    """
    order = sorted(range(len(experiments)),
                   key=lambda i: (experiments[i].kind != FREE_FALL, i))
    labels = []
    kinds = []
    matrix = np.empty((len(runners), len(order)))
    for col, idx in enumerate(order):
        seq = experiments[idx]
        labels.append(f"#{col + 1}")
        kinds.append(seq.kind)
        for row, runner in enumerate(runners):
            value, traj = free_run_rmse(runner, seq)
            matrix[row, col] = value
            if trajectory_sink is not None:
                trajectory_sink(runner.name, labels[-1], seq, traj)
    return EvaluationResult(
        runner_names=[r.name for r in runners],
        experiment_labels=labels,
        experiment_kinds=kinds,
        matrix=matrix,
    )


def write_rmse_csv(path, result: EvaluationResult):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("model," + ",".join(
            f"{lbl} ({kind})" for lbl, kind
            in zip(result.experiment_labels, result.experiment_kinds)) + "\n")
        for name, row in zip(result.runner_names, result.matrix):
            fh.write(name + "," + ",".join(repr(float(v)) for v in row) + "\n")


def write_rmse_report(path, result: EvaluationResult, notes=()):
    """Aligned-text RMSE table in rad with the x10^-1 rendering alongside."""
    name_w = max(28, max((len(n) for n in result.runner_names), default=0) + 2)
    lines = []
    lines.append("Free-run simulation RMSE on validation data")
    lines.append("(angles are compared unwrapped; each cell: rad "
                 "with [x 10^-1 rad] alongside)")
    lines.append("")
    header = " " * name_w
    for lbl, kind in zip(result.experiment_labels, result.experiment_kinds):
        header += f"{lbl + ' ' + ('ff' if kind == FREE_FALL else 'wn'):>18}"
    lines.append(header)
    for name, row in zip(result.runner_names, result.matrix):
        cells = "".join(f"{v:>8.4f} [{10 * v:>5.2f}]" for v in row)
        lines.append(f"{name:<{name_w}}{cells}")
    lines.append("")
    lines.append("Reference (physical apparatus, published benchmark), x 10^-1 rad:")
    for name, row in REFERENCE_RMSE.items():
        cells = "".join(f"{v:>18.2f}" for v in row)
        lines.append(f"{name:<{name_w}}{cells}")
    for note in notes:
        lines.append(note)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def trajectory_csv_sink(out_dir):
    """Sink writing one truth-vs-model CSV per (model, experiment) pair."""
    from pathlib import Path
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    def sink(runner_name, label, seq: ExperimentSequence, traj: Trajectory):
        safe = "".join(c if c.isalnum() or c in "-_" else "_" for c in runner_name)
        path = out / f"trajectory_{safe}_{label.strip('#')}.csv"
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("t,theta_true,alpha_true,theta_model,alpha_model,u\n")
            for k in range(len(seq.t)):
                row = (seq.t[k], seq.q[k, 0], seq.q[k, 1],
                       traj.q[k, 0], traj.q[k, 1], seq.u[k, 0])
                fh.write(",".join(repr(float(v)) for v in row) + "\n")

    return sink
