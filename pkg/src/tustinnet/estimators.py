"""Scikit-learn-style estimator facade over the identification pipelines.

Both estimators consume a list of annotated ExperimentSequence objects in
``fit`` and free-run-simulate in ``predict``, so they compose with tools
that expect the fit/predict/get_params protocol. ``score`` returns the
negative mean free-run RMSE (greater is better, per sklearn convention).
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import greybox, training
from .data import ExperimentSequence
from .errors import ConfigError, DimensionError
from .evaluation import GreyboxRunner, TustinRunner, free_run_rmse
from .state import StateVector


def validate_experiments(X) -> list:
    """Check that X is a non-empty list of consistent ExperimentSequence."""
    if isinstance(X, ExperimentSequence):
        X = [X]
    X = list(X)
    if not X:
        raise ConfigError("need at least one experiment")
    for seq in X:
        if not isinstance(seq, ExperimentSequence):
            raise TypeError(f"expected ExperimentSequence, got {type(seq).__name__}")
        if seq.qdot_est is None:
            raise ConfigError(
                f"experiment {seq.id} has no velocity estimates; load or annotate first"
            )
    tau = X[0].tau_s
    if any(abs(seq.tau_s - tau) > 1e-12 for seq in X):
        raise DimensionError("experiments mix different sampling times")
    return X


def _as_input_sequence(u, n_u: int) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if u.ndim == 1:
        u = u[:, None]
    if u.ndim != 2 or u.shape[1] != n_u:
        raise DimensionError(f"input sequence must be (T+1, {n_u})")
    return u


class TustinNetEstimator(BaseEstimator):
    """Neural state-space model trained by transfer learning (or standard).

    Parameters mirror TrainingConfig; ``procedure`` selects the pipeline.
    After ``fit``, ``model_`` holds the trained TustinModel and
    ``reports_`` the per-stage training logs.
    """

    def __init__(self, hidden_sizes=(100, 100), activation_slope=0.01,
                 tau_s=0.01, procedure="transfer",
                 pretrain_samples=1408, pretrain_window=50, pretrain_epochs=300,
                 freeze_count=2, finetune_samples=864, finetune_window=75,
                 finetune_epochs=300, standard_samples=864, standard_window=75,
                 learning_rate=3e-3, batch_size=64, clip_norm=10.0,
                 patience=10, lr_factor=0.5, min_lr=1e-5,
                 seed=0, strict=False):
        self.hidden_sizes = hidden_sizes
        self.activation_slope = activation_slope
        self.tau_s = tau_s
        self.procedure = procedure
        self.pretrain_samples = pretrain_samples
        self.pretrain_window = pretrain_window
        self.pretrain_epochs = pretrain_epochs
        self.freeze_count = freeze_count
        self.finetune_samples = finetune_samples
        self.finetune_window = finetune_window
        self.finetune_epochs = finetune_epochs
        self.standard_samples = standard_samples
        self.standard_window = standard_window
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.clip_norm = clip_norm
        self.patience = patience
        self.lr_factor = lr_factor
        self.min_lr = min_lr
        self.seed = seed
        self.strict = strict

    def _config(self) -> training.TrainingConfig:
        return training.TrainingConfig(
            seed=self.seed, procedure=self.procedure,
            hidden_sizes=tuple(self.hidden_sizes),
            activation_slope=self.activation_slope, tau_s=self.tau_s,
            pretrain_samples=self.pretrain_samples,
            pretrain_window=self.pretrain_window,
            pretrain_epochs=self.pretrain_epochs,
            freeze_count=self.freeze_count,
            finetune_samples=self.finetune_samples,
            finetune_window=self.finetune_window,
            finetune_epochs=self.finetune_epochs,
            standard_samples=self.standard_samples,
            standard_window=self.standard_window,
            learning_rate=self.learning_rate, batch_size=self.batch_size,
            clip_norm=self.clip_norm, patience=self.patience,
            lr_factor=self.lr_factor, min_lr=self.min_lr, strict=self.strict,
        ).validate()

    def fit(self, X, y=None):
        """Train on a list of annotated experiments (y is ignored)."""
        X = validate_experiments(X)
        cfg = self._config()
        if abs(X[0].tau_s - cfg.tau_s) > 1e-12:
            raise DimensionError(
                f"estimator tau_s {cfg.tau_s} != data tau_s {X[0].tau_s}"
            )
        model = training.init_model(cfg, n_q=X[0].n_q, n_u=X[0].n_u)
        if cfg.procedure == "transfer":
            model, reports = training.run_transfer_learning(model, X, cfg)
        else:
            model, report = training.train_standard(model, X, cfg)
            reports = {"standard": report}
        self.model_ = model
        self.reports_ = reports
        return self

    def simulate(self, x0: StateVector, u):
        """Free-run trajectory from an explicit initial state."""
        check_is_fitted(self, "model_")
        from .model import rollout
        return rollout(self.model_, x0, _as_input_sequence(u, self.model_.n_u))

    def predict(self, X):
        """Free-run position outputs for each experiment in X."""
        check_is_fitted(self, "model_")
        X = validate_experiments(X)
        runner = TustinRunner(name="tustin", model=self.model_)
        return [runner.free_run(seq).outputs for seq in X]

    def score(self, X, y=None) -> float:
        """Negative mean free-run RMSE over the experiments."""
        check_is_fitted(self, "model_")
        X = validate_experiments(X)
        runner = TustinRunner(name="tustin", model=self.model_)
        return -float(np.mean([free_run_rmse(runner, seq)[0] for seq in X]))


class EulerLagrangeEstimator(BaseEstimator):
    """Grey-box baseline identified by simulation-error minimization.

    ``fit`` runs the constrained search from ``theta0`` (defaults to the
    nominal set); ``theta_`` holds the identified parameters afterwards.
    """

    def __init__(self, spring=True, theta0=None, bounds=None, loss="state",
                 max_evals=4000, restarts=3, substeps=10, positive_kappa2=False):
        self.spring = spring
        self.theta0 = theta0
        self.bounds = bounds
        self.loss = loss
        self.max_evals = max_evals
        self.restarts = restarts
        self.substeps = substeps
        self.positive_kappa2 = positive_kappa2

    @property
    def _mode(self) -> str:
        return greybox.WITH_SPRING if self.spring else greybox.NO_SPRING

    def fit(self, X, y=None):
        X = validate_experiments(X)
        theta0 = self.theta0 or greybox.default_parameters()
        bounds = self.bounds or greybox.default_bounds(self.positive_kappa2)
        cfg = greybox.IdentifyConfig(
            loss=self.loss, max_evals=self.max_evals, restarts=self.restarts,
            substeps=self.substeps,
        )
        self.theta_, self.report_ = greybox.identify_parameters(
            X, bounds, theta0, mode=self._mode, cfg=cfg,
        )
        return self

    def simulate(self, x0: StateVector, u, tau_s: float):
        check_is_fitted(self, "theta_")
        return greybox.simulate(self.theta_, x0,
                                _as_input_sequence(u, 1), tau_s,
                                mode=self._mode, substeps=self.substeps)

    def predict(self, X):
        check_is_fitted(self, "theta_")
        X = validate_experiments(X)
        runner = GreyboxRunner(name="greybox", theta=self.theta_,
                               mode=self._mode, substeps=self.substeps)
        return [runner.free_run(seq).outputs for seq in X]

    def score(self, X, y=None) -> float:
        check_is_fitted(self, "theta_")
        X = validate_experiments(X)
        runner = GreyboxRunner(name="greybox", theta=self.theta_,
                               mode=self._mode, substeps=self.substeps)
        return -float(np.mean([free_run_rmse(runner, seq)[0] for seq in X]))
