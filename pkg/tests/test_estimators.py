import numpy as np
import pytest
from sklearn.base import clone

from tustinnet import greybox, synth
from tustinnet.errors import ConfigError, DimensionError
from tustinnet.estimators import (EulerLagrangeEstimator, TustinNetEstimator,
                                  validate_experiments)
from tustinnet.state import StateVector


@pytest.fixture(scope="module")
def experiments():
    theta = greybox.default_parameters()
    out = []
    for i, kind in enumerate(["free-fall", "free-fall", "noise-excited"]):
        out.append(synth.generate(
            synth.GenerationSpec(theta=theta, kind=kind, duration=7.0, seed=i),
            id=i))
    return out


def _small_estimator(**kw):
    defaults = dict(hidden_sizes=(16, 16), pretrain_samples=64,
                    pretrain_window=25, pretrain_epochs=6,
                    finetune_samples=48, finetune_window=30,
                    finetune_epochs=4, standard_samples=48,
                    standard_window=30, batch_size=32, seed=0)
    defaults.update(kw)
    return TustinNetEstimator(**defaults)


def test_get_params_round_trip():
    est = _small_estimator(learning_rate=2e-3)
    params = est.get_params()
    assert params["learning_rate"] == 2e-3
    est2 = clone(est)
    assert est2.get_params() == params


def test_fit_predict_score(experiments):
    est = _small_estimator()
    est.fit(experiments)
    assert hasattr(est, "model_")
    assert set(est.reports_) == {"pretrain", "finetune"}
    outputs = est.predict(experiments[:1])
    assert outputs[0].shape == experiments[0].q.shape
    assert np.isfinite(est.score(experiments))


def test_standard_procedure_path(experiments):
    est = _small_estimator(procedure="standard")
    est.fit(experiments)
    assert set(est.reports_) == {"standard"}


def test_unfitted_raises(experiments):
    from sklearn.exceptions import NotFittedError
    with pytest.raises(NotFittedError):
        _small_estimator().predict(experiments)


def test_simulate_from_explicit_state(experiments):
    est = _small_estimator().fit(experiments)
    traj = est.simulate(StateVector(q=[0.0, np.pi], qdot=[0.0, 0.0]),
                        np.zeros((50, 1)))
    assert len(traj) == 50


def test_validate_experiments_rejects_garbage(experiments):
    with pytest.raises(ConfigError):
        validate_experiments([])
    with pytest.raises(TypeError):
        validate_experiments([1, 2])
    mixed = [experiments[0], experiments[1]]
    mixed[1] = synth.generate(synth.GenerationSpec(
        theta=greybox.default_parameters(), duration=5.0, tau_s=0.02, seed=9))
    with pytest.raises(DimensionError):
        validate_experiments(mixed)


def test_tau_mismatch_raises(experiments):
    est = _small_estimator(tau_s=0.02)
    with pytest.raises(DimensionError):
        est.fit(experiments)


def test_greybox_estimator_fit_and_score(experiments):
    est = EulerLagrangeEstimator(max_evals=60, restarts=1,
                                 theta0=greybox.default_parameters())
    est.fit(experiments)
    assert hasattr(est, "theta_")
    assert est.report_.final_loss <= est.report_.initial_loss
    outputs = est.predict(experiments[:1])
    assert outputs[0].shape == experiments[0].q.shape
    assert est.score(experiments) <= 0.0


def test_greybox_estimator_spring_toggle(experiments):
    est = EulerLagrangeEstimator(spring=False, max_evals=0,
                                 theta0=greybox.default_parameters())
    est.fit(experiments)
    assert est.theta_.kappa1 == 0.0
    assert est.theta_.kappa2 == 0.0
