"""Optimization loop and the two training procedures.

Both procedures minimize the state-window loss over randomly drawn
subsequences with Adam and a reduce-on-plateau learning-rate schedule.
The transfer-learning procedure runs pre-train (transient windows) ->
freeze the first layers -> fine-tune (full-range windows); the standard
procedure trains on full-range windows for an equal datapoint budget so
comparisons between the two are fair.
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np
import yaml

from . import data as dataio
from .checkpoint import save_checkpoint
from .errors import ConfigError, DimensionError, DivergenceError
from .model import TustinModel, rollout_backward_batch, rollout_batch
from .network import FeedforwardNet, GradientBundle, init_net

log = logging.getLogger(__name__)


@dataclass
class TrainingConfig:
    """Everything a training run needs, loadable from YAML."""

    seed: int = 0
    procedure: str = "transfer"        # transfer | standard
    hidden_sizes: tuple = (100, 100)
    activation_slope: float = 0.01
    tau_s: float = 0.01

    pretrain_samples: int = 1408       # N of the transient dataset
    pretrain_window: int = 50          # T of the transient dataset
    pretrain_epochs: int = 300
    freeze_count: int = 2              # hidden layers frozen after pre-training
    finetune_samples: int = 864        # N of the full-range dataset
    finetune_window: int = 75          # T of the full-range dataset
    finetune_epochs: int = 300
    standard_samples: int = 864        # full-range dataset for the standard run
    standard_window: int = 75

    learning_rate: float = 3e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 64
    clip_norm: float = 10.0            # global-norm gradient clip; <= 0 disables

    patience: int = 10
    lr_factor: float = 0.5
    min_lr: float = 1e-5
    improvement_rtol: float = 1e-8

    strict: bool = False               # BLAS-free ordered gradient reductions
    equilibrium_speed_tol: float = dataio.DEFAULT_SPEED_TOL
    equilibrium_window: int = dataio.DEFAULT_EQUILIBRIUM_WINDOW

    def validate(self):
        if self.procedure not in ("transfer", "standard"):
            raise ConfigError(f"unknown procedure {self.procedure!r}")
        if self.batch_size < 1:
            raise ConfigError("batch size must be >= 1")
        if not 0.0 < self.lr_factor < 1.0:
            raise ConfigError("lr_factor must lie in (0, 1)")
        for name in ("pretrain_samples", "pretrain_window", "pretrain_epochs",
                     "finetune_samples", "finetune_window", "finetune_epochs",
                     "standard_samples", "standard_window"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        return self

    def to_yaml(self, path):
        doc = asdict(self)
        doc["hidden_sizes"] = list(self.hidden_sizes)
        with open(path, "w", encoding="utf-8") as fh:
            yaml.safe_dump(doc, fh, sort_keys=False)

    @classmethod
    def from_yaml(cls, path) -> "TrainingConfig":
        with open(path, "r", encoding="utf-8") as fh:
            doc = yaml.safe_load(fh) or {}
        return cls.from_dict(doc)

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainingConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown training-config keys {sorted(unknown)}")
        if "hidden_sizes" in doc:
            doc = dict(doc)
            doc["hidden_sizes"] = tuple(doc["hidden_sizes"])
        return cls(**doc).validate()

    def total_datapoints(self) -> int:
        """Datapoint budget of the transfer procedure (windows x steps x epochs)."""
        return (self.pretrain_samples * self.pretrain_window * self.pretrain_epochs
                + self.finetune_samples * self.finetune_window * self.finetune_epochs)


# ---------------------------------------------------------------------------
# Optimizer and scheduler

@dataclass
class OptimizerState:
    """Adam accumulators, one slot per weight matrix / bias vector."""

    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m_weights: list = None
    v_weights: list = None
    m_biases: list = None
    v_biases: list = None

    @classmethod
    def for_net(cls, net: FeedforwardNet, learning_rate: float,
                beta1: float = 0.9, beta2: float = 0.999,
                eps: float = 1e-8) -> "OptimizerState":
        return cls(
            learning_rate=learning_rate, beta1=beta1, beta2=beta2, eps=eps,
            m_weights=[np.zeros_like(w) for w in net.weights],
            v_weights=[np.zeros_like(w) for w in net.weights],
            m_biases=[np.zeros_like(b) for b in net.biases],
            v_biases=[np.zeros_like(b) for b in net.biases],
        )


def optimizer_step(net: FeedforwardNet, grads: GradientBundle,
                   opt: OptimizerState):
    """One Adam update in place; frozen groups stay bit-identical.

    Group m covers weight m and (for hidden layers) bias m. Returns the
    same (net, opt) pair for convenience.
    """
    for g in grads.d_weights + grads.d_biases:
        if not np.all(np.isfinite(g)):
            raise DivergenceError("non-finite gradient in optimizer step")
    opt.step_count += 1
    t = opt.step_count
    bc1 = 1.0 - opt.beta1 ** t
    bc2 = 1.0 - opt.beta2 ** t

    def update(param, grad, m, v):
        m *= opt.beta1
        m += (1.0 - opt.beta1) * grad
        v *= opt.beta2
        v += (1.0 - opt.beta2) * grad * grad
        param -= opt.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + opt.eps)

    for group, w in enumerate(net.weights):
        if net.frozen[group]:
            continue
        update(w, grads.d_weights[group], opt.m_weights[group],
               opt.v_weights[group])
        if group < len(net.biases):
            update(net.biases[group], grads.d_biases[group],
                   opt.m_biases[group], opt.v_biases[group])
    return net, opt


@dataclass
class ScheduleState:
    """Reduce-on-plateau learning-rate schedule."""

    lr: float
    patience: int = 10
    factor: float = 0.5
    min_lr: float = 1e-5
    improvement_rtol: float = 1e-8
    best: float = float("inf")
    since_improvement: int = 0


def scheduler_step(sched: ScheduleState, epoch_loss: float) -> ScheduleState:
    """Count non-improving epochs; decay the rate when patience runs out."""
    if not np.isfinite(epoch_loss):
        raise DivergenceError("non-finite epoch loss in scheduler")
    if np.isfinite(sched.best):
        margin = sched.best - sched.improvement_rtol * abs(sched.best)
        improved = epoch_loss < margin
    else:
        improved = True
    if improved:
        sched.best = epoch_loss
        sched.since_improvement = 0
    else:
        sched.since_improvement += 1
        if sched.since_improvement >= sched.patience:
            sched.lr = max(sched.lr * sched.factor, sched.min_lr)
            sched.since_improvement = 0
    return sched


# ---------------------------------------------------------------------------
# Batched loss over subsequence windows

def _stack_samples(samples):
    Q0 = np.stack([s.x0.q for s in samples])
    V0 = np.stack([s.x0.qdot for s in samples])
    U = np.stack([s.u_window for s in samples])
    Qref = np.stack([s.q_window for s in samples])
    Vref = np.stack([s.qdot_window for s in samples])
    return Q0, V0, U, Qref, Vref


def _window_loss_and_grads(Q, V, Qref, Vref):
    """State loss over k = 1..T with its gradients w.r.t. every state.

    Positions use the periodic distance, velocities the squared distance;
    the 1/(batch * T) normalization is folded into the gradients so the
    reverse pass needs no extra scaling.
    """
    B, T_plus_1, _ = Q.shape
    T = T_plus_1 - 1
    scale = 1.0 / (B * T)
    dpos = Q[:, 1:] - Qref[:, 1:]
    dvel = V[:, 1:] - Vref[:, 1:]
    loss = scale * (np.sum(2.0 * (1.0 - np.cos(dpos))) + np.sum(dvel * dvel))
    dQ = np.zeros_like(Q)
    dV = np.zeros_like(V)
    dQ[:, 1:] = scale * 2.0 * np.sin(dpos)
    dV[:, 1:] = scale * 2.0 * dvel
    return loss, dQ, dV


def evaluate_state_loss(model: TustinModel, samples, batch_size: int = 256) -> float:
    """Deterministic full-pass state loss of a model on a sample list."""
    if not samples:
        raise ConfigError("need at least one sample")
    total = 0.0
    for lo in range(0, len(samples), batch_size):
        chunk = samples[lo:lo + batch_size]
        Q0, V0, U, Qref, Vref = _stack_samples(chunk)
        Q, V = rollout_batch(model, Q0, V0, U)
        loss, _, _ = _window_loss_and_grads(Q, V, Qref, Vref)
        total += loss * len(chunk)
    return float(total / len(samples))


def _clip_bundle(bundle: GradientBundle, clip_norm: float):
    if clip_norm is None or clip_norm <= 0:
        return bundle
    sq = sum(float(np.sum(g * g)) for g in bundle.d_weights)
    sq += sum(float(np.sum(g * g)) for g in bundle.d_biases)
    norm = np.sqrt(sq)
    if norm > clip_norm:
        bundle = bundle.scaled(clip_norm / norm)
    return bundle


def _train_batch(model, batch, opt, cfg) -> float:
    Q0, V0, U, Qref, Vref = _stack_samples(batch)
    Q, V = rollout_batch(model, Q0, V0, U)
    loss, dQ, dV = _window_loss_and_grads(Q, V, Qref, Vref)
    bundle = rollout_backward_batch(model, Q, V, U, dQ, dV, strict=cfg.strict)
    bundle = _clip_bundle(bundle, cfg.clip_norm)
    optimizer_step(model.net, bundle, opt)
    return loss


@dataclass
class StageReport:
    """Per-stage training log."""

    stage: str
    epochs_run: int
    loss_trace: list
    final_loss: float
    wall_time: float
    seed: int
    datapoints: int = 0
    lr_final: float = 0.0

    def save(self, path_yaml, path_csv=None):
        doc = asdict(self)
        doc["loss_trace"] = [float(v) for v in self.loss_trace]
        for key in ("final_loss", "wall_time", "lr_final"):
            doc[key] = float(doc[key])
        with open(path_yaml, "w", encoding="utf-8") as fh:
            yaml.safe_dump(doc, fh, sort_keys=False)
        if path_csv is not None:
            with open(path_csv, "w", encoding="utf-8") as fh:
                fh.write("epoch,loss\n")
                for i, v in enumerate(self.loss_trace):
                    fh.write(f"{i},{float(v)!r}\n")


def _run_epochs(model: TustinModel, samples, epochs: int, cfg: TrainingConfig,
                stage: str, shuffle_rng, max_datapoints=None):
    """Shared epoch loop. Stops early when the datapoint budget runs out."""
    opt = OptimizerState.for_net(model.net, cfg.learning_rate, cfg.beta1,
                                 cfg.beta2, cfg.eps)
    sched = ScheduleState(lr=cfg.learning_rate, patience=cfg.patience,
                          factor=cfg.lr_factor, min_lr=cfg.min_lr,
                          improvement_rtol=cfg.improvement_rtol)
    trace = []
    datapoints = 0
    t_start = time.perf_counter()
    epochs_run = 0
    budget_left = True
    for epoch in range(epochs):
        order = shuffle_rng.permutation(len(samples))
        epoch_loss = 0.0
        seen = 0
        for lo in range(0, len(samples), cfg.batch_size):
            batch = [samples[i] for i in order[lo:lo + cfg.batch_size]]
            try:
                loss = _train_batch(model, batch, opt, cfg)
            except DivergenceError as exc:
                exc.stage = stage
                exc.step = epoch
                raise
            epoch_loss += loss * len(batch)
            seen += len(batch)
            datapoints += len(batch) * batch[0].window_len
            if max_datapoints is not None and datapoints >= max_datapoints:
                budget_left = False
                break
        if seen:
            epoch_loss = float(epoch_loss / seen)
            if not np.isfinite(epoch_loss):
                raise DivergenceError(f"epoch loss diverged in {stage}",
                                      step=epoch, stage=stage)
            trace.append(epoch_loss)
            epochs_run += 1
            sched = scheduler_step(sched, epoch_loss)
            opt.learning_rate = sched.lr
        if not budget_left:
            break
    final_loss = evaluate_state_loss(model, samples) if samples else float("nan")
    report = StageReport(
        stage=stage, epochs_run=epochs_run, loss_trace=trace,
        final_loss=final_loss, wall_time=time.perf_counter() - t_start,
        seed=cfg.seed, datapoints=datapoints, lr_final=sched.lr,
    )
    return model, report


def init_model(cfg: TrainingConfig, n_q: int = 2, n_u: int = 1) -> TustinModel:
    """Fresh model with the configured architecture, seeded from cfg.seed."""
    sizes = [n_u + 3 * n_q, *cfg.hidden_sizes, n_q]
    net = init_net(sizes, cfg.activation_slope,
                   seed=np.random.default_rng([cfg.seed, 0]).integers(2 ** 31))
    return TustinModel(net=net, n_q=n_q, n_u=n_u, tau_s=cfg.tau_s)


def pretrain(model: TustinModel, experiments, cfg: TrainingConfig):
    """Train every parameter group on transient windows."""
    model = model.copy()
    if any(model.net.frozen):
        log.warning("pre-training unfreezes all parameter groups")
        model.net.frozen = [False] * len(model.net.frozen)
    samples = dataio.build_pretrain_dataset(
        experiments, cfg.pretrain_samples, cfg.pretrain_window,
        seed=np.random.default_rng([cfg.seed, 1]).integers(2 ** 31))
    shuffle_rng = np.random.default_rng([cfg.seed, 3])
    return _run_epochs(model, samples, cfg.pretrain_epochs, cfg, "pretrain",
                       shuffle_rng)


def freeze_layers(model: TustinModel, freeze_count: int) -> TustinModel:
    """Mark the first ``freeze_count`` hidden-layer groups as frozen."""
    n_hidden = model.net.n_hidden
    if not 0 <= freeze_count <= n_hidden:
        raise ConfigError(
            f"can freeze between 0 and {n_hidden} layers, got {freeze_count}"
        )
    model = model.copy()
    model.net.frozen = [m < freeze_count for m in range(len(model.net.weights))]
    return model


def finetune(model: TustinModel, experiments, cfg: TrainingConfig):
    """Train the unfrozen groups on full-range windows."""
    if not any(model.net.frozen):
        log.warning("fine-tuning with no frozen groups; did you skip freezing?")
    model = model.copy()
    samples = dataio.build_finetune_dataset(
        experiments, cfg.finetune_samples, cfg.finetune_window,
        seed=np.random.default_rng([cfg.seed, 2]).integers(2 ** 31))
    shuffle_rng = np.random.default_rng([cfg.seed, 4])
    return _run_epochs(model, samples, cfg.finetune_epochs, cfg, "finetune",
                       shuffle_rng)


def run_transfer_learning(model: TustinModel, experiments, cfg: TrainingConfig,
                          out_dir=None):
    """Pre-train -> freeze -> fine-tune; returns (model, reports dict).

    When ``out_dir`` is given, a checkpoint is written after each stage
    (pretrained.ckpt, final.ckpt) together with the stage reports.
    """
    cfg.validate()
    model, report1 = pretrain(model, experiments, cfg)
    if out_dir is not None:
        save_checkpoint(f"{out_dir}/pretrained.ckpt", model)
        report1.save(f"{out_dir}/pretrain_report.yaml",
                     f"{out_dir}/pretrain_trace.csv")
    model = freeze_layers(model, cfg.freeze_count)
    model, report2 = finetune(model, experiments, cfg)
    if out_dir is not None:
        save_checkpoint(f"{out_dir}/final.ckpt", model)
        report2.save(f"{out_dir}/finetune_report.yaml",
                     f"{out_dir}/finetune_trace.csv")
    return model, {"pretrain": report1, "finetune": report2}


def train_standard(model: TustinModel, experiments, cfg: TrainingConfig,
                   out_dir=None):
    """Single-stage training on full-range windows at the matched budget.

    Processes the same number of datapoints (window steps) as the whole
    transfer pipeline would, stopping mid-epoch once the budget is reached.
    """
    cfg.validate()
    model = model.copy()
    budget = cfg.total_datapoints()
    if budget == 0:
        report = StageReport(stage="standard", epochs_run=0, loss_trace=[],
                             final_loss=float("nan"), wall_time=0.0,
                             seed=cfg.seed)
        return model, report
    samples = dataio.build_finetune_dataset(
        experiments, cfg.standard_samples, cfg.standard_window,
        seed=np.random.default_rng([cfg.seed, 5]).integers(2 ** 31))
    per_epoch = len(samples) * cfg.standard_window
    epochs = int(np.ceil(budget / per_epoch))
    shuffle_rng = np.random.default_rng([cfg.seed, 6])
    model, report = _run_epochs(model, samples, epochs, cfg, "standard",
                                shuffle_rng, max_datapoints=budget)
    if out_dir is not None:
        save_checkpoint(f"{out_dir}/standard.ckpt", model)
        report.save(f"{out_dir}/standard_report.yaml",
                    f"{out_dir}/standard_trace.csv")
    return model, report
