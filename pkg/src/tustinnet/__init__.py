"""Physics-based neural state-space identification for rotary pendulums.

The package bundles a trapezoidal neural state-space model with a
transfer-learning training pipeline, a first-principles Euler-Lagrange
baseline with constrained identification, a synthetic ground-truth
generator, and a batch CLI tying them together.
"""

from .checkpoint import load_checkpoint, save_checkpoint
from .data import (ExperimentSequence, SubsequenceSample,
                   build_finetune_dataset, build_pretrain_dataset,
                   detect_equilibrium_entry, estimate_velocities,
                   load_experiment, load_split)
from .errors import (ConfigError, ConstraintError, DataFormatError,
                     DatasetError, DimensionError, DivergenceError, GridError,
                     IdentificationError, NumericError, TooShortError,
                     TustinNetError)
from .estimators import (EulerLagrangeEstimator, TustinNetEstimator,
                         validate_experiments)
from .greybox import (ELParameters, IdentifyConfig, default_bounds,
                      default_parameters, dynamics, energy,
                      identify_parameters, simulate)
from .losses import (ComponentKind, angular_distance, output_loss, rmse,
                     squared_distance, state_loss)
from .model import TustinModel, features, rollout, rollout_backward, step
from .network import (FeedforwardNet, GradientBundle, backward, forward,
                      init_net)
from .state import StateVector, Trajectory
from .synth import GenerationSpec, generate, quantize_encoder, saturate_voltage
from .training import (OptimizerState, ScheduleState, StageReport,
                       TrainingConfig, finetune, freeze_layers, init_model,
                       optimizer_step, pretrain, run_transfer_learning,
                       scheduler_step, train_standard)

__version__ = "0.1.0"
