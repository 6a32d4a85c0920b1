"""Neural dueling bandits: non-linear reward learning from preference feedback."""

from .environment import (
    BinaryObservation,
    LinkFunction,
    PreferenceObservation,
    RoundContexts,
    SyntheticReward,
    best_arm,
    eval_reward,
    link_derivative,
    link_value,
    make_round_contexts,
    sample_binary,
    sample_preference,
)
from .exceptions import (
    ConfigurationError,
    InputError,
    NeuralDuelingError,
    NumericalDegeneracyError,
    NumericalError,
    TrainingDivergedError,
)
from .models import LinearRewardModel, NeuralRewardModel
from .network import (
    NetworkParams,
    NetworkShape,
    TrainingConfig,
    binary_loss,
    dueling_loss,
    forward,
    init_symmetric,
    param_gradient,
    train,
)
from .policies import (
    DuelChoice,
    PolicyKind,
    linear_scores,
    select_arm_ts,
    select_arm_ucb,
    select_duel_ts,
    select_duel_ucb,
    select_random,
)
from .uncertainty import (
    ConfidenceConfig,
    GramPrecision,
    PrecisionState,
    effective_dimension,
    precision_init,
    precision_rebuild,
    precision_update,
    sigma_pair,
    sigma_single,
    theoretical_nu,
)

__version__ = "0.1.0"
