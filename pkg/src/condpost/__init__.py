"""Conditional posterior sampling for episodic RL over finite Q-function classes."""

from .errors import (
    CapExceeded,
    ConfigError,
    EmptyCoverSet,
    EtaTooLarge,
    InvalidClass,
    InvalidMdp,
    NegativeValue,
    NonPositiveEntry,
    ValidationError,
)
from .mdp import (
    DeterministicPolicy,
    RewardNoise,
    TabularMdp,
    Trajectory,
    bellman_apply,
    occupancy_measures,
    optimal_values,
    policy_value,
    simulate_episode,
)
from .posterior import (
    LogWeightChain,
    PosteriorState,
    build_chain,
    exact_posterior,
    excess_loss_delta,
    sample_posterior,
    update_losses,
)
from .value_class import (
    Link,
    QFunctionClass,
    bellman_residual,
    boundedness_b,
    check_assumptions,
    greedy_policy,
    kappa,
    kappa_alpha,
)

__version__ = "0.1.0"
