"""EV-charging ecosystem simulator."""

from .config import (PAPER_WEIGHTS, STAKEHOLDERS, RewardParams, ScenarioConfig, check_weights,
                     largest_remainder, total_reward)
from .rewards import StepOutcome, stakeholder_reward, stakeholder_rewards
from .state import FEATURE_NAMES, N_CONTEXT, ContextState
from .transactions import Transaction, ingest_transactions
from .world import (CAP_LEVELS, CHARGE, CURTAIL, DEFER, NEUTRAL, PRIORITIZE, REPOSITION, SERVE,
                    STAY, ChargingWorld, JointAction, context_complexity, context_features,
                    idle_action)

__all__ = [
    "PAPER_WEIGHTS", "STAKEHOLDERS", "RewardParams", "ScenarioConfig", "check_weights",
    "largest_remainder", "total_reward", "StepOutcome", "stakeholder_reward",
    "stakeholder_rewards", "FEATURE_NAMES", "N_CONTEXT", "ContextState", "Transaction",
    "ingest_transactions", "CAP_LEVELS", "CHARGE", "CURTAIL", "DEFER", "NEUTRAL", "PRIORITIZE",
    "REPOSITION", "SERVE", "STAY", "ChargingWorld", "JointAction", "context_complexity",
    "context_features", "idle_action",
]
