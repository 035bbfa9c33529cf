from .buffer import ReplayBuffer, SegmentBatch
from .losses import (POLICY_LOSSES, exit_loss_variants, mean_ce_loss, optit_loss, policy_loss,
                     sample_search_actions, value_loss)
from .training import Learner, TrainConfig, TrainResult, format_metrics_csv, training_loop

__all__ = [
    "ReplayBuffer", "SegmentBatch", "POLICY_LOSSES", "exit_loss_variants", "mean_ce_loss", "optit_loss",
    "policy_loss", "sample_search_actions", "value_loss", "Learner", "TrainConfig", "TrainResult",
    "format_metrics_csv", "training_loop",
]
