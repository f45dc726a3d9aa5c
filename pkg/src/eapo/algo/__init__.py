from .ppo import (NonFiniteLoss, NonFiniteRatio, PpoUpdateConfig, baseline_entropy_reward_ppo,
                  baseline_ppo_entropy_bonus, eapo_ppo_update, ppo_loss_and_grad,
                  ppo_policy_objective, ppo_update)
from .trpo import (LineSearchFailed, TrpoUpdateConfig, conjugate_gradient, eapo_trpo_update,
                   fisher_vector_product, mean_kl)

ALGORITHMS = ("eapo_ppo", "eapo_trpo", "ppo_entbonus", "ppo_entreward")

__all__ = [
    "ALGORITHMS", "LineSearchFailed", "NonFiniteLoss", "NonFiniteRatio", "PpoUpdateConfig",
    "TrpoUpdateConfig", "baseline_entropy_reward_ppo", "baseline_ppo_entropy_bonus",
    "conjugate_gradient", "eapo_ppo_update", "eapo_trpo_update", "fisher_vector_product",
    "mean_kl", "ppo_loss_and_grad", "ppo_policy_objective", "ppo_update",
]
