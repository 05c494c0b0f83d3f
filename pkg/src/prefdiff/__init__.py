"""prefdiff: a desk-scale lab for preference-aligning small diffusion models.

Train an MLP denoiser on low-dimensional synthetic preference pairs with a
DPO objective, filter the data by multi-reward consensus, self-train on
timestep-conditional pseudo-labels, and check the gradient-variance bound
exactly on finite datasets.
"""

__version__ = "0.1.0"

from .diffusion import NoiseSchedule, Sample, ancestral_sample, denoise_loss, make_schedule, q_sample
from .dpo import (GradDecomposition, PreferencePair, dpo_loss, grad_decompose,
                  margin_logit, oracle_inner_product, variance_lower_bound,
                  variance_report)
from .model import DenoiserParams, GradVector, MLPArch, backward, forward, init_params, sgd_step
from .rewards import (PartitionedDataset, RewardCommittee, RewardSpec,
                      consensus_partition, default_committee, reward_diff, reward_eval)

__all__ = [
    "__version__",
    "NoiseSchedule", "Sample", "make_schedule", "q_sample", "denoise_loss", "ancestral_sample",
    "MLPArch", "DenoiserParams", "GradVector", "init_params", "forward", "backward", "sgd_step",
    "PreferencePair", "GradDecomposition", "margin_logit", "dpo_loss", "grad_decompose",
    "oracle_inner_product", "variance_lower_bound", "variance_report",
    "RewardSpec", "RewardCommittee", "PartitionedDataset", "default_committee",
    "reward_eval", "reward_diff", "consensus_partition",
]
