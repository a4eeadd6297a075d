"""Timestep-grouped diffusion denoisers with SNR-driven FLOPs allocation.

Timesteps are grouped by denoising difficulty, a base model is trained on
all of them, and each group receives a pruned, fine-tuned copy sized to its
compute budget.
"""

from .allocation import FlopsBudget, GroupPlan, difficulty_profile, group_limits, partition_timesteps, plan_groups
from .config import ExperimentConfig, load_config, reference_config, write_config
from .denoiser import DenoiserSpec, Parameters, PruneMask, count_flops, init_params
from .estimators import DiffusionMLP, TDCDiffusion
from .pipeline import RunReport, single_stage_train, tdc_train, train_base
from .sampling import ModelBank, ddim_sample, energy_distance, trajectory_flops
from .schedule import NoiseSchedule, build_cosine_schedule, build_linear_schedule, forward_diffuse, snr_db

__version__ = "0.1.0"
