from formation_rl.train.pipeline import (
    CurriculumPeriod,
    CurriculumSchedule,
    SatisfactionThresholds,
    Trainer,
    WeightSearchConfig,
    evaluate_satisfaction,
    sample_weights,
    train_stage1,
    train_stage2,
)
from formation_rl.train.ppo import PpoConfig, RolloutBuffer, compute_gae, normalize_advantages, ppo_update

__all__ = [
    "CurriculumPeriod",
    "CurriculumSchedule",
    "PpoConfig",
    "RolloutBuffer",
    "SatisfactionThresholds",
    "Trainer",
    "WeightSearchConfig",
    "compute_gae",
    "evaluate_satisfaction",
    "normalize_advantages",
    "ppo_update",
    "sample_weights",
    "train_stage1",
    "train_stage2",
]
