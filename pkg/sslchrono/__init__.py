from .__about__ import __version__
from .checkpoint import load_checkpoint, save_checkpoint
from .evaluation import auc, run_sweep, score_test_set
from .synth_cohort import CohortParams, generate_cohort, split_cohort
from .training import finetune, pretrain
from .transformer import ModelConfig, forward, init_params

__all__ = [
    "__version__",
    "CohortParams",
    "ModelConfig",
    "auc",
    "finetune",
    "forward",
    "generate_cohort",
    "init_params",
    "load_checkpoint",
    "pretrain",
    "run_sweep",
    "save_checkpoint",
    "score_test_set",
    "split_cohort",
]
