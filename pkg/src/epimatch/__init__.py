"""Two-view correspondence matching on synthetic epipolar data.

Learned inlier/outlier classification with a differentiable weighted
eight-point solve, a local feature consensus block and reversal-based
Siamese supervision, built on a small numpy autodiff engine.
"""

from .autodiff import GradReport, Node, backward, finite_diff_check
from .geometry import (
    Pose,
    essential_from_pose,
    recover_pose,
    residuals,
    reverse,
    rotation_error_deg,
    sym_epipolar_distance,
    translation_error_deg,
    weighted_eight_point,
)
from .pipeline import (
    LossConfig,
    ModelConfig,
    ModelParams,
    loss_cls,
    loss_reg,
    loss_total,
    sample_loss,
    siamese_loss_a,
    siamese_loss_b,
    two_stage_forward,
)
from .scenes import SampleRecord, SceneConfig, gen_dataset, gen_scene, read_dataset, write_dataset
from .checkpoint import load_checkpoint, save_checkpoint
from .evaluation import classify, evaluate_params, gradient_suite, match_metrics, pose_metrics
from .training import TrainConfig, TrainStats, train

__version__ = "0.1.0"
