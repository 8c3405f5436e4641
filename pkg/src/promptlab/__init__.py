"""Prompt tuning of a frozen dual encoder with attention filtering, topology and logit distillation."""
from .autograd import Tensor, backward, finite_diff_check
from .encoder import DualEncoder, FeatureStack, ModelConfig, PromptSet, load_checkpoint, predict, save_checkpoint
from .errors import (
    DegenerateVectorError,
    FrozenModelError,
    InvalidInputError,
    InvalidParameterError,
    PromptLabError,
    TrainingFailedError,
)
from .fif import Mask, apply_mask, build_mask, extract_attention, filter_images
from .hld import ckd_loss, class_relation, hld_total, ikd_loss
from .stp import fuse_layers, make_triplets, sample_layer_weights, stp_text_loss, stp_total, stp_vision_loss

__version__ = "0.1.0"
