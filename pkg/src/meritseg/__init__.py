"""Multi-scale two-backbone transformer segmentation on a numpy autograd core."""

from .cascade_decoder import CascadeDecoder, HeadWeights, combine_predictions, weighted_sum
from .losses import LossConfig, combined_loss, mutation_loss
from .metrics import MetricsReport, dsc, evaluate_case, hd95
from .model import MeritConfig, MeritModel, forward
from .vision_blocks import BackboneConfig

__all__ = [
    "BackboneConfig", "CascadeDecoder", "HeadWeights", "LossConfig", "MeritConfig", "MeritModel", "MetricsReport",
    "combine_predictions", "combined_loss", "dsc", "evaluate_case", "forward", "hd95", "mutation_loss",
    "weighted_sum",
]
