"""Coarse-to-fine virtual try-on on a small numpy autograd engine.

Stages: person representation, coarse encoder-decoder, shape-context TPS
warp of the product image, learned composition mask.  See the README for
the command-line workflow.
"""

from .coarse import CoarseGenerator, CoarseOutput, LossWeights, coarse_forward, coarse_loss
from .config import PipelineConfig, load_config
from .perception import PerceptionNet, perception_features
from .refine import RefinementLossConfig, RefinementNet, composite, refine_forward, tv_norm
from .representation import PoseKeypoints, build_representation
from .tensor import Tensor
from .warp import TpsTransform, fit_tps, warp_clothing

__version__ = "0.1.0"

__all__ = [
    "CoarseGenerator", "CoarseOutput", "LossWeights", "coarse_forward", "coarse_loss",
    "PipelineConfig", "load_config", "PerceptionNet", "perception_features",
    "RefinementLossConfig", "RefinementNet", "composite", "refine_forward", "tv_norm",
    "PoseKeypoints", "build_representation", "Tensor", "TpsTransform", "fit_tps",
    "warp_clothing",
]
