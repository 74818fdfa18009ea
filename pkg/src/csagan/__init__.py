"""Line-to-photo translation with conditional self-attention: a compact
tensor engine, the full model and losses, the line-map preprocessing
pipeline, distribution metrics, and a training/evaluation CLI."""

from . import engine, linemap, losses, metrics
from .attention import Csam
from .discriminator import DiscriminatorConfig, MultiScaleDiscriminator, receptive_field
from .generator import Generator, GeneratorConfig, MruBlock
from .losses import LossWeights
from .training import StagePlan, Trainer

__all__ = [
    "engine", "linemap", "losses", "metrics",
    "Csam", "DiscriminatorConfig", "MultiScaleDiscriminator", "receptive_field",
    "Generator", "GeneratorConfig", "MruBlock", "LossWeights", "StagePlan", "Trainer",
]

__version__ = "0.1.0"
