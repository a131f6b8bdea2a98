"""Tri-modal contrastive alignment for 3D point clouds.

Trains a permutation-invariant point-cloud encoder so its embeddings align
with a frozen, pre-aligned image/text embedding space, using symmetric
contrastive losses over in-batch triplets.
"""

__version__ = "0.1.0"

from . import ag, embedstore, evaluation, geometry, model, selfcheck, synth, training

__all__ = ["ag", "embedstore", "evaluation", "geometry", "model",
           "selfcheck", "synth", "training", "__version__"]
