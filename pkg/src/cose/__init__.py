"""Saliency-method reliability benchmark: consistency, sensitivity and COSE.

The package bundles everything needed to score saliency methods end to
end at desk scale: a minimal reverse-mode autodiff engine
(:mod:`cose.autodiff`), a small trainable CNN with epoch checkpointing
(:mod:`cose.model`, :mod:`cose.toydata`), a natural-augmentation suite
with exact inverse warping for maps (:mod:`cose.transforms`), seven
reference attribution methods (:mod:`cose.saliency`), the SSIM-based
consistency / sensitivity / COSE metrics (:mod:`cose.metrics`), a binary
interchange container (:mod:`cose.interchange`), and an orchestration
harness plus CLI (:mod:`cose.harness`, ``cose``).
"""

__version__ = "0.1.0"

from cose.metrics import SsimParams, consistency, cose, distance, sensitivity, ssim
from cose.saliency import MethodConfig, SaliencyMap, compute_map, method_names
from cose.transforms import TransformSpec, apply_transform, invert_on_map, sample_transform

__all__ = [
    "SsimParams",
    "ssim",
    "distance",
    "consistency",
    "sensitivity",
    "cose",
    "TransformSpec",
    "sample_transform",
    "apply_transform",
    "invert_on_map",
    "SaliencyMap",
    "MethodConfig",
    "compute_map",
    "method_names",
    "__version__",
]
