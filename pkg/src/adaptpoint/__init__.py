"""Sample-adaptive point-cloud augmentation and corruption benchmarking.

A deterministic corruption-suite generator (7 families x 5 severities), a
differentiable sample-adaptive augmentor (per-anchor deformation plus a
learned point mask), a three-player co-training loop (augmentor /
discriminator / classifier), and mCE-based robustness evaluation.
"""

__version__ = "0.1.0"

from .autograd import Tensor, no_grad
from .geom import euler_to_rotation, fps, idw_interpolate, knn, normalize_unit_sphere
from .rng import RngStream

__all__ = [
    "Tensor",
    "no_grad",
    "RngStream",
    "fps",
    "knn",
    "euler_to_rotation",
    "normalize_unit_sphere",
    "idw_interpolate",
    "__version__",
]
