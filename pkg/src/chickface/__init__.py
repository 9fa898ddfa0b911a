"""Facial chick sexing pipeline.

Subpackages that need torch (classifier, keypoints, explain) are imported
lazily by their callers so that lightweight geometry/dataset work does not
pay the torch import cost.
"""

__version__ = "0.1.0"

from .kernels import BACKEND as KERNEL_BACKEND  # noqa: F401
