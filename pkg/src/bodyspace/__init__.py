"""Canonical neural body volume trained from sparse posed images.

Subpackages cover geometry, the articulated skeleton, the shared motion
weight volume, the appearance-conditioned canonical field, differentiable
volume rendering, the training losses and optimizer, the dataset/training
pipeline, and the (appearance, pose, view) render space with its HTTP
service.
"""

__version__ = "0.1.0"
