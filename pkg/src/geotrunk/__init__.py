"""Geometry-conditioned transformer trunks for operator learning.

The package bundles a small autodiff engine, attention-based trunk
networks that consume point clouds of arbitrary 2D domains, branch
networks that inject case parameters, a synthetic geometry benchmark
with an exact-SDF toolbox and a finite-difference reference solver, and
a CLI to generate data, train and evaluate.
"""

__version__ = "0.1.0"

from .engine import Tape, Tensor, backward, finite_diff_grad

__all__ = ["Tape", "Tensor", "backward", "finite_diff_grad", "__version__"]
