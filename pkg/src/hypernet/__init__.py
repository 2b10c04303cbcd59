"""Fully hyperbolic reversible CNNs in numpy.

Leapfrog blocks with Haar-wavelet coarsening and refinement, gradients by
stored or recomputed (memory-free) backpropagation, plus training utilities.
"""

from .blocks import NetworkSpec, StatePair, BlockParams, forward_network, init_params
from .grad import backprop_reversible, backprop_stored, finite_diff_grad
from .tensor import NonFiniteError, conv2d, conv2d_adjoint
from .wavelet import haar_forward, haar_inverse, wavepool

__all__ = [
    "NetworkSpec", "StatePair", "BlockParams", "forward_network", "init_params",
    "backprop_stored", "backprop_reversible", "finite_diff_grad",
    "NonFiniteError", "conv2d", "conv2d_adjoint",
    "haar_forward", "haar_inverse", "wavepool",
]
