"""Teacher-guided training of slim convolutional students, written on numpy.

Subpackages and modules:

- :mod:`kpnet.autodiff` reverse-mode tensors, layer ops and SGD
- :mod:`kpnet.graph` architecture specs, presets, complexity and receptive fields
- :mod:`kpnet.projection` the 1×1 projection layer and masked L1 guidance loss
- :mod:`kpnet.routes` route enumeration and the pruning race
- :mod:`kpnet.trainer` two-stage training, baselines and checkpoints
- :mod:`kpnet.data` IDX loading, subsets, splits and flips
"""

__version__ = "0.1.0"
