"""Heterogeneous semi-siamese training for masked NIR-VIS face matching.

Modules
-------
model       small conv embedding net, probe/gallery pair, EMA update
losses      prototype softmax family (softmax, AM, Arc) and triplet, with gradients
training    prototype queues, pair sampling, HSST step and the plain baseline
masksynth   UV-space mask compositing and z-buffered splat rendering
data        deterministic synthetic NIR/VIS corpus
evaluation  rank-1, VR@FAR and k-fold aggregation
config      run configuration files
cli         the ``hsstlab`` command
"""

from .errors import (
    ConfigError,
    DegenerateInputError,
    FormatError,
    HSSTError,
    InputError,
    NumericError,
    ValidationError,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DegenerateInputError",
    "FormatError",
    "HSSTError",
    "InputError",
    "NumericError",
    "ValidationError",
    "__version__",
]
