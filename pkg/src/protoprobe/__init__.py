"""Generalized category discovery with probed potential prototypes.

Clusters unlabelled embeddings with a from-scratch map-equation community
search, expands the discovered cluster centers with a learnable pool of
potential prototypes, and trains a student/teacher pair by self-distilled
prototype classification plus instance contrastive learning.
"""

import importlib

__version__ = "0.1.0"

_SUBMODULES = (
    "datagen",
    "errors",
    "evaluation",
    "fastcluster",
    "numerics",
    "objectives",
    "prototypes",
    "trainer",
    "cli",
)

__all__ = list(_SUBMODULES) + ["__version__"]


def __getattr__(name):
    # submodules load on first touch so that e.g. dataset generation does
    # not pay for the compiled clustering kernel
    if name in _SUBMODULES:
        return importlib.import_module(f".{name}", __name__)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


def __dir__():
    return sorted(__all__)
