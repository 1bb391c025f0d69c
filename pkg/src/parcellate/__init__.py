"""Principal parcellation analysis: fiber-bundle connectomes from tractography.

The pipeline clusters fiber endpoint pairs into population bundles
(:mod:`~parcellate.bundler`), turns each subject into a vector of bundle
proportions (:mod:`~parcellate.connectome`), and relates those to traits with
sparse linear models (:mod:`~parcellate.regress`).
"""
from ._backend import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
