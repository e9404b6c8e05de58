"""Scribble-supervised segmentation toolkit.

Core pieces: a tape-based tensor engine (:mod:`sparsemamba.tensor`),
directional scan orders (:mod:`sparsemamba.scans`), the selective
state-space kernel (:mod:`sparsemamba.s6`), the segmentation network
(:mod:`sparsemamba.network`), boundary estimation from scribbles
(:mod:`sparsemamba.spobe`), losses and metrics (:mod:`sparsemamba.losses`),
and the collaborative trainer (:mod:`sparsemamba.trainer`).
"""

from .config import ExperimentConfig
from .network import NetworkConfig, SparseMambaNet
from .spobe import BoundaryMap, LabelMap, detect_edges, enrich_scribbles
from .spobe import spobe as estimate_boundaries
from .tensor import Tensor, no_grad

__version__ = "0.1.0"

__all__ = [
    "BoundaryMap",
    "ExperimentConfig",
    "LabelMap",
    "NetworkConfig",
    "SparseMambaNet",
    "Tensor",
    "detect_edges",
    "enrich_scribbles",
    "estimate_boundaries",
    "no_grad",
    "__version__",
]
