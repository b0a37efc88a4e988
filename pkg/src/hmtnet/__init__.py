"""Hand pose estimation from single depth images with a topology-ordered regressor.

Modules: ``tensor``/``layers``/``optim``/``checkpoint`` (numpy autodiff),
``camera``, ``topology``, ``preprocessing``, ``heatmap``, ``network``,
``losses``, ``data_io``, ``training``, ``evaluation``, ``config`` and ``cli``.
"""

from .camera import CubeCrop, Intrinsics, project, unproject
from .errors import HMTNetError
from .losses import LossWeights
from .network import HMTNet, NetworkConfig, build, load_network
from .topology import Topology, hmt_order, topology_for
from .training import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "CubeCrop",
    "HMTNet",
    "HMTNetError",
    "Intrinsics",
    "LossWeights",
    "NetworkConfig",
    "Topology",
    "TrainConfig",
    "build",
    "hmt_order",
    "load_network",
    "project",
    "topology_for",
    "train",
    "unproject",
]
