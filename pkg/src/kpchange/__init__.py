"""Bi-temporal 3D point cloud change segmentation toolkit.

Detects and categorizes changes between two point cloud acquisitions of the
same area: hand-crafted geometric features, kernel-point convolution
networks with several bi-temporal fusion strategies, a synthetic urban
scene generator, and training / evaluation tooling.
"""

__version__ = "0.1.0"

from kpchange.labels import CLASS_NAMES, N_CLASSES, UNCHANGED

__all__ = ["CLASS_NAMES", "N_CLASSES", "UNCHANGED", "__version__"]
