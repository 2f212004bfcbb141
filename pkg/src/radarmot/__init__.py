"""Radar multi-object tracking toolkit.

Three online tracking pipelines over a shared data model:

- TBD-POT: detector boxes fed to a GNN-PMB point-object tracker.
- JDT-EOT: raw radar points clustered and fed to a GGIW-PMBM
  extended-object tracker.
- TBD-EOT: radar points pre-filtered by detector boxes, then GGIW-PMBM.

Plus a synthetic radar scenario simulator, CLEAR/HOTA evaluation, and a CLI.
"""

__version__ = "0.1.0"

from .core import (
    CLASSES,
    Box3D,
    Detection,
    Frame,
    GroundTruthObject,
    RadarPoint,
    TrackRecord,
    normalize_yaw,
)

__all__ = [
    "CLASSES",
    "Box3D",
    "Detection",
    "Frame",
    "GroundTruthObject",
    "RadarPoint",
    "TrackRecord",
    "normalize_yaw",
    "__version__",
]
