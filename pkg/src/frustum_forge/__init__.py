"""Open-vocabulary 3D proposal discovery from 2D detections and LiDAR.

Frustum search and ranking, remote propagation, self-training bookkeeping,
baselines and evaluation, with a synthetic scene generator for testing.
"""
__version__ = "0.1.0"

from .config import PipelineConfig, load_config
from .geometry import Box2D, Box3D, CameraModel, PointCloud, iou_bev, nms
from .ingest import Detection2D, Scene, Vocabulary

__all__ = ["Box2D", "Box3D", "CameraModel", "Detection2D", "PipelineConfig", "PointCloud", "Scene",
           "Vocabulary", "iou_bev", "load_config", "nms", "__version__"]
