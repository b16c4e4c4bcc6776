"""Positive-pair mining for self-supervised learning from robot metadata.

Boxes seen by a mobile robot are projected onto the floor with the camera
pose; footprints that overlap within one trajectory are treated as views of
the same object and used as positive pairs for contrastive training.
"""

from .geometry import (
    CameraExtrinsics,
    CameraIntrinsics,
    RobotPose,
    build_projection_matrix,
    floor_homography,
    image_to_floor,
    project_bbox_footprint,
)
from .miner import MinerConfig, Observation, PairManifest, build_footprints, mine_pairs, sample_positive
from .polygon import FloorPolygon, convex_hull, intersect, iou, overlap_area
from .ssl import TrainConfig, train

__version__ = "0.1.0"
