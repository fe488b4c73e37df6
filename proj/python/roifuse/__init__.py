"""LiDAR-camera RoI refinement toolkit (C++ core)."""

from ._core import (
    Box3D,
    __version__,
    apply_residuals,
    assign_targets,
    average_precision,
    box_corners,
    encode_residuals,
    generate_scene,
    gradcheck,
    iou_3d,
    iou_bev,
    points_in_box,
    run_cli,
    wrap_angle,
)

__all__ = [
    "Box3D",
    "__version__",
    "apply_residuals",
    "assign_targets",
    "average_precision",
    "box_corners",
    "encode_residuals",
    "generate_scene",
    "gradcheck",
    "iou_3d",
    "iou_bev",
    "points_in_box",
    "run_cli",
    "wrap_angle",
]
