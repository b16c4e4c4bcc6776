"""Pinhole camera algebra and the image <-> floor-plane mapping.

Frames
------
World: right-handed, z up, the floor is the plane z = 0.
Mount: rigidly attached to the robot, origin ``pose.height`` above the floor
    over the robot centre; x forward along the heading, y left, z up.
Camera: optical centre at the origin; +z forward, +x right, +y down.

A world point maps to the camera frame as ``X_c = R_wc @ X_w + t_wc`` with
``R_wc = R_mount @ Rz(heading).T``; the mount extrinsics give the camera pose
relative to the robot and the planar pose places the robot in the world.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence, Union

import numpy as np

from .polygon import FloorPolygon, convex_hull, distance_to_point, CollinearInput

EPS_W = 1e-8
EPS_DET = 1e-12
EPS_AREA = 1e-8
ORTHO_TOL = 1e-9


class GeometryError(ValueError):
    pass


class InvalidIntrinsics(GeometryError):
    pass


class InvalidExtrinsics(GeometryError):
    pass


class DegenerateHomography(GeometryError):
    pass


class AboveHorizon(GeometryError):
    """The back-projected ray of a pixel never meets the floor in front of the camera."""


class BehindCamera(GeometryError):
    pass


class DegenerateFootprint(GeometryError):
    pass


class PixelPoint(NamedTuple):
    u: float
    v: float


class FloorPoint(NamedTuple):
    x: float
    y: float


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    skew: float = 0.0

    def __post_init__(self):
        vals = (self.fx, self.fy, self.cx, self.cy, self.skew)
        if not all(math.isfinite(v) for v in vals):
            raise InvalidIntrinsics(f"non-finite intrinsics {vals}")
        if self.fx <= 0 or self.fy <= 0:
            raise InvalidIntrinsics(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")

    @property
    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, self.skew, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )


def _check_rotation(rotation: np.ndarray) -> None:
    if rotation.shape != (3, 3) or not np.all(np.isfinite(rotation)):
        raise InvalidExtrinsics(f"rotation must be a finite 3x3 matrix, got shape {rotation.shape}")
    err = np.max(np.abs(rotation.T @ rotation - np.eye(3)))
    if err > ORTHO_TOL:
        raise InvalidExtrinsics(f"rotation is not orthonormal (max |R^T R - I| = {err:.3e})")
    det = np.linalg.det(rotation)
    if abs(det - 1.0) > ORTHO_TOL:
        raise InvalidExtrinsics(f"rotation is not proper (det = {det!r})")


@dataclass(frozen=True, eq=False)
class CameraExtrinsics:
    """Camera <- mount rigid transform: ``X_c = rotation @ X_m + translation``."""

    rotation: np.ndarray
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        rot = np.array(self.rotation, dtype=float).reshape(3, 3)
        trans = np.array(self.translation, dtype=float).reshape(3)
        _check_rotation(rot)
        if not np.all(np.isfinite(trans)):
            raise InvalidExtrinsics("translation must be finite")
        rot.setflags(write=False)
        trans.setflags(write=False)
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", trans)

    @classmethod
    def forward_looking(cls, pitch: float, offset: Sequence[float] = (0.0, 0.0, 0.0)) -> "CameraExtrinsics":
        """Camera looking along the robot heading, tilted down by ``pitch`` radians.

        ``offset`` is the optical centre expressed in the mount frame.
        """
        s, c = math.sin(pitch), math.cos(pitch)
        rot = np.array(
            [
                [0.0, -1.0, 0.0],  # image right = robot right
                [-s, 0.0, -c],  # image down
                [c, 0.0, -s],  # optical axis
            ]
        )
        return cls(rot, -rot @ np.asarray(offset, dtype=float))

    def __eq__(self, other):
        if not isinstance(other, CameraExtrinsics):
            return NotImplemented
        return np.array_equal(self.rotation, other.rotation) and np.array_equal(
            self.translation, other.translation
        )

    __hash__ = None


def normalize_angle(theta: float) -> float:
    """Wrap an angle into (-pi, pi]."""
    wrapped = math.remainder(theta, 2.0 * math.pi)
    if wrapped <= -math.pi:
        wrapped += 2.0 * math.pi
    return wrapped


@dataclass(frozen=True)
class RobotPose:
    x: float
    y: float
    heading: float
    height: float = 0.0  # mount origin above the floor, meters

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.x, self.y, self.heading, self.height)):
            raise GeometryError(f"non-finite pose {self}")
        if self.height < 0:
            raise GeometryError(f"mount height must be non-negative, got {self.height}")
        object.__setattr__(self, "heading", normalize_angle(self.heading))


def rot_z(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def world_to_camera(extr: CameraExtrinsics, pose: RobotPose) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(R_wc, t_wc)`` mapping world points into the camera frame."""
    r_wm = rot_z(pose.heading)  # mount -> world
    origin = np.array([pose.x, pose.y, pose.height])
    r_wc = extr.rotation @ r_wm.T
    t_wc = extr.translation - r_wc @ origin
    return r_wc, t_wc


def camera_center(extr: CameraExtrinsics, pose: RobotPose) -> np.ndarray:
    r_wc, t_wc = world_to_camera(extr, pose)
    return -r_wc.T @ t_wc


def build_projection_matrix(
    intr: CameraIntrinsics, extr: CameraExtrinsics, pose: RobotPose
) -> np.ndarray:
    """3x4 matrix ``P = K [R | t]`` taking homogeneous world points to pixels."""
    if not isinstance(extr, CameraExtrinsics):
        raise InvalidExtrinsics(f"expected CameraExtrinsics, got {type(extr).__name__}")
    r_wc, t_wc = world_to_camera(extr, pose)
    return intr.matrix @ np.hstack([r_wc, t_wc[:, None]])


# Embeds floor coordinates (x, y, 1) as world points (x, y, 0, 1).
FLOOR_EMBEDDING = np.array(
    [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 1.0]]
)


@dataclass(frozen=True, eq=False)
class FloorHomography:
    forward: np.ndarray  # floor -> image
    inverse: Optional[np.ndarray]  # image -> floor
    valid: bool


def floor_homography(P: np.ndarray, strict: bool = True) -> FloorHomography:
    """Restrict ``P`` to the floor plane and invert it.

    With ``strict=False`` a singular restriction returns ``valid=False``
    instead of raising.
    """
    P = np.asarray(P, dtype=float)
    if P.shape != (3, 4):
        raise ValueError(f"projection matrix must be 3x4, got {P.shape}")
    forward = P @ FLOOR_EMBEDDING
    det = np.linalg.det(forward)
    if not abs(det) > EPS_DET:
        if strict:
            raise DegenerateHomography(f"floor homography is singular (det = {det!r})")
        return FloorHomography(forward, None, False)
    return FloorHomography(forward, np.linalg.inv(forward), True)


def _homogeneous_pixel(p) -> np.ndarray:
    arr = np.asarray(p, dtype=float).reshape(-1)
    if arr.size == 2:
        return np.array([arr[0], arr[1], 1.0])
    if arr.size != 3:
        raise ValueError(f"pixel must have 2 or 3 coordinates, got {arr.size}")
    if arr[2] == 0.0 or not np.all(np.isfinite(arr)):
        raise ValueError(f"pixel {arr} is at infinity or non-finite")
    # normalize first so a rescaled homogeneous input gives the identical answer
    return arr / arr[2]


def image_to_floor(h: FloorHomography, p) -> FloorPoint:
    """Back-project a pixel (2-vector or homogeneous 3-vector) onto the floor."""
    if not h.valid:
        raise DegenerateHomography("homography is not invertible")
    xi = _homogeneous_pixel(p)
    xf = h.inverse @ xi
    # for a normalized pixel, xf[2] is the reciprocal of the camera-frame depth
    w = xf[2]
    if not w > EPS_W:
        raise AboveHorizon(f"pixel ({xi[0]:.3f}, {xi[1]:.3f}) does not meet the floor ahead")
    return FloorPoint(float(xf[0] / w), float(xf[1] / w))


def floor_to_image(h: FloorHomography, f) -> PixelPoint:
    x, y = (float(c) for c in f)
    xi = h.forward @ np.array([x, y, 1.0])
    if not xi[2] > 0.0:
        raise BehindCamera(f"floor point ({x}, {y}) has camera depth {xi[2]!r}")
    return PixelPoint(float(xi[0] / xi[2]), float(xi[1] / xi[2]))


def floor_to_image_many(h: FloorHomography, pts: np.ndarray) -> np.ndarray:
    pts = np.asarray(pts, dtype=float)
    hom = np.hstack([pts, np.ones((len(pts), 1))]) @ h.forward.T
    if np.any(hom[:, 2] <= 0):
        raise BehindCamera("some floor points are behind the camera")
    return hom[:, :2] / hom[:, 2:3]


@dataclass(frozen=True)
class Rejected:
    reason: str  # one of AboveHorizon, TooFar, Degenerate
    detail: str = ""


ABOVE_HORIZON = "AboveHorizon"
TOO_FAR = "TooFar"
DEGENERATE = "Degenerate"

BBox = tuple[float, float, float, float]


def bbox_corners(bbox: Sequence[float]) -> list[tuple[float, float]]:
    xmin, ymin, xmax, ymax = bbox
    return [(xmin, ymin), (xmax, ymin), (xmax, ymax), (xmin, ymax)]


def project_bbox_footprint(
    h: FloorHomography,
    bbox: Sequence[float],
    pose: RobotPose,
    max_depth: Optional[float] = None,
    image_size: Optional[tuple[int, int]] = None,
    source=None,
) -> Union[FloorPolygon, Rejected]:
    """Project a pixel rectangle ``(xmin, ymin, xmax, ymax)`` onto the floor.

    Returns the convex hull of the four back-projected corners, or a
    :class:`Rejected` when a corner lies above the horizon or the footprint is
    farther than ``max_depth`` from the robot centre.

    Raises:
        DegenerateFootprint: the hull has (near) zero area.
    """
    xmin, ymin, xmax, ymax = (float(c) for c in bbox)
    if not (xmax > xmin and ymax > ymin):
        raise ValueError(f"bbox {tuple(bbox)} has non-positive extent")
    if image_size is not None:
        width, height = image_size
        if xmin < 0 or ymin < 0 or xmax > width or ymax > height:
            raise ValueError(f"bbox {tuple(bbox)} outside image {width}x{height}")

    pts = []
    for corner in bbox_corners((xmin, ymin, xmax, ymax)):
        try:
            pts.append(image_to_floor(h, corner))
        except AboveHorizon as exc:
            return Rejected(ABOVE_HORIZON, str(exc))
    try:
        poly = convex_hull(pts, source=source)
    except CollinearInput as exc:
        raise DegenerateFootprint(str(exc)) from exc
    if poly.area < EPS_AREA:
        raise DegenerateFootprint(f"footprint area {poly.area:.3e} below {EPS_AREA}")

    if max_depth is not None:
        depth = distance_to_point(poly, (pose.x, pose.y))
        if depth > max_depth:
            return Rejected(TOO_FAR, f"depth {depth:.3f} m > {max_depth} m")
    return poly
