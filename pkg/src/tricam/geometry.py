"""Pinhole camera / screen geometry.

World frame: origin at the top-left corner of the screen, +x to the right along
the screen width, +y downward along the screen height, +z from the screen toward
the user.  The screen is the plane z = 0 and all lengths are centimeters.

Cameras follow the usual computer-vision convention: in the camera frame +x is
image-right, +y is image-down and +z is the optical axis.  ``orientation`` maps
camera-frame vectors into the world frame (columns are the camera axes).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

# pairwise direction cosine above which two rays count as parallel (~0.057 deg)
PARALLEL_COS = 1.0 - 5e-7


class GeometryError(ValueError):
    """Base class for geometry failures."""


class NoObservationError(GeometryError):
    pass


class UnderdeterminedError(GeometryError):
    pass


class DegenerateError(GeometryError):
    pass


class NoIntersectionError(GeometryError):
    pass


@dataclass(frozen=True)
class ScreenModel:
    width_px: int = 1920
    height_px: int = 1080
    width_cm: float = 59.789
    height_cm: float = 33.631

    def __post_init__(self):
        if self.width_px <= 0 or self.height_px <= 0:
            raise ValueError("screen resolution must be positive")
        if not (self.width_cm > 0 and self.height_cm > 0):
            raise ValueError("screen dimensions must be positive")
        if not (math.isfinite(self.width_cm) and math.isfinite(self.height_cm)):
            raise ValueError("screen dimensions must be finite")

    @property
    def px_per_cm(self) -> tuple[float, float]:
        return self.width_px / self.width_cm, self.height_px / self.height_cm

    @property
    def center_cm(self) -> np.ndarray:
        return np.array([self.width_cm / 2, self.height_cm / 2, 0.0])

    def to_dict(self) -> dict:
        return {"width_px": self.width_px, "height_px": self.height_px,
                "width_cm": self.width_cm, "height_cm": self.height_cm}


@dataclass(frozen=True)
class CameraModel:
    position: np.ndarray
    orientation: np.ndarray
    focal_px: float
    principal_point: tuple[float, float] = (960.0, 540.0)
    res_w: int = 1920
    res_h: int = 1080

    def __post_init__(self):
        pos = np.asarray(self.position, dtype=np.float64).reshape(3)
        rot = np.asarray(self.orientation, dtype=np.float64).reshape(3, 3)
        if not self.focal_px > 0:
            raise ValueError("focal_px must be positive")
        if self.res_w <= 0 or self.res_h <= 0:
            raise ValueError("camera resolution must be positive")
        if not np.allclose(rot.T @ rot, np.eye(3), atol=1e-9) or abs(np.linalg.det(rot) - 1.0) > 1e-9:
            raise ValueError("orientation must be a proper rotation matrix")
        pos.flags.writeable = False
        rot.flags.writeable = False
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "orientation", rot)
        object.__setattr__(self, "principal_point",
                           (float(self.principal_point[0]), float(self.principal_point[1])))

    def to_dict(self) -> dict:
        return {
            "position": [float(x) for x in self.position],
            "orientation": [[float(x) for x in row] for row in self.orientation],
            "focal_px": float(self.focal_px),
            "principal_point": list(self.principal_point),
            "res_w": self.res_w,
            "res_h": self.res_h,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CameraModel":
        return cls(
            position=np.array(d["position"], dtype=np.float64),
            orientation=np.array(d["orientation"], dtype=np.float64),
            focal_px=float(d["focal_px"]),
            principal_point=tuple(d.get("principal_point", (960.0, 540.0))),
            res_w=int(d.get("res_w", 1920)),
            res_h=int(d.get("res_h", 1080)),
        )


class ViewCoord(NamedTuple):
    """Eye location in one camera view; undetected is stored as u = v = -1."""

    detected: bool
    u: float
    v: float

    @classmethod
    def missing(cls) -> "ViewCoord":
        return cls(False, -1.0, -1.0)


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    dir: np.ndarray


@dataclass(frozen=True)
class EyePose:
    center: np.ndarray
    gaze_dir: np.ndarray


@dataclass(frozen=True)
class Rig:
    """A screen plus the cameras mounted on it."""

    screen: ScreenModel
    cameras: tuple[CameraModel, ...] = field(default_factory=tuple)

    def to_dict(self) -> dict:
        return {"screen": self.screen.to_dict(), "cameras": [c.to_dict() for c in self.cameras]}

    @classmethod
    def from_dict(cls, d: dict) -> "Rig":
        return cls(ScreenModel(**d["screen"]), tuple(CameraModel.from_dict(c) for c in d["cameras"]))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "Rig":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def rotation_x(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rotation_y(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rotation_z(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def facing_user(pitch_down: float = 0.0, yaw: float = 0.0) -> np.ndarray:
    """Orientation of a camera on the screen looking toward the user (+z world).

    ``pitch_down`` tilts the optical axis toward +y (down the screen), ``yaw``
    turns it toward +x.  Angles in radians.
    """
    return rotation_y(yaw) @ rotation_x(-pitch_down)


def default_rig(screen: ScreenModel | None = None, focal_px: float = 1200.0,
                pitch_down_deg: float = 10.0) -> Rig:
    """Three cameras evenly spaced along the top edge, facing forward."""
    screen = screen or ScreenModel()
    rot = facing_user(math.radians(pitch_down_deg))
    cams = tuple(
        CameraModel(np.array([screen.width_cm * k / 4, 0.0, 0.0]), rot, focal_px)
        for k in (1, 2, 3)
    )
    return Rig(screen, cams)


def project_eye(cam: CameraModel, p) -> ViewCoord:
    pc = cam.orientation.T @ (np.asarray(p, dtype=np.float64) - cam.position)
    if pc[2] <= 0:
        return ViewCoord.missing()
    u = cam.principal_point[0] + cam.focal_px * pc[0] / pc[2]
    v = cam.principal_point[1] + cam.focal_px * pc[1] / pc[2]
    if not (0.0 <= u < cam.res_w and 0.0 <= v < cam.res_h):
        return ViewCoord.missing()
    return ViewCoord(True, float(u), float(v))


def project_points(cam: CameraModel, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised :func:`project_eye` over an (N, 3) array.

    Returns (uv, detected) with undetected rows set to -1.
    """
    pc = (np.asarray(pts, dtype=np.float64) - cam.position) @ cam.orientation
    z = pc[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = cam.principal_point[0] + cam.focal_px * pc[:, 0] / z
        v = cam.principal_point[1] + cam.focal_px * pc[:, 1] / z
    ok = (z > 0) & (u >= 0) & (u < cam.res_w) & (v >= 0) & (v < cam.res_h)
    uv = np.where(ok[:, None], np.stack([u, v], axis=1), -1.0)
    return uv, ok


def back_ray(cam: CameraModel, vc: ViewCoord) -> Ray:
    if not vc.detected:
        raise NoObservationError("no-observation: cannot back-project an undetected eye")
    d_cam = np.array([(vc.u - cam.principal_point[0]) / cam.focal_px,
                      (vc.v - cam.principal_point[1]) / cam.focal_px,
                      1.0])
    return Ray(cam.position.copy(), _unit(cam.orientation @ d_cam))


def triangulate(rays: Sequence[Ray]) -> tuple[np.ndarray, float]:
    """Least-squares point closest to all rays.

    Solves sum_i (I - d_i d_i^T) x = sum_i (I - d_i d_i^T) o_i.  Returns the point
    and the RMS perpendicular distance from it to the rays.
    """
    if len(rays) < 2:
        raise UnderdeterminedError(
            f"underdetermined: {len(rays)} ray(s) cannot fix depth, need at least 2")
    dirs = np.array([_unit(np.asarray(r.dir, dtype=np.float64)) for r in rays])
    origins = np.array([np.asarray(r.origin, dtype=np.float64) for r in rays])
    cosines = np.abs(dirs @ dirs.T)
    iu = np.triu_indices(len(rays), k=1)
    if np.all(cosines[iu] > PARALLEL_COS):
        raise DegenerateError("degenerate: rays are (near-)parallel")
    projs = np.eye(3)[None] - dirs[:, :, None] * dirs[:, None, :]
    a = projs.sum(axis=0)
    b = np.einsum("nij,nj->i", projs, origins)
    point = np.linalg.solve(a, b)
    offsets = np.einsum("nij,nj->ni", projs, point[None] - origins)
    residual = float(np.sqrt(np.mean(np.sum(offsets ** 2, axis=1))))
    return point, residual


def predict_view(vc_a: ViewCoord, cam_a: CameraModel, vc_b: ViewCoord, cam_b: CameraModel,
                 cam_c: CameraModel) -> ViewCoord:
    """Where camera c should see the eye, given two other cameras' observations."""
    point, _ = triangulate([back_ray(cam_a, vc_a), back_ray(cam_b, vc_b)])
    return project_eye(cam_c, point)


def cm_to_px_point(screen: ScreenModel, x_cm: float, y_cm: float) -> tuple[float, float]:
    return x_cm / screen.width_cm * screen.width_px, y_cm / screen.height_cm * screen.height_px


def px_to_cm_point(screen: ScreenModel, px: float, py: float) -> np.ndarray:
    return np.array([px / screen.width_px * screen.width_cm,
                     py / screen.height_px * screen.height_cm, 0.0])


def gaze_intersect(eye: EyePose, screen: ScreenModel) -> tuple[float, float]:
    center = np.asarray(eye.center, dtype=np.float64)
    d = np.asarray(eye.gaze_dir, dtype=np.float64)
    if d[2] >= 0 or abs(d[2]) < 1e-12:
        raise NoIntersectionError("no-intersection: gaze does not point at the screen plane")
    t = -center[2] / d[2]
    hit = center + t * d
    return cm_to_px_point(screen, hit[0], hit[1])


def gaze_from_target(center, target_px, screen: ScreenModel) -> np.ndarray:
    center = np.asarray(center, dtype=np.float64)
    if center[2] == 0:
        raise DegenerateError("degenerate: eye lies on the screen plane")
    if center[2] < 0:
        raise DegenerateError("degenerate: eye is behind the screen")
    return _unit(px_to_cm_point(screen, *target_px) - center)


def px_to_cm(screen: ScreenModel, dist_px, axis: str = "x"):
    """Convert a pixel distance along ``axis`` ('x' or 'y') into centimeters."""
    if axis == "x":
        return dist_px / screen.width_px * screen.width_cm
    if axis == "y":
        return dist_px / screen.height_px * screen.height_cm
    raise ValueError(f"axis must be 'x' or 'y', got {axis!r}")


def cm_to_px(screen: ScreenModel, dist_cm, axis: str = "x"):
    if axis == "x":
        return dist_cm / screen.width_cm * screen.width_px
    if axis == "y":
        return dist_cm / screen.height_cm * screen.height_px
    raise ValueError(f"axis must be 'x' or 'y', got {axis!r}")


def px_distance_cm(screen: ScreenModel, a, b) -> np.ndarray:
    """Euclidean distance in cm between pixel positions (..., 2)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    dx = px_to_cm(screen, a[..., 0] - b[..., 0], "x")
    dy = px_to_cm(screen, a[..., 1] - b[..., 1], "y")
    return np.hypot(dx, dy)
