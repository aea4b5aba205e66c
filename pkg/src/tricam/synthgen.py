"""Synthetic desk-scale gaze data.

Each sample places a pair of eyes in front of the rig, aims both of them at one
uniformly drawn screen pixel, projects the eye centres into every camera and
renders a 40x20 grayscale crop per camera/eye channel.  The crop encodes the
gaze direction relative to the camera's line of sight through the iris offset.

Channel layout everywhere is ``(eye, camera)`` with eye 0 = right eye, so the
flattened channel index ``eye * 3 + cam`` lines up with fusion weights w1..w6.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import (
    Rig,
    ScreenModel,
    default_rig,
    gaze_from_target,
    project_points,
)

IMG_H, IMG_W = 20, 40
N_EYES, N_CAMS = 2, 3

# intensities of the procedural eye
_SKIN = 0.42
_SCLERA = 0.88
_IRIS_CORE = 0.08
_IRIS_SLOPE = 0.36
_IRIS_RADIUS = 5.5
_SCLERA_A = 17.0
_SCLERA_B = 8.0
_IRIS_SHIFT_X = 14.0
_IRIS_SHIFT_Y = 5.0
_QUANT = 65535


class ArtifactKind(enum.IntEnum):
    NONE = 0
    BLINK = 1
    CLOSED = 2
    REFLECTION = 3
    OCCLUSION = 4


@dataclass(frozen=True)
class QualityArtifact:
    kind: ArtifactKind = ArtifactKind.NONE
    intensity: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", ArtifactKind(self.kind))
        if not 0.0 <= self.intensity <= 1.0:
            raise ValueError("artifact intensity must lie in [0, 1]")


@dataclass(frozen=True)
class EyeRenderParams:
    yaw: float = 0.0
    pitch: float = 0.0
    openness: float = 1.0
    artifact: QualityArtifact = field(default_factory=QualityArtifact)
    noise_seed: int = 0

    def __post_init__(self):
        if abs(self.yaw) > math.pi / 2 or abs(self.pitch) > math.pi / 2:
            raise ValueError("yaw and pitch must lie within [-pi/2, pi/2]")
        if not 0.0 <= self.openness <= 1.0:
            raise ValueError("openness must lie in [0, 1]")
        if self.artifact.kind == ArtifactKind.CLOSED:
            object.__setattr__(self, "openness", 0.0)


_YS, _XS = np.mgrid[0:IMG_H, 0:IMG_W].astype(np.float64)
_CX, _CY = (IMG_W - 1) / 2.0, (IMG_H - 1) / 2.0


def iris_center(yaw: float, pitch: float) -> tuple[float, float]:
    """Iris centre (column, row) in the crop for a gaze relative to the camera."""
    return _CX + _IRIS_SHIFT_X * math.sin(yaw), _CY + _IRIS_SHIFT_Y * math.sin(pitch)


def render_eye(params: EyeRenderParams) -> np.ndarray:
    """Render one (20, 40) eye crop with intensities in (0, 1]."""
    rng = np.random.default_rng(params.noise_seed)
    art = params.artifact
    openness = params.openness
    if art.kind == ArtifactKind.BLINK:
        openness *= 1.0 - 0.85 * art.intensity

    img = _SKIN + 0.06 * _YS / IMG_H
    b = _SCLERA_B * openness
    if b > 0:
        rr = np.sqrt(((_XS - _CX) / _SCLERA_A) ** 2 + ((_YS - _CY) / b) ** 2)
        sclera_cov = np.clip((1.0 - rr) * b + 0.5, 0.0, 1.0)
        ix, iy = iris_center(params.yaw, params.pitch)
        r = np.hypot(_XS - ix, _YS - iy)
        iris_cov = np.clip(_IRIS_RADIUS - r + 0.5, 0.0, 1.0)
        iris_val = _IRIS_CORE + _IRIS_SLOPE * r / _IRIS_RADIUS
        interior = _SCLERA * (1.0 - iris_cov) + iris_val * iris_cov
        img = img * (1.0 - sclera_cov) + interior * sclera_cov
    if openness < 0.15:
        # lid line where the aperture has (nearly) collapsed
        lid = np.clip(1.2 - np.abs(_YS - _CY), 0.0, 1.0) * (np.abs(_XS - _CX) < 0.9 * _SCLERA_A)
        strength = 1.0 - openness / 0.15
        img = img * (1.0 - lid * strength) + 0.22 * lid * strength

    if art.kind == ArtifactKind.REFLECTION:
        bx = rng.uniform(_CX - 10, _CX + 10)
        by = rng.uniform(_CY - 4, _CY + 4)
        sigma = 1.5 + 2.0 * art.intensity
        amp = 0.6 + 0.4 * art.intensity
        img = img + amp * np.exp(-((_XS - bx) ** 2 + (_YS - by) ** 2) / (2 * sigma ** 2))
    elif art.kind == ArtifactKind.OCCLUSION:
        row = rng.uniform(3.0, IMG_H - 3.0)
        angle = rng.uniform(-0.3, 0.3)
        half = 1.0 + 2.0 * art.intensity
        dist = np.abs((_YS - row) * math.cos(angle) - (_XS - _CX) * math.sin(angle))
        cov = np.clip(half - dist + 0.5, 0.0, 1.0)
        img = img * (1.0 - cov) + 0.06 * cov

    img = img + rng.uniform(-0.02, 0.02, size=img.shape)
    img = np.clip(img, 1.0 / _QUANT, 1.0)
    return np.round(img * _QUANT) / _QUANT


def gaze_angles_relative(cam_pos: np.ndarray, cam_rot: np.ndarray, eye: np.ndarray,
                         gaze: np.ndarray) -> tuple[float, float]:
    """Yaw/pitch of ``gaze`` measured from the eye's line of sight to the camera.

    Zero means the eye looks straight into the camera; positive yaw moves the iris
    toward image-right and positive pitch toward image-down.
    """
    fwd = cam_pos - eye
    fwd = fwd / np.linalg.norm(fwd)
    right = cam_rot[:, 0] - (cam_rot[:, 0] @ fwd) * fwd
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    if down @ cam_rot[:, 1] < 0:
        down = -down
    yaw = math.atan2(gaze @ right, gaze @ fwd)
    pitch = math.asin(float(np.clip(gaze @ down, -1.0, 1.0)))
    return yaw, pitch


DEFAULT_ARTIFACT_PROBS = {"blink": 0.1, "reflection": 0.1, "occlusion": 0.05, "closed": 0.05}
ARTIFACT_RICH_PROBS = {"blink": 0.15, "reflection": 0.15, "occlusion": 0.15, "closed": 0.15}


@dataclass(frozen=True)
class SceneConfig:
    """Pose and appearance distribution.

    ``lateral_range`` is the horizontal offset of the head centre from the screen
    centre and ``vertical_range`` the absolute height (cm from the top edge).
    Artifact probabilities are per channel; the remainder is ``none``.
    """

    rig: Rig = field(default_factory=default_rig)
    distance_range: tuple[float, float] = (45.0, 60.0)
    lateral_range: tuple[float, float] = (-20.0, 20.0)
    vertical_range: tuple[float, float] = (10.0, 24.0)
    head_turn_deg: tuple[float, float] = (-15.0, 15.0)
    artifact_probs: dict = field(default_factory=lambda: dict(DEFAULT_ARTIFACT_PROBS))
    artifact_intensity: tuple[float, float] = (0.3, 1.0)
    openness_range: tuple[float, float] = (0.7, 1.0)
    ipd_cm: float = 6.3

    def __post_init__(self):
        lo, hi = self.distance_range
        if not (0 < lo <= hi and math.isfinite(hi)):
            raise ValueError("distance range must lie within (0, inf)")
        probs = self.artifact_probs
        unknown = set(probs) - {k.name.lower() for k in ArtifactKind if k != ArtifactKind.NONE}
        if unknown:
            raise ValueError(f"unknown artifact kinds: {sorted(unknown)}")
        if any(p < 0 for p in probs.values()) or sum(probs.values()) > 1.0 + 1e-12:
            raise ValueError("artifact probabilities must be non-negative and sum to <= 1")
        if len(self.rig.cameras) != N_CAMS:
            raise ValueError("rig must carry exactly three cameras")
        if self.ipd_cm <= 0:
            raise ValueError("ipd must be positive")

    @property
    def screen(self) -> ScreenModel:
        return self.rig.screen

    def to_dict(self) -> dict:
        return {
            "rig": self.rig.to_dict(),
            "distance_range": list(self.distance_range),
            "lateral_range": list(self.lateral_range),
            "vertical_range": list(self.vertical_range),
            "head_turn_deg": list(self.head_turn_deg),
            "artifact_probs": {k: float(v) for k, v in sorted(self.artifact_probs.items())},
            "artifact_intensity": list(self.artifact_intensity),
            "openness_range": list(self.openness_range),
            "ipd_cm": self.ipd_cm,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SceneConfig":
        kw = dict(d)
        if "rig" in kw:
            kw["rig"] = Rig.from_dict(kw["rig"])
        for key in ("distance_range", "lateral_range", "vertical_range", "head_turn_deg",
                    "artifact_intensity", "openness_range"):
            if key in kw:
                kw[key] = tuple(float(x) for x in kw[key])
        return cls(**kw)

    def with_(self, **changes) -> "SceneConfig":
        return replace(self, **changes)


@dataclass
class Sample:
    view_uv: np.ndarray          # (2, 3, 2) raw pixels, -1 where undetected
    detected: np.ndarray         # (2, 3) bool
    images: np.ndarray           # (2, 3, 20, 40)
    target_px: np.ndarray        # (2,)
    eye_centers: np.ndarray      # (2, 3) cm
    artifact_kind: np.ndarray    # (2, 3) ArtifactKind codes
    artifact_intensity: np.ndarray
    scene_seed: int = 0


def _draw_artifact(cfg: SceneConfig, rng: np.random.Generator) -> QualityArtifact:
    r = rng.random()
    acc = 0.0
    for kind in (ArtifactKind.BLINK, ArtifactKind.CLOSED, ArtifactKind.REFLECTION,
                 ArtifactKind.OCCLUSION):
        acc += cfg.artifact_probs.get(kind.name.lower(), 0.0)
        if r < acc:
            return QualityArtifact(kind, float(rng.uniform(*cfg.artifact_intensity)))
    return QualityArtifact()


def eye_pair_centers(cfg: SceneConfig, rng: np.random.Generator) -> np.ndarray:
    scr = cfg.screen
    head = np.array([
        scr.width_cm / 2 + rng.uniform(*cfg.lateral_range),
        rng.uniform(*cfg.vertical_range),
        rng.uniform(*cfg.distance_range),
    ])
    turn = math.radians(rng.uniform(*cfg.head_turn_deg))
    axis = np.array([math.cos(turn), 0.0, math.sin(turn)]) * cfg.ipd_cm / 2
    return np.stack([head + axis, head - axis])


def synth_sample(cfg: SceneConfig, rng: np.random.Generator, scene_seed: int = 0,
                 target_px=None) -> Sample:
    """Draw one aligned sample.  ``target_px`` overrides the random gaze target."""
    scr = cfg.screen
    centers = eye_pair_centers(cfg, rng)
    if target_px is None:
        target = np.array([rng.uniform(0, scr.width_px), rng.uniform(0, scr.height_px)])
    else:
        target = np.asarray(target_px, dtype=np.float64)

    view_uv = np.full((N_EYES, N_CAMS, 2), -1.0)
    detected = np.zeros((N_EYES, N_CAMS), dtype=bool)
    images = np.zeros((N_EYES, N_CAMS, IMG_H, IMG_W))
    kinds = np.zeros((N_EYES, N_CAMS), dtype=np.uint8)
    strengths = np.zeros((N_EYES, N_CAMS))
    for c, cam in enumerate(cfg.rig.cameras):
        uv, ok = project_points(cam, centers)
        view_uv[:, c] = uv
        detected[:, c] = ok
    for e in range(N_EYES):
        gaze = gaze_from_target(centers[e], target, scr)
        openness = rng.uniform(*cfg.openness_range)
        for c, cam in enumerate(cfg.rig.cameras):
            # draws happen for every channel so undetected channels do not shift the stream
            art = _draw_artifact(cfg, rng)
            noise_seed = int(rng.integers(0, 2 ** 63))
            kinds[e, c] = art.kind
            strengths[e, c] = art.intensity
            if not detected[e, c]:
                continue
            yaw, pitch = gaze_angles_relative(cam.position, cam.orientation, centers[e], gaze)
            images[e, c] = render_eye(EyeRenderParams(yaw, pitch, openness, art, noise_seed))
    return Sample(view_uv, detected, images, target, centers, kinds, strengths, scene_seed)


def sample_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(index)])
