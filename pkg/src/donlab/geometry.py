"""Pinhole camera math, cross-view reprojection and correspondence sampling.

Conventions: camera frame is x right, y down, z forward. Poses are
world-from-camera. Integer pixel coordinates (u, v) address pixel centers,
u along columns and v along rows. Depth rasters store camera-frame z in
meters, with 0 (or any non-finite value) marking invalid pixels.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .errors import (
    BehindCamera,
    DimensionMismatch,
    InvalidDepth,
    NonPositiveDepth,
    NoValidCorrespondences,
)

_MIN_Z = 1e-9
DEFAULT_OCCLUSION_TOL = 0.005


def round_half_up(x):
    """Round to nearest integer, halves rounded toward +inf."""
    return np.floor(np.asarray(x, dtype=np.float64) + 0.5).astype(np.int64)


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point outside image")

    @classmethod
    def from_fov(cls, width: int, height: int, fov_deg: float) -> "CameraIntrinsics":
        """Square-pixel camera with the given horizontal field of view."""
        f = (width / 2.0) / np.tan(np.radians(fov_deg) / 2.0)
        return cls(float(f), float(f), (width - 1) / 2.0, (height - 1) / 2.0, width, height)

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)


def _frozen(a, shape=None):
    a = np.array(a, dtype=np.float64)
    if shape is not None and a.shape != shape:
        raise ValueError(f"expected shape {shape}, got {a.shape}")
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid world-from-camera transform."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = _frozen(self.rotation, (3, 3))
        t = _frozen(self.translation, (3,))
        if np.abs(r.T @ r - np.eye(3)).max() > 1e-9 or abs(np.linalg.det(r) - 1.0) > 1e-9:
            raise ValueError("rotation must be orthonormal with determinant +1")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def look_at(cls, eye, target, up=(0.0, 0.0, 1.0), roll: float = 0.0) -> "Pose":
        """Camera at ``eye`` with optical axis toward ``target``; ``roll`` in radians."""
        eye = np.asarray(eye, dtype=np.float64)
        z = np.asarray(target, dtype=np.float64) - eye
        z /= np.linalg.norm(z)
        up = np.asarray(up, dtype=np.float64)
        x = np.cross(z, up)
        if np.linalg.norm(x) < 1e-9:
            x = np.cross(z, np.array([0.0, 1.0, 0.0]))
        x /= np.linalg.norm(x)
        y = np.cross(z, x)
        if roll:
            c, s = np.cos(roll), np.sin(roll)
            x, y = c * x + s * y, -s * x + c * y
        r = np.stack([x, y, z], axis=1)
        # re-orthonormalize so the 1e-9 check holds after the cross products
        u, _, vt = np.linalg.svd(r)
        return cls(u @ vt, eye)

    @property
    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def inverse(self) -> "Pose":
        rt = self.rotation.T
        return Pose(rt, -rt @ self.translation)

    def compose(self, other: "Pose") -> "Pose":
        """Return ``self ∘ other`` (apply ``other`` first)."""
        return Pose(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)

    def __matmul__(self, other: "Pose") -> "Pose":
        return self.compose(other)

    def transform(self, points) -> np.ndarray:
        """Map points (..., 3) from the source frame into the target frame."""
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation

    def inverse_transform(self, points) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) - self.translation) @ self.rotation

    @property
    def center(self) -> np.ndarray:
        return self.translation


def relative_motion(a: Pose, b: Pose) -> tuple[float, float]:
    """Rotation angle (radians) and translation distance (meters) between two poses."""
    r = a.rotation.T @ b.rotation
    cos = np.clip((np.trace(r) - 1.0) / 2.0, -1.0, 1.0)
    return float(np.arccos(cos)), float(np.linalg.norm(b.translation - a.translation))


@dataclass(frozen=True, eq=False)
class RgbdFrame:
    rgb: np.ndarray
    depth: np.ndarray
    pose: Pose
    intrinsics: CameraIntrinsics

    def __post_init__(self):
        rgb = np.asarray(self.rgb)
        depth = np.asarray(self.depth, dtype=np.float32)
        if rgb.dtype != np.uint8 or rgb.ndim != 3 or rgb.shape[2] != 3:
            raise ValueError("rgb must be an H x W x 3 uint8 raster")
        if depth.shape != rgb.shape[:2]:
            raise DimensionMismatch(f"rgb {rgb.shape[:2]} vs depth {depth.shape}")
        if depth.shape != self.intrinsics.shape:
            raise DimensionMismatch("raster size disagrees with intrinsics")
        finite = np.isfinite(depth)
        if np.any(depth[finite] < 0):
            raise ValueError("negative depth")
        object.__setattr__(self, "rgb", rgb)
        object.__setattr__(self, "depth", depth)

    @property
    def shape(self) -> tuple[int, int]:
        return self.depth.shape

    def valid_depth(self) -> np.ndarray:
        return np.isfinite(self.depth) & (self.depth > 0)

    def world_points(self) -> np.ndarray:
        """World coordinates of every pixel, (H, W, 3); NaN where depth is invalid."""
        h, w = self.shape
        v, u = np.mgrid[0:h, 0:w]
        d = np.where(self.valid_depth(), self.depth, np.nan).astype(np.float64)
        k = self.intrinsics
        cam = np.stack([(u - k.cx) / k.fx * d, (v - k.cy) / k.fy * d, d], axis=-1)
        return self.pose.transform(cam)


@dataclass(frozen=True, eq=False)
class ValidityMask:
    """Which pixels of A have an in-view, unoccluded counterpart in B.

    ``mapping[v, u]`` holds the real-valued target pixel (u, v) in B and is NaN
    wherever ``mask`` is false.
    """

    mask: np.ndarray
    mapping: np.ndarray

    @property
    def count(self) -> int:
        return int(self.mask.sum())


@dataclass(frozen=True)
class PixelPair:
    pA: tuple[int, int]
    pB: tuple[int, int]


@dataclass(frozen=True, eq=False)
class PixelPairs:
    """Array-backed sequence of :class:`PixelPair`; ``a`` and ``b`` are (n, 2) int (u, v)."""

    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.a, dtype=np.int64).reshape(-1, 2)
        b = np.asarray(self.b, dtype=np.int64).reshape(-1, 2)
        if a.shape != b.shape:
            raise ValueError("pair arrays differ in length")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @classmethod
    def from_pairs(cls, pairs) -> "PixelPairs":
        pairs = list(pairs)
        return cls([p.pA for p in pairs], [p.pB for p in pairs])

    def __len__(self) -> int:
        return len(self.a)

    def __getitem__(self, i):
        if isinstance(i, (int, np.integer)):
            return PixelPair(tuple(int(x) for x in self.a[i]), tuple(int(x) for x in self.b[i]))
        return PixelPairs(self.a[i], self.b[i])

    def __iter__(self) -> Iterator[PixelPair]:
        for i in range(len(self)):
            yield self[i]


def project(point_cam, K: CameraIntrinsics) -> tuple[float, float]:
    x, y, z = (float(c) for c in point_cam)
    if not z > _MIN_Z:
        raise NonPositiveDepth(f"z={z} is not in front of the camera")
    return K.fx * x / z + K.cx, K.fy * y / z + K.cy


def _in_bounds(p, width, height) -> bool:
    u, v = p
    return 0 <= u <= width - 1 and 0 <= v <= height - 1


def backproject(p, depth: float, K: CameraIntrinsics) -> np.ndarray:
    if not (np.isfinite(depth) and depth > 0):
        raise InvalidDepth(f"depth {depth!r} is invalid")
    u, v = float(p[0]), float(p[1])
    if not _in_bounds((u, v), K.width, K.height):
        raise ValueError(f"pixel {p} outside image")
    return np.array([(u - K.cx) / K.fx * depth, (v - K.cy) / K.fy * depth, float(depth)])


def reproject_pixel(p, frame_a: RgbdFrame, frame_b: RgbdFrame) -> tuple[tuple[float, float], float]:
    """Map integer pixel ``p`` of A into B; returns (real pixel, expected depth in B)."""
    u, v = int(p[0]), int(p[1])
    d = float(frame_a.depth[v, u])
    cam_a = backproject((u, v), d, frame_a.intrinsics)
    world = frame_a.pose.transform(cam_a)
    cam_b = frame_b.pose.inverse_transform(world)
    if not cam_b[2] > _MIN_Z:
        raise BehindCamera(f"point has z={cam_b[2]:.4g} in frame B")
    return project(cam_b, frame_b.intrinsics), float(cam_b[2])


def compute_validity_mask(frame_a: RgbdFrame, frame_b: RgbdFrame,
                          occlusion_tol: float = DEFAULT_OCCLUSION_TOL) -> ValidityMask:
    if frame_a.shape != frame_b.shape:
        raise DimensionMismatch(f"{frame_a.shape} vs {frame_b.shape}")
    h, w = frame_a.shape
    ka, kb = frame_a.intrinsics, frame_b.intrinsics
    valid = frame_a.valid_depth()
    d = np.where(valid, frame_a.depth, 1.0).astype(np.float64)
    v, u = np.mgrid[0:h, 0:w]
    cam_a = np.stack([(u - ka.cx) / ka.fx * d, (v - ka.cy) / ka.fy * d, d], axis=-1)
    cam_b = frame_b.pose.inverse_transform(frame_a.pose.transform(cam_a))
    z = cam_b[..., 2]
    front = z > _MIN_Z
    zs = np.where(front, z, 1.0)
    ub = kb.fx * cam_b[..., 0] / zs + kb.cx
    vb = kb.fy * cam_b[..., 1] / zs + kb.cy
    ui, vi = round_half_up(ub), round_half_up(vb)
    inside = front & (ui >= 0) & (ui < w) & (vi >= 0) & (vi < h)
    stored = frame_b.depth[np.clip(vi, 0, h - 1), np.clip(ui, 0, w - 1)].astype(np.float64)
    visible = np.isfinite(stored) & (stored > 0) & (np.abs(stored - z) <= occlusion_tol)
    mask = valid & inside & visible
    mapping = np.where(mask[..., None], np.stack([ub, vb], axis=-1), np.nan)
    return ValidityMask(mask, mapping)


def sample_correspondences(vm: ValidityMask, n: int, rng: np.random.Generator) -> PixelPairs:
    """Draw ``min(n, #valid)`` matches uniformly without replacement."""
    if n < 1:
        raise ValueError("n must be >= 1")
    idx = np.flatnonzero(vm.mask)
    if idx.size == 0:
        raise NoValidCorrespondences("validity mask is empty")
    chosen = idx[rng.choice(idx.size, size=min(n, idx.size), replace=False)]
    w = vm.mask.shape[1]
    a = np.stack([chosen % w, chosen // w], axis=1)
    b = round_half_up(vm.mapping.reshape(-1, 2)[chosen])
    return PixelPairs(a, b)
