"""Synthetic RGBD capture: ray-cast tabletop scenes along hemispherical trajectories.

Objects (axis-aligned boxes rotated about world z, and spheres) rest on a
finite ground plane at z = 0. Rays that miss the plane see a flat background
and get depth 0 (invalid).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import NoAdmissiblePair, PlacementFailure
from .geometry import CameraIntrinsics, Pose, RgbdFrame, relative_motion

UNKNOWN_ID = 255
TEXTURE_KINDS = ("checker", "stripes", "solid", "noise")
SHAPES = ("box", "sphere")

LIGHT_DIR = np.array([0.35, -0.25, 1.0]) / np.linalg.norm([0.35, -0.25, 1.0])
AMBIENT = 0.35
DIFFUSE = 0.65
BACKGROUND_RGB = (0.12, 0.12, 0.14)
_EPS = 1e-9


@dataclass(frozen=True)
class Texture:
    kind: str = "solid"
    colors: tuple = ((0.8, 0.2, 0.2), (0.2, 0.2, 0.8))
    scale: float = 0.02
    seed: int = 0

    def __post_init__(self):
        if self.kind not in TEXTURE_KINDS:
            raise ValueError(f"unknown texture kind {self.kind!r}")
        object.__setattr__(self, "colors", tuple(tuple(float(c) for c in col) for col in self.colors))


@dataclass(frozen=True)
class ObjectSpec:
    """A rigid primitive standing on the ground plane.

    ``size`` holds full extents (x, y, z) in the object frame; spheres use
    ``size[0]`` as their diameter. ``x``, ``y``, ``yaw`` place it on the plane.
    """

    shape: str
    size: tuple
    texture: Texture
    object_id: int
    x: float = 0.0
    y: float = 0.0
    yaw: float = 0.0

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ValueError(f"unknown shape {self.shape!r}")
        size = tuple(float(s) for s in self.size)
        if self.shape == "sphere":
            size = (size[0],) * 3
        if len(size) != 3 or min(size) <= 0:
            raise ValueError("size must be three positive extents")
        if not 1 <= self.object_id <= 255:
            raise ValueError("object_id must be in 1..255")
        object.__setattr__(self, "size", size)

    @property
    def center(self) -> np.ndarray:
        return np.array([self.x, self.y, self.size[2] / 2.0])

    @property
    def footprint_radius(self) -> float:
        if self.shape == "sphere":
            return self.size[0] / 2.0
        return float(np.hypot(self.size[0], self.size[1]) / 2.0)

    @property
    def rotation(self) -> np.ndarray:
        c, s = np.cos(self.yaw), np.sin(self.yaw)
        return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class GroundPlane:
    half_extent: float = 0.3
    texture: Texture = Texture("noise", ((0.50, 0.49, 0.46), (0.62, 0.60, 0.57)), 0.015, 7)


@dataclass(frozen=True)
class TrajectorySpec:
    radius: tuple = (0.26, 0.32)
    elevation_deg: tuple = (35.0, 60.0)
    look_at: tuple = (0.0, 0.0, 0.02)
    frames: int = 40
    min_rot_deg: float = 5.0
    min_trans: float = 0.02
    roll_jitter_deg: float = 10.0
    look_jitter: float = 0.015

    def __post_init__(self):
        if self.min_rot_deg < 0 or self.min_trans < 0:
            raise ValueError("subsampling thresholds must be >= 0")
        if self.frames < 1:
            raise ValueError("frames must be >= 1")


@dataclass(frozen=True)
class PairConstraint:
    min_translation: float = 0.0
    min_angle: float = 0.0

    def __post_init__(self):
        if self.min_translation < 0 or self.min_angle < 0:
            raise ValueError("constraint thresholds must be >= 0")


EVAL_PAIR_CONSTRAINT = PairConstraint(0.20, np.pi / 12)


@dataclass(frozen=True)
class SceneSpec:
    objects: tuple
    intrinsics: CameraIntrinsics
    trajectory: TrajectorySpec = TrajectorySpec()
    ground: GroundPlane = GroundPlane()
    workspace: float = 0.11
    gap: float = 0.005
    max_attempts: int = 500
    scene_id: str = "scene"


@dataclass(eq=False)
class Scene:
    scene_id: str
    objects: list
    frames: list
    id_masks: list
    ground: GroundPlane = field(default_factory=GroundPlane)

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def intrinsics(self) -> CameraIntrinsics:
        return self.frames[0].intrinsics

    def known_ids(self) -> list[int]:
        return sorted(o.object_id for o in self.objects if o.object_id != UNKNOWN_ID)


# --------------------------------------------------------------------------
# procedural textures

def value_noise(points: np.ndarray, seed: int, octaves: int = 2) -> np.ndarray:
    """Smooth lattice noise in [0, 1] at (N, 3) points given in lattice units."""
    rng = np.random.default_rng(seed)
    n = 32
    out = np.zeros(len(points))
    amp_total = 0.0
    for octave in range(octaves):
        lattice = rng.random((n, n, n))
        p = points * (2.0 ** octave)
        base = np.floor(p)
        f = p - base
        f = f * f * (3.0 - 2.0 * f)
        i = base.astype(np.int64) % n
        j = (i + 1) % n
        acc = np.zeros(len(points))
        for cx in (0, 1):
            wx = f[:, 0] if cx else 1.0 - f[:, 0]
            ix = j[:, 0] if cx else i[:, 0]
            for cy in (0, 1):
                wy = f[:, 1] if cy else 1.0 - f[:, 1]
                iy = j[:, 1] if cy else i[:, 1]
                for cz in (0, 1):
                    wz = f[:, 2] if cz else 1.0 - f[:, 2]
                    iz = j[:, 2] if cz else i[:, 2]
                    acc += wx * wy * wz * lattice[ix, iy, iz]
        amp = 0.5 ** octave
        out += amp * acc
        amp_total += amp
    return out / amp_total


def shade_texture(tex: Texture, local: np.ndarray) -> np.ndarray:
    c1, c2 = (np.asarray(c) for c in tex.colors)
    q = local / tex.scale
    if tex.kind == "solid":
        w = np.zeros(len(local))
    elif tex.kind == "checker":
        w = (np.floor(q).astype(np.int64).sum(axis=1) % 2).astype(np.float64)
    elif tex.kind == "stripes":
        w = (np.floor(q[:, 0] + 0.5 * q[:, 2]).astype(np.int64) % 2).astype(np.float64)
    else:
        # one field per channel so nearby surface points differ in more than one direction
        w = np.stack([value_noise(q, tex.seed + c) for c in range(3)], axis=1)
        w = np.clip((w - 0.5) * 2.0 + 0.5, 0.0, 1.0)
        return c1 * (1.0 - w) + c2 * w
    return c1 * (1.0 - w)[:, None] + c2 * w[:, None]


# --------------------------------------------------------------------------
# ray casting

@dataclass
class RayHits:
    t: np.ndarray  # ray parameter of nearest hit, inf on miss
    index: np.ndarray  # -1 miss, 0 ground, k + 1 object k
    normal: np.ndarray
    local: np.ndarray  # texture-space coordinates of the hit


def _sphere_hits(o, d, obj: ObjectSpec):
    c = obj.center
    r = obj.size[0] / 2.0
    oc = o - c
    a = np.einsum("ij,ij->i", d, d)
    b = 2.0 * (d @ oc)
    cc = oc @ oc - r * r
    disc = b * b - 4.0 * a * cc
    sq = np.sqrt(np.maximum(disc, 0.0))
    t0 = (-b - sq) / (2.0 * a)
    t1 = (-b + sq) / (2.0 * a)
    t = np.where(t0 > _EPS, t0, np.where(t1 > _EPS, t1, np.inf))
    t[disc < 0] = np.inf
    p = o + np.where(np.isfinite(t), t, 0.0)[:, None] * d
    normal = (p - c) / r
    local = (p - c) @ obj.rotation
    return t, normal, local


def _box_hits(o, d, obj: ObjectSpec):
    rot = obj.rotation
    c = obj.center
    h = np.asarray(obj.size) / 2.0
    ol = (o - c) @ rot
    dl = d @ rot
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dl
        t1 = (-h - ol) * inv
        t2 = (h - ol) * inv
    flat = dl == 0
    inside = np.abs(ol) <= h
    t1 = np.where(flat, np.where(inside, -np.inf, np.inf), t1)
    t2 = np.where(flat, np.where(inside, np.inf, np.inf), t2)
    tmin = np.minimum(t1, t2)
    tmax = np.maximum(t1, t2)
    axis = np.argmax(tmin, axis=1)
    rows = np.arange(len(d))
    tnear = tmin[rows, axis]
    tfar = tmax.min(axis=1)
    hit = (tnear <= tfar) & (tnear > _EPS)
    t = np.where(hit, tnear, np.inf)
    nl = np.zeros_like(dl)
    nl[rows, axis] = -np.sign(dl[rows, axis])
    normal = nl @ rot.T
    p = o + np.where(hit, t, 0.0)[:, None] * d
    local = (p - c) @ rot
    return t, normal, local


def _plane_hits(o, d, ground: GroundPlane):
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(d[:, 2] < 0, -o[2] / d[:, 2], np.inf)
    p = o + np.where(np.isfinite(t), t, 0.0)[:, None] * d
    on = (np.abs(p[:, 0]) <= ground.half_extent) & (np.abs(p[:, 1]) <= ground.half_extent)
    t = np.where(on & (t > _EPS), t, np.inf)
    normal = np.broadcast_to(np.array([0.0, 0.0, 1.0]), d.shape)
    local = p * np.array([1.0, 1.0, 0.0])
    return t, normal, local


def cast_rays(objects: Sequence[ObjectSpec], ground: GroundPlane, origin, dirs) -> RayHits:
    """Nearest intersection of rays ``origin + t * dirs`` with the scene."""
    o = np.asarray(origin, dtype=np.float64)
    d = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
    n = len(d)
    best_t = np.full(n, np.inf)
    index = np.full(n, -1, dtype=np.int64)
    normal = np.zeros((n, 3))
    local = np.zeros((n, 3))
    if o[2] > 0:
        t, nrm, loc = _plane_hits(o, d, ground)
        closer = t < best_t
        best_t[closer], index[closer] = t[closer], 0
        normal[closer], local[closer] = nrm[closer], loc[closer]
    for k, obj in enumerate(objects):
        fn = _sphere_hits if obj.shape == "sphere" else _box_hits
        t, nrm, loc = fn(o, d, obj)
        closer = t < best_t
        best_t[closer], index[closer] = t[closer], k + 1
        normal[closer], local[closer] = nrm[closer], loc[closer]
    return RayHits(best_t, index, normal, local)


def pixel_rays(pose: Pose, K: CameraIntrinsics) -> np.ndarray:
    """World-frame ray directions with unit camera-z component, (H*W, 3)."""
    v, u = np.mgrid[0:K.height, 0:K.width]
    cam = np.stack([(u - K.cx) / K.fx, (v - K.cy) / K.fy, np.ones(u.shape)], axis=-1).reshape(-1, 3)
    return cam @ pose.rotation.T


def render_frame(objects: Sequence[ObjectSpec], ground: GroundPlane, pose: Pose,
                 K: CameraIntrinsics) -> tuple[RgbdFrame, np.ndarray]:
    """Ray-cast one registered RGBD frame; returns (frame, object-id mask)."""
    dirs = pixel_rays(pose, K)
    hits = cast_rays(objects, ground, pose.translation, dirs)
    n = len(dirs)
    albedo = np.tile(np.asarray(BACKGROUND_RGB), (n, 1))
    ids = np.zeros(n, dtype=np.uint8)
    on_ground = hits.index == 0
    if on_ground.any():
        albedo[on_ground] = shade_texture(ground.texture, hits.local[on_ground])
    for k, obj in enumerate(objects):
        sel = hits.index == k + 1
        if sel.any():
            albedo[sel] = shade_texture(obj.texture, hits.local[sel])
            ids[sel] = obj.object_id
    lit = hits.index >= 0
    light = np.ones(n)
    light[lit] = AMBIENT + DIFFUSE * np.clip(hits.normal[lit] @ LIGHT_DIR, 0.0, None)
    rgb = np.clip(np.rint(albedo * light[:, None] * 255.0), 0, 255).astype(np.uint8)
    # camera-z of the hit equals t because the ray's camera-z component is 1
    depth = np.where(lit, hits.t, 0.0).astype(np.float32)
    frame = RgbdFrame(rgb.reshape(K.height, K.width, 3), depth.reshape(K.shape), pose, K)
    return frame, ids.reshape(K.shape)


# --------------------------------------------------------------------------
# trajectories and scenes

def generate_trajectory(spec: TrajectorySpec, rng: np.random.Generator) -> list[Pose]:
    """One loop around the look-at point with wobbling elevation, radius and roll."""
    s = np.arange(spec.frames) / spec.frames
    phase = rng.uniform(0.0, 2.0 * np.pi, size=3)
    azimuth = phase[0] + 2.0 * np.pi * s
    el_lo, el_hi = np.radians(spec.elevation_deg)
    elevation = (el_lo + el_hi) / 2 + (el_hi - el_lo) / 2 * np.sin(4.0 * np.pi * s + phase[1])
    r_lo, r_hi = spec.radius
    radius = (r_lo + r_hi) / 2 + (r_hi - r_lo) / 2 * np.sin(6.0 * np.pi * s + phase[2])
    roll = np.radians(rng.uniform(-spec.roll_jitter_deg, spec.roll_jitter_deg, size=spec.frames))
    target = np.asarray(spec.look_at) + rng.normal(0.0, spec.look_jitter, size=(spec.frames, 3))
    poses = []
    for i in range(spec.frames):
        eye = target[i] + radius[i] * np.array([
            np.cos(elevation[i]) * np.cos(azimuth[i]),
            np.cos(elevation[i]) * np.sin(azimuth[i]),
            np.sin(elevation[i]),
        ])
        poses.append(Pose.look_at(eye, target[i], roll=roll[i]))
    return poses


def _pose_of(item) -> Pose:
    return item if isinstance(item, Pose) else item.pose


def subsample_trajectory(frames: Sequence, min_rot_deg: float, min_trans: float) -> list:
    """Greedy filter: keep an item only if it moved enough from the last kept one.

    Works on frames or bare poses. Returns the kept items in order.
    """
    if len(frames) == 0:
        raise ValueError("no frames to subsample")
    return [frames[i] for i in subsample_indices([_pose_of(f) for f in frames], min_rot_deg, min_trans)]


def subsample_indices(poses: Sequence[Pose], min_rot_deg: float, min_trans: float) -> list[int]:
    kept = [0]
    min_rot = np.radians(min_rot_deg)
    for i in range(1, len(poses)):
        angle, dist = relative_motion(poses[kept[-1]], poses[i])
        if angle >= min_rot and dist >= min_trans:
            kept.append(i)
    return kept


def place_objects(objects: Sequence[ObjectSpec], workspace: float, gap: float,
                  rng: np.random.Generator, max_attempts: int = 500, restarts: int = 20) -> list[ObjectSpec]:
    """Rejection-sample non-overlapping footprints inside the square workspace.

    Objects go down one at a time. If one cannot be placed within
    ``max_attempts`` draws the whole layout is started again, up to
    ``restarts`` times, since early placements can box in later ones.
    """
    placed: list[ObjectSpec] = []
    for _ in range(max(restarts, 1)):
        placed = []
        for obj in objects:
            r = obj.footprint_radius
            for _ in range(max_attempts):
                x, y = rng.uniform(-workspace, workspace, size=2)
                yaw = rng.uniform(0.0, 2.0 * np.pi)
                if max(abs(x), abs(y)) + r > workspace:
                    continue
                if all(np.hypot(x - p.x, y - p.y) >= r + p.footprint_radius + gap for p in placed):
                    placed.append(replace(obj, x=float(x), y=float(y), yaw=float(yaw)))
                    break
            else:
                break
        if len(placed) == len(objects):
            return placed
    raise PlacementFailure(
        f"could not place all {len(objects)} objects after {max(restarts, 1)} layouts of "
        f"{max_attempts} attempts per object (best layout placed {len(placed)})")


def generate_scene(spec: SceneSpec, rng: np.random.Generator) -> Scene:
    if len(spec.objects) < 1:
        raise ValueError("a scene needs at least one object")
    ids = [o.object_id for o in spec.objects if o.object_id != UNKNOWN_ID]
    if len(ids) != len(set(ids)):
        raise ValueError("object ids must be unique within a scene")
    objects = place_objects(spec.objects, spec.workspace, spec.gap, rng, spec.max_attempts)
    poses = generate_trajectory(spec.trajectory, rng)
    keep = subsample_indices(poses, spec.trajectory.min_rot_deg, spec.trajectory.min_trans)
    frames, masks = [], []
    for i in keep:
        frame, ids_mask = render_frame(objects, spec.ground, poses[i], spec.intrinsics)
        frames.append(frame)
        masks.append(ids_mask)
    return Scene(spec.scene_id, objects, frames, masks, spec.ground)


# --------------------------------------------------------------------------
# object catalogs and datasets

def make_catalog(n: int, seed: int = 0, first_id: int = 1) -> list[ObjectSpec]:
    """A fixed set of distinguishable objects (placement left at the origin)."""
    rng = np.random.default_rng(seed)
    kinds = ("noise", "checker", "noise", "stripes")
    hue0 = rng.uniform(0, 1)
    catalog = []
    for k in range(n):
        hue = (hue0 + k / max(n, 1) + rng.uniform(-0.05, 0.05)) % 1.0
        c1 = _hsv(hue, rng.uniform(0.6, 0.9), rng.uniform(0.75, 0.95))
        c2 = _hsv((hue + rng.uniform(0.15, 0.35)) % 1.0, rng.uniform(0.5, 0.9), rng.uniform(0.35, 0.7))
        tex = Texture(kinds[k % len(kinds)], (c1, c2), float(rng.uniform(0.012, 0.02)), int(rng.integers(1 << 30)))
        if rng.random() < 0.25:
            shape = "sphere"
            size = (float(rng.uniform(0.05, 0.07)),) * 3
        else:
            shape = "box"
            size = tuple(float(s) for s in rng.uniform([0.04, 0.04, 0.03], [0.07, 0.07, 0.07]))
        catalog.append(ObjectSpec(shape, size, tex, first_id + k))
    return catalog


def make_distractors(n: int, rng: np.random.Generator) -> list[ObjectSpec]:
    out = []
    for _ in range(n):
        gray = float(rng.uniform(0.3, 0.8))
        tex = Texture("solid", ((gray, gray, gray * 0.9), (gray, gray, gray)))
        size = tuple(float(s) for s in rng.uniform([0.03, 0.03, 0.02], [0.05, 0.05, 0.05]))
        out.append(ObjectSpec("box", size, tex, UNKNOWN_ID))
    return out


def _hsv(h, s, v):
    i = int(h * 6.0) % 6
    f = h * 6.0 - int(h * 6.0)
    p, q, t = v * (1 - s), v * (1 - s * f), v * (1 - s * (1 - f))
    return [(v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q)][i]


@dataclass(frozen=True)
class DatasetSpec:
    """Recipe for a set of scenes drawn from one object catalog."""

    mode: str = "multi"  # multi | single
    n_scenes: int = 6
    catalog_size: int = 4
    catalog_seed: int = 0
    objects_per_scene: tuple = (3, 4)
    n_distractors: int = 0
    width: int = 64
    height: int = 64
    fov_deg: float = 45.0
    trajectory: TrajectorySpec = TrajectorySpec()
    workspace: float = 0.11
    seed: int = 0
    name: str = "scene"

    def __post_init__(self):
        if self.mode not in ("multi", "single"):
            raise ValueError("mode must be 'multi' or 'single'")
        if self.n_scenes < 1 or self.catalog_size < 1:
            raise ValueError("counts must be >= 1")

    @property
    def intrinsics(self) -> CameraIntrinsics:
        return CameraIntrinsics.from_fov(self.width, self.height, self.fov_deg)


def generate_dataset(spec: DatasetSpec) -> list[Scene]:
    """Scenes for ``spec``; each scene draws from its own seeded stream."""
    catalog = make_catalog(spec.catalog_size, spec.catalog_seed)
    scenes = []
    for s in range(spec.n_scenes):
        rng = np.random.default_rng([spec.seed, s])
        if spec.mode == "single":
            chosen = [catalog[s % len(catalog)]]
        else:
            lo, hi = spec.objects_per_scene
            k = int(rng.integers(min(lo, len(catalog)), min(hi, len(catalog)) + 1))
            chosen = [catalog[i] for i in sorted(rng.choice(len(catalog), size=k, replace=False))]
        objects = tuple(chosen + make_distractors(spec.n_distractors, rng))
        scene_spec = SceneSpec(objects, spec.intrinsics, spec.trajectory, workspace=spec.workspace,
                               scene_id=f"{spec.name}_{s:03d}")
        scenes.append(generate_scene(scene_spec, rng))
    return scenes


# --------------------------------------------------------------------------
# image-pair sampling

def admissible_pairs(scene: Scene, constraint: PairConstraint) -> np.ndarray:
    """Ordered frame-index pairs (i != j) whose relative motion meets ``constraint``."""
    rot = np.stack([f.pose.rotation for f in scene.frames])
    pos = np.stack([f.pose.translation for f in scene.frames])
    trace = np.einsum("aij,bij->ab", rot, rot)
    angle = np.arccos(np.clip((trace - 1.0) / 2.0, -1.0, 1.0))
    dist = np.linalg.norm(pos[:, None] - pos[None], axis=-1)
    ok = (angle >= constraint.min_angle) & (dist >= constraint.min_translation)
    np.fill_diagonal(ok, False)
    return np.argwhere(ok)


@dataclass(frozen=True, eq=False)
class ImagePair:
    scene_index: int
    index_a: int
    index_b: int
    scene: Scene

    @property
    def frame_a(self) -> RgbdFrame:
        return self.scene.frames[self.index_a]

    @property
    def frame_b(self) -> RgbdFrame:
        return self.scene.frames[self.index_b]

    def __iter__(self):
        return iter((self.frame_a, self.frame_b))


def sample_image_pair(dataset: Sequence[Scene], constraint: PairConstraint,
                      rng: np.random.Generator, scene_indices: Sequence[int] | None = None) -> ImagePair:
    """Uniform draw over all admissible ordered pairs of the (selected) scenes."""
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    indices = range(len(dataset)) if scene_indices is None else scene_indices
    per_scene = [(s, admissible_pairs(dataset[s], constraint)) for s in indices]
    counts = np.array([len(p) for _, p in per_scene])
    total = int(counts.sum())
    if total == 0:
        raise NoAdmissiblePair("no frame pair satisfies the constraint")
    k = int(rng.integers(total))
    which = int(np.searchsorted(np.cumsum(counts), k, side="right"))
    s, pairs = per_scene[which]
    i, j = pairs[k - int(counts[:which].sum())]
    return ImagePair(s, int(i), int(j), dataset[s])
