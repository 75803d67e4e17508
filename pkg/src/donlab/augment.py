"""Random image augmentations with exact forward maps for pixel coordinates.

Every geometric step is a projective map of the pixel plane, so a sampled
sequence composes into one homography. Images are resampled once through
the inverse of that homography (bilinear, black outside the source image);
photometric steps follow in order.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np
from matplotlib.colors import hsv_to_rgb, rgb_to_hsv
from scipy.ndimage import correlate1d

from .geometry import PixelPairs, round_half_up

GEOMETRIC = ("resize_crop", "perspective", "affine", "hflip", "vflip", "rotation")
PHOTOMETRIC = ("blur", "color_jitter", "grayscale")
CANONICAL_ORDER = GEOMETRIC + PHOTOMETRIC
LUMA = np.array([0.299, 0.587, 0.114])
_LUMA_PERMIL = np.array([299.0, 587.0, 114.0])  # integer weights keep uint8 input exact


@dataclass(frozen=True)
class AugmentConfig:
    enabled: tuple = CANONICAL_ORDER
    apply_to: str = "A_only"  # A_only | both
    p_resize_crop: float = 0.5
    p_perspective: float = 0.5
    p_affine: float = 0.5
    p_hflip: float = 0.5
    p_vflip: float = 0.5
    p_rotation: float = 0.5
    p_blur: float = 0.5
    p_color_jitter: float = 0.5
    p_grayscale: float = 0.1
    crop_scale: tuple = (0.6, 1.0)
    crop_ratio: tuple = (3 / 4, 4 / 3)
    perspective_distortion: float = 0.5
    affine_degrees: float = 15.0
    affine_translate: float = 0.1
    affine_shear: float = 10.0
    rotation_degrees: float = 180.0
    blur_kernel: int = 5
    blur_sigma: tuple = (0.1, 2.0)
    brightness: float = 0.4
    contrast: float = 0.4
    saturation: float = 0.4
    hue: float = 0.1

    def __post_init__(self):
        enabled = tuple(self.enabled)
        unknown = set(enabled) - set(CANONICAL_ORDER)
        if unknown:
            raise ValueError(f"unknown augmentations {sorted(unknown)}")
        object.__setattr__(self, "enabled", enabled)
        if self.apply_to not in ("A_only", "both"):
            raise ValueError("apply_to must be 'A_only' or 'both'")
        for f in fields(self):
            if f.name.startswith("p_") and not 0.0 <= getattr(self, f.name) <= 1.0:
                raise ValueError(f"{f.name} must lie in [0, 1]")

    @classmethod
    def none(cls) -> "AugmentConfig":
        return cls(enabled=())

    @classmethod
    def only(cls, *names, p: float = 1.0) -> "AugmentConfig":
        """Enable just ``names``, each with probability ``p``."""
        return cls(enabled=tuple(n for n in CANONICAL_ORDER if n in names),
                   **{f"p_{n}": p for n in names})

    def probability(self, name: str) -> float:
        return getattr(self, f"p_{name}") if name in self.enabled else 0.0


@dataclass(frozen=True)
class Step:
    name: str
    params: dict = field(default_factory=dict)

    @property
    def geometric(self) -> bool:
        return self.name in GEOMETRIC


@dataclass(frozen=True, eq=False)
class AugmentationSpec:
    steps: tuple
    width: int
    height: int

    @classmethod
    def identity(cls, width: int, height: int) -> "AugmentationSpec":
        return cls((), width, height)

    @property
    def names(self) -> list[str]:
        return [s.name for s in self.steps]

    @property
    def is_identity(self) -> bool:
        return not self.steps

    @property
    def homography(self) -> np.ndarray:
        """Forward map from original to augmented pixel coordinates."""
        h = np.eye(3)
        for s in self.steps:
            if s.geometric:
                h = step_homography(s, self.width, self.height) @ h
        return h

    def map_points(self, points) -> np.ndarray:
        """Real-valued augmented coordinates of (n, 2) original (u, v) points."""
        p = np.asarray(points, dtype=np.float64).reshape(-1, 2)
        q = np.concatenate([p, np.ones((len(p), 1))], axis=1) @ self.homography.T
        with np.errstate(divide="ignore", invalid="ignore"):
            return q[:, :2] / q[:, 2:3]

    def to_dict(self) -> dict:
        return {"width": self.width, "height": self.height,
                "steps": [{"name": s.name, "params": _jsonable(s.params)} for s in self.steps]}

    @classmethod
    def from_dict(cls, d: dict) -> "AugmentationSpec":
        steps = tuple(Step(s["name"], {k: (np.asarray(v) if isinstance(v, list) else v)
                                       for k, v in s["params"].items()}) for s in d["steps"])
        return cls(steps, d["width"], d["height"])


def _jsonable(params):
    return {k: (np.asarray(v).tolist() if isinstance(v, (np.ndarray, list, tuple)) else float(v))
            for k, v in params.items()}


# --------------------------------------------------------------------------
# homographies

def _about_center(m: np.ndarray, width: int, height: int) -> np.ndarray:
    cx, cy = (width - 1) / 2.0, (height - 1) / 2.0
    to = np.array([[1, 0, cx], [0, 1, cy], [0, 0, 1.0]])
    back = np.array([[1, 0, -cx], [0, 1, -cy], [0, 0, 1.0]])
    return to @ m @ back


def _rotation(deg: float) -> np.ndarray:
    a = np.radians(deg)
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1.0]])


def homography_from_points(src, dst) -> np.ndarray:
    """Projective map taking four ``src`` points onto ``dst``."""
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    a = np.zeros((8, 8))
    b = np.zeros(8)
    for i, ((x, y), (u, v)) in enumerate(zip(src, dst)):
        a[2 * i] = [x, y, 1, 0, 0, 0, -u * x, -u * y]
        a[2 * i + 1] = [0, 0, 0, x, y, 1, -v * x, -v * y]
        b[2 * i], b[2 * i + 1] = u, v
    return np.append(np.linalg.solve(a, b), 1.0).reshape(3, 3)


def step_homography(step: Step, width: int, height: int) -> np.ndarray:
    p = step.params
    if step.name == "resize_crop":
        sx, sy = width / p["w"], height / p["h"]
        return np.array([[sx, 0, (0.5 - p["x0"]) * sx - 0.5], [0, sy, (0.5 - p["y0"]) * sy - 0.5], [0, 0, 1.0]])
    if step.name == "perspective":
        return homography_from_points(p["start"], p["end"])
    if step.name == "affine":
        shear = np.array([[1, np.tan(np.radians(p["shear"])), 0], [0, 1, 0], [0, 0, 1.0]])
        move = np.array([[1, 0, p["tx"]], [0, 1, p["ty"]], [0, 0, 1.0]])
        return move @ _about_center(_rotation(p["angle"]) @ shear, width, height)
    if step.name == "hflip":
        return np.array([[-1.0, 0, width - 1], [0, 1, 0], [0, 0, 1]])
    if step.name == "vflip":
        return np.array([[1.0, 0, 0], [0, -1, height - 1], [0, 0, 1]])
    if step.name == "rotation":
        return _about_center(_rotation(p["angle"]), width, height)
    raise ValueError(f"{step.name} is not geometric")


# --------------------------------------------------------------------------
# sampling

def _sample_params(name: str, cfg: AugmentConfig, width: int, height: int, rng: np.random.Generator) -> dict:
    if name == "resize_crop":
        area = width * height
        for _ in range(10):
            target = area * rng.uniform(*cfg.crop_scale)
            ratio = np.exp(rng.uniform(*np.log(cfg.crop_ratio)))
            w, h = np.sqrt(target * ratio), np.sqrt(target / ratio)
            if w <= width and h <= height:
                return {"x0": rng.uniform(0, width - w), "y0": rng.uniform(0, height - h), "w": w, "h": h}
        return {"x0": 0.0, "y0": 0.0, "w": float(width), "h": float(height)}
    if name == "perspective":
        dx, dy = cfg.perspective_distortion * (width - 1) / 2, cfg.perspective_distortion * (height - 1) / 2
        start = np.array([[0, 0], [width - 1, 0], [width - 1, height - 1], [0, height - 1]], dtype=np.float64)
        inward = np.array([[1, 1], [-1, 1], [-1, -1], [1, -1]], dtype=np.float64)
        end = start + inward * rng.uniform(0, 1, size=(4, 2)) * [dx, dy]
        return {"start": start, "end": end}
    if name == "affine":
        return {"angle": rng.uniform(-cfg.affine_degrees, cfg.affine_degrees),
                "tx": rng.uniform(-1, 1) * cfg.affine_translate * width,
                "ty": rng.uniform(-1, 1) * cfg.affine_translate * height,
                "shear": rng.uniform(-cfg.affine_shear, cfg.affine_shear)}
    if name == "rotation":
        return {"angle": rng.uniform(-cfg.rotation_degrees, cfg.rotation_degrees)}
    if name == "blur":
        return {"sigma": rng.uniform(*cfg.blur_sigma), "kernel": cfg.blur_kernel}
    if name == "color_jitter":
        return {"brightness": rng.uniform(1 - cfg.brightness, 1 + cfg.brightness),
                "contrast": rng.uniform(1 - cfg.contrast, 1 + cfg.contrast),
                "saturation": rng.uniform(1 - cfg.saturation, 1 + cfg.saturation),
                "hue": rng.uniform(-cfg.hue, cfg.hue)}
    return {}


def sample_augmentation_sequence(cfg: AugmentConfig, rng: np.random.Generator,
                                 width: int = 64, height: int = 64) -> AugmentationSpec:
    """Each enabled augmentation independently with its probability, in canonical order."""
    steps = []
    for name in CANONICAL_ORDER:
        p = cfg.probability(name)
        if p > 0 and rng.random() < p:
            steps.append(Step(name, _sample_params(name, cfg, width, height, rng)))
    return AugmentationSpec(tuple(steps), width, height)


# --------------------------------------------------------------------------
# application

def warp_image(image: np.ndarray, forward_h: np.ndarray) -> np.ndarray:
    """Resample ``image`` (float, H x W x C) so that output(H p) = input(p)."""
    h, w = image.shape[:2]
    v, u = np.mgrid[0:h, 0:w]
    pts = np.stack([u.ravel(), v.ravel(), np.ones(h * w)])
    src = np.linalg.inv(forward_h) @ pts
    with np.errstate(divide="ignore", invalid="ignore"):
        x, y = src[0] / src[2], src[1] / src[2]
    inside = (src[2] > 0) & (x >= -0.5) & (x <= w - 0.5) & (y >= -0.5) & (y <= h - 0.5)
    x = np.clip(np.where(inside, x, 0.0), 0, w - 1)
    y = np.clip(np.where(inside, y, 0.0), 0, h - 1)
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    fx, fy = (x - x0)[:, None], (y - y0)[:, None]
    x1, y1 = np.minimum(x0 + 1, w - 1), np.minimum(y0 + 1, h - 1)
    out = (image[y0, x0] * (1 - fx) * (1 - fy) + image[y0, x1] * fx * (1 - fy)
           + image[y1, x0] * (1 - fx) * fy + image[y1, x1] * fx * fy)
    out[~inside] = 0.0
    return out.reshape(image.shape)


def _gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def _color_jitter(x: np.ndarray, p: dict) -> np.ndarray:
    x = np.clip(x * p["brightness"], 0, 255)
    mean = (x @ LUMA).mean()
    x = np.clip((x - mean) * p["contrast"] + mean, 0, 255)
    gray = (x @ LUMA)[..., None]
    x = np.clip((x - gray) * p["saturation"] + gray, 0, 255)
    if p["hue"]:
        hsv = rgb_to_hsv(x / 255.0)
        hsv[..., 0] = (hsv[..., 0] + p["hue"]) % 1.0
        x = hsv_to_rgb(hsv) * 255.0
    return x


def apply_augmentation(image: np.ndarray, spec: AugmentationSpec) -> np.ndarray:
    """Apply ``spec`` to a uint8 H x W x 3 image; output has the same size."""
    image = np.asarray(image)
    if image.size == 0:
        raise ValueError("empty image")
    if spec.is_identity:
        return image.copy()
    x = image.astype(np.float64)
    if any(s.geometric for s in spec.steps):
        x = warp_image(x, spec.homography)
    for s in spec.steps:
        if s.name == "blur":
            k = _gaussian_kernel(int(s.params["kernel"]), s.params["sigma"])
            x = correlate1d(correlate1d(x, k, axis=0, mode="reflect"), k, axis=1, mode="reflect")
        elif s.name == "color_jitter":
            x = _color_jitter(x, s.params)
        elif s.name == "grayscale":
            x = np.repeat((x @ _LUMA_PERMIL / 1000.0)[..., None], 3, axis=-1)
    return np.clip(np.floor(x + 0.5), 0, 255).astype(np.uint8)


def remap_correspondences(pairs: PixelPairs, spec_a: AugmentationSpec,
                          spec_b: AugmentationSpec) -> tuple[PixelPairs, np.ndarray]:
    """Carry matches through both augmentations; returns (pairs, validity flags).

    Invalid pairs (either end pushed out of frame) keep their unclipped
    coordinates and are flagged False.
    """
    def move(points, spec):
        if spec.is_identity or not any(s.geometric for s in spec.steps):
            q = np.asarray(points, dtype=np.int64)
        else:
            q = spec.map_points(points)
            q = round_half_up(np.where(np.isfinite(q), q, -1e9))
        ok = (q[:, 0] >= 0) & (q[:, 0] < spec.width) & (q[:, 1] >= 0) & (q[:, 1] < spec.height)
        return q, ok

    a, ok_a = move(pairs.a, spec_a)
    b, ok_b = move(pairs.b, spec_b)
    return PixelPairs(a, b), ok_a & ok_b
