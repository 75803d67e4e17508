"""Descriptor matching, PCK curves, world-space keypoint tracking and grasp axes."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DegenerateAxis, DegenerateVector, EmptySet, NoValidCorrespondences
from .geometry import backproject, compute_validity_mask, round_half_up
from .scenegen import EVAL_PAIR_CONSTRAINT, UNKNOWN_ID, PairConstraint, Scene, sample_image_pair

MEASURES = ("cosine", "l2")


# --------------------------------------------------------------------------
# matching

def nearest_matches(desc_image, queries, measure: str = "cosine", chunk: int = 256) -> np.ndarray:
    """Best-matching (u, v) pixel for each row of ``queries``.

    Cosine picks the highest similarity, l2 the smallest distance; ties go to
    the smallest row-major index.
    """
    if measure not in MEASURES:
        raise ValueError(f"unknown measure {measure!r}")
    desc = np.asarray(desc_image, dtype=np.float64)
    if desc.size == 0:
        raise ValueError("empty descriptor image")
    h, w, d = desc.shape
    flat = desc.reshape(-1, d)
    q = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    best = np.empty(len(q), dtype=np.int64)
    if measure == "cosine":
        qn = np.linalg.norm(q, axis=1)
        if np.any(qn <= 1e-12):
            raise DegenerateVector("zero-norm query under cosine measure")
        norms = np.linalg.norm(flat, axis=1)
        unit = flat / np.where(norms > 0, norms, 1.0)[:, None]
        for s in range(0, len(q), chunk):
            sim = (q[s:s + chunk] / qn[s:s + chunk, None]) @ unit.T
            best[s:s + chunk] = np.argmax(sim, axis=1)
    else:
        step = max(1, chunk * 4096 // max(len(flat), 1))
        for s in range(0, len(q), step):
            diff = flat[None, :, :] - q[s:s + step, None, :]
            dist = np.einsum("qpd,qpd->qp", diff, diff)
            best[s:s + step] = np.argmin(dist, axis=1)
    return np.stack([best % w, best // w], axis=1)


def nearest_match(desc_image, query, measure: str = "cosine") -> tuple[int, int]:
    u, v = nearest_matches(desc_image, np.asarray(query)[None], measure)[0]
    return int(u), int(v)


# --------------------------------------------------------------------------
# PCK

def _distances(pred, gt=None) -> np.ndarray:
    if gt is None:
        dist = np.asarray(pred, dtype=np.float64).ravel()
    else:
        pred = np.asarray(pred, dtype=np.float64).reshape(-1, 2)
        gt = np.asarray(gt, dtype=np.float64).reshape(-1, 2)
        dist = np.linalg.norm(pred - gt, axis=1)
    if dist.size == 0:
        raise EmptySet("PCK of an empty set")
    return dist


def pck(pred, gt=None, k: float = 1.0) -> float:
    """Fraction of predictions within ``k`` pixels (inclusive) of ground truth.

    Pass either predicted and ground-truth (n, 2) pixel arrays or, with
    ``gt=None``, the error distances directly.
    """
    return float(np.mean(_distances(pred, gt) <= k))


@dataclass(frozen=True)
class PckCurve:
    values: np.ndarray  # PCK@k for k = 1..k_max
    k_max: int = 100

    @property
    def auc(self) -> float:
        return float(np.mean(self.values))

    def at(self, k: int) -> float:
        return float(self.values[int(k) - 1])


def pck_curve(pred, gt=None, k_max: int = 100) -> PckCurve:
    dist = _distances(pred, gt)
    ks = np.arange(1, k_max + 1)
    values = (dist[None, :] <= ks[:, None]).mean(axis=1)
    return PckCurve(values, k_max)


def pck_auc(pred, gt=None, k_max: int = 100) -> float:
    """Mean of PCK@k over integer k in 1..k_max (a perfect matcher scores 1)."""
    return pck_curve(pred, gt, k_max).auc


# --------------------------------------------------------------------------
# models used for evaluation

class GroundTruthModel:
    """Oracle: a pixel's descriptor is its ground-truth world coordinate."""

    measure = "l2"

    def __init__(self, invalid_value: float = 1e3):
        self.invalid_value = invalid_value

    def __call__(self, frame) -> np.ndarray:
        pts = frame.world_points()
        return np.where(np.isfinite(pts), pts, self.invalid_value)


class ConstantModel:
    measure = "l2"

    def __init__(self, dim: int = 3, value: float = 1.0):
        self.dim, self.value = dim, value

    def __call__(self, frame) -> np.ndarray:
        return np.full(frame.shape + (self.dim,), self.value)


class _DescriptorCache:
    def __init__(self, model):
        self.model = model
        self.cache: dict = {}

    def __call__(self, frame):
        key = id(frame)
        if key not in self.cache:
            self.cache[key] = (frame, np.asarray(self.model(frame)))
        return self.cache[key][1]


# --------------------------------------------------------------------------
# correspondence accuracy

@dataclass
class CorrespondenceReport:
    curve: PckCurve
    errors: np.ndarray
    n_pairs: int

    @property
    def auc(self) -> float:
        return self.curve.auc

    def pck(self, k: float) -> float:
        return pck(self.errors, k=k)


def correspondence_accuracy_eval(model, scenes: Sequence[Scene], constraint: PairConstraint = EVAL_PAIR_CONSTRAINT,
                                 n_pairs: int = 50, n_queries: int = 100, seed: int = 0,
                                 k_max: int = 100, measure: str | None = None,
                                 occlusion_tol: float = 0.005, max_retries: int = 20) -> CorrespondenceReport:
    """PCK of nearest-descriptor predictions for object queries over sampled pairs.

    Queries are drawn on one known object per pair, restricted to pixels with
    a visible counterpart in the second image.
    """
    measure = measure or getattr(model, "measure", "cosine")
    describe = _DescriptorCache(model)
    rng = np.random.default_rng(seed)
    errors = []
    done = 0
    for _ in range(n_pairs):
        for _attempt in range(max_retries):
            pair = sample_image_pair(scenes, constraint, rng)
            fa, fb = pair
            vm = compute_validity_mask(fa, fb, occlusion_tol)
            ids = pair.scene.id_masks[pair.index_a]
            candidates = [i for i in np.unique(ids[vm.mask]) if i not in (0, UNKNOWN_ID)]
            if candidates:
                break
        else:
            continue
        obj = candidates[int(rng.integers(len(candidates)))]
        pool = np.flatnonzero(vm.mask & (ids == obj))
        pick = pool[rng.choice(pool.size, size=min(n_queries, pool.size), replace=False)]
        w = fa.shape[1]
        qa = np.stack([pick % w, pick // w], axis=1)
        gt = round_half_up(vm.mapping.reshape(-1, 2)[pick])
        da, db = describe(fa), describe(fb)
        pred = nearest_matches(db, da[qa[:, 1], qa[:, 0]], measure)
        errors.append(np.linalg.norm(pred - gt, axis=1))
        done += 1
    if not errors:
        raise NoValidCorrespondences("no evaluable image pair found")
    errors = np.concatenate(errors)
    return CorrespondenceReport(pck_curve(errors, k_max=k_max), errors, done)


# --------------------------------------------------------------------------
# keypoint tracking

@dataclass(frozen=True)
class KeypointQuery:
    frame_index: int
    pixel: tuple
    object_id: int = 0


@dataclass
class TrackingReport:
    errors_mm: np.ndarray  # (n_queries, n_frames), NaN for misses, occluded frames and the query frame
    misses: int
    queries: list = field(default_factory=list)
    occluded: int = 0

    @property
    def valid_errors(self) -> np.ndarray:
        e = self.errors_mm[np.isfinite(self.errors_mm)]
        return np.sort(e)

    def quantiles(self, qs=(0.25, 0.5, 0.75, 0.9)) -> dict:
        e = self.valid_errors
        if e.size == 0:
            return {str(q): float("nan") for q in qs}
        return {str(q): float(np.quantile(e, q)) for q in qs}

    @property
    def median(self) -> float:
        e = self.valid_errors
        return float(np.median(e)) if e.size else float("nan")

    def histogram(self, bins=None):
        """Counts over log-spaced millimetre bins (zero errors land in the first bin)."""
        if bins is None:
            bins = np.concatenate([[0.0], np.logspace(-1, 3, 25)])
        e = np.clip(self.valid_errors, 0.0, bins[-1])
        counts, edges = np.histogram(e, bins=bins)
        return counts, edges


def sample_tracking_queries(scene: Scene, frame_index: int = 0, per_object: int = 3,
                            seed: int = 0) -> list[KeypointQuery]:
    """Deterministic per-object queries on pixels with valid depth."""
    rng = np.random.default_rng(seed)
    ids = scene.id_masks[frame_index]
    valid = scene.frames[frame_index].valid_depth()
    out = []
    for obj in scene.known_ids():
        pool = np.flatnonzero((ids == obj) & valid)
        if pool.size == 0:
            continue
        w = ids.shape[1]
        for p in pool[rng.choice(pool.size, size=min(per_object, pool.size), replace=False)]:
            out.append(KeypointQuery(frame_index, (int(p % w), int(p // w)), int(obj)))
    return out


def _world_point(frame, pixel):
    u, v = pixel
    d = float(frame.depth[v, u])
    if not (np.isfinite(d) and d > 0):
        return None
    return frame.pose.transform(backproject((u, v), d, frame.intrinsics))


def _visible_in(frame, point, tol):
    """Whether world ``point`` is the surface seen at its nearest pixel of ``frame``."""
    cam = frame.pose.inverse_transform(point)
    if cam[2] <= 0:
        return False
    k = frame.intrinsics
    u, v = round_half_up(np.array([k.fx * cam[0] / cam[2] + k.cx, k.fy * cam[1] / cam[2] + k.cy]))
    if not (0 <= u < k.width and 0 <= v < k.height):
        return False
    d = frame.depth[v, u]
    return bool(np.isfinite(d) and d > 0 and abs(d - cam[2]) <= tol)


def keypoint_tracking_eval(model, scene: Scene, queries: Sequence[KeypointQuery],
                           measure: str | None = None, skip_occluded: bool = True,
                           occlusion_tol: float = 0.005) -> TrackingReport:
    """World-space error of tracked query keypoints in every other frame.

    Predictions landing on invalid depth count as misses and are left out of
    the error statistics. With ``skip_occluded`` frames in which the query's
    surface point is hidden or out of view are counted in ``occluded`` and
    left out as well, since no descriptor can locate them.
    """
    if len(scene) < 2:
        raise ValueError("tracking needs at least two frames")
    measure = measure or getattr(model, "measure", "cosine")
    describe = _DescriptorCache(model)
    errors = np.full((len(queries), len(scene)), np.nan)
    misses = occluded = 0
    by_frame: dict = {}
    for qi, q in enumerate(queries):
        by_frame.setdefault(q.frame_index, []).append(qi)
    for k, q_idx in by_frame.items():
        ref = scene.frames[k]
        dk = describe(ref)
        pix = np.array([queries[i].pixel for i in q_idx])
        targets = [_world_point(ref, p) for p in pix]
        if any(t is None for t in targets):
            raise ValueError("query pixel has no valid depth")
        qdesc = dk[pix[:, 1], pix[:, 0]]
        for l, frame in enumerate(scene.frames):
            if l == k:
                continue
            pred = nearest_matches(describe(frame), qdesc, measure)
            for j, i in enumerate(q_idx):
                if skip_occluded and not _visible_in(frame, targets[j], occlusion_tol):
                    occluded += 1
                    continue
                p = _world_point(frame, pred[j])
                if p is None:
                    misses += 1
                    continue
                errors[i, l] = 1000.0 * np.linalg.norm(p - targets[j])
    return TrackingReport(errors, misses, list(queries), occluded)


# --------------------------------------------------------------------------
# grasp axis

@dataclass(frozen=True)
class GraspEstimate:
    position: np.ndarray
    axis: np.ndarray
    approach: np.ndarray


def grasp_axis_estimate(p1, p2, min_separation: float = 0.005) -> GraspEstimate:
    """Grasp at the midpoint of two keypoints, closing along their axis,
    approaching from above (world -z made orthogonal to the axis)."""
    p1 = np.asarray(p1, dtype=np.float64)
    p2 = np.asarray(p2, dtype=np.float64)
    span = p2 - p1
    length = np.linalg.norm(span)
    if not length > min_separation:
        raise DegenerateAxis(f"keypoints {length * 1000:.2f} mm apart")
    axis = span / length
    down = np.array([0.0, 0.0, -1.0])
    approach = down - (down @ axis) * axis
    norm = np.linalg.norm(approach)
    if norm < 1e-6:
        raise DegenerateAxis("axis is vertical; approach direction undefined")
    return GraspEstimate((p1 + p2) / 2.0, axis, approach / norm)


@dataclass
class GraspTransferReport:
    reference: GraspEstimate
    position_mm: np.ndarray  # per target frame, NaN where no estimate was possible
    angle_deg: np.ndarray
    failures: int
    occluded: int = 0

    def success_rate(self, max_mm: float = 10.0, max_deg: float = 15.0) -> float:
        ok = (self.position_mm <= max_mm) & (self.angle_deg <= max_deg)
        return float(np.mean(ok)) if ok.size else float("nan")


def grasp_transfer_eval(model, scene: Scene, frame_index: int, p1, p2, measure: str | None = None,
                        skip_occluded: bool = True, occlusion_tol: float = 0.005) -> GraspTransferReport:
    """Locate two annotated pixels in every other frame and compare the grasp
    built from them with the one from the annotated frame.

    Frames where either annotated point is hidden are skipped and counted in
    ``occluded`` unless ``skip_occluded`` is off.
    """
    measure = measure or getattr(model, "measure", "cosine")
    describe = _DescriptorCache(model)
    ref = scene.frames[frame_index]
    w1, w2 = _world_point(ref, p1), _world_point(ref, p2)
    if w1 is None or w2 is None:
        raise ValueError("annotated pixel has no valid depth")
    reference = grasp_axis_estimate(w1, w2)
    dref = describe(ref)
    qdesc = dref[[p1[1], p2[1]], [p1[0], p2[0]]]
    pos, ang, failures, occluded = [], [], 0, 0
    for l, frame in enumerate(scene.frames):
        if l == frame_index:
            continue
        if skip_occluded and not (_visible_in(frame, w1, occlusion_tol) and _visible_in(frame, w2, occlusion_tol)):
            occluded += 1
            continue
        pred = nearest_matches(describe(frame), qdesc, measure)
        a, b = _world_point(frame, pred[0]), _world_point(frame, pred[1])
        try:
            if a is None or b is None:
                raise DegenerateAxis("prediction on invalid depth")
            est = grasp_axis_estimate(a, b)
        except DegenerateAxis:
            failures += 1
            pos.append(np.nan)
            ang.append(np.nan)
            continue
        pos.append(1000.0 * np.linalg.norm(est.position - reference.position))
        ang.append(np.degrees(np.arccos(np.clip(est.axis @ reference.axis, -1.0, 1.0))))
    return GraspTransferReport(reference, np.array(pos), np.array(ang), failures, occluded)


# --------------------------------------------------------------------------
# visualization

def pca_visualize(desc_image) -> np.ndarray:
    """Project descriptors onto their top-3 principal axes, one gray ramp per channel.

    Each component is min-max scaled to [0, 255]; components without variance
    render as 128.
    """
    desc = np.asarray(desc_image, dtype=np.float64)
    h, w, d = desc.shape
    if d < 3:
        raise ValueError("need at least 3 descriptor dimensions")
    x = desc.reshape(-1, d)
    x = x - x.mean(axis=0)
    evals, evecs = np.linalg.eigh(x.T @ x / len(x))
    order = np.argsort(evals)[::-1][:3]
    evals, evecs = evals[order], evecs[:, order]
    top = max(evals[0], 0.0)
    out = np.full((len(x), 3), 128.0)
    for c in range(3):
        if top <= 1e-20 or evals[c] <= 1e-10 * top:
            continue
        vec = evecs[:, c]
        vec = vec * np.sign(vec[np.argmax(np.abs(vec))])
        proj = x @ vec
        lo, hi = proj.min(), proj.max()
        if hi - lo <= 0:
            continue
        out[:, c] = (proj - lo) / (hi - lo) * 255.0
    return np.rint(out).astype(np.uint8).reshape(h, w, 3)
