"""Correspondence losses: NT-Xent over coalesced matches and the pixelwise baselines."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateVector, OutOfBounds
from .geometry import PixelPairs
from .netcore import autodiff as ad
from .netcore.autodiff import Tensor

LOSS_KINDS = ("ntxent", "pixelwise", "pixelwise_cross_object")


@dataclass(frozen=True)
class LossConfig:
    kind: str = "ntxent"
    tau: float = 0.1
    margin: float = 0.5
    n_correspondences: int = 2048
    n_noncorrespondences_per_match: int = 150
    nonmatch_exclusion_px: float = 3.0
    reduction: str = "mean"  # mean | sum over the 2N directed NT-Xent terms

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss kind {self.kind!r}")
        if not self.tau > 0:
            raise ValueError("tau must be > 0")
        if self.margin < 0:
            raise ValueError("margin must be >= 0")
        if self.n_correspondences < 1 or self.n_noncorrespondences_per_match < 0:
            raise ValueError("correspondence counts out of range")
        if self.reduction not in ("mean", "sum"):
            raise ValueError("reduction must be 'mean' or 'sum'")

    @property
    def measure(self) -> str:
        """Matching measure used at evaluation time for models trained with this loss."""
        return "cosine" if self.kind == "ntxent" else "l2"


@dataclass(frozen=True, eq=False)
class DescriptorBatch:
    """Row i of ``dA`` and row i of ``dB`` are descriptors of one match."""

    dA: object
    dB: object

    def __post_init__(self):
        if self.dA.shape[0] != self.dB.shape[0]:
            raise ValueError(f"row counts differ: {self.dA.shape[0]} vs {self.dB.shape[0]}")

    def __len__(self) -> int:
        return self.dA.shape[0]


def cosine_similarity(d_i, d_j, min_norm: float = 1e-12) -> float:
    d_i = np.asarray(d_i, dtype=np.float64)
    d_j = np.asarray(d_j, dtype=np.float64)
    ni, nj = np.linalg.norm(d_i), np.linalg.norm(d_j)
    if ni <= min_norm or nj <= min_norm:
        raise DegenerateVector("cosine similarity of a zero vector")
    return float(np.clip(d_i @ d_j / (ni * nj), -1.0, 1.0))


def _check_bounds(pixels, h, w):
    if len(pixels) and (pixels.min() < 0 or pixels[:, 0].max() >= w or pixels[:, 1].max() >= h):
        raise OutOfBounds("pixel outside the descriptor image")


def gather_pixels(desc, pixels, image_index=None):
    """Descriptors at (u, v) ``pixels`` of an (H, W, D) or (N, H, W, D) image stack.

    Works on arrays and on autodiff tensors alike.
    """
    pixels = np.asarray(pixels, dtype=np.int64).reshape(-1, 2)
    shape = desc.shape
    h, w, d = shape[-3:]
    _check_bounds(pixels, h, w)
    flat = pixels[:, 1] * w + pixels[:, 0]
    if len(shape) == 4:
        flat = flat + np.asarray(image_index, dtype=np.int64) * (h * w)
    if isinstance(desc, Tensor):
        return ad.gather_rows(desc.reshape(-1, d), flat)
    return np.asarray(desc).reshape(-1, d)[flat]


def extract_descriptors(desc_a, desc_b, pairs: PixelPairs) -> DescriptorBatch:
    return DescriptorBatch(gather_pixels(desc_a, pairs.a), gather_pixels(desc_b, pairs.b))


def coalesce(batches) -> DescriptorBatch:
    """Stack the matches of several image pairs into one mini-batch dimension."""
    batches = list(batches)
    if any(isinstance(b.dA, Tensor) or isinstance(b.dB, Tensor) for b in batches):
        return DescriptorBatch(ad.concat([b.dA for b in batches]), ad.concat([b.dB for b in batches]))
    return DescriptorBatch(np.concatenate([b.dA for b in batches]), np.concatenate([b.dB for b in batches]))


def ntxent_loss(batch: DescriptorBatch, tau: float = 0.1, reduction: str = "mean") -> Tensor:
    """Normalized temperature-scaled cross-entropy over 2N descriptors.

    For every descriptor the softmax runs over the other 2N - 1 descriptors of
    the batch and the target is its match. The 2N directed terms are averaged
    (``reduction="mean"``) or summed.
    """
    if not tau > 0:
        raise ValueError("tau must be > 0")
    if reduction not in ("mean", "sum"):
        raise ValueError("reduction must be 'mean' or 'sum'")
    n = len(batch)
    if n < 1:
        raise ValueError("need at least one match")
    z = ad.l2_normalize(ad.concat([batch.dA, batch.dB]))
    return _ntxent_from_unit(z, tau, reduction)


def _ntxent_from_unit(z: Tensor, tau: float, reduction: str) -> Tensor:
    # fused similarity -> masked log-softmax -> positive pick, one graph node;
    # works in place on the 2N x 2N buffer since fresh large arrays are costly
    m = z.shape[0]
    n = m // 2
    zd = z.data
    zt = np.ascontiguousarray(zd.T)  # much faster BLAS path than a transposed view
    buf = zd @ zt
    buf *= 1.0 / tau
    np.fill_diagonal(buf, -np.inf)
    rows = np.arange(m)
    pos = (rows + n) % m
    positive = buf[rows, pos].astype(np.float64)
    top = buf.max(axis=1, keepdims=True)
    buf -= top
    np.exp(buf, out=buf)
    s = buf.sum(axis=1, keepdims=True, dtype=np.float64)
    terms = positive - top[:, 0] - np.log(s[:, 0])
    scale = 1.0 / m if reduction == "mean" else 1.0
    value = -terms.sum() * scale

    def back(g):
        np.divide(buf, s.astype(buf.dtype), out=buf)  # softmax, zero on the diagonal
        buf[rows, pos] -= 1.0
        np.multiply(buf, g * scale / tau, out=buf)
        return (buf @ zd + (zt @ buf).T,)

    return ad._node(np.asarray(value, dtype=zd.dtype), (z,), back)


def _hinge_sq(dA, dB, margin):
    dist = ad.row_norm(ad.sub(dA, dB))
    return ad.mean(ad.square(ad.relu(ad.sub(margin, dist))))


def pixelwise_contrastive_loss(matches: DescriptorBatch, nonmatches: DescriptorBatch | None,
                               margin: float = 0.5) -> Tensor:
    """Mean squared match distance plus mean squared hinge on non-match distance."""
    if len(matches) < 1:
        raise ValueError("need at least one match")
    match_term = ad.mean(ad.tsum(ad.square(ad.sub(matches.dA, matches.dB)), axis=1))
    if nonmatches is None or len(nonmatches) == 0:
        return match_term
    return ad.add(match_term, _hinge_sq(nonmatches.dA, nonmatches.dB, margin))


def cross_object_nonmatch_loss(desc_a, desc_c, margin: float = 0.5) -> Tensor:
    """Hinge term pushing row i of ``desc_a`` away from row i of ``desc_c``."""
    return _hinge_sq(desc_a, desc_c, margin)


def sample_nonmatches(pixels_b, n_per_match: int, shape, rng: np.random.Generator,
                      exclusion_px: float = 3.0) -> tuple[np.ndarray, np.ndarray]:
    """For each true match pixel in B, draw ``n_per_match`` pixels of B outside
    an exclusion disc around it.

    Returns (match index per non-match, non-match pixels in B).
    """
    pixels_b = np.asarray(pixels_b, dtype=np.int64).reshape(-1, 2)
    h, w = shape
    owner = np.repeat(np.arange(len(pixels_b)), n_per_match)
    centre = pixels_b[owner]
    out = np.empty_like(centre)
    todo = np.arange(len(owner))
    for _ in range(100):
        if todo.size == 0:
            break
        cand = np.stack([rng.integers(0, w, todo.size), rng.integers(0, h, todo.size)], axis=1)
        ok = np.hypot(*(cand - centre[todo]).T) > exclusion_px
        out[todo[ok]] = cand[ok]
        todo = todo[~ok]
    if todo.size:
        keep = np.setdiff1d(np.arange(len(owner)), todo)
        owner, out = owner[keep], out[keep]
    return owner, out
