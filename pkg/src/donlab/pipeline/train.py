"""The training loop.

Every step draws its randomness from a generator seeded with
(run seed, step index), so a run is reproducible bit for bit and any step can
be replayed in isolation.
"""

from __future__ import annotations

import functools
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..augment import AugmentationSpec, apply_augmentation, remap_correspondences, sample_augmentation_sequence
from ..errors import NoAdmissiblePair, NoValidCorrespondences
from ..evaluation import correspondence_accuracy_eval
from ..geometry import PixelPairs, compute_validity_mask, sample_correspondences
from ..losses import (DescriptorBatch, coalesce, cross_object_nonmatch_loss, gather_pixels, ntxent_loss,
                      pixelwise_contrastive_loss, sample_nonmatches)
from ..netcore import AdamState, ModelParams, NetworkModel, adam_step, forward, save_checkpoint
from ..netcore import autodiff as ad
from ..scenegen import EVAL_PAIR_CONSTRAINT, generate_dataset, sample_image_pair
from .config import RunConfig, config_to_text
from .dataset import load_dataset

log = logging.getLogger("donlab.train")


@functools.lru_cache(maxsize=16)
def _generated(spec):
    return tuple(generate_dataset(spec))


def resolve_scenes(path, spec) -> list:
    """Scenes from disk when a path is given, otherwise generated (and memoized)."""
    if path is not None:
        return load_dataset(path)
    return list(_generated(spec))


@dataclass
class TrainState:
    params: ModelParams
    adam: AdamState
    epoch: int = 0
    step: int = 0
    best_metric: float = -math.inf
    best_epoch: int = -1
    best_params: ModelParams | None = None
    best_path: Path | None = None
    history: list = field(default_factory=list)
    skipped_steps: int = 0

    @property
    def selected(self) -> ModelParams:
        """Parameters of the best validation event (the initial ones if none ran)."""
        return self.best_params if self.best_params is not None else self.params


def _draw_pair(scenes, cfg: RunConfig, rng: np.random.Generator):
    """One usable (augmented) training pair, or None after the retry budget."""
    n_corr = cfg.loss.n_correspondences
    for _ in range(cfg.train.max_retries):
        pair = sample_image_pair(scenes, cfg.train.pair_constraint, rng)
        fa, fb = pair
        vm = compute_validity_mask(fa, fb)
        try:
            pairs = sample_correspondences(vm, n_corr, rng)
        except NoValidCorrespondences:
            continue
        h, w = fa.shape
        spec_a = sample_augmentation_sequence(cfg.augment, rng, w, h)
        spec_b = (sample_augmentation_sequence(cfg.augment, rng, w, h) if cfg.augment.apply_to == "both"
                  else AugmentationSpec.identity(w, h))
        moved, ok = remap_correspondences(pairs, spec_a, spec_b)
        if not ok.any():
            continue
        images = [apply_augmentation(fa.rgb, spec_a), apply_augmentation(fb.rgb, spec_b)]
        return pair, images, PixelPairs(moved.a[ok], moved.b[ok])
    return None


def _third_image(scenes, scene_index: int, rng: np.random.Generator):
    """A frame from a different scene (a different object in single-object sets)."""
    others = [i for i in range(len(scenes)) if i != scene_index]
    if not others:
        raise NoAdmissiblePair("cross-object sampling needs at least two scenes")
    scene = scenes[others[int(rng.integers(len(others)))]]
    return scene.frames[int(rng.integers(len(scene)))].rgb


def step_loss(params: ModelParams, scenes, cfg: RunConfig, rng: np.random.Generator):
    """Sample a mini-batch and build its loss; None when every pair failed."""
    kind = cfg.loss.kind
    samples = []
    for _ in range(cfg.batch_size):
        drawn = _draw_pair(scenes, cfg, rng)
        if drawn is None:
            log.warning("no usable pair after %d retries", cfg.train.max_retries)
            continue
        pair, images, pairs = drawn
        if kind == "pixelwise_cross_object":
            images.append(_third_image(scenes, pair.scene_index, rng))
        samples.append((images, pairs))
    if not samples:
        return None
    stack = np.stack([im for images, _ in samples for im in images])
    out = forward(params, stack)
    per = len(samples[0][0])
    h, w = stack.shape[1:3]
    matches, nonmatches, cross = [], [], []
    for s, (_, pairs) in enumerate(samples):
        ia, ib = s * per, s * per + 1
        da = gather_pixels(out, pairs.a, np.full(len(pairs), ia))
        db = gather_pixels(out, pairs.b, np.full(len(pairs), ib))
        matches.append(DescriptorBatch(da, db))
        if kind == "ntxent":
            continue
        owner, neg = sample_nonmatches(pairs.b, cfg.loss.n_noncorrespondences_per_match, (h, w), rng,
                                       cfg.loss.nonmatch_exclusion_px)
        if len(owner):
            nonmatches.append(DescriptorBatch(gather_pixels(out, pairs.a[owner], np.full(len(owner), ia)),
                                              gather_pixels(out, neg, np.full(len(neg), ib))))
        if kind == "pixelwise_cross_object":
            # masks are never used in training, so cross pixels are uniform over both images
            m = cfg.loss.n_correspondences
            pa = np.stack([rng.integers(0, w, m), rng.integers(0, h, m)], axis=1)
            pc = np.stack([rng.integers(0, w, m), rng.integers(0, h, m)], axis=1)
            cross.append(DescriptorBatch(gather_pixels(out, pa, np.full(m, ia)),
                                         gather_pixels(out, pc, np.full(m, ia + 2))))
    batch = coalesce(matches)
    if kind == "ntxent":
        return ntxent_loss(batch, cfg.loss.tau, cfg.loss.reduction)
    loss = pixelwise_contrastive_loss(batch, coalesce(nonmatches) if nonmatches else None, cfg.loss.margin)
    if cross:
        c = coalesce(cross)
        loss = ad.add(loss, cross_object_nonmatch_loss(c.dA, c.dB, cfg.loss.margin))
    return loss


def validate(params: ModelParams, val_scenes, cfg: RunConfig):
    model = NetworkModel(params, cfg.loss.measure)
    return correspondence_accuracy_eval(model, val_scenes, EVAL_PAIR_CONSTRAINT, n_pairs=cfg.train.val_pairs,
                                        n_queries=cfg.train.val_queries, seed=0, k_max=cfg.train.auc_k_max)


def heldout_report(params: ModelParams, cfg: RunConfig, test_scenes=None):
    """Correspondence accuracy of ``params`` on the held-out test scenes."""
    if test_scenes is None:
        test_scenes = resolve_scenes(cfg.data.test_path, cfg.data.test_spec)
    model = NetworkModel(params, cfg.loss.measure)
    return correspondence_accuracy_eval(model, test_scenes, EVAL_PAIR_CONSTRAINT, n_pairs=cfg.train.test_pairs,
                                        n_queries=cfg.train.test_queries, seed=1, k_max=cfg.train.auc_k_max)


def steps_per_epoch(cfg: RunConfig) -> int:
    return math.ceil(cfg.train.pairs_per_epoch / cfg.batch_size)


def train(cfg: RunConfig, seed: int | None = None, out_dir=None, train_scenes=None, val_scenes=None):
    """Train one model; returns (TrainState, report dict).

    With ``out_dir`` set, the config, best checkpoint and report are written
    there.
    """
    seed = cfg.seeds[0] if seed is None else int(seed)
    if train_scenes is None:
        train_scenes = resolve_scenes(cfg.data.train_path, cfg.data.train_spec)
    if val_scenes is None:
        val_scenes = resolve_scenes(cfg.data.val_path, cfg.data.val_spec)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.ini").write_text(config_to_text(cfg))

    params = ModelParams.init(cfg.model.architecture(), seed=seed)
    o = cfg.optim
    state = TrainState(params, AdamState(lr=o.lr, beta1=o.beta1, beta2=o.beta2, weight_decay=o.weight_decay, eps=o.eps))
    n_steps = steps_per_epoch(cfg)
    total_steps = n_steps * cfg.train.epochs
    for epoch in range(cfg.train.epochs):
        losses = []
        for _ in range(n_steps):
            rng = np.random.default_rng([seed, state.step])
            loss = step_loss(state.params, train_scenes, cfg, rng)
            state.step += 1
            if loss is None:
                state.skipped_steps += 1
                continue
            state.params.zero_grad()
            loss.backward()
            state.adam.lr = o.lr_at(state.step - 1, total_steps)
            adam_step(state.params.arrays(), state.params.grads(), state.adam)
            losses.append(loss.item())
        state.epoch = epoch + 1
        event = {"epoch": state.epoch, "step": state.step,
                 "train_loss": float(np.mean(losses)) if losses else None}
        if state.epoch % cfg.train.val_every == 0 or state.epoch == cfg.train.epochs:
            report = validate(state.params, val_scenes, cfg)
            metric = report.pck(cfg.train.val_k)
            event.update(val_pck=metric, val_auc=report.auc)
            if metric > state.best_metric:
                state.best_metric, state.best_epoch = metric, state.epoch
                state.best_params = state.params.copy()
                if out is not None:
                    state.best_path = out / "best.ckpt"
                    save_checkpoint(state.best_path, state.best_params, state.step,
                                    {"epoch": state.epoch, "seed": seed, "val_pck": metric, "measure": cfg.loss.measure})
            log.info("epoch %d  loss %.4f  val PCK@%d %.4f  AUC %.4f", state.epoch,
                     event["train_loss"] or float("nan"), cfg.train.val_k, metric, report.auc)
        state.history.append(event)

    report = {"name": cfg.name, "seed": seed, "epochs": state.epoch, "steps": state.step,
              "skipped_steps": state.skipped_steps, "best_epoch": state.best_epoch,
              "best_val_pck": state.best_metric if state.best_epoch >= 0 else None,
              "val_k": cfg.train.val_k, "history": state.history}
    if out is not None:
        (out / "report.json").write_text(json.dumps(report, indent=1, sort_keys=True) + "\n")
    return state, report
