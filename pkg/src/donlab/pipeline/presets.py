"""Named variants of the reference run used for the trend comparisons."""

from __future__ import annotations

import hashlib
import json
import time
from pathlib import Path

from ..augment import AugmentConfig
from ..netcore import ModelParams, load_checkpoint, save_checkpoint
from .config import RunConfig, config_to_text, reference_config

VARIANTS = {
    "reference": {},
    "no_aug": {"augment": AugmentConfig.none()},
    "ntxent_bs1": {"train.batch_size": 1},
    "pixelwise": {"loss.kind": "pixelwise", "train.batch_size": 1},
    "pixelwise_bs2": {"loss.kind": "pixelwise", "train.batch_size": 2},
    "pixelwise_single": {"loss.kind": "pixelwise", "augment": AugmentConfig.none(),
                         "data.train_spec.mode": "single", "train.batch_size": 1},
    "pixelwise_single_bs2": {"loss.kind": "pixelwise", "augment": AugmentConfig.none(),
                             "data.train_spec.mode": "single", "train.batch_size": 2},
    "tau_0.01": {"loss.tau": 0.01},
    "tau_0.3": {"loss.tau": 0.3},
    "tau_1.0": {"loss.tau": 1.0},
}


def variant_config(name: str, **overrides) -> RunConfig:
    """Reference config with the named variant (and any extra overrides) applied."""
    if name not in VARIANTS:
        raise KeyError(f"unknown variant {name!r}; expected one of {sorted(VARIANTS)}")
    return reference_config(**{**VARIANTS[name], **overrides}).with_values(name=name)


def source_digest() -> str:
    """Hash of the package sources, so cached results never outlive a code change."""
    h = hashlib.sha256()
    root = Path(__file__).resolve().parents[1]
    for path in sorted(root.rglob("*.py")):
        h.update(str(path.relative_to(root)).encode())
        h.update(path.read_bytes())
    return h.hexdigest()


def run_key(cfg: RunConfig, seed: int) -> str:
    text = config_to_text(cfg) + f"\nseed={seed}\n" + source_digest()
    return hashlib.sha256(text.encode()).hexdigest()[:20]


def train_and_report(cfg: RunConfig, seed: int, cache_dir=None) -> tuple[dict, ModelParams]:
    """Train one seed and score it (and its untrained init) on the test scenes.

    With ``cache_dir`` set, results are stored under a key derived from the
    config, the seed and the package sources, and reused when present.
    """
    from .train import heldout_report, train

    entry = Path(cache_dir) / f"{cfg.name}_s{seed}_{run_key(cfg, seed)}" if cache_dir is not None else None
    if entry is not None and (entry / "result.json").exists():
        params, _ = load_checkpoint(entry / "selected.ckpt")
        return json.loads((entry / "result.json").read_text()), params
    t0 = time.process_time()
    state, report = train(cfg, seed=seed)
    cpu = time.process_time() - t0
    test = heldout_report(state.selected, cfg)
    init = heldout_report(ModelParams.init(cfg.model.architecture(), seed=seed), cfg)
    result = {"name": cfg.name, "seed": seed, "cpu_seconds": cpu, "best_val_pck": report["best_val_pck"],
              "best_epoch": report["best_epoch"], "skipped_steps": report["skipped_steps"],
              "test_auc": test.auc, "test_pck5": test.pck(5), "untrained_auc": init.auc,
              "untrained_pck5": init.pck(5)}
    if entry is not None:
        entry.mkdir(parents=True, exist_ok=True)
        save_checkpoint(entry / "selected.ckpt", state.selected, state.step, {"measure": cfg.loss.measure})
        (entry / "result.json").write_text(json.dumps(result, indent=1, sort_keys=True) + "\n")
    return result, state.selected
