"""One-axis ablations: train per value and seed, tabulate test AUC as mean and sigma."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..augment import CANONICAL_ORDER, AugmentConfig
from .config import RunConfig

AXES = ("augmentations", "dimension", "temperature", "batch_size", "n_correspondences", "n_scenes")


def augment_preset(value) -> AugmentConfig:
    """``none``, ``full``, or a ``+``-joined list of augmentation names."""
    if value in ("none", "", None):
        return AugmentConfig.none()
    if value == "full":
        return AugmentConfig()
    names = tuple(str(value).split("+"))
    unknown = set(names) - set(CANONICAL_ORDER)
    if unknown:
        raise ValueError(f"unknown augmentations {sorted(unknown)}")
    return AugmentConfig(enabled=tuple(n for n in CANONICAL_ORDER if n in names))


def apply_axis(base: RunConfig, axis: str, value) -> RunConfig:
    if axis == "augmentations":
        return base.with_values(augment=augment_preset(value))
    if axis == "dimension":
        d = int(value)
        layers = base.model.layers
        if layers:
            layers = layers[:-1] + ((layers[-1][0], layers[-1][1], d) + tuple(layers[-1][3:]),)
        return base.with_values(**{"model.descriptor_dim": d, "model.layers": layers})
    if axis == "temperature":
        return base.with_values(**{"loss.tau": float(value)})
    if axis == "batch_size":
        return base.with_values(**{"train.batch_size": int(value)})
    if axis == "n_correspondences":
        return base.with_values(**{"loss.n_correspondences": int(value)})
    if axis == "n_scenes":
        if base.data.train_spec is None:
            raise ValueError("n_scenes ablation needs a generated training set")
        return base.with_values(**{"data.train_spec.n_scenes": int(value)})
    raise ValueError(f"unknown ablation axis {axis!r}; expected one of {AXES}")


@dataclass(frozen=True)
class AblationRow:
    value: object
    aucs: tuple

    @property
    def mean(self) -> float:
        return float(np.mean(self.aucs))

    @property
    def std(self) -> float:
        return float(np.std(self.aucs))


@dataclass(frozen=True)
class AblationTable:
    axis: str
    k_max: int
    rows: tuple

    def row(self, value) -> AblationRow:
        for r in self.rows:
            if r.value == value:
                return r
        raise KeyError(value)

    def format(self) -> str:
        head = f"AUC±σ for PCK@k, k = 1..{self.k_max}"
        width = max([len(self.axis)] + [len(str(r.value)) for r in self.rows])
        lines = [f"{self.axis:<{width}}  {head}"]
        for r in self.rows:
            lines.append(f"{str(r.value):<{width}}  {r.mean:.3f} ± {r.std:.3f}  (n={len(r.aucs)})")
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {"axis": self.axis, "k_max": self.k_max,
                "rows": [{"value": r.value, "aucs": list(r.aucs), "mean": r.mean, "std": r.std} for r in self.rows]}


def train_and_score(cfg: RunConfig, seed: int) -> float:
    """Default runner: test AUC of the best-validation checkpoint."""
    from .train import heldout_report, train

    state, _ = train(cfg, seed=seed)
    return heldout_report(state.selected, cfg).auc


def run_ablation(base: RunConfig, axis: str, values, seeds=None, runner=train_and_score) -> AblationTable:
    values = list(values)
    if not values:
        raise ValueError("need at least one value")
    seeds = tuple(base.seeds if seeds is None else seeds)
    rows = []
    for value in values:
        cfg = apply_axis(base, axis, value)
        rows.append(AblationRow(value, tuple(float(runner(cfg, s)) for s in seeds)))
    return AblationTable(axis, base.train.auc_k_max, tuple(rows))
