"""End-to-end acceptance checks, one test per criterion.

Each test records a one-line PASS/FAIL summary that is printed at the end of
the session. Training runs are shared between criteria and cached on disk
(keyed by config, seed and package source hash) in ``.runs`` at the repo
root; set DONLAB_RUN_CACHE to another directory, or to ``off`` to retrain.
"""

import os
import time
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from donlab.evaluation import GroundTruthModel, keypoint_tracking_eval, pck, pck_auc, pck_curve, sample_tracking_queries
from donlab.geometry import compute_validity_mask
from donlab.losses import DescriptorBatch, gather_pixels, ntxent_loss
from donlab.netcore import Architecture, ConvLayer, ModelParams, NetworkModel, backward, forward
from donlab.pipeline.presets import train_and_report, variant_config
from donlab.pipeline.train import resolve_scenes, train
from donlab.scenegen import DatasetSpec, TrajectorySpec, generate_dataset

from conftest import ACCEPTANCE_LINES
from oracles import central_difference, discrete_visibility_oracle, ntxent_bruteforce

SEEDS = (0, 1, 2)
_cache_env = os.environ.get("DONLAB_RUN_CACHE", str(Path(__file__).resolve().parents[1] / ".runs"))
CACHE = None if _cache_env == "off" else _cache_env
_runs = {}


def record(n, ok, detail):
    ACCEPTANCE_LINES.append((n, f"[{'PASS' if ok else 'FAIL'}] C{n}: {detail}"))
    assert ok, detail


def runs(variant):
    """Results for every seed of a variant (trained once per session)."""
    if variant not in _runs:
        cfg = variant_config(variant)
        with threadpool_limits(limits=1):
            _runs[variant] = [train_and_report(cfg, s, CACHE) for s in SEEDS]
    return _runs[variant]


def mean_auc(variant):
    return float(np.mean([r["test_auc"] for r, _ in runs(variant)]))


# --- 1: validity mask vs ray casting --------------------------------------------------------

def test_c1_validity_mask_matches_raycast():
    t0 = time.perf_counter()
    spec = DatasetSpec(n_scenes=10, objects_per_scene=(2, 2), seed=4242, trajectory=TrajectorySpec(frames=8))
    agree, total = 0, 0
    for scene in generate_dataset(spec):
        fa, fb = scene.frames[0], scene.frames[len(scene) // 2]
        vm = compute_validity_mask(fa, fb)
        oracle = discrete_visibility_oracle(scene.objects, scene.ground, fa.pose, fb.pose, fa.intrinsics)
        agree += int((vm.mask == oracle).sum())
        total += oracle.size
    elapsed = time.perf_counter() - t0
    rate = agree / total
    record(1, rate >= 0.995 and elapsed < 60, f"mask/oracle agreement {rate:.4%} (>= 99.5%), {elapsed:.1f} s (< 60 s)")


# --- 2: NT-Xent vs brute force ---------------------------------------------------------------

def test_c2_ntxent_matches_bruteforce():
    worst = 0.0
    for n in (1, 2, 3, 64):
        rng = np.random.default_rng(100 + n)
        da, db = rng.normal(size=(n, 8)), rng.normal(size=(n, 8))
        got = float(ntxent_loss(DescriptorBatch(da, db), 0.1).data)
        want = ntxent_bruteforce(da, db, 0.1)
        worst = max(worst, 0.0 if got == want else abs(got - want) / abs(want))
    one = np.random.default_rng(0).normal(size=(1, 8))
    n1 = float(ntxent_loss(DescriptorBatch(one, one * 2), 0.1).data)
    same = np.ones((2, 8))  # two identical pairs: three equal terms in each denominator
    log3 = float(ntxent_loss(DescriptorBatch(same, same), 0.1).data)
    ok = worst < 1e-10 and abs(n1) <= 1e-9 and abs(log3 - np.log(3)) <= 1e-9
    record(2, ok, f"max rel err {worst:.1e} (< 1e-10), N=1 loss {n1:.1e}, identical -> {log3:.12f} vs log 3")


# --- 3: gradient through a 2-layer net ----------------------------------------------------------

def _loss_through_net(params, images, pixels):
    desc = forward(params, images)
    da = gather_pixels(desc, pixels, np.zeros(len(pixels), np.int64))
    db = gather_pixels(desc, pixels[::-1], np.ones(len(pixels), np.int64))
    return ntxent_loss(DescriptorBatch(da, db), tau=0.5)


def test_c3_end_to_end_gradient():
    arch = Architecture((ConvLayer(3, 3, 4, 2), ConvLayer(1, 4, 3, 1, relu=False)))
    worst = 0.0
    for seed in range(5):
        rng = np.random.default_rng(1000 + seed)
        params = ModelParams.init(arch, seed=seed, dtype=np.float64)
        images = rng.normal(size=(2, 8, 8, 3))
        pixels = rng.integers(0, 8, size=(4, 2))
        backward(_loss_through_net(params, images, pixels))
        base = params.arrays()
        for name in params.names():
            def f(v):
                arrays = dict(base)
                arrays[name] = v
                return float(_loss_through_net(ModelParams.from_arrays(arch, arrays), images, pixels).data)

            numeric = central_difference(f, base[name], eps=1e-5)
            worst = max(worst, np.abs(params[name].grad - numeric).max() / np.abs(numeric).max())
    record(3, worst < 1e-4, f"max relative gradient error over 5 seeds {worst:.1e} (< 1e-4)")


# --- 4: PCK and AUC ----------------------------------------------------------------------------

def test_c4_metrics():
    hand = [
        pck([1.0, 3.0, 10.0], k=3) == 2 / 3,
        pck([5.0], k=4) == 0.0 and pck([5.0], k=5) == 1.0,
        pck(np.array([[0, 0], [3, 4]]), np.zeros((2, 2)), 5) == 1.0,
        pck_auc([0.0, 0.0]) == 1.0,
        pck_auc([101.0, 500.0]) == 0.0,
        pck_auc([0.0, 50.0]) == 0.755,
        pck_auc([0.0, 10.0], k_max=10) == 0.55,
    ]
    rng = np.random.default_rng(4)
    monotone = 0
    for _ in range(1000):
        errors = rng.exponential(rng.uniform(1, 60), size=int(rng.integers(1, 200)))
        values = pck_curve(errors).values
        monotone += bool(np.all(np.diff(values) >= 0) and 0 <= values[0] and values[-1] <= 1)
    ok = all(hand) and monotone == 1000
    record(4, ok, f"hand-computed cases {sum(hand)}/{len(hand)} exact, monotone curves {monotone}/1000")


# --- 5: desk-scale learning ---------------------------------------------------------------------

def test_c5_reference_learns():
    res = [r for r, _ in runs("reference")]
    trained = float(np.mean([r["test_pck5"] for r in res]))
    untrained = float(np.mean([r["untrained_pck5"] for r in res]))
    cpu = max(r["cpu_seconds"] for r in res)
    ok = trained >= 0.5 and trained - untrained >= 0.4 and cpu < 1800
    record(5, ok, f"held-out PCK@5 {trained:.3f} (>= 0.5), untrained {untrained:.3f} "
                  f"(gain {trained - untrained:.3f} >= 0.4), slowest seed {cpu / 60:.1f} CPU-min (< 30)")


# --- 6-8: trends -----------------------------------------------------------------------------------

def test_c6_configuration_ordering():
    top, no_aug, base = mean_auc("reference"), mean_auc("no_aug"), mean_auc("pixelwise_single")
    ok = top >= no_aug >= base and top - base >= 0.05
    record(6, ok, f"AUC NT-Xent+multi+aug {top:.3f} >= NT-Xent+multi {no_aug:.3f} >= pixelwise single {base:.3f}, "
                  f"margin {top - base:.3f} (>= 0.05)")


def test_c7_batch_size_sensitivity():
    pw1, pw2 = mean_auc("pixelwise"), mean_auc("pixelwise_bs2")  # multi-object, full augmentations
    nx1, nx2 = mean_auc("ntxent_bs1"), mean_auc("reference")
    drop = pw1 - pw2
    ok = drop > 0 and abs(nx1 - nx2) < drop
    record(7, ok, f"pixelwise AUC bs1 {pw1:.3f} vs bs2 {pw2:.3f} (drop {drop:.3f} > 0); "
                  f"NT-Xent bs1 {nx1:.3f} vs bs2 {nx2:.3f} (|diff| {abs(nx1 - nx2):.3f} < drop)")


def test_c8_temperature_robustness():
    aucs = {0.01: mean_auc("tau_0.01"), 0.1: mean_auc("reference"), 0.3: mean_auc("tau_0.3"), 1.0: mean_auc("tau_1.0")}
    spread = max(aucs[t] for t in (0.01, 0.1, 0.3)) - min(aucs[t] for t in (0.01, 0.1, 0.3))
    ok = spread <= 0.1 and aucs[1.0] == min(aucs.values())
    listing = ", ".join(f"tau {t}: {a:.3f}" for t, a in aucs.items())
    record(8, ok, f"{listing}; spread over 0.01..0.3 {spread:.3f} (<= 0.1), tau 1.0 lowest: {aucs[1.0] == min(aucs.values())}")


# --- 9: tracking -------------------------------------------------------------------------------------

def test_c9_tracking():
    # errors pooled over every held-out scene; the trained median is averaged over seeds
    cfg = variant_config("reference")
    scenes = resolve_scenes(cfg.data.test_path, cfg.data.test_spec)
    queries = [sample_tracking_queries(scene, 0) for scene in scenes]

    def pooled_median(model):
        errs = [keypoint_tracking_eval(model, sc, q).valid_errors for sc, q in zip(scenes, queries)]
        return float(np.median(np.concatenate(errs)))

    oracle = pooled_median(GroundTruthModel())
    with threadpool_limits(limits=1):
        trained = [pooled_median(NetworkModel(params, cfg.loss.measure)) for _, params in runs("reference")]
    ok = oracle <= 2.0 and np.mean(trained) <= 10 * oracle
    record(9, ok, f"oracle median {oracle:.2f} mm (<= 2), trained median {np.mean(trained):.2f} mm "
                  f"(<= {10 * oracle:.2f}; per seed {', '.join(f'{t:.1f}' for t in trained)})")


# --- 10: determinism ----------------------------------------------------------------------------------

def test_c10_bitwise_determinism(tmp_path):
    cfg = variant_config("reference", **{"train.epochs": 2, "train.pairs_per_epoch": 20, "train.val_every": 1})
    with threadpool_limits(limits=1):
        for run in ("a", "b"):
            train(cfg, seed=7, out_dir=tmp_path / run)
    same = {name: (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
            for name in ("best.ckpt", "report.json", "config.ini")}
    record(10, all(same.values()), "identical bytes: " + ", ".join(f"{k} {v}" for k, v in same.items()))
