"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 data error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from ..errors import ConfigError, DataError, DonlabError
from ..scenegen import DatasetSpec, generate_dataset

EXIT_OK, EXIT_CONFIG, EXIT_DATA = 0, 2, 3
log = logging.getLogger("donlab")


def _load_model(path):
    from ..netcore import NetworkModel, load_checkpoint

    try:
        params, header = load_checkpoint(path)
    except FileNotFoundError:
        raise DataError(f"no checkpoint at {path}") from None
    return NetworkModel(params, header.get("meta", {}).get("measure", "cosine")), header


def _read_json(path, what):
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"{what} file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{what} file is not valid JSON: {exc}") from None


def _emit(args, name, payload, text):
    print(text)
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / name).write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n")


# --------------------------------------------------------------------------
# subcommands

def cmd_gen_scenes(args):
    from .config import _build
    from .dataset import save_dataset

    spec = _build(DatasetSpec, _read_json(args.spec, "scene spec"))
    if args.seed is not None:
        spec = dataclasses.replace(spec, seed=args.seed)
    scenes = generate_dataset(spec)
    save_dataset(scenes, args.out)
    print(f"wrote {len(scenes)} scenes ({sum(len(s) for s in scenes)} frames) to {args.out}")


def cmd_train(args):
    from .config import load_config
    from .train import heldout_report, train

    cfg = load_config(args.config)
    seeds = [args.seed] if args.seed is not None else list(cfg.seeds)
    root = Path(args.out_dir or Path("runs") / cfg.name)
    for seed in seeds:
        out = root / f"seed_{seed}"
        state, report = train(cfg, seed=seed, out_dir=out)
        test = heldout_report(state.selected, cfg)
        report["test"] = {"auc": test.auc, "k_max": test.curve.k_max, "pck": {str(k): test.pck(k) for k in (1, 3, 5, 8, 10)}}
        (out / "report.json").write_text(json.dumps(report, indent=1, sort_keys=True) + "\n")
        print(f"seed {seed}: best val PCK@{cfg.train.val_k} {report['best_val_pck']}, test AUC {test.auc:.4f} -> {out}")


def cmd_eval_pck(args):
    from ..evaluation import correspondence_accuracy_eval
    from .dataset import load_dataset

    model, _ = _load_model(args.checkpoint)
    scenes = load_dataset(args.scenes)
    rep = correspondence_accuracy_eval(model, scenes, n_pairs=args.pairs, n_queries=args.queries,
                                       seed=args.seed or 0, k_max=args.k_max)
    ks = [k for k in (1, 2, 3, 5, 8, 10, 20, 50, 100) if k <= args.k_max]
    text = f"AUC (k=1..{args.k_max}) {rep.auc:.4f} over {rep.n_pairs} pairs\n" + \
        "\n".join(f"PCK@{k:<3d} {rep.pck(k):.4f}" for k in ks)
    _emit(args, "pck.json", {"auc": rep.auc, "k_max": args.k_max, "n_pairs": rep.n_pairs,
                             "curve": list(map(float, rep.curve.values))}, text)


def _queries(path):
    from ..evaluation import KeypointQuery

    raw = _read_json(path, "queries")
    try:
        return [KeypointQuery(int(q["frame_index"]), tuple(int(c) for c in q["pixel"]), int(q.get("object_id", 0)))
                for q in raw]
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad query record: {exc}") from None


def cmd_eval_tracking(args):
    from ..evaluation import keypoint_tracking_eval
    from .dataset import load_dataset

    model, _ = _load_model(args.checkpoint)
    scene = load_dataset(args.scene)[0]
    rep = keypoint_tracking_eval(model, scene, _queries(args.queries))
    counts, edges = rep.histogram()
    q = rep.quantiles()
    text = f"median error {rep.median:.2f} mm, misses {rep.misses}, occluded {rep.occluded}\n" + \
        "  ".join(f"q{k}={v:.2f}" for k, v in q.items())
    _emit(args, "tracking.json", {"median_mm": rep.median, "quantiles_mm": q, "misses": rep.misses,
                                  "occluded": rep.occluded,
                                  "histogram": {"counts": counts.tolist(), "edges_mm": edges.tolist()}}, text)


def cmd_eval_grasp(args):
    from ..evaluation import grasp_transfer_eval
    from .dataset import load_dataset

    model, _ = _load_model(args.checkpoint)
    scene = load_dataset(args.scene)[0]
    spec = _read_json(args.axis_spec, "axis spec")
    try:
        k, p1, p2 = int(spec["frame_index"]), tuple(spec["p1"]), tuple(spec["p2"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad axis spec: {exc}") from None
    rep = grasp_transfer_eval(model, scene, k, p1, p2)
    text = (f"median position error {np.nanmedian(rep.position_mm):.2f} mm, "
            f"median axis error {np.nanmedian(rep.angle_deg):.2f} deg, "
            f"success (<=10 mm, <=15 deg) {rep.success_rate():.3f}, failures {rep.failures}, occluded {rep.occluded}")
    _emit(args, "grasp.json", {"position_mm": rep.position_mm.tolist(), "angle_deg": rep.angle_deg.tolist(),
                               "success_rate": rep.success_rate(), "failures": rep.failures,
                               "occluded": rep.occluded}, text)


def cmd_ablate(args):
    from .ablation import run_ablation
    from .config import load_config

    cfg = load_config(args.config)
    seeds = [args.seed] if args.seed is not None else None
    table = run_ablation(cfg, args.axis, args.values, seeds=seeds)
    _emit(args, f"ablation_{args.axis}.json", table.to_dict(), table.format())


def _read_image(path) -> np.ndarray:
    from .dataset import read_pnm

    path = Path(path)
    if not path.exists():
        raise DataError(f"no image at {path}")
    if path.suffix.lower() == ".ppm":
        return read_pnm(path, "P6")
    import matplotlib.image as mpimg

    img = mpimg.imread(path)
    if img.dtype != np.uint8:
        img = np.clip(np.floor(img * 255 + 0.5), 0, 255).astype(np.uint8)
    return img[..., :3]


def cmd_viz(args):
    import matplotlib.pyplot as plt

    from ..evaluation import pca_visualize

    model, _ = _load_model(args.checkpoint)
    image = _read_image(args.image)
    vis = pca_visualize(model.describe_images(image))
    out = Path(args.out_dir or ".")
    out.mkdir(parents=True, exist_ok=True)
    target = out / (Path(args.image).stem + "_descriptors.png")
    plt.imsave(target, np.concatenate([image, vis], axis=1))
    print(f"wrote {target}")


# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="override the seed(s)")
    common.add_argument("--out-dir", default=None, help="where outputs are written")
    common.add_argument("--threads", type=int, default=1, help="BLAS threads (1 keeps runs bitwise reproducible)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="donlab", description="Dense descriptor learning on synthetic RGB-D scenes.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("gen-scenes", parents=[common], help="render a scene set from a JSON spec")
    s.add_argument("spec")
    s.add_argument("out")
    s.set_defaults(func=cmd_gen_scenes)

    s = sub.add_parser("train", parents=[common], help="train from a run config")
    s.add_argument("config")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval-pck", parents=[common], help="PCK and AUC on a scene set")
    s.add_argument("checkpoint")
    s.add_argument("scenes")
    s.add_argument("--pairs", type=int, default=50)
    s.add_argument("--queries", type=int, default=100)
    s.add_argument("--k-max", type=int, default=100)
    s.set_defaults(func=cmd_eval_pck)

    s = sub.add_parser("eval-tracking", parents=[common], help="keypoint tracking error in millimetres")
    s.add_argument("checkpoint")
    s.add_argument("scene")
    s.add_argument("queries")
    s.set_defaults(func=cmd_eval_tracking)

    s = sub.add_parser("eval-grasp", parents=[common], help="grasp axis transfer across frames")
    s.add_argument("checkpoint")
    s.add_argument("scene")
    s.add_argument("axis_spec", metavar="axis-spec")
    s.set_defaults(func=cmd_eval_grasp)

    s = sub.add_parser("ablate", parents=[common], help="one-axis ablation table")
    s.add_argument("config")
    s.add_argument("--axis", required=True,
                   choices=["augmentations", "dimension", "temperature", "batch_size", "n_correspondences", "n_scenes"])
    s.add_argument("--values", nargs="+", required=True)
    s.set_defaults(func=cmd_ablate)

    s = sub.add_parser("viz", parents=[common], help="PCA rendering of a descriptor image")
    s.add_argument("checkpoint")
    s.add_argument("image")
    s.set_defaults(func=cmd_viz)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    from threadpoolctl import threadpool_limits

    try:
        with threadpool_limits(limits=args.threads):
            args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DonlabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
