"""Regenerate the frozen reference files under tests/golden.

Run only when a deliberate change to the generators makes the old files stale,
and review the diff before committing.
"""

import json
from pathlib import Path

import numpy as np

from donlab.augment import AugmentConfig, sample_augmentation_sequence
from donlab.geometry import CameraIntrinsics
from donlab.scenegen import SceneSpec, TrajectorySpec, generate_scene, make_catalog

GOLDEN = Path(__file__).resolve().parent.parent / "tests" / "golden"


def object_poses():
    spec = SceneSpec(tuple(make_catalog(4)), CameraIntrinsics.from_fov(64, 64, 45.0), TrajectorySpec(frames=2))
    scene = generate_scene(spec, np.random.default_rng(1234))
    return [{"object_id": o.object_id, "x": o.x, "y": o.y, "yaw": o.yaw} for o in scene.objects]


def augment_specs():
    rng = np.random.default_rng(99)
    return [sample_augmentation_sequence(AugmentConfig(), rng).to_dict() for _ in range(5)]


def forward_default():
    from donlab.netcore import Architecture, ModelParams, forward

    params = ModelParams.init(Architecture.default(8), seed=0)
    image = np.random.default_rng(7).integers(0, 256, (64, 64, 3), dtype=np.uint8)
    out = forward(params, image).data.astype(np.float64)
    return {"sum": out.sum(), "abs_sum": np.abs(out).sum(), "probe": out[::9, ::9, 0].ravel().tolist()}


def main():
    GOLDEN.mkdir(parents=True, exist_ok=True)
    for name, payload in (("object_poses.json", object_poses()), ("augment_specs.json", augment_specs()),
                          ("forward_default.json", forward_default())):
        (GOLDEN / name).write_text(json.dumps(payload, indent=1) + "\n")
        print(f"wrote {GOLDEN / name}")


if __name__ == "__main__":
    main()
