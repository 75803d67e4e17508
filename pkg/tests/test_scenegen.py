import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from donlab.errors import NoAdmissiblePair, PlacementFailure
from donlab.geometry import CameraIntrinsics, Pose, RgbdFrame, compute_validity_mask, round_half_up
from donlab.scenegen import (EVAL_PAIR_CONSTRAINT, DatasetSpec, GroundPlane, ObjectSpec, PairConstraint, Scene,
                             SceneSpec, Texture, TrajectorySpec, admissible_pairs, generate_dataset, generate_scene,
                             make_catalog, place_objects, render_frame, sample_image_pair, subsample_indices,
                             subsample_trajectory)

from oracles import render_depth_oracle

GOLDEN = Path(__file__).parent / "golden"
K64 = CameraIntrinsics.from_fov(64, 64, 45.0)
GRAY = Texture("solid", ((0.5, 0.5, 0.5), (0.5, 0.5, 0.5)))


@pytest.fixture(scope="module")
def small_set():
    return generate_dataset(DatasetSpec(n_scenes=2, seed=3, n_distractors=1))


# --- rendering ---------------------------------------------------------------

def test_sphere_on_axis_depth():
    r = 0.1
    sphere = ObjectSpec("sphere", (2 * r,) * 3, GRAY, 1)
    pose = Pose.look_at((0.0, 0.0, r + 1.0), (0.0, 0.0, r))
    frame, ids = render_frame([sphere], GroundPlane(), pose, CameraIntrinsics(50.0, 50.0, 32.0, 32.0, 65, 65))
    assert frame.depth[32, 32] == pytest.approx(1.0 - r, abs=1e-6)
    assert ids[32, 32] == 1


def test_empty_scene_has_no_ids():
    pose = Pose.look_at((0.3, 0.0, 0.3), (0.0, 0.0, 0.0))
    frame, ids = render_frame([], GroundPlane(), pose, K64)
    assert not ids.any()
    assert frame.valid_depth().any()  # the ground is still seen


def test_two_boxes_along_ray_nearer_wins():
    near = ObjectSpec("box", (0.04, 0.04, 0.04), GRAY, 1, 0.08, 0.0)
    far = ObjectSpec("box", (0.08, 0.08, 0.08), GRAY, 2, -0.05, 0.0)
    pose = Pose.look_at((0.35, 0.0, 0.04), (0.0, 0.0, 0.04))
    frame, ids = render_frame([near, far], GroundPlane(), pose, K64)
    depth, index = render_depth_oracle([near, far], GroundPlane(), pose, K64)
    assert ids[32, 32] == 1
    assert (ids == 2).any()
    np.testing.assert_allclose(frame.depth, depth, atol=1e-5)
    expected_ids = np.where(index > 0, np.array([0, 1, 2])[np.clip(index, 0, 2)], 0)
    np.testing.assert_array_equal(ids, expected_ids)


def test_depth_matches_raycast_oracle(small_set):
    scene = small_set[0]
    for i in (0, len(scene) // 2):
        f = scene.frames[i]
        depth, index = render_depth_oracle(scene.objects, scene.ground, f.pose, f.intrinsics)
        hit = scene.id_masks[i] > 0
        np.testing.assert_allclose(f.depth[hit], depth[hit], atol=1e-5)
        np.testing.assert_array_equal(hit, index > 0)


def test_ids_have_valid_depth(small_set):
    for scene in small_set:
        for f, ids in zip(scene.frames, scene.id_masks):
            assert f.valid_depth()[ids > 0].all()


def test_rerender_is_bit_identical():
    spec = DatasetSpec(n_scenes=1, seed=11)
    a, b = generate_dataset(spec)[0], generate_dataset(spec)[0]
    assert len(a) == len(b)
    for fa, fb, ma, mb in zip(a.frames, b.frames, a.id_masks, b.id_masks):
        assert fa.rgb.tobytes() == fb.rgb.tobytes()
        assert fa.depth.tobytes() == fb.depth.tobytes()
        assert ma.tobytes() == mb.tobytes()


def test_frames_share_world_frame(small_set):
    # a world point seen in two frames lands on the same object id in both
    scene = small_set[0]
    for i, j in ((0, 3), (2, 9), (5, 1)):
        fa, fb = scene.frames[i], scene.frames[j]
        vm = compute_validity_mask(fa, fb)
        v, u = np.nonzero(vm.mask)
        q = round_half_up(vm.mapping[v, u])
        agree = scene.id_masks[i][v, u] == scene.id_masks[j][q[:, 1], q[:, 0]]
        assert agree.mean() >= 0.99


# --- scenes -------------------------------------------------------------------

def test_single_object_scene():
    traj = TrajectorySpec(frames=20, min_rot_deg=0.0, min_trans=0.0)
    spec = SceneSpec((make_catalog(1)[0],), K64, traj)
    scene = generate_scene(spec, np.random.default_rng(0))
    assert len(scene) == 20
    ids = set(np.unique(np.concatenate([m.ravel() for m in scene.id_masks]))) - {0}
    assert ids == {1}


def _object_poses(scene):
    return [{"object_id": o.object_id, "x": o.x, "y": o.y, "yaw": o.yaw} for o in scene.objects]


def test_object_poses_match_golden():
    spec = SceneSpec(tuple(make_catalog(4)), K64, TrajectorySpec(frames=2))
    scene = generate_scene(spec, np.random.default_rng(1234))
    golden = json.loads((GOLDEN / "object_poses.json").read_text())
    got = _object_poses(scene)
    assert [g["object_id"] for g in golden] == [o["object_id"] for o in got]
    for g, o in zip(golden, got):
        assert (o["x"], o["y"], o["yaw"]) == pytest.approx((g["x"], g["y"], g["yaw"]), abs=1e-12)


def test_objects_do_not_interpenetrate(small_set):
    for scene in small_set:
        objs = scene.objects
        for a in range(len(objs)):
            for b in range(a + 1, len(objs)):
                d = np.hypot(objs[a].x - objs[b].x, objs[a].y - objs[b].y)
                assert d >= objs[a].footprint_radius + objs[b].footprint_radius


def test_placement_failure():
    big = [ObjectSpec("box", (0.1, 0.1, 0.1), GRAY, k + 1) for k in range(50)]
    with pytest.raises(PlacementFailure):
        place_objects(big, 0.11, 0.005, np.random.default_rng(0), max_attempts=50, restarts=3)


def test_duplicate_ids_rejected():
    obj = make_catalog(1)[0]
    with pytest.raises(ValueError):
        generate_scene(SceneSpec((obj, obj), K64), np.random.default_rng(0))


def test_trajectory_spec_rejects_negative_thresholds():
    with pytest.raises(ValueError):
        TrajectorySpec(min_rot_deg=-1.0)
    with pytest.raises(ValueError):
        PairConstraint(min_translation=-0.1)


# --- subsampling ----------------------------------------------------------------

def _walk(deltas):
    """Poses stepping by (yaw degrees, metres along x) per frame."""
    poses, yaw, x = [Pose.identity()], 0.0, 0.0
    for deg, dx in deltas:
        yaw += np.radians(deg)
        x += dx
        c, s = np.cos(yaw), np.sin(yaw)
        poses.append(Pose(np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]), np.array([x, 0.0, 0.0])))
    return poses


def test_subsample_small_steps_keeps_first_only():
    # a hand-held jitter: every step is (4 deg, 1 cm) but the camera swings back and forth
    deltas = [(4.0, 0.01) if i % 2 == 0 else (-4.0, -0.01) for i in range(10)]
    assert subsample_indices(_walk(deltas), 5.0, 0.02) == [0]


def test_subsample_large_steps_keeps_all():
    assert subsample_indices(_walk([(10.0, 0.05)] * 10), 5.0, 0.02) == list(range(11))


def test_subsample_mixed_sequence():
    deltas = [(4, 0.015), (4, 0.015), (10, 0.05), (2, 0.03), (6, 0.03), (1, 0.005)]
    # worked by hand: 2 moves (8 deg, 3 cm) from 0, 3 moves (10, 5) from 2,
    # 4 is only 2 deg from 3, 5 is (8, 6) from 3, 6 is (1, 0.5) from 5
    assert subsample_indices(_walk(deltas), 5.0, 0.02) == [0, 2, 3, 5]


def test_subsample_works_on_frames():
    frames = [RgbdFrame(np.zeros((2, 2, 3), np.uint8), np.ones((2, 2), np.float32), p,
                        CameraIntrinsics(1.0, 1.0, 1.0, 1.0, 2, 2)) for p in _walk([(10.0, 0.05)] * 3)]
    assert subsample_trajectory(frames, 5.0, 0.02) == frames


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 20), st.floats(0, 0.06)), min_size=1, max_size=15),
       st.floats(0, 12), st.floats(0, 0.04))
def test_subsample_consecutive_kept_frames_meet_thresholds(deltas, min_rot, min_trans):
    from donlab.geometry import relative_motion

    poses = _walk(deltas)
    kept = subsample_indices(poses, min_rot, min_trans)
    assert kept[0] == 0 and kept == sorted(set(kept))
    for a, b in zip(kept, kept[1:]):
        angle, dist = relative_motion(poses[a], poses[b])
        assert angle >= np.radians(min_rot) - 1e-12 and dist >= min_trans - 1e-12


# --- pair sampling ------------------------------------------------------------------

def _scene_from_poses(poses):
    frames = [RgbdFrame(np.zeros((2, 2, 3), np.uint8), np.ones((2, 2), np.float32), p,
                        CameraIntrinsics(1.0, 1.0, 1.0, 1.0, 2, 2)) for p in poses]
    return Scene("s", [], frames, [np.zeros((2, 2), np.uint8)] * len(frames))


def _pose(deg, dist):
    c, s = np.cos(np.radians(deg)), np.sin(np.radians(deg))
    return Pose(np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]), np.array([dist, 0.0, 0.0]))


def test_pair_far_enough_is_admissible():
    scene = _scene_from_poses([Pose.identity(), _pose(20.0, 0.25)])
    pairs = admissible_pairs(scene, PairConstraint(0.20, np.radians(15.0)))
    assert {tuple(p) for p in pairs} == {(0, 1), (1, 0)}


def test_pair_too_close_rejected():
    scene = _scene_from_poses([Pose.identity(), _pose(20.0, 0.10)])
    assert len(admissible_pairs(scene, PairConstraint(0.20, np.radians(15.0)))) == 0
    with pytest.raises(NoAdmissiblePair):
        sample_image_pair([scene], PairConstraint(0.20, np.radians(15.0)), np.random.default_rng(0))


def test_single_frame_scene_has_no_pair():
    with pytest.raises(NoAdmissiblePair):
        sample_image_pair([_scene_from_poses([Pose.identity()])], PairConstraint(), np.random.default_rng(0))


def test_sampled_pairs_meet_eval_constraint(small_set):
    from donlab.geometry import relative_motion

    rng = np.random.default_rng(0)
    for _ in range(50):
        pair = sample_image_pair(small_set, EVAL_PAIR_CONSTRAINT, rng)
        angle, dist = relative_motion(pair.frame_a.pose, pair.frame_b.pose)
        assert pair.index_a != pair.index_b
        assert angle >= np.pi / 12 and dist >= 0.20
