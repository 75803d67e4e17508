"""Scene directories on disk.

Layout of one scene directory::

    manifest            JSON: scene id, objects, ground, frame list, CRC32 per raster
    intrinsics.txt      fx fy cx cy width height
    rgb_XXXX.ppm        binary P6, 8 bit
    depth_XXXX.raw      little-endian float32, row-major
    id_XXXX.pgm         binary P5, 8 bit
    pose_XXXX.txt       row-major 3x3 rotation then translation

A dataset directory holds one sub-directory per scene.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import asdict
from pathlib import Path

import numpy as np

from ..errors import ChecksumMismatch, ParseError
from ..geometry import CameraIntrinsics, Pose, RgbdFrame
from ..scenegen import GroundPlane, ObjectSpec, Scene, Texture

MANIFEST = "manifest"
FORMAT_VERSION = 1


# --------------------------------------------------------------------------
# netpbm

def write_pnm(path, raster: np.ndarray) -> None:
    raster = np.ascontiguousarray(raster, dtype=np.uint8)
    magic = b"P6" if raster.ndim == 3 else b"P5"
    h, w = raster.shape[:2]
    Path(path).write_bytes(magic + f"\n{w} {h}\n255\n".encode() + raster.tobytes())


def read_pnm(path, expect: str) -> np.ndarray:
    path = Path(path)
    data = _read(path)
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ParseError("truncated netpbm header", path, start)
        tokens.append((data[start:pos], start))
    pos += 1  # single whitespace byte ends the header
    magic, _ = tokens[0]
    if magic.decode(errors="replace") != expect:
        raise ParseError(f"expected {expect}, found {magic!r}", path, 0)
    try:
        w, h, maxval = (int(t) for t, _ in tokens[1:])
    except ValueError:
        raise ParseError("non-integer netpbm header field", path, tokens[1][1]) from None
    if maxval != 255:
        raise ParseError("only 8-bit rasters are supported", path, tokens[3][1])
    channels = 3 if expect == "P6" else 1
    body = data[pos:]
    if len(body) != w * h * channels:
        raise ChecksumMismatch(f"{path.name}: expected {w * h * channels} raster bytes, found {len(body)}")
    arr = np.frombuffer(body, dtype=np.uint8)
    return arr.reshape(h, w, 3).copy() if channels == 3 else arr.reshape(h, w).copy()


def _read(path: Path) -> bytes:
    try:
        return path.read_bytes()
    except FileNotFoundError:
        raise ParseError(f"missing file {path.name}", path) from None


def _crc(b: bytes) -> int:
    return zlib.crc32(b) & 0xFFFFFFFF


# --------------------------------------------------------------------------
# text records

def _reals(path: Path, count: int) -> list[float]:
    text = _read(path).decode("ascii", errors="replace")
    values, offset = [], 0
    for tok in text.split():
        offset = text.index(tok, offset)
        try:
            values.append(float(tok))
        except ValueError:
            raise ParseError(f"not a number: {tok!r}", path, offset) from None
        offset += len(tok)
    if len(values) != count:
        raise ParseError(f"expected {count} numbers, found {len(values)}", path, len(text))
    return values


def _pose_text(pose: Pose) -> str:
    r = pose.rotation
    return " ".join(repr(float(v)) for v in list(r.ravel()) + list(pose.translation)) + "\n"


def _object_from_dict(d: dict) -> ObjectSpec:
    d = dict(d)
    d["texture"] = Texture(**d["texture"])
    return ObjectSpec(**d)


# --------------------------------------------------------------------------
# scenes

def save_scene(scene: Scene, path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    k = scene.intrinsics
    (path / "intrinsics.txt").write_text(
        " ".join(repr(v) for v in (k.fx, k.fy, k.cx, k.cy)) + f" {k.width} {k.height}\n")
    frames = []
    for i, (frame, ids) in enumerate(zip(scene.frames, scene.id_masks)):
        names = {"rgb": f"rgb_{i:04d}.ppm", "depth": f"depth_{i:04d}.raw",
                 "id": f"id_{i:04d}.pgm", "pose": f"pose_{i:04d}.txt"}
        write_pnm(path / names["rgb"], frame.rgb)
        write_pnm(path / names["id"], ids)
        (path / names["depth"]).write_bytes(frame.depth.astype("<f4").tobytes())
        (path / names["pose"]).write_text(_pose_text(frame.pose))
        crc = {key: _crc((path / names[key]).read_bytes()) for key in ("rgb", "depth", "id")}
        frames.append({"index": i, **names, "crc32": crc})
    manifest = {"format": FORMAT_VERSION, "scene_id": scene.scene_id,
                "objects": [asdict(o) for o in scene.objects], "ground": asdict(scene.ground),
                "frames": frames}
    (path / MANIFEST).write_text(json.dumps(manifest, indent=1) + "\n")
    return path


def load_scene(path) -> Scene:
    path = Path(path)
    mpath = path / MANIFEST
    text = _read(mpath).decode("utf-8", errors="replace")
    try:
        manifest = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"manifest is not valid JSON: {exc.msg}", mpath, exc.pos) from None
    for key in ("scene_id", "objects", "frames"):
        if key not in manifest:
            raise ParseError(f"manifest lacks {key!r}", mpath)
    fx, fy, cx, cy, w, h = _reals(path / "intrinsics.txt", 6)
    intrinsics = CameraIntrinsics(fx, fy, cx, cy, int(w), int(h))
    frames, id_masks = [], []
    for entry in manifest["frames"]:
        for key in ("rgb", "depth", "id", "pose"):
            if not (path / entry[key]).exists():
                raise ParseError(f"frame {entry['index']}: missing {entry[key]}", mpath)
        for key in ("rgb", "depth", "id"):
            raw = (path / entry[key]).read_bytes()
            if _crc(raw) != entry["crc32"][key]:
                raise ChecksumMismatch(f"{entry[key]}: CRC32 mismatch")
        rgb = read_pnm(path / entry["rgb"], "P6")
        ids = read_pnm(path / entry["id"], "P5")
        raw = (path / entry["depth"]).read_bytes()
        if len(raw) != 4 * w * h:
            raise ChecksumMismatch(f"{entry['depth']}: expected {4 * int(w * h)} bytes, found {len(raw)}")
        depth = np.frombuffer(raw, dtype="<f4").reshape(int(h), int(w)).astype(np.float32)
        v = _reals(path / entry["pose"], 12)
        try:
            pose = Pose(np.array(v[:9]).reshape(3, 3), np.array(v[9:]))
        except ValueError as exc:
            raise ParseError(f"invalid pose: {exc}", path / entry["pose"]) from None
        try:
            frames.append(RgbdFrame(rgb, depth, pose, intrinsics))
        except ValueError as exc:
            raise ParseError(f"frame {entry['index']}: {exc}", mpath) from None
        id_masks.append(ids)
    try:
        objects = [_object_from_dict(o) for o in manifest["objects"]]
        ground = GroundPlane(manifest["ground"]["half_extent"], Texture(**manifest["ground"]["texture"]))
    except (TypeError, ValueError, KeyError) as exc:
        raise ParseError(f"bad object record: {exc}", mpath) from None
    return Scene(manifest["scene_id"], objects, frames, id_masks, ground)


def save_dataset(scenes, path) -> Path:
    path = Path(path)
    for i, scene in enumerate(scenes):
        save_scene(scene, path / f"scene_{i:03d}")
    return path


def load_dataset(path) -> list[Scene]:
    """One scene directory, or a directory of scene directories (sorted by name)."""
    path = Path(path)
    if (path / MANIFEST).exists():
        return [load_scene(path)]
    if not path.is_dir():
        raise ParseError("no such dataset directory", path)
    subdirs = sorted(p for p in path.iterdir() if (p / MANIFEST).exists())
    if not subdirs:
        raise ParseError("directory holds no scene manifests", path)
    return [load_scene(p) for p in subdirs]
