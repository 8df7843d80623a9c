"""Object assets: box-union models, surface keypoint sampling, YAML asset files.

Objects are unions of axis-aligned boxes in the object frame (z up). Keypoints
are sampled area-uniformly on the admissible surface and regenerated
deterministically from the seed recorded in the asset file.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .geometry import box_signed_distance

NUM_KEYPOINTS = 256
DEDUP_TOL = 1e-6
ASSET_DIR_ENV = "CONTACTMPC_ASSETS"


class AssetError(ValueError):
    pass


@dataclass
class ObjectModel:
    name: str
    boxes: list  # [(center (3,), half_extents (3,)), ...]
    mass: float
    inertia: float
    characteristic_size: float
    keypoints: np.ndarray  # (N, 3) object frame
    keypoint_normals: np.ndarray  # (N, 3) outward normal of the owning face
    keypoint_mode: str = "side-faces"
    keypoint_seed: int = 0

    def __post_init__(self):
        self.boxes = [
            (np.asarray(c, dtype=np.float64), np.asarray(h, dtype=np.float64))
            for c, h in self.boxes
        ]
        if any(np.any(h <= 0) for _, h in self.boxes):
            raise AssetError(f"{self.name}: half extents must be strictly positive")
        if self.characteristic_size <= 0:
            raise AssetError(f"{self.name}: characteristic_size must be positive")

    @property
    def num_keypoints(self) -> int:
        return self.keypoints.shape[0]

    def corners(self) -> np.ndarray:
        """All box corners in the object frame, (num_boxes * 8, 3), box-major."""
        signs = np.array(
            [[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)],
            dtype=np.float64,
        )
        out = [c + signs * h for c, h in self.boxes]
        return np.concatenate(out, axis=0)

    def bottom_z(self) -> float:
        return min(float(c[2] - h[2]) for c, h in self.boxes)

    def top_z(self) -> float:
        return max(float(c[2] + h[2]) for c, h in self.boxes)


def _face_list(boxes, mode: str):
    """Faces as (box index, axis, sign, area); side-faces drops ±z faces."""
    faces = []
    for bi, (c, h) in enumerate(boxes):
        for axis in range(3):
            if mode == "side-faces" and axis == 2:
                continue
            others = [i for i in range(3) if i != axis]
            area = 4.0 * h[others[0]] * h[others[1]]
            for sign in (-1.0, 1.0):
                faces.append((bi, axis, sign, area))
    return faces


def sample_keypoints(boxes, n: int = NUM_KEYPOINTS, mode: str = "side-faces", seed: int = 0):
    """Area-uniform surface keypoints on a box union.

    Points landing strictly inside the union (covered by another box) are
    rejected, so the result is uniform over the exposed admissible surface.
    Returns (points (n,3), outward face normals (n,3)); deterministic per seed.
    """
    if mode not in ("side-faces", "all-faces"):
        raise AssetError(f"unknown keypoint mode {mode!r}")
    boxes = [(np.asarray(c, dtype=np.float64), np.asarray(h, dtype=np.float64)) for c, h in boxes]
    faces = _face_list(boxes, mode)
    total_area = sum(f[3] for f in faces)
    if not faces or total_area <= 0:
        raise AssetError("admissible surface area is zero")
    weights = np.array([f[3] for f in faces]) / total_area

    rng = np.random.default_rng(seed)
    points = np.empty((n, 3))
    normals = np.empty((n, 3))
    count = 0
    attempts = 0
    max_attempts = 1000 * n
    while count < n:
        attempts += 1
        if attempts > max_attempts:
            raise AssetError("keypoint sampling exhausted; surface almost fully interior")
        bi, axis, sign, _ = faces[rng.choice(len(faces), p=weights)]
        c, h = boxes[bi]
        p = c.copy()
        p[axis] = c[axis] + sign * h[axis]
        for other_axis in range(3):
            if other_axis == axis:
                continue
            p[other_axis] = c[other_axis] + h[other_axis] * rng.uniform(-1.0, 1.0)
        # reject points covered by another box's interior
        covered = False
        for bj, (cj, hj) in enumerate(boxes):
            if bj != bi and box_signed_distance(p, cj, hj) < -1e-9:
                covered = True
                break
        if covered:
            continue
        if count and np.min(np.linalg.norm(points[:count] - p, axis=1)) < DEDUP_TOL:
            continue
        points[count] = p
        normals[count] = 0.0
        normals[count, axis] = sign
        count += 1
    return points, normals


# ---------------------------------------------------------------------------
# Asset file IO
# ---------------------------------------------------------------------------


def model_from_dict(data: dict) -> ObjectModel:
    try:
        boxes = [(b["center"], b["half_extents"]) for b in data["boxes"]]
        mode = data.get("keypoint_mode", "side-faces")
        seed = int(data.get("keypoint_seed", 0))
        points, normals = sample_keypoints(boxes, NUM_KEYPOINTS, mode, seed)
        return ObjectModel(
            name=data["name"],
            boxes=boxes,
            mass=float(data["mass"]),
            inertia=float(data["inertia"]),
            characteristic_size=float(data["characteristic_size"]),
            keypoints=points,
            keypoint_normals=normals,
            keypoint_mode=mode,
            keypoint_seed=seed,
        )
    except KeyError as exc:
        raise AssetError(f"asset file missing field {exc}") from exc


def model_to_dict(model: ObjectModel) -> dict:
    return {
        "name": model.name,
        "boxes": [
            {"center": [float(x) for x in c], "half_extents": [float(x) for x in h]}
            for c, h in model.boxes
        ],
        "mass": model.mass,
        "inertia": model.inertia,
        "characteristic_size": model.characteristic_size,
        "keypoint_mode": model.keypoint_mode,
        "keypoint_seed": model.keypoint_seed,
    }


def load_asset_file(path) -> ObjectModel:
    with open(path, "r", encoding="utf-8") as f:
        data = yaml.safe_load(f)
    return model_from_dict(data)


def save_asset_file(model: ObjectModel, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        yaml.safe_dump(model_to_dict(model), f, sort_keys=False)


def asset_search_dirs():
    dirs = []
    env = os.environ.get(ASSET_DIR_ENV)
    if env:
        dirs.append(Path(env))
    dirs.append(Path(resources.files("contactmpc") / "assets"))
    return dirs


def load_asset(name: str) -> ObjectModel:
    """Load an asset by name, searching $CONTACTMPC_ASSETS then built-ins."""
    if os.path.sep in name or name.endswith((".yaml", ".yml")):
        return load_asset_file(name)
    for d in asset_search_dirs():
        candidate = Path(d) / f"{name}.yaml"
        if candidate.exists():
            return load_asset_file(candidate)
    raise AssetError(f"asset {name!r} not found in {[str(d) for d in asset_search_dirs()]}")
