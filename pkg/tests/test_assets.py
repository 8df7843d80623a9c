import numpy as np
import pytest

from contactmpc.assets import (
    AssetError,
    NUM_KEYPOINTS,
    load_asset,
    load_asset_file,
    model_to_dict,
    sample_keypoints,
    save_asset_file,
)
from contactmpc.geometry import point_strictly_inside_union, union_signed_distance

ALL_ASSETS = ["cube", "letter_t", "letter_l", "letter_i", "letter_e", "letter_h"]


def test_cube_all_faces_on_surface():
    model = load_asset("cube")
    assert model.keypoints.shape == (NUM_KEYPOINTS, 3)
    on_face = np.isclose(np.abs(model.keypoints), 0.05, atol=1e-12)
    assert np.all(on_face.sum(axis=1) >= 1)


def test_side_faces_exclude_top_bottom():
    model = load_asset("letter_i")
    assert np.all(model.keypoint_normals[:, 2] == 0.0)


def test_overlapping_boxes_reject_interior_points():
    boxes = [((0, 0, 0), (0.05, 0.05, 0.02)), ((0.04, 0, 0), (0.05, 0.02, 0.02))]
    points, _ = sample_keypoints(boxes, n=256, mode="side-faces", seed=5)
    # brute-force: no sampled point strictly inside the union
    for p in points:
        assert not point_strictly_inside_union(p, boxes, tol=1e-9)


def test_sampling_deterministic():
    boxes = [((0, 0, 0), (0.05, 0.05, 0.05))]
    a, na = sample_keypoints(boxes, mode="all-faces", seed=42)
    b, nb = sample_keypoints(boxes, mode="all-faces", seed=42)
    assert np.array_equal(a, b) and np.array_equal(na, nb)
    c, _ = sample_keypoints(boxes, mode="all-faces", seed=43)
    assert not np.array_equal(a, c)


@pytest.mark.parametrize("name", ALL_ASSETS)
def test_keypoints_on_union_surface(name):
    model = load_asset(name)
    d = union_signed_distance(model.keypoints, model.boxes)
    assert np.max(np.abs(d)) < 1e-6
    assert model.keypoints.shape == (NUM_KEYPOINTS, 3)
    # pairwise dedup tolerance
    diff = model.keypoints[:, None] - model.keypoints[None, :]
    dist = np.linalg.norm(diff, axis=-1) + np.eye(NUM_KEYPOINTS)
    assert dist.min() >= 1e-6


def test_empty_boxes_invalid():
    with pytest.raises(AssetError):
        sample_keypoints([], mode="side-faces", seed=0)


def test_asset_roundtrip(tmp_path):
    model = load_asset("letter_t")
    path = tmp_path / "t_copy.yaml"
    save_asset_file(model, path)
    again = load_asset_file(path)
    assert again.name == model.name
    np.testing.assert_array_equal(again.keypoints, model.keypoints)
    assert model_to_dict(again) == model_to_dict(model)


def test_asset_dir_env_override(tmp_path, monkeypatch):
    model = load_asset("cube")
    model.name = "custom_cube"
    save_asset_file(model, tmp_path / "custom_cube.yaml")
    monkeypatch.setenv("CONTACTMPC_ASSETS", str(tmp_path))
    loaded = load_asset("custom_cube")
    assert loaded.name == "custom_cube"


def test_missing_asset_raises():
    with pytest.raises(AssetError):
        load_asset("letter_q")
