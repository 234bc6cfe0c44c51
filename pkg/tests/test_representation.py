import numpy as np
import pytest

from viton.representation import (
    ARMS, FACE, HAIR, LEGS, NUM_CHANNELS, UPPER_CLOTHES, PoseKeypoints, assemble_representation,
    build_body_mask, build_pose_heatmap, build_representation, coarsen_mask,
    decompose_representation, extract_face_hair, validate_parse,
)


def keypoints_with(first=(100.0, 50.0, 1.0)):
    pts = np.zeros((18, 3))
    pts[0] = first
    return PoseKeypoints(pts)


def test_heatmap_block_placement():
    heat = build_pose_heatmap(keypoints_with(), (256, 192))
    assert heat.shape == (18, 256, 192)
    rows, cols = np.nonzero(heat[0])
    assert (rows.min(), rows.max(), cols.min(), cols.max()) == (45, 55, 95, 105)
    assert heat[0].sum() == 121
    assert not heat[1:].any()  # confidence 0 elsewhere


def test_heatmap_corner_is_clipped():
    heat = build_pose_heatmap(keypoints_with((0.0, 0.0, 1.0)), (256, 192))
    assert heat[0].sum() == 36 and heat[0, :6, :6].all()


def test_heatmap_is_binary_for_partial_confidence():
    heat = build_pose_heatmap(keypoints_with((10.0, 10.0, 0.3)), (32, 32))
    assert set(np.unique(heat)) == {0.0, 1.0}


def test_keypoint_validation():
    with pytest.raises(ValueError):
        PoseKeypoints(np.zeros((17, 3)))
    pts = np.zeros((18, 3))
    pts[3, 2] = 1.5
    with pytest.raises(ValueError):
        PoseKeypoints(pts)


def test_body_mask_extremes():
    assert not build_body_mask(np.zeros((256, 192), np.uint8), (256, 192)).any()
    full = build_body_mask(np.full((256, 192), UPPER_CLOTHES, np.uint8), (256, 192))
    assert full.shape == (1, 256, 192) and full.all()


def test_body_mask_grid_is_16_by_12():
    parse = np.zeros((256, 192), np.uint8)
    parse[40:200, 50:150] = ARMS
    _, low = coarsen_mask(np.isin(parse, (UPPER_CLOTHES, ARMS, LEGS)))
    assert low.shape == (16, 12)


def test_body_mask_excludes_face_and_hair():
    parse = np.full((64, 48), FACE, np.uint8)
    assert not build_body_mask(parse, (64, 48)).any()


def test_body_mask_idempotent(desk_sample):
    body = build_body_mask(desk_sample.parse, (64, 64))[0]
    again, _ = coarsen_mask(body)
    assert np.array_equal(again, body)


def test_face_hair_examples(rng):
    image = rng.random((8, 6, 3)).astype(np.float32)
    assert not extract_face_hair(np.zeros((8, 6), np.uint8), image).any()
    assert np.array_equal(extract_face_hair(np.full((8, 6), FACE, np.uint8), image),
                          image.transpose(2, 0, 1))
    parse = np.zeros((8, 6), np.uint8)
    parse[3, 2] = HAIR
    image[3, 2] = (0.2, 0.4, 0.6)
    out = extract_face_hair(parse, image)
    assert np.array_equal(out[:, 3, 2], np.float32([0.2, 0.4, 0.6]))
    out[:, 3, 2] = 0
    assert not out.any()


def test_assemble_shapes_and_body_channel(rng):
    pose = (rng.random((18, 256, 192)) > 0.9).astype(np.float32)
    body = rng.random((1, 256, 192)).astype(np.float32)
    face = rng.random((3, 256, 192)).astype(np.float32)
    rep = assemble_representation(pose, body, face)
    assert rep.shape == (NUM_CHANNELS, 256, 192) == (22, 256, 192)
    assert np.array_equal(rep[18], body[0])
    parts = decompose_representation(rep)
    assert all(np.array_equal(a, b) for a, b in zip(parts, (pose, body, face)))
    zero = assemble_representation(np.zeros((18, 4, 4)), np.zeros((1, 4, 4)), np.zeros((3, 4, 4)))
    assert not zero.any()


def test_assemble_rejects_mismatch():
    with pytest.raises(ValueError):
        assemble_representation(np.zeros((18, 4, 4)), np.zeros((1, 4, 5)), np.zeros((3, 4, 4)))
    with pytest.raises(ValueError):
        assemble_representation(np.zeros((17, 4, 4)), np.zeros((1, 4, 4)), np.zeros((3, 4, 4)))


def test_unknown_parse_label():
    with pytest.raises(ValueError, match="unknown label"):
        validate_parse(np.full((4, 4), 9))


def test_full_representation_ranges(desk_sample):
    rep = build_representation(desk_sample.keypoints, desk_sample.parse, desk_sample.person, (64, 64))
    assert rep.shape == (22, 64, 64)
    assert set(np.unique(rep[:18])) <= {0.0, 1.0}
    assert rep[18:].min() >= 0 and rep[18:].max() <= 1
