from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from conftest import random_skeleton
from vvton.geometry import Rect
from vvton.pose import (
    COCO_BONES,
    SCOPE_BONES,
    SCOPE_BOX_ROWS,
    AgnosticMask,
    BoneGraph,
    Skeleton,
    SkeletonSequence,
    compute_joint_directions,
    compute_tracking_windows,
    crop_skeleton,
    load_skeleton_sequence,
    make_agnostic_image,
    make_agnostic_mask,
    preprocess_garment,
    rasterize_skeleton,
    save_skeleton_sequence,
    tight_bbox,
)


def two_joint_skeleton(a, b, width=64, height=64):
    return Skeleton(np.array([[a[0], a[1], 1.0], [b[0], b[1], 1.0]]), width, height)


class TestJointDirections:
    def test_axis_aligned_unit_vector(self):
        skel = two_joint_skeleton((0, 0), (3, 0))
        dirs = compute_joint_directions(skel, BoneGraph(((0, 1),)))
        assert dirs.present[0]
        assert np.allclose(dirs.vectors[0], (1.0, 0.0))

    def test_zero_length_bone_is_missing(self):
        skel = two_joint_skeleton((2, 2), (2, 2))
        dirs = compute_joint_directions(skel, BoneGraph(((0, 1),)))
        assert not dirs.present[0]

    def test_low_confidence_joint_is_missing(self):
        skel = Skeleton(np.array([[0, 0, 1.0], [3, 0, 0.1]]), 64, 64)
        dirs = compute_joint_directions(skel, BoneGraph(((0, 1),)))
        assert not dirs.present[0]

    def test_matches_bruteforce_on_random_skeletons(self, gen):
        for _ in range(20):
            skel = random_skeleton(gen, min_confidence=0.0)
            dirs = compute_joint_directions(skel, COCO_BONES)
            expected = oracles.directions_bruteforce(skel.joints, COCO_BONES.bones)
            for i, exp in enumerate(expected):
                if exp is None:
                    assert not dirs.present[i]
                else:
                    assert dirs.present[i]
                    assert np.allclose(dirs.vectors[i], exp, atol=1e-12)

    def test_unit_norm(self, gen):
        skel = random_skeleton(gen)
        dirs = compute_joint_directions(skel, COCO_BONES)
        norms = np.linalg.norm(dirs.vectors[dirs.present], axis=1)
        assert np.all(np.abs(norms - 1.0) <= 1e-6)

    @given(
        dx=st.integers(-4096, 4096),
        dy=st.integers(-4096, 4096),
    )
    @settings(max_examples=25, deadline=None)
    def test_translation_invariance_bit_identical(self, dx, dy):
        # Joints on an eighth-pixel grid with integer shifts: the translation
        # is exact in float64, so the bone deltas cancel it bit for bit.
        gen = np.random.default_rng(7)
        joints = np.round(gen.uniform(5, 123, (17, 2)) * 8) / 8.0
        data = np.concatenate([joints, np.ones((17, 1))], axis=1)
        skel = Skeleton(data, 128, 128)
        dirs = compute_joint_directions(skel, COCO_BONES)
        moved = compute_joint_directions(skel.translate(dx, dy), COCO_BONES)
        assert np.array_equal(dirs.vectors, moved.vectors)
        assert np.array_equal(dirs.present, moved.present)

    @given(
        dx=st.floats(-500, 500, allow_nan=False),
        dy=st.floats(-500, 500, allow_nan=False),
    )
    @settings(max_examples=25, deadline=None)
    def test_translation_invariance_arbitrary_floats(self, dx, dy):
        # Arbitrary float shifts quantize the inputs themselves, so only
        # near-equality is attainable.
        gen = np.random.default_rng(7)
        skel = random_skeleton(gen)
        dirs = compute_joint_directions(skel, COCO_BONES)
        moved = compute_joint_directions(skel.translate(dx, dy), COCO_BONES)
        assert np.allclose(dirs.vectors, moved.vectors, atol=1e-9)
        assert np.array_equal(dirs.present, moved.present)

    def test_bone_graph_validation(self):
        with pytest.raises(ValueError):
            BoneGraph(((0, 0),))
        skel = two_joint_skeleton((0, 0), (1, 1))
        with pytest.raises(ValueError):
            compute_joint_directions(skel, BoneGraph(((0, 5),)))


class TestTrackingWindows:
    def test_single_frame_rounding(self):
        windows = compute_tracking_windows([Rect(10, 10, 50, 80)], (256, 256), 0.0)
        assert (windows.width, windows.height) == (64, 80)

    def test_identical_bboxes_identical_origins(self):
        boxes = [Rect(30, 40, 50, 60)] * 5
        windows = compute_tracking_windows(boxes, (256, 256), 0.0)
        assert len(set(windows.origins)) == 1
        assert not windows.warnings

    def test_drifting_boxes_constant_size(self):
        boxes = [Rect(10 + 5 * i, 10, 40, 60) for i in range(8)]
        windows = compute_tracking_windows(boxes, (256, 256), 0.0)
        xs = [o[0] for o in windows.origins]
        assert xs == sorted(xs) and xs[0] < xs[-1]
        exp_w, exp_h = oracles.tracking_extent_bruteforce(
            [b.as_list() for b in boxes], 0.0
        )
        assert (windows.width, windows.height) == (exp_w, exp_h)

    def test_uniformity_and_oracle_on_random_boxes(self, gen):
        for _ in range(10):
            n = int(gen.integers(1, 12))
            boxes = []
            for _ in range(n):
                w = int(gen.integers(5, 100))
                h = int(gen.integers(5, 100))
                boxes.append(
                    Rect(int(gen.integers(0, 156)), int(gen.integers(0, 156)), w, h)
                )
            pad = float(gen.uniform(0, 0.3))
            windows = compute_tracking_windows(boxes, (256, 256), pad)
            exp = oracles.tracking_extent_bruteforce([b.as_list() for b in boxes], pad)
            assert (windows.width, windows.height) == exp
            assert windows.width % 16 == 0 and windows.height % 16 == 0
            for i, box in enumerate(boxes):
                assert windows.rect(i).contains(box)
                assert 0 <= windows.origins[i][0] <= 256 - windows.width
                assert 0 <= windows.origins[i][1] <= 256 - windows.height

    def test_oversize_bbox_clamps_with_warning(self):
        windows = compute_tracking_windows([Rect(0, 0, 90, 90)], (100, 100), 0.5)
        assert windows.warnings
        assert windows.width == 96 and windows.height == 96

    def test_tiny_frame_errors(self):
        with pytest.raises(ValueError):
            compute_tracking_windows([Rect(0, 0, 12, 12)], (15, 15), 2.0)


def cross_skeleton(width=64, height=64):
    """Five joints: center + four arms, all confident."""
    joints = np.array(
        [
            [32, 32, 1.0],
            [32, 12, 1.0],
            [32, 52, 1.0],
            [12, 32, 1.0],
            [52, 32, 1.0],
        ]
    )
    return Skeleton(joints, width, height)


class TestAgnosticMask:
    def test_full_scope_large_radius_saturates_bbox(self, gen):
        skel = random_skeleton(gen, width=64, height=64)
        bbox = Rect(8, 8, 48, 48)
        mask = make_agnostic_mask(skel, bbox, dilation_radius=200.0, garment_scope="full")
        expected = np.zeros((64, 64), dtype=np.uint8)
        expected[8:56, 8:56] = 1
        assert np.array_equal(mask.mask, expected)

    def test_half_pixel_radius_vertical_limb(self):
        skel = two_joint_skeleton((20, 10), (20, 30), 64, 64)
        raster = rasterize_skeleton(
            Skeleton(
                np.array([[20, 10, 1.0], [20, 30, 1.0]] + [[0, 0, 0.0]] * 15), 64, 64
            ),
            radius=0.5,
            scope="full",
        )
        ys, xs = np.nonzero(raster)
        assert set(xs) == {20}
        assert ys.min() == 10 and ys.max() == 30

    def test_matches_rasterization_oracle_upper_scope(self):
        gen = np.random.default_rng(5)
        skel = random_skeleton(gen, width=48, height=48)
        bbox = Rect(4, 4, 40, 40)
        mask = make_agnostic_mask(skel, bbox, dilation_radius=3.0, garment_scope="upper")
        row_lo, row_hi = SCOPE_BOX_ROWS["upper"]
        expected = oracles.agnostic_mask_bruteforce(
            skel.joints, SCOPE_BONES["upper"], 3.0, 48, 48, bbox.as_list(), row_lo, row_hi
        )
        assert np.array_equal(mask.mask, expected)

    def test_dilation_monotonicity(self, gen):
        skel = random_skeleton(gen, width=48, height=48)
        bbox = Rect(2, 2, 44, 44)
        previous = None
        for radius in (1.0, 3.0, 6.0, 12.0):
            mask = make_agnostic_mask(skel, bbox, radius, "upper").mask
            if previous is not None:
                assert np.all(previous <= mask)
            previous = mask

    def test_all_joints_missing_errors(self):
        joints = np.zeros((17, 3))
        skel = Skeleton(joints, 64, 64)
        with pytest.raises(ValueError, match="insufficient pose"):
            make_agnostic_mask(skel, Rect(0, 0, 32, 32), 4.0, "full")

    def test_mask_values_binary(self, gen):
        skel = random_skeleton(gen, width=48, height=48)
        mask = make_agnostic_mask(skel, Rect(4, 4, 32, 32), 5.0, "lower")
        assert set(np.unique(mask.mask)) <= {0, 1}


class TestAgnosticImage:
    def test_zero_mask_identity(self, gen):
        frame = gen.integers(0, 256, (32, 32, 3)).astype(np.uint8)
        mask = AgnosticMask(np.zeros((32, 32), dtype=np.uint8))
        assert np.array_equal(make_agnostic_image(frame, mask), frame)

    def test_full_mask_constant(self, gen):
        frame = gen.integers(0, 256, (32, 32, 3)).astype(np.uint8)
        mask = AgnosticMask(np.ones((32, 32), dtype=np.uint8))
        out = make_agnostic_image(frame, mask, fill=128)
        assert np.all(out == 128)

    def test_checkerboard_pixel_exact(self, gen):
        frame = gen.integers(0, 256, (16, 16, 3)).astype(np.uint8)
        board = np.indices((16, 16)).sum(axis=0) % 2
        mask = AgnosticMask(board.astype(np.uint8))
        out = make_agnostic_image(frame, mask, fill=77)
        for y in range(16):
            for x in range(16):
                expected = 77 if board[y, x] else frame[y, x]
                assert np.all(out[y, x] == expected)

    def test_idempotent(self, gen):
        frame = gen.integers(0, 256, (24, 24, 3)).astype(np.uint8)
        mask = AgnosticMask((gen.random((24, 24)) < 0.3).astype(np.uint8))
        once = make_agnostic_image(frame, mask)
        twice = make_agnostic_image(once, mask)
        assert np.array_equal(once, twice)

    def test_resolution_mismatch_errors(self, gen):
        frame = gen.integers(0, 256, (24, 24, 3)).astype(np.uint8)
        mask = AgnosticMask(np.zeros((16, 16), dtype=np.uint8))
        with pytest.raises(ValueError, match="resolution"):
            make_agnostic_image(frame, mask)


class TestGarment:
    def test_full_mask_resize_only(self, gen):
        rgb = gen.integers(0, 256, (64, 64, 3)).astype(np.uint8)
        mask = np.ones((64, 64), dtype=np.uint8)
        out = preprocess_garment(rgb, mask, (64, 64))
        assert out.rgb.shape == (64, 64, 3)
        assert out.foreground_mask.all()

    def test_tight_bbox_min_max_scan(self):
        mask = np.zeros((40, 30), dtype=np.uint8)
        mask[10:21, 5:16] = 1
        box = tight_bbox(mask)
        assert (box.x, box.y, box.w, box.h) == (5, 10, 11, 11)

    def test_background_white_outside_foreground(self, gen):
        rgb = gen.integers(0, 200, (50, 40, 3)).astype(np.uint8)
        mask = np.zeros((50, 40), dtype=np.uint8)
        mask[12:30, 8:25] = 1
        out = preprocess_garment(rgb, mask, (64, 64))
        background = out.foreground_mask == 0
        assert np.all(out.rgb[background] == 255)

    def test_empty_foreground_errors(self, gen):
        rgb = gen.integers(0, 256, (20, 20, 3)).astype(np.uint8)
        with pytest.raises(ValueError, match="no garment foreground"):
            preprocess_garment(rgb, np.zeros((20, 20), dtype=np.uint8), (32, 32))

    def test_white_canvas_fixpoint(self, gen):
        rgb = gen.integers(0, 256, (48, 48, 3)).astype(np.uint8)
        mask = np.zeros((48, 48), dtype=np.uint8)
        mask[10:40, 10:40] = 1
        out = preprocess_garment(rgb, mask, (64, 64))
        canvas = np.full_like(out.rgb, 255)
        canvas[out.foreground_mask == 1] = out.rgb[out.foreground_mask == 1]
        assert np.array_equal(canvas, out.rgb)


class TestSkeletonIO:
    def test_json_round_trip(self, gen, tmp_path):
        frames = [random_skeleton(gen) for _ in range(4)]
        seq = SkeletonSequence(frames, fps=12.0)
        path = tmp_path / "seq.json"
        save_skeleton_sequence(seq, path)
        loaded = load_skeleton_sequence(path)
        assert loaded.fps == 12.0
        assert len(loaded) == 4
        for a, b in zip(seq.frames, loaded.frames):
            assert np.array_equal(a.joints, b.joints)

    def test_crop_skeleton_translates(self, gen):
        skel = random_skeleton(gen)
        window = Rect(10, 20, 64, 64)
        cropped = crop_skeleton(skel, window)
        assert cropped.frame_width == 64
        assert np.allclose(cropped.joints[:, 0], skel.joints[:, 0] - 10)
        assert np.allclose(cropped.joints[:, 1], skel.joints[:, 1] - 20)
