import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hmtnet.camera import CubeCrop, Intrinsics, project
from hmtnet.data_io import SyntheticSpec, _render, generate_synthetic
from hmtnet.errors import ContractError, EmptyCropError, NoHandError
from hmtnet.heatmap import decode_argmax, labels_to_heatmaps
from hmtnet.preprocessing import (
    AugmentParams,
    AugmentRanges,
    DepthFrame,
    augment,
    compute_com,
    crop_normalize,
    denormalize_prediction,
    load_patch,
    normalize_labels,
    patch_to_points,
    points_to_patch,
    save_patch,
)

K = Intrinsics(241.42, 241.42, 160.0, 120.0)
IDENTITY = AugmentParams(0.0, 1.0, (0.0, 0.0, 0.0))


def blank():
    return np.zeros((240, 320))


@pytest.fixture(scope="module")
def synth():
    return generate_synthetic(SyntheticSpec(seed=5), 6)


def test_com_examples():
    d = blank()
    d[120, 160] = 500.0
    np.testing.assert_allclose(compute_com(DepthFrame(d, K)).center, (0.0, 0.0, 500.0))
    d = blank()
    d[120, 159], d[120, 161] = 400.0, 440.0
    assert compute_com(DepthFrame(d, K)).center[2] == pytest.approx(420.0)
    d[10, 10] = 900.0  # beyond the 200 mm band: ignored
    assert compute_com(DepthFrame(d, K)).center[2] == pytest.approx(420.0)
    assert compute_com(DepthFrame(d, K)).half_extent == (125.0, 125.0, 125.0)
    with pytest.raises(NoHandError):
        compute_com(DepthFrame(blank(), K))


def test_com_near_planted_centroid(synth):
    for i in range(len(synth)):
        com = compute_com(synth.frame(i)).center_array
        assert np.linalg.norm(com - np.asarray(synth.samples[i].com)) < 2.0


def test_depth_frame_validation():
    with pytest.raises(ContractError):
        DepthFrame(np.full((4, 4), -1.0), K)


def test_crop_normalize_values():
    crop = CubeCrop((0.0, 0.0, 500.0))
    d = blank()
    d[118:123, 158:163] = 500.0
    patch = crop_normalize(DepthFrame(d, K), crop)
    assert patch.values.shape == (96, 96)
    assert patch.values[47, 47] == 0.0 and patch.values[0, 0] == 1.0
    for depth, expected in ((375.0, -1.0), (625.0, 1.0), (450.0, -0.4)):
        d2 = blank()
        d2[118:123, 158:163] = depth
        assert crop_normalize(DepthFrame(d2, K), crop).values[47, 47] == pytest.approx(expected)
    d3 = blank()
    d3[118:123, 158:163] = 300.0  # in front of the cube: treated as background
    assert crop_normalize(DepthFrame(d3, K), crop).values[47, 47] == 1.0


def test_crop_outside_image():
    far = CubeCrop((5000.0, 0.0, 500.0))
    with pytest.raises(EmptyCropError):
        crop_normalize(DepthFrame(blank(), K), far)


def test_patch_range_and_reconstruction(synth):
    for i in range(len(synth)):
        frame = synth.frame(i)
        crop = compute_com(frame)
        patch = crop_normalize(frame, crop)
        assert patch.values.min() >= -1.0 and patch.values.max() <= 1.0
        pts, cells = patch_to_points(patch, K)
        # each reconstructed point lies on the visible surface of the original frame
        uvd = project(pts, K)
        cols = np.rint(uvd[:, 0]).astype(int)
        rows = np.rint(uvd[:, 1]).astype(int)
        np.testing.assert_allclose(uvd[:, 2], frame.depth[rows, cols], atol=1e-6)
        back = points_to_patch(pts, crop, K)
        spacing = 1.0
        assert np.abs(back - cells[:, ::-1]).max() <= spacing


def test_normalize_examples():
    crop = CubeCrop((10.0, -20.0, 480.0))
    np.testing.assert_array_equal(normalize_labels([[10.0, -20.0, 480.0]], crop), [0, 0, 0])
    np.testing.assert_array_equal(normalize_labels([[135.0, -20.0, 480.0]], crop), [1, 0, 0])
    np.testing.assert_array_equal(normalize_labels([[500.0, -20.0, 480.0]], crop), [1, 0, 0])  # clamped
    np.testing.assert_array_equal(denormalize_prediction(np.zeros(6), crop), [crop.center] * 2)
    np.testing.assert_array_equal(denormalize_prediction(np.ones(3), crop), [[135.0, 105.0, 605.0]])
    with pytest.raises(ContractError):
        denormalize_prediction(np.zeros(7), crop)
    with pytest.raises(ContractError):
        denormalize_prediction(np.zeros(6), crop, J=3)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=6, max_size=6),
       st.floats(-80, 80), st.floats(-80, 80), st.floats(300, 900), st.floats(50, 200))
def test_normalize_roundtrip_property(vec, x, y, z, h):
    crop = CubeCrop((x, y, z), h)
    vec = np.asarray(vec)
    joints = denormalize_prediction(vec, crop)
    np.testing.assert_allclose(normalize_labels(joints, crop), vec, rtol=0, atol=1e-12)
    np.testing.assert_allclose(denormalize_prediction(normalize_labels(joints, crop), crop), joints, atol=1e-9)


def test_augment_identity(synth):
    frame, joints = synth.frame(0), synth.joints(0)
    crop = compute_com(frame)
    values, labels, used = augment(frame, crop, joints, IDENTITY)
    np.testing.assert_array_equal(values, crop_normalize(frame, crop).values)
    np.testing.assert_allclose(labels, normalize_labels(joints, crop), atol=1e-12)
    assert used == crop


def test_augment_quarter_turn_label():
    d = blank()
    d[100:140, 140:180] = 500.0
    crop = CubeCrop((0.0, 0.0, 500.0))
    joint = [[62.5, 0.0, 500.0]]
    _, labels, _ = augment(DepthFrame(d, K), crop, joint, AugmentParams(90.0, 1.0, (0.0, 0.0, 0.0)))
    # x right, y down in the image: +90 degrees turns +x into +y
    np.testing.assert_allclose(labels, [0.0, 0.5, 0.0], atol=1e-9)


def test_augment_scale_and_translation(synth):
    frame, joints = synth.frame(1), synth.joints(1)
    crop = compute_com(frame)
    _, labels, used = augment(frame, crop, joints, AugmentParams(0.0, 1.1, (5.0, -3.0, 8.0)))
    np.testing.assert_allclose(used.half_extent, (137.5,) * 3)
    np.testing.assert_allclose(used.center, crop.center_array + [5.0, -3.0, 8.0])
    np.testing.assert_allclose(labels, normalize_labels(joints, used), atol=1e-12)


def test_augment_heatmaps_commute_with_rotation():
    # crop centred on the optical axis so patch and label rotation share a centre
    rng = np.random.default_rng(3)
    d = blank()
    d[60:180, 100:220] = 520.0
    crop = CubeCrop((0.0, 0.0, 500.0))
    for _ in range(20):
        joints = np.column_stack([rng.uniform(-90, 90, 4), rng.uniform(-90, 90, 4), rng.uniform(420, 580, 4)])
        angle = rng.uniform(-180, 180)
        _, lab_rot, _ = augment(DepthFrame(d, K), crop, joints, AugmentParams(angle, 1.0, (0.0, 0.0, 0.0)))
        maps = labels_to_heatmaps(normalize_labels(joints, crop), 4)
        t = np.deg2rad(angle)
        centre = 11.5
        for j, h in enumerate(labels_to_heatmaps(lab_rot, 4)):
            # sub-cell peak of the rendered map: intensity centroid near its argmax
            au, av = decode_argmax(maps[j])
            win = maps[j][max(av - 3, 0):av + 4, max(au - 3, 0):au + 4]
            vv, uu = np.mgrid[max(av - 3, 0):av + 4, max(au - 3, 0):au + 4]
            u, v = (win * uu).sum() / win.sum(), (win * vv).sum() / win.sum()
            if not (3 <= au <= 20 and 3 <= av <= 20):
                continue  # truncated window would bias the centroid
            ru = np.cos(t) * (u - centre) - np.sin(t) * (v - centre) + centre
            rv = np.sin(t) * (u - centre) + np.cos(t) * (v - centre) + centre
            got = decode_argmax(h)
            if 0 <= ru <= 23 and 0 <= rv <= 23:
                assert np.hypot(got[0] - ru, got[1] - rv) <= 1.0 + 1e-9


def test_augment_keeps_image_and_labels_consistent():
    # a lone sphere: its nearest surface point is the joint's own projection
    rng = np.random.default_rng(4)
    ranges = AugmentRanges()
    checked = 0
    for _ in range(15):
        centre = np.array([rng.uniform(-40, 40), rng.uniform(-40, 40), rng.uniform(420, 600)])
        zbuf = _render([(centre, 12.0)], K, 320, 240)
        frame = DepthFrame(np.where(np.isfinite(zbuf), zbuf, 0.0), K)
        crop = compute_com(frame)
        joint = centre + rng.uniform(-30, 30, 3) * [1, 1, 0]
        zbuf2 = _render([(centre, 12.0), (joint - [0, 0, 40.0], 6.0)], K, 320, 240)
        frame = DepthFrame(np.where(np.isfinite(zbuf2), zbuf2, 0.0), K)
        marker = joint - [0, 0, 40.0]
        params = ranges.sample(rng)
        values, labels, used = augment(frame, crop, [marker], params)
        expected = points_to_patch(denormalize_prediction(labels, used), used, K)[0]
        if np.abs(labels).max() >= 1.0:
            continue  # clamped label: no exact position to compare against
        r, c = np.unravel_index(np.argmin(values), values.shape)
        assert np.hypot(c - expected[0], r - expected[1]) <= 2.0
        checked += 1
    assert checked >= 10


def test_augment_ranges_sample():
    rng = np.random.default_rng(0)
    ranges = AugmentRanges(30.0, (0.9, 1.1), 10.0)
    for _ in range(50):
        p = ranges.sample(rng)
        assert -30 <= p.rotation <= 30 and 0.9 <= p.scale <= 1.1
        assert np.all(np.abs(p.translation) <= 10.0)
    with pytest.raises(ContractError):
        AugmentParams(0.0, 0.0, (0.0, 0.0, 0.0))


def test_patch_dump_roundtrip(tmp_path, synth):
    frame = synth.frame(2)
    patch = crop_normalize(frame, compute_com(frame))
    save_patch(tmp_path / "p.bin", patch)
    back = load_patch(tmp_path / "p.bin")
    np.testing.assert_array_equal(back.values, patch.values.astype(np.float32))
    assert back.crop == patch.crop
    assert (tmp_path / "p.bin").stat().st_size == 4 + 4 + 48 + 96 * 96 * 4
