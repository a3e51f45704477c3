import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import stats

from handkin.depth import (
    BACKGROUND,
    AugmentDraws,
    DepthFrame,
    Intrinsics,
    PipelineConfig,
    augment,
    back_project,
    compute_com,
    crop_recenter_raster,
    downsample,
    draw_augmentation,
    extract_cube,
    preprocess_frame,
    project_points,
    read_hkd1,
    render_points_to_image,
    rescale_raster,
    rotate_raster,
    sample_rng,
    write_hkd1,
)
from handkin.errors import DegenerateInputError, InvalidArgumentError
from handkin.geometry import make_state, rot_z
from handkin.renderer import default_profiles, synthesize
from handkin.topology import joint_index

INTR = Intrinsics(420.0, 420.0, 160.0, 120.0)
CFG = PipelineConfig()
K = CFG.cube_size / CFG.out_size


@pytest.fixture(scope="session")
def rendered():
    return [synthesize(i, "train", default_profiles(), 3) for i in range(12)]


@pytest.fixture(scope="session")
def processed(rendered):
    return [preprocess_frame(s.frame, s.joints, s.sample_id) for s in rendered]


def pixel_of(points, n=CFG.out_size, cube=CFG.cube_size):
    """Orthographic (col, row) of normalized-frame points."""
    p = np.asarray(points)
    return np.floor((p[..., :2] + cube / 2) / (cube / n)).astype(int)


def on_hand(image, pix, tol=1):
    n = image.shape[0]
    hits = []
    for c, r in pix:
        r0, r1, c0, c1 = max(r - tol, 0), min(r + tol + 1, n), max(c - tol, 0), min(c + tol + 1, n)
        hits.append(r0 < r1 and c0 < c1 and bool(np.any(image[r0:r1, c0:c1] < BACKGROUND)))
    return np.array(hits)


class TestFrameTypes:
    def test_rejects_negative_depth(self):
        with pytest.raises(InvalidArgumentError):
            DepthFrame(-np.ones((3, 3)), INTR)

    @pytest.mark.parametrize("field", ["fx", "fy"])
    def test_rejects_bad_intrinsics(self, field):
        kw = dict(fx=1.0, fy=1.0, cx=0.0, cy=0.0)
        kw[field] = 0.0
        with pytest.raises(InvalidArgumentError):
            Intrinsics(**kw)

    def test_project_requires_positive_depth(self):
        with pytest.raises(InvalidArgumentError):
            project_points([[0.0, 0.0, 0.0]], INTR)


class TestCom:
    def _square_frame(self, depth_in=400.0, depth_out=0.0, half=10):
        d = np.full((240, 320), depth_out)
        d[120 - half: 120 + half + 1, 160 - half: 160 + half + 1] = depth_in
        return DepthFrame(d, INTR)

    def test_flat_square(self):
        frame = self._square_frame()
        # joints spanning the square's pixel extent, all at 400 mm
        corners = np.array([[u, v] for u in (150, 170) for v in (110, 130)], dtype=float)
        xyz = np.column_stack([(corners[:, 0] - 160) * 400 / 420, (corners[:, 1] - 120) * 400 / 420, np.full(4, 400.0)])
        joints = np.resize(xyz, (21, 3))
        com = compute_com(joints, frame)
        np.testing.assert_allclose(com, [0.0, 0.0, 400.0], atol=1e-9)

    def test_near_cluster(self):
        rng = np.random.default_rng(0)
        d = np.full((240, 320), 2000.0) + rng.normal(0, 5, (240, 320))
        d[100:140, 140:180] = 350 + rng.normal(0, 2, (40, 40))
        uv = np.array([[130, 90], [190, 150]], dtype=float)  # box wider than the hand patch
        joints = np.resize(np.column_stack([(uv[:, 0] - 160) * 0.8, (uv[:, 1] - 120) * 0.8, [336.0, 336.0]]), (21, 3))
        com = compute_com(joints, DepthFrame(d, INTR))
        assert 340 <= com[2] <= 360
        assert com[2] == pytest.approx(d[100:140, 140:180].mean(), abs=1.0)

    def test_rendered_near_mcp(self, rendered):
        for s in rendered:
            com = compute_com(s.joints, s.frame)
            extent = np.ptp(s.joints, axis=0)
            mcp = s.joints[joint_index("M", "MCP")]
            assert np.all(np.abs(com[:2] - mcp[:2]) <= 0.5 * extent[:2])

    def test_empty_box(self):
        joints = np.resize([[0.0, 0.0, 400.0], [5.0, 5.0, 400.0]], (21, 3))
        with pytest.raises(DegenerateInputError):
            compute_com(joints, DepthFrame(np.zeros((240, 320)), INTR))


class TestCube:
    def test_single_pixel(self):
        d = np.zeros((240, 320))
        d[50, 200] = 450.0
        frame = DepthFrame(d, INTR)
        p = back_project(frame)
        np.testing.assert_allclose(p, [[(200 - 160) * 450 / 420, (50 - 120) * 450 / 420, 450.0]], rtol=1e-15)
        com = p[0]
        pts = extract_cube(frame, com, 300.0)
        np.testing.assert_allclose(pts, (make_state(com).r_cam @ p[0])[None], atol=1e-9)

    def test_all_outside(self):
        d = np.full((240, 320), 3000.0)
        assert extract_cube(DepthFrame(d, INTR), [0, 0, 500.0], 300.0).shape == (0, 3)

    def test_naive_count(self, rendered):
        s = rendered[0]
        com = compute_com(s.joints, s.frame)
        state = make_state(com)
        count = 0
        for v in range(s.frame.height):
            for u in range(s.frame.width):
                z = s.frame.depth[v, u]
                if z <= 0:
                    continue
                p = state.r_cam @ np.array([(u - 160) * z / 420, (v - 120) * z / 420, z])
                p[2] -= state.com_depth
                count += bool(np.all(np.abs(p) <= 150.0))
        assert extract_cube(s.frame, com, 300.0).shape[0] == count

    def test_project_back_project(self, rendered):
        s = rendered[1]
        v, u = np.nonzero(s.frame.depth)
        uv = project_points(back_project(s.frame), INTR)
        assert np.max(np.abs(uv - np.column_stack([u, v]))) < 0.5

    def test_bad_cube(self, rendered):
        with pytest.raises(InvalidArgumentError):
            extract_cube(rendered[0].frame, [0, 0, 500], 0.0)


class TestRasterize:
    def test_empty(self):
        assert np.all(render_points_to_image(np.zeros((0, 3)), 176, 300.0) == BACKGROUND)

    def test_single_center_point(self):
        img = render_points_to_image([[0.0, 0.0, 0.0]], 176, 300.0)
        fg = np.argwhere(img < BACKGROUND)
        assert fg.tolist() == [[88, 88]]
        assert img[88, 88] == 0.0

    def test_impulse_removed(self):
        xs = (np.arange(10) + 0.5) * K - 5 * K
        grid = np.array([[x, y, 30.0] for x in xs for y in xs])
        spike = grid[:, 0].copy()
        grid[np.argmin(np.abs(grid[:, 0]) + np.abs(grid[:, 1])), 2] = -120.0
        img = render_points_to_image(grid, 176, 300.0)
        fg = img[img < BACKGROUND]
        assert fg.size == spike.size
        np.testing.assert_allclose(fg, 0.2)

    @settings(max_examples=30)
    @given(arrays(np.float64, (40, 3), elements=st.floats(-400, 400)))
    def test_range(self, pts):
        img = render_points_to_image(pts, 32, 300.0)
        assert np.all((img >= -1) & (img <= 1))

    def test_processed_invariants(self, processed):
        for p in processed:
            assert p.image.shape == (176, 176)
            assert np.all((p.image >= -1) & (p.image <= 1))
            assert np.any(p.image < BACKGROUND)

    def test_joints_on_hand(self, processed):
        hits = np.concatenate([on_hand(p.image, pixel_of(p.joints_gt)) for p in processed])
        assert hits.mean() >= 0.99


class TestAugment:
    def test_identity_draws(self, processed):
        p = processed[0]
        q = augment(p, draws=AugmentDraws())
        assert q.image.tobytes() == p.image.tobytes()
        np.testing.assert_array_equal(q.joints_gt, p.joints_gt)
        assert q.state == p.state or q.state.to_dict() == p.state.to_dict()
        assert q.provenance["augment"]["scale"] == 1.0

    def test_deterministic(self, processed):
        a = augment(processed[2], sample_rng(5, 2))
        b = augment(processed[2], sample_rng(5, 2))
        assert a.image.tobytes() == b.image.tobytes()
        assert a.joints_gt.tobytes() == b.joints_gt.tobytes()

    def test_needs_randomness(self, processed):
        with pytest.raises(InvalidArgumentError):
            augment(processed[0])

    def test_labels_follow_image(self, processed):
        rng = np.random.default_rng(8)
        hits = []
        for p in processed:
            for _ in range(3):
                q = augment(p, rng)
                pix = pixel_of(q.joints_gt)
                inside = np.all((pix >= 0) & (pix < 176), axis=1)
                hits.append(on_hand(q.image, pix[inside]))
        assert np.concatenate(hits).mean() >= 0.99

    def test_gt_params_updated(self, processed):
        p = processed[3]
        q = augment(p, draws=AugmentDraws(1.1, 0.5, (2.0, -3.0, 1.0)))
        assert q.state.s == pytest.approx(1.1 * p.state.s, rel=1e-9)
        assert q.state.alpha_z == pytest.approx(math.remainder(p.state.alpha_z + 0.5, 2 * math.pi), abs=1e-9)
        np.testing.assert_allclose(q.state.t, 1.1 * rot_z(0.5) @ p.state.t + [2.0, -3.0, 1.0], atol=1e-9)

    def test_draw_statistics(self):
        rng = np.random.default_rng(99)
        draws = [draw_augmentation(rng) for _ in range(20000)]
        scales = np.array([d.scale for d in draws])
        rot = np.array([d.rotation for d in draws])
        tr = np.array([d.translation for d in draws])
        assert scales.min() >= 0.75 and scales.max() <= 1.25
        assert np.all(np.abs(tr) <= 15)
        assert abs(scales.mean() - 1) < 0.004
        assert abs(tr.std() - 4) < 0.1
        assert stats.kstest(rot, stats.uniform(-np.pi, 2 * np.pi).cdf).pvalue > 0.01


class TestRasterStages:
    def test_crop_zero(self, processed):
        img = processed[0].image
        res = crop_recenter_raster(img, [0, 0, 0])
        np.testing.assert_array_equal(res.image, img[24:152, 24:152])
        assert res.offset_px == (24, 24) and not res.clamped

    def test_crop_ten_pixels(self, processed):
        img = processed[0].image
        res = crop_recenter_raster(img, [10 * K, -10 * K, 0.0])
        assert res.offset_px == (34, 14)
        np.testing.assert_array_equal(res.image, img[14:142, 34:162])

    def test_crop_depth_recentered(self, processed):
        img = processed[0].image
        res = crop_recenter_raster(img, [0, 0, 30.0])
        fg = img[24:152, 24:152] < BACKGROUND
        np.testing.assert_allclose(res.image[fg], np.clip(img[24:152, 24:152][fg] - 0.2, -1, 1))
        assert np.all(res.image[~fg] == BACKGROUND)

    def test_crop_clamped(self, processed):
        res = crop_recenter_raster(processed[0].image, [200.0, 0, 0])
        assert res.clamped and res.offset_px[0] == 48

    def test_crop_reprojection(self, processed):
        hits = []
        for p in processed:
            res = crop_recenter_raster(p.image, p.state.t)
            local = p.joints_gt - res.center_mm
            pix = pixel_of(local, 128, 128 * K)
            hits.append(on_hand(res.image, pix))
        assert np.concatenate(hits).mean() >= 0.99

    def test_rotate_follows_joints(self, processed):
        hits = []
        for p in processed:
            img = rotate_raster(p.image, p.state.alpha_z, K)
            hits.append(on_hand(img, pixel_of(p.joints_gt @ rot_z(-p.state.alpha_z).T)))
        assert np.concatenate(hits).mean() >= 0.99

    def test_rescale_follows_joints(self, processed):
        hits = []
        for p in processed:
            img = rescale_raster(p.image, 1.2, K)
            hits.append(on_hand(img, pixel_of(p.joints_gt / 1.2)))
        assert np.concatenate(hits).mean() >= 0.99

    def test_rescale_rejects(self, processed):
        with pytest.raises(InvalidArgumentError):
            rescale_raster(processed[0].image, 0.0, K)

    def test_downsample_block_mean(self):
        img = np.arange(16.0).reshape(4, 4)
        np.testing.assert_array_equal(downsample(img, 2), [[2.5, 4.5], [10.5, 12.5]])
        with pytest.raises(InvalidArgumentError):
            downsample(np.zeros((5, 5)), 2)


class TestHKD1:
    def test_round_trip(self, tmp_path):
        d = np.random.default_rng(0).uniform(0, 900, (7, 5)).astype(np.float32)
        write_hkd1(tmp_path / "f.hkd", d)
        raw = (tmp_path / "f.hkd").read_bytes()
        assert raw[:4] == b"HKD1"
        assert int.from_bytes(raw[4:8], "little") == 5 and int.from_bytes(raw[8:12], "little") == 7
        np.testing.assert_array_equal(read_hkd1(tmp_path / "f.hkd"), d)

    @pytest.mark.parametrize("payload", [b"NOPE" + bytes(8), b"HKD1" + (2).to_bytes(4, "little") * 2 + bytes(3)])
    def test_rejects_malformed(self, tmp_path, payload):
        (tmp_path / "bad.hkd").write_bytes(payload)
        with pytest.raises(InvalidArgumentError):
            read_hkd1(tmp_path / "bad.hkd")
