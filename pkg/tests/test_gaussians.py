"""Splat container validation, growth, and PLY round-trip tests."""

import numpy as np
import pytest

from splatscan.gaussians import GaussianMap

from conftest import random_map


class TestValidation:
    def test_empty_default(self):
        gmap = GaussianMap()
        assert len(gmap) == 0
        gmap.validate()

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            GaussianMap(centers=np.zeros((2, 3)), colors=np.zeros((2, 3)),
                        radii=np.ones(2), opacities=np.full(3, 0.5))

    def test_bad_values_rejected(self):
        ok = dict(centers=np.zeros((1, 3)), colors=np.full((1, 3), 0.5),
                  radii=np.ones(1), opacities=np.full(1, 0.5))
        for bad in (
            dict(ok, centers=np.full((1, 3), np.nan)),
            dict(ok, radii=np.zeros(1)),
            dict(ok, radii=np.full(1, np.inf)),
            dict(ok, colors=np.full((1, 3), 1.5)),
            dict(ok, colors=np.full((1, 3), -0.1)),
            dict(ok, opacities=np.full(1, 1.5)),
        ):
            with pytest.raises(ValueError):
                GaussianMap(**bad)

    def test_append_validates_and_grows(self):
        gmap = random_map(np.random.default_rng(0), 5)
        gmap.append(centers=np.zeros((2, 3)), colors=np.full((2, 3), 0.3),
                    radii=np.full(2, 0.1), opacities=np.full(2, 0.4))
        assert len(gmap) == 7
        with pytest.raises(ValueError):
            gmap.append(centers=np.zeros((1, 3)), colors=np.full((1, 3), 0.3),
                        radii=np.zeros(1), opacities=np.full(1, 0.4))
        assert len(gmap) == 7  # failed append leaves the map untouched

    def test_copy_is_independent(self):
        gmap = random_map(np.random.default_rng(1), 4)
        clone = gmap.copy()
        clone.centers[0, 0] += 1.0
        assert gmap.centers[0, 0] != clone.centers[0, 0]


class TestPointCloud:
    def test_threshold_is_strict(self):
        gmap = GaussianMap(centers=np.arange(9.0).reshape(3, 3),
                           colors=np.full((3, 3), 0.5),
                           radii=np.ones(3),
                           opacities=np.array([0.49, 0.5, 0.51]))
        pts = gmap.point_cloud(min_opacity=0.5)
        assert pts.shape == (1, 3)
        np.testing.assert_array_equal(pts[0], [6.0, 7.0, 8.0])

    def test_returns_copy(self):
        gmap = random_map(np.random.default_rng(2), 6)
        pts = gmap.point_cloud(min_opacity=0.0)
        pts[:] = 0.0
        assert gmap.centers.any()


class TestPly:
    def test_roundtrip_at_float32_precision(self, tmp_path):
        gmap = random_map(np.random.default_rng(3), 50)
        path = tmp_path / "map.ply"
        gmap.save_ply(path)
        back = GaussianMap.load_ply(path)
        assert len(back) == 50
        np.testing.assert_allclose(back.centers, gmap.centers, atol=1e-6)
        np.testing.assert_allclose(back.colors, gmap.colors, atol=1e-7)
        np.testing.assert_allclose(back.radii, gmap.radii, atol=1e-7)
        np.testing.assert_allclose(back.opacities, gmap.opacities, atol=1e-7)

    def test_roundtrip_is_idempotent(self, tmp_path):
        gmap = random_map(np.random.default_rng(4), 20)
        first = tmp_path / "a.ply"
        second = tmp_path / "b.ply"
        gmap.save_ply(first)
        GaussianMap.load_ply(first).save_ply(second)
        assert first.read_bytes()[first.read_bytes().find(b"end_header"):] == \
            second.read_bytes()[second.read_bytes().find(b"end_header"):]

    def test_empty_map_roundtrip(self, tmp_path):
        path = tmp_path / "empty.ply"
        GaussianMap().save_ply(path)
        assert len(GaussianMap.load_ply(path)) == 0

    def test_rejects_non_ply(self, tmp_path):
        path = tmp_path / "junk.ply"
        path.write_bytes(b"not a ply at all")
        with pytest.raises(ValueError):
            GaussianMap.load_ply(path)

    def test_rejects_truncated_body(self, tmp_path):
        gmap = random_map(np.random.default_rng(5), 10)
        path = tmp_path / "trunc.ply"
        gmap.save_ply(path)
        data = path.read_bytes()
        path.write_bytes(data[:-12])
        with pytest.raises(ValueError):
            GaussianMap.load_ply(path)
