import numpy as np
import pytest

from hygroflow.errors import InvalidParameterError
from hygroflow.flowio import (FLOW_MAGIC, load_float_tiff, load_image_png,
                              load_manifest, load_mask_png, load_rgb_raster,
                              read_flow, save_float_tiff, save_image_png,
                              save_manifest, save_mask_png, write_csv,
                              write_flow)
from hygroflow.grids import FlowField


class TestFlowRaster:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        flow = FlowField(rng.standard_normal((13, 17)).astype(np.float32).astype(float),
                         rng.standard_normal((13, 17)).astype(np.float32).astype(float))
        path = tmp_path / "f.dflo"
        write_flow(path, flow)
        back = read_flow(path)
        assert back.shape == (13, 17)
        assert np.array_equal(back.vx, flow.vx)
        assert np.array_equal(back.vy, flow.vy)

    def test_layout_is_documented_binary(self, tmp_path):
        flow = FlowField(np.full((2, 3), 1.0), np.full((2, 3), -2.0))
        path = tmp_path / "f.dflo"
        write_flow(path, flow)
        raw = path.read_bytes()
        assert raw[:4] == FLOW_MAGIC
        w, h = np.frombuffer(raw[4:12], dtype="<i4")
        assert (w, h) == (3, 2)
        data = np.frombuffer(raw[12:], dtype="<f4").reshape(2, 3, 2)
        assert np.all(data[:, :, 0] == 1.0)
        assert np.all(data[:, :, 1] == -2.0)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.dflo"
        path.write_bytes(b"NOPE" + b"\x00" * 32)
        with pytest.raises(InvalidParameterError):
            read_flow(path)

    def test_truncated_rejected(self, tmp_path):
        flow = FlowField(np.ones((4, 4)), np.ones((4, 4)))
        path = tmp_path / "f.dflo"
        write_flow(path, flow)
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(InvalidParameterError):
            read_flow(path)


class TestImagePng:
    def test_round_trip_with_range(self, tmp_path):
        rng = np.random.default_rng(1)
        img = rng.uniform(-0.5, 2.0, (20, 24))
        path = tmp_path / "img.png"
        lo, hi = save_image_png(path, img)
        back = load_image_png(path, (lo, hi))
        assert np.abs(back - img).max() <= (hi - lo) / 65535.0

    def test_unit_range_default(self, tmp_path):
        img = np.linspace(0, 1, 64).reshape(8, 8)
        path = tmp_path / "img.png"
        lo, hi = save_image_png(path, img, value_range=(0.0, 1.0))
        assert (lo, hi) == (0.0, 1.0)
        back = load_image_png(path)
        assert np.abs(back - img).max() <= 1.0 / 65535.0

    def test_constant_image_survives(self, tmp_path):
        img = np.full((5, 5), 0.75)
        path = tmp_path / "img.png"
        lo, hi = save_image_png(path, img)
        back = load_image_png(path, (lo, hi))
        assert np.allclose(back, 0.75, atol=1e-4)

    def test_byte_determinism(self, tmp_path):
        img = np.random.default_rng(2).random((16, 16))
        p1, p2 = tmp_path / "a.png", tmp_path / "b.png"
        save_image_png(p1, img, (0.0, 1.0))
        save_image_png(p2, img, (0.0, 1.0))
        assert p1.read_bytes() == p2.read_bytes()


class TestMaskPng:
    def test_round_trip(self, tmp_path):
        mask = np.random.default_rng(3).random((12, 9)) > 0.5
        path = tmp_path / "m.png"
        save_mask_png(path, mask)
        assert np.array_equal(load_mask_png(path), mask)

    def test_values_are_0_or_255(self, tmp_path):
        mask = np.eye(6, dtype=bool)
        path = tmp_path / "m.png"
        save_mask_png(path, mask)
        from PIL import Image
        raw = np.asarray(Image.open(path))
        assert set(np.unique(raw)) <= {0, 255}


class TestFloatTiff:
    def test_round_trip_float32(self, tmp_path):
        field = np.random.default_rng(4).standard_normal((10, 11)) * 1e-3
        path = tmp_path / "f.tif"
        save_float_tiff(path, field)
        back = load_float_tiff(path)
        assert np.array_equal(back, field.astype(np.float32).astype(np.float64))


class TestRgbRaster:
    def test_dpi_metadata_round_trip(self, tmp_path):
        from PIL import Image
        arr = (np.random.default_rng(5).random((8, 8, 3)) * 255).astype(np.uint8)
        path = tmp_path / "scan.png"
        Image.fromarray(arr, mode="RGB").save(path, dpi=(300, 300))
        rgb, dpi = load_rgb_raster(path)
        assert rgb.shape == (8, 8, 3)
        # PNG stores dpi as integer pixels-per-meter, hence the quantization
        assert dpi == pytest.approx(300.0, abs=0.01)
        assert np.allclose(rgb, arr / 255.0)

    def test_missing_dpi_returns_none(self, tmp_path):
        from PIL import Image
        arr = np.zeros((4, 4, 3), dtype=np.uint8)
        path = tmp_path / "scan.png"
        Image.fromarray(arr, mode="RGB").save(path)
        _, dpi = load_rgb_raster(path)
        assert dpi is None


class TestManifest:
    def test_round_trip_sorted(self, tmp_path):
        manifest = {"faces": {"B": {"x": 1}, "A": {"y": 2.5}}}
        save_manifest(tmp_path, manifest)
        assert load_manifest(tmp_path) == manifest
        text = (tmp_path / "manifest.json").read_text()
        assert text.index('"A"') < text.index('"B"')

    def test_missing_manifest_is_empty(self, tmp_path):
        assert load_manifest(tmp_path) == {}

    def test_byte_determinism(self, tmp_path):
        manifest = {"a": 1.25, "b": [1, 2, 3], "c": {"k": "v"}}
        save_manifest(tmp_path, manifest)
        first = (tmp_path / "manifest.json").read_bytes()
        save_manifest(tmp_path, manifest)
        assert (tmp_path / "manifest.json").read_bytes() == first


class TestCsv:
    def test_pinned_float_format(self, tmp_path):
        path = tmp_path / "t.csv"
        write_csv(path, ["a", "b", "c"], [[1, 0.001, True], [2, 1 / 3, False]])
        lines = path.read_text().splitlines()
        assert lines[0] == "a,b,c"
        assert lines[1] == "1,0.001,1"
        assert lines[2] == "2,0.333333333333,0"

    def test_byte_determinism(self, tmp_path):
        rows = [[i, i * np.pi, i % 2 == 0] for i in range(20)]
        p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
        write_csv(p1, ["i", "v", "f"], rows)
        write_csv(p2, ["i", "v", "f"], rows)
        assert p1.read_bytes() == p2.read_bytes()
