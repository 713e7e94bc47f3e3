import numpy as np
import pytest

from corsem.core import VolumeGeometry
from corsem.render import diverging_rgb, render_slice


@pytest.fixture
def grid16():
    return VolumeGeometry((16, 16, 1), (1.0, 1.0, 1.0), np.ones(256, bool))


def read_ppm(path):
    raw = open(path, "rb").read()
    header, _, body = raw.partition(b"\n")
    fields = header.split()
    assert fields[0] == b"P6"
    w, h, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    pixels = np.frombuffer(body, dtype=np.uint8).reshape(h, w, 3)
    return (w, h, maxval), pixels


class TestRenderSlice:
    def test_header_format(self, grid16, tmp_path):
        path = tmp_path / "img.ppm"
        render_slice(np.zeros(256), grid16, "z", 0, path)
        assert open(path, "rb").read(13) == b"P6 16 16 255\n"

    def test_constant_field_uniform(self, grid16, tmp_path):
        path = tmp_path / "img.ppm"
        render_slice(np.full(256, 3.7), grid16, "z", 0, path)
        _, pixels = read_ppm(path)
        assert (pixels == pixels[0, 0]).all()

    def test_endpoint_colors_exact(self, grid16, tmp_path):
        values = np.full(256, 0.5)
        values[0] = 0.0   # (x=0, y=0)
        values[1] = 1.0   # (x=1, y=0)
        path = tmp_path / "img.ppm"
        render_slice(values, grid16, "z", 0, path)
        _, pixels = read_ppm(path)
        assert pixels[0, 0].tolist() == [0, 0, 255]    # min -> blue
        assert pixels[0, 1].tolist() == [255, 0, 0]    # max -> red

    def test_out_of_mask_black(self, tmp_path):
        mask = np.ones(256, bool)
        mask[5] = False
        geom = VolumeGeometry((16, 16, 1), (1.0, 1.0, 1.0), mask)
        path = tmp_path / "img.ppm"
        render_slice(np.linspace(-1, 1, geom.n_masked), geom, "z", 0, path)
        _, pixels = read_ppm(path)
        assert pixels[0, 5].tolist() == [0, 0, 0]

    def test_slice_out_of_range(self, grid16, tmp_path):
        with pytest.raises(ValueError, match="out of range"):
            render_slice(np.zeros(256), grid16, "z", 1, tmp_path / "x.ppm")

    def test_infinite_sentinels_clamped(self, grid16, tmp_path):
        values = np.zeros(256)
        values[0] = np.inf
        values[1] = -np.inf
        values[2] = 1.0
        path = tmp_path / "img.ppm"
        render_slice(values, grid16, "z", 0, path)
        _, pixels = read_ppm(path)
        assert pixels[0, 0].tolist() == [255, 0, 0]
        assert pixels[0, 1].tolist() == [0, 0, 255]

    def test_axis_slicing(self, tmp_path):
        geom = VolumeGeometry((4, 5, 6), (1, 1, 1), np.ones(120, bool))
        values = np.arange(geom.n_masked, dtype=float)
        for axis, (w, h) in (("z", (4, 5)), ("y", (4, 6)), ("x", (5, 6))):
            path = tmp_path / f"{axis}.ppm"
            render_slice(values, geom, axis, 1, path)
            (got_w, got_h, _), _ = read_ppm(path)
            assert (got_w, got_h) == (w, h)


class TestDivergingColormap:
    def test_midpoint_white(self):
        assert diverging_rgb(np.array(0.5)).tolist() == [255, 255, 255]

    def test_monotone_red_channel(self):
        t = np.linspace(0, 1, 11)
        reds = diverging_rgb(t)[:, 0].astype(int)
        assert (np.diff(reds) >= 0).all()
