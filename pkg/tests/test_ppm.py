import numpy as np
import pytest

from deflare.errors import PpmError, ShapeError
from deflare.ppm import quantize, read_ppm, read_ppm_u8, write_ppm, write_ppm_u8


class TestRoundTrip:
    def test_all_256_channel_values(self, tmp_path):
        vals = np.arange(256, dtype=np.uint8)
        img = np.stack([vals.reshape(16, 16)] * 3, axis=2)
        path = tmp_path / "gray.ppm"
        write_ppm_u8(path, img)
        assert np.array_equal(read_ppm_u8(path), img)

    def test_random_images(self, tmp_path, rng):
        img = rng.integers(0, 256, size=(9, 13, 3)).astype(np.uint8)
        path = tmp_path / "r.ppm"
        write_ppm_u8(path, img)
        assert np.array_equal(read_ppm_u8(path), img)

    def test_float_read_back(self, tmp_path, rng):
        img = rng.uniform(0, 1, (8, 8, 3))
        path = tmp_path / "f.ppm"
        write_ppm(path, img)
        again = read_ppm(path)
        assert np.abs(again - img).max() <= 0.5 / 255 + 1e-12


class TestQuantize:
    def test_round_half_away_from_zero(self):
        # 0.5/255 boundary: exact halves round up for non-negative values
        img = np.array([[[0.0, 1.0, 127.5 / 255]]])
        assert quantize(img).ravel().tolist() == [0, 255, 128]

    def test_clips_out_of_range(self):
        img = np.array([[[-0.2, 1.3, 0.5]]])
        assert quantize(img).ravel().tolist() == [0, 255, 128]


class TestHeaders:
    def test_comments_and_whitespace(self, tmp_path):
        body = bytes(range(12))
        blob = b"P6 # comment\n# another comment\n 2\t2 \n255\n" + body
        path = tmp_path / "c.ppm"
        path.write_bytes(blob)
        img = read_ppm_u8(path)
        assert img.shape == (2, 2, 3)
        assert img.tobytes() == body

    def test_wrong_magic(self, tmp_path):
        path = tmp_path / "bad.ppm"
        path.write_bytes(b"P5\n2 2\n255\n" + bytes(12))
        with pytest.raises(PpmError):
            read_ppm_u8(path)

    def test_unsupported_maxval(self, tmp_path):
        path = tmp_path / "m.ppm"
        path.write_bytes(b"P6\n2 2\n65535\n" + bytes(24))
        with pytest.raises(PpmError):
            read_ppm_u8(path)

    def test_truncated_pixels(self, tmp_path):
        path = tmp_path / "t.ppm"
        path.write_bytes(b"P6\n4 4\n255\n" + bytes(10))
        with pytest.raises(PpmError):
            read_ppm_u8(path)

    def test_garbage_header(self, tmp_path):
        path = tmp_path / "g.ppm"
        path.write_bytes(b"P6\nnot numbers\n255\n")
        with pytest.raises(PpmError):
            read_ppm_u8(path)

    def test_writer_validates_dtype(self, tmp_path):
        with pytest.raises(ShapeError):
            write_ppm_u8(tmp_path / "x.ppm", np.zeros((2, 2, 3)))
