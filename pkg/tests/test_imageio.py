import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from sean.imageio import (
    ImageFormatError,
    dequantize,
    quantize,
    read_pgm,
    read_ppm,
    read_ppm_bytes,
    write_pgm,
    write_ppm,
)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, st.tuples(st.just(3), st.integers(1, 6), st.integers(1, 6)),
              elements=st.floats(-1, 1)))
def test_ppm_round_trip_quantizes_once(tmp_path_factory, image):
    path = tmp_path_factory.mktemp("ppm") / "x.ppm"
    write_ppm(path, image)
    first = path.read_bytes()
    back = read_ppm(path)
    assert np.max(np.abs(back - image)) <= 0.5 / 127.5 + 1e-12
    write_ppm(path, back)
    assert path.read_bytes() == first
    assert np.array_equal(read_ppm_bytes(path), quantize(image))


def test_quantize_endpoints():
    assert quantize(np.array([-1.0, 0.0, 1.0, 3.0])).tolist() == [0, 128, 255, 255]
    q = np.arange(256, dtype=np.uint8)
    assert np.array_equal(quantize(dequantize(q)), q)


@settings(max_examples=30, deadline=None)
@given(arrays(np.int64, st.tuples(st.integers(1, 6), st.integers(1, 6)), elements=st.integers(0, 255)))
def test_pgm_round_trip(tmp_path_factory, labels):
    path = tmp_path_factory.mktemp("pgm") / "m.pgm"
    write_pgm(path, labels)
    assert np.array_equal(read_pgm(path), labels)


def test_header_comments_and_errors(tmp_path):
    path = tmp_path / "c.pgm"
    path.write_bytes(b"P5\n# made by hand\n2 1\n255\n\x01\x02")
    assert read_pgm(path).tolist() == [[1, 2]]
    with pytest.raises(ImageFormatError, match="P6"):
        read_ppm(path)
    path.write_bytes(b"P5\n2 2\n255\n\x01")
    with pytest.raises(ImageFormatError, match="truncated"):
        read_pgm(path)
    path.write_bytes(b"P5\n1 1\n65535\n\x00\x01")
    with pytest.raises(ImageFormatError, match="8-bit"):
        read_pgm(path)
    with pytest.raises(ImageFormatError):
        write_ppm(tmp_path / "bad.ppm", np.zeros((2, 2)))
    with pytest.raises(ImageFormatError):
        write_pgm(tmp_path / "bad.pgm", np.full((2, 2), 300))
