import numpy as np
import pytest

from noisyjoint import _container


def test_round_trip_all_dtypes(tmp_path, rng):
    arrays = {"f": rng.standard_normal((3, 4)), "i": rng.integers(-5, 5, size=7), "b": rng.random(5) > 0.5,
              "scalar": np.array(2.5), "empty": np.zeros((0, 3))}
    meta = {"spec": {"a": 1, "b": [1.5, None]}, "name": "x"}
    _container.write(tmp_path / "c", "MAGIC", 2, meta, arrays)
    got_meta, got = _container.read(tmp_path / "c", "MAGIC", 2)
    assert got_meta == meta
    assert list(got) == list(arrays)
    for k in arrays:
        assert got[k].shape == arrays[k].shape
        np.testing.assert_array_equal(got[k], arrays[k])


def test_header_is_text(tmp_path):
    _container.write(tmp_path / "c", "MAGIC", 1, {"k": 3}, {"a": np.arange(3)})
    head = (tmp_path / "c").read_bytes().split(b"end-header\n")[0].decode()
    assert head.splitlines() == ["MAGIC", "version=1", "meta.k=3", "array=a:i8:3:24"]


def test_payload_is_little_endian(tmp_path):
    _container.write(tmp_path / "c", "M", 1, {}, {"a": np.array([1.0])})
    assert (tmp_path / "c").read_bytes().endswith(np.array([1.0], dtype="<f8").tobytes())


@pytest.mark.parametrize("mutate,err", [
    (lambda b: b.replace(b"MAGIC", b"OTHER", 1), _container.FormatError),
    (lambda b: b.replace(b"version=1", b"version=2", 1), _container.FormatError),
    (lambda b: b[:-3], _container.TruncatedFileError),
    (lambda b: b + b"junk", _container.FormatError),
    (lambda b: b.replace(b"end-header", b"end-headex", 1), _container.FormatError),
])
def test_corruption_detected(tmp_path, mutate, err):
    _container.write(tmp_path / "c", "MAGIC", 1, {}, {"a": np.arange(4.0)})
    (tmp_path / "c").write_bytes(mutate((tmp_path / "c").read_bytes()))
    with pytest.raises(err):
        _container.read(tmp_path / "c", "MAGIC", 1)
