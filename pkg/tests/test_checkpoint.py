"""Checkpoint round trips and corruption handling."""

import struct

import numpy as np
import pytest

from evsnn.nn import init_params, sew_tiny
from evsnn.nn.checkpoint import (
    MAGIC,
    VERSION,
    CheckpointError,
    load_checkpoint,
    save_checkpoint,
)


@pytest.fixture
def params(rng):
    return {
        "a.weight": rng.normal(size=(3, 2, 3, 3)).astype(np.float32),
        "a.bias": rng.normal(size=3).astype(np.float64),
        "counts": rng.integers(0, 10, size=(2, 2)).astype(np.int64),
        "scalar": np.float32(1.5) * np.ones((), dtype=np.float32),
    }


class TestRoundTrip:
    def test_exact(self, tmp_path, params):
        path = tmp_path / "m.evck"
        save_checkpoint(path, params, {"epoch": 3, "net": "tiny"})
        loaded, meta = load_checkpoint(path)
        assert meta == {"epoch": 3, "net": "tiny"}
        assert set(loaded) == set(params)
        for k in params:
            assert loaded[k].dtype == params[k].dtype
            assert loaded[k].shape == params[k].shape
            np.testing.assert_array_equal(loaded[k], params[k])

    def test_byte_deterministic(self, tmp_path, params):
        p1, p2 = tmp_path / "a.evck", tmp_path / "b.evck"
        save_checkpoint(p1, params, {"k": 1})
        save_checkpoint(p2, dict(reversed(list(params.items()))), {"k": 1})
        assert p1.read_bytes() == p2.read_bytes()  # name-sorted on disk

    def test_empty_meta_default(self, tmp_path, params):
        path = tmp_path / "m.evck"
        save_checkpoint(path, params)
        _, meta = load_checkpoint(path)
        assert meta == {}

    def test_no_tensors(self, tmp_path):
        path = tmp_path / "m.evck"
        save_checkpoint(path, {}, {"only": "meta"})
        loaded, meta = load_checkpoint(path)
        assert loaded == {}
        assert meta == {"only": "meta"}

    def test_real_network_params(self, tmp_path):
        config = sew_tiny(4, height=16, width=16)
        params = init_params(config, seed=0)
        path = tmp_path / "net.evck"
        save_checkpoint(path, params)
        loaded, _ = load_checkpoint(path)
        for k in params:
            np.testing.assert_array_equal(loaded[k], params[k])
            assert loaded[k].dtype == params[k].dtype

    def test_big_endian_input_normalized(self, tmp_path):
        be = np.arange(6, dtype=">f8").reshape(2, 3)
        path = tmp_path / "m.evck"
        save_checkpoint(path, {"w": be})
        loaded, _ = load_checkpoint(path)
        np.testing.assert_array_equal(loaded["w"], be)
        assert loaded["w"].dtype.byteorder in ("<", "=")

    def test_loaded_arrays_writable(self, tmp_path, params):
        path = tmp_path / "m.evck"
        save_checkpoint(path, params)
        loaded, _ = load_checkpoint(path)
        loaded["a.bias"][0] = 99.0  # frombuffer output must have been copied


class TestCorruption:
    @pytest.fixture
    def blob(self, tmp_path, params):
        path = tmp_path / "m.evck"
        save_checkpoint(path, params, {"epoch": 1})
        return bytearray(path.read_bytes())

    def _expect(self, tmp_path, raw, match):
        path = tmp_path / "bad.evck"
        path.write_bytes(bytes(raw))
        with pytest.raises(CheckpointError, match=match):
            load_checkpoint(path)

    def test_truncated_header(self, tmp_path, blob):
        self._expect(tmp_path, blob[:5], "truncated header")

    def test_bad_magic(self, tmp_path, blob):
        blob[:4] = b"NOPE"
        self._expect(tmp_path, blob, "magic")

    def test_bad_version(self, tmp_path, blob):
        blob[4:6] = struct.pack("<H", VERSION + 1)
        self._expect(tmp_path, blob, "version")

    def test_truncated_tensor_data(self, tmp_path, blob):
        self._expect(tmp_path, blob[:-3], "truncated")

    def test_trailing_bytes(self, tmp_path, blob):
        self._expect(tmp_path, blob + b"\x00", "trailing")

    def test_bad_metadata_json(self, tmp_path):
        meta = b"not json"
        raw = (_pack_head(0) + struct.pack("<I", len(meta)) + meta)
        self._expect(tmp_path, raw, "bad metadata")

    def test_metadata_length_overruns(self, tmp_path):
        raw = _pack_head(0) + struct.pack("<I", 1000) + b"{}"
        self._expect(tmp_path, raw, "truncated metadata")

    def test_bad_dtype_string(self, tmp_path):
        name = b"w"
        dt = b"zz9"
        raw = (_pack_head(1) + struct.pack("<I", 2) + b"{}"
               + struct.pack("<H", len(name)) + name
               + struct.pack("<B", len(dt)) + dt)
        self._expect(tmp_path, raw, "bad dtype")


def _pack_head(count):
    return struct.pack("<4sHI", MAGIC, VERSION, count)
