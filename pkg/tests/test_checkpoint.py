"""Binary tensor container: bit-exact round trips and malformed inputs."""

import struct

import numpy as np
import pytest

from zaq.checkpoint import (MAGIC, load_state, load_tensors, model_state, read_meta,
                            save_model, save_tensors)
from zaq.errors import FormatError, ModelError
from zaq.models import build_teacher
from zaq.quantize import QuantSpec, quantize_model


@pytest.fixture
def teacher():
    return build_teacher(4, np.random.default_rng(7))


class TestContainer:
    def test_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        entries = {
            "a": rng.standard_normal((3, 4)).astype(np.float32),
            "b.nested": rng.standard_normal(7).astype(np.float32),
            "scalarish": np.array([2.5], dtype=np.float32),
        }
        path = tmp_path / "t.bin"
        save_tensors(path, entries)
        loaded = load_tensors(path)
        assert list(loaded) == list(entries)
        for name in entries:
            assert loaded[name].tobytes() == entries[name].tobytes()

    def test_layout_is_as_documented(self, tmp_path):
        path = tmp_path / "t.bin"
        save_tensors(path, {"x": np.array([1.0, 2.0], dtype=np.float32)})
        raw = path.read_bytes()
        assert raw[:8] == b"ZAQCKPT1"
        version, count = struct.unpack("<II", raw[8:16])
        assert (version, count) == (1, 1)
        name_len = struct.unpack("<H", raw[16:18])[0]
        assert raw[18:18 + name_len] == b"x"
        rank = raw[19]
        assert rank == 1
        dims = struct.unpack("<I", raw[20:24])
        assert dims == (2,)
        vals = np.frombuffer(raw[24:], dtype="<f4")
        np.testing.assert_array_equal(vals, [1.0, 2.0])

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.bin"
        path.write_bytes(b"XXXXXXXX" + b"\x00" * 16)
        with pytest.raises(FormatError, match="magic"):
            load_tensors(path)

    def test_bad_version_rejected(self, tmp_path):
        path = tmp_path / "bad.bin"
        path.write_bytes(MAGIC + struct.pack("<II", 9, 0))
        with pytest.raises(FormatError, match="version"):
            load_tensors(path)

    def test_truncated_file_is_io_error(self, tmp_path):
        good = tmp_path / "good.bin"
        save_tensors(good, {"x": np.ones(10, dtype=np.float32)})
        bad = tmp_path / "trunc.bin"
        bad.write_bytes(good.read_bytes()[:-8])
        with pytest.raises(IOError, match="truncated"):
            load_tensors(bad)


class TestModelState:
    def test_save_load_round_trip(self, teacher, tmp_path):
        path = tmp_path / "m.bin"
        save_model(path, teacher)
        clone = build_teacher(4, np.random.default_rng(99))
        load_state(clone, load_tensors(path))
        for (_, a), (_, b) in zip(teacher.named_parameters(), clone.named_parameters()):
            assert a.data.tobytes() == b.data.tobytes()
        for (_, a), (_, b) in zip(teacher.named_buffers(), clone.named_buffers()):
            assert a.tobytes() == b.tobytes()

    def test_quantized_state_includes_trackers(self, teacher, tmp_path):
        q = quantize_model(teacher, QuantSpec(3, 3))
        for layer in q.layers:
            if layer.act_tracker is not None:
                layer.act_tracker.observe(1.5)
        path = tmp_path / "q.bin"
        save_model(path, q)
        clone = quantize_model(build_teacher(4, np.random.default_rng(1)), QuantSpec(3, 3))
        load_state(clone, load_tensors(path))
        restored = [l.act_tracker.running_max for l in clone.layers if l.act_tracker]
        assert restored == [1.5] * len(restored)

    def test_wrong_architecture_names_first_mismatch(self, teacher, tmp_path):
        path = tmp_path / "m.bin"
        save_model(path, teacher)
        other = build_teacher(7, np.random.default_rng(0))  # different head width
        with pytest.raises(ModelError, match="layers.15.weight"):
            load_state(other, load_tensors(path))

    def test_missing_tensor_named(self, teacher, tmp_path):
        entries = model_state(teacher)
        entries.pop("layers.0.weight")
        with pytest.raises(ModelError, match="layers.0.weight"):
            load_state(teacher, entries)

    def test_meta_entries_round_trip(self, teacher, tmp_path):
        path = tmp_path / "m.bin"
        save_model(path, teacher, meta={"num_classes": 4.0, "weight_bits": 0.0})
        meta = read_meta(load_tensors(path))
        assert meta == {"num_classes": 4.0, "weight_bits": 0.0}
