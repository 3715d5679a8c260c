import numpy as np
import pytest

from dpbeam.container import (
    CHECKPOINT_MAGIC,
    TENSOR_MAGIC,
    load_checkpoint,
    load_tensor,
    save_checkpoint,
    save_tensor,
)
from dpbeam.stft import StftConfig


class TestTensorContainer:
    def test_real_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        arr = rng.standard_normal((3, 5, 7)).astype(np.float32)
        p = tmp_path / "t.bin"
        save_tensor(p, arr)
        back, cfg = load_tensor(p)
        assert cfg is None
        assert back.dtype == np.float32
        np.testing.assert_array_equal(back, arr)

    def test_complex_round_trip_with_config(self, tmp_path):
        rng = np.random.default_rng(1)
        arr = (rng.standard_normal((257, 9))
               + 1j * rng.standard_normal((257, 9))).astype(np.complex64)
        p = tmp_path / "spec.bin"
        save_tensor(p, arr, cfg=StftConfig())
        back, cfg = load_tensor(p)
        assert back.dtype == np.complex64
        np.testing.assert_array_equal(back, arr)
        assert cfg == StftConfig()

    def test_config_variants_survive(self, tmp_path):
        cfg = StftConfig(sample_rate=8000, n_fft=256, hop=128, window="sqrthann")
        p = tmp_path / "t.bin"
        save_tensor(p, np.zeros((129, 4), dtype=np.complex64), cfg=cfg)
        _, back = load_tensor(p)
        assert back == cfg

    def test_float64_input_is_stored_as_float32(self, tmp_path):
        arr = np.array([1.0, np.pi], dtype=np.float64)
        p = tmp_path / "t.bin"
        save_tensor(p, arr)
        back, _ = load_tensor(p)
        assert back.dtype == np.float32
        np.testing.assert_array_equal(back, arr.astype(np.float32))

    def test_interleaving_is_re_im(self, tmp_path):
        p = tmp_path / "t.bin"
        save_tensor(p, np.array([1 + 2j], dtype=np.complex64))
        raw = p.read_bytes()
        assert raw.startswith(TENSOR_MAGIC)
        payload = np.frombuffer(raw[-8:], dtype="<f4")
        np.testing.assert_array_equal(payload, [1.0, 2.0])

    def test_bad_magic_rejected(self, tmp_path):
        p = tmp_path / "junk.bin"
        p.write_bytes(b"NOTMAGIC" + b"\x00" * 16)
        with pytest.raises(ValueError, match="magic"):
            load_tensor(p)

    def test_truncated_rejected(self, tmp_path):
        p = tmp_path / "t.bin"
        save_tensor(p, np.zeros((4, 4), dtype=np.float32))
        p.write_bytes(p.read_bytes()[:-10])
        with pytest.raises(ValueError, match="truncated"):
            load_tensor(p)

    def test_trailing_bytes_rejected(self, tmp_path):
        p = tmp_path / "t.bin"
        save_tensor(p, np.zeros(4, dtype=np.float32))
        p.write_bytes(p.read_bytes() + b"xx")
        with pytest.raises(ValueError, match="trailing"):
            load_tensor(p)

    def test_scalar_rank_zero(self, tmp_path):
        p = tmp_path / "t.bin"
        save_tensor(p, np.float32(2.5))
        back, _ = load_tensor(p)
        assert back.shape == ()
        assert back == np.float32(2.5)


class TestCheckpointContainer:
    def test_bitexact_round_trip_mixed_dtypes(self, tmp_path):
        rng = np.random.default_rng(2)
        params = {
            "net.conv.w": rng.standard_normal((8, 3)).astype(np.float32),
            "net.conv.b": rng.standard_normal(8),
            "net.gru.w": (rng.standard_normal((12, 4)) * 1e-8).astype(np.float32),
        }
        p = tmp_path / "model.ckpt"
        save_checkpoint(p, params)
        back = load_checkpoint(p)
        assert list(back) == list(params)  # order preserved
        for name in params:
            assert back[name].dtype == params[name].dtype
            # bitwise, not approximate
            assert back[name].tobytes() == params[name].tobytes()

    def test_nan_and_denormals_survive_bitexact(self, tmp_path):
        arr = np.array([np.nan, np.inf, -np.inf, 5e-324, -0.0])
        p = tmp_path / "weird.ckpt"
        save_checkpoint(p, {"w": arr})
        back = load_checkpoint(p)["w"]
        assert back.tobytes() == arr.tobytes()

    def test_unicode_names(self, tmp_path):
        p = tmp_path / "u.ckpt"
        save_checkpoint(p, {"weights/α": np.zeros(2, dtype=np.float32)})
        assert list(load_checkpoint(p)) == ["weights/α"]

    def test_integer_params_rejected(self, tmp_path):
        with pytest.raises(TypeError):
            save_checkpoint(tmp_path / "i.ckpt", {"w": np.zeros(3, dtype=np.int32)})

    def test_bad_magic_rejected(self, tmp_path):
        p = tmp_path / "junk.ckpt"
        p.write_bytes(b"XXXXXXXX\x00\x00\x00\x00")
        with pytest.raises(ValueError, match="magic"):
            load_checkpoint(p)

    def test_magics_differ(self):
        assert TENSOR_MAGIC != CHECKPOINT_MAGIC

    def test_empty_checkpoint(self, tmp_path):
        p = tmp_path / "empty.ckpt"
        save_checkpoint(p, {})
        assert load_checkpoint(p) == {}


class TestAtomicity:
    def test_failed_write_leaves_no_partial_file(self, tmp_path, monkeypatch):
        p = tmp_path / "out.bin"
        save_tensor(p, np.ones(4, dtype=np.float32))
        before = p.read_bytes()

        # force the rename step to fail and check the target is untouched
        import dpbeam.container as cont

        def boom(src, dst):
            raise OSError("disk full")

        monkeypatch.setattr(cont.os, "replace", boom)
        with pytest.raises(OSError):
            save_tensor(p, np.zeros(4, dtype=np.float32))
        monkeypatch.undo()
        assert p.read_bytes() == before
        leftovers = [f for f in p.parent.iterdir() if f.name.startswith(".tmp-")]
        assert leftovers == []
