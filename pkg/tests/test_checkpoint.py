"""Binary checkpoint container: roundtrips, corruption, geometry validation."""

import struct

import numpy as np
import pytest

from soloconn.adapters import SoloConfig, build_adapter_set
from soloconn.checkpoint import MAGIC, read_checkpoint, write_checkpoint
from soloconn.errors import (
    CheckpointChecksumError,
    CheckpointFormatError,
    CheckpointGeometryError,
    CheckpointVersionError,
)
from soloconn.model import MiniGptModel, ModelConfig, freeze_base, model_forward
from soloconn.rng import substream
from soloconn.tensor import no_grad
from soloconn.training import (
    load_adapter_checkpoint,
    load_base_checkpoint,
    save_adapter_checkpoint,
    save_base_checkpoint,
)

CFG = ModelConfig(vocab_size=9, d_model=8, n_layers=4, n_heads=2, d_ff=16, max_seq_len=10)


class TestContainer:
    def test_roundtrip_bit_exact(self, tmp_path):
        rng = substream(0, "ck")
        tensors = {
            "a": rng.normal(size=(3, 4)),
            "b": rng.normal(size=7),
            "ids": np.arange(5, dtype=np.int64),
        }
        path = tmp_path / "x.ckpt"
        write_checkpoint(path, "test", {"alpha": 1.5}, tensors)
        loaded = read_checkpoint(path)
        assert loaded.kind == "test"
        assert loaded.config == {"alpha": 1.5}
        for name, arr in tensors.items():
            assert loaded.tensors[name].tobytes() == np.asarray(arr).tobytes()
            assert loaded.tensors[name].dtype == np.asarray(arr).dtype

    def test_corrupted_payload_rejected(self, tmp_path):
        path = tmp_path / "x.ckpt"
        write_checkpoint(path, "test", {}, {"a": np.ones(4)})
        blob = bytearray(path.read_bytes())
        blob[len(blob) // 2] ^= 0xFF
        path.write_bytes(bytes(blob))
        with pytest.raises(CheckpointChecksumError):
            read_checkpoint(path)

    def test_truncated_file_rejected(self, tmp_path):
        path = tmp_path / "x.ckpt"
        write_checkpoint(path, "test", {}, {"a": np.ones(4)})
        path.write_bytes(path.read_bytes()[:10])
        with pytest.raises(CheckpointFormatError):
            read_checkpoint(path)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "x.ckpt"
        path.write_bytes(b"NOTACKPT" + b"\x00" * 64)
        with pytest.raises(CheckpointFormatError, match="magic"):
            read_checkpoint(path)

    def test_version_mismatch_rejected(self, tmp_path):
        path = tmp_path / "x.ckpt"
        write_checkpoint(path, "test", {}, {"a": np.ones(2)})
        blob = bytearray(path.read_bytes())
        # bump the version field, then re-stamp the checksum
        struct.pack_into("<I", blob, len(MAGIC), 99)
        import hashlib
        payload = bytes(blob[:-32])
        blob[-32:] = hashlib.sha256(payload).digest()
        path.write_bytes(bytes(blob))
        with pytest.raises(CheckpointVersionError):
            read_checkpoint(path)


class TestModelCheckpoints:
    def test_base_roundtrip_reproduces_logits(self, tmp_path):
        model = MiniGptModel(CFG, seed=1)
        path = tmp_path / "base.ckpt"
        save_base_checkpoint(model, path)
        again = load_base_checkpoint(path)
        toks = substream(2, "t").integers(0, CFG.vocab_size, size=7)
        with no_grad():
            a = model_forward(model, toks).data
            b = model_forward(again, toks).data
        assert a.tobytes() == b.tobytes()

    def test_adapter_roundtrip_reproduces_logits(self, tmp_path):
        model = MiniGptModel(CFG, seed=3)
        freeze_base(model)
        aset = build_adapter_set(CFG, SoloConfig(rank=3, sparsity=0.4, dropout_rate=0.0), seed=3)
        rng = substream(4, "w")
        aset.codec.w_enc.data[...] = rng.normal(size=aset.codec.w_enc.data.shape) * aset.codec.m_enc.data
        for conn in aset.connections:
            conn.gate.lam.data[...] = 0.6
            conn.b.data[...] = rng.normal(size=conn.b.data.shape)
        path = tmp_path / "adapter.ckpt"
        save_adapter_checkpoint(aset, CFG, path)
        from soloconn.adapters import adapted_forward
        loaded = load_adapter_checkpoint(path, model)
        toks = substream(5, "t").integers(0, CFG.vocab_size, size=7)
        with no_grad():
            a = adapted_forward(model, aset, toks).data
            b = adapted_forward(model, loaded, toks).data
        assert a.tobytes() == b.tobytes()

    def test_adapter_checkpoint_excludes_base_weights(self, tmp_path):
        model = MiniGptModel(CFG, seed=6)
        aset = build_adapter_set(CFG, SoloConfig(rank=3), seed=6)
        path = tmp_path / "adapter.ckpt"
        save_adapter_checkpoint(aset, CFG, path)
        loaded = read_checkpoint(path)
        base_names = {name for name, _ in model.parameters()}
        assert base_names.isdisjoint(loaded.tensors)
        assert all(name.startswith(("codec.", "conn")) for name in loaded.tensors)

    def test_geometry_mismatch_rejected(self, tmp_path):
        model = MiniGptModel(CFG, seed=7)
        aset = build_adapter_set(CFG, SoloConfig(rank=3), seed=7)
        path = tmp_path / "adapter.ckpt"
        save_adapter_checkpoint(aset, CFG, path)
        other = MiniGptModel(
            ModelConfig(vocab_size=9, d_model=16, n_layers=4, n_heads=2, d_ff=16, max_seq_len=10),
            seed=7,
        )
        with pytest.raises(CheckpointGeometryError, match="d="):
            load_adapter_checkpoint(path, other)

    def test_wrong_kind_for_base_load(self, tmp_path):
        aset = build_adapter_set(CFG, SoloConfig(rank=3), seed=8)
        path = tmp_path / "adapter.ckpt"
        save_adapter_checkpoint(aset, CFG, path)
        with pytest.raises(CheckpointGeometryError, match="base-model"):
            load_base_checkpoint(path)
