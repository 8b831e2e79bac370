import json
import os

import numpy as np
import pytest

from src.core import VideoSequence
from src.errors import FormatError, StorageError, UnsupportedVersionError
from src.sequence_io import (
    BANK_HEADER, NoiseBank, NoiseEntryMeta, load_manifest, load_sequence, quantize,
    read_noise_bank, save_sequence, sidecar_path, write_json, write_noise_bank,
)


def make_bank(rng, count=2, dims=(3, 1, 4, 4)):
    entries = tuple(NoiseEntryMeta(source_id="v0", origin=(4 * i, 0)) for i in range(count))
    return NoiseBank(dims=dims, data=rng.random((count,) + dims), entries=entries,
                     thresholds={"sigma": 0.01}, window=dims[2:])


class TestSequences:
    def test_save_and_load_8_bit(self, tmp_path, random_clip):
        video = random_clip(n=3, c=3, h=8, w=8)
        save_sequence(video, str(tmp_path / "seq"))
        loaded = load_sequence(load_manifest(str(tmp_path / "seq")))
        np.testing.assert_array_equal(loaded.data, quantize(video.data, 8) / 255.0)

    def test_save_and_load_16_bit_gray(self, tmp_path, random_clip):
        video = random_clip(n=2, c=1, h=8, w=8)
        save_sequence(video, str(tmp_path / "seq"), bit_depth=16)
        loaded = load_sequence(load_manifest(str(tmp_path / "seq")))
        np.testing.assert_allclose(loaded.data, video.data, atol=1 / 65535)

    def test_missing_frame(self, tmp_path, random_clip):
        save_sequence(random_clip(n=2, c=3, h=8, w=8), str(tmp_path / "seq"))
        os.remove(tmp_path / "seq" / "f001.png")
        with pytest.raises(StorageError):
            load_sequence(load_manifest(str(tmp_path / "seq")))

    def test_shape_mismatch(self, tmp_path, random_clip):
        save_sequence(random_clip(n=1, c=3, h=8, w=8), str(tmp_path / "seq"))
        manifest_path = tmp_path / "seq" / "manifest.json"
        data = json.loads(manifest_path.read_text())
        data["height"] = 16
        manifest_path.write_text(json.dumps(data))
        with pytest.raises(FormatError):
            load_sequence(load_manifest(str(tmp_path / "seq")))

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(StorageError):
            load_manifest(str(tmp_path / "nothing"))

    def test_quantize_rounds_to_nearest(self):
        codes = quantize(np.array([0.0, 0.4 / 255, 0.6 / 255, 1.0, 1.5]), 8)
        np.testing.assert_array_equal(codes, [0, 0, 1, 255, 255])

    def test_write_json_is_sorted(self, tmp_path):
        write_json(str(tmp_path / "a.json"), {"b": 1, "a": 2})
        assert (tmp_path / "a.json").read_text() == '{\n  "a": 2,\n  "b": 1\n}\n'


class TestNoiseBank:
    def test_roundtrip_is_bitwise(self, tmp_path, rng):
        bank = make_bank(rng)
        path = str(tmp_path / "bank.nsqb")
        written = write_noise_bank(bank, path)
        assert written == BANK_HEADER.size + bank.data.nbytes
        loaded = read_noise_bank(path)
        assert loaded.data.tobytes() == bank.data.tobytes()
        assert loaded.dims == bank.dims
        assert loaded.entries == bank.entries
        assert loaded.thresholds == {"sigma": 0.01}

    def test_golden_header(self, tmp_path, rng):
        path = str(tmp_path / "bank.nsqb")
        write_noise_bank(make_bank(rng, count=2, dims=(3, 1, 4, 4)), path)
        with open(path, "rb") as f:
            header = f.read(28)
        assert header == (
            b"NSQB"
            + (1).to_bytes(4, "little")
            + (2).to_bytes(4, "little")
            + (3).to_bytes(4, "little")
            + (1).to_bytes(4, "little")
            + (4).to_bytes(4, "little")
            + (4).to_bytes(4, "little")
        )

    def test_empty_bank_roundtrip(self, tmp_path):
        path = str(tmp_path / "empty.nsqb")
        write_noise_bank(NoiseBank(dims=(2, 3, 8, 8)), path)
        loaded = read_noise_bank(path)
        assert loaded.count == 0
        assert loaded.dims == (2, 3, 8, 8)

    def test_bad_magic(self, tmp_path, rng):
        path = tmp_path / "bank.nsqb"
        write_noise_bank(make_bank(rng), str(path))
        blob = bytearray(path.read_bytes())
        blob[:4] = b"XXXX"
        path.write_bytes(bytes(blob))
        with pytest.raises(FormatError):
            read_noise_bank(str(path))

    def test_unsupported_version(self, tmp_path, rng):
        path = tmp_path / "bank.nsqb"
        write_noise_bank(make_bank(rng), str(path))
        blob = bytearray(path.read_bytes())
        blob[4:8] = (2).to_bytes(4, "little")
        path.write_bytes(bytes(blob))
        with pytest.raises(UnsupportedVersionError):
            read_noise_bank(str(path))

    def test_truncated_payload(self, tmp_path, rng):
        path = tmp_path / "bank.nsqb"
        write_noise_bank(make_bank(rng), str(path))
        path.write_bytes(path.read_bytes()[:-4])
        with pytest.raises(FormatError):
            read_noise_bank(str(path))

    def test_missing_sidecar_still_loads(self, tmp_path, rng, caplog):
        path = str(tmp_path / "bank.nsqb")
        bank = make_bank(rng)
        write_noise_bank(bank, path)
        os.remove(sidecar_path(path))
        loaded = read_noise_bank(path)
        assert loaded.count == bank.count
        assert "sidecar" in caplog.text

    def test_missing_file(self, tmp_path):
        with pytest.raises(StorageError):
            read_noise_bank(str(tmp_path / "nope.nsqb"))

    def test_entry_is_float64_sequence(self, rng):
        bank = make_bank(rng)
        entry = bank.entry(1)
        assert isinstance(entry, VideoSequence)
        assert entry.data.dtype == np.float64
        assert entry.shape == bank.dims

    def test_concatenate_keeps_order(self, rng):
        a, b = make_bank(rng, count=1), make_bank(rng, count=2)
        merged = NoiseBank.concatenate([a, b])
        assert merged.count == 3
        np.testing.assert_array_equal(merged.data[0], a.data[0])
        np.testing.assert_array_equal(merged.data[1:], b.data)
