import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from ieegpredict.ieeg_io import (
    HEADER_SIZE,
    BadMagicError,
    Clip,
    ClipHeader,
    DanglingPathError,
    InvalidLabelError,
    Label,
    ManifestSchemaError,
    TruncatedClipError,
    UnsupportedVersionError,
    load_manifest,
    read_clip,
    read_header,
    save_manifest,
    write_clip,
)

from conftest import make_clip, write_manifest

# Hand-assembled: "IEGB", v1, 1 channel, 4 samples, 400.0 Hz (0x4079000000000000),
# label 1, then f32 1.0, -2.0, 0.5, 0.0, all little-endian.
GOLDEN = bytes.fromhex(
    "49454742" "01000000" "01000000" "0400000000000000" "0000000000007940" "01"
    "0000803f" "000000c0" "0000003f" "00000000"
)


class TestByteLayout:
    def test_header_is_29_bytes(self):
        assert HEADER_SIZE == 4 + 4 + 4 + 8 + 8 + 1

    def test_zero_clip_is_45_bytes(self, tmp_path):
        write_clip(make_clip(np.zeros((1, 4))), tmp_path / "z.iegb")
        assert (tmp_path / "z.iegb").stat().st_size == 45

    def test_golden_vector_written(self, tmp_path):
        clip = make_clip([[1.0, -2.0, 0.5, 0.0]], label=Label.PREICTAL)
        write_clip(clip, tmp_path / "g.iegb")
        assert (tmp_path / "g.iegb").read_bytes() == GOLDEN

    def test_golden_vector_parsed(self, tmp_path):
        (tmp_path / "g.iegb").write_bytes(GOLDEN)
        clip = read_clip(tmp_path / "g.iegb")
        assert clip.n_channels == 1 and clip.n_samples == 4
        assert clip.sampling_rate == 400.0
        assert clip.label == Label.PREICTAL
        np.testing.assert_array_equal(clip.samples, [[1.0, -2.0, 0.5, 0.0]])

    def test_channel_major_order(self, tmp_path):
        clip = make_clip([[1, 2, 3], [4, 5, 6]])
        write_clip(clip, tmp_path / "c.iegb")
        payload = (tmp_path / "c.iegb").read_bytes()[HEADER_SIZE:]
        assert struct.unpack("<6f", payload) == (1, 2, 3, 4, 5, 6)

    def test_full_clip_payload_size(self):
        header = ClipHeader(16, 240_000, 400.0, Label.INTERICTAL)
        assert header.payload_bytes == 16 * 240_000 * 4


class TestRoundTrip:
    def test_fields_and_samples(self, tmp_path, rng):
        clip = make_clip(rng.standard_normal((3, 50)) * 100, rate=399.6, label=Label.UNLABELED)
        write_clip(clip, tmp_path / "abc.iegb")
        back = read_clip(tmp_path / "abc.iegb")
        assert back.header == clip.header
        assert back.clip_id == "abc"
        assert back.samples.tobytes() == clip.samples.tobytes()

    @settings(max_examples=40, deadline=None)
    @given(
        samples=hnp.arrays(np.float32, hnp.array_shapes(min_dims=2, max_dims=2, max_side=20),
                           elements=st.floats(width=32, allow_nan=True, allow_infinity=True)),
        rate=st.floats(min_value=1e-3, max_value=1e6),
        label=st.sampled_from(list(Label)),
    )
    def test_bitwise_property(self, tmp_path_factory, samples, rate, label):
        path = tmp_path_factory.mktemp("rt") / "x.iegb"
        clip = Clip.from_array(samples, rate, label=label)
        write_clip(clip, path)
        back = read_clip(path)
        assert back.header == clip.header
        assert back.samples.tobytes() == clip.samples.tobytes()


class TestReadErrors:
    def _write(self, tmp_path, data):
        path = tmp_path / "bad.iegb"
        path.write_bytes(data)
        return path

    def test_bad_magic(self, tmp_path):
        with pytest.raises(BadMagicError):
            read_clip(self._write(tmp_path, b"XXXX" + GOLDEN[4:]))

    def test_bad_version(self, tmp_path):
        data = GOLDEN[:4] + struct.pack("<I", 2) + GOLDEN[8:]
        with pytest.raises(UnsupportedVersionError):
            read_clip(self._write(tmp_path, data))

    def test_truncated_payload(self, tmp_path):
        with pytest.raises(TruncatedClipError):
            read_clip(self._write(tmp_path, GOLDEN[:-1]))
        with pytest.raises(TruncatedClipError):
            read_header(tmp_path / "bad.iegb")

    def test_truncated_header(self, tmp_path):
        with pytest.raises(TruncatedClipError):
            read_clip(self._write(tmp_path, GOLDEN[:10]))

    def test_bad_label(self, tmp_path):
        data = GOLDEN[:28] + bytes([7]) + GOLDEN[29:]
        with pytest.raises(InvalidLabelError):
            read_clip(self._write(tmp_path, data))

    def test_errors_are_distinct(self):
        kinds = {BadMagicError, UnsupportedVersionError, TruncatedClipError, InvalidLabelError}
        assert len(kinds) == 4
        for a in kinds:
            for b in kinds - {a}:
                assert not issubclass(a, b)


class TestInvariants:
    @pytest.mark.parametrize("code", [2, 3, 128, 254])
    def test_label_unrepresentable(self, code):
        with pytest.raises(InvalidLabelError):
            ClipHeader(1, 1, 400.0, code)

    def test_shape_mismatch(self):
        header = ClipHeader(2, 5, 400.0, Label.INTERICTAL)
        with pytest.raises(ValueError):
            Clip(header, np.zeros((2, 4)))

    @pytest.mark.parametrize("idx", [0, 7])
    def test_sequence_index_range(self, idx):
        with pytest.raises(ValueError):
            Clip.from_array(np.zeros((1, 4)), 400.0, sequence_index=idx)

    @pytest.mark.parametrize("rate", [0.0, -1.0, float("nan")])
    def test_bad_rate(self, rate):
        with pytest.raises(ValueError):
            ClipHeader(1, 1, rate, Label.INTERICTAL)

    def test_write_rejects_mutated_clip(self, tmp_path):
        clip = make_clip(np.zeros((1, 4)))
        clip.samples = np.zeros((1, 5), dtype=np.float32)
        with pytest.raises(ValueError):
            write_clip(clip, tmp_path / "m.iegb")
        assert not (tmp_path / "m.iegb").exists()


class TestManifest:
    def test_table_counts_echoed(self, tmp_path):
        clips = [(f"pre{i}", "train", Label.PREICTAL, 1) for i in range(256)]
        clips += [(f"inter{i}", "train", Label.INTERICTAL, 1) for i in range(570)]
        clips += [("t0", "test", Label.UNLABELED, 1)]
        manifest = load_manifest(write_manifest(tmp_path, {"Patient_1": clips}))
        counts = manifest.counts()["Patient_1"]
        assert counts["train"] == {"preictal": 256, "interictal": 570, "unlabeled": 0}
        assert counts["test"] == {"preictal": 0, "interictal": 0, "unlabeled": 1}

    def test_empty_patients(self, tmp_path):
        path = tmp_path / "m.json"
        path.write_text('{"patients": []}')
        manifest = load_manifest(path)
        assert manifest.patients == [] and manifest.counts() == {}

    def test_dangling_path(self, tmp_path):
        path = tmp_path / "m.json"
        path.write_text(json.dumps(
            {"patients": [{"patient_id": "P1", "clips": [{"path": "nope.iegb", "split": "train"}]}]}
        ))
        with pytest.raises(DanglingPathError):
            load_manifest(path)

    @pytest.mark.parametrize("doc", [
        {},
        {"patients": [{"patient_id": "P1"}]},
        {"patients": [{"patient_id": "P1", "clips": [{"path": "a", "split": "valid"}]}]},
        {"patients": [], "extra": 1},
    ])
    def test_schema_violation(self, tmp_path, doc):
        path = tmp_path / "m.json"
        path.write_text(json.dumps(doc))
        with pytest.raises(ManifestSchemaError):
            load_manifest(path)

    def test_duplicate_clip_ids(self, tmp_path):
        path = write_manifest(tmp_path, {"P1": [("a", "train", Label.PREICTAL, 2)]})
        doc = json.loads(path.read_text())
        doc["patients"][0]["clips"].append({"path": "P1/a.iegb", "split": "test"})
        path.write_text(json.dumps(doc))
        with pytest.raises(ManifestSchemaError):
            load_manifest(path)

    def test_save_load_round_trip(self, tmp_path):
        path = write_manifest(tmp_path, {
            "P1": [("a", "train", Label.PREICTAL, 2), ("b", "test", Label.INTERICTAL, 3)],
            "P2": [("c", "train", Label.INTERICTAL, 2)],
        })
        manifest = load_manifest(path)
        save_manifest(manifest, tmp_path / "copy.json")
        again = load_manifest(tmp_path / "copy.json")
        assert again.counts() == manifest.counts()
        assert [c.path for p in again.patients for c in p.clips] == \
               [c.path for p in manifest.patients for c in p.clips]
