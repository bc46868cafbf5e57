"""Binary clip container and JSON dataset manifests.

Clip file layout (little-endian, no padding)::

    magic          4 bytes   b"IEGB"
    version        u32       1
    n_channels     u32
    n_samples      u64
    sampling_rate  f64       Hz
    label          u8        0 interictal, 1 preictal, 255 unlabeled
    samples        f32[n_channels * n_samples], channel-major

Clip and patient identifiers are not stored in the file; the clip id is the
file stem and the patient id comes from the manifest.
"""

from __future__ import annotations

import enum
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import numpy as np

MAGIC = b"IEGB"
VERSION = 1
HEADER_FORMAT = "<4sIIQdB"
HEADER_SIZE = struct.calcsize(HEADER_FORMAT)  # 29
CLIP_SUFFIX = ".iegb"

SPLITS = ("train", "test")

_SCHEMA_DIR = Path(__file__).parent / "schemas"


class Label(enum.IntEnum):
    INTERICTAL = 0
    PREICTAL = 1
    UNLABELED = 255


class ClipFormatError(ValueError):
    """Base class for malformed clip files."""


class BadMagicError(ClipFormatError):
    pass


class UnsupportedVersionError(ClipFormatError):
    pass


class TruncatedClipError(ClipFormatError):
    pass


class InvalidLabelError(ClipFormatError):
    pass


class ManifestError(ValueError):
    pass


class ManifestSchemaError(ManifestError):
    pass


class DanglingPathError(ManifestError):
    pass


@dataclass(frozen=True)
class ClipHeader:
    n_channels: int
    n_samples: int
    sampling_rate: float
    label: Label
    magic: bytes = MAGIC
    version: int = VERSION

    def __post_init__(self):
        if self.magic != MAGIC:
            raise BadMagicError(f"bad magic {self.magic!r}, expected {MAGIC!r}")
        if self.version != VERSION:
            raise UnsupportedVersionError(f"unsupported clip version {self.version}")
        if self.n_channels < 1 or self.n_samples < 1:
            raise ValueError(
                f"clip must have >= 1 channel and sample, got "
                f"{self.n_channels} x {self.n_samples}"
            )
        if not (self.sampling_rate > 0 and np.isfinite(self.sampling_rate)):
            raise ValueError(f"sampling_rate must be positive, got {self.sampling_rate}")
        try:
            object.__setattr__(self, "label", Label(self.label))
        except ValueError:
            raise InvalidLabelError(f"label code {self.label} not in {{0, 1, 255}}") from None

    def pack(self) -> bytes:
        return struct.pack(
            HEADER_FORMAT,
            self.magic,
            self.version,
            self.n_channels,
            self.n_samples,
            self.sampling_rate,
            int(self.label),
        )

    @property
    def payload_bytes(self) -> int:
        return self.n_channels * self.n_samples * 4


@dataclass
class Clip:
    """One labeled multichannel recording (channels x samples, microvolts)."""

    header: ClipHeader
    samples: np.ndarray
    clip_id: str = ""
    patient_id: str = ""
    sequence_index: int | None = None

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float32)
        expected = (self.header.n_channels, self.header.n_samples)
        if self.samples.shape != expected:
            raise ValueError(f"samples shape {self.samples.shape} != header {expected}")
        if self.sequence_index is not None and not 1 <= self.sequence_index <= 6:
            raise ValueError(f"sequence_index must be in [1, 6], got {self.sequence_index}")

    @classmethod
    def from_array(cls, samples, sampling_rate: float, label=Label.UNLABELED, **kwargs) -> "Clip":
        samples = np.asarray(samples, dtype=np.float32)
        if samples.ndim != 2:
            raise ValueError(f"samples must be 2-D (channels x samples), got {samples.shape}")
        header = ClipHeader(
            n_channels=samples.shape[0],
            n_samples=samples.shape[1],
            sampling_rate=float(sampling_rate),
            label=label,
        )
        return cls(header=header, samples=samples, **kwargs)

    @property
    def label(self) -> Label:
        return self.header.label

    @property
    def sampling_rate(self) -> float:
        return self.header.sampling_rate

    @property
    def n_channels(self) -> int:
        return self.header.n_channels

    @property
    def n_samples(self) -> int:
        return self.header.n_samples

    @property
    def duration(self) -> float:
        return self.n_samples / self.sampling_rate

    def with_samples(self, samples, sampling_rate: float | None = None) -> "Clip":
        """Copy of this clip with new sample data, keeping identity and label."""
        return Clip.from_array(
            samples,
            self.sampling_rate if sampling_rate is None else sampling_rate,
            label=self.label,
            clip_id=self.clip_id,
            patient_id=self.patient_id,
            sequence_index=self.sequence_index,
        )


def write_clip(clip: Clip, path) -> None:
    # Re-validate: a Clip may have been mutated after construction.
    Clip(clip.header, clip.samples)
    path = Path(path)
    payload = np.ascontiguousarray(clip.samples, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(clip.header.pack())
        fh.write(payload.tobytes(order="C"))


def _parse_header(raw: bytes, path) -> ClipHeader:
    if len(raw) < HEADER_SIZE:
        if len(raw) >= 4 and raw[:4] != MAGIC:
            raise BadMagicError(f"{path}: bad magic {raw[:4]!r}")
        raise TruncatedClipError(f"{path}: header truncated ({len(raw)} < {HEADER_SIZE} bytes)")
    magic, version, n_channels, n_samples, rate, label = struct.unpack(
        HEADER_FORMAT, raw[:HEADER_SIZE]
    )
    if magic != MAGIC:
        raise BadMagicError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise UnsupportedVersionError(f"{path}: unsupported version {version}")
    if label not in (0, 1, 255):
        raise InvalidLabelError(f"{path}: label code {label} not in {{0, 1, 255}}")
    try:
        return ClipHeader(n_channels, n_samples, rate, Label(label))
    except ValueError as exc:
        raise ClipFormatError(f"{path}: {exc}") from None


def read_header(path) -> ClipHeader:
    """Parse and validate only the header; also checks the payload size on disk."""
    path = Path(path)
    with open(path, "rb") as fh:
        header = _parse_header(fh.read(HEADER_SIZE), path)
    size = path.stat().st_size
    if size < HEADER_SIZE + header.payload_bytes:
        raise TruncatedClipError(
            f"{path}: payload has {size - HEADER_SIZE} bytes, expected {header.payload_bytes}"
        )
    return header


def read_clip(path, patient_id: str = "", sequence_index: int | None = None) -> Clip:
    path = Path(path)
    raw = path.read_bytes()
    header = _parse_header(raw, path)
    payload = raw[HEADER_SIZE:]
    if len(payload) < header.payload_bytes:
        raise TruncatedClipError(
            f"{path}: payload has {len(payload)} bytes, expected {header.payload_bytes}"
        )
    samples = np.frombuffer(payload, dtype="<f4", count=header.n_channels * header.n_samples)
    samples = samples.reshape(header.n_channels, header.n_samples).astype(np.float32)
    return Clip(
        header=header,
        samples=samples,
        clip_id=path.stem,
        patient_id=patient_id,
        sequence_index=sequence_index,
    )


# -- manifests ---------------------------------------------------------------


@dataclass
class ClipEntry:
    path: Path
    split: str
    clip_id: str
    label: Label


@dataclass
class PatientRecord:
    patient_id: str
    clips: list[ClipEntry] = field(default_factory=list)

    def entries(self, split: str | None = None) -> list[ClipEntry]:
        return [c for c in self.clips if split is None or c.split == split]


@dataclass
class DatasetManifest:
    patients: list[PatientRecord]
    root: Path = Path(".")

    def counts(self) -> dict[str, dict[str, dict[str, int]]]:
        """Per patient: {split: {"preictal": n, "interictal": n, "unlabeled": n}}."""
        out = {}
        for p in self.patients:
            per_split = {s: {"preictal": 0, "interictal": 0, "unlabeled": 0} for s in SPLITS}
            for c in p.clips:
                per_split[c.split][c.label.name.lower()] += 1
            out[p.patient_id] = per_split
        return out

    def to_json(self) -> dict:
        return {
            "patients": [
                {
                    "patient_id": p.patient_id,
                    "clips": [
                        {"path": _relpath(c.path, self.root), "split": c.split} for c in p.clips
                    ],
                }
                for p in self.patients
            ]
        }


def _relpath(path: Path, root: Path) -> str:
    try:
        return Path(path).relative_to(root).as_posix()
    except ValueError:
        return str(path)


def load_schema(name: str) -> dict:
    return json.loads((_SCHEMA_DIR / name).read_text())


def load_manifest(path) -> DatasetManifest:
    """Load a manifest; relative clip paths resolve against the manifest's directory.

    Every referenced clip header is parsed, so labels are known without
    reading the payloads.
    """
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ManifestSchemaError(f"{path}: invalid JSON: {exc}") from None
    try:
        jsonschema.validate(doc, load_schema("manifest.schema.json"))
    except jsonschema.ValidationError as exc:
        raise ManifestSchemaError(f"{path}: {exc.message}") from None

    root = path.parent
    patients = []
    for prec in doc["patients"]:
        record = PatientRecord(prec["patient_id"])
        seen = set()
        for entry in prec["clips"]:
            clip_path = Path(entry["path"])
            if not clip_path.is_absolute():
                clip_path = root / clip_path
            if not clip_path.is_file():
                raise DanglingPathError(f"{path}: clip file not found: {clip_path}")
            header = read_header(clip_path)
            clip_id = clip_path.stem
            if clip_id in seen:
                raise ManifestSchemaError(
                    f"{path}: duplicate clip id {clip_id!r} for patient {record.patient_id!r}"
                )
            seen.add(clip_id)
            record.clips.append(ClipEntry(clip_path, entry["split"], clip_id, header.label))
        patients.append(record)
    return DatasetManifest(patients, root=root)


def save_manifest(manifest: DatasetManifest, path) -> None:
    path = Path(path)
    manifest.root = path.parent
    path.write_text(json.dumps(manifest.to_json(), indent=2) + "\n")
