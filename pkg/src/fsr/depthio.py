"""Depth frame I/O, dataset manifests, and the 31-class label space.

Depth frames are stored as 16-bit binary PGM (P5, maxval 65535, big-endian
samples). Depth values are millimeters; 0 means void (no sensor return).
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DuplicatePathError,
    MalformedHeaderError,
    MalformedRowError,
    TruncatedDataError,
    UnknownLabelError,
    WrongMaxvalError,
)

# 24 letters (no J/Z) followed by 7 digits; 2 and 6 fold into V and W.
LABELS = (
    "A", "B", "C", "D", "E", "F", "G", "H", "I", "K", "L",
    "M", "N", "O", "P", "Q", "R", "S", "T", "U", "V", "W",
    "X", "Y", "1", "3", "4", "5", "7", "8", "9",
)
NUM_CLASSES = len(LABELS)
LABEL_INDEX = {name: i for i, name in enumerate(LABELS)}

_ALIASES = {"2": "V", "6": "W"}


def parse_label(s: str) -> str:
    """Parse a label name to its canonical form.

    Case-insensitive; accepts the aliases "2" -> V and "6" -> W. Raises
    UnknownLabelError for anything else (including J, Z, and 0).
    """
    name = s.strip().upper()
    name = _ALIASES.get(name, name)
    if name not in LABEL_INDEX:
        raise UnknownLabelError(f"unknown label {s!r}")
    return name


def label_index(s: str) -> int:
    return LABEL_INDEX[parse_label(s)]


@dataclass
class DepthFrame:
    """A single depth image: (height, width) array of uint16 millimeters."""

    pixels: np.ndarray

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels)
        if self.pixels.ndim != 2 or self.pixels.size == 0:
            raise ValueError("depth frame must be a non-empty 2-d array")
        if self.pixels.dtype != np.uint16:
            if np.any(self.pixels < 0) or np.any(self.pixels > 65535):
                raise ValueError("depth values must fit in 16 bits")
            self.pixels = self.pixels.astype(np.uint16)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


def _read_token(buf: io.BytesIO) -> bytes:
    """Read one whitespace-delimited PGM header token, skipping # comments."""
    tok = b""
    while True:
        c = buf.read(1)
        if c == b"":
            raise MalformedHeaderError("unexpected end of header")
        if c == b"#":
            while c not in (b"\n", b""):
                c = buf.read(1)
            continue
        if c.isspace():
            if tok:
                return tok
            continue
        tok += c


def read_pgm16(data: bytes) -> DepthFrame:
    """Decode a binary 16-bit PGM (P5, maxval 65535, big-endian samples)."""
    buf = io.BytesIO(data)
    if _read_token(buf) != b"P5":
        raise MalformedHeaderError("not a binary PGM (P5) file")
    try:
        width = int(_read_token(buf))
        height = int(_read_token(buf))
        maxval = int(_read_token(buf))
    except ValueError as e:
        raise MalformedHeaderError(f"bad header token: {e}") from e
    if width < 1 or height < 1:
        raise MalformedHeaderError(f"bad dimensions {width}x{height}")
    if maxval != 65535:
        raise WrongMaxvalError(f"maxval {maxval}, expected 65535")
    payload = buf.read(2 * width * height)
    if len(payload) < 2 * width * height:
        raise TruncatedDataError(
            f"expected {2 * width * height} payload bytes, got {len(payload)}"
        )
    pixels = np.frombuffer(payload, dtype=">u2").reshape(height, width)
    return DepthFrame(pixels.astype(np.uint16))


def write_pgm16(frame: DepthFrame) -> bytes:
    """Canonical, byte-deterministic 16-bit PGM serialization."""
    header = f"P5\n{frame.width} {frame.height}\n65535\n".encode("ascii")
    return header + frame.pixels.astype(">u2").tobytes()


def write_pgm8(mask: np.ndarray) -> bytes:
    """Serialize a boolean mask as an 8-bit PGM with values 0/255."""
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    header = f"P5\n{w} {h}\n255\n".encode("ascii")
    return header + (mask.astype(np.uint8) * 255).tobytes()


@dataclass(frozen=True)
class ManifestRecord:
    path: str
    subject: int
    label: str


@dataclass
class DatasetManifest:
    records: list[ManifestRecord] = field(default_factory=list)

    @property
    def subjects(self) -> list[int]:
        return sorted({r.subject for r in self.records})

    def __len__(self) -> int:
        return len(self.records)


MANIFEST_HEADER = "path,subject,label"


def load_manifest(text: str) -> DatasetManifest:
    """Parse and validate a manifest CSV ("path,subject,label")."""
    lines = text.splitlines()
    if not lines or lines[0].strip() != MANIFEST_HEADER:
        raise MalformedRowError(f"manifest must start with {MANIFEST_HEADER!r}")
    records = []
    seen = set()
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 3:
            raise MalformedRowError(f"line {lineno}: expected 3 fields")
        path, subject_s, label_s = (p.strip() for p in parts)
        if path in seen:
            raise DuplicatePathError(f"line {lineno}: duplicate path {path!r}")
        seen.add(path)
        try:
            subject = int(subject_s)
        except ValueError as e:
            raise MalformedRowError(f"line {lineno}: bad subject {subject_s!r}") from e
        if subject < 0:
            raise MalformedRowError(f"line {lineno}: negative subject id")
        records.append(ManifestRecord(path, subject, parse_label(label_s)))
    manifest = DatasetManifest(records)
    subjects = manifest.subjects
    if subjects and subjects != list(range(len(subjects))):
        raise MalformedRowError(
            f"subject ids must be contiguous from 0, got {subjects}"
        )
    return manifest


def dump_manifest(manifest: DatasetManifest) -> str:
    lines = [MANIFEST_HEADER]
    lines.extend(f"{r.path},{r.subject},{r.label}" for r in manifest.records)
    return "\n".join(lines) + "\n"
