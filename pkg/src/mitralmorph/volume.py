"""Labeled voxel volumes and a strict NRRD subset reader/writer.

Label codes are fixed: 0 background, 1 annulus, 2 anterior leaflet,
3 posterior leaflet. Other codes can be remapped on ingest with
``label_map``.
"""

from __future__ import annotations

import gzip
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

LABEL_NAMES = {0: "background", 1: "annulus", 2: "anterior", 3: "posterior"}
MAX_LABEL = 3

_TYPE_ALIASES = {"uint8", "uchar", "unsigned char", "uint8_t"}
# fields we accept; anything else in the header is rejected by name
_KNOWN_FIELDS = {
    "type", "dimension", "sizes", "space directions", "space origin",
    "encoding", "endian", "space", "kinds", "data file", "datafile",
}


class VolumeError(ValueError):
    pass


@dataclass(frozen=True)
class LabeledVolume:
    """Axis-aligned voxel grid of integer labels.

    ``labels`` is indexed ``[i, j, k]`` along x, y, z. ``direction`` is an
    orthonormal 3x3 matrix whose columns are the world directions of the
    index axes; files only ever carry diagonal (sign-only) directions, but
    in-memory volumes may be rigidly rotated.
    """

    labels: np.ndarray
    spacing: tuple[float, float, float]
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)
    direction: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 3:
            raise VolumeError(f"dimension ≠ 3 (got {labels.ndim})")
        if any(d < 2 for d in labels.shape):
            raise VolumeError(f"every axis needs at least 2 voxels, got {labels.shape}")
        if labels.size and (labels.min() < 0 or labels.max() > MAX_LABEL):
            bad = sorted(set(np.unique(labels).tolist()) - set(LABEL_NAMES))
            raise VolumeError(f"label value > {MAX_LABEL}: {bad}")
        labels = np.ascontiguousarray(labels, dtype=np.uint8)
        labels.setflags(write=False)
        spacing = tuple(float(s) for s in self.spacing)
        if len(spacing) != 3 or any(not np.isfinite(s) or s <= 0 for s in spacing):
            raise VolumeError(f"spacing must be 3 positive reals, got {self.spacing}")
        origin = tuple(float(o) for o in self.origin)
        if len(origin) != 3:
            raise VolumeError("origin must have 3 components")
        direction = np.array(self.direction, dtype=float).reshape(3, 3)
        if not np.allclose(direction.T @ direction, np.eye(3), atol=1e-9):
            raise VolumeError("direction matrix must be orthonormal")
        direction.setflags(write=False)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "direction", direction)

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(int(d) for d in self.labels.shape)

    def index_to_world(self, ijk) -> np.ndarray:
        """Map (fractional) voxel indices to world coordinates in mm."""
        ijk = np.asarray(ijk, dtype=float)
        return np.asarray(self.origin) + (ijk * np.asarray(self.spacing)) @ self.direction.T

    def with_labels(self, labels) -> "LabeledVolume":
        return LabeledVolume(labels, self.spacing, self.origin, self.direction)

    def transformed(self, rotation, translation) -> "LabeledVolume":
        """Same voxels, world frame moved by ``x -> R x + t``."""
        rotation = np.asarray(rotation, dtype=float)
        origin = rotation @ np.asarray(self.origin) + np.asarray(translation, dtype=float)
        return LabeledVolume(self.labels, self.spacing, tuple(origin), rotation @ self.direction)


def label_census(volume: LabeledVolume) -> dict[int, int]:
    values, counts = np.unique(volume.labels, return_counts=True)
    return {int(v): int(c) for v, c in zip(values, counts)}


def remap_labels(raw: np.ndarray, label_map: dict[int, int]) -> np.ndarray:
    """Apply ``{raw_code: canonical_code}``; unmapped codes pass through."""
    out = np.array(raw, copy=True)
    for src, dst in label_map.items():
        out[raw == src] = dst
    return out


# -- NRRD subset ----------------------------------------------------------

def _parse_vector(text: str, field_name: str) -> list[float]:
    parts = re.findall(r"\(([^)]*)\)", text)
    if not parts:
        raise VolumeError(f"malformed header field '{field_name}': {text!r}")
    try:
        return [[float(x) for x in p.split(",")] for p in parts]
    except ValueError:
        raise VolumeError(f"malformed header field '{field_name}': {text!r}") from None


def _read_header(fh) -> tuple[dict[str, str], int]:
    magic = fh.readline()
    if not magic.startswith(b"NRRD000"):
        raise VolumeError("malformed header: missing NRRD magic line")
    fields: dict[str, str] = {}
    while True:
        line = fh.readline()
        if not line:
            break
        text = line.decode("latin-1").rstrip("\r\n")
        if text == "":
            break
        if text.startswith("#") or ":=" in text:
            continue
        if ": " not in text:
            raise VolumeError(f"malformed header line: {text!r}")
        key, value = text.split(": ", 1)
        key = key.strip().lower()
        if key not in _KNOWN_FIELDS:
            raise VolumeError(f"unsupported header field '{key}'")
        fields[key] = value.strip()
    return fields, fh.tell()


def load_mask(path, label_map: dict[int, int] | None = None) -> LabeledVolume:
    """Read a 3D uint8 label volume from the NRRD subset.

    Raises
    ------
    FileNotFoundError
        If ``path`` does not exist.
    VolumeError
        Malformed or unsupported header, or label values outside 0..3.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such file: {path}")
    with open(path, "rb") as fh:
        fields, offset = _read_header(fh)
        payload = fh.read()

    for required in ("type", "dimension", "sizes", "encoding"):
        if required not in fields:
            raise VolumeError(f"malformed header: missing field '{required}'")
    if fields["type"].lower() not in _TYPE_ALIASES:
        raise VolumeError(f"unsupported field 'type': {fields['type']}")
    try:
        dimension = int(fields["dimension"])
    except ValueError:
        raise VolumeError(f"malformed header field 'dimension': {fields['dimension']!r}") from None
    if dimension != 3:
        raise VolumeError(f"dimension ≠ 3 (got {dimension})")
    try:
        sizes = [int(s) for s in fields["sizes"].split()]
    except ValueError:
        raise VolumeError(f"malformed header field 'sizes': {fields['sizes']!r}") from None
    if len(sizes) != 3:
        raise VolumeError("malformed header field 'sizes': need 3 entries")

    spacing = [1.0, 1.0, 1.0]
    direction = np.eye(3)
    if "space directions" in fields:
        vecs = _parse_vector(fields["space directions"], "space directions")
        mat = np.array(vecs, dtype=float)
        if mat.shape != (3, 3):
            raise VolumeError("malformed header field 'space directions'")
        off = mat - np.diag(np.diag(mat))
        if np.any(off != 0.0):
            raise VolumeError("unsupported field 'space directions': non-diagonal orientation")
        diag = np.diag(mat)
        if np.any(diag == 0.0):
            raise VolumeError("malformed header field 'space directions': zero spacing")
        spacing = np.abs(diag).tolist()
        direction = np.diag(np.sign(diag))
    origin = [0.0, 0.0, 0.0]
    if "space origin" in fields:
        vec = _parse_vector(fields["space origin"], "space origin")
        if len(vec) != 1 or len(vec[0]) != 3:
            raise VolumeError("malformed header field 'space origin'")
        origin = vec[0]

    encoding = fields["encoding"].lower()
    if encoding not in ("raw", "gzip", "gz"):
        raise VolumeError(f"unsupported field 'encoding': {fields['encoding']}")
    datafile = fields.get("data file", fields.get("datafile"))
    if datafile is not None:
        data_path = Path(datafile)
        if not data_path.is_absolute():
            data_path = path.parent / data_path
        payload = data_path.read_bytes()
    if encoding != "raw":
        payload = gzip.decompress(payload)

    count = int(np.prod(sizes))
    if len(payload) < count:
        raise VolumeError(f"truncated data: expected {count} bytes, got {len(payload)}")
    raw = np.frombuffer(payload[:count], dtype=np.uint8)
    labels = raw.reshape(sizes, order="F")
    if label_map:
        labels = remap_labels(labels, label_map)
    return LabeledVolume(labels, tuple(spacing), tuple(origin), direction)


def _fmt(x: float) -> str:
    return repr(float(x))


def save_mask(volume: LabeledVolume, path, encoding: str = "gzip") -> None:
    """Write ``volume`` as an attached NRRD; full float precision in the header."""
    if encoding not in ("raw", "gzip"):
        raise VolumeError(f"unsupported encoding {encoding!r}")
    d = volume.direction
    if np.any(np.abs(d - np.diag(np.diag(d))) > 0) or not np.all(np.abs(np.diag(d)) == 1.0):
        raise VolumeError("only axis-aligned volumes can be written")
    signs = np.diag(d)
    dirs = " ".join(
        "(" + ",".join(_fmt(signs[i] * volume.spacing[i] if j == i else 0.0) for j in range(3)) + ")"
        for i in range(3)
    )
    header = [
        "NRRD0004",
        "# written by mitralmorph",
        "type: uint8",
        "dimension: 3",
        "space: right-anterior-superior",
        "sizes: " + " ".join(str(s) for s in volume.dims),
        "space directions: " + dirs,
        "space origin: (" + ",".join(_fmt(o) for o in volume.origin) + ")",
        f"encoding: {encoding}",
    ]
    body = volume.labels.tobytes(order="F")
    if encoding == "gzip":
        body = gzip.compress(body, compresslevel=6, mtime=0)
    path = Path(path)
    try:
        with open(path, "wb") as fh:
            fh.write(("\n".join(header) + "\n\n").encode("ascii"))
            fh.write(body)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
