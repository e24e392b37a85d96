"""File formats: the binary array container, WAV, PGM/PPM frames, TSV tables.

Container layout (all integers little-endian)::

    magic      4 bytes   b"AVPH"
    version    uint16
    kind       uint16    1 = features, 2 = eigenmouth basis, 3 = mixture model
    dims       uint32
    count      uint32
    hdr_len    uint32
    header     hdr_len bytes of UTF-8 JSON (layout, kind-specific metadata)
    payload    row-major float32 (features) or float64 (basis, model)

The payload of a features container is ``count`` rows of ``dims`` values.
Basis and model payloads are described by their header (see the ``pack_*``
helpers in the owning modules).
"""

import csv
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from avphon.errors import DataError

MAGIC = b"AVPH"
CONTAINER_VERSION = 1
KIND_FEATURES = 1
KIND_BASIS = 2
KIND_MODEL = 3

_FIXED = struct.Struct("<4sHHIII")


class ContainerError(DataError):
    pass


def pack_container(kind, dims, count, header, payload):
    """Serialize a container. ``payload`` is a numpy array written as-is (little-endian)."""
    hdr = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    arr = np.ascontiguousarray(payload)
    if arr.dtype.byteorder == ">":
        arr = arr.byteswap().view(arr.dtype.newbyteorder("<"))
    return _FIXED.pack(MAGIC, CONTAINER_VERSION, kind, dims, count, len(hdr)) + hdr + arr.tobytes()


def unpack_container(data, kind, dtype):
    """Parse a container, returning ``(dims, count, header, flat_payload)``.

    Raises ContainerError for wrong magic, version, kind, or a truncated payload.
    """
    if len(data) < _FIXED.size:
        raise ContainerError("container truncated: incomplete fixed header")
    magic, version, got_kind, dims, count, hdr_len = _FIXED.unpack_from(data, 0)
    if magic != MAGIC:
        raise ContainerError(f"bad magic {magic!r}")
    if version != CONTAINER_VERSION:
        raise ContainerError(f"unsupported container version {version} (expected {CONTAINER_VERSION})")
    if got_kind != kind:
        raise ContainerError(f"container kind {got_kind} where {kind} was expected")
    start = _FIXED.size
    if len(data) < start + hdr_len:
        raise ContainerError("container truncated: incomplete JSON header")
    try:
        header = json.loads(data[start:start + hdr_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ContainerError(f"corrupt container header: {exc}") from None
    body = data[start + hdr_len:]
    dt = np.dtype(dtype).newbyteorder("<")
    n_values = header.get("n_values", dims * count)
    if len(body) != n_values * dt.itemsize:
        raise ContainerError(
            f"container payload has {len(body)} bytes, expected {n_values * dt.itemsize}")
    flat = np.frombuffer(body, dtype=dt).astype(np.dtype(dtype), copy=True)
    return dims, count, header, flat


def atomic_write_bytes(path, data):
    """Write via a temp file in the same directory followed by a rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text):
    atomic_write_bytes(path, text.encode("utf-8"))


def dump_json(obj):
    """Canonical JSON text: sorted keys, fixed indentation, trailing newline."""
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


# --- WAV -------------------------------------------------------------------

def read_wav(path):
    """Read a mono 16-bit PCM or 32-bit float WAV file.

    Returns ``(samples, sample_rate)`` with samples as float64 in [-1, 1]
    for integer input.
    """
    from scipy.io import wavfile

    try:
        rate, data = wavfile.read(str(path))
    except (ValueError, OSError) as exc:
        raise DataError(f"cannot read WAV {path}: {exc}") from None
    if data.ndim != 1:
        raise DataError(f"{path}: expected mono audio, got {data.shape[1]} channels")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise DataError(f"{path}: unsupported sample format {data.dtype}")
    return samples, int(rate)


def write_wav(path, samples, sample_rate, pcm16=True):
    from scipy.io import wavfile

    samples = np.asarray(samples, dtype=np.float64)
    if pcm16:
        data = np.clip(np.round(samples * 32767.0), -32768, 32767).astype(np.int16)
    else:
        data = samples.astype(np.float32)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    wavfile.write(str(path), int(sample_rate), data)


# --- images ----------------------------------------------------------------

def read_image(path):
    """Decode an image into a uint8 array: (H, W) for gray, (H, W, 3) for colour."""
    from PIL import Image

    try:
        with Image.open(path) as im:
            if im.mode == "L":
                return np.asarray(im, dtype=np.uint8).copy()
            return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()
    except OSError as exc:
        raise DataError(f"cannot decode image {path}: {exc}") from None


def write_pgm(path, pixels):
    """Write an 8-bit binary portable graymap (P5)."""
    pixels = np.asarray(pixels)
    if pixels.ndim != 2 or pixels.dtype != np.uint8:
        raise ValueError("write_pgm expects a 2-D uint8 array")
    h, w = pixels.shape
    Path(path).write_bytes(b"P5\n%d %d\n255\n" % (w, h) + pixels.tobytes())


# --- TSV -------------------------------------------------------------------

def read_tsv(path, required=()):
    """Read a headed UTF-8 TSV into a list of dicts, checking required columns."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing file {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh, delimiter="\t")
        if reader.fieldnames is None:
            raise DataError(f"{path}: empty file (header row required)")
        missing = [c for c in required if c not in reader.fieldnames]
        if missing:
            raise DataError(f"{path}: missing column(s) {', '.join(missing)}")
        return list(reader)


def write_tsv(path, fieldnames, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=fieldnames, delimiter="\t", lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def csv_text(fieldnames, rows):
    """Render rows as CSV text with ``\\n`` line endings."""
    import io as _io

    buf = _io.StringIO()
    w = csv.DictWriter(buf, fieldnames=fieldnames, lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()
