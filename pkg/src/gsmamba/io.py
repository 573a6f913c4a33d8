"""Binary PPM/PGM images and the GSTN tensor container.

GSTN layout (all little-endian)::

    b"GSTN" | u32 rank | rank x u64 extents | f64 payload (row-major)
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DecodeError, ShapeError

GSTN_MAGIC = b"GSTN"


@dataclass
class ImageU8:
    """8-bit image stored as an (H, W, channels) uint8 array."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim == 2:
            data = data[:, :, None]
        if data.ndim != 3 or data.shape[2] not in (1, 3):
            raise ShapeError(f"image must be HxWx1 or HxWx3, got {data.shape}")
        if data.dtype != np.uint8:
            raise ShapeError(f"image data must be uint8, got {data.dtype}")
        self.data = np.ascontiguousarray(data)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @classmethod
    def from_float(cls, t: np.ndarray) -> "ImageU8":
        """(C, H, W) or (H, W) floats in [0, 1] -> rounded 8-bit image."""
        t = np.asarray(t, dtype=np.float64)
        if t.ndim == 3:
            t = t.transpose(1, 2, 0)
        return cls(np.clip(np.rint(t * 255.0), 0, 255).astype(np.uint8))

    def to_float(self) -> np.ndarray:
        """(C, H, W) float64 in [0, 1]."""
        return self.data.transpose(2, 0, 1).astype(np.float64) / 255.0


# --------------------------------------------------------------------------
# PPM / PGM
# --------------------------------------------------------------------------


def encode_ppm(img: ImageU8) -> bytes:
    magic = b"P6" if img.channels == 3 else b"P5"
    header = magic + f"\n{img.width} {img.height}\n255\n".encode("ascii")
    return header + img.data.tobytes()


def decode_ppm(buf: bytes) -> ImageU8:
    if len(buf) < 2:
        raise DecodeError("file too short for a PNM magic number", 0)
    magic = buf[:2]
    if magic not in (b"P5", b"P6"):
        raise DecodeError(f"unsupported magic {magic!r}; expected b'P5' or b'P6'", 0)
    channels = 3 if magic == b"P6" else 1
    pos = 2
    fields = []
    while len(fields) < 3:
        # whitespace and comments between header fields
        while pos < len(buf) and (buf[pos : pos + 1].isspace() or buf[pos : pos + 1] == b"#"):
            if buf[pos : pos + 1] == b"#":
                while pos < len(buf) and buf[pos : pos + 1] not in (b"\n", b"\r"):
                    pos += 1
            else:
                pos += 1
        start = pos
        while pos < len(buf) and buf[pos : pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise DecodeError("expected an unsigned integer header field", start)
        fields.append((int(buf[start:pos]), start))
    if pos >= len(buf) or not buf[pos : pos + 1].isspace():
        raise DecodeError("missing single whitespace after maxval", pos)
    pos += 1
    (width, w_off), (height, h_off), (maxval, m_off) = fields
    if width < 1:
        raise DecodeError(f"width must be >= 1, got {width}", w_off)
    if height < 1:
        raise DecodeError(f"height must be >= 1, got {height}", h_off)
    if maxval != 255:
        raise DecodeError(f"maxval must be 255, got {maxval}", m_off)
    need = width * height * channels
    payload = buf[pos:]
    if len(payload) < need:
        raise DecodeError(f"truncated payload: need {need} bytes, have {len(payload)}", len(buf))
    data = np.frombuffer(payload[:need], dtype=np.uint8).reshape(height, width, channels)
    return ImageU8(data.copy())


def write_ppm(path, img: ImageU8) -> None:
    Path(path).write_bytes(encode_ppm(img))


def read_ppm(path) -> ImageU8:
    return decode_ppm(Path(path).read_bytes())


# --------------------------------------------------------------------------
# GSTN
# --------------------------------------------------------------------------


def encode_gstn(t: np.ndarray) -> bytes:
    t = np.asarray(t, dtype="<f8", order="C")  # ascontiguousarray would promote rank 0 to rank 1
    head = GSTN_MAGIC + struct.pack("<I", t.ndim) + struct.pack(f"<{t.ndim}Q", *t.shape)
    return head + t.tobytes()


def decode_gstn(buf: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    """Decode one tensor starting at ``offset``; returns (tensor, end offset)."""
    if buf[offset : offset + 4] != GSTN_MAGIC:
        raise DecodeError(f"bad magic {bytes(buf[offset:offset + 4])!r}; expected {GSTN_MAGIC!r}", offset)
    pos = offset + 4
    if len(buf) < pos + 4:
        raise DecodeError("truncated rank field", pos)
    (rank,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    if len(buf) < pos + 8 * rank:
        raise DecodeError(f"truncated extents: rank {rank}", pos)
    shape = struct.unpack_from(f"<{rank}Q", buf, pos)
    pos += 8 * rank
    count = int(np.prod(shape, dtype=np.int64)) if rank else 1
    end = pos + 8 * count
    if len(buf) < end:
        raise DecodeError(f"payload length mismatch: need {8 * count} bytes, have {len(buf) - pos}", pos)
    data = np.frombuffer(buf, dtype="<f8", count=count, offset=pos).astype(np.float64)
    return data.reshape(shape), end


def write_gstn(path, t: np.ndarray) -> None:
    Path(path).write_bytes(encode_gstn(t))


def read_gstn(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    t, end = decode_gstn(buf)
    if end != len(buf):
        raise DecodeError(f"{len(buf) - end} trailing bytes after tensor payload", end)
    return t
