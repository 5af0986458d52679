"""Minimal binary PGM (P5) / PPM (P6) reading and writing."""
import re

import numpy as np

from .errors import ImageFormatError

_TOKEN = re.compile(rb"(?:\s|#[^\n]*\n?)*(\S+)")


def _header(data):
    fields = []
    pos = 0
    for _ in range(4):
        m = _TOKEN.match(data, pos)
        if m is None:
            raise ImageFormatError("truncated netpbm header")
        fields.append(m.group(1))
        pos = m.end()
    # exactly one whitespace byte separates the header from the raster
    if pos >= len(data) or data[pos:pos + 1] not in (b" ", b"\t", b"\n", b"\r"):
        raise ImageFormatError("missing whitespace after netpbm header")
    return fields, pos + 1


def decode(data):
    """Decode P5/P6 bytes into a ``(H, W)`` or ``(H, W, 3)`` array."""
    if data[:2] not in (b"P5", b"P6"):
        raise ImageFormatError(f"not a binary PGM/PPM file (magic {data[:2]!r})")
    fields, offset = _header(data)
    try:
        width, height, maxval = (int(f) for f in fields[1:])
    except ValueError:
        raise ImageFormatError("non-numeric netpbm header field") from None
    if width < 1 or height < 1 or not 0 < maxval < 65536:
        raise ImageFormatError(f"bad netpbm dimensions {width}x{height} maxval {maxval}")
    channels = 3 if fields[0] == b"P6" else 1
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype(np.uint8)
    count = width * height * channels
    available = (len(data) - offset) // dtype.itemsize
    if available < count:
        raise ImageFormatError(f"raster holds {available} samples, expected {count}")
    raster = np.frombuffer(data, dtype=dtype, count=count, offset=offset)
    shape = (height, width, 3) if channels == 3 else (height, width)
    img = raster.reshape(shape)
    if maxval > 255:
        return img.astype(np.uint16)
    return img.copy()


def read(path):
    with open(path, "rb") as fh:
        return decode(fh.read())


def encode(img, maxval=None):
    img = np.asarray(img)
    if img.ndim == 3 and img.shape[2] == 1:
        img = img[..., 0]
    if img.ndim == 2:
        magic = b"P5"
    elif img.ndim == 3 and img.shape[2] == 3:
        magic = b"P6"
    else:
        raise ValueError(f"cannot encode array of shape {img.shape} as PGM/PPM")
    if maxval is None:
        maxval = 65535 if img.dtype == np.uint16 else 255
    height, width = img.shape[:2]
    header = b"%s\n%d %d\n%d\n" % (magic, width, height, maxval)
    dtype = ">u2" if maxval > 255 else np.uint8
    return header + np.ascontiguousarray(img, dtype=dtype).tobytes()


def write(path, img, maxval=None):
    with open(path, "wb") as fh:
        fh.write(encode(img, maxval))
