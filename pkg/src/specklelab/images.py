"""Image file I/O: binary PGM/PPM and the DSPKIMG1 raw float container.

PGM (P5) samples are mapped linearly to [0, 1] by dividing by maxval;
16-bit samples are big-endian per the PNM convention.  Color PPM (P6)
inputs are converted to grayscale with the Rec. 601 luma weights
(0.299, 0.587, 0.114).  DSPKIMG1 stores unscaled 32-bit floats:

    magic "DSPKIMG1" (8) | rows u32 LE | cols u32 LE | IEEE-754 f32 LE,
    row-major

Writers clamp to [0, 1] for PGM targets; DSPKIMG1 is lossless for float32
values and round-trips bit-exactly.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import ConfigError, FormatError
from .speckle import as_image

IMAGE_MAGIC = b"DSPKIMG1"
FORMATS = ("pgm8", "pgm16", "f32raw")

_LUMA = (0.299, 0.587, 0.114)


def _pnm_header(blob: bytes, n_tokens: int):
    """Parse n whitespace/comment-separated tokens; return (tokens, data offset)."""
    i = 0
    tokens = []
    while len(tokens) < n_tokens:
        while i < len(blob):
            ch = blob[i:i + 1]
            if ch.isspace():
                i += 1
            elif ch == b"#":
                j = blob.find(b"\n", i)
                if j < 0:
                    raise FormatError(f"unterminated comment at offset {i}")
                i = j + 1
            else:
                break
        if i >= len(blob):
            raise FormatError(f"PNM header truncated at offset {i}")
        j = i
        while j < len(blob) and not blob[j:j + 1].isspace():
            j += 1
        tokens.append((blob[i:j], i))
        i = j
    if i >= len(blob) or not blob[i:i + 1].isspace():
        raise FormatError(f"expected whitespace after maxval at offset {i}")
    return tokens, i + 1


def _decode_pnm(blob: bytes) -> np.ndarray:
    tokens, data_off = _pnm_header(blob, 4)
    (magic, _), (w_tok, w_off), (h_tok, h_off), (mv_tok, mv_off) = tokens
    channels = 1 if magic == b"P5" else 3
    try:
        width, height, maxval = int(w_tok), int(h_tok), int(mv_tok)
    except ValueError as exc:
        raise FormatError(f"non-numeric PNM header field near offset {w_off}: {exc}") from exc
    if width < 1 or height < 1:
        raise FormatError(f"invalid PNM dimensions {width}x{height} at offset {w_off}")
    if not 1 <= maxval <= 65535:
        raise FormatError(f"invalid PNM maxval {maxval} at offset {mv_off}")
    n = width * height * channels
    wide = maxval > 255
    need = n * (2 if wide else 1)
    if len(blob) - data_off < need:
        raise FormatError(
            f"PNM pixel data truncated at offset {len(blob)}: need {need} bytes "
            f"from offset {data_off}"
        )
    dtype = ">u2" if wide else np.uint8
    raw = np.frombuffer(blob, dtype=dtype, count=n, offset=data_off)
    vals = raw.astype(np.float64) / maxval
    if channels == 1:
        return vals.reshape(height, width)
    rgb = vals.reshape(height, width, 3)
    return _LUMA[0] * rgb[:, :, 0] + _LUMA[1] * rgb[:, :, 1] + _LUMA[2] * rgb[:, :, 2]


def _decode_f32raw(blob: bytes) -> np.ndarray:
    if len(blob) < 16:
        raise FormatError(f"DSPKIMG1 file truncated at offset {len(blob)} (header is 16 bytes)")
    rows, cols = struct.unpack("<II", blob[8:16])
    if rows < 1 or cols < 1:
        raise FormatError(f"invalid DSPKIMG1 dimensions {rows}x{cols} at offset 8")
    need = 16 + rows * cols * 4
    if len(blob) != need:
        raise FormatError(f"DSPKIMG1 payload ends at offset {len(blob)}, expected {need}")
    data = np.frombuffer(blob, dtype="<f4", offset=16).astype(np.float64)
    return data.reshape(rows, cols)


def read_image(path) -> np.ndarray:
    """Load a P5/P6 PNM or DSPKIMG1 file as a 2-D float64 array."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] == IMAGE_MAGIC:
        return _decode_f32raw(blob)
    if blob[:2] in (b"P5", b"P6"):
        return _decode_pnm(blob)
    raise FormatError(f"unrecognized image magic at offset 0: {blob[:8]!r}")


def write_image(path, image: np.ndarray, fmt: str) -> None:
    """Write `image` as pgm8, pgm16 or f32raw.

    PGM output clamps to [0, 1] and quantizes to maxval; f32raw keeps raw
    float values at 32-bit precision.
    """
    image = as_image(image)
    if fmt not in FORMATS:
        raise ConfigError(f"format must be one of {FORMATS}, got {fmt!r}")
    rows, cols = image.shape
    if fmt == "f32raw":
        blob = IMAGE_MAGIC + struct.pack("<II", rows, cols) + image.astype("<f4").tobytes()
    else:
        maxval = 255 if fmt == "pgm8" else 65535
        q = np.rint(np.clip(image, 0.0, 1.0) * maxval)
        samples = q.astype(np.uint8 if fmt == "pgm8" else ">u2")
        blob = b"P5\n%d %d\n%d\n" % (cols, rows, maxval) + samples.tobytes()
    with open(path, "wb") as fh:
        fh.write(blob)


def infer_format(path) -> str:
    """Default output format from a filename extension."""
    name = str(path).lower()
    return "pgm16" if name.endswith((".pgm", ".pnm")) else "f32raw"
