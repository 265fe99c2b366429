"""SVF1 volume files.

Layout::

    bytes 0-3     b"SVF1"
    bytes 4-7     little-endian u32 header length H
    bytes 8..8+H  UTF-8 JSON header
    remainder     channels * z * y * x little-endian values, channel-major,
                  C-order with x fastest

Required header keys are ``shape``, ``spacing``, ``dtype``, ``channels`` and
``layout``. Two optional keys are understood: ``kind`` (``"labels"``,
``"prob"`` or ``"field"``) and ``num_classes`` for label volumes.
"""

from __future__ import annotations

import json
import os
import struct
from typing import Union

import numpy as np

from surfkit.errors import FormatError
from surfkit.volume import FieldStack, Grid3, LabelVolume, ProbVolume, ScalarField

MAGIC = b"SVF1"
LAYOUT = "c-order-x-fastest"
DTYPES = {"u8": np.dtype("<u1"), "f32": np.dtype("<f4"), "f64": np.dtype("<f8")}
KINDS = ("labels", "prob", "field")

Volume = Union[LabelVolume, ProbVolume, ScalarField, FieldStack]


def encode(
    data: np.ndarray,
    spacing,
    dtype: str,
    kind: str | None = None,
    num_classes: int | None = None,
) -> bytes:
    """Serialize a ``(channels, z, y, x)`` array to SVF1 bytes."""
    if dtype not in DTYPES:
        raise ValueError(f"unsupported dtype {dtype!r}; expected one of {sorted(DTYPES)}")
    data = np.asarray(data)
    if data.ndim == 3:
        data = data[None]
    if data.ndim != 4:
        raise ValueError(f"expected (channels, z, y, x) data, got shape {data.shape}")
    if dtype == "u8" and data.size and (data.min() < 0 or data.max() > 255):
        raise ValueError("u8 payload values must lie in [0, 255]")
    header = {
        "shape": [int(s) for s in data.shape[1:]],
        "spacing": [float(s) for s in spacing],
        "dtype": dtype,
        "channels": int(data.shape[0]),
        "layout": LAYOUT,
    }
    if kind is not None:
        header["kind"] = kind
    if num_classes is not None:
        header["num_classes"] = int(num_classes)
    head = json.dumps(header, separators=(",", ":")).encode("utf-8")
    payload = np.ascontiguousarray(data, dtype=DTYPES[dtype]).tobytes()
    return MAGIC + struct.pack("<I", len(head)) + head + payload


def decode(buf: bytes) -> tuple[dict, np.ndarray]:
    """Parse SVF1 bytes into ``(header, data)`` with data shaped (channels, z, y, x)."""
    if len(buf) < 8:
        raise FormatError("file shorter than the 8-byte preamble", len(buf))
    if buf[:4] != MAGIC:
        raise FormatError(f"bad magic {buf[:4]!r}", 0)
    (hlen,) = struct.unpack("<I", buf[4:8])
    if 8 + hlen > len(buf):
        raise FormatError(f"header length {hlen} runs past end of file", 4)
    try:
        header = json.loads(buf[8 : 8 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"header is not valid UTF-8 JSON: {exc}", 8) from None
    if not isinstance(header, dict):
        raise FormatError("header must be a JSON object", 8)
    for key in ("shape", "spacing", "dtype", "channels", "layout"):
        if key not in header:
            raise FormatError(f"header missing key {key!r}", 8)
    shape, dtype, channels = header["shape"], header["dtype"], header["channels"]
    if (
        not isinstance(shape, list)
        or len(shape) != 3
        or not all(isinstance(s, int) and s >= 1 for s in shape)
    ):
        raise FormatError(f"bad shape {shape!r}", 8)
    if not isinstance(header["spacing"], list) or len(header["spacing"]) != 3:
        raise FormatError(f"bad spacing {header['spacing']!r}", 8)
    if dtype not in DTYPES:
        raise FormatError(f"unknown dtype {dtype!r}", 8)
    if not isinstance(channels, int) or channels < 1:
        raise FormatError(f"bad channel count {channels!r}", 8)
    if header["layout"] != LAYOUT:
        raise FormatError(f"unsupported layout {header['layout']!r}", 8)
    start = 8 + hlen
    expected = channels * shape[0] * shape[1] * shape[2] * DTYPES[dtype].itemsize
    actual = len(buf) - start
    if actual != expected:
        what = "truncated payload" if actual < expected else "trailing bytes after payload"
        raise FormatError(
            f"{what}: header implies {expected} payload bytes, found {actual}",
            start + min(actual, expected),
        )
    data = np.frombuffer(buf, dtype=DTYPES[dtype], offset=start).reshape([channels] + shape)
    return header, data


def write_volume(path: str | os.PathLike, volume: Volume, dtype: str | None = None) -> None:
    """Write a volume; labels default to u8, everything else to f64."""
    spacing = volume.grid.spacing
    if isinstance(volume, LabelVolume):
        buf = encode(volume.labels, spacing, dtype or "u8", "labels", volume.num_classes)
    elif isinstance(volume, ProbVolume):
        buf = encode(volume.values, spacing, dtype or "f64", "prob")
    elif isinstance(volume, (ScalarField, FieldStack)):
        buf = encode(volume.values, spacing, dtype or "f64", "field")
    else:
        raise TypeError(f"cannot write {type(volume).__name__}")
    with open(path, "wb") as fh:
        fh.write(buf)


def read_volume(path: str | os.PathLike) -> Volume:
    """Read an SVF1 file into the matching volume type.

    ``u8`` payloads become :class:`LabelVolume`. Float payloads become a
    :class:`ProbVolume` when the header says ``kind: "prob"``, otherwise a
    :class:`ScalarField` (one channel) or :class:`FieldStack`.
    """
    with open(path, "rb") as fh:
        buf = fh.read()
    header, data = decode(buf)
    try:
        grid = Grid3(tuple(header["shape"]), tuple(header["spacing"]))
    except (ValueError, TypeError) as exc:
        raise FormatError(str(exc), 8) from None
    kind = header.get("kind")
    if kind is not None and kind not in KINDS:
        raise FormatError(f"unknown kind {kind!r}", 8)
    if header["dtype"] == "u8":
        if header["channels"] != 1:
            raise FormatError("u8 label volumes must have exactly one channel", 8)
        labels = data[0].astype(np.int64)
        num_classes = header.get("num_classes", int(labels.max()) + 1)
        return LabelVolume(grid, labels, num_classes)
    values = data.astype(np.float64)
    if kind == "prob":
        return ProbVolume(grid, values)
    if header["channels"] == 1:
        return ScalarField(grid, values[0])
    return FieldStack(grid, values)
