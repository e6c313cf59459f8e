"""Minimal NPY v1.0 reader/writer for the editor exchange format.

Implements the published byte-level format directly rather than delegating
to numpy's loader, because the same files are produced and consumed by
external editor processes in other languages and the on-disk contract must
stay pinned: magic ``\\x93NUMPY``, version (1, 0), little-endian uint16
header length, header padded with spaces to a 64-byte-aligned total and
terminated by a newline.

Scope is deliberately narrow: C-order arrays, 2D or 3D, dtypes float32,
float64, complex64, complex128. Writes are atomic (temp file + rename).
"""

from __future__ import annotations

import ast
import os
import struct
import tempfile

import numpy as np

__all__ = [
    "NpyError",
    "UnsupportedDtypeError",
    "FortranOrderError",
    "TruncatedFileError",
    "npy_write",
    "npy_read",
]

_MAGIC = b"\x93NUMPY"
_VERSION = (1, 0)
_ALIGN = 64

# descr -> numpy dtype, little-endian only
_SUPPORTED = {
    "<f4": np.dtype("<f4"),
    "<f8": np.dtype("<f8"),
    "<c8": np.dtype("<c8"),
    "<c16": np.dtype("<c16"),
}


class NpyError(ValueError):
    """Malformed or out-of-contract NPY data."""


class UnsupportedDtypeError(NpyError):
    """Dtype outside the float32/float64/complex64/complex128 whitelist."""


class FortranOrderError(NpyError):
    """Fortran-order arrays are outside the format contract."""


class TruncatedFileError(NpyError):
    """File ends before the header or payload is complete."""


def _descr_for(dtype: np.dtype) -> str:
    little = dtype.newbyteorder("<")
    for descr, candidate in _SUPPORTED.items():
        if candidate == little:
            return descr
    raise UnsupportedDtypeError(
        f"unsupported dtype {dtype}; supported: {', '.join(_SUPPORTED)}"
    )


def _build_header(descr: str, shape: tuple[int, ...]) -> bytes:
    body = (
        f"{{'descr': '{descr}', 'fortran_order': False, "
        f"'shape': {shape!r}, }}"
    ).encode("latin1")
    prefix_len = len(_MAGIC) + 2 + 2
    total = prefix_len + len(body) + 1  # final newline
    pad = (-total) % _ALIGN
    header = body + b" " * pad + b"\n"
    if len(header) > 0xFFFF:
        raise NpyError("header too long for NPY v1.0")
    return (
        _MAGIC
        + bytes(_VERSION)
        + struct.pack("<H", len(header))
        + header
    )


def npy_write(path, array: np.ndarray) -> None:
    """Write a 2D/3D array as NPY v1.0, atomically.

    The array is stored C-ordered and little-endian; dtypes outside the
    supported set are rejected rather than silently converted.
    """
    arr = np.asarray(array)
    if arr.ndim not in (2, 3):
        raise NpyError(f"only 2D or 3D arrays supported, got {arr.ndim}D")
    descr = _descr_for(arr.dtype)
    arr = np.ascontiguousarray(arr.astype(_SUPPORTED[descr], copy=False))
    header = _build_header(descr, arr.shape)
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".npy.tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(header)
            fh.write(arr.tobytes(order="C"))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _read_exact(fh, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise TruncatedFileError(
            f"truncated file: expected {n} bytes for {what}, got {len(data)}"
        )
    return data


def npy_read(path) -> np.ndarray:
    """Read an NPY v1.0 file written under this module's contract.

    Returns a fresh writable C-order array. Fortran-order files, dtypes
    outside the whitelist, and short files raise distinct error types.
    """
    with open(path, "rb") as fh:
        magic = _read_exact(fh, len(_MAGIC), "magic")
        if magic != _MAGIC:
            raise NpyError(f"not an NPY file: bad magic {magic!r}")
        major, minor = _read_exact(fh, 2, "version")
        if (major, minor) != _VERSION:
            raise NpyError(f"unsupported NPY version {major}.{minor}")
        (hlen,) = struct.unpack("<H", _read_exact(fh, 2, "header length"))
        header = _read_exact(fh, hlen, "header").decode("latin1")
        try:
            meta = ast.literal_eval(header)
        except (ValueError, SyntaxError) as exc:
            raise NpyError(f"unparseable header: {exc}") from exc
        if not isinstance(meta, dict) or set(meta) != {
            "descr", "fortran_order", "shape",
        }:
            raise NpyError(f"malformed header dict: {header.strip()!r}")
        if meta["fortran_order"]:
            raise FortranOrderError("fortran order unsupported")
        descr = meta["descr"]
        if descr not in _SUPPORTED:
            raise UnsupportedDtypeError(
                f"unsupported dtype {descr!r}; supported: {', '.join(_SUPPORTED)}"
            )
        shape = meta["shape"]
        if (not isinstance(shape, tuple)
                or len(shape) not in (2, 3)
                or not all(isinstance(n, int) and n >= 0 for n in shape)):
            raise NpyError(f"unsupported shape {shape!r}: need 2D or 3D")
        dtype = _SUPPORTED[descr]
        count = int(np.prod(shape))
        payload = fh.read(count * dtype.itemsize + 1)
        if len(payload) < count * dtype.itemsize:
            raise TruncatedFileError(
                f"truncated file: expected {count * dtype.itemsize} payload "
                f"bytes, got {len(payload)}"
            )
        if len(payload) > count * dtype.itemsize:
            raise NpyError("trailing bytes after array payload")
    return np.frombuffer(payload, dtype=dtype).reshape(shape).copy()
