"""Flat binary containers for tensors and parameter checkpoints.

Both formats are little-endian throughout and self-describing.

Tensor container (magic ``DPBF-TF1``), used for spectrogram, feature and
weight dumps::

    offset  size  field
    0       8     magic b"DPBF-TF1"
    8       1     kind: 0 = real float32, 1 = complex (interleaved float32)
    9       1     flags: bit0 set when an STFT config block follows the dims
    10      2     rank (uint16)
    12      8*r   dims (uint64 each)
    ...     13    config block, only if flagged:
                  sample_rate uint32, n_fft uint32, hop uint32, window uint8
    ...           payload: prod(dims) float32 values, or prod(dims) (re, im)
                  float32 pairs when complex

Checkpoint container (magic ``DPBF-CK1``), used for model parameters::

    offset  size  field
    0       8     magic b"DPBF-CK1"
    8       4     parameter count (uint32)
    then per parameter, in order:
            2     name length (uint16)
            n     name, utf-8
            1     dtype tag: 0 = float32, 1 = float64
            2     rank (uint16)
            8*r   dims (uint64 each)
            ...   raw little-endian values

Checkpoint round trips are bit-exact: values are stored in their native
precision, untouched. Tensor dumps are float32 and therefore lossy for
float64 inputs.

All writers go through a temp-file-plus-rename so a crash cannot leave a
half-written file at the target path.
"""

from __future__ import annotations

import os
import struct
import tempfile

import numpy as np

from .stft import StftConfig

TENSOR_MAGIC = b"DPBF-TF1"
CHECKPOINT_MAGIC = b"DPBF-CK1"

_KIND_REAL = 0
_KIND_COMPLEX = 1
_FLAG_CONFIG = 1

_WINDOW_TAGS = ("hann", "sqrthann", "rect")
_DTYPE_TAGS = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


def atomic_write(path, payload: bytes):
    """Write bytes to `path` via a same-directory temp file and rename."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class _Reader:
    def __init__(self, buf: bytes, what: str):
        self.buf = buf
        self.pos = 0
        self.what = what

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise ValueError(f"truncated {self.what} file")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack("<" + fmt, self.take(struct.calcsize("<" + fmt)))

    def done(self):
        if self.pos != len(self.buf):
            raise ValueError(f"{len(self.buf) - self.pos} trailing bytes in "
                             f"{self.what} file")


def save_tensor(path, array, cfg: StftConfig | None = None):
    """Serialize a real or complex ndarray as float32 payload.

    Complex input is stored as interleaved (re, im) pairs. Pass `cfg` to
    embed the STFT geometry alongside spectrogram data.
    """
    array = np.asarray(array)
    parts = [TENSOR_MAGIC]
    kind = _KIND_COMPLEX if np.iscomplexobj(array) else _KIND_REAL
    flags = _FLAG_CONFIG if cfg is not None else 0
    parts.append(struct.pack("<BBH", kind, flags, array.ndim))
    parts.append(struct.pack(f"<{array.ndim}Q", *array.shape))
    if cfg is not None:
        parts.append(struct.pack("<IIIB", cfg.sample_rate, cfg.n_fft, cfg.hop,
                                 _WINDOW_TAGS.index(cfg.window)))
    if kind == _KIND_COMPLEX:
        flat = np.empty(array.size * 2, dtype="<f4")
        flat[0::2] = array.real.reshape(-1)
        flat[1::2] = array.imag.reshape(-1)
    else:
        flat = np.ascontiguousarray(array.reshape(-1), dtype="<f4")
    parts.append(flat.tobytes())
    atomic_write(path, b"".join(parts))


def load_tensor(path):
    """Read a tensor container back: returns (array, config-or-None).

    Real payloads come back float32, complex ones complex64.
    """
    with open(path, "rb") as f:
        r = _Reader(f.read(), "tensor")
    if r.take(8) != TENSOR_MAGIC:
        raise ValueError(f"{path} is not a tensor container (bad magic)")
    kind, flags, rank = r.unpack("BBH")
    if kind not in (_KIND_REAL, _KIND_COMPLEX):
        raise ValueError(f"unknown tensor kind {kind}")
    dims = r.unpack(f"{rank}Q")
    cfg = None
    if flags & _FLAG_CONFIG:
        sample_rate, n_fft, hop, wtag = r.unpack("IIIB")
        if wtag >= len(_WINDOW_TAGS):
            raise ValueError(f"unknown window tag {wtag}")
        cfg = StftConfig(sample_rate=sample_rate, n_fft=n_fft, hop=hop,
                         window=_WINDOW_TAGS[wtag])
    count = int(np.prod(dims, dtype=np.int64)) if rank else 1
    if kind == _KIND_COMPLEX:
        flat = np.frombuffer(r.take(8 * count), dtype="<f4")
        arr = (flat[0::2] + 1j * flat[1::2]).astype(np.complex64).reshape(dims)
    else:
        arr = np.frombuffer(r.take(4 * count), dtype="<f4").reshape(dims).copy()
    r.done()
    return arr, cfg


def save_checkpoint(path, arrays):
    """Serialize an ordered name->ndarray mapping, bit-exact.

    Only float32/float64 values are accepted; those are the precisions the
    trainer uses.
    """
    parts = [CHECKPOINT_MAGIC, struct.pack("<I", len(arrays))]
    for name, value in arrays.items():
        value = np.asarray(value)
        tag = None
        for t, dt in _DTYPE_TAGS.items():
            if value.dtype == dt:
                tag = t
        if tag is None:
            raise TypeError(f"parameter {name} has unsupported dtype {value.dtype}")
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<BH", tag, value.ndim))
        parts.append(struct.pack(f"<{value.ndim}Q", *value.shape))
        parts.append(np.ascontiguousarray(value).tobytes())
    atomic_write(path, b"".join(parts))


def load_checkpoint(path):
    """Read a checkpoint back into an ordered name->ndarray dict."""
    with open(path, "rb") as f:
        r = _Reader(f.read(), "checkpoint")
    if r.take(8) != CHECKPOINT_MAGIC:
        raise ValueError(f"{path} is not a checkpoint container (bad magic)")
    (count,) = r.unpack("I")
    out = {}
    for _ in range(count):
        (name_len,) = r.unpack("H")
        name = r.take(name_len).decode("utf-8")
        tag, rank = r.unpack("BH")
        if tag not in _DTYPE_TAGS:
            raise ValueError(f"unknown dtype tag {tag} for parameter {name}")
        dims = r.unpack(f"{rank}Q")
        dtype = _DTYPE_TAGS[tag]
        n = int(np.prod(dims, dtype=np.int64)) if rank else 1
        out[name] = np.frombuffer(r.take(n * dtype.itemsize),
                                  dtype=dtype).reshape(dims).copy()
    r.done()
    return out
