"""WAV read/write with a fixed policy: float arrays in, 32-bit float files out.

Arrays are [n] or [channels, n]; files follow the usual [n, channels]
layout. Integer PCM files are rescaled to [-1, 1) on read.
"""

from __future__ import annotations

import io

import numpy as np
from scipy.io import wavfile

from .container import atomic_write

_INT_SCALES = {np.dtype(np.int16): 2.0 ** 15, np.dtype(np.int32): 2.0 ** 31,
               np.dtype(np.uint8): 2.0 ** 7}


def write_wav(path, data, sample_rate=16000):
    """Write mono [n] or multichannel [channels, n] float samples."""
    data = np.asarray(data, dtype=np.float32)
    if data.ndim == 2:
        data = np.ascontiguousarray(data.T)
    elif data.ndim != 1:
        raise ValueError(f"expected [n] or [channels, n], got shape {data.shape}")
    buf = io.BytesIO()
    wavfile.write(buf, int(sample_rate), data)
    atomic_write(path, buf.getvalue())


def read_wav(path, expect_rate=None):
    """Read a WAV as (sample_rate, float64 [n] or [channels, n])."""
    rate, data = wavfile.read(path)
    if expect_rate is not None and rate != expect_rate:
        raise ValueError(f"{path}: sample rate {rate}, expected {expect_rate}")
    if data.dtype in _INT_SCALES:
        offset = 128 if data.dtype == np.uint8 else 0
        data = (data.astype(np.float64) - offset) / _INT_SCALES[data.dtype]
    else:
        data = data.astype(np.float64)
    if data.ndim == 2:
        data = data.T
    return rate, data
