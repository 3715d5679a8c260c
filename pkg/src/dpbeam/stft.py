"""Short-time Fourier analysis/synthesis used by every other module.

Analysis: reflect-pad by half a window so frame t is centered on sample
t*hop, slide a periodic Hann window, rfft. Synthesis: weighted overlap-add
with window-square normalization, which inverts the analysis exactly for
any config whose overlapped squared window never vanishes.

Shapes follow the [..., bins, frames] convention, channels leading.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field

import numpy as np
import scipy.fft
from scipy.signal import get_window


@dataclass(frozen=True)
class StftConfig:
    """Filterbank geometry. Defaults give 512/256 (32 ms / 16 ms) at 16 kHz."""

    sample_rate: int = 16000
    n_fft: int = 512
    hop: int = 256
    window: str = "hann"

    def __post_init__(self):
        if self.n_fft <= 0 or self.n_fft % 2 != 0:
            raise ValueError(f"n_fft must be positive and even, got {self.n_fft}")
        if not (0 < self.hop <= self.n_fft):
            raise ValueError(f"hop must lie in (0, n_fft], got {self.hop}")
        if self.n_fft % self.hop != 0:
            raise ValueError("hop must divide n_fft for exact overlap-add")
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if self.window not in ("hann", "sqrthann", "rect"):
            raise ValueError(f"unknown window {self.window!r}")

    @property
    def n_bins(self):
        return self.n_fft // 2 + 1

    @property
    def win_length(self):
        return self.n_fft

    def n_frames(self, n_samples):
        if n_samples <= 0:
            raise ValueError("need at least one sample")
        return -(-n_samples // self.hop)  # ceil

    def bin_freqs(self):
        """Center frequency of each bin in Hz, shape [n_bins]."""
        return scipy.fft.rfftfreq(self.n_fft, 1.0 / self.sample_rate)

    def frame_times(self, n_frames):
        """Center time of each frame in seconds, shape [n_frames]."""
        return np.arange(n_frames) * self.hop / self.sample_rate


@functools.lru_cache(maxsize=8)
def _window_array(cfg: StftConfig):
    if cfg.window == "rect":
        w = np.ones(cfg.n_fft)
    else:
        w = get_window("hann", cfg.n_fft, fftbins=True)
        if cfg.window == "sqrthann":
            w = np.sqrt(w)
    return w


def cola_error(cfg: StftConfig):
    """Max deviation of the overlapped window from a constant (interior only).

    Zero (to rounding) for periodic Hann at 50% overlap; a large value
    signals a config whose analysis doesn't weight all samples equally.
    """
    w = _window_array(cfg)
    k = cfg.n_fft // cfg.hop
    ola = np.zeros(cfg.hop)
    for b in range(k):
        ola += w[b * cfg.hop:(b + 1) * cfg.hop]
    return float(np.max(np.abs(ola - np.mean(ola))))


@dataclass
class Spectrogram:
    """Complex STFT coefficients [..., n_bins, n_frames] plus their config.

    `n_samples` remembers the pre-padding signal length so synthesis can
    trim back to it.
    """

    data: np.ndarray
    cfg: StftConfig = field(default_factory=StftConfig)
    n_samples: int | None = None

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if not np.iscomplexobj(self.data):
            raise TypeError("Spectrogram data must be complex")
        if self.data.ndim < 2:
            raise ValueError("Spectrogram data must be at least [bins, frames]")
        if self.data.shape[-2] != self.cfg.n_bins:
            raise ValueError(
                f"bin axis has {self.data.shape[-2]} entries, config wants {self.cfg.n_bins}")

    @property
    def n_bins(self):
        return self.data.shape[-2]

    @property
    def n_frames(self):
        return self.data.shape[-1]

    def magnitude(self):
        return np.abs(self.data)

    def phase(self):
        return np.angle(self.data)


def _pad_amounts(cfg: StftConfig, n_samples: int):
    t = cfg.n_frames(n_samples)
    pad_left = cfg.n_fft // 2
    total = (t - 1) * cfg.hop + cfg.n_fft
    pad_right = total - pad_left - n_samples
    return t, pad_left, pad_right


def frame_signal(x, cfg: StftConfig):
    """Reflect-pad and slice into windows: [..., n] -> [..., frames, n_fft]."""
    x = np.asarray(x)
    n = x.shape[-1]
    _, pad_left, pad_right = _pad_amounts(cfg, n)
    if n <= max(pad_left, pad_right):
        raise ValueError(
            f"signal of {n} samples is too short to reflect-pad by {pad_left}")
    pads = [(0, 0)] * (x.ndim - 1) + [(pad_left, pad_right)]
    padded = np.pad(x, pads, mode="reflect")
    frames = np.lib.stride_tricks.sliding_window_view(padded, cfg.n_fft, axis=-1)
    return frames[..., ::cfg.hop, :].copy()


def stft(x, cfg: StftConfig | None = None):
    """Analyze real samples [..., n] into a Spectrogram [..., bins, frames].

    Float32 input yields complex64 coefficients, anything else complex128.
    """
    cfg = cfg or StftConfig()
    x = np.asarray(x)
    if not np.issubdtype(x.dtype, np.floating):
        x = x.astype(np.float64)
    frames = frame_signal(x, cfg) * _window_array(cfg).astype(x.dtype, copy=False)
    spec = scipy.fft.rfft(frames, n=cfg.n_fft, axis=-1)
    return Spectrogram(np.swapaxes(spec, -1, -2), cfg, n_samples=x.shape[-1])


def overlap_add(frames, cfg: StftConfig, n_frames: int):
    """Sum windows back onto the time line: [..., frames, n_fft] -> [..., L].

    L = (frames - 1) * hop + n_fft, the padded support.
    """
    k = cfg.n_fft // cfg.hop
    lead = frames.shape[:-2]
    slots = n_frames - 1 + k
    buf = np.zeros(lead + (slots, cfg.hop), dtype=frames.dtype)
    blocks = frames.reshape(lead + (n_frames, k, cfg.hop))
    for b in range(k):
        buf[..., b:b + n_frames, :] += blocks[..., :, b, :]
    return buf.reshape(lead + (slots * cfg.hop,))


@functools.lru_cache(maxsize=32)
def _wola_norm(cfg: StftConfig, n_frames: int):
    """Overlap-added squared window over the padded support, zeros masked."""
    w2 = _window_array(cfg) ** 2
    tiled = np.broadcast_to(w2, (n_frames, cfg.n_fft))
    norm = overlap_add(tiled, cfg, n_frames)
    return np.where(norm > np.finfo(norm.dtype).tiny, norm, 1.0)


def istft(spec: Spectrogram, length: int | None = None):
    """Invert a Spectrogram to samples [..., length] via weighted overlap-add."""
    cfg = spec.cfg
    length = spec.n_samples if length is None else length
    if length is None:
        raise ValueError("length not stored on the Spectrogram; pass it explicitly")
    t = spec.n_frames
    if cfg.n_frames(length) != t:
        raise ValueError(
            f"{t} frames cannot have come from {length} samples under this config")
    frames = scipy.fft.irfft(np.swapaxes(spec.data, -1, -2), n=cfg.n_fft, axis=-1)
    frames = frames * _window_array(cfg).astype(frames.dtype, copy=False)
    buf = overlap_add(frames, cfg, t) / _wola_norm(cfg, t).astype(frames.dtype)
    pad_left = cfg.n_fft // 2
    return buf[..., pad_left:pad_left + length]


def istft_adjoint(grad_samples, cfg: StftConfig, n_frames: int):
    """Adjoint of `istft` seen as a linear map of (re, im) coefficients.

    Given d(loss)/d(samples) [..., n], returns a complex array [..., bins,
    frames] whose real part is d(loss)/d(re) and imaginary part is
    d(loss)/d(im). Everything in `istft` is linear, so the adjoint runs the
    same stages transposed: embed into the padded support, divide by the
    WOLA norm, gather frames, window, then the rfft-based adjoint of irfft
    (scale by [1, 2, ..., 2, 1] / n_fft).
    """
    g = np.asarray(grad_samples)
    n = g.shape[-1]
    if cfg.n_frames(n) != n_frames:
        raise ValueError("gradient length inconsistent with frame count")
    pad_left = cfg.n_fft // 2
    total = (n_frames - 1) * cfg.hop + cfg.n_fft
    buf = np.zeros(g.shape[:-1] + (total,), dtype=g.dtype)
    buf[..., pad_left:pad_left + n] = g
    buf = buf / _wola_norm(cfg, n_frames).astype(g.dtype)
    frames = np.lib.stride_tricks.sliding_window_view(buf, cfg.n_fft, axis=-1)
    frames = frames[..., ::cfg.hop, :] * _window_array(cfg).astype(g.dtype)
    scale = np.full(cfg.n_bins, 2.0 / cfg.n_fft, dtype=g.dtype)
    scale[0] = scale[-1] = 1.0 / cfg.n_fft
    spec_grad = scipy.fft.rfft(frames, n=cfg.n_fft, axis=-1) * scale
    return np.swapaxes(spec_grad, -1, -2)


def pad_for_synthesis(x, cfg: StftConfig | None = None, hops=1):
    """Append `hops` hops of zeros along time before analysis.

    The frozen framing covers the last few samples of a signal only by the
    decaying tail of the final window, so weighted overlap-add synthesis of
    a *modified* spectrogram is ill-conditioned right at the end (identity
    round trips are exact regardless). Analyzing `pad_for_synthesis(x)` and
    trimming the synthesis back to the original length keeps every real
    sample under full window coverage:

        n = x.shape[-1]
        spec = stft(pad_for_synthesis(x, cfg), cfg)
        ... modify spec ...
        y = istft(spec)[..., :n]
    """
    cfg = cfg or StftConfig()
    x = np.asarray(x)
    pad = [(0, 0)] * (x.ndim - 1) + [(0, hops * cfg.hop)]
    return np.pad(x, pad)


def magnitude_db(spec_data, floor_db=-100.0):
    """20*log10(|.| + floor) in dB; the additive floor keeps silence finite."""
    floor_amp = 10.0 ** (floor_db / 20.0)
    return 20.0 * np.log10(np.abs(spec_data) + floor_amp)
