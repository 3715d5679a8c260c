"""Shoebox image-source simulator and mixture rendering.

Generates the training material: reverberant multichannel mixtures of a
target talker, an interfering talker and background noise, at controlled
SIR/SNR, with ground-truth DOA recorded per example.

The acoustics are deliberately plain: uniform wall absorption inverted from
the requested rt60 via Sabine's formula, 1/r spherical spreading, and
fractional delays through an 81-tap Hann-windowed sinc. No air absorption,
scattering or frequency-dependent walls.
"""

from __future__ import annotations

import functools
import json
import os
from dataclasses import dataclass

import numpy as np
from scipy.signal import butter, fftconvolve, lfilter, sosfilt

from .container import atomic_write
from .features import SOUND_SPEED, ArrayGeometry
from .wavio import read_wav, write_wav

SINC_TAPS = 81
# images quieter than this (relative to the loudest) die before the scatter
_AMP_PRUNE = 10.0 ** (-80.0 / 20.0)
_MAX_RESAMPLE = 1000


def sabine_absorption(dims, rt60):
    """Uniform wall absorption from Sabine: alpha = 0.161 V / (S rt60).

    Refuses physically impossible combinations (alpha >= 1) instead of
    clamping them.
    """
    lx, ly, lz = dims
    if min(lx, ly, lz) <= 0 or rt60 <= 0:
        raise ValueError("room dims and rt60 must be positive")
    volume = lx * ly * lz
    surface = 2 * (lx * ly + lx * lz + ly * lz)
    alpha = 0.161 * volume / (surface * rt60)
    if alpha >= 1.0:
        raise ValueError(
            f"rt60={rt60:.3f}s is shorter than this room supports "
            f"(Sabine absorption {alpha:.2f} >= 1)")
    return alpha


def default_image_order(dims, rt60):
    """Reflections needed to cover the decay window, capped at 30."""
    return min(30, int(np.ceil(SOUND_SPEED * rt60 / min(dims))))


@dataclass(frozen=True)
class RoomSpec:
    """Shoebox room: dimensions, reverberation target and geometry."""

    dims: tuple
    rt60: float
    source_positions: tuple
    mic_positions: tuple
    max_image_order: int | None = None

    def __post_init__(self):
        dims = np.asarray(self.dims, dtype=float)
        if dims.shape != (3,) or np.any(dims <= 0):
            raise ValueError(f"dims must be 3 positive lengths, got {self.dims}")
        for what, pts in (("source", self.sources()), ("mic", self.mics())):
            if pts.ndim != 2 or pts.shape[1] != 3:
                raise ValueError(f"{what} positions must be [k, 3]")
            if np.any(pts <= 0) or np.any(pts >= dims):
                raise ValueError(f"every {what} must sit strictly inside the room")
        if len(self.source_positions) >= 2:
            sep = np.rad2deg(self.source_separation())
            if sep < 5.0 - 1e-9:
                raise ValueError(
                    f"sources only {sep:.2f} degrees apart; need at least 5")

    def sources(self):
        return np.atleast_2d(np.asarray(self.source_positions, dtype=float))

    def mics(self):
        return np.atleast_2d(np.asarray(self.mic_positions, dtype=float))

    def mic_centroid(self):
        return self.mics().mean(axis=0)

    def order(self):
        if self.max_image_order is not None:
            return self.max_image_order
        return default_image_order(self.dims, self.rt60)

    def source_separation(self):
        """Smallest pairwise angle between sources seen from the array, radians."""
        vecs = self.sources() - self.mic_centroid()
        units = vecs / np.linalg.norm(vecs, axis=1, keepdims=True)
        worst = np.pi
        for i in range(len(units)):
            for j in range(i + 1, len(units)):
                cosang = np.clip(units[i] @ units[j], -1.0, 1.0)
                worst = min(worst, float(np.arccos(cosang)))
        return worst

    def geometry(self, pairs=None):
        mics = self.mics()
        if pairs is None:
            pairs = tuple((0, m) for m in range(1, len(mics)))
        return ArrayGeometry(tuple(map(tuple, mics)), tuple(pairs))

    def source_doa(self, source=0):
        """Azimuth of a source from the array axis (conical angle), radians."""
        geom = self.geometry()
        v = self.sources()[source] - self.mic_centroid()
        cosang = (v @ geom.axis()) / np.linalg.norm(v)
        return float(np.arccos(np.clip(cosang, -1.0, 1.0)))


@dataclass(frozen=True)
class MixtureSpec:
    """Mixing ratios and provenance for one rendered example.

    Default sampling draws sir_db from [-6, 6] and snr_db from [-5, 20];
    the fields themselves accept anything for hand-built fixtures.
    """

    sir_db: float
    snr_db: float
    seed: tuple
    duration: float = 4.0
    target_doa: float = 0.0

    def __post_init__(self):
        if self.duration <= 0:
            raise ValueError("duration must be positive")


@dataclass
class TrainingExample:
    """M-channel mixture plus the reverberant target at the reference mic."""

    mixture: np.ndarray
    target_reverb_ref: np.ndarray
    room: RoomSpec
    mix: MixtureSpec

    def __post_init__(self):
        self.mixture = np.atleast_2d(np.asarray(self.mixture))
        self.target_reverb_ref = np.asarray(self.target_reverb_ref)
        if self.mixture.shape[-1] != self.target_reverb_ref.shape[-1]:
            raise ValueError("mixture and target lengths differ")

    @property
    def n_mics(self):
        return self.mixture.shape[0]

    @property
    def n_samples(self):
        return self.mixture.shape[-1]


# ---------------------------------------------------------------------------
# image-source RIRs
# ---------------------------------------------------------------------------

@functools.lru_cache(maxsize=4)
def _image_indices(order):
    """Integer image indices with |nx|+|ny|+|nz| <= order, shape [K, 3]."""
    r = np.arange(-order, order + 1)
    nx, ny, nz = np.meshgrid(r, r, r, indexing="ij")
    n = np.stack([nx, ny, nz], axis=-1).reshape(-1, 3)
    keep = np.sum(np.abs(n), axis=1) <= order
    return n[keep]


def image_sources(room: RoomSpec, source=0):
    """Mirror positions and reflection counts for one source.

    Returns (positions [K, 3], hits [K]). Along each axis, copy index n
    holds the source mirrored |n| times: even copies at n*L + x, odd copies
    at (n+1)*L - x.
    """
    src = room.sources()[source]
    dims = np.asarray(room.dims, dtype=float)
    n = _image_indices(room.order())
    even = n % 2 == 0
    pos = np.where(even, n * dims + src, (n + 1) * dims - src)
    hits = np.sum(np.abs(n), axis=1)
    return pos, hits


def _windowed_sinc(arg):
    """81-tap Hann-windowed sinc evaluated at fractional offsets."""
    half = (SINC_TAPS + 1) / 2  # window reaches zero at +-40.5
    w = 0.5 * (1 + np.cos(np.pi * arg / half))
    return np.sinc(arg) * np.where(np.abs(arg) < half, w, 0.0)


def _rirs_for_source(room: RoomSpec, source, sample_rate):
    """[M, L] impulse responses from one source to every mic."""
    beta = np.sqrt(1.0 - sabine_absorption(room.dims, room.rt60))
    pos, hits = image_sources(room, source)
    mics = room.mics()
    diff = pos[:, None, :] - mics[None, :, :]
    dist = np.linalg.norm(diff, axis=-1)  # [K, M]
    if np.min(dist) < 1e-3:
        raise ValueError("source (or an image) coincides with a microphone")
    amp = beta ** hits[:, None] / (4 * np.pi * dist)
    delay = dist * (sample_rate / SOUND_SPEED)
    keep = amp > np.max(amp) * _AMP_PRUNE
    length = int(np.ceil(np.max(delay[keep]))) + SINC_TAPS
    half = SINC_TAPS // 2
    taps = np.arange(-half, half + 1)
    out = np.empty((mics.shape[0], length))
    for m in range(mics.shape[0]):
        a, d = amp[keep[:, m], m], delay[keep[:, m], m]
        center = np.round(d).astype(np.int64)
        idx = center[:, None] + taps[None, :]
        kernel = _windowed_sinc(idx - d[:, None]) * a[:, None]
        valid = (idx >= 0) & (idx < length)
        out[m] = np.bincount(idx[valid].ravel(),
                             weights=kernel[valid].ravel(), minlength=length)
    return out


def simulate_rir(room: RoomSpec, source=0, mic=0, sample_rate=16000):
    """Image-source RIR from one source to one mic, shape [L]."""
    return _rirs_for_source(room, source, sample_rate)[mic]


def spatialize(dry, rirs, n_samples=None):
    """Convolve a dry signal [n] with per-mic RIRs [M, L] -> image [M, n]."""
    dry = np.asarray(dry)
    out = fftconvolve(dry[None, :], rirs, axes=-1)
    n = dry.shape[-1] if n_samples is None else n_samples
    return out[:, :n]


# ---------------------------------------------------------------------------
# mixing
# ---------------------------------------------------------------------------

def _ref_power(x):
    p = float(np.mean(np.asarray(x)[0] ** 2)) if np.asarray(x).ndim == 2 else float(
        np.mean(np.asarray(x) ** 2))
    return p


def render_mixture(mix: MixtureSpec, room: RoomSpec, sources, noise=None,
                   sample_rate=16000, return_parts=False):
    """Convolve, scale and sum one example.

    `sources` holds dry waveforms, target first, optional interferer second.
    The interferer gain makes the reference-channel SIR equal `mix.sir_db`
    exactly; the noise gain does the same for SNR against the target's
    reference-channel power. The clean label is the reverberant target at
    mic 0 (no dereverberation).
    """
    n = int(round(mix.duration * sample_rate))
    if len(sources) not in (1, 2):
        raise ValueError("render_mixture expects [target] or [target, interferer]")
    dry = []
    for s in sources:
        s = np.asarray(s, dtype=float)
        if s.shape[-1] < n:
            raise ValueError(f"dry source shorter than {mix.duration}s")
        dry.append(s[:n])

    target_img = spatialize(dry[0], _rirs_for_source(room, 0, sample_rate), n)
    p_ref = _ref_power(target_img)
    if p_ref == 0:
        raise ValueError("target has zero power at the reference mic")
    mixture = target_img.copy()
    parts = {"target": target_img}

    if len(dry) == 2:
        interf_img = spatialize(dry[1], _rirs_for_source(room, 1, sample_rate), n)
        p_int = _ref_power(interf_img)
        if p_int == 0:
            raise ValueError("interferer has zero power at the reference mic")
        gain = np.sqrt(p_ref / (p_int * 10.0 ** (mix.sir_db / 10.0)))
        parts["interference"] = gain * interf_img
        mixture += parts["interference"]

    if noise is not None:
        noise = np.asarray(noise, dtype=float)
        if noise.ndim == 1:
            noise = np.broadcast_to(noise, mixture.shape)
        if noise.shape[-1] < n:
            raise ValueError("noise shorter than the mixture")
        noise = noise[..., :n]
        p_n = _ref_power(noise)
        if p_n == 0:
            raise ValueError("noise has zero power at the reference mic")
        gain = np.sqrt(p_ref / (p_n * 10.0 ** (mix.snr_db / 10.0)))
        parts["noise"] = gain * noise
        mixture = mixture + parts["noise"]

    example = TrainingExample(mixture, target_img[0], room=room, mix=mix)
    return (example, parts) if return_parts else example


# ---------------------------------------------------------------------------
# synthetic dry material
# ---------------------------------------------------------------------------

def synth_speech(rng, n_samples, sample_rate=16000):
    """Speech-shaped stand-in: tilted noise under a syllabic on/off envelope.

    Unit RMS over the whole clip (pauses included).
    """
    pad = sample_rate  # swallow filter transients
    total = n_samples + pad
    tilted = lfilter([1.0], [1.0, -0.96], rng.standard_normal(total))
    syllab = sosfilt(butter(2, 4.0, fs=sample_rate, output="sos"),
                     rng.standard_normal(total))
    gate = sosfilt(butter(2, 0.7, fs=sample_rate, output="sos"),
                   rng.standard_normal(total))
    gate = 1.0 / (1.0 + np.exp(-6.0 * gate / (np.std(gate) + 1e-12)))
    x = (tilted * np.abs(syllab) * gate)[pad:]
    return x / np.sqrt(np.mean(x ** 2))


def synth_noise(rng, shape, sample_rate=16000, kind="white"):
    """Background noise, unit RMS per channel; `kind` is white or pink."""
    w = rng.standard_normal(shape)
    if kind == "pink":
        spec = np.fft.rfft(w, axis=-1)
        f = np.fft.rfftfreq(np.shape(w)[-1], 1.0 / sample_rate)
        spec /= np.sqrt(np.maximum(f, 10.0))
        w = np.fft.irfft(spec, n=np.shape(w)[-1], axis=-1)
    elif kind != "white":
        raise ValueError(f"unknown noise kind {kind!r}")
    return w / np.sqrt(np.mean(w ** 2, axis=-1, keepdims=True))


# ---------------------------------------------------------------------------
# dataset sampling
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DatasetConfig:
    """Sampling ranges for random examples (defaults follow the data recipe:
    rooms from 3x3x1.5 m to 8x8x2.5 m, rt60 0.1-0.6 s, SIR -6..6 dB, SNR
    -5..20 dB, 4 s clips, two talkers at least 5 degrees apart)."""

    room_min: tuple = (3.0, 3.0, 1.5)
    room_max: tuple = (8.0, 8.0, 2.5)
    rt60_range: tuple = (0.1, 0.6)
    sir_range: tuple = (-6.0, 6.0)
    snr_range: tuple = (-5.0, 20.0)
    duration: float = 4.0
    sample_rate: int = 16000
    n_mics: int = 4
    mic_spacing: float = 0.03
    wall_margin: float = 0.5
    min_angle_deg: float = 5.0
    min_source_dist: float = 0.5
    noise_kind: str = "white"
    speech_dir: str | None = None
    noise_dir: str | None = None


def _doa_of(src, centroid, axis):
    v = src - centroid
    return float(np.arccos(np.clip((v @ axis) / np.linalg.norm(v), -1.0, 1.0)))


def _segment_from_dir(directory, n, sample_rate, rng):
    """Random n-sample mono segment from a directory of WAVs, tiled if short."""
    files = sorted(f for f in os.listdir(directory) if f.lower().endswith(".wav"))
    if not files:
        raise ValueError(f"no .wav files in {directory}")
    path = os.path.join(directory, files[int(rng.integers(len(files)))])
    _, data = read_wav(path, expect_rate=sample_rate)
    if data.ndim == 2:
        data = data[0]
    if data.shape[-1] < n:
        data = np.tile(data, int(np.ceil(n / data.shape[-1])))
    start = int(rng.integers(data.shape[-1] - n + 1))
    return data[start:start + n]


def sample_metadata(seed, index, cfg: DatasetConfig = DatasetConfig(), rng=None):
    """Draw the geometry and ratios for one example: (RoomSpec, MixtureSpec).

    Pass an `rng` to keep drawing from an existing stream; by default a
    fresh stream keyed by (seed, index) is used.
    """
    rng = np.random.default_rng([seed, index]) if rng is None else rng

    for _ in range(_MAX_RESAMPLE):
        dims = rng.uniform(cfg.room_min, cfg.room_max)
        rt60 = rng.uniform(*cfg.rt60_range)
        try:
            alpha = sabine_absorption(dims, rt60)
        except ValueError:
            continue
        if alpha < 0.95:
            break
    else:
        raise RuntimeError("could not sample a feasible (room, rt60) pair")

    margin = cfg.wall_margin
    half_extent = (cfg.n_mics - 1) / 2 * cfg.mic_spacing
    lo = np.array([margin + half_extent, margin + half_extent, margin])
    hi = dims - lo
    if np.any(hi <= lo):
        raise RuntimeError("room too small for the wall margin")
    centroid = rng.uniform(lo, hi)
    phi = rng.uniform(0, 2 * np.pi)
    axis = np.array([np.cos(phi), np.sin(phi), 0.0])
    offsets = (np.arange(cfg.n_mics) - (cfg.n_mics - 1) / 2) * cfg.mic_spacing
    mics = centroid + offsets[:, None] * axis

    def draw_source():
        for _ in range(_MAX_RESAMPLE):
            p = rng.uniform([margin] * 3, dims - margin)
            if np.linalg.norm(p - centroid) >= cfg.min_source_dist:
                return p
        raise RuntimeError("could not place a source")

    target = draw_source()
    target_doa = _doa_of(target, centroid, axis)
    for _ in range(_MAX_RESAMPLE):
        interf = draw_source()
        if abs(_doa_of(interf, centroid, axis) - target_doa) >= np.deg2rad(
                cfg.min_angle_deg):
            break
    else:
        raise RuntimeError("could not separate the two sources by 5 degrees")

    room = RoomSpec(tuple(dims), float(rt60), (tuple(target), tuple(interf)),
                    tuple(map(tuple, mics)))
    mix = MixtureSpec(sir_db=float(rng.uniform(*cfg.sir_range)),
                      snr_db=float(rng.uniform(*cfg.snr_range)),
                      seed=(seed, index), duration=cfg.duration,
                      target_doa=target_doa)
    return room, mix


def sample_example(seed, index, cfg: DatasetConfig = DatasetConfig()):
    """Draw one fully-specified TrainingExample.

    The RNG stream is keyed by (seed, index), so example `index` is the same
    whether generated serially or in parallel.
    """
    rng = np.random.default_rng([seed, index])
    n = int(round(cfg.duration * cfg.sample_rate))
    room, mix = sample_metadata(seed, index, cfg, rng=rng)

    if cfg.speech_dir is not None:
        dry = [_segment_from_dir(cfg.speech_dir, n, cfg.sample_rate, rng)
               for _ in range(2)]
    else:
        dry = [synth_speech(rng, n, cfg.sample_rate) for _ in range(2)]
    if cfg.noise_dir is not None:
        noise = np.stack([_segment_from_dir(cfg.noise_dir, n, cfg.sample_rate, rng)
                          for _ in range(cfg.n_mics)])
    else:
        noise = synth_noise(rng, (cfg.n_mics, n), cfg.sample_rate, cfg.noise_kind)

    return render_mixture(mix, room, dry, noise, cfg.sample_rate)


def sample_dataset(n, seed, cfg: DatasetConfig = DatasetConfig()):
    """n examples, deterministic in `seed`; see sample_example."""
    if n < 1:
        raise ValueError("need n >= 1")
    return [sample_example(seed, i, cfg) for i in range(n)]


# ---------------------------------------------------------------------------
# on-disk example layout
# ---------------------------------------------------------------------------

def save_example(directory, example: TrainingExample, sample_rate=16000):
    """Write mixture.wav, target.wav and meta.json into `directory`."""
    os.makedirs(directory, exist_ok=True)
    write_wav(os.path.join(directory, "mixture.wav"), example.mixture, sample_rate)
    write_wav(os.path.join(directory, "target.wav"), example.target_reverb_ref,
              sample_rate)
    room, mix = example.room, example.mix
    meta = {
        "dims": list(room.dims),
        "rt60": room.rt60,
        "source_positions": [list(p) for p in room.source_positions],
        "mic_positions": [list(p) for p in room.mic_positions],
        "max_image_order": room.max_image_order,
        "sir_db": mix.sir_db,
        "snr_db": mix.snr_db,
        "seed": list(mix.seed),
        "duration": mix.duration,
        "target_doa_deg": float(np.rad2deg(mix.target_doa)),
        "sample_rate": sample_rate,
    }
    atomic_write(os.path.join(directory, "meta.json"),
                 (json.dumps(meta, indent=2) + "\n").encode())


def load_example(directory, expect_rate=16000):
    """Read an example directory written by save_example."""
    with open(os.path.join(directory, "meta.json")) as f:
        meta = json.load(f)
    _, mixture = read_wav(os.path.join(directory, "mixture.wav"),
                          expect_rate=expect_rate)
    _, target = read_wav(os.path.join(directory, "target.wav"),
                         expect_rate=expect_rate)
    room = RoomSpec(tuple(meta["dims"]), meta["rt60"],
                    tuple(tuple(p) for p in meta["source_positions"]),
                    tuple(tuple(p) for p in meta["mic_positions"]),
                    meta["max_image_order"])
    mix = MixtureSpec(meta["sir_db"], meta["snr_db"], tuple(meta["seed"]),
                      meta["duration"], np.deg2rad(meta["target_doa_deg"]))
    return TrainingExample(np.atleast_2d(mixture), target, room, mix)


def list_example_dirs(root):
    """Sorted example directories under `root` (those holding meta.json)."""
    out = []
    for name in sorted(os.listdir(root)):
        d = os.path.join(root, name)
        if os.path.isdir(d) and os.path.exists(os.path.join(d, "meta.json")):
            out.append(d)
    return out
