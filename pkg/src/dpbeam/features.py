"""Input features for the beamformer: magnitude, cosIPD, angle feature, and
the per-frame noisy covariance with real/imag stacking.

Conventions used throughout:
    - multichannel spectrograms are [mics, bins, frames]
    - the phase of an exactly-zero coefficient is defined as 0
    - pair phase differences are second mic minus first mic
    - a DOA is a single azimuth in [0, pi] measured from the array axis
      (a linear array cannot tell front from back)
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .stft import Spectrogram, StftConfig

SOUND_SPEED = 343.0


@dataclass(frozen=True)
class ArrayGeometry:
    """Microphone positions [M, 3] in meters plus the feature pair list."""

    mic_positions: tuple
    pairs: tuple
    sound_speed: float = SOUND_SPEED

    def __post_init__(self):
        pos = self.positions()
        if pos.ndim != 2 or pos.shape[1] != 3 or pos.shape[0] < 2:
            raise ValueError("mic_positions must be [M >= 2, 3]")
        if len(self.pairs) < 1:
            raise ValueError("need at least one mic pair")
        for i, j in self.pairs:
            if not (0 <= i < pos.shape[0] and 0 <= j < pos.shape[0]):
                raise ValueError(f"pair ({i}, {j}) out of range for {pos.shape[0]} mics")

    @classmethod
    def default_linear(cls, n_mics=4, spacing=0.03):
        """Linear array on the x axis, centered at the origin, 3 cm default.

        Pairs are (0, m) for every non-reference mic.
        """
        offsets = (np.arange(n_mics) - (n_mics - 1) / 2) * spacing
        pos = tuple((float(x), 0.0, 0.0) for x in offsets)
        pairs = tuple((0, m) for m in range(1, n_mics))
        return cls(pos, pairs)

    def positions(self):
        return np.asarray(self.mic_positions, dtype=float)

    @property
    def n_mics(self):
        return len(self.mic_positions)

    @property
    def n_pairs(self):
        return len(self.pairs)

    def centroid(self):
        return self.positions().mean(axis=0)

    def axis(self):
        """Unit vector of the array's principal direction (first to last mic)."""
        pos = self.positions()
        v = pos[-1] - pos[0]
        n = np.linalg.norm(v)
        if n == 0:
            raise ValueError("degenerate array: first and last mic coincide")
        return v / n

    def pair_spacings(self):
        """Signed along-axis spacing d_p for each pair, shape [P]."""
        pos = self.positions()
        ax = self.axis()
        return np.array([(pos[j] - pos[i]) @ ax for i, j in self.pairs])


@dataclass
class FeatureTensor:
    """Real input planes [P+2, bins, frames]: magnitude, cosIPD per pair, AF."""

    data: np.ndarray
    n_pairs: int

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 3 or self.data.shape[0] != self.n_pairs + 2:
            raise ValueError(
                f"expected [{self.n_pairs + 2}, bins, frames], got {self.data.shape}")

    @property
    def magnitude(self):
        return self.data[0]

    @property
    def cos_ipd(self):
        return self.data[1:1 + self.n_pairs]

    @property
    def angle_feature(self):
        return self.data[-1]


@dataclass
class CovarianceTensor:
    """Instantaneous covariances [bins, frames, M, M, 2] (real, imag)."""

    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if (self.data.ndim != 5 or self.data.shape[-1] != 2
                or self.data.shape[-2] != self.data.shape[-3]):
            raise ValueError(f"expected [bins, frames, M, M, 2], got {self.data.shape}")

    @property
    def n_mics(self):
        return self.data.shape[-2]

    def complex_view(self):
        """Reassemble [bins, frames, M, M] complex matrices."""
        return self.data[..., 0] + 1j * self.data[..., 1]


def _check_multichannel(spec: Spectrogram):
    if spec.data.ndim != 3:
        raise ValueError(f"need [mics, bins, frames] data, got {spec.data.shape}")


def magnitude_feature(spec: Spectrogram, ref_channel=0):
    """|Y_ref| per (bin, frame)."""
    _check_multichannel(spec)
    m = spec.data.shape[0]
    if not (0 <= ref_channel < m):
        raise ValueError(f"ref_channel {ref_channel} out of range for {m} mics")
    return np.abs(spec.data[ref_channel])


def _pair_phase_diff(data, pairs):
    """Second-minus-first phase per pair, [P, bins, frames].

    np.angle(0) is 0, which realizes the zero-phase convention without a
    special case.
    """
    phase = np.angle(data)
    return np.stack([phase[j] - phase[i] for i, j in pairs])


def cos_ipd(spec: Spectrogram, pairs):
    """cos of the inter-channel phase difference for each pair."""
    _check_multichannel(spec)
    return np.cos(_pair_phase_diff(spec.data, pairs))


def steering_phase_diffs(geom: ArrayGeometry, doa, freqs):
    """Expected pair phase differences for a far-field plane wave.

    Delta_p(f) = 2*pi*f*d_p*cos(doa)/c, shape [P, len(freqs)]. Frame
    independent: a fixed source direction predicts the same phase pattern in
    every frame.
    """
    d = geom.pair_spacings()
    return (2 * np.pi / geom.sound_speed) * np.cos(doa) * np.outer(d, freqs)


def angle_feature(spec: Spectrogram, doa, geom: ArrayGeometry):
    """Directional consistency score sum_p cos(IPD_p - Delta_p), in [-P, P].

    High where the observed phase pattern matches a plane wave from `doa`.
    """
    _check_multichannel(spec)
    if not (0 <= doa <= np.pi):
        raise ValueError(f"doa must lie in [0, pi], got {doa}")
    ipd = _pair_phase_diff(spec.data, geom.pairs)
    delta = steering_phase_diffs(geom, doa, spec.cfg.bin_freqs())
    return np.sum(np.cos(ipd - delta[:, :, None]), axis=0)


def noisy_covariance(spec: Spectrogram, cov_norm="none"):
    """Per-(bin, frame) outer product Y Y^H, stacked as (real, imag).

    No temporal smoothing: each frame stands alone, so every matrix is
    Hermitian PSD of rank one. `cov_norm="trace"` divides each matrix by its
    trace (zero-trace frames are left untouched).
    """
    _check_multichannel(spec)
    if spec.data.shape[0] < 2:
        raise ValueError("covariance needs at least 2 mics")
    if cov_norm not in ("none", "trace"):
        raise ValueError(f"unknown cov_norm {cov_norm!r}")
    y = np.moveaxis(spec.data, 0, -1)  # [bins, frames, M]
    outer = y[..., :, None] * y[..., None, :].conj()
    if cov_norm == "trace":
        tr = np.einsum("...mm->...", outer).real
        outer = outer / np.where(tr > 0, tr, 1.0)[..., None, None]
    return CovarianceTensor(np.stack([outer.real, outer.imag], axis=-1))


def assemble_inputs(spec: Spectrogram, doa, geom: ArrayGeometry,
                    ref_channel=0, cov_norm="none"):
    """Bundle the model inputs: feature planes plus stacked covariance.

    Feature channel order is fixed: [magnitude, cosIPD_1..P, angle feature].
    """
    feats = np.concatenate([
        magnitude_feature(spec, ref_channel)[None],
        cos_ipd(spec, geom.pairs),
        angle_feature(spec, doa, geom)[None],
    ])
    return (FeatureTensor(feats, geom.n_pairs),
            noisy_covariance(spec, cov_norm=cov_norm))


def synth_plane_wave(geom: ArrayGeometry, doa, cfg: StftConfig, n_frames,
                     rng=None, base=None):
    """Anechoic far-field plane wave as a multichannel Spectrogram.

    The source sits in direction `doa` from the array axis; mic m hears the
    base spectrum delayed by -r_m . s / c, i.e. Y_m = X * exp(+i w r_m.s/c).
    Useful as a ground-truth fixture: its IPDs equal the steering phase
    differences exactly.
    """
    if base is None:
        rng = np.random.default_rng(0) if rng is None else rng
        base = (rng.standard_normal((cfg.n_bins, n_frames))
                + 1j * rng.standard_normal((cfg.n_bins, n_frames)))
    s = np.array([np.cos(doa), np.sin(doa), 0.0])
    proj = (geom.positions() - geom.centroid()) @ s  # [M]
    freqs = cfg.bin_freqs()
    phase = np.exp(2j * np.pi * np.outer(proj, freqs) / geom.sound_speed)
    return Spectrogram(base[None] * phase[:, :, None], cfg)


def doa_objective(spec: Spectrogram, geom: ArrayGeometry, angles,
                  max_freq=None, weights=None):
    """Mean angle-feature score for each candidate angle, shape [len(angles)].

    `max_freq` restricts the average to bins below a cutoff (e.g. the
    spatial-aliasing limit of the widest pair); `weights` optionally weights
    frames/bins, default uniform.
    """
    freqs = spec.cfg.bin_freqs()
    keep = slice(None) if max_freq is None else freqs <= max_freq
    scores = np.empty(len(angles))
    for k, ang in enumerate(np.asarray(angles, dtype=float)):
        af = angle_feature(spec, ang, geom)[keep]
        scores[k] = np.average(af, weights=None if weights is None else weights[keep])
    return scores


def aliasing_limit(geom: ArrayGeometry):
    """Highest frequency with unambiguous phase on the widest pair: c / (2 d)."""
    d = np.max(np.abs(geom.pair_spacings()))
    return geom.sound_speed / (2 * d)


def estimate_doa(spec: Spectrogram, geom: ArrayGeometry, grid_deg=1.0,
                 below_aliasing=True):
    """Grid-search DOA estimate in radians using the angle feature.

    Scans [0, 180] degrees in `grid_deg` steps; by default only frequencies
    below the widest pair's aliasing limit vote.
    """
    angles = np.deg2rad(np.arange(0.0, 180.0 + 1e-9, grid_deg))
    max_freq = aliasing_limit(geom) if below_aliasing else None
    scores = doa_objective(spec, geom, angles, max_freq=max_freq)
    return float(angles[int(np.argmax(scores))])
