"""Dual-path neural beamformer.

The network maps per-frequency input features to complex beamforming
weights. Data flow for a [n_mics, F, T] mixture spectrogram:

    magnitude/cos-IPD/angle features [P+2, F, T]  ->  pointwise embed -> [F,T,D]
    noisy covariance re/im            [F,T,2*M^2]  ->  pointwise embed -> [F,T,D]
    concat -> [F,T,2D] -> GRU stack over time (per frequency) -> [F,T,2D]
    split halves -> feature stream & covariance stream, both [F,T,D]
    cross-attention over time, per frequency (queries = feature stream)
    self-attention over frequency, per frame (optional, on by default)
    pointwise head -> [F,T,2M] -> complex weights w[F,T,M]
    output spectrogram: X(f,t) = sum_m conj(w[f,t,m]) Y[m,f,t]

Everything between the feature arrays and the weights runs on the autodiff
tape so the beamformer can be trained end to end. Parameter names are
rooted at ``dptbf.`` and are part of the checkpoint format.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import blocks
from . import features as feat_mod
from .features import ArrayGeometry
from .stft import Spectrogram, StftConfig, istft, pad_for_synthesis, stft


@dataclass(frozen=True)
class BeamformerConfig:
    """Architecture hyperparameters.

    `gru_hidden` must equal `2 * d_model`: the recurrence consumes the two
    concatenated embeddings and its output is split back into two streams
    of width d_model.
    """

    d_model: int = 128
    gru_hidden: int = 256
    n_heads: int = 4
    n_mics: int = 4
    n_pairs: int = 3
    gru_layers: int = 2
    freq_attention: bool = True
    gru_skip: bool = False
    causal_mhca: bool = False
    ffn: bool = False
    conv_kernel: int = 1

    def __post_init__(self):
        if self.gru_hidden != 2 * self.d_model:
            raise ValueError(
                f"gru_hidden must be 2*d_model so the recurrent output can be "
                f"split into two streams; got {self.gru_hidden} vs d_model "
                f"{self.d_model}")
        if self.d_model % self.n_heads != 0:
            raise ValueError("d_model must be divisible by n_heads")
        if self.n_mics < 2:
            raise ValueError("need at least two microphones")
        if self.n_pairs < 1:
            raise ValueError("need at least one microphone pair")
        if self.gru_layers < 1:
            raise ValueError("need at least one recurrent layer")

    @property
    def feat_channels(self):
        return self.n_pairs + 2

    @property
    def cov_channels(self):
        return 2 * self.n_mics * self.n_mics

    @classmethod
    def default(cls):
        return cls()

    @classmethod
    def less(cls):
        """Quarter-size variant (~0.24M parameters)."""
        return cls(d_model=64, gru_hidden=128)

    def to_dict(self):
        return {
            "d_model": self.d_model, "gru_hidden": self.gru_hidden,
            "n_heads": self.n_heads, "n_mics": self.n_mics,
            "n_pairs": self.n_pairs, "gru_layers": self.gru_layers,
            "freq_attention": self.freq_attention, "gru_skip": self.gru_skip,
            "causal_mhca": self.causal_mhca, "ffn": self.ffn,
            "conv_kernel": self.conv_kernel,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class BeamWeights:
    """Complex combination weights, [F, T, n_mics].

    A time axis of length 1 means the same weights apply to every frame
    (the closed-form beamformers produce these).
    """

    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 3:
            raise ValueError(f"expected [F, T, M], got shape {self.data.shape}")
        if not np.iscomplexobj(self.data):
            raise ValueError("beam weights must be complex")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("beam weights contain non-finite values")

    @property
    def n_mics(self):
        return self.data.shape[-1]


def pack_weights(weights):
    """[F,T,M] complex -> [F,T,2M] real, real parts first."""
    return np.concatenate([weights.data.real, weights.data.imag], axis=-1)


def unpack_weights(arr):
    """Inverse of pack_weights."""
    arr = np.asarray(arr)
    if arr.ndim != 3 or arr.shape[-1] % 2 != 0:
        raise ValueError(f"expected [F, T, 2M], got shape {arr.shape}")
    m = arr.shape[-1] // 2
    return BeamWeights(arr[..., :m] + 1j * arr[..., m:])


def apply_beam_weights(weights, spec):
    """X(f,t) = sum_m conj(w[f,t,m]) Y[m,f,t], returned as a [1,F,T] spectrogram."""
    n_mics, n_bins, n_frames = spec.data.shape[-3:]
    if spec.data.ndim != 3:
        raise ValueError("expected a single [M, F, T] spectrogram")
    wd = weights.data
    if wd.shape[-1] != n_mics:
        raise ValueError(f"weights are for {wd.shape[-1]} mics, input has {n_mics}")
    if wd.shape[0] != n_bins or wd.shape[1] not in (1, n_frames):
        raise ValueError(f"weights [F,T,M]={wd.shape} do not match input "
                         f"[{n_bins},{n_frames}] frames")
    out = np.einsum("ftm,mft->ft", np.conj(np.broadcast_to(
        wd, (n_bins, n_frames, n_mics))), spec.data)
    return Spectrogram(out[None], spec.cfg, spec.n_samples)


def apply_weights_graph(w_re, w_im, y_re, y_im):
    """Tape version of the weight application, inputs all [..., F, T, M].

    Returns (real, imag) tensors of conj(w) . y summed over mics.
    """
    est_re = ad.sum_(ad.add(ad.mul(w_re, y_re), ad.mul(w_im, y_im)), axis=-1)
    est_im = ad.sum_(ad.sub(ad.mul(w_re, y_im), ad.mul(w_im, y_re)), axis=-1)
    return est_re, est_im


class DualPathBeamformer:
    """The trainable model: parameter container plus forward passes."""

    def __init__(self, cfg=None, store=None, seed=0, dtype=np.float32):
        self.cfg = cfg or BeamformerConfig()
        self.store = store if store is not None else ad.ParamStore(dtype)
        rng = np.random.default_rng(seed)
        c = self.cfg
        self.embed_feat = blocks.PointwiseConv(
            self.store, "dptbf.embed_feat", c.feat_channels, c.d_model, rng,
            kernel_size=c.conv_kernel)
        self.embed_cov = blocks.PointwiseConv(
            self.store, "dptbf.embed_cov", c.cov_channels, c.d_model, rng,
            kernel_size=c.conv_kernel)
        self.gru = blocks.GruStack(
            self.store, "dptbf.gru", 2 * c.d_model, c.gru_hidden, c.gru_layers, rng)
        self.mhca = blocks.AttentionBlock(
            self.store, "dptbf.mhca", c.d_model, c.n_heads, rng, ffn=c.ffn)
        self.mhsa = None
        if c.freq_attention:
            self.mhsa = blocks.AttentionBlock(
                self.store, "dptbf.mhsa", c.d_model, c.n_heads, rng, ffn=c.ffn)
        self.predict = blocks.PointwiseConv(
            self.store, "dptbf.predict", c.d_model, 2 * c.n_mics, rng,
            kernel_size=c.conv_kernel)

    @property
    def n_params(self):
        return self.store.n_params()

    def weights_graph(self, feats, cov):
        """Features to packed weights on the tape.

        feats: [B, F, T, n_pairs+2], cov: [B, F, T, 2*M^2] (tensors or
        arrays). Returns (w_re, w_im), both [B, F, T, M].
        """
        feats = ad.astensor(feats)
        cov = ad.astensor(cov)
        c = self.cfg
        if feats.ndim != 4 or feats.shape[-1] != c.feat_channels:
            raise ValueError(f"features must be [B, F, T, {c.feat_channels}], "
                             f"got {feats.shape}")
        if cov.ndim != 4 or cov.shape[-1] != c.cov_channels:
            raise ValueError(f"covariance must be [B, F, T, {c.cov_channels}], "
                             f"got {cov.shape}")
        if feats.shape[:3] != cov.shape[:3]:
            raise ValueError("feature and covariance shapes disagree")
        b, f, t, _ = feats.shape
        d = c.d_model

        e_feat = self.embed_feat(feats)
        e_cov = self.embed_cov(cov)
        mixed = ad.concat([e_feat, e_cov], axis=-1)  # [B,F,T,2D]

        seq = ad.reshape(mixed, (b * f, t, 2 * d))
        seq_out = self.gru(seq)
        if c.gru_skip:
            seq_out = ad.add(seq_out, seq)
        stream_feat = ad.slice_axis(seq_out, 2, 0, d)
        stream_cov = ad.slice_axis(seq_out, 2, d, 2 * d)

        attended = self.mhca(stream_feat, kv=stream_cov, causal=c.causal_mhca)
        attended = ad.reshape(attended, (b, f, t, d))

        if self.mhsa is not None:
            over_freq = ad.reshape(ad.transpose(attended, (0, 2, 1, 3)),
                                   (b * t, f, d))
            over_freq = self.mhsa(over_freq)
            attended = ad.transpose(ad.reshape(over_freq, (b, t, f, d)),
                                    (0, 2, 1, 3))

        packed = self.predict(attended)  # [B,F,T,2M]
        w_re = ad.slice_axis(packed, 3, 0, c.n_mics)
        w_im = ad.slice_axis(packed, 3, c.n_mics, 2 * c.n_mics)
        return w_re, w_im

    def forward(self, spec, doa, geom=None):
        """Spectrogram in, (enhanced [1,F,T] spectrogram, BeamWeights) out."""
        c = self.cfg
        geom = geom if geom is not None else ArrayGeometry.default_linear(c.n_mics)
        if spec.data.ndim != 3 or spec.data.shape[0] != c.n_mics:
            raise ValueError(f"expected [{c.n_mics}, F, T] spectrogram, "
                             f"got {spec.data.shape}")
        feats, cov = feat_mod.assemble_inputs(spec, doa, geom)
        n_bins, n_frames = spec.data.shape[-2:]
        dtype = self.store.dtype
        f_in = np.moveaxis(feats.data, 0, -1)[None].astype(dtype)
        c_in = cov.data.reshape(n_bins, n_frames, -1)[None].astype(dtype)
        w_re, w_im = self.weights_graph(f_in, c_in)
        weights = BeamWeights((w_re.data + 1j * w_im.data)[0])
        return apply_beam_weights(weights, spec), weights

    def enhance(self, mixture, doa, geom=None, stft_cfg=None):
        """Multichannel waveform [M, n] -> enhanced waveform [n]."""
        cfg = stft_cfg or StftConfig()
        mixture = np.asarray(mixture, dtype=np.float64)
        if mixture.ndim != 2 or mixture.shape[0] != self.cfg.n_mics:
            raise ValueError(f"expected [{self.cfg.n_mics}, n] waveform, "
                             f"got {mixture.shape}")
        n = mixture.shape[-1]
        spec = stft(pad_for_synthesis(mixture, cfg), cfg)
        enhanced, weights = self.forward(spec, doa, geom)
        est = istft(enhanced)[..., :n]
        return est[0], weights

    def save(self, path):
        from .container import save_checkpoint
        save_checkpoint(path, dict(self.store.to_arrays()))

    @classmethod
    def load(cls, path, cfg, dtype=np.float32):
        from .container import load_checkpoint
        model = cls(cfg, dtype=dtype)
        arrays = {k: np.asarray(v, dtype=dtype)
                  for k, v in load_checkpoint(path).items()}
        model.store.load_arrays(arrays)
        return model


def expected_param_count(cfg):
    """Closed-form count; must agree with ParamStore.n_params exactly."""
    c = cfg
    total = blocks.PointwiseConv.param_count(c.feat_channels, c.d_model,
                                             c.conv_kernel)
    total += blocks.PointwiseConv.param_count(c.cov_channels, c.d_model,
                                              c.conv_kernel)
    total += blocks.GruLayer.param_count(2 * c.d_model, c.gru_hidden)
    total += (c.gru_layers - 1) * blocks.GruLayer.param_count(c.gru_hidden,
                                                              c.gru_hidden)
    total += blocks.AttentionBlock.param_count(c.d_model, c.ffn)
    if c.freq_attention:
        total += blocks.AttentionBlock.param_count(c.d_model, c.ffn)
    total += blocks.PointwiseConv.param_count(c.d_model, 2 * c.n_mics,
                                              c.conv_kernel)
    return total
