"""Closed-form MVDR beamformer with oracle masks.

Given the true target and noise spectrograms, this computes ideal ratio
masks at a reference channel, mask-weighted spatial covariances of the
noisy signal, a steering vector from the target covariance, and the
minimum-variance distortionless-response weights

    w(f) = Phi_NN(f)^-1 d(f) / (d(f)^H Phi_NN(f)^-1 d(f))

so that w^H d = 1: the target's spatial signature passes unchanged while
noise power is minimized. Serves as the non-learned reference point for
the neural beamformer.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .model import BeamWeights, apply_beam_weights

_TINY = 1e-12


@dataclass
class MaskPair:
    """Time-frequency ratio masks for target and noise, each [F, T]."""

    target: np.ndarray
    noise: np.ndarray

    def __post_init__(self):
        if self.target.shape != self.noise.shape:
            raise ValueError("mask shapes disagree")


def _ref_magnitude(spec, ref_channel):
    data = spec.data
    if data.ndim == 3:
        data = data[ref_channel]
    elif data.ndim != 2:
        raise ValueError(f"expected [F,T] or [M,F,T] data, got {data.shape}")
    return np.abs(data)


def ideal_ratio_masks(target_spec, noise_spec, ref_channel=0):
    """|X| / (|X| + |V|) and its complement; silent bins split evenly."""
    x = _ref_magnitude(target_spec, ref_channel)
    v = _ref_magnitude(noise_spec, ref_channel)
    if x.shape != v.shape:
        raise ValueError("target and noise spectrograms must align")
    denom = x + v
    silent = denom < _TINY
    denom = np.where(silent, 1.0, denom)
    mask_x = np.where(silent, 0.5, x / denom)
    return MaskPair(mask_x, 1.0 - mask_x)


def masked_covariance(spec, mask):
    """Mask-weighted time average of y y^H per frequency, [F, M, M].

    Frequencies where the mask is identically zero fall back to the plain
    time average (with a warning) rather than dividing by zero.
    """
    y = spec.data
    if y.ndim != 3:
        raise ValueError(f"expected [M, F, T] spectrogram, got {y.shape}")
    n_mics, n_bins, n_frames = y.shape
    mask = np.asarray(mask, dtype=float)
    if mask.shape != (n_bins, n_frames):
        raise ValueError(f"mask shape {mask.shape} does not match "
                         f"[{n_bins}, {n_frames}]")
    if np.any(mask < 0):
        raise ValueError("mask values must be nonnegative")
    weight_sums = mask.sum(axis=1)
    dead = weight_sums < _TINY
    if np.any(dead):
        warnings.warn(f"{int(dead.sum())} frequency bins have an all-zero "
                      "mask; using unweighted averages there", RuntimeWarning)
        mask = np.where(dead[:, None], 1.0, mask)
        weight_sums = mask.sum(axis=1)
    cov = np.einsum("ft,mft,nft->fmn", mask, y, np.conj(y))
    cov /= weight_sums[:, None, None]
    return 0.5 * (cov + np.conj(np.swapaxes(cov, -1, -2)))


def steering_from_covariance(cov_target, ref_channel=0):
    """Principal eigenvector per frequency, rescaled to 1 at the reference mic.

    The rescaling pins down the eigenvector's arbitrary phase so the
    beamformer output stays phase-aligned with the reference channel. Bins
    whose eigenvector vanishes at the reference mic keep unit norm instead.
    """
    cov = np.asarray(cov_target)
    if cov.ndim != 3 or cov.shape[-1] != cov.shape[-2]:
        raise ValueError(f"expected [F, M, M] covariances, got {cov.shape}")
    _, vecs = np.linalg.eigh(cov)
    d = vecs[..., -1]  # eigenvalues ascend
    ref = d[:, ref_channel]
    safe = np.abs(ref) > _TINY
    scale = np.where(safe, ref, 1.0)
    return np.where(safe[:, None], d / scale[:, None], d)


def mvdr_weights(cov_target, cov_noise, ref_channel=0, loading=1e-6):
    """Distortionless weights [F, 1, M] from target/noise covariances.

    The noise covariance gets diagonal loading of `loading * trace / M`
    before inversion. Degenerate bins (no noise energy at all) fall back
    to passing the reference channel through.
    """
    cov_noise = np.asarray(cov_noise)
    d = steering_from_covariance(cov_target, ref_channel)
    n_bins, n_mics = d.shape
    if cov_noise.shape != (n_bins, n_mics, n_mics):
        raise ValueError("covariance shapes disagree")

    trace = np.einsum("fmm->f", cov_noise).real
    dead = trace < _TINY
    load = np.where(dead, 1.0, loading * trace / n_mics)
    loaded = cov_noise + load[:, None, None] * np.eye(n_mics)

    num = np.linalg.solve(loaded, d[..., None])[..., 0]
    denom = np.einsum("fm,fm->f", np.conj(d), num).real
    denom = np.maximum(denom, _TINY)
    w = num / denom[:, None]

    if np.any(dead):
        passthrough = np.zeros(n_mics, dtype=complex)
        passthrough[ref_channel] = 1.0
        w = np.where(dead[:, None], passthrough, w)
    return BeamWeights(w[:, None, :])


def mvdr_enhance(mixture_spec, target_spec, noise_spec, ref_channel=0):
    """Full oracle pipeline; returns (enhanced [1,F,T] spectrogram, weights)."""
    masks = ideal_ratio_masks(target_spec, noise_spec, ref_channel)
    cov_target = masked_covariance(mixture_spec, masks.target)
    cov_noise = masked_covariance(mixture_spec, masks.noise)
    weights = mvdr_weights(cov_target, cov_noise, ref_channel)
    return apply_beam_weights(weights, mixture_spec), weights


def oracle_enhance_waveform(mixture, target_ref, stft_cfg=None, ref_channel=0):
    """Oracle MVDR straight from waveforms: [M, n] mixture -> [n] estimate.

    Masks come from the reference-channel target and its complement in the
    mixture (mixing is linear, so mixture[ref] - target is exactly the
    interference-plus-noise there). Analysis runs on padded signals so the
    synthesis tail stays well conditioned.
    """
    from .stft import istft, pad_for_synthesis, stft

    mixture = np.atleast_2d(np.asarray(mixture))
    target_ref = np.asarray(target_ref)
    if mixture.shape[-1] != target_ref.shape[-1]:
        raise ValueError("mixture and target lengths differ")
    n = mixture.shape[-1]
    mix_spec = stft(pad_for_synthesis(mixture, stft_cfg), stft_cfg)
    tgt_spec = stft(pad_for_synthesis(target_ref, stft_cfg), stft_cfg)
    nz_spec = stft(pad_for_synthesis(mixture[ref_channel] - target_ref, stft_cfg),
                   stft_cfg)
    enhanced, _ = mvdr_enhance(mix_spec, tgt_spec, nz_spec, ref_channel)
    return istft(enhanced)[0, :n]
