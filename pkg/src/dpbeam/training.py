"""Loss, optimizer and the desk-scale training/evaluation loops.

The objective combines a scale-invariant SDR term on the synthesized
waveform with a magnitude MSE on the spectrogram, both computed against the
reverberant target at the reference microphone. Everything differentiable
runs on the autodiff tape; synthesis enters the graph through a custom op
whose backward pass is the exact adjoint of the linear ISTFT.
"""

from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .container import atomic_write
from .features import assemble_inputs
from .model import DualPathBeamformer, apply_weights_graph
from .stft import Spectrogram, StftConfig, istft, istft_adjoint, pad_for_synthesis, stft

SI_SDR_CAP_DB = 60.0
_LOG10 = float(np.log(10.0))


# ---------------------------------------------------------------------------
# scale-invariant SDR (metric and graph forms)
# ---------------------------------------------------------------------------

def si_sdr_db(est, ref, cap=SI_SDR_CAP_DB):
    """Scale-invariant SDR in dB, capped to [-cap, cap].

    The reference is rescaled to the least-squares projection of the
    estimate, so any nonzero scaling of `est` scores identically. A perfect
    estimate hits the cap; an all-zero estimate hits the floor.
    """
    est = np.asarray(est, dtype=np.float64).reshape(-1)
    ref = np.asarray(ref, dtype=np.float64).reshape(-1)
    if est.shape != ref.shape:
        raise ValueError(f"length mismatch: {est.shape} vs {ref.shape}")
    ref_energy = float(ref @ ref)
    if ref_energy == 0.0:
        raise ValueError("reference signal is identically zero")
    alpha = float(est @ ref) / ref_energy
    target = alpha * ref
    err = est - target
    num = float(target @ target)
    den = float(err @ err)
    if num == 0.0:
        return float(-cap)
    if den == 0.0:
        return float(cap)
    return float(np.clip(10.0 * np.log10(num / den), -cap, cap))


def si_sdr_graph(est, ref, cap=SI_SDR_CAP_DB):
    """Per-item Si-SDR of a batch on the tape: est [B, n] -> [B].

    `ref` is treated as constant. The dB value is clipped to [-cap, cap];
    gradients vanish outside the interior, which also guards the perfect
    and hopeless extremes.
    """
    est = ad.astensor(est)
    ref = np.asarray(ref)
    if est.ndim != 2 or est.shape != ref.shape:
        raise ValueError(f"expected matching [B, n], got {est.shape} vs {ref.shape}")
    tiny = np.asarray(1e-30, dtype=ref.dtype)
    ref_energy = np.sum(ref * ref, axis=1, keepdims=True)
    if np.any(ref_energy == 0.0):
        raise ValueError("reference batch contains an all-zero signal")
    alpha = ad.mul(ad.sum_(ad.mul(est, ref), axis=1, keepdims=True),
                   1.0 / ref_energy)                       # [B, 1]
    target = ad.mul(alpha, ref)                            # [B, n]
    err = ad.sub(est, target)
    num = ad.add(ad.sum_(ad.square(target), axis=1), tiny)  # [B]
    den = ad.add(ad.sum_(ad.square(err), axis=1), tiny)
    ratio_db = ad.mul(ad.sub(ad.log(num), ad.log(den)), 10.0 / _LOG10)
    return ad.clip(ratio_db, -cap, cap)


# ---------------------------------------------------------------------------
# synthesis as a graph node
# ---------------------------------------------------------------------------

def istft_graph(est_re, est_im, cfg: StftConfig, n_padded, n_out):
    """ISTFT of (re, im) spectrogram Tensors, trimmed to `n_out` samples.

    `n_padded` is the sample count the frames were analyzed from (after
    pad_for_synthesis); the forward synthesizes that length and keeps the
    first `n_out`. Backward zero-extends the incoming gradient to the
    padded length and applies the exact adjoint.
    """
    est_re, est_im = ad.astensor(est_re), ad.astensor(est_im)
    if est_re.shape != est_im.shape:
        raise ValueError("real and imaginary parts must share a shape")
    n_frames = est_re.shape[-1]
    if not 0 < n_out <= n_padded:
        raise ValueError(f"need 0 < n_out <= n_padded, got {n_out} vs {n_padded}")
    spec = Spectrogram(est_re.data + 1j * est_im.data, cfg, int(n_padded))
    wave = istft(spec)[..., :n_out]

    def bwd(g):
        full = np.zeros(g.shape[:-1] + (int(n_padded),), dtype=g.dtype)
        full[..., :n_out] = g
        adj = istft_adjoint(full, cfg, n_frames)
        return (np.ascontiguousarray(adj.real), np.ascontiguousarray(adj.imag))

    return ad.custom_op(wave, (est_re, est_im), bwd, name="istft")


# ---------------------------------------------------------------------------
# composite objective
# ---------------------------------------------------------------------------

def composite_loss(est_spec, est_wave, ref_spec, ref_wave,
                   weights=(1.0, 1.0), mag_power=1.0):
    """Waveform Si-SDR plus spectrogram magnitude MSE, as tape scalars.

    est_spec: (re, im) Tensors [B, F, T];  est_wave: Tensor [B, n].
    ref_spec: constant complex or magnitude array [B, F, T];  ref_wave:
    constant [B, n]. Returns (loss, si_sdr_term, mse_term) where
    loss = si_sdr_term + mse_term, si_sdr_term = -w0 * mean Si-SDR and
    mse_term = w1 * mean squared magnitude error over every (b, f, t).
    `mag_power` != 1 compares compressed magnitudes |.|**p instead.
    """
    est_re, est_im = est_spec
    est_re, est_im = ad.astensor(est_re), ad.astensor(est_im)
    w_si, w_mag = float(weights[0]), float(weights[1])
    if w_si < 0 or w_mag < 0:
        raise ValueError("loss weights must be nonnegative")
    ref_mag = np.abs(np.asarray(ref_spec))
    if est_re.shape != ref_mag.shape:
        raise ValueError(
            f"spectrogram shapes disagree: {est_re.shape} vs {ref_mag.shape}")

    # smooth |.|: sqrt of power plus a tiny constant keeps the gradient
    # finite at exact zeros without visibly biasing the magnitudes
    eps = np.asarray(1e-24, dtype=est_re.data.dtype)
    mag = ad.sqrt(ad.add(ad.add(ad.square(est_re), ad.square(est_im)), eps))
    if mag_power != 1.0:
        mag = ad.exp(ad.mul(ad.log(ad.add(mag, 1e-12)), float(mag_power)))
        ref_mag = (ref_mag + 1e-12) ** float(mag_power)
    mse_term = ad.mul(ad.mean(ad.square(ad.sub(mag, ref_mag))), w_mag)

    si = si_sdr_graph(est_wave, ref_wave)
    si_term = ad.mul(ad.mean(si), -w_si)
    return ad.add(si_term, mse_term), si_term, mse_term


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

@dataclass
class TrainConfig:
    """Optimization settings; defaults follow the published recipe scaled
    to a single desk machine (a handful of epochs, 2 s crops)."""

    lr: float = 2e-3
    decay: float = 0.98
    clip_norm: float = 10.0
    batch: int = 4
    epochs: int = 5
    seed: int = 0
    loss_weights: tuple = (1.0, 1.0)
    crop_seconds: float = 2.0
    mag_power: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    log_every: int = 0  # progress print period in steps; 0 silences

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if not 0 < self.decay <= 1:
            raise ValueError("decay must be in (0, 1]")
        if self.clip_norm <= 0:
            raise ValueError("clip_norm must be positive")
        if self.batch < 1 or self.epochs < 1:
            raise ValueError("batch and epochs must be at least 1")
        w = tuple(float(x) for x in self.loss_weights)
        if len(w) != 2 or any(x < 0 for x in w):
            raise ValueError("loss_weights must be two nonnegative numbers")
        object.__setattr__(self, "loss_weights", w)
        if self.crop_seconds <= 0:
            raise ValueError("crop_seconds must be positive")

    def to_dict(self):
        return {
            "lr": self.lr, "decay": self.decay, "clip_norm": self.clip_norm,
            "batch": self.batch, "epochs": self.epochs, "seed": self.seed,
            "loss_weights": list(self.loss_weights),
            "crop_seconds": self.crop_seconds, "mag_power": self.mag_power,
            "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps,
        }


_OPT_KEY = "_adam"  # bookkeeping entry in ParamStore.state; not a parameter


def grad_global_norm(store):
    """L2 norm over every parameter gradient (missing grads count as zero)."""
    total = 0.0
    for t in store.tensors():
        if t.grad is not None:
            g = np.asarray(t.grad, dtype=np.float64)
            total += float(np.vdot(g, g))
    return float(np.sqrt(total))


def clip_gradients(store, max_norm):
    """Scale all gradients by min(1, max_norm / norm); returns the pre-clip
    global norm. Direction is preserved exactly."""
    norm = grad_global_norm(store)
    if np.isfinite(norm) and norm > max_norm:
        scale = max_norm / norm
        for t in store.tensors():
            if t.grad is not None:
                t.grad = t.grad * scale
    return norm


def adam_step(store, cfg: TrainConfig, epoch):
    """One Adam update from the gradients currently on `store`.

    Applies global-norm clipping at cfg.clip_norm first, then the standard
    bias-corrected update with step size lr * decay**epoch. A non-finite
    gradient anywhere skips the whole step (parameters and moments
    untouched) and bumps the skip counter. Returns (applied, pre-clip
    grad norm, effective lr).
    """
    meta = store.state.setdefault(_OPT_KEY, {"t": 0, "skipped": 0})
    lr = cfg.lr * cfg.decay ** epoch
    finite = all(t.grad is None or np.all(np.isfinite(t.grad))
                 for t in store.tensors())
    if not finite:
        meta["skipped"] += 1
        return False, grad_global_norm(store), lr
    norm = clip_gradients(store, cfg.clip_norm)
    meta["t"] += 1
    t_step = meta["t"]
    bc1 = 1.0 - cfg.beta1 ** t_step
    bc2 = 1.0 - cfg.beta2 ** t_step
    for name, p in store.items():
        if p.grad is None:
            continue
        g = np.asarray(p.grad, dtype=p.data.dtype)  # keep the store's precision
        slots = store.state.setdefault(name, {})
        m = slots.get("m")
        v = slots.get("v")
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * g
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * (g * g)
        slots["m"], slots["v"] = m, v
        p.data = p.data - lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)
    return True, norm, lr


def skipped_steps(store):
    return store.state.get(_OPT_KEY, {}).get("skipped", 0)


# ---------------------------------------------------------------------------
# batch preparation
# ---------------------------------------------------------------------------

def prepare_batch(examples, offsets, n_crop, stft_cfg: StftConfig, dtype):
    """Crop, analyze and stack a batch of training examples.

    Returns a dict with model inputs (feats [B,F,T,C], cov [B,F,T,2M^2],
    y_re / y_im [B,F,T,M]) and loss references (ref_mag [B,F,T],
    ref_wave [B,n_crop]), plus the padded sample count the frames cover.
    """
    feats_l, cov_l, yre_l, yim_l, mag_l, wave_l = [], [], [], [], [], []
    n_padded = None
    for ex, off in zip(examples, offsets):
        mix = ex.mixture[:, off:off + n_crop]
        ref = ex.target_reverb_ref[off:off + n_crop]
        if mix.shape[-1] != n_crop:
            raise ValueError(f"example shorter than the {n_crop}-sample crop")
        padded = pad_for_synthesis(mix, stft_cfg)
        n_padded = padded.shape[-1]
        spec = stft(padded, stft_cfg)
        feats, cov = assemble_inputs(spec, ex.mix.target_doa, ex.room.geometry())
        f_bins, t_frames = spec.data.shape[-2:]
        feats_l.append(np.moveaxis(feats.data, 0, -1).astype(dtype))
        cov_l.append(cov.data.reshape(f_bins, t_frames, -1).astype(dtype))
        y = np.moveaxis(spec.data, 0, -1)  # [F, T, M]
        yre_l.append(y.real.astype(dtype))
        yim_l.append(y.imag.astype(dtype))
        ref_spec = stft(pad_for_synthesis(ref, stft_cfg), stft_cfg)
        mag_l.append(np.abs(ref_spec.data).astype(dtype))
        wave_l.append(ref.astype(dtype))
    return {
        "feats": np.stack(feats_l), "cov": np.stack(cov_l),
        "y_re": np.stack(yre_l), "y_im": np.stack(yim_l),
        "ref_mag": np.stack(mag_l), "ref_wave": np.stack(wave_l),
        "n_padded": n_padded,
    }


def batch_loss(model: DualPathBeamformer, batch, cfg: TrainConfig,
               stft_cfg: StftConfig):
    """Forward pass plus composite loss for one prepared batch."""
    w_re, w_im = model.weights_graph(batch["feats"], batch["cov"])
    est_re, est_im = apply_weights_graph(w_re, w_im, batch["y_re"], batch["y_im"])
    n_crop = batch["ref_wave"].shape[-1]
    est_wave = istft_graph(est_re, est_im, stft_cfg, batch["n_padded"], n_crop)
    return composite_loss((est_re, est_im), est_wave,
                          batch["ref_mag"], batch["ref_wave"],
                          weights=cfg.loss_weights, mag_power=cfg.mag_power)


# ---------------------------------------------------------------------------
# evaluation report
# ---------------------------------------------------------------------------

@dataclass
class EvalReport:
    """Per-clip and mean Si-SDR of the raw input and the enhancement."""

    clips: list = field(default_factory=list)
    mean_input_si_sdr: float = 0.0
    mean_enhanced_si_sdr: float = 0.0
    param_count: int | None = None
    wall_time_s: float = 0.0
    method: str | None = None

    @property
    def improvement_db(self):
        return self.mean_enhanced_si_sdr - self.mean_input_si_sdr

    def to_dict(self):
        return {
            "clips": self.clips,
            "mean_input_si_sdr": self.mean_input_si_sdr,
            "mean_enhanced_si_sdr": self.mean_enhanced_si_sdr,
            "improvement_db": self.improvement_db,
            "param_count": self.param_count,
            "wall_time_s": self.wall_time_s,
            "method": self.method,
        }

    def save(self, path):
        atomic_write(path, (json.dumps(self.to_dict(), indent=2) + "\n").encode())

    def __str__(self):
        lines = [f"clips: {len(self.clips)}"]
        if self.method:
            lines[0] += f" (method: {self.method})"
        lines += [
            f"mean input Si-SDR:    {self.mean_input_si_sdr:+7.2f} dB",
            f"mean enhanced Si-SDR: {self.mean_enhanced_si_sdr:+7.2f} dB",
            f"improvement:          {self.improvement_db:+7.2f} dB",
        ]
        if self.param_count is not None:
            lines.append(f"parameters: {self.param_count}")
        lines.append(f"wall time: {self.wall_time_s:.1f} s")
        return "\n".join(lines)


def evaluate(examples, enhance_fn, param_count=None, method=None):
    """Run `enhance_fn(example) -> waveform` over a corpus and score it.

    Input Si-SDR scores the reference-channel mixture; both metrics use the
    reverberant target at that channel as reference.
    """
    report = EvalReport(param_count=param_count, method=method)
    start = time.perf_counter()
    for i, ex in enumerate(examples):
        ref = ex.target_reverb_ref
        before = si_sdr_db(ex.mixture[0], ref)
        est = enhance_fn(ex)
        after = si_sdr_db(est, ref)
        report.clips.append({
            "clip": i,
            "input_si_sdr": before,
            "enhanced_si_sdr": after,
        })
    report.wall_time_s = time.perf_counter() - start
    if report.clips:
        report.mean_input_si_sdr = float(
            np.mean([c["input_si_sdr"] for c in report.clips]))
        report.mean_enhanced_si_sdr = float(
            np.mean([c["enhanced_si_sdr"] for c in report.clips]))
    return report


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

LOG_COLUMNS = ("step", "loss", "si_sdr_term", "mse_term", "grad_norm", "lr")


def write_loss_csv(path, rows):
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(LOG_COLUMNS)
    for row in rows:
        writer.writerow([row[k] for k in LOG_COLUMNS])
    atomic_write(path, buf.getvalue().encode())


@dataclass
class TrainResult:
    rows: list
    report: EvalReport | None
    steps: int
    examples_seen: int
    skipped_steps: int
    wall_time_s: float


def train(model: DualPathBeamformer, examples, cfg: TrainConfig,
          stft_cfg: StftConfig | None = None, heldout=None,
          ckpt_path=None, log_path=None, sample_rate=16000):
    """Optimize `model` on a list of TrainingExamples.

    Runs cfg.epochs passes over a seeded shuffle in batches of cfg.batch
    (the final short batch is kept, so steps x batch covers every example
    each epoch). Each step logs (step, loss, si_sdr_term, mse_term,
    grad_norm, lr); the run is bitwise reproducible for a fixed seed and
    dtype. A checkpoint lands at `ckpt_path` after every epoch, the CSV at
    `log_path` at the end, and `heldout` examples feed a final EvalReport.
    """
    if not examples:
        raise ValueError("no training examples")
    stft_cfg = stft_cfg or StftConfig()
    n_crop = int(round(cfg.crop_seconds * sample_rate))
    shortest = min(ex.n_samples for ex in examples)
    if shortest < n_crop:
        raise ValueError(
            f"crop of {n_crop} samples exceeds shortest example ({shortest})")
    rng = np.random.default_rng(cfg.seed)
    dtype = model.store.dtype
    rows = []
    step = 0
    seen = 0
    start = time.perf_counter()
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(examples))
        for lo in range(0, len(order), cfg.batch):
            chunk = [examples[i] for i in order[lo:lo + cfg.batch]]
            offsets = [int(rng.integers(0, ex.n_samples - n_crop + 1))
                       for ex in chunk]
            batch = prepare_batch(chunk, offsets, n_crop, stft_cfg, dtype)
            model.store.zero_grads()
            loss, si_term, mse_term = batch_loss(model, batch, cfg, stft_cfg)
            loss.backward()
            applied, norm, lr = adam_step(model.store, cfg, epoch)
            step += 1
            seen += len(chunk)
            rows.append({
                "step": step, "loss": float(loss.data),
                "si_sdr_term": float(si_term.data),
                "mse_term": float(mse_term.data),
                "grad_norm": float(norm), "lr": float(lr),
            })
            if cfg.log_every and step % cfg.log_every == 0:
                tag = "" if applied else "  [step skipped: non-finite grads]"
                print(f"step {step:5d}  epoch {epoch}  loss {loss.data:+9.4f}  "
                      f"grad_norm {norm:9.3f}  lr {lr:.3e}{tag}", flush=True)
        if ckpt_path is not None:
            model.save(ckpt_path)
    wall = time.perf_counter() - start
    if log_path is not None:
        write_loss_csv(log_path, rows)
    report = None
    if heldout:
        report = evaluate(
            heldout,
            lambda ex: model.enhance(ex.mixture, ex.mix.target_doa,
                                     geom=ex.room.geometry(),
                                     stft_cfg=stft_cfg)[0],
            param_count=model.n_params, method="dptbf")
    return TrainResult(rows=rows, report=report, steps=step,
                       examples_seen=seen,
                       skipped_steps=skipped_steps(model.store),
                       wall_time_s=wall)


# ---------------------------------------------------------------------------
# finite-difference audit of every learnable block
# ---------------------------------------------------------------------------

def _project(out, rng):
    """Reduce a tensor to a scalar with a fixed random projection."""
    return ad.sum_(ad.mul(out, rng.standard_normal(out.shape)))


def _check_store(build, store, rng, max_elems=None):
    """Gradcheck a closure against every parameter in `store`.

    The parameters go in as the perturbed inputs; `build` rebuilds the graph
    from the same live tensors on each call.
    """
    tensors = store.tensors()
    return ad.gradcheck(lambda *_: build(), tensors, labels=store.names(),
                        max_elems=max_elems, rng=rng)


def gradcheck_suite(max_elems=30, seed=0):
    """Finite-difference checks for each learnable block and the full loss.

    Returns an ordered dict name -> GradcheckReport covering the pointwise
    convolutions (k=1 and k=3), a GRU layer over three frames, multi-head
    cross attention with 4 queries and 5 keys, a residual attention block,
    the assembled beamformer, and the composite loss through beam weight
    application and ISTFT on a tiny clip. All tolerances are 1e-4.
    """
    from . import blocks
    from .model import BeamformerConfig

    rng = np.random.default_rng(seed)
    suite = {}

    store = ad.ParamStore(np.float64)
    conv1 = blocks.PointwiseConv(store, "conv1", 3, 4, rng)
    x = rng.standard_normal((2, 5, 3))
    suite["pointwise_conv_k1"] = _check_store(
        lambda: _project(conv1(x), np.random.default_rng(1)), store, rng)

    store = ad.ParamStore(np.float64)
    conv3 = blocks.PointwiseConv(store, "conv3", 3, 2, rng, kernel_size=3)
    x3 = rng.standard_normal((2, 6, 3))
    suite["pointwise_conv_k3"] = _check_store(
        lambda: _project(conv3(x3), np.random.default_rng(2)), store, rng)

    store = ad.ParamStore(np.float64)
    ln = blocks.LayerNorm(store, "ln", 5)
    xl = rng.standard_normal((3, 4, 5))
    suite["layer_norm"] = _check_store(
        lambda: _project(ln(xl), np.random.default_rng(3)), store, rng)

    store = ad.ParamStore(np.float64)
    gru = blocks.GruLayer(store, "gru", 3, 4, rng)
    xg = rng.standard_normal((2, 3, 3))
    suite["gru_3_frames"] = _check_store(
        lambda: _project(gru(xg), np.random.default_rng(4)), store, rng)

    store = ad.ParamStore(np.float64)
    mha = blocks.MultiHeadAttention(store, "mha", 8, 2, rng)
    q = rng.standard_normal((1, 4, 8))
    kv = rng.standard_normal((1, 5, 8))
    suite["mha_q4_k5"] = _check_store(
        lambda: _project(mha(q, kv, kv), np.random.default_rng(5)), store, rng)

    store = ad.ParamStore(np.float64)
    attn = blocks.AttentionBlock(store, "attn", 8, 2, rng)
    xa = rng.standard_normal((1, 4, 8))
    suite["attention_block"] = _check_store(
        lambda: _project(attn(xa), np.random.default_rng(6)), store, rng)

    cfg = BeamformerConfig(d_model=8, gru_hidden=16, n_heads=2, n_mics=2,
                           n_pairs=1, gru_layers=1)
    model = DualPathBeamformer(cfg, store=ad.ParamStore(np.float64), seed=seed)
    bft = (1, 5, 6)
    feats = rng.standard_normal(bft + (cfg.feat_channels,))
    cov = rng.standard_normal(bft + (cfg.cov_channels,))

    def model_scalar():
        w_re, w_im = model.weights_graph(feats, cov)
        prj = np.random.default_rng(7)
        return ad.add(_project(w_re, prj), _project(w_im, prj))

    suite["beamformer"] = _check_store(model_scalar, model.store, rng,
                                       max_elems=max_elems)

    tiny_stft = StftConfig(n_fft=32, hop=16)
    n_out = 64
    n_padded = n_out + tiny_stft.hop
    f_bins = tiny_stft.n_bins
    t_frames = tiny_stft.n_frames(n_padded)
    shape = (1, f_bins, t_frames, 2)
    w_re = ad.Tensor(rng.standard_normal(shape), requires_grad=True, name="w_re")
    w_im = ad.Tensor(rng.standard_normal(shape), requires_grad=True, name="w_im")
    y_re = rng.standard_normal(shape)
    y_im = rng.standard_normal(shape)
    ref_mag = np.abs(rng.standard_normal((1, f_bins, t_frames)))
    ref_wave = rng.standard_normal((1, n_out))

    def loss_scalar(*_):
        est_re, est_im = apply_weights_graph(w_re, w_im, y_re, y_im)
        est_wave = istft_graph(est_re, est_im, tiny_stft, n_padded, n_out)
        loss, _, _ = composite_loss((est_re, est_im), est_wave, ref_mag, ref_wave)
        return loss

    suite["composite_loss_istft"] = ad.gradcheck(
        loss_scalar, [w_re, w_im], labels=["w_re", "w_im"],
        max_elems=max_elems, rng=rng)

    return suite
