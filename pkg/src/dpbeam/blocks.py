"""Learnable building blocks on top of the autodiff tape.

Each block registers its parameters in a ParamStore under a dotted name
prefix at construction, then acts as a callable on Tensors. Rebuilding the
same architecture recreates the same names, which is what makes checkpoints
portable.

Initialization is uniform in +-1/sqrt(fan_in) for weights and zero for
biases, from the rng handed in by the caller.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad


def _init_weight(store, name, shape, fan_in, rng):
    bound = 1.0 / np.sqrt(fan_in)
    return store.add(name, rng.uniform(-bound, bound, size=shape))


class PointwiseConv:
    """Affine map applied independently at every position.

    Weight is [out_ch, in_ch] (kernel_size 1, the default) or
    [out_ch, in_ch, k] for an optional receptive field along the axis just
    before the channels; k > 1 exists for experiments only.
    """

    def __init__(self, store, name, in_ch, out_ch, rng, kernel_size=1):
        if kernel_size < 1 or kernel_size % 2 == 0:
            raise ValueError("kernel_size must be a positive odd number")
        self.in_ch, self.out_ch, self.kernel_size = in_ch, out_ch, kernel_size
        shape = (out_ch, in_ch) if kernel_size == 1 else (out_ch, in_ch, kernel_size)
        self.w = _init_weight(store, f"{name}.w", shape, in_ch * kernel_size, rng)
        self.b = store.add(f"{name}.b", np.zeros(out_ch))

    def __call__(self, x):
        if x.shape[-1] != self.in_ch:
            raise ValueError(f"expected {self.in_ch} input channels, got {x.shape[-1]}")
        if self.kernel_size == 1:
            return ad.add(ad.matmul(x, ad.transpose(self.w, (1, 0))), self.b)
        # centered zero-padded convolution along axis -2
        k = self.kernel_size
        t = x.shape[-2]
        zeros_l = ad.Tensor(np.zeros(x.shape[:-2] + ((k - 1) // 2, x.shape[-1]),
                                     dtype=x.dtype))
        zeros_r = ad.Tensor(np.zeros(x.shape[:-2] + (k // 2, x.shape[-1]),
                                     dtype=x.dtype))
        padded = ad.concat([zeros_l, x, zeros_r], axis=-2)
        out = None
        for j in range(k):
            tap = ad.matmul(ad.slice_axis(padded, x.ndim - 2, j, j + t),
                            ad.transpose(ad.index_axis(self.w, 2, j), (1, 0)))
            out = tap if out is None else ad.add(out, tap)
        return ad.add(out, self.b)

    @staticmethod
    def param_count(in_ch, out_ch, kernel_size=1):
        return out_ch * in_ch * kernel_size + out_ch


class GruLayer:
    """Unidirectional GRU over axis 1 of [batch, time, features].

    Single fused parameter set: input weights [in, 3H], recurrent weights
    [H, 3H], one bias [3H], gates ordered (reset, update, candidate). The
    candidate's recurrent term is reset-gated after the matmul, and the
    update gate selects the candidate (z=1 ignores the old state).
    """

    def __init__(self, store, name, in_size, hidden, rng):
        self.in_size, self.hidden = in_size, hidden
        self.wx = _init_weight(store, f"{name}.wx", (in_size, 3 * hidden), in_size, rng)
        self.wh = _init_weight(store, f"{name}.wh", (hidden, 3 * hidden), hidden, rng)
        self.b = store.add(f"{name}.b", np.zeros(3 * hidden))

    def __call__(self, x, h0=None):
        if x.ndim != 3 or x.shape[-1] != self.in_size:
            raise ValueError(f"expected [batch, time, {self.in_size}], got {x.shape}")
        batch, n_steps, _ = x.shape
        hid = self.hidden
        gx = ad.add(ad.matmul(x, self.wx), self.b)  # all input gates at once
        if h0 is None:
            h = ad.Tensor(np.zeros((batch, hid), dtype=x.dtype))
        else:
            h = h0
        outs = []
        for t in range(n_steps):
            g = ad.index_axis(gx, 1, t)
            gh = ad.matmul(h, self.wh)
            r = ad.sigmoid(ad.add(ad.slice_axis(g, 1, 0, hid),
                                  ad.slice_axis(gh, 1, 0, hid)))
            z = ad.sigmoid(ad.add(ad.slice_axis(g, 1, hid, 2 * hid),
                                  ad.slice_axis(gh, 1, hid, 2 * hid)))
            n = ad.tanh(ad.add(ad.slice_axis(g, 1, 2 * hid, 3 * hid),
                               ad.mul(r, ad.slice_axis(gh, 1, 2 * hid, 3 * hid))))
            h = ad.add(h, ad.mul(z, ad.sub(n, h)))  # h + z*(n - h)
            outs.append(h)
        return ad.stack(outs, axis=1)

    @staticmethod
    def param_count(in_size, hidden):
        return 3 * (in_size + hidden + 1) * hidden


class GruStack:
    """n_layers GRUs feeding each other; all hidden sizes equal."""

    def __init__(self, store, name, in_size, hidden, n_layers, rng):
        if n_layers < 1:
            raise ValueError("need at least one layer")
        self.layers = [GruLayer(store, f"{name}.l{i}",
                                in_size if i == 0 else hidden, hidden, rng)
                       for i in range(n_layers)]

    def __call__(self, x):
        for layer in self.layers:
            x = layer(x)
        return x


class LayerNorm:
    """Learnable normalization over the trailing feature axis."""

    def __init__(self, store, name, dim, eps=1e-5):
        self.gamma = store.add(f"{name}.gamma", np.ones(dim))
        self.beta = store.add(f"{name}.beta", np.zeros(dim))
        self.eps = eps

    def __call__(self, x):
        return ad.layer_norm(x, self.gamma, self.beta, self.eps)


def causal_mask(n_query, n_key, dtype=np.float64):
    """Additive mask forbidding attention to later positions."""
    q = np.arange(n_query)[:, None]
    k = np.arange(n_key)[None, :]
    return np.where(k > q, -1e9, 0.0).astype(dtype)


class MultiHeadAttention:
    """Scaled dot-product attention with n_heads parallel subspaces.

    Inputs are [batch, length, d_model]; queries may have a different
    length than keys/values. No positional encoding: the op is permutation
    equivariant in queries and permutation invariant in key/value pairs.
    """

    def __init__(self, store, name, d_model, n_heads, rng):
        if d_model % n_heads != 0:
            raise ValueError(f"d_model {d_model} not divisible by {n_heads} heads")
        self.d_model, self.n_heads = d_model, n_heads
        self.d_head = d_model // n_heads
        for proj in ("wq", "wk", "wv", "wo"):
            setattr(self, proj,
                    _init_weight(store, f"{name}.{proj}", (d_model, d_model),
                                 d_model, rng))
        for bias in ("bq", "bk", "bv", "bo"):
            setattr(self, bias, store.add(f"{name}.{bias}", np.zeros(d_model)))

    def _heads(self, x, w, b):
        batch, length, _ = x.shape
        proj = ad.add(ad.matmul(x, w), b)
        split = ad.reshape(proj, (batch, length, self.n_heads, self.d_head))
        return ad.transpose(split, (0, 2, 1, 3))  # [batch, heads, length, d_head]

    def __call__(self, q, k, v, causal=False):
        if k.shape[1] == 0:
            raise ValueError("attention needs at least one key")
        if not (q.ndim == k.ndim == v.ndim == 3):
            raise ValueError("attention inputs must be [batch, length, d_model]")
        if k.shape[:2] != v.shape[:2]:
            raise ValueError("keys and values must align")
        batch, n_q, _ = q.shape
        qh = self._heads(q, self.wq, self.bq)
        kh = self._heads(k, self.wk, self.bk)
        vh = self._heads(v, self.wv, self.bv)
        scores = ad.mul(ad.matmul(qh, ad.transpose(kh, (0, 1, 3, 2))),
                        ad.Tensor(np.asarray(1.0 / np.sqrt(self.d_head),
                                             dtype=q.dtype)))
        if causal:
            scores = ad.add(scores, ad.Tensor(
                causal_mask(n_q, k.shape[1], dtype=q.dtype)))
        attn = ad.softmax(scores, axis=-1)
        ctx = ad.matmul(attn, vh)  # [batch, heads, n_q, d_head]
        merged = ad.reshape(ad.transpose(ctx, (0, 2, 1, 3)),
                            (batch, n_q, self.d_model))
        return ad.add(ad.matmul(merged, self.wo), self.bo)

    @staticmethod
    def param_count(d_model):
        return 4 * (d_model * d_model + d_model)


class AttentionBlock:
    """Pre-norm residual attention: x + MHA(LN(x), LN(kv), LN(kv)).

    Self-attention is the kv=None case. An optional position-wise
    feed-forward sublayer (off by default) adds x + W2 relu(W1 LN(x)).
    """

    def __init__(self, store, name, d_model, n_heads, rng, ffn=False):
        self.ln_q = LayerNorm(store, f"{name}.ln_q", d_model)
        self.ln_kv = LayerNorm(store, f"{name}.ln_kv", d_model)
        self.mha = MultiHeadAttention(store, f"{name}.mha", d_model, n_heads, rng)
        self.ffn = None
        if ffn:
            self.ln_f = LayerNorm(store, f"{name}.ln_f", d_model)
            self.fc1 = PointwiseConv(store, f"{name}.fc1", d_model, 4 * d_model, rng)
            self.fc2 = PointwiseConv(store, f"{name}.fc2", 4 * d_model, d_model, rng)
            self.ffn = True

    def __call__(self, x, kv=None, causal=False):
        kv_in = x if kv is None else kv
        normed_kv = self.ln_kv(kv_in)
        out = ad.add(x, self.mha(self.ln_q(x), normed_kv, normed_kv, causal=causal))
        if self.ffn:
            out = ad.add(out, self.fc2(ad.relu(self.fc1(self.ln_f(out)))))
        return out

    @staticmethod
    def param_count(d_model, ffn=False):
        count = 2 * 2 * d_model + MultiHeadAttention.param_count(d_model)
        if ffn:
            count += (2 * d_model
                      + PointwiseConv.param_count(d_model, 4 * d_model)
                      + PointwiseConv.param_count(4 * d_model, d_model))
        return count
