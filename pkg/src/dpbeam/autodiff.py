"""Minimal reverse-mode automatic differentiation over dense real ndarrays.

A define-by-run tape: every op builds a `Tensor` holding the forward value
and a closure that maps the output gradient to the parents' gradients.
Complex quantities are carried as (real, imag) tensor pairs; see
`complex_mul` / `complex_conj`.

Conventions
    - gradients accumulate additively into `Tensor.grad`
    - `backward()` may only be called on a scalar, and only once per graph
    - dtype is preserved through ops (float64 for checking, float32 for speed)
"""

from __future__ import annotations

import numpy as np


class Tensor:
    """A dense real array plus an optional backward-graph record.

    `parents` and `bwd` are set by the ops below; leaf tensors created with
    `requires_grad=True` receive accumulated gradients in `.grad`.
    """

    __slots__ = ("data", "grad", "requires_grad", "parents", "bwd", "name", "_done")

    def __init__(self, data, requires_grad=False, parents=(), bwd=None, name=None):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = bool(requires_grad) or any(p.requires_grad for p in parents)
        # keep the graph only where a gradient can flow
        self.parents = tuple(parents) if self.requires_grad else ()
        self.bwd = bwd if self.requires_grad else None
        self.name = name
        self._done = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        """Populate `.grad` of every reachable leaf with dself/dleaf.

        Requires a scalar root. The recorded graph is released afterwards;
        calling backward twice on the same root raises.
        """
        if self.data.size != 1:
            raise ValueError(f"backward requires a scalar root, got shape {self.shape}")
        if self._done:
            raise RuntimeError("backward already ran on this root; rebuild the graph")
        if not self.requires_grad:
            raise RuntimeError("root does not require grad; nothing to differentiate")

        order = _toposort(self)
        grads = {id(self): np.ones_like(self.data)}
        for node in order:  # reverse topological: root first
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.bwd is None:
                # leaf: accumulate
                if node.grad is None:
                    node.grad = g.copy()
                else:
                    node.grad += g
                continue
            for parent, pg in zip(node.parents, node.bwd(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] += pg
                else:
                    grads[key] = pg
        self._done = True
        _release(order)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, grad={self.requires_grad})"

    # convenience operators (thin wrappers over the module-level ops)
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def _toposort(root):
    """Reverse topological order (root first), iterative to spare the stack."""
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in visited:
                stack.append((p, False))
    order.reverse()
    return order


def _release(order):
    for node in order:
        if node.bwd is not None:
            node.parents = ()
            node.bwd = None


def astensor(x, dtype=None):
    """Wrap a constant; passes Tensors through unchanged (dtype permitting)."""
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x, dtype=dtype)
    return Tensor(arr)


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def custom_op(data, parents, bwd, name=None):
    """Create a graph node from a precomputed forward value.

    `bwd(grad_out) -> tuple of parent grads` must be linearizable at the
    recorded point; used for ops with hand-written adjoints (e.g. ISTFT).
    """
    return Tensor(data, parents=parents, bwd=bwd, name=name)


# ---------------------------------------------------------------------------
# arithmetic
# ---------------------------------------------------------------------------

def add(a, b):
    a, b = astensor(a), astensor(b)
    out = a.data + b.data

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor(out, parents=(a, b), bwd=bwd)


def sub(a, b):
    a, b = astensor(a), astensor(b)
    out = a.data - b.data

    def bwd(g):
        return _unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)

    return Tensor(out, parents=(a, b), bwd=bwd)


def neg(a):
    a = astensor(a)
    return Tensor(-a.data, parents=(a,), bwd=lambda g: (-g,))


def mul(a, b):
    a, b = astensor(a), astensor(b)
    out = a.data * b.data

    def bwd(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return Tensor(out, parents=(a, b), bwd=bwd)


def div(a, b):
    a, b = astensor(a), astensor(b)
    out = a.data / b.data

    def bwd(g):
        ga = _unbroadcast(g / b.data, a.shape)
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
        return ga, gb

    return Tensor(out, parents=(a, b), bwd=bwd)


def matmul(a, b):
    """np.matmul semantics for stacks of matrices; operands must be >= 2-D."""
    a, b = astensor(a), astensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul operands must be at least 2-D")
    out = np.matmul(a.data, b.data)

    def bwd(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return Tensor(out, parents=(a, b), bwd=bwd)


# ---------------------------------------------------------------------------
# shape manipulation
# ---------------------------------------------------------------------------

def transpose(a, axes):
    a = astensor(a)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def bwd(g):
        return (np.transpose(g, inv),)

    return Tensor(np.transpose(a.data, axes), parents=(a,), bwd=bwd)


def reshape(a, shape):
    a = astensor(a)
    orig = a.shape

    def bwd(g):
        return (g.reshape(orig),)

    return Tensor(a.data.reshape(shape), parents=(a,), bwd=bwd)


def concat(tensors, axis):
    tensors = [astensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor(out, parents=tuple(tensors), bwd=bwd)


def stack(tensors, axis):
    tensors = [astensor(t) for t in tensors]
    out = np.stack([t.data for t in tensors], axis=axis)

    def bwd(g):
        return tuple(np.moveaxis(g, axis, 0))

    return Tensor(out, parents=tuple(tensors), bwd=bwd)


def slice_axis(a, axis, start, stop):
    a = astensor(a)
    idx = [slice(None)] * a.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)
    shape = a.shape

    def bwd(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[idx] = g
        return (full,)

    return Tensor(a.data[idx], parents=(a,), bwd=bwd)


def index_axis(a, axis, i):
    """Select index `i` along `axis`, dropping that axis."""
    a = astensor(a)
    idx = [slice(None)] * a.ndim
    idx[axis] = i
    idx = tuple(idx)
    shape = a.shape

    def bwd(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[idx] = g
        return (full,)

    return Tensor(a.data[idx], parents=(a,), bwd=bwd)


# ---------------------------------------------------------------------------
# nonlinearities and reductions
# ---------------------------------------------------------------------------

def sigmoid(a):
    a = astensor(a)
    # stable piecewise form
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)

    def bwd(g):
        return (g * out * (1.0 - out),)

    return Tensor(out, parents=(a,), bwd=bwd)


def tanh(a):
    a = astensor(a)
    out = np.tanh(a.data)

    def bwd(g):
        return (g * (1.0 - out * out),)

    return Tensor(out, parents=(a,), bwd=bwd)


def relu(a):
    a = astensor(a)
    out = np.maximum(a.data, 0)

    def bwd(g):
        return (g * (a.data > 0),)

    return Tensor(out, parents=(a,), bwd=bwd)


def exp(a):
    a = astensor(a)
    out = np.exp(a.data)

    def bwd(g):
        return (g * out,)

    return Tensor(out, parents=(a,), bwd=bwd)


def log(a):
    a = astensor(a)

    def bwd(g):
        return (g / a.data,)

    return Tensor(np.log(a.data), parents=(a,), bwd=bwd)


def sqrt(a):
    a = astensor(a)
    out = np.sqrt(a.data)

    def bwd(g):
        denom = np.maximum(out, np.finfo(out.dtype).tiny)
        return (g * 0.5 / denom,)

    return Tensor(out, parents=(a,), bwd=bwd)


def square(a):
    a = astensor(a)

    def bwd(g):
        return (g * 2.0 * a.data,)

    return Tensor(a.data * a.data, parents=(a,), bwd=bwd)


def clip(a, lo, hi):
    """Clamp to [lo, hi]; gradient passes only in the interior."""
    a = astensor(a)
    out = np.clip(a.data, lo, hi)

    def bwd(g):
        return (g * ((a.data > lo) & (a.data < hi)),)

    return Tensor(out, parents=(a,), bwd=bwd)


def softmax(a, axis):
    a = astensor(a)
    if a.shape[axis] == 0:
        raise ValueError("softmax over an empty axis")
    shifted = a.data - np.max(a.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / np.sum(e, axis=axis, keepdims=True)

    def bwd(g):
        dot = np.sum(g * out, axis=axis, keepdims=True)
        return (out * (g - dot),)

    return Tensor(out, parents=(a,), bwd=bwd)


def sum_(a, axis=None, keepdims=False):
    a = astensor(a)
    out = np.sum(a.data, axis=axis, keepdims=keepdims)
    shape = a.shape

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy().astype(g.dtype),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, shape).copy(),)

    return Tensor(out, parents=(a,), bwd=bwd)


def mean(a, axis=None, keepdims=False):
    a = astensor(a)
    out = np.mean(a.data, axis=axis, keepdims=keepdims)
    shape = a.shape
    n = a.size if axis is None else shape[axis]

    def bwd(g):
        if axis is None:
            return ((np.broadcast_to(g, shape) / n).astype(g.dtype),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, shape) / n,)

    return Tensor(out, parents=(a,), bwd=bwd)


def layer_norm(x, gamma, beta, eps=1e-5):
    """Normalize over the last axis, then scale and shift."""
    x, gamma, beta = astensor(x), astensor(gamma), astensor(beta)
    mu = np.mean(x.data, axis=-1, keepdims=True)
    xc = x.data - mu
    var = np.mean(xc * xc, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def bwd(g):
        ggam = _unbroadcast(g * xhat, gamma.shape)
        gbet = _unbroadcast(g, beta.shape)
        gh = g * gamma.data
        gx = inv * (gh - np.mean(gh, axis=-1, keepdims=True)
                    - xhat * np.mean(gh * xhat, axis=-1, keepdims=True))
        return gx, ggam, gbet

    return Tensor(out, parents=(x, gamma, beta), bwd=bwd)


# ---------------------------------------------------------------------------
# complex values as (real, imag) pairs
# ---------------------------------------------------------------------------

def complex_mul(ar, ai, br, bi):
    """(ar + i*ai) * (br + i*bi) -> (real, imag) pair."""
    return sub(mul(ar, br), mul(ai, bi)), add(mul(ar, bi), mul(ai, br))


def complex_conj(ar, ai):
    """Conjugate of a (real, imag) pair."""
    return ar, neg(ai)


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------

class ParamStore:
    """Named learnable tensors with per-parameter optimizer slots.

    Names are unique and shapes are frozen at registration; `state` maps
    parameter name -> dict of optimizer buffers.
    """

    def __init__(self, dtype=np.float64):
        self.dtype = np.dtype(dtype)
        self._params: dict[str, Tensor] = {}
        self.state: dict[str, dict] = {}

    def add(self, name, value):
        if name in self._params:
            raise ValueError(f"duplicate parameter name: {name}")
        t = Tensor(np.asarray(value, dtype=self.dtype), requires_grad=True, name=name)
        self._params[name] = t
        return t

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __len__(self):
        return len(self._params)

    def names(self):
        return list(self._params.keys())

    def items(self):
        return self._params.items()

    def tensors(self):
        return list(self._params.values())

    def n_params(self):
        return sum(t.size for t in self._params.values())

    def zero_grads(self):
        for t in self._params.values():
            t.grad = None

    def astype(self, dtype):
        """Copy of the store in another precision (optimizer state not carried)."""
        out = ParamStore(dtype)
        for name, t in self._params.items():
            out.add(name, t.data.astype(dtype))
        return out

    def to_arrays(self):
        return {name: t.data.copy() for name, t in self._params.items()}

    def load_arrays(self, arrays):
        """In-place load; shapes must match the registered parameters."""
        for name, t in self._params.items():
            if name not in arrays:
                raise KeyError(f"checkpoint missing parameter {name}")
            arr = np.asarray(arrays[name])
            if arr.shape != t.data.shape:
                raise ValueError(
                    f"shape mismatch for {name}: {arr.shape} vs {t.data.shape}")
            t.data = arr.astype(self.dtype)
        extra = set(arrays) - set(self._params)
        if extra:
            raise KeyError(f"checkpoint has unknown parameters: {sorted(extra)}")


# ---------------------------------------------------------------------------
# finite-difference verification
# ---------------------------------------------------------------------------

class GradcheckReport:
    """Per-input comparison of analytic vs central-difference gradients."""

    def __init__(self, entries, tol):
        self.entries = entries  # list of (label, max_rel_err, n_checked)
        self.tol = tol

    @property
    def max_rel_err(self):
        return max((e[1] for e in self.entries), default=0.0)

    @property
    def passed(self):
        return bool(np.isfinite(self.max_rel_err) and self.max_rel_err < self.tol)

    def __str__(self):
        lines = [f"{label}: max_rel_err={err:.3e} ({n} checked)"
                 for label, err, n in self.entries]
        lines.append(f"overall: {'PASS' if self.passed else 'FAIL'} "
                     f"(max {self.max_rel_err:.3e}, tol {self.tol:.1e})")
        return "\n".join(lines)


def _rel_err(analytic, numeric, floor):
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def gradcheck(fn, inputs, eps=1e-5, tol=1e-4, labels=None, max_elems=None, rng=None):
    """Compare analytic gradients of a scalar-valued `fn` to central differences.

    `fn` maps the given Tensors to a scalar Tensor. Each input marked
    requires_grad is perturbed elementwise (or on a random subset of
    `max_elems` coordinates). Relative error uses a floor of 1e-3 on the
    denominator so that finite-difference noise on near-zero entries does
    not register as failure. A non-finite forward value is reported as
    failure.
    """
    inputs = [t if isinstance(t, Tensor) else Tensor(np.asarray(t, float), requires_grad=True)
              for t in inputs]
    if labels is None:
        labels = [t.name or f"input{i}" for i, t in enumerate(inputs)]
    rng = np.random.default_rng(0) if rng is None else rng

    for t in inputs:
        t.zero_grad()
    out = fn(*inputs)
    if not np.all(np.isfinite(out.data)):
        return GradcheckReport([("forward", np.inf, 1)], tol)
    out.backward()

    entries = []
    for label, t in zip(labels, inputs):
        if not t.requires_grad:
            continue
        grad = np.zeros_like(t.data) if t.grad is None else t.grad
        flat = t.data.reshape(-1)
        gflat = grad.reshape(-1)
        idx = np.arange(flat.size)
        if max_elems is not None and flat.size > max_elems:
            idx = rng.choice(flat.size, size=max_elems, replace=False)
        worst = 0.0
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            fp = float(fn(*inputs).data)
            flat[i] = orig - eps
            fm = float(fn(*inputs).data)
            flat[i] = orig
            numeric = (fp - fm) / (2 * eps)
            worst = max(worst, _rel_err(float(gflat[i]), numeric, 1e-3))
        entries.append((label, worst, len(idx)))
    return GradcheckReport(entries, tol)


def directional_gradcheck(fn, inputs, n_directions=10, eps=1e-5, tol=1e-4, rng=None):
    """Check <grad, v> against (f(x+hv)-f(x-hv))/2h for random unit directions.

    Cheaper than elementwise probing for large parameter sets; each direction
    spans all differentiable inputs jointly.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    inputs = list(inputs)
    for t in inputs:
        t.zero_grad()
    out = fn(*inputs)
    if not np.all(np.isfinite(out.data)):
        return GradcheckReport([("forward", np.inf, 1)], tol)
    out.backward()
    grads = [np.zeros_like(t.data) if t.grad is None else t.grad.copy()
             for t in inputs if t.requires_grad]
    live = [t for t in inputs if t.requires_grad]

    worst = 0.0
    for _ in range(n_directions):
        vs = [rng.standard_normal(t.data.shape) for t in live]
        norm = np.sqrt(sum(float(np.sum(v * v)) for v in vs))
        vs = [v / norm for v in vs]
        analytic = sum(float(np.sum(g * v)) for g, v in zip(grads, vs))
        saved = [t.data.copy() for t in live]
        for t, v in zip(live, vs):
            t.data = t.data + eps * v
        fp = float(fn(*inputs).data)
        for t, s, v in zip(live, saved, vs):
            t.data = s - eps * v
        fm = float(fn(*inputs).data)
        for t, s in zip(live, saved):
            t.data = s
        numeric = (fp - fm) / (2 * eps)
        worst = max(worst, _rel_err(analytic, numeric, 1e-3))
    return GradcheckReport([("directional", worst, n_directions)], tol)
