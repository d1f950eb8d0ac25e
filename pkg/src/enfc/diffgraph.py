"""Minimal reverse-mode autodiff over double-precision numpy tensors.

Exactly the building blocks the enrollment networks need: dense linear
maps, leaky-ReLU, dropout, layer normalization, multi-head attention,
stack/concat/reshape plumbing, exponential, the two training losses, and
AdamW / RMSprop update rules.  Nothing else.

A ``Tensor`` records its parents and a backward closure; calling
``backward(loss)`` topologically sorts the tape and accumulates exact
gradients into every reachable parameter.  Forward passes are bitwise
deterministic given weights, inputs, dropout seed, and mode.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import DomainError, NumericError, StructuralError
from .randdist import RngState
from .specfun import digamma_arr, ln_gamma_arr

LEAKY_SLOPE = 0.01
LAYER_NORM_EPS = 1e-5


class Tensor:
    """A node in the computation tape."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, parents=(), backward=None, name=""):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self._parents = parents
        self._backward = backward
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}{tag})"


def parameter(data, name: str) -> Tensor:
    """A named, trainable leaf tensor."""
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)


def constant(data) -> Tensor:
    return Tensor(data)


def _accum(t: Tensor, g: np.ndarray):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def backward(loss: Tensor):
    """Accumulate d(loss)/d(leaf) into ``grad`` for every reachable leaf."""
    if loss.data.shape != ():
        raise StructuralError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    topo, seen, stack = [], set(), [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


def zero_grads(params):
    for p in params:
        p.grad = None


# ---------------------------------------------------------------------------
# primitive ops


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise add; b may be a trailing-axis bias broadcast over a."""
    out_data = a.data + b.data

    def _bwd(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    return Tensor(out_data, parents=(a, b), backward=_bwd)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def matmul(x: Tensor, w: Tensor) -> Tensor:
    """x[..., m, k] @ w[k, n] with a shared 2-D weight."""
    if x.data.shape[-1] != w.data.shape[0]:
        raise StructuralError(
            f"matmul inner dims disagree: {x.data.shape} @ {w.data.shape}")
    out_data = x.data @ w.data

    def _bwd(g):
        _accum(x, g @ w.data.T)
        gx = x.data.reshape(-1, x.data.shape[-1])
        gg = g.reshape(-1, g.shape[-1])
        _accum(w, gx.T @ gg)

    return Tensor(out_data, parents=(x, w), backward=_bwd)


def batched_matmul(a: Tensor, b: Tensor) -> Tensor:
    """a[..., m, k] @ b[..., k, n] with identical leading axes."""
    if a.data.shape[:-2] != b.data.shape[:-2] or a.data.shape[-1] != b.data.shape[-2]:
        raise StructuralError(
            f"batched matmul shapes disagree: {a.data.shape} @ {b.data.shape}")
    out_data = a.data @ b.data

    def _bwd(g):
        _accum(a, g @ np.swapaxes(b.data, -1, -2))
        _accum(b, np.swapaxes(a.data, -1, -2) @ g)

    return Tensor(out_data, parents=(a, b), backward=_bwd)


def scale(x: Tensor, c: float) -> Tensor:
    def _bwd(g):
        _accum(x, g * c)

    return Tensor(x.data * c, parents=(x,), backward=_bwd)


def reshape(x: Tensor, shape) -> Tensor:
    def _bwd(g):
        _accum(x, g.reshape(x.data.shape))

    return Tensor(x.data.reshape(shape), parents=(x,), backward=_bwd)


def transpose(x: Tensor, axes) -> Tensor:
    inverse = np.argsort(axes)

    def _bwd(g):
        _accum(x, g.transpose(inverse))

    return Tensor(x.data.transpose(axes), parents=(x,), backward=_bwd)


def stack1(tensors) -> Tensor:
    """Stack same-shape tensors along a new axis 1 (token sequence axis)."""
    out_data = np.stack([t.data for t in tensors], axis=1)
    tensors = tuple(tensors)

    def _bwd(g):
        for i, t in enumerate(tensors):
            _accum(t, g[:, i])

    return Tensor(out_data, parents=tensors, backward=_bwd)


def concat_last(tensors) -> Tensor:
    """Concatenate along the last axis."""
    tensors = tuple(tensors)
    out_data = np.concatenate([t.data for t in tensors], axis=-1)
    splits = np.cumsum([t.data.shape[-1] for t in tensors])[:-1]

    def _bwd(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=-1)):
            _accum(t, piece)

    return Tensor(out_data, parents=tensors, backward=_bwd)


def leaky_relu(x: Tensor, slope: float = LEAKY_SLOPE) -> Tensor:
    pos = x.data > 0.0
    out_data = np.where(pos, x.data, slope * x.data)

    def _bwd(g):
        _accum(x, g * np.where(pos, 1.0, slope))

    return Tensor(out_data, parents=(x,), backward=_bwd)


def exp(x: Tensor) -> Tensor:
    out_data = np.exp(x.data)

    def _bwd(g):
        _accum(x, g * out_data)

    return Tensor(out_data, parents=(x,), backward=_bwd)


def dropout(x: Tensor, rate: float, rng: RngState | None, train: bool) -> Tensor:
    """Inverted dropout: scaling by 1/keep in train mode, identity in eval."""
    if not (0.0 <= rate < 1.0):
        raise DomainError(f"dropout rate must be in [0, 1), got {rate!r}")
    if not train or rate == 0.0:
        def _bwd_id(g):
            _accum(x, g)
        return Tensor(x.data, parents=(x,), backward=_bwd_id)
    if rng is None:
        raise StructuralError("train-mode dropout needs an RngState")
    keep = 1.0 - rate
    mask = (rng.generator.random(x.data.shape) < keep) / keep

    def _bwd(g):
        _accum(x, g * mask)

    return Tensor(x.data * mask, parents=(x,), backward=_bwd)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = LAYER_NORM_EPS) -> Tensor:
    """Zero-mean/unit-variance over the last axis, then affine."""
    if x.data.shape[-1] < 2:
        raise StructuralError("layer_norm needs a last dimension of at least 2")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv_std
    out_data = xhat * gain.data + bias.data

    def _bwd(g):
        gy = g * gain.data
        gx = inv_std * (
            gy
            - gy.mean(axis=-1, keepdims=True)
            - xhat * (gy * xhat).mean(axis=-1, keepdims=True)
        )
        _accum(x, gx)
        red = tuple(range(g.ndim - 1))
        _accum(gain, (g * xhat).sum(axis=red))
        _accum(bias, g.sum(axis=red))

    return Tensor(out_data, parents=(x, gain, bias), backward=_bwd)


def softmax_last(x: Tensor) -> Tensor:
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=-1, keepdims=True)

    def _bwd(g):
        dot = (g * out_data).sum(axis=-1, keepdims=True)
        _accum(x, out_data * (g - dot))

    return Tensor(out_data, parents=(x,), backward=_bwd)


# ---------------------------------------------------------------------------
# attention


def multi_head_attention(query: Tensor, keys_values: Tensor, heads: int,
                         wq: Tensor, wk: Tensor, wv: Tensor, wo: Tensor,
                         return_weights: bool = False):
    """Scaled dot-product attention: query [B,1,D] against keys_values [B,T,D].

    Learned projections wq/wk/wv/wo are all [D,D]; per-head width is
    D/heads; head outputs are concatenated and output-projected.
    """
    b, one, d = query.data.shape
    t = keys_values.data.shape[1]
    if keys_values.data.shape != (b, t, d):
        raise StructuralError(
            f"keys_values shape {keys_values.data.shape} incompatible with query {query.data.shape}")
    if d % heads != 0:
        raise StructuralError(f"model width {d} not divisible by {heads} heads")
    dh = d // heads

    def split_heads(tensor, length):
        # [B, L, D] -> [B, H, L, dh]
        return transpose(reshape(tensor, (b, length, heads, dh)), (0, 2, 1, 3))

    q = split_heads(matmul(query, wq), one)
    k = split_heads(matmul(keys_values, wk), t)
    v = split_heads(matmul(keys_values, wv), t)
    scores = scale(batched_matmul(q, transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dh))
    weights = softmax_last(scores)           # [B, H, 1, T]
    ctx = batched_matmul(weights, v)         # [B, H, 1, dh]
    merged = reshape(transpose(ctx, (0, 2, 1, 3)), (b, one, d))
    out = matmul(merged, wo)
    if return_weights:
        return out, weights
    return out


# ---------------------------------------------------------------------------
# losses


def l1_log_loss(pred_log: Tensor, target_count: np.ndarray) -> Tensor:
    """Mean |ln(target + 1) - prediction| over the batch (log-scale L1)."""
    target = np.asarray(target_count, dtype=np.float64).reshape(-1)
    pred = pred_log.data.reshape(-1)
    if pred.shape != target.shape:
        raise StructuralError(f"batch mismatch: {pred.shape} vs {target.shape}")
    if not (np.all(np.isfinite(pred)) and np.all(np.isfinite(target))):
        raise NumericError("non-finite values in l1_log_loss inputs")
    log_target = np.log1p(target)
    diff = pred - log_target
    out_data = np.array(np.abs(diff).mean())

    def _bwd(g):
        _accum(pred_log, (g * np.sign(diff) / diff.size).reshape(pred_log.data.shape))

    return Tensor(out_data, parents=(pred_log,), backward=_bwd)


def gamma_nll_loss(shape_logit: Tensor, rate_logit: Tensor, target: np.ndarray) -> Tensor:
    """Mean Gamma negative log-likelihood with exp-activated logits.

    With a = exp(shape_logit) and lam = exp(rate_logit):
        nll = -(a ln lam - lnGamma(a) + (a-1) ln t - lam t)
    averaged over the batch.  Targets must be strictly positive.
    """
    t = np.asarray(target, dtype=np.float64).reshape(-1)
    if np.any(t <= 0.0):
        raise DomainError("gamma_nll_loss targets must be > 0")
    s = shape_logit.data.reshape(-1)
    r = rate_logit.data.reshape(-1)
    if s.shape != t.shape or r.shape != t.shape:
        raise StructuralError(
            f"batch mismatch: shape {s.shape}, rate {r.shape}, target {t.shape}")
    alpha = np.exp(s)
    lam = np.exp(r)
    log_t = np.log(t)
    nll = -(alpha * r - ln_gamma_arr(alpha) + (alpha - 1.0) * log_t - lam * t)
    out_data = np.array(nll.mean())

    def _bwd(g):
        n = t.size
        dnll_ds = alpha * (digamma_arr(alpha) - r - log_t)
        dnll_dr = lam * t - alpha
        _accum(shape_logit, (g * dnll_ds / n).reshape(shape_logit.data.shape))
        _accum(rate_logit, (g * dnll_dr / n).reshape(rate_logit.data.shape))

    return Tensor(out_data, parents=(shape_logit, rate_logit), backward=_bwd)


# ---------------------------------------------------------------------------
# optimizers


class AdamW:
    """Decoupled-weight-decay Adam with per-parameter-group learning rates.

    ``groups`` is a list of (params, lr) pairs; betas (0.9, 0.999),
    eps 1e-8, decay applied directly to weights (not through the moments).
    """

    def __init__(self, groups, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.01):
        self.groups = [(list(params), float(lr)) for params, lr in groups]
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self._m = {}
        self._v = {}
        for params, _ in self.groups:
            for p in params:
                self._m[id(p)] = np.zeros_like(p.data)
                self._v[id(p)] = np.zeros_like(p.data)

    def step(self):
        self.step_count += 1
        bc1 = 1.0 - self.b1 ** self.step_count
        bc2 = 1.0 - self.b2 ** self.step_count
        for params, lr in self.groups:
            for p in params:
                g = p.grad
                if g is None:
                    continue
                m = self._m[id(p)]
                v = self._v[id(p)]
                m *= self.b1
                m += (1.0 - self.b1) * g
                v *= self.b2
                v += (1.0 - self.b2) * g * g
                update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
                if self.weight_decay:
                    update = update + self.weight_decay * p.data
                p.data -= lr * update


class RMSprop:
    """Plain RMSprop: squared-gradient EMA (decay 0.9), step lr*g/sqrt(v+eps)."""

    def __init__(self, params, lr=0.01, decay=0.9, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.decay = decay
        self.eps = eps
        self._v = {id(p): np.zeros_like(p.data) for p in self.params}

    def step(self):
        for p in self.params:
            g = p.grad
            if g is None:
                continue
            v = self._v[id(p)]
            v *= self.decay
            v += (1.0 - self.decay) * g * g
            p.data -= self.lr * g / np.sqrt(v + self.eps)
