"""Small deterministic neural-network substrate.

Everything here works on float64 numpy arrays with a leading batch axis.
Single vectors are accepted wherever a batch is and are treated as a batch
of one. Gradients are accumulated (``+=``) into :class:`Param` buffers and
only cleared by :func:`adam_step` or :meth:`Param.zero_grad`.

Random numbers come from numpy's PCG64 bit generator seeded through a
``SeedSequence``; the pair (algorithm, seed words) fully determines every
draw, independent of platform.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DTYPE = np.float64
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class ShapeError(ValueError):
    """Raised when array shapes do not match a layer's configuration."""


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """PCG64 generator for ``seed`` and an optional stream path."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), *map(int, stream)])))


class Param:
    """A trainable array with its gradient buffer and Adam moments."""

    __slots__ = ("value", "grad", "adam_m", "adam_v", "step_count")

    def __init__(self, value):
        self.value = np.array(value, dtype=DTYPE)
        self.grad = np.zeros_like(self.value)
        self.adam_m = np.zeros_like(self.value)
        self.adam_v = np.zeros_like(self.value)
        self.step_count = 0

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad.fill(0.0)

    def reset_optimizer(self):
        self.adam_m.fill(0.0)
        self.adam_v.fill(0.0)
        self.step_count = 0

    def __repr__(self):
        return f"Param(shape={self.value.shape})"


def uniform_init(rng: np.random.Generator, shape, scale: float = 0.1) -> Param:
    return Param(rng.uniform(-scale, scale, size=shape))


def adam_step(p: Param, lr: float) -> None:
    """One bias-corrected Adam update, then clear the gradient."""
    p.step_count += 1
    g = p.grad
    p.adam_m *= ADAM_BETA1
    p.adam_m += (1.0 - ADAM_BETA1) * g
    p.adam_v *= ADAM_BETA2
    p.adam_v += (1.0 - ADAM_BETA2) * (g * g)
    m_hat = p.adam_m / (1.0 - ADAM_BETA1**p.step_count)
    v_hat = p.adam_v / (1.0 - ADAM_BETA2**p.step_count)
    p.value -= lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
    p.grad.fill(0.0)


def clip_grad_norm(params, max_norm: float) -> float:
    """Scale gradients in place so their global L2 norm is at most ``max_norm``."""
    total = float(np.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in params)))
    if total > max_norm > 0:
        scale = max_norm / (total + 1e-12)
        for p in params:
            p.grad *= scale
    return total


# --------------------------------------------------------------------------
# Dense layers


class Linear:
    """``y = x W^T + b`` with ``W`` of shape (out, in)."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator, scale: float = 0.1):
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.W = uniform_init(rng, (out_dim, in_dim), scale)
        self.b = Param(np.zeros(out_dim))

    def params(self):
        return [self.W, self.b]

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.shape[-1] != self.in_dim:
            raise ShapeError(f"Linear expects last dim {self.in_dim}, got {x.shape}")
        return x @ self.W.value.T + self.b.value

    def backward(self, x: np.ndarray, dy: np.ndarray) -> np.ndarray:
        """Accumulate parameter grads; return dL/dx. ``x`` may carry extra leading axes."""
        x2 = x.reshape(-1, self.in_dim)
        dy2 = dy.reshape(-1, self.out_dim)
        self.W.grad += dy2.T @ x2
        self.b.grad += dy2.sum(axis=0)
        return dy @ self.W.value


def embedding_backward(table: Param, ids: np.ndarray, d_out: np.ndarray) -> None:
    """Scatter-add ``d_out`` rows into the table gradient at ``ids``."""
    np.add.at(table.grad, ids.reshape(-1), d_out.reshape(-1, table.value.shape[1]))


# --------------------------------------------------------------------------
# Softmax family


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax_xent(logits: np.ndarray, target):
    """Cross-entropy of ``softmax(logits)`` against integer ``target``.

    For a single vector returns ``(loss, dlogits)``. For a batch (B, V) with
    targets (B,) returns per-row losses (B,) and per-row gradients (B, V).
    """
    logits = np.asarray(logits, dtype=DTYPE)
    if logits.size == 0 or logits.shape[-1] == 0:
        raise ValueError("softmax_xent on empty logits")
    single = logits.ndim == 1
    lg = logits[None, :] if single else logits
    tgt = np.atleast_1d(np.asarray(target, dtype=np.int64))
    if tgt.shape[0] != lg.shape[0]:
        raise ShapeError(f"{tgt.shape[0]} targets for {lg.shape[0]} rows")
    if np.any(tgt < 0) or np.any(tgt >= lg.shape[-1]):
        raise ValueError("target index out of range")
    logp = log_softmax(lg)
    rows = np.arange(lg.shape[0])
    loss = -logp[rows, tgt]
    grad = np.exp(logp)
    grad[rows, tgt] -= 1.0
    if single:
        return float(loss[0]), grad[0]
    return loss, grad


def sample_categorical(logits: np.ndarray, rng: np.random.Generator):
    """Draw indices from ``softmax(logits)`` by inverse-CDF on one uniform per row."""
    logits = np.asarray(logits, dtype=DTYPE)
    single = logits.ndim == 1
    p = softmax(logits[None, :] if single else logits)
    cdf = np.cumsum(p, axis=-1)
    u = rng.random(p.shape[0])
    idx = (cdf < (u * cdf[:, -1])[:, None]).sum(axis=-1)
    idx = np.minimum(idx, p.shape[-1] - 1)
    return int(idx[0]) if single else idx


# --------------------------------------------------------------------------
# GRU
#
# Gate rows are fused in the order (z, r, h): W is (3H, I), U is (3H, H) and
# b is (3H,). The per-gate matrices are exposed as views.


def sigmoid(x):
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


class GruParams:
    def __init__(self, input_dim: int, hidden_dim: int, rng: np.random.Generator, scale: float = 0.1):
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        H = hidden_dim
        self.W = uniform_init(rng, (3 * H, input_dim), scale)
        self.U = uniform_init(rng, (3 * H, H), scale)
        self.b = Param(np.zeros(3 * H))

    def params(self):
        return [self.W, self.U, self.b]

    def _gate(self, arr, k):
        H = self.hidden_dim
        return arr[k * H:(k + 1) * H]

    W_z = property(lambda self: self._gate(self.W.value, 0))
    W_r = property(lambda self: self._gate(self.W.value, 1))
    W_h = property(lambda self: self._gate(self.W.value, 2))
    U_z = property(lambda self: self._gate(self.U.value, 0))
    U_r = property(lambda self: self._gate(self.U.value, 1))
    U_h = property(lambda self: self._gate(self.U.value, 2))
    b_z = property(lambda self: self._gate(self.b.value, 0))
    b_r = property(lambda self: self._gate(self.b.value, 1))
    b_h = property(lambda self: self._gate(self.b.value, 2))


@dataclass
class GruCache:
    p: GruParams
    x: np.ndarray
    h: np.ndarray
    z: np.ndarray
    r: np.ndarray
    rh: np.ndarray
    hh: np.ndarray
    squeeze: bool = False


def _gru_cell(gx, h, U, H):
    gh = h @ U[:2 * H].T
    z = sigmoid(gx[:, :H] + gh[:, :H])
    r = sigmoid(gx[:, H:2 * H] + gh[:, H:])
    rh = r * h
    hh = np.tanh(gx[:, 2 * H:] + rh @ U[2 * H:].T)
    return h + z * (hh - h), z, r, rh, hh


def _gru_cell_backward(dh_new, h, z, r, rh, hh, U, H, dU):
    """Return (d pre-activations (B, 3H), dh). Accumulates into ``dU``."""
    dz = dh_new * (hh - h)
    dah = dh_new * z * (1.0 - hh * hh)
    dh = dh_new * (1.0 - z)
    dU[2 * H:] += dah.T @ rh
    drh = dah @ U[2 * H:]
    dh += drh * r
    dazr = np.concatenate([dz * z * (1.0 - z), drh * h * r * (1.0 - r)], axis=1)
    dU[:2 * H] += dazr.T @ h
    dh += dazr @ U[:2 * H]
    return np.concatenate([dazr, dah], axis=1), dh


def _check_dims(p: GruParams, x, h):
    if x.shape[-1] != p.input_dim or h.shape[-1] != p.hidden_dim:
        raise ShapeError(
            f"GRU({p.input_dim}->{p.hidden_dim}) got x{tuple(x.shape)} h{tuple(h.shape)}")
    if x.shape[:-1] != h.shape[:-1]:
        raise ShapeError(f"batch mismatch x{tuple(x.shape)} h{tuple(h.shape)}")


def gru_step(x: np.ndarray, h: np.ndarray, p: GruParams):
    """One GRU update. Returns ``(h_new, cache)``."""
    x = np.asarray(x, dtype=DTYPE)
    h = np.asarray(h, dtype=DTYPE)
    _check_dims(p, x, h)
    squeeze = x.ndim == 1
    if squeeze:
        x, h = x[None, :], h[None, :]
    gx = x @ p.W.value.T + p.b.value
    h_new, z, r, rh, hh = _gru_cell(gx, h, p.U.value, p.hidden_dim)
    cache = GruCache(p, x, h, z, r, rh, hh, squeeze)
    return (h_new[0] if squeeze else h_new), cache


def gru_backward(cache: GruCache | None, dh_new: np.ndarray):
    """Backward of :func:`gru_step`. Returns ``(dx, dh)``; accumulates param grads."""
    if cache is None:
        raise RuntimeError("gru_backward called without a forward cache")
    p = cache.p
    dh_new = np.asarray(dh_new, dtype=DTYPE)
    if cache.squeeze:
        dh_new = dh_new[None, :]
    da, dh = _gru_cell_backward(dh_new, cache.h, cache.z, cache.r, cache.rh, cache.hh,
                                p.U.value, p.hidden_dim, p.U.grad)
    p.W.grad += da.T @ cache.x
    p.b.grad += da.sum(axis=0)
    dx = da @ p.W.value
    if cache.squeeze:
        return dx[0], dh[0]
    return dx, dh


@dataclass
class GruSeqCache:
    p: GruParams
    xs: np.ndarray
    hs_prev: list = field(default_factory=list)
    gates: list = field(default_factory=list)
    mask: np.ndarray | None = None


def gru_forward_seq(xs: np.ndarray, h0: np.ndarray, p: GruParams, mask: np.ndarray | None = None):
    """Run the cell over ``xs`` (T, B, I) from ``h0`` (B, H).

    With ``mask`` (T, B) of 0/1, rows with mask 0 carry their hidden state
    through unchanged. Returns ``(hs, cache)`` with ``hs`` of shape (T, B, H).
    """
    T, B, _ = xs.shape
    _check_dims(p, xs[0], h0)
    H = p.hidden_dim
    U = p.U.value
    gxs = xs @ p.W.value.T + p.b.value
    hs = np.empty((T, B, H))
    cache = GruSeqCache(p, xs, mask=mask)
    h = h0
    for t in range(T):
        h_new, z, r, rh, hh = _gru_cell(gxs[t], h, U, H)
        cache.hs_prev.append(h)
        cache.gates.append((z, r, rh, hh))
        if mask is not None:
            h_new = h + mask[t][:, None] * (h_new - h)
        hs[t] = h_new
        h = h_new
    return hs, cache


def gru_backward_seq(cache: GruSeqCache, dhs: np.ndarray | None, dh_last: np.ndarray | None = None):
    """Backward of :func:`gru_forward_seq`.

    ``dhs`` (T, B, H) holds loss gradients w.r.t. every output state and may
    be None; ``dh_last`` is added to the final state's gradient. Returns
    ``(dxs, dh0)``.
    """
    p = cache.p
    T = len(cache.gates)
    H = p.hidden_dim
    U = p.U.value
    B = cache.xs.shape[1]
    dh = np.zeros((B, H)) if dh_last is None else dh_last.copy()
    das = np.empty((T, B, 3 * H))
    for t in range(T - 1, -1, -1):
        if dhs is not None:
            dh = dh + dhs[t]
        h = cache.hs_prev[t]
        z, r, rh, hh = cache.gates[t]
        if cache.mask is not None:
            m = cache.mask[t][:, None]
            d_cell = dh * m
            carry = dh * (1.0 - m)
        else:
            d_cell, carry = dh, None
        da, dh = _gru_cell_backward(d_cell, h, z, r, rh, hh, U, H, p.U.grad)
        if carry is not None:
            dh = dh + carry
        das[t] = da
    flat_da = das.reshape(T * B, 3 * H)
    p.W.grad += flat_da.T @ cache.xs.reshape(T * B, -1)
    p.b.grad += flat_da.sum(axis=0)
    return das @ p.W.value, dh
