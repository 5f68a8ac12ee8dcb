"""Forward/backward building blocks on numpy arrays (float64).

Layers are stateless: parameters live in a flat ``{name: ndarray}`` dict and
every ``backward`` accumulates into a matching gradient dict. LSTM gate order
is [input, forget, cell, output] in all weight blocks.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


def _require(cond, msg):
    if not cond:
        raise ShapeError(msg)


# activations -----------------------------------------------------------------

def sigmoid(x):
    # tanh form: no overflow for large |x| and no masking
    return 0.5 + 0.5 * np.tanh(0.5 * np.asarray(x, dtype=np.float64))


def tanh(x):
    return np.tanh(x)


def relu(x):
    return np.maximum(x, 0.0)


def softmax(x, axis=-1):
    z = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def log_softmax(x, axis=-1):
    z = x - np.max(x, axis=axis, keepdims=True)
    return z - np.log(np.sum(np.exp(z), axis=axis, keepdims=True))


def concat(arrays):
    """Concatenate along the last axis."""
    lead = arrays[0].shape[:-1]
    for a in arrays[1:]:
        _require(a.shape[:-1] == lead, f"cannot concatenate shapes {arrays[0].shape} and {a.shape}")
    return np.concatenate(arrays, axis=-1)


# dense ------------------------------------------------------------------------

def linear_forward(x, W, b):
    _require(x.shape[-1] == W.shape[1], f"linear: input {x.shape} vs weight {W.shape}")
    return x @ W.T + b


def linear_backward(dy, x, W):
    """Returns (dx, dW, db) for y = x W^T + b over any leading dims."""
    _require(dy.shape[-1] == W.shape[0], f"linear backward: grad {dy.shape} vs weight {W.shape}")
    x2 = x.reshape(-1, x.shape[-1])
    dy2 = dy.reshape(-1, dy.shape[-1])
    return dy @ W, dy2.T @ x2, dy2.sum(axis=0)


def embed_lookup(table, idx):
    idx = np.asarray(idx)
    _require(idx.size == 0 or (idx.min() >= 0 and idx.max() < table.shape[0]),
             f"embedding index out of range for table {table.shape}")
    return table[idx]


def embed_backward(dout, idx, table_shape):
    dtable = np.zeros(table_shape)
    np.add.at(dtable, np.asarray(idx).reshape(-1), dout.reshape(-1, table_shape[1]))
    return dtable


def cross_entropy(logits, target):
    """Mean -log softmax(logits)[target] over the batch, and its gradient."""
    logits = np.atleast_2d(logits)
    target = np.atleast_1d(np.asarray(target))
    _require(target.shape[0] == logits.shape[0], f"targets {target.shape} vs logits {logits.shape}")
    if target.size and (target.min() < 0 or target.max() >= logits.shape[1]):
        raise IndexError("target index out of range")
    n = logits.shape[0]
    lsm = log_softmax(logits)
    loss = -lsm[np.arange(n), target].mean()
    grad = np.exp(lsm)
    grad[np.arange(n), target] -= 1.0
    return loss, grad / n


# LSTM ---------------------------------------------------------------------------

def _cell(pre, c_prev):
    H = c_prev.shape[-1]
    act = sigmoid(pre)
    i, f, o = act[:, :H], act[:, H : 2 * H], act[:, 3 * H :]
    g = np.tanh(pre[:, 2 * H : 3 * H])
    c = f * c_prev + i * g
    tc = np.tanh(c)
    return o * tc, c, (i, f, g, o, tc, c_prev)


def _cell_backward(dh, dc, gates):
    i, f, g, o, tc, c_prev = gates
    dc = dc + dh * o * (1.0 - tc * tc)
    dpre = np.concatenate(
        [dc * g * i * (1.0 - i), dc * c_prev * f * (1.0 - f), dc * i * (1.0 - g * g),
         dh * tc * o * (1.0 - o)],
        axis=1,
    )
    return dpre, dc * f


def lstm_cell_forward(x, h_prev, c_prev, Wx, Wh, b):
    """One step; returns (h, c, cache)."""
    H = Wh.shape[1]
    _require(Wx.shape[0] == 4 * H and Wh.shape[0] == 4 * H and b.shape == (4 * H,),
             f"lstm params Wx {Wx.shape}, Wh {Wh.shape}, b {b.shape}")
    _require(x.shape[-1] == Wx.shape[1], f"lstm input {x.shape} vs Wx {Wx.shape}")
    _require(h_prev.shape[-1] == H and c_prev.shape == h_prev.shape,
             f"lstm state h {h_prev.shape}, c {c_prev.shape}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(h_prev)) and np.all(np.isfinite(c_prev))):
        raise NonFiniteError("non-finite activation")
    pre = x @ Wx.T + h_prev @ Wh.T + b
    h, c, gates = _cell(pre, c_prev)
    return h, c, (x, h_prev, gates, Wx, Wh)


def lstm_cell_backward(dh, dc, cache):
    """Returns (dx, dh_prev, dc_prev, dWx, dWh, db)."""
    x, h_prev, gates, Wx, Wh = cache
    dpre, dc_prev = _cell_backward(dh, dc, gates)
    return dpre @ Wx, dpre @ Wh, dc_prev, dpre.T @ x, dpre.T @ h_prev, dpre.sum(axis=0)


def lstm_scan(gx, Wh, reverse=False):
    """Returns (hs, cs, acts); ``acts`` has the activated gates, shape of ``gx``."""
    B, T, G = np.shape(gx)
    H = Wh.shape[1]
    if G != 4 * H or Wh.shape[0] != G:
        raise ValueError(f"gate width {G} does not match Wh {tuple(Wh.shape)}")
    # time-major copies keep every per-step slice contiguous; gates are activated in place
    acts = np.array(np.swapaxes(gx, 0, 1), dtype=np.float64, order="C")
    hs = np.empty((T, B, H))
    cs = np.empty((T, B, H))
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    WhT = Wh.T
    for t in (range(T - 1, -1, -1) if reverse else range(T)):
        a = acts[t]
        a += h @ WhT
        g = np.tanh(a[:, 2 * H : 3 * H])
        a *= 0.5
        np.tanh(a, out=a)
        a *= 0.5
        a += 0.5
        a[:, 2 * H : 3 * H] = g
        ct, ht = cs[t], hs[t]
        np.multiply(a[:, H : 2 * H], c, out=ct)
        ct += a[:, :H] * g
        np.tanh(ct, out=ht)
        ht *= a[:, 3 * H :]
        h, c = ht, ct
    return tuple(np.ascontiguousarray(np.swapaxes(x, 0, 1)) for x in (hs, cs, acts))


def lstm_scan_backward(dhs, cs, acts, Wh, reverse=False):
    """Gradient w.r.t. the pre-activation gates, shape of ``acts``."""
    B, T, G = acts.shape
    H = Wh.shape[1]
    dgx = np.zeros((B, T, G))
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    order = range(T) if reverse else range(T - 1, -1, -1)
    for step, t in enumerate(order):
        tp = t + 1 if reverse else t - 1
        i, f, g, o = (acts[:, t, k * H : (k + 1) * H] for k in range(4))
        c_prev = cs[:, tp] if step < T - 1 else 0.0
        tc = np.tanh(cs[:, t])
        dh = dhs[:, t] + dh_next
        dc = dc_next + dh * o * (1.0 - tc * tc)
        dgx[:, t] = np.concatenate(
            [dc * g * i * (1.0 - i), dc * c_prev * f * (1.0 - f), dc * i * (1.0 - g * g), dh * tc * o * (1.0 - o)],
            axis=1,
        )
        dc_next = dc * f
        dh_next = dgx[:, t] @ Wh
    return dgx


def lstm_forward(xs, Wx, Wh, b, reverse=False):
    """Run over (B, T, D) from zero state; returns (hs (B, T, H), cache)."""
    B, T, D = xs.shape
    _require(D == Wx.shape[1], f"lstm input {xs.shape} vs Wx {Wx.shape}")
    if not np.all(np.isfinite(xs)):
        raise NonFiniteError("non-finite activation")
    hs, cs, acts = lstm_scan(xs @ Wx.T + b, Wh, reverse)
    return hs, (xs, Wx, Wh, hs, cs, acts, reverse)


def lstm_backward(dhs, cache):
    """Returns (dxs, dWx, dWh, db)."""
    xs, Wx, Wh, hs, cs, acts, reverse = cache
    B, T, D = xs.shape
    H = Wh.shape[1]
    dgx = lstm_scan_backward(np.asarray(dhs, dtype=np.float64), cs, acts, Wh, reverse)
    h_prev = np.zeros_like(hs)
    if reverse:
        h_prev[:, :-1] = hs[:, 1:]
    else:
        h_prev[:, 1:] = hs[:, :-1]
    flat = dgx.reshape(-1, 4 * H)
    dWh = flat.T @ h_prev.reshape(-1, H)
    return dgx @ Wx, flat.T @ xs.reshape(-1, D), dWh, flat.sum(axis=0)


# attention ------------------------------------------------------------------------

def attention_forward(hs, W1, b1, W2, b2):
    """Scores via linear -> relu -> linear(1) -> softmax over time; returns (pooled, u, cache)."""
    a = hs @ W1.T + b1
    r = relu(a)
    s = (r @ W2.T)[..., 0] + b2[0]
    u = softmax(s, axis=1)
    pooled = np.einsum("bt,bth->bh", u, hs)
    return pooled, u, (hs, a, r, u, W1, W2)


def attention_backward(dpooled, cache):
    """Returns (dhs, dW1, db1, dW2, db2)."""
    hs, a, r, u, W1, W2 = cache
    du = np.einsum("bh,bth->bt", dpooled, hs)
    dhs = u[..., None] * dpooled[:, None, :]
    ds = u * (du - np.sum(u * du, axis=1, keepdims=True))
    dW2 = np.einsum("bt,bta->a", ds, r)[None, :]
    db2 = np.array([ds.sum()])
    da = ds[..., None] * W2[0] * (a > 0)
    dW1 = da.reshape(-1, da.shape[-1]).T @ hs.reshape(-1, hs.shape[-1])
    db1 = da.sum(axis=(0, 1))
    dhs += da @ W1
    return dhs, dW1, db1, dW2, db2


# modules on a flat parameter dict --------------------------------------------------

def _uniform(rng, fan_in, shape):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Linear:
    def __init__(self, name, n_in, n_out):
        self.name, self.n_in, self.n_out = name, n_in, n_out

    def init(self, rng, params):
        params[f"{self.name}.W"] = _uniform(rng, self.n_in, (self.n_out, self.n_in))
        params[f"{self.name}.b"] = _uniform(rng, self.n_in, (self.n_out,))

    def forward(self, params, x):
        return linear_forward(x, params[f"{self.name}.W"], params[f"{self.name}.b"]), x

    def backward(self, params, dy, x, grads):
        dx, dW, db = linear_backward(dy, x, params[f"{self.name}.W"])
        grads[f"{self.name}.W"] += dW
        grads[f"{self.name}.b"] += db
        return dx


class Embedding:
    def __init__(self, name, n_rows, dim):
        self.name, self.n_rows, self.dim = name, n_rows, dim

    def init(self, rng, params):
        params[f"{self.name}.E"] = rng.normal(0.0, 1.0 / np.sqrt(self.dim), (self.n_rows, self.dim))

    def forward(self, params, idx):
        return embed_lookup(params[f"{self.name}.E"], idx), idx

    def backward(self, params, dout, idx, grads):
        grads[f"{self.name}.E"] += embed_backward(dout, idx, params[f"{self.name}.E"].shape)


class LSTM:
    def __init__(self, name, n_in, hidden, reverse=False):
        self.name, self.n_in, self.hidden, self.reverse = name, n_in, hidden, reverse

    def init(self, rng, params):
        H = self.hidden
        params[f"{self.name}.Wx"] = _uniform(rng, H, (4 * H, self.n_in))
        params[f"{self.name}.Wh"] = _uniform(rng, H, (4 * H, H))
        b = np.zeros(4 * H)
        b[H : 2 * H] = 1.0
        params[f"{self.name}.b"] = b

    def forward(self, params, xs):
        n = self.name
        return lstm_forward(xs, params[f"{n}.Wx"], params[f"{n}.Wh"], params[f"{n}.b"], self.reverse)

    def backward(self, params, dhs, cache, grads):
        dxs, dWx, dWh, db = lstm_backward(dhs, cache)
        grads[f"{self.name}.Wx"] += dWx
        grads[f"{self.name}.Wh"] += dWh
        grads[f"{self.name}.b"] += db
        return dxs


class StackedLSTM:
    def __init__(self, name, n_in, hidden, n_layers):
        self.layers = [
            LSTM(f"{name}.{k}", n_in if k == 0 else hidden, hidden) for k in range(n_layers)
        ]

    def init(self, rng, params):
        for layer in self.layers:
            layer.init(rng, params)

    def forward(self, params, xs):
        caches = []
        for layer in self.layers:
            xs, cache = layer.forward(params, xs)
            caches.append(cache)
        return xs, caches

    def backward(self, params, dhs, caches, grads):
        for layer, cache in zip(reversed(self.layers), reversed(caches)):
            dhs = layer.backward(params, dhs, cache, grads)
        return dhs


class Attention:
    def __init__(self, name, dim, hidden):
        self.name, self.dim, self.hidden = name, dim, hidden

    def init(self, rng, params):
        n = self.name
        params[f"{n}.W1"] = _uniform(rng, self.dim, (self.hidden, self.dim))
        params[f"{n}.b1"] = _uniform(rng, self.dim, (self.hidden,))
        params[f"{n}.W2"] = _uniform(rng, self.hidden, (1, self.hidden))
        params[f"{n}.b2"] = _uniform(rng, self.hidden, (1,))

    def forward(self, params, hs):
        n = self.name
        return attention_forward(hs, params[f"{n}.W1"], params[f"{n}.b1"], params[f"{n}.W2"],
                                 params[f"{n}.b2"])

    def backward(self, params, dpooled, cache, grads):
        dhs, dW1, db1, dW2, db2 = attention_backward(dpooled, cache)
        n = self.name
        grads[f"{n}.W1"] += dW1
        grads[f"{n}.b1"] += db1
        grads[f"{n}.W2"] += dW2
        grads[f"{n}.b2"] += db2
        return dhs


class BiLSTMAttention:
    """Forward and backward LSTMs concatenated per step, pooled by self-attention."""

    def __init__(self, name, n_in, hidden, att_hidden=None):
        self.fwd = LSTM(f"{name}.fwd", n_in, hidden)
        self.bwd = LSTM(f"{name}.bwd", n_in, hidden, reverse=True)
        self.att = Attention(f"{name}.att", 2 * hidden, att_hidden or hidden)
        self.hidden = hidden

    @property
    def out_dim(self):
        return 2 * self.hidden

    def init(self, rng, params):
        for m in (self.fwd, self.bwd, self.att):
            m.init(rng, params)

    def forward(self, params, xs):
        """xs (B, T, D) -> pooled (B, 2H), attention weights (B, T), cache."""
        if xs.shape[1] == 0:
            raise ShapeError("attention over an empty sequence")
        hf, cf = self.fwd.forward(params, xs)
        hb, cb = self.bwd.forward(params, xs)
        hs = np.concatenate([hf, hb], axis=-1)
        pooled, u, ca = self.att.forward(params, hs)
        return pooled, u, (cf, cb, ca)

    def backward(self, params, dpooled, cache, grads):
        cf, cb, ca = cache
        dhs = self.att.backward(params, dpooled, ca, grads)
        H = self.hidden
        return self.fwd.backward(params, dhs[..., :H], cf, grads) + self.bwd.backward(
            params, dhs[..., H:], cb, grads
        )


def bilstm_attention_forward(xs, params, module):
    pooled, u, _ = module.forward(params, xs)
    return pooled, u


def zeros_like(params):
    return {k: np.zeros_like(v) for k, v in params.items()}


# optimiser ------------------------------------------------------------------------

@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, grads, state):
    """Bias-corrected Adam update, in place; returns ``params``."""
    state.step += 1
    bc1 = 1.0 - state.beta1**state.step
    bc2 = 1.0 - state.beta2**state.step
    for k, p in params.items():
        g = grads[k]
        _require(g.shape == p.shape, f"grad {k} shape {g.shape} vs param {p.shape}")
        if k not in state.m:
            state.m[k] = np.zeros_like(p)
            state.v[k] = np.zeros_like(p)
        m, v = state.m[k], state.v[k]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params


# checkpoints ------------------------------------------------------------------------
#
# Layout (little endian):
#   magic b"HCCK" | u32 version | u32 meta_len | meta_len bytes of UTF-8 JSON
#   | u32 n_arrays | per array, sorted by name:
#     u16 name_len | name (UTF-8) | u8 ndim | u32 * ndim shape | float64 row-major data

CHECKPOINT_MAGIC = b"HCCK"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, params, meta=None):
    meta_bytes = json.dumps(meta or {}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(meta_bytes)))
        fh.write(meta_bytes)
        fh.write(struct.pack("<I", len(params)))
        for name in sorted(params):
            arr = np.asarray(params[name], dtype="<f8", order="C")
            raw = name.encode()
            fh.write(struct.pack("<HB", len(raw), arr.ndim))
            fh.write(raw)
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes(order="C"))


def load_checkpoint(path):
    """Returns (params, meta)."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    version, meta_len = struct.unpack_from("<II", data, 4)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    pos = 12
    meta = json.loads(data[pos : pos + meta_len].decode())
    pos += meta_len
    (count,) = struct.unpack_from("<I", data, pos)
    pos += 4
    params = {}
    for _ in range(count):
        name_len, ndim = struct.unpack_from("<HB", data, pos)
        pos += 3
        name = data[pos : pos + name_len].decode()
        pos += name_len
        shape = struct.unpack_from(f"<{ndim}I", data, pos)
        pos += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        params[name] = np.frombuffer(data, dtype="<f8", count=size, offset=pos).reshape(shape).copy()
        pos += 8 * size
    return params, meta
