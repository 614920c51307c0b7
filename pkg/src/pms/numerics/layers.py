"""Neural layers: fully connected, multi-layer LSTM, batch norm with dropout.

Shape conventions follow (batch, features) for dense layers and
(steps, batch, features) for sequences.  The LSTM is recorded on the tape as
one fused node with a hand-written backward pass over the cached gate
activations; its gradients are validated against finite differences by the
gradient-check suite.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import EmptySequenceError, ShapeError, StatisticsError
from .rng import RngState, uniform_init
from .tensor import Tensor, as_tensor, custom_op, relu, tanh, tmean, tsqrt


def forward_linear(x, w, b=None) -> Tensor:
    """x (batch, nin) @ w (nin, nout) + b (nout,) -> (batch, nout)."""
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 2 or w.ndim != 2:
        raise ShapeError(f"linear expects 2-D operands, got {x.shape} and {w.shape}")
    if x.shape[1] != w.shape[0]:
        raise ShapeError(f"linear shapes do not chain: {x.shape} @ {w.shape}")
    out = x @ w
    if b is not None:
        b = as_tensor(b)
        if b.shape != (w.shape[1],):
            raise ShapeError(f"bias shape {b.shape} does not match output width {w.shape[1]}")
        out = out + b
    return out


def _np_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ez = np.exp(x[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass
class LstmLayerParams:
    """One layer's weights; gate order along the 4H axis is (i, f, g, o)."""

    wx: Tensor  # (nin, 4H)
    wh: Tensor  # (H, 4H)
    b: Tensor  # (4H,)

    @property
    def hidden(self) -> int:
        return self.wh.shape[0]


def lstm_init(n_layers: int, input_size: int, hidden: int, rng: RngState, prefix: str) -> list[LstmLayerParams]:
    """Seeded layer stack; the first layer consumes input_size features."""
    layers = []
    for i in range(n_layers):
        nin = input_size if i == 0 else hidden
        wx = Tensor(uniform_init((nin, 4 * hidden), nin, rng.generator(f"init:{prefix}.{i}.wx")), requires_grad=True)
        wh = Tensor(uniform_init((hidden, 4 * hidden), hidden, rng.generator(f"init:{prefix}.{i}.wh")), requires_grad=True)
        b = Tensor(uniform_init((4 * hidden,), hidden, rng.generator(f"init:{prefix}.{i}.b")), requires_grad=True)
        layers.append(LstmLayerParams(wx, wh, b))
    return layers


def lstm_forward(seq, layers, state=None, return_state: bool = False):
    """Run a stacked LSTM over (steps, batch, nin); returns (steps, batch, H).

    Logistic gates, tanh candidate, zero initial state unless ``state``
    supplies per-layer (h, c) arrays of shape (batch, H) (treated as
    constants).  The whole run is one tape node; backward is classic BPTT.
    """
    seq = as_tensor(seq)
    if seq.ndim != 3:
        raise ShapeError(f"lstm expects (steps, batch, features), got {seq.shape}")
    steps, batch, _ = seq.shape
    if steps == 0:
        raise EmptySequenceError("lstm given zero time steps")
    if not layers:
        raise ShapeError("lstm needs at least one layer")
    hidden = layers[0].hidden
    nin = seq.shape[2]
    for i, layer in enumerate(layers):
        want = nin if i == 0 else hidden
        if layer.wx.shape != (want, 4 * hidden) or layer.wh.shape != (hidden, 4 * hidden) or layer.b.shape != (4 * hidden,):
            raise ShapeError(
                f"lstm layer {i} shapes wx={layer.wx.shape} wh={layer.wh.shape} b={layer.b.shape} "
                f"inconsistent with input {want}, hidden {hidden}"
            )
    if state is not None and len(state) != len(layers):
        raise ShapeError(f"state carries {len(state)} layers, lstm has {len(layers)}")

    H = hidden
    n_layers = len(layers)
    # Per-layer caches for the backward pass.
    xs: list[np.ndarray] = []  # layer inputs (T, B, nin_l)
    gates: list[np.ndarray] = []  # (T, B, 4H) post-activation i,f,g,o
    cs: list[np.ndarray] = []  # (T, B, H) new cell states
    c_prevs: list[np.ndarray] = []  # (T, B, H)
    h_prevs: list[np.ndarray] = []  # (T, B, H)
    tcs: list[np.ndarray] = []  # tanh(c)

    x = seq.data
    final_state = []
    for li, layer in enumerate(layers):
        wx, wh, b = layer.wx.data, layer.wh.data, layer.b.data
        if state is not None:
            h = np.asarray(state[li][0], dtype=np.float64)
            c = np.asarray(state[li][1], dtype=np.float64)
        else:
            h = np.zeros((batch, H))
            c = np.zeros((batch, H))
        g_all = np.empty((steps, batch, 4 * H))
        c_all = np.empty((steps, batch, H))
        cp_all = np.empty((steps, batch, H))
        hp_all = np.empty((steps, batch, H))
        tc_all = np.empty((steps, batch, H))
        hs = np.empty((steps, batch, H))
        for t in range(steps):
            hp_all[t] = h
            cp_all[t] = c
            a = x[t] @ wx + h @ wh + b
            i = _np_sigmoid(a[:, :H])
            f = _np_sigmoid(a[:, H : 2 * H])
            g = np.tanh(a[:, 2 * H : 3 * H])
            o = _np_sigmoid(a[:, 3 * H :])
            c = f * c + i * g
            tc = np.tanh(c)
            h = o * tc
            g_all[t, :, :H] = i
            g_all[t, :, H : 2 * H] = f
            g_all[t, :, 2 * H : 3 * H] = g
            g_all[t, :, 3 * H :] = o
            c_all[t] = c
            tc_all[t] = tc
            hs[t] = h
        xs.append(x)
        gates.append(g_all)
        cs.append(c_all)
        c_prevs.append(cp_all)
        h_prevs.append(hp_all)
        tcs.append(tc_all)
        final_state.append((h.copy(), c.copy()))
        x = hs

    parents = [seq]
    for layer in layers:
        parents.extend((layer.wx, layer.wh, layer.b))
    need = [p.requires_grad for p in parents]

    def bw(g_out):
        d_up = np.ascontiguousarray(g_out)  # adjoint of the layer's output sequence
        grads: list[np.ndarray | None] = [None] * len(parents)
        for li in range(n_layers - 1, -1, -1):
            layer = layers[li]
            wx, wh = layer.wx.data, layer.wh.data
            x_l, g_all, c_all = xs[li], gates[li], cs[li]
            cp_all, hp_all, tc_all = c_prevs[li], h_prevs[li], tcs[li]
            dwx = np.zeros_like(wx)
            dwh = np.zeros_like(wh)
            db = np.zeros(4 * H)
            dx = np.empty((steps, batch, x_l.shape[2]))
            dh_next = np.zeros((batch, H))
            dc_next = np.zeros((batch, H))
            for t in range(steps - 1, -1, -1):
                i = g_all[t, :, :H]
                f = g_all[t, :, H : 2 * H]
                g = g_all[t, :, 2 * H : 3 * H]
                o = g_all[t, :, 3 * H :]
                tc = tc_all[t]
                dh = d_up[t] + dh_next
                dc = dh * o * (1.0 - tc * tc) + dc_next
                da = np.empty((batch, 4 * H))
                da[:, :H] = dc * g * i * (1.0 - i)
                da[:, H : 2 * H] = dc * cp_all[t] * f * (1.0 - f)
                da[:, 2 * H : 3 * H] = dc * i * (1.0 - g * g)
                da[:, 3 * H :] = dh * tc * o * (1.0 - o)
                dwx += x_l[t].T @ da
                dwh += hp_all[t].T @ da
                db += da.sum(axis=0)
                dx[t] = da @ wx.T
                dh_next = da @ wh.T
                dc_next = dc * f
            base = 1 + 3 * li
            if need[base]:
                grads[base] = dwx
            if need[base + 1]:
                grads[base + 1] = dwh
            if need[base + 2]:
                grads[base + 2] = db
            d_up = dx
        if need[0]:
            grads[0] = d_up
        return grads

    out = custom_op(x, tuple(parents), bw)
    if return_state:
        return out, final_state
    return out


@dataclass
class BatchNormParams:
    """Learned scale/shift plus running statistics for inference."""

    scale: Tensor  # (features,)
    shift: Tensor  # (features,)
    running_mean: np.ndarray = field(repr=False)
    running_var: np.ndarray = field(repr=False)
    eps: float = 1e-5
    momentum: float = 0.1


def batchnorm_init(features: int, eps: float = 1e-5, momentum: float = 0.1) -> BatchNormParams:
    return BatchNormParams(
        scale=Tensor(np.ones(features), requires_grad=True),
        shift=Tensor(np.zeros(features), requires_grad=True),
        running_mean=np.zeros(features),
        running_var=np.ones(features),
        eps=eps,
        momentum=momentum,
    )


def bn_dropout_act(
    x,
    bn: BatchNormParams | None,
    mode: str,
    drop_rate: float,
    rng,
    activation: str = "relu",
) -> Tensor:
    """Batch norm (optional), inverted dropout, then activation on (batch, F).

    Train mode standardizes with batch statistics (variance denominator =
    batch size, at least 2 rows required) and folds them into the running
    stats with the configured momentum; infer mode uses the running stats
    and skips dropout.  ``rng`` is an RngState or a numpy Generator; a rate
    of exactly 1.0 zeroes the output and is meant only for tests.
    """
    x = as_tensor(x)
    if x.ndim != 2:
        raise ShapeError(f"bn_dropout_act expects (batch, features), got {x.shape}")
    if mode not in ("train", "infer"):
        raise ValueError(f"unknown mode {mode!r}")
    if not 0.0 <= drop_rate <= 1.0:
        raise ValueError(f"drop_rate {drop_rate} outside [0, 1]")

    out = x
    if bn is not None:
        if mode == "train":
            if x.shape[0] < 2:
                raise StatisticsError(f"batch norm needs at least 2 rows in train mode, got {x.shape[0]}")
            mu = tmean(out, axis=0)
            centered = out - mu
            var = tmean(centered * centered, axis=0)
            out = centered / tsqrt(var + bn.eps)
            m = bn.momentum
            bn.running_mean = (1.0 - m) * bn.running_mean + m * mu.data
            bn.running_var = (1.0 - m) * bn.running_var + m * var.data
        else:
            out = (out - bn.running_mean) / np.sqrt(bn.running_var + bn.eps)
        out = out * bn.scale + bn.shift

    if mode == "train" and drop_rate > 0.0:
        if drop_rate >= 1.0:
            out = out * np.zeros(out.shape)
        else:
            gen = rng.stream("dropout") if isinstance(rng, RngState) else rng
            keep = (gen.uniform(size=out.shape) >= drop_rate) / (1.0 - drop_rate)
            out = out * keep

    if activation == "relu":
        out = relu(out)
    elif activation == "tanh":
        out = tanh(out)
    elif activation == "identity":
        pass
    else:
        raise ValueError(f"unknown activation {activation!r}")
    return out
