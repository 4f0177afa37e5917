"""Layers and losses used by the recognizer and the classification head.

Image tensors are channels-last. Every layer accepts an optional leading
batch axis; unbatched inputs are handled by the same code path.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .tensor import DTYPE, ShapeError, Tensor, _node, as_tensor, concat, log_softmax, stack

LAYER_KINDS = (
    "conv3x3_same",
    "maxpool2x2",
    "dense",
    "time_distributed_dense",
    "bidirectional_recurrent",
    "dropout",
    "activation",
)
ACTIVATIONS = ("relu", "tanh", "sigmoid", "softmax", "none")
BCE_EPS = 1e-7


class CTCFeasibilityError(ValueError):
    """The target cannot be emitted in the available number of time steps."""


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    dimensions: dict = field(default_factory=dict)
    activation: str = "none"

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.kind == "dropout" and not 0.0 <= self.dimensions.get("rate", 0.0) < 1.0:
            raise ValueError("dropout rate must lie in [0, 1)")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "dimensions": dict(self.dimensions), "activation": self.activation}


def activate(x: Tensor, name: str) -> Tensor:
    if name == "relu":
        return x.relu()
    if name == "tanh":
        return x.tanh()
    if name == "sigmoid":
        return x.sigmoid()
    if name == "softmax":
        return log_softmax(x).exp()
    if name == "none":
        return x
    raise ValueError(f"unknown activation {name!r}")


# ---------------------------------------------------------------------------
# convolution and pooling


def conv2d_same(x: Tensor, kernels: Tensor, bias: Tensor) -> Tensor:
    """3x3 convolution, stride 1, zero padding 1; (N,)H,W,Cin -> (N,)H,W,Cout."""
    x, kernels, bias = as_tensor(x), as_tensor(kernels), as_tensor(bias)
    squeeze = x.ndim == 3
    data = x.data[None] if squeeze else x.data
    if data.ndim != 4:
        raise ShapeError(f"conv2d_same expects H×W×C input, got {x.shape}")
    n, h, w, cin = data.shape
    if kernels.shape[:3] != (3, 3, cin) or kernels.ndim != 4:
        raise ShapeError(f"kernel shape {kernels.shape} incompatible with {cin} input channels")
    cout = kernels.shape[3]
    if bias.shape != (cout,):
        raise ShapeError(f"bias shape {bias.shape} != ({cout},)")

    padded = np.pad(data, ((0, 0), (1, 1), (1, 1), (0, 0)))
    offsets = [divmod(k, 3) for k in range(9)]
    # single-channel input: one im2col matmul beats nine rank-1 updates
    if cin == 1:
        cols = np.empty((n, h, w, 9), dtype=DTYPE)
        for k, (dy, dx) in enumerate(offsets):
            cols[..., k] = padded[:, dy:dy + h, dx:dx + w, 0]
        cols = cols.reshape(n * h * w, 9)
        val = cols @ kernels.data.reshape(9, cout)
    else:
        cols = None
        val = np.zeros((n * h * w, cout), dtype=DTYPE)
        for dy, dx in offsets:
            val += padded[:, dy:dy + h, dx:dx + w, :].reshape(-1, cin) @ kernels.data[dy, dx]
    val = (val + bias.data).reshape(n, h, w, cout)
    out = _node(val[0] if squeeze else val, (x, kernels, bias), "conv3x3_same")
    if out.requires_grad:
        def _bw():
            g = np.ascontiguousarray(out.grad).reshape(n * h * w, cout)
            if kernels.requires_grad:
                if cols is not None:
                    kernels._accum((cols.T @ g).reshape(kernels.shape))
                else:
                    gk = np.empty(kernels.shape, dtype=DTYPE)
                    for dy, dx in offsets:
                        gk[dy, dx] = padded[:, dy:dy + h, dx:dx + w, :].reshape(-1, cin).T @ g
                    kernels._accum(gk)
            if bias.requires_grad:
                bias._accum(g.sum(axis=0))
            if x.requires_grad:
                gpad = np.zeros_like(padded)
                for dy, dx in offsets:
                    gpad[:, dy:dy + h, dx:dx + w, :] += (g @ kernels.data[dy, dx].T).reshape(n, h, w, cin)
                gx = gpad[:, 1:-1, 1:-1, :]
                x._accum(gx[0] if squeeze else gx)
        out._backward = _bw
    return out


def maxpool(x: Tensor, size: tuple[int, int] = (2, 2)) -> Tensor:
    """Disjoint ph×pw max pooling; gradient goes to the first maximum in row-major order."""
    x = as_tensor(x)
    ph, pw = size
    squeeze = x.ndim == 3
    data = x.data[None] if squeeze else x.data
    if data.ndim != 4:
        raise ShapeError(f"maxpool expects H×W×C input, got {x.shape}")
    n, h, w, c = data.shape
    if h % ph or w % pw:
        raise ShapeError(f"maxpool {ph}×{pw} does not tile {h}×{w}")
    offsets = [(dy, dx) for dy in range(ph) for dx in range(pw)]
    windows = [data[:, dy::ph, dx::pw, :] for dy, dx in offsets]
    val = windows[0]
    for win in windows[1:]:
        val = np.maximum(val, win)
    out = _node(val[0] if squeeze else val, (x,), f"maxpool{ph}x{pw}")
    if out.requires_grad:
        def _bw():
            g = out.grad[None] if squeeze else out.grad
            gx = np.zeros_like(data)
            taken = np.zeros(val.shape, dtype=bool)
            for (dy, dx), win in zip(offsets, windows):
                hit = (win == val) & ~taken
                taken |= hit
                gx[:, dy::ph, dx::pw, :] = g * hit
            x._accum(gx[0] if squeeze else gx)
        out._backward = _bw
    return out


def maxpool2x2(x: Tensor) -> Tensor:
    return maxpool(x, (2, 2))


# ---------------------------------------------------------------------------
# dense maps


def dense(x: Tensor, weights: Tensor, bias: Tensor) -> Tensor:
    x, weights, bias = as_tensor(x), as_tensor(weights), as_tensor(bias)
    if weights.ndim != 2 or x.shape[-1] != weights.shape[0] or bias.shape != (weights.shape[1],):
        raise ShapeError(f"dense: input {x.shape}, weights {weights.shape}, bias {bias.shape}")
    return x @ weights + bias


def time_distributed_dense(x: Tensor, weights: Tensor, bias: Tensor) -> Tensor:
    """The same dense map applied to every row of a (N,)T×D sequence."""
    x = as_tensor(x)
    if x.ndim < 2:
        raise ShapeError(f"time_distributed_dense expects a T×D sequence, got {x.shape}")
    return dense(x, weights, bias)


# ---------------------------------------------------------------------------
# recurrent block

GATES = {"gru": 3, "lstm": 4}


def init_recurrent(rng: np.random.Generator, n_in: int, hidden: int, cell: str = "gru") -> dict:
    k = GATES[cell]
    params = {}
    for direction in ("fwd", "bwd"):
        limit_w = np.sqrt(6.0 / (n_in + k * hidden))
        u = np.linalg.qr(rng.standard_normal((k * hidden, hidden)))[0].T
        b = np.zeros(k * hidden)
        if cell == "lstm":
            b[hidden:2 * hidden] = 1.0
        params[direction] = {
            "W": rng.uniform(-limit_w, limit_w, (n_in, k * hidden)),
            "U": u,
            "b": b,
        }
    return params


def _gru_run(xproj: Tensor, u: Tensor, hidden: int, order: Sequence[int]) -> list[Tensor]:
    n = xproj.shape[0]
    h = Tensor(np.zeros((n, hidden)))
    u_zr = u[:, : 2 * hidden]
    u_n = u[:, 2 * hidden:]
    states = {}
    for t in order:
        xt = xproj[:, t, :]
        zr = (xt[:, : 2 * hidden] + h @ u_zr).sigmoid()
        z = zr[:, :hidden]
        r = zr[:, hidden:]
        cand = (xt[:, 2 * hidden:] + (r * h) @ u_n).tanh()
        h = cand + z * (h - cand)
        states[t] = h
    return [states[t] for t in range(len(order))]


def _lstm_run(xproj: Tensor, u: Tensor, hidden: int, order: Sequence[int]) -> list[Tensor]:
    n = xproj.shape[0]
    h = Tensor(np.zeros((n, hidden)))
    c = Tensor(np.zeros((n, hidden)))
    states = {}
    for t in order:
        gates = xproj[:, t, :] + h @ u
        ifo = gates[:, : 3 * hidden].sigmoid()
        g = gates[:, 3 * hidden:].tanh()
        c = ifo[:, hidden:2 * hidden] * c + ifo[:, :hidden] * g
        h = ifo[:, 2 * hidden:] * c.tanh()
        states[t] = h
    return [states[t] for t in range(len(order))]


def bidirectional_recurrent(x: Tensor, params: dict, cell: str = "gru") -> Tensor:
    """Run a gated recurrent cell both ways over (N,)T×F and concatenate per step.

    Output is (N,)T×2H: the first H columns come from the left-to-right pass,
    the last H from the right-to-left pass, both indexed by input position.
    """
    x = as_tensor(x)
    squeeze = x.ndim == 2
    if squeeze:
        x = x.reshape(1, *x.shape)
    if x.ndim != 3:
        raise ShapeError(f"bidirectional_recurrent expects T×F input, got {x.shape}")
    steps = x.shape[1]
    if steps == 0:
        raise ShapeError("bidirectional_recurrent got an empty sequence")
    run = {"gru": _gru_run, "lstm": _lstm_run}[cell]
    halves = []
    for direction, order in (("fwd", range(steps)), ("bwd", range(steps - 1, -1, -1))):
        p = params[direction]
        w, u, b = as_tensor(p["W"]), as_tensor(p["U"]), as_tensor(p["b"])
        hidden = u.shape[0]
        if w.shape != (x.shape[2], GATES[cell] * hidden) or u.shape != (hidden, GATES[cell] * hidden):
            raise ShapeError(f"{direction} recurrent weights {w.shape}/{u.shape} do not fit input {x.shape}")
        xproj = x @ w + b
        halves.append(stack(run(xproj, u, hidden, list(order)), axis=1))
    out = concat(halves, axis=-1)
    return out[0] if squeeze else out


# ---------------------------------------------------------------------------
# regularization and losses


def dropout(x: Tensor, rate: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    if not 0.0 <= rate < 1.0:
        raise ValueError("dropout rate must lie in [0, 1)")
    x = as_tensor(x)
    if not training or rate == 0.0:
        return x
    keep = rng.random(x.shape) >= rate
    return x * (keep / (1.0 - rate))


def bce_loss(prediction: Tensor, label) -> Tensor:
    """Mean binary cross-entropy with predictions clamped to [1e-7, 1 - 1e-7]."""
    prediction = as_tensor(prediction)
    y = np.broadcast_to(np.asarray(label, dtype=DTYPE), prediction.shape)
    p = np.clip(prediction.data, BCE_EPS, 1.0 - BCE_EPS)
    losses = -(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))
    out = _node(np.asarray(losses.mean()), (prediction,), "bce")
    if out.requires_grad:
        inside = (prediction.data >= BCE_EPS) & (prediction.data <= 1.0 - BCE_EPS)

        def _bw():
            g = (p - y) / (p * (1.0 - p)) * inside / max(prediction.size, 1)
            prediction._accum(out.grad * g)
        out._backward = _bw
    return out


def ctc_feasible(n_steps: int, target: Sequence[int]) -> bool:
    repeats = sum(1 for a, b in zip(target, target[1:]) if a == b)
    return n_steps >= len(target) + repeats


def _ctc_single(log_probs: np.ndarray, target: Sequence[int], blank: int) -> tuple[float, np.ndarray]:
    """Negative log-likelihood and occupancy of one sequence (log-space forward-backward)."""
    steps = log_probs.shape[0]
    ext = np.full(2 * len(target) + 1, blank, dtype=np.int64)
    ext[1::2] = target
    s_len = len(ext)
    skip = np.zeros(s_len, dtype=bool)
    skip[2:] = (ext[2:] != blank) & (ext[2:] != ext[:-2])
    emit = log_probs[:, ext]

    alpha = np.full((steps, s_len), -np.inf)
    alpha[0, 0] = emit[0, 0]
    if s_len > 1:
        alpha[0, 1] = emit[0, 1]
    for t in range(1, steps):
        prev = alpha[t - 1]
        acc = prev.copy()
        acc[1:] = np.logaddexp(acc[1:], prev[:-1])
        acc[2:] = np.where(skip[2:], np.logaddexp(acc[2:], prev[:-2]), acc[2:])
        alpha[t] = acc + emit[t]

    beta = np.full((steps, s_len), -np.inf)
    beta[-1, -1] = 0.0
    if s_len > 1:
        beta[-1, -2] = 0.0
    for t in range(steps - 2, -1, -1):
        nxt = beta[t + 1] + emit[t + 1]
        acc = nxt.copy()
        acc[:-1] = np.logaddexp(acc[:-1], nxt[1:])
        acc[:-2] = np.where(skip[2:], np.logaddexp(acc[:-2], nxt[2:]), acc[:-2])
        beta[t] = acc

    log_total = alpha[-1, -1] if s_len == 1 else np.logaddexp(alpha[-1, -1], alpha[-1, -2])
    occupancy_ext = np.exp(alpha + beta - log_total)
    occupancy = np.zeros_like(log_probs)
    np.add.at(occupancy.T, ext, occupancy_ext.T)
    return -float(log_total), occupancy


def ctc_loss(logits: Tensor, targets, blank: int | None = None) -> Tensor:
    """CTC negative log-likelihood over all blank-augmented alignments.

    ``logits`` is (N,)T×(A+1) of unnormalized scores; class ``blank``
    (default: the last one) is the blank. ``targets`` is one label sequence,
    or one per batch row. Returns one loss per sequence.
    """
    logits = as_tensor(logits)
    squeeze = logits.ndim == 2
    data = logits.data[None] if squeeze else logits.data
    seqs = [list(targets)] if squeeze else [list(t) for t in targets]
    if len(seqs) != data.shape[0]:
        raise ShapeError(f"{len(seqs)} targets for a batch of {data.shape[0]}")
    n_classes = data.shape[-1]
    blank = n_classes - 1 if blank is None else blank
    steps = data.shape[1]
    shifted = data - data.max(axis=-1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))

    losses = np.empty(len(seqs))
    grads = np.empty_like(data)
    for i, seq in enumerate(seqs):
        if any(c == blank or not 0 <= c < n_classes for c in seq):
            raise ValueError(f"target {seq} contains blank or out-of-range classes")
        if not ctc_feasible(steps, seq):
            raise CTCFeasibilityError(f"target of length {len(seq)} does not fit {steps} time steps")
        losses[i], occupancy = _ctc_single(log_probs[i], seq, blank)
        grads[i] = np.exp(log_probs[i]) - occupancy

    out = _node(losses[0] if squeeze else losses, (logits,), "ctc")
    if out.requires_grad:
        def _bw():
            g = np.reshape(out.grad, (-1, 1, 1)) * grads
            logits._accum(g[0] if squeeze else g)
        out._backward = _bw
    return out
