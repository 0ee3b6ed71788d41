"""Dense float64 tensors with reverse-mode automatic differentiation.

Covers exactly the operations the behavior models need (temporal 1-D
convolution, affine layers, softmax, pooling/reduction kit, stable binary
cross-entropy) plus the Adam optimizer. Arrays are row-major numpy float64
buffers; every op validates that its output is finite and raises
``NumericFault`` otherwise instead of propagating NaN/Inf.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

class NumericFault(ArithmeticError):
    """An operation produced NaN/Inf; the graph refuses to propagate it."""


def _ensure_finite(data: np.ndarray, op: str) -> None:
    # One-pass screen: NaN/Inf poison the sum. Only on suspicion do the
    # (allocating) elementwise check to confirm before raising.
    if not np.isfinite(data.sum()):
        if not np.all(np.isfinite(data)):
            raise NumericFault(f"{op} produced non-finite values")


class Tensor:
    """A node in the computation graph: float64 ndarray + backward closure."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, parents=(), backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self._parents = tuple(parents)
        self._backward = backward

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64)
            if self.grad.shape != self.data.shape:
                self.grad = np.broadcast_to(self.grad, self.data.shape).copy()
        else:
            self.grad += g

    def backward(self, seed: np.ndarray | None = None) -> None:
        """Reverse-topological sweep accumulating grads into leaf tensors."""
        if seed is None:
            seed = np.ones_like(self.data)
        self._accumulate(np.asarray(seed, dtype=np.float64))

        # Iterative topo sort; graphs get deep (per-window model ~ dozens of
        # nodes but recursion limits are not worth risking).
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __repr__(self) -> str:  # pragma: no cover
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def tensor(data) -> Tensor:
    """A constant (non-learnable) tensor."""
    return Tensor(data)


def parameter(data) -> Tensor:
    """A learnable tensor (participates in backward)."""
    return Tensor(data, requires_grad=True)


def _make(data: np.ndarray, parents, backward, op: str) -> Tensor:
    _ensure_finite(data, op)
    out = Tensor(data, parents=parents)
    if out.requires_grad:
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum gradient over axes that broadcasting added or expanded."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    squeeze = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if squeeze:
        g = g.sum(axis=squeeze, keepdims=True)
    return g


def add(a: Tensor, b: Tensor) -> Tensor:
    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.data.shape))

    return _make(a.data + b.data, (a, b), backward, "add")


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product with numpy broadcasting."""

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.data.shape))

    return _make(a.data * b.data, (a, b), backward, "mul")


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)

    def backward(g):
        x._accumulate(g.reshape(x.data.shape))

    return _make(x.data.reshape(shape), (x,), backward, "reshape")


def flatten(x: Tensor) -> Tensor:
    """Collapse to a 1-D vector."""
    return reshape(x, (x.data.size,))


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def backward(g):
        x._accumulate(np.ascontiguousarray(g.transpose(inv)))

    # materialize: downstream elementwise/reduction ops on strided views are slow
    return _make(np.ascontiguousarray(x.data.transpose(axes)), (x,), backward, "transpose")


def stack(tensors, axis: int = 0) -> Tensor:
    """Stack same-shape tensors along a new leading axis."""
    if axis != 0:
        raise ValueError("stack supports axis=0 only")
    ts = list(tensors)

    def backward(g):
        for i, t in enumerate(ts):
            if t.requires_grad:
                t._accumulate(g[i])

    return _make(np.stack([t.data for t in ts], axis=0), ts, backward, "stack")


def concat(tensors, axis: int = 0) -> Tensor:
    """Concatenate tensors along the leading axis."""
    if axis != 0:
        raise ValueError("concat supports axis=0 only")
    ts = list(tensors)
    if len(ts) == 1:
        return ts[0]

    def backward(g):
        offset = 0
        for t in ts:
            n = t.data.shape[0]
            if t.requires_grad:
                t._accumulate(g[offset : offset + n])
            offset += n

    return _make(np.concatenate([t.data for t in ts], axis=0), ts, backward, "concat")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def backward(g):
        x._accumulate(g * mask)

    return _make(np.maximum(x.data, 0.0), (x,), backward, "relu")


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # exp(-softplus(-z)) is stable on both tails
    return np.exp(-np.logaddexp(0.0, -z))


def sigmoid(x: Tensor) -> Tensor:
    y = _sigmoid(x.data)

    def backward(g):
        x._accumulate(g * y * (1.0 - y))

    return _make(y, (x,), backward, "sigmoid")


def softmax(x: Tensor, axis: int) -> Tensor:
    """Max-stabilized softmax along ``axis``; output sums to 1 there."""
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        x._accumulate((g - dot) * y)

    return _make(y, (x,), backward, "softmax")


def mean_over_axis(x: Tensor, axis: int) -> Tensor:
    axis = axis % x.ndim
    n = x.data.shape[axis]

    def backward(g):
        x._accumulate(np.broadcast_to(np.expand_dims(g / n, axis), x.data.shape))

    return _make(x.data.mean(axis=axis), (x,), backward, "mean_over_axis")


def weighted_sum_over_axis(x: Tensor, weights: Tensor, axis: int) -> Tensor:
    """Contract ``axis`` of ``x`` with a weight vector.

    ``weights`` is either 1-D of length ``x.shape[axis]`` or shaped like
    ``x.shape[:axis+1]`` (one weight vector per leading index, e.g. a per-person
    over-time attention matrix).
    """
    axis = axis % x.ndim
    wd = weights.data
    if wd.ndim == 1:
        if wd.shape[0] != x.data.shape[axis]:
            raise ValueError(f"weights length {wd.shape[0]} != axis size {x.data.shape[axis]}")
        w_exp = wd.reshape((1,) * axis + (-1,) + (1,) * (x.ndim - axis - 1))
    elif wd.shape == x.data.shape[: axis + 1]:
        w_exp = wd.reshape(wd.shape + (1,) * (x.ndim - axis - 1))
    else:
        raise ValueError(f"weights shape {wd.shape} incompatible with input {x.data.shape} at axis {axis}")

    out_data = (x.data * w_exp).sum(axis=axis)

    def backward(g):
        g_exp = np.expand_dims(g, axis)
        if x.requires_grad:
            x._accumulate(np.broadcast_to(g_exp * w_exp, x.data.shape).copy())
        if weights.requires_grad:
            gw = (x.data * g_exp).sum(axis=tuple(range(axis + 1, x.ndim)))
            if wd.ndim == 1 and axis > 0:
                gw = gw.sum(axis=tuple(range(axis)))
            weights._accumulate(gw)

    return _make(out_data, (x, weights), backward, "weighted_sum_over_axis")


def dense(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Affine map over the last axis: ``y = x @ w + b``."""
    if x.data.shape[-1] != w.data.shape[0]:
        raise ValueError(f"dense: input width {x.data.shape[-1]} != weight rows {w.data.shape[0]}")
    if b.data.shape != (w.data.shape[1],):
        raise ValueError(f"dense: bias shape {b.data.shape} != ({w.data.shape[1]},)")

    def backward(g):
        if x.requires_grad:
            x._accumulate(g @ w.data.T)
        if w.requires_grad:
            xf = x.data.reshape(-1, x.data.shape[-1])
            gf = g.reshape(-1, g.shape[-1])
            w._accumulate(xf.T @ gf)
        if b.requires_grad:
            b._accumulate(g.reshape(-1, g.shape[-1]).sum(axis=0))

    return _make(x.data @ w.data + b.data, (x, w, b), backward, "dense")


def _pad_time(x2: np.ndarray, pad: int) -> np.ndarray:
    """Zero-pad the middle (time) axis of a [M, T, C] array."""
    m, t, c = x2.shape
    xp = np.empty((m, t + 2 * pad, c))
    xp[:, :pad, :] = 0.0
    xp[:, pad + t :, :] = 0.0
    xp[:, pad : pad + t, :] = x2
    return xp


def _shift_seg(xp: np.ndarray, i: int, t: int) -> np.ndarray:
    """Contiguous [M*T, C] view of window offset ``i`` of a padded buffer."""
    m, _, c = xp.shape
    return np.ascontiguousarray(xp[:, i : i + t, :]).reshape(m * t, c)


def _conv_raw(x: np.ndarray, w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Same-padded correlation along time: x [..., T, C1], w [k, C1, C2].

    Implemented as k shifted GEMMs over one padded copy; returns (output,
    padded buffer) so backward can reuse the padding.
    """
    k, c1, c2 = w.shape
    lead, t = x.shape[:-2], x.shape[-2]
    xp = _pad_time(x.reshape(-1, t, c1), k // 2)
    out = _shift_seg(xp, 0, t) @ w[0]
    for i in range(1, k):
        out += _shift_seg(xp, i, t) @ w[i]
    return out.reshape(lead + (t, c2)), xp


def temporal_conv1d(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """1-D convolution along the time axis with zero same-padding.

    ``x`` is [..., T, C_in], ``w`` is [k, C_in, C_out] with odd k, ``b`` is
    [C_out]; output is [..., T, C_out]. Leading axes are batched.
    """
    k, cin, cout = w.data.shape
    if k % 2 == 0:
        raise ValueError(f"temporal_conv1d: kernel size {k} must be odd for same-padding")
    if x.data.shape[-1] != cin:
        raise ValueError(f"temporal_conv1d: input channels {x.data.shape[-1]} != weight C_in {cin}")
    if b.data.shape != (cout,):
        raise ValueError(f"temporal_conv1d: bias shape {b.data.shape} != ({cout},)")

    t = x.data.shape[-2]
    out, xp = _conv_raw(x.data, w.data)
    saved_xp = xp if w.requires_grad else None

    def backward(g):
        if x.requires_grad:
            # full correlation = same-padded conv of g with the flipped,
            # channel-transposed kernel
            w_flip = np.flip(w.data, axis=0).transpose(0, 2, 1).copy()
            x._accumulate(_conv_raw(g, w_flip)[0])
        if w.requires_grad:
            g2 = g.reshape(-1, cout)
            gw = np.empty((k, cin, cout))
            for i in range(k):
                gw[i] = _shift_seg(saved_xp, i, t).T @ g2
            w._accumulate(gw)
        if b.requires_grad:
            b._accumulate(g.reshape(-1, cout).sum(axis=0))

    return _make(out + b.data, (x, w, b), backward, "temporal_conv1d")


def _softplus(z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))


def bce_loss(logits: Tensor, targets, positive_weight: float = 1.0) -> Tensor:
    """Mean binary cross-entropy in the numerically stable logit form.

    ``targets`` is a 0/1 array; positives are weighted by ``positive_weight``.
    """
    y = np.asarray(getattr(targets, "data", targets), dtype=np.float64)
    if y.shape != logits.data.shape:
        raise ValueError(f"bce_loss: targets shape {y.shape} != logits shape {logits.data.shape}")
    z = logits.data
    per = positive_weight * y * _softplus(-z) + (1.0 - y) * _softplus(z)
    n = max(per.size, 1)

    def backward(g):
        s = _sigmoid(z)
        dz = positive_weight * y * (s - 1.0) + (1.0 - y) * s
        logits._accumulate(g * dz / n)

    return _make(np.asarray(per.sum() / n), (logits,), backward, "bce_loss")


@dataclass
class AdamState:
    """Per-parameter Adam moment buffers and hyperparameters."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray], state: AdamState):
    """One bias-corrected Adam update, in place; returns (params, state)."""
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.data.shape:
            raise ValueError(f"adam_step: grad shape {g.shape} != param shape {p.data.shape} for {name}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        m_hat = m / bc1
        v_hat = v / bc2
        p.data -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
        _ensure_finite(p.data, "adam_step")
    return params, state
