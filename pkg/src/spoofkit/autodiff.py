"""Minimal reverse-mode automatic differentiation over numpy arrays.

Tensors record their producing operation as a closure; backward() runs a
topological sweep and accumulates gradients into every tensor that
requires them.  Subgraphs that cannot reach a parameter are pruned at
construction, so evaluation-mode forwards carry no tape.

Conventions: channel axis is 1 for 4-D activations [B, C, H, W]; matmul is
2-D; max-style ops route tied gradients to the first operand.
"""

from __future__ import annotations

import numpy as np


class Tensor:
    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward_fn = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={'set' if self.grad is not None else 'none'})"

    # operator sugar; scalars are treated as constants
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, scale(other, -1.0) if isinstance(other, Tensor) else -other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _result(data, parents, backward_fn) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward_fn = backward_fn
    return out


def _accum(t: Tensor, g: np.ndarray) -> None:
    if t.requires_grad:
        t.grad = g if t.grad is None else t.grad + g


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum gradient over axes expanded by broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def backward(loss: Tensor) -> None:
    """Populate .grad for all reachable requires_grad tensors.

    The loss must be a scalar produced by recorded operations.
    """
    if loss.data.size != 1:
        raise ValueError("backward expects a scalar loss")
    if not loss._parents:
        raise ValueError("backward called before any forward computation was recorded")
    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))
    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward_fn is not None:
            node._backward_fn(node.grad)


def zero_grads(tensors) -> None:
    for t in tensors:
        t.grad = None


# ---------------------------------------------------------------------------
# elementwise and shape ops
# ---------------------------------------------------------------------------

def add(a: Tensor, b):
    if not isinstance(b, Tensor):
        data = a.data + b

        def bw(g):
            _accum(a, _unbroadcast(g, a.data.shape))

        return _result(data, (a,), bw)
    data = a.data + b.data

    def bw(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    return _result(data, (a, b), bw)


def scale(a: Tensor, s: float):
    def bw(g):
        _accum(a, g * s)

    return _result(a.data * s, (a,), bw)


def mul(a: Tensor, b):
    if not isinstance(b, Tensor):
        return scale(a, float(b))
    data = a.data * b.data

    def bw(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _result(data, (a, b), bw)


def div(a: Tensor, b: Tensor):
    data = a.data / b.data

    def bw(g):
        _accum(a, _unbroadcast(g / b.data, a.data.shape))
        _accum(b, _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return _result(data, (a, b), bw)


def matmul(a: Tensor, b: Tensor):
    data = a.data @ b.data

    def bw(g):
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    return _result(data, (a, b), bw)


def reshape(a: Tensor, shape):
    old = a.data.shape

    def bw(g):
        _accum(a, g.reshape(old))

    return _result(a.data.reshape(shape), (a,), bw)


def transpose(a: Tensor, axes):
    inverse = np.argsort(axes)

    def bw(g):
        _accum(a, g.transpose(inverse))

    return _result(a.data.transpose(axes), (a,), bw)


def concat(tensors, axis: int):
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            _accum(t, g[tuple(sl)])

    return _result(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), bw)


def narrow(a: Tensor, axis: int, start: int, length: int):
    sl = [slice(None)] * a.data.ndim
    sl[axis] = slice(start, start + length)
    sl = tuple(sl)

    def bw(g):
        full = np.zeros_like(a.data)
        full[sl] = g
        _accum(a, full)

    return _result(a.data[sl], (a,), bw)


def stack_steps(tensors, axis: int = 1):
    """Stack equal-shaped tensors along a new axis."""
    expanded = [reshape(t, t.data.shape[:axis] + (1,) + t.data.shape[axis:]) for t in tensors]
    return concat(expanded, axis=axis)


def sigmoid(a: Tensor):
    # tanh form saturates cleanly instead of overflowing exp
    s = 0.5 * (1.0 + np.tanh(0.5 * a.data))

    def bw(g):
        _accum(a, g * s * (1.0 - s))

    return _result(s, (a,), bw)


def tanh(a: Tensor):
    t = np.tanh(a.data)

    def bw(g):
        _accum(a, g * (1.0 - t * t))

    return _result(t, (a,), bw)


def exp(a: Tensor):
    e = np.exp(a.data)

    def bw(g):
        _accum(a, g * e)

    return _result(e, (a,), bw)


def log(a: Tensor):
    def bw(g):
        _accum(a, g / a.data)

    return _result(np.log(a.data), (a,), bw)


def sqrt(a: Tensor):
    r = np.sqrt(a.data)

    def bw(g):
        _accum(a, g * 0.5 / r)

    return _result(r, (a,), bw)


def sum_op(a: Tensor, axis=None, keepdims: bool = False):
    def bw(g):
        if axis is None:
            _accum(a, np.broadcast_to(g, a.data.shape).copy())
            return
        if not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, a.data.shape).copy())

    return _result(a.data.sum(axis=axis, keepdims=keepdims), (a,), bw)


def mean_op(a: Tensor, axis=None, keepdims: bool = False):
    if axis is None:
        count = a.data.size
    else:
        count = a.data.shape[axis]
    return scale(sum_op(a, axis=axis, keepdims=keepdims), 1.0 / count)


def maximum(a: Tensor, b: Tensor):
    """Elementwise max; ties route the gradient to the first operand."""
    take_a = a.data >= b.data
    data = np.where(take_a, a.data, b.data)

    def bw(g):
        _accum(a, np.where(take_a, g, 0.0))
        _accum(b, np.where(take_a, 0.0, g))

    return _result(data, (a, b), bw)


def mfm(a: Tensor):
    """Max-feature-map: halve the channel axis by pairwise max.

    out[:, c] = max(x[:, c], x[:, c + C/2]); requires an even channel count.
    """
    c = a.data.shape[1]
    if c % 2:
        raise ValueError(f"MFM needs an even channel count, got {c}")
    half = c // 2
    first = a.data[:, :half]
    second = a.data[:, half:]
    take_first = first >= second
    data = np.where(take_first, first, second)

    def bw(g):
        full = np.zeros_like(a.data)
        full[:, :half] = np.where(take_first, g, 0.0)
        full[:, half:] = np.where(take_first, 0.0, g)
        _accum(a, full)

    return _result(data, (a,), bw)


def pick(a: Tensor, index: np.ndarray):
    """Select one column per row: out[i] = a[i, index[i]]."""
    idx = np.asarray(index).reshape(-1, 1)
    data = np.take_along_axis(a.data, idx, axis=1)[:, 0]

    def bw(g):
        full = np.zeros_like(a.data)
        np.put_along_axis(full, idx, g.reshape(-1, 1), axis=1)
        _accum(a, full)

    return _result(data, (a,), bw)


def logsumexp(a: Tensor, axis: int = 1):
    m = a.data.max(axis=axis, keepdims=True)
    shifted = np.exp(a.data - m)
    total = shifted.sum(axis=axis, keepdims=True)
    data = (np.log(total) + m).squeeze(axis)

    def bw(g):
        soft = shifted / total
        _accum(a, np.expand_dims(g, axis) * soft)

    return _result(data, (a,), bw)


def dropout(a: Tensor, rate: float, rng: np.random.Generator | None, train: bool):
    """Inverted dropout; identity when not training or rate is 0."""
    if not train or rate == 0.0:
        return a
    if rng is None:
        raise ValueError("dropout in train mode needs an rng")
    mask = (rng.random(a.data.shape) >= rate) / (1.0 - rate)
    mask = mask.astype(a.data.dtype)

    def bw(g):
        _accum(a, g * mask)

    return _result(a.data * mask, (a,), bw)


# ---------------------------------------------------------------------------
# convolution / pooling / batch norm
# ---------------------------------------------------------------------------

def _im2col(xp: np.ndarray, kh: int, kw: int) -> np.ndarray:
    """[B,C,Hp,Wp] -> [B*OH*OW, C*kh*kw] patch matrix (stride 1)."""
    v = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    b, c, oh, ow = v.shape[:4]
    return v.transpose(0, 2, 3, 1, 4, 5).reshape(b * oh * ow, c * kh * kw)


def conv2d(x: Tensor, w: Tensor, b: Tensor, padding: int):
    """Stride-1 2-D convolution (cross-correlation), x [B,C,H,W], w [O,C,kh,kw]."""
    bs, c, h, wd = x.data.shape
    o, c2, kh, kw = w.data.shape
    if c != c2:
        raise ValueError(f"conv2d channel mismatch: input {c}, kernel {c2}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    oh = xp.shape[2] - kh + 1
    ow = xp.shape[3] - kw + 1
    cols = _im2col(xp, kh, kw)
    w2 = w.data.reshape(o, -1)
    out = (cols @ w2.T + b.data).reshape(bs, oh, ow, o).transpose(0, 3, 1, 2)

    def bw(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, o)
        if w.requires_grad:
            # patches are recomputed here rather than cached across the pass
            _accum(w, (g2.T @ _im2col(xp, kh, kw)).reshape(w.data.shape))
        if b.requires_grad:
            _accum(b, g2.sum(axis=0))
        if x.requires_grad:
            dcols = (g2 @ w2).reshape(bs, oh, ow, c, kh, kw)
            dxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, :, i : i + oh, j : j + ow] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            if padding:
                dxp = dxp[:, :, padding : padding + h, padding : padding + wd]
            _accum(x, dxp)

    return _result(out, (x, w, b), bw)


def maxpool2d(x: Tensor):
    """2x2 max pooling with stride 2, floor mode (odd trailing rows dropped)."""
    bs, c, h, w = x.data.shape
    h2, w2 = h // 2, w // 2
    blocks = (
        x.data[:, :, : 2 * h2, : 2 * w2]
        .reshape(bs, c, h2, 2, w2, 2)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(bs, c, h2, w2, 4)
    )
    idx = blocks.argmax(axis=4)
    out = np.take_along_axis(blocks, idx[..., None], axis=4)[..., 0]

    def bw(g):
        dblocks = np.zeros_like(blocks)
        np.put_along_axis(dblocks, idx[..., None], g[..., None], axis=4)
        dx = np.zeros_like(x.data)
        dx[:, :, : 2 * h2, : 2 * w2] = (
            dblocks.reshape(bs, c, h2, w2, 2, 2)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(bs, c, 2 * h2, 2 * w2)
        )
        _accum(x, dx)

    return _result(out, (x,), bw)


def batchnorm2d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    train: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
):
    """Per-channel batch normalization over (B, H, W).

    In train mode batch statistics normalize the activations and the
    running buffers are updated in place (biased variance); in eval mode
    the op is the deterministic affine map through the running buffers.
    """
    gb = (1, -1, 1, 1)
    if train:
        mu = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        running_mean += momentum * (mu - running_mean)
        running_var += momentum * (var - running_var)
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = (x.data - mu.reshape(gb)) * inv_std.reshape(gb)
        out = gamma.data.reshape(gb) * xhat + beta.data.reshape(gb)
        n = x.data.shape[0] * x.data.shape[2] * x.data.shape[3]

        def bw(g):
            if gamma.requires_grad:
                _accum(gamma, (g * xhat).sum(axis=(0, 2, 3)))
            if beta.requires_grad:
                _accum(beta, g.sum(axis=(0, 2, 3)))
            if x.requires_grad:
                dxhat = g * gamma.data.reshape(gb)
                sum_d = dxhat.sum(axis=(0, 2, 3), keepdims=True)
                sum_dx = (dxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
                dx = (inv_std.reshape(gb) / n) * (n * dxhat - sum_d - xhat * sum_dx)
                _accum(x, dx)

        return _result(out, (x, gamma, beta), bw)

    inv_std = 1.0 / np.sqrt(running_var + eps)
    xhat = (x.data - running_mean.reshape(gb)) * inv_std.reshape(gb)
    out = gamma.data.reshape(gb) * xhat + beta.data.reshape(gb)

    def bw(g):
        if gamma.requires_grad:
            _accum(gamma, (g * xhat).sum(axis=(0, 2, 3)))
        if beta.requires_grad:
            _accum(beta, g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            _accum(x, g * (gamma.data * inv_std).reshape(gb))

    return _result(out, (x, gamma, beta), bw)
