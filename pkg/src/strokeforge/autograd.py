"""Reverse-mode automatic differentiation on NumPy arrays.

Define-by-run engine: every operation builds a ``Tensor`` node holding its
value, its parent nodes, and a closure that maps the node's gradient to
parent gradients.  ``backward`` topologically sorts the graph from a scalar
loss and visits each node exactly once, accumulating ``.grad`` on every
tensor created with ``requires_grad=True``.

Values are float32 by default (float64 is accepted so test oracles can run
finite differences at higher precision).  Any non-finite value produced by
a forward op raises ``NonFiniteError`` immediately.
"""

import numpy as np

from .kernels import col2im, im2col


class AutogradError(Exception):
    pass


class ShapeError(AutogradError, ValueError):
    pass


class NonFiniteError(AutogradError, FloatingPointError):
    pass


def _check_finite(arr, op):
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"non-finite value produced by {op}")


class Tensor:
    """Graph node: an N-d float array plus reverse-mode bookkeeping."""

    __slots__ = ("data", "grad", "requires_grad", "parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, parents=(), backward=None, name=None):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.parents = tuple(parents)
        self._backward = backward
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    def backward(self):
        backward(self)

    def __repr__(self):
        tag = self.name or "tensor"
        return f"Tensor({tag}, shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def tensor(data, requires_grad=False):
    return Tensor(data, requires_grad=requires_grad)


def parameter(data, name=None):
    return Tensor(np.asarray(data, dtype=np.float32), requires_grad=True, name=name)


def _lift(x):
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (inverse of NumPy broadcasting)."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _make(data, parents, backward, op):
    _check_finite(data, op)
    requires = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=requires, parents=parents, backward=backward if requires else None)


def _accumulate(t, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = g.astype(t.data.dtype, copy=True)
    else:
        t.grad = t.grad + g


# ---------------------------------------------------------------------------
# arithmetic primitives
# ---------------------------------------------------------------------------

def add(a, b):
    a, b = _lift(a), _lift(b)
    out_data = a.data + b.data

    def bwd(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _make(out_data, (a, b), bwd, "add")


def mul(a, b):
    a, b = _lift(a), _lift(b)
    out_data = a.data * b.data

    def bwd(g):
        _accumulate(a, _unbroadcast(g * b.data, a.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _make(out_data, (a, b), bwd, "mul")


def div(a, b):
    a, b = _lift(a), _lift(b)
    out_data = a.data / b.data

    def bwd(g):
        _accumulate(a, _unbroadcast(g / b.data, a.shape))
        _accumulate(b, _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _make(out_data, (a, b), bwd, "div")


def matmul(a, b):
    a, b = _lift(a), _lift(b)
    if a.shape[-1] != b.shape[0] or b.ndim != 2:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    out_data = a.data @ b.data

    def bwd(g):
        _accumulate(a, g @ b.data.T)
        if a.ndim == 2:
            _accumulate(b, a.data.T @ g)
        else:
            # batched left operand: contract over all leading axes
            flat_a = a.data.reshape(-1, a.shape[-1])
            flat_g = g.reshape(-1, g.shape[-1])
            _accumulate(b, flat_a.T @ flat_g)

    return _make(out_data, (a, b), bwd, "matmul")


def exp(x):
    x = _lift(x)
    out_data = np.exp(x.data)

    def bwd(g):
        _accumulate(x, g * out_data)

    return _make(out_data, (x,), bwd, "exp")


def log(x):
    x = _lift(x)
    out_data = np.log(x.data)

    def bwd(g):
        _accumulate(x, g / x.data)

    return _make(out_data, (x,), bwd, "log")


def square(x):
    x = _lift(x)

    def bwd(g):
        _accumulate(x, g * 2.0 * x.data)

    return _make(x.data * x.data, (x,), bwd, "square")


def maximum(x, floor):
    """Elementwise max against a constant floor (grad is zero where floored)."""
    x = _lift(x)
    out_data = np.maximum(x.data, floor)
    mask = (x.data > floor).astype(x.data.dtype)

    def bwd(g):
        _accumulate(x, g * mask)

    return _make(out_data, (x,), bwd, "maximum")


def sum_(x, axis=None, keepdims=False):
    x = _lift(x)
    out_data = x.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        g_arr = np.asarray(g)
        if axis is not None and not keepdims:
            g_arr = np.expand_dims(g_arr, axis)
        _accumulate(x, np.broadcast_to(g_arr, x.shape))

    return _make(out_data, (x,), bwd, "sum")


def mean(x, axis=None, keepdims=False):
    x = _lift(x)
    count = x.data.size if axis is None else x.shape[axis]
    return mul(sum_(x, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(x, shape):
    x = _lift(x)

    def bwd(g):
        _accumulate(x, g.reshape(x.shape))

    return _make(x.data.reshape(shape), (x,), bwd, "reshape")


def narrow(x, start, length, axis=-1):
    """Contiguous slice along one axis."""
    x = _lift(x)
    index = [slice(None)] * x.ndim
    index[axis] = slice(start, start + length)
    index = tuple(index)

    def bwd(g):
        full = np.zeros(x.shape, dtype=g.dtype)
        full[index] = g
        _accumulate(x, full)

    return _make(x.data[index], (x,), bwd, "narrow")


def concat(tensors, axis=-1):
    tensors = [_lift(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]

    def bwd(g):
        offset = 0
        for t, size in zip(tensors, sizes):
            index = [slice(None)] * g.ndim
            index[axis] = slice(offset, offset + size)
            _accumulate(t, g[tuple(index)])
            offset += size

    return _make(out_data, tuple(tensors), bwd, "concat")


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------

def relu(x):
    x = _lift(x)
    out_data = np.maximum(x.data, 0)
    mask = (x.data > 0).astype(x.data.dtype)

    def bwd(g):
        _accumulate(x, g * mask)

    return _make(out_data, (x,), bwd, "relu")


def elu(x):
    x = _lift(x)
    neg = np.expm1(np.minimum(x.data, 0))
    out_data = np.where(x.data >= 0, x.data, neg)

    def bwd(g):
        _accumulate(x, g * np.where(x.data >= 0, 1.0, neg + 1.0).astype(g.dtype))

    return _make(out_data, (x,), bwd, "elu")


def tanh(x):
    x = _lift(x)
    out_data = np.tanh(x.data)

    def bwd(g):
        _accumulate(x, g * (1.0 - out_data * out_data))

    return _make(out_data, (x,), bwd, "tanh")


def sigmoid(x):
    x = _lift(x)
    d = x.data
    out_data = np.where(d >= 0, 1.0 / (1.0 + np.exp(-np.abs(d))), np.exp(-np.abs(d)) / (1.0 + np.exp(-np.abs(d))))
    out_data = out_data.astype(d.dtype)

    def bwd(g):
        _accumulate(x, g * out_data * (1.0 - out_data))

    return _make(out_data, (x,), bwd, "sigmoid")


def softmax(x, axis=-1):
    x = _lift(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        dot = (g * out_data).sum(axis=axis, keepdims=True)
        _accumulate(x, out_data * (g - dot))

    return _make(out_data, (x,), bwd, "softmax")


def logsumexp(x, axis=-1):
    """log(sum(exp(x))) along ``axis``, stabilized by a detached max shift."""
    x = _lift(x)
    shift = x.data.max(axis=axis, keepdims=True)
    shifted = add(x, Tensor(-shift))
    out = log(sum_(exp(shifted), axis=axis))
    return add(out, Tensor(np.squeeze(shift, axis=axis)))


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------

def dense(x, weights, bias):
    """Affine map x @ W + b for x [B, I], W [I, O], b [O]."""
    x, weights, bias = _lift(x), _lift(weights), _lift(bias)
    if x.shape[-1] != weights.shape[0]:
        raise ShapeError(f"dense: input {x.shape} incompatible with weights {weights.shape}")
    if bias.shape != (weights.shape[1],):
        raise ShapeError(f"dense: bias {bias.shape} incompatible with weights {weights.shape}")
    return add(matmul(x, weights), bias)


def _same_pad(size, k, stride):
    out = -(-size // stride)
    total = max((out - 1) * stride + k - size, 0)
    return total // 2, total - total // 2


def conv2d(x, kernels, stride=1):
    """2-D convolution with "same" zero padding.

    x [B, C, H, W], kernels [K, C, kh, kw], stride in {1, 2}.
    Output spatial size is ceil(H/stride) x ceil(W/stride).
    """
    x, kernels = _lift(x), _lift(kernels)
    if x.ndim != 4 or kernels.ndim != 4:
        raise ShapeError(f"conv2d expects 4-d input and kernels, got {x.shape} and {kernels.shape}")
    b, c, h, w = x.shape
    k, kc, kh, kw = kernels.shape
    if kc != c:
        raise ShapeError(f"conv2d: input has {c} channels but kernels expect {kc}")
    if stride not in (1, 2):
        raise ShapeError(f"conv2d: stride must be 1 or 2, got {stride}")
    if h < 1 or w < 1:
        raise ShapeError(f"conv2d: empty spatial size {(h, w)}")

    # "same" padding also covers inputs smaller than the kernel (deep stacks
    # on small images shrink below 3x3)
    pt, pb = _same_pad(h, kh, stride)
    pl, pr = _same_pad(w, kw, stride)
    padded = np.pad(x.data, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
    hp, wp = h + pt + pb, w + pl + pr
    out_h = (hp - kh) // stride + 1
    out_w = (wp - kw) // stride + 1

    cols = im2col(padded, kh, kw, stride)  # [B, P, C*kh*kw]
    w_mat = kernels.data.reshape(k, c * kh * kw)
    out_data = (cols @ w_mat.T).transpose(0, 2, 1).reshape(b, k, out_h, out_w)

    def bwd(g):
        g_mat = g.reshape(b, k, out_h * out_w).transpose(0, 2, 1)  # [B, P, K]
        if kernels.requires_grad:
            grad_w = np.einsum("bpk,bpc->kc", g_mat, cols, optimize=True)
            _accumulate(kernels, grad_w.reshape(k, c, kh, kw))
        if x.requires_grad:
            grad_cols = np.ascontiguousarray(g_mat @ w_mat)  # [B, P, C*kh*kw]
            grad_padded = col2im(grad_cols, b, c, hp, wp, kh, kw, stride)
            _accumulate(x, grad_padded[:, :, pt : pt + h, pl : pl + w])

    return _make(out_data, (x, kernels), bwd, "conv2d")


class LSTMParams:
    """Gate weights for one cell, fused as [*, 4H] blocks in (i, f, g, o) order."""

    def __init__(self, w_x, w_h, bias):
        self.w_x = w_x
        self.w_h = w_h
        self.bias = bias

    def tensors(self, prefix):
        return {f"{prefix}.w_x": self.w_x, f"{prefix}.w_h": self.w_h, f"{prefix}.bias": self.bias}


def lstm_cell(x, h, c, params):
    """One long short-term memory step; returns (h', c')."""
    hidden = h.shape[-1]
    gates = add(add(matmul(x, params.w_x), matmul(h, params.w_h)), params.bias)
    i_gate = sigmoid(narrow(gates, 0, hidden))
    f_gate = sigmoid(narrow(gates, hidden, hidden))
    g_cand = tanh(narrow(gates, 2 * hidden, hidden))
    o_gate = sigmoid(narrow(gates, 3 * hidden, hidden))
    c_new = add(mul(f_gate, c), mul(i_gate, g_cand))
    h_new = mul(o_gate, tanh(c_new))
    return h_new, c_new


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------

def _topo_order(root):
    order = []
    visited = set()
    stack = [(root, iter(root.parents))]
    visited.add(id(root))
    while stack:
        node, parents = stack[-1]
        advanced = False
        for p in parents:
            if id(p) not in visited and p.requires_grad:
                visited.add(id(p))
                stack.append((p, iter(p.parents)))
                advanced = True
                break
        if not advanced:
            order.append(node)
            stack.pop()
    return order


def backward(loss, params=None):
    """Backpropagate from a scalar loss; each graph node is visited once.

    Accumulates into ``.grad`` of every reachable tensor that requires a
    gradient.  When ``params`` (a name -> Tensor mapping) is given, returns
    a name -> gradient array map with zeros for unreachable parameters.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward requires a scalar loss, got shape {loss.shape}")
    order = _topo_order(loss)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None:
            node._backward(node.grad)
    if params is not None:
        return {
            name: (p.grad if p.grad is not None else np.zeros_like(p.data))
            for name, p in params.items()
        }
    return None


def zero_grad(params):
    for p in params.values() if isinstance(params, dict) else params:
        p.grad = None


# ---------------------------------------------------------------------------
# parameter initialization
# ---------------------------------------------------------------------------

def glorot_uniform(rng, shape, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(np.float32)


def dense_init(rng, fan_in, fan_out):
    w = parameter(glorot_uniform(rng, (fan_in, fan_out), fan_in, fan_out))
    b = parameter(np.zeros(fan_out, dtype=np.float32))
    return w, b


def conv_init(rng, k, c, kh, kw):
    fan_in = c * kh * kw
    fan_out = k * kh * kw
    return parameter(glorot_uniform(rng, (k, c, kh, kw), fan_in, fan_out))


def lstm_init(rng, input_size, hidden):
    # recurrent block: plain 1/sqrt(hidden) scaling, no orthogonalization
    w_x = parameter(glorot_uniform(rng, (input_size, 4 * hidden), input_size, 4 * hidden))
    scale = 1.0 / np.sqrt(hidden)
    w_h = parameter(rng.uniform(-scale, scale, size=(hidden, 4 * hidden)).astype(np.float32))
    bias = parameter(np.zeros(4 * hidden, dtype=np.float32))
    return LSTMParams(w_x, w_h, bias)
