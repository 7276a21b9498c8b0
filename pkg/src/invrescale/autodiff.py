"""Dense float64 tensors with a minimal reverse-mode gradient tape.

A ``Tensor`` wraps a C-contiguous float64 numpy array.  Operations on
tensors record their inputs and a backward closure, so the computation
graph is the implicit DAG of ``_parents`` links; nodes are created in
topological order by construction.  Calling ``backward()`` on a scalar
result accumulates adjoints into ``.grad`` of every reachable tensor
that requires gradients.

The engine is deliberately small: same-shape elementwise arithmetic,
python-scalar broadcasting, reductions, 3x3/1x1 convolutions, and the
activations the coupling blocks need.  One tape is built per training
step and discarded; nothing is fused or reused.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ShapeError

# pos_scale clamps its argument to [-LN10, LN10], so exp stays in [0.1, 10].
_LN10 = math.log(10.0)


def _as_array(data) -> np.ndarray:
    arr = np.ascontiguousarray(data, dtype=np.float64)
    return arr


class Tensor:
    """A float64 array plus the tape bookkeeping needed for backward().

    Leaf tensors are created with ``Tensor(data)`` (constants) or
    ``parameter(data)`` (trainable).  Non-leaf tensors come out of the
    ops below and must not be mutated.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_bwd", "_op")

    def __init__(self, data, requires_grad=False):
        self.data = _as_array(data)
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = ()
        self._bwd = None
        self._op = "leaf"

    # -- construction helpers -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of size {self.data.size}")
        return float(self.data.reshape(()))

    def detach(self) -> np.ndarray:
        return self.data.copy()

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, op={self._op!r}, requires_grad={self.requires_grad})"

    # -- arithmetic -----------------------------------------------------------

    def __add__(self, other):
        return _binary(self, other, np.add, _add_bwd, "add")

    __radd__ = __add__

    def __sub__(self, other):
        return _binary(self, other, np.subtract, _sub_bwd, "sub")

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        return _binary(self, other, np.multiply, _mul_bwd, "mul")

    __rmul__ = __mul__

    def __truediv__(self, other):
        return _binary(self, other, np.divide, _div_bwd, "div")

    def __neg__(self):
        x = self
        return make_node(-x.data, (x,), lambda g: _accum(x, -g), "neg")

    def abs(self):
        x = self
        # d|x|/dx at 0 is taken as 0 (subgradient convention).
        return make_node(np.abs(x.data), (x,), lambda g: _accum(x, g * np.sign(x.data)), "abs")

    def sum(self):
        x = self
        out = np.asarray(np.sum(x.data))
        return make_node(out, (x,), lambda g: _accum(x, np.broadcast_to(g, x.data.shape)), "sum")

    def mean(self):
        x = self
        n = x.data.size
        out = np.asarray(np.mean(x.data))
        return make_node(out, (x,), lambda g: _accum(x, np.broadcast_to(g / n, x.data.shape)), "mean")

    # -- backward -------------------------------------------------------------

    def backward(self):
        """Reverse-accumulate adjoints from this scalar into .grad fields."""
        if self.data.size != 1:
            raise ShapeError(f"backward() root must be scalar, got shape {self.data.shape}")
        order = _toposort(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._bwd is not None and node.grad is not None:
                node._bwd(node.grad)


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def constant(data) -> Tensor:
    if isinstance(data, Tensor):
        return data
    return Tensor(data)


def make_node(data, parents, bwd, op) -> Tensor:
    """Record one primitive-op result on the tape.

    ``bwd(g)`` must push the adjoint ``g`` of this node into its parents
    via :func:`_accum`.  It is skipped entirely when no parent requires
    gradients, so closures may assume at least one live gradient path.
    """
    out = Tensor.__new__(Tensor)
    out.data = _as_array(data)
    out.requires_grad = any(p.requires_grad for p in parents)
    out.grad = None
    out._parents = tuple(parents)
    out._bwd = bwd if out.requires_grad else None
    out._op = op
    return out


def _accum(node: Tensor, g: np.ndarray):
    if not node.requires_grad:
        return
    if node.grad is None:
        node.grad = np.array(g, dtype=np.float64)
    else:
        node.grad += g


def _toposort(root: Tensor):
    order = []
    seen = set()
    stack = [(root, False)]
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
            if id(p) not in seen:
                stack.append((p, False))
    return order


# -- elementwise binary plumbing ----------------------------------------------


def _binary(a, b, fn, bwd_factory, op):
    if not isinstance(b, Tensor):
        b = Tensor(np.asarray(float(b)))
    if not isinstance(a, Tensor):
        a = Tensor(np.asarray(float(a)))
    if a.data.shape != b.data.shape and a.data.size != 1 and b.data.size != 1:
        raise ShapeError(f"{op}: shape mismatch {a.data.shape} vs {b.data.shape}")
    out_data = fn(a.data, b.data)
    return make_node(out_data, (a, b), bwd_factory(a, b), op)


def _reduce_to(g, shape):
    # Inverse of scalar broadcasting: collapse the adjoint back to `shape`.
    if g.shape == shape:
        return g
    return np.asarray(np.sum(g)).reshape(shape)


def _add_bwd(a, b):
    def bwd(g):
        _accum(a, _reduce_to(g, a.data.shape))
        _accum(b, _reduce_to(g, b.data.shape))

    return bwd


def _sub_bwd(a, b):
    def bwd(g):
        _accum(a, _reduce_to(g, a.data.shape))
        _accum(b, _reduce_to(-g, b.data.shape))

    return bwd


def _mul_bwd(a, b):
    def bwd(g):
        _accum(a, _reduce_to(g * b.data, a.data.shape))
        _accum(b, _reduce_to(g * a.data, b.data.shape))

    return bwd


def _div_bwd(a, b):
    def bwd(g):
        _accum(a, _reduce_to(g / b.data, a.data.shape))
        _accum(b, _reduce_to(-g * a.data / (b.data * b.data), b.data.shape))

    return bwd


# -- activations ----------------------------------------------------------------


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    """Elementwise max(x, slope*x) for slope in (0, 1)."""
    if not 0.0 < slope < 1.0:
        raise ValueError(f"leaky_relu slope must lie in (0, 1), got {slope}")
    x = constant(x)
    factor = np.where(x.data >= 0.0, 1.0, slope)
    return make_node(x.data * factor, (x,), lambda g: _accum(x, g * factor), "leaky_relu")


def pos_scale(x: Tensor) -> Tensor:
    """exp of the input clamped to [-ln 10, ln 10]; range [0.1, 10].

    Used wherever a strictly positive, bounded multiplier is needed so
    that the inverse pass can divide without conditioning trouble.
    """
    x = constant(x)
    clamped = np.clip(x.data, -_LN10, _LN10)
    # exp(log 10) can overshoot 10 by one ulp; pin the range exactly.
    out = np.clip(np.exp(clamped), 0.1, 10.0)
    active = (x.data > -_LN10) & (x.data < _LN10)
    grad_factor = np.where(active, out, 0.0)
    return make_node(out, (x,), lambda g: _accum(x, g * grad_factor), "pos_scale")


# -- convolutions ----------------------------------------------------------------


def _conv3x3_raw(x: np.ndarray, k: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Cross-correlation, zero padding 1, stride 1. x:(C,H,W) k:(O,C,3,3) b:(O,)."""
    c, h, w = x.shape
    o = k.shape[0]
    xp = np.zeros((c, h + 2, w + 2), dtype=np.float64)
    xp[:, 1:-1, 1:-1] = x
    # im2col: (C*9, H*W) so the convolution is one matmul.
    cols = np.empty((c, 9, h, w), dtype=np.float64)
    for i in range(3):
        for j in range(3):
            cols[:, i * 3 + j] = xp[:, i : i + h, j : j + w]
    out = k.reshape(o, c * 9) @ cols.reshape(c * 9, h * w)
    out = out.reshape(o, h, w)
    out += b[:, None, None]
    return out


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor) -> Tensor:
    """3x3 cross-correlation with zero padding 1 and stride 1.

    Output spatial extents equal the input's.  Raises :class:`ShapeError`
    when channel counts disagree or the kernel is not 3x3.
    """
    x, kernel, bias = constant(x), constant(kernel), constant(bias)
    if x.data.ndim != 3:
        raise ShapeError(f"conv2d input must be CxHxW, got {x.data.shape}")
    if kernel.data.ndim != 4 or kernel.data.shape[2:] != (3, 3):
        raise ShapeError(f"conv2d kernel must be OxCx3x3, got {kernel.data.shape}")
    if kernel.data.shape[1] != x.data.shape[0]:
        raise ShapeError(
            f"conv2d channel mismatch: input has {x.data.shape[0]} channels, "
            f"kernel expects {kernel.data.shape[1]}"
        )
    if bias.data.shape != (kernel.data.shape[0],):
        raise ShapeError(f"conv2d bias must have shape ({kernel.data.shape[0]},), got {bias.data.shape}")

    out = _conv3x3_raw(x.data, kernel.data, bias.data)

    def bwd(g):
        c, h, w = x.data.shape
        o = kernel.data.shape[0]
        if kernel.requires_grad:
            xp = np.zeros((c, h + 2, w + 2), dtype=np.float64)
            xp[:, 1:-1, 1:-1] = x.data
            cols = np.empty((c, 9, h, w), dtype=np.float64)
            for i in range(3):
                for j in range(3):
                    cols[:, i * 3 + j] = xp[:, i : i + h, j : j + w]
            dk = g.reshape(o, h * w) @ cols.reshape(c * 9, h * w).T
            _accum(kernel, dk.reshape(kernel.data.shape))
        if bias.requires_grad:
            _accum(bias, g.sum(axis=(1, 2)))
        if x.requires_grad:
            # Gradient w.r.t. input is correlation with the flipped, transposed kernel.
            kt = np.ascontiguousarray(kernel.data.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1])
            _accum(x, _conv3x3_raw(g, kt, np.zeros(c)))

    return make_node(out, (x, kernel, bias), bwd, "conv2d")


def conv1x1(x: Tensor, kernel: Tensor) -> Tensor:
    """Pointwise channel mix. x:(C,H,W), kernel:(O,C)."""
    x, kernel = constant(x), constant(kernel)
    if kernel.data.ndim != 2 or kernel.data.shape[1] != x.data.shape[0]:
        raise ShapeError(
            f"conv1x1 kernel must be Ox{x.data.shape[0]}, got {kernel.data.shape}"
        )
    c, h, w = x.data.shape
    out = (kernel.data @ x.data.reshape(c, h * w)).reshape(-1, h, w)

    def bwd(g):
        if kernel.requires_grad:
            _accum(kernel, g.reshape(-1, h * w) @ x.data.reshape(c, h * w).T)
        if x.requires_grad:
            _accum(x, (kernel.data.T @ g.reshape(-1, h * w)).reshape(c, h, w))

    return make_node(out, (x, kernel), bwd, "conv1x1")


# -- channel slicing ----------------------------------------------------------


def narrow_channels(x: Tensor, start: int, count: int) -> Tensor:
    """Slice channels [start, start+count) of a CxHxW tensor."""
    x = constant(x)
    c = x.data.shape[0]
    if not (0 <= start and start + count <= c):
        raise ShapeError(f"narrow_channels [{start}:{start + count}) out of range for {c} channels")
    out = x.data[start : start + count].copy()

    def bwd(g):
        full = np.zeros_like(x.data)
        full[start : start + count] = g
        _accum(x, full)

    return make_node(out, (x,), bwd, "narrow")


def concat_channels(parts) -> Tensor:
    """Concatenate CxHxW tensors along the channel axis."""
    parts = [constant(p) for p in parts]
    spatial = {p.data.shape[1:] for p in parts}
    if len(spatial) != 1:
        raise ShapeError(f"concat_channels spatial mismatch: {sorted(spatial)}")
    out = np.concatenate([p.data for p in parts], axis=0)
    counts = [p.data.shape[0] for p in parts]

    def bwd(g):
        at = 0
        for p, n in zip(parts, counts):
            _accum(p, g[at : at + n])
            at += n

    return make_node(out, tuple(parts), bwd, "concat")


# -- verification ----------------------------------------------------------------


def zero_grads(params):
    for p in params:
        p.grad = None


def fd_check(f, params, step: float = 1e-5) -> float:
    """Max relative error between backward() gradients and central differences.

    ``f`` is a zero-argument callable returning a scalar Tensor; it must
    read the current ``.data`` of every tensor in ``params`` each call.
    Relative error is |analytic - fd| / (|fd| + 1e-12), maximized over
    every parameter element.
    """
    if not 1e-7 <= step <= 1e-3:
        raise ValueError(f"fd step {step} outside [1e-7, 1e-3]")
    zero_grads(params)
    loss = f()
    if not math.isfinite(loss.item()):
        raise ArithmeticError("fd_check: non-finite objective at the base point")
    loss.backward()
    analytic = [
        p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in params
    ]

    worst = 0.0
    for p_idx, p in enumerate(params):
        flat = p.data.reshape(-1)
        for e_idx in range(flat.size):
            orig = flat[e_idx]
            flat[e_idx] = orig + step
            f_plus = f().item()
            flat[e_idx] = orig - step
            f_minus = f().item()
            flat[e_idx] = orig
            if not (math.isfinite(f_plus) and math.isfinite(f_minus)):
                raise ArithmeticError(
                    f"fd_check: non-finite objective at parameter {p_idx}, element {e_idx}"
                )
            fd = (f_plus - f_minus) / (2.0 * step)
            err = abs(analytic[p_idx].reshape(-1)[e_idx] - fd) / (abs(fd) + 1e-12)
            if err > worst:
                worst = err
    return worst
