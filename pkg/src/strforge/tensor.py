"""Minimal dense tensor engine with reverse-mode differentiation.

Backed by numpy arrays. Tensors default to float64 so finite-difference
gradient checks are meaningful; float32 is supported for training. A tensor
records the operation that produced it (parents + backward closure); calling
``backward`` on a scalar walks the graph once in reverse topological order
and accumulates gradients additively into every reachable tensor with
``requires_grad`` set.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    pass


class StateError(RuntimeError):
    pass


def _as_array(x, dtype=None):
    if isinstance(x, Tensor):
        raise TypeError("expected raw data, got Tensor")
    a = np.asarray(x, dtype=dtype)
    if a.dtype.kind not in "fiu":
        raise TypeError(f"unsupported dtype {a.dtype}")
    if dtype is None and a.dtype.kind in "iu":
        a = a.astype(np.float64)
    return a


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape` (reverse of numpy broadcasting)."""
    if grad.shape == tuple(shape):
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, dtype=None, name=None):
        self.data = _as_array(data, dtype)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self.name = name

    # -- basic introspection -------------------------------------------------

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

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def item(self):
        return float(self.data)

    def numpy(self):
        return self.data

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    # -- graph machinery -----------------------------------------------------

    @staticmethod
    def _make(data, parents, backward):
        out = Tensor.__new__(Tensor)
        out.data = data
        out.requires_grad = any(p.requires_grad for p in parents)
        out.grad = None
        out.name = None
        if out.requires_grad:
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        return out

    def _accumulate(self, grad):
        if self.grad is None:
            self.grad = np.array(grad, dtype=self.data.dtype)
        else:
            self.grad = self.grad + grad

    def backward(self, grad=None):
        """Populate grads of every reachable requires_grad tensor.

        Gradients accumulate across calls; reset with ``zero_grad``.
        """
        if grad is None:
            if self.size != 1:
                raise ShapeError(f"backward() needs a scalar loss, got shape {self.shape}")
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=self.data.dtype)

        order = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited and p.requires_grad:
                    stack.append((p, False))

        grads = {id(self): grad}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node._accumulate(g)
                continue
            node.grad = g if node.grad is None else node.grad + g
            parent_grads = node._backward(g)
            for p, pg in zip(node._parents, parent_grads):
                if pg is None or not p.requires_grad:
                    continue
                if id(p) in grads:
                    grads[id(p)] = grads[id(p)] + pg
                else:
                    grads[id(p)] = pg

    # -- arithmetic ----------------------------------------------------------

    def _coerce(self, other):
        if isinstance(other, Tensor):
            return other
        return Tensor(np.asarray(other, dtype=self.data.dtype))

    def __add__(self, other):
        other = self._coerce(other)
        a, b = self, other
        out_data = a.data + b.data

        def backward(g):
            return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

        return Tensor._make(out_data, (a, b), backward)

    __radd__ = __add__

    def __mul__(self, other):
        other = self._coerce(other)
        a, b = self, other
        out_data = a.data * b.data

        def backward(g):
            return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

        return Tensor._make(out_data, (a, b), backward)

    __rmul__ = __mul__

    def __neg__(self):
        a = self

        def backward(g):
            return (-g,)

        return Tensor._make(-a.data, (a,), backward)

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return self._coerce(other) + (-self)

    def __truediv__(self, other):
        other = self._coerce(other)
        a, b = self, other
        out_data = a.data / b.data

        def backward(g):
            ga = _unbroadcast(g / b.data, a.shape)
            gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
            return ga, gb

        return Tensor._make(out_data, (a, b), backward)

    def __rtruediv__(self, other):
        return self._coerce(other) / self

    def __pow__(self, exponent):
        if not np.isscalar(exponent):
            raise TypeError("only scalar exponents supported")
        a = self
        out_data = a.data ** exponent

        def backward(g):
            return (g * exponent * a.data ** (exponent - 1),)

        return Tensor._make(out_data, (a,), backward)

    def __matmul__(self, other):
        return matmul(self, other)

    # -- shape ops -----------------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a = self
        out_data = a.data.reshape(shape)

        def backward(g):
            return (g.reshape(a.shape),)

        return Tensor._make(out_data, (a,), backward)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        a = self
        inv = np.argsort(axes)
        out_data = a.data.transpose(axes)

        def backward(g):
            return (g.transpose(inv),)

        return Tensor._make(out_data, (a,), backward)

    @property
    def T(self):
        return self.transpose()

    def __getitem__(self, key):
        a = self
        out_data = a.data[key]

        def backward(g):
            full = np.zeros_like(a.data)
            np.add.at(full, key, g)
            return (full,)

        return Tensor._make(out_data, (a,), backward)

    # -- reductions ----------------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        a = self
        out_data = a.data.sum(axis=axis, keepdims=keepdims)

        def backward(g):
            if axis is None:
                return (np.broadcast_to(g, a.shape),)
            g2 = g
            if not keepdims:
                g2 = np.expand_dims(g, axis)
            return (np.broadcast_to(g2, a.shape),)

        return Tensor._make(out_data, (a,), backward)

    def mean(self, axis=None, keepdims=False):
        n = self.size if axis is None else np.prod(
            [self.shape[ax] for ax in (axis if isinstance(axis, tuple) else (axis,))]
        )
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / float(n))

    def max(self, axis=None, keepdims=False):
        """Maximum; gradient routes to the first maximal index."""
        a = self
        if axis is None:
            out_data = a.data.max()
            idx = np.unravel_index(np.argmax(a.data), a.shape)

            def backward(g):
                full = np.zeros_like(a.data)
                full[idx] = g
                return (full,)

            return Tensor._make(np.asarray(out_data), (a,), backward)

        out_data = a.data.max(axis=axis, keepdims=keepdims)
        arg = np.argmax(a.data, axis=axis)

        def backward(g):
            g2 = g if keepdims else np.expand_dims(g, axis)
            full = np.zeros_like(a.data)
            np.put_along_axis(full, np.expand_dims(arg, axis), g2, axis)
            return (full,)

        return Tensor._make(out_data, (a,), backward)

    # -- elementwise nonlinearities -------------------------------------------

    def exp(self):
        a = self
        out_data = np.exp(a.data)

        def backward(g):
            return (g * out_data,)

        return Tensor._make(out_data, (a,), backward)

    def log(self):
        a = self
        out_data = np.log(a.data)

        def backward(g):
            return (g / a.data,)

        return Tensor._make(out_data, (a,), backward)

    def sqrt(self):
        return self ** 0.5


def tensor(data, requires_grad=False, dtype=None):
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def zeros(shape, dtype=np.float64, requires_grad=False):
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=requires_grad)


def ones(shape, dtype=np.float64, requires_grad=False):
    return Tensor(np.ones(shape, dtype=dtype), requires_grad=requires_grad)


# -- linear algebra ------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if not isinstance(a, Tensor):
        a = Tensor(a)
    if not isinstance(b, Tensor):
        b = Tensor(b)
    if a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise ShapeError(f"matmul dimension mismatch: {a.shape} @ {b.shape}")
    out_data = a.data @ b.data

    def backward(g):
        if b.ndim == 1:
            ga = np.outer(g, b.data) if a.ndim == 2 else g[..., None] * b.data
            gb = a.data.T @ g if a.ndim == 2 else _unbroadcast(g[..., None] * a.data, b.shape)
            return _unbroadcast(ga, a.shape), gb
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return Tensor._make(out_data, (a, b), backward)


# -- nonlinearities ------------------------------------------------------------


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out_data = np.where(mask, x.data, 0.0)

    def backward(g):
        return (g * mask,)

    return Tensor._make(out_data, (x,), backward)


def tanh(x: Tensor) -> Tensor:
    out_data = np.tanh(x.data)

    def backward(g):
        return (g * (1.0 - out_data * out_data),)

    return Tensor._make(out_data, (x,), backward)


def sigmoid(x: Tensor) -> Tensor:
    out_data = 1.0 / (1.0 + np.exp(-x.data))

    def backward(g):
        return (g * out_data * (1.0 - out_data),)

    return Tensor._make(out_data, (x,), backward)


def logsumexp(x: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    """log(sum(exp(x))) along `axis`, safe for -inf entries (empty sums stay -inf)."""
    m = np.max(x.data, axis=axis, keepdims=True)
    m_safe = np.where(np.isfinite(m), m, 0.0)
    e = np.exp(x.data - m_safe)
    s = e.sum(axis=axis, keepdims=True)
    with np.errstate(divide="ignore"):
        out = np.log(s) + m_safe
    out_data = out if keepdims else np.squeeze(out, axis=axis)

    def backward(g):
        g2 = g if keepdims else np.expand_dims(g, axis)
        with np.errstate(invalid="ignore"):
            soft = np.where(s > 0, e / np.where(s > 0, s, 1.0), 0.0)
        return (g2 * soft,)

    return Tensor._make(out_data, (x,), backward)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    return x - logsumexp(x, axis=axis, keepdims=True)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    return log_softmax(x, axis=axis).exp()


# -- structural ops ------------------------------------------------------------


def concat(tensors, axis=0):
    tensors = list(tensors)
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor._make(out_data, tuple(tensors), backward)


def stack(tensors, axis=0):
    tensors = list(tensors)
    out_data = np.stack([t.data for t in tensors], axis=axis)

    def backward(g):
        parts = np.split(g, len(tensors), axis=axis)
        return tuple(np.squeeze(p, axis=axis) for p in parts)

    return Tensor._make(out_data, tuple(tensors), backward)


def pad2d(x: Tensor, pad_h: int, pad_w: int, value: float = 0.0) -> Tensor:
    """Pad the trailing two axes of an NCHW tensor by (pad_h, pad_w) on each side."""
    if pad_h == 0 and pad_w == 0:
        return x
    widths = [(0, 0)] * (x.ndim - 2) + [(pad_h, pad_h), (pad_w, pad_w)]
    out_data = np.pad(x.data, widths, constant_values=value)
    sl = tuple([slice(None)] * (x.ndim - 2) + [
        slice(pad_h, out_data.shape[-2] - pad_h),
        slice(pad_w, out_data.shape[-1] - pad_w),
    ])

    def backward(g):
        return (g[sl],)

    return Tensor._make(out_data, (x,), backward)


def gather_rows(x: Tensor, idx: np.ndarray) -> Tensor:
    """out[b, s] = x[b, idx[b, s]] for a 2-D `x` and integer index matrix `idx`."""
    idx = np.asarray(idx)
    rows = np.arange(x.shape[0])[:, None]
    out_data = x.data[rows, idx]

    def backward(g):
        full = np.zeros_like(x.data)
        np.add.at(full, (np.broadcast_to(rows, idx.shape), idx), g)
        return (full,)

    return Tensor._make(out_data, (x,), backward)


# -- convolution / pooling -------------------------------------------------------


def _pair(v):
    if isinstance(v, (tuple, list)):
        return int(v[0]), int(v[1])
    return int(v), int(v)


def conv_output_size(size, kernel, stride, padding, floor=False):
    num = size + 2 * padding - kernel
    if num < 0:
        raise ShapeError(f"kernel {kernel} larger than padded input {size + 2 * padding}")
    if num % stride != 0 and not floor:
        raise ShapeError(
            f"non-integral conv output: (size {size} + 2*{padding} - {kernel}) not divisible by stride {stride}"
        )
    return num // stride + 1


def _windows(data, kh, kw, sh, sw):
    # (N, C, H', W', kh, kw) view of all pooling/conv windows
    v = np.lib.stride_tricks.sliding_window_view(data, (kh, kw), axis=(-2, -1))
    return v[:, :, ::sh, ::sw]


def conv2d(x: Tensor, weight: Tensor, stride=(1, 1), padding=(0, 0)) -> Tensor:
    """2-D cross-correlation over NCHW input with OIHW weights."""
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d expects NCHW input and OIHW weight, got {x.shape}, {weight.shape}")
    if x.shape[1] != weight.shape[1]:
        raise ShapeError(f"conv2d channel mismatch: input {x.shape} vs weight {weight.shape}")
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    if sh < 1 or sw < 1:
        raise ShapeError("stride must be >= 1")
    n, c_in, h, w = x.shape
    c_out, _, kh, kw = weight.shape
    ho = conv_output_size(h, kh, sh, ph)
    wo = conv_output_size(w, kw, sw, pw)

    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else x.data
    win = _windows(xp, kh, kw, sh, sw)  # (N, C, ho, wo, kh, kw)
    col = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n * ho * wo, c_in * kh * kw)
    wmat = weight.data.reshape(c_out, -1)
    out_data = (col @ wmat.T).reshape(n, ho, wo, c_out).transpose(0, 3, 1, 2)

    def backward(g):
        gmat = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(n * ho * wo, c_out)
        gw = (gmat.T @ col).reshape(weight.shape) if weight.requires_grad else None
        gx = None
        if x.requires_grad:
            dcol = (gmat @ wmat).reshape(n, ho, wo, c_in, kh, kw)
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + sh * ho:sh, j:j + sw * wo:sw] += dcol[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            gx = gxp[:, :, ph:ph + h, pw:pw + w] if (ph or pw) else gxp
        return gx, gw

    return Tensor._make(np.ascontiguousarray(out_data), (x, weight), backward)


def maxpool2d(x: Tensor, kernel, stride=None, padding=(0, 0)) -> Tensor:
    """Window maximum; padded cells count as -inf, ties route to the first index.

    Output size floors when the last window does not fit (trailing rows or
    columns are dropped, as is conventional for pooling).
    """
    kh, kw = _pair(kernel)
    sh, sw = _pair(stride if stride is not None else kernel)
    ph, pw = _pair(padding)
    n, c, h, w = x.shape
    ho = conv_output_size(h, kh, sh, ph, floor=True)
    wo = conv_output_size(w, kw, sw, pw, floor=True)

    if ph or pw:
        xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw)), constant_values=-np.inf)
    else:
        xp = x.data
    win = _windows(xp, kh, kw, sh, sw).reshape(n, c, ho, wo, kh * kw)
    arg = np.argmax(win, axis=-1)
    out_data = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]

    def backward(g):
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                mask = arg == (i * kw + j)
                gxp[:, :, i:i + sh * ho:sh, j:j + sw * wo:sw] += np.where(mask, g, 0.0)
        gx = gxp[:, :, ph:ph + h, pw:pw + w] if (ph or pw) else gxp
        return (gx,)

    return Tensor._make(np.ascontiguousarray(out_data), (x,), backward)


def adaptive_avg_pool(x: Tensor) -> Tensor:
    """Per-channel mean over all spatial positions: (..., C, H, W) -> (..., C)."""
    return x.mean(axis=(-2, -1))


# -- batch normalization ---------------------------------------------------------


class BatchNormState:
    """Running first/second moments for one batch-norm layer."""

    def __init__(self, num_features, dtype=np.float64, momentum=0.1, eps=1e-5):
        self.momentum = momentum
        self.eps = eps
        self.running_mean = np.zeros(num_features, dtype=dtype)
        self.running_var = np.ones(num_features, dtype=dtype)
        self.initialized = False

    def update(self, mean, var):
        if not self.initialized:
            self.running_mean = mean.copy()
            self.running_var = var.copy()
            self.initialized = True
        else:
            m = self.momentum
            self.running_mean = (1 - m) * self.running_mean + m * mean
            self.running_var = (1 - m) * self.running_var + m * var


def batchnorm(x: Tensor, gamma: Tensor, beta: Tensor, state: BatchNormState,
              mode: str = "train") -> Tensor:
    """Batch normalization over all axes except the channel axis.

    Channel axis is 1 for 4-D (NCHW) input and the last axis for 2-D input.
    """
    if x.ndim == 4:
        axes = (0, 2, 3)
        cshape = (1, -1, 1, 1)
    elif x.ndim == 2:
        axes = (0,)
        cshape = (1, -1)
    else:
        raise ShapeError(f"batchnorm expects 2-D or 4-D input, got {x.shape}")

    g = gamma.reshape(cshape)
    b = beta.reshape(cshape)
    if mode == "train":
        mu = x.mean(axis=axes, keepdims=True)
        xc = x - mu
        var = (xc * xc).mean(axis=axes, keepdims=True)
        state.update(mu.data.reshape(-1), var.data.reshape(-1))
        xhat = xc * ((var + state.eps) ** -0.5)
        return xhat * g + b
    if mode in ("eval", "infer"):
        if not state.initialized:
            raise StateError("batchnorm infer mode before any statistics were recorded")
        rm = state.running_mean.reshape(cshape)
        rv = state.running_var.reshape(cshape)
        xhat = (x - rm) * ((rv + state.eps) ** -0.5)
        return xhat * g + b
    raise ValueError(f"unknown batchnorm mode {mode!r}")


# -- LSTM cell -------------------------------------------------------------------


def lstm_cell(x: Tensor, h_prev: Tensor, c_prev: Tensor, w_ih: Tensor, w_hh: Tensor,
              bias: Tensor):
    """One step of a standard four-gate LSTM.

    Gate order in the stacked weight matrices is (input, forget, cell, output);
    `w_ih` is (4H, in), `w_hh` is (4H, H), `bias` is (4H,). Inputs are (B, in)
    and (B, H); returns (h, c), each (B, H).
    """
    hidden = h_prev.shape[-1]
    gates = matmul(x, w_ih.T) + matmul(h_prev, w_hh.T) + bias
    i = sigmoid(gates[:, 0 * hidden:1 * hidden])
    f = sigmoid(gates[:, 1 * hidden:2 * hidden])
    g = tanh(gates[:, 2 * hidden:3 * hidden])
    o = sigmoid(gates[:, 3 * hidden:4 * hidden])
    c = f * c_prev + i * g
    h = o * tanh(c)
    return h, c


# -- bilinear sampling -------------------------------------------------------------


def bilinear_sample(x: Tensor, grid: Tensor) -> Tensor:
    """Sample NCHW input at normalized grid coordinates.

    `grid` is (N, Ho, Wo, 2) with (x, y) in [-1, 1]; corners of the image map
    to (-1, -1) and (1, 1) at pixel centers. Out-of-range coordinates read a
    zero border. Differentiable with respect to both the image and the grid.
    """
    n, c, h, w = x.shape
    if grid.ndim != 4 or grid.shape[-1] != 2 or grid.shape[0] != n:
        raise ShapeError(f"grid shape {grid.shape} incompatible with input {x.shape}")
    ho, wo = grid.shape[1], grid.shape[2]

    gx = (grid.data[..., 0] + 1.0) * (w - 1) / 2.0  # (N, Ho, Wo) in pixel units
    gy = (grid.data[..., 1] + 1.0) * (h - 1) / 2.0

    x0 = np.floor(gx).astype(np.int64)
    y0 = np.floor(gy).astype(np.int64)
    x1 = x0 + 1
    y1 = y0 + 1
    fx = gx - x0
    fy = gy - y0

    def in_range(xi, yi):
        return (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)

    corners = []
    for yi, xi, wgt in (
        (y0, x0, (1 - fx) * (1 - fy)),
        (y0, x1, fx * (1 - fy)),
        (y1, x0, (1 - fx) * fy),
        (y1, x1, fx * fy),
    ):
        valid = in_range(xi, yi)
        xc = np.clip(xi, 0, w - 1)
        yc = np.clip(yi, 0, h - 1)
        corners.append((yc, xc, wgt * valid, valid))

    batch = np.arange(n)[:, None, None]
    out_data = np.zeros((n, c, ho, wo), dtype=x.dtype)
    vals = []
    for yc, xc, wgt, _ in corners:
        v = x.data[batch, :, yc, xc]  # (N, Ho, Wo, C)
        vals.append(v)
        out_data += (v * wgt[..., None]).transpose(0, 3, 1, 2)

    def backward(g):
        gt = g.transpose(0, 2, 3, 1)  # (N, Ho, Wo, C)
        grad_x = None
        if x.requires_grad:
            # scatter-add into a (N*H*W, C) view; windows may overlap
            acc = np.zeros((n * h * w, c), dtype=x.dtype)
            gflat = gt.reshape(n, ho * wo, c)
            offsets = (np.arange(n) * (h * w))[:, None]
            for yc, xc, wgt, _ in corners:
                flat = (yc * w + xc).reshape(n, ho * wo) + offsets
                contrib = gflat * wgt.reshape(n, ho * wo, 1)
                np.add.at(acc, flat.reshape(-1), contrib.reshape(-1, c))
            grad_x = acc.reshape(n, h, w, c).transpose(0, 3, 1, 2)
        grad_grid = None
        if grid.requires_grad:
            v00, v10, v01, v11 = vals  # (y0x0, y0x1, y1x0, y1x1)
            val00 = v00 * corners[0][3][..., None]
            val10 = v10 * corners[1][3][..., None]
            val01 = v01 * corners[2][3][..., None]
            val11 = v11 * corners[3][3][..., None]
            dgx = ((val10 - val00) * (1 - fy)[..., None] + (val11 - val01) * fy[..., None])
            dgy = ((val01 - val00) * (1 - fx)[..., None] + (val11 - val10) * fx[..., None])
            gg_x = (gt * dgx).sum(axis=-1) * (w - 1) / 2.0
            gg_y = (gt * dgy).sum(axis=-1) * (h - 1) / 2.0
            grad_grid = np.stack([gg_x, gg_y], axis=-1)
        return grad_x, grad_grid

    return Tensor._make(out_data, (x, grid), backward)


# -- gradient checking --------------------------------------------------------------


def grad_check(f, xs, eps=1e-5, tol=1e-4):
    """Compare recorded gradients of scalar `f(*xs)` with central finite differences.

    Returns a dict with ``max_rel_error`` and per-input errors; `xs` must be
    float64 tensors with requires_grad set.
    """
    xs = list(xs)
    for x in xs:
        if x.dtype != np.float64:
            raise ValueError("grad_check requires float64 inputs")
        x.zero_grad()
    loss = f(*xs)
    loss.backward()

    errors = []
    for x in xs:
        analytic = x.grad if x.grad is not None else np.zeros_like(x.data)
        numeric = np.zeros_like(x.data)
        flat = x.data.reshape(-1)
        num_flat = numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = f(*xs).item()
            flat[i] = orig - eps
            lo = f(*xs).item()
            flat[i] = orig
            num_flat[i] = (hi - lo) / (2 * eps)
        denom = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), 1e-8)
        errors.append(np.abs(analytic - numeric).max(initial=0.0) / denom)

    max_err = max(errors) if errors else 0.0
    return {
        "max_rel_error": float(max_err),
        "per_input": [float(e) for e in errors],
        "passed": bool(max_err < tol),
        "eps": eps,
        "tol": tol,
    }
