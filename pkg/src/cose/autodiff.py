"""Minimal reverse-mode automatic differentiation over dense tensors.

A :class:`Tensor` wraps one numpy array.  Primitive ops build new tensors
carrying parent links and a vector-Jacobian closure; a
:class:`ComputeGraph` runs one forward pass of a model function, retains
every intermediate, and replays the recorded ops in reverse topological
order to populate gradients.

Default precision is float32.  Passing ``dtype=numpy.float64`` to leaf
constructors (or to a model) switches the whole computation to a 64-bit
debug mode used by the tight finite-difference oracles.

Supported primitives: add, mul, relu, dense, conv2d, max_pool2d,
avg_pool2d, softmax, cross_entropy, gaussian_blur, reshape.  No GPU, no
dynamic shapes, no fusion.
"""

from __future__ import annotations

import numpy as np

from cose import imageops

DEFAULT_DTYPE = np.float32


class GraphError(Exception):
    """Base class for graph construction and execution failures."""


class ShapeError(GraphError):
    """Operand shapes incompatible with an op; names the offending node."""


class GraphStateError(GraphError):
    """Graph used out of order (e.g. backward before forward)."""


class Tensor:
    """Dense tensor node.  ``data`` is row-major float32/float64; ``grad``
    is populated by a backward pass for tensors with ``requires_grad``."""

    __slots__ = ("data", "requires_grad", "grad", "op", "name", "_parents", "_vjp")

    def __init__(self, data, requires_grad=False, dtype=None, name=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.op = "leaf"
        self.name = name
        self._parents = ()
        self._vjp = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        tag = self.name or self.op
        return f"Tensor({tag}, shape={self.data.shape}, dtype={self.data.dtype})"

    # small conveniences used by the training loop and tests
    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    __radd__ = __add__
    __rmul__ = __mul__


def _result(data, parents, vjp, op_name):
    out = Tensor.__new__(Tensor)
    out.data = data
    out.requires_grad = any(p.requires_grad for p in parents)
    out.grad = None
    out.op = op_name
    out.name = None
    out._parents = tuple(parents)
    out._vjp = vjp if out.requires_grad else None
    return out


def _as_tensor(x, like: Tensor):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype))


def _check_same_dtype(op, *tensors):
    dtypes = {t.dtype for t in tensors}
    if len(dtypes) > 1:
        raise ShapeError(f"{op}: mixed dtypes {sorted(str(d) for d in dtypes)}")


def topo_order(root: Tensor) -> list[Tensor]:
    """Parents-before-children ordering of the graph that produced ``root``."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
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


def backprop(root: Tensor, seed: np.ndarray, write_tensor_grads: bool = True) -> dict:
    """Reverse-mode sweep from ``root``; returns {tensor-id: grad array}.

    Each node is visited exactly once, in reverse topological order.  With
    ``write_tensor_grads`` the ``grad`` field of every ``requires_grad``
    tensor in the closure is also assigned (not thread-safe when graphs
    share parameter tensors; pass False in that case and read grads from
    the returned dict).
    """
    seed = np.asarray(seed, dtype=root.dtype)
    if seed.shape != root.data.shape:
        raise ShapeError(f"backward seed shape {seed.shape} != output shape {root.data.shape}")
    order = topo_order(root)
    grads: dict[int, np.ndarray] = {id(root): seed}
    for node in reversed(order):
        g = grads.get(id(node))
        if g is None or node._vjp is None:
            continue
        parent_grads = node._vjp(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            acc = grads.get(id(parent))
            grads[id(parent)] = pg if acc is None else acc + pg
    if write_tensor_grads:
        for node in order:
            if node.requires_grad and id(node) in grads:
                node.grad = grads[id(node)]
    return grads


# ---------------------------------------------------------------------------
# primitives


def add(a, b):
    a = a if isinstance(a, Tensor) else _promote(a, b)
    b = _as_tensor(b, a)
    _check_same_dtype("add", a, b)
    if a.shape != b.shape and b.data.ndim != 0 and a.data.ndim != 0:
        raise ShapeError(f"add: shape mismatch {a.shape} vs {b.shape}")
    data = a.data + b.data

    def vjp(g):
        ga = g if a.data.ndim else np.sum(g)
        gb = g if b.data.ndim else np.sum(g)
        return ga, gb

    return _result(data, (a, b), vjp, "add")


def _promote(x, other):
    if isinstance(other, Tensor):
        return Tensor(np.asarray(x, dtype=other.dtype))
    return Tensor(x)


def mul(a, b):
    a = a if isinstance(a, Tensor) else _promote(a, b)
    b = _as_tensor(b, a)
    _check_same_dtype("mul", a, b)
    if a.shape != b.shape and b.data.ndim != 0 and a.data.ndim != 0:
        raise ShapeError(f"mul: shape mismatch {a.shape} vs {b.shape}")
    data = a.data * b.data

    def vjp(g):
        ga = g * b.data
        gb = g * a.data
        if not a.data.ndim:
            ga = np.sum(ga)
        if not b.data.ndim:
            gb = np.sum(gb)
        return ga, gb

    return _result(data, (a, b), vjp, "mul")


def relu(x: Tensor):
    data = np.maximum(x.data, 0)

    def vjp(g):
        return ((x.data > 0).astype(x.dtype) * g,)

    return _result(data, (x,), vjp, "relu")


def reshape(x: Tensor, shape):
    shape = tuple(shape)
    try:
        data = x.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: cannot view {x.shape} as {shape}") from exc

    def vjp(g):
        return (g.reshape(x.data.shape),)

    return _result(data, (x,), vjp, "reshape")


def dense(x: Tensor, w: Tensor, b: Tensor | None = None):
    """Affine layer: (N, Din) @ (Din, Dout) + (Dout,)."""
    _check_same_dtype("dense", *( (x, w, b) if b is not None else (x, w) ))
    if x.data.ndim != 2 or w.data.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeError(f"dense: cannot multiply {x.shape} by {w.shape}")
    if b is not None and b.shape != (w.shape[1],):
        raise ShapeError(f"dense: bias shape {b.shape} != ({w.shape[1]},)")
    data = x.data @ w.data
    if b is not None:
        data = data + b.data

    def vjp(g):
        gx = g @ w.data.T
        gw = x.data.T @ g
        gb = g.sum(axis=0) if b is not None else None
        return (gx, gw, gb) if b is not None else (gx, gw)

    parents = (x, w, b) if b is not None else (x, w)
    return _result(data, parents, vjp, "dense")


def _conv_cols(x: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    # (N,H,W,C) -> (N,Ho,Wo,kh,kw,C) view of sliding windows
    win = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(1, 2))
    win = win[:, ::stride, ::stride]  # (N,Ho,Wo,C,kh,kw)
    return np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3))


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding: int = 0):
    """2-D convolution, NHWC layout, kernel (kh, kw, Cin, Cout)."""
    _check_same_dtype("conv2d", *( (x, w, b) if b is not None else (x, w) ))
    if x.data.ndim != 4:
        raise ShapeError(f"conv2d: input must be NHWC, got shape {x.shape}")
    if w.data.ndim != 4:
        raise ShapeError(f"conv2d: kernel must be (kh, kw, Cin, Cout), got {w.shape}")
    kh, kw, cin, cout = w.shape
    if x.shape[3] != cin:
        raise ShapeError(f"conv2d: input channels {x.shape[3]} != kernel channels {cin}")
    if stride < 1 or padding < 0:
        raise ShapeError(f"conv2d: invalid stride {stride} / padding {padding}")
    n, h, wid, _ = x.shape
    hp, wp = h + 2 * padding, wid + 2 * padding
    if hp < kh or wp < kw:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} larger than padded input {hp}x{wp}")
    if (hp - kh) % stride or (wp - kw) % stride:
        raise ShapeError(
            f"conv2d: size {hp}x{wp} minus kernel {kh}x{kw} not divisible by stride {stride}"
        )
    if b is not None and b.shape != (cout,):
        raise ShapeError(f"conv2d: bias shape {b.shape} != ({cout},)")

    xp = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding), (0, 0))) if padding else x.data
    cols = _conv_cols(xp, kh, kw, stride)  # (N,Ho,Wo,kh,kw,Cin)
    ho, wo = cols.shape[1], cols.shape[2]
    wmat = w.data.reshape(kh * kw * cin, cout)
    data = cols.reshape(n, ho, wo, -1) @ wmat
    if b is not None:
        data = data + b.data

    def vjp(g):
        gmat = g.reshape(-1, cout)
        gw = (cols.reshape(-1, kh * kw * cin).T @ gmat).reshape(w.data.shape)
        gcols = (gmat @ wmat.T).reshape(n, ho, wo, kh, kw, cin)
        gxp = np.zeros((n, hp, wp, cin), dtype=x.dtype)
        for i in range(kh):
            for j in range(kw):
                gxp[:, i : i + stride * ho : stride, j : j + stride * wo : stride, :] += gcols[:, :, :, i, j, :]
        gx = gxp[:, padding : hp - padding, padding : wp - padding, :] if padding else gxp
        gb = g.sum(axis=(0, 1, 2)) if b is not None else None
        return (gx, gw, gb) if b is not None else (gx, gw)

    parents = (x, w, b) if b is not None else (x, w)
    return _result(data, parents, vjp, "conv2d")


def _check_pool(opname, x, size, stride):
    if stride is None:
        stride = size
    if x.data.ndim != 4:
        raise ShapeError(f"{opname}: input must be NHWC, got shape {x.shape}")
    if size < 1 or stride != size:
        raise ShapeError(f"{opname}: only non-overlapping pooling (stride == size) is supported")
    if x.shape[1] % size or x.shape[2] % size:
        raise ShapeError(f"{opname}: spatial dims {x.shape[1]}x{x.shape[2]} not divisible by {size}")
    return stride


def max_pool2d(x: Tensor, size: int = 2, stride: int | None = None):
    stride = _check_pool("max_pool2d", x, size, stride)
    n, h, w, c = x.shape
    ho, wo = h // size, w // size
    xr = x.data.reshape(n, ho, size, wo, size, c).transpose(0, 1, 3, 5, 2, 4).reshape(n, ho, wo, c, size * size)
    idx = xr.argmax(axis=-1)  # first max wins on ties
    data = np.take_along_axis(xr, idx[..., None], axis=-1)[..., 0]

    def vjp(g):
        gwin = np.zeros((n, ho, wo, c, size * size), dtype=x.dtype)
        np.put_along_axis(gwin, idx[..., None], g[..., None], axis=-1)
        gx = gwin.reshape(n, ho, wo, c, size, size).transpose(0, 1, 4, 2, 5, 3).reshape(n, h, w, c)
        return (gx,)

    return _result(data, (x,), vjp, "max_pool2d")


def avg_pool2d(x: Tensor, size: int = 2, stride: int | None = None):
    stride = _check_pool("avg_pool2d", x, size, stride)
    n, h, w, c = x.shape
    ho, wo = h // size, w // size
    xr = x.data.reshape(n, ho, size, wo, size, c)
    data = xr.mean(axis=(2, 4))

    def vjp(g):
        gx = np.broadcast_to(
            g[:, :, None, :, None, :] / (size * size), (n, ho, size, wo, size, c)
        ).reshape(n, h, w, c).astype(x.dtype)
        return (gx,)

    return _result(data, (x,), vjp, "avg_pool2d")


def softmax(x: Tensor, axis: int = -1):
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    data = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        dot = (g * data).sum(axis=axis, keepdims=True)
        return (data * (g - dot),)

    return _result(data, (x,), vjp, "softmax")


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under the
    softmax of ``logits`` (computed from logits for stability)."""
    labels = np.asarray(labels)
    if logits.data.ndim != 2:
        raise ShapeError(f"cross_entropy: logits must be (N, k), got {logits.shape}")
    if labels.shape != (logits.shape[0],):
        raise ShapeError(f"cross_entropy: labels shape {labels.shape} != ({logits.shape[0]},)")
    n, k = logits.shape
    if labels.min() < 0 or labels.max() >= k:
        raise ShapeError(f"cross_entropy: labels out of range for {k} classes")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - lse
    data = np.asarray(-logp[np.arange(n), labels].mean(), dtype=logits.dtype)

    def vjp(g):
        probs = np.exp(logp)
        probs[np.arange(n), labels] -= 1.0
        return (probs * (np.asarray(g, dtype=logits.dtype) / n),)

    return _result(data, (logits,), vjp, "cross_entropy")


def gaussian_blur(x: Tensor, sigma: float):
    """Fixed-kernel separable Gaussian blur over the spatial axes of NHWC."""
    if x.data.ndim != 4:
        raise ShapeError(f"gaussian_blur: input must be NHWC, got shape {x.shape}")
    if sigma < 0:
        raise ShapeError(f"gaussian_blur: sigma must be >= 0, got {sigma}")
    data = imageops.gaussian_blur(x.data, sigma, spatial_axes=(1, 2))

    def vjp(g):
        return (imageops.gaussian_blur_adjoint(g, sigma, spatial_axes=(1, 2)),)

    return _result(data, (x,), vjp, "gaussian_blur")


# ---------------------------------------------------------------------------
# graph wrapper


class ComputeGraph:
    """One differentiable computation: a model function applied to an input.

    ``fn`` maps an input Tensor to an output Tensor using the primitives
    above; intermediates it names (``tensor.name = ...``) become
    retrievable activations.  A graph instance is single-threaded;
    independent instances may run concurrently over shared frozen
    parameters.
    """

    def __init__(self, fn, input_shape, dtype=DEFAULT_DTYPE):
        self.fn = fn
        self.input_shape = tuple(input_shape)
        self.dtype = np.dtype(dtype)
        self._input: Tensor | None = None
        self._output: Tensor | None = None
        self._nodes: list[Tensor] | None = None
        self._grads: dict[int, np.ndarray] | None = None

    def forward(self, x, requires_input_grad: bool = True) -> Tensor:
        """Run the forward pass; retains all intermediates for backward."""
        if isinstance(x, Tensor):
            inp = x
        else:
            arr = np.asarray(x, dtype=self.dtype)
            if arr.shape == self.input_shape:
                arr = arr[None]
            inp = Tensor(arr, requires_grad=requires_input_grad, dtype=self.dtype)
        if inp.data.shape[1:] != self.input_shape:
            raise ShapeError(
                f"graph input: per-sample shape {inp.data.shape[1:]} != declared {self.input_shape}"
            )
        inp.name = "input"
        self._input = inp
        self._output = self.fn(inp)
        self._nodes = topo_order(self._output)
        self._grads = None
        return self._output

    @property
    def output(self) -> Tensor:
        if self._output is None:
            raise GraphStateError("graph has not run forward yet")
        return self._output

    @property
    def input(self) -> Tensor:
        if self._input is None:
            raise GraphStateError("graph has not run forward yet")
        return self._input

    @property
    def nodes(self) -> list[Tensor]:
        """Topologically ordered nodes of the last forward pass."""
        if self._nodes is None:
            raise GraphStateError("graph has not run forward yet")
        return self._nodes

    def backward(self, seed=None, write_tensor_grads: bool = True) -> None:
        """Populate gradients for every requires_grad tensor and retained
        intermediate.  ``seed`` defaults to ones over the output shape."""
        if self._output is None:
            raise GraphStateError("backward called before forward")
        if seed is None:
            seed = np.ones_like(self._output.data)
        self._grads = backprop(self._output, seed, write_tensor_grads=write_tensor_grads)

    def activation(self, name: str) -> Tensor:
        for node in self.nodes:
            if node.name == name:
                return node
        raise GraphError(f"no activation named {name!r} in this graph")

    def grad_wrt(self, target) -> np.ndarray:
        """Gradient of the seeded output w.r.t. a tensor or named activation."""
        if self._grads is None:
            raise GraphStateError("grad_wrt called before backward")
        node = self.activation(target) if isinstance(target, str) else target
        g = self._grads.get(id(node))
        if g is None:
            raise GraphError(f"no gradient recorded for {node!r}")
        return g

    @property
    def input_grad(self) -> np.ndarray:
        return self.grad_wrt(self.input)
