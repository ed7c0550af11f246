"""A small reverse-mode autodiff engine on numpy arrays.

Only the primitives the chained cell networks need are provided: 2-d
convolution with same padding, linear layers, ReLU, 2x2 max pooling, global
average pooling, elementwise addition, scaling by a constant or by a scalar
node, softmax, cross entropy, the max norm, and a straight-through estimator.
There is no general broadcasting.

Every node checks its forward value for NaN/Inf and raises
:class:`~fade.errors.NumericError`.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import NumericError, ShapeError


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 _parents: tuple = (), _backward=None):
        data = np.asarray(data)
        if data.dtype.kind != "f":
            data = data.astype(np.float64)
        if not np.isfinite(data).all():
            raise NumericError(f"non-finite values in {name or 'tensor'}")
        self.data = data
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def _accumulate(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into ``.grad`` of every leaf that requires it."""
        if grad is None:
            if self.data.size != 1:
                raise ShapeError("backward() without a seed needs a scalar output")
            grad = np.ones_like(self.data)
        topo, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        grads = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node._accumulate(g)
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if id(parent) in grads:
                    grads[id(parent)] = grads[id(parent)] + pg
                else:
                    grads[id(parent)] = pg

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __getitem__(self, index):
        return select(self, index)


def _node(data, parents, backward, name=None) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=needs, name=name,
                  _parents=tuple(parents) if needs else (),
                  _backward=backward if needs else None)


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)


# --- elementwise ------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add: {a.shape} vs {b.shape}")
    return _node(a.data + b.data, (a, b), lambda g: (g, g), "add")


def add_all(terms) -> Tensor:
    terms = list(terms)
    out = terms[0]
    for t in terms[1:]:
        out = add(out, t)
    return out


def mul(a: Tensor, s) -> Tensor:
    """Scale ``a`` by a python number or by a scalar (size-1) tensor."""
    if isinstance(s, Tensor):
        if s.data.size != 1:
            raise ShapeError(f"mul expects a scalar tensor, got shape {s.shape}")
        sv = s.data.reshape(())

        def back(g):
            return g * sv, np.reshape(np.sum(g * a.data), s.shape)

        return _node(a.data * sv, (a, s), back, "mul")
    s = float(s)
    return _node(a.data * s, (a,), lambda g: (g * s,), "scale")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _node(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,), "relu")


def select(x: Tensor, index) -> Tensor:
    out = x.data[index]

    def back(g):
        full = np.zeros_like(x.data)
        np.add.at(full, index, g)
        return (full,)

    return _node(np.array(out), (x,), back, "select")


def reshape(x: Tensor, shape) -> Tensor:
    return _node(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),), "reshape")


def straight_through(forward_value: np.ndarray, x: Tensor) -> Tensor:
    """Forward ``forward_value``; pass gradients to ``x`` unchanged."""
    forward_value = np.asarray(forward_value, dtype=x.data.dtype)
    if forward_value.shape != x.shape:
        raise ShapeError("straight_through: shape mismatch")
    return _node(forward_value, (x,), lambda g: (g,), "straight_through")


# --- reductions and losses --------------------------------------------------


def softmax(x: Tensor) -> Tensor:
    """Softmax along the last axis."""
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return _node(s, (x,), back, "softmax")


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean cross entropy of ``(N, K)`` logits against integer labels."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.data.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"cross_entropy: logits {logits.shape}, labels {labels.shape}")
    n = logits.shape[0]
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logsum
    loss = -logp[np.arange(n), labels].mean()

    def back(g):
        p = np.exp(logp)
        p[np.arange(n), labels] -= 1.0
        return (p * (g / n),)

    return _node(np.array(loss), (logits,), back, "cross_entropy")


def max_norm(x: Tensor) -> Tensor:
    """``max |x_i|``; the subgradient goes to the first maximizing entry."""
    flat = np.abs(x.data).ravel()
    k = int(np.argmax(flat))
    sign = 1.0 if x.data.ravel()[k] >= 0 else -1.0

    def back(g):
        out = np.zeros(x.data.size, dtype=x.data.dtype)
        out[k] = sign * g
        return (out.reshape(x.shape),)

    return _node(np.array(flat[k]), (x,), back, "max_norm")


def global_avg_pool(x: Tensor) -> Tensor:
    n, c, h, w = x.shape

    def back(g):
        return (np.broadcast_to(g[:, :, None, None] / (h * w), x.shape).copy(),)

    return _node(x.data.mean(axis=(2, 3)), (x,), back, "gap")


# --- layers ----------------------------------------------------------------


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ w + b`` with ``x`` of shape (N, in) and ``w`` of shape (in, out)."""
    if x.data.ndim != 2 or w.data.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeError(f"linear: {x.shape} @ {w.shape}")
    if b is not None and b.shape != (w.shape[1],):
        raise ShapeError(f"linear bias {b.shape}")
    out = x.data @ w.data
    if b is not None:
        out = out + b.data
        parents = (x, w, b)
    else:
        parents = (x, w)

    def back(g):
        grads = (g @ w.data.T, x.data.T @ g)
        return grads + (g.sum(axis=0),) if b is not None else grads

    return _node(out, parents, back, "linear")


def _im2col(xp: np.ndarray, k: int, stride: int) -> tuple[np.ndarray, int, int]:
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    n, c, ho, wo = win.shape[:4]
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * k * k), ho, wo


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1) -> Tensor:
    """2-d cross-correlation with 'same' zero padding.

    ``x`` is (N, C, H, W), ``w`` is (O, C, k, k) with odd ``k``.  The output
    is (N, O, ceil(H/stride), ceil(W/stride)).
    """
    if x.data.ndim != 4 or w.data.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv2d: input {x.shape}, kernel {w.shape}")
    o, c, k, kw = w.shape
    if k != kw or k % 2 == 0:
        raise ShapeError("conv2d needs a square kernel of odd size")
    if b is not None and b.shape != (o,):
        raise ShapeError(f"conv2d bias {b.shape}")
    n, _, h, wd = x.shape
    p = k // 2
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p)))
    cols, ho, wo = _im2col(xp, k, stride)
    wmat = w.data.reshape(o, -1)
    out = cols @ wmat.T
    if b is not None:
        out += b.data
    out = out.reshape(n, ho, wo, o).transpose(0, 3, 1, 2)
    parents = (x, w) if b is None else (x, w, b)

    def back(g):
        gm = g.transpose(0, 2, 3, 1).reshape(n * ho * wo, o)
        gw = (gm.T @ cols).reshape(w.shape)
        gx = None
        if x.requires_grad and stride == 1:
            # same-padded correlation with the flipped, channel-transposed kernel
            gp = np.pad(g, ((0, 0), (0, 0), (p, p), (p, p)))
            gcols, _, _ = _im2col(gp, k, 1)
            wflip = w.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3).reshape(c, -1)
            gx = (gcols @ wflip.T).reshape(n, h, wd, c).transpose(0, 3, 1, 2)
        elif x.requires_grad:
            dcols = (gm @ wmat).reshape(n, ho, wo, c, k, k)
            gxp = np.zeros_like(xp)
            for i in range(k):
                for j in range(k):
                    gxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += \
                        dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            gx = gxp[:, :, p:p + h, p:p + wd]
        grads = (gx, gw)
        return grads + (gm.sum(axis=0),) if b is not None else grads

    return _node(np.ascontiguousarray(out), parents, back, "conv2d")


def max_pool2d(x: Tensor) -> Tensor:
    """2x2 max pooling with stride 2; odd trailing rows/columns are dropped.

    Ties inside a window go to the first position in row-major order.
    """
    n, c, h, w = x.shape
    h2, w2 = h // 2, w // 2
    if h2 == 0 or w2 == 0:
        raise ShapeError(f"max_pool2d: feature map {h}x{w} too small")
    xc = x.data[:, :, :2 * h2, :2 * w2]
    blocks = xc.reshape(n, c, h2, 2, w2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h2, w2, 4)
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

    def back(g):
        gb = np.zeros_like(blocks)
        np.put_along_axis(gb, arg[..., None], g[..., None], axis=-1)
        gx = np.zeros_like(x.data)
        gx[:, :, :2 * h2, :2 * w2] = gb.reshape(n, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, 2 * h2, 2 * w2)
        return (gx,)

    return _node(out, (x,), back, "max_pool2d")


def channel_repeat(x: Tensor, times: int) -> Tensor:
    """Concatenate ``times`` copies of ``x`` along the channel axis."""
    c = x.shape[1]

    def back(g):
        return (g.reshape(g.shape[0], times, c, *g.shape[2:]).sum(axis=1),)

    return _node(np.concatenate([x.data] * times, axis=1), (x,), back, "channel_repeat")


# --- optimisation ----------------------------------------------------------


@dataclass
class AdamState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    beta1: float = 0.1
    beta2: float = 1e-3
    lr: float = 1e-3
    eps: float = 1e-8
    weight_decay: float = 1e-4

    @classmethod
    def like(cls, param: np.ndarray, **hyper) -> "AdamState":
        return cls(np.zeros_like(param), np.zeros_like(param), **hyper)


def adam_step(param: np.ndarray, grad: np.ndarray, state: AdamState) -> np.ndarray:
    """One bias-corrected Adam step with decoupled weight decay.

    Updates ``state`` in place and returns the new parameter array.
    """
    if param.shape != grad.shape or param.shape != state.first_moment.shape:
        raise ShapeError(f"adam_step: param {param.shape}, grad {grad.shape}")
    state.step_count += 1
    t = state.step_count
    state.first_moment = state.beta1 * state.first_moment + (1 - state.beta1) * grad
    state.second_moment = state.beta2 * state.second_moment + (1 - state.beta2) * grad * grad
    m_hat = state.first_moment / (1 - state.beta1 ** t)
    v_hat = state.second_moment / (1 - state.beta2 ** t)
    decayed = param * (1 - state.lr * state.weight_decay)
    return decayed - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


@dataclass
class Adam:
    """Adam over a dict of named parameter tensors; tensors without a gradient are skipped."""

    beta1: float = 0.1
    beta2: float = 1e-3
    lr: float = 1e-3
    eps: float = 1e-8
    weight_decay: float = 1e-4
    states: dict[str, AdamState] = field(default_factory=dict)

    def step(self, params: dict[str, Tensor]):
        for name, p in params.items():
            if p.grad is None:
                continue
            st = self.states.get(name)
            if st is None:
                st = self.states[name] = AdamState.like(
                    p.data, beta1=self.beta1, beta2=self.beta2, lr=self.lr,
                    eps=self.eps, weight_decay=self.weight_decay)
            p.data = adam_step(p.data, p.grad, st)


def clip_gradients(params, clip_value: float) -> None:
    if clip_value <= 0:
        raise ValueError("clip_value must be positive")
    for p in params:
        if p.grad is not None:
            np.clip(p.grad, -clip_value, clip_value, out=p.grad)


def zero_grads(params) -> None:
    for p in params:
        p.grad = None


# --- random initialisation -------------------------------------------------


def kaiming_init(shape, fan_in: int, rng: np.random.Generator) -> np.ndarray:
    if fan_in < 1:
        raise ValueError("fan_in must be >= 1")
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)


def gumbel_sample(shape, rng: np.random.Generator) -> np.ndarray:
    tiny = np.finfo(np.float64).tiny
    u = np.clip(rng.random(shape), tiny, 1.0 - np.finfo(np.float64).epsneg)
    return -np.log(-np.log(u))


# --- checkpoints -----------------------------------------------------------


def save_weights(arrays: dict[str, np.ndarray], path) -> None:
    """Write ``path`` (raw little-endian float64) and ``path.json`` (name, shape, offset)."""
    path = Path(path)
    manifest, offset = [], 0
    with open(path, "wb") as f:
        for name, arr in arrays.items():
            buf = np.ascontiguousarray(arr, dtype="<f8").tobytes()
            f.write(buf)
            manifest.append({"name": name, "shape": list(arr.shape), "offset": offset})
            offset += len(buf)
    Path(str(path) + ".json").write_text(json.dumps({"dtype": "float64-le", "tensors": manifest}, indent=1))


def load_weights(path) -> dict[str, np.ndarray]:
    path = Path(path)
    manifest = json.loads(Path(str(path) + ".json").read_text())
    raw = path.read_bytes()
    out = {}
    for entry in manifest["tensors"]:
        count = int(np.prod(entry["shape"], dtype=np.int64))
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=entry["offset"])
        out[entry["name"]] = arr.reshape(entry["shape"]).astype(np.float64)
    return out
