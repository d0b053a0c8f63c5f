"""Dense tensors with reverse-mode autodiff for the small layer set a
root-segmentation U-Net needs: 3x3 same-padded conv, 1x1 conv, ReLU,
2x2 max-pool, 2x2 stride-2 transpose conv, channel concat, sigmoid and
a class-weighted binary cross-entropy, plus SGD with classical momentum.

Forward passes are deterministic (fixed accumulation order per output
element); two runs on identical inputs are bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class ShapeError(ValueError):
    """Raised when tensor shapes are incompatible for an operation."""


class UsageError(RuntimeError):
    """Raised on API misuse, e.g. stepping a parameter with no gradient."""


class ValidationError(ValueError):
    """Raised when input values violate an operation's preconditions."""


class Tensor:
    """A dense numpy array with an optional gradient slot and a backward tape.

    Gradients are accumulated by `backward()` in reverse topological order.
    Only tensors created with requires_grad=True (or derived from one)
    participate in the tape.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def backward(self, seed_grad=None):
        """Accumulate gradients of this (scalar) tensor w.r.t. the tape."""
        if seed_grad is None:
            if self.data.ndim != 0:
                raise UsageError("backward() without seed_grad requires a scalar")
            seed_grad = np.ones((), dtype=self.data.dtype)
        # iterative topo sort (training graphs are deep enough to overflow
        # the recursion limit)
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
                if id(p) not in visited:
                    stack.append((p, False))
        self._accum(np.asarray(seed_grad))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def _accum(self, g: np.ndarray):
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad += g

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


def _result(data: np.ndarray, parents, backward) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def _check_finite(name: str, a: np.ndarray):
    if not np.all(np.isfinite(a)):
        raise ValidationError(f"{name} contains non-finite values")


# ---------------------------------------------------------------------------
# convolution


def conv2d(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """3x3 convolution with zero padding 1 (same-size output)."""
    xd, wd, bd = x.data, weight.data, bias.data
    if wd.ndim != 4 or wd.shape[2:] != (3, 3):
        raise ShapeError(f"conv2d expects a (Cout,Cin,3,3) kernel, got {wd.shape}")
    if xd.ndim != 4:
        raise ShapeError(f"conv2d expects NCHW input, got {xd.shape}")
    if xd.shape[1] != wd.shape[1]:
        raise ShapeError(
            f"channel mismatch: input {xd.shape} has Cin={xd.shape[1]}, "
            f"kernel {wd.shape} expects Cin={wd.shape[1]}"
        )
    n, cin, h, w = xd.shape
    cout = wd.shape[0]
    xpad = np.pad(xd, ((0, 0), (0, 0), (1, 1), (1, 1)))
    # Nine shifted-window contractions instead of one im2col GEMM: same
    # result, but the tape only has to retain xpad (not a 9x patch matrix),
    # which keeps full-frame inference inside a few GB.
    y = np.zeros((n, cout, h, w), dtype=np.result_type(xd, wd))
    for dy in range(3):
        for dx in range(3):
            y += np.einsum(
                "oi,nihw->nohw", wd[:, :, dy, dx], xpad[:, :, dy : dy + h, dx : dx + w], optimize=True
            )
    y += bd.reshape(1, cout, 1, 1)

    def backward(g):
        if weight.requires_grad:
            gw = np.empty_like(wd)
            for dy in range(3):
                for dx in range(3):
                    gw[:, :, dy, dx] = np.einsum(
                        "nohw,nihw->oi", g, xpad[:, :, dy : dy + h, dx : dx + w], optimize=True
                    )
            weight._accum(gw)
        if bias.requires_grad:
            bias._accum(g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            gxp = np.zeros_like(xpad)
            for dy in range(3):
                for dx in range(3):
                    gxp[:, :, dy : dy + h, dx : dx + w] += np.einsum(
                        "oi,nohw->nihw", wd[:, :, dy, dx], g, optimize=True
                    )
            x._accum(gxp[:, :, 1 : h + 1, 1 : w + 1])

    return _result(y, (x, weight, bias), backward)


def conv1x1(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Per-pixel linear map across channels."""
    xd, wd, bd = x.data, weight.data, bias.data
    if wd.ndim != 4 or wd.shape[2:] != (1, 1):
        raise ShapeError(f"conv1x1 expects a (Cout,Cin,1,1) kernel, got {wd.shape}")
    if xd.shape[1] != wd.shape[1]:
        raise ShapeError(
            f"channel mismatch: input {xd.shape} has Cin={xd.shape[1]}, "
            f"kernel {wd.shape} expects Cin={wd.shape[1]}"
        )
    wmat = wd[:, :, 0, 0]  # (Cout,Cin)
    out = np.tensordot(xd, wmat, axes=([1], [1]))  # (N,H,W,Cout)
    out += bd
    y = np.ascontiguousarray(out.transpose(0, 3, 1, 2))

    def backward(g):
        if weight.requires_grad:
            gw = np.tensordot(g, xd, axes=([0, 2, 3], [0, 2, 3]))  # (Cout,Cin)
            weight._accum(gw[:, :, None, None])
        if bias.requires_grad:
            bias._accum(g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            x._accum(np.tensordot(g, wmat, axes=([1], [0])).transpose(0, 3, 1, 2))

    return _result(y, (x, weight, bias), backward)


def relu(x: Tensor) -> Tensor:
    """Elementwise max(0, x); subgradient at 0 is 0."""
    mask = x.data > 0
    y = np.where(mask, x.data, x.data.dtype.type(0))

    def backward(g):
        if x.requires_grad:
            x._accum(np.where(mask, g, g.dtype.type(0)))

    return _result(y, (x,), backward)


def maxpool2(x: Tensor):
    """2x2 max pooling with stride 2.

    Returns (pooled tensor, argmax record). Ties go to the first index in
    row-major window order. Gradient is routed to the argmax only.
    """
    n, c, h, w = x.data.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2 requires even spatial dims, got H={h}, W={w}")
    h2, w2 = h // 2, w // 2
    win = x.data.reshape(n, c, h2, 2, w2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h2, w2, 4)
    idx = win.argmax(axis=-1)  # first max on ties
    y = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        if x.requires_grad:
            gwin = np.zeros((n, c, h2, w2, 4), dtype=g.dtype)
            np.put_along_axis(gwin, idx[..., None], g[..., None], axis=-1)
            gx = gwin.reshape(n, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
            x._accum(gx)

    return _result(y, (x,), backward), idx


def transpose_conv2(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """2x2 stride-2 transposed convolution: doubles the spatial dims.

    Adjoint of a stride-2 2x2 convolution. Kernel layout is (Cin,Cout,2,2).
    """
    xd, wd, bd = x.data, weight.data, bias.data
    if wd.ndim != 4 or wd.shape[2:] != (2, 2):
        raise ShapeError(f"transpose_conv2 expects a (Cin,Cout,2,2) kernel, got {wd.shape}")
    if xd.shape[1] != wd.shape[0]:
        raise ShapeError(
            f"channel mismatch: input {xd.shape} has Cin={xd.shape[1]}, "
            f"kernel {wd.shape} expects Cin={wd.shape[0]}"
        )
    n, cin, h, w = xd.shape
    cout = wd.shape[1]
    t = np.tensordot(xd, wd, axes=([1], [0]))  # (N,H,W,Cout,2,2)
    y = np.empty((n, cout, 2 * h, 2 * w), dtype=t.dtype)
    for dy in range(2):
        for dx in range(2):
            y[:, :, dy::2, dx::2] = t[:, :, :, :, dy, dx].transpose(0, 3, 1, 2)
    y += bd[:, None, None]

    def backward(g):
        gt = np.empty((n, h, w, cout, 2, 2), dtype=g.dtype)
        for dy in range(2):
            for dx in range(2):
                gt[:, :, :, :, dy, dx] = g[:, :, dy::2, dx::2].transpose(0, 2, 3, 1)
        if weight.requires_grad:
            weight._accum(np.tensordot(xd, gt, axes=([0, 2, 3], [0, 1, 2])))
        if bias.requires_grad:
            bias._accum(g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            gx = np.tensordot(gt, wd, axes=([3, 4, 5], [1, 2, 3]))  # (N,H,W,Cin)
            x._accum(np.ascontiguousarray(gx.transpose(0, 3, 1, 2)))

    return _result(y, (x, weight, bias), backward)


def strided_conv2(x: Tensor, weight: Tensor) -> Tensor:
    """2x2 stride-2 convolution, no padding or bias (adjoint-test partner
    of transpose_conv2). Kernel layout (Cin,Cout,2,2); maps Cout -> Cin."""
    xd, wd = x.data, weight.data
    n, cout, h, w = xd.shape
    if h % 2 or w % 2:
        raise ShapeError(f"strided_conv2 requires even dims, got H={h}, W={w}")
    if cout != wd.shape[1]:
        raise ShapeError(f"channel mismatch: input {xd.shape} vs kernel {wd.shape}")
    cin = wd.shape[0]
    acc = np.zeros((n, h // 2, w // 2, cin), dtype=xd.dtype)
    for dy in range(2):
        for dx in range(2):
            acc += np.tensordot(xd[:, :, dy::2, dx::2], wd[:, :, dy, dx], axes=([1], [1]))
    y = np.ascontiguousarray(acc.transpose(0, 3, 1, 2))

    def backward(g):
        if x.requires_grad:
            gx = np.empty_like(xd)
            for dy in range(2):
                for dx in range(2):
                    gx[:, :, dy::2, dx::2] = np.tensordot(
                        g, wd[:, :, dy, dx], axes=([1], [0])
                    ).transpose(0, 3, 1, 2)
            x._accum(gx)
        if weight.requires_grad:
            gw = np.empty_like(wd)
            for dy in range(2):
                for dx in range(2):
                    gw[:, :, dy, dx] = np.tensordot(g, xd[:, :, dy::2, dx::2], axes=([0, 2, 3], [0, 2, 3]))
            weight._accum(gw)

    return _result(y, (x, weight), backward)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate along the channel axis; backward splits the gradient."""
    ad, bd = a.data, b.data
    if ad.shape[0] != bd.shape[0] or ad.shape[2:] != bd.shape[2:]:
        raise ShapeError(f"concat_channels spatial/batch mismatch: {ad.shape} vs {bd.shape}")
    ca = ad.shape[1]
    y = np.concatenate([ad, bd], axis=1)

    def backward(g):
        if a.requires_grad:
            a._accum(g[:, :ca])
        if b.requires_grad:
            b._accum(g[:, ca:])

    return _result(y, (a, b), backward)


def sigmoid(x: Tensor) -> Tensor:
    """Numerically stable elementwise logistic function."""
    xd = x.data
    y = np.empty_like(xd)
    pos = xd >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-xd[pos]))
    ex = np.exp(xd[~pos])
    y[~pos] = ex / (1.0 + ex)

    def backward(g):
        if x.requires_grad:
            x._accum(g * y * (1.0 - y))

    return _result(y, (x,), backward)


def weighted_bce(logits: Tensor, target, pos_weight: float = 1.0) -> Tensor:
    """Mean binary cross-entropy over all pixels, positive term scaled by
    pos_weight, computed in log-sum-exp stable form from logits."""
    t = target.data if isinstance(target, Tensor) else np.asarray(target)
    z = logits.data
    if t.shape != z.shape:
        raise ShapeError(f"target shape {t.shape} != logits shape {z.shape}")
    if not np.all((t == 0) | (t == 1)):
        raise ValidationError("weighted_bce target must be binary (0/1)")
    if pos_weight <= 0:
        raise ValidationError("pos_weight must be positive")
    t = t.astype(z.dtype)
    # softplus(z) = log(1 + e^z), stable for large |z|
    sp_pos = np.logaddexp(z.dtype.type(0), -z)  # -log sigmoid(z)
    sp_neg = np.logaddexp(z.dtype.type(0), z)  # -log(1 - sigmoid(z))
    per_pixel = pos_weight * t * sp_pos + (1.0 - t) * sp_neg
    npix = z.size
    loss = per_pixel.sum(dtype=z.dtype) / z.dtype.type(npix)

    def backward(g):
        if logits.requires_grad:
            s = 1.0 / (1.0 + np.exp(-np.clip(z, -700, 700)))
            gz = (pos_weight * t * (s - 1.0) + (1.0 - t) * s) * (g / npix)
            logits._accum(gz.astype(z.dtype))

    return _result(np.asarray(loss), (logits,), backward)


# ---------------------------------------------------------------------------
# classifier-head primitives (used by the pre-training surrogate)


def global_avg_pool(x: Tensor) -> Tensor:
    """(N,C,H,W) -> (N,C) spatial mean."""
    n, c, h, w = x.data.shape
    y = x.data.mean(axis=(2, 3))

    def backward(g):
        if x.requires_grad:
            x._accum(np.broadcast_to(g[:, :, None, None] / (h * w), x.data.shape).astype(g.dtype))

    return _result(y, (x,), backward)


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """(N,F) @ (K,F)^T + (K,)."""
    if x.data.shape[1] != weight.data.shape[1]:
        raise ShapeError(f"linear: input {x.data.shape} vs weight {weight.data.shape}")
    y = x.data @ weight.data.T + bias.data

    def backward(g):
        if weight.requires_grad:
            weight._accum(g.T @ x.data)
        if bias.requires_grad:
            bias._accum(g.sum(axis=0))
        if x.requires_grad:
            x._accum(g @ weight.data)

    return _result(y, (x, weight, bias), backward)


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean softmax cross-entropy; labels are integer class ids (N,)."""
    z = logits.data
    n = z.shape[0]
    labels = np.asarray(labels)
    zmax = z.max(axis=1, keepdims=True)
    lse = zmax[:, 0] + np.log(np.exp(z - zmax).sum(axis=1))
    loss = (lse - z[np.arange(n), labels]).sum(dtype=z.dtype) / z.dtype.type(n)

    def backward(g):
        if logits.requires_grad:
            p = np.exp(z - zmax)
            p /= p.sum(axis=1, keepdims=True)
            p[np.arange(n), labels] -= 1.0
            logits._accum(p * (g / n))

    return _result(np.asarray(loss), (logits,), backward)


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class OptState:
    """Velocity buffer plus hyperparameters for SGD with classical momentum."""

    lr: float
    momentum: float = 0.0
    velocity: np.ndarray | None = field(default=None)

    def __post_init__(self):
        if self.lr <= 0:
            raise ValidationError(f"lr must be positive, got {self.lr}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValidationError(f"momentum must be in [0,1), got {self.momentum}")


def sgd_momentum_step(param: Tensor, state: OptState) -> Tensor:
    """v <- momentum*v + grad; param <- param - lr*v; grad cleared."""
    if param.grad is None:
        raise UsageError("sgd_momentum_step: parameter has no gradient")
    if state.velocity is None:
        state.velocity = np.zeros_like(param.data)
    state.velocity *= param.data.dtype.type(state.momentum)
    state.velocity += param.grad
    param.data -= param.data.dtype.type(state.lr) * state.velocity
    param.grad = None
    return param


# ---------------------------------------------------------------------------
# gradient checking


def grad_check(fn, inputs, eps: float = 1e-4, rng=None, max_coords: int = 64) -> float:
    """Max relative error between analytic and central-difference gradients.

    `fn` maps the given Tensors to a single output Tensor; the check is run
    on a random linear functional of that output so one backward pass covers
    every output element. Inputs should be float64 for meaningful bounds.
    Returns the max relative error over sampled input coordinates.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    out = fn(*inputs)
    proj = rng.standard_normal(out.data.shape)
    for t in inputs:
        t.zero_grad()
    out.backward(seed_grad=proj.astype(out.data.dtype) if out.data.ndim else np.asarray(1.0))
    if out.data.ndim == 0:
        proj = np.asarray(1.0)

    def scalar_of():
        o = fn(*inputs)
        return float((o.data * proj).sum())

    worst = 0.0
    for t in inputs:
        if not t.requires_grad:
            continue
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        n = flat.size
        coords = np.arange(n) if n <= max_coords else rng.choice(n, size=max_coords, replace=False)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + eps
            fp = scalar_of()
            flat[i] = orig - eps
            fm = scalar_of()
            flat[i] = orig
            numeric = (fp - fm) / (2 * eps)
            a = analytic.reshape(-1)[i]
            denom = max(abs(a), abs(numeric), 1.0)
            worst = max(worst, abs(a - numeric) / denom)
    return worst
