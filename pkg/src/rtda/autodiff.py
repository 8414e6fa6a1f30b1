"""Reverse-mode automatic differentiation over dense float64 tensors.

Define-by-run: every op records a backward closure on its output, and
``Tensor.backward()`` topologically sorts the recorded graph and runs the
closures.  The graph is rebuilt on every forward pass, so nested uses
(input gradients for an attack inside a training step that later needs
parameter gradients) never share state.

Gradients accumulate into ``.grad``; call ``zero_grad`` between steps.
Branches whose leaves have ``requires_grad=False`` are pruned at record
time, which is what makes frozen-parameter attack passes cheap.
"""

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import ConfigError, DataError, ShapeError, UsageError


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_prev", "_backward")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = None
        self._prev = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data.copy())

    def zero_grad(self):
        self.grad = None

    def backward(self):
        if self.data.shape != ():
            raise UsageError(
                f"backward requires a scalar loss, got shape {self.data.shape}"
            )
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for child in node._prev:
                if id(child) not in visited:
                    stack.append((child, False))
        self.grad = np.asarray(1.0)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward()

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, _wrap(other))

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, _wrap(other))

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def __sub__(self, other):
        return add(self, -_wrap(other))

    def __rsub__(self, other):
        return add(_wrap(other), -self)


def _wrap(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _accumulate(t, g):
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _make(data, parents, backward):
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._prev = tuple(parents)
        out._backward = backward
    return out


# ---------------------------------------------------------------------------
# elementwise and reduction ops


def add(a, b):
    if a.data.shape != b.data.shape and a.data.shape != () and b.data.shape != ():
        raise ShapeError(f"add: shapes {a.data.shape} and {b.data.shape} differ")
    out_data = a.data + b.data

    def backward():
        g = out.grad
        if a.requires_grad:
            _accumulate(a, g if a.data.shape == g.shape else g.sum())
        if b.requires_grad:
            _accumulate(b, g if b.data.shape == g.shape else g.sum())

    out = _make(out_data, (a, b), backward)
    return out


def mul(a, b):
    if a.data.shape != b.data.shape and a.data.shape != () and b.data.shape != ():
        raise ShapeError(f"mul: shapes {a.data.shape} and {b.data.shape} differ")
    out_data = a.data * b.data

    def backward():
        g = out.grad
        if a.requires_grad:
            ga = g * b.data
            _accumulate(a, ga if a.data.shape == ga.shape else ga.sum())
        if b.requires_grad:
            gb = g * a.data
            _accumulate(b, gb if b.data.shape == gb.shape else gb.sum())

    out = _make(out_data, (a, b), backward)
    return out


def tsum(a):
    out_data = a.data.sum()

    def backward():
        if a.requires_grad:
            _accumulate(a, np.full_like(a.data, out.grad))

    out = _make(out_data, (a,), backward)
    return out


def tmean(a):
    n = a.data.size
    out_data = a.data.mean()

    def backward():
        if a.requires_grad:
            _accumulate(a, np.full_like(a.data, out.grad / n))

    out = _make(out_data, (a,), backward)
    return out


def texp(a):
    out_data = np.exp(a.data)

    def backward():
        if a.requires_grad:
            _accumulate(a, out.grad * out_data)

    out = _make(out_data, (a,), backward)
    return out


def tlog(a):
    out_data = np.log(a.data)

    def backward():
        if a.requires_grad:
            _accumulate(a, out.grad / a.data)

    out = _make(out_data, (a,), backward)
    return out


def clamp_min(a, floor):
    """max(a, floor) elementwise; gradient is zero where the floor binds."""
    out_data = np.maximum(a.data, floor)
    mask = a.data > floor

    def backward():
        if a.requires_grad:
            _accumulate(a, out.grad * mask)

    out = _make(out_data, (a,), backward)
    return out


def relu(a):
    out_data = np.maximum(a.data, 0.0)
    mask = a.data > 0.0  # subgradient at 0 is 0

    def backward():
        if a.requires_grad:
            _accumulate(a, out.grad * mask)

    out = _make(out_data, (a,), backward)
    return out


def reshape(a, shape):
    out_data = a.data.reshape(shape)

    def backward():
        if a.requires_grad:
            _accumulate(a, out.grad.reshape(a.data.shape))

    out = _make(out_data, (a,), backward)
    return out


# ---------------------------------------------------------------------------
# layer ops


def affine(x, w, b):
    """x[B,I] @ w[I,O] + b[O]."""
    if x.ndim != 2 or w.ndim != 2:
        raise ShapeError(
            f"affine: expected 2-d input and weight, got {x.shape} and {w.shape}"
        )
    if x.shape[1] != w.shape[0]:
        raise ShapeError(
            f"affine: input axis 1 ({x.shape[1]}) != weight axis 0 ({w.shape[0]})"
        )
    if b.shape != (w.shape[1],):
        raise ShapeError(
            f"affine: bias axis 0 ({b.shape}) != weight axis 1 ({w.shape[1]})"
        )
    out_data = x.data @ w.data + b.data

    def backward():
        g = out.grad
        if x.requires_grad:
            _accumulate(x, g @ w.data.T)
        if w.requires_grad:
            _accumulate(w, x.data.T @ g)
        if b.requires_grad:
            _accumulate(b, g.sum(axis=0))

    out = _make(out_data, (x, w, b), backward)
    return out


def conv2d(x, k, bias=None, stride=1, padding=0):
    """Cross-correlation of x[B,C,H,W] with k[F,C,KH,KW], optional bias[F]."""
    if x.ndim != 4 or k.ndim != 4:
        raise ShapeError(f"conv2d: expected 4-d tensors, got {x.shape} and {k.shape}")
    bsz, c, h, w = x.shape
    f, ck, kh, kw = k.shape
    if c != ck:
        raise ShapeError(f"conv2d: input channels {c} != kernel channels {ck}")
    ho, rh = divmod(h + 2 * padding - kh, stride)
    wo, rw = divmod(w + 2 * padding - kw, stride)
    ho += 1
    wo += 1
    if rh != 0 or rw != 0 or ho <= 0 or wo <= 0:
        raise ConfigError(
            "conv2d",
            f"output size for input {h}x{w}, kernel {kh}x{kw}, "
            f"stride {stride}, padding {padding} is not a positive integer",
        )
    out_data = _kernels.conv2d_forward(x.data, k.data, stride, padding)
    if bias is not None:
        out_data = out_data + bias.data[None, :, None, None]

    parents = (x, k) if bias is None else (x, k, bias)

    def backward():
        g = out.grad
        if x.requires_grad:
            _accumulate(x, _kernels.conv2d_backward_input(g, k.data, stride, padding, h, w))
        if k.requires_grad:
            _accumulate(k, _kernels.conv2d_backward_kernel(g, x.data, stride, padding, kh, kw))
        if bias is not None and bias.requires_grad:
            _accumulate(bias, g.sum(axis=(0, 2, 3)))

    out = _make(out_data, parents, backward)
    return out


def avg_pool2d(x, window):
    if x.ndim != 4:
        raise ShapeError(f"avg_pool2d: expected 4-d tensor, got {x.shape}")
    bsz, c, h, w = x.shape
    if window < 1 or h % window or w % window:
        raise ConfigError(
            "avg_pool2d", f"spatial dims {h}x{w} not divisible by window {window}"
        )
    ho, wo = h // window, w // window
    out_data = x.data.reshape(bsz, c, ho, window, wo, window).mean(axis=(3, 5))

    def backward():
        if x.requires_grad:
            g = out.grad / (window * window)
            g = np.repeat(np.repeat(g, window, axis=2), window, axis=3)
            _accumulate(x, g)

    out = _make(out_data, (x,), backward)
    return out


# ---------------------------------------------------------------------------
# classification losses


def log_softmax(logits):
    """Row-wise log softmax of logits[B,K]; stable under additive shifts."""
    if logits.ndim != 2 or logits.shape[1] < 2:
        raise ShapeError(f"log_softmax: expected [B,K] with K>=2, got {logits.shape}")
    z = logits.data
    m = z.max(axis=1, keepdims=True)
    lse = m + np.log(np.exp(z - m).sum(axis=1, keepdims=True))
    out_data = z - lse

    def backward():
        g = out.grad
        if logits.requires_grad:
            _accumulate(logits, g - np.exp(out_data) * g.sum(axis=1, keepdims=True))

    out = _make(out_data, (logits,), backward)
    return out


def cross_entropy(logits, labels):
    """Mean over the batch of -log p(label); labels is an int array [B]."""
    labels = np.asarray(labels)
    if logits.ndim != 2:
        raise ShapeError(f"cross_entropy: expected [B,K] logits, got {logits.shape}")
    bsz, k = logits.shape
    if labels.shape != (bsz,):
        raise ShapeError(
            f"cross_entropy: labels shape {labels.shape} != batch ({bsz},)"
        )
    bad = np.nonzero((labels < 0) | (labels >= k))[0]
    if bad.size:
        raise DataError(
            f"cross_entropy: label {int(labels[bad[0]])} at index {int(bad[0])} "
            f"outside [0, {k})"
        )
    z = logits.data
    m = z.max(axis=1, keepdims=True)
    lse = m + np.log(np.exp(z - m).sum(axis=1, keepdims=True))
    logp = z - lse
    out_data = -logp[np.arange(bsz), labels].mean()

    def backward():
        if logits.requires_grad:
            g = np.exp(logp)
            g[np.arange(bsz), labels] -= 1.0
            _accumulate(logits, out.grad * g / bsz)

    out = _make(out_data, (logits,), backward)
    return out


PROB_CLAMP = 1e-12


def _check_distribution(p, what):
    arr = np.asarray(p, dtype=np.float64)
    rows = arr[None, :] if arr.ndim == 1 else arr
    if np.any(rows < 0):
        raise DataError(f"{what}: negative probability")
    if np.any(np.abs(rows.sum(axis=-1) - 1.0) > 1e-9):
        raise DataError(f"{what}: probabilities do not sum to 1")


def kl_div(p, q):
    """KL(p || q) for probability vectors, with 0*log(0/q) = 0.

    Probabilities are clamped to PROB_CLAMP inside the logs only, so
    exact-zero entries of p contribute exactly zero.  Differentiable when
    the inputs are tensors on a live graph.
    """
    p = _wrap(p)
    q = _wrap(q)
    if p.shape != q.shape:
        raise ShapeError(f"kl_div: shapes {p.shape} and {q.shape} differ")
    _check_distribution(p.data, "kl_div p")
    _check_distribution(q.data, "kl_div q")
    diff = tlog(clamp_min(p, PROB_CLAMP)) - tlog(clamp_min(q, PROB_CLAMP))
    return tsum(mul(p, diff))


# ---------------------------------------------------------------------------
# gradient verification


@dataclass
class FiniteDiffReport:
    max_rel_discrepancy: float
    worst_index: tuple
    passed: bool


def finite_diff_check(f, x, h=1e-5, tol=1e-4):
    """Compare backward() gradients of scalar-valued f against central
    differences at x.  Discrepancy per coordinate is |ad - fd| scaled by
    max(1, |ad|, |fd|)."""
    leaf = Tensor(np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64),
                  requires_grad=True)
    out = f(leaf)
    out.backward()
    analytic = leaf.grad.copy()

    fd = np.zeros_like(analytic)
    flat = leaf.data.reshape(-1)
    fd_flat = fd.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        hi = f(Tensor(leaf.data.copy())).item()
        flat[i] = orig - h
        lo = f(Tensor(leaf.data.copy())).item()
        flat[i] = orig
        fd_flat[i] = (hi - lo) / (2.0 * h)

    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(fd)))
    rel = np.abs(analytic - fd) / denom
    worst = np.unravel_index(int(rel.argmax()), rel.shape) if rel.size else ()
    max_rel = float(rel.max()) if rel.size else 0.0
    return FiniteDiffReport(max_rel, worst, max_rel <= tol)
