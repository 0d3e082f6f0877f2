"""Minimal reverse-mode autodiff over numpy arrays.

Parameters own their gradient buffers; a Tape records the forward pass and
replays it in reverse. Only the operations this model family needs are
provided, each as an explicit forward/backward pair so they can be tested
in isolation.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

Array = np.ndarray


class NumericError(ArithmeticError):
    """A non-finite value appeared where one must not."""


class Parameter:
    """A named dense tensor with a paired gradient buffer."""

    def __init__(self, name: str, value: Array, trainable: bool = True):
        self.name = name
        self.value = np.asarray(value)
        self.grad = np.zeros_like(self.value)
        self.trainable = trainable

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def dtype(self):
        return self.value.dtype

    def zero_grad(self) -> None:
        self.grad.fill(0.0)

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape}, trainable={self.trainable})"


# ---------------------------------------------------------------------------
# initializers

def gaussian_init(rng: np.random.Generator, shape, std: float = 0.1, dtype=np.float64) -> Array:
    return rng.normal(0.0, std, size=shape).astype(dtype, copy=False)


def xavier_uniform(rng: np.random.Generator, shape, fan_in: int | None = None,
                   fan_out: int | None = None, dtype=np.float64) -> Array:
    if fan_in is None:
        fan_in = int(shape[0])
    if fan_out is None:
        fan_out = int(shape[-1])
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype, copy=False)


# ---------------------------------------------------------------------------
# functional forward/backward pairs

def matmul_fwd(a: Array, b: Array):
    return a @ b, (a, b)


def matmul_bwd(g: Array, cache):
    a, b = cache
    return g @ b.T, a.T @ g


def relu_fwd(x: Array):
    out = np.maximum(x, 0.0)
    return out, (x > 0.0)


def relu_bwd(g: Array, cache):
    return g * cache


def tanh_fwd(x: Array):
    out = np.tanh(x)
    return out, out


def tanh_bwd(g: Array, cache):
    return g * (1.0 - cache * cache)


def sigmoid_fwd(x: Array) -> Array:
    # Stable in both tails: exp() only sees non-positive arguments.
    out = np.empty_like(x, dtype=x.dtype)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def bce_with_logits_fwd(logits: Array, targets: Array):
    """Mean binary cross-entropy over all cells, computed from logits.

    loss = mean( max(x, 0) - x*y + log(1 + exp(-|x|)) ), finite for any x.
    """
    x = logits
    y = targets
    cell = np.maximum(x, 0.0) - x * y + np.log1p(np.exp(-np.abs(x)))
    loss = cell.mean(dtype=np.float64)
    return np.asarray(loss, dtype=x.dtype), (x, y)


def bce_with_logits_bwd(g, cache):
    x, y = cache
    return (g / x.size) * (sigmoid_fwd(x) - y)


def dropout_fwd(x: Array, rate: float, mode: str, rng: np.random.Generator | None):
    """Inverted dropout: zero with probability `rate`, scale survivors."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if mode == "eval" or rate == 0.0:
        return x, None
    if mode != "train":
        raise ValueError(f"dropout mode must be 'train' or 'eval', got {mode!r}")
    if rng is None:
        raise ValueError("train-mode dropout needs an rng")
    keep = (rng.random(x.shape) >= rate)
    scale = 1.0 / (1.0 - rate)
    mask = keep.astype(x.dtype) * np.asarray(scale, dtype=x.dtype)
    return x * mask, mask


def dropout_bwd(g: Array, mask):
    return g if mask is None else g * mask


def _stat_shape(x: Array, axes: tuple[int, ...]) -> tuple[int, ...]:
    return tuple(1 if i in axes else d for i, d in enumerate(x.shape))


def batchnorm_fwd(x: Array, gamma: Array, beta: Array, running_mean: Array,
                  running_var: Array, axes: tuple[int, ...], mode: str,
                  momentum: float = 0.1, eps: float = 1e-5):
    """Normalize over `axes` using batch stats (train) or running stats (eval).

    Train mode updates running_mean / running_var in place (biased variance).
    """
    bshape = _stat_shape(x, axes)
    if mode == "train":
        mu = x.mean(axis=axes)
        var = x.var(axis=axes)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var
    elif mode == "eval":
        mu, var = running_mean, running_var
    else:
        raise ValueError(f"batchnorm mode must be 'train' or 'eval', got {mode!r}")
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu.reshape(bshape)) * inv_std.reshape(bshape)
    out = gamma.reshape(bshape) * xhat + beta.reshape(bshape)
    return out, (xhat, gamma, inv_std, axes, bshape, mode)


def batchnorm_bwd(g: Array, cache):
    xhat, gamma, inv_std, axes, bshape, mode = cache
    dbeta = g.sum(axis=axes)
    dgamma = (g * xhat).sum(axis=axes)
    gb = gamma.reshape(bshape) * inv_std.reshape(bshape)
    if mode == "eval":
        # Stats are constants in eval mode.
        return g * gb, dgamma, dbeta
    dx = gb * (g - g.mean(axis=axes).reshape(bshape)
               - xhat * (g * xhat).mean(axis=axes).reshape(bshape))
    return dx, dgamma, dbeta


class BatchNorm:
    """Trainable scale/shift plus running statistics for one normalized axis set."""

    def __init__(self, name: str, size: int, dtype=np.float64,
                 momentum: float = 0.1, eps: float = 1e-5):
        self.gamma = Parameter(f"{name}.gamma", np.ones(size, dtype=dtype))
        self.beta = Parameter(f"{name}.beta", np.zeros(size, dtype=dtype))
        self.running_mean = Parameter(f"{name}.running_mean",
                                      np.zeros(size, dtype=dtype), trainable=False)
        self.running_var = Parameter(f"{name}.running_var",
                                     np.ones(size, dtype=dtype), trainable=False)
        self.momentum = momentum
        self.eps = eps

    def params(self) -> list[Parameter]:
        return [self.gamma, self.beta, self.running_mean, self.running_var]

    def apply_eval(self, x: Array, axes: tuple[int, ...]) -> Array:
        out, _ = batchnorm_fwd(x, self.gamma.value, self.beta.value,
                               self.running_mean.value, self.running_var.value,
                               axes, "eval", self.momentum, self.eps)
        return out

    def apply(self, tape: "Tape", x: "TapeNode", axes: tuple[int, ...]) -> "TapeNode":
        return tape.batchnorm(x, self, axes)


# ---------------------------------------------------------------------------
# tape

class TapeNode:
    """One recorded operation: value, parents, and the backward rule."""

    __slots__ = ("op", "value", "parents", "vjp", "grad")

    def __init__(self, op: str, value: Array, parents: Sequence["TapeNode"] = (),
                 vjp: Callable[[Array], tuple] | None = None):
        self.op = op
        self.value = value
        self.parents = tuple(parents)
        self.vjp = vjp
        self.grad: Array | None = None


class Tape:
    """Records a forward pass; backward() sweeps nodes in reverse order.

    mode controls dropout/batchnorm behaviour; rng drives dropout masks.
    Gradients land in Parameter.grad for every trainable leaf.
    """

    def __init__(self, mode: str = "train", rng: np.random.Generator | None = None):
        if mode not in ("train", "eval"):
            raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
        self.mode = mode
        self.rng = rng
        self.nodes: list[TapeNode] = []
        self._leaves: dict[int, tuple[Parameter, TapeNode]] = {}

    def record(self, op: str, value: Array, parents: Sequence[TapeNode] = (),
               vjp: Callable | None = None) -> TapeNode:
        node = TapeNode(op, value, parents, vjp)
        self.nodes.append(node)
        return node

    def leaf(self, param: Parameter) -> TapeNode:
        key = id(param)
        if key not in self._leaves:
            self._leaves[key] = (param, self.record(f"leaf:{param.name}", param.value))
        return self._leaves[key][1]

    def constant(self, x: Array) -> TapeNode:
        return self.record("const", np.asarray(x))

    # -- ops ---------------------------------------------------------------

    def matmul(self, a: TapeNode, b: TapeNode) -> TapeNode:
        out, cache = matmul_fwd(a.value, b.value)
        return self.record("matmul", out, (a, b), lambda g: matmul_bwd(g, cache))

    def matmul_nt(self, a: TapeNode, b: TapeNode) -> TapeNode:
        """a @ b.T without materializing the transpose on the tape."""
        out = a.value @ b.value.T
        av, bv = a.value, b.value
        return self.record("matmul_nt", out, (a, b),
                           lambda g: (g @ bv, g.T @ av))

    def add(self, a: TapeNode, b: TapeNode) -> TapeNode:
        return self.record("add", a.value + b.value, (a, b), lambda g: (g, g))

    def mul(self, a: TapeNode, b: TapeNode) -> TapeNode:
        av, bv = a.value, b.value
        return self.record("mul", av * bv, (a, b), lambda g: (g * bv, g * av))

    def relu(self, x: TapeNode) -> TapeNode:
        out, cache = relu_fwd(x.value)
        return self.record("relu", out, (x,), lambda g: (relu_bwd(g, cache),))

    def tanh(self, x: TapeNode) -> TapeNode:
        out, cache = tanh_fwd(x.value)
        return self.record("tanh", out, (x,), lambda g: (tanh_bwd(g, cache),))

    def sigmoid(self, x: TapeNode) -> TapeNode:
        out = sigmoid_fwd(x.value)
        return self.record("sigmoid", out, (x,), lambda g: (g * out * (1.0 - out),))

    def dropout(self, x: TapeNode, rate: float) -> TapeNode:
        out, mask = dropout_fwd(x.value, rate, self.mode, self.rng)
        return self.record("dropout", out, (x,), lambda g: (dropout_bwd(g, mask),))

    def gather_rows(self, x: TapeNode, idx: Array) -> TapeNode:
        idx = np.asarray(idx)

        def vjp(g):
            gx = np.zeros_like(x.value)
            np.add.at(gx, idx, g)
            return (gx,)

        return self.record("gather", x.value[idx], (x,), vjp)

    def reshape(self, x: TapeNode, shape: tuple[int, ...]) -> TapeNode:
        old = x.value.shape
        return self.record("reshape", x.value.reshape(shape), (x,),
                           lambda g: (g.reshape(old),))

    def stack_pair(self, a: TapeNode, b: TapeNode) -> TapeNode:
        """(B, F) x 2 -> (B, 2, F)."""
        out = np.stack([a.value, b.value], axis=1)
        return self.record("stack_pair", out, (a, b),
                           lambda g: (g[:, 0], g[:, 1]))

    def batchnorm(self, x: TapeNode, bn: BatchNorm, axes: tuple[int, ...]) -> TapeNode:
        gamma, beta = self.leaf(bn.gamma), self.leaf(bn.beta)
        out, cache = batchnorm_fwd(x.value, bn.gamma.value, bn.beta.value,
                                   bn.running_mean.value, bn.running_var.value,
                                   axes, self.mode, bn.momentum, bn.eps)

        def vjp(g):
            dx, dgamma, dbeta = batchnorm_bwd(g, cache)
            return dx, dgamma, dbeta

        return self.record("batchnorm", out, (x, gamma, beta), vjp)

    def bce_with_logits(self, logits: TapeNode, targets: Array) -> TapeNode:
        out, cache = bce_with_logits_fwd(logits.value, np.asarray(targets))
        return self.record("bce", out, (logits,),
                           lambda g: (bce_with_logits_bwd(g, cache),))

    def sum_squares(self, x: TapeNode) -> TapeNode:
        """0.5 * sum(x**2), a convenient scalar head for gradient checks."""
        out = np.asarray(0.5 * np.sum(x.value * x.value), dtype=x.value.dtype)
        return self.record("sumsq", out, (x,), lambda g: (g * x.value,))

    # -- reverse sweep -----------------------------------------------------

    def backward(self, root: TapeNode) -> None:
        if root.value.ndim != 0:
            raise ValueError("backward root must be a scalar")
        root.grad = np.ones_like(root.value)
        for node in reversed(self.nodes):
            if node.grad is None or node.vjp is None:
                continue
            grads = node.vjp(node.grad)
            for parent, g in zip(node.parents, grads):
                if g is None:
                    continue
                if parent.grad is None:
                    parent.grad = g
                else:
                    parent.grad = parent.grad + g
        for param, node in self._leaves.values():
            if param.trainable and node.grad is not None:
                param.grad += node.grad


# ---------------------------------------------------------------------------
# Adam

class AdamState:
    """First/second moment buffers for one parameter."""

    __slots__ = ("m", "v")

    def __init__(self, param: Parameter):
        self.m = np.zeros_like(param.value)
        self.v = np.zeros_like(param.value)


def adam_step(params: Sequence[Parameter], states: dict[str, AdamState], t: int,
              lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
              weight_decay: float = 0.0, grad_clip: float = 0.0) -> None:
    """One bias-corrected Adam update; gradients are zeroed afterwards."""
    for p in params:
        if p.trainable and not np.all(np.isfinite(p.grad)):
            raise NumericError(f"non-finite gradient for parameter {p.name!r}")
    if grad_clip > 0.0:
        total = np.sqrt(sum(float(np.sum(p.grad * p.grad))
                            for p in params if p.trainable))
        if total > grad_clip:
            scale = grad_clip / total
            for p in params:
                if p.trainable:
                    p.grad *= scale
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for p in params:
        if not p.trainable:
            continue
        g = p.grad
        if weight_decay > 0.0:
            g = g + weight_decay * p.value
        st = states[p.name]
        st.m *= beta1
        st.m += (1.0 - beta1) * g
        st.v *= beta2
        st.v += (1.0 - beta2) * (g * g)
        m_hat = st.m / bc1
        v_hat = st.v / bc2
        p.value -= lr * m_hat / (np.sqrt(v_hat) + eps)
        p.zero_grad()


class Adam:
    """Adam over a fixed parameter list, one shared step counter."""

    def __init__(self, params: Sequence[Parameter], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
                 weight_decay: float = 0.0, grad_clip: float = 0.0):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.grad_clip = grad_clip
        self.t = 0
        self.states = {p.name: AdamState(p) for p in self.params}

    def step(self) -> None:
        self.t += 1
        adam_step(self.params, self.states, self.t, self.lr, self.beta1,
                  self.beta2, self.eps, self.weight_decay, self.grad_clip)


# ---------------------------------------------------------------------------
# finite-difference verification

def grad_check(loss_fn: Callable[[], float], params: Sequence[Parameter],
               h: float = 1e-5) -> dict[str, float]:
    """Worst relative error between analytic and central-difference gradients.

    loss_fn() must rebuild the forward pass, run backward, and return the
    scalar loss; it is invoked 2*size times per parameter for the stencil.
    Frozen parameters are skipped. Gradients are left zeroed on exit.
    """
    for p in params:
        p.zero_grad()
    base = float(loss_fn())
    if not np.isfinite(base):
        raise NumericError("loss is not finite")
    analytic = {p.name: p.grad.copy() for p in params if p.trainable}
    report: dict[str, float] = {}
    for p in params:
        if not p.trainable:
            continue
        flat = p.value.reshape(-1)
        ga = analytic[p.name].reshape(-1)
        worst = 0.0
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            f_plus = float(loss_fn())
            flat[i] = orig - h
            f_minus = float(loss_fn())
            flat[i] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise NumericError(f"non-finite loss while perturbing {p.name!r}")
            fd = (f_plus - f_minus) / (2.0 * h)
            diff = abs(ga[i] - fd)
            if diff == 0.0:
                continue
            denom = max(abs(ga[i]), abs(fd), 1e-6)
            worst = max(worst, diff / denom)
        report[p.name] = worst
    for p in params:
        p.zero_grad()
    return report
