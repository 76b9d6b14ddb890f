"""Minimal reverse-mode automatic differentiation on numpy arrays.

Every operation records a `Node` on a `Tape` when any of its inputs requires a
gradient. Tapes are found through the inputs rather than through global state, so
independent forward passes (one per training run) never share mutable state.
Storage is 32-bit by default; every op preserves the dtype of its inputs, which is
what lets `gradcheck` replay a graph in 64 bits.
"""
import contextlib
import math
import threading
from dataclasses import dataclass, field
from typing import (
    Callable,
    Dict,
    Iterator,
    List,
    NamedTuple,
    Optional,
    Sequence,
    Tuple,
    Union,
)

import numpy as np

from .util import NonFiniteError, ParameterError, ShapeError, StaleTapeError

__all__ = [
    "Tape",
    "Tensor",
    "add",
    "backward",
    "clip_global_norm",
    "cross_entropy_loss",
    "dropout",
    "gradcheck",
    "layer_norm",
    "matmul",
    "mse_loss",
    "no_grad",
    "relu",
    "softmax",
]

DEFAULT_DTYPE = np.float32
LAYER_NORM_EPS = 1e-5
# Clipping only rescales when the norm exceeds the cap by more than this absolute slack.
CLIP_SLACK = 1e-6

ArrayLike = Union[np.ndarray, float, int, Sequence]


class Tensor:

    """An n-dimensional float array that can take part in a gradient tape."""

    __slots__ = ("data", "requires_grad", "grad", "name", "_tape")

    def __init__(
        self,
        data: ArrayLike,
        requires_grad: bool = False,
        name: Optional[str] = None,
        dtype=None,
    ):
        if dtype is None:
            is_float = (
                isinstance(data, (np.ndarray, np.generic)) and data.dtype.kind == "f"
            )
            dtype = data.dtype if is_float else DEFAULT_DTYPE
        self.data = np.asarray(data, dtype=dtype)
        self.requires_grad = requires_grad
        self.grad = None  # type: Optional[np.ndarray]
        self.name = name
        self._tape = None  # type: Optional[Tape]

    def __repr__(self):
        name = f" {self.name!r}" if self.name else ""
        return (
            f"<Tensor{name} shape={self.shape} dtype={self.dtype} "
            f"requires_grad={self.requires_grad}>"
        )

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._tape is None

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def item(self) -> float:
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data, name=self.name)

    def sum(self) -> "Tensor":
        return sum_(self)

    def mean(self) -> "Tensor":
        return mean(self)

    def __add__(self, other):
        return add(self, _as_tensor(other, self.dtype))

    def __radd__(self, other):
        return add(_as_tensor(other, self.dtype), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other, self.dtype))

    def __rsub__(self, other):
        return sub(_as_tensor(other, self.dtype), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, _as_tensor(other, self.dtype))

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        if not isinstance(other, (int, float)):
            raise TypeError("Only division by a Python scalar is supported")
        return scale(self, 1.0 / other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other, self.dtype))


def _as_tensor(value, dtype) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=dtype))


class Node(NamedTuple):
    output: Tensor
    inputs: Tuple[Tensor, ...]
    backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tape:

    """Operations recorded during one forward pass, in execution order.

    Nodes are appended as ops run, so every node's inputs precede it. A tape
    supports exactly one backward pass; afterwards its nodes are freed and any
    further backward through it raises `StaleTapeError`.
    """

    def __init__(self):
        self.nodes = []  # type: List[Node]
        self.consumed = False

    def __len__(self):
        return len(self.nodes)

    def record(self, node: Node):
        if self.consumed:
            raise StaleTapeError(
                "Can't record onto a tape that has already been through backward"
            )
        node.output._tape = self
        self.nodes.append(node)

    def absorb(self, other: "Tape"):
        """Move every node of an independent tape onto the end of this one."""
        if other.consumed:
            raise StaleTapeError("Can't combine with a tape that was already used")
        for node in other.nodes:
            node.output._tape = self
        self.nodes.extend(other.nodes)
        other.nodes = []

    def backward(self, loss: Tensor):
        """Populate `.grad` on every leaf tensor that requires a gradient.

        Gradients of tensors used more than once are summed.

        Raises:
            ShapeError: if `loss` is not a scalar.
            StaleTapeError: if this tape already ran backward or didn't record `loss`.
        """
        if loss.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        if self.consumed:
            raise StaleTapeError(
                "This tape already ran backward; run a new forward pass first"
            )
        if loss._tape is not self:
            raise StaleTapeError("The loss was not recorded on this tape")

        grads = {id(loss): np.ones_like(loss.data)}  # type: Dict[int, np.ndarray]
        for node in reversed(self.nodes):
            grad = grads.pop(id(node.output), None)
            if grad is None:
                continue
            for tensor, input_grad in zip(node.inputs, node.backward(grad)):
                if input_grad is None or not tensor.requires_grad:
                    continue
                if tensor.is_leaf:
                    if tensor.grad is None:
                        tensor.grad = input_grad.astype(tensor.dtype, copy=True)
                    else:
                        tensor.grad += input_grad
                elif id(tensor) in grads:
                    grads[id(tensor)] = grads[id(tensor)] + input_grad
                else:
                    grads[id(tensor)] = input_grad

        self.nodes = []
        self.consumed = True


def backward(loss: Tensor):
    """Run backward through the tape that produced `loss`."""
    if loss._tape is None:
        raise StaleTapeError(
            "The loss was not produced by any tape (do its inputs require gradients?)"
        )
    loss._tape.backward(loss)


_state = threading.local()


def _grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Evaluate ops without recording them, in the current thread only."""
    previous = _grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = previous


@contextlib.contextmanager
def relu_activity() -> Iterator[List[np.ndarray]]:
    """Collect the active-set mask of every relu evaluated in this thread."""
    masks = []  # type: List[np.ndarray]
    previous = getattr(_state, "relu_masks", None)
    _state.relu_masks = masks
    try:
        yield masks
    finally:
        _state.relu_masks = previous


def _apply(
    op: str,
    data: np.ndarray,
    inputs: Tuple[Tensor, ...],
    backward_fn: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]],
) -> Tensor:
    data = np.asarray(data)
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"{op} produced non-finite values")
    out = Tensor(data)
    if not _grad_enabled() or not any(t.requires_grad for t in inputs):
        return out
    out.requires_grad = True
    tapes = []  # type: List[Tape]
    for tensor in inputs:
        if tensor._tape is not None and all(tensor._tape is not t for t in tapes):
            tapes.append(tensor._tape)
    tape = tapes[0] if tapes else Tape()
    for other in tapes[1:]:
        tape.absorb(other)
    tape.record(Node(out, inputs, backward_fn))
    return out


def _bias_axes(a_shape, b_shape) -> Tuple[int, ...]:
    """Leading axes of `a_shape` that a trailing-aligned `b_shape` is summed over."""
    offset = len(a_shape) - len(b_shape)
    if offset < 0 or tuple(a_shape[offset:]) != tuple(b_shape):
        raise ShapeError(f"Can't combine shapes {tuple(a_shape)} and {tuple(b_shape)}")
    return tuple(range(len(a_shape) - len(b_shape)))


def _unbroadcast(grad: np.ndarray, axes: Tuple[int, ...]) -> np.ndarray:
    return grad.sum(axis=axes) if axes else grad


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; `b` may be a bias aligned with the trailing axes of `a`."""
    axes = _bias_axes(a.shape, b.shape)
    return _apply("add", a.data + b.data, (a, b), lambda g: (g, _unbroadcast(g, axes)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    axes = _bias_axes(a.shape, b.shape)
    return _apply("sub", a.data - b.data, (a, b), lambda g: (g, -_unbroadcast(g, axes)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    axes = _bias_axes(a.shape, b.shape)
    return _apply(
        "mul",
        a.data * b.data,
        (a, b),
        lambda g: (g * b.data, _unbroadcast(g * a.data, axes)),
    )


def scale(a: Tensor, c: float) -> Tensor:
    c = a.dtype.type(c)
    return _apply("scale", a.data * c, (a,), lambda g: (g * c,))


def sum_(a: Tensor) -> Tensor:
    return _apply(
        "sum",
        a.data.sum(dtype=a.dtype),
        (a,),
        lambda g: (np.broadcast_to(g, a.shape).astype(a.dtype),),
    )


def mean(a: Tensor) -> Tensor:
    return scale(sum_(a), 1.0 / a.size)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes.

    `a` may carry leading batch axes; `b` is either a 2-D matrix shared across the
    batch or has the same leading axes as `a`.
    """
    same_batch = b.ndim == a.ndim and a.shape[:-2] == b.shape[:-2]
    if (
        a.ndim < 2
        or b.ndim < 2
        or a.shape[-1] != b.shape[-2]
        or not (b.ndim == 2 or same_batch)
    ):
        raise ShapeError(f"Can't multiply matrices of shapes {a.shape} and {b.shape}")

    def backward_(g):
        grad_a = g @ np.swapaxes(b.data, -1, -2)
        if b.ndim == 2 and a.ndim > 2:
            batch_axes = list(range(a.ndim - 1))
            grad_b = np.tensordot(a.data, g, axes=(batch_axes, batch_axes))
        else:
            grad_b = np.swapaxes(a.data, -1, -2) @ g
        return grad_a, grad_b

    return _apply("matmul", a.data @ b.data, (a, b), backward_)


def transpose(a: Tensor) -> Tensor:
    """Swap the last two axes."""
    return _apply(
        "transpose", np.swapaxes(a.data, -1, -2), (a,), lambda g: (np.swapaxes(g, -1, -2),)
    )


def reshape(a: Tensor, shape: Tuple[int, ...]) -> Tensor:
    try:
        data = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"Can't reshape {a.shape} to {tuple(shape)}")
    return _apply("reshape", data, (a,), lambda g: (g.reshape(a.shape),))


def permute(a: Tensor, axes: Tuple[int, ...]) -> Tensor:
    inverse = tuple(np.argsort(axes))
    return _apply(
        "permute", np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inverse),)
    )


def select(a: Tensor, index: int, axis: int) -> Tensor:
    """Pick one position along `axis`, dropping that axis."""
    if not -a.ndim <= axis < a.ndim:
        raise ShapeError(f"Axis {axis} is invalid for shape {a.shape}")
    key = [slice(None)] * a.ndim
    key[axis] = index
    key_ = tuple(key)

    def backward_(g):
        full = np.zeros_like(a.data)
        full[key_] = g
        return (full,)

    return _apply("select", a.data[key_], (a,), backward_)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _apply(
        "concat",
        np.concatenate([t.data for t in tensors], axis=axis),
        tuple(tensors),
        lambda g: tuple(np.split(g, sizes, axis=axis)),
    )


def _check_axis(x: Tensor, axis: int) -> int:
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"Axis {axis} is invalid for shape {x.shape}")
    return axis


def softmax(x: Tensor, axis: int = -1, mask: Optional[np.ndarray] = None) -> Tensor:
    """Softmax along `axis`, computed after subtracting the slice maximum.

    Positions where the boolean `mask` is False get probability exactly 0 (the
    equivalent of a score of minus infinity); every slice must keep at least one
    position.
    """
    _check_axis(x, axis)
    if mask is None:
        shifted = x.data - x.data.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
    else:
        mask = np.broadcast_to(mask, x.shape)
        if not mask.any(axis=axis).all():
            raise ParameterError("Every softmax slice needs an unmasked position")
        masked = np.where(mask, x.data, -np.inf)
        shifted = np.where(mask, x.data - masked.max(axis=axis, keepdims=True), 0)
        e = np.where(mask, np.exp(shifted), 0).astype(x.dtype)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward_(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _apply("softmax", y, (x,), backward_)


def layer_norm(
    v: Tensor, gamma: Tensor, beta: Tensor, eps: float = LAYER_NORM_EPS
) -> Tensor:
    """gamma * (v - mean) / sqrt(var + eps) + beta over the last axis.

    The variance is the population variance; eps keeps constant vectors finite.
    """
    d = v.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(
            f"gamma {gamma.shape} and beta {beta.shape} must both be ({d},) "
            f"to normalize shape {v.shape}"
        )
    if not eps > 0:
        raise ParameterError(f"eps must be positive, got {eps}")
    mu = v.data.mean(axis=-1, keepdims=True)
    centred = v.data - mu
    var = (centred * centred).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + v.dtype.type(eps))
    xhat = centred * inv_std
    out = gamma.data * xhat + beta.data
    leading = tuple(range(v.ndim - 1))

    def backward_(g):
        dxhat = g * gamma.data
        dv = (inv_std / d) * (
            d * dxhat
            - dxhat.sum(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True)
        )
        return dv, (g * xhat).sum(axis=leading), g.sum(axis=leading)

    return _apply("layer_norm", out, (v, gamma, beta), backward_)


def relu(x: Tensor) -> Tensor:
    """max(x, 0); the derivative at exactly 0 is 0."""
    active = x.data > 0
    masks = getattr(_state, "relu_masks", None)
    if masks is not None:
        masks.append(active)
    out = np.where(active, x.data, 0).astype(x.dtype)
    return _apply("relu", out, (x,), lambda g: (g * active,))


def dropout(
    x: Tensor, p: float, mode: str, rng: Optional[np.random.Generator] = None
) -> Tensor:
    """Inverted dropout: in train mode zero each element with probability p and
    scale the survivors by 1/(1-p); eval mode is the identity."""
    if not 0 <= p < 1:
        raise ParameterError(f"Dropout probability must be in [0, 1), got {p}")
    if mode not in ("train", "eval"):
        raise ParameterError(f"Mode must be 'train' or 'eval', got {mode!r}")
    if mode == "eval" or p == 0:
        return x
    if rng is None:
        raise ParameterError("Train-mode dropout needs a random generator")
    keep = rng.random(x.shape) >= p
    mask = (keep / (1.0 - p)).astype(x.dtype)
    return _apply("dropout", x.data * mask, (x,), lambda g: (g * mask,))


def mse_loss(pred: Tensor, target: Union[Tensor, np.ndarray]) -> Tensor:
    """Mean of squared differences over all elements."""
    target_data = target.data if isinstance(target, Tensor) else np.asarray(target)
    if pred.shape != target_data.shape:
        raise ShapeError(
            f"Prediction shape {pred.shape} != target shape {target_data.shape}"
        )
    diff = pred.data - target_data.astype(pred.dtype)
    n = pred.dtype.type(diff.size)
    loss = (diff * diff).sum() / n
    return _apply("mse_loss", loss, (pred,), lambda g: (g * 2 * diff / n,))


def cross_entropy_loss(logits: Tensor, labels: ArrayLike) -> Tensor:
    """Mean over the batch of -log softmax(logits)[label], via log-sum-exp."""
    labels = np.asarray(labels)
    if logits.ndim != 2 or logits.shape[1] != 2:
        raise ShapeError(f"Logits must have shape (batch, 2), got {logits.shape}")
    if labels.shape != (logits.shape[0],):
        raise ShapeError(
            f"Labels shape {labels.shape} doesn't match logits shape {logits.shape}"
        )
    if not np.isin(labels, (0, 1)).all():
        raise ParameterError("Labels must be 0 or 1")
    labels = labels.astype(np.int64)
    x = logits.data
    top = x.max(axis=1, keepdims=True)
    lse = top[:, 0] + np.log(np.exp(x - top).sum(axis=1))
    rows = np.arange(x.shape[0])
    n = x.dtype.type(x.shape[0])
    loss = (lse - x[rows, labels]).sum() / n

    def backward_(g):
        probs = np.exp(x - lse[:, None])
        probs[rows, labels] -= 1
        return (g * probs / n,)

    return _apply("cross_entropy_loss", loss, (logits,), backward_)


def global_norm(grads: Sequence[np.ndarray]) -> float:
    """sqrt of the sum of squares of every element, accumulated in float64."""
    return math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads))


def clip_global_norm(
    grads: Sequence[np.ndarray], c: float
) -> Tuple[List[np.ndarray], float]:
    """Scale all gradients by c/g when their global norm g exceeds c.

    Returns the (possibly scaled) gradients and the original norm g.
    """
    if not c > 0:
        raise ParameterError(f"Clip value must be positive, got {c}")
    norm = global_norm(grads)
    if norm <= c + CLIP_SLACK:
        return [g.copy() for g in grads], norm
    factor = c / norm
    return [(g * factor).astype(g.dtype) for g in grads], norm


@dataclass
class GradcheckReport:
    max_rel_error: float = 0.0
    checked: int = 0
    skipped_kinks: int = 0
    worst: Optional[Tuple[str, int]] = None
    errors: List[float] = field(default_factory=list)


def gradcheck(
    fn: Callable[[Dict[str, Tensor]], Tensor],
    params: Dict[str, np.ndarray],
    n_samples: int = 100,
    h: float = 1e-3,
    rng: Optional[np.random.Generator] = None,
    atol: float = 1e-6,
) -> GradcheckReport:
    """Compare analytic gradients of `fn` with central finite differences.

    The whole graph is replayed in float64. `fn` maps named tensors to a scalar
    loss and must be deterministic. Coordinates are sampled without replacement;
    a coordinate whose +h and -h evaluations disagree on any relu's active set
    straddles a kink, so it is skipped and another one sampled. The relative
    error is |a - n| / max(|a|, |n|, atol).
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    params64 = {name: np.asarray(p, dtype=np.float64) for name, p in params.items()}

    tensors = {
        name: Tensor(p.copy(), requires_grad=True, name=name)
        for name, p in params64.items()
    }
    backward(fn(tensors))
    analytic = {
        name: t.grad if t.grad is not None else np.zeros_like(t.data)
        for name, t in tensors.items()
    }

    def evaluate(name, index, delta):
        arrays = dict(params64)
        perturbed = params64[name].copy()
        perturbed.flat[index] += delta
        arrays[name] = perturbed
        with no_grad(), relu_activity() as masks:
            value = fn({k: Tensor(v, name=k) for k, v in arrays.items()}).item()
        return value, masks

    coords = [(name, i) for name, p in params64.items() for i in range(p.size)]
    report = GradcheckReport()
    for k in rng.permutation(len(coords)):
        if report.checked >= n_samples:
            break
        name, index = coords[k]
        plus, plus_masks = evaluate(name, index, h)
        minus, minus_masks = evaluate(name, index, -h)
        if any(not np.array_equal(p, m) for p, m in zip(plus_masks, minus_masks)):
            report.skipped_kinks += 1
            continue
        numeric = (plus - minus) / (2 * h)
        exact = float(analytic[name].flat[index])
        error = abs(exact - numeric) / max(abs(exact), abs(numeric), atol)
        report.errors.append(error)
        report.checked += 1
        if error >= report.max_rel_error:
            report.max_rel_error = error
            report.worst = (name, int(index))
    return report
