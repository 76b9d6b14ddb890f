"""Decoder-only transformer over daily feature windows."""
import math
from collections import OrderedDict
from typing import Dict, Iterator, List, Optional, Tuple, Union

import numpy as np
from traitlets import Bool, Enum, Float, Int

from . import ndgrad
from .config import SslchronoConfigurable
from .ndgrad import Tensor
from .util import HeadMismatchError, ShapeError, checksum

__all__ = [
    "HEAD_KINDS",
    "ModelConfig",
    "ModelParams",
    "attention",
    "backbone_features",
    "block_forward",
    "embed",
    "forward",
    "init_params",
    "predict_proba",
    "swap_head",
]

HEAD_KINDS = ("regression", "classification")
HEAD_OUTPUTS = {"regression": 1, "classification": 2}
BACKBONE, HEAD = "backbone", "head"


class ModelConfig(SslchronoConfigurable):

    """Shape of the transformer. Desk-scale defaults; the published model used
    d_model=2048."""

    n_blocks = Int(4, help="Number of transformer blocks.", config=True)
    d_model = Int(64, help="Hidden width of every block.", config=True)
    n_heads = Int(
        1, help="Attention heads per block (d_model must divide evenly).", config=True
    )
    seq_len = Int(10, help="Days per input window.", config=True)
    n_channels = Int(
        6, help="Input channels per day (3 features + 3 missingness flags).", config=True
    )
    dropout_p = Float(0.1, help="Dropout probability inside each block.", config=True)
    head_kind = Enum(
        HEAD_KINDS,
        "regression",
        help="Task head: a single regression output or two class logits.",
        config=True,
    )
    residual = Bool(
        True, help="Add a residual connection around each attention layer.", config=True
    )
    init_std = Float(
        0.02, help="Standard deviation of the normal weight initialization.", config=True
    )

    def validate_config(self):
        self._require(self.n_blocks >= 1, f"n_blocks must be >= 1, got {self.n_blocks}")
        self._require(
            self.n_heads >= 1 and self.d_model % self.n_heads == 0,
            f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}",
        )
        self._require(self.seq_len >= 2, f"seq_len must be >= 2, got {self.seq_len}")
        self._require(self.n_channels >= 1, "n_channels must be positive")
        self._require(
            0 <= self.dropout_p < 1, f"dropout_p must be in [0, 1), got {self.dropout_p}"
        )
        self._require(self.init_std > 0, "init_std must be positive")


def part_of(name: str) -> str:
    """Which partition ("backbone" or "head") a parameter name belongs to."""
    return HEAD if name.startswith("head.") else BACKBONE


class ModelParams:

    """Named parameter tensors of one model: the backbone plus a task head.

    Every name belongs to exactly one partition, decided by `part_of`.
    """

    def __init__(
        self, config: ModelConfig, tensors: "OrderedDict[str, Tensor]", head_kind: str
    ):
        if head_kind not in HEAD_KINDS:
            raise HeadMismatchError(f"Unknown head kind {head_kind!r}")
        self.config = config
        self.tensors = tensors
        self.head_kind = head_kind

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self.tensors)

    def __len__(self):
        return len(self.tensors)

    def names(self, part: Optional[str] = None) -> List[str]:
        return [n for n in self.tensors if part is None or part_of(n) == part]

    @property
    def backbone_names(self) -> List[str]:
        return self.names(BACKBONE)

    @property
    def head_names(self) -> List[str]:
        return self.names(HEAD)

    def arrays(self, part: Optional[str] = None) -> Dict[str, np.ndarray]:
        return {n: self.tensors[n].data for n in self.names(part)}

    def checksum(self, part: Optional[str] = None) -> str:
        return checksum(self.arrays(part).values())

    def set_trainable(self, parts: Tuple[str, ...]):
        """Make exactly the tensors in `parts` require gradients."""
        for name, tensor in self.tensors.items():
            tensor.requires_grad = part_of(name) in parts
            tensor.grad = None

    def trainable(self) -> List[Tuple[str, Tensor]]:
        return [(n, t) for n, t in self.tensors.items() if t.requires_grad]

    def copy(self, dtype=None) -> "ModelParams":
        tensors = OrderedDict(
            (
                n,
                Tensor(
                    t.data.astype(dtype or t.dtype, copy=True),
                    requires_grad=t.requires_grad,
                    name=n,
                ),
            )
            for n, t in self.tensors.items()
        )
        return ModelParams(self.config.copy(), tensors, self.head_kind)

    def with_tensors(self, tensors: Dict[str, Tensor]) -> "ModelParams":
        """A view of this model with some parameters replaced (same names)."""
        replaced = OrderedDict((n, tensors.get(n, t)) for n, t in self.tensors.items())
        return ModelParams(self.config, replaced, self.head_kind)


def _normal(rng: np.random.Generator, shape, std: float) -> np.ndarray:
    return (rng.standard_normal(shape) * std).astype(np.float32)


def _head_tensors(config: ModelConfig, head_kind: str, rng: np.random.Generator):
    outputs = HEAD_OUTPUTS[head_kind]
    yield "head.weight", _normal(rng, (config.d_model, outputs), config.init_std)
    yield "head.bias", np.zeros(outputs, dtype=np.float32)


def init_params(config: ModelConfig, rng: np.random.Generator) -> ModelParams:
    """Random initialization: weights ~ N(0, init_std^2), biases 0, gamma 1, beta 0."""
    config.validate_config()
    d, std = config.d_model, config.init_std
    arrays = [
        ("input_projection.weight", _normal(rng, (config.n_channels, d), std)),
        ("input_projection.bias", np.zeros(d, dtype=np.float32)),
        ("position_embeddings", _normal(rng, (config.seq_len, d), std)),
    ]
    for i in range(config.n_blocks):
        for proj in ("query", "key", "value", "output"):
            arrays.append((f"blocks.{i}.{proj}.weight", _normal(rng, (d, d), std)))
            arrays.append((f"blocks.{i}.{proj}.bias", np.zeros(d, dtype=np.float32)))
        arrays.append((f"blocks.{i}.norm.gamma", np.ones(d, dtype=np.float32)))
        arrays.append((f"blocks.{i}.norm.beta", np.zeros(d, dtype=np.float32)))
    arrays.extend(_head_tensors(config, config.head_kind, rng))
    tensors = OrderedDict(
        (name, Tensor(array, requires_grad=True, name=name)) for name, array in arrays
    )
    return ModelParams(config.copy(), tensors, config.head_kind)


def swap_head(
    params: ModelParams, new_head_kind: str, rng: np.random.Generator
) -> ModelParams:
    """Keep the backbone tensors (shared, bit-identical) and draw a fresh head."""
    if new_head_kind not in HEAD_KINDS:
        raise HeadMismatchError(f"Unknown head kind {new_head_kind!r}")
    tensors = OrderedDict(
        (n, t) for n, t in params.tensors.items() if part_of(n) == BACKBONE
    )
    for name, array in _head_tensors(params.config, new_head_kind, rng):
        tensors[name] = Tensor(array, requires_grad=True, name=name)
    return ModelParams(params.config.copy(head_kind=new_head_kind), tensors, new_head_kind)


def _as_batch(windows: Union[Tensor, np.ndarray], config: ModelConfig) -> Tensor:
    data = windows.data if isinstance(windows, Tensor) else np.asarray(windows)
    if data.ndim == 2:
        data = data[None]
    expected = (config.seq_len, config.n_channels)
    if data.ndim != 3 or data.shape[1:] != expected:
        raise ShapeError(
            f"Windows must have shape (batch, {expected[0]}, {expected[1]}) or "
            f"{expected}, got {np.shape(windows)}"
        )
    return windows if isinstance(windows, Tensor) and windows.ndim == 3 else Tensor(data)


def embed(windows: Union[Tensor, np.ndarray], params: ModelParams) -> Tensor:
    """out[t] = window[t] @ W_in + b_in + pos[t], for each window in the batch."""
    x = _as_batch(windows, params.config)
    projected = ndgrad.add(
        ndgrad.matmul(x, params["input_projection.weight"]),
        params["input_projection.bias"],
    )
    return ndgrad.add(projected, params["position_embeddings"])


def causal_mask(seq_len: int) -> np.ndarray:
    """mask[i, j] is True where position i may attend to position j (j <= i)."""
    return np.tril(np.ones((seq_len, seq_len), dtype=bool))


def attention(q: Tensor, k: Tensor, v: Tensor, causal: bool = True) -> Tensor:
    """softmax(Q K^T / sqrt(d_k)) V, with future positions masked out."""
    if not q.shape == k.shape == v.shape:
        raise ShapeError(f"Q {q.shape}, K {k.shape} and V {v.shape} must match")
    seq_len, d_k = q.shape[-2], q.shape[-1]
    scores = ndgrad.matmul(q, ndgrad.transpose(k)) * (1.0 / math.sqrt(d_k))
    mask = causal_mask(seq_len) if causal else None
    return ndgrad.matmul(ndgrad.softmax(scores, axis=-1, mask=mask), v)


def _linear(x: Tensor, params: ModelParams, prefix: str) -> Tensor:
    return ndgrad.add(
        ndgrad.matmul(x, params[f"{prefix}.weight"]), params[f"{prefix}.bias"]
    )


def _self_attention(x: Tensor, params: ModelParams, index: int) -> Tensor:
    prefix = f"blocks.{index}"
    q, k, v = (_linear(x, params, f"{prefix}.{p}") for p in ("query", "key", "value"))
    n_heads = params.config.n_heads
    if n_heads == 1:
        heads = attention(q, k, v)
    else:
        batch, seq_len, d = x.shape
        split = (batch, seq_len, n_heads, d // n_heads)

        def to_heads(t):
            return ndgrad.permute(ndgrad.reshape(t, split), (0, 2, 1, 3))

        merged = attention(to_heads(q), to_heads(k), to_heads(v))
        heads = ndgrad.reshape(ndgrad.permute(merged, (0, 2, 1, 3)), x.shape)
    return _linear(heads, params, f"{prefix}.output")


def block_forward(
    x: Tensor,
    params: ModelParams,
    index: int,
    mode: str = "eval",
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    """LayerNorm(ReLU(dropout(x + attention(x)))) for block `index`."""
    h = _self_attention(x, params, index)
    if params.config.residual:
        h = ndgrad.add(x, h)
    h = ndgrad.dropout(h, params.config.dropout_p, mode, rng)
    h = ndgrad.relu(h)
    return ndgrad.layer_norm(
        h, params[f"blocks.{index}.norm.gamma"], params[f"blocks.{index}.norm.beta"]
    )


def backbone(
    windows: Union[Tensor, np.ndarray],
    params: ModelParams,
    mode: str = "eval",
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    """Output of the last block at every position, shape (batch, seq_len, d_model)."""
    x = embed(windows, params)
    for i in range(params.config.n_blocks):
        x = block_forward(x, params, i, mode, rng)
    return x


def head_forward(features: Tensor, params: ModelParams) -> Tensor:
    """Apply the task head to (batch, d_model) representations."""
    out = _linear(features, params, "head")
    if params.head_kind == "regression":
        out = ndgrad.reshape(out, (features.shape[0],))
    return out


def forward(
    windows: Union[Tensor, np.ndarray],
    params: ModelParams,
    mode: str = "eval",
    rng: Optional[np.random.Generator] = None,
    task: Optional[str] = None,
) -> Tensor:
    """Regression: one value per window, shape (batch,). Classification: two
    logits per window, shape (batch, 2).

    The head reads the last time position, the only one that sees the whole
    window under the causal mask.
    """
    if task is not None and task != params.head_kind:
        raise HeadMismatchError(
            f"Model has a {params.head_kind} head but the task needs {task}"
        )
    hidden = backbone(windows, params, mode, rng)
    return head_forward(ndgrad.select(hidden, -1, axis=1), params)


def backbone_features(
    params: ModelParams, windows: np.ndarray, batch_size: int = 512
) -> np.ndarray:
    """Eval-mode last-position representations, shape (n_windows, d_model)."""
    windows = np.asarray(windows)
    chunks = []
    with ndgrad.no_grad():
        for start in range(0, len(windows), batch_size):
            hidden = backbone(windows[start : start + batch_size], params, "eval")
            chunks.append(ndgrad.select(hidden, -1, axis=1).data)
    if not chunks:
        return np.zeros((0, params.config.d_model), dtype=np.float32)
    return np.concatenate(chunks)


def class_probabilities(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax of (n, 2) logits, as plain arrays."""
    with ndgrad.no_grad():
        return ndgrad.softmax(Tensor(logits), axis=-1).data


def predict_proba(
    params: ModelParams, windows: np.ndarray, batch_size: int = 512
) -> np.ndarray:
    """Positive-class probability per window (classification head only)."""
    if params.head_kind != "classification":
        raise HeadMismatchError(
            f"Scoring needs a classification head, this model has a {params.head_kind} head"
        )
    features = backbone_features(params, windows, batch_size)
    with ndgrad.no_grad():
        logits = head_forward(Tensor(features), params).data
    return class_probabilities(logits)[:, 1]
