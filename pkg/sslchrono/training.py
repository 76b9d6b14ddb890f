"""Adam with cosine annealing and global-norm clipping, and the two training
loops: self-supervised pretraining and frozen-backbone finetuning."""
import math
import time
import warnings
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Sequence, Tuple

import numpy as np
import pandas as pd
from traitlets import Enum, Float, Int
from traitlets.log import get_logger

from . import ndgrad
from .config import SslchronoConfigurable
from .ndgrad import Tensor
from .synth_cohort import FEATURES, WindowSet
from .transformer import (
    BACKBONE,
    HEAD,
    ModelParams,
    backbone_features,
    forward,
    head_forward,
    swap_head,
)
from .util import (
    ConfigError,
    EmptyDatasetError,
    HeadMismatchError,
    NonFiniteError,
    ParameterError,
    ShapeError,
    SslchronoWarning,
    derive_rng,
)

__all__ = [
    "AdamState",
    "FinetuneConfig",
    "PretrainConfig",
    "TrainConfig",
    "TrainReport",
    "adam_step",
    "cosine_lr",
    "finetune",
    "fit_head",
    "pretrain",
]

OBJECTIVES = (*FEATURES, "ili")
PUBLISHED_LR0 = 1.0


class TrainConfig(SslchronoConfigurable):

    """Optimizer settings shared by both phases.

    `PretrainConfig` and `FinetuneConfig` inherit anything set on this section.
    """

    epochs = Int(50, help="Passes over the training windows.", config=True)
    batch_size = Int(64, help="Windows per optimizer step.", config=True)
    lr0 = Float(1e-3, help="Initial learning rate of the cosine schedule.", config=True)
    preset = Enum(
        ("desk", "paper"),
        "desk",
        help="'paper' replaces lr0 with the published initial learning rate of 1.",
        config=True,
    )
    clip = Float(1.0, help="Global gradient-norm cap.", config=True)
    beta1 = Float(0.9, help="Adam first-moment decay.", config=True)
    beta2 = Float(0.999, help="Adam second-moment decay.", config=True)
    adam_eps = Float(1e-8, help="Adam denominator epsilon.", config=True)
    seed = Int(0, help="Seed for shuffling, dropout and head initialization.", config=True)
    objective = Enum(OBJECTIVES, "rhr", help="Training target.", config=True)

    @property
    def learning_rate(self) -> float:
        return PUBLISHED_LR0 if self.preset == "paper" else self.lr0

    def validate_config(self):
        self._require(self.epochs >= 1, f"epochs must be >= 1, got {self.epochs}")
        self._require(self.batch_size >= 1, f"batch_size must be >= 1, got {self.batch_size}")
        self._require(self.lr0 >= 0, f"lr0 must be >= 0, got {self.lr0}")
        self._require(self.clip > 0, f"clip must be positive, got {self.clip}")
        self._require(0 <= self.beta1 < 1, f"beta1 must be in [0, 1), got {self.beta1}")
        self._require(0 <= self.beta2 < 1, f"beta2 must be in [0, 1), got {self.beta2}")
        self._require(self.adam_eps > 0, "adam_eps must be positive")


class PretrainConfig(TrainConfig):

    """Self-supervised next-day regression."""


class FinetuneConfig(TrainConfig):

    """Head-only training on ILI labels with the backbone frozen."""

    epochs = Int(30, help="Passes over the adaptation windows.", config=True)
    lr0 = Float(1e-2, help="Initial learning rate of the cosine schedule.", config=True)
    objective = Enum(OBJECTIVES, "ili", help="Training target.", config=True)


def cosine_lr(step: int, total_steps: int, lr0: float) -> float:
    """lr0 * (1 + cos(pi * step / total_steps)) / 2."""
    if total_steps <= 0:
        raise ParameterError(f"total_steps must be positive, got {total_steps}")
    if not 0 <= step <= total_steps:
        raise ParameterError(f"step {step} is outside [0, {total_steps}]")
    return lr0 * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))


@dataclass
class AdamState:
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(
    params: Sequence[Tuple[str, Tensor]],
    grads: Sequence[np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> AdamState:
    """One bias-corrected Adam update, applied to the tensors in place."""
    if len(params) != len(grads):
        raise ShapeError(f"Got {len(grads)} gradients for {len(params)} parameters")
    for (name, tensor), grad in zip(params, grads):
        if grad.shape != tensor.shape:
            raise ShapeError(
                f"Gradient shape {grad.shape} doesn't match parameter {name!r} "
                f"shape {tensor.shape}"
            )
    state.t += 1
    m_correction = 1 - beta1 ** state.t
    v_correction = 1 - beta2 ** state.t
    for (name, tensor), grad in zip(params, grads):
        m = state.m.setdefault(name, np.zeros_like(tensor.data))
        v = state.v.setdefault(name, np.zeros_like(tensor.data))
        m *= beta1
        m += (1 - beta1) * grad
        v *= beta2
        v += (1 - beta2) * grad * grad
        m_hat = m / m_correction
        v_hat = v / v_correction
        tensor.data -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(tensor.dtype)
    return state


@dataclass
class TrainReport:

    """Per-epoch mean loss and per-step learning rate and gradient norms.

    `grad_norm` is the norm before clipping, `clipped_norm` after.
    """

    objective: str
    epoch_loss: List[float] = field(default_factory=list)
    lr: List[float] = field(default_factory=list)
    grad_norm: List[float] = field(default_factory=list)
    clipped_norm: List[float] = field(default_factory=list)
    steps_per_epoch: int = 0
    wall_time: float = field(default=0.0, compare=False)

    @property
    def epochs(self) -> int:
        return len(self.epoch_loss)

    def to_frame(self) -> pd.DataFrame:
        """One row per epoch: mean loss, last learning rate, largest norms."""
        rows = []
        for epoch, loss in enumerate(self.epoch_loss):
            steps = slice(epoch * self.steps_per_epoch, (epoch + 1) * self.steps_per_epoch)
            rows.append(
                {
                    "epoch": epoch + 1,
                    "loss": loss,
                    "lr": self.lr[steps][-1],
                    "grad_norm": max(self.grad_norm[steps]),
                    "clipped_grad_norm": max(self.clipped_norm[steps]),
                }
            )
        return pd.DataFrame(
            rows, columns=["epoch", "loss", "lr", "grad_norm", "clipped_grad_norm"]
        )

    def steps_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "step": np.arange(len(self.lr)),
                "lr": self.lr,
                "grad_norm": self.grad_norm,
                "clipped_grad_norm": self.clipped_norm,
            }
        )


def _optimize(
    params: ModelParams,
    n_samples: int,
    loss_fn: Callable[[np.ndarray, np.random.Generator], Tensor],
    cfg: TrainConfig,
    rng: np.random.Generator,
) -> TrainReport:
    """Shuffled minibatches for cfg.epochs; the last partial batch is kept.

    Each step: loss -> backward -> clip_global_norm -> adam_step, with the
    learning rate annealed per step over the whole run.
    """
    log = get_logger()
    steps_per_epoch = math.ceil(n_samples / cfg.batch_size)
    total_steps = cfg.epochs * steps_per_epoch
    trainable = params.trainable()
    state = AdamState()
    report = TrainReport(cfg.objective, steps_per_epoch=steps_per_epoch)
    started = time.perf_counter()
    step = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(n_samples)
        losses = []
        for start in range(0, n_samples, cfg.batch_size):
            lr = cosine_lr(step, total_steps, cfg.learning_rate)
            try:
                loss = loss_fn(order[start : start + cfg.batch_size], rng)
                ndgrad.backward(loss)
            except NonFiniteError as e:
                raise NonFiniteError(f"Step {step} (epoch {epoch + 1}): {e}")
            grads = [
                t.grad if t.grad is not None else np.zeros_like(t.data)
                for _, t in trainable
            ]
            clipped, norm = ndgrad.clip_global_norm(grads, cfg.clip)
            adam_step(trainable, clipped, state, lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
            for _, tensor in trainable:
                tensor.zero_grad()

            losses.append(loss.item())
            report.lr.append(lr)
            report.grad_norm.append(norm)
            report.clipped_norm.append(ndgrad.global_norm(clipped))
            log.debug("[sslchrono] step %d lr=%.3g grad_norm=%.4g", step, lr, norm)
            step += 1
        # Weighted by batch size so the partial batch counts for what it holds.
        sizes = [
            min(cfg.batch_size, n_samples - s)
            for s in range(0, n_samples, cfg.batch_size)
        ]
        report.epoch_loss.append(float(np.average(losses, weights=sizes)))
        log.info(
            "[sslchrono] %s epoch %d/%d loss=%.5f",
            cfg.objective,
            epoch + 1,
            cfg.epochs,
            report.epoch_loss[-1],
        )
    report.wall_time = time.perf_counter() - started
    return report


def pretrain(
    params: ModelParams, windows: WindowSet, cfg: TrainConfig
) -> Tuple[ModelParams, TrainReport]:
    """Train the whole model (copied, the input is untouched) on next-day MSE.

    Raises: ConfigError, EmptyDatasetError, HeadMismatchError, NonFiniteError
    """
    cfg.validate_config()
    if windows.kind != f"ssl:{cfg.objective}":
        raise ConfigError(
            f"Windows are {windows.kind} but the pretraining objective is {cfg.objective}"
        )
    if params.head_kind != "regression":
        raise HeadMismatchError(
            f"Pretraining needs a regression head, got a {params.head_kind} head"
        )
    if len(windows) == 0:
        raise EmptyDatasetError(f"No {windows.kind} windows to pretrain on")
    params = params.copy()
    params.set_trainable((BACKBONE, HEAD))

    def loss_fn(indices, rng):
        pred = forward(windows.inputs[indices], params, "train", rng)
        return ndgrad.mse_loss(pred, windows.targets[indices])

    get_logger().info(
        "[sslchrono] Pretraining on %d %s windows for %d epochs",
        len(windows),
        windows.kind,
        cfg.epochs,
    )
    report = _optimize(params, len(windows), loss_fn, cfg, derive_rng(cfg.seed, "train"))
    params.set_trainable(())
    return params, report


def fit_head(
    features: np.ndarray, labels: np.ndarray, params: ModelParams, cfg: TrainConfig
) -> Tuple[ModelParams, TrainReport]:
    """Train only the head of `params` (in place) on fixed representations with
    cross-entropy; backbone tensors are never handed to the optimizer."""
    cfg.validate_config()
    if params.head_kind != "classification":
        raise HeadMismatchError(
            f"Head fitting needs a classification head, got a {params.head_kind} head"
        )
    labels = np.asarray(labels)
    if len(features) != len(labels):
        raise ShapeError(f"{len(features)} feature rows but {len(labels)} labels")
    if len(labels) == 0:
        raise EmptyDatasetError("No adaptation windows to fit the head on")
    params.set_trainable((HEAD,))
    features = np.asarray(features, dtype=params["head.weight"].dtype)

    def loss_fn(indices, rng):
        logits = head_forward(Tensor(features[indices]), params)
        return ndgrad.cross_entropy_loss(logits, labels[indices])

    report = _optimize(params, len(labels), loss_fn, cfg, derive_rng(cfg.seed, "train", 1))
    params.set_trainable(())
    return params, report


def finetune(
    pretrained: ModelParams, ili_windows: WindowSet, cfg: TrainConfig
) -> Tuple[ModelParams, TrainReport]:
    """Swap in a fresh classification head and train it on frozen, eval-mode
    backbone representations. The backbone comes out bit-identical.

    Raises: EmptyDatasetError
    """
    if len(ili_windows) == 0:
        raise EmptyDatasetError("Adaptation set has no windows")
    labels = ili_windows.labels
    if len(np.unique(labels)) < 2:
        warnings.warn(
            f"Adaptation set has a single class (all {labels[0]}); "
            "its AUC will be undefined",
            SslchronoWarning,
        )
    params = swap_head(pretrained, "classification", derive_rng(cfg.seed, "head"))
    params.set_trainable((HEAD,))
    features = backbone_features(params, ili_windows.inputs)
    get_logger().info(
        "[sslchrono] Finetuning head on %d windows (%d positive) for %d epochs",
        len(labels),
        int(labels.sum()),
        cfg.epochs,
    )
    return fit_head(features, labels, params, cfg)
