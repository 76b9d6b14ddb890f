"""ROC-AUC scoring and the adaptation-size sweep."""
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from traitlets import Bool, Enum, Int, List as ListTrait
from traitlets.log import get_logger

from .config import SslchronoConfigurable
from .synth_cohort import (
    FEATURES,
    CohortParams,
    CohortSplit,
    FeatureStats,
    ParticipantSeries,
    WindowSet,
    make_ili_windows,
    make_ssl_windows,
    standardize,
    subset,
)
from .training import FinetuneConfig, PretrainConfig, TrainReport, finetune, pretrain
from .transformer import ModelConfig, ModelParams, init_params, predict_proba
from .util import (
    ShapeError,
    SslchronoError,
    SslchronoWarning,
    UndefinedAUCError,
    derive_rng,
    derive_seed,
)

__all__ = [
    "PAPER_REFERENCE_AUC",
    "ScoredSet",
    "SweepCell",
    "SweepConfig",
    "SweepInputs",
    "SweepResult",
    "auc",
    "baseline_random_backbone",
    "build_sweep_inputs",
    "pairwise_auc",
    "pretrain_objective",
    "run_sweep",
    "score_test_set",
]

BASELINE = "baseline"
SWEEP_COLUMNS = ["objective", "n_adaptation", "auc", "seed", "paper_reference_auc"]

# Published test AUCs per (objective, adaptation participants). Reference only:
# they come from a private cohort.
PAPER_REFERENCE_AUC = {
    ("rhr", 25): 0.55,
    ("rhr", 50): 0.67,
    ("rhr", 100): 0.74,
    ("rhr", 200): 0.77,
    ("rhr", 400): 0.78,
    ("tib", 25): 0.49,
    ("tib", 50): 0.60,
    ("tib", 100): 0.74,
    ("tib", 200): 0.79,
    ("tib", 400): 0.79,
    ("cal", 25): 0.49,
    ("cal", 50): 0.55,
    ("cal", 100): 0.55,
    ("cal", 200): 0.62,
    ("cal", 400): 0.65,
}


@dataclass
class ScoredSet:

    """Positive-class probabilities with their ground-truth labels."""

    scores: np.ndarray
    labels: np.ndarray
    participant_ids: Optional[np.ndarray] = None
    end_days: Optional[np.ndarray] = None

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        n = len(self.scores)
        if self.participant_ids is None:
            self.participant_ids = np.full(n, -1, dtype=np.int64)
        if self.end_days is None:
            self.end_days = np.full(n, -1, dtype=np.int64)
        lengths = {n, len(self.labels), len(self.participant_ids), len(self.end_days)}
        if len(lengths) != 1:
            raise ShapeError(f"ScoredSet fields have different lengths {sorted(lengths)}")
        if n and (np.any(self.scores < 0) or np.any(self.scores > 1)):
            raise ShapeError("Scores must lie in [0, 1]")
        if not np.isin(self.labels, (0, 1)).all():
            raise ShapeError("Labels must be 0 or 1")

    def __len__(self):
        return len(self.scores)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "participant_id": self.participant_ids,
                "window_end_day": self.end_days,
                "score": self.scores,
                "label": self.labels,
            }
        )

    @classmethod
    def from_frame(cls, frame: pd.DataFrame) -> "ScoredSet":
        return cls(
            frame["score"].to_numpy(),
            frame["label"].to_numpy(),
            frame["participant_id"].to_numpy(),
            frame["window_end_day"].to_numpy(),
        )


def _class_counts(scored: ScoredSet) -> Tuple[int, int]:
    n_pos = int(scored.labels.sum())
    n_neg = len(scored.labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedAUCError(
            f"AUC needs both classes, got {n_pos} positive and {n_neg} negative labels"
        )
    return n_pos, n_neg


def auc(scored: ScoredSet) -> float:
    """Probability that a random positive outranks a random negative, ties
    counting one half (the Mann-Whitney U statistic over n_pos * n_neg).

    Counts are kept as integers (twice U) so the result is exactly the one
    `pairwise_auc` gives.

    Raises: UndefinedAUCError
    """
    n_pos, n_neg = _class_counts(scored)
    _, groups = np.unique(scored.scores, return_inverse=True)
    pos_per_value = np.bincount(groups, weights=scored.labels).astype(np.int64)
    all_per_value = np.bincount(groups).astype(np.int64)
    neg_per_value = all_per_value - pos_per_value
    neg_below = np.concatenate(([0], np.cumsum(neg_per_value)[:-1]))
    twice_u = int(np.sum(pos_per_value * (2 * neg_below + neg_per_value)))
    return twice_u / (2 * n_pos * n_neg)


def pairwise_auc(scored: ScoredSet) -> float:
    """O(n_pos * n_neg) reference for `auc`."""
    n_pos, n_neg = _class_counts(scored)
    pos = scored.scores[scored.labels == 1]
    neg = scored.scores[scored.labels == 0]
    twice_u = 0
    for p in pos:
        twice_u += 2 * int(np.sum(p > neg)) + int(np.sum(p == neg))
    return twice_u / (2 * n_pos * n_neg)


def score_test_set(model: ModelParams, test_windows: WindowSet) -> ScoredSet:
    """Eval-mode positive-class probabilities for every test window."""
    return ScoredSet(
        predict_proba(model, test_windows.inputs),
        test_windows.labels,
        test_windows.participant_ids,
        test_windows.end_days,
    )


class SweepConfig(SslchronoConfigurable):

    """Which objectives, seeds and controls the adaptation-size sweep runs."""

    objectives = ListTrait(
        Enum(FEATURES),
        list(FEATURES),
        help="Self-supervised objectives to pretrain.",
        config=True,
    )
    seeds = ListTrait(
        Int(), [0], help="Training seeds; each gives one AUC per cell.", config=True
    )
    include_baseline = Bool(
        False,
        help="Also finetune a never-pretrained, randomly initialized backbone.",
        config=True,
    )
    n_jobs = Int(1, help="Worker processes for pretraining (1 runs serially).", config=True)

    def validate_config(self):
        self._require(len(self.objectives) > 0, "objectives must not be empty")
        self._require(
            len(set(self.objectives)) == len(self.objectives), "objectives repeat"
        )
        self._require(len(self.seeds) > 0, "seeds must not be empty")
        self._require(self.n_jobs >= 1, f"n_jobs must be >= 1, got {self.n_jobs}")


@dataclass
class SweepCell:
    objective: str
    n_adaptation: int
    seed: int
    auc: float = math.nan
    error: Optional[str] = None

    @property
    def paper_reference_auc(self) -> float:
        return PAPER_REFERENCE_AUC.get((self.objective, self.n_adaptation), math.nan)

    @property
    def failed(self) -> bool:
        return self.error is not None


def _objective_order(objective: str) -> int:
    return FEATURES.index(objective) if objective in FEATURES else len(FEATURES)


@dataclass
class SweepResult:

    """Test AUC per (objective, adaptation size, seed); failed cells keep their
    reason in `error` and an AUC of NaN."""

    cells: List[SweepCell] = field(default_factory=list)

    def sorted_cells(self) -> List[SweepCell]:
        return sorted(
            self.cells, key=lambda c: (_objective_order(c.objective), c.n_adaptation, c.seed)
        )

    @property
    def failures(self) -> List[SweepCell]:
        return [c for c in self.sorted_cells() if c.failed]

    def to_frame(self) -> pd.DataFrame:
        rows = [
            (c.objective, c.n_adaptation, c.auc, c.seed, c.paper_reference_auc)
            for c in self.sorted_cells()
        ]
        return pd.DataFrame(rows, columns=SWEEP_COLUMNS)

    def failures_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [(c.objective, c.n_adaptation, c.seed, c.error) for c in self.failures],
            columns=["objective", "n_adaptation", "seed", "error"],
        )

    @classmethod
    def from_frame(cls, frame: pd.DataFrame) -> "SweepResult":
        return cls(
            [
                SweepCell(
                    str(row.objective), int(row.n_adaptation), int(row.seed), float(row.auc)
                )
                for row in frame.itertuples(index=False)
            ]
        )

    def table(self, with_reference: bool = False) -> pd.DataFrame:
        """Mean AUC over seeds: one row per adaptation size, one column per
        objective (and the baseline, if run)."""
        frame = self.to_frame()
        table = frame.pivot_table(
            index="n_adaptation",
            columns="objective",
            values="auc",
            aggfunc="mean",
            dropna=False,
        )
        columns = sorted(table.columns, key=_objective_order)
        table = table[columns]
        if with_reference:
            for objective in columns:
                if objective == BASELINE:
                    continue
                table[f"{objective} (published)"] = [
                    PAPER_REFERENCE_AUC.get((objective, n), math.nan) for n in table.index
                ]
        table.columns.name = None
        return table


@dataclass
class SweepInputs:

    """Standardized windows shared by every sweep cell."""

    ssl: Dict[str, WindowSet]
    adaptation: Dict[int, WindowSet]
    test: WindowSet
    stats: FeatureStats


def build_sweep_inputs(
    cohort: Sequence[ParticipantSeries],
    split: CohortSplit,
    params: CohortParams,
    objectives: Sequence[str] = FEATURES,
) -> SweepInputs:
    """Standardize with statistics of the self-supervised participants only,
    then cut every window set the sweep needs.

    Adaptation sets keep `negative_ratio` negatives per positive; the test set
    keeps every window.
    """
    ssl_cohort = subset(cohort, split.ssl_train)
    _, stats = standardize(ssl_cohort)
    standardized, _ = standardize(cohort, stats)
    ssl_cohort = subset(standardized, split.ssl_train)
    ssl = {
        objective: make_ssl_windows(ssl_cohort, objective, params.window_days)
        for objective in objectives
    }
    adaptation = {
        n: make_ili_windows(
            subset(standardized, split.adaptation(n)),
            params.negative_ratio,
            derive_rng(params.seed, "windows", n),
            params.window_days,
        )
        for n in split.sizes
    }
    test = make_ili_windows(
        subset(standardized, split.test), 0, window_days=params.window_days
    )
    return SweepInputs(ssl, adaptation, test, stats)


def pretrain_objective(
    model_cfg: ModelConfig,
    pretrain_cfg: PretrainConfig,
    objective: str,
    seed: int,
    windows: WindowSet,
) -> Tuple[ModelParams, TrainReport]:
    """Initialize a regression model for `objective` and pretrain it."""
    cfg = pretrain_cfg.copy(objective=objective, seed=seed)
    params = init_params(
        model_cfg.copy(head_kind="regression"),
        derive_rng(seed, "init", _objective_order(objective)),
    )
    return pretrain(params, windows, cfg)


def _pretrain_job(
    model_config: dict, train_config: dict, objective: str, seed: int, windows: WindowSet
):
    """`pretrain_objective` from plain-data arguments (picklable for workers)."""
    trained, report = pretrain_objective(
        ModelConfig(**model_config), PretrainConfig(**train_config), objective, seed, windows
    )
    return trained.arrays(), report


def _finetune_cells(
    objective: str,
    backbone: ModelParams,
    inputs: SweepInputs,
    cfg: FinetuneConfig,
    seed: int,
) -> List[SweepCell]:
    log = get_logger()
    cells = []
    for n, windows in sorted(inputs.adaptation.items()):
        cell = SweepCell(objective, n, seed)
        cells.append(cell)
        try:
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always", SslchronoWarning)
                model, _ = finetune(
                    backbone, windows, cfg.copy(seed=derive_seed(seed, "head", n))
                )
            for w in caught:
                log.warning("[sslchrono] %s n=%d seed=%d: %s", objective, n, seed, w.message)
            # A single-class adaptation set fails the cell.
            unusable = [w for w in caught if issubclass(w.category, SslchronoWarning)]
            if unusable:
                cell.error = f"{unusable[0].category.__name__}: {unusable[0].message}"
                continue
            cell.auc = auc(score_test_set(model, inputs.test))
            log.info("[sslchrono] %s n=%d seed=%d AUC=%.4f", objective, n, seed, cell.auc)
        except SslchronoError as e:
            cell.error = f"{type(e).__name__}: {e}"
            log.warning("[sslchrono] %s n=%d seed=%d failed: %s", objective, n, seed, e)
    return cells


def _model_from_arrays(model_cfg: ModelConfig, arrays: Dict[str, np.ndarray]) -> ModelParams:
    params = init_params(model_cfg.copy(head_kind="regression"), np.random.default_rng(0))
    for name, array in arrays.items():
        params[name].data = array
    return params


def run_sweep(
    inputs: SweepInputs,
    split: CohortSplit,
    model_cfg: ModelConfig,
    pretrain_cfg: PretrainConfig,
    finetune_cfg: FinetuneConfig,
    sweep_cfg: SweepConfig,
) -> SweepResult:
    """Pretrain once per (objective, seed), then finetune and score that same
    backbone at every adaptation size.

    A failing cell is recorded and the rest of the grid still runs.

    Raises: LeakageError (before any training)
    """
    split.check_disjoint()
    sweep_cfg.validate_config()
    log = sweep_cfg.log
    jobs = [(objective, seed) for seed in sweep_cfg.seeds for objective in sweep_cfg.objectives]
    args = [
        (model_cfg.to_dict(), pretrain_cfg.to_dict(), objective, seed, inputs.ssl[objective])
        for objective, seed in jobs
    ]
    log.info(
        "[sslchrono] Sweep: %d objectives x %d sizes x %d seeds",
        len(sweep_cfg.objectives),
        len(split.sizes),
        len(sweep_cfg.seeds),
    )

    outcomes = []  # type: List[object]
    if sweep_cfg.n_jobs > 1:
        with ProcessPoolExecutor(max_workers=sweep_cfg.n_jobs) as pool:
            futures = [pool.submit(_pretrain_job, *a) for a in args]
            for future in futures:
                try:
                    outcomes.append(future.result())
                except SslchronoError as e:
                    outcomes.append(e)
    else:
        for a in args:
            try:
                outcomes.append(_pretrain_job(*a))
            except SslchronoError as e:
                outcomes.append(e)

    result = SweepResult()
    for (objective, seed), outcome in zip(jobs, outcomes):
        if isinstance(outcome, SslchronoError):
            log.warning(
                "[sslchrono] Pretraining %s seed=%d failed: %s", objective, seed, outcome
            )
            result.cells.extend(
                SweepCell(objective, n, seed, error=f"{type(outcome).__name__}: {outcome}")
                for n in split.sizes
            )
            continue
        arrays, report = outcome
        log.info(
            "[sslchrono] Pretrained %s seed=%d, final loss %.5f",
            objective,
            seed,
            report.epoch_loss[-1],
        )
        backbone = _model_from_arrays(model_cfg, arrays)
        result.cells.extend(_finetune_cells(objective, backbone, inputs, finetune_cfg, seed))

    if sweep_cfg.include_baseline:
        for seed in sweep_cfg.seeds:
            result.cells.extend(baseline_random_backbone(inputs, model_cfg, finetune_cfg, seed))
    return result


def baseline_random_backbone(
    inputs: SweepInputs, model_cfg: ModelConfig, finetune_cfg: FinetuneConfig, seed: int
) -> List[SweepCell]:
    """The finetune protocol on a randomly initialized, never-trained backbone:
    one cell per adaptation size."""
    params = init_params(
        model_cfg.copy(head_kind="regression"), derive_rng(seed, "init", len(FEATURES))
    )
    return _finetune_cells(BASELINE, params, inputs, finetune_cfg, seed)
