"""Synthetic wearable cohort: daily resting heart rate, time in bed and activity
calories with missingness flags and lab-confirmed illness labels.

The generative model is invented: per-participant baselines, a weekly cycle,
autocorrelated daily noise, and a triangular illness profile that raises heart
rate and time in bed, lowers activity calories, and makes the device more likely
to be off.
"""
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, NamedTuple, Optional, Sequence, Union

import numpy as np
import pandas as pd
from numpy.lib.stride_tricks import sliding_window_view
from traitlets import Bool, Float, Int, List as ListTrait
from traitlets.log import get_logger

from .config import SslchronoConfigurable
from .util import (
    DatasetError,
    HorizonTooShortError,
    InsufficientParticipantsError,
    LeakageError,
    ZeroVarianceError,
    derive_rng,
)

__all__ = [
    "DATASET_COLUMNS",
    "FEATURES",
    "CohortParams",
    "CohortSplit",
    "DayRecord",
    "FeatureStats",
    "IllnessEpisode",
    "ParticipantSeries",
    "WindowSample",
    "WindowSet",
    "generate_cohort",
    "make_ili_windows",
    "make_ssl_windows",
    "split_cohort",
    "standardize",
]

FEATURES = ("rhr", "tib", "cal")
FLAGS = tuple(f"{f}_missing" for f in FEATURES)
DATASET_COLUMNS = ("participant_id", "day", *FEATURES, *FLAGS, "ili_positive")
EPISODE_COLUMNS = ("participant_id", "onset_day", "duration", "confirmation_day")
WINDOW_DAYS = 10
MAX_CONFIRMATION_LAG = 3
RHR_RANGE = (30.0, 220.0)
TIB_RANGE = (0.0, 1440.0)


class CohortParams(SslchronoConfigurable):

    """Parameters of the synthetic cohort and of its participant-level split."""

    n_participants = Int(1000, help="Number of participants.", config=True)
    horizon_days = Int(90, help="Days observed per participant.", config=True)
    window_days = Int(WINDOW_DAYS, help="Days per input window.", config=True)

    rhr_mean = Float(62.0, help="Population mean resting heart rate (bpm).", config=True)
    rhr_std = Float(7.0, help="Between-participant std of resting heart rate.", config=True)
    rhr_noise = Float(2.0, help="Day-to-day std of resting heart rate.", config=True)
    rhr_weekly = Float(0.5, help="Weekly-cycle amplitude of resting heart rate.", config=True)
    tib_mean = Float(450.0, help="Population mean minutes in bed.", config=True)
    tib_std = Float(45.0, help="Between-participant std of minutes in bed.", config=True)
    tib_noise = Float(35.0, help="Day-to-day std of minutes in bed.", config=True)
    tib_weekly = Float(25.0, help="Weekly-cycle amplitude of minutes in bed.", config=True)
    cal_mean = Float(450.0, help="Population mean activity kilocalories.", config=True)
    cal_std = Float(150.0, help="Between-participant std of activity calories.", config=True)
    cal_noise = Float(80.0, help="Day-to-day std of activity calories.", config=True)
    cal_weekly = Float(60.0, help="Weekly-cycle amplitude of activity calories.", config=True)
    noise_autocorrelation = Float(
        0.6,
        help="Lag-one autocorrelation of the day-to-day noise (0 makes days independent).",
        config=True,
    )

    rhr_illness_delta = Float(
        5.0, help="Resting heart rate increase at the illness peak (bpm).", config=True
    )
    tib_illness_delta = Float(
        60.0, help="Minutes-in-bed increase at the illness peak.", config=True
    )
    cal_illness_multiplier = Float(
        0.7, help="Activity calorie multiplier at the illness peak.", config=True
    )
    illness_duration = Int(
        7, help="Length of the triangular illness profile (days).", config=True
    )
    prevalence = Float(
        0.15, help="Probability that a participant has an illness episode.", config=True
    )
    base_missing = Float(0.05, help="Per feature-day probability of missingness.", config=True)
    illness_missing_boost = Float(
        0.15, help="Extra missingness probability on illness days.", config=True
    )
    negative_ratio = Float(
        5.0,
        help="Negative ILI windows kept per positive one (0 keeps every negative).",
        config=True,
    )

    adaptation_sizes = ListTrait(
        Int(),
        [25, 50, 100, 200, 400],
        help="Nested adaptation set sizes (participants).",
        config=True,
    )
    test_size = Int(64, help="Held-out test participants.", config=True)
    min_ssl_participants = Int(
        32, help="Fewest participants the self-supervised population may have.", config=True
    )
    stratify = Bool(
        True,
        help="Spread ill participants proportionally through test and adaptation sets.",
        config=True,
    )
    exclude_ill_from_ssl = Bool(
        False,
        help="Drop participants with an illness episode from the self-supervised set.",
        config=True,
    )
    seed = Int(0, help="Random seed for generation and splitting.", config=True)

    def validate_config(self):
        self._require(self.n_participants >= 1, "n_participants must be positive")
        if self.horizon_days < self.window_days + 2:
            raise HorizonTooShortError(
                f"horizon_days={self.horizon_days} is too short for "
                f"{self.window_days}-day windows plus a target day (need >= "
                f"{self.window_days + 2})"
            )
        for name in ("prevalence", "base_missing", "illness_missing_boost"):
            value = getattr(self, name)
            self._require(0 <= value <= 1, f"{name} must be in [0, 1], got {value}")
        self._require(
            self.base_missing + self.illness_missing_boost <= 1,
            "base_missing + illness_missing_boost must not exceed 1",
        )
        for feature in FEATURES:
            self._require(getattr(self, f"{feature}_std") >= 0, f"{feature}_std < 0")
            self._require(getattr(self, f"{feature}_noise") >= 0, f"{feature}_noise < 0")
        self._require(self.cal_illness_multiplier >= 0, "cal_illness_multiplier < 0")
        self._require(
            0 <= self.noise_autocorrelation < 1,
            f"noise_autocorrelation must be in [0, 1), got {self.noise_autocorrelation}",
        )
        self._require(self.illness_duration >= 1, "illness_duration must be positive")
        self._require(self.negative_ratio >= 0, "negative_ratio must be >= 0")
        self._require(
            len(self.adaptation_sizes) > 0
            and all(n > 0 for n in self.adaptation_sizes),
            "adaptation_sizes must be positive",
        )
        self._require(self.test_size >= 1, "test_size must be positive")


class DayRecord(NamedTuple):
    rhr: float
    tib: float
    cal: float
    rhr_missing: int
    tib_missing: int
    cal_missing: int
    ili_positive: int


@dataclass
class IllnessEpisode:
    onset_day: int
    duration: int
    confirmation_day: int


@dataclass
class ParticipantSeries:

    """One participant's consecutive days.

    `values` holds (days, 3) feature values, imputed where `missing` is 1;
    `units` is "raw" or "z" (standardized).
    """

    participant_id: int
    values: np.ndarray
    missing: np.ndarray
    ili_positive: np.ndarray
    episodes: List[IllnessEpisode] = field(default_factory=list)
    units: str = "raw"

    @property
    def n_days(self) -> int:
        return len(self.values)

    def day(self, index: int) -> DayRecord:
        return DayRecord(
            *(float(v) for v in self.values[index]),
            *(int(m) for m in self.missing[index]),
            int(self.ili_positive[index]),
        )


def illness_profile(duration: int) -> np.ndarray:
    """Triangular intensity rising to 1 at the middle day of the episode."""
    centre = (duration - 1) / 2
    return 1 - np.abs(np.arange(duration) - centre) / (centre + 1)


def peak_offset(duration: int) -> int:
    return int(np.argmax(illness_profile(duration)))


def autoregressive(shocks: np.ndarray, rho: float) -> np.ndarray:
    """AR(1) series along axis 0 with unit marginal variance, driven by
    standard normal `shocks`; rho=0 returns the shocks unchanged."""
    out = shocks.copy()
    scale = np.sqrt(1 - rho ** 2)
    for t in range(1, len(out)):
        out[t] = rho * out[t - 1] + scale * shocks[t]
    return out


def _generate_participant(
    index: int, params: CohortParams, rng: np.random.Generator
) -> ParticipantSeries:
    horizon = params.horizon_days
    days = np.arange(horizon)
    means = np.array([getattr(params, f"{f}_mean") for f in FEATURES])
    stds = np.array([getattr(params, f"{f}_std") for f in FEATURES])
    noise = np.array([getattr(params, f"{f}_noise") for f in FEATURES])
    weekly = np.array([getattr(params, f"{f}_weekly") for f in FEATURES])

    # Every draw happens regardless of the branch taken, so changing one
    # parameter doesn't reshuffle the rest of the participant's stream.
    baseline = rng.normal(means, stds)
    baseline[2] = max(baseline[2], 0.1 * params.cal_mean)
    phase = rng.uniform(0, 7)
    daily = autoregressive(
        rng.standard_normal((horizon, len(FEATURES))), params.noise_autocorrelation
    ) * noise
    is_ill = rng.random() < params.prevalence
    onset_draw, lag_draw = rng.random(), rng.random()
    missing_draw = rng.random((horizon, len(FEATURES)))

    values = baseline + np.sin(2 * np.pi * (days[:, None] + phase) / 7) * weekly + daily

    intensity = np.zeros(horizon)
    ili = np.zeros(horizon, dtype=np.int8)
    episodes = []
    earliest = params.window_days - 1
    latest = horizon - 1 - MAX_CONFIRMATION_LAG
    if is_ill and latest >= earliest:
        onset = earliest + int(onset_draw * (latest - earliest + 1))
        confirmation = onset + 1 + int(lag_draw * MAX_CONFIRMATION_LAG)
        end = min(onset + params.illness_duration, horizon)
        intensity[onset:end] = illness_profile(params.illness_duration)[: end - onset]
        ili[confirmation] = 1
        episodes.append(IllnessEpisode(onset, params.illness_duration, confirmation))

    values[:, 0] += params.rhr_illness_delta * intensity
    values[:, 1] += params.tib_illness_delta * intensity
    values[:, 2] *= 1 - (1 - params.cal_illness_multiplier) * intensity
    values[:, 0] = np.clip(values[:, 0], *RHR_RANGE)
    values[:, 1] = np.clip(values[:, 1], *TIB_RANGE)
    values[:, 2] = np.maximum(values[:, 2], 0)

    p_missing = params.base_missing + params.illness_missing_boost * (intensity > 0)
    missing = (missing_draw < p_missing[:, None]).astype(np.int8)
    return ParticipantSeries(
        participant_id=index,
        values=impute(values, missing, fallback=means),
        missing=missing,
        ili_positive=ili,
        episodes=episodes,
    )


def impute(values: np.ndarray, missing: np.ndarray, fallback: np.ndarray) -> np.ndarray:
    """Replace missing entries by the participant's observed mean per feature.

    A feature never observed falls back to `fallback`.
    """
    values = values.copy()
    for j in range(values.shape[1]):
        observed = missing[:, j] == 0
        fill = values[observed, j].mean() if observed.any() else fallback[j]
        values[~observed, j] = fill
    return values


def generate_cohort(params: CohortParams) -> List[ParticipantSeries]:
    """Generate `params.n_participants` series, deterministically per seed.

    Each participant draws from its own stream (keyed by participant index), so
    generating participants in any order or in parallel gives the same cohort.

    Raises: HorizonTooShortError, ConfigError
    """
    params.validate_config()
    cohort = [
        _generate_participant(i, params, derive_rng(params.seed, "cohort", i))
        for i in range(params.n_participants)
    ]
    n_ill = sum(1 for s in cohort if s.episodes)
    get_logger().info(
        "[sslchrono] Generated %d participants x %d days (%d with an illness episode)",
        len(cohort),
        params.horizon_days,
        n_ill,
    )
    return cohort


@dataclass
class FeatureStats:

    """Per-feature mean and population std of observed values."""

    mean: Dict[str, float]
    std: Dict[str, float]

    @classmethod
    def compute(cls, cohort: Sequence[ParticipantSeries]) -> "FeatureStats":
        """Raises: ZeroVarianceError, EmptyDatasetError"""
        mean, std = {}, {}
        for j, feature in enumerate(FEATURES):
            observed = np.concatenate(
                [s.values[s.missing[:, j] == 0, j] for s in cohort] or [np.zeros(0)]
            )
            if observed.size == 0:
                raise ZeroVarianceError(feature)
            mean[feature] = float(observed.mean())
            std[feature] = float(observed.std())
            if not std[feature] > 0:
                raise ZeroVarianceError(feature)
        return cls(mean, std)

    def arrays(self):
        return (
            np.array([self.mean[f] for f in FEATURES]),
            np.array([self.std[f] for f in FEATURES]),
        )

    def to_dict(self):
        return {"mean": dict(self.mean), "std": dict(self.std)}

    @classmethod
    def from_dict(cls, data) -> "FeatureStats":
        return cls(
            {f: float(data["mean"][f]) for f in FEATURES},
            {f: float(data["std"][f]) for f in FEATURES},
        )


def standardize(
    cohort: Sequence[ParticipantSeries], stats: Optional[FeatureStats] = None
):
    """Z-score every feature with `stats` (computed from `cohort` if not given).

    Stats should come from the self-supervised population and be reused for the
    adaptation and test sets. Flags are untouched; series already in z-units are
    returned unchanged.

    Returns: (standardized cohort, stats)
    """
    if stats is None:
        stats = FeatureStats.compute([s for s in cohort if s.units == "raw"])
    mean, std = stats.arrays()
    out = []
    for s in cohort:
        if s.units == "z":
            out.append(s)
            continue
        out.append(
            ParticipantSeries(
                s.participant_id,
                (s.values - mean) / std,
                s.missing,
                s.ili_positive,
                s.episodes,
                units="z",
            )
        )
    return out, stats


class WindowSample(NamedTuple):
    inputs: np.ndarray
    target: float
    participant_id: int
    window_end_day: int


@dataclass
class WindowSet:

    """A batch of windows: inputs (n, days, 6), targets (n,), ids and end days (n,).

    Targets are standardized next-day values for self-supervised sets and 0/1
    labels for ILI sets. Behaves as a sequence of `WindowSample`.
    """

    inputs: np.ndarray
    targets: np.ndarray
    participant_ids: np.ndarray
    end_days: np.ndarray
    kind: str

    def __len__(self):
        return len(self.targets)

    def __getitem__(self, index: int) -> WindowSample:
        return WindowSample(
            self.inputs[index],
            self.targets[index].item(),
            int(self.participant_ids[index]),
            int(self.end_days[index]),
        )

    @property
    def labels(self) -> np.ndarray:
        return self.targets.astype(np.int64)

    def take(self, indices) -> "WindowSet":
        return WindowSet(
            self.inputs[indices],
            self.targets[indices],
            self.participant_ids[indices],
            self.end_days[indices],
            self.kind,
        )

    @classmethod
    def concatenate(cls, parts: Sequence["WindowSet"], kind: str, days: int) -> "WindowSet":
        if not parts:
            return cls(
                np.zeros((0, days, 2 * len(FEATURES)), dtype=np.float32),
                np.zeros(0, dtype=np.float32),
                np.zeros(0, dtype=np.int64),
                np.zeros(0, dtype=np.int64),
                kind,
            )
        return cls(
            np.concatenate([p.inputs for p in parts]),
            np.concatenate([p.targets for p in parts]),
            np.concatenate([p.participant_ids for p in parts]),
            np.concatenate([p.end_days for p in parts]),
            kind,
        )


SeriesOrCohort = Union[ParticipantSeries, Iterable[ParticipantSeries]]


def _as_cohort(series: SeriesOrCohort) -> List[ParticipantSeries]:
    return [series] if isinstance(series, ParticipantSeries) else list(series)


def _windows(s: ParticipantSeries, days: int):
    """All full windows whose following day exists: (inputs, end days)."""
    n = s.n_days - days
    if n <= 0:
        return None, None
    channels = np.concatenate([s.values, s.missing], axis=1).astype(np.float32)
    inputs = sliding_window_view(channels, days, axis=0)[:n].transpose(0, 2, 1)
    return np.ascontiguousarray(inputs), np.arange(days - 1, days - 1 + n)


def make_ssl_windows(
    series: SeriesOrCohort, target_feature: str, window_days: int = WINDOW_DAYS
) -> WindowSet:
    """Every stride-1 window whose next-day `target_feature` was observed.

    Windows with missing inputs are kept (the flags carry that information).
    """
    if target_feature not in FEATURES:
        raise ValueError(f"Unknown target feature {target_feature!r}")
    j = FEATURES.index(target_feature)
    parts = []
    for s in _as_cohort(series):
        inputs, end_days = _windows(s, window_days)
        if inputs is None:
            continue
        target_day = end_days + 1
        keep = s.missing[target_day, j] == 0
        parts.append(
            WindowSet(
                inputs[keep],
                s.values[target_day[keep], j].astype(np.float32),
                np.full(int(keep.sum()), s.participant_id, dtype=np.int64),
                end_days[keep],
                f"ssl:{target_feature}",
            )
        )
    return WindowSet.concatenate(parts, f"ssl:{target_feature}", window_days)


def make_ili_windows(
    series: SeriesOrCohort,
    negative_ratio: float = 5.0,
    rng: Optional[np.random.Generator] = None,
    window_days: int = WINDOW_DAYS,
) -> WindowSet:
    """Windows labelled 1 iff the day after the window is a confirmation day.

    Negatives are subsampled to `negative_ratio` per positive across the whole
    set; a set without positives (or a ratio of 0) keeps every window.
    """
    parts = []
    for s in _as_cohort(series):
        inputs, end_days = _windows(s, window_days)
        if inputs is None:
            continue
        parts.append(
            WindowSet(
                inputs,
                s.ili_positive[end_days + 1].astype(np.float32),
                np.full(len(end_days), s.participant_id, dtype=np.int64),
                end_days,
                "ili",
            )
        )
    windows = WindowSet.concatenate(parts, "ili", window_days)
    positives = np.flatnonzero(windows.targets == 1)
    negatives = np.flatnonzero(windows.targets == 0)
    n_keep = int(round(negative_ratio * len(positives)))
    if negative_ratio == 0 or len(positives) == 0 or n_keep >= len(negatives):
        return windows
    rng = rng if rng is not None else np.random.default_rng(0)
    kept = rng.choice(negatives, size=n_keep, replace=False)
    return windows.take(np.sort(np.concatenate([positives, kept])))


@dataclass
class CohortSplit:

    """Participant-level split. `adaptation(n)` is the first n ids of
    `adaptation_order`, so the adaptation sets are nested."""

    ssl_train: List[int]
    adaptation_order: List[int]
    test: List[int]
    sizes: List[int]

    def adaptation(self, n: int) -> List[int]:
        if n not in self.sizes:
            raise ValueError(f"Unknown adaptation size {n} (have {self.sizes})")
        return self.adaptation_order[:n]

    def check_disjoint(self):
        """Raises: LeakageError"""
        ssl, adapt, test = set(self.ssl_train), set(self.adaptation_order), set(self.test)
        if ssl & adapt or ssl & test or adapt & test:
            raise LeakageError(
                "Participants shared between splits: "
                f"{sorted((ssl & adapt) | (ssl & test) | (adapt & test))[:10]}"
            )

    def to_dict(self):
        return {
            "ssl_train": list(self.ssl_train),
            "adaptation_order": list(self.adaptation_order),
            "test": list(self.test),
            "sizes": list(self.sizes),
        }

    @classmethod
    def from_dict(cls, data) -> "CohortSplit":
        return cls(
            [int(i) for i in data["ssl_train"]],
            [int(i) for i in data["adaptation_order"]],
            [int(i) for i in data["test"]],
            [int(n) for n in data["sizes"]],
        )


def _interleave(first: Sequence[int], second: Sequence[int]) -> List[int]:
    """Merge two lists so every prefix holds them in proportion."""
    keyed = [((i + 0.5) / len(first), 0, x) for i, x in enumerate(first)]
    keyed += [((i + 0.5) / len(second), 1, x) for i, x in enumerate(second)]
    return [x for _, _, x in sorted(keyed)]


def split_cohort(
    cohort: Sequence[ParticipantSeries], rng: np.random.Generator, params: CohortParams
) -> CohortSplit:
    """Split participants into self-supervised, nested adaptation and test sets.

    Raises: InsufficientParticipantsError
    """
    sizes = sorted(set(params.adaptation_sizes))
    n_labelled = sizes[-1] + params.test_size
    ids = [s.participant_id for s in cohort]
    needed = n_labelled + params.min_ssl_participants
    if len(ids) < needed:
        raise InsufficientParticipantsError(
            f"Need at least {needed} participants ({sizes[-1]} adaptation + "
            f"{params.test_size} test + {params.min_ssl_participants} "
            f"self-supervised), got {len(ids)}"
        )
    ill = {s.participant_id for s in cohort if s.episodes}
    if params.stratify:
        ill_ids = list(rng.permutation(sorted(ill)))
        healthy_ids = list(rng.permutation(sorted(set(ids) - ill)))
        frac = len(ill_ids) / len(ids)
        n_test_ill = min(int(round(params.test_size * frac)), len(ill_ids))
        n_adapt_ill = min(int(round(sizes[-1] * frac)), len(ill_ids) - n_test_ill)
        n_test_healthy = params.test_size - n_test_ill
        n_adapt_healthy = sizes[-1] - n_adapt_ill
        test = ill_ids[:n_test_ill] + healthy_ids[:n_test_healthy]
        adaptation_order = _interleave(
            ill_ids[n_test_ill : n_test_ill + n_adapt_ill],
            healthy_ids[n_test_healthy : n_test_healthy + n_adapt_healthy],
        )
        rest = (
            ill_ids[n_test_ill + n_adapt_ill :]
            + healthy_ids[n_test_healthy + n_adapt_healthy :]
        )
    else:
        order = list(rng.permutation(ids))
        test = order[: params.test_size]
        adaptation_order = order[params.test_size : n_labelled]
        rest = order[n_labelled:]
    ssl_train = sorted(int(i) for i in rest if not (params.exclude_ill_from_ssl and i in ill))
    if len(ssl_train) < params.min_ssl_participants:
        raise InsufficientParticipantsError(
            f"Only {len(ssl_train)} participants left for self-supervised training "
            f"(need {params.min_ssl_participants})"
        )
    split = CohortSplit(
        ssl_train,
        [int(i) for i in adaptation_order],
        sorted(int(i) for i in test),
        sizes,
    )
    split.check_disjoint()
    return split


def subset(
    cohort: Sequence[ParticipantSeries], ids: Iterable[int]
) -> List[ParticipantSeries]:
    """The series with the given participant ids, in the order of `ids`."""
    by_id = {s.participant_id: s for s in cohort}
    try:
        return [by_id[i] for i in ids]
    except KeyError as e:
        raise DatasetError(f"Participant {e.args[0]} is not in the cohort")


def cohort_to_frame(cohort: Sequence[ParticipantSeries]) -> pd.DataFrame:
    """One row per participant-day, in DATASET_COLUMNS order."""
    frames = []
    for s in cohort:
        frame = pd.DataFrame(s.values, columns=list(FEATURES))
        frame.insert(0, "day", np.arange(s.n_days))
        frame.insert(0, "participant_id", s.participant_id)
        for j, flag in enumerate(FLAGS):
            frame[flag] = s.missing[:, j].astype(int)
        frame["ili_positive"] = s.ili_positive.astype(int)
        frames.append(frame)
    if not frames:
        return pd.DataFrame(columns=list(DATASET_COLUMNS))
    return pd.concat(frames, ignore_index=True)[list(DATASET_COLUMNS)]


def episodes_to_frame(cohort: Sequence[ParticipantSeries]) -> pd.DataFrame:
    rows = [
        (s.participant_id, e.onset_day, e.duration, e.confirmation_day)
        for s in cohort
        for e in s.episodes
    ]
    return pd.DataFrame(rows, columns=list(EPISODE_COLUMNS))


def cohort_from_frame(
    frame: pd.DataFrame, episodes: Optional[pd.DataFrame] = None
) -> List[ParticipantSeries]:
    """Inverse of `cohort_to_frame` (values in raw units).

    Raises: DatasetError
    """
    missing_columns = [c for c in DATASET_COLUMNS if c not in frame.columns]
    if missing_columns:
        raise DatasetError(f"Dataset is missing columns {missing_columns}")
    by_participant = {}  # type: Dict[int, List[IllnessEpisode]]
    if episodes is not None:
        for row in episodes.itertuples(index=False):
            by_participant.setdefault(int(row.participant_id), []).append(
                IllnessEpisode(
                    int(row.onset_day), int(row.duration), int(row.confirmation_day)
                )
            )
    cohort = []
    for pid, rows in frame.sort_values(["participant_id", "day"]).groupby(
        "participant_id", sort=True
    ):
        days = rows["day"].to_numpy()
        if not np.array_equal(days, np.arange(days[0], days[0] + len(days))):
            raise DatasetError(f"Participant {pid} has non-consecutive days")
        if rows[list(FEATURES)].isna().any().any():
            raise DatasetError(f"Participant {pid} has empty feature values")
        cohort.append(
            ParticipantSeries(
                int(pid),
                rows[list(FEATURES)].to_numpy(dtype=np.float64),
                rows[list(FLAGS)].to_numpy(dtype=np.int8),
                rows["ili_positive"].to_numpy(dtype=np.int8),
                by_participant.get(int(pid), []),
            )
        )
    return cohort
