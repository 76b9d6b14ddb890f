"""The sslchrono command-line tool."""
import json
import sys
from pathlib import Path
from typing import List, Optional, Tuple

import pandas as pd
from traitlets import Int, TraitError, Unicode, default
from traitlets.config import Application

from .__about__ import __version__
from .checkpoint import load_checkpoint, save_checkpoint
from .config import load_config_file, seed_from_environment
from .evaluation import (
    SweepConfig,
    SweepInputs,
    SweepResult,
    auc,
    build_sweep_inputs,
    pretrain_objective,
    run_sweep,
    score_test_set,
)
from .plotting import plot_sweep, save_svg
from .synth_cohort import (
    CohortParams,
    CohortSplit,
    ParticipantSeries,
    cohort_from_frame,
    cohort_to_frame,
    episodes_to_frame,
    generate_cohort,
    split_cohort,
    standardize,
    subset,
)
from .training import FinetuneConfig, PretrainConfig, TrainConfig, finetune
from .transformer import ModelConfig
from .util import (
    ConfigError,
    DatasetError,
    DestinationNotWritableError,
    SslchronoError,
    derive_rng,
    derive_seed,
    ensure_writable_dir,
    write_csv,
)

__all__ = ["main"]

CONFIGURABLES = [
    CohortParams,
    ModelConfig,
    TrainConfig,
    PretrainConfig,
    FinetuneConfig,
    SweepConfig,
]

COHORT_CSV = "cohort.csv"
EPISODES_CSV = "episodes.csv"
STATS_JSON = "stats.json"
SPLITS_JSON = "splits.json"
RUN_CONFIG_JSON = "run_config.json"
SWEEP_CSV = "sweep.csv"
SWEEP_SVG = "sweep.svg"

EXIT_OK, EXIT_ERROR, EXIT_FAILED_CELLS = 0, 1, 2

COMMON_ALIASES = {
    "config": "SslchronoApp.config_file",
    "output-dir": "SslchronoApp.output_dir",
    "data-dir": "SslchronoApp.data_dir",
    "seed": "SslchronoApp.seed",
    "log-level": "Application.log_level",
}


class SslchronoApp(Application):

    """Shared settings of every command: the fully resolved run configuration.

    Precedence, lowest first: trait defaults, the --config file, command-line
    flags, then the SSLCHRONO_SEED environment variable.
    """

    name = "sslchrono"
    version = __version__
    classes = CONFIGURABLES
    aliases = COMMON_ALIASES

    config_file = Unicode(
        "", help="TOML, YAML or JSON file with one section per class.", config=True
    )
    output_dir = Unicode(".", help="Directory outputs are written to.", config=True)
    data_dir = Unicode(
        "",
        help="Directory holding the generated dataset (defaults to output_dir).",
        config=True,
    )
    seed = Int(
        None,
        allow_none=True,
        help="Master seed; replaces the seed of every configuration section.",
        config=True,
    )

    exit_code = EXIT_OK

    @default("log")
    def _log_default(self):
        if isinstance(self.parent, Application):
            return self.parent.log
        return super()._log_default()

    def initialize(self, argv=None):
        super().initialize(argv)
        if self.config_file:
            # Flags given on the command line win over the file.
            command_line = self.config.copy()
            self.update_config(load_config_file(self.config_file))
            self.update_config(command_line)
        environment_seed = seed_from_environment()
        if environment_seed is not None:
            self.seed = environment_seed

    @property
    def output_path(self) -> Path:
        return Path(self.output_dir)

    @property
    def data_path(self) -> Path:
        return Path(self.data_dir or self.output_dir)

    def configurable(self, cls):
        """Build one configuration section, apply the master seed and validate it."""
        section = cls(parent=self)
        if self.seed is not None:
            if "seed" in section.trait_names(config=True):
                section.seed = self.seed
            if isinstance(section, SweepConfig):
                section.seeds = [self.seed]
        section.validate_config()
        return section

    def write_run_config(self, command: str) -> Path:
        resolved = {
            cls.__name__: self.configurable(cls).to_dict()
            for cls in CONFIGURABLES
            if cls is not TrainConfig
        }
        resolved["SslchronoApp"] = {
            "output_dir": self.output_dir,
            "data_dir": self.data_dir,
            "seed": self.seed,
        }
        resolved["command"] = {"name": command, "version": __version__}
        return self.write_json(RUN_CONFIG_JSON, resolved)

    def write_json(self, filename: str, data) -> Path:
        path = ensure_writable_dir(self.output_path) / filename
        try:
            path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
        except OSError:
            raise DestinationNotWritableError(path)
        self.log.info("[sslchrono] Wrote %s", path)
        return path

    def write_csv(self, frame: pd.DataFrame, filename: str, **kwargs) -> Path:
        path = write_csv(frame, self.output_path / filename, **kwargs)
        self.log.info("[sslchrono] Wrote %s", path)
        return path

    def load_dataset(self) -> Tuple[List[ParticipantSeries], CohortSplit]:
        """Read the cohort and its split written by `sslchrono generate`.

        Raises: DatasetError
        """
        paths = [self.data_path / f for f in (COHORT_CSV, EPISODES_CSV, SPLITS_JSON)]
        missing = [str(p) for p in paths if not p.exists()]
        if missing:
            raise DatasetError(
                f"Missing dataset files {', '.join(missing)} (run `sslchrono generate`)"
            )
        cohort = cohort_from_frame(pd.read_csv(paths[0]), pd.read_csv(paths[1]))
        split = CohortSplit.from_dict(json.loads(paths[2].read_text()))
        split.check_disjoint()
        return cohort, split

    def sweep_inputs(self, objectives=None) -> Tuple[SweepInputs, CohortSplit]:
        cohort, split = self.load_dataset()
        params = self.configurable(CohortParams)
        if objectives is None:
            objectives = self.configurable(SweepConfig).objectives
        return build_sweep_inputs(cohort, split, params, objectives), split


class GenerateApp(SslchronoApp):

    description = "Generate a synthetic cohort, its split and its standardization stats."

    def start(self):
        params = self.configurable(CohortParams)
        ensure_writable_dir(self.output_path)
        cohort = generate_cohort(params)
        split = split_cohort(cohort, derive_rng(params.seed, "split"), params)
        _, stats = standardize(subset(cohort, split.ssl_train))
        self.write_csv(cohort_to_frame(cohort), COHORT_CSV)
        self.write_csv(episodes_to_frame(cohort), EPISODES_CSV)
        self.write_json(STATS_JSON, stats.to_dict())
        self.write_json(SPLITS_JSON, split.to_dict())
        self.write_run_config("generate")


class PretrainApp(SslchronoApp):

    description = "Pretrain a backbone on one next-day objective."
    aliases = dict(COMMON_ALIASES, objective="PretrainConfig.objective")

    def start(self):
        cfg = self.configurable(PretrainConfig)
        if cfg.objective == "ili":
            raise ConfigError("Pretraining objective must be one of rhr, tib, cal")
        inputs, _ = self.sweep_inputs([cfg.objective])
        params, report = pretrain_objective(
            self.configurable(ModelConfig),
            cfg,
            cfg.objective,
            cfg.seed,
            inputs.ssl[cfg.objective],
        )
        stem = f"pretrain_{cfg.objective}"
        path = save_checkpoint(
            self.output_path / f"{stem}.ckpt",
            params,
            {"phase": "pretrain", "objective": cfg.objective, "seed": cfg.seed},
        )
        self.log.info("[sslchrono] Wrote %s", path)
        self.write_csv(report.to_frame(), f"{stem}_report.csv")
        self.write_csv(report.steps_frame(), f"{stem}_steps.csv")
        self.write_run_config("pretrain")


class FinetuneApp(SslchronoApp):

    description = "Train a fresh ILI head on a frozen pretrained backbone."
    aliases = dict(
        COMMON_ALIASES,
        checkpoint="FinetuneApp.checkpoint",
        **{"n-adapt": "FinetuneApp.n_adapt"},
    )

    checkpoint = Unicode("", help="Pretrained checkpoint to finetune.", config=True)
    n_adapt = Int(25, help="Adaptation set size (participants).", config=True)

    def start(self):
        if not self.checkpoint:
            raise ConfigError("finetune needs --checkpoint")
        source = load_checkpoint(self.checkpoint)
        inputs, split = self.sweep_inputs([])
        if self.n_adapt not in split.sizes:
            raise ConfigError(
                f"--n-adapt={self.n_adapt} is not one of the split's sizes {split.sizes}"
            )
        cfg = self.configurable(FinetuneConfig)
        cfg = cfg.copy(seed=derive_seed(cfg.seed, "head", self.n_adapt))
        params, report = finetune(source.params, inputs.adaptation[self.n_adapt], cfg)

        objective = source.metadata.get("objective", "unknown")
        stem = f"finetune_{objective}_n{self.n_adapt}"
        path = save_checkpoint(
            self.output_path / f"{stem}.ckpt",
            params,
            dict(
                source.metadata,
                phase="finetune",
                n_adaptation=self.n_adapt,
                backbone_checksum=params.checksum("backbone"),
            ),
        )
        self.log.info("[sslchrono] Wrote %s", path)
        self.write_csv(report.to_frame(), f"{stem}_report.csv")
        self.write_csv(report.steps_frame(), f"{stem}_steps.csv")
        self.write_run_config("finetune")


class EvaluateApp(SslchronoApp):

    description = "Score the held-out test participants and print the AUC."
    aliases = dict(COMMON_ALIASES, checkpoint="EvaluateApp.checkpoint")

    checkpoint = Unicode("", help="Finetuned (classification) checkpoint.", config=True)

    def start(self):
        if not self.checkpoint:
            raise ConfigError("evaluate needs --checkpoint")
        model = load_checkpoint(self.checkpoint).params
        inputs, _ = self.sweep_inputs([])
        scored = score_test_set(model, inputs.test)
        self.write_csv(
            scored.to_frame(), f"scores_{Path(self.checkpoint).stem}.csv", float_format=None
        )
        self.write_run_config("evaluate")
        value = auc(scored)
        self.log.info("[sslchrono] Test AUC %.4f over %d windows", value, len(scored))
        print(f"auc={value!r}")


class SweepApp(SslchronoApp):

    description = "Pretrain each objective and finetune it at every adaptation size."

    def start(self):
        sweep_cfg = self.configurable(SweepConfig)
        inputs, split = self.sweep_inputs(sweep_cfg.objectives)
        result = run_sweep(
            inputs,
            split,
            self.configurable(ModelConfig),
            self.configurable(PretrainConfig),
            self.configurable(FinetuneConfig),
            sweep_cfg,
        )
        self.write_csv(result.to_frame(), SWEEP_CSV)
        save_svg(plot_sweep(result), self.output_path / SWEEP_SVG)
        if result.failures:
            self.write_csv(result.failures_frame(), "sweep_failures.csv")
            self.log.warning("[sslchrono] %d sweep cells failed", len(result.failures))
            self.exit_code = EXIT_FAILED_CELLS
        self.write_run_config("sweep")
        print(result.table(with_reference=True).to_string(float_format="%.3f"))


class _SweepReader(SslchronoApp):

    sweep_csv = Unicode(
        "", help="Sweep results to read (defaults to <output_dir>/sweep.csv).", config=True
    )

    def read_sweep(self) -> SweepResult:
        path = Path(self.sweep_csv) if self.sweep_csv else self.output_path / SWEEP_CSV
        try:
            frame = pd.read_csv(path)
        except OSError as e:
            raise DatasetError(f"Can't read sweep results {path}: {e}")
        return SweepResult.from_frame(frame)


class PlotApp(_SweepReader):

    description = "Re-render the sweep chart from a sweep CSV."
    aliases = dict(COMMON_ALIASES, **{"sweep-csv": "PlotApp.sweep_csv"})

    def start(self):
        path = save_svg(plot_sweep(self.read_sweep()), self.output_path / SWEEP_SVG)
        self.log.info("[sslchrono] Wrote %s", path)
        self.write_run_config("plot")


class TableApp(_SweepReader):

    description = "Print mean AUC per adaptation size next to the published values."
    aliases = dict(COMMON_ALIASES, **{"sweep-csv": "TableApp.sweep_csv"})

    def start(self):
        table = self.read_sweep().table(with_reference=True)
        print(table.to_string(float_format="%.3f"))


def _subcommand(cls):
    # Fresh instances each time rather than traitlets' per-class singletons.
    return (lambda parent: cls(parent=parent), cls.description)


class SslchronoMain(Application):

    name = "sslchrono"
    version = __version__
    description = "Self-supervised pretraining and ILI finetuning on synthetic wearable data."
    subcommands = {
        "generate": _subcommand(GenerateApp),
        "pretrain": _subcommand(PretrainApp),
        "finetune": _subcommand(FinetuneApp),
        "evaluate": _subcommand(EvaluateApp),
        "sweep": _subcommand(SweepApp),
        "plot": _subcommand(PlotApp),
        "table": _subcommand(TableApp),
    }

    def start(self):
        if self.subapp is None:
            raise ConfigError(
                f"No command given (choose one of {', '.join(self.subcommands)})"
            )
        self.subapp.start()


def main(argv: Optional[List[str]] = None) -> int:
    """Run one command; returns 0 on success, 1 on error, 2 if sweep cells failed.

    Errors are reported on stderr as `sslchrono: error[<category>]: <message>`.
    """
    SslchronoMain.clear_instance()
    app = SslchronoMain.instance()
    try:
        app.initialize(argv)
        app.start()
    except SslchronoError as e:
        print(f"sslchrono: error[{e.category}]: {e}", file=sys.stderr)
        return EXIT_ERROR
    except TraitError as e:
        print(f"sslchrono: error[config]: {e}", file=sys.stderr)
        return EXIT_ERROR
    except SystemExit as e:
        # traitlets logs a command line it can't parse and exits; --help exits 0.
        if not e.code:
            return EXIT_OK
        command_line = " ".join(sys.argv[1:] if argv is None else argv)
        print(
            f"sslchrono: error[config]: Invalid command line {command_line!r} (see --help-all)",
            file=sys.stderr,
        )
        return EXIT_ERROR
    return app.subapp.exit_code if app.subapp is not None else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
