"""AUC-versus-adaptation-size chart."""
from pathlib import Path
from typing import Union

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
from matplotlib.figure import Figure  # noqa: E402
from matplotlib.ticker import NullLocator  # noqa: E402

from .evaluation import BASELINE, SweepResult  # noqa: E402
from .util import DestinationNotWritableError, ensure_writable_dir  # noqa: E402

__all__ = ["plot_sweep", "save_svg"]

OBJECTIVE_LABELS = {
    "rhr": "Resting heart rate",
    "tib": "Time in bed",
    "cal": "Activity calories",
    BASELINE: "Random backbone",
}


def plot_sweep(result: SweepResult) -> Figure:
    """Mean test AUC (over seeds) against adaptation participants, log x-axis
    with one tick per size. One solid line per objective, the baseline dashed."""
    table = result.table()
    sizes = [int(n) for n in table.index]
    fig, ax = plt.subplots(figsize=(6, 4))
    for objective in table.columns:
        ax.plot(
            sizes,
            table[objective].to_numpy(),
            linestyle="--" if objective == BASELINE else "-",
            marker="o",
            label=OBJECTIVE_LABELS.get(objective, objective),
        )
    ax.set_xscale("log")
    ax.xaxis.set_minor_locator(NullLocator())
    ax.set_xticks(sizes)
    ax.set_xticklabels([str(n) for n in sizes])
    ax.set_xlabel("Adaptation participants")
    ax.set_ylabel("Test AUC")
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    return fig


def save_svg(fig: Figure, path: Union[str, Path]) -> Path:
    """Raises: DestinationNotWritableError"""
    path = Path(path)
    ensure_writable_dir(path.parent)
    # Fixed metadata keeps reruns byte-identical.
    matplotlib.rcParams["svg.hashsalt"] = "sslchrono"
    try:
        fig.savefig(path, format="svg", metadata={"Date": None})
    except OSError:
        raise DestinationNotWritableError(path)
    finally:
        plt.close(fig)
    return path
