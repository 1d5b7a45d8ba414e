import logging
from pathlib import Path

import matplotlib
import numpy as np

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

logging.getLogger("matplotlib").setLevel(logging.WARNING)
logging.getLogger("PIL").setLevel(logging.WARNING)

logger = logging.getLogger("ntk-plots")


def plot_series(x, y, path, title: str = "", loglog: bool = False, fit=None, xlabel: str = "x", ylabel: str = "y") -> Path:
    """One scatter (log-log when asked) per file, with the fitted power law overlaid if given."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(x, y, "o-", markersize=4, linewidth=1)
    if loglog and all(v > 0 for v in x) and all(v > 0 for v in y):
        ax.set_xscale("log")
        ax.set_yscale("log")
        if fit is not None:
            xs = np.asarray(x, dtype=float)
            ax.plot(xs, np.exp(fit.intercept) * xs ** fit.exponent, "--", linewidth=1,
                    label=f"slope {fit.exponent:.3f}, r² {fit.r2:.3f}")
            ax.legend(fontsize=8)
    ax.set_title(title, fontsize=9)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
    return path


def plot_report(report, out_dir) -> list:
    """One SVG per series of a ProbeReport."""
    loglog = bool(report.meta.get("loglog"))
    paths = []
    for key, series in report.series.items():
        path = Path(out_dir) / f"{report.name}_{key}.svg"
        paths.append(plot_series(series.x, series.y, path, title=f"{report.name}: {key}", loglog=loglog,
                                 fit=report.fit, ylabel=key))
    logger.debug(f"[PLOT] wrote {len(paths)} plot(s) for {report.name}")
    return paths


def plot_sweep(rows, fit, path) -> Path:
    """Mean test error against d²/n for an xor sweep."""
    rows = sorted(rows, key=lambda r: r.d2_over_n)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    x = [r.d2_over_n for r in rows]
    ax.errorbar(x, [r.mean_error for r in rows], yerr=[r.std_error for r in rows], fmt="o", capsize=3)
    if fit is not None:
        ax.plot(x, [fit.intercept + fit.slope * v for v in x], "--", label=f"slope {fit.slope:.3f}")
        ax.legend(fontsize=8)
    ax.set_xlabel("d²/n")
    ax.set_ylabel("population 0-1 error")
    fig.tight_layout()
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg")
    plt.close(fig)
    return Path(path)
