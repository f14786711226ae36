"""
Report rendering: colormapped map figures, sweep trend plots, and aligned
text tables, written to files next to the delimited outputs.

Figures are rendered with the Agg backend and stripped metadata so repeated
runs produce byte-identical files.
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_SAVEFIG = dict(dpi=150, bbox_inches="tight", metadata={"Software": None})


def save_map_figure(path, arr, title: str, cbar_label: str,
                    vmin=None, vmax=None, cmap="viridis"):
    """Colormapped rendering of a 2-D map with a colorbar."""
    arr = np.asarray(arr, dtype=float)
    fig, ax = plt.subplots(figsize=(4.2, 3.4))
    im = ax.imshow(arr, origin="upper", vmin=vmin, vmax=vmax, cmap=cmap,
                   interpolation="nearest")
    ax.set_title(title)
    ax.set_xlabel("pixel j")
    ax.set_ylabel("pixel i")
    fig.colorbar(im, ax=ax, label=cbar_label)
    fig.savefig(path, **_SAVEFIG)
    plt.close(fig)


def save_depth_velocity_figures(out_dir, extr, gt=None):
    """Standard reconstruction report figures (depth map, velocity map)."""
    from pathlib import Path

    out_dir = Path(out_dir)
    save_map_figure(out_dir / "depth_map.png", extr.depth[..., 0] * 1e3,
                    "reconstructed depth", "depth [mm]")
    save_map_figure(out_dir / "velocity_map.png", extr.velocity[..., 0],
                    "reconstructed radial velocity", "velocity [m/s]",
                    cmap="coolwarm")
    if gt is not None:
        err = np.abs(extr.depth[..., 0] - np.asarray(gt.depth_map)) * 1e3
        save_map_figure(out_dir / "depth_error_map.png", err,
                        "absolute depth error", "error [mm]", cmap="magma")


def save_sweep_figure(path, axis_label, axis_values, series: dict,
                      ylabel: str, title: str):
    """Line plot of one metric across sweep cells, one line per method."""
    fig, ax = plt.subplots(figsize=(4.6, 3.4))
    for name, values in sorted(series.items()):
        ax.plot(axis_values, values, marker="o", label=name)
    ax.set_xlabel(axis_label)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.savefig(path, **_SAVEFIG)
    plt.close(fig)


_COLUMNS = [("mean_depth_error_mm", "mean err (mm)", "{:.3f}"),
            ("pct_within_2mm", "% < 2 mm", "{:.2f}"),
            ("pct_within_6mm", "% < 6 mm", "{:.2f}"),
            ("outlier_fraction", "outliers", "{:.4f}"),
            ("velocity_mae_mps", "vel MAE (m/s)", "{:.3f}")]


def metrics_table(rows) -> str:
    """Aligned text table; rows are (label, MetricsReport) pairs."""
    header = ["method"] + [name for _, name, _ in _COLUMNS]
    body = []
    for label, report in rows:
        cells = [label]
        for key, _, fmt in _COLUMNS:
            value = getattr(report, key)
            cells.append("-" if value is None else fmt.format(value))
        body.append(cells)
    widths = [max(len(r[c]) for r in [header] + body) for c in range(len(header))]
    def line(cells):
        return "  ".join(c.ljust(w) for c, w in zip(cells, widths)).rstrip()
    rule = "-" * (sum(widths) + 2 * (len(widths) - 1))
    return "\n".join([line(header), rule] + [line(r) for r in body]) + "\n"
