"""Optional PNG figures drawn from the CSV series that ``compare`` writes.

matplotlib is imported lazily so the rest of the package works without it.
"""
from __future__ import annotations

import csv
from pathlib import Path


def _read_columns(path: Path) -> dict:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        cols = {h: [] for h in header}
        for row in reader:
            for h, v in zip(header, row):
                cols[h].append(float(v))
    return cols


def _pyplot():
    try:
        import matplotlib
    except ImportError as exc:  # pragma: no cover - depends on the environment
        raise RuntimeError("plotting needs matplotlib (pip install 'neuim[plot]')") from exc
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def plot_series(path, out_png, channels=("iq_s", "dia_dt")) -> Path:
    """Truth against prediction for the named channels of one series CSV."""
    plt = _pyplot()
    cols = _read_columns(Path(path))
    fig, axes = plt.subplots(len(channels), 1, figsize=(7, 2.6 * len(channels)), sharex=True, squeeze=False)
    for ax, ch in zip(axes[:, 0], channels):
        ax.plot(cols["t"], cols[f"{ch}_true"], "k-", lw=1.2, label="truth")
        ax.plot(cols["t"], cols[f"{ch}_pred"], "r--", lw=1.0, label="prediction")
        ax.set_ylabel(ch)
        ax.grid(alpha=0.3)
    axes[0, 0].legend(loc="best", fontsize=8)
    axes[-1, 0].set_xlabel("t (s)")
    fig.tight_layout()
    fig.savefig(out_png, dpi=110)
    plt.close(fig)
    return Path(out_png)


def plot_convergence(paths: dict, out_png, column="L_physics") -> Path:
    """Training-loss curves of several runs on one log-scale axis."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(7, 4))
    for label, path in paths.items():
        cols = _read_columns(Path(path))
        ax.semilogy(cols["epoch"], cols[column], lw=1.0, label=label)
    ax.set_xlabel("epoch")
    ax.set_ylabel(column)
    ax.grid(alpha=0.3, which="both")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_png, dpi=110)
    plt.close(fig)
    return Path(out_png)


def render_compare(out_dir) -> list:
    """Draw every series and convergence CSV under a ``compare`` output directory into ``figures/``."""
    out_dir = Path(out_dir)
    fig_dir = out_dir / "figures"
    fig_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for series in sorted((out_dir / "series").glob("*/*.csv")):
        written.append(plot_series(series, fig_dir / f"{series.parent.name}_{series.stem}.png"))
    by_kind = {}
    for conv in sorted((out_dir / "convergence").glob("*.csv")):
        kind, _, method = conv.stem.partition("_")
        if method != "data-driven":
            by_kind.setdefault(kind, {})[method] = conv
    for kind, paths in by_kind.items():
        written.append(plot_convergence(paths, fig_dir / f"convergence_{kind}.png"))
    return written
