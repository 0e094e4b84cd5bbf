"""Plot mean ELBO and posterior-parameter traces from a results directory.

Usage: python scripts/plot_traces.py results [--save figures]
Needs matplotlib (``pip install -e .[plot]``).
"""
import argparse
import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def read_columns(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return {k: [float(r[k]) for r in rows] for k in rows[0]}


def plot_group(run_dirs, columns, title, out):
    fig, axes = plt.subplots(1, len(columns), figsize=(4.5 * len(columns), 3.5))
    axes = [axes] if len(columns) == 1 else axes
    for d in run_dirs:
        data = read_columns(d / "mean_trace.csv")
        label = d.name.split("_")[-1] if not d.name.endswith("st_gumbel") else "st_gumbel"
        for ax, col in zip(axes, columns):
            ax.plot(data["step"], data[col], label=label, lw=1)
    for ax, col in zip(axes, columns):
        ax.set_xlabel("step")
        ax.set_ylabel(col)
    axes[0].legend()
    fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(out, dpi=120)
    plt.close(fig)
    print(f"wrote {out}")


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("results", type=Path)
    p.add_argument("--save", type=Path, default=Path("figures"))
    args = p.parse_args()
    args.save.mkdir(parents=True, exist_ok=True)
    groups = {
        "noisy_scale": ("elbo", "mean", "std"),
        "noisy_scale_ablation": ("elbo", "log_var"),
        "gmm": ("elbo",),
    }
    for prefix, columns in groups.items():
        dirs = sorted(d for d in args.results.iterdir()
                      if d.is_dir() and (d / "mean_trace.csv").exists()
                      and d.name.startswith(prefix + "_")
                      and not (prefix == "noisy_scale" and d.name.startswith("noisy_scale_ablation")))
        if dirs:
            plot_group(dirs, columns, prefix, args.save / f"{prefix}.png")


if __name__ == "__main__":
    main()
