"""Figures written next to reports and stage dumps (Agg backend, PNG)."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

RC = {
    "font.size": 9,
    "axes.titlesize": 9,
    "axes.labelsize": 9,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "figure.dpi": 100,
    "savefig.bbox": "tight",
}
# no timestamp/version metadata, so reruns are byte-identical
PNG_METADATA = {"Software": None}


def _display(img) -> np.ndarray:
    a = np.clip(img.data, 0.0, 1.0)
    if a.shape[0] == 3:
        return a.transpose(1, 2, 0)
    return a[0]


def plot_stages(stages: dict, path, ncols: int = 4) -> None:
    """Grid of named images; 1-channel images are shown in gray, others use the first 3 planes."""
    items = [(k, v if v.channels in (1, 3) else type(v)(v.data[:3])) for k, v in stages.items()]
    nrows = -(-len(items) // ncols)
    with plt.rc_context(RC):
        fig, axes = plt.subplots(nrows, ncols, figsize=(2.2 * ncols, 2.3 * nrows), squeeze=False)
        for ax in axes.ravel():
            ax.axis("off")
        for ax, (name, img) in zip(axes.ravel(), items):
            ax.imshow(_display(img), cmap="gray", vmin=0, vmax=1, interpolation="nearest")
            ax.set_title(name)
        fig.savefig(path, metadata=PNG_METADATA)
        plt.close(fig)


def plot_report(rows, path) -> None:
    """PSNR and SSIM bars per row of a metrics report."""
    names = [r[0] for r in rows]
    x = np.arange(len(names))
    with plt.rc_context(RC):
        fig, (a1, a2) = plt.subplots(1, 2, figsize=(max(4.0, 0.9 * len(names) + 2), 2.6))
        a1.bar(x, [r[1] for r in rows], color="0.35")
        a1.set_ylabel("PSNR (dB)")
        a2.bar(x, [r[2] for r in rows], color="0.6")
        a2.set_ylabel("SSIM")
        a2.set_ylim(0, 1)
        for ax in (a1, a2):
            ax.set_xticks(x)
            ax.set_xticklabels(names, rotation=30, ha="right")
            ax.spines["top"].set_visible(False)
            ax.spines["right"].set_visible(False)
        fig.tight_layout()
        fig.savefig(path, metadata=PNG_METADATA)
        plt.close(fig)
