"""Static figures written next to the tabular outputs."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# keep PNG bytes stable across runs
_SAVE_KW = {"dpi": 120, "metadata": {"Software": None}}

MODEL_LABELS = {"ols": "OLS", "isotropic": "Iso", "anisotropic": "Aniso"}
MODEL_COLORS = {"ols": "0.35", "isotropic": "tab:green", "anisotropic": "tab:purple"}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def plot_variograms(empirical, fitted, path, title=None):
    """Directional residual variograms.

    ``empirical`` is a list of :class:`EmpiricalVariogram`; ``fitted`` maps
    direction to ``(lag, semivariance)`` pairs.  y is blue, x is red.
    """
    style = {
        "y": dict(color="tab:blue", marker="s", ls="--"),
        "x": dict(color="tab:red", marker="o", ls="-"),
    }
    fig, ax = plt.subplots(figsize=(5.5, 4))
    for v in empirical:
        s = style[v.direction]
        ax.plot(v.lags, v.semivariance, s["marker"], color=s["color"], mfc="none",
                label=f"experimental ({v.direction})")
    for direction, pts in fitted.items():
        if not pts:
            continue
        h, g = np.array(pts).T
        s = style[direction]
        ax.plot(h, g, ls=s["ls"], color=s["color"], label=f"fitted ({direction})")
    ax.set_xlabel("Lag (m)")
    ax.set_ylabel(r"Semivariance ((t ha$^{-1}$)$^2$)")
    ax.set_ylim(bottom=0)
    if title:
        ax.set_title(title)
    ax.legend(frameon=False, fontsize=8)
    _save(fig, path)


def plot_design(grid, mask, path, title=None):
    labels = np.where(mask.mask, mask.labels, np.nan).astype(float)
    x0, y0 = grid.origin
    w, h = grid.extent()
    fig, ax = plt.subplots(figsize=(4, 6))
    cmap = matplotlib.colors.ListedColormap(["#d9d9d9", "#2c7fb8"])
    ax.imshow(labels, origin="lower", extent=(x0, x0 + w, y0, y0 + h), cmap=cmap,
              vmin=0, vmax=1, interpolation="nearest")
    ax.set_xlabel("x (m)")
    ax.set_ylabel("y (m)")
    ax.set_aspect("equal")
    if title:
        ax.set_title(title)
    _save(fig, path)


def plot_effects(report, path):
    """Bias with mean 95% CI per design and model."""
    designs = list(dict.fromkeys(a.design for a in report.arms))
    models = list(dict.fromkeys(a.model for a in report.arms))
    fig, ax = plt.subplots(figsize=(1.2 + 1.3 * len(designs), 3.8))
    width = 0.8 / max(len(models), 1)
    for k, model in enumerate(models):
        for d, design in enumerate(designs):
            arm = report.arm(design, model)
            if not arm.n_ok:
                continue
            half = float(np.mean(arm.ci_high - arm.ci_low)) / 2
            x = d + (k - (len(models) - 1) / 2) * width
            ax.errorbar(x, arm.bias, yerr=half, fmt="o", capsize=3,
                        color=MODEL_COLORS.get(model), label=MODEL_LABELS.get(model, model) if d == 0 else None)
    ax.axhline(0, color="k", lw=0.8)
    ax.axhline(-report.truth, color="k", lw=0.8, ls=":")
    ax.set_xticks(range(len(designs)), designs)
    ax.set_ylabel(r"Bias (t ha$^{-1}$)")
    ax.legend(frameon=False, fontsize=8)
    _save(fig, path)


def plot_null(report, path):
    """Rejection rate (Monte-Carlo) or single-run p-value per arm."""
    designs = list(dict.fromkeys(a.design for a in report.arms))
    models = list(dict.fromkeys(a.model for a in report.arms))
    single = report.protocol == "single_run_p_value"
    fig, ax = plt.subplots(figsize=(1.2 + 1.3 * len(designs), 3.8))
    width = 0.8 / max(len(models), 1)
    for k, model in enumerate(models):
        xs, ys = [], []
        for d, design in enumerate(designs):
            arm = report.arm(design, model)
            if arm.n_ok:
                xs.append(d + (k - (len(models) - 1) / 2) * width)
                ys.append(arm.p[0] if single else arm.rejection_rate)
        ax.bar(xs, ys, width=width, color=MODEL_COLORS.get(model),
               label=MODEL_LABELS.get(model, model))
    ax.axhline(report.alpha_level, color="k", lw=0.8, ls="--")
    ax.set_xticks(range(len(designs)), designs)
    ax.set_ylabel("p-value" if single else "Rejection rate")
    ax.set_ylim(0, 1)
    ax.legend(frameon=False, fontsize=8)
    _save(fig, path)
