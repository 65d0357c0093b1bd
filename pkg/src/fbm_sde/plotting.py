"""PNG figures written next to the CSV outputs of the ``report`` command."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path) -> None:
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_rate_curve(report, path, title: str = "") -> None:
    """log2 median error with quartile band and the fitted line."""
    x = np.log2(np.asarray(report.n_list, dtype=float))
    fig, ax = plt.subplots(figsize=(5.5, 4.0))
    ax.fill_between(x, np.log2(report.q1), np.log2(report.q3), alpha=0.25, label="quartiles")
    ax.plot(x, np.log2(report.median), "o-", label="median")
    ax.plot(x, report.intercept - report.slope * x, "--", label=f"fit: order {report.slope:.3f}")
    ref = report.intercept - report.theoretical_exponent * (x - x[0]) - report.slope * x[0]
    ax.plot(x, ref, ":", label=f"theory: order {report.theoretical_exponent:.3f}")
    ax.set_xlabel("log2 n")
    ax.set_ylabel("log2 |error|")
    if title:
        ax.set_title(title)
    ax.legend()
    _save(fig, path)


def plot_ratio_histogram(table, path, tolerance: float = 0.15) -> None:
    """Histogram of normalized error over its a.s. limit."""
    r = table.ratio[np.isfinite(table.ratio)]
    fig, ax = plt.subplots(figsize=(5.5, 4.0))
    if r.size:
        ax.hist(r, bins=min(40, max(5, r.size // 5)))
    ax.axvline(1.0, color="k")
    ax.axvspan(1.0 - tolerance, 1.0 + tolerance, alpha=0.15, color="g")
    ax.set_xlabel("normalized error / limit")
    ax.set_ylabel("paths")
    ax.set_title(f"n = {table.n}, median |ratio - 1| = {table.median_abs_deviation:.3g}")
    _save(fig, path)


def plot_limit_law(report, path) -> None:
    """Empirical CDFs of the normalized error and of the limit sample."""
    fig, ax = plt.subplots(figsize=(5.5, 4.0))
    for sample, label in ((report.sample_a, "normalized error"), (report.sample_b, "limit law")):
        if sample.size:
            s = np.sort(sample)
            ax.step(s, np.arange(1, s.size + 1) / s.size, where="post", label=label)
    ax.set_xlabel("value")
    ax.set_ylabel("empirical CDF")
    ax.set_title(f"KS = {report.ks_stat:.4f}, p = {report.p_value:.3g}")
    ax.legend()
    _save(fig, path)
