"""Standalone SVG charts for the study outputs.

SVGs are written with a fixed hash salt and no date so reruns are
byte-identical.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

SVG_METADATA = {"Date": None}


def _save(fig, path: Path) -> Path:
    with matplotlib.rc_context({"svg.hashsalt": "rfassign", "svg.fonttype": "none"}):
        fig.savefig(path, format="svg", metadata=SVG_METADATA)
    plt.close(fig)
    return path


def _distribution(ax, data) -> None:
    # violins need spread in every group; fall back to box plots otherwise
    if all(np.ptp(np.asarray(d)) > 0 for d in data):
        ax.violinplot(data, showmeans=True)
    else:
        ax.boxplot(data)


def _ordered(values, order):
    return sorted(set(values), key=lambda v: (order.index(v) if v in order else len(order), v))


def _violins(results, metric: str, path: Path, title: str) -> Path:
    from .bench import METHODS, STUDY_MECHANISMS

    ok = [r for r in results if not r.failed]
    mechs = _ordered([r.mechanism for r in ok], STUDY_MECHANISMS)
    methods = _ordered([r.method for r in ok], METHODS)
    fig, axes = plt.subplots(1, len(mechs), figsize=(2.6 * len(mechs), 3.6), sharey=True, squeeze=False)
    for ax, mech in zip(axes[0], mechs):
        data, labels = [], []
        for m in methods:
            vals = [getattr(r, metric) for r in ok if r.mechanism == mech and r.method == m]
            if vals:
                data.append(vals)
                labels.append(m)
        _distribution(ax, data)
        ax.set_xticks(range(1, len(labels) + 1), labels, rotation=90, fontsize=7)
        ax.set_title(mech, fontsize=9)
        if metric == "bias":
            ax.axhline(0.0, color="grey", lw=0.5)
    axes[0][0].set_ylabel(metric.upper())
    fig.suptitle(title, fontsize=10)
    fig.tight_layout()
    return _save(fig, path)


def _lines(summary, path: Path, title: str, by: str, panel: str) -> Path:
    from .bench import METHODS, STUDY_MECHANISMS

    panels = _ordered([s[panel] for s in summary], STUDY_MECHANISMS + METHODS)
    fig, axes = plt.subplots(1, len(panels), figsize=(3.0 * len(panels), 3.2), sharey=True, squeeze=False)
    for ax, pv in zip(axes[0], panels):
        rows = [s for s in summary if s[panel] == pv]
        for key in _ordered([s[by] for s in rows], METHODS + STUDY_MECHANISMS):
            sel = sorted((s for s in rows if s[by] == key), key=lambda s: s["rate_point"])
            ax.plot([100 * s["rate_point"] for s in sel], [s["mse_mean"] for s in sel], marker="o", ms=3, label=key)
        ax.set_title(pv, fontsize=9)
        ax.set_xlabel("missing %")
    axes[0][0].set_ylabel("average MSE")
    axes[0][-1].legend(fontsize=6)
    fig.suptitle(title, fontsize=10)
    fig.tight_layout()
    return _save(fig, path)


def study_figures(results, summary, out: Path) -> list[Path]:
    """One set of figures per study present in ``results``."""
    written = []
    studies = sorted({r.study for r in results})
    for study in studies:
        recs = [r for r in results if r.study == study]
        rows = [s for s in summary if s["study"] == study]
        if study == "mechanisms":
            written.append(_violins(recs, "mse", out / "fig_mechanisms_mse.svg", "MSE by mechanism"))
            written.append(_violins(recs, "bias", out / "fig_mechanisms_bias.svg", "Bias by mechanism"))
        elif study == "rates":
            written.append(_lines(rows, out / "fig_rates_mse.svg", "MSE against the missing rate", "method", "mechanism"))
        elif study == "test-missing":
            written.append(_lines(rows, out / "fig_test_missing_mse.svg", "MSE against test missingness",
                                  "mechanism", "method"))
    return written


def complexity_figure(rows, out: Path) -> Path:
    fig, ax = plt.subplots(figsize=(4.2, 3.4))
    for mode in ("EXHAUSTIVE", "DICHOTOMY"):
        sel = [r for r in rows if r.mode == mode]
        ax.loglog([r.n for r in sel], [r.cart_evaluations for r in sel], marker="o", label=mode.lower())
    ax.set_xlabel("n")
    ax.set_ylabel("criterion evaluations (one tree)")
    ax.legend(fontsize=7)
    fig.tight_layout()
    return _save(fig, out / "fig_complexity.svg")


def importance_figure(records, out: Path) -> Path:
    names = list(dict.fromkeys(r.feature for r in records))
    fig, axes = plt.subplots(1, 2, figsize=(7.0, 3.2))
    for ax, metric, label in zip(axes, ("pct_inc_mse", "inc_node_purity"), ("%IncMSE", "IncNodePurity")):
        data = [np.array([getattr(r, metric) for r in records if r.feature == n]) for n in names]
        _distribution(ax, data)
        ax.set_xticks(range(1, len(names) + 1), names)
        ax.set_title(label, fontsize=9)
    fig.tight_layout()
    return _save(fig, out / "fig_importance.svg")
