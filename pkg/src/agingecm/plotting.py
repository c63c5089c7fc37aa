"""Optional PNG renderings of the CLI tables (``--figures``).

Only the CLI imports this module, and only when figures are requested, so the
numerical outputs never depend on the plotting stack.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.figsize": (6.0, 3.8),
    "figure.dpi": 120,
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "legend.frameon": False,
    "savefig.bbox": "tight",
}


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    # no Software tag, so identical figures give identical bytes across matplotlib builds
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def capacity_figure(path, ages, mean, var, flags=None, truth=None, label="GP co-estimate", extra=None):
    """Capacity vs age with a 2-sigma band; ``extra`` is a list of ``(ages, mean, label)`` overlays."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ages = np.asarray(ages)
        mean = np.asarray(mean)
        sd = np.sqrt(np.asarray(var))
        ax.fill_between(ages, mean - 2 * sd, mean + 2 * sd, alpha=0.25, lw=0, label="±2σ")
        ax.plot(ages, mean, "o-", ms=3, label=label)
        if flags is not None:
            ext = np.array([f == "extrapolated" for f in flags])
            if ext.any():
                ax.plot(ages[ext], mean[ext], "--", color="C3", label="extrapolated")
        for a, m, lab in extra or []:
            ax.plot(a, m, "s-", ms=3, label=lab)
        if truth is not None:
            ax.plot(truth[0], truth[1], "k.", label="truth")
        ax.set_xlabel("age (days)")
        ax.set_ylabel("capacity (Ah)")
        ax.legend()
        return _save(fig, path)


def resistance_figure(path, ages, soc, r0, title="R0 (Ohm)"):
    """Heat map of the resistance surface at one current over (age, SOC)."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        mesh = ax.pcolormesh(np.asarray(ages), np.asarray(soc), np.asarray(r0).T, shading="nearest")
        fig.colorbar(mesh, ax=ax, label=title)
        ax.set_xlabel("age (days)")
        ax.set_ylabel("SOC")
        ax.grid(False)
        return _save(fig, path)


def curves_figure(path, curves, ylabel):
    """Differential curves coloured by age."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        cmap = plt.get_cmap("viridis")
        n = max(len(curves) - 1, 1)
        for k, c in enumerate(curves):
            ax.plot(c.discharge_ah, c.value, color=cmap(k / n), lw=1,
                    label=None if c.age is None else f"{c.age:.0f} d")
        ax.set_xlabel("discharged charge (Ah)")
        ax.set_ylabel(ylabel)
        if len(curves) <= 8:
            ax.legend()
        return _save(fig, path)


def modes_figure(path, series):
    """LLI and LAM_n vs age; ``series`` maps a source label to a :class:`DegradationModes`."""
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, 2, figsize=(8.0, 3.4), sharex=True)
        for label, m in series.items():
            axes[0].errorbar(m.ages, m.lli, yerr=m.lli_unc, fmt="o-", ms=3, capsize=2, label=label)
            axes[1].errorbar(m.ages, m.lam_n, yerr=m.lam_n_unc, fmt="o-", ms=3, capsize=2, label=label)
        axes[0].set_ylabel("LLI (%)")
        axes[1].set_ylabel("LAM_n (%)")
        for ax in axes:
            ax.set_xlabel("age (days)")
        axes[0].legend()
        return _save(fig, path)


def trace_figure(path, evaluations, phi, best):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        phi = np.asarray(phi, dtype=float)
        ok = np.isfinite(phi)
        ax.plot(np.asarray(evaluations)[ok], phi[ok], ".", ms=3, alpha=0.5, label="evaluation")
        ax.plot(evaluations, best, "-", label="best so far")
        ax.set_xlabel("evaluation")
        ax.set_ylabel("NLML")
        ax.legend()
        return _save(fig, path)


def correlation_figure(path, soc, coef):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.plot(soc, coef, "o-", ms=3)
        ax.axhline(0.8, color="k", lw=0.8, ls=":")
        ax.set_ylim(-1.05, 1.05)
        ax.set_xlabel("SOC")
        ax.set_ylabel("Pearson r (R0 vs dOCV)")
        return _save(fig, path)
