"""Figure rendering for the report paths.

Each report command writes its delimited data and, unless told otherwise,
a companion PNG with the same base name.  Figures use the Agg backend so
headless runs work.
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

__all__ = ["render_bode_figure", "render_sweep_figure"]


def render_bode_figure(omega, mag_full, mag_reduced, out_path, title=None):
    """Magnitude-vs-frequency comparison of the full and reduced models."""
    fig, ax = plt.subplots(figsize=(7.0, 4.4))
    ax.loglog(omega, mag_full, color="black", lw=1.6, label="full order")
    ax.loglog(omega, mag_reduced, color="tab:blue", lw=1.2, ls="--", label="reduced")
    ax.set_xlabel(r"$\omega$ [rad/s]")
    ax.set_ylabel("magnitude (largest singular value)")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(loc="best")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return out_path


def render_sweep_figure(n_values, h2_errors, out_path, title=None):
    """Achieved error across network sizes."""
    fig, ax = plt.subplots(figsize=(7.0, 4.4))
    ax.semilogy(n_values, h2_errors, marker="o", color="tab:blue", lw=1.2)
    ax.set_xlabel("number of areas N")
    ax.set_ylabel(r"$H_2$ error of the reduced network")
    ax.grid(True, which="both", alpha=0.3)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return out_path
