"""Figure rendering from validated causalink CSV tables."""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .schemas import validate_bias_surface, validate_sim_summary  # noqa: E402

_SCENARIO_ORDER = ("I", "II", "III")


def _scenario_panels(values):
    seen = {s for s, *_ in values} if values and isinstance(
        values[0], tuple) else {v["scenario"] for v in values}
    ordered = [s for s in _SCENARIO_ORDER if s in seen]
    ordered += sorted(seen - set(ordered))
    return ordered


def render_bias_surface(input_csv, output_path):
    """One panel per scenario: bias/alpha against beta, one line per phi.

    Returns a small stats dict for callers that want to assert on what was
    drawn (panel and line counts).
    """
    rows = validate_bias_surface(input_csv)
    panels = _scenario_panels(rows)
    all_phis = sorted({p for _, _, p, _ in rows})
    cmap = plt.get_cmap("viridis")

    def color_of(phi):
        k = all_phis.index(phi)
        return cmap(k / max(len(all_phis) - 1, 1))

    fig, axes = plt.subplots(1, len(panels),
                             figsize=(4.0 * len(panels), 3.4),
                             squeeze=False, sharey=True)
    n_lines = 0
    for ax, scenario in zip(axes[0], panels):
        sub = [(b, p, v) for s, b, p, v in rows if s == scenario]
        for phi in sorted({p for _, p, _ in sub}):
            pts = sorted((b, v) for b, p, v in sub if p == phi)
            betas = [b for b, _ in pts]
            vals = [v for _, v in pts]
            style = "o" if len(pts) == 1 else "-"
            ax.plot(betas, vals, style, color=color_of(phi))
            n_lines += 1
        ax.axhline(0.0, color="gray", lw=0.6, ls=":")
        ax.set_title(f"Scenario {scenario}")
        ax.set_xlabel(r"$\beta$")
    axes[0][0].set_ylabel(r"bias / $\alpha$")
    if len(all_phis) > 1:
        sm = plt.cm.ScalarMappable(
            cmap="viridis",
            norm=plt.Normalize(min(all_phis), max(all_phis)))
        fig.colorbar(sm, ax=axes[0], label=r"$\varphi$")
    else:
        fig.tight_layout()
    fig.savefig(output_path)
    plt.close(fig)
    return {"panels": len(panels), "lines": n_lines}


def render_sim_summary(input_csv, output_path):
    """Grouped bars of |bias| and SD per estimator, coverage annotated
    above each group when available; one panel per scenario if the summary
    carries a scenario column."""
    rows = validate_sim_summary(input_csv)
    panels = _scenario_panels(rows) or [""]
    fig, axes = plt.subplots(1, len(panels),
                             figsize=(max(4.0, 1.1 * len(rows)), 3.6),
                             squeeze=False, sharey=True)
    n_groups = 0
    for ax, scenario in zip(axes[0], panels):
        sub = [r for r in rows if r["scenario"] == scenario]
        ids = [r["estimator_id"] for r in sub]
        pos = np.arange(len(sub))
        width = 0.38
        ax.bar(pos - width / 2, [r["abs_bias"] for r in sub], width,
               label="|bias|", color="#33539c")
        ax.bar(pos + width / 2, [r["sd"] for r in sub], width,
               label="SD", color="#d08a2e")
        top = max((max(r["abs_bias"], r["sd"]) for r in sub), default=0.0)
        for k, r in enumerate(sub):
            if r["coverage"] is not None:
                ax.annotate(f"{100 * r['coverage']:.0f}%",
                            (pos[k], max(r["abs_bias"], r["sd"])),
                            xytext=(0, 4), textcoords="offset points",
                            ha="center", fontsize=8)
        ax.set_ylim(0, top * 1.25 if top else 1.0)
        ax.set_xticks(pos)
        ax.set_xticklabels(ids, rotation=45, ha="right")
        if scenario:
            ax.set_title(f"Scenario {scenario}")
        n_groups += len(sub)
    axes[0][0].set_ylabel("|bias| and SD")
    axes[0][-1].legend(frameon=False, fontsize=8)
    fig.tight_layout()
    fig.savefig(output_path)
    plt.close(fig)
    return {"panels": len(panels), "groups": n_groups}
