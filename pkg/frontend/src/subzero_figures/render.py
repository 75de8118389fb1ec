"""Render subzero CSV bundles as image files.

Five panels, one per bundle produced by ``subzero reproduce``:

==============  ==================  =========================================
panel           input (in --in)     shows
==============  ==================  =========================================
fig1-left       curves_mean.csv     one labeled loss curve per gamma
fig1-middle     middle.csv          iterations-to-target and the product
                                    iterations x mean-alignment, per gamma
fig1-right      alignment.csv       alignment distribution per ensemble and
                                    srank (violin or box), with one dashed
                                    mean-reference line per group
memory-table    memory.csv          stacked weights + auxiliary per method
traffic         traffic.csv         parameter loads per step vs block count
==============  ==================  =========================================

The renderer is presentation only: every plotted number is a CSV column
written by the harness (sample values, group means, curve points); no
loss, alignment, or statistic is recomputed here.  Images are written
with stripped volatile metadata so re-rendering identical inputs yields
identical bytes.
"""

from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "subzero-figures"

import matplotlib.pyplot as plt

PANELS = ("fig1-left", "fig1-middle", "fig1-right", "memory-table", "traffic")

PANEL_INPUTS = {
    "fig1-left": ("curves_mean.csv",),
    "fig1-middle": ("middle.csv",),
    "fig1-right": ("alignment.csv",),
    "memory-table": ("memory.csv",),
    "traffic": ("traffic.csv",),
}

ENSEMBLE_COLORS = {"lowrank": "#1f77b4", "sparse": "#2ca02c", "blocksparse": "#d62728"}


class SchemaError(ValueError):
    """An input CSV does not match the harness schema."""


@dataclass
class PanelSpec:
    """What to draw: a panel id, its input bundle, and the output path."""

    panel: str
    input_dir: Path
    output: Path
    style: str = "violin"  # distribution panel: "violin" or "box"
    log_y: bool | None = None  # None = per-panel default

    def __post_init__(self):
        self.input_dir = Path(self.input_dir)
        self.output = Path(self.output)
        if self.panel not in PANELS:
            raise SchemaError(f"unknown panel {self.panel!r} (want one of {PANELS})")
        if self.style not in ("violin", "box"):
            raise SchemaError(f"unknown style {self.style!r} (want 'violin' or 'box')")

    @property
    def input_paths(self):
        return [self.input_dir / name for name in PANEL_INPUTS[self.panel]]


@dataclass
class RenderReport:
    """What was drawn, for callers that verify the output."""

    output: Path
    groups: int = 0
    reference_lines: int = 0


def _read_rows(path: Path, required):
    if not path.exists():
        raise SchemaError(f"{path}: input file not found")
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        header = reader.fieldnames or []
        for column in required:
            if column not in header:
                raise SchemaError(f"{path}: missing column {column!r}")
        return list(reader)


def _save(fig, out: Path) -> None:
    out.parent.mkdir(parents=True, exist_ok=True)
    suffix = out.suffix.lower()
    if suffix == ".svg":
        metadata = {"Date": None, "Creator": None}
    elif suffix == ".png":
        metadata = {"Software": None}
    else:
        raise SchemaError(f"unsupported output format {suffix!r} (want .png or .svg)")
    fig.savefig(out, dpi=130, metadata=metadata, bbox_inches="tight")
    plt.close(fig)


def _render_curves(spec: PanelSpec) -> RenderReport:
    rows = _read_rows(spec.input_paths[0], ("gamma", "step", "mean_loss"))
    if not rows:
        raise SchemaError(f"{spec.input_paths[0]}: no curve rows")
    by_gamma = {}
    for r in rows:
        by_gamma.setdefault(float(r["gamma"]), []).append((int(r["step"]), float(r["mean_loss"])))
    fig, ax = plt.subplots(figsize=(6.0, 4.2))
    for gamma in sorted(by_gamma):
        pts = sorted(by_gamma[gamma])
        ax.plot([p[0] for p in pts], [p[1] for p in pts], label=f"gamma = {gamma:g}", linewidth=1.4)
    if spec.log_y is not False:
        ax.set_yscale("log")
    ax.set_xlabel("step")
    ax.set_ylabel("mean loss (5-seed average)")
    ax.set_title("Convergence under controlled-alignment projections")
    ax.legend(frameon=False, fontsize=9)
    _save(fig, spec.output)
    return RenderReport(spec.output, groups=len(by_gamma))


def _render_middle(spec: PanelSpec) -> RenderReport:
    rows = _read_rows(spec.input_paths[0], ("gamma", "mean_iterations", "rho_bar", "product"))
    if not rows:
        raise SchemaError(f"{spec.input_paths[0]}: no rows")
    gammas = [float(r["gamma"]) for r in rows]
    iters = [float(r["mean_iterations"]) for r in rows]
    products = [float(r["product"]) for r in rows]
    fig, ax = plt.subplots(figsize=(6.0, 4.2))
    ax.plot(gammas, iters, "o-", color="#1f77b4", label="iterations to target")
    if spec.log_y is not False:
        ax.set_yscale("log")
    ax.set_xlabel("gamma (fraction of eigenvector columns)")
    ax.set_ylabel("iterations to target", color="#1f77b4")
    ax2 = ax.twinx()
    ax2.plot(gammas, products, "s--", color="#d62728", label="iterations x mean alignment")
    ax2.set_ylabel("iterations x mean alignment", color="#d62728")
    ax2.set_ylim(0, max(products) * 1.5)
    ax.set_title("Iterations scale inversely with alignment")
    _save(fig, spec.output)
    return RenderReport(spec.output, groups=len(rows))


def _render_distribution(spec: PanelSpec) -> RenderReport:
    path = spec.input_paths[0]
    rows = _read_rows(path, ("ensemble", "srank", "trial", "rho", "mean"))
    samples, means = {}, {}
    for r in rows:
        key = (r["ensemble"], int(float(r["srank"])))
        if r["trial"] == "summary":
            means[key] = float(r["mean"])
        else:
            samples.setdefault(key, []).append(float(r["rho"]))
    if not samples:
        raise SchemaError(f"{path}: no sample rows")
    for key in means:
        if not samples.get(key):
            raise SchemaError(f"{path}: group {key} has a summary but no samples")

    ensembles = sorted({k[0] for k in samples}, key=lambda e: list(ENSEMBLE_COLORS).index(e) if e in ENSEMBLE_COLORS else 99)
    sranks = sorted({k[1] for k in samples})
    fig, ax = plt.subplots(figsize=(7.2, 4.4))
    width = 0.26
    reference_lines = 0
    for ei, ensemble in enumerate(ensembles):
        color = ENSEMBLE_COLORS.get(ensemble, "#7f7f7f")
        positions, data = [], []
        for si, s in enumerate(sranks):
            key = (ensemble, s)
            if key not in samples:
                continue
            positions.append(si + (ei - (len(ensembles) - 1) / 2) * width)
            data.append(samples[key])
        if not data:
            continue
        if spec.style == "violin":
            parts = ax.violinplot(data, positions=positions, widths=width * 0.9,
                                  showextrema=False)
            for body in parts["bodies"]:
                body.set_facecolor(color)
                body.set_alpha(0.55)
        else:
            ax.boxplot(data, positions=positions, widths=width * 0.8,
                       manage_ticks=False, showfliers=False,
                       boxprops={"color": color}, whiskerprops={"color": color},
                       capprops={"color": color}, medianprops={"color": color})
        for pos, s in zip(positions, [s for s in sranks if (ensemble, s) in samples]):
            key = (ensemble, s)
            if key in means:
                ax.hlines(means[key], pos - width * 0.45, pos + width * 0.45,
                          colors="#2040c0", linestyles="dashed", linewidth=1.1)
                reference_lines += 1
        ax.plot([], [], color=color, label=ensemble)
    ax.set_xticks(range(len(sranks)))
    ax.set_xticklabels([str(s) for s in sranks])
    if spec.log_y:
        ax.set_yscale("log")
    ax.set_xlabel("srank(M)")
    ax.set_ylabel("alignment rho")
    ax.set_title("Alignment distributions (dashed: group mean)")
    ax.legend(frameon=False, fontsize=9)
    _save(fig, spec.output)
    return RenderReport(spec.output, groups=len(samples), reference_lines=reference_lines)


def _render_memory(spec: PanelSpec) -> RenderReport:
    rows = _read_rows(spec.input_paths[0], ("method", "total", "auxiliary", "peak"))
    if not rows:
        raise SchemaError(f"{spec.input_paths[0]}: no rows")
    methods = [r["method"] for r in rows]
    totals = [int(r["total"]) for r in rows]
    aux = [int(r["auxiliary"]) for r in rows]
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    x = range(len(methods))
    ax.bar(x, totals, 0.6, label="model weights", color="#9ecae1")
    ax.bar(x, aux, 0.6, bottom=totals, label="auxiliary", color="#de6866")
    ax.set_xticks(list(x))
    ax.set_xticklabels(methods, rotation=15)
    ax.set_ylabel("peak parameters")
    ax.set_title("Theoretical peak memory by method")
    ax.legend(frameon=False, fontsize=9)
    _save(fig, spec.output)
    return RenderReport(spec.output, groups=len(rows))


def _render_traffic(spec: PanelSpec) -> RenderReport:
    rows = _read_rows(spec.input_paths[0], ("method", "d", "num_blocks", "traffic"))
    if not rows:
        raise SchemaError(f"{spec.input_paths[0]}: no rows")
    dims = sorted({int(r["d"]) for r in rows})
    d = dims[-1]  # largest testbed in the bundle
    bcd = sorted(
        (int(r["num_blocks"]), float(r["traffic"]))
        for r in rows
        if r["method"] == "mezo-bcd" and int(r["d"]) == d
    )
    mezo = [float(r["traffic"]) for r in rows if r["method"] == "mezo" and int(r["d"]) == d]
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    if bcd:
        ax.plot([b[0] for b in bcd], [b[1] for b in bcd], "o-", color="#1f77b4",
                label="block-coordinate (2d + 3d/N)")
    if mezo:
        ax.axhline(mezo[0], color="#d62728", linestyle="--", label="full-space (5d)")
    ax.set_xscale("log", base=2)
    ax.set_xlabel("number of blocks N")
    ax.set_ylabel(f"parameter loads per step (d = {d:,})")
    ax.set_title("Per-step parameter traffic")
    ax.legend(frameon=False, fontsize=9)
    _save(fig, spec.output)
    return RenderReport(spec.output, groups=len(bcd) + len(mezo))


_RENDERERS = {
    "fig1-left": _render_curves,
    "fig1-middle": _render_middle,
    "fig1-right": _render_distribution,
    "memory-table": _render_memory,
    "traffic": _render_traffic,
}


def render(spec: PanelSpec) -> RenderReport:
    """Draw one panel from its CSV bundle; returns what was drawn."""
    return _RENDERERS[spec.panel](spec)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="render", description="Render subzero CSV bundles as images."
    )
    parser.add_argument("--panel", required=True, choices=PANELS)
    parser.add_argument("--in", dest="input_dir", required=True,
                        help="directory holding the panel's CSV bundle")
    parser.add_argument("--out", required=True, help="output image (.png or .svg)")
    parser.add_argument("--style", choices=("violin", "box"), default="violin")
    parser.add_argument("--log-y", dest="log_y", action="store_true", default=None)
    parser.add_argument("--linear-y", dest="log_y", action="store_false")
    args = parser.parse_args(argv)
    try:
        report = render(PanelSpec(args.panel, Path(args.input_dir), Path(args.out),
                                  style=args.style, log_y=args.log_y))
    except SchemaError as err:
        print(f"input error: {err}", file=sys.stderr)
        return 2
    print(f"wrote {report.output}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
