"""Histogram plots of ITM score differences, each with a CSV twin."""

from __future__ import annotations

import csv
import json
from pathlib import Path

from cfpipe.errors import DataError, EmptyInput
from cfpipe.eval.itm import ItmDiffSamples, diff_histogram

OVERLAYS = (("ir_random", "ir_cf", "IR"), ("tr_random", "tr_cf", "TR"))
LABELS = {"ir_random": "IR_r", "ir_cf": "IR_c", "tr_random": "TR_r", "tr_cf": "TR_c"}


def load_itm_report(path) -> ItmDiffSamples:
    try:
        with open(path, encoding="utf-8") as fh:
            d = json.load(fh)
        return ItmDiffSamples.from_json(d.get("samples", d))
    except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise DataError(f"cannot read ITM report {path}: {exc}") from exc


def emit_plots(report_paths, out_dir, bins: int = 40) -> list[Path]:
    """One overlay histogram per retrieval direction plus a CSV of its bin counts.

    Reports are validated before anything is written, so a bad or empty
    report leaves no partial output.
    """
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    loaded = [(Path(p), load_itm_report(p)) for p in report_paths]
    if not loaded:
        raise EmptyInput("no reports given")
    hists = []
    for path, samples in loaded:
        if not all(getattr(samples, m) for pair in OVERLAYS for m in pair[:2]):
            raise EmptyInput(f"report {path} has no samples")
        for a, b, name in OVERLAYS:
            hists.append((path, name, a, b, diff_histogram(samples, bins, metrics=(a, b))))

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for path, name, a, b, h in hists:
        stem = f"{path.stem}_{name}" if len(loaded) > 1 else name
        csv_path = out_dir / f"{stem}.csv"
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["metric", "bin_left", "bin_right", "count"])
            for m in (a, b):
                w.writerows((LABELS[m], *row) for row in h.rows(m))
        fig, ax = plt.subplots(figsize=(5, 3.5))
        widths = h.edges[1:] - h.edges[:-1]
        for m in (a, b):
            ax.bar(h.edges[:-1], h.counts[m], width=widths, align="edge", alpha=0.5,
                   label=f"{LABELS[m]} ({100 * h.frac_below_zero[m]:.1f}% < 0)")
        ax.axvline(0.0, color="k", lw=0.8)
        ax.set_xlabel("ITM score difference")
        ax.set_ylabel("count")
        ax.legend()
        fig.tight_layout()
        png_path = out_dir / f"{stem}.png"
        fig.savefig(png_path, dpi=100, metadata={"Software": None})
        plt.close(fig)
        written += [png_path, csv_path]
    return written
