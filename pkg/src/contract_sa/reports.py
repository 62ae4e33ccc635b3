"""Report rendering: delimited curve files, SVG figures, provenance sidecar.

Every curve is written as a CSV with the fixed header
``k,empirical_mean,empirical_stderr,bound``; missing values (no empirical
column, bound undefined at some k) are empty fields. Floats are formatted
with repr (shortest round-trip), so identical runs reproduce identical
bytes. Experiments with several labeled curves write one CSV per curve
(``<name>__<label>.csv``) and a single figure ``<name>.svg``; a
``<name>.meta.json`` sidecar records the sha256 of the input config, the
resolved parameters, and the produced filenames. All writes are atomic
(temp file + rename).
"""

from __future__ import annotations

import hashlib
import io
import json
import math
import os
import re

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .experiments import Curve, ExperimentOutcome  # noqa: E402
from .fileio import atomic_write_bytes, atomic_write_text  # noqa: E402

__all__ = ["CSV_HEADER", "curve_to_csv", "write_outcome", "spec_sha256"]

CSV_HEADER = "k,empirical_mean,empirical_stderr,bound"

matplotlib.rcParams["svg.fonttype"] = "path"  # self-contained figures
matplotlib.rcParams["svg.hashsalt"] = "contract-sa"


def _fmt(value: float | None) -> str:
    if value is None:
        return ""
    v = float(value)
    if math.isnan(v):
        return ""
    return repr(v)


def curve_to_csv(curve: Curve) -> str:
    """Render one curve as CSV text with the fixed four-column header."""
    lines = [CSV_HEADER]
    n = curve.ks.size
    for i in range(n):
        mean = None if curve.empirical_mean is None else curve.empirical_mean[i]
        se = None if curve.empirical_stderr is None else curve.empirical_stderr[i]
        b = None if curve.bound is None else curve.bound[i]
        lines.append(f"{int(curve.ks[i])},{_fmt(mean)},{_fmt(se)},{_fmt(b)}")
    return "\n".join(lines) + "\n"


def spec_sha256(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _slug(label: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]+", "-", label).strip("-") or "curve"


def _render_svg(outcome: ExperimentOutcome) -> bytes:
    fig, ax = plt.subplots(figsize=(7.0, 4.5))
    colors = plt.rcParams["axes.prop_cycle"].by_key()["color"]
    for i, curve in enumerate(outcome.curves):
        color = colors[i % len(colors)]
        ks = curve.ks
        if curve.empirical_mean is not None:
            ax.plot(ks, curve.empirical_mean, color=color, label=curve.label)
            if curve.empirical_stderr is not None:
                lo = curve.empirical_mean - 2.0 * curve.empirical_stderr
                hi = curve.empirical_mean + 2.0 * curve.empirical_stderr
                ax.fill_between(ks, lo, hi, color=color, alpha=0.25, linewidth=0)
        if curve.bound is not None:
            blabel = f"{curve.label} bound" if curve.empirical_mean is not None else curve.label
            ax.plot(ks, curve.bound, color=color, linestyle="--", label=blabel)
    ax.set_xlabel("iteration k")
    ax.set_ylabel("squared error")
    ax.set_yscale("log")
    ax.set_title(outcome.name)
    ax.legend(loc="best", fontsize="small")
    ax.grid(True, which="both", alpha=0.3)
    buf = io.BytesIO()
    fig.savefig(buf, format="svg", metadata={"Date": None}, bbox_inches="tight")
    plt.close(fig)
    return buf.getvalue()


def write_outcome(outcome: ExperimentOutcome, outdir: str, config_text: str) -> list[str]:
    """Write CSV(s), the SVG figure, and the meta sidecar; returns the paths."""
    os.makedirs(outdir, exist_ok=True)
    paths = []
    if len(outcome.curves) == 1:
        csv_names = [f"{outcome.name}.csv"]
    else:
        csv_names = [f"{outcome.name}__{_slug(c.label)}.csv" for c in outcome.curves]
    if len(set(csv_names)) != len(csv_names):
        raise ValueError("curve labels collide after slugging; make them distinct")
    for name, curve in zip(csv_names, outcome.curves):
        path = os.path.join(outdir, name)
        atomic_write_text(path, curve_to_csv(curve))
        paths.append(path)
    svg_path = os.path.join(outdir, f"{outcome.name}.svg")
    atomic_write_bytes(svg_path, _render_svg(outcome))
    paths.append(svg_path)
    meta = {
        "name": outcome.name,
        "kind": outcome.kind,
        "config_sha256": spec_sha256(config_text),
        "parameters": outcome.meta,
        "files": [os.path.basename(p) for p in paths],
    }
    meta_path = os.path.join(outdir, f"{outcome.name}.meta.json")
    atomic_write_text(meta_path, json.dumps(meta, indent=2, sort_keys=True, default=float) + "\n")
    paths.append(meta_path)
    return paths
