"""Static figures from trajectory CSVs.

This package is a pure view over the CSV files written by the ``underdamp``
command line (``run``/``sweep``/``compare``): it never imports the solver
package and never recomputes diagnostics.  A figure is described by a JSON
spec file::

    {
      "inputs": ["sweep-nag-r-1.csv", "sweep-nag-r0.csv"],
      "panel": "objective",            // or "min-grad", "overlay",
                                       // or a list for side-by-side panels
      "logx": true,                    // optional, default true
      "logy": true,                    // optional, default true
      "labels": ["r = -1", "r = 0"],   // optional, default: file stems
      "title": "quadratic benchmark",  // optional
      "output": "figure.png"
    }

``render`` is a pure function of the spec and the CSV contents: the plotted
series are exactly the CSV columns (no resampling, no clipping), and
re-rendering identical inputs yields an image of identical dimensions.  The
``overlay`` panel expects the discrete run plus the ODE curves that
``underdamp compare`` has already aligned onto the iteration grid via
``t = k sqrt(s)``.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be fixed first)

__all__ = [
    "EXPECTED_COLUMNS",
    "PANELS",
    "FigureError",
    "FigureSpec",
    "Series",
    "build_figure",
    "load_spec",
    "read_series",
    "render",
]

EXPECTED_COLUMNS = ("k_or_t", "gap", "grad_sq", "min_grad_sq", "lyap", "norm_gap", "norm_grad")

# panel name -> (CSV column plotted on the y axis, axis label)
PANELS = {
    "objective": ("gap", "objective gap"),
    "min-grad": ("min_grad_sq", "minimal squared gradient norm"),
    "overlay": ("gap", "objective gap"),
}


class FigureError(ValueError):
    """A figure spec or an input CSV is unusable."""


@dataclass
class FigureSpec:
    inputs: list[str]
    panel: Union[str, list[str]]
    output: str
    logx: bool = True
    logy: bool = True
    labels: Optional[list[str]] = None
    title: Optional[str] = None

    def panels(self) -> list[str]:
        return [self.panel] if isinstance(self.panel, str) else list(self.panel)


@dataclass
class Series:
    """One CSV as plottable columns (floats, in file order)."""

    path: Path
    label: str
    columns: dict = field(default_factory=dict)


_SPEC_KEYS = {"inputs", "panel", "output", "logx", "logy", "labels", "title"}


def load_spec(path) -> FigureSpec:
    path = Path(path)
    if not path.is_file():
        raise FigureError(f"spec file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FigureError(f"spec file {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise FigureError(f"spec file {path} must hold a JSON object")
    unknown = sorted(set(data) - _SPEC_KEYS)
    if unknown:
        raise FigureError(f"unknown spec keys {unknown}; expected a subset of {sorted(_SPEC_KEYS)}")
    missing = [key for key in ("inputs", "panel", "output") if key not in data]
    if missing:
        raise FigureError(f"spec file {path} is missing required keys {missing}")
    spec = FigureSpec(**data)
    validate_spec(spec)
    # input paths are relative to the spec file, not the working directory
    spec.inputs = [str((path.parent / p)) if not Path(p).is_absolute() else p for p in spec.inputs]
    if not Path(spec.output).is_absolute():
        spec.output = str(path.parent / spec.output)
    return spec


def validate_spec(spec: FigureSpec) -> None:
    if not isinstance(spec.inputs, list) or not all(isinstance(p, str) for p in spec.inputs):
        raise FigureError("'inputs' must be a list of CSV paths")
    if not spec.inputs:
        raise FigureError("'inputs' is empty; at least one CSV is required")
    panels = spec.panels()
    if not panels:
        raise FigureError("'panel' is empty; expected one of " + ", ".join(sorted(PANELS)))
    for panel in panels:
        if panel not in PANELS:
            raise FigureError(f"unknown panel {panel!r}; expected one of {sorted(PANELS)}")
    if spec.labels is not None and len(spec.labels) != len(spec.inputs):
        raise FigureError(
            f"'labels' has {len(spec.labels)} entries for {len(spec.inputs)} inputs"
        )
    if not isinstance(spec.output, str) or not spec.output:
        raise FigureError("'output' must be a nonempty path")


def read_series(path, label: Optional[str] = None) -> Series:
    """Parse one trajectory CSV, verifying the diagnostics column schema."""
    path = Path(path)
    if not path.is_file():
        raise FigureError(f"input CSV not found: {path}")
    with path.open(newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is None:
            raise FigureError(f"{path} is empty")
        if tuple(header) != EXPECTED_COLUMNS:
            missing = [c for c in EXPECTED_COLUMNS if c not in header]
            extra = [c for c in header if c not in EXPECTED_COLUMNS]
            raise FigureError(
                f"schema mismatch in {path}: expected columns {list(EXPECTED_COLUMNS)}, "
                f"found {header} (missing {missing}, unexpected {extra})"
            )
        columns: dict = {name: [] for name in EXPECTED_COLUMNS}
        for row in reader:
            if len(row) != len(EXPECTED_COLUMNS):
                raise FigureError(
                    f"{path} row {reader.line_num}: {len(row)} fields, "
                    f"expected {len(EXPECTED_COLUMNS)}"
                )
            for name, cell in zip(EXPECTED_COLUMNS, row):
                columns[name].append(float(cell) if cell != "" else None)
    if not columns["k_or_t"]:
        raise FigureError(f"{path} holds no data rows")
    return Series(path=path, label=label if label is not None else path.stem, columns=columns)


def build_figure(spec: FigureSpec):
    """Assemble the matplotlib figure for a validated spec (pure; no file output)."""
    validate_spec(spec)
    labels = spec.labels or [Path(p).stem for p in spec.inputs]
    series = [read_series(p, label) for p, label in zip(spec.inputs, labels)]
    panels = spec.panels()

    fig, axes = plt.subplots(
        1, len(panels), figsize=(5.5 * len(panels), 4.2), squeeze=False, dpi=100
    )
    for ax, panel in zip(axes[0], panels):
        column, y_label = PANELS[panel]
        for one in series:
            ax.plot(one.columns["k_or_t"], one.columns[column], label=one.label)
        if spec.logx:
            ax.set_xscale("log")
        if spec.logy:
            ax.set_yscale("log")
        ax.set_xlabel("iteration k" if panel == "overlay" else "k (or t)")
        ax.set_ylabel(y_label)
        ax.legend()
        ax.grid(True, which="both", alpha=0.3)
    if spec.title:
        fig.suptitle(spec.title)
    fig.tight_layout()
    return fig


def render(spec: FigureSpec) -> Path:
    """Render the spec to its PNG and return the written path."""
    fig = build_figure(spec)
    output = Path(spec.output)
    output.parent.mkdir(parents=True, exist_ok=True)
    try:
        fig.savefig(output, format="png")
    finally:
        plt.close(fig)
    return output
