"""Closed-form cost models and run-log summary statistics.

The memory model counts parameters (not bytes) that must be resident at
the peak instant of a training step: the full weights plus whatever
auxiliary buffers each method holds (transient perturbations, masks,
low-rank factors).  Activations and I/O buffers are excluded by
definition.  The traffic model counts parameter loads per optimizer
step: five full passes for full-space two-point methods, versus two
full forward passes plus three block-local touches for block-coordinate
updates.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

from .errors import InputError

MEMORY_METHODS = ("mezo", "sparse-mezo", "lozo", "mezo-bcd")


@dataclass(frozen=True)
class LayerShape:
    """One weight matrix, rows x cols."""

    rows: int
    cols: int

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise InputError(f"layer dims must be >= 1, got {self.rows}x{self.cols}")

    @property
    def size(self) -> int:
        return self.rows * self.cols


@dataclass(frozen=True)
class MemoryReport:
    method: str
    total_weights: int
    auxiliary: int

    @property
    def peak(self) -> int:
        return self.total_weights + self.auxiliary


def peak_memory_params(method: str, layers, rank: int | None = None,
                       block_assignment=None) -> MemoryReport:
    """Theoretical peak parameter count for one training step.

    * ``mezo``        — weights + one held perturbation (largest layer)
    * ``sparse-mezo`` — weights + held perturbation + same-size mask
    * ``lozo``        — weights + instant low-rank factor (max rows x r)
                        + persistent factors (sum of cols x r); needs ``rank``
    * ``mezo-bcd``    — weights + held perturbation of the active block;
                        every block is eventually selected, so the
                        effective peak maximizes over all layers and
                        coincides with the mezo bound.  ``block_assignment``
                        (layer index -> block id) must cover every layer.
    """
    layers = list(layers)
    if not layers:
        raise InputError("need at least one layer")
    total = sum(l.size for l in layers)
    largest = max(l.size for l in layers)
    if method == "mezo":
        return MemoryReport(method, total, largest)
    if method == "sparse-mezo":
        return MemoryReport(method, total, 2 * largest)
    if method == "lozo":
        if rank is None or rank < 1:
            raise InputError("lozo needs rank >= 1")
        instant = max(l.rows * rank for l in layers)
        persistent = sum(l.cols * rank for l in layers)
        return MemoryReport(method, total, instant + persistent)
    if method == "mezo-bcd":
        if block_assignment is None:
            raise InputError("mezo-bcd needs a block assignment (layer index -> block)")
        missing = [i for i in range(len(layers)) if i not in block_assignment]
        if missing:
            raise InputError(f"block assignment missing layers {missing}")
        return MemoryReport(method, total, largest)
    raise InputError(f"unknown method {method!r} (want one of {MEMORY_METHODS})")


def traffic_per_step(method: str, d: int, num_blocks: int = 1) -> float:
    """Parameter loads per optimizer step.

    ``mezo``: 5d (two forwards, two perturbation passes, one update).
    ``mezo-bcd``: 2d + 3d/N (full forwards, block-local everything else).
    """
    if d < 1 or num_blocks < 1:
        raise InputError("need d >= 1 and num_blocks >= 1")
    if method == "mezo":
        return 5.0 * d
    if method == "mezo-bcd":
        return 2.0 * d + 3.0 * d / num_blocks
    raise InputError(f"unknown method {method!r} (want 'mezo' or 'mezo-bcd')")


def iterations_to_target(log, target: float):
    """Smallest logged step whose loss proxy reaches ``target`` (else None).

    The per-step loss is reconstructed as (loss_plus + loss_minus) / 2,
    since optimizer runs never evaluate the unperturbed loss.
    """
    if not log.records:
        raise InputError("run log is empty")
    for rec in log.records:
        if rec.loss <= target:
            return rec.step
    return None


def mean_rho(log):
    """Mean of the alignment values measured during a run (None if none)."""
    values = log.rho_values()
    return float(values.mean()) if values.size else None


def write_memory_csv(path, reports) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["method", "total", "auxiliary", "peak"])
        for r in reports:
            w.writerow([r.method, r.total_weights, r.auxiliary, r.peak])


def write_traffic_csv(path, rows) -> None:
    """Rows are (method, d, num_blocks, traffic) tuples."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["method", "d", "num_blocks", "traffic"])
        for method, d, n, traffic in rows:
            w.writerow([method, d, n, format(traffic, ".17g")])
