"""subzero-figures: plots for the subzero harness's CSV bundles.

Pure presentation: every number on an axis comes straight out of a CSV
column written by ``subzero reproduce`` (or ``measure-alignment``); the
renderer never recomputes losses, alignments, or statistics.
"""

from .render import PanelSpec, RenderReport, SchemaError, render

__version__ = "0.1.0"
