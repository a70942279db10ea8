"""Chart-based representation of configurations (A, Phi).

A configuration is stored as a list of charts, each an evaluator for the
pair (A, Phi) in its own gauge together with a margin function describing
how far inside the chart's domain a point sits.  Gauge-invariant
diagnostics are computed chart-locally, picking for every sample point the
chart with the largest margin.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import su2_norm


@dataclass
class Chart:
    name: str
    block: str
    evaluate: callable  # pts (N,3) -> (A (N,3,3), Phi (N,3))
    margin: callable  # pts (N,3) -> (N,)
    frame: callable | None = None  # pts -> diagonal direction (N,3)
    extras: dict = field(default_factory=dict)


def reducible_chart(name, block, phi_fn, a_fn, margin_fn, grad_phi_fn=None):
    """Chart for a reducible pair Phi = phi * sigma3, A = a ⊗ sigma3."""

    def evaluate(pts):
        pts = np.atleast_2d(pts)
        phi = phi_fn(pts)
        a = a_fn(pts)
        A = np.zeros(pts.shape[:-1] + (3, 3))
        A[..., :, 2] = a
        Phi = np.zeros(pts.shape[:-1] + (3,))
        Phi[..., 2] = phi
        return A, Phi

    extras = {"reducible": True, "phi_scalar": phi_fn, "a_scalar": a_fn}
    if grad_phi_fn is not None:
        extras["grad_phi_scalar"] = grad_phi_fn

    def frame(pts):
        pts = np.atleast_2d(pts)
        e3 = np.zeros(pts.shape[:-1] + (3,))
        e3[..., 2] = 1.0
        return e3

    return Chart(name, block, evaluate, margin_fn, frame, extras)


class ChartField:
    """A configuration given per chart, with chart choice by largest margin."""

    def __init__(self, charts, metadata=None, h_eval=1e-4):
        if not charts:
            raise ValueError("a ChartField needs at least one chart")
        self.charts = list(charts)
        self.metadata = dict(metadata or {})
        self.h_eval = float(h_eval)

    def margins(self, pts):
        pts = np.atleast_2d(pts)
        return np.stack([c.margin(pts) for c in self.charts], axis=0)

    def chart_index(self, pts):
        return np.argmax(self.margins(pts), axis=0)

    def evaluate(self, pts):
        """(A, Phi) at pts, each point evaluated in its best chart.

        The result mixes gauges across charts; use it only through
        gauge-invariant quantities or within a single chart.
        """
        pts = np.atleast_2d(pts)
        idx = self.chart_index(pts)
        A = np.empty(pts.shape[:-1] + (3, 3))
        Phi = np.empty(pts.shape[:-1] + (3,))
        for i, chart in enumerate(self.charts):
            sel = idx == i
            if np.any(sel):
                Ai, Pi = chart.evaluate(pts[sel])
                A[sel] = Ai
                Phi[sel] = Pi
        return A, Phi

    def evaluate_in_chart(self, i, pts):
        return self.charts[i].evaluate(np.atleast_2d(pts))

    def higgs_norm(self, pts):
        _, Phi = self.evaluate(pts)
        return su2_norm(Phi)

    def frame(self, pts):
        """Per-point diagonal direction sigma-hat in the chart's own gauge."""
        pts = np.atleast_2d(pts)
        idx = self.chart_index(pts)
        out = np.zeros(pts.shape[:-1] + (3,))
        out[..., 2] = 1.0
        for i, chart in enumerate(self.charts):
            if chart.frame is None:
                continue
            sel = idx == i
            if np.any(sel):
                out[sel] = chart.frame(pts[sel])
        return out

    def overlap_higgs_mismatch(self, pts):
        """Max over pts of the spread of |Phi| across charts containing them."""
        pts = np.atleast_2d(pts)
        margins = self.margins(pts)
        vals = np.full((len(self.charts), pts.shape[0]), np.nan)
        for i, chart in enumerate(self.charts):
            sel = margins[i] > 0
            if np.any(sel):
                _, Phi = chart.evaluate(pts[sel])
                vals[i, sel] = su2_norm(Phi)
        spread = np.nanmax(vals, axis=0) - np.nanmin(vals, axis=0)
        return float(np.max(spread))
