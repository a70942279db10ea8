"""Figures for `forge report`: rendered from the run CSVs into
<out>/figures/*.png alongside the delimited output."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .dumps import read_field


def _load(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def render_all(out_dir):
    out = Path(out_dir)
    figdir = out / "figures"
    figdir.mkdir(exist_ok=True)
    produced = []
    for maker in (_fig_greens, _fig_contraction, _fig_balance, _fig_higgs):
        path = maker(out, figdir)
        if path is not None:
            produced.append(path)
    return produced


def _fig_greens(out, figdir):
    src = out / "greens_check.csv"
    if not src.exists():
        return None
    rows = _load(src)
    rs, vals = [], []
    for row in rows:
        q = row["quantity"]
        if q.startswith("far_remainder_r"):
            rs.append(float(q.removeprefix("far_remainder_r")))
            vals.append(float(row["value"]))
    if not rs:
        return None
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.semilogy(rs, vals, "o-", label="|G - log(r)/2pi|")
    rr = np.linspace(min(rs), max(rs), 50)
    ax.semilogy(rr, vals[0] * np.exp(-(rr - rs[0])), "k--", lw=0.8, label="e^{-r} slope")
    ax.set_xlabel("r")
    ax.set_ylabel("far-field remainder")
    ax.legend()
    fig.tight_layout()
    path = figdir / "greens_decay.png"
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def _fig_contraction(out, figdir):
    src = out / "deform.csv"
    if not src.exists():
        return None
    rows = _load(src)
    its, norms = [], []
    for row in rows:
        q = row["quantity"]
        if q.startswith("projected_norm_iter"):
            its.append(int(q.removeprefix("projected_norm_iter")))
            norms.append(float(row["value"]))
    if not norms:
        return None
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.semilogy(its, norms, "o-")
    ax.set_xlabel("Picard iteration")
    ax.set_ylabel("projected residual norm")
    fig.tight_layout()
    path = figdir / "contraction.png"
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def _fig_balance(out, figdir):
    src = out / "balance.csv"
    if not src.exists():
        return None
    rows = _load(src)
    steps = {}
    for row in rows:
        q = row["quantity"]
        if q.startswith("step_iter"):
            steps[int(q.removeprefix("step_iter"))] = float(row["value"])
    if not steps:
        return None
    its = sorted(steps)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.semilogy(its, [max(steps[i], 1e-18) for i in its], "s-")
    ax.set_xlabel("fixed-point iteration")
    ax.set_ylabel("|zeta step|")
    fig.tight_layout()
    path = figdir / "balance_trace.png"
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def _fig_higgs(out, figdir):
    src = out / "higgs_norm.f64"
    if not src.exists():
        return None
    vals, dims = read_field(src)
    slab = vals[:, :, dims[2] // 2, 0]
    fig, ax = plt.subplots(figsize=(4.5, 4))
    im = ax.imshow(slab.T, origin="lower", cmap="viridis")
    fig.colorbar(im, ax=ax, label="|Phi|")
    ax.set_xlabel("x index")
    ax.set_ylabel("y index")
    fig.tight_layout()
    path = figdir / "higgs_norm.png"
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
