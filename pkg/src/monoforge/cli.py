"""forge: experiment orchestration for the monopole gluing workbench.

Subcommands: greens-check, blocks-check, build, residual, deform, balance,
report.  Every emitted CSV row carries the module, operation and tolerance
that produced it; `report` aggregates all CSVs in the output directory,
renders the figures, and exits 0 iff every selected check passed.
"""

from __future__ import annotations

import os

if "FORGE_THREADS" in os.environ:  # must act before the numeric stack spins up
    _n = os.environ["FORGE_THREADS"]
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
        os.environ.setdefault(_var, _n)

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from .analysis import Lattice, WeightSpec, flux_sphere, flux_torus, residual_samples
from .blocks import BackgroundData, PSMonopole, build_c_ext, check_admissible, local_masses, ps_eval
from .config import RunConfig, load_config, save_config, serialize_config
from .dumps import write_field
from .geometry import Point3, local_coords
from .greens import GreensEvaluator
from .preglue import GluingData, assemble, build_obstructions, error_field, gamma_ext_fn
from .solver import SolverContext, balance, balance_pairings, deform

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

FIELDNAMES = ["module", "operation", "quantity", "value", "bound", "tol", "passed"]


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


class Table:
    def __init__(self):
        self.rows = []

    def add(self, module, operation, quantity, value, bound=None, tol=None, passed=None):
        if passed is None and bound is not None:
            passed = bool(abs(value) <= bound) if tol is None else bool(abs(value - bound) <= tol)
        self.rows.append(
            {
                "module": module,
                "operation": operation,
                "quantity": quantity,
                "value": _fmt(value),
                "bound": _fmt(bound) if bound is not None else "",
                "tol": _fmt(tol) if tol is not None else "",
                "passed": "" if passed is None else str(bool(passed)),
            }
        )

    def write(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=FIELDNAMES)
            writer.writeheader()
            for row in self.rows:
                writer.writerow(row)

    def all_passed(self):
        return all(r["passed"] in ("", "True") for r in self.rows)


def _workbench(cfg: RunConfig):
    num = cfg.numerics
    ge = GreensEvaluator(num["crossover_radius"], num["image_count"], num["fourier_count"])
    bg = BackgroundData(
        v=cfg.background["v"],
        b=cfg.background["b"],
        singularities=cfg.background["singularities"],
        centres=cfg.background["centres"],
    )
    gd = GluingData.auto(
        bg,
        x0=cfg.gluing["x0"],
        tau=cfg.gluing["tau"],
        N=cfg.gluing["neck_ratio"],
        kappa=cfg.gluing["kappa"],
        greens=ge,
    )
    return ge, bg, gd


def _context(cfg, ge, bg, gd, field):
    num = cfg.numerics
    lat = Lattice.auto(num["r_trunc"], num["h_z"], num["n_t"], avoid=bg.singularities + bg.centres)
    spec = WeightSpec(num["mode"], num["delta"], bg.centres, gd.lambdas, singularities=bg.singularities)
    return SolverContext(field, lat, spec), lat, spec


# ---------------------------------------------------------------------------
# subcommands


def cmd_greens_check(cfg, out, rng):
    ge = GreensEvaluator(
        cfg.numerics["crossover_radius"], cfg.numerics["image_count"], cfg.numerics["fourier_count"]
    )
    ts = cfg.numerics["tol_scale"]
    t = Table()
    a0 = ge.compute_a0()
    a0_far = ge.compute_a0_far()
    t.add("greens", "compute_a0", "a0", a0)
    t.add("greens", "compute_a0", "branch_disagreement", abs(a0 - a0_far), 1e-8 * ts)

    rho = rng.uniform(1.0, 3.0, 200)
    theta = rng.uniform(0.05, np.pi - 0.05, 200)
    r, tt = rho * np.sin(theta), rho * np.cos(theta)
    keep = np.abs(tt) <= np.pi - 1e-2
    diff = np.max(np.abs(ge._near_G(r[keep], tt[keep]) - ge._far_G(r[keep], tt[keep])))
    t.add("greens", "eval_G", "overlap_branch_disagreement", diff, 1e-10 * ts)

    rhos = np.array([1e-2, 1e-3])
    vals = np.array([rr * ge.eval_G(np.array([[rr, 0, 0]]))[0] for rr in rhos])
    extrap = (vals[1] * rhos[0] - vals[0] * rhos[1]) / (rhos[0] - rhos[1])
    t.add("greens", "eval_G", "pole_limit_error", abs(extrap + 0.5), 1e-4 * ts)

    prev = None
    for r_far in (6.0, 8.0, 10.0):
        obs = abs(ge.eval_G(np.array([[r_far, 0, 0]]))[0] - np.log(r_far) / (2 * np.pi))
        t.add("greens", "eval_G", f"far_remainder_r{int(r_far)}", obs, np.exp(-r_far + 1.0))
        if prev is not None:
            t.add("greens", "eval_G", f"decay_factor_r{int(r_far)}", prev / obs, None, None, prev / obs >= np.exp(1.9))
        prev = obs
    t.write(Path(out) / "greens_check.csv")
    print(f"a0 = {a0!r}")
    for row in t.rows:
        print(f"  {row['quantity']}: {row['value']} {'PASS' if row['passed'] in ('', 'True') else 'FAIL'}")
    return EXIT_OK if t.all_passed() else EXIT_NUMERICAL


def cmd_blocks_check(cfg, out, rng):
    ge, bg, gd = _workbench(cfg)
    ts = cfg.numerics["tol_scale"]
    t = Table()
    m = PSMonopole(1.0)
    pts = rng.uniform(-4, 4, (60, 3))
    pts = pts[np.linalg.norm(pts, axis=-1) <= 4.0]
    r1 = residual_samples(lambda p: ps_eval(m, p), pts, h=1e-2)[0]
    r2 = residual_samples(lambda p: ps_eval(m, p), pts, h=5e-3)[0]
    factor = float(np.max(r1) / np.max(r2))
    t.add("blocks", "ps_eval", "residual_refinement_factor", factor, None, None, 3.5 <= factor <= 4.5)

    lm = local_masses(bg, ge)
    t.add("blocks", "local_masses", "closed_vs_direct", float(np.max(np.abs(lm.lambdas - lm.direct))), 5 * np.exp(-bg.min_distance))
    rep = check_admissible(bg, 4 * gd.N**2, 5.0, 10.0)
    t.add("blocks", "check_admissible", "admissible", int(rep["admissible"]), None, None, rep["admissible"])

    cext = build_c_ext(bg, ge)
    sample = rng.uniform(-4, 4, (30, 3))
    A, Phi = cext.evaluate(sample)
    t.add("blocks", "build_c_ext", "transverse_part", float(np.max(np.abs(A[..., :, :2]))), 1e-14)
    for j, q in enumerate(bg.centres):
        t.add("analysis", "flux", f"sphere_q{j}", flux_sphere(cext, q, 0.3), 4 * np.pi, 4 * np.pi * 5e-3 * ts)
    for i, p in enumerate(bg.singularities):
        t.add("analysis", "flux", f"sphere_p{i}", flux_sphere(cext, p, 0.3), -2 * np.pi, 2 * np.pi * 5e-3 * ts)
    expected = 2 * np.pi * bg.charge_at_infinity
    t.add("analysis", "flux", "torus", flux_torus(cext, cfg.numerics["r_big"]), expected, abs(expected) * 5e-3 * ts)
    t.write(Path(out) / "blocks_check.csv")
    for row in t.rows:
        print(f"  {row['quantity']}: {row['value']} {'PASS' if row['passed'] in ('', 'True') else 'FAIL'}")
    return EXIT_OK if t.all_passed() else EXIT_NUMERICAL


def cmd_build(cfg, out, rng):
    ge, bg, gd = _workbench(cfg)
    field = assemble(bg, gd, ge)
    t = Table()
    t.add("preglue", "assemble", "k", bg.k)
    t.add("preglue", "assemble", "n", bg.n)
    for j in range(bg.k):
        t.add("preglue", "assemble", f"lambda_{j}", gd.lambdas[j])
        t.add("preglue", "assemble", f"delta_{j}", gd.delta[j])
    for h in range(3):
        t.add("preglue", "assemble", f"zeta_{h}", gd.zeta[h])
    for row in gd.region_report():
        t.add("preglue", "gluing_regions", f"neck_inside_one_j{row['j']}", int(row["neck_inside_one"]), None, None, row["neck_inside_one"])
        t.add("preglue", "gluing_regions", f"strict_half_j{row['j']}", int(row["neck_inside_half"]))
    t.write(Path(out) / "build.csv")
    # cache a coarse Higgs-norm dump for inspection
    lat = Lattice.auto(cfg.numerics["r_trunc"], cfg.numerics["r_trunc"] / 16, 8, avoid=bg.singularities + bg.centres)
    vals = field.higgs_norm(lat.points()).reshape(lat.shape + (1,))
    write_field(Path(out) / "higgs_norm.f64", vals)
    save_config(cfg, Path(out) / "resolved_config.txt")
    print(f"built configuration: lambdas={gd.lambdas}, zeta={gd.zeta}")
    return EXIT_OK


def cmd_residual(cfg, out, rng):
    ge, bg, gd = _workbench(cfg)
    field = assemble(bg, gd, ge)
    psi_total, psi_zeta = error_field(bg, gd, field)
    ts = cfg.numerics["tol_scale"]
    t = Table()
    for j, q in enumerate(bg.centres):
        d, N = gd.delta[j], gd.N
        regions = {
            "ann_int": (d / (2 * N), d / N),
            "ann_mid": (d / N * 1.02, N * d * 0.98),
            "ann_ext": (N * d, 2 * N * d),
            "off_support": (2 * N * d * 1.02, 0.95),
        }
        for name, (r_lo, r_hi) in regions.items():
            dirs = rng.standard_normal((200, 3))
            dirs /= np.linalg.norm(dirs, axis=1)[:, None]
            keep = ~((dirs[:, 2] < 0) & (np.hypot(dirs[:, 0], dirs[:, 1]) < 0.15))
            dirs = dirs[keep]
            rho = np.exp(rng.uniform(np.log(r_lo), np.log(r_hi), len(dirs)))
            pts = q.xyz[None, :] + rho[:, None] * dirs
            pts[:, 2] = np.mod(pts[:, 2], 2 * np.pi)
            vals = np.sqrt(np.sum(psi_total(pts) ** 2, (-2, -1)))
            if name in ("ann_mid", "off_support"):
                t.add("preglue", "error_field", f"max_psi_{name}_q{j}", float(np.max(vals)), 1e-6 * ts)
            else:
                t.add("preglue", "error_field", f"max_psi_{name}_q{j}", float(np.max(vals)))
            if name == "ann_ext":
                vz = np.sqrt(np.sum(psi_zeta(pts) ** 2, (-2, -1)))
                t.add("preglue", "error_field", f"max_rho2_psi_zeta_q{j}", float(np.max(rho**2 * vz)))
        sample_pts = q.xyz[None, :] + rng.uniform(d / N * 1.05, 0.9, (200, 1)) * dirs[:200]
        sample_pts[:, 2] = np.mod(sample_pts[:, 2], 2 * np.pi)
        hmin = float(np.min(field.higgs_norm(sample_pts)))
        t.add("preglue", "assemble", f"min_higgs_Uext_q{j}", hmin, None, None, hmin >= 0.5)
    obs = build_obstructions(bg, gd, ge)
    P = obs.pairing_matrix(gamma_ext=gamma_ext_fn(bg, gd))
    t.add("preglue", "build_obstructions", "pairing_offdiag", float(np.max(np.abs(P[:3] - np.eye(3)))), 1e-3 * ts)
    t.add("preglue", "build_obstructions", "dirac_pairing", obs.dslash_o4_pairing(), 1.0, 1e-3 * ts)
    t.write(Path(out) / "residual.csv")
    for row in t.rows:
        print(f"  {row['quantity']}: {row['value']} {'PASS' if row['passed'] in ('', 'True') else 'FAIL'}")
    return EXIT_OK if t.all_passed() else EXIT_NUMERICAL


def cmd_deform(cfg, out, rng, mode=None):
    ge, bg, gd = _workbench(cfg)
    field = assemble(bg, gd, ge)
    ctx, lat, spec = _context(cfg, ge, bg, gd, field)
    mode = mode or cfg.numerics["mode"]
    rep = deform(
        ctx,
        mode=mode,
        tol_factor=cfg.numerics["deform_tol_factor"],
        max_outer=cfg.numerics["deform_max_outer"],
        cg_tol=cfg.numerics["cg_tol"],
        cg_maxiter=cfg.numerics["cg_maxiter"],
    )
    t = Table()
    for row in rep.rows():
        t.add("solver", "deform", f"projected_norm_iter{row['iteration']}", row["projected_norm"])
        if row["iteration"] >= 1:
            t.add("solver", "deform", f"contraction_iter{row['iteration']}", row["contraction"])
            t.add("solver", "deform", f"cg_iters_iter{row['iteration']}", row["cg_iters"])
    t.add("solver", "deform", "converged", int(rep.converged), None, None, rep.converged)
    total = rep.outer_norms[0] / max(rep.outer_norms[-1], 1e-300)
    t.add("solver", "deform", "total_decrease_factor", total, None, None, total >= 10.0)
    t.write(Path(out) / "deform.csv")
    write_field(Path(out) / "correction.f64", rep.xi.reshape(lat.shape + (12,)))
    write_field(Path(out) / "residual_field.f64", rep.residual_field.reshape(lat.shape + (9,)))
    print(f"deform: norms {['%.3e' % v for v in rep.outer_norms]}, converged={rep.converged}")
    return EXIT_OK if rep.converged else EXIT_NUMERICAL


def cmd_balance(cfg, out, rng):
    ge, bg, gd0 = _workbench(cfg)
    num = cfg.numerics

    def make_context(x0):
        gd = GluingData.auto(bg, x0=x0, tau=cfg.gluing["tau"], N=cfg.gluing["neck_ratio"],
                             kappa=cfg.gluing["kappa"], greens=ge)
        field = assemble(bg, gd, ge)
        ctx, _, _ = _context(cfg, ge, bg, gd, field)
        return ctx

    x0 = gd0.x0
    try:
        zeta, trace = balance(
            make_context,
            x0,
            gd0.lambdas,
            tol=1e-5,
            max_iter=10,
            tol_factor=num["deform_tol_factor"],
            cg_tol=num["cg_tol"],
            cg_maxiter=num["cg_maxiter"],
        )
    except RuntimeError as exc:
        print(f"balance failed: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    t = Table()
    for row in trace:
        it = row["iteration"]
        for h in range(3):
            t.add("solver", "balance", f"zeta_{h}_iter{it}", row["zeta"][h])
            t.add("solver", "balance", f"h_{h}_iter{it}", row["h"][h])
        t.add("solver", "balance", f"step_iter{it}", row["step"])
    t.add("solver", "balance", "iterations", len(trace), None, None, len(trace) <= 10)
    t.add("solver", "balance", "abs_zeta", float(np.linalg.norm(zeta)))
    t.write(Path(out) / "balance.csv")
    print(f"balance: zeta = {zeta}, iterations = {len(trace)}")
    return EXIT_OK


def cmd_report(cfg, out, rng):
    out = Path(out)
    csvs = sorted(p for p in out.glob("*.csv") if p.name != "summary.csv")
    if not csvs:
        print("nothing to aggregate: no prior run CSVs found", file=sys.stderr)
        return EXIT_CONFIG
    rows = []
    for path in csvs:
        with open(path) as fh:
            for row in csv.DictReader(fh):
                row["source"] = path.name
                rows.append(row)
    ok = all(r["passed"] in ("", "True") for r in rows)
    with open(out / "summary.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["source"] + FIELDNAMES)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
    from . import reportfig

    figures = reportfig.render_all(out)
    n_checked = sum(1 for r in rows if r["passed"] != "")
    n_passed = sum(1 for r in rows if r["passed"] == "True")
    print(f"aggregated {len(rows)} rows from {len(csvs)} tables; {n_passed}/{n_checked} checks passed")
    for fig in figures:
        print(f"figure: {fig}")
    return EXIT_OK if ok else EXIT_NUMERICAL


# ---------------------------------------------------------------------------


def main(argv=None):
    parser = argparse.ArgumentParser(prog="forge", description=__doc__)
    parser.add_argument("command", choices=["greens-check", "blocks-check", "build", "residual", "deform", "balance", "report"])
    parser.add_argument("--config", type=str, default=None)
    parser.add_argument("--mode", type=str, choices=["highmass", "largedistance"], default=None)
    parser.add_argument("--out", type=str, default=None)
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--tol-scale", type=float, default=None)
    args = parser.parse_args(argv)

    try:
        cfg = load_config(args.config) if args.config else RunConfig.default()
        if args.seed is not None:
            cfg.numerics["seed"] = args.seed
        if args.tol_scale is not None:
            cfg.numerics["tol_scale"] = args.tol_scale
        if args.mode is not None:
            cfg.numerics["mode"] = args.mode
        out = args.out or cfg.output["directory"]
        Path(out).mkdir(parents=True, exist_ok=True)
        rng = np.random.default_rng(cfg.numerics["seed"])
    except (ValueError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    handlers = {
        "greens-check": cmd_greens_check,
        "blocks-check": cmd_blocks_check,
        "build": cmd_build,
        "residual": cmd_residual,
        "deform": cmd_deform,
        "balance": cmd_balance,
        "report": cmd_report,
    }
    try:
        if args.command == "deform":
            return cmd_deform(cfg, out, rng, mode=args.mode)
        return handlers[args.command](cfg, out, rng)
    except ValueError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except RuntimeError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
