"""Linear theory and deformation: lattice realizations of d_1, d_2 and the
Dirac operator, the obstruction projection, conjugate-gradient solution of
the projected linearised equation, the Picard contraction toward a genuine
solution, and the centre-of-mass balancing."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .analysis import Lattice, WeightSpec, v_profile, voronoi_partition
from .blocks import _rot_z, _rotation_to_e3
from .geometry import bracket, local_coords, su2_norm
from .preglue import GluingData, beta_ext_fn, error_field, gamma_ext_fn

_EPS = np.zeros((3, 3, 3))
_EPS[0, 1, 2] = _EPS[1, 2, 0] = _EPS[2, 0, 1] = 1.0
_EPS[0, 2, 1] = _EPS[2, 1, 0] = _EPS[1, 0, 2] = -1.0


def _shift(f, axis, step, periodic):
    out = np.roll(f, -step, axis=axis)
    if not periodic:
        sl = [slice(None)] * f.ndim
        if step > 0:
            sl[axis] = slice(-step, None)
        else:
            sl[axis] = slice(None, -step)
        out[tuple(sl)] = 0.0
    return out


class LatticeOperator:
    """Matrix-free operators on lattice-sampled fields.

    One-forms are arrays of shape lat.shape + (3, 3) (direction, su(2));
    mixed forms lat.shape + (4, 3) with slot 3 the zero-form.  Plain central
    differences; the planar directions treat outside values as zero, which
    together with the Dirichlet mask realizes the frozen boundary.
    """

    def __init__(self, lat: Lattice, A, Phi, boundary_width=2):
        self.lat = lat
        self.A = np.asarray(A).reshape(lat.shape + (3, 3))
        self.Phi = np.asarray(Phi).reshape(lat.shape + (3,))
        self.steps = (lat.h_z, lat.h_z, lat.h_t)
        self.periodic = (False, False, lat.periodic_t)
        self.mask = lat.interior_mask(boundary_width)[..., None, None].astype(float)

    def _d(self, f, axis):
        return (_shift(f, axis, +1, self.periodic[axis]) - _shift(f, axis, -1, self.periodic[axis])) / (
            2 * self.steps[axis]
        )

    def grad_cov(self, f):
        """nabla_A f for an su(2) scalar field f: shape + (3 dir, 3 su2)."""
        out = np.empty(f.shape[:-1] + (3, 3))
        for i in range(3):
            out[..., i, :] = self._d(f, i) + bracket(self.A[..., i, :], f)
        return out

    def curl_cov(self, xi):
        """(*d_A xi)_k = eps_kij (D_i xi_j + [A_i, xi_j])."""
        out = np.zeros_like(xi)
        for k in range(3):
            for i in range(3):
                for j in range(3):
                    e = _EPS[k, i, j]
                    if e == 0.0:
                        continue
                    out[..., k, :] += e * (self._d(xi[..., j, :], i) + bracket(self.A[..., i, :], xi[..., j, :]))
        return out

    def div_cov(self, xi):
        out = np.zeros(xi.shape[:-2] + (3,))
        for i in range(3):
            out += self._d(xi[..., i, :], i) + bracket(self.A[..., i, :], xi[..., i, :])
        return out

    # -- first-order operators ------------------------------------------

    def apply_d2(self, u):
        """d2 (a, psi) = *d_A a - d_A psi + [Phi, a] (mixed -> 1-form)."""
        a = u[..., :3, :]
        psi = u[..., 3, :]
        out = self.curl_cov(a)
        out -= self.grad_cov(psi)
        out += bracket(self.Phi[..., None, :], a)
        return out

    def apply_d2star(self, xi):
        """Discrete adjoint of apply_d2 (1-form -> mixed)."""
        out = np.empty(xi.shape[:-2] + (4, 3))
        out[..., :3, :] = self.curl_cov(xi) - bracket(self.Phi[..., None, :], xi)
        out[..., 3, :] = self.div_cov(xi)
        return out

    def apply_d1(self, g):
        """d1 g = -(d_A g, [Phi, g]) (0-form -> mixed)."""
        out = np.empty(g.shape[:-1] + (4, 3))
        out[..., :3, :] = -self.grad_cov(g)
        out[..., 3, :] = -bracket(self.Phi, g)
        return out

    def apply_d1star(self, u):
        a = u[..., :3, :]
        psi = u[..., 3, :]
        return self.div_cov(a) + bracket(self.Phi, psi)

    def apply_D(self, u):
        """D = d2 ⊕ d1* (mixed -> mixed)."""
        out = np.empty_like(u)
        out[..., :3, :] = self.apply_d2(u)
        out[..., 3, :] = self.apply_d1star(u)
        return out

    def apply_Dstar(self, v):
        xi = v[..., :3, :]
        g = v[..., 3, :]
        return self.apply_d2star(xi) + self.apply_d1(g)

    # -- second-order ----------------------------------------------------

    def apply_M(self, xi):
        """d2 d2* with the correction frozen to zero on the boundary ring."""
        xi = xi * self.mask
        out = self.apply_d2(self.apply_d2star(xi))
        return out * self.mask

    def covariant_laplacian(self, u):
        """nabla_A^* nabla_A u on mixed forms, component-wise."""
        out = np.zeros_like(u)
        for i in range(3):
            first = self._d(u, i) + bracket(self.A[..., i, None, :], u)
            out -= self._d(first, i) + bracket(self.A[..., i, None, :], first)
        return out

    def jacobi_diagonal(self):
        """Scalar per-node preconditioner diagonal for apply_M."""
        diag = np.zeros(self.lat.shape)
        for i in range(3):
            diag += 1.0 / (2.0 * self.steps[i] ** 2)
        diag = 2.0 * diag + np.sum(self.Phi**2, axis=-1) + np.sum(self.A**2, axis=(-2, -1))
        return diag

    def inner(self, u, v):
        return float(np.sum(u * v) * self.lat.cell_volume)

    def norm(self, u):
        return np.sqrt(max(self.inner(u, u), 0.0))


def clifford_grid(h, u):
    """gamma(dx_h) applied slot-wise to a grid mixed form (..., 4, 3)."""
    src = {1: ((3, 2, 1), (1.0, 1.0, -1.0), 0), 2: ((2, 3, 0), (-1.0, 1.0, 1.0), 1), 3: ((1, 0, 3), (1.0, -1.0, 1.0), 2)}[h]
    idx, sgn, psi_src = src
    out = np.empty_like(u)
    for i, (j, s) in enumerate(zip(idx, sgn)):
        out[..., i, :] = s * u[..., j, :]
    out[..., 3, :] = -u[..., psi_src, :]
    return out


def cg(apply_op, b, precond=None, tol=1e-8, maxiter=2000, inner=None):
    """Preconditioned conjugate gradients, fixed summation order."""
    if inner is None:
        inner = lambda u, v: float(np.sum(u * v))  # noqa: E731
    x = np.zeros_like(b)
    r = b.copy()
    z = r if precond is None else precond(r)
    p = z.copy()
    rz = inner(r, z)
    b_norm = np.sqrt(inner(b, b))
    history = []
    if b_norm == 0.0:
        return x, [0.0]
    for it in range(maxiter):
        Ap = apply_op(p)
        pAp = inner(p, Ap)
        if pAp <= 0.0:
            break
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        res = np.sqrt(inner(r, r)) / b_norm
        history.append(res)
        if res < tol:
            break
        z = r if precond is None else precond(r)
        rz_new = inner(r, z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x, history


# ---------------------------------------------------------------------------
# Solver context: background samples, frames, obstruction samples


@dataclass
class SolveReport:
    inner_iterations: list = field(default_factory=list)
    linear_residuals: list = field(default_factory=list)
    outer_norms: list = field(default_factory=list)
    contraction_factors: list = field(default_factory=list)
    obstruction_coefficients: list = field(default_factory=list)
    eta_coefficients: np.ndarray | None = None
    converged: bool = False

    def rows(self):
        out = []
        for i, nrm in enumerate(self.outer_norms):
            out.append(
                {
                    "iteration": i,
                    "projected_norm": nrm,
                    "contraction": self.contraction_factors[i - 1] if i >= 1 else float("nan"),
                    "cg_iters": self.inner_iterations[i - 1] if i >= 1 else 0,
                    "cg_residual": self.linear_residuals[i - 1] if i >= 1 else float("nan"),
                }
            )
        return out


class SolverContext:
    """Lattice samples of an assembled configuration plus the projection
    and weighted-norm machinery."""

    def __init__(self, field, lat: Lattice, spec: WeightSpec, boundary_width=2):
        self.field = field
        self.lat = lat
        self.spec = spec
        pts = lat.points()
        self.pts = pts
        bg, gd = field.bg, field.gd
        margins = field.margins(pts)
        self.chart_idx = np.argmax(margins, axis=0).reshape(lat.shape)
        A, Phi = field.evaluate(pts)
        self.op = LatticeOperator(lat, A, Phi, boundary_width)
        self.sigma = field.frame(pts).reshape(lat.shape + (3,))
        self.gamma_ext = gamma_ext_fn(bg, gd)(pts).reshape(lat.shape)
        # obstruction images d2 o_h sampled in the per-node frame: they are
        # diagonal fields supported where every node uses the exterior chart
        self.d2o = []
        for h in (1, 2, 3):
            diag = field.obstructions.d2_o(h, pts)
            self.d2o.append(diag.reshape(lat.shape + (3,))[..., :, None] * self.sigma[..., None, :])
        self.weights = self._norm_weights()

    # -- weighted norm on the lattice -------------------------------------

    def _norm_weights(self):
        """Pointwise weight of the source-space norm (shift -2), squared."""
        spec = self.spec
        pts = self.pts
        d = spec.delta
        ext, mp, mq = spec.region_masks(pts)
        w2 = np.zeros(pts.shape[0])
        om = spec.omega(pts)
        w2[ext] = om[ext] ** (2 * (d + 1))
        for i, m in enumerate(mp):
            if np.any(m):
                w2[m] = np.maximum(w2[m], spec.rho_hat(pts[m], i) ** (2 * (0.5 - d)))
        for j, m in enumerate(mq):
            if np.any(m):
                w2[m] = np.maximum(w2[m], spec.w_j(pts[m], j) ** (2 * (d + 0.5)))
        return w2.reshape(self.lat.shape)

    def weighted_norm(self, xi):
        mag2 = np.sum(xi**2, axis=(-2, -1))
        return float(np.sqrt(np.sum(self.weights * mag2) * self.lat.cell_volume))

    # -- obstruction projection -------------------------------------------

    def pairings(self, f):
        """<f, gamma_ext sigma ⊗ dx_h> for h = 1, 2, 3 (lattice sum)."""
        out = np.empty(3)
        for h in range(3):
            integrand = self.gamma_ext * np.sum(f[..., h, :] * self.sigma, axis=-1)
            out[h] = np.sum(integrand) * self.lat.cell_volume
        return out

    def project(self, f):
        """pi(f) = f - sum_h <f, gamma_ext sigma dx_h> d2 o_h."""
        coeff = self.pairings(f)
        out = f.copy()
        for h in range(3):
            out -= coeff[h] * self.d2o[h]
        return out, coeff


def solve_linear(ctx: SolverContext, f, tol=1e-8, maxiter=2000, mode="highmass", w_sites=None, report=None):
    """Solve pi d2 xi = f with xi = d2* u by preconditioned CG.

    In largedistance mode the finite-dimensional log-profile block is
    handled explicitly: eta = sum alpha_hj d2*(v_j sigma dx_h), with the
    coefficients read off from the source by the partition pairing, and the
    lattice solve applied to the remainder.  Returns (xi, eta_field, info).
    """
    op = ctx.op
    lat = ctx.lat
    diag = op.jacobi_diagonal()[..., None, None]

    def precond(r):
        return r / diag

    eta_field = np.zeros(lat.shape + (4, 3))
    alpha = None
    if mode == "largedistance":
        alpha, eta_field = _w_block(ctx, f, w_sites)
        eta_field = eta_field * op.mask
        d2eta = op.apply_d2(eta_field) * op.mask
        f = f - ctx.project(d2eta)[0]

    # solve d2 d2* u = f, then xi = d2* u solves d2 xi = f in range(M)
    u, hist = cg(op.apply_M, f, precond=precond, tol=tol, maxiter=maxiter, inner=op.inner)
    xi = op.apply_d2star(u * op.mask)
    info = {"iterations": len(hist), "residual": hist[-1] if hist else 0.0, "alpha": alpha}
    return xi, eta_field, info


def _w_block(ctx, f, w_sites):
    """Log-profile coefficients alpha(f) and the field beta_ext eta."""
    lat = ctx.lat
    pts = ctx.pts
    bg, gd = ctx.field.bg, ctx.field.gd
    sites = w_sites if w_sites is not None else np.array(
        [[0.0, 0.0]] + [[q.z.real, q.z.imag] for q in bg.centres]
    )
    chi = voronoi_partition(pts, sites)
    diag = np.sum(f.reshape(len(pts), 3, 3) * ctx.sigma.reshape(len(pts), 1, 3), axis=-1)
    gamma = ctx.gamma_ext.ravel()
    alpha = np.zeros((3, len(sites)))
    for j in range(len(sites)):
        for h in range(3):
            alpha[h, j] = np.sum(chi[j] * gamma * diag[:, h]) * lat.cell_volume
    alpha -= alpha.sum(axis=1, keepdims=True) / len(sites)
    beta = beta_ext_fn(bg, gd)(pts)
    eta = np.zeros((len(pts), 4, 3))
    for j, s in enumerate(sites):
        val, grad = v_profile(pts, s)
        for h in range(3):
            if alpha[h, j] == 0.0:
                continue
            a_part = np.cross(grad, np.eye(3)[h][None, :])
            eta[:, :3, 2] += alpha[h, j] * beta[:, None] * a_part
            eta[:, 3, 2] += alpha[h, j] * beta * grad[:, h]
    return alpha, eta.reshape(lat.shape + (4, 3))


def quadratic_term(u):
    """(a, psi)·(a, psi) = *[a, a] - [a, psi] as a 1-form field."""
    a = u[..., :3, :]
    psi = u[..., 3, :]
    br = bracket(a[..., :, None, :], a[..., None, :, :])
    out = 0.5 * np.einsum("kij,...ijc->...kc", _EPS, br)
    out -= bracket(a, psi[..., None, :])
    return out


def rotation_to_e3_any(u):
    """Rotation taking u to e3; falls back to a flipped composition near the
    antipode instead of raising, for frame bookkeeping at string-adjacent
    lattice nodes."""
    u = np.atleast_2d(u)
    out = np.empty(u.shape[:-1] + (3, 3))
    good = 1.0 + u[..., 2] > 1e-6
    if np.any(good):
        out[good] = _rotation_to_e3(u[good])
    if np.any(~good):
        flip = np.diag([1.0, -1.0, -1.0])
        uf = u[~good] @ flip.T
        out[~good] = _rotation_to_e3(uf) @ flip
    return out


def node_frame_rotations(field, pts, chart_idx):
    """Rotation matrices taking exterior-frame su(2) components to the
    per-node chart frame (identity on exterior-chart nodes)."""
    n = len(pts)
    R = np.broadcast_to(np.eye(3), (n, 3, 3)).copy()
    for j, chart in enumerate(field.charts[1:]):
        sel = chart_idx == (j + 1)
        if not np.any(sel):
            continue
        u = chart.frame(pts[sel])
        Rj = rotation_to_e3_any(u)
        R[sel] = np.swapaxes(_rot_z(field.gd.tau[j])[None] @ Rj, -2, -1)
    return R


def sample_error(ctx: SolverContext):
    """Initial error Psi(x0, tau) sampled on the lattice in node frames."""
    field = ctx.field
    psi_total, psi_zeta = error_field(field.bg, field.gd, field)
    vals = psi_total(ctx.pts)
    idx = ctx.chart_idx.ravel()
    if len(field.charts) > 1 and np.any(idx > 0):
        R = node_frame_rotations(field, ctx.pts, idx)
        vals = np.einsum("nij,nkj->nki", R, vals)
    return vals.reshape(ctx.lat.shape + (3, 3))


def mixed_from_oneform(xi):
    out = np.zeros(xi.shape[:-2] + (4, 3))
    out[..., :3, :] = xi
    return out


def deform(ctx: SolverContext, mode="highmass", tol_factor=0.02, abs_tol=None, max_outer=5, cg_tol=1e-8, cg_maxiter=2000):
    """Picard iteration xi <- Q(-pi(Psi + xi·xi)) on the lattice.

    Stops once the projected residual norm drops below tol_factor times its
    initial value (or abs_tol), or the contraction factor exceeds 0.9.
    Raises on outright divergence (factor >= 1 while far from tolerance).
    """
    op = ctx.op
    psi0 = sample_error(ctx) * op.mask
    report = SolveReport()
    xi = np.zeros(ctx.lat.shape + (4, 3))
    eta = np.zeros_like(xi)

    def residual_of(xi_field):
        # xi_field is d2*(masked u) and eta is already built masked: apply
        # d2 without an extra interior mask so the composition matches apply_M
        total = psi0 + op.apply_d2(xi_field + eta) + quadratic_term(xi_field + eta)
        return total * op.mask

    res = residual_of(xi)
    pres, coeff = ctx.project(res)
    nrm = ctx.weighted_norm(pres)
    report.outer_norms.append(nrm)
    report.obstruction_coefficients.append(coeff)
    target = max(tol_factor * nrm, abs_tol if abs_tol is not None else 0.0)
    for outer in range(max_outer):
        if nrm <= target:
            report.converged = True
            break
        # defect correction: solve against the projected residual of the
        # current iterate, so the projection's quadrature leftover is also
        # contracted instead of being resolved to the same source
        dxi, deta, info = solve_linear(ctx, -pres, tol=cg_tol, maxiter=cg_maxiter, mode=mode)
        xi = xi + dxi
        eta = eta + deta
        report.inner_iterations.append(info["iterations"])
        report.linear_residuals.append(info["residual"])
        if info["alpha"] is not None:
            report.eta_coefficients = info["alpha"]
        res = residual_of(xi)
        pres, coeff = ctx.project(res)
        new_nrm = ctx.weighted_norm(pres)
        factor = new_nrm / nrm if nrm > 0 else 0.0
        report.contraction_factors.append(factor)
        report.outer_norms.append(new_nrm)
        report.obstruction_coefficients.append(coeff)
        nrm = new_nrm
        if nrm <= target:
            report.converged = True
            break
        if factor >= 1.0 and nrm > 0.2 * report.outer_norms[0]:
            raise RuntimeError(f"contraction failure: factor {factor:.3f} >= 1; history {report.outer_norms}")
        if factor >= 0.9:
            # flat at the discrete floor: the lattice projection is only
            # idempotent up to quadrature error, so treat this as done
            report.converged = nrm <= 0.1 * report.outer_norms[0]
            break
    report.final_residual_pairings = ctx.pairings(res)
    report.xi = xi
    report.eta = eta
    report.residual_field = res
    return report


def assemble_sparse_operator(op: LatticeOperator):
    """Explicit sparse matrix of apply_M restricted to unmasked nodes.

    Built by probing with colored impulse combs; the stencil reach of
    d2 d2* is 2 nodes per axis, so combs spaced 5 apart (full period in t)
    attribute responses unambiguously.
    """
    import scipy.sparse as sp

    lat = op.lat
    shape = lat.shape + (3, 3)
    n = int(np.prod(shape))
    flat_index = np.arange(n).reshape(shape)
    cx = cy = 5
    ct = lat.n_t
    rows, cols, vals = [], [], []
    for ox in range(min(cx, lat.nx)):
        for oy in range(min(cy, lat.ny)):
            for ot in range(ct):
                for comp in range(9):
                    e = np.zeros(shape)
                    e.reshape(lat.shape + (9,))[ox::cx, oy::cy, ot::ct, comp] = 1.0
                    Me = op.apply_M(e).ravel()
                    nz = np.nonzero(Me)[0]
                    if len(nz) == 0:
                        continue
                    ia, ib, ic, _, _ = np.unravel_index(nz, shape)
                    sx = np.clip(np.round((ia - ox) / cx).astype(int) * cx + ox, 0, lat.nx - 1)
                    sy = np.clip(np.round((ib - oy) / cy).astype(int) * cy + oy, 0, lat.ny - 1)
                    st = np.full_like(sx, ot)
                    jj = flat_index[sx, sy, st, comp // 3, comp % 3]
                    rows.append(nz)
                    cols.append(jj)
                    vals.append(Me[nz])
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    M = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    keep = np.nonzero(np.broadcast_to(op.mask, shape).ravel())[0]
    return M[keep][:, keep], keep


def direct_solve(op: LatticeOperator, f):
    """Sparse direct factorization oracle for apply_M."""
    import scipy.sparse.linalg as spla

    M, keep = assemble_sparse_operator(op)
    shape = op.lat.shape + (3, 3)
    b = f.ravel()[keep]
    x = spla.spsolve(M.tocsc(), b)
    out = np.zeros(int(np.prod(shape)))
    out[keep] = x
    return out.reshape(shape)


# ---------------------------------------------------------------------------
# Quadrature-based error diagnostics (resolution-independent)


def quad_error_pairings(field, quads=None, n_r=24, n_polar=24, n_azimuth=48):
    """<Psi, gamma_ext sigma ⊗ dx_h> by closed-form annulus quadrature."""
    from .analysis import ball_shell_quadrature

    bg, gd = field.bg, field.gd
    psi_total, _ = error_field(bg, gd, field)
    gamma = gamma_ext_fn(bg, gd)
    out = np.zeros(3)
    for j, q in enumerate(bg.centres):
        d, N = gd.delta[j], gd.N
        quad = ball_shell_quadrature(q.xyz, N * d * 0.999, 2 * N * d * 1.001, n_r, n_polar, n_azimuth)
        vals = psi_total(quad.points)
        g = gamma(quad.points)
        for h in range(3):
            out[h] += np.sum(quad.weights * g * vals[:, h, 2])
    return out


def projected_error_norm(field, spec: WeightSpec, n_r=28, n_polar=24, n_azimuth=48, cone=0.1):
    """Weighted norm of pi(Psi(x0, tau)) from closed forms on the annuli.

    The error and every d2 o_h are supported on the gluing annuli, so the
    spherical-shell quadratures capture the whole integral; a thin cone
    around each lower axis is excluded (chart strings live there).
    """
    from .analysis import Quadrature, ball_shell_quadrature, weighted_norm

    bg, gd = field.bg, field.gd
    psi_total, _ = error_field(bg, gd, field)
    obs = field.obstructions
    coeff = quad_error_pairings(field, n_r=n_r, n_polar=n_polar, n_azimuth=n_azimuth)
    pieces = []
    for j, q in enumerate(bg.centres):
        d, N = gd.delta[j], gd.N
        for r_lo, r_hi in [(d / (2 * N) * 0.999, d / N * 1.001), (N * d * 0.999, 2 * N * d * 1.001)]:
            quad = ball_shell_quadrature(q.xyz, r_lo, r_hi, n_r, n_polar, n_azimuth)
            loc = local_coords(quad.points, q)
            rr = np.sqrt(np.sum(loc * loc, axis=-1))
            below = loc[..., 2] < 0
            keep = ~(below & (np.hypot(loc[..., 0], loc[..., 1]) < cone * rr))
            pieces.append(Quadrature(quad.points[keep], quad.weights[keep]))
    total = pieces[0]
    for p in pieces[1:]:
        total = total + p
    vals = psi_total(total.points)
    for h in range(3):
        if coeff[h] != 0.0:
            vals[..., 2] -= coeff[h] * obs.d2_o(h + 1, total.points)
    mags = np.sqrt(np.sum(vals**2, axis=(-2, -1)))
    return weighted_norm(mags, total, spec, shift=-2.0), coeff


# ---------------------------------------------------------------------------
# Balancing


def balance_pairings(ctx: SolverContext, report: SolveReport):
    """H and h from a converged deform run: the three unprojected pairings
    decompose as 4 pi (H + h) with H = -sum_j x0^j / lambda_j.

    The pairing of the initial error is taken from the closed-form annulus
    quadrature; the lattice sum only supplies the correction terms
    d2 xi + xi·xi, whose pairing partner is well resolved.
    """
    gd = ctx.field.gd
    H = -np.sum(gd.x0 / gd.lambdas[:, None], axis=0)
    psi0_part = quad_error_pairings(ctx.field)
    op = ctx.op
    xi_tot = report.xi + report.eta
    corr = op.apply_d2(xi_tot) + quadratic_term(xi_tot)
    corr_part = ctx.pairings(corr * op.mask)
    raw = psi0_part + corr_part
    h_vec = raw / (4 * np.pi) - H
    return H, h_vec


def balance(make_context, x0_init, lambdas, tol=1e-6, max_iter=10, **deform_kw):
    """Fixed-point iteration zeta <- -h(x0 + zeta) / sum(1/lambda_j).

    `make_context` maps a k x 3 array of PS centres to a fresh
    SolverContext.  Returns (zeta, trace) where trace rows carry the
    iteration history.
    """
    lambdas = np.asarray(lambdas, dtype=float)
    inv_sum = np.sum(1.0 / lambdas)
    zeta = np.zeros(3)
    trace = []
    for it in range(max_iter):
        x0 = x0_init + zeta[None, :]
        ctx = make_context(x0)
        rep = deform(ctx, **deform_kw)
        H, h_vec = balance_pairings(ctx, rep)
        zeta_new = -h_vec / inv_sum
        step = np.linalg.norm(zeta_new - zeta)
        trace.append(
            {
                "iteration": it,
                "zeta": zeta.copy(),
                "H": H,
                "h": h_vec,
                "step": step,
                "residual_norm": rep.outer_norms[-1],
            }
        )
        zeta = zeta_new
        if step < tol:
            trace.append({"iteration": it + 1, "zeta": zeta.copy(), "H": H, "h": h_vec, "step": 0.0,
                          "residual_norm": rep.outer_norms[-1]})
            return zeta, trace
    raise RuntimeError(f"balancing fixed point did not converge in {max_iter} iterations; trace {trace}")
