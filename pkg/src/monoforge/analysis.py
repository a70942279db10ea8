"""Discrete calculus and diagnostics: finite-difference residuals and
curvature, flux integrals, composite quadrature, weighted Sobolev norms and
the finite-dimensional log-profile space used in large-distance mode."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .blocks import smoothstep_c2
from .geometry import bracket, local_coords, su2_norm

TWO_PI = 2.0 * np.pi

_EPS3 = np.zeros((3, 3, 3))
_EPS3[0, 1, 2] = _EPS3[1, 2, 0] = _EPS3[2, 0, 1] = 1.0
_EPS3[0, 2, 1] = _EPS3[2, 1, 0] = _EPS3[1, 0, 2] = -1.0


# ---------------------------------------------------------------------------
# Pointwise finite-difference calculus on (A, Phi) evaluators


def fd_field_strength(eval_fn, pts, h=1e-4, order=2):
    """(F, dPhi_cov, A, Phi) by central differences of order 2 or 4.

    F[..., i, j, c] = (dA + [A, A])_ij, dPhi_cov[..., i, c] = (d_A Phi)_i.
    """
    pts = np.atleast_2d(pts)
    A0, Phi0 = eval_fn(pts)
    dA = np.empty(pts.shape[:-1] + (3, 3, 3))
    dPhi = np.empty(pts.shape[:-1] + (3, 3))
    for i in range(3):
        e = np.zeros(3)
        e[i] = h
        Ap, Pp = eval_fn(pts + e)
        Am, Pm = eval_fn(pts - e)
        if order == 2:
            dA[..., i, :, :] = (Ap - Am) / (2 * h)
            dPhi[..., i, :] = (Pp - Pm) / (2 * h)
        elif order == 4:
            Ap2, Pp2 = eval_fn(pts + 2 * e)
            Am2, Pm2 = eval_fn(pts - 2 * e)
            dA[..., i, :, :] = (8 * (Ap - Am) - (Ap2 - Am2)) / (12 * h)
            dPhi[..., i, :] = (8 * (Pp - Pm) - (Pp2 - Pm2)) / (12 * h)
        else:
            raise ValueError("order must be 2 or 4")
    F = dA - np.swapaxes(dA, -3, -2) + bracket(A0[..., :, None, :], A0[..., None, :, :])
    dPhi_cov = dPhi + bracket(A0, Phi0[..., None, :])
    return F, dPhi_cov, A0, Phi0


def star2(F):
    return 0.5 * np.einsum("kij,...ijc->...kc", _EPS3, F)


def fd_residual_pair(eval_fn, pts, h=1e-4, order=2):
    """Pointwise |*F_A - d_A Phi| of an evaluator pair."""
    F, dPhi_cov, _, _ = fd_field_strength(eval_fn, pts, h, order)
    mism = star2(F) - dPhi_cov
    return np.sqrt(np.sum(mism**2, axis=(-2, -1)))


def fd_energy_density_pair(eval_fn, pts, h=1e-4):
    """|F_A|^2 + |d_A Phi|^2 pointwise."""
    F, dPhi_cov, _, _ = fd_field_strength(eval_fn, pts, h)
    sF = star2(F)
    return np.sum(sF**2, axis=(-2, -1)) + np.sum(dPhi_cov**2, axis=(-2, -1))


# ---------------------------------------------------------------------------
# Quadrature


@dataclass
class Quadrature:
    points: np.ndarray  # (N, 3)
    weights: np.ndarray  # (N,)

    def __add__(self, other):
        return Quadrature(
            np.concatenate([self.points, other.points]),
            np.concatenate([self.weights, other.weights]),
        )

    def integrate_values(self, vals):
        return float(np.sum(self.weights * np.asarray(vals)))

    def integrate(self, fn):
        return self.integrate_values(fn(self.points))


def sphere_nodes(n_polar, n_azimuth):
    """Product Gauss-Legendre x trapezoid nodes on the unit sphere."""
    mu, wmu = np.polynomial.legendre.leggauss(n_polar)
    phi = TWO_PI * (np.arange(n_azimuth) + 0.5) / n_azimuth
    MU, PHI = np.meshgrid(mu, phi, indexing="ij")
    st = np.sqrt(1.0 - MU**2)
    dirs = np.stack([st * np.cos(PHI), st * np.sin(PHI), MU], axis=-1).reshape(-1, 3)
    w = (np.broadcast_to(wmu[:, None], MU.shape) * (TWO_PI / n_azimuth)).ravel()
    return dirs, w


def ball_shell_quadrature(centre, r_in, r_out, n_r=24, n_polar=16, n_azimuth=32, log_spacing=True):
    """Spherical-shell quadrature around a point of R^2 x S^1 (r_out < pi)."""
    centre = np.asarray(centre, dtype=float)
    if log_spacing:
        edges = np.geomspace(r_in, r_out, n_r + 1)
    else:
        edges = np.linspace(r_in, r_out, n_r + 1)
    mid = 0.5 * (edges[1:] + edges[:-1])
    cell = (edges[1:] ** 3 - edges[:-1] ** 3) / 3.0  # exact rho^2 drho measure
    dirs, wdir = sphere_nodes(n_polar, n_azimuth)
    pts = centre[None, None, :] + mid[:, None, None] * dirs[None, :, :]
    w = cell[:, None] * wdir[None, :]
    pts = pts.reshape(-1, 3)
    pts[:, 2] = np.mod(pts[:, 2], TWO_PI)
    return Quadrature(pts, w.ravel())


def grid_quadrature(r_trunc, h_z, n_t, exclude=()):
    """Midpoint-in-plane, trapezoid-in-t quadrature over a planar box, with
    optional excluded balls (centre, radius) handled by indicator."""
    n = int(np.ceil(2 * r_trunc / h_z))
    xs = (np.arange(n) - (n - 1) / 2) * h_z
    ts = TWO_PI * (np.arange(n_t) + 0.5) / n_t
    X, Y, T = np.meshgrid(xs, xs, ts, indexing="ij")
    pts = np.stack([X.ravel(), Y.ravel(), T.ravel()], axis=-1)
    keep = np.hypot(pts[:, 0], pts[:, 1]) <= r_trunc
    for centre, radius in exclude:
        centre = np.asarray(centre, dtype=float)
        loc = local_coords(pts, centre)
        keep &= np.sqrt(np.sum(loc * loc, axis=-1)) > radius
    w = np.full(keep.sum(), h_z * h_z * (TWO_PI / n_t))
    return Quadrature(pts[keep], w)


def region_quadrature(centres, r_in_list, r_match, r_trunc, h_z, n_t, n_r=28, n_polar=16, n_azimuth=32):
    """Grid quadrature with refined spherical shells around each centre."""
    quad = grid_quadrature(r_trunc, h_z, n_t, exclude=[(c, r_match) for c in centres])
    for c, r_in in zip(centres, r_in_list):
        quad = quad + ball_shell_quadrature(c, r_in, r_match, n_r, n_polar, n_azimuth)
    return quad


# ---------------------------------------------------------------------------
# Flux integrals


def flux_sphere(field, centre, radius, n_polar=24, n_azimuth=48, h=1e-5):
    """Outward flux of the diagonal curvature through a small sphere.

    Uses the closed-form gradient of the diagonal Higgs component when the
    field provides one (flux = surface integral of d(phi)/dn for reducible
    pairs, since *F = d Phi there), finite differences otherwise.
    """
    centre = np.asarray(centre.xyz if hasattr(centre, "xyz") else centre, dtype=float)
    dirs, wdir = sphere_nodes(n_polar, n_azimuth)
    pts = centre[None, :] + radius * dirs
    pts[:, 2] = np.mod(pts[:, 2], TWO_PI)
    grad = _diag_grad(field, pts, h)
    integrand = np.sum(grad * dirs, axis=-1)
    return float(np.sum(integrand * wdir) * radius**2)


def flux_torus(field, radius, n_theta=256, n_t=64, h=1e-5):
    """Outward flux of the diagonal curvature through the torus |z| = R."""
    th = TWO_PI * (np.arange(n_theta) + 0.5) / n_theta
    ts = TWO_PI * (np.arange(n_t) + 0.5) / n_t
    TH, T = np.meshgrid(th, ts, indexing="ij")
    pts = np.stack(
        [radius * np.cos(TH).ravel(), radius * np.sin(TH).ravel(), T.ravel()], axis=-1
    )
    normal = np.stack([np.cos(TH).ravel(), np.sin(TH).ravel(), np.zeros(TH.size)], axis=-1)
    grad = _diag_grad(field, pts, h)
    integrand = np.sum(grad * normal, axis=-1)
    dA = radius * (TWO_PI / n_theta) * (TWO_PI / n_t)
    return float(np.sum(integrand) * dA)


def _diag_grad(field, pts, h):
    """Gradient of the diagonal Higgs component |Phi|-signed, closed form if
    the field exposes one."""
    chart = getattr(field, "charts", [None])[0]
    if chart is not None and "grad_phi_scalar" in getattr(chart, "extras", {}):
        return chart.extras["grad_phi_scalar"](pts)
    if callable(field):
        eval_fn = field
    else:
        eval_fn = lambda p: field.evaluate(p)  # noqa: E731
    grad = np.empty_like(pts)
    _, Phi0 = eval_fn(pts)
    n0 = su2_norm(Phi0)
    sgn = np.where(Phi0[..., 2] >= 0, 1.0, -1.0) if Phi0.ndim == 2 else 1.0
    for i in range(3):
        e = np.zeros(3)
        e[i] = h
        _, Pp = eval_fn(pts + e)
        _, Pm = eval_fn(pts - e)
        grad[:, i] = sgn * (su2_norm(Pp) - su2_norm(Pm)) / (2 * h)
    return grad


# ---------------------------------------------------------------------------
# Lattice


@dataclass
class Lattice:
    """Uniform solver lattice: planar box of extent 2*r_trunc, periodic t."""

    r_trunc: float
    h_z: float
    n_t: int
    offset: tuple = (0.0, 0.0)
    periodic_t: bool = True
    t_extent: float = TWO_PI

    def __post_init__(self):
        n = int(round(2 * self.r_trunc / self.h_z))
        self.nx = self.ny = n
        self.xs = self.offset[0] + (np.arange(n) - (n - 1) / 2) * self.h_z
        self.ys = self.offset[1] + (np.arange(n) - (n - 1) / 2) * self.h_z
        self.h_t = self.t_extent / self.n_t
        self.ts = (np.arange(self.n_t) + 0.5) * self.h_t
        self.shape = (self.nx, self.ny, self.n_t)

    @staticmethod
    def auto(r_trunc, h_z, n_t, avoid=(), **kw):
        """Pick a stagger offset keeping all nodes h_z/2 away from `avoid`."""
        for trial in (0.31, 0.17, 0.43, 0.07):
            off = (trial * h_z, (1 - trial) * h_z * 0.5)
            lat = Lattice(r_trunc, h_z, n_t, offset=off, **kw)
            if lat.clearance(avoid) >= 0.45 * h_z:
                return lat
        raise ValueError("could not stagger the lattice away from the marked points")

    def clearance(self, pts_to_avoid):
        if not len(pts_to_avoid):
            return np.inf
        nodes = self.points()
        out = np.inf
        for p in pts_to_avoid:
            c = np.asarray(p.xyz if hasattr(p, "xyz") else p, dtype=float)
            loc = local_coords(nodes, c)
            out = min(out, float(np.min(np.sqrt(np.sum(loc * loc, axis=-1)))))
        return out

    def points(self):
        X, Y, T = np.meshgrid(self.xs, self.ys, self.ts, indexing="ij")
        return np.stack([X.ravel(), Y.ravel(), T.ravel()], axis=-1)

    def grid(self, vals):
        return np.asarray(vals).reshape(self.shape + np.asarray(vals).shape[1:])

    @property
    def cell_volume(self):
        return self.h_z * self.h_z * self.h_t

    def interior_mask(self, width=2):
        m = np.zeros(self.shape, dtype=bool)
        m[width:-width, width:-width, :] = True
        if not self.periodic_t:
            m[:, :, :width] = False
            m[:, :, -width:] = False
        return m


# ---------------------------------------------------------------------------
# Weights


def _blend_to_one(vals, rho, lo=0.5, hi=1.0):
    s = smoothstep_c2((rho - lo) / (hi - lo))
    return (1.0 - s) * vals + s


@dataclass
class WeightSpec:
    """Weight functions for the interior/exterior weighted norms.

    mode "highmass": omega = sqrt(1 + |z|^2);
    mode "largedistance": omega = sqrt(1 + d^2 rtilde^2(z/d)) built from a
    soft-min smoothing of the distance to the marked planar sites.
    """

    mode: str
    delta: float
    centres: list  # Point3 of the q_j
    lambdas: np.ndarray
    singularities: list = field(default_factory=list)
    sigma: float = 0.5
    softmin_sharpness: float = 8.0

    def __post_init__(self):
        if self.mode not in ("highmass", "largedistance"):
            raise ValueError("mode must be 'highmass' or 'largedistance'")
        if not (0 < self.delta < 0.5):
            raise ValueError("delta must lie in (0, 1/2)")
        self.lambdas = np.asarray(self.lambdas, dtype=float)
        zs = [q.z for q in self.centres]
        self.sites = np.array([[0.0, 0.0]] + [[z.real, z.imag] for z in zs])
        ds = []
        for j in range(len(self.sites)):
            for h in range(j + 1, len(self.sites)):
                ds.append(np.hypot(*(self.sites[j] - self.sites[h])))
        self.d = min(ds) if ds else 1.0

    def w_j(self, pts, j):
        loc = local_coords(np.atleast_2d(pts), self.centres[j])
        rho = np.sqrt(np.sum(loc * loc, axis=-1))
        core = np.sqrt(self.lambdas[j] ** -2 + rho**2)
        return _blend_to_one(core, rho)

    def rho_hat(self, pts, i):
        loc = local_coords(np.atleast_2d(pts), self.singularities[i])
        rho = np.sqrt(np.sum(loc * loc, axis=-1))
        return _blend_to_one(np.minimum(rho, 1.0), rho, self.sigma, 2 * self.sigma)

    def _rtilde(self, zxy):
        beta = self.softmin_sharpness
        scaled_sites = self.sites / self.d
        d = np.stack(
            [np.hypot(zxy[..., 0] - s[0], zxy[..., 1] - s[1]) for s in scaled_sites], axis=0
        )
        m = np.min(d, axis=0)
        return m - np.log(np.sum(np.exp(-beta * (d - m)), axis=0)) / beta

    def omega(self, pts):
        pts = np.atleast_2d(pts)
        if self.mode == "highmass":
            return np.sqrt(1.0 + pts[..., 0] ** 2 + pts[..., 1] ** 2)
        scaled = pts[..., :2] / self.d
        rt = self._rtilde(scaled)
        return np.sqrt(1.0 + (self.d * rt) ** 2)

    def region_masks(self, pts):
        """(mask_ext, [mask_p_i], [mask_q_j]) per the triple-norm regions."""
        pts = np.atleast_2d(pts)
        mq = []
        dq = []
        for q in self.centres:
            loc = local_coords(pts, q)
            r = np.sqrt(np.sum(loc * loc, axis=-1))
            mq.append(r <= 1.0)
            dq.append(r)
        mp = []
        dp = []
        for p in self.singularities:
            loc = local_coords(pts, p)
            r = np.sqrt(np.sum(loc * loc, axis=-1))
            mp.append(r <= 2 * self.sigma)
            dp.append(r)
        ext = np.ones(pts.shape[0], dtype=bool)
        for j, q in enumerate(self.centres):
            ext &= dq[j] > 0.5
        for i, p in enumerate(self.singularities):
            ext &= dp[i] > self.sigma
        return ext, mp, mq


def weighted_norm(values, quad: Quadrature, spec: WeightSpec, shift: float):
    """Triple-weight L^2 norm of sampled values at the exponent triple
    (delta, -delta, delta) + shift - actually (-d, d, -d) + shift.

    `values` are pointwise magnitudes |u| sampled on quad.points; `shift`
    selects the member of the scale (e.g. -2 for sources, -1 for
    corrections).  Returns the max of the three weighted seminorms.
    """
    vals = np.asarray(values)
    pts = quad.points
    w = quad.weights
    d = spec.delta
    ext, mp, mq = spec.region_masks(pts)
    semis = []
    if np.any(ext):
        om = spec.omega(pts[ext])
        # omega exponent: -(delta_1) - 1 with delta_1 = -d + shift
        semis.append(np.sum(w[ext] * (om ** (2 * (d - shift - 1))) * vals[ext] ** 2))
    for i, m in enumerate(mp):
        if np.any(m):
            rh = spec.rho_hat(pts[m], i)
            semis.append(np.sum(w[m] * rh ** (2 * (-(d + shift) - 1.5)) * vals[m] ** 2))
    for j, m in enumerate(mq):
        if np.any(m):
            wj = spec.w_j(pts[m], j)
            semis.append(np.sum(w[m] * wj ** (2 * (d - shift - 1.5)) * vals[m] ** 2))
    return float(np.sqrt(max(semis))) if semis else 0.0


# ---------------------------------------------------------------------------
# Voronoi partition, log profiles v_j, and the alpha map


def voronoi_partition(pts, sites, width=1.0):
    """Smooth partition of unity subordinate to planar Voronoi cells."""
    pts = np.atleast_2d(pts)
    sites = np.atleast_2d(sites)
    d = np.stack([np.hypot(pts[..., 0] - s[0], pts[..., 1] - s[1]) for s in sites], axis=0)
    raw = []
    for j in range(len(sites)):
        others = d.copy()
        others[j] = np.inf
        margin = np.min(others, axis=0) - d[j]
        raw.append(smoothstep_c2((margin + width / 2) / width))
    raw = np.stack(raw, axis=0)
    total = np.sum(raw, axis=0)
    total = np.where(total > 0, total, 1.0)
    return raw / total


def psi_profile(r):
    """0 for r <= 1, 1 for r >= 2 (the annulus fixed at [1, 2])."""
    return smoothstep_c2(np.asarray(r, dtype=float) - 1.0)


def v_profile(pts, site):
    """v = -(1/4 pi^2) psi(|z - site|) log |z - site| and its gradient."""
    pts = np.atleast_2d(pts)
    dx = pts[..., 0] - site[0]
    dy = pts[..., 1] - site[1]
    r = np.hypot(dx, dy)
    rs = np.maximum(r, 1e-300)
    val = -psi_profile(r) * np.log(rs) / (4 * np.pi**2)
    # d/dr of psi(r) log r
    u = np.clip(r - 1.0, 0.0, 1.0)
    dpsi = 30.0 * u * u * (1.0 - u) ** 2
    drad = -(dpsi * np.log(rs) + psi_profile(r) / rs) / (4 * np.pi**2)
    grad = np.zeros_like(pts)
    ok = r > 0
    grad[..., 0] = np.where(ok, drad * dx / rs, 0.0)
    grad[..., 1] = np.where(ok, drad * dy / rs, 0.0)
    return val, grad


def alpha_map(f_diag, quad: Quadrature, sites, tol=1e-3, width=1.0):
    """Coefficients alpha_{h,j} = integral of <chi_j f, sigma ⊗ dx_h>.

    `f_diag` are the diagonal 1-form components sampled on quad.points,
    shape (N, 3).  Requires the total means to vanish within tol (relative
    to the L1 size); returns alpha of shape (3, len(sites)) with exact zero
    row sums.
    """
    f_diag = np.asarray(f_diag)
    totals = np.array([quad.integrate_values(f_diag[:, h]) for h in range(3)])
    size = np.array([quad.integrate_values(np.abs(f_diag[:, h])) for h in range(3)])
    scale = max(np.max(size), 1e-300)
    if np.max(np.abs(totals)) > tol * max(scale, 1.0):
        raise ValueError("unbalanced source: nonzero total mean beyond tolerance")
    chi = voronoi_partition(quad.points, sites, width)
    alpha = np.empty((3, len(sites)))
    for j in range(len(sites)):
        for h in range(3):
            alpha[h, j] = quad.integrate_values(chi[j] * f_diag[:, h])
    alpha -= alpha.sum(axis=1, keepdims=True) / len(sites)
    return alpha


# ---------------------------------------------------------------------------
# Chart-local residual / energy sampling


def residual_samples(fieldlike, pts, h=1e-4, min_margin=None, order=2):
    """Gauge-invariant |*F_A - d_A Phi| per point, chart-locally.

    Returns (values, flagged) where flagged marks points too close to every
    chart boundary for the FD stencil; flagged values are NaN.
    """
    pts = np.atleast_2d(pts)
    if callable(fieldlike):
        return fd_residual_pair(fieldlike, pts, h, order), np.zeros(pts.shape[0], dtype=bool)
    need = min_margin if min_margin is not None else 3 * h
    margins = fieldlike.margins(pts)
    idx = np.argmax(margins, axis=0)
    best = np.max(margins, axis=0)
    flagged = best < need
    out = np.full(pts.shape[0], np.nan)
    for i, chart in enumerate(fieldlike.charts):
        sel = (idx == i) & ~flagged
        if np.any(sel):
            out[sel] = fd_residual_pair(chart.evaluate, pts[sel], h, order)
    return out, flagged


def energy_density_samples(fieldlike, pts, h=1e-4):
    pts = np.atleast_2d(pts)
    if callable(fieldlike):
        return fd_energy_density_pair(fieldlike, pts, h)
    idx = fieldlike.chart_index(pts)
    out = np.full(pts.shape[0], np.nan)
    for i, chart in enumerate(fieldlike.charts):
        sel = idx == i
        if np.any(sel):
            out[sel] = fd_energy_density_pair(chart.evaluate, pts[sel], h)
    return out
