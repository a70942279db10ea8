"""Building blocks: periodic Dirac monopoles, the reducible sum c_ext with
its local masses, and the Prasad-Sommerfield monopole with scaling,
translation and the asymptotically abelian gauge."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .chartfield import Chart, ChartField, reducible_chart
from .geometry import Point3, local_coords, su2_norm, wrap_angle_signed
from .greens import GreensEvaluator

DEFAULT_KAPPA = 0.5

_EPS = np.zeros((3, 3, 3))
_EPS[0, 1, 2] = _EPS[1, 2, 0] = _EPS[2, 0, 1] = 1.0
_EPS[0, 2, 1] = _EPS[2, 1, 0] = _EPS[1, 0, 2] = -1.0


def smoothstep_c2(u):
    """Quintic smoothstep: 0 for u <= 0, 1 for u >= 1, C^2 at both ends."""
    u = np.clip(u, 0.0, 1.0)
    return u * u * u * (10.0 + u * (-15.0 + 6.0 * u))


def cutoff_profile(s):
    """chi(s): 1 for s <= 1, 0 for s >= 2, smooth decreasing in between."""
    return 1.0 - smoothstep_c2(np.asarray(s, dtype=float) - 1.0)


# ---------------------------------------------------------------------------
# Periodic Dirac monopole


def dirac_higgs(pts, singularity: Point3, charge: int, mass: float, greens=None):
    """Higgs coefficient v + k G(p - singularity) (the i factor is implied)."""
    greens = greens or GreensEvaluator()
    pts = np.atleast_2d(pts)
    if charge == 0:
        return np.full(pts.shape[:-1], float(mass))
    loc = local_coords(pts, singularity)
    return mass + charge * greens.eval_G(loc)


def _dtheta_components(loc, a):
    """Coefficient 1-form a * dtheta around the local axis; a -> 0 limits on
    the axis are taken as zero."""
    x, y = loc[..., 0], loc[..., 1]
    r2 = x * x + y * y
    out = np.zeros(loc.shape[:-1] + (3,))
    ok = r2 > 0
    out[..., 0] = np.where(ok, -a * y / np.where(ok, r2, 1.0), 0.0)
    out[..., 1] = np.where(ok, a * x / np.where(ok, r2, 1.0), 0.0)
    return out


def dirac_potential(chart, pts, singularity: Point3, charge: int, twist_b=0.0, greens=None):
    """Potential 1-form coefficients of the charge-k periodic Dirac monopole.

    chart "N" excludes the downward half axis t in (-pi, 0) from the
    singularity; chart "S" the upward one.  Raises on the excluded string.
    """
    greens = greens or GreensEvaluator()
    pts = np.atleast_2d(pts)
    out = np.zeros(pts.shape[:-1] + (3,))
    out[..., 2] = float(twist_b)
    if charge == 0:
        return out
    loc = local_coords(pts, singularity)
    r = np.hypot(loc[..., 0], loc[..., 1])
    t = loc[..., 2]
    on_axis = r < 1e-9
    if chart == "N":
        bad = on_axis & (t < 0)
    elif chart == "S":
        bad = on_axis & (t > 0)
    else:
        raise ValueError(f"unknown chart {chart!r}")
    if np.any(bad):
        raise ValueError("string: evaluation on the chart's excluded ray")
    a = np.zeros_like(r)
    off = ~on_axis
    if np.any(off):
        a[off] = charge * greens.eval_a(loc[off], chart)
    out += _dtheta_components(loc, a)
    return out


def dirac_holonomy_angle(z, singularity: Point3, charge: int, twist_b=0.0, greens=None, n_quad=64):
    """Holonomy angle of the loop {z} x S^1, measured from the potential.

    Integrates A_t around the circle and adds the clutching jump of the
    dtheta coefficient across the chart cut at t = pi (relative to the
    singularity).  The result is 2 pi b - k theta_q modulo 2 pi.
    """
    greens = greens or GreensEvaluator()
    z = complex(z)
    ts = singularity.t + np.pi * (1.0 - 1e-7) * np.array([1.0, -1.0])
    pts = np.stack(
        [np.full(2, z.real), np.full(2, z.imag), ts],
        axis=-1,
    )
    loc = local_coords(pts, singularity)
    if charge != 0:
        a_vals = charge * greens.eval_a(loc, "N")
        jump = a_vals[0] - a_vals[1]
    else:
        jump = 0.0
    theta_q = np.arctan2(z.imag - singularity.z.imag, z.real - singularity.z.real)
    # A_t = b is constant: the t-integral is exact with any quadrature
    t_nodes = np.linspace(0, 2 * np.pi, n_quad, endpoint=False)
    a_t = np.full_like(t_nodes, float(twist_b))
    angle = np.sum(a_t) * (2 * np.pi / n_quad) + jump * theta_q
    return float(np.mod(angle + np.pi, 2 * np.pi) - np.pi)


# ---------------------------------------------------------------------------
# Background data and the reducible sum c_ext


@dataclass
class BackgroundData:
    """(v, b) plus singular points p_i and centres q_j."""

    v: float
    b: float
    singularities: list
    centres: list
    min_distance_floor: float = 5.0

    def __post_init__(self):
        self.singularities = [p if isinstance(p, Point3) else Point3(*p) for p in self.singularities]
        self.centres = [q if isinstance(q, Point3) else Point3(*q) for q in self.centres]
        if not self.centres:
            raise ValueError("need at least one centre")
        zsum = sum(q.z for q in self.centres)
        tsum = sum(q.t for q in self.centres)
        if abs(zsum) > 1e-9:
            raise ValueError("centres must satisfy sum z_j = 0")
        if abs(wrap_angle_signed(tsum)) > 1e-9:
            raise ValueError("centres must satisfy sum t_j = 0 mod 2 pi")
        pts = self.singularities + self.centres
        for i in range(len(pts)):
            for j in range(i + 1, len(pts)):
                if abs(pts[i].z - pts[j].z) < 1e-12 and abs(wrap_angle_signed(pts[i].t - pts[j].t)) < 1e-12:
                    raise ValueError(f"points {i} and {j} coincide; all points must be pairwise distinct")
        if self.min_distance < self.min_distance_floor:
            raise ValueError(
                f"minimum planar distance {self.min_distance:.3f} below the required {self.min_distance_floor}"
            )

    @property
    def n(self) -> int:
        return len(self.singularities)

    @property
    def k(self) -> int:
        return len(self.centres)

    @property
    def charge_at_infinity(self) -> int:
        return 2 * self.k - self.n

    @property
    def min_distance(self) -> float:
        """Minimum planar distance among centre-centre and centre-singularity pairs."""
        ds = []
        for j, q in enumerate(self.centres):
            for h, q2 in enumerate(self.centres):
                if h > j:
                    ds.append(abs(q.z - q2.z))
            for p in self.singularities:
                ds.append(abs(q.z - p.z))
        return min(ds) if ds else np.inf

    @property
    def max_distance(self) -> float:
        ds = []
        for j, q in enumerate(self.centres):
            for h, q2 in enumerate(self.centres):
                if h > j:
                    ds.append(abs(q.z - q2.z))
            for p in self.singularities:
                ds.append(abs(q.z - p.z))
        return max(ds) if ds else 0.0


@dataclass
class LocalMasses:
    lambdas: np.ndarray
    lambda_min: float
    lambda_max: float
    d: float
    direct: np.ndarray
    large_d_slope: float


def local_masses(bg: BackgroundData, greens=None) -> LocalMasses:
    """Local masses lambda_j, by the closed form and by direct evaluation of
    the regular part of Phi_ext at each centre."""
    greens = greens or GreensEvaluator()
    a0 = greens.compute_a0()
    lam = np.empty(bg.k)
    direct = np.empty(bg.k)
    for j, q in enumerate(bg.centres):
        s = bg.v + a0
        for h, q2 in enumerate(bg.centres):
            if h != j:
                s += np.log(abs(q2.z - q.z)) / np.pi
        for p in bg.singularities:
            s -= np.log(abs(p.z - q.z)) / (2 * np.pi)
        lam[j] = s
        d = bg.v + a0
        for h, q2 in enumerate(bg.centres):
            if h != j:
                d += 2 * greens.eval_G(local_coords(q.xyz[None, :], q2))[0]
        for p in bg.singularities:
            d -= greens.eval_G(local_coords(q.xyz[None, :], p))[0]
        direct[j] = d
    slope = (bg.k - 1 - bg.n / 2) / np.pi
    return LocalMasses(lam, float(lam.min()), float(lam.max()), bg.min_distance, direct, slope)


def check_admissible(bg: BackgroundData, lam0: float, d0: float, K: float, K_prime=None) -> dict:
    """Admissibility report: conditions (i)-(iv) plus the optional
    large-distance assumption d_bar <= K' d."""
    lm = local_masses(bg)
    report = {
        "d": bg.min_distance,
        "d_bar": bg.max_distance,
        "lambda_min": lm.lambda_min,
        "lambda_max": lm.lambda_max,
        "cond_i_distance": bg.min_distance >= d0,
        "cond_ii_mass": lm.lambda_min > lam0,
        "cond_iii_ratio": lm.lambda_max <= K * lm.lambda_min,
        "cond_iv_positive_v": (bg.v > 0) if bg.n == 2 * bg.k else True,
    }
    report["admissible"] = all(
        report[k] for k in ("cond_i_distance", "cond_ii_mass", "cond_iii_ratio", "cond_iv_positive_v")
    )
    if K_prime is not None:
        report["assumption_large_distance"] = bg.max_distance <= K_prime * bg.min_distance
    return report


def build_c_ext(bg: BackgroundData, greens=None) -> ChartField:
    """The reducible solution: Phi_ext = v + 2 sum G_q - sum G_p on the
    sigma3 line, with the matching abelian potential (chart N strings)."""
    greens = greens or GreensEvaluator()

    def phi(pts):
        pts = np.atleast_2d(pts)
        out = np.full(pts.shape[:-1], float(bg.v))
        for q in bg.centres:
            out += 2.0 * greens.eval_G(local_coords(pts, q))
        for p in bg.singularities:
            out -= greens.eval_G(local_coords(pts, p))
        return out

    def grad_phi(pts):
        pts = np.atleast_2d(pts)
        out = np.zeros(pts.shape[:-1] + (3,))
        for q in bg.centres:
            out += 2.0 * greens.eval_gradG(local_coords(pts, q))
        for p in bg.singularities:
            out -= greens.eval_gradG(local_coords(pts, p))
        return out

    def a_form(pts):
        pts = np.atleast_2d(pts)
        out = np.zeros(pts.shape[:-1] + (3,))
        out[..., 2] = bg.b
        for q in bg.centres:
            loc = local_coords(pts, q)
            out += _dtheta_components(loc, 2.0 * greens.eval_a(loc, "N"))
        for p in bg.singularities:
            loc = local_coords(pts, p)
            out += _dtheta_components(loc, -greens.eval_a(loc, "N"))
        return out

    margin = abelian_chart_margin(bg.singularities + bg.centres)
    chart = reducible_chart("ext", "sum_of_dirac_monopoles", phi, a_form, margin, grad_phi)
    return ChartField([chart], metadata={"kind": "c_ext", "k": bg.k, "n": bg.n})


def abelian_chart_margin(points, inner=0.0):
    """Margin function for a single-gauge abelian chart built from chart-N
    potentials: stays away from the marked points, from each string (the
    half axis below a point) and from each gauge-cut plane t = t_i + pi."""

    def margin(pts):
        pts = np.atleast_2d(pts)
        out = np.full(pts.shape[0], np.inf)
        for s in points:
            loc = local_coords(pts, s)
            rho = np.sqrt(np.sum(loc * loc, axis=-1))
            out = np.minimum(out, rho - inner)
            r_pl = np.hypot(loc[..., 0], loc[..., 1])
            below = loc[..., 2] < 0
            out = np.minimum(out, np.where(below, r_pl, np.inf))
            out = np.minimum(out, np.abs(wrap_angle_signed(loc[..., 2] - np.pi)))
        return out

    return margin


# ---------------------------------------------------------------------------
# Prasad-Sommerfield monopole


@dataclass
class PSMonopole:
    """Charge-1 monopole on R^3: mass `scale`, Higgs zero at `centre`,
    phase `tau` (used by the abelian gauge only)."""

    scale: float = 1.0
    centre: np.ndarray = field(default_factory=lambda: np.zeros(3))
    tau: float = 0.0
    kappa: float = DEFAULT_KAPPA

    def __post_init__(self):
        self.centre = np.asarray(self.centre, dtype=float)
        if self.scale <= 0:
            raise ValueError("scale must be positive")


def _ps_profiles(rho):
    """(coth(rho) - 1/rho, 1/sinh(rho) - 1/rho), series-stabilized near 0."""
    rho = np.asarray(rho, dtype=float)
    small = rho < 0.1
    rs = np.where(small, rho, 1.0)
    r2 = rs * rs
    f_phi_s = rs * (1.0 / 3.0 + r2 * (-1.0 / 45.0 + r2 * (2.0 / 945.0 - r2 / 4725.0)))
    f_a_s = rs * (-1.0 / 6.0 + r2 * (7.0 / 360.0 + r2 * (-31.0 / 15120.0 + r2 * 127.0 / 604800.0)))
    rb = np.where(small, 1.0, rho)
    with np.errstate(over="ignore"):
        f_phi_b = 1.0 / np.tanh(rb) - 1.0 / rb
        f_a_b = 1.0 / np.sinh(rb) - 1.0 / rb
    return np.where(small, f_phi_s, f_phi_b), np.where(small, f_a_s, f_a_b)


def ps_eval(m: PSMonopole, x):
    """(A, Phi) of the scaled, translated monopole at points x in R^3."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = m.scale * (x - m.centre)
    rho = np.sqrt(np.sum(y * y, axis=-1))
    f_phi, f_a = _ps_profiles(rho)
    safe = np.where(rho > 0, rho, 1.0)
    xhat = y / safe[..., None]
    Phi = m.scale * f_phi[..., None] * xhat
    A = m.scale * f_a[..., None, None] * np.einsum("iac,...a->...ic", _EPS, xhat)
    return A, Phi


def ps_higgs_norm(m: PSMonopole, x):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    rho = np.linalg.norm(m.scale * (x - m.centre), axis=-1)
    f_phi, _ = _ps_profiles(rho)
    return m.scale * f_phi


def ps_energy_scale_reference(m: PSMonopole, x):
    """|Phi_lambda|(x) = lambda |Phi_1|(lambda (x - centre)): scaling oracle."""
    base = PSMonopole(1.0, np.zeros(3))
    return m.scale * ps_higgs_norm(base, m.scale * (np.atleast_2d(x) - m.centre))


# -- asymptotically abelian gauge -------------------------------------------


def _rotation_to_e3(u):
    """Rotation matrices taking unit vectors u to e3 along the geodesic."""
    u = np.atleast_2d(u)
    c = u[..., 2]
    vx, vy = u[..., 1], -u[..., 0]  # u x e3
    s2 = vx * vx + vy * vy
    R = np.zeros(u.shape[:-1] + (3, 3))
    # Rodrigues with sin = |v|, cos = c; stable form using (1-c)/s^2 = 1/(1+c)
    denom = 1.0 + c
    bad = denom < 1e-12
    denom = np.where(bad, 1.0, denom)
    k = 1.0 / denom
    R[..., 0, 0] = c + k * vx * vx
    R[..., 0, 1] = k * vx * vy
    R[..., 0, 2] = vy
    R[..., 1, 0] = k * vx * vy
    R[..., 1, 1] = c + k * vy * vy
    R[..., 1, 2] = -vx
    R[..., 2, 0] = -vy
    R[..., 2, 1] = vx
    R[..., 2, 2] = c
    if np.any(bad):
        raise ValueError("string: hedgehog gauge undefined where the Higgs direction is -e3")
    return R


def _rot_z(tau):
    R = np.eye(3)
    c, s = np.cos(tau), np.sin(tau)
    R[0, 0] = R[1, 1] = c
    R[0, 1] = -s
    R[1, 0] = s
    return R


def abelianize_pair(eval_fn, pts, tau=0.0, h_eval=1e-4, zero_tol=1e-12):
    """Apply the Higgs-direction straightening gauge to a field evaluator.

    Returns (A', Phi') with Phi' parallel to e3 wherever |Phi| > 0.  The
    rotation is the geodesic one composed with exp(tau sigma3); its
    derivative term is taken by central differences with spacing h_eval.
    """
    pts = np.atleast_2d(pts)
    Rtau = _rot_z(tau)

    def rot_at(p):
        _, Phi = eval_fn(p)
        n = su2_norm(Phi)
        if np.any(n < zero_tol):
            raise ValueError("Higgs zero: abelian gauge undefined at the monopole centre")
        return Rtau @ _rotation_to_e3(Phi / n[..., None])

    A, Phi = eval_fn(pts)
    R = rot_at(pts)
    Phi_new = np.einsum("...ij,...j->...i", R, Phi)
    A_new = np.einsum("...ij,...kj->...ki", R, A)
    for i in range(3):
        e = np.zeros(3)
        e[i] = h_eval
        dR = (rot_at(pts + e) - rot_at(pts - e)) / (2 * h_eval)
        W = np.einsum("...ij,...kj->...ik", dR, R)
        omega = np.stack([W[..., 2, 1], W[..., 0, 2], W[..., 1, 0]], axis=-1)
        # ad(w) = -[w]_x in the sigma_a = i tau_a/2 basis, so the
        # inhomogeneous term -(dg)g^-1 adds +omega on coefficients
        A_new[..., i, :] += omega
    return A_new, Phi_new


def _omega_radial(loc):
    """Gauge-derivative term of the geodesic straightening of a radial unit
    field u = loc/|loc|: omega[n, i, :] with A'_i = R A_i + omega_i."""
    rho = np.linalg.norm(loc, axis=-1)
    u = loc / rho[:, None]
    R = _rotation_to_e3(u)
    du = (np.eye(3)[None] - u[:, :, None] * u[:, None, :]) / rho[:, None, None]
    Rdu = np.einsum("njk,nik->nij", R, du)
    e3 = np.array([0.0, 0.0, 1.0])
    omega = -np.cross(e3[None, None, :], Rdu)
    omega[..., 2] = (u[:, None, 0] * du[..., 1] - u[:, None, 1] * du[..., 0]) / (
        1.0 + u[:, None, 2]
    )
    return omega, R


def abelianize_ps(m: PSMonopole, pts):
    """Exact hedgehog straightening of a scaled/translated PS pair.

    The Higgs direction of the PS monopole is radial about its centre, so
    the straightening rotation and its derivative term are closed forms.
    """
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    A, Phi = ps_eval(m, pts)
    loc = pts - m.centre
    omega, R = _omega_radial(loc)
    Rt = _rot_z(m.tau)
    R_full = Rt[None] @ R
    omega_full = np.einsum("ij,nkj->nki", Rt, omega)
    Phi_new = np.einsum("nij,nj->ni", R_full, Phi)
    A_new = np.einsum("nij,nkj->nki", R_full, A) + omega_full
    return A_new, Phi_new


def euclidean_dirac_pair(pts, mass, charge=2, centre=None):
    """Reducible pair of the Euclidean Dirac monopole (chart N string down)."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    if centre is not None:
        pts = pts - np.asarray(centre, dtype=float)
    rho = np.linalg.norm(pts, axis=-1)
    r2 = pts[..., 0] ** 2 + pts[..., 1] ** 2
    phi0 = mass - charge / (2.0 * rho)
    a = charge * 0.5 * (1.0 - pts[..., 2] / rho)
    A = np.zeros(pts.shape[:-1] + (3, 3))
    ok = r2 > 0
    r2s = np.where(ok, r2, 1.0)
    A[..., 0, 2] = np.where(ok, -a * pts[..., 1] / r2s, 0.0)
    A[..., 1, 2] = np.where(ok, a * pts[..., 0] / r2s, 0.0)
    Phi = np.zeros(pts.shape[:-1] + (3,))
    Phi[..., 2] = phi0
    return A, Phi


def ps_abelian_gauge(m: PSMonopole, x):
    """Remainder of the straightened monopole against its abelian model.

    Returns (a, psi): the 1-form and 0-form parts of
    eta(A, Phi) - (A0, Phi0) sigma3, where (A0, Phi0) is the Euclidean
    Dirac monopole of charge 2 and mass `scale` centred at the Higgs zero.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    loc = x - m.centre
    rho = np.linalg.norm(loc, axis=-1)
    if np.any(m.scale * rho < 1e-12):
        raise ValueError("Higgs zero: abelian gauge undefined at the monopole centre")
    u3 = loc[:, 2] / rho
    if np.any(1.0 + u3 < 1e-12):
        raise ValueError("string: hedgehog gauge undefined where the Higgs direction is -e3")
    A_ab, Phi_ab = abelianize_ps(m, x)
    A0, Phi0 = euclidean_dirac_pair(x, m.scale, charge=2, centre=m.centre)
    return A_ab - A0, Phi_ab - Phi0
