"""Assembly of the family of approximate solutions c(x_0, tau): gluing
regions and cutoffs, the modified abelian blocks, the obstruction sections
and the centre-of-mass correction, plus closed forms for the error term."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .blocks import (
    BackgroundData,
    PSMonopole,
    abelian_chart_margin,
    abelianize_ps,
    build_c_ext,
    check_admissible,
    cutoff_profile,
    local_masses,
    ps_eval,
    smoothstep_c2,
)
from .chartfield import Chart, ChartField
from .geometry import Point3, bracket, local_coords, su2_norm
from .greens import GreensEvaluator

_EPS = np.zeros((3, 3, 3))
_EPS[0, 1, 2] = _EPS[1, 2, 0] = _EPS[2, 0, 1] = 1.0
_EPS[0, 2, 1] = _EPS[2, 1, 0] = _EPS[1, 0, 2] = -1.0


def _cross(u, v):
    return np.cross(u, v)


def _dtheta_vec(loc, a):
    """Components of a * dtheta about the local axis at points loc."""
    x, y = loc[..., 0], loc[..., 1]
    r2 = np.maximum(x * x + y * y, 1e-300)
    out = np.zeros(loc.shape[:-1] + (3,))
    out[..., 0] = -a * y / r2
    out[..., 1] = a * x / r2
    return out


def _smoothstep_deriv(u):
    u = np.clip(u, 0.0, 1.0)
    return 30.0 * u * u * (1.0 - u) ** 2


@dataclass
class GluingData:
    """Gluing parameters: PS centres x_0 (k, 3), phases tau (k,), neck ratio
    N and radius bound kappa, with the derived delta_j and centre of mass."""

    x0: np.ndarray
    tau: np.ndarray
    N: float
    kappa: float
    lambdas: np.ndarray

    def __post_init__(self):
        self.x0 = np.atleast_2d(np.asarray(self.x0, dtype=float))
        self.tau = np.atleast_1d(np.asarray(self.tau, dtype=float))
        self.lambdas = np.atleast_1d(np.asarray(self.lambdas, dtype=float))
        k = len(self.lambdas)
        if self.x0.shape != (k, 3) or self.tau.shape != (k,):
            raise ValueError("x0 must be (k, 3) and tau (k,) matching the local masses")
        if self.N <= 2:
            raise ValueError("neck ratio N must exceed 2")
        if np.any(np.linalg.norm(self.x0, axis=1) >= self.kappa):
            raise ValueError(f"|x0^j| must stay below kappa = {self.kappa}")
        self.delta = 1.0 / np.sqrt(self.lambdas)
        if np.any(2 * self.N * self.delta >= 1.0):
            raise ValueError(
                "gluing regions need 2 N delta_j < 1; raise the local masses or lower N"
            )
        self.zeta = -np.sum(self.x0 / self.lambdas[:, None], axis=0)

    @property
    def k(self):
        return len(self.lambdas)

    def region_report(self):
        """Geometric constraints, including the strict textbook inequalities."""
        rows = []
        for j in range(self.k):
            rows.append(
                {
                    "j": j,
                    "delta": self.delta[j],
                    "neck_inside_half": bool(2 * self.N * self.delta[j] < 0.5),
                    "neck_inside_one": bool(2 * self.N * self.delta[j] < 1.0),
                    "core_clearance": bool(self.delta[j] / (2 * self.N) > 2.0 / self.lambdas[j]),
                    "scaled_inner_radius": float(np.sqrt(self.lambdas[j]) / (2 * self.N)),
                }
            )
        return rows

    @staticmethod
    def auto(bg: BackgroundData, x0=None, tau=None, N=None, kappa=0.5, greens=None):
        # the construction uses the directly-evaluated regular part of
        # Phi_ext at each centre: the closed-form local mass differs by
        # O(e^-d), which the neck cutoff would amplify by sqrt(lambda)
        lm = local_masses(bg, greens)
        lam_min = float(np.min(lm.direct))
        if N is None:
            N = min(8.0, max(2.05, 0.45 * np.sqrt(lam_min)))
        k = bg.k
        x0 = np.zeros((k, 3)) if x0 is None else x0
        tau = np.zeros(k) if tau is None else tau
        return GluingData(x0, tau, N, kappa, lm.direct)


def make_cutoffs(gd: GluingData, j: int, centre: Point3):
    """Cutoff evaluators for the j-th gluing region.

    chi_int is 1 on rho <= delta/(2N) and 0 outside delta/N; chi_ext is 0 on
    rho <= N delta and 1 outside 2 N delta; gamma_j interpolates 1 -> 0 over
    [delta/2, 2 delta]; beta_j is the clamped logarithmic ramp, 1 on
    B_{2 delta} and 0 outside B_{N delta}, with |grad beta| <= C/(log N rho).
    """
    d = gd.delta[j]
    N = gd.N

    def rho(pts):
        loc = local_coords(np.atleast_2d(pts), centre)
        return np.sqrt(np.sum(loc * loc, axis=-1))

    def chi_int(pts):
        return cutoff_profile(2 * N * rho(pts) / d)

    def chi_ext(pts):
        return 1.0 - cutoff_profile(rho(pts) / (N * d))

    def gamma_j(pts):
        return 1.0 - smoothstep_c2((rho(pts) - d / 2) / (1.5 * d))

    def beta_j(pts):
        r = np.maximum(rho(pts), 1e-300)
        return np.clip(np.log(N * d / r) / np.log(N / 2.0), 0.0, 1.0)

    def beta_ext_piece(pts):
        # complementary ramp: 0 on B_{delta/N}, 1 outside B_{delta/2}
        r = np.maximum(rho(pts), 1e-300)
        return np.clip(np.log(r * N / d) / np.log(N / 2.0), 0.0, 1.0)

    return {
        "chi_int": chi_int,
        "chi_ext": chi_ext,
        "gamma_j": gamma_j,
        "beta_j": beta_j,
        "beta_ext_piece": beta_ext_piece,
    }


def gamma_ext_fn(bg: BackgroundData, gd: GluingData):
    cuts = [make_cutoffs(gd, j, q)["gamma_j"] for j, q in enumerate(bg.centres)]

    def gamma_ext(pts):
        out = np.ones(np.atleast_2d(pts).shape[0])
        for g in cuts:
            out = out - g(pts)
        return out

    return gamma_ext


def beta_ext_fn(bg: BackgroundData, gd: GluingData):
    pieces = [make_cutoffs(gd, j, q)["beta_ext_piece"] for j, q in enumerate(bg.centres)]

    def beta_ext(pts):
        out = np.ones(np.atleast_2d(pts).shape[0])
        for p in pieces:
            out = out * p(pts)
        return out

    return beta_ext


# ---------------------------------------------------------------------------
# The modified abelian block c0_j(x_0)


def build_c0j(bg: BackgroundData, gd: GluingData, j: int, include_twist=True):
    """Closed-form evaluators for the charge-2 Euclidean Dirac monopole of
    mass lambda_j at q_j plus the dipole correction; exact abelian solution.

    Returns (phi_fn, a_fn) giving the diagonal coefficient fields in local
    coordinates handled internally (inputs are global points)."""
    q = bg.centres[j]
    lam = gd.lambdas[j]
    x0 = gd.x0[j]
    b = bg.b if include_twist else 0.0

    def phi(pts):
        loc = local_coords(np.atleast_2d(pts), q)
        rho = np.sqrt(np.sum(loc * loc, axis=-1))
        return lam - 1.0 / rho - np.sum(loc * x0, axis=-1) / (lam * rho**3)

    def a_form(pts):
        loc = local_coords(np.atleast_2d(pts), q)
        rho = np.sqrt(np.sum(loc * loc, axis=-1))
        r2 = loc[..., 0] ** 2 + loc[..., 1] ** 2
        a = 1.0 - loc[..., 2] / rho
        out = np.zeros(loc.shape[:-1] + (3,))
        ok = r2 > 0
        r2s = np.where(ok, r2, 1.0)
        out[..., 0] = np.where(ok, -a * loc[..., 1] / r2s, 0.0)
        out[..., 1] = np.where(ok, a * loc[..., 0] / r2s, 0.0)
        out[..., 2] = b
        out -= _cross(loc, x0[None, :]) / (lam * rho[..., None] ** 3)
        return out

    return phi, a_form


# ---------------------------------------------------------------------------
# Obstruction sections


@dataclass
class ObstructionBasis:
    """Sections o_1..o_4 and closed forms for d2 o_h (diagonal fields)."""

    bg: BackgroundData
    gd: GluingData
    greens: GreensEvaluator

    def __post_init__(self):
        self._chi = [make_cutoffs(self.gd, j, q)["chi_ext"] for j, q in enumerate(self.bg.centres)]

    def _per_centre(self, pts):
        """chi_ext^j, grad chi_ext^j and grad G_j at pts for each centre."""
        pts = np.atleast_2d(pts)
        out = []
        for j, q in enumerate(self.bg.centres):
            loc = local_coords(pts, q)
            rho = np.sqrt(np.sum(loc * loc, axis=-1))
            d = self.gd.delta[j]
            N = self.gd.N
            chi = 1.0 - cutoff_profile(rho / (N * d))
            s = rho / (N * d)
            dchi_dr = _smoothstep_deriv(s - 1.0) / (N * d)
            with np.errstate(invalid="ignore", divide="ignore"):
                rhohat = loc / rho[..., None]
            grad_chi = dchi_dr[..., None] * np.where(np.isfinite(rhohat), rhohat, 0.0)
            gradG = self.greens.eval_gradG(loc)
            out.append((chi, grad_chi, gradG))
        return out

    def o(self, h, pts):
        """Mixed-form value (N, 4, 3) of o_h, h in {1, 2, 3, 4}."""
        pts = np.atleast_2d(pts)
        data = np.zeros(pts.shape[:-1] + (4, 3))
        pref = -1.0 / (2 * np.pi * self.bg.k)
        for chi, _, gradG in self._per_centre(pts):
            if h == 4:
                data[..., :3, 2] += pref * chi[..., None] * gradG
            else:
                ah = np.einsum("ik,...k->...i", _EPS[h - 1], gradG)
                data[..., :3, 2] += pref * chi[..., None] * ah
                data[..., 3, 2] += pref * chi * gradG[..., h - 1]
        return data

    def d2_o(self, h, pts):
        """d2 o_h as a diagonal 1-form coefficient field (N, 3)."""
        pts = np.atleast_2d(pts)
        out = np.zeros(pts.shape)
        pref = -1.0 / (2 * np.pi * self.bg.k)
        for chi, grad_chi, gradG in self._per_centre(pts):
            if h == 4:
                out += pref * _cross(grad_chi, gradG)
            else:
                ah = np.einsum("ik,...k->...i", _EPS[h - 1], gradG)
                out += pref * (_cross(grad_chi, ah) - gradG[..., h - 1, None] * grad_chi)
        return out

    def dslash_o4_scalar(self, pts):
        """Scalar (0-form) part of the Dirac operator applied to o_4."""
        pts = np.atleast_2d(pts)
        out = np.zeros(pts.shape[0])
        pref = 1.0 / (2 * np.pi * self.bg.k)
        for chi, grad_chi, gradG in self._per_centre(pts):
            out += pref * np.sum(grad_chi * gradG, axis=-1)
        return out

    def annulus_quadratures(self, n_r=24, n_polar=24, n_azimuth=48):
        from .analysis import ball_shell_quadrature

        quads = []
        for j, q in enumerate(self.bg.centres):
            d, N = self.gd.delta[j], self.gd.N
            quads.append(
                ball_shell_quadrature(q.xyz, N * d * 0.999, 2 * N * d * 1.001, n_r, n_polar, n_azimuth)
            )
        return quads

    def pairing_matrix(self, gamma_ext=None, **quad_kw):
        """P[h, l] = <d2 o_h, gamma_ext sigma ⊗ dx_l> over the annuli."""
        quads = self.annulus_quadratures(**quad_kw)
        P = np.zeros((4, 3))
        for quad in quads:
            g = gamma_ext(quad.points) if gamma_ext is not None else 1.0
            for h in (1, 2, 3, 4):
                vals = self.d2_o(h, quad.points)
                for l in range(3):
                    P[h - 1, l] += np.sum(quad.weights * g * vals[:, l])
        return P

    def dslash_o4_pairing(self, **quad_kw):
        quads = self.annulus_quadratures(**quad_kw)
        total = 0.0
        for quad in quads:
            total += np.sum(quad.weights * self.dslash_o4_scalar(quad.points))
        return float(total)


def build_obstructions(bg: BackgroundData, gd: GluingData, greens=None) -> ObstructionBasis:
    return ObstructionBasis(bg, gd, greens or GreensEvaluator())


# ---------------------------------------------------------------------------
# Assembly


class AssembledField(ChartField):
    """The glued configuration c(x_0, tau) with its ingredients attached."""

    def __init__(self, charts, bg, gd, greens, obstructions, **kw):
        super().__init__(charts, **kw)
        self.bg = bg
        self.gd = gd
        self.greens = greens
        self.obstructions = obstructions


def assemble(bg: BackgroundData, gd: GluingData, greens=None, lam0=None, d0=5.0, K=10.0):
    """Build the approximate solution as a ChartField: one hedgehog chart
    per centre and one diagonal exterior chart, glued over Ann_j."""
    greens = greens or GreensEvaluator()
    lm = local_masses(bg, greens)
    if np.max(np.abs(lm.direct - gd.lambdas)) > 1e-8:
        raise ValueError("gluing data was built for different local masses")
    lam0 = 4 * gd.N**2 if lam0 is None else lam0
    rep = check_admissible(bg, lam0, d0, K)
    if not rep["admissible"]:
        raise ValueError(f"admissibility failure: {rep}")
    for j in range(bg.k):
        for h in range(j + 1, bg.k):
            dqq = abs(bg.centres[j].z - bg.centres[h].z)
            if 2 * gd.N * (gd.delta[j] + gd.delta[h]) >= dqq:
                raise ValueError("overlapping gluing balls")

    obs = build_obstructions(bg, gd, greens)
    cext = build_c_ext(bg, greens)
    phi_ext = cext.charts[0].extras["phi_scalar"]
    a_ext = cext.charts[0].extras["a_scalar"]
    grad_phi_ext = cext.charts[0].extras["grad_phi_scalar"]

    zeta = gd.zeta

    def zeta_tangent(pts):
        """4 pi sum_h zeta_h o_h as diagonal (a, psi) coefficients."""
        pts = np.atleast_2d(pts)
        a = np.zeros(pts.shape)
        psi = np.zeros(pts.shape[0])
        if np.any(zeta != 0.0):
            for h in (1, 2, 3):
                oh = obs.o(h, pts)
                a += 4 * np.pi * zeta[h - 1] * oh[..., :3, 2]
                psi += 4 * np.pi * zeta[h - 1] * oh[..., 3, 2]
        return a, psi

    # diagonal x0-dipole corrections of c_ext(x_0)
    def ext_x0_correction(pts):
        pts = np.atleast_2d(pts)
        a = np.zeros(pts.shape)
        psi = np.zeros(pts.shape[0])
        for j, q in enumerate(bg.centres):
            v = gd.x0[j] / gd.lambdas[j]
            if not np.any(v):
                continue
            loc = local_coords(pts, q)
            g = greens.eval_gradG(loc)
            psi -= 2.0 * np.sum(g * v, axis=-1)
            a -= 2.0 * _cross(g, v[None, :])
        return a, psi

    c0 = [build_c0j(bg, gd, j) for j in range(bg.k)]

    def phi_ext_x0(pts):
        a, psi = ext_x0_correction(pts)
        return phi_ext(pts) + psi

    def a_ext_x0(pts):
        a, psi = ext_x0_correction(pts)
        return a_ext(pts) + a

    # constant part of the connection mismatch at each centre: the other
    # points' potentials evaluated at q_j plus the regular dipole parts.
    # It is an exact form on the gluing ball, so it is folded into the
    # comparison block's gauge rather than damped by the cutoff.
    a_const = np.zeros((bg.k, 3))
    for j, q in enumerate(bg.centres):
        at_q = q.xyz[None, :]
        acc = np.zeros(3)
        for h, q2 in enumerate(bg.centres):
            if h != j:
                loc = local_coords(at_q, q2)
                acc += 2.0 * _dtheta_vec(loc, greens.eval_a(loc, "N"))[0]
        for p in bg.singularities:
            loc = local_coords(at_q, p)
            acc -= _dtheta_vec(loc, greens.eval_a(loc, "N"))[0]
        for j2, q2 in enumerate(bg.centres):
            v = gd.x0[j2] / gd.lambdas[j2]
            if not np.any(v):
                continue
            if j2 == j:
                g = greens.eval_gradG_reg(np.zeros((1, 3)))
            else:
                g = greens.eval_gradG(local_coords(at_q, q2))
            acc -= 2.0 * _cross(g, v[None, :])[0]
        a_const[j] = acc

    def ext_mismatch(pts, j):
        """c_ext(x_0) - (gauge-osculated c0_j(x_0)) as diagonal (a, psi)."""
        phi0, a0 = c0[j]
        return a_ext_x0(pts) - a0(pts) - a_const[j], phi_ext_x0(pts) - phi0(pts)

    def exterior_evaluate(pts):
        pts = np.atleast_2d(pts)
        a = a_ext_x0(pts)
        psi = phi_ext_x0(pts)
        for j, q in enumerate(bg.centres):
            loc = local_coords(pts, q)
            rho = np.sqrt(np.sum(loc * loc, axis=-1))
            inside = rho < 2 * gd.N * gd.delta[j]
            if np.any(inside):
                chi = 1.0 - cutoff_profile(rho[inside] / (gd.N * gd.delta[j]))
                phi0, a0 = c0[j]
                sub = pts[inside]
                am, pm = ext_mismatch(sub, j)
                a[inside] = a0(sub) + a_const[j] + chi[:, None] * am
                psi[inside] = phi0(sub)[...] + chi * pm
        az, pz = zeta_tangent(pts)
        a = a + az
        psi = psi + pz
        A = np.zeros(pts.shape[:-1] + (3, 3))
        A[..., :, 2] = a
        Phi = np.zeros(pts.shape[:-1] + (3,))
        Phi[..., 2] = psi
        return A, Phi

    base_margin = abelian_chart_margin(bg.singularities + bg.centres)

    def exterior_margin(pts):
        pts = np.atleast_2d(pts)
        out = base_margin(pts)
        # the exterior description is used down to rho_j = delta_j / N
        for j, q in enumerate(bg.centres):
            loc = local_coords(pts, q)
            rho = np.sqrt(np.sum(loc * loc, axis=-1))
            out = np.minimum(out, rho - gd.delta[j] / gd.N)
        return out

    def ext_frame(pts):
        pts = np.atleast_2d(pts)
        e3 = np.zeros(pts.shape[:-1] + (3,))
        e3[..., 2] = 1.0
        return e3

    charts = [
        Chart(
            "ext",
            "modified_sum_of_dirac_monopoles",
            exterior_evaluate,
            exterior_margin,
            ext_frame,
            extras={
                "reducible": True,
                "phi_scalar": lambda pts: exterior_evaluate(pts)[1][..., 2],
                "grad_phi_scalar": grad_phi_ext,
            },
        )
    ]

    for j, q in enumerate(bg.centres):
        charts.append(_interior_chart(bg, gd, j, c0[j], zeta_tangent, greens))

    field = AssembledField(
        charts,
        bg,
        gd,
        greens,
        obs,
        metadata={"kind": "assembled", "zeta": zeta, "lambdas": gd.lambdas},
    )
    field.phi_ext_x0 = phi_ext_x0
    field.a_ext_x0 = a_ext_x0
    field.ext_mismatch = ext_mismatch
    field.c0 = c0
    field.zeta_tangent = zeta_tangent
    return field


def _interior_chart(bg, gd, j, c0_j, zeta_tangent, greens):
    q = bg.centres[j]
    lam = gd.lambdas[j]
    d = gd.delta[j]
    N = gd.N
    tau = gd.tau[j]
    mono = PSMonopole(lam, gd.x0[j] / lam, tau=tau)
    phi0_fn, a0_fn = c0_j

    def ps_pair_local(loc):
        return ps_eval(mono, loc)

    def remainder_ext_frame(pts):
        """e^tau eta(c_j(x_0)) - c0_j(x_0) as (a (N,3,3), psi (N,3)); the
        comparison block carries no twist term (it is gauged into the
        transition on the ball)."""
        pts = np.atleast_2d(pts)
        loc = local_coords(pts, q)
        A_ab, Phi_ab = abelianize_ps(mono, loc)
        a0 = a0_fn(pts).copy()
        a0[..., 2] -= bg.b
        phi0 = phi0_fn(pts)
        dA = A_ab.copy()
        dA[..., :, 2] -= a0
        dPhi = Phi_ab.copy()
        dPhi[..., 2] -= phi0
        return dA, dPhi

    def evaluate(pts):
        pts = np.atleast_2d(pts)
        loc = local_coords(pts, q)
        A, Phi = ps_pair_local(loc)
        rho = np.sqrt(np.sum(loc * loc, axis=-1))
        chi = cutoff_profile(2 * N * rho / d)
        outer = chi < 1.0
        if np.any(outer):
            sub = pts[outer]
            dA, dPhi = remainder_ext_frame(sub)
            # rotate the exterior-frame tangent into the hedgehog frame
            _, Phi_sub = ps_pair_local(loc[outer])
            n = su2_norm(Phi_sub)
            R = _rot_to_e3_stack(Phi_sub / n[..., None], tau)
            w = (chi[outer] - 1.0)[:, None]
            A[outer] += np.einsum("...ji,...kj->...ki", R, dA) * w[..., None]
            Phi[outer] += np.einsum("...ji,...j->...i", R, dPhi) * w
        az, pz = zeta_tangent(pts)
        if np.any(az) or np.any(pz):
            _, Phi_all = ps_pair_local(loc)
            n = su2_norm(Phi_all)
            safe = n > 1e-14
            sigma = np.zeros_like(Phi_all)
            sigma[safe] = Phi_all[safe] / n[safe, None]
            A += az[..., :, None] * sigma[..., None, :]
            Phi += pz[..., None] * sigma
        return A, Phi

    def margin(pts):
        pts = np.atleast_2d(pts)
        loc = local_coords(pts, q)
        rho = np.sqrt(np.sum(loc * loc, axis=-1))
        out = N * d - rho
        # the straightening rotation is singular on the lower axis; points
        # deep inside the core (chi_int = 1) never need it
        needs_rot = rho > d / (2 * N) * 0.8
        below = loc[..., 2] < 0
        r_pl = np.hypot(loc[..., 0], loc[..., 1])
        out = np.minimum(out, np.where(needs_rot & below, r_pl, np.inf))
        return out

    def frame(pts):
        loc = local_coords(np.atleast_2d(pts), q)
        _, Phi = ps_pair_local(loc)
        n = su2_norm(Phi)
        safe = n > 1e-14
        out = np.zeros_like(Phi)
        out[safe] = Phi[safe] / n[safe, None]
        out[~safe, 2] = 1.0
        return out

    return Chart(f"int{j}", "rescaled_ps_monopole", evaluate, margin, frame, extras={"monopole": mono})


def _rot_to_e3_stack(u, tau):
    from .blocks import _rot_z, _rotation_to_e3

    R = _rotation_to_e3(u)
    return _rot_z(tau)[None, ...] @ R


# ---------------------------------------------------------------------------
# The error term


def error_field(bg: BackgroundData, gd: GluingData, field: AssembledField):
    """Closed-form evaluators (psi_total, psi_zeta) for the Bogomolny error
    of the assembled configuration and its obstruction component.

    psi_total(pts) returns su(2)-valued 1-form coefficients (N, 3, 3) in a
    per-point chart gauge (interior hedgehog inside Ann_{j, int}, diagonal
    elsewhere); pointwise norms are gauge-invariant.
    """
    obs = field.obstructions

    def ps_remainder(j, sub):
        """e^tau eta(c_j(x_0)) - c0_j(x_0) (no twist term) at points sub."""
        q = bg.centres[j]
        mono = field.charts[1 + j].extras["monopole"]
        loc = local_coords(np.atleast_2d(sub), q)
        A_ab, Phi_ab = abelianize_ps(mono, loc)
        phi0_fn, a0_fn = field.c0[j]
        a0 = a0_fn(sub).copy()
        a0[..., 2] -= bg.b
        dA = A_ab.copy()
        dA[..., :, 2] -= a0
        dPhi = Phi_ab.copy()
        dPhi[..., 2] -= phi0_fn(sub)
        return dA, dPhi

    def psi_zeta(pts):
        pts = np.atleast_2d(pts)
        out = np.zeros(pts.shape[:-1] + (3, 3))
        if np.any(gd.zeta != 0.0):
            diag = np.zeros(pts.shape)
            for h in (1, 2, 3):
                diag += 4 * np.pi * gd.zeta[h - 1] * obs.d2_o(h, pts)
            out[..., 2] = diag
        return out

    def psi_total(pts):
        pts = np.atleast_2d(pts)
        out = psi_zeta(pts)
        for j, q in enumerate(bg.centres):
            loc = local_coords(pts, q)
            rho = np.sqrt(np.sum(loc * loc, axis=-1))
            d, N = gd.delta[j], gd.N
            # exterior annulus: chi_ext gradient against the diagonal mismatch;
            # the quadratic term vanishes there (everything is diagonal)
            m_ext = (rho > N * d) & (rho < 2 * N * d)
            if np.any(m_ext):
                sub = pts[m_ext]
                am, pm = field.ext_mismatch(sub, j)
                s = rho[m_ext] / (N * d)
                dchi = _smoothstep_deriv(s - 1.0) / (N * d)
                grad_chi = dchi[:, None] * loc[m_ext] / rho[m_ext, None]
                out[m_ext, :, 2] += _cross(grad_chi, am) - pm[:, None] * grad_chi
            # interior annulus: chi_int gradient against the PS remainder
            m_int = (rho > d / (2 * N)) & (rho < d / N)
            if np.any(m_int):
                sub = pts[m_int]
                a, psi = ps_remainder(j, sub)
                s = 2 * N * rho[m_int] / d
                dchi = -_smoothstep_deriv(s - 1.0) * (2 * N / d)
                grad_chi = dchi[:, None] * loc[m_int] / rho[m_int, None]
                lin = np.einsum("kij,ni,njc->nkc", _EPS, grad_chi, a)
                lin -= psi[:, None, :] * grad_chi[..., None]
                chi = cutoff_profile(s)
                br = bracket(a[:, :, None, :], a[:, None, :, :])
                uu = 0.5 * np.einsum("kij,nijc->nkc", _EPS, br) - bracket(a, psi[:, None, :])
                out[m_int] += lin + (chi * (chi - 1.0))[:, None, None] * uu
        return out

    field_psi = psi_total
    return field_psi, psi_zeta
