"""Geometry of R^2 x S^1 and su(2)-valued mixed-degree forms.

Conventions used throughout the package:

* points are arrays of shape (..., 3) with columns (x, y, t); the circle
  coordinate t is reduced to [0, 2pi),
* su(2) values are arrays of shape (..., 3) of coefficients in the
  orthonormal basis (sigma_1, sigma_2, sigma_3); the bracket is the cross
  product and the norm the Euclidean one,
* orientation is fixed by declaring dx ^ dy ^ dt positive; every Hodge star
  below uses this convention.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * np.pi


def wrap_angle(t):
    """Reduce an angle (or array of angles) to [0, 2pi)."""
    return np.mod(t, TWO_PI)


def wrap_angle_signed(t):
    """Reduce an angle difference to (-pi, pi]."""
    w = np.mod(np.asarray(t) + np.pi, TWO_PI) - np.pi
    return np.where(w == -np.pi, np.pi, w)


@dataclass(frozen=True)
class Point3:
    """A point (z, t) on R^2 x S^1, z complex, t stored in [0, 2pi)."""

    z: complex
    t: float

    def __post_init__(self):
        object.__setattr__(self, "z", complex(self.z))
        object.__setattr__(self, "t", float(wrap_angle(self.t)))

    @property
    def xyz(self) -> np.ndarray:
        return np.array([self.z.real, self.z.imag, self.t])

    @staticmethod
    def from_xyz(v) -> "Point3":
        v = np.asarray(v, dtype=float)
        return Point3(complex(v[0], v[1]), v[2])


def distance(p, q) -> np.ndarray:
    """Product distance sqrt(|z_p - z_q|^2 + dt^2), dt the short arc."""
    p = p.xyz if isinstance(p, Point3) else np.asarray(p, dtype=float)
    q = q.xyz if isinstance(q, Point3) else np.asarray(q, dtype=float)
    dz = p[..., :2] - q[..., :2]
    dt = wrap_angle_signed(p[..., 2] - q[..., 2])
    return np.sqrt(np.sum(dz * dz, axis=-1) + dt * dt)


def local_coords(pts, centre) -> np.ndarray:
    """Coordinates of pts relative to centre, t-offset wrapped to (-pi, pi]."""
    pts = np.asarray(pts, dtype=float)
    c = centre.xyz if isinstance(centre, Point3) else np.asarray(centre, dtype=float)
    out = np.empty_like(pts)
    out[..., 0] = pts[..., 0] - c[0]
    out[..., 1] = pts[..., 1] - c[1]
    out[..., 2] = wrap_angle_signed(pts[..., 2] - c[2])
    return out


# ---------------------------------------------------------------------------
# su(2) coefficient algebra


def bracket(u, v) -> np.ndarray:
    """Lie bracket in the orthonormal basis sigma_a = i tau_a / 2 built from
    the Pauli matrices: [sigma_a, sigma_b] = -eps_abc sigma_c, i.e.
    [u, v] = -(u x v) on coefficients."""
    return -np.cross(u, v)


def su2_norm(u) -> np.ndarray:
    return np.sqrt(np.sum(np.asarray(u) ** 2, axis=-1))


def su2_inner(u, v) -> np.ndarray:
    return np.sum(np.asarray(u) * np.asarray(v), axis=-1)


# ---------------------------------------------------------------------------
# Mixed-degree forms: (1-form ⊕ 0-form) with su(2) values


class MixedForm:
    """Value(s) of a mixed-degree form; data has shape (..., 4, 3).

    Slots 0..2 hold the 1-form components (a_x, a_y, a_t), slot 3 the
    zero-form psi; the last axis is the su(2) coefficient axis.
    """

    __slots__ = ("data",)

    def __init__(self, data):
        data = np.asarray(data, dtype=float)
        if data.shape[-2:] != (4, 3):
            raise ValueError("MixedForm data must have trailing shape (4, 3)")
        self.data = data

    @staticmethod
    def zeros(shape=()) -> "MixedForm":
        return MixedForm(np.zeros(tuple(shape) + (4, 3)))

    @staticmethod
    def from_parts(one_form, zero_form) -> "MixedForm":
        one_form = np.asarray(one_form, dtype=float)
        zero_form = np.asarray(zero_form, dtype=float)
        return MixedForm(np.concatenate([one_form, zero_form[..., None, :]], axis=-2))

    @property
    def one_form(self) -> np.ndarray:
        return self.data[..., :3, :]

    @property
    def zero_form(self) -> np.ndarray:
        return self.data[..., 3, :]

    def norm(self) -> np.ndarray:
        return np.sqrt(np.sum(self.data**2, axis=(-2, -1)))

    def __add__(self, other):
        return MixedForm(self.data + other.data)

    def __sub__(self, other):
        return MixedForm(self.data - other.data)

    def __mul__(self, s):
        return MixedForm(self.data * s)

    __rmul__ = __mul__

    def __neg__(self):
        return MixedForm(-self.data)


# Clifford multiplication gamma(dx_h) on 1-form ⊕ 0-form, realized as
# (a, psi) -> (d/dx_h ⌟ (*a) + psi dx_h, -a_h).  With dx^dy^dt positive:
#   gamma_1: a' = ( psi, a_t, -a_y),  psi' = -a_x
#   gamma_2: a' = (-a_t, psi,  a_x),  psi' = -a_y
#   gamma_3: a' = ( a_y, -a_x, psi),  psi' = -a_t
_CLIFFORD_SRC = {
    1: ((3, 2, 1), (1.0, 1.0, -1.0), 0),
    2: ((2, 3, 0), (-1.0, 1.0, 1.0), 1),
    3: ((1, 0, 3), (1.0, -1.0, 1.0), 2),
}


def clifford(h: int, u: MixedForm) -> MixedForm:
    """Clifford multiplication by dx_h (h in {1,2,3}); gamma(dx_h)^2 = -id."""
    if h not in (1, 2, 3):
        raise ValueError(f"invalid axis index {h}; expected 1, 2 or 3")
    src, sgn, psi_src = _CLIFFORD_SRC[h]
    d = u.data
    out = np.empty_like(d)
    for i, (j, s) in enumerate(zip(src, sgn)):
        out[..., i, :] = s * d[..., j, :]
    out[..., 3, :] = -d[..., psi_src, :]
    return MixedForm(out)


def split_diag(u: MixedForm, direction) -> tuple[MixedForm, MixedForm]:
    """Split u into parts parallel / orthogonal to an su(2) direction.

    Raises ValueError where the direction vanishes (split undefined at a
    Higgs zero).
    """
    direction = np.asarray(direction, dtype=float)
    n = su2_norm(direction)
    if np.any(n == 0.0):
        raise ValueError("split undefined at Higgs zero")
    sigma = direction / n[..., None]
    coeff = np.sum(u.data * sigma[..., None, :], axis=-1)
    diag = MixedForm(coeff[..., None] * sigma[..., None, :])
    return diag, u - diag


# ---------------------------------------------------------------------------
# Constant-coefficient exterior calculus helpers (flat metric, orientation
# dx^dy^dt).  2-forms are stored by their components (F_23, F_31, F_12) so
# that the Hodge star on 2-forms is the identity map on components.

_EPS = np.zeros((3, 3, 3))
_EPS[0, 1, 2] = _EPS[1, 2, 0] = _EPS[2, 0, 1] = 1.0
_EPS[0, 2, 1] = _EPS[2, 1, 0] = _EPS[1, 0, 2] = -1.0


def star_two_form(F) -> np.ndarray:
    """*F for a 2-form F given as components F[..., i, j]; returns a 1-form."""
    F = np.asarray(F)
    return 0.5 * np.einsum("kij,...ij->...k", _EPS, F)


def cross_form(v, a) -> np.ndarray:
    """(v x a)_k = eps_{kij} v_i a_j for a real 3-vector field acting on the
    spatial axis of a (su(2)-valued) 1-form a[..., i, :]."""
    v = np.asarray(v)
    a = np.asarray(a)
    return np.einsum("kij,...i,...jc->...kc", _EPS, v, a)
