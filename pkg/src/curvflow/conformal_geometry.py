"""
Conformal metrics ``g = e^{2u} c`` on the unit sphere.

The curvature of ``g`` is ``K = e^{-2u} (1 - Delta u)``.  Integrals against
``dv_g`` are written as ``dv_c`` integrals with the weight ``e^{2u}``.

Mobius dilations are parametrised by a point ``a`` of the open unit ball.  The
map ``phi_a`` is conjugate, under stereographic projection from ``-a/|a|``,
to the planar scaling ``z -> lam z`` with ``lam = sqrt((1+|a|)/(1-|a|))``;
its pullback of the round metric is ``e^{2 w_a} c`` with::

    e^{2 w_a(x)} = (1 - |a|^2) / (1 - a.x)^2

so the area of ``phi_a^* c`` piles up around ``a/|a|``.  ``phi_a^{-1}`` is
``phi_{-a}``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import CurvatureOverflow, InvalidArgument, NoConvergence
from .sphere_core import (
    FOUR_PI,
    GridField,
    SpectralField,
    SphereGrid,
    analyze,
    evaluate,
    grad_energy,
    integrate,
    laplacian,
    synthesize,
)

_EXP_LIMIT = 300.0


@dataclass(frozen=True)
class ConformalFactor:
    """Log conformal factor ``u``: grid samples plus harmonic coefficients.

    For band-limited ``u`` the two agree to round-off.  Fields built from
    samples of a non-band-limited function keep the exact samples and use the
    coefficients (up to ``grid.lmax``) only for derivatives.
    """

    u: GridField
    spectral: SpectralField

    @property
    def grid(self) -> SphereGrid:
        return self.u.grid

    @property
    def values(self) -> np.ndarray:
        return self.u.values

    @classmethod
    def from_coeffs(cls, grid: SphereGrid, a: SpectralField) -> "ConformalFactor":
        return cls(synthesize(a, grid), a)

    @classmethod
    def from_values(cls, grid: SphereGrid, values, lmax: int | None = None) -> "ConformalFactor":
        f = GridField(grid, values).check_finite()
        return cls(f, analyze(f, grid.lmax if lmax is None else lmax))

    @classmethod
    def zero(cls, grid: SphereGrid, lmax: int | None = None) -> "ConformalFactor":
        return cls.from_coeffs(grid, SpectralField.zeros(grid.L if lmax is None else lmax))

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values)))

    def shifted(self, c: float) -> "ConformalFactor":
        """``u + c``; the constant only touches the l = 0 coefficient."""
        coeffs = self.spectral.coeffs.copy()
        coeffs[0] += c * math.sqrt(FOUR_PI)
        return ConformalFactor(
            GridField(self.grid, self.values + c), SpectralField(self.spectral.lmax, coeffs)
        )


def _check_exp(u: ConformalFactor):
    s = u.sup_norm()
    if not np.isfinite(s) or s > _EXP_LIMIT:
        raise CurvatureOverflow(f"|u|_inf = {s:.3g} exceeds {_EXP_LIMIT}")


def area_density(u: ConformalFactor) -> GridField:
    """``e^{2u}``, the density of ``dv_g`` against ``dv_c``."""
    _check_exp(u)
    return GridField(u.grid, np.exp(2.0 * u.values))


def laplacian_values(u: ConformalFactor) -> np.ndarray:
    return synthesize(laplacian(u.spectral), u.grid).values


def gaussian_curvature(u: ConformalFactor) -> GridField:
    _check_exp(u)
    return GridField(u.grid, np.exp(-2.0 * u.values) * (1.0 - laplacian_values(u)))


def volume(u: ConformalFactor) -> float:
    return integrate(area_density(u))


def liouville_energy(u: ConformalFactor) -> float:
    """``E(u) = (1/4pi) int (|grad u|^2 + 2u) dv_c``."""
    return (grad_energy(u.spectral) + 2.0 * integrate(u.u)) / FOUR_PI


def onofri_gap(u: ConformalFactor) -> float:
    """``E(u) - log(vol/4pi)``, nonnegative by the Onofri inequality."""
    return liouville_energy(u) - math.log(volume(u) / FOUR_PI)


def center_of_mass(u: ConformalFactor) -> np.ndarray:
    w = area_density(u).values * u.grid.weights
    return np.einsum("jk,jki->i", w, u.grid.points) / w.sum()


@dataclass(frozen=True)
class MobiusParameter:
    """Dilation parameter ``a`` (|a| < 1) followed by a rotation ``R``."""

    a: np.ndarray = field(default_factory=lambda: np.zeros(3))
    R: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float).reshape(3)
        R = np.asarray(self.R, dtype=float).reshape(3, 3)
        if not np.all(np.isfinite(a)) or np.linalg.norm(a) >= 1.0 - 1e-9:
            raise InvalidArgument(f"Mobius parameter needs |a| < 1, got |a| = {np.linalg.norm(a)}")
        if np.abs(R @ R.T - np.eye(3)).max() > 1e-12 or abs(np.linalg.det(R) - 1.0) > 1e-12:
            raise InvalidArgument("R must be a rotation matrix")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "R", R)

    @property
    def is_identity(self) -> bool:
        return not np.any(self.a) and np.array_equal(self.R, np.eye(3))


def _as_param(p) -> MobiusParameter:
    if isinstance(p, MobiusParameter):
        return p
    return MobiusParameter(np.asarray(p, dtype=float))


def dilation_map(a, x) -> np.ndarray:
    """Apply ``phi_a`` to unit vectors ``x[..., 3]``."""
    a = np.asarray(a, dtype=float)
    x = np.asarray(x, dtype=float)
    s = float(np.linalg.norm(a))
    if s >= 1.0:
        raise InvalidArgument("|a| must be < 1")
    if s == 0.0:
        return x.copy()
    n = a / s
    lam2 = (1.0 + s) / (1.0 - s)
    h = x @ n
    perp = x - h[..., None] * n
    den = (1.0 + lam2) + (1.0 - lam2) * h
    h_new = ((1.0 + h) - lam2 * (1.0 - h)) / den
    perp_new = (2.0 * math.sqrt(lam2) / den)[..., None] * perp
    y = perp_new + h_new[..., None] * n
    return y / np.linalg.norm(y, axis=-1, keepdims=True)


def mobius_log_factor(a, x) -> np.ndarray:
    """``w_a(x) = 0.5 log(1-|a|^2) - log(1 - a.x)``."""
    a = np.asarray(a, dtype=float)
    s2 = float(a @ a)
    return 0.5 * math.log1p(-s2) - np.log1p(-(np.asarray(x) @ a))


def mobius_map(p, x) -> np.ndarray:
    """``phi_p = R o phi_a``."""
    p = _as_param(p)
    return dilation_map(p.a, x) @ p.R.T


def mobius_factor(p, grid: SphereGrid) -> ConformalFactor:
    """Log conformal factor ``0.5 log det(d phi_p)`` of ``phi_p^* c``."""
    p = _as_param(p)
    return ConformalFactor.from_values(grid, mobius_log_factor(p.a, grid.points))


def mobius_pullback(u: ConformalFactor, p) -> ConformalFactor:
    """``v = u o phi_p + w_p``, so that ``e^{2v} c = phi_p^*(e^{2u} c)``.

    ``u o phi_p`` is summed from the harmonic coefficients of ``u`` at the
    mapped nodes, which is exact for band-limited ``u``.
    """
    p = _as_param(p)
    grid = u.grid
    if p.is_identity:
        return u
    y = mobius_map(p, grid.points)
    values = evaluate(u.spectral, y) + mobius_log_factor(p.a, grid.points)
    return ConformalFactor.from_values(grid, values)


def _pulled_back_com(u: ConformalFactor, a, density):
    # int x dv_{phi_a^* g} = int phi_a^{-1}(y) dv_g(y); phi_a^{-1} = phi_{-a}
    y = dilation_map(-np.asarray(a), u.grid.points)
    return np.einsum("jk,jki->i", density, y) / density.sum()


@dataclass
class RecenterResult:
    v: ConformalFactor
    p: MobiusParameter
    iterations: int
    residual: float


def recenter(u: ConformalFactor, tol: float = 1e-9, max_iter: int = 100) -> RecenterResult:
    """Find ``a`` with ``center_of_mass(mobius_pullback(u, a)) = 0``.

    Damped Newton on ``F(a)``, Jacobian by central differences (step 1e-5),
    step halving on ``|F|``.  ``F`` is evaluated through the change of
    variables ``int x dv_h = int phi^{-1}(y) dv_g(y)``, which avoids
    resampling ``u``; the last iterations are confirmed on the pulled-back
    field itself.

    Raises
    ------
    NoConvergence
        When the residual is still above ``tol`` after ``max_iter`` steps.
    """
    vol = volume(u)
    if not (FOUR_PI * math.exp(-60) <= vol <= FOUR_PI * math.exp(60)):
        raise InvalidArgument(f"volume {vol:.3g} outside the supported range")
    density = area_density(u).values * u.grid.weights

    def F(a):
        return _pulled_back_com(u, a, density)

    def jac(a, h=1e-5):
        J = np.empty((3, 3))
        for i in range(3):
            e = np.zeros(3)
            e[i] = h
            J[:, i] = (F(a + e) - F(a - e)) / (2.0 * h)
        return J

    def clamp(a):
        s = np.linalg.norm(a)
        limit = 1.0 - 1e-8
        return a if s < limit else a * (limit / s)

    m = center_of_mass(u)
    if np.linalg.norm(m) <= tol:
        return RecenterResult(u, MobiusParameter(), 0, float(np.linalg.norm(m)))
    a = clamp(-m / (1.0 + np.linalg.norm(m)))
    Fa = F(a)
    it = 0
    direct = False
    while it < max_iter:
        r = np.linalg.norm(Fa)
        if r <= 0.1 * tol:
            if direct:
                break
            # confirm on the resampled field; switch F to the direct form
            v = mobius_pullback(u, a)
            Fv = center_of_mass(v)
            if np.linalg.norm(Fv) <= tol:
                return RecenterResult(v, MobiusParameter(a), it, float(np.linalg.norm(Fv)))
            direct = True
            J0 = jac(a)
            Fa = Fv
            r = np.linalg.norm(Fa)
        it += 1
        J = J0 if direct else jac(a)
        try:
            step = np.linalg.solve(J, -Fa)
        except np.linalg.LinAlgError:
            step = -Fa
        t = 1.0
        while True:
            a_new = clamp(a + t * step)
            F_new = center_of_mass(mobius_pullback(u, a_new)) if direct else F(a_new)
            if np.linalg.norm(F_new) < r or t < 1e-6:
                break
            t *= 0.5
        a, Fa = a_new, F_new
    v = mobius_pullback(u, a)
    res = float(np.linalg.norm(center_of_mass(v)))
    if res > tol:
        raise NoConvergence(f"recentering stalled at |com| = {res:.3g} after {it} iterations")
    return RecenterResult(v, MobiusParameter(a), it, res)
