"""
Scalar fields on the round unit sphere.

Fields live in two representations:

* ``GridField`` -- samples on a Gauss-Legendre (colatitude) x uniform
  (longitude) grid.  Rows run north to south, column ``j`` sits at longitude
  ``2*pi*j/n_lon``.
* ``SpectralField`` -- coefficients of real spherical harmonics, orthonormal
  with respect to the round area element ``dv_c`` (total area ``4*pi``).

Real harmonics use no Condon-Shortley phase::

    Y_l0  = p_l0(cos theta)
    Y_lm  = sqrt(2) p_lm(cos theta) cos(m phi)     m > 0
    Y_l-m = sqrt(2) p_lm(cos theta) sin(m phi)     m > 0

with ``p_lm = sqrt((2l+1)/(4 pi) (l-m)!/(l+m)!) P_l^m``.  Coefficients are
stored flat at index ``l*l + l + m``, so the first ``(L+1)**2`` entries of any
coefficient vector are exactly its degree <= L part.

Transforms are dense sums over the nodes (no FFT); at the bandlimits used
here (L <= 64) they cost well under a millisecond.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import InvalidArgument, InvalidData

FOUR_PI = 4.0 * math.pi

_MAX_NODES = 4096


def n_coeffs(lmax: int) -> int:
    return (lmax + 1) ** 2


def lm_index(l: int, m: int) -> int:
    return l * l + l + m


def degrees(lmax: int) -> np.ndarray:
    """Degree ``l`` of every flat coefficient index up to ``lmax``."""
    return np.repeat(np.arange(lmax + 1), 2 * np.arange(lmax + 1) + 1)


def orders(lmax: int) -> np.ndarray:
    return np.concatenate([np.arange(-l, l + 1) for l in range(lmax + 1)])


def _legendre_blocks(t, lmax, dtype=float):
    """Yield ``(m, block)`` with ``block[:, k] = p_{m+k, m}(t)``.

    Normalised three-term recurrence in ``l`` for fixed ``m``; the sectoral
    seed ``p_mm`` is built multiplicatively so nothing overflows.
    """
    t = np.asarray(t, dtype=dtype)
    one = dtype(1) if dtype is not float else 1.0
    s = np.sqrt(np.clip(one - t * t, 0, None))
    pmm = np.full(t.shape, one / np.sqrt(4 * np.arccos(-one)), dtype=dtype)
    for m in range(lmax + 1):
        if m > 0:
            pmm = pmm * s * np.sqrt(one * (2 * m + 1) / (2 * m))
        block = np.empty(t.shape + (lmax + 1 - m,), dtype=dtype)
        block[..., 0] = pmm
        if m < lmax:
            block[..., 1] = np.sqrt(one * (2 * m + 3)) * t * pmm
        for k in range(2, lmax + 1 - m):
            l = m + k
            a = np.sqrt(one * (4 * l * l - 1) / (l * l - m * m))
            b = np.sqrt(one * ((l - 1) ** 2 - m * m) / (4 * (l - 1) ** 2 - 1))
            block[..., k] = a * (t * block[..., k - 1] - b * block[..., k - 2])
        yield m, block


def legendre_table(t, lmax: int, dtype=float) -> np.ndarray:
    """Array ``P[..., l, m]`` of normalised associated Legendre functions."""
    t = np.asarray(t, dtype=dtype)
    out = np.zeros(t.shape + (lmax + 1, lmax + 1), dtype=dtype)
    for m, block in _legendre_blocks(t, lmax, dtype):
        out[..., m:, m] = block
    return out


def _legendre_p(n, x):
    p0 = np.ones_like(x)
    p1 = x.copy()
    for k in range(2, n + 1):
        p0, p1 = p1, ((2 * k - 1) * x * p1 - (k - 1) * p0) / k
    return p0, p1


def gauss_legendre(n: int):
    """Gauss-Legendre nodes (descending) and weights.

    numpy's rule, polished by Newton steps in extended precision; this takes
    the quadrature error on high-degree products from ~1e-14 to ~1e-16.
    """
    x, _ = np.polynomial.legendre.leggauss(n)
    x = x.astype(np.longdouble)
    if n > 1:
        for _ in range(2):
            p0, p1 = _legendre_p(n, x)
            x = x - p1 * (x * x - 1) / (n * (x * p1 - p0))
    p0, p1 = _legendre_p(n, x) if n > 1 else (np.ones_like(x), x)
    dp = n * (x * p1 - p0) / (x * x - 1)
    w = 2 / ((1 - x * x) * dp * dp)
    order = np.argsort(-x)
    return x[order], w[order]


class SphereGrid:
    """Gauss-Legendre x uniform-longitude grid for bandlimit ``L``.

    ``n_lat = ceil(q (L+1))`` and ``n_lon = ceil(q (2L+1))``; with ``q = 1``
    products of two degree-L fields are integrated exactly.  ``lmax`` is the
    largest degree the grid can analyse without aliasing, which equals ``L``
    for ``q = 1`` and roughly ``q L`` otherwise.
    """

    def __init__(self, L: int, q=2):
        if isinstance(L, bool) or not isinstance(L, (int, np.integer)) or L < 1:
            raise InvalidArgument(f"bandlimit L must be a positive integer, got {L!r}")
        try:
            qf = Fraction(str(q))
        except (ValueError, TypeError):
            raise InvalidArgument(f"oversample factor q must be rational, got {q!r}") from None
        if qf < 1:
            raise InvalidArgument(f"oversample factor q must be >= 1, got {q!r}")
        n_lat = math.ceil(qf * (L + 1))
        n_lon = math.ceil(qf * (2 * L + 1))
        if n_lat > _MAX_NODES or n_lon > 2 * _MAX_NODES:
            raise InvalidArgument(f"grid {n_lat}x{n_lon} exceeds the supported size")

        self.L = int(L)
        self.q = qf
        self.n_lat = n_lat
        self.n_lon = n_lon
        self.lmax = min(n_lat - 1, (n_lon - 1) // 2)

        x_ld, w_ld = gauss_legendre(n_lat)  # north to south
        self.cos_theta = x_ld.astype(float)
        self.gl_weights = w_ld.astype(float)
        self.theta = np.arccos(self.cos_theta)
        self.phi = 2.0 * math.pi * np.arange(n_lon) / n_lon
        self.dphi = 2.0 * math.pi / n_lon
        self.weights = np.outer(self.gl_weights, np.full(n_lon, self.dphi))

        sin_t = np.sin(self.theta)
        self.points = np.stack(
            [
                np.outer(sin_t, np.cos(self.phi)),
                np.outer(sin_t, np.sin(self.phi)),
                np.outer(self.cos_theta, np.ones(n_lon)),
            ],
            axis=-1,
        )

        lm = self.lmax
        # P3[j, l, m'+lm]; sqrt(2) folded in for m' != 0
        table = legendre_table(x_ld, lm, np.longdouble).astype(float)
        p3 = np.zeros((n_lat, lm + 1, 2 * lm + 1))
        p3[:, :, lm] = table[:, :, 0]
        for m in range(1, lm + 1):
            p3[:, :, lm + m] = math.sqrt(2.0) * table[:, :, m]
            p3[:, :, lm - m] = math.sqrt(2.0) * table[:, :, m]
        self._p3 = p3
        ms = np.arange(-lm, lm + 1)
        trig = np.empty((n_lon, 2 * lm + 1))
        trig[:, ms > 0] = np.cos(np.outer(self.phi, ms[ms > 0]))
        trig[:, ms == 0] = 1.0
        trig[:, ms < 0] = np.sin(np.outer(self.phi, -ms[ms < 0]))
        self._trig = trig
        self._p3.setflags(write=False)
        self._trig.setflags(write=False)

    @property
    def shape(self):
        return (self.n_lat, self.n_lon)

    def __repr__(self):
        return f"SphereGrid(L={self.L}, q={self.q}, n_lat={self.n_lat}, n_lon={self.n_lon})"

    def same_as(self, other: "SphereGrid") -> bool:
        return other is self or (
            other.n_lat == self.n_lat and other.n_lon == self.n_lon and other.L == self.L
        )

    def _tables(self, lmax):
        lm = self.lmax
        p3 = self._p3[:, : lmax + 1, lm - lmax : lm + lmax + 1]
        trig = self._trig[:, lm - lmax : lm + lmax + 1]
        return p3, trig

    def coordinate(self, i: int) -> "GridField":
        """The ambient coordinate x_{i+1} restricted to the sphere."""
        return GridField(self, self.points[..., i])

    def constant(self, c: float) -> "GridField":
        return GridField(self, np.full(self.shape, float(c)))


def make_grid(L: int, q=2) -> SphereGrid:
    return SphereGrid(L, q)


@dataclass(frozen=True)
class GridField:
    grid: SphereGrid
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != self.grid.shape:
            raise InvalidArgument(
                f"field shape {values.shape} does not match grid {self.grid.shape}"
            )
        object.__setattr__(self, "values", values)

    def check_finite(self):
        if not np.all(np.isfinite(self.values)):
            raise InvalidData("field has non-finite samples")
        return self

    def map(self, func) -> "GridField":
        return GridField(self.grid, func(self.values))


@dataclass(frozen=True)
class SpectralField:
    lmax: int
    coeffs: np.ndarray

    def __post_init__(self):
        coeffs = np.asarray(self.coeffs, dtype=float)
        if self.lmax < 0 or coeffs.shape != (n_coeffs(self.lmax),):
            raise InvalidArgument(
                f"expected {n_coeffs(self.lmax)} coefficients for lmax={self.lmax}, "
                f"got shape {coeffs.shape}"
            )
        if not np.all(np.isfinite(coeffs)):
            raise InvalidData("non-finite spherical harmonic coefficients")
        object.__setattr__(self, "coeffs", coeffs)

    @classmethod
    def zeros(cls, lmax: int) -> "SpectralField":
        return cls(lmax, np.zeros(n_coeffs(lmax)))

    def truncate(self, lmax: int) -> "SpectralField":
        """Keep degrees <= lmax; pads with zeros when lmax exceeds ours."""
        if lmax <= self.lmax:
            return SpectralField(lmax, self.coeffs[: n_coeffs(lmax)].copy())
        out = np.zeros(n_coeffs(lmax))
        out[: self.coeffs.size] = self.coeffs
        return SpectralField(lmax, out)

    def degree_power(self) -> np.ndarray:
        """Sum of squared coefficients per degree."""
        return np.bincount(degrees(self.lmax), weights=self.coeffs**2, minlength=self.lmax + 1)

    def __add__(self, other):
        lm = max(self.lmax, other.lmax)
        return SpectralField(lm, self.truncate(lm).coeffs + other.truncate(lm).coeffs)

    def __sub__(self, other):
        return self + other.scale(-1.0)

    def scale(self, c: float) -> "SpectralField":
        return SpectralField(self.lmax, c * self.coeffs)


def _flat_to_2d(coeffs, lmax):
    a2 = np.zeros((lmax + 1, 2 * lmax + 1))
    a2[degrees(lmax), orders(lmax) + lmax] = coeffs
    return a2


def analyze(f: GridField, lmax: int | None = None) -> SpectralField:
    """Spherical harmonic coefficients of ``f`` by quadrature.

    ``lmax`` defaults to the grid bandlimit ``L`` and may go up to
    ``grid.lmax``.  Exact for fields band-limited to ``lmax``.
    """
    grid = f.grid
    lmax = grid.L if lmax is None else int(lmax)
    if not 0 <= lmax <= grid.lmax:
        raise InvalidArgument(f"lmax={lmax} outside [0, {grid.lmax}] for {grid!r}")
    f.check_finite()
    p3, trig = grid._tables(lmax)
    c = (f.values @ trig) * grid.dphi
    c *= grid.gl_weights[:, None]
    a2 = np.einsum("jlm,jm->lm", p3, c)
    return SpectralField(lmax, a2[degrees(lmax), orders(lmax) + lmax])


def synthesize(a: SpectralField, grid: SphereGrid) -> GridField:
    """Sample ``sum a_lm Y_lm`` on the grid nodes."""
    if a.lmax > grid.lmax:
        raise InvalidArgument(
            f"grid {grid!r} resolves degrees <= {grid.lmax}, field has lmax={a.lmax}"
        )
    p3, trig = grid._tables(a.lmax)
    g = np.einsum("jlm,lm->jm", p3, _flat_to_2d(a.coeffs, a.lmax))
    return GridField(grid, g @ trig.T)


def evaluate(a: SpectralField, points) -> np.ndarray:
    """Evaluate the expansion at arbitrary unit vectors ``points[..., 3]``."""
    pts = np.asarray(points, dtype=float)
    t = np.clip(pts[..., 2], -1.0, 1.0)
    phi = np.arctan2(pts[..., 1], pts[..., 0])
    out = np.zeros(t.shape)
    c = a.coeffs
    for m, block in _legendre_blocks(t, a.lmax):
        ls = np.arange(m, a.lmax + 1)
        if m == 0:
            out += block @ c[ls * ls + ls]
        else:
            gc = block @ c[ls * ls + ls + m]
            gs = block @ c[ls * ls + ls - m]
            out += math.sqrt(2.0) * (gc * np.cos(m * phi) + gs * np.sin(m * phi))
    return out


def degree_components(a: SpectralField, points) -> np.ndarray:
    """``D[..., l] = sum_m a_lm Y_lm(x)``: the degree-l part of ``a`` at ``x``."""
    pts = np.asarray(points, dtype=float)
    t = np.clip(pts[..., 2], -1.0, 1.0)
    phi = np.arctan2(pts[..., 1], pts[..., 0])
    out = np.zeros(t.shape + (a.lmax + 1,))
    c = a.coeffs
    for m, block in _legendre_blocks(t, a.lmax):
        ls = np.arange(m, a.lmax + 1)
        if m == 0:
            out[..., m:] += block * c[ls * ls + ls]
        else:
            cm = np.cos(m * phi)[..., None]
            sm = np.sin(m * phi)[..., None]
            out[..., m:] += math.sqrt(2.0) * block * (c[ls * ls + ls + m] * cm + c[ls * ls + ls - m] * sm)
    return out


def laplacian(a: SpectralField) -> SpectralField:
    l = degrees(a.lmax)
    return SpectralField(a.lmax, -(l * (l + 1.0)) * a.coeffs)


def inverse_helmholtz(a: SpectralField, c: float) -> SpectralField:
    """Solve ``(1 - c Delta) x = a`` for ``c >= 0``."""
    l = degrees(a.lmax)
    return SpectralField(a.lmax, a.coeffs / (1.0 + c * l * (l + 1.0)))


def integrate(f: GridField) -> float:
    """Quadrature of ``f`` against ``dv_c``."""
    f.check_finite()
    return float(np.sum(f.grid.weights * f.values))


def grad_energy(a: SpectralField) -> float:
    """Dirichlet integral ``int |grad u|^2 dv_c`` by Parseval."""
    l = degrees(a.lmax)
    return float(np.sum(l * (l + 1.0) * a.coeffs**2))


def spectral_tail_fraction(a: SpectralField, L: int | None = None) -> float:
    """Share of the degree 1..L power carried by degrees above 0.8 L."""
    L = a.lmax if L is None else min(L, a.lmax)
    power = a.degree_power()[1 : L + 1]
    total = power.sum()
    if total == 0.0:
        return 0.0
    cut = int(math.floor(0.8 * L))
    return float(power[cut:].sum() / total)


def cap_weights(lmax: int, radii) -> np.ndarray:
    """Funk-Hecke multipliers of the hard cap indicator.

    ``W[..., l] = 2 pi int_{cos r}^1 P_l(t) dt`` so that the integral of a
    band-limited ``f`` over the cap of angular radius ``r`` about ``c`` is
    ``sum_l W[l] * f_l(c)`` with ``f_l`` the degree-l component.
    """
    x = np.cos(np.asarray(radii, dtype=float))
    p = np.empty(x.shape + (lmax + 2,))
    p[..., 0] = 1.0
    p[..., 1] = x
    for n in range(1, lmax + 1):
        p[..., n + 1] = ((2 * n + 1) * x * p[..., n] - n * p[..., n - 1]) / (n + 1)
    w = np.empty(x.shape + (lmax + 1,))
    w[..., 0] = 1.0 - x
    n = np.arange(1, lmax + 1)
    w[..., 1:] = (p[..., :lmax] - p[..., 2 : lmax + 2]) / (2 * n + 1)
    return 2.0 * math.pi * w


def geodesic_cap_integral(f: GridField, center, r: float, lmax: int | None = None) -> float:
    """Integral of ``f`` over the round cap ``{x : angle(x, center) < r}``.

    ``f`` is projected onto harmonics of degree <= ``lmax`` (default: all the
    grid resolves) and the hard indicator is applied exactly through its
    Legendre expansion, so the result is exact for band-limited ``f`` and
    continuous and monotone in ``r`` for nonnegative smooth ``f``.
    """
    if not (0.0 < r <= math.pi):
        raise InvalidArgument(f"cap radius must lie in (0, pi], got {r!r}")
    c = np.asarray(center, dtype=float)
    norm = np.linalg.norm(c)
    if c.shape != (3,) or not norm > 0:
        raise InvalidArgument("center must be a nonzero 3-vector")
    a = analyze(f, f.grid.lmax if lmax is None else lmax)
    d = degree_components(a, c / norm)
    return float(cap_weights(a.lmax, r) @ d)
