"""
The prescribed curvature function ``f`` and the hypotheses it must satisfy.

``f`` is kept analytic -- a polynomial in the ambient coordinates plus
Gaussian bumps in geodesic distance -- so that gradients, Hessians and
``Delta f`` at critical points are exact rather than read off grid data.

Intrinsic derivatives on the unit sphere come from any ambient extension
``F`` of ``f``::

    grad f = P grad F
    Hess f = P (D^2 F) P - (x . grad F) P
    Delta f = tr(D^2 F) - x^T (D^2 F) x - 2 x . grad F

with ``P = I - x x^T``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .conformal_geometry import ConformalFactor, area_density
from .errors import InvalidArgument
from .sphere_core import GridField, SphereGrid, integrate

POSITIVE_PART_REL = 1e-10
DEGENERATE_REL = 1e-8
GRAD_TOL = 1e-10
DEDUP_ANGLE = 1e-6
FAMILY_SIZE = 50
THRESHOLD_PROXIMITY = 1e-6


@dataclass(frozen=True)
class Bump:
    center: np.ndarray
    sigma: float
    height: float

    def __post_init__(self):
        c = np.asarray(self.center, dtype=float).reshape(3)
        n = np.linalg.norm(c)
        if not np.isfinite(n) or n == 0:
            raise InvalidArgument("bump center must be a nonzero finite vector")
        if not (self.sigma > 0 and math.isfinite(self.sigma)):
            raise InvalidArgument(f"bump width must be positive, got {self.sigma!r}")
        if not math.isfinite(self.height):
            raise InvalidArgument("bump height must be finite")
        object.__setattr__(self, "center", c / n)


@dataclass(frozen=True)
class CurvatureSpec:
    """``f(x) = sum c x1^i x2^j x3^k + sum h exp(-angle(x, center)^2 / sigma^2)``."""

    poly: tuple = ()
    bumps: tuple = ()
    name: str = "custom"

    def __post_init__(self):
        poly = tuple((tuple(int(e) for e in exps), float(c)) for exps, c in self.poly)
        bumps = tuple(b if isinstance(b, Bump) else Bump(*b) for b in self.bumps)
        if not poly and not bumps:
            raise InvalidArgument("a curvature spec needs at least one term")
        for exps, c in poly:
            if len(exps) != 3 or min(exps) < 0 or sum(exps) > 4:
                raise InvalidArgument(f"monomial exponents {exps} must be 3 nonnegative ints of total degree <= 4")
            if not math.isfinite(c):
                raise InvalidArgument("polynomial coefficients must be finite")
        object.__setattr__(self, "poly", poly)
        object.__setattr__(self, "bumps", bumps)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "poly": [[*exps, c] for exps, c in self.poly],
            "bumps": [[*b.center.tolist(), b.sigma, b.height] for b in self.bumps],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CurvatureSpec":
        unknown = set(d) - {"name", "poly", "bumps"}
        if unknown:
            raise InvalidArgument(f"unknown curvature spec key(s): {sorted(unknown)}")
        poly = [((int(t[0]), int(t[1]), int(t[2])), float(t[3])) for t in d.get("poly", [])]
        bumps = [Bump(np.asarray(t[:3], float), float(t[3]), float(t[4])) for t in d.get("bumps", [])]
        return cls(tuple(poly), tuple(bumps), d.get("name", "custom"))

    # ambient extension: value, gradient, second derivative
    def _ambient(self, x):
        x = np.asarray(x, dtype=float)
        F = np.zeros(x.shape[:-1])
        G = np.zeros(x.shape)
        H = np.zeros(x.shape + (3,))
        for exps, c in self.poly:
            e = np.array(exps)
            F += c * np.prod(x**e, axis=-1)
            for a in range(3):
                if e[a] == 0:
                    continue
                ea = e.copy()
                ea[a] -= 1
                G[..., a] += c * e[a] * np.prod(x**ea, axis=-1)
                for b in range(3):
                    if ea[b] == 0:
                        continue
                    eab = ea.copy()
                    eab[b] -= 1
                    H[..., a, b] += c * e[a] * ea[b] * np.prod(x**eab, axis=-1)
        for bump in self.bumps:
            s = np.clip(x @ bump.center, -1.0, 1.0)
            theta = np.arccos(s)
            sin_t = np.maximum(np.sqrt(1.0 - s * s), 1e-12)
            small = theta < 1e-4
            # the antipodal cone of the bump is not differentiable; drop it there
            cone = (np.pi - theta) < 1e-6
            with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
                q = np.where(small, 1.0 + theta**2 / 6.0, theta / sin_t)
                dq = np.where(
                    small,
                    -(1.0 / 3.0 + 2.0 * theta**2 / 15.0),
                    -(sin_t - theta * s) / sin_t**3,
                )
            k = 2.0 / bump.sigma**2
            g = bump.height * np.exp(-(theta**2) / bump.sigma**2)
            g1 = np.where(cone, 0.0, k * g * q)
            g2 = np.where(cone, 0.0, k * (g1 * q + g * dq))
            F += g
            G += g1[..., None] * bump.center
            H += g2[..., None, None] * np.outer(bump.center, bump.center)
        return F, G, H

    def value(self, x) -> np.ndarray:
        return self._ambient(x)[0]

    def derivatives(self, x):
        """Value, intrinsic gradient, intrinsic Hessian and Laplacian at ``x``."""
        x = np.asarray(x, dtype=float)
        F, G, H = self._ambient(x)
        P = np.eye(3) - x[..., :, None] * x[..., None, :]
        radial = np.einsum("...i,...i->...", x, G)
        grad = np.einsum("...ij,...j->...i", P, G)
        hess = P @ H @ P - radial[..., None, None] * P
        lap = np.trace(H, axis1=-2, axis2=-1) - np.einsum("...i,...ij,...j->...", x, H, x) - 2.0 * radial
        return F, grad, hess, lap


def evaluate_f(spec: CurvatureSpec, grid: SphereGrid) -> GridField:
    return GridField(grid, spec.value(grid.points))


def initial_positivity(u0: ConformalFactor, spec: CurvatureSpec) -> float:
    """``int f e^{2 u0} dv_c``; a nonpositive value rejects ``u0``."""
    f = evaluate_f(spec, u0.grid)
    return integrate(GridField(u0.grid, f.values * area_density(u0).values))


# presets ---------------------------------------------------------------------

_E1 = np.array([1.0, 0.0, 0.0])

PRESETS = {
    "round": CurvatureSpec(poly=(((0, 0, 0), 1.0),), name="round"),
    "tilted": CurvatureSpec(poly=(((0, 0, 0), 2.0), ((0, 0, 1), 1.0)), name="tilted"),
    "quad-saddle": CurvatureSpec(
        poly=(((0, 0, 0), 2.0), ((2, 0, 0), 1.0), ((0, 2, 0), -1.0)), name="quad-saddle"
    ),
    "two-bump": CurvatureSpec(
        poly=(((0, 0, 0), 0.1),),
        bumps=(Bump(_E1, 0.6, 1.0), Bump(-_E1, 0.6, 1.0)),
        name="two-bump",
    ),
    "two-bump-zero": CurvatureSpec(
        bumps=(Bump(_E1, 0.3, 1.0), Bump(-_E1, 0.3, 1.0)),
        name="two-bump-zero",
    ),
}

PRESET_DESCRIPTIONS = {
    "round": "f = 1",
    "tilted": "f = 2 + x3",
    "quad-saddle": "f = 2 + x1^2 - x2^2",
    "two-bump": "f = 0.1 + bumps at +-e1 (sigma 0.6, height 1)",
    "two-bump-zero": "f = bumps at +-e1 (sigma 0.3, height 1); numerically zero on a band around x1 = 0",
}


def preset(name: str) -> CurvatureSpec:
    try:
        return PRESETS[name]
    except KeyError:
        raise InvalidArgument(f"unknown preset {name!r}; known: {sorted(PRESETS)}") from None


# point sets ------------------------------------------------------------------

def icosphere(level: int):
    """Vertices and faces of an icosahedron subdivided ``level`` times."""
    t = (1.0 + math.sqrt(5.0)) / 2.0
    v = np.array(
        [[-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
         [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
         [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1]],
        dtype=float,
    )
    f = np.array(
        [[0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
         [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
         [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
         [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1]]
    )
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    for _ in range(level):
        edges = np.sort(np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]]), axis=1)
        uniq, inv = np.unique(edges, axis=0, return_inverse=True)
        mids = v[uniq[:, 0]] + v[uniq[:, 1]]
        mids /= np.linalg.norm(mids, axis=1, keepdims=True)
        idx = inv.reshape(3, -1).T + len(v)  # midpoints of edges 01, 12, 20
        v = np.vstack([v, mids])
        a, b, c = f[:, 0], f[:, 1], f[:, 2]
        m01, m12, m20 = idx[:, 0], idx[:, 1], idx[:, 2]
        f = np.concatenate(
            [np.stack(s, axis=1) for s in
             [(a, m01, m20), (b, m12, m01), (c, m20, m12), (m01, m12, m20)]]
        )
    return v, f


def tangent_frame(x):
    x = np.asarray(x, dtype=float)
    ref = np.where(np.abs(x[..., 2:3]) < 0.9, [0.0, 0.0, 1.0], [1.0, 0.0, 0.0])
    e1 = ref - np.sum(ref * x, axis=-1, keepdims=True) * x
    e1 /= np.linalg.norm(e1, axis=-1, keepdims=True)
    e2 = np.cross(x, e1)
    return e1, e2


def _reduced(grad, hess, e1, e2):
    g2 = np.stack([np.sum(grad * e1, -1), np.sum(grad * e2, -1)], axis=-1)
    E = np.stack([e1, e2], axis=-1)  # (..., 3, 2)
    H2 = np.swapaxes(E, -1, -2) @ hess @ E
    return g2, 0.5 * (H2 + np.swapaxes(H2, -1, -2))


# critical points -------------------------------------------------------------

@dataclass
class CriticalPoint:
    location: np.ndarray
    value: float
    hessian_eigenvalues: tuple
    laplacian: float
    kind: str  # "max" | "min" | "saddle" | "degenerate"
    grad_norm: float


@dataclass
class CriticalPointReport:
    points: list
    complete: bool
    degenerate_family: bool
    zero_set_points: int
    positive_threshold: float
    f_max: float
    f_min: float
    seed_count: int
    unmatched_cells: int = 0
    notes: list = field(default_factory=list)

    def positive(self):
        return [p for p in self.points if p.value > self.positive_threshold]

    def of_kind(self, kind, positive_only=True):
        pts = self.positive() if positive_only else self.points
        return [p for p in pts if p.kind == kind]

    def summary(self) -> str:
        lines = [
            f"critical points: {len(self.points)} (zero set: {self.zero_set_points}), "
            f"complete={self.complete}, degenerate_family={self.degenerate_family}"
        ]
        shown = self.points if len(self.points) <= 20 else self.points[:20]
        for p in shown:
            x = p.location
            lines.append(
                f"  {p.kind:10s} x=({x[0]: .6f},{x[1]: .6f},{x[2]: .6f}) f={p.value:.10g} "
                f"hess=({p.hessian_eigenvalues[0]:.6g},{p.hessian_eigenvalues[1]:.6g}) "
                f"lap={p.laplacian:.6g}"
            )
        if len(self.points) > len(shown):
            lines.append(f"  ... {len(self.points) - len(shown)} more")
        return "\n".join(lines)


def _newton(spec, x, max_iter=60, max_step=0.2):
    x = x.copy()
    active = np.ones(len(x), dtype=bool)
    for _ in range(max_iter):
        if not active.any():
            break
        xa = x[active]
        _, grad, hess, _ = spec.derivatives(xa)
        e1, e2 = tangent_frame(xa)
        g2, H2 = _reduced(grad, hess, e1, e2)
        lam, vec = np.linalg.eigh(H2)
        scale = np.maximum(np.abs(lam).max(axis=-1, keepdims=True), 1e-300)
        ok = np.abs(lam) > 1e-12 * scale
        proj = np.einsum("...ij,...i->...j", vec, g2)
        coef = np.where(ok, -proj / np.where(ok, lam, 1.0), 0.0)
        d2 = np.einsum("...ij,...j->...i", vec, coef)
        d = d2[..., :1] * e1 + d2[..., 1:] * e2
        dn = np.linalg.norm(d, axis=-1, keepdims=True)
        d = np.where(dn > max_step, d * (max_step / np.maximum(dn, 1e-300)), d)
        dn = np.linalg.norm(d, axis=-1, keepdims=True)
        safe = np.maximum(dn, 1e-300)
        x_new = np.cos(dn) * xa + np.sin(dn) * d / safe
        x_new /= np.linalg.norm(x_new, axis=-1, keepdims=True)
        done = (dn[:, 0] < 1e-15) | (np.linalg.norm(grad, axis=-1) < 1e-14)
        x[active] = np.where(done[:, None], xa, x_new)
        idx = np.flatnonzero(active)
        active[idx[done]] = False
    return x


def _winding(g_vertices):
    ang = np.arctan2(g_vertices[..., 1], g_vertices[..., 0])
    total = np.zeros(ang.shape[:-1])
    for i in range(3):
        d = ang[..., (i + 1) % 3] - ang[..., i]
        total += (d + np.pi) % (2 * np.pi) - np.pi
    return np.rint(total / (2 * np.pi)).astype(int)


def find_critical_points(spec: CurvatureSpec, level: int = 5) -> CriticalPointReport:
    """Locate and classify every critical point of ``f``.

    Newton iterations in tangent coordinates start from all vertices of an
    icosphere (``level=5`` gives 10242 seeds).  Converged points are merged
    within ``1e-6`` rad.  The report is marked incomplete when some mesh
    triangle has nonzero gradient winding number but no critical point
    nearby.
    """
    verts, faces = icosphere(level)
    fv = spec.value(verts)
    f_max_seed = float(fv.max())
    x = _newton(spec, verts)
    F, grad, hess, lap = spec.derivatives(x)
    gnorm = np.linalg.norm(grad, axis=-1)
    f_max = max(f_max_seed, float(F.max()))
    f_min = min(float(fv.min()), float(F.min()))
    thr = POSITIVE_PART_REL * max(f_max, 0.0)

    conv = gnorm <= GRAD_TOL
    zero_set = conv & (F <= thr)
    keep = np.flatnonzero(conv & ~zero_set)
    notes = []

    points = []
    if keep.size:
        xs = x[keep]
        tree = cKDTree(xs)
        radius = 2.0 * math.sin(DEDUP_ANGLE / 2.0)
        owner = np.full(len(xs), -1)
        reps = []
        # greedy: the best-converged point claims everything within the radius
        for i in np.argsort(gnorm[keep], kind="stable"):
            if owner[i] >= 0:
                continue
            near = np.asarray(tree.query_ball_point(xs[i], radius), dtype=int)
            owner[near[owner[near] < 0]] = i
            reps.append(keep[i])
        reps = np.array(sorted(reps))
        e1, e2 = tangent_frame(x[reps])
        _, H2 = _reduced(grad[reps], hess[reps], e1, e2)
        lam = np.linalg.eigvalsh(H2)
        for k, j in enumerate(reps):
            l1, l2 = float(lam[k, 0]), float(lam[k, 1])
            tol = DEGENERATE_REL * max(1.0, abs(float(F[j])))
            if min(abs(l1), abs(l2)) < tol:
                kind = "degenerate"
            elif l2 < 0:
                kind = "max"
            elif l1 > 0:
                kind = "min"
            else:
                kind = "saddle"
            points.append(CriticalPoint(x[j].copy(), float(F[j]), (l1, l2), float(lap[j]), kind, float(gnorm[j])))
        points.sort(key=lambda p: (-p.value, tuple(p.location)))

    n_degenerate = sum(p.kind == "degenerate" for p in points)
    family = n_degenerate > FAMILY_SIZE
    if family:
        notes.append(f"{n_degenerate} degenerate critical points: continuous critical set")

    # completeness: every triangle carrying gradient index needs a point nearby
    centroids = verts[faces].mean(axis=1)
    centroids /= np.linalg.norm(centroids, axis=1, keepdims=True)
    _, gv, _, _ = spec.derivatives(verts)
    ce1, ce2 = tangent_frame(centroids)
    gf = gv[faces]
    g2 = np.stack([np.einsum("fvi,fi->fv", gf, ce1), np.einsum("fvi,fi->fv", gf, ce2)], axis=-1)
    vnorm = np.linalg.norm(gf, axis=-1)
    determinate = (vnorm > 1e-13 * max(1.0, abs(f_max))).all(axis=1)
    in_positive = fv[faces].max(axis=1) > thr
    wind = np.where(determinate, _winding(g2), 0)
    flagged = np.flatnonzero((wind != 0) & in_positive)
    unmatched = 0
    if flagged.size:
        radius = np.max(np.linalg.norm(verts[faces[flagged]] - centroids[flagged, None, :], axis=-1), axis=1)
        cand = np.array([p.location for p in points]) if points else np.zeros((0, 3))
        cand = np.vstack([cand, x[zero_set]]) if zero_set.any() else cand
        if len(cand):
            dist, _ = cKDTree(cand).query(centroids[flagged])
            unmatched = int(np.sum(dist > 2.0 * radius + 1e-9))
        else:
            unmatched = int(flagged.size)
    complete = unmatched == 0
    if not complete:
        notes.append(f"{unmatched} mesh cell(s) with nonzero gradient index have no converged point")

    return CriticalPointReport(
        points=points,
        complete=complete,
        degenerate_family=family,
        zero_set_points=int(zero_set.sum()),
        positive_threshold=thr,
        f_max=f_max,
        f_min=f_min,
        seed_count=len(verts),
        unmatched_cells=unmatched,
        notes=notes,
    )


# hypotheses ------------------------------------------------------------------

@dataclass
class HypothesisCheck:
    """Existence hypotheses on f as tri-state flags (``None`` = undecidable)."""

    nonnegative: bool | None
    positive_somewhere: bool | None
    nondegenerate_on_positive_part: bool | None
    two_positive_maxima: bool | None
    saddle_laplacian_positive: bool | None
    overall: bool | None
    evidence: dict = field(default_factory=dict)

    def flags(self) -> dict:
        return {
            "nonnegative": self.nonnegative,
            "positive_somewhere": self.positive_somewhere,
            "nondegenerate_on_positive_part": self.nondegenerate_on_positive_part,
            "two_positive_maxima": self.two_positive_maxima,
            "saddle_laplacian_positive": self.saddle_laplacian_positive,
            "overall": self.overall,
        }

    def summary(self) -> str:
        mark = {True: "yes", False: "no", None: "undecidable"}
        return "\n".join(f"  {k:32s} {mark[v]}" for k, v in self.flags().items())


def _kleene_and(values):
    if any(v is False for v in values):
        return False
    if any(v is None for v in values):
        return None
    return True


def _near_threshold(p: CriticalPoint, thr: float, f_max: float) -> bool:
    # the level set {f = thr} passes within THRESHOLD_PROXIMITY rad of p
    curv = max(abs(p.hessian_eigenvalues[0]), abs(p.hessian_eigenvalues[1]))
    reach = 0.5 * curv * THRESHOLD_PROXIMITY**2 + 1e-15 * max(abs(f_max), 1.0)
    return abs(p.value - thr) <= reach


def verify_hypotheses(spec: CurvatureSpec, report: CriticalPointReport) -> HypothesisCheck:
    """Evaluate the five hypotheses from a critical point report.

    Flags that more evidence could still flip are reported as undecidable
    when the report is incomplete or a critical point sits on the edge of
    the positive part; flags already settled by a witness stay settled.
    """
    thr = report.positive_threshold
    verts, _ = icosphere(5)
    f_scan = spec.value(verts)
    crit_vals = np.array([p.value for p in report.points]) if report.points else np.zeros(0)
    f_min = min(float(f_scan.min()), report.f_min, float(crit_vals.min()) if crit_vals.size else np.inf)
    f_max = max(float(f_scan.max()), report.f_max)

    nonnegative = f_min >= -1e-10
    positive = f_max > 0
    pos = report.positive()
    ambiguous = [p for p in report.points if _near_threshold(p, thr, f_max)]
    settled = report.complete and not ambiguous

    degenerate = [p for p in pos if p.kind == "degenerate"]
    if degenerate or report.degenerate_family:
        nondeg = False
    else:
        nondeg = True if settled else None

    maxima = [p for p in pos if p.kind == "max"]
    if len(maxima) >= 2:
        two_max = True
    else:
        two_max = False if settled else None

    saddles = [p for p in pos if p.kind == "saddle"]
    lap_tol = [DEGENERATE_REL * max(1.0, abs(p.value)) for p in saddles]
    bad_saddles = [p for p, tol in zip(saddles, lap_tol) if not p.laplacian > tol]
    if bad_saddles:
        saddle_ok = False
    else:
        saddle_ok = True if settled else None

    overall = _kleene_and([nonnegative, positive, nondeg, two_max, saddle_ok])
    evidence = {
        "maxima": [p.location.tolist() for p in maxima],
        "saddles": [(p.location.tolist(), p.laplacian) for p in saddles],
        "degenerate": len(degenerate),
        "ambiguous": [p.location.tolist() for p in ambiguous],
        "f_min": f_min,
        "f_max": f_max,
        "complete": report.complete,
    }
    return HypothesisCheck(nonnegative, positive, nondeg, two_max, saddle_ok, overall, evidence)
