"""
Audit of the flow identities along a discrete trajectory.

Energies are normalised by the round area, ``dc = dv_c / 4pi``:

    E(u)   = (1/4pi) int (|grad u|^2 + 2u) dv_c
    E_f(u) = E(u) - log((1/4pi) int f e^{2u} dv_c)

while the Calabi energy ``int (alpha f - K)^2 dv_g`` is an unnormalised
integral.  With these conventions the flow satisfies

    d/dt E_f = -(2/4pi) Calabi
    K_t      = 2K (K - alpha f) + e^{-2u} Delta (K - alpha f)
    alpha_t int f dv_g = 2 alpha int (K - alpha f) f dv_g

and each record measures how far one discrete step is from them, with time
derivatives taken as forward differences over the step.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .conformal_geometry import (
    ConformalFactor,
    area_density,
    liouville_energy,
    onofri_gap,
    recenter,
    volume,
)
from .errors import CurvFlowError, InvalidArgument, PositivityViolation
from .sphere_core import (
    FOUR_PI,
    GridField,
    analyze,
    grad_energy,
    integrate,
    laplacian,
    spectral_tail_fraction,
    synthesize,
)


def positivity_value(u: ConformalFactor, f: GridField) -> float:
    """``int f e^{2u} dv_c``."""
    return integrate(GridField(u.grid, f.values * area_density(u).values))


def flow_energy(u: ConformalFactor, f: GridField) -> float:
    p = positivity_value(u, f)
    if not p > 0:
        raise PositivityViolation(f"int f e^(2u) dv_c = {p:.6g} is not positive")
    return liouville_energy(u) - math.log(p / FOUR_PI)


def calabi_energy(u: ConformalFactor, f: GridField, alpha: float, K: GridField | None = None) -> float:
    """``int (alpha f - K)^2 e^{2u} dv_c``."""
    if K is None:
        from .conformal_geometry import gaussian_curvature

        K = gaussian_curvature(u)
    r = alpha * f.values - K.values
    return integrate(GridField(u.grid, r * r * area_density(u).values))


def h1_norm(v: ConformalFactor) -> float:
    return math.sqrt(grad_energy(v.spectral) + integrate(GridField(v.grid, v.values**2)))


def exp_moment(v: ConformalFactor, p: float = 2.0) -> float:
    """``int e^{2 p v} dc``."""
    return integrate(GridField(v.grid, np.exp(2.0 * p * v.values))) / FOUR_PI


@dataclass
class AuditRecord:
    t: float
    alpha: float
    E: float
    E_f: float
    calabi: float
    gauss_bonnet_residual: float
    volume_residual: float
    monotonicity_residual: float
    alpha_rate_residual: float
    curvature_evolution_residual: float
    jensen_vbar: float
    onofri_gap: float
    spectral_tail_fraction: float
    positivity_value: float
    alpha_lower_margin: float
    alpha_upper_margin: float
    printed_alpha_bound_holds: bool
    dt: float = 0.0

    CSV_COLUMNS = (
        "t", "alpha", "E", "E_f", "calabi", "gauss_bonnet_residual", "volume_residual",
        "monotonicity_residual", "alpha_rate_residual", "curvature_evolution_residual",
        "jensen_vbar", "onofri_gap", "spectral_tail_fraction", "positivity_value",
    )

    def csv_row(self) -> list:
        return [getattr(self, c) for c in self.CSV_COLUMNS]

    def as_dict(self) -> dict:
        return asdict(self)

    def healthy(self) -> dict:
        """Per-record pass/fail of the bounds every healthy step satisfies."""
        return {
            "gauss_bonnet": abs(self.gauss_bonnet_residual) <= 1e-6 * FOUR_PI,
            "volume": abs(self.volume_residual) <= 1e-12 * FOUR_PI,
            "alpha_lower": self.alpha_lower_margin >= -1e-9,
            "alpha_upper": self.alpha_upper_margin >= -1e-6,
            "onofri": self.onofri_gap >= -1e-8,
            "positivity": self.positivity_value > 0,
            "finite": all(math.isfinite(getattr(self, c)) for c in self.CSV_COLUMNS),
        }


def _check_pair(prev, nxt):
    if not prev.u.grid.same_as(nxt.u.grid):
        raise InvalidArgument("states live on different grids")
    dt = nxt.t - prev.t
    if not dt > 0:
        raise InvalidArgument(f"next state must be later than prev (dt = {dt!r})")
    return dt


def curvature_rhs(u: ConformalFactor, K: GridField, f: GridField, alpha: float) -> np.ndarray:
    """``2K(K - alpha f) + e^{-2u} Delta (K - alpha f)`` on the grid."""
    d = K.values - alpha * f.values
    grid = u.grid
    lap = synthesize(laplacian(analyze(GridField(grid, d), grid.lmax)), grid).values
    return 2.0 * K.values * d + np.exp(-2.0 * u.values) * lap


def audit_step(prev, nxt, f: GridField, ef_initial: float | None = None, f_max: float | None = None) -> AuditRecord:
    """Evaluate every identity on the step ``prev -> nxt`` at ``prev``.

    ``ef_initial`` is ``E_f(u0)``; without it the upper bound on alpha is
    taken from ``E_f(prev)``, which is the same bound restarted at ``prev``.
    ``f_max`` defaults to the grid maximum of ``f``.
    """
    dt = _check_pair(prev, nxt)
    u = prev.u
    grid = u.grid
    dens = area_density(u).values
    K = prev.K.values
    alpha = prev.alpha
    fv = f.values
    fmax = float(fv.max()) if f_max is None else f_max
    ef0 = prev.E_f if ef_initial is None else ef_initial

    vol = volume(u)
    gb = integrate(GridField(grid, K * dens)) - FOUR_PI
    mono = (nxt.E_f - prev.E_f) / dt + 2.0 * prev.calabi / FOUR_PI

    fdg = integrate(GridField(grid, fv * dens))
    alpha_t = (nxt.alpha - alpha) / dt
    rate = alpha_t * fdg - 2.0 * alpha * integrate(GridField(grid, (K - alpha * fv) * fv * dens))

    rhs = curvature_rhs(u, prev.K, f, alpha)
    kt = (nxt.K.values - K) / dt
    num = integrate(GridField(grid, (kt - rhs) ** 2 * dens))
    den = integrate(GridField(grid, rhs**2 * dens))
    # relative once the right-hand side is O(1); absolute below that
    cer = math.sqrt(num) / max(math.sqrt(den), 1.0)

    return AuditRecord(
        t=prev.t,
        alpha=alpha,
        E=prev.E,
        E_f=prev.E_f,
        calabi=prev.calabi,
        gauss_bonnet_residual=gb,
        volume_residual=vol - FOUR_PI,
        monotonicity_residual=mono,
        alpha_rate_residual=rate,
        curvature_evolution_residual=cer,
        jensen_vbar=integrate(u.u) / FOUR_PI,
        onofri_gap=onofri_gap(u),
        spectral_tail_fraction=spectral_tail_fraction(u.spectral, grid.L),
        positivity_value=fdg,
        alpha_lower_margin=alpha - 1.0 / fmax,
        alpha_upper_margin=math.exp(ef0) - alpha,
        printed_alpha_bound_holds=bool(alpha <= math.exp(-ef0) * (1 + 1e-12)),
        dt=dt,
    )


@dataclass
class SnapshotAudit:
    t: float
    vbar: float = math.nan
    h1: float = math.nan
    moment: float = math.nan
    recenter_residual: float = math.nan
    error: str | None = None


@dataclass
class TrajectorySummary:
    calabi_integral: float
    calabi_bound: float
    calabi_bound_holds: bool
    ef_initial: float
    snapshots: list = field(default_factory=list)
    sup_h1: float = math.nan
    sup_moment: float = math.nan
    max_vbar: float = math.nan
    recenter_failures: int = 0


def calabi_time_integral(records) -> float:
    """``2 sum dt * Calabi`` with Calabi taken at the end of each step."""
    total = 0.0
    for a, b in zip(records[:-1], records[1:]):
        total += (b.t - a.t) * b.calabi
    return 2.0 * total


def audit_trajectory(traj, f: GridField, u0: ConformalFactor, records=None, f_max: float | None = None) -> TrajectorySummary:
    """Cumulative Calabi integral against its bound, plus per-snapshot
    boundedness witnesses of the recentred factor ``v``.

    ``records`` (one per step) give the time integral; without them the
    snapshot spacing is used.
    """
    if len(traj) < 2:
        raise InvalidArgument("a trajectory needs at least two snapshots")
    fmax = float(f.values.max()) if f_max is None else f_max
    ef0 = flow_energy(u0, f)
    if records is None:
        records = [_Pt(s.t, s.calabi) for s in traj]
    integral = calabi_time_integral(records)
    bound = FOUR_PI * (ef0 + math.log(fmax))
    summary = TrajectorySummary(integral, bound, integral <= bound * (1 + 1e-3) + 1e-12, ef0)
    for s in traj:
        audit = SnapshotAudit(s.t)
        try:
            res = recenter(s.u)
            v = res.v
            audit.vbar = integrate(v.u) / FOUR_PI
            audit.h1 = h1_norm(v)
            audit.moment = exp_moment(v, 2.0)
            audit.recenter_residual = res.residual
        except CurvFlowError as exc:
            audit.error = f"{type(exc).__name__}: {exc}"
            summary.recenter_failures += 1
        summary.snapshots.append(audit)
    ok = [a for a in summary.snapshots if a.error is None]
    if ok:
        summary.sup_h1 = max(a.h1 for a in ok)
        summary.sup_moment = max(a.moment for a in ok)
        summary.max_vbar = max(a.vbar for a in ok)
    return summary


@dataclass
class _Pt:
    t: float
    calabi: float
