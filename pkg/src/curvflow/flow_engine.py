"""
Time integration of ``u_t = alpha f - K`` on the round sphere.

``alpha`` is fixed at every instant by ``alpha int f dv_g = 4pi`` and the
area is held at ``4pi`` by shifting ``u`` after each step.  The default
scheme treats the stiff part ``e^{-2u} Delta u`` with a constant majorant
``c = max e^{-2u}``::

    (1 + dt c l(l+1)) u+_lm = u_lm + dt (N_lm + c l(l+1) u_lm),  N = alpha f - K

which is diagonal in harmonic coefficients.  An explicit RK4 path exists to
cross-check it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from .conformal_geometry import (
    ConformalFactor,
    area_density,
    gaussian_curvature,
    liouville_energy,
    mobius_factor,
)
from .diagnostics import AuditRecord, audit_step, calabi_energy, flow_energy
from .errors import (
    BlowUp,
    CurvatureOverflow,
    CurvFlowError,
    InvalidArgument,
    InvalidData,
    PositivityViolation,
)
from .prescribed_curvature import CurvatureSpec, evaluate_f, icosphere, initial_positivity
from .sphere_core import (
    FOUR_PI,
    GridField,
    SpectralField,
    SphereGrid,
    analyze,
    cap_weights,
    degree_components,
    degrees,
    make_grid,
    n_coeffs,
    synthesize,
)

BLOWUP_SUP = 40.0
POSITIVITY_FLOOR = 1e-12
SCHEMES = ("imex", "rk4-explicit")
U0_KINDS = ("zero", "random", "mobius", "file")


# reproducible initial data -----------------------------------------------------

_MASK64 = (1 << 64) - 1


def splitmix64(seed: int):
    """The splitmix64 sequence: an infinite iterator of 64-bit integers."""
    state = seed & _MASK64
    while True:
        state = (state + 0x9E3779B97F4A7C15) & _MASK64
        z = state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        yield z ^ (z >> 31)


def uniform_pm1(seed: int, n: int) -> np.ndarray:
    """``n`` doubles in ``[-1, 1)``: ``(z >> 11) * 2^-52 - 1``."""
    gen = splitmix64(seed)
    return np.array([(next(gen) >> 11) * 2.0**-52 - 1.0 for _ in range(n)])


def random_factor(grid: SphereGrid, seed: int, amplitude: float, bandlimit: int) -> ConformalFactor:
    """Band-limited random ``u`` with grid sup-norm ``amplitude``.

    Coefficients of degrees ``1..bandlimit`` are drawn in index order
    ``l^2 + l + m`` from :func:`uniform_pm1`; the mean is zero.
    """
    if not 1 <= bandlimit <= grid.L:
        raise InvalidArgument(f"bandlimit must lie in [1, {grid.L}], got {bandlimit}")
    if not amplitude >= 0 or not math.isfinite(amplitude):
        raise InvalidArgument(f"amplitude must be finite and >= 0, got {amplitude!r}")
    coeffs = np.zeros(n_coeffs(grid.L))
    coeffs[1 : n_coeffs(bandlimit)] = uniform_pm1(seed, n_coeffs(bandlimit) - 1)
    a = SpectralField(grid.L, coeffs)
    peak = np.max(np.abs(synthesize(a, grid).values))
    return ConformalFactor.from_coeffs(grid, a.scale(amplitude / peak if peak > 0 else 0.0))


@dataclass(frozen=True)
class InitialData:
    kind: str = "zero"
    seed: int = 1
    amplitude: float = 0.1
    bandlimit: int = 8
    a: tuple = (0.0, 0.0, 0.0)
    path: str | None = None

    def __post_init__(self):
        if self.kind not in U0_KINDS:
            raise InvalidArgument(f"u0 kind must be one of {U0_KINDS}, got {self.kind!r}")
        if self.kind == "random":
            if not 0 <= self.seed < 2**64:
                raise InvalidArgument("u0 seed must be a 64-bit unsigned integer")
            if not (0 <= self.amplitude <= 10):
                raise InvalidArgument(f"u0 amplitude must lie in [0, 10], got {self.amplitude}")
            if self.bandlimit < 1:
                raise InvalidArgument("u0 bandlimit must be >= 1")
        if self.kind == "mobius":
            a = np.asarray(self.a, dtype=float)
            if a.shape != (3,) or not np.all(np.isfinite(a)) or np.linalg.norm(a) >= 1.0:
                raise InvalidArgument("u0 mobius parameter must be a 3-vector with |a| < 1")
            object.__setattr__(self, "a", tuple(float(x) for x in a))
        if self.kind == "file" and not self.path:
            raise InvalidArgument("u0 kind 'file' needs a path")

    def build(self, grid: SphereGrid) -> ConformalFactor:
        if self.kind == "zero":
            return ConformalFactor.zero(grid)
        if self.kind == "random":
            return random_factor(grid, self.seed, self.amplitude, self.bandlimit)
        if self.kind == "mobius":
            return mobius_factor(np.array(self.a), grid)
        from .cli_io import read_snapshot

        values, _ = read_snapshot(self.path)
        if values.shape != grid.shape:
            raise InvalidData(f"snapshot {self.path} has shape {values.shape}, grid needs {grid.shape}")
        return ConformalFactor.from_values(grid, values)


@dataclass(frozen=True)
class FlowConfig:
    spec: CurvatureSpec
    L: int = 32
    q: float = 2
    dt: float = 1e-3
    t_max: float = 50.0
    tol_converge: float = 1e-8
    tol_concentrate: float = 0.05
    scheme: str = "imex"
    u0: InitialData = field(default_factory=InitialData)
    snapshot_stride: int = 1000
    concentration_stride: int = 10

    def __post_init__(self):
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise InvalidArgument(f"dt must be positive, got {self.dt!r}")
        if not (self.tol_converge > 0):
            raise InvalidArgument(f"tol_converge must be positive, got {self.tol_converge!r}")
        if not (0 < self.tol_concentrate <= math.pi):
            raise InvalidArgument(f"tol_concentrate must lie in (0, pi], got {self.tol_concentrate!r}")
        if not (isinstance(self.L, int) and self.L >= 8):
            raise InvalidArgument(f"L must be an integer >= 8, got {self.L!r}")
        if not (self.t_max >= 0 and math.isfinite(self.t_max)):
            raise InvalidArgument(f"t_max must be finite and >= 0, got {self.t_max!r}")
        if self.scheme not in SCHEMES:
            raise InvalidArgument(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if self.snapshot_stride < 1 or self.concentration_stride < 1:
            raise InvalidArgument("strides must be >= 1")

    @property
    def max_steps(self) -> int:
        return int(math.ceil(self.t_max / self.dt - 1e-9))


@dataclass(frozen=True)
class FlowState:
    u: ConformalFactor
    t: float
    alpha: float
    K: GridField
    E: float
    E_f: float
    calabi: float
    step: int = 0

    @property
    def energies(self):
        return self.E, self.E_f, self.calabi


# building blocks ---------------------------------------------------------------

def compute_alpha(u: ConformalFactor, f: GridField) -> float:
    """``4pi / int f e^{2u} dv_c``."""
    denom = float(np.sum(u.grid.weights * f.values * area_density(u).values))
    if not denom > POSITIVITY_FLOOR:
        raise PositivityViolation(f"int f e^(2u) dv_c = {denom:.6g}; alpha is undefined")
    return FOUR_PI / denom


def renormalize_volume(u: ConformalFactor) -> ConformalFactor:
    """Shift ``u`` by a constant so the area of ``e^{2u} c`` is ``4pi``."""
    vol = float(np.sum(u.grid.weights * area_density(u).values))
    if not vol > 0:
        raise InvalidArgument("volume must be positive")
    shift = -0.5 * math.log(vol / FOUR_PI)
    return u.shifted(shift) if shift != 0.0 else u


def make_state(u: ConformalFactor, f: GridField, t: float = 0.0, step: int = 0) -> FlowState:
    alpha = compute_alpha(u, f)
    K = gaussian_curvature(u)
    return FlowState(
        u=u,
        t=t,
        alpha=alpha,
        K=K,
        E=liouville_energy(u),
        E_f=flow_energy(u, f),
        calabi=calabi_energy(u, f, alpha, K),
        step=step,
    )


def _finish(u_new: ConformalFactor, state: FlowState, f: GridField, dt: float) -> FlowState:
    if not np.all(np.isfinite(u_new.values)) or u_new.sup_norm() > BLOWUP_SUP:
        raise BlowUp(f"|u|_inf = {u_new.sup_norm():.3g} at t = {state.t + dt:.6g}", last_state=state)
    try:
        return make_state(renormalize_volume(u_new), f, state.t + dt, state.step + 1)
    except CurvatureOverflow as exc:
        raise BlowUp(str(exc), last_state=state) from exc


def _imex(state: FlowState, f: GridField, dt: float, L: int) -> ConformalFactor:
    u = state.u
    grid = u.grid
    N = analyze(GridField(grid, state.alpha * f.values - state.K.values), L)
    a = u.spectral.truncate(L).coeffs
    c = float(np.max(np.exp(-2.0 * u.values)))
    ll = degrees(L)
    ll = (ll * (ll + 1)).astype(float)
    new = (a + dt * (N.coeffs + c * ll * a)) / (1.0 + dt * c * ll)
    return ConformalFactor.from_coeffs(grid, SpectralField(L, new))


def _velocity(a: SpectralField, grid: SphereGrid, f: GridField, L: int) -> np.ndarray:
    u = ConformalFactor.from_coeffs(grid, a)
    alpha = compute_alpha(u, f)
    K = gaussian_curvature(u)
    return analyze(GridField(grid, alpha * f.values - K.values), L).coeffs


def _rk4(state: FlowState, f: GridField, dt: float, L: int) -> ConformalFactor:
    grid = state.u.grid
    a = state.u.spectral.truncate(L).coeffs

    def vel(c):
        return _velocity(SpectralField(L, c), grid, f, L)

    k1 = vel(a)
    k2 = vel(a + 0.5 * dt * k1)
    k3 = vel(a + 0.5 * dt * k2)
    k4 = vel(a + dt * k3)
    new = a + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return ConformalFactor.from_coeffs(grid, SpectralField(L, new))


def step(state: FlowState, cfg: FlowConfig, f: GridField | None = None) -> FlowState:
    """Advance one step of ``cfg.dt``; volume is renormalised afterwards.

    Raises
    ------
    BlowUp
        When ``u`` leaves the representable range; ``last_state`` is ``state``.
    PositivityViolation
        When ``int f e^{2u}`` is no longer positive.
    """
    if f is None:
        f = evaluate_f(cfg.spec, state.u.grid)
    try:
        if cfg.scheme == "imex":
            u_new = _imex(state, f, cfg.dt, cfg.L)
        else:
            u_new = _rk4(state, f, cfg.dt, cfg.L)
    except CurvatureOverflow as exc:
        raise BlowUp(str(exc), last_state=state) from exc
    return _finish(u_new, state, f, cfg.dt)


# concentration -----------------------------------------------------------------

@dataclass
class ConcentrationReport:
    """``r_star`` solves ``int_{B(q,r)} |K| dv_g = pi``.

    ``mass_r_star`` is the area of ``g`` inside ``B(q, r_star)``;
    ``local_mass`` is the area inside ``B(q, min(pi, 6 r_star))``, the ball
    that carries almost all of a Mobius bubble.  ``core_mass`` is the area
    inside ``B(q, 3 r_star)`` used by the flag.
    """

    q: np.ndarray
    r_star: float
    local_mass: float
    concentrated: bool
    mass_r_star: float = math.nan
    core_mass: float = math.nan

    def to_dict(self) -> dict:
        return {
            "q": [float(x) for x in self.q],
            "r_star": self.r_star,
            "local_mass": self.local_mass,
            "mass_r_star": self.mass_r_star,
            "core_mass": self.core_mass,
            "concentrated": self.concentrated,
        }


def _search_set():
    # 42 icosphere vertices plus the 6 coordinate directions
    v, _ = icosphere(1)
    axes = np.vstack([np.eye(3), -np.eye(3)])
    return np.vstack([v, axes])


@lru_cache(maxsize=8)
def _radius_table(lmax: int):
    radii = np.linspace(0.0, math.pi, 2049)[1:]
    return radii, cap_weights(lmax, radii)


class _CapMass:
    """Cap integrals of one density at many centres and radii."""

    def __init__(self, density: GridField):
        self.a = analyze(density, density.grid.lmax)
        self.total = float(self.a.coeffs[0] * math.sqrt(FOUR_PI))

    def components(self, centres):
        return degree_components(self.a, centres)

    def at(self, comps, radii):
        return np.sum(cap_weights(self.a.lmax, radii) * comps, axis=-1)

    def radius(self, comps, target):
        """First radius where the cap mass reaches ``target`` (``pi`` if never)."""
        radii, W = _radius_table(self.a.lmax)
        M = comps @ W.T
        hit = M >= target
        found = hit.any(axis=1)
        idx = np.where(found, np.argmax(hit, axis=1), len(radii) - 1)
        hi = radii[idx]
        lo = np.where(idx > 0, radii[np.maximum(idx - 1, 0)], 0.0)
        for _ in range(30):
            mid = 0.5 * (lo + hi)
            below = self.at(comps, mid) < target
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        return np.where(found, hi, math.pi)


def _rotate_towards(q, directions, angle):
    return np.cos(angle) * q + np.sin(angle) * directions


@lru_cache(maxsize=4)
def _fine_grid(L: int, q) -> SphereGrid:
    return make_grid(2 * L, q)


def _cap_field_max(density: GridField, radius: float) -> float:
    """Largest integral of ``density`` over a cap of ``radius``, sampled at
    the nodes of a grid twice as fine."""
    grid = density.grid
    a = analyze(density, grid.lmax)
    w = cap_weights(a.lmax, radius)[degrees(a.lmax)]
    return float(synthesize(SpectralField(a.lmax, a.coeffs * w), _fine_grid(grid.L, grid.q)).values.max())


def could_concentrate(state: FlowState, tol: float) -> bool:
    """Cheap necessary condition for the detector to fire at threshold ``tol``.

    Some cap of radius ``tol`` must hold ``pi`` of ``|K| dv_g`` and some cap of
    radius ``3 tol`` half the area.  Both maxima are taken over the nodes of a
    refined grid with a 10% allowance for maxima between nodes.
    """
    dens = area_density(state.u).values
    curv = np.abs(state.K.values) * dens
    if float(curv.max()) * 2.0 * math.pi * (1.0 - math.cos(tol)) < 0.9 * math.pi:
        return False
    grid = state.u.grid
    if _cap_field_max(GridField(grid, curv), tol) < 0.9 * math.pi:
        return False
    return _cap_field_max(GridField(grid, dens), min(math.pi, 3 * tol)) >= 0.9 * (0.5 * FOUR_PI)


def detect_concentration(state: FlowState, cfg: FlowConfig | None = None, tol_concentrate: float | None = None) -> ConcentrationReport:
    """Smallest radius ball carrying ``pi`` of total curvature.

    A 48-point search set is refined by a pattern search around the best
    centre.  The state counts as concentrated when ``r_star`` is below the
    threshold and ``B(q, 3 r_star)`` holds at least half of the area.
    """
    tol = tol_concentrate if tol_concentrate is not None else (cfg.tol_concentrate if cfg else 0.05)
    u = state.u
    grid = u.grid
    dens = area_density(u).values
    curv = _CapMass(GridField(grid, np.abs(state.K.values) * dens))
    area = _CapMass(GridField(grid, dens))

    if curv.total < math.pi:
        q = np.array([0.0, 0.0, 1.0])
        full = float(area.at(area.components(q[None]), np.array([math.pi]))[0])
        return ConcentrationReport(q, math.pi, full, False, full, full)

    cands = _search_set()
    radii = curv.radius(curv.components(cands), math.pi)
    best = int(np.argmin(radii))
    q, r = cands[best], radii[best]
    angle = 0.3
    while angle > 1e-4:
        e1 = np.cross(q, [0.0, 0.0, 1.0] if abs(q[2]) < 0.9 else [1.0, 0.0, 0.0])
        e1 /= np.linalg.norm(e1)
        e2 = np.cross(q, e1)
        ang = np.arange(8) * (math.pi / 4)
        dirs = np.cos(ang)[:, None] * e1 + np.sin(ang)[:, None] * e2
        trial = _rotate_towards(q, dirs, angle)
        trial /= np.linalg.norm(trial, axis=1, keepdims=True)
        tr = curv.radius(curv.components(trial), math.pi)
        k = int(np.argmin(tr))
        if tr[k] < r:
            q, r = trial[k], tr[k]
        else:
            angle *= 0.5
    comps = area.components(q[None])
    masses = area.at(np.repeat(comps, 3, axis=0), np.array([r, min(math.pi, 3 * r), min(math.pi, 6 * r)]))
    mass_r, core, local = (float(m) for m in masses)
    concentrated = bool(r < tol and core >= 0.5 * FOUR_PI)
    return ConcentrationReport(q.copy(), float(r), local, concentrated, mass_r, core)


# driver ------------------------------------------------------------------------

TERMINATIONS = ("converged", "concentrated", "horizon", "blow-up", "positivity-violation")


@dataclass
class RunResult:
    termination: str
    snapshots: list
    records: list
    final_state: FlowState | None
    concentration: ConcentrationReport | None = None
    ef_initial: float = math.nan
    u0: ConformalFactor | None = None
    message: str = ""

    @property
    def steps(self) -> int:
        return self.final_state.step if self.final_state is not None else 0


def initial_state(cfg: FlowConfig, grid: SphereGrid | None = None) -> tuple:
    grid = grid or make_grid(cfg.L, cfg.q)
    f = evaluate_f(cfg.spec, grid)
    u0 = cfg.u0.build(grid)
    if not initial_positivity(u0, cfg.spec) > 0:
        raise PositivityViolation("initial data violates int f e^(2u0) dv_c > 0")
    return make_state(renormalize_volume(u0), f), f


def run(cfg: FlowConfig, progress=None) -> RunResult:
    """Integrate until convergence, concentration, the horizon or a failure.

    Every step produces an :class:`AuditRecord`; the final state gets one
    from a probe step that is not taken.  Snapshots are kept every
    ``snapshot_stride`` steps, always including the first and last.
    """
    try:
        state, f = initial_state(cfg)
    except PositivityViolation as exc:
        return RunResult("positivity-violation", [], [], None, message=str(exc))
    f_max = float(f.values.max())
    ef0 = state.E_f
    snapshots = [state]
    records: list[AuditRecord] = []
    termination = None
    report = None
    message = ""
    n_max = cfg.max_steps

    while True:
        if state.calabi < cfg.tol_converge:
            termination = "converged"
            break
        if state.step % cfg.concentration_stride == 0 and could_concentrate(state, cfg.tol_concentrate):
            report = detect_concentration(state, cfg)
            if report.concentrated:
                termination = "concentrated"
                break
        if state.step >= n_max:
            termination = "horizon"
            break
        try:
            nxt = step(state, cfg, f)
        except BlowUp as exc:
            termination, message = "blow-up", str(exc)
            break
        except PositivityViolation as exc:
            termination, message = "positivity-violation", str(exc)
            break
        records.append(audit_step(state, nxt, f, ef0, f_max))
        state = nxt
        if state.step % cfg.snapshot_stride == 0:
            snapshots.append(state)
        if progress is not None:
            progress(state)

    records.append(_terminal_record(state, cfg, f, ef0, f_max))
    if snapshots[-1] is not state:
        snapshots.append(state)
    if termination != "concentrated":
        report = detect_concentration(state, cfg) if termination in ("horizon", "blow-up") else None
    return RunResult(termination, snapshots, records, state, report, ef0, None, message)


def _terminal_record(state, cfg, f, ef0, f_max) -> AuditRecord:
    try:
        probe = step(state, cfg, f)
        return audit_step(state, probe, f, ef0, f_max)
    except CurvFlowError:
        fake = replace(state, t=state.t + cfg.dt)
        rec = audit_step(state, fake, f, ef0, f_max)
        rec.monotonicity_residual = math.nan
        rec.alpha_rate_residual = math.nan
        rec.curvature_evolution_residual = math.nan
        return rec
