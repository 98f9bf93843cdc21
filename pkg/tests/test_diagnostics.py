import math

import numpy as np
import pytest

from curvflow.conformal_geometry import ConformalFactor, mobius_factor
from curvflow.diagnostics import (
    AuditRecord,
    audit_step,
    audit_trajectory,
    calabi_energy,
    calabi_time_integral,
    exp_moment,
    flow_energy,
    h1_norm,
    positivity_value,
)
from curvflow.errors import InvalidArgument, PositivityViolation
from curvflow.flow_engine import FlowConfig, InitialData, initial_state, make_state, run, step
from curvflow.prescribed_curvature import evaluate_f, preset
from curvflow.sphere_core import FOUR_PI, GridField

DTS = (1e-3, 5e-4, 2.5e-4)


def field(grid, values):
    return GridField(grid, np.broadcast_to(values, grid.shape).astype(float))


def x3(grid):
    return grid.points[..., 2]


class TestFlowEnergy:
    def test_round(self, grid32):
        assert abs(flow_energy(ConformalFactor.zero(grid32), field(grid32, 1.0))) < 1e-14

    def test_constant_two(self, grid32):
        assert flow_energy(ConformalFactor.zero(grid32), field(grid32, 2.0)) == pytest.approx(-math.log(2), abs=1e-14)

    def test_tilted(self, grid32):
        f = GridField(grid32, 2 + x3(grid32))
        assert flow_energy(ConformalFactor.zero(grid32), f) == pytest.approx(-math.log(2), abs=1e-14)

    def test_nonpositive_raises(self, grid32):
        with pytest.raises(PositivityViolation):
            flow_energy(ConformalFactor.zero(grid32), field(grid32, -1.0))

    def test_positivity_value(self, grid32):
        assert positivity_value(ConformalFactor.zero(grid32), field(grid32, 1.0)) == pytest.approx(FOUR_PI, rel=1e-14)


class TestCalabi:
    def test_zero(self, grid32):
        assert calabi_energy(ConformalFactor.zero(grid32), field(grid32, 1.0), 1.0) == 0.0

    def test_alpha_two(self, grid32):
        assert calabi_energy(ConformalFactor.zero(grid32), field(grid32, 1.0), 2.0) == pytest.approx(FOUR_PI, rel=1e-14)

    def test_tilted(self, grid32):
        f = GridField(grid32, 2 + x3(grid32))
        assert calabi_energy(ConformalFactor.zero(grid32), f, 0.5) == pytest.approx(math.pi / 3, rel=1e-13)

    def test_mobius_is_critical_for_round(self, grid32):
        u = mobius_factor([0.0, 0.3, 0.2], grid32)
        assert calabi_energy(u, field(grid32, 1.0), 1.0) < 1e-18


class TestNorms:
    def test_zero(self, grid32):
        v = ConformalFactor.zero(grid32)
        assert h1_norm(v) == 0.0
        assert exp_moment(v) == pytest.approx(1.0, abs=1e-14)

    def test_constant(self, grid32):
        v = ConformalFactor.from_values(grid32, np.full(grid32.shape, 0.5))
        assert h1_norm(v) == pytest.approx(math.sqrt(0.25 * FOUR_PI), rel=1e-12)
        assert exp_moment(v, 2.0) == pytest.approx(math.e**2, rel=1e-13)


def stationary_pair(grid):
    f = field(grid, 1.0)
    s = make_state(ConformalFactor.zero(grid), f)
    n = make_state(ConformalFactor.zero(grid), f, t=1e-3, step=1)
    return s, n, f


class TestAuditStep:
    def test_stationary_pair(self, grid32):
        s, n, f = stationary_pair(grid32)
        r = audit_step(s, n, f)
        for name in ("gauss_bonnet_residual", "volume_residual", "monotonicity_residual",
                     "alpha_rate_residual", "curvature_evolution_residual", "calabi",
                     "jensen_vbar", "onofri_gap", "spectral_tail_fraction"):
            assert abs(getattr(r, name)) <= 1e-12, name
        assert r.alpha == pytest.approx(1.0, abs=1e-15) and r.dt == 1e-3
        assert r.printed_alpha_bound_holds
        assert all(r.healthy().values())

    def test_grid_mismatch(self, grid32, grid16):
        s, _, f = stationary_pair(grid32)
        other = make_state(ConformalFactor.zero(grid16), field(grid16, 1.0), t=1.0)
        with pytest.raises(InvalidArgument):
            audit_step(s, other, f)

    def test_time_must_advance(self, grid32):
        s, _, f = stationary_pair(grid32)
        with pytest.raises(InvalidArgument):
            audit_step(s, s, f)

    def test_csv_row_order(self, grid32):
        s, n, f = stationary_pair(grid32)
        r = audit_step(s, n, f)
        assert AuditRecord.CSV_COLUMNS[0] == "t" and AuditRecord.CSV_COLUMNS[-1] == "positivity_value"
        assert r.csv_row() == [getattr(r, c) for c in AuditRecord.CSV_COLUMNS]
        assert len(r.as_dict()) == len(AuditRecord.__dataclass_fields__)


def first_step_records(name):
    out = []
    for dt in DTS:
        cfg = FlowConfig(preset(name), dt=dt, u0=InitialData("random", 1, 0.1, 8))
        s, f = initial_state(cfg)
        out.append(audit_step(s, step(s, cfg, f), f))
    return out


@pytest.fixture(scope="module")
def tilted_records():
    return first_step_records("tilted")


class TestDtHalving:
    @pytest.mark.parametrize("name", ["monotonicity_residual", "curvature_evolution_residual", "alpha_rate_residual"])
    def test_first_order(self, tilted_records, name):
        vals = [abs(getattr(r, name)) for r in tilted_records]
        assert vals[0] / vals[1] >= 1.8 and vals[1] / vals[2] >= 1.8, vals

    def test_energy_decreases(self, tilted_records):
        # dE_f/dt = -(2/4pi) Calabi, so the residual is small against the rate itself
        r = tilted_records[-1]
        assert abs(r.monotonicity_residual) < 0.2 * 2 * r.calabi / FOUR_PI

    def test_alpha_rate_round_is_roundoff(self):
        # for f = 1 alpha stays 1 and both sides of the identity vanish
        for r in first_step_records("round"):
            assert abs(r.alpha_rate_residual) < 1e-10


class TestTrajectory:
    def test_needs_two_snapshots(self, grid16):
        s, _, f = stationary_pair(grid16)
        with pytest.raises(InvalidArgument):
            audit_trajectory([s], f, s.u)

    def test_stationary(self, grid16):
        s, n, f = stationary_pair(grid16)
        summary = audit_trajectory([s, n], f, s.u)
        assert summary.calabi_integral == 0.0 and summary.calabi_bound_holds
        assert summary.sup_h1 == 0.0
        assert summary.sup_moment == pytest.approx(1.0, abs=1e-13)
        assert summary.recenter_failures == 0

    def test_time_integral_right_endpoint(self):
        class P:
            def __init__(self, t, c):
                self.t, self.calabi = t, c

        recs = [P(0.0, 100.0), P(0.5, 1.0), P(1.5, 2.0)]
        assert calabi_time_integral(recs) == 2 * (0.5 * 1.0 + 1.0 * 2.0)

    def test_short_round_run(self):
        cfg = FlowConfig(preset("round"), L=16, dt=1e-3, t_max=0.5, u0=InitialData("random", 3, 0.2, 6), snapshot_stride=100)
        res = run(cfg)
        assert res.termination == "horizon"
        f = evaluate_f(cfg.spec, res.final_state.u.grid)
        summary = audit_trajectory(res.snapshots, f, res.snapshots[0].u, res.records)
        assert summary.calabi_bound_holds
        assert len(summary.snapshots) == 6
        assert summary.max_vbar <= 1e-10
        assert math.isfinite(summary.sup_h1) and math.isfinite(summary.sup_moment)
        for rec in res.records:
            h = rec.healthy()
            assert h["gauss_bonnet"] and h["volume"] and h["alpha_lower"] and h["alpha_upper"], rec
