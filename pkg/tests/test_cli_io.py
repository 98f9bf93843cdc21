import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from curvflow.cli_io import (
    config_from_dict,
    main,
    parse_config,
    read_snapshot,
    read_timeseries,
    serialize_config,
    write_snapshot,
    write_timeseries,
)
from curvflow.conformal_geometry import ConformalFactor
from curvflow.diagnostics import AuditRecord, audit_step
from curvflow.errors import InvalidArgument
from curvflow.flow_engine import make_state, random_factor
from curvflow.sphere_core import GridField, make_grid

HEADER = (
    "t,alpha,E,E_f,calabi,gauss_bonnet_residual,volume_residual,monotonicity_residual,"
    "alpha_rate_residual,curvature_evolution_residual,jensen_vbar,onofri_gap,"
    "spectral_tail_fraction,positivity_value"
)


def stationary_record(grid):
    f = GridField(grid, np.ones(grid.shape))
    s = make_state(ConformalFactor.zero(grid), f)
    n = make_state(ConformalFactor.zero(grid), f, t=1e-3, step=1)
    return audit_step(s, n, f)


class TestParseConfig:
    def test_defaults(self):
        cfg = parse_config('{"preset":"round","u0":"zero"}')
        assert (cfg.L, cfg.q, cfg.dt, cfg.t_max, cfg.tol_converge) == (32, 2, 1e-3, 50.0, 1e-8)
        assert cfg.u0 == {"kind": "zero"}
        fc = cfg.flow_config()
        assert fc.L == 32 and fc.dt == 1e-3 and fc.spec.name == "round"

    @pytest.mark.parametrize(
        "doc,field",
        [({"dt": -1}, "dt"), ({"L": 4}, "L"), ({"tol_converge": 0}, "tol_converge"),
         ({"snapshot_stride": 0}, "snapshot_stride"), ({"tol_concentrate": 4}, "tol_concentrate"),
         ({"u0": {"kind": "random", "amplitude": 20}}, "u0.amplitude"), ({"L": 16.5}, "L")],
    )
    def test_out_of_range(self, doc, field):
        with pytest.raises(InvalidArgument) as exc:
            config_from_dict(doc)
        assert field in str(exc.value)

    def test_dt_bounds_in_message(self):
        with pytest.raises(InvalidArgument, match=r"dt = -1 out of range \(0.0, 1.0\]"):
            parse_config('{"dt": -1}')

    def test_unknown_key(self):
        with pytest.raises(InvalidArgument, match="bogus"):
            parse_config('{"bogus": 1}')

    def test_unknown_u0_key(self):
        with pytest.raises(InvalidArgument, match="colour"):
            parse_config('{"u0": {"kind": "zero", "colour": 1}}')

    def test_unknown_preset(self):
        with pytest.raises(InvalidArgument, match="nope"):
            parse_config('{"preset": "nope"}')

    def test_bad_json(self):
        with pytest.raises(InvalidArgument):
            parse_config("{")

    def test_seed_feeds_random_u0(self):
        cfg = parse_config('{"seed": 9, "u0": "random"}')
        assert cfg.u0["seed"] == 9 and cfg.initial_data().seed == 9

    def test_run_preset(self):
        cfg = parse_config('{"preset": "bubble-start"}')
        assert cfg.preset == "round" and cfg.u0["kind"] == "mobius"
        assert parse_config('{"preset": "bubble-start", "t_max": 2}').t_max == 2

    def test_inline_spec(self):
        spec = {"poly": [[0, 0, 0, 2.0], [0, 0, 1, 1.0]], "bumps": [], "name": "inline"}
        cfg = config_from_dict({"spec": spec})
        assert cfg.curvature_spec().value(np.array([[0.0, 0.0, 1.0]]))[0] == 3.0

    @settings(max_examples=40, deadline=None)
    @given(
        L=st.integers(8, 64),
        dt=st.floats(1e-6, 1.0),
        seed=st.integers(0, 2**64 - 1),
        amp=st.floats(0.0, 10.0),
        preset=st.sampled_from(["round", "tilted", "quad-saddle", "two-bump", "two-bump-zero"]),
        images=st.booleans(),
    )
    def test_round_trip(self, L, dt, seed, amp, preset, images):
        doc = {"preset": preset, "L": L, "dt": dt, "seed": seed, "emit_images": images,
               "u0": {"kind": "random", "amplitude": amp}}
        cfg = config_from_dict(doc)
        again = parse_config(serialize_config(cfg))
        assert again == cfg
        assert serialize_config(again) == serialize_config(cfg)


class TestTimeseries:
    def test_single_stationary(self, tmp_path, grid16):
        p = tmp_path / "ts.csv"
        write_timeseries([stationary_record(grid16)], p)
        text = p.read_text()
        lines = text.split("\n")
        assert text.endswith("\n") and len(lines) == 3 and lines[2] == ""
        assert lines[0] == HEADER
        row = dict(zip(HEADER.split(","), lines[1].split(",")))
        assert float(row["t"]) == 0.0 and float(row["calabi"]) == 0.0

    def test_n_records(self, tmp_path, grid16):
        p = tmp_path / "ts.csv"
        write_timeseries([stationary_record(grid16)] * 7, p)
        assert len(p.read_text().splitlines()) == 8

    def test_seventeen_digits(self, tmp_path, grid16):
        r = stationary_record(grid16)
        r.alpha = 1 / 3
        p = tmp_path / "ts.csv"
        write_timeseries([r], p)
        assert "0.33333333333333331" in p.read_text()
        assert read_timeseries(p)[0]["alpha"] == 1 / 3

    def test_header_matches_record(self):
        assert ",".join(AuditRecord.CSV_COLUMNS) == HEADER

    def test_empty(self, tmp_path):
        with pytest.raises(InvalidArgument):
            write_timeseries([], tmp_path / "x.csv")

    def test_io_error_names_path(self, tmp_path, grid16):
        bad = tmp_path / "missing" / "ts.csv"
        with pytest.raises(OSError, match="missing"):
            write_timeseries([stationary_record(grid16)], bad)


class TestSnapshot:
    def test_zero_field(self, tmp_path):
        grid = make_grid(8, 2)
        p = tmp_path / "s.txt"
        write_snapshot(GridField(grid, np.zeros(grid.shape)), p)
        lines = p.read_text().splitlines()
        assert lines[0] == f"{grid.n_lat} {grid.n_lon} 8"
        assert len(lines) == grid.n_lat + 1
        assert all(float(x) == 0.0 for line in lines[1:] for x in line.split())

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_round_trip(self, tmp_path, grid16, seed):
        u = random_factor(grid16, seed, 3.0, 16)
        p = tmp_path / "s.txt"
        write_snapshot(u.u, p)
        values, L = read_snapshot(p)
        assert L == 16
        np.testing.assert_array_equal(values, u.values)

    def test_pgm(self, tmp_path, grid16):
        u = random_factor(grid16, 4, 1.0, 8)
        p = tmp_path / "s.txt"
        write_snapshot(u.u, p, image=True)
        pgm = (tmp_path / "s.pgm").read_text()
        assert pgm.startswith(f"P2\n{grid16.n_lon} {grid16.n_lat}\n255\n")
        pix = np.array(pgm.split()[4:], dtype=int)
        assert pix.size == grid16.n_lat * grid16.n_lon
        assert pix.min() == 0 and pix.max() == 255
        rng = (tmp_path / "s.range.txt").read_text().split()
        assert float(rng[1]) == u.values.min() and float(rng[3]) == u.values.max()


class TestCommandLine:
    def test_run_round_zero(self, tmp_path, capsys):
        out = tmp_path / "run"
        code = main(["run", "--preset", "round", "--u0", "zero", "--out", str(out)])
        assert code == 0
        res = json.loads((out / "result.json").read_text())
        assert res["termination"] == "converged" and abs(res["final_calabi"]) <= 1e-14
        assert res["steps"] == 0 and res["concentration"] is None
        assert json.loads(capsys.readouterr().out)["termination"] == "converged"
        for name in ("config.json", "timeseries.csv", "snap_0000000.txt", "snap_final.txt", "audit.json"):
            assert (out / name).exists(), name

    def test_bubble_start(self, tmp_path):
        out = tmp_path / "bubble"
        assert main(["run", "--preset", "bubble-start", "--out", str(out)]) == 2
        res = json.loads((out / "result.json").read_text())
        assert res["termination"] == "concentrated"
        assert res["concentration"]["r_star"] < 0.15
        assert res["concentration"]["q"][2] > 0.99

    def test_horizon_exit_code(self, tmp_path):
        out = tmp_path / "h"
        code = main(["run", "--preset", "tilted", "--u0", "random", "--L", "16", "--dt", "0.01",
                     "--t-max", "0.05", "--out", str(out), "--images"])
        assert code == 3
        assert (out / "snap_final.pgm").exists() and (out / "snap_0000000.range.txt").exists()
        assert len((out / "timeseries.csv").read_text().splitlines()) == 7

    def test_positivity_exit_code(self, tmp_path):
        spec = tmp_path / "cfg.json"
        spec.write_text(json.dumps({"spec": {"poly": [[0, 0, 0, -1.0]]}}))
        assert main(["run", "--config", str(spec), "--out", str(tmp_path / "neg")]) == 4

    @pytest.mark.parametrize(
        "argv",
        [[], ["frobnicate"], ["run", "--dt", "-1"], ["run", "--preset", "nope"], ["run", "--L", "x"],
         ["run", "--u0", "mobius"], ["verify-f", "--preset", "nope"]],
    )
    def test_usage_errors(self, argv, tmp_path, capsys, monkeypatch):
        monkeypatch.chdir(tmp_path)
        assert main(argv) == 1
        assert "error" in capsys.readouterr().err

    def test_verify_tilted(self, capsys):
        assert main(["verify-f", "--preset", "tilted"]) == 0
        out = capsys.readouterr().out
        assert "critical points: 2" in out
        assert out.rstrip().endswith("overall                          no")

    def test_presets(self, capsys):
        assert main(["presets"]) == 0
        out = capsys.readouterr().out
        for name in ("round", "tilted", "quad-saddle", "two-bump", "two-bump-zero", "bubble-start"):
            assert name in out

    def test_selftest_quick(self, capsys):
        assert main(["selftest", "--quick"]) == 0
        assert "FAIL" not in capsys.readouterr().out
