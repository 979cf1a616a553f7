import csv
import io
import json
from pathlib import Path

import pytest
from click.testing import CliRunner

from tunnel_pathloss.cli import (
    EXIT_IDENTIFIABILITY,
    EXIT_INVERSION,
    EXIT_PARSE,
    EXIT_VALIDATION,
    main,
)
from tunnel_pathloss.io import ModelFile, parse_campaign
from tunnel_pathloss.model import TemplateModel, path_loss

REF = TemplateModel(2.0, 20.1, 50.0, 0.2)
DATA = Path(__file__).resolve().parent.parent / "data"


@pytest.fixture
def runner():
    return CliRunner()


def invoke(runner, *args):
    return runner.invoke(main, [str(a) for a in args], catch_exceptions=False)


def write_model(path, model=REF):
    path.write_text(ModelFile(model, 0.0, {}).dumps())
    return path


class TestSimulate:
    def test_default_rows(self, runner):
        res = invoke(runner, "simulate")
        assert res.exit_code == 0
        camp = parse_campaign(res.output)
        assert len(camp.rows) == 400
        assert sorted({r.anchor_pos for r in camp.rows}) == [15.0, 30.0, 270.0, 285.0]
        assert camp.extra["synthetic"] == "true"

    def test_noiseless_rows_exact(self, runner):
        camp = parse_campaign(invoke(runner, "simulate", "--iterations", 1, "--sigma", 0).output)
        for r in camp.rows:
            assert r.loss_bs1 == path_loss(REF, r.anchor_pos)
            assert r.loss_bs2 == path_loss(REF, 300.0 - r.anchor_pos)

    def test_byte_identical(self, runner):
        a = invoke(runner, "simulate", "--seed", 9, "--iterations", 5).output
        b = invoke(runner, "simulate", "--seed", 9, "--iterations", 5).output
        c = invoke(runner, "simulate", "--seed", 10, "--iterations", 5).output
        assert a == b and a != c

    def test_config_file_and_flag_precedence(self, runner, tmp_path):
        cfg = tmp_path / "s.yaml"
        cfg.write_text("iterations: 3\nplacement: uniform:5\nsigma: 0\nseed: 4\n")
        camp = parse_campaign(invoke(runner, "simulate", "--config", cfg).output)
        assert len(camp.rows) == 15
        camp = parse_campaign(invoke(runner, "simulate", "--config", cfg, "--iterations", 2).output)
        assert len(camp.rows) == 10

    def test_config_unknown_field(self, runner, tmp_path):
        cfg = tmp_path / "s.yaml"
        cfg.write_text("iteratons: 3\n")
        res = invoke(runner, "simulate", "--config", cfg)
        assert res.exit_code == EXIT_VALIDATION
        assert "iteratons" in res.stderr

    def test_config_yaml_error_has_line(self, runner, tmp_path):
        cfg = tmp_path / "s.yaml"
        cfg.write_text("iterations: 3\nsigma: [1\n")
        res = invoke(runner, "simulate", "--config", cfg)
        assert res.exit_code == EXIT_PARSE
        assert "line" in json.loads(res.stderr)["message"]

    def test_bad_placement(self, runner):
        res = invoke(runner, "simulate", "--placement", "explicit:0,30")
        assert res.exit_code == EXIT_VALIDATION


class TestFit:
    def test_noiseless_round_trip(self, runner, tmp_path):
        camp = tmp_path / "c.csv"
        invoke(runner, "simulate", "--sigma", 0, "--iterations", 1, "-o", camp)
        out = tmp_path / "m.json"
        assert invoke(runner, "fit", camp, "-o", out).exit_code == 0
        mf = ModelFile.read(out)
        assert mf.model.gamma == pytest.approx(2.0, abs=1e-6)
        assert mf.model.c == pytest.approx(20.1, abs=1e-6)
        assert mf.model.d0 == pytest.approx(50.0, abs=1e-3)
        assert mf.model.alpha == pytest.approx(0.2, abs=1e-6)
        assert mf.provenance["source"]["tunnel"] == "synthetic"

    def test_non_numeric_cell(self, runner, tmp_path):
        camp = tmp_path / "c.csv"
        camp.write_text("# tunnel=a\n# bs1_pos=0\n# bs2_pos=80\nanchor_pos,loss_bs1,loss_bs2,iteration\n"
                        "10,60,70,1\n20,sixty,70,1\n")
        res = invoke(runner, "fit", camp)
        assert res.exit_code == EXIT_PARSE
        msg = json.loads(res.stderr)["message"]
        assert "row 2" in msg and "loss_bs1" in msg

    def test_one_region_campaign(self, runner, tmp_path):
        camp = tmp_path / "c.csv"
        # two anchors within 10 m of BS1: no split leaves 2 near distances and a far one
        invoke(runner, "simulate", "--placement", "explicit:3,7", "--iterations", 3, "-o", camp)
        res = invoke(runner, "fit", camp, "--base-station", 1, "--raw-samples")
        assert res.exit_code == EXIT_IDENTIFIABILITY
        err = json.loads(res.stderr)
        assert err["error"] == "identifiability" and "both regions" in err["message"]

    def test_options_from_config(self, runner, tmp_path):
        camp = tmp_path / "c.csv"
        invoke(runner, "simulate", "--iterations", 2, "-o", camp)
        cfg = tmp_path / "f.yaml"
        cfg.write_text("d0_fixed: 60\nalpha_nonneg: true\n")
        mf = ModelFile.loads(invoke(runner, "fit", camp, "--config", cfg, "--no-timestamp").output)
        assert mf.model.d0 == 60.0
        assert mf.provenance["fit_options"]["alpha_nonneg"] is True
        assert mf.provenance["timestamp"] is None
        mf = ModelFile.loads(invoke(runner, "fit", camp, "--config", cfg, "--d0-fixed", 70).output)
        assert mf.model.d0 == 70.0

    def test_missing_file(self, runner, tmp_path):
        assert invoke(runner, "fit", tmp_path / "nope.csv").exit_code == EXIT_PARSE


class TestConvergence:
    def test_standard_matrix_rows(self, runner):
        res = invoke(runner, "convergence", "--iterations", 3)
        rows = list(csv.DictReader(io.StringIO(res.output)))
        assert list(rows[0]) == ["policy", "seed", "iteration", "gamma", "c", "d0", "alpha", "sse"]
        assert len(rows) == 4 * 3
        keys = [(r["policy"], int(r["seed"]), int(r["iteration"])) for r in rows]
        assert keys == sorted(keys)

    def test_noiseless_final_row(self, runner):
        res = invoke(runner, "convergence", "--policy", "explicit:15,30,270,285", "--sigma", 0, "--iterations", 2)
        last = list(csv.DictReader(io.StringIO(res.output)))[-1]
        assert float(last["gamma"]) == pytest.approx(2.0, abs=1e-6)
        assert float(last["d0"]) == pytest.approx(50.0, abs=1e-3)

    def test_seed_range_and_failures(self, runner):
        res = invoke(runner, "convergence", "--policy", "explicit:40", "--seeds", "0-2", "--iterations", 2)
        rows = list(csv.DictReader(io.StringIO(res.output)))
        assert len(rows) == 6
        assert all(r["gamma"] == "nan" for r in rows)


class TestLocate:
    def test_two_bs(self, runner, tmp_path):
        m = write_model(tmp_path / "m.json")
        res = invoke(runner, "locate", "--model", m, "--bs1", 0, "--bs2", 300,
                     "--l1", repr(path_loss(REF, 100.0)), "--l2", repr(path_loss(REF, 200.0)))
        rep = json.loads(res.output)
        assert rep["position_m"] == pytest.approx(100.0, abs=1e-6)
        assert rep["mode"] == "two_bs"

    def test_equal_losses(self, runner, tmp_path):
        m = write_model(tmp_path / "m.json")
        rep = json.loads(invoke(runner, "locate", "--model", m, "--bs1", 0, "--bs2", 300, "--l1", 95, "--l2", 95).output)
        assert rep["position_m"] == pytest.approx(150.0)

    def test_single_bs(self, runner, tmp_path):
        m = write_model(tmp_path / "m.json")
        rep = json.loads(invoke(runner, "locate", "--model", m, "--bs2", 300, "--l2", 60.2, "--direction", "-1").output)
        assert rep["mode"] == "single_bs2" and rep["normalized"] is False
        assert rep["position_m"] == pytest.approx(290.0)

    def test_rssi(self, runner, tmp_path):
        m = write_model(tmp_path / "m.json")
        rep = json.loads(invoke(runner, "locate", "--model", m, "--bs1", 0,
                                "--rssi1", -45.2, "--tx-power", 15, "--gains", 0).output)
        assert rep["losses_db"]["l1"] == pytest.approx(60.2)
        assert rep["position_m"] == pytest.approx(10.0)

    def test_rssi_needs_link_budget(self, runner, tmp_path):
        m = write_model(tmp_path / "m.json")
        res = invoke(runner, "locate", "--model", m, "--bs1", 0, "--rssi1", -45.2)
        assert res.exit_code == EXIT_VALIDATION
        assert "tx_power" in res.stderr

    def test_inversion_error_code(self, runner, tmp_path):
        m = write_model(tmp_path / "m.json", TemplateModel(2.0, 20.1, 50.0, 0.0))
        res = invoke(runner, "locate", "--model", m, "--bs1", 0, "--l1", 120)
        assert res.exit_code == EXIT_INVERSION
        assert json.loads(res.stderr)["error"] == "inversion"


class TestEval:
    def test_reference_curve(self, runner, tmp_path):
        m = write_model(tmp_path / "m.json")
        rows = list(csv.reader(io.StringIO(invoke(runner, "eval", "--model", m).output)))[1:]
        assert len(rows) == 300
        assert float(rows[49][0]) == 50.0
        assert float(rows[49][1]) == pytest.approx(74.1794, abs=1e-4)

    @pytest.mark.parametrize("start, end, step, n", [(5, 5, 1, 1), (5, 6, 10, 1), (1, 2, 0.1, 11)])
    def test_row_counts(self, runner, tmp_path, start, end, step, n):
        m = write_model(tmp_path / "m.json")
        out = invoke(runner, "eval", "--model", m, "--start", start, "--end", end, "--step", step).output
        assert len(out.splitlines()) == n + 1

    def test_bad_range(self, runner, tmp_path):
        m = write_model(tmp_path / "m.json")
        assert invoke(runner, "eval", "--model", m, "--start", 0).exit_code == EXIT_VALIDATION


class TestShippedData:
    def test_corridor_campaign_regenerates(self, runner):
        out = invoke(runner, "simulate", "--config", DATA / "corridor_synthetic.yaml").output
        assert out == (DATA / "corridor_synthetic.csv").read_text()

    def test_reference_campaign_regenerates(self, runner):
        out = invoke(runner, "simulate", "--tunnel", "reference-synthetic", "--seed", 0).output
        assert out == (DATA / "reference_tunnel_synthetic.csv").read_text()
