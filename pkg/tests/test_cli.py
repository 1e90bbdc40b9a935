import csv
import json
from importlib import resources

import pytest

from csaprice.cli import main
from csaprice.curves import read_curve_csv

DATA = resources.files("csaprice") / "data"


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def _bootstrap_args(out):
    return [
        "bootstrap",
        "--ois", f"JPY={DATA / 'jpy_ois_quotes.csv'}",
        "--ois", f"USD={DATA / 'usd_ois_quotes.csv'}",
        "--ccs", str(DATA / "jpy_usd_ccs_quotes.csv"),
        "--out", str(out),
    ]


class TestBootstrap:
    def test_default_fixture_round_trip(self, tmp_path, capsys):
        assert main(_bootstrap_args(tmp_path)) == 0
        report = _rows(tmp_path / "bootstrap_report.csv")
        assert report[0] == ["instrument", "maturity_years", "quote", "repricing_error"]
        assert max(abs(float(r[3])) for r in report[1:]) < 1e-10
        assert "max repricing error" in capsys.readouterr().err
        jpy = read_curve_csv(tmp_path / "jpy_collateral.csv")
        shipped = read_curve_csv(DATA / "jpy_collateral.csv")
        assert abs(jpy.discount(10.0) - shipped.discount(10.0)) < 1e-10
        assert (tmp_path / "jpy_usd_spread.csv").exists()

    def test_malformed(self, tmp_path, capsys):
        bad = tmp_path / "bad.csv"
        bad.write_text("maturity_years,quote\n1,0.01\n2,abc\n")
        code = main(["bootstrap", "--ois", f"JPY={bad}", "--out", str(tmp_path)])
        assert code == 2
        assert "line 3" in capsys.readouterr().err

    def test_calibration_failure(self, tmp_path, capsys):
        bad = tmp_path / "q.csv"
        bad.write_text("maturity_years,quote\n1,0.01\n2,-1.5\n")
        assert main(["bootstrap", "--ois", f"JPY={bad}", "--out", str(tmp_path)]) == 1
        assert "2y" in capsys.readouterr().err

    def test_missing_ois(self, tmp_path):
        assert main(["bootstrap", "--out", str(tmp_path)]) == 2
        assert main(["bootstrap", "--ois", "JPY", "--out", str(tmp_path)]) == 2


class TestPrice:
    def test_default_terms(self, tmp_path):
        spec = tmp_path / "swap.json"
        spec.write_text(json.dumps({"type": "mtmccois", "spread_currency": "JPY", "refreshed_currency": "USD", "maturity": 2}))
        args = ["price", "--instrument", str(spec), "--paths", "400", "--out", str(tmp_path), "--threads", "1"]
        assert main(args) == 0
        rows = _rows(tmp_path / "price.csv")
        assert rows[0][:4] == ["instrument", "side", "rate", "clean"]
        assert rows[1][0] == "mtmccois" and float(rows[1][4]) >= 0.0
        first = (tmp_path / "price.csv").read_text()
        assert main(args) == 0
        assert (tmp_path / "price.csv").read_text() == first

    def test_terms_file(self, tmp_path):
        spec = tmp_path / "ois.json"
        spec.write_text(json.dumps({"type": "ois", "currency": "JPY", "maturity": 2, "fixed_rate": 0.01}))
        terms = tmp_path / "terms.json"
        terms.write_text(json.dumps({
            "party1": {"eligible": ["JPY"]},
            "party2": {"eligible": [], "coverage": 0.0, "hazard": 0.02, "recovery": 0.4},
        }))
        args = ["price", "--instrument", str(spec), "--terms", str(terms), "--paths", "200", "--out", str(tmp_path)]
        assert main(args) == 0
        row = _rows(tmp_path / "price.csv")[1]
        assert float(row[2]) == 0.01 and float(row[5]) != 0.0

    def test_missing_file(self, tmp_path):
        assert main(["price", "--instrument", str(tmp_path / "none.json"), "--out", str(tmp_path)]) == 2

    def test_horizon_past_curves(self, tmp_path):
        spec = tmp_path / "long.json"
        spec.write_text(json.dumps({"type": "ois", "currency": "JPY", "maturity": 40}))
        assert main(["price", "--instrument", str(spec), "--paths", "10", "--out", str(tmp_path)]) == 1


class TestExperiment:
    def test_unknown(self, tmp_path, capsys):
        assert main(["experiment", "fig9", "--out", str(tmp_path)]) == 2
        assert "mtmccois-cca" in capsys.readouterr().err

    def test_negative_sweep(self, tmp_path):
        assert main(["experiment", "ois-cca", "--sweep-bp", "-5", "--out", str(tmp_path)]) == 2

    def test_mtmccois(self, tmp_path):
        args = ["experiment", "mtmccois-cca", "--sweep-bp", "50", "100", "--maturity", "2", "--paths", "500", "--out", str(tmp_path)]
        assert main(args) == 0
        rows = _rows(tmp_path / "mtmccois_cca.csv")
        assert rows[0] == ["experiment", "sigma_y_bp", "side", "clean", "cca", "cva", "stderr_cca", "stderr_cva"]
        assert len(rows) == 5 and {r[2] for r in rows[1:]} == {"payer", "receiver"}

    def test_ois_with_config(self, tmp_path):
        config = tmp_path / "run.json"
        config.write_text(json.dumps({"paths": 300, "sweep-bp": [75], "maturity": 2, "steps_per_year": 12}))
        assert main(["experiment", "ois-cca", "--config", str(config), "--out", str(tmp_path)]) == 0
        assert len(_rows(tmp_path / "ois_cca.csv")) == 3
        sigma_c = _rows(tmp_path / "ois_cca_sigma_c.csv")
        assert sigma_c[0][1] == "sigma_c_bp" and len(sigma_c) == 3

    def test_bad_config_key(self, tmp_path):
        config = tmp_path / "run.json"
        config.write_text(json.dumps({"colour": 1}))
        assert main(["experiment", "ois-cca", "--config", str(config), "--out", str(tmp_path)]) == 2

    def test_pde_compare(self, tmp_path):
        args = ["experiment", "pde-compare", "--sweep-bp", "50", "--maturity", "2", "--paths", "500", "--out", str(tmp_path)]
        assert main(args) == 0
        rows = _rows(tmp_path / "pde_compare.csv")
        assert rows[0] == ["sigma_y_bp", "side", "pde_minus_clean", "gateaux", "discrepancy_bp"]
        assert [r[1] for r in rows[1:]] == ["payer", "receiver"]

    @pytest.mark.slow
    def test_netting(self, tmp_path, capsys):
        assert main(["experiment", "netting-check", "--trials", "2", "--out", str(tmp_path)]) == 0
        rows = _rows(tmp_path / "netting_check.csv")
        assert len(rows) == 3 and all(r[-1] == "1" for r in rows[1:])
        assert "2/2" in capsys.readouterr().err
