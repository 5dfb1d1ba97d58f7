"""Command-line ingestion, inflation adjustment, emission and exit codes."""
import datetime as dt
import json

import numpy as np
import pytest

from evtauction import cli
from evtauction.calibrate import CalibrationConfig, WeightTable, save_table, table_filename

GOLDEN_2019_TO_2024 = 14.165725438650108  # 13.0 * 1.0288 * 1.0025 * 1.0157 * 1.0188 * 1.0210


def write(tmp_path, text, name="p.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


@pytest.fixture
def weights_dir(tmp_path):
    d = tmp_path / "w"
    d.mkdir()
    g = CalibrationConfig().grid()
    w = np.zeros(50)
    w[[0, 20, 49]] = [30.0, 3.0, 25.0]
    for target in ("winner_sp", "seller_sp"):
        save_table(WeightTable(target, 4, 0.05, g, w, 50, 100, 10, 0.05, 1), d / table_filename(target, 4))
    return d


class TestParse:
    def test_single_letter_file(self, datasets):
        data = cli.parse_prices_csv(datasets / "hk_single_letter.csv")
        assert np.array_equal(data.prices, [20.2, 25.5, 26.0, 13.0])
        assert data.dates[3] == dt.date(2019, 2, 24) and data.unit == "million HKD"

    @pytest.mark.parametrize("body,msg", [
        ("label,date,price\na,2020-01-01,1\nb,2020-01-02,2\n", "need at least 3 auctions"),
        ("label,date,price\n", "empty input"),
        ("", "empty input"),
        ("label,date,price\na,2020-01-01,1\nb,2020-01-02,x\nc,2020-01-01,3\n", ":3: non-numeric price"),
        ("label,date,price\na,2020-01-01,1\nb,2020-13-02,2\nc,2020-01-01,3\n", ":3: malformed date"),
        ("label,price\na,1\n", "missing column 'date'"),
        ("label,date,price,unit\na,2020-01-01,1,HKD\nb,2020-01-02,2,USD\nc,2020-01-01,3,HKD\n", "mixed"),
    ])
    def test_errors(self, tmp_path, body, msg):
        with pytest.raises(cli.InputError, match=msg):
            cli.parse_prices_csv(write(tmp_path, body))


class TestInflation:
    def test_golden(self):
        rates = cli.load_rates()
        out = cli.adjust_inflation([13.0], [dt.date(2019, 2, 24)], 2024, rates)
        assert out[0] == pytest.approx(GOLDEN_2019_TO_2024, rel=1e-15)

    def test_identity_cases(self):
        rates = cli.load_rates()
        assert cli.adjust_inflation([20.2], [dt.date(2024, 2, 25)], 2024, rates)[0] == 20.2
        zero = {y: 0.0 for y in range(2000, 2030)}
        assert cli.adjust_inflation([5.0], [dt.date(2003, 1, 1)], 2024, zero)[0] == 5.0

    def test_backwards_and_missing(self):
        rates = cli.load_rates()
        v = cli.adjust_inflation([GOLDEN_2019_TO_2024], [dt.date(2024, 1, 1)], 2019, rates)[0]
        assert v == pytest.approx(13.0, rel=1e-14)
        with pytest.raises(cli.InputError, match=r"\[2015, 2016, 2017, 2018\]"):
            cli.adjust_inflation([1.0], [dt.date(2015, 1, 1)], 2024, rates)

    def test_bad_rate_file(self, tmp_path):
        with pytest.raises(cli.InputError):
            cli.load_rates(write(tmp_path, "year,rate\n2020,1\n", "r.csv"))


class TestEmit:
    def test_json_and_markdown_agree(self, capsys):
        rows = [{"quantity": "winner", "lo": 2.18512345, "hi": 58.8849, "n": 4}]
        js = json.loads(cli.emit(rows, "json", "t"))
        md = cli.emit(rows, "markdown", "t")
        cells = md.strip().splitlines()[-1].strip("| ").split(" | ")
        assert cells == ["winner", f"{js['rows'][0]['lo']:.3f}", f"{js['rows'][0]['hi']:.3f}", "4"]
        assert js["rows"][0]["lo"] == 2.18512345  # full precision in JSON
        csv = cli.emit(rows, "csv")
        assert csv.splitlines()[1] == "winner,2.18512345,58.8849,4"


class TestMain:
    def test_bad_flags(self):
        assert cli.main(["analyze", "--alpha", "1.5", "--input", "x"]) == cli.EXIT_INPUT
        assert cli.main(["nonsense"]) == cli.EXIT_INPUT
        assert cli.main(["analyze"]) == cli.EXIT_INPUT

    def test_missing_table(self, datasets, tmp_path, capsys):
        code = cli.main(["analyze", "--input", str(datasets / "hk_single_letter.csv"),
                         "--weights", str(tmp_path)])
        assert code == cli.EXIT_CALIBRATION
        assert "evtauction calibrate --target winner_sp --n 4" in capsys.readouterr().err

    def test_table_n_mismatch(self, tmp_path, weights_dir):
        p = write(tmp_path, "label,date,price\na,2020-01-01,1\nb,2020-01-02,2\nc,2020-01-01,3\n")
        code = cli.main(["analyze", "--input", str(p),
                         "--weights", str(weights_dir / table_filename("winner_sp", 4))])
        assert code == cli.EXIT_CALIBRATION

    def test_parse_error_exit(self, tmp_path):
        p = write(tmp_path, "label,date,price\na,2020-01-01,1\n")
        assert cli.main(["test", "--input", str(p)]) == cli.EXIT_INPUT

    def test_analyze_block_reproducible(self, datasets, weights_dir, capsys):
        argv = ["analyze", "--input", str(datasets / "hk_single_letter.csv"), "--base-year", "2024",
                "--weights", str(weights_dir), "--out", "json"]
        assert cli.main(argv) == 0
        first = json.loads(capsys.readouterr().out)
        assert cli.main(argv) == 0
        assert json.loads(capsys.readouterr().out) == first
        rows = first["rows"]
        assert [r["quantity"] for r in rows] == ["winner", "seller", "regularity_test"]
        assert rows[0]["weight_table_id"] and rows[2]["seed"] == 1729
        assert 0 <= rows[2]["p_value"] <= 1

    def test_reserve_floors_seller_only(self, datasets, weights_dir, capsys):
        argv = ["analyze", "--input", str(datasets / "hk_single_letter.csv"), "--base-year", "2024",
                "--weights", str(weights_dir), "--out", "json"]
        assert cli.main(argv) == 0
        plain = json.loads(capsys.readouterr().out)["rows"]
        floor = plain[1]["lo"] + 1.0
        assert cli.main(argv + ["--reserve", str(floor)]) == 0
        rows = json.loads(capsys.readouterr().out)["rows"]
        assert rows[1]["lo"] == floor and rows[1]["hi"] == plain[1]["hi"]
        assert rows[0] == plain[0]
        assert cli.main(argv + ["--reserve", str(plain[1]["lo"] - 1.0)]) == 0
        assert json.loads(capsys.readouterr().out)["rows"][1] == plain[1]

    def test_simulate_row_and_figure(self, tmp_path, capsys):
        argv = ["simulate", "--dgp", "u03", "--n", "10", "--K", "100", "--methods", "tstat",
                "--reps", "10", "--out", "csv", "--figures", str(tmp_path)]
        assert cli.main(argv) == 0
        lines = capsys.readouterr().out.splitlines()
        assert lines[0].startswith("dgp,n,K,format,method,coverage,length")
        assert lines[1].startswith("uniform_0_3,10,100,sp,tstat,")
        assert (tmp_path / "simulate_u03_n10.png").stat().st_size > 0

    def test_calibrate_writes_table(self, tmp_path, capsys):
        argv = ["calibrate", "--n", "3", "--target", "seller_sp", "--M", "3", "--B", "50", "--S", "5",
                "--weights", str(tmp_path), "--out", "json"]
        assert cli.main(argv) == 0
        row = json.loads(capsys.readouterr().out)["rows"][0]
        assert (tmp_path / "seller_sp_n3_a050.json").exists() and row["weight_table_id"]
