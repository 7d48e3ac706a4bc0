import json
import subprocess
import sys

import pytest

from conftest import DATA
from ebh.cli import build_parser, main, read_table_csv


def run(argv, capsys):
    code = main(argv)
    out, err = capsys.readouterr()
    return code, out, err


def write(tmp_path, name, values):
    path = tmp_path / name
    path.write_text("value\n" + "".join(f"{v}\n" for v in values))
    return str(path)


class TestTestCommand:
    def test_ebh_example(self, tmp_path, capsys):
        path = write(tmp_path, "x.evals.csv", [30, 5, 40])
        code, out, _ = run(["test", "--procedure", "ebh", "--alpha", "0.1", path], capsys)
        doc = json.loads(out)
        assert code == 0
        assert doc["rejected"] == [1, 3] and doc["k_star"] == 2 and doc["threshold"] == 15
        assert doc["schema_version"] == 1 and doc["procedure"] and doc["alpha"] == 0.1

    def test_bh_example(self, tmp_path, capsys):
        path = write(tmp_path, "x.pvals.csv", [0.01, 0.02, 0.9])
        code, out, _ = run(["test", "--procedure", "bh", "--alpha", "0.05", path], capsys)
        assert code == 0 and json.loads(out)["rejected"] == [1, 2]

    def test_kind_flag_for_plain_csv(self, tmp_path, capsys):
        path = write(tmp_path, "x.csv", [0.001, 0.5])
        code, out, _ = run(["test", "--procedure", "by", "--alpha", "0.1", "--kind", "p", path], capsys)
        assert code == 0 and json.loads(out)["rejected"] == [1]

    def test_weighted(self, tmp_path, capsys):
        path = write(tmp_path, "x.evals.csv", [10, 10])
        w = write(tmp_path, "w.csv", [2, 0])
        code, out, _ = run(["test", "--procedure", "weighted-ebh", "--alpha", "0.2", "--weights", w, path], capsys)
        assert code == 0 and json.loads(out)["rejected"] == [1]

    def test_post_selection(self, tmp_path, capsys):
        path = write(tmp_path, "x.evals.csv", [1, 12, 2])
        code, out, _ = run(["test", "--procedure", "post-selection", "--alpha", "0.3", "--select", "2", path], capsys)
        assert code == 0 and json.loads(out)["rejected"] == [2]

    def test_step_up_levels(self, tmp_path, capsys):
        path = write(tmp_path, "x.pvals.csv", [0.01, 0.02, 0.9])
        lv = write(tmp_path, "l.csv", [0.05 / 3, 0.1 / 3, 0.05])
        code, out, _ = run(["test", "--procedure", "step-up", "--levels", lv, path], capsys)
        assert code == 0 and json.loads(out)["rejected"] == [1, 2]

    def test_missing_alpha_exits_2(self, tmp_path, capsys):
        path = write(tmp_path, "x.evals.csv", [1])
        with pytest.raises(SystemExit) as exc:
            main(["test", "--procedure", "ebh", path])
        assert exc.value.code == 2
        assert "--alpha" in capsys.readouterr().err

    @pytest.mark.parametrize("alpha", ["0", "1", "1.5", "abc"])
    def test_alpha_out_of_range_exits_2(self, tmp_path, capsys, alpha):
        path = write(tmp_path, "x.evals.csv", [1])
        with pytest.raises(SystemExit) as exc:
            main(["test", "--procedure", "ebh", "--alpha", alpha, path])
        assert exc.value.code == 2
        assert "--alpha" in capsys.readouterr().err

    def test_kind_mismatch_exits_1(self, tmp_path, capsys):
        path = write(tmp_path, "x.pvals.csv", [0.5])
        code, _, err = run(["test", "--procedure", "ebh", "--alpha", "0.1", path], capsys)
        assert code == 1 and "error" in err

    def test_malformed_csv_exits_1(self, tmp_path, capsys):
        path = tmp_path / "x.evals.csv"
        path.write_text("value\nnot-a-number\n")
        code, _, _ = run(["test", "--procedure", "ebh", "--alpha", "0.1", str(path)], capsys)
        assert code == 1

    def test_missing_file_exits_1(self, tmp_path, capsys):
        code, _, _ = run(["test", "--procedure", "ebh", "--alpha", "0.1", str(tmp_path / "no.evals.csv")], capsys)
        assert code == 1

    def test_unknown_subcommand_exits_2(self):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code == 2


class TestBoostCommand:
    def test_prds_calibrator(self, capsys):
        code, out, _ = run(["boost", "--model", "calibrator:0.5", "--alpha", "0.05", "--dependence", "prds"], capsys)
        doc = json.loads(out)
        assert code == 0 and doc["b"] == pytest.approx(8.944, abs=0.01)
        assert {"b", "criterion", "achieved_value", "schema_version"} <= doc.keys()

    def test_ad_lognormal(self, capsys):
        code, out, _ = run(["boost", "--model", "lognormal-lr:4", "--alpha", "0.05"], capsys)
        assert code == 0 and json.loads(out)["b"] == pytest.approx(1.11, abs=0.01)

    def test_exact_with_k(self, capsys):
        code, out, _ = run(["boost", "--model", "calibrator:0.5", "--alpha", "0.05", "--k", "100"], capsys)
        assert code == 0 and json.loads(out)["b"] >= 6.32

    def test_exact_needs_k(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["boost", "--model", "calibrator:0.5", "--alpha", "0.05", "--mode", "exact"])
        assert exc.value.code == 2

    @pytest.mark.parametrize("model", ["calibrator:1.5", "lognormal-lr:-1", "gamma:2", "empirical:/no/such/file"])
    def test_bad_model_exits_2(self, model, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["boost", "--model", model, "--alpha", "0.05"])
        assert exc.value.code == 2
        assert "--model" in capsys.readouterr().err


BANDIT = ["simulate-bandit", "--K", "30", "--n", "8", "--trials", "5", "--seed", "11"]
ZTEST = ["simulate-ztest", "--K", "60", "--K0", "48", "--trials", "5", "--seed", "11"]


class TestSimulateCommands:
    def test_bandit_table(self, capsys):
        code, out, _ = run(BANDIT, capsys)
        assert code == 0 and out.startswith("# schema_version: 1\n")
        rows = read_table_csv(out, is_text=True)
        assert [r["procedure"] for r in rows] == ["eBH", "BH", "BY", "cBH"]
        assert list(rows[0]) == ["procedure", "R", "B%", "TD", "FDP%"]
        for r in rows:
            assert float(r["TD"]) <= float(r["R"])

    def test_ztest_table(self, capsys):
        code, out, _ = run(ZTEST + ["--alpha", "0.05", "--alpha", "0.1"], capsys)
        rows = read_table_csv(out, is_text=True)
        assert code == 0 and list(rows[0]) == ["method", "alpha", "rejections", "FDP%"]
        assert {float(r["alpha"]) for r in rows} == {0.05, 0.1}
        assert len(rows) == 2 * 6

    @pytest.mark.parametrize("argv", [BANDIT, ZTEST])
    def test_same_seed_same_bytes(self, argv, capsys):
        a = run(argv, capsys)[1]
        b = run(argv + ["--threads", "2"], capsys)[1]
        assert a == b

    def test_out_file_matches_stdout(self, tmp_path, capsys):
        out = tmp_path / "t.csv"
        stdout = run(BANDIT, capsys)[1]
        run(BANDIT + ["--out", str(out)], capsys)
        assert out.read_text() == stdout
        assert read_table_csv(str(out)) == read_table_csv(stdout, is_text=True)

    def test_missing_seed_is_reported(self, capsys):
        argv = [a for a in BANDIT if a not in ("--seed", "11")]
        code, out, err = run(argv, capsys)
        seed = int(err.split("seed:")[1].split()[0])
        assert code == 0 and f"# seed: {seed}" in out
        assert run(argv + ["--seed", str(seed)], capsys)[1] == out

    @pytest.mark.parametrize("extra", [["--K0", "70"], ["--delta", "0"], ["--rho", "1.5"], ["--trials", "0"]])
    def test_ztest_validation_exits_2(self, extra):
        with pytest.raises(SystemExit) as exc:
            main(ZTEST + extra)
        assert exc.value.code == 2

    @pytest.mark.parametrize("extra", [["--theta", "2"], ["--n", "0"], ["--mu", "0"], ["--seed", "-1"]])
    def test_bandit_validation_exits_2(self, extra):
        with pytest.raises(SystemExit) as exc:
            main(BANDIT + extra)
        assert exc.value.code == 2


class TestAnalyzePrices:
    def test_fixture(self, tmp_path, capsys):
        ids = tmp_path / "ids.json"
        argv = ["analyze-prices", str(DATA / "synthetic_prices.csv"), "--lambda", "0.5",
                "--alpha", "0.05", "--alpha", "0.1", "--universe", "10", "--universe", "20", "--universe", "all",
                "--ids", str(ids)]
        code, out, _ = run(argv, capsys)
        assert code == 0
        got = read_table_csv(out, is_text=True)
        want = read_table_csv(str(DATA / "synthetic_prices_expected.csv"))
        key = lambda r: (r["method"], float(r["alpha"]))
        assert {key(r): r for r in got}.keys() == {key(r): r for r in want}.keys()
        for r in want:
            g = next(x for x in got if key(x) == key(r))
            assert all(g[u] == r[u] for u in ("10", "20", "all"))
        listing = json.loads(ids.read_text())["selections"]
        for entry in listing:
            row = next(x for x in got if key(x) == (entry["method"], entry["alpha"]))
            assert len(entry["selected"]) == int(row[entry["universe"]])

    def test_gap_exits_1(self, tmp_path, capsys):
        path = tmp_path / "p.csv"
        path.write_text("asset_id,rank,Y0,Y1,Y2\na,1,1,,3\n")
        assert run(["analyze-prices", str(path)], capsys)[0] == 1


@pytest.mark.parametrize("sub", ["test", "boost", "simulate-bandit", "simulate-ztest", "analyze-prices"])
def test_help_lists_every_flag(sub):
    parser = build_parser()
    subparser = parser._subparsers._group_actions[0].choices[sub]
    text = subparser.format_help()
    for action in subparser._actions:
        for opt in action.option_strings:
            assert opt in text
        if action.option_strings and action.type is not None:
            # numeric flags document their allowed range
            assert action.help and any(c in action.help for c in "([>")


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "ebh", "boost", "--model", "calibrator:0.5", "--alpha", "0.05"],
                         capture_output=True, text=True, check=True).stdout
    assert json.loads(out)["b"] == pytest.approx(6.3246, abs=1e-3)
