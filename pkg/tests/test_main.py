# tests/test_main.py
import pytest

from modules.main import build_parser, main
from modules.storage import read_csv
from modules.validation_1d import RATE_COLUMNS


def test_validate_1d_writes_the_rate_table(tmp_path):
    out = tmp_path / "rates.csv"
    assert main(["validate-1d", "--delta-list", "0.1,0.01", "--out", str(out)]) == 0
    rows = read_csv(str(out))
    assert len(rows) == 2
    assert list(rows[0]) == RATE_COLUMNS
    assert float(rows[1]["cond"]) == pytest.approx(100.0)


def test_validate_1d_with_discrete_cross_check(tmp_path):
    out = tmp_path / "rates.csv"
    argv = ["validate-1d", "--delta-list", "0.25", "--gamma-list", "1", "--discrete", "--h", "0.05",
            "--out", str(out)]
    assert main(argv) == 0
    rows = read_csv(str(out))
    assert [r["kind"] for r in rows] == ["poisson", "advdiff"]
    assert all(r["discrete_ok"] == "true" for r in rows)


def test_missing_configuration_fails_cleanly(tmp_path):
    assert main(["offline", "--config", str(tmp_path / "missing.json")]) == 1


def test_parser_rejects_bad_lists():
    parser = build_parser()
    with pytest.raises(SystemExit):
        parser.parse_args(["validate-1d", "--delta-list", "a,b"])
    with pytest.raises(SystemExit):
        parser.parse_args(["online", "--solver", "cg"])
    args = parser.parse_args(["online", "--m-list", "2,4", "--obj", "eim"])
    assert args.m_list == [2, 4]
    assert args.obj == "eim"
