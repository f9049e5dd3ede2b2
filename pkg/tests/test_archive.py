# tests/test_archive.py
import json
import os

import pytest

from modules.archive import archive_reports, load_run_history, update_run_history


def test_reports_are_copied_with_an_index(tmp_path):
    reports = tmp_path / "reports"
    reports.mkdir()
    (reports / "errors.csv").write_text("n,m\n2,2\n")
    target = archive_reports(str(reports), str(tmp_path / "archive"), "desk")
    assert os.path.basename(target).startswith("desk_")
    assert (tmp_path / "archive" / os.path.basename(target) / "errors.csv").exists()
    with open(os.path.join(target, "archive.json"), encoding="utf-8") as f:
        index = json.load(f)
    assert index["files"] == ["errors.csv"]
    # a second archive in the same second gets its own folder
    assert archive_reports(str(reports), str(tmp_path / "archive"), "desk") != target


def test_missing_reports(tmp_path):
    with pytest.raises(FileNotFoundError):
        archive_reports(str(tmp_path / "none"), str(tmp_path / "archive"))


def test_run_history(tmp_path):
    path = str(tmp_path / "history.json")
    assert load_run_history(path) == []
    update_run_history(path, "desk", {"E_avg": 0.01})
    entry = update_run_history(path, "full", {}, archive_path="archive/x")
    history = load_run_history(path)
    assert [h["experiment"] for h in history] == ["desk", "full"]
    assert entry["archive"] == "archive/x"

    (tmp_path / "broken.json").write_text("[{")
    assert load_run_history(str(tmp_path / "broken.json")) == []
