# modules/archive.py
import json
import os
import shutil
from datetime import datetime
from typing import Any, Dict, List, Optional

# Local modules
from modules.logger import logger
from modules.storage import _atomic_write


def archive_reports(reports_folder: str, archive_folder: str = "archive", name: str = "run") -> str:
    """
    Copies the current report folder into a timestamped archive folder and adds
    an archive.json describing what was copied.

    Returns the path to the archive folder.
    """
    if not os.path.isdir(reports_folder):
        raise FileNotFoundError(f"No reports found in {reports_folder}")
    os.makedirs(archive_folder, exist_ok=True)

    timestamp = datetime.now().strftime("%Y-%m-%d_%H-%M-%S")
    target = os.path.join(archive_folder, f"{name}_{timestamp}")
    suffix = 1
    while os.path.exists(target):
        target = os.path.join(archive_folder, f"{name}_{timestamp}_{suffix}")
        suffix += 1
    shutil.copytree(reports_folder, target)

    files = sorted(
        os.path.relpath(os.path.join(root, f), target)
        for root, _, names in os.walk(target) for f in names
    )
    _atomic_write(os.path.join(target, "archive.json"), {
        "archived_on": datetime.now().strftime("%Y-%m-%dT%H:%M:%S"),
        "source": os.path.abspath(reports_folder),
        "files": files,
    })

    logger.info(f"[ARCHIVE] Reports archived to: {target}")
    return target


def load_run_history(history_path: str) -> List[Dict[str, Any]]:
    if not os.path.exists(history_path):
        return []
    with open(history_path, "r", encoding="utf-8") as f:
        try:
            history = json.load(f)
        except json.JSONDecodeError:
            logger.warning(f"[ARCHIVE] {history_path} corrupted. Starting a new history.")
            return []
    return history if isinstance(history, list) else []


def update_run_history(history_path: str, experiment: str, summary: Dict[str, Any],
                       archive_path: Optional[str] = None) -> Dict[str, Any]:
    """
    Appends an entry for a finished run to the history file.

    :param history_path: JSON list of past runs
    :param experiment: Experiment name
    :param summary: Headline numbers of the run (errors, speed-ups, ...)
    :param archive_path: Folder the reports were archived to
    """
    history = load_run_history(history_path)
    entry = {
        "ended_on": datetime.now().strftime("%Y-%m-%dT%H:%M:%S"),
        "experiment": experiment,
        "archive": archive_path,
        "summary": summary,
    }
    history.append(entry)
    _atomic_write(history_path, history)

    logger.info(f"[ARCHIVE] Run of '{experiment}' added to {history_path} ({len(history)} entries).")
    return entry
