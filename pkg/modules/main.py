# modules/main.py

import argparse
import logging
import os
import sys
from typing import List, Optional, Sequence

# Local modules
from modules.archive import archive_reports, update_run_history
from modules.config import CONFIG, ExperimentConfig
from modules.errors import Os2Error
from modules.logger import DEBUG_MODE, logger, set_level
from modules.storage import load_json, write_csv
from modules.task_manager import cancel_all_tasks, log_active_tasks
from modules.validation_1d import RATE_COLUMNS, rate_table

SOLVER_CHOICES = ["gn", "qn", "os"]
QUADRATURE_CHOICES = ["hfq", "eq"]
OBJECTIVE_CHOICES = ["hfq", "eq", "eim"]


def _float_list(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"Expected a comma-separated list of numbers, got {text!r}")


def _int_list(text: str) -> List[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"Expected a comma-separated list of integers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="os2", description="Component-based one-shot overlapping Schwarz ROM toolkit")
    parser.add_argument("--debug", action="store_true", help="verbose logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p: argparse.ArgumentParser) -> argparse.ArgumentParser:
        p.add_argument("--config", default=None, help="experiment file (default configs/desk.json)")
        return p

    with_config(sub.add_parser("offline", help="harvest snapshots, build bases, EQ weights and EIM points"))

    online = with_config(sub.add_parser("online", help="online sweep from saved bundles"))
    online.add_argument("--solver", choices=SOLVER_CHOICES, default="gn")
    online.add_argument("--quad", choices=QUADRATURE_CHOICES, default="hfq")
    online.add_argument("--obj", choices=OBJECTIVE_CHOICES, default="hfq")
    online.add_argument("--m-list", type=_int_list, default=None, help="override the m sweep, e.g. 2,4,8")

    val = sub.add_parser("validate-1d", help="1D convergence-rate table")
    val.add_argument("--delta-list", type=_float_list, default=[0.25, 0.1, 0.01])
    val.add_argument("--gamma-list", type=_float_list, default=[])
    val.add_argument("--discrete", action="store_true", help="add measured rates from P2 discretizations")
    val.add_argument("--h", type=float, default=1e-3, help="mesh size of the discrete cross-check")
    val.add_argument("--out", default=None, help="CSV path (default <reports>/rates_1d.csv)")

    report = with_config(sub.add_parser("report", help="archive the latest reports and update the run history"))
    report.add_argument("--out", default=None, help="archive folder (default from the configuration)")

    with_config(sub.add_parser("pipeline", help="offline, online sweep and speed-up in one call"))
    return parser


def load_experiment(path: Optional[str]) -> ExperimentConfig:
    if path is None and CONFIG.experiment is not None:
        return CONFIG.experiment
    return CONFIG.load(path)


def ensure_folders(cfg: ExperimentConfig) -> None:
    """Creates the configured output folders (only logs creation)."""
    created = []
    for folder in (cfg.paths.artifacts, cfg.paths.reports, cfg.paths.archive):
        path = CONFIG.resolve_path(folder)
        if not os.path.exists(path):
            try:
                os.makedirs(path)
                created.append(path)
            except OSError as e:
                logger.error(f"[CLI] ❌ Error creating {path}: {e}")
    if created:
        logger.info(f"[CLI] 📁 Created folders: {', '.join(created)}")


# ========== COMMANDS ==========

def cmd_offline(args) -> int:
    from modules.pipeline import run_offline, write_reports

    cfg = load_experiment(args.config)
    ensure_folders(cfg)
    artifacts = CONFIG.resolve_path(cfg.paths.artifacts)
    offline = run_offline(cfg, artifacts)
    write_reports(CONFIG.resolve_path(cfg.paths.reports), cfg, [], offline, library=offline.library)
    logger.info(f"[CLI] ✅ Offline stage done; bundles in {artifacts}")
    return 0


def cmd_online(args) -> int:
    from modules.pipeline import feasible_sizes, load_offline, run_online_sweep, solve_test_set, write_reports

    cfg = load_experiment(args.config)
    ensure_folders(cfg)
    library = load_offline(cfg, CONFIG.resolve_path(cfg.paths.artifacts))
    m_list = args.m_list or cfg.online.m_list
    sizes = feasible_sizes(library, [(cfg.online.n_factor * m, m) for m in m_list])
    _, hf_solutions = solve_test_set(library, cfg)
    reports = run_online_sweep(library, hf_solutions, cfg, sizes, [args.solver], [args.quad], [args.obj])
    write_reports(CONFIG.resolve_path(cfg.paths.reports), cfg, reports, library=library)
    for r in reports:
        logger.info(f"[CLI] (n, m)=({r.n}, {r.m}) E_avg={r.e_avg:.4e} E_avg_opt={r.e_avg_opt:.4e}")
    return 0


def cmd_validate_1d(args) -> int:
    rows = rate_table(args.delta_list, args.gamma_list, args.discrete, args.h)
    out = args.out
    if out is None:
        cfg = CONFIG.experiment
        folder = CONFIG.resolve_path(cfg.paths.reports) if cfg is not None else "reports"
        out = os.path.join(folder, "rates_1d.csv")
    write_csv(out, rows, RATE_COLUMNS)
    failed = [r for r in rows if r["discrete_ok"] is False]
    for r in failed:
        logger.error(f"[CLI] ❌ Discrete cross-check failed for {r['kind']} delta={r['delta']} gamma={r['gamma']}")
    logger.info(f"[CLI] Rate table written to {out}")
    return 1 if failed else 0


def cmd_report(args) -> int:
    cfg = load_experiment(args.config)
    reports = CONFIG.resolve_path(cfg.paths.reports)
    out = args.out or CONFIG.resolve_path(cfg.paths.archive)
    target = archive_reports(reports, out, cfg.name)
    summary = {}
    summary_path = os.path.join(reports, "summary.json")
    if os.path.exists(summary_path):
        data = load_json(summary_path)
        summary = {
            "variants": [
                {k: v.get(k) for k in ("n", "m", "solver", "quadrature", "objective", "E_avg", "E_avg_opt")}
                for v in data.get("variants", [])
            ]
        }
    update_run_history(os.path.join(out, "history.json"), cfg.name, summary, target)
    return 0


def cmd_pipeline(args) -> int:
    from modules.pipeline import run_pipeline

    cfg = load_experiment(args.config)
    ensure_folders(cfg)
    result = run_pipeline(cfg, CONFIG.resolve_path(cfg.paths.artifacts), CONFIG.resolve_path(cfg.paths.reports))
    for s in result.speedups:
        logger.info(f"[CLI] N_dd={s.n_dd}: speed-up {s.speedup:.1f}")
    return 0


COMMANDS = {
    "offline": cmd_offline,
    "online": cmd_online,
    "validate-1d": cmd_validate_1d,
    "report": cmd_report,
    "pipeline": cmd_pipeline,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Entry point; returns the process exit status."""
    args = build_parser().parse_args(argv)
    if args.debug or DEBUG_MODE:
        set_level(logging.DEBUG)

    logger.info("═" * 70)
    logger.info(f"[CLI] 🚀 os2 {args.command}")
    logger.info("═" * 70)
    try:
        return COMMANDS[args.command](args)
    except Os2Error as e:
        logger.error(f"[CLI] ❌ {type(e).__name__}: {e}")
        return 1
    except (FileNotFoundError, ValueError) as e:
        logger.error(f"[CLI] ❌ {e}")
        return 1
    except KeyboardInterrupt:
        logger.info("[CLI] Interrupted by user (Ctrl+C)")
        log_active_tasks()
        cancel_all_tasks()
        return 130


if __name__ == "__main__":
    from pathlib import Path

    # Add project root to Python path if running directly
    project_root = Path(__file__).parent.parent
    if str(project_root) not in sys.path:
        sys.path.insert(0, str(project_root))

    sys.exit(main())
