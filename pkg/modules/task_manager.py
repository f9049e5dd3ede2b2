# modules/task_manager.py

from concurrent.futures import Future, ThreadPoolExecutor
from typing import Callable, Dict, List, Sequence, TypeVar

# Local modules
from modules.logger import logger

T = TypeVar("T")
R = TypeVar("R")

all_tasks: Dict[str, Dict[str, object]] = {}  # name -> {"future": future, "fn": fn_name}


def add_task(name: str, future: Future, fn_name: str = "unknown") -> None:
    """
    Registers a running job.
    If a job with the same name exists and is not done, it will be cancelled.
    """
    if name in all_tasks and not all_tasks[name]["future"].done():
        logger.info(f"[TASK-MANAGER] Task '{name}' is being overwritten and old task cancelled.")
        all_tasks[name]["future"].cancel()
    all_tasks[name] = {"future": future, "fn": fn_name}
    logger.debug(f"[TASK-MANAGER] Task '{name}' started.")


def cancel_all_tasks() -> None:
    """Cancels all pending jobs (running ones finish on their own)."""
    for name, entry in list(all_tasks.items()):
        future = entry["future"]
        if not future.done():
            logger.info(f"[TASK-MANAGER] Cancelling task: {name}")
            future.cancel()
        all_tasks.pop(name, None)


def get_all_tasks() -> Dict[str, Dict[str, object]]:
    return all_tasks


def log_active_tasks() -> None:
    for name, entry in all_tasks.items():
        future = entry["future"]
        logger.info(f"[TASK-MANAGER] Task: {name}, done={future.done()}, cancelled={future.cancelled()}, fn={entry['fn']}")


def run_parallel(fn: Callable[[T], R], items: Sequence[T], workers: int = 1, name: str = "batch") -> List[R]:
    """
    Applies fn to every item, concurrently when workers > 1.
    Results come back in item order; the first failure (in item order) is re-raised
    after the remaining jobs are cancelled.

    :param fn: job function
    :param items: job inputs
    :param workers: thread count (1 runs inline)
    :param name: prefix of the registered task names
    :return: list of results ordered like items
    """
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]

    fn_name = getattr(fn, "__name__", "unknown")
    names = [f"{name}[{k}]" for k in range(len(items))]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = []
        for task_name, item in zip(names, items):
            future = pool.submit(fn, item)
            add_task(task_name, future, fn_name)
            futures.append(future)
        try:
            return [future.result() for future in futures]
        except Exception as e:
            logger.error(f"[TASK-MANAGER] Batch '{name}' failed: {e}")
            for future in futures:
                future.cancel()
            raise
        finally:
            for task_name in names:
                all_tasks.pop(task_name, None)
