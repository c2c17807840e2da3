from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence, TypeVar

import numpy as np

from logic.qfpme import HermiteState

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


def truncation_health(state: HermiteState, history: Sequence[tuple[int, float, float]] = ()) -> dict:
    """
    Diagnostics of a truncated Hermite state, written into every output header.

    tail_ratio        max |M_n| over the last two blocks relative to |M_0|
    trace_error       |Tr M_0 - 1|
    hermiticity       largest |M_n - M_n^dagger|
    n_history         N values tried by the automatic truncation search
    """
    norms = state.block_norms()
    health = {
        "N": state.N,
        "tail_ratio": float(state.tail_ratio()),
        "trace_error": float(abs(state.trace - 1.0)),
        "hermiticity": float(state.hermiticity_defect()),
        "largest_block": int(np.argmax(norms)),
    }
    if history:
        health["n_history"] = [int(h[0]) for h in history]
        health["tail_history"] = [float(h[1]) for h in history]
    return health


def merge_health(items: Sequence[dict]) -> dict:
    """Worst-case summary over the states of a sweep."""
    if not items:
        return {}
    return {
        "points": len(items),
        "N_max": max(h["N"] for h in items),
        "tail_ratio": max(h["tail_ratio"] for h in items),
        "trace_error": max(h["trace_error"] for h in items),
        "hermiticity": max(h["hermiticity"] for h in items),
    }


def run_sweep(task: Callable[[T], R], points: Sequence[T], threads: int = 1) -> list[R]:
    """Evaluate ``task`` on every point on a bounded pool; results keep the input order."""
    points = list(points)
    if not points:
        return []
    workers = max(1, min(int(threads), len(points)))
    logger.info("sweeping %d points on %d thread(s)", len(points), workers)
    if workers == 1:
        return [task(p) for p in points]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(task, points))
