"""Deterministic fan-out of independent work chunks.

Work is always split into the same fixed chunks whatever the number of
workers, and results come back in chunk order, so the output does not
depend on ``jobs``.
"""

from __future__ import annotations

import multiprocessing as mp

CHUNK = 128

_TASK = None


def _call(i):
    return _TASK(i)


def chunk_slices(n, size=CHUNK):
    return [slice(i, min(i + size, n)) for i in range(0, n, size)]


def run_chunks(task, n_chunks, jobs=1):
    """``[task(i) for i in range(n_chunks)]``, optionally on forked workers."""
    global _TASK
    if jobs <= 1 or n_chunks <= 1 or "fork" not in mp.get_all_start_methods():
        return [task(i) for i in range(n_chunks)]
    _TASK = task
    try:
        with mp.get_context("fork").Pool(min(jobs, n_chunks)) as pool:
            return pool.map(_call, range(n_chunks), chunksize=1)
    finally:
        _TASK = None
