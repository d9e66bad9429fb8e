"""Order-preserving replication map over a process pool."""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor


def _run_chunk(worker, args, start, stop):
    return [worker(args, rep) for rep in range(start, stop)]


def run_replications(worker, args, n: int, threads: int = 1, rep_offset: int = 0):
    """``[worker(args, rep) for rep in range(rep_offset, rep_offset + n)]``.

    With ``threads > 1`` the range is split into contiguous chunks run in
    worker processes; results are reassembled in replication order, so the
    output does not depend on ``threads``. ``worker`` and ``args`` must be
    picklable in that case.
    """
    if threads <= 1 or n < 2:
        return _run_chunk(worker, args, rep_offset, rep_offset + n)
    n_chunks = min(n, 4 * threads)
    bounds = [rep_offset + (n * i) // n_chunks for i in range(n_chunks + 1)]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        futures = [pool.submit(_run_chunk, worker, args, a, b) for a, b in zip(bounds, bounds[1:])]
        out = []
        for fut in futures:
            out.extend(fut.result())
    return out
