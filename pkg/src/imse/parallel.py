"""Deterministic trial-level parallelism.

Each work item writes into a pre-assigned slot, so the reduction is
order-independent and results are identical for any thread count.
"""

import os
from concurrent.futures import ThreadPoolExecutor


def resolve_threads(threads=None):
    if threads is None:
        env = os.environ.get("IMSE_THREADS", "")
        threads = int(env) if env.strip() else 1
    return max(1, int(threads))


def run_indexed(fn, n, threads=1):
    """[fn(0), ..., fn(n-1)], optionally computed by a thread pool."""
    threads = resolve_threads(threads)
    if threads <= 1 or n <= 1:
        return [fn(i) for i in range(n)]
    out = [None] * n

    def work(i):
        out[i] = fn(i)

    with ThreadPoolExecutor(max_workers=threads) as pool:
        list(pool.map(work, range(n)))
    return out
