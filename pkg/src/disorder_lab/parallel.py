"""Deterministic chunked execution of replica tasks.

Replicas are split into fixed-size chunks whose boundaries do not depend on
the worker count, and chunk results are reassembled in replica order, so
outputs are bit-identical for any number of workers.
"""

import os
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, List, Optional, Sequence

THREADS_ENV = "DISORDER_LAB_THREADS"
DEFAULT_CHUNK = 64


class ReplicaError(RuntimeError):
    def __init__(self, replica: int, cause: BaseException):
        super().__init__(f"replica {replica} failed: {cause}")
        self.replica = replica
        self.cause = cause

    def __reduce__(self):
        # default exception pickling would replay only the message
        return (type(self), (self.replica, self.cause))


def resolve_threads(threads: Optional[int] = None) -> int:
    if threads is None:
        env = os.environ.get(THREADS_ENV)
        threads = int(env) if env else (os.cpu_count() or 1)
    return max(1, int(threads))


def chunked(replicas: Sequence[int], size: int = DEFAULT_CHUNK) -> List[List[int]]:
    replicas = list(replicas)
    return [replicas[i : i + size] for i in range(0, len(replicas), size)]


def _run_chunk(fn: Callable, chunk: List[int]):
    try:
        return fn(chunk)
    except Exception:
        # locate the offending replica so the failure can be reported precisely
        for r in chunk:
            try:
                fn([r])
            except Exception as exc:
                raise ReplicaError(r, exc) from exc
        raise


def map_replicas(fn: Callable, replicas: Sequence[int], threads: int = 1, chunk_size: int = DEFAULT_CHUNK) -> list:
    """Apply ``fn(list_of_replica_indices)`` over fixed chunks; results in chunk order."""
    chunks = chunked(replicas, chunk_size)
    if threads <= 1 or len(chunks) <= 1:
        return [_run_chunk(fn, c) for c in chunks]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        futures = [pool.submit(_run_chunk, fn, c) for c in chunks]
        return [f.result() for f in futures]
