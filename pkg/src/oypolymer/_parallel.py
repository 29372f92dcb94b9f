"""Deterministic replica-parallel map.

Results are placed by replica index, so every aggregate downstream is
bit-for-bit independent of the worker count.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor


def replica_map(fn, replicas: int, workers: int = 1) -> list:
    if workers is None or workers <= 1 or replicas <= 1:
        return [fn(rep) for rep in range(replicas)]
    chunk = max(1, replicas // (workers * 8))
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, range(replicas), chunksize=chunk))


# stream-id channels: one replica owns stream ids rep*8 + channel
CH_ENV = 0
CH_BOUNDARY = 1
CH_PATH = 2


def stream(rep: int, channel: int) -> int:
    return rep * 8 + channel
