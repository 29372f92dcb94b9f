"""Discretized random environments and exact stationary boundary weights.

An Environment holds Brownian *increments* on a regular grid, not path
values: the dynamic programming sweeps consume increments directly and the
increment representation avoids catastrophic cancellation on long horizons.
Generation is keyed by (seed, stream_id) through a counter-based generator,
so replicas are reproducible independent streams regardless of scheduling.
"""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass

import numpy as np

from .specfun import _check_positive

__all__ = [
    "GridSpec",
    "Environment",
    "BoundaryWeights",
    "sample_environment",
    "sample_boundary",
    "save_environment",
    "load_environment",
    "read_header",
    "coarsen_environment",
    "FormatError",
    "ChecksumError",
]


@dataclass(frozen=True)
class GridSpec:
    """Discretization geometry: n levels, horizon t, m time steps."""

    n: int
    t: float
    m: int

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"n must be a positive integer, got {self.n!r}")
        if int(self.m) != self.m or self.m < 1:
            raise ValueError(f"m must be a positive integer, got {self.m!r}")
        _check_positive(self.t, "t")

    @property
    def delta(self) -> float:
        return self.t / self.m

    @property
    def times(self) -> np.ndarray:
        """Grid times t_i = i * delta, i = 0..m."""
        return np.arange(self.m + 1) * self.delta

    def doubled(self) -> "GridSpec":
        return GridSpec(self.n, self.t, 2 * self.m)


def _generator(seed: int, stream_id: int) -> np.random.Generator:
    key = np.array([seed, stream_id], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True)
class Environment:
    """Brownian increments for the driving motion B and the lines B_1..B_n.

    db[k, i] is the increment of B_{k+1} over (t_i, t_{i+1}]; db0[i] the
    increment of B.  All increments are iid Normal(0, delta).
    """

    grid: GridSpec
    db: np.ndarray
    db0: np.ndarray
    seed: int
    stream_id: int

    def __post_init__(self):
        if self.db.shape != (self.grid.n, self.grid.m):
            raise ValueError("db must have shape (n, m)")
        if self.db0.shape != (self.grid.m,):
            raise ValueError("db0 must have shape (m,)")
        self.db.setflags(write=False)
        self.db0.setflags(write=False)

    def cum_lines(self) -> np.ndarray:
        """Path values B_k(t_i), shape (n, m+1), B_k(0) = 0."""
        out = np.zeros((self.grid.n, self.grid.m + 1))
        np.cumsum(self.db, axis=1, out=out[:, 1:])
        return out

    def cum_driving(self) -> np.ndarray:
        """Path values B(t_i), shape (m+1,)."""
        out = np.zeros(self.grid.m + 1)
        np.cumsum(self.db0, out=out[1:])
        return out


@dataclass(frozen=True)
class BoundaryWeights:
    """Stationary axis weights r_k(0), k = 1..n, stored 0-based in r0.

    exp(-r0[k]) is an exact Gamma(theta, 1) draw, which is what makes the
    boundary model simulable on [0, t] without truncating the negative
    half-line.
    """

    theta: float
    r0: np.ndarray

    def __post_init__(self):
        _check_positive(self.theta, "theta")
        self.r0.setflags(write=False)


def sample_environment(grid: GridSpec, seed: int, stream_id: int = 0) -> Environment:
    """Draw the n*m + m independent Normal(0, delta) increments."""
    g = _generator(seed, stream_id)
    sd = math.sqrt(grid.delta)
    db0 = g.normal(0.0, sd, size=grid.m)
    db = g.normal(0.0, sd, size=(grid.n, grid.m))
    return Environment(grid=grid, db=db, db0=db0, seed=seed, stream_id=stream_id)


def sample_boundary(theta: float, n: int, seed: int, stream_id: int = 0) -> BoundaryWeights:
    """r0[k] = -log(G_k) with G_k iid Gamma(theta, 1)."""
    _check_positive(theta, "theta")
    if int(n) != n or n < 1:
        raise ValueError(f"n must be a positive integer, got {n!r}")
    g = _generator(seed, stream_id)
    r0 = -np.log(g.standard_gamma(theta, size=n))
    return BoundaryWeights(theta=theta, r0=r0)


def coarsen_environment(env: Environment) -> Environment:
    """Halve the resolution by summing adjacent increments.

    The result is the same underlying Brownian path on the coarse grid, which
    is what the two-resolution extrapolation protocol needs: generate at 2m,
    coarsen to m, compare.
    """
    m = env.grid.m
    if m % 2 != 0:
        raise ValueError("coarsening requires an even number of steps")
    grid = GridSpec(env.grid.n, env.grid.t, m // 2)
    db0 = env.db0.reshape(m // 2, 2).sum(axis=1)
    db = env.db.reshape(env.grid.n, m // 2, 2).sum(axis=2)
    return Environment(grid=grid, db=db, db0=db0, seed=env.seed, stream_id=env.stream_id)


# ---------------------------------------------------------------------------
# Binary container: 64-byte header, raw little-endian float64 arrays, 8-byte
# checksum.  Memory-mappable and language-neutral.  Also reused for log
# partition table dumps (kind tag in the flags field).
# ---------------------------------------------------------------------------

MAGIC = b"OYPOLYMR"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<8sIIQQddQQ")  # magic, version, flags, n, m, t, theta, seed, stream
assert _HEADER.size == 64

KIND_ENVIRONMENT = 0
KIND_TABLE = {"forward_free": 1, "forward_boundary": 2, "backward": 3, "forward_axis": 4}
_KIND_NAMES = {v: k for k, v in KIND_TABLE.items()}
_FLAG_HAS_THETA = 1 << 8


class FormatError(RuntimeError):
    pass


class ChecksumError(FormatError):
    pass


def _checksum(data: bytes) -> bytes:
    return hashlib.blake2b(data, digest_size=8).digest()


def _pack_header(kind, n, m, t, theta, seed, stream_id) -> bytes:
    flags = kind
    if theta is not None:
        flags |= _FLAG_HAS_THETA
    return _HEADER.pack(
        MAGIC, FORMAT_VERSION, flags, n, m, float(t),
        float("nan") if theta is None else float(theta), seed, stream_id,
    )


def _write_container(path, kind, n, m, t, theta, seed, stream_id, arrays) -> None:
    header = _pack_header(kind, n, m, t, theta, seed, stream_id)
    payload = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in arrays)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)
        fh.write(_checksum(header + payload))


def read_header(path) -> dict:
    """Decode the 64-byte header without loading the arrays."""
    with open(path, "rb") as fh:
        raw = fh.read(_HEADER.size)
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: file shorter than header")
    magic, version, flags, n, m, t, theta, seed, stream_id = _HEADER.unpack(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported format version {version}")
    kind = flags & 0xFF
    return {
        "kind": "environment" if kind == KIND_ENVIRONMENT else _KIND_NAMES.get(kind, kind),
        "n": n,
        "m": m,
        "t": t,
        "theta": theta if flags & _FLAG_HAS_THETA else None,
        "seed": seed,
        "stream_id": stream_id,
    }


def _read_container(path, expected_kind):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size + 8:
        raise FormatError(f"{path}: truncated file")
    body, stored = raw[:-8], raw[-8:]
    if _checksum(body) != stored:
        raise ChecksumError(f"{path}: checksum mismatch")
    magic, version, flags, n, m, t, theta, seed, stream_id = _HEADER.unpack(body[: _HEADER.size])
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported format version {version}")
    kind = flags & 0xFF
    if expected_kind is not None and kind != expected_kind:
        raise FormatError(f"{path}: expected kind {expected_kind}, found {kind}")
    payload = np.frombuffer(body[_HEADER.size:], dtype="<f8")
    has_theta = bool(flags & _FLAG_HAS_THETA)
    return kind, n, m, t, (theta if has_theta else None), seed, stream_id, payload


def save_environment(env: Environment, path) -> None:
    _write_container(
        path, KIND_ENVIRONMENT, env.grid.n, env.grid.m, env.grid.t,
        None, env.seed, env.stream_id, [env.db0, env.db],
    )


def load_environment(path) -> Environment:
    _, n, m, t, _, seed, stream_id, payload = _read_container(path, KIND_ENVIRONMENT)
    if payload.size != m + n * m:
        raise FormatError(f"{path}: payload size {payload.size} inconsistent with header")
    db0 = payload[:m].copy()
    db = payload[m:].reshape(n, m).copy()
    return Environment(grid=GridSpec(n, t, m), db=db, db0=db0, seed=seed, stream_id=stream_id)
