"""One shared scalar Brownian path per trajectory.

Randomness is counter based so that results never depend on worker count
or on the order in which intervals are refined:

* the k-th draw of stream ``s`` of path ``seed`` is a splitmix64 hash of
  ``(seed, s, k)`` pushed through the inverse normal CDF, so drawing a
  longer grid only appends;
* base increments use stream 0, initial data stream 1, horizon
  extensions stream 2;
* a bridge node inserted into ``[t0, t1]`` uses a normal obtained by
  hashing ``(seed, bits(t0), bits(t1), parts, k)``.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass

import numpy as np

from . import _core
from .errors import ConfigError, GridError

__all__ = [
    "BrownianPath",
    "MartingaleTrack",
    "path_seed",
    "uniform_grid",
    "base_normals",
    "sample_path",
    "refine",
    "refine_all",
    "extend",
    "bridge_point",
    "bridge_normals",
    "stochastic_integral",
    "dump_path",
    "load_path",
]

STREAM_BASE = 0
STREAM_INIT = 1
STREAM_EXTEND = 2
_MASK = 0xFFFFFFFFFFFFFFFF


def bridge_normals(seed, t0, t1, parts, k) -> np.ndarray:
    """Standard normals keyed by (seed, interval endpoints, parts, node k).

    A splitmix64 hash of the key is mapped through the inverse normal CDF.
    """
    seed_a, t0_a, t1_a, parts_a, k_a = np.broadcast_arrays(
        np.asarray(seed, dtype=np.uint64), np.asarray(t0, dtype=float),
        np.asarray(t1, dtype=float), np.asarray(parts, dtype=np.int64),
        np.asarray(k, dtype=np.int64))
    out = _core.bridge_z_array(
        np.ascontiguousarray(seed_a).ravel(), np.ascontiguousarray(t0_a).ravel(),
        np.ascontiguousarray(t1_a).ravel(), np.ascontiguousarray(parts_a).ravel(),
        np.ascontiguousarray(k_a).ravel())
    return out.reshape(seed_a.shape) if seed_a.ndim else float(out[0])


def bridge_point(t0, w0, t1, w1, s, z):
    """Brownian bridge value at ``s`` given W(t0)=w0, W(t1)=w1 and a normal z."""
    span = t1 - t0
    mean = w0 + (s - t0) / span * (w1 - w0)
    var = (s - t0) * (t1 - s) / span
    return mean + np.sqrt(np.maximum(var, 0.0)) * z


def node_time(t0, t1, k, parts):
    """Time of the k-th of ``parts - 1`` interior nodes of [t0, t1]."""
    return t0 + (t1 - t0) * k / parts


def path_seed(master_seed: int, index: int) -> int:
    """64-bit per-path seed derived from (master seed, path index)."""
    return int(_core.hash_pair(np.uint64(int(master_seed) & _MASK), np.uint64(int(index) & _MASK)))


def path_seeds(master_seed: int, start: int, stop: int) -> np.ndarray:
    """Seeds of paths ``start .. stop-1`` as a uint64 array."""
    return np.array([path_seed(master_seed, i) for i in range(start, stop)], dtype=np.uint64)


def counter_normals(seed: int, tag: int, start: int, n: int) -> np.ndarray:
    """Draws ``start .. start+n-1`` of stream ``tag`` of ``seed``."""
    return _core.normals_batch(np.array([seed], dtype=np.uint64), tag, start, n)[0]


def uniform_grid(horizon: float, dt: float) -> np.ndarray:
    """Nodes k*dt on [0, horizon]; the last step may be shorter."""
    if not (horizon > 0 and dt > 0) or dt > horizon * (1 + 1e-12):
        raise ConfigError("need horizon > 0 and 0 < dt <= horizon")
    ratio = horizon / dt
    n = int(round(ratio))
    if abs(ratio - n) > 1e-9 * max(1.0, ratio):
        n = int(np.ceil(ratio))
    times = np.arange(n + 1, dtype=float) * dt
    times[-1] = horizon
    return times


def base_normals(seed: int, n: int) -> np.ndarray:
    """First ``n`` standard normals of the path's base stream."""
    return counter_normals(seed, STREAM_BASE, 0, n)


@dataclass
class BrownianPath:
    times: np.ndarray
    values: np.ndarray
    seed: int

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.times.shape != self.values.shape or self.times.ndim != 1:
            raise GridError("times and values must be 1-d arrays of equal length")
        if self.times[0] != 0 or self.values[0] != 0:
            raise GridError("path must start at W(0) = 0")
        if np.any(np.diff(self.times) <= 0):
            raise GridError("times must be strictly increasing")

    def __len__(self) -> int:
        return len(self.times)

    def value_at(self, t: float) -> float:
        i = np.searchsorted(self.times, t)
        if i >= len(self.times) or self.times[i] != t:
            raise GridError(f"{t} is not a grid node")
        return float(self.values[i])


@dataclass
class MartingaleTrack:
    """M_t = int D dW (left-point sums) and [M]_t on the path's nodes."""

    times: np.ndarray
    m_values: np.ndarray
    qv_values: np.ndarray


def sample_path(horizon: float, dt: float, seed: int) -> BrownianPath:
    times = uniform_grid(horizon, dt)
    z = base_normals(seed, len(times) - 1)
    values = np.concatenate([[0.0], np.cumsum(np.sqrt(np.diff(times)) * z)])
    return BrownianPath(times, values, int(seed))


def refine(path: BrownianPath, t0: float, t1: float, parts: int) -> BrownianPath:
    """Insert ``parts - 1`` bridge nodes between adjacent nodes t0 < t1."""
    if parts < 2:
        raise GridError("parts must be >= 2")
    i = int(np.searchsorted(path.times, t0))
    if i + 1 >= len(path.times) or path.times[i] != t0 or path.times[i + 1] != t1:
        raise GridError(f"[{t0}, {t1}] is not an interval of the grid")
    w1 = path.values[i + 1]
    new_t = np.empty(parts - 1)
    new_w = np.empty(parts - 1)
    left_t, left_w = t0, path.values[i]
    for k in range(1, parts):
        s = node_time(t0, t1, k, parts)
        z = bridge_normals(path.seed, t0, t1, parts, k)
        left_w = float(bridge_point(left_t, left_w, t1, w1, s, z))
        left_t = s
        new_t[k - 1] = s
        new_w[k - 1] = left_w
    times = np.concatenate([path.times[: i + 1], new_t, path.times[i + 1 :]])
    values = np.concatenate([path.values[: i + 1], new_w, path.values[i + 1 :]])
    return BrownianPath(times, values, path.seed)


def refine_all(path: BrownianPath, parts: int) -> BrownianPath:
    """Refine every interval into ``parts`` pieces; same values as :func:`refine`."""
    if parts < 2:
        raise GridError("parts must be >= 2")
    t0, t1 = path.times[:-1], path.times[1:]
    w1 = path.values[1:]
    m = len(t0)
    seeds = np.full(m, path.seed, dtype=np.uint64)
    parts_arr = np.full(m, parts, dtype=np.int64)
    times = np.empty((m, parts))
    values = np.empty((m, parts))
    times[:, 0] = t0
    values[:, 0] = path.values[:-1]
    left_t, left_w = t0, path.values[:-1]
    for k in range(1, parts):
        s = node_time(t0, t1, k, parts)
        z = bridge_normals(seeds, t0, t1, parts_arr, np.full(m, k, dtype=np.int64))
        left_w = bridge_point(left_t, left_w, t1, w1, s, z)
        left_t = s
        times[:, k] = s
        values[:, k] = left_w
    return BrownianPath(np.append(times.ravel(), path.times[-1]),
                        np.append(values.ravel(), path.values[-1]), path.seed)


def extend(path: BrownianPath, horizon: float, dt: float) -> BrownianPath:
    """Append nodes on (T, horizon] with step ``dt`` from the extension stream."""
    t_end = float(path.times[-1])
    if horizon <= t_end:
        return path
    rel = uniform_grid(horizon - t_end, min(dt, horizon - t_end))
    z = counter_normals(path.seed, STREAM_EXTEND, 0, len(rel) - 1)
    incr = np.cumsum(np.sqrt(np.diff(rel)) * z)
    times = np.concatenate([path.times, t_end + rel[1:]])
    values = np.concatenate([path.values, path.values[-1] + incr])
    return BrownianPath(times, values, path.seed)


def stochastic_integral(path: BrownianPath, noise) -> MartingaleTrack:
    d_left = np.asarray(noise.intensity_at(path.times[:-1]), dtype=float)
    m = np.concatenate([[0.0], np.cumsum(d_left * np.diff(path.values))])
    qv = np.asarray(noise.quad_variation(path.times), dtype=float)
    return MartingaleTrack(path.times.copy(), m, qv)


_HEADER = struct.Struct("<QQ")


def dump_path(path: BrownianPath, fh) -> None:
    """Little-endian: u64 seed, u64 node count, then f64 (t, W) pairs."""
    fh.write(_HEADER.pack(path.seed & 0xFFFFFFFFFFFFFFFF, len(path)))
    pairs = np.empty((len(path), 2), dtype="<f8")
    pairs[:, 0] = path.times
    pairs[:, 1] = path.values
    fh.write(pairs.tobytes())


def load_path(fh) -> BrownianPath:
    seed, n = _HEADER.unpack(fh.read(_HEADER.size))
    raw = fh.read(16 * n)
    if len(raw) != 16 * n:
        raise GridError("truncated path dump")
    pairs = np.frombuffer(raw, dtype="<f8").reshape(n, 2)
    return BrownianPath(pairs[:, 0].copy(), pairs[:, 1].copy(), seed)


def dumps_path(path: BrownianPath) -> bytes:
    buf = io.BytesIO()
    dump_path(path, buf)
    return buf.getvalue()
