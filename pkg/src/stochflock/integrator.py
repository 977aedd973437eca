"""Euler-Maruyama integration of the centered stochastic Cucker-Smale system.

Paths are advanced in batches: every array carries a leading path axis and
all arithmetic is elementwise along it, so a path's trajectory does not
depend on which other paths share its batch.

Singularity protocol.  A decreasing cutoff sequence a_1 > a_2 > ... > a_final
is fixed up front.  At every step a path evaluates the kernel clamped at the
coarsest a_n that is still strictly below its current minimal pair distance,
so the clamp never changes a kernel value actually used.  The first time the
minimal distance falls below ``a_final`` the path is declared collided and
frozen.

Step control.  A base step ``h`` is replaced by dyadic substeps h/2^l when
the displacement rule ``c_cfl * min_dist / (1 + |v|_2)`` or the drift
stiffness rule ``c_stiff / max_i sum_j (lambda/N) |psi_ij|`` asks for a
shorter step.  Brownian values at dyadic nodes are bridge samples keyed by
the sub-interval endpoints (see :mod:`stochflock.paths`), so the base node
values never change.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import _core
from .errors import ConfigError, DomainError, NumericalError, UnsupportedError
from .kernels import Constant, CutoffKernel, Kernel, LogPower, PowerLaw, Regularized, Shifted
from .noise import ConstantNoise, NoiseIntensity, PowerDecay
from .paths import STREAM_INIT, uniform_grid

__all__ = [
    "SystemConfig",
    "SystemState",
    "StepController",
    "Collision",
    "PathResult",
    "SAMPLERS",
    "sample_initial",
    "sample_initial_batch",
    "BatchOutput",
    "integrate_batch",
    "drift",
    "em_step",
    "simulate_path",
    "simulate_batch",
    "decompose",
    "macro_evolution",
    "lp_norm",
    "min_pair_distance",
    "output_indices",
]

TOL_CONS = 1e-10


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class SystemConfig:
    n: int
    d: int
    lam: float
    kernel: Kernel
    noise: NoiseIntensity
    sampler: str = "uniform_gaussian"
    sampler_params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.n < 1 or self.d < 1:
            raise ConfigError("need N >= 1 and d >= 1")
        if not self.lam > 0:
            raise ConfigError("coupling strength must be positive")
        if self.sampler not in SAMPLERS:
            raise ConfigError(f"unknown initial sampler {self.sampler!r}")
        if self.sampler == "two_particle" and self.n != 2:
            raise ConfigError("two_particle sampler needs N = 2")
        unknown = set(self.sampler_params) - set(SAMPLERS[self.sampler][1])
        if unknown:
            raise ConfigError(f"unknown sampler parameters {sorted(unknown)}")


@dataclass(frozen=True)
class StepController:
    dt_base: float
    dt_min: float = 1e-12
    a1: float = 1e-2
    collision_threshold: float = 1e-6
    c_cfl: float = 0.1
    c_stiff: float = 0.5
    cutoffs: Optional[tuple] = None

    def __post_init__(self):
        if not (self.dt_base > 0 and 0 < self.dt_min <= self.dt_base):
            raise ConfigError("need 0 < dt_min <= dt_base")
        if not self.collision_threshold > 0:
            raise ConfigError("collision threshold must be positive")
        if self.cutoffs is None and not self.a1 > self.collision_threshold:
            raise ConfigError("a1 must exceed the collision threshold")
        if not (self.c_cfl > 0 and self.c_stiff > 0):
            raise ConfigError("step-control constants must be positive")
        seq = self.cutoff_sequence
        if np.any(np.diff(seq) >= 0) or seq[-1] != self.collision_threshold:
            raise ConfigError("cutoffs must decrease strictly to the collision threshold")

    @property
    def cutoff_sequence(self) -> np.ndarray:
        """a_n = a1 2^(1-n) while above the threshold, then the threshold."""
        if self.cutoffs is not None:
            seq = [float(a) for a in self.cutoffs if a > self.collision_threshold]
        else:
            seq = []
            a = self.a1
            while a > self.collision_threshold:
                seq.append(a)
                a *= 0.5
        seq.append(self.collision_threshold)
        return np.asarray(seq)

    def refined(self) -> "StepController":
        """Same controller with every cutoff radius halved."""
        seq = self.cutoff_sequence * 0.5
        return replace(self, cutoffs=tuple(seq), collision_threshold=float(seq[-1]))


# ---------------------------------------------------------------------------
# initial data


class _Draws:
    """Counter-based draws for a batch of seeds; shapes exclude the path axis."""

    def __init__(self, seeds):
        self.seeds = np.asarray(seeds, dtype=np.uint64)
        self.pos = 0

    def _take(self, fn, shape):
        count = int(np.prod(shape))
        out = fn(self.seeds, STREAM_INIT, self.pos, count)
        self.pos += count
        return out.reshape((len(self.seeds),) + tuple(shape))

    def uniform(self, lo, hi, shape):
        return lo + (hi - lo) * self._take(_core.uniforms_batch, shape)

    def normal(self, loc, scale, shape):
        return loc + scale * self._take(_core.normals_batch, shape)


def _uniform_gaussian(n, d, draws, box=2.0, vel_std=1.0):
    x = draws.uniform(-box / 2, box / 2, (n, d))
    return x, draws.normal(0.0, vel_std, (n, d))


def _gaussian(n, d, draws, pos_std=1.0, vel_std=1.0):
    x = draws.normal(0.0, pos_std, (n, d))
    return x, draws.normal(0.0, vel_std, (n, d))


def _lattice(n, d, draws, spacing=1.0, speed=1.0, jitter=0.0):
    # neighbours on the first axis move towards each other
    k = np.arange(n)
    x = np.zeros((len(draws.seeds), n, d))
    v = np.zeros_like(x)
    x[:, :, 0] = spacing * k
    v[:, :, 0] = speed * np.where(k % 2 == 0, 1.0, -1.0)
    if jitter > 0:
        x = x + draws.normal(0.0, jitter, (n, d))
        v = v + draws.normal(0.0, jitter, (n, d))
    return x, v


def _two_particle(n, d, draws, pos=0.5, vel=1.0, jitter=0.0):
    x = np.zeros((len(draws.seeds), 2, d))
    v = np.zeros_like(x)
    x[:, :, 0] = [pos, -pos]
    v[:, :, 0] = [vel, -vel]
    if jitter > 0:
        x = x + draws.normal(0.0, jitter, (2, d))
        v = v + draws.normal(0.0, jitter, (2, d))
    return x, v


SAMPLERS = {
    "uniform_gaussian": (_uniform_gaussian, ("box", "vel_std")),
    "gaussian": (_gaussian, ("pos_std", "vel_std")),
    "lattice": (_lattice, ("spacing", "speed", "jitter")),
    "two_particle": (_two_particle, ("pos", "vel", "jitter")),
}


def sample_initial_batch(cfg: SystemConfig, seeds):
    """Raw (uncentered) initial data, shape (paths, n, d) each."""
    fn = SAMPLERS[cfg.sampler][0]
    return fn(cfg.n, cfg.d, _Draws(seeds), **cfg.sampler_params)


def sample_initial(cfg: SystemConfig, seed: int):
    """Raw (uncentered) initial positions and velocities for one path."""
    x, v = sample_initial_batch(cfg, [seed])
    return x[0], v[0]


# ---------------------------------------------------------------------------
# elementary operations


def decompose(x_tilde, v_tilde):
    """Split into center of mass (xbar, vbar) and centered fluctuations."""
    x_tilde = np.asarray(x_tilde, dtype=float)
    v_tilde = np.asarray(v_tilde, dtype=float)
    xbar = x_tilde.mean(axis=-2)
    vbar = v_tilde.mean(axis=-2)
    return xbar, vbar, x_tilde - xbar[..., None, :], v_tilde - vbar[..., None, :]


def macro_evolution(xbar0, vbar0, t: float):
    if t < 0:
        raise DomainError("time must be non-negative")
    xbar0 = np.asarray(xbar0, dtype=float)
    vbar0 = np.asarray(vbar0, dtype=float)
    return xbar0 + vbar0 * t, vbar0.copy()


def _check_p(p):
    p = float(p)
    if not (p >= 2 or math.isinf(p)):
        raise DomainError("l^p norm needs p >= 2 or p = inf")
    return p


def _outer_norm(inner: np.ndarray, p: float) -> np.ndarray:
    if math.isinf(p):
        return inner.max(axis=-1) if inner.shape[-1] else np.zeros(inner.shape[:-1])
    if p == 2:
        return np.sqrt(np.sum(inner * inner, axis=-1))
    return np.sum(inner**p, axis=-1) ** (1.0 / p)


def lp_norm(y, p=2.0):
    """(sum_i |y_i|^p)^(1/p) with |.| the Euclidean norm of each particle."""
    p = _check_p(p)
    y = np.asarray(y, dtype=float)
    inner = np.sqrt(np.sum(y * y, axis=-1))
    out = _outer_norm(inner, p)
    return float(out) if np.ndim(out) == 0 else out


def _pair_distances(x: np.ndarray) -> np.ndarray:
    diff = x[:, None, :, :] - x[:, :, None, :]
    return np.sqrt(np.sum(diff * diff, axis=-1))


def _min_dist(r: np.ndarray) -> np.ndarray:
    n = r.shape[-1]
    if n < 2:
        return np.full(r.shape[0], np.inf)
    iu = np.triu_indices(n, 1)
    return r[:, iu[0], iu[1]].min(axis=-1)


def min_pair_distance(x) -> float:
    x = np.asarray(x, dtype=float)
    return float(_min_dist(_pair_distances(x[None]))[0])


def _forces(x, v, kernel, lam, cut):
    """Drift, stiffness and minimal distance for a batch.

    ``cut`` holds one cutoff radius per path.
    """
    n = x.shape[1]
    r = _pair_distances(x)
    w = kernel._psi(np.maximum(r, cut[:, None, None]))
    diag = np.arange(n)
    w[:, diag, diag] = 0.0
    dv = v[:, None, :, :] - v[:, :, None, :]
    b = (lam / n) * np.sum(w[..., None] * dv, axis=2)
    stiff = (lam / n) * np.abs(w).sum(axis=2).max(axis=1)
    return b, stiff, _min_dist(r), r


# ---------------------------------------------------------------------------
# single-state API


@dataclass
class SystemState:
    t: float
    x: np.ndarray
    v: np.ndarray
    w_now: float = 0.0
    m_now: float = 0.0
    qv_now: float = 0.0
    min_dist: Optional[float] = None

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.v = np.asarray(self.v, dtype=float)
        if self.x.ndim != 2 or self.x.shape != self.v.shape:
            raise ConfigError("x and v must both have shape (N, d)")
        if self.min_dist is None:
            self.min_dist = min_pair_distance(self.x)

    def conservation_ok(self, tol: float = TOL_CONS) -> bool:
        sx = np.linalg.norm(self.x.sum(axis=0))
        sv = np.linalg.norm(self.v.sum(axis=0))
        return sx <= tol * (1 + lp_norm(self.x)) and sv <= tol * (1 + lp_norm(self.v))


def drift(state: SystemState, cfg: SystemConfig, active_cutoff: CutoffKernel):
    """b_i = (lambda/N) sum_j psi^n(|x_i - x_j|)(v_j - v_i)."""
    b, _, _, _ = _forces(state.x[None], state.v[None], active_cutoff.base, cfg.lam,
                         np.array([active_cutoff.a_n]))
    return b[0]


def em_step(state: SystemState, dt: float, dw: float, cfg: SystemConfig,
            active_cutoff: CutoffKernel) -> SystemState:
    if not dt > 0:
        raise ConfigError("step size must be positive")
    d_t = cfg.noise.intensity_at(state.t)
    with np.errstate(over="ignore", invalid="ignore"):
        b = drift(state, cfg, active_cutoff)
        x = state.x + state.v * dt
        v = state.v + b * dt + d_t * state.v * dw
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(v))):
        raise NumericalError(f"non-finite state after step at t={state.t}")
    t = state.t + dt
    return SystemState(t, x, v, state.w_now + dw, state.m_now + d_t * dw,
                       cfg.noise.quad_variation(t))


# ---------------------------------------------------------------------------
# path results


@dataclass
class Collision:
    """First-collision record.

    ``time`` is the first output time at which the frozen state is
    reported; ``step_time`` is the integration time the threshold was hit.
    """

    time: float
    pair: tuple
    output_index: int
    step_time: float


@dataclass
class PathResult:
    index: int
    seed: int
    times: np.ndarray
    p_list: tuple
    xnorm: np.ndarray  # (T, len(p_list))
    vnorm: np.ndarray
    xsup: np.ndarray  # running sup_{s<=t} |x(s)|_p
    vint: np.ndarray  # sum over steps of |v|_p dt
    min_dist: np.ndarray
    xsum: np.ndarray  # |sum_i x_i|
    vsum: np.ndarray
    w: np.ndarray
    m: np.ndarray
    qv: np.ndarray
    status: str
    collision: Optional[Collision]
    level_times: np.ndarray
    cutoffs: np.ndarray
    macro: tuple
    n_substeps: int = 0
    states: Optional[tuple] = None
    flags: dict = field(default_factory=dict)

    def col(self, p) -> int:
        p = float(p)
        for k, q in enumerate(self.p_list):
            if float(q) == p:
                return k
        raise KeyError(f"norm p={p} was not recorded")

    def norm_series(self, kind: str, p=2.0) -> np.ndarray:
        return getattr(self, kind)[:, self.col(p)]


def output_indices(grid: np.ndarray, output_times) -> np.ndarray:
    """Indices of ``output_times`` inside the base grid."""
    out = np.asarray(output_times, dtype=float)
    if out.ndim != 1 or out.size == 0:
        raise ConfigError("output grid must be a non-empty 1-d sequence")
    if np.any(np.diff(out) <= 0):
        raise ConfigError("output grid must be strictly increasing")
    if out[0] < 0 or out[-1] > grid[-1] * (1 + 1e-12):
        raise ConfigError("output grid must lie in [0, horizon]")
    idx = np.clip(np.searchsorted(grid, out), 0, len(grid) - 1)
    left = np.clip(idx - 1, 0, len(grid) - 1)
    idx = np.where(np.abs(grid[left] - out) < np.abs(grid[idx] - out), left, idx)
    scale = max(float(np.min(np.diff(grid))), 1e-300) if len(grid) > 1 else 1.0
    if np.any(np.abs(grid[idx] - out) > 1e-6 * scale):
        raise ConfigError("output times must coincide with base-grid nodes")
    return idx


# ---------------------------------------------------------------------------
# drivers


def _kernel_code(kernel: Kernel):
    shift = 0.0
    while isinstance(kernel, Shifted):
        shift += kernel.shift
        kernel = kernel.base
    for code, cls in enumerate((PowerLaw, Regularized, LogPower)):
        if type(kernel) is cls:
            return code, float(kernel.alpha), shift
    if type(kernel) is Constant:
        return 3, float(kernel.c), shift
    raise UnsupportedError(f"the integrator has no compiled form of {kernel!r}")


def _noise_code(noise: NoiseIntensity):
    if type(noise) is ConstantNoise:
        return 0, float(noise.d0), 0.0
    if type(noise) is PowerDecay:
        return 1, float(noise.d0), float(noise.gamma)
    raise UnsupportedError(f"the integrator has no compiled form of {noise!r}")


@dataclass
class BatchOutput:
    """Raw arrays for a batch of paths; the leading axis is the path."""

    seeds: np.ndarray
    times: np.ndarray
    p_list: tuple
    xnorm: np.ndarray
    vnorm: np.ndarray
    xsup: np.ndarray
    vint: np.ndarray
    min_dist: np.ndarray
    xsum: np.ndarray
    vsum: np.ndarray
    w: np.ndarray
    m: np.ndarray
    qv: np.ndarray
    status: np.ndarray
    step_time: np.ndarray
    pairs: np.ndarray
    n_substeps: np.ndarray
    level_times: np.ndarray
    cutoffs: np.ndarray
    xbar: np.ndarray
    vbar: np.ndarray
    x_states: Optional[np.ndarray] = None
    v_states: Optional[np.ndarray] = None

    @property
    def collided(self) -> np.ndarray:
        return self.status == _core.STATUS_COLLIDED

    def col(self, p) -> int:
        return self.p_list.index(float(p))


def integrate_batch(cfg: SystemConfig, controller: StepController, horizon: float,
                    seeds, output_grid, p_list=(2.0,), *, initial=None,
                    keep_states: bool = False) -> BatchOutput:
    """Integrate one path per seed and return the stacked output arrays."""
    seeds = np.asarray([int(s) for s in seeds], dtype=np.uint64)
    grid = uniform_grid(horizon, controller.dt_base)
    out_idx = output_indices(grid, output_grid)
    out_times = grid[out_idx]
    slot = np.full(len(grid), -1, dtype=np.int64)
    slot[out_idx] = np.arange(len(out_idx))
    p_list = tuple(_check_p(p) for p in p_list)
    plist = np.asarray(p_list, dtype=float)
    kcode, ka, kshift = _kernel_code(cfg.kernel)
    ncode, nd0, ngam = _noise_code(cfg.noise)
    cutoffs = controller.cutoff_sequence
    P, T, npl, n, d = len(seeds), len(out_idx), len(p_list), cfg.n, cfg.d
    if initial is None:
        x_raw, v_raw = sample_initial_batch(cfg, seeds)
    else:
        x_raw = np.broadcast_to(np.asarray(initial[0], dtype=float).reshape(n, d), (P, n, d))
        v_raw = np.broadcast_to(np.asarray(initial[1], dtype=float).reshape(n, d), (P, n, d))
    xbar, vbar, x, v = decompose(x_raw, v_raw)
    x = np.ascontiguousarray(x)
    v = np.ascontiguousarray(v)
    series = {k: np.empty((P, T, npl)) for k in ("xnorm", "vnorm", "xsup", "vint")}
    for k in ("min_dist", "xsum", "vsum", "w", "m", "t"):
        series[k] = np.empty((P, T))
    shape = (P, T, n, d) if keep_states else (P, 1, n, d)
    sx, sv = np.empty(shape), np.empty(shape)
    level_times = np.full((P, len(cutoffs)), np.nan)
    status = np.zeros(P, dtype=np.int64)
    step_time = np.full(P, np.nan)
    pairs = np.full((P, 2), -1, dtype=np.int64)
    nsub = np.zeros(P, dtype=np.int64)
    bad = _core.run_batch(
        x, v, seeds, grid, slot, kcode, ka, kshift, float(cfg.lam), ncode, nd0, ngam,
        float(controller.dt_min), float(controller.c_cfl), float(controller.c_stiff),
        cutoffs, plist, series["xnorm"], series["vnorm"], series["xsup"], series["vint"],
        series["min_dist"], series["xsum"], series["vsum"], series["w"], series["m"],
        series["t"], keep_states, sx, sv, level_times, status, step_time, pairs, nsub)
    if bad >= 0:
        raise NumericalError(f"non-finite state on path {bad} near t={step_time[bad]}")
    qv = np.asarray(cfg.noise.quad_variation(series["t"].ravel()), dtype=float).reshape(P, T)
    return BatchOutput(
        seeds=seeds, times=out_times, p_list=p_list,
        xnorm=series["xnorm"], vnorm=series["vnorm"], xsup=series["xsup"],
        vint=series["vint"], min_dist=series["min_dist"], xsum=series["xsum"],
        vsum=series["vsum"], w=series["w"], m=series["m"], qv=qv, status=status,
        step_time=step_time, pairs=pairs, n_substeps=nsub, level_times=level_times,
        cutoffs=cutoffs, xbar=xbar, vbar=vbar,
        x_states=sx if keep_states else None, v_states=sv if keep_states else None)


def simulate_batch(cfg: SystemConfig, controller: StepController, horizon: float,
                   seeds: Sequence[int], output_grid, p_list=(2.0,), *,
                   indices: Optional[Sequence[int]] = None, initial=None,
                   keep_states: bool = False) -> list:
    """Integrate one path per seed and return their :class:`PathResult` list.

    ``initial`` overrides the sampler with fixed raw ``(x, v)`` data.
    """
    out = integrate_batch(cfg, controller, horizon, seeds, output_grid, p_list,
                          initial=initial, keep_states=keep_states)
    if indices is None:
        indices = range(len(out.seeds))
    results = []
    for k, index in enumerate(indices):
        coll = None
        if out.status[k] == _core.STATUS_COLLIDED:
            tc = float(out.step_time[k])
            later = np.nonzero(out.times >= tc)[0]
            oi = int(later[0]) if later.size else -1
            coll = Collision(float(out.times[oi]) if oi >= 0 else tc,
                             (int(out.pairs[k, 0]), int(out.pairs[k, 1])), oi, tc)
        results.append(PathResult(
            index=int(index),
            seed=int(out.seeds[k]),
            times=out.times.copy(),
            p_list=out.p_list,
            xnorm=out.xnorm[k],
            vnorm=out.vnorm[k],
            xsup=out.xsup[k],
            vint=out.vint[k],
            min_dist=out.min_dist[k],
            xsum=out.xsum[k],
            vsum=out.vsum[k],
            w=out.w[k],
            m=out.m[k],
            qv=out.qv[k],
            status="Collided" if coll else "Completed",
            collision=coll,
            level_times=out.level_times[k],
            cutoffs=out.cutoffs.copy(),
            macro=(out.xbar[k], out.vbar[k]),
            n_substeps=int(out.n_substeps[k]),
            states=(out.x_states[k], out.v_states[k]) if keep_states else None,
        ))
    return results


def simulate_path(cfg: SystemConfig, controller: StepController, horizon: float,
                  seed: int, output_grid, p_list=(2.0,), *, initial=None,
                  keep_states: bool = False) -> PathResult:
    return simulate_batch(cfg, controller, horizon, [seed], output_grid, p_list,
                          initial=initial, keep_states=keep_states)[0]
