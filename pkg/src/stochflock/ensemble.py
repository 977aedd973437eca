"""Deterministic parallel execution of scenario ensembles.

Paths are split into fixed chunks of ``CHUNK`` consecutive indices.  Each
chunk is reduced to moment accumulators plus a few per-path scalars, and the
chunk summaries are merged in index order.  The chunk layout never depends
on the worker count, so the merged statistics are bit-identical for any
number of workers.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import __version__
from .analysis import (
    EnsembleStats,
    EventAParams,
    EventClass,
    Series,
    classify_event_A,
    exp_functional,
    fit_decay,
    inverse_gamma_ks,
    jensen_gap,
    linear_slope,
    wilson_interval,
)
from .errors import DegenerateFit, EmptyEnsemble, StochFlockError
from .integrator import integrate_batch, simulate_batch
from .paths import extend, path_seeds, sample_path
from .scenarios import Scenario, serialize_scenario

__all__ = ["CHUNK", "Moments", "RunManifest", "run_ensemble", "run_paths", "event_params"]

CHUNK = 250


@dataclass
class Moments:
    """Count, mean and centered sum of squares, mergeable in a fixed order."""

    n: int
    mean: np.ndarray
    m2: np.ndarray

    @classmethod
    def of(cls, values: np.ndarray, width: int) -> "Moments":
        if values.shape[0] == 0:
            return cls(0, np.zeros(width), np.zeros(width))
        mean = values.mean(axis=0)
        m2 = np.sum((values - mean) ** 2, axis=0)
        return cls(values.shape[0], mean, np.where(np.all(values == values[0], axis=0), 0.0, m2))

    def merge(self, other: "Moments") -> "Moments":
        if other.n == 0:
            return self
        if self.n == 0:
            return other
        n = self.n + other.n
        delta = other.mean - self.mean
        mean = self.mean + delta * (other.n / n)
        m2 = self.m2 + other.m2 + delta * delta * (self.n * other.n / n)
        return Moments(n, mean, m2)

    def series(self) -> Series:
        if self.n < 2:
            return Series(self.mean.copy(), np.zeros_like(self.mean))
        return Series(self.mean.copy(), np.sqrt(self.m2 / (self.n - 1)) / math.sqrt(self.n))


@dataclass
class RunManifest:
    scenario: str
    tool_version: str
    master_seed: int
    n_paths: int
    workers: int
    wall_time: float
    criteria: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"scenario": self.scenario, "tool_version": self.tool_version,
                "master_seed": self.master_seed, "n_paths": self.n_paths,
                "workers": self.workers, "wall_time": self.wall_time,
                "criteria": self.criteria}


def event_params(sc: Scenario) -> EventAParams:
    an = sc.analysis
    return EventAParams(an.beta, an.q if an.q is not None else 2.0, sc.cfg.lam,
                        sc.cfg.noise.d0, an.t_trunc, an.c_lil, an.constant_form)


def _functional_path(sc: Scenario, seed: int, horizon: float):
    base = sample_path(sc.horizon, sc.controller.dt_base, seed)
    return extend(base, horizon, sc.analysis.extension_dt)


def run_paths(sc: Scenario, start: int, stop: int, keep_states: bool = False):
    """PathResults for indices [start, stop) of a scenario."""
    seeds = path_seeds(sc.master_seed, start, stop)
    return simulate_batch(sc.cfg, sc.controller, sc.horizon, seeds, sc.output_grid,
                          sc.p_list, indices=range(start, stop), keep_states=keep_states)


def _functionals(sc: Scenario, seeds, params: EventAParams):
    values = np.empty(len(seeds))
    tails = np.empty(len(seeds))
    for k, seed in enumerate(seeds):
        values[k], tails[k] = exp_functional(
            _functional_path(sc, int(seed), params.horizon), params.drift_coef,
            params.vol_coef, params.horizon, params.c_lil)
    return values, tails


def _chunk(sc: Scenario, start: int, stop: int) -> dict:
    passes = sc.analysis.passes
    keep = "appendix_a" in passes
    try:
        b = integrate_batch(sc.cfg, sc.controller, sc.horizon,
                            path_seeds(sc.master_seed, start, stop), sc.output_grid,
                            sc.p_list, keep_states=keep)
    except StochFlockError as exc:
        raise type(exc)(f"paths [{start}, {stop}): {exc}") from exc
    T = len(sc.output_grid)
    n = stop - start
    out = {"n": n, "moments": {}, "scalars": {}, "counts": {}}
    mom, sca, cnt = out["moments"], out["scalars"], out["counts"]
    vn = {p: b.vnorm[:, :, b.col(p)] for p in sc.p_list}
    xn = {p: b.xnorm[:, :, b.col(p)] for p in sc.p_list}
    emart = np.exp(-0.5 * b.qv + b.m)
    for p in sc.p_list:
        mom[f"vnorm:{p!r}"] = Moments.of(vn[p], T)
        mom[f"xnorm:{p!r}"] = Moments.of(xn[p], T)
    mom["emart"] = Moments.of(emart, T)
    cnt["collided"] = int(b.collided.sum())
    sca["substeps"] = b.n_substeps.astype(float)
    sca["collision_time"] = np.where(b.collided, b.step_time, np.nan)
    p0 = sc.p_list[0]
    grid = sc.output_grid
    late = grid >= 0.5 * sc.horizon - 1e-12
    sca["late_slope"] = linear_slope(grid[late], xn[p0][:, late])

    member = None
    if "event_a" in passes:
        params = event_params(sc)
        values, tails = _functionals(sc, b.seeds, params)
        classes = [classify_event_A(b.xnorm[k, 0, 0], b.vnorm[k, 0, 0], params,
                                    values[k], tails[k]) for k in range(n)]
        member = np.array([c is EventClass.InA for c in classes])
        cnt["in_a"] = int(member.sum())
        cnt["not_in_a"] = sum(c is EventClass.NotInA for c in classes)
        cnt["indeterminate"] = sum(c is EventClass.Indeterminate for c in classes)
    if "appendix_a" in passes:
        kernel, lam = sc.cfg.kernel, sc.cfg.lam
        rel_x = b.x_states[:, :, 0, 0] - b.x_states[:, :, 1, 0]
        rel_v = b.v_states[:, :, 0, 0] - b.v_states[:, :, 1, 0]
        member = np.zeros(n, dtype=bool)
        pos = rel_x[:, 0] > 0
        member[pos] = rel_v[pos, 0] >= lam * np.asarray(kernel.tail_integral(rel_x[pos, 0]))
        sel = member & np.all(rel_x > 0, axis=1)
        cnt["crossed"] = int(np.sum(member & ~sel))
        tail = lam * np.asarray(kernel.tail_integral(rel_x[sel]), dtype=float)
        mom["a_v"] = Moments.of(rel_v[sel], T)
        mom["a_tail"] = Moments.of(tail.reshape(-1, T), T)
        cnt["in_a"] = int(member.sum())
        cnt["not_in_a"] = int(n - member.sum())
        cnt["indeterminate"] = 0
    if member is not None:
        for p in sc.p_list:
            mom[f"cond_vnorm:{p!r}"] = Moments.of(vn[p][member], T)
            mom[f"cond_xnorm:{p!r}"] = Moments.of(xn[p][member], T)
        sca["member"] = member.astype(float)
    if "comparison" in passes:
        band = sc.analysis.comparison_band
        decay = np.exp(-sc.cfg.lam * sc.cfg.kernel.psi_star * grid)
        bound = b.vnorm[:, :1, :] * (decay[None, :] * emart)[:, :, None]
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(bound > 0, b.vnorm / bound, 1.0)
        growth = b.xnorm > (b.xnorm[:, :1, :] + b.vint) * (1 + 1e-6)
        cnt["comparison_violations"] = int(np.sum(b.vnorm > bound * (1 + band)))
        cnt["comparison_pairs"] = n * T * len(sc.p_list)
        cnt["growth_violations"] = int(growth.sum())
        sca["max_ratio"] = np.array([ratio.max()])
        sca["max_vsum"] = np.array([b.vsum.max()])
        sca["max_xsum"] = np.array([b.xsum.max()])
    if "dufresne" in passes:
        sca["functional"] = _functionals(sc, b.seeds, event_params(sc))[0]
    if "envelope" in passes:
        sca["xsup_final"] = b.xsup[:, -1, 0].copy()
    return out


def _run_chunk(args):
    sc, start, stop = args
    return _chunk(sc, start, stop)


def _merge(summaries):
    moments, scalars, counts = {}, {}, {}
    n = 0
    for s in summaries:
        n += s["n"]
        for k, v in s["moments"].items():
            moments[k] = moments[k].merge(v) if k in moments else v
        for k, v in s["scalars"].items():
            scalars.setdefault(k, []).append(v)
        for k, v in s["counts"].items():
            counts[k] = counts.get(k, 0) + v
    return n, moments, {k: np.concatenate(v) for k, v in scalars.items()}, counts


def _try_fit(fits, errors, key, t, y, model, window):
    try:
        fits[key] = fit_decay(t, y, model, window)
    except (DegenerateFit, StochFlockError) as exc:
        errors[key] = str(exc)


def run_ensemble(scenario: Scenario, workers: int = 1):
    """Simulate the scenario's ensemble and reduce it to EnsembleStats."""
    if scenario.n_paths <= 0:
        raise EmptyEnsemble("scenario has no paths")
    if workers < 1:
        raise ValueError("workers must be >= 1")
    t0 = time.perf_counter()
    tasks = [(scenario, s, min(s + CHUNK, scenario.n_paths))
             for s in range(0, scenario.n_paths, CHUNK)]
    if workers == 1 or len(tasks) == 1:
        summaries = [_run_chunk(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            summaries = list(pool.map(_run_chunk, tasks))
    n, mom, sca, cnt = _merge(summaries)

    sc = scenario
    an = sc.analysis
    grid = sc.output_grid
    stats = EnsembleStats(
        grid=grid,
        n_paths=n,
        p_list=tuple(sc.p_list),
        mean_vnorm={p: mom[f"vnorm:{p!r}"].series() for p in sc.p_list},
        mean_xnorm={p: mom[f"xnorm:{p!r}"].series() for p in sc.p_list},
        collision_frequency=wilson_interval(cnt["collided"], n),
        martingale_mean=mom["emart"].series(),
        master_seed=sc.master_seed,
        scenario=serialize_scenario(sc),
        scenario_name=sc.name,
    )
    extras = stats.extras
    extras["substeps_mean"] = float(sca["substeps"].mean())
    collided_times = sca["collision_time"][~np.isnan(sca["collision_time"])]
    extras["collision_times"] = collided_times.tolist()
    slopes = sca["late_slope"]
    if "in_a" in cnt:
        stats.cond_count = cnt["in_a"]
        stats.indeterminate = cnt["indeterminate"]
        known = cnt["in_a"] + cnt["not_in_a"]
        if known:
            stats.event_frequency = wilson_interval(cnt["in_a"], known)
        if cnt["in_a"]:
            stats.cond_mean_vnorm = {p: mom[f"cond_vnorm:{p!r}"].series() for p in sc.p_list}
            stats.cond_mean_xnorm = {p: mom[f"cond_xnorm:{p!r}"].series() for p in sc.p_list}
            slopes = slopes[sca["member"] > 0]
    if slopes.size:
        se = float(slopes.std(ddof=1) / math.sqrt(slopes.size)) if slopes.size > 1 else 0.0
        extras["late_slope"] = {"mean": float(slopes.mean()), "se": se, "n": int(slopes.size),
                                "window": [0.5 * sc.horizon, sc.horizon]}
    fit_errors = {}
    p0 = sc.p_list[0]
    if "fit" in an.passes:
        _try_fit(stats.fits, fit_errors, "mean_vnorm", grid, stats.mean_vnorm[p0].mean,
                 an.fit_model, an.fit_window)
        if stats.cond_mean_vnorm is not None:
            _try_fit(stats.fits, fit_errors, "cond_mean_vnorm", grid,
                     stats.cond_mean_vnorm[p0].mean, an.cond_fit_model, an.fit_window)
    if fit_errors:
        extras["fit_errors"] = fit_errors
    if "comparison" in an.passes:
        extras["comparison"] = {
            "violations": cnt["comparison_violations"], "pairs": cnt["comparison_pairs"],
            "growth_violations": cnt["growth_violations"],
            "band": an.comparison_band, "max_ratio": float(sca["max_ratio"].max()),
            "max_vsum": float(sca["max_vsum"].max()),
            "max_xsum": float(sca["max_xsum"].max()),
        }
    if "appendix_a" in an.passes:
        extras["appendix_a"] = {"count": cnt["in_a"], "crossed": cnt["crossed"]}
        if mom["a_v"].n:
            sv, st = mom["a_v"].series(), mom["a_tail"].series()
            extras["appendix_a"].update(mean_v=sv.mean.tolist(), se_v=sv.se.tolist(),
                                        mean_tail=st.mean.tolist(), se_tail=st.se.tolist())
    if "dufresne" in an.passes:
        params = event_params(sc)
        shape = (an.beta - 2) / an.beta
        ks = inverse_gamma_ks(sca["functional"], shape)
        extras["dufresne"] = {"ks": ks.statistic, "pvalue": ks.pvalue, "shape": shape,
                              "scale": ks.scale, "n_fit": ks.n_fit, "n_test": ks.n_test,
                              "t_trunc": params.horizon}
    if "envelope" in an.passes:
        mean_f, f_mean, se = jensen_gap(sca["xsup_final"], sc.horizon, an.envelope_a,
                                        an.envelope_alpha, sc.cfg.lam)
        extras["envelope"] = {"mean_F": mean_f, "F_mean": f_mean, "se": se, "t": sc.horizon}
    from .acceptance import evaluate

    wall = time.perf_counter() - t0
    criteria = [c.to_dict() for c in evaluate(stats, sc, wall)]
    manifest = RunManifest(stats.scenario, __version__, sc.master_seed, n, workers, wall,
                           criteria)
    return stats, manifest
