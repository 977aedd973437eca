"""Ensemble statistics and model-specific diagnostics.

Covers the exponential martingale and the dominating comparison process,
flocking-in-mean metrics (optionally conditioned on an event), decay-rate
fits, the exponential functional behind event A, cluster seminorms and the
collision Lyapunov pair, the two-particle non-flocking bound, and the upper
concave envelope used for a Jensen-type estimate.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from .errors import (
    BadIndex,
    DegenerateFit,
    DomainError,
    EmptyEnsemble,
    EmptyMask,
    GridError,
    WrongScenario,
)
from .paths import BrownianPath, MartingaleTrack

__all__ = [
    "EventClass",
    "EventAParams",
    "Series",
    "Frequency",
    "RateFit",
    "EnsembleStats",
    "TwoParticleBound",
    "KSResult",
    "wilson_interval",
    "exp_martingale",
    "comparison_process",
    "exp_functional",
    "event_A",
    "flocking_metrics",
    "conditional_split",
    "fit_decay",
    "linear_slope",
    "cluster_norm",
    "collision_lyapunov",
    "appendix_a_mask",
    "two_particle_lower_bound",
    "concave_envelope",
    "envelope_target",
    "jensen_gap",
    "dufresne_law",
    "inverse_gamma_ks",
]


# ---------------------------------------------------------------------------
# small containers


class EventClass(enum.Enum):
    InA = "InA"
    NotInA = "NotInA"
    Indeterminate = "Indeterminate"


@dataclass
class Series:
    """Per-time Monte Carlo mean with standard error."""

    mean: np.ndarray
    se: np.ndarray

    def __eq__(self, other):
        return (isinstance(other, Series) and np.array_equal(self.mean, other.mean)
                and np.array_equal(self.se, other.se))

    def to_dict(self):
        return {"mean": self.mean.tolist(), "se": self.se.tolist()}

    @classmethod
    def from_dict(cls, data):
        return cls(np.asarray(data["mean"], dtype=float), np.asarray(data["se"], dtype=float))


@dataclass
class Frequency:
    count: int
    n: int
    estimate: float
    lower: float
    upper: float

    def to_dict(self):
        return {"count": self.count, "n": self.n, "estimate": self.estimate,
                "lower": self.lower, "upper": self.upper}

    @classmethod
    def from_dict(cls, data):
        return cls(int(data["count"]), int(data["n"]), float(data["estimate"]),
                   float(data["lower"]), float(data["upper"]))


def wilson_interval(count: int, n: int, z: float = 1.959963984540054) -> Frequency:
    """Wilson score interval for a binomial proportion."""
    if n <= 0:
        raise EmptyEnsemble("frequency over zero trials")
    if not 0 <= count <= n:
        raise DomainError("count must lie in [0, n]")
    phat = count / n
    z2 = z * z
    denom = 1.0 + z2 / n
    centre = (phat + z2 / (2 * n)) / denom
    half = z * math.sqrt(phat * (1 - phat) / n + z2 / (4 * n * n)) / denom
    lower = 0.0 if count == 0 else max(0.0, centre - half)
    upper = 1.0 if count == n else min(1.0, centre + half)
    return Frequency(int(count), int(n), phat, lower, upper)


def _mean_se(values: np.ndarray):
    """Column means and standard errors (sample std / sqrt(n))."""
    n = values.shape[0]
    mean = values.mean(axis=0)
    if n < 2:
        return mean, np.zeros_like(mean)
    se = values.std(axis=0, ddof=1) / math.sqrt(n)
    # identical samples give exactly zero spread, not rounding noise
    return mean, np.where(np.all(values == values[0], axis=0), 0.0, se)


# ---------------------------------------------------------------------------
# martingale and comparison process


def _grid_index(times: np.ndarray, t: float) -> int:
    i = int(np.searchsorted(times, t))
    for j in (i, i - 1):
        if 0 <= j < len(times) and abs(times[j] - t) <= 1e-12 * max(1.0, abs(t)):
            return j
    raise GridError(f"{t} is not a grid time")


def exp_martingale(track: MartingaleTrack, t: float) -> float:
    """exp(-[M]_t / 2 + M_t)."""
    j = _grid_index(track.times, t)
    return math.exp(-0.5 * track.qv_values[j] + track.m_values[j])


def comparison_process(track: MartingaleTrack, psi_star: float, lam: float,
                       v0_norm: float, t: float) -> float:
    """V(t) = |v(0)| exp(-lambda psi_* t) E(t)."""
    if v0_norm < 0:
        raise DomainError("v0_norm must be non-negative")
    return v0_norm * math.exp(-lam * psi_star * t) * exp_martingale(track, t)


def _exp_martingale_series(m, qv):
    return np.exp(-0.5 * np.asarray(qv) + np.asarray(m))


# ---------------------------------------------------------------------------
# exponential functional and event A


def exp_functional(path: BrownianPath, drift_coef: float, vol_coef: float,
                   t_trunc: float, c_lil: Optional[float] = None):
    """Trapezoidal int_0^T exp(-c s + a W(s)) ds and a tail estimate.

    The tail estimate is exp(a W(T) - c T) / (c - |a| c_lil); ``c_lil``
    defaults to c / (2 |a|), i.e. half the drift is reserved for the
    fluctuations of W beyond T.
    """
    if not drift_coef > 0:
        raise DomainError("drift coefficient must be positive")
    if not t_trunc > 0:
        raise DomainError("truncation horizon must be positive")
    times = path.times
    if times[-1] < t_trunc * (1 - 1e-12):
        raise GridError(f"path ends at {times[-1]} before t_trunc={t_trunc}")
    k = int(np.searchsorted(times, t_trunc * (1 + 1e-12), side="right"))
    s = times[:k]
    f = np.exp(-drift_coef * s + vol_coef * path.values[:k])
    value = float(np.sum(0.5 * (f[1:] + f[:-1]) * np.diff(s)))
    if c_lil is None:
        margin = 0.5 * drift_coef
    else:
        margin = drift_coef - abs(vol_coef) * c_lil
        if not margin > 0:
            raise DomainError("c_lil leaves no drift margin for the tail estimate")
    return value, float(f[-1] / margin)


@dataclass(frozen=True)
class EventAParams:
    """Parameters of event A for constant noise intensity ``D``.

    ``constant_form`` selects (2^(beta+1)/(beta lambda))^(2/beta) ("proof",
    default) or (2^beta/(q lambda))^(2/beta) ("event"); ``constant``
    overrides the base of the 2/beta power directly.
    """

    beta: float
    q: float
    lam: float
    D: float
    t_trunc: Optional[float] = None
    c_lil: Optional[float] = None
    constant_form: str = "proof"
    constant: Optional[float] = None

    def __post_init__(self):
        if not self.beta > 2:
            raise DomainError("event A needs beta > 2")
        if not self.q > 1:
            raise DomainError("event A needs q > 1")
        if not self.lam > 0:
            raise DomainError("coupling must be positive")
        if self.D == 0:
            raise DomainError("event A needs a non-zero noise intensity")
        if self.constant_form not in ("proof", "event"):
            raise DomainError("constant_form must be 'proof' or 'event'")
        if self.t_trunc is not None and not self.t_trunc > 0:
            raise DomainError("t_trunc must be positive")

    @property
    def drift_coef(self) -> float:
        return self.beta * self.D**2 / (2 * (self.beta - 2))

    @property
    def vol_coef(self) -> float:
        return self.beta * self.D / (self.beta - 2)

    @property
    def horizon(self) -> float:
        return self.t_trunc if self.t_trunc is not None else 50.0 / self.drift_coef

    @property
    def factor(self) -> float:
        if self.constant is not None:
            base = self.constant
        elif self.constant_form == "proof":
            base = 2 ** (self.beta + 1) / (self.beta * self.lam)
        else:
            base = 2**self.beta / (self.q * self.lam)
        return base ** (2 / self.beta)

    def g_value(self, x0_norm, v0_norm, integral):
        """4 |x0| |v0| I^(1-2/beta) K^(2/beta)."""
        return 4.0 * x0_norm * v0_norm * integral ** (1 - 2 / self.beta) * self.factor


def event_A(x0_norm: float, v0_norm: float, params: EventAParams,
            path: BrownianPath) -> EventClass:
    value, tail = exp_functional(path, params.drift_coef, params.vol_coef,
                                 params.horizon, params.c_lil)
    return classify_event_A(x0_norm, v0_norm, params, value, tail)


def classify_event_A(x0_norm, v0_norm, params: EventAParams, value, tail) -> EventClass:
    if x0_norm < 0 or v0_norm < 0:
        raise DomainError("norms must be non-negative")
    g_trunc = params.g_value(x0_norm, v0_norm, value)
    g_upper = params.g_value(x0_norm, v0_norm, value + tail)
    if g_upper < 1:
        return EventClass.InA
    if g_trunc >= 1:
        return EventClass.NotInA
    return EventClass.Indeterminate


def dufresne_law(drift_coef: float, vol_coef: float):
    """(shape, scale) of int_0^inf exp(a W - c s) ds ~ InvGamma(2c/a^2, 2/a^2)."""
    if not drift_coef > 0 or vol_coef == 0:
        raise DomainError("need c > 0 and a != 0")
    a2 = vol_coef * vol_coef
    return 2 * drift_coef / a2, 2 / a2


@dataclass
class KSResult:
    statistic: float
    pvalue: float
    shape: float
    scale: float
    n_fit: int
    n_test: int


def inverse_gamma_ks(sample, shape: float) -> KSResult:
    """KS distance to InvGamma(shape, scale) with the scale fitted by ML.

    Even-indexed values fit the scale (theta = n k / sum(1/x)); odd-indexed
    values are tested.
    """
    x = np.asarray(sample, dtype=float)
    if x.size < 4:
        raise EmptyEnsemble("need at least four values")
    if np.any(x <= 0):
        raise DomainError("inverse-gamma sample must be positive")
    fit, test = x[0::2], x[1::2]
    scale = fit.size * shape / np.sum(1.0 / fit)
    res = stats.kstest(test, stats.invgamma(shape, scale=scale).cdf)
    return KSResult(float(res.statistic), float(res.pvalue), shape, float(scale),
                    fit.size, test.size)


# ---------------------------------------------------------------------------
# fits


@dataclass
class RateFit:
    model: str
    rate: float
    intercept: float
    r_squared: float
    window: tuple

    def to_dict(self):
        return {"model": self.model, "rate": self.rate, "intercept": self.intercept,
                "r_squared": self.r_squared, "window": list(self.window)}

    @classmethod
    def from_dict(cls, data):
        return cls(data["model"], float(data["rate"]), float(data["intercept"]),
                   float(data["r_squared"]), tuple(data["window"]))

    def predict(self, t):
        t = np.asarray(t, dtype=float)
        if self.model == "Exponential":
            return self.intercept * np.exp(-self.rate * t)
        return self.intercept * (1.0 + t) ** (-self.rate)


def fit_decay(t, y, model: str = "Exponential", window=None) -> RateFit:
    """Least squares on (t, log y) or (log(1+t), log y) inside ``window``.

    The window defaults to [0.2 t_max, t_max].
    """
    if model not in ("Exponential", "Algebraic"):
        raise DomainError(f"unknown decay model {model!r}")
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if t.shape != y.shape:
        raise DomainError("t and y must have the same shape")
    if window is None:
        window = (0.2 * float(t.max()), float(t.max()))
    lo, hi = window
    sel = (t >= lo - 1e-12) & (t <= hi + 1e-12)
    ts, ys = t[sel], y[sel]
    if ts.size < 5:
        raise DegenerateFit("need at least five points in the fit window")
    if np.any(ys <= 0):
        raise DomainError("decay fits need y > 0")
    if ys.max() / ys.min() < 1.01:
        raise DegenerateFit("series is flat inside the fit window")
    u = ts if model == "Exponential" else np.log1p(ts)
    ly = np.log(ys)
    slope, icpt = np.polyfit(u, ly, 1)
    resid = ly - (slope * u + icpt)
    sst = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / sst if sst > 0 else 1.0
    return RateFit(model, float(-slope), float(math.exp(icpt)),
                   min(1.0, max(0.0, r2)), (float(lo), float(hi)))


def linear_slope(t, y):
    """Least-squares slope of y against t; rows of a 2-d ``y`` are separate series."""
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    tc = t - t.mean()
    yc = y - y.mean(axis=-1, keepdims=True)
    out = (yc @ tc) / float(tc @ tc)
    return float(out) if np.ndim(out) == 0 else out


# ---------------------------------------------------------------------------
# ensemble metrics


@dataclass
class EnsembleStats:
    grid: np.ndarray
    n_paths: int
    p_list: tuple
    mean_vnorm: dict
    mean_xnorm: dict
    cond_mean_vnorm: Optional[dict] = None
    cond_mean_xnorm: Optional[dict] = None
    cond_count: int = 0
    collision_frequency: Optional[Frequency] = None
    event_frequency: Optional[Frequency] = None
    indeterminate: int = 0
    martingale_mean: Optional[Series] = None
    fits: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)
    master_seed: Optional[int] = None
    scenario: str = ""
    scenario_name: str = ""

    def __eq__(self, other):
        if not isinstance(other, EnsembleStats):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    def to_dict(self) -> dict:
        def series_map(m):
            return None if m is None else {repr(float(p)): s.to_dict() for p, s in m.items()}

        return {
            "grid": self.grid.tolist(),
            "n_paths": self.n_paths,
            "p_list": [float(p) for p in self.p_list],
            "mean_vnorm": series_map(self.mean_vnorm),
            "mean_xnorm": series_map(self.mean_xnorm),
            "cond_mean_vnorm": series_map(self.cond_mean_vnorm),
            "cond_mean_xnorm": series_map(self.cond_mean_xnorm),
            "cond_count": self.cond_count,
            "collision_frequency": None if self.collision_frequency is None
            else self.collision_frequency.to_dict(),
            "event_frequency": None if self.event_frequency is None
            else self.event_frequency.to_dict(),
            "indeterminate": self.indeterminate,
            "martingale_mean": None if self.martingale_mean is None
            else self.martingale_mean.to_dict(),
            "fits": {k: f.to_dict() for k, f in self.fits.items()},
            "extras": self.extras,
            "master_seed": self.master_seed,
            "scenario": self.scenario,
            "scenario_name": self.scenario_name,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EnsembleStats":
        def series_map(m):
            return None if m is None else {float(p): Series.from_dict(s) for p, s in m.items()}

        return cls(
            grid=np.asarray(data["grid"], dtype=float),
            n_paths=int(data["n_paths"]),
            p_list=tuple(float(p) for p in data["p_list"]),
            mean_vnorm=series_map(data["mean_vnorm"]),
            mean_xnorm=series_map(data["mean_xnorm"]),
            cond_mean_vnorm=series_map(data["cond_mean_vnorm"]),
            cond_mean_xnorm=series_map(data["cond_mean_xnorm"]),
            cond_count=int(data["cond_count"]),
            collision_frequency=None if data["collision_frequency"] is None
            else Frequency.from_dict(data["collision_frequency"]),
            event_frequency=None if data["event_frequency"] is None
            else Frequency.from_dict(data["event_frequency"]),
            indeterminate=int(data["indeterminate"]),
            martingale_mean=None if data["martingale_mean"] is None
            else Series.from_dict(data["martingale_mean"]),
            fits={k: RateFit.from_dict(f) for k, f in data["fits"].items()},
            extras=data["extras"],
            master_seed=data["master_seed"],
            scenario=data["scenario"],
            scenario_name=data.get("scenario_name", ""),
        )


def _mask_array(mask, n):
    """Boolean membership and determinacy arrays from bools or EventClass values."""
    arr = list(mask)
    if len(arr) != n:
        raise DomainError("mask length must match the number of paths")
    if arr and isinstance(arr[0], EventClass):
        member = np.array([m is EventClass.InA for m in arr])
        known = np.array([m is not EventClass.Indeterminate for m in arr])
    else:
        member = np.asarray(arr, dtype=bool)
        known = np.ones(n, dtype=bool)
    return member, known


def flocking_metrics(results: Sequence, p=2.0, mask=None) -> EnsembleStats:
    """Means and standard errors of |v|_p, |x|_p and E(t), optionally given a mask.

    ``mask`` holds booleans or :class:`EventClass` values; indeterminate
    paths are left out of the conditional means and counted separately.
    """
    if len(results) == 0:
        raise EmptyEnsemble("no paths to reduce")
    grid = results[0].times
    for r in results:
        if not np.array_equal(r.times, grid):
            raise GridError("results do not share an output grid")
    p_list = (p,) if np.ndim(p) == 0 else tuple(p)
    n = len(results)
    mean_v, mean_x = {}, {}
    vals = {}
    for q in p_list:
        q = float(q)
        vn = np.stack([r.norm_series("vnorm", q) for r in results])
        xn = np.stack([r.norm_series("xnorm", q) for r in results])
        vals[q] = (vn, xn)
        mean_v[q] = Series(*_mean_se(vn))
        mean_x[q] = Series(*_mean_se(xn))
    emart = np.stack([_exp_martingale_series(r.m, r.qv) for r in results])
    n_coll = sum(r.status == "Collided" for r in results)
    out = EnsembleStats(
        grid=grid.copy(), n_paths=n, p_list=tuple(float(q) for q in p_list),
        mean_vnorm=mean_v, mean_xnorm=mean_x,
        collision_frequency=wilson_interval(n_coll, n),
        martingale_mean=Series(*_mean_se(emart)),
    )
    if mask is not None:
        member, known = _mask_array(mask, n)
        out.indeterminate = int(np.sum(~known))
        if known.any():
            out.event_frequency = wilson_interval(int(member.sum()), int(known.sum()))
        out.cond_count = int(member.sum())
        if member.any():
            out.cond_mean_vnorm = {q: Series(*_mean_se(vn[member])) for q, (vn, _) in vals.items()}
            out.cond_mean_xnorm = {q: Series(*_mean_se(xn[member])) for q, (_, xn) in vals.items()}
    return out


def conditional_split(values, mask):
    """(P(A), E(.|A), E(.|A^c)) on the sample; raises EmptyMask if A is empty."""
    values = np.asarray(values, dtype=float)
    member = np.asarray(mask, dtype=bool)
    if values.shape[0] == 0:
        raise EmptyEnsemble("no paths")
    if not member.any():
        raise EmptyMask("event has no members")
    pa = member.mean()
    inside = values[member].mean(axis=0)
    outside = values[~member].mean(axis=0) if (~member).any() else np.zeros_like(inside)
    return pa, inside, outside


# ---------------------------------------------------------------------------
# cluster diagnostics


def _check_idx(idx, n):
    idx = [int(i) for i in idx]
    if not idx:
        raise BadIndex("index set is empty")
    if len(set(idx)) != len(idx) or min(idx) < 0 or max(idx) >= n:
        raise BadIndex(f"index set must hold distinct indices in [0, {n})")
    return np.asarray(idx)


def cluster_norm(y, idx) -> float:
    """sqrt(sum_{i,j in idx} |y_i - y_j|^2), both orders counted (0-based idx)."""
    y = np.asarray(y, dtype=float)
    sub = y[_check_idx(idx, y.shape[0])]
    diff = sub[:, None, :] - sub[None, :, :]
    return float(np.sqrt(np.sum(diff * diff)))


def collision_lyapunov(state, idx, kernel, lam: float, n: int):
    """(|||v||| + (lambda/N) Psi(|||x|||), |||v||| - (lambda/N) Psi(|||x|||))."""
    cx = cluster_norm(state.x, idx)
    if cx == 0:
        raise DomainError("cluster seminorm of positions is zero")
    cv = cluster_norm(state.v, idx)
    pot = lam / n * float(kernel.primitive(cx))
    return cv + pot, cv - pot


# ---------------------------------------------------------------------------
# two-particle system


@dataclass
class TwoParticleBound:
    times: np.ndarray
    mean_v: np.ndarray
    se_v: np.ndarray
    mean_tail: np.ndarray
    se_tail: np.ndarray
    count: int


def _relative(result):
    if result.states is None:
        raise WrongScenario("two-particle analysis needs stored states")
    x, v = result.states
    if x.shape[1:] != (2, 1):
        raise WrongScenario("two-particle analysis needs N = 2 and d = 1")
    return x[:, 0, 0] - x[:, 1, 0], v[:, 0, 0] - v[:, 1, 0]


def appendix_a_mask(results, kernel, lam: float) -> np.ndarray:
    """Indicator of v(0) >= lambda int_{x(0)}^inf psi for relative (x, v)."""
    out = np.zeros(len(results), dtype=bool)
    for k, r in enumerate(results):
        x, v = _relative(r)
        if x[0] > 0:
            out[k] = v[0] >= lam * float(kernel.tail_integral(x[0]))
    return out


def two_particle_lower_bound(results, kernel, lam: float, mask=None):
    """Conditional means of v(t) and lambda int_{x(t)}^inf psi.

    Returns None when the mask is empty (the series is omitted).
    """
    if len(results) == 0:
        raise EmptyEnsemble("no paths")
    if mask is None:
        mask = appendix_a_mask(results, kernel, lam)
    member = np.asarray(mask, dtype=bool)
    if not member.any():
        return None
    vs, tails = [], []
    for r, keep in zip(results, member):
        if keep:
            x, v = _relative(r)
            if np.any(x <= 0):
                raise WrongScenario("relative position left (0, inf)")
            vs.append(v)
            tails.append(lam * np.asarray(kernel.tail_integral(x), dtype=float))
    mv, sv = _mean_se(np.stack(vs))
    mt, st = _mean_se(np.stack(tails))
    return TwoParticleBound(results[0].times.copy(), mv, sv, mt, st, int(member.sum()))


# ---------------------------------------------------------------------------
# concave envelope


def _envelope_args(t, a, alpha, lam):
    if not t > 0:
        raise DomainError("t must be positive")
    if not a > 1:
        raise DomainError("a must exceed 1")
    if not 0 < alpha < 1:
        raise DomainError("alpha must lie in (0, 1)")
    if not lam > 0:
        raise DomainError("lambda must be positive")
    return a / (a - 1)


def envelope_target(t, a, alpha, lam, r):
    """F(r) = exp(-a' lambda (2r)^(-alpha) t), with F(0) = 0."""
    ap = _envelope_args(t, a, alpha, lam)
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise DomainError("r must be non-negative")
    with np.errstate(divide="ignore"):
        out = np.where(r > 0, np.exp(-ap * lam * (2 * r) ** (-alpha) * t), 0.0)
    return float(out) if out.ndim == 0 else out


def concave_envelope(t, a, alpha, lam, r):
    """Upper concave envelope of :func:`envelope_target` in r."""
    ap = _envelope_args(t, a, alpha, lam)
    r = np.asarray(r, dtype=float)
    if np.any(r < 0) or np.any(np.isnan(r)):
        raise DomainError("r must be non-negative")
    r_star = 0.5 * (alpha * ap * lam * t) ** (1 / alpha)
    slope = 2 * (math.e * alpha * ap * lam * t) ** (-1 / alpha)
    with np.errstate(divide="ignore"):
        far = np.exp(-ap * lam * (2 * np.maximum(r, r_star)) ** (-alpha) * t)
    out = np.where(r <= r_star, slope * r, far)
    return float(out) if out.ndim == 0 else out


def jensen_gap(samples, t, a, alpha, lam):
    """(mean F^(X), F^(mean X), SE of F^(X)) for envelope F^."""
    x = np.asarray(samples, dtype=float)
    if x.size == 0:
        raise EmptyEnsemble("no samples")
    fx = concave_envelope(t, a, alpha, lam, x)
    mean, se = _mean_se(np.atleast_1d(fx))
    return float(mean), float(concave_envelope(t, a, alpha, lam, float(x.mean()))), float(se)
