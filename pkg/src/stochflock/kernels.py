"""Communication weights psi(r) and their derived quantities.

Every kernel is an immutable value object.  ``eval`` accepts scalars or
numpy arrays and returns the same shape.  Built-in families are positive
and non-increasing on (0, inf) except for the constant-shift wrapper,
which may go negative.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize, special

from .errors import ConfigError, DomainError, UnsupportedError

__all__ = [
    "Kernel",
    "PowerLaw",
    "Regularized",
    "LogPower",
    "Constant",
    "Shifted",
    "CutoffKernel",
    "parse_kernel",
]

_GOLDEN_LO = 1e-8
_GOLDEN_TOL = 1e-10


def _as_array(r):
    arr = np.asarray(r, dtype=float)
    return arr, arr.ndim == 0


def _ret(out, scalar):
    return float(out) if scalar else out


class Kernel:
    """Base class.  Subclasses implement ``_psi`` on validated input."""

    singular_at_zero: bool = False

    @property
    def psi_star(self) -> float:
        raise NotImplementedError

    def _psi(self, r: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def eval(self, r):
        """Return psi(r); r = 0 is rejected for singular families."""
        arr, scalar = _as_array(r)
        if np.any(arr < 0) or np.any(np.isnan(arr)):
            raise DomainError("kernel argument must be non-negative")
        if self.singular_at_zero and np.any(arr == 0):
            raise DomainError(f"{self.spec()} is singular at r = 0")
        return _ret(self._psi(arr), scalar)

    __call__ = eval

    def running_inf(self, r: float) -> float:
        """inf of psi over [0, r]."""
        if r < 0:
            raise DomainError("running_inf needs r >= 0")
        if r == 0:
            return math.inf if self.singular_at_zero else self.eval(0.0)
        # built-in families are non-increasing: the infimum sits at r
        return self.eval(r)

    def primitive(self, r: float) -> float:
        raise UnsupportedError(f"no closed-form primitive for {self.spec()}")

    def lipschitz_const(self, r: float) -> float:
        raise NotImplementedError

    def tail_integral(self, x):
        """int_x^inf psi(s) ds for x > 0 (finite only for integrable tails)."""
        raise UnsupportedError(f"no closed-form tail integral for {self.spec()}")

    def spec(self) -> str:
        raise NotImplementedError

    def __str__(self) -> str:
        return self.spec()


def _check_lip_arg(r):
    if not r > 0:
        raise DomainError("Lipschitz constant needs r > 0")


@dataclass(frozen=True)
class PowerLaw(Kernel):
    """psi(r) = r^(-alpha)."""

    alpha: float
    singular_at_zero = True

    def __post_init__(self):
        if not self.alpha > 0:
            raise ConfigError("PowerLaw exponent must be positive")

    @property
    def psi_star(self) -> float:
        return 0.0

    def _psi(self, r):
        with np.errstate(divide="ignore"):
            return r ** (-self.alpha)

    def primitive(self, r):
        arr, scalar = _as_array(r)
        if np.any(arr <= 0):
            raise DomainError("primitive needs r > 0")
        if self.alpha == 1:
            out = np.log(arr)
        else:
            out = arr ** (1 - self.alpha) / (1 - self.alpha)
        return _ret(out, scalar)

    def lipschitz_const(self, r):
        _check_lip_arg(r)
        return self.alpha * r ** (-self.alpha - 1)

    def tail_integral(self, x):
        if self.alpha <= 1:
            raise UnsupportedError("tail integral diverges for alpha <= 1")
        arr, scalar = _as_array(x)
        if np.any(arr <= 0):
            raise DomainError("tail integral needs x > 0")
        return _ret(arr ** (1 - self.alpha) / (self.alpha - 1), scalar)

    def spec(self) -> str:
        return f"power:{self.alpha!r}"


@dataclass(frozen=True)
class Regularized(Kernel):
    """psi(r) = (1 + r^2)^(-alpha/2)."""

    alpha: float
    singular_at_zero = False

    def __post_init__(self):
        if not self.alpha > 0:
            raise ConfigError("Regularized exponent must be positive")

    @property
    def psi_star(self) -> float:
        return 0.0

    def _psi(self, r):
        return (1.0 + r * r) ** (-self.alpha / 2)

    def lipschitz_const(self, r):
        _check_lip_arg(r)
        # |psi'(s)| = alpha s (1+s^2)^(-alpha/2-1) peaks at s = (1+alpha)^(-1/2)
        s = max(r, 1.0 / math.sqrt(1.0 + self.alpha))
        return self.alpha * s * (1.0 + s * s) ** (-self.alpha / 2 - 1)

    def tail_integral(self, x):
        if self.alpha <= 1:
            raise UnsupportedError("tail integral diverges for alpha <= 1")
        arr, scalar = _as_array(x)
        if np.any(arr < 0):
            raise DomainError("tail integral needs x >= 0")
        a = (self.alpha - 1) / 2
        u = 1.0 / (1.0 + arr * arr)
        out = 0.5 * special.beta(a, 0.5) * special.betainc(a, 0.5, u)
        return _ret(out, scalar)

    def spec(self) -> str:
        return f"reg:{self.alpha!r}"


@dataclass(frozen=True)
class LogPower(Kernel):
    """psi(r) = |log(1 + r)|^(-alpha)."""

    alpha: float
    singular_at_zero = True

    def __post_init__(self):
        if not self.alpha > 0:
            raise ConfigError("LogPower exponent must be positive")

    @property
    def psi_star(self) -> float:
        return 0.0

    def _psi(self, r):
        with np.errstate(divide="ignore"):
            return np.abs(np.log1p(r)) ** (-self.alpha)

    def lipschitz_const(self, r):
        _check_lip_arg(r)
        lg = math.log1p(r)
        return self.alpha * lg ** (-self.alpha - 1) / (1.0 + r)

    def spec(self) -> str:
        return f"log:{self.alpha!r}"


@dataclass(frozen=True)
class Constant(Kernel):
    """psi(r) = c."""

    c: float
    singular_at_zero = False

    @property
    def psi_star(self) -> float:
        return float(self.c)

    def _psi(self, r):
        return np.full_like(r, float(self.c))

    def primitive(self, r):
        arr, scalar = _as_array(r)
        if np.any(arr <= 0):
            raise DomainError("primitive needs r > 0")
        return _ret(self.c * arr, scalar)

    def lipschitz_const(self, r):
        _check_lip_arg(r)
        return 0.0

    def spec(self) -> str:
        return f"const:{self.c!r}"


@dataclass(frozen=True)
class Shifted(Kernel):
    """psi(r) = base(r) + shift."""

    base: Kernel
    shift: float

    @property
    def singular_at_zero(self) -> bool:  # type: ignore[override]
        return self.base.singular_at_zero

    @property
    def psi_star(self) -> float:
        return self.base.psi_star + self.shift

    def _psi(self, r):
        return self.base._psi(r) + self.shift

    def running_inf(self, r: float) -> float:
        # no monotonicity is assumed for shifted kernels
        if r < 0:
            raise DomainError("running_inf needs r >= 0")
        if r == 0:
            return math.inf if self.singular_at_zero else self.eval(0.0)
        lo = min(_GOLDEN_LO, r)
        candidates = [self.eval(r), self.eval(lo)]
        if not self.singular_at_zero:
            candidates.append(self.eval(0.0))
        if r > lo:
            res = optimize.minimize_scalar(
                self.eval, bounds=(lo, r), method="bounded",
                options={"xatol": _GOLDEN_TOL},
            )
            candidates.append(float(res.fun))
        return min(candidates)

    def primitive(self, r):
        if not isinstance(self.base, PowerLaw):
            raise UnsupportedError(f"no closed-form primitive for {self.spec()}")
        arr, scalar = _as_array(r)
        out = np.asarray(self.base.primitive(arr)) + self.shift * arr
        return _ret(out, scalar)

    def lipschitz_const(self, r):
        return self.base.lipschitz_const(r)

    def spec(self) -> str:
        return f"shift:{self.base.spec()}:{self.shift:+}"


@dataclass(frozen=True)
class CutoffKernel:
    """psi clamped to its value at radius ``a_n`` below that radius."""

    base: Kernel
    a_n: float

    def __post_init__(self):
        if not self.a_n > 0:
            raise ConfigError("cutoff radius must be positive")

    def eval(self, r):
        arr, scalar = _as_array(r)
        if np.any(arr < 0):
            raise DomainError("kernel argument must be non-negative")
        return _ret(self.base._psi(np.asarray(np.maximum(arr, self.a_n))), scalar)

    __call__ = eval


_FAMILIES = {
    "power": PowerLaw,
    "reg": Regularized,
    "log": LogPower,
    "const": Constant,
}


def parse_kernel(text: str) -> Kernel:
    """Build a kernel from strings like ``power:1.5`` or ``shift:power:1.5:+0.2``."""
    parts = text.strip().split(":")
    try:
        if parts[0] == "shift":
            if len(parts) != 4:
                raise ConfigError(f"bad shifted kernel spec {text!r}")
            base = parse_kernel(":".join(parts[1:3]))
            return Shifted(base, float(parts[3]))
        if len(parts) != 2 or parts[0] not in _FAMILIES:
            raise ConfigError(f"unknown kernel spec {text!r}")
        return _FAMILIES[parts[0]](float(parts[1]))
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"bad kernel spec {text!r}: {exc}") from None
