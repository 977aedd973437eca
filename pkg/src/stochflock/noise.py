"""Deterministic noise intensities D(t) and their quadratic variation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DomainError

__all__ = ["NoiseIntensity", "ConstantNoise", "PowerDecay", "parse_noise"]


def _check_t(t):
    arr = np.asarray(t, dtype=float)
    if np.any(arr < 0) or np.any(np.isnan(arr)):
        raise DomainError("time must be non-negative")
    return arr, arr.ndim == 0


class NoiseIntensity:
    square_integrable: bool = False

    def intensity_at(self, t):
        raise NotImplementedError

    def quad_variation(self, t):
        """Exact int_0^t D(s)^2 ds; ``t`` may be ``math.inf``."""
        raise NotImplementedError

    def spec(self) -> str:
        raise NotImplementedError

    def __call__(self, t):
        return self.intensity_at(t)

    def __str__(self) -> str:
        return self.spec()


@dataclass(frozen=True)
class ConstantNoise(NoiseIntensity):
    d0: float

    def intensity_at(self, t):
        arr, scalar = _check_t(t)
        out = np.full_like(arr, float(self.d0))
        return float(out) if scalar else out

    def quad_variation(self, t):
        arr, scalar = _check_t(t)
        if self.d0 == 0:
            out = np.zeros_like(arr)
        elif np.any(np.isinf(arr)):
            raise DomainError("constant intensity is not square integrable")
        else:
            out = self.d0 * self.d0 * arr
        return float(out) if scalar else out

    def spec(self) -> str:
        return f"const:{self.d0!r}"


@dataclass(frozen=True)
class PowerDecay(NoiseIntensity):
    """D(t) = d0 (1 + t)^(-gamma)."""

    d0: float
    gamma: float

    def __post_init__(self):
        if not self.gamma > 0:
            raise ConfigError("decay exponent must be positive")

    @property
    def square_integrable(self) -> bool:  # type: ignore[override]
        return self.gamma > 0.5 or self.d0 == 0

    def intensity_at(self, t):
        arr, scalar = _check_t(t)
        out = self.d0 * (1.0 + arr) ** (-self.gamma)
        return float(out) if scalar else out

    def quad_variation(self, t):
        arr, scalar = _check_t(t)
        d2 = self.d0 * self.d0
        if np.any(np.isinf(arr)) and not self.square_integrable:
            raise DomainError("intensity with gamma <= 1/2 is not square integrable")
        g = 2.0 * self.gamma
        if g == 1.0:
            out = d2 * np.log1p(arr)
        else:
            with np.errstate(over="ignore"):
                out = d2 * ((1.0 + arr) ** (1.0 - g) - 1.0) / (1.0 - g)
        return float(out) if scalar else out

    def spec(self) -> str:
        return f"powdec:{self.d0!r}:{self.gamma!r}"


def parse_noise(text: str) -> NoiseIntensity:
    """Build an intensity from ``const:0.5`` or ``powdec:1.0:0.75``."""
    parts = text.strip().split(":")
    try:
        if parts[0] == "const" and len(parts) == 2:
            return ConstantNoise(float(parts[1]))
        if parts[0] == "powdec" and len(parts) == 3:
            return PowerDecay(float(parts[1]), float(parts[2]))
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"bad noise spec {text!r}: {exc}") from None
    raise ConfigError(f"unknown noise spec {text!r}")

