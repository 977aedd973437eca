import math

import numpy as np
import pytest
from scipy import integrate

from stochflock.errors import DomainError
from stochflock.noise import ConstantNoise, PowerDecay, parse_noise


def test_intensity_examples():
    assert ConstantNoise(0.5).intensity_at(7.0) == 0.5
    assert PowerDecay(1, 1).intensity_at(1.0) == 0.5
    assert PowerDecay(2, 0.75).intensity_at(0.0) == 2.0
    with pytest.raises(DomainError):
        ConstantNoise(0.5).intensity_at(-1.0)


def test_quad_variation_examples():
    assert ConstantNoise(0.5).quad_variation(4.0) == 1.0
    assert PowerDecay(1, 1).quad_variation(math.inf) == pytest.approx(1.0)
    assert ConstantNoise(0.3).quad_variation(0.0) == 0.0
    assert PowerDecay(1, 0.75).quad_variation(0.0) == 0.0
    with pytest.raises(DomainError):
        ConstantNoise(0.5).quad_variation(math.inf)


def test_quad_variation_matches_quadrature():
    for noise in (ConstantNoise(0.7), PowerDecay(1.3, 0.75), PowerDecay(1.0, 0.5),
                  PowerDecay(0.4, 2.0)):
        for t in (0.1, 1.0, 10.0):
            s = np.linspace(0, t, 200001)
            num = integrate.trapezoid(noise.intensity_at(s) ** 2, s)
            assert abs(num - noise.quad_variation(t)) <= 1e-6 * noise.quad_variation(t)


def test_quad_variation_monotone():
    t = np.linspace(0, 50, 501)
    for noise in (ConstantNoise(0.5), PowerDecay(1.0, 0.75), PowerDecay(2.0, 0.3)):
        assert np.all(np.diff(noise.quad_variation(t)) >= 0)


def test_square_integrable_limit():
    assert PowerDecay(2.0, 0.75).quad_variation(math.inf) == pytest.approx(4.0 / 0.5)
    with pytest.raises(DomainError):
        PowerDecay(1.0, 0.5).quad_variation(math.inf)


def test_parse_noise():
    assert parse_noise("const:0.5") == ConstantNoise(0.5)
    assert parse_noise("powdec:1.0:0.75") == PowerDecay(1.0, 0.75)
    assert parse_noise(PowerDecay(1.0, 0.75).spec()) == PowerDecay(1.0, 0.75)
